//! Experiment configuration: one TOML file covering the scene, model,
//! training, schedule, edit settings, bench toggles, and output layout.
//! See `resources/reference_config.toml` for the documented defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use splitflow_core::decomp::LlmEndpointConfig;
use splitflow_core::edit::{EditConfig, EditSchedule};
use splitflow_core::error::{Error, Result};
use splitflow_core::mlp::Activation;
use splitflow_core::scene::{three_attribute_scene, SceneSpec};
use splitflow_core::train::TrainConfig;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: String,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn default_activation() -> String {
    "tanh".into()
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden: default_hidden(),
            activation: default_activation(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_dropout")]
    pub cond_dropout: f64,
    #[serde(default = "default_train_seed")]
    pub seed: u64,
}

fn default_batch() -> usize {
    64
}
fn default_steps() -> usize {
    4000
}
fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_dropout() -> f64 {
    0.1
}
fn default_train_seed() -> u64 {
    7
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: default_batch(),
            steps: default_steps(),
            learning_rate: default_lr(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            cond_dropout: default_dropout(),
            seed: default_train_seed(),
        }
    }
}

impl TrainSection {
    pub fn to_core(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            steps: self.steps,
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            cond_dropout: self.cond_dropout,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default = "default_total_steps")]
    pub total_steps: usize,
    #[serde(default = "default_eta_max")]
    pub eta_max: usize,
    #[serde(default = "default_eta_dec")]
    pub eta_dec: usize,
}

fn default_total_steps() -> usize {
    50
}
fn default_eta_max() -> usize {
    33
}
fn default_eta_dec() -> usize {
    28
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            total_steps: default_total_steps(),
            eta_max: default_eta_max(),
            eta_dec: default_eta_dec(),
        }
    }
}

impl ScheduleSection {
    pub fn to_core(&self) -> Result<EditSchedule> {
        EditSchedule::new(self.total_steps, self.eta_max, self.eta_dec)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditSection {
    #[serde(default = "default_cfg_src")]
    pub cfg_src: f64,
    #[serde(default = "default_cfg_tgt")]
    pub cfg_tgt: f64,
    #[serde(default)]
    pub cfg_sub: Option<f64>,
    #[serde(default)]
    pub fidelity_enhanced: bool,
    #[serde(default = "default_true")]
    pub share_eps_across_flows: bool,
    #[serde(default = "default_edit_seed")]
    pub seed: u64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_source_options")]
    pub source_options: Vec<usize>,
    #[serde(default = "default_target_options")]
    pub target_options: Vec<usize>,
    #[serde(default)]
    pub source_text: Option<String>,
    #[serde(default)]
    pub target_text: Option<String>,
}

fn default_cfg_src() -> f64 {
    3.5
}
fn default_cfg_tgt() -> f64 {
    13.5
}
fn default_true() -> bool {
    true
}
fn default_edit_seed() -> u64 {
    11
}
fn default_n_max() -> usize {
    3
}
fn default_source_options() -> Vec<usize> {
    vec![0, 0, 0]
}
fn default_target_options() -> Vec<usize> {
    vec![1, 1, 1]
}

impl Default for EditSection {
    fn default() -> Self {
        EditSection {
            cfg_src: default_cfg_src(),
            cfg_tgt: default_cfg_tgt(),
            cfg_sub: None,
            fidelity_enhanced: false,
            share_eps_across_flows: true,
            seed: default_edit_seed(),
            n_max: default_n_max(),
            source_options: default_source_options(),
            target_options: default_target_options(),
            source_text: None,
            target_text: None,
        }
    }
}

impl EditSection {
    pub fn to_core(&self) -> EditConfig {
        EditConfig {
            cfg_src: self.cfg_src,
            cfg_tgt: self.cfg_tgt,
            cfg_sub: self.cfg_sub,
            fidelity_enhanced: self.fidelity_enhanced,
            share_eps_across_flows: self.share_eps_across_flows,
            seed: self.seed,
            max_sub_prompts: self.n_max,
            ..EditConfig::default()
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_seed_base")]
    pub seed_base: u64,
    #[serde(default = "default_seed_count")]
    pub seed_count: usize,
    #[serde(default = "default_cloud")]
    pub target_cloud_samples: usize,
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
    #[serde(default)]
    pub eta_dec_sweep: Option<Vec<usize>>,
}

fn default_methods() -> Vec<String> {
    vec![
        "baseline".into(),
        "avg".into(),
        "ltp".into(),
        "ltp+vfa".into(),
    ]
}
fn default_seed_base() -> u64 {
    100
}
fn default_seed_count() -> usize {
    50
}
fn default_cloud() -> usize {
    200
}
fn default_data_seed() -> u64 {
    237
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            methods: default_methods(),
            seed_base: default_seed_base(),
            seed_count: default_seed_count(),
            target_cloud_samples: default_cloud(),
            data_seed: default_data_seed(),
            eta_dec_sweep: None,
        }
    }
}

impl BenchSection {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.seed_count as u64)
            .map(|k| self.seed_base + k)
            .collect()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub temperature: f64,
}

fn default_timeout() -> u64 {
    30
}

impl LlmSection {
    pub fn to_core(&self) -> Result<LlmEndpointConfig> {
        let cfg = LlmEndpointConfig {
            base_url: self.base_url.clone(),
            model: self.model.clone(),
            api_key_env: self.api_key_env.clone(),
            timeout_secs: self.timeout_secs,
            temperature: self.temperature,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_out_dir(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "three_attribute_scene")]
    pub scene: SceneSpec,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub edit: EditSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub llm: Option<LlmSection>,
    #[serde(default)]
    pub output: OutputSection,
    /// FNV-1a hash of the raw config text; set on load.
    #[serde(skip)]
    pub fingerprint: String,
}

fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config '{}': {e}", path.display())))?;
        let mut config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::config(format!("invalid config '{}': {e}", path.display())))?;
        config.fingerprint = format!("{:016x}", fnv1a(&text));
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.train.to_core().validate()?;
        self.schedule.to_core()?;
        self.edit.to_core().validate()?;
        self.activation()?;
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(Error::config("model hidden widths must be positive"));
        }
        if self.edit.source_options.len() != self.scene.attributes.len()
            || self.edit.target_options.len() != self.scene.attributes.len()
        {
            return Err(Error::config(
                "edit source/target options must list one option per scene attribute",
            ));
        }
        if self.bench.methods.is_empty() {
            return Err(Error::config("bench needs at least one method toggled"));
        }
        for m in &self.bench.methods {
            splitflow_core::bench::parse_method(m)?;
        }
        if let Some(sweep) = &self.bench.eta_dec_sweep {
            for &e in sweep {
                EditSchedule::new(self.schedule.total_steps, self.schedule.eta_max, e)?;
            }
        }
        Ok(())
    }

    pub fn activation(&self) -> Result<Activation> {
        self.model.activation.parse()
    }

    pub fn model_path(&self) -> PathBuf {
        self.output.dir.join("models").join("field.sfm")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_parses_with_matching_defaults() {
        let text = include_str!("../resources/reference_config.toml");
        let parsed: ExperimentConfig = toml::from_str(text).unwrap();
        parsed.validate().unwrap();
        // The reference file spells out the defaults.
        let empty: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(parsed.train.steps, empty.train.steps);
        assert_eq!(parsed.schedule.eta_dec, empty.schedule.eta_dec);
        assert_eq!(parsed.edit.cfg_tgt, empty.edit.cfg_tgt);
        assert_eq!(parsed.bench.methods, empty.bench.methods);
        assert_eq!(parsed.bench.seed_count, empty.bench.seed_count);
        assert_eq!(parsed.scene, empty.scene);
    }

    #[test]
    fn empty_config_is_fully_defaulted_and_valid() {
        let parsed: ExperimentConfig = toml::from_str("").unwrap();
        parsed.validate().unwrap();
        assert_eq!(parsed.schedule.total_steps, 50);
    }

    #[test]
    fn bad_method_is_rejected() {
        let parsed: ExperimentConfig = toml::from_str("[bench]\nmethods = [\"nope\"]").unwrap();
        assert!(parsed.validate().is_err());
    }
}
