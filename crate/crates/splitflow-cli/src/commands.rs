//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use splitflow_core::bench::{parse_method, run_bench, BenchSettings};
use splitflow_core::decomp::{
    decompose_attributes, decompose_llm, decompose_rule_based, DecompositionResult,
    LlmEndpointConfig, PromptPair, Provenance, SubPrompts, Template,
};
use splitflow_core::edit::{check_vfa_inequality, flowedit_run_with_report, splitflow_run};
use splitflow_core::error::{Error, Result};
use splitflow_core::field::{Condition, FieldSpec};
use splitflow_core::io::{
    load_field, load_latent, load_latent_json, save_field, save_latent, save_latent_json,
};
use splitflow_core::latent::Latent;
use splitflow_core::metrics::MetricReport;
use splitflow_core::mlp::MlpParams;
use splitflow_core::scene::SceneSpec;
use splitflow_core::train::{generate, train};

use crate::config::ExperimentConfig;
use crate::svg::{Plot, Series};

const REFERENCE_CONFIG: &str = include_str!("../resources/reference_config.toml");

fn ensure_dirs(base: &Path) -> Result<()> {
    for sub in ["models", "latents", "reports", "plots"] {
        fs::create_dir_all(base.join(sub))?;
    }
    Ok(())
}

/// `init-config`: write the documented reference configuration.
pub fn cmd_init_config(out: &Path) -> Result<()> {
    if out.exists() {
        return Err(Error::config(format!(
            "refusing to overwrite existing '{}'",
            out.display()
        )));
    }
    fs::write(out, REFERENCE_CONFIG)?;
    println!("wrote reference config to {}", out.display());
    Ok(())
}

/// `train`: fit the MLP velocity field on the configured scene.
pub fn cmd_train(config_path: &Path) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    ensure_dirs(&config.output.dir)?;
    let scene = &config.scene;
    let shape = scene.latent_shape()?;
    let activation = config.activation()?;

    let mut rng = ChaCha12Rng::seed_from_u64(config.train.seed);
    let params = MlpParams::init(
        shape.len() + 1 + scene.cond_dim(),
        &config.model.hidden,
        shape.len(),
        activation,
        &mut rng,
    )?;
    let field = FieldSpec::mlp(shape, scene.cond_dim(), params)?;
    let outcome = train(&field, scene, &config.train.to_core())?;

    let model_path = config.model_path();
    save_field(&outcome.field, &model_path)?;

    let loss_path = config.output.dir.join("reports").join("loss.csv");
    let mut csv = String::from("# splitflow-loss v1\nstep,loss\n");
    for (step, loss) in outcome.loss_curve.iter().enumerate() {
        csv.push_str(&format!("{step},{loss}\n"));
    }
    fs::write(&loss_path, csv)?;

    let first = outcome.loss_curve.first().copied().unwrap_or(f64::NAN);
    let last = outcome.loss_curve.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} steps (loss {first:.6} -> {last:.6}); model at {}, curve at {}",
        config.train.steps,
        model_path.display(),
        loss_path.display()
    );
    Ok(())
}

/// `sample-source`: draw a source latent from the scene's source condition.
pub fn cmd_sample_source(config_path: &Path, seed: u64, out: &Path) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let x0 = config
        .scene
        .sample_for(&config.edit.source_options, &mut rng)?;
    write_latent_by_ext(&x0, out)?;
    println!("wrote source latent to {}", out.display());
    Ok(())
}

fn write_latent_by_ext(latent: &Latent, path: &Path) -> Result<()> {
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        save_latent_json(latent, path)
    } else {
        save_latent(latent, path)
    }
}

fn read_latent_by_ext(path: &Path) -> Result<Latent> {
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        load_latent_json(path)
    } else {
        load_latent(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditMethod {
    Baseline,
    SplitFlow,
}

impl std::str::FromStr for EditMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(EditMethod::Baseline),
            "splitflow" => Ok(EditMethod::SplitFlow),
            other => Err(Error::config(format!("unknown edit method '{other}'"))),
        }
    }
}

/// Decomposer selection for `edit`.
#[derive(Debug, Clone)]
pub enum Decomposer {
    Attribute,
    Rule,
    Llm,
    Manual(PathBuf),
}

impl std::str::FromStr for Decomposer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attribute" => Ok(Decomposer::Attribute),
            "rule" => Ok(Decomposer::Rule),
            "llm" => Ok(Decomposer::Llm),
            other => match other.strip_prefix("manual:") {
                Some(path) if !path.is_empty() => Ok(Decomposer::Manual(PathBuf::from(path))),
                _ => Err(Error::config(format!("unknown decomposer '{other}'"))),
            },
        }
    }
}

fn prompt_pair_from_config(config: &ExperimentConfig) -> Result<PromptPair> {
    let src = config
        .edit
        .source_text
        .as_deref()
        .ok_or_else(|| Error::config("this decomposer needs edit.source_text in the config"))?;
    let tgt = config
        .edit
        .target_text
        .as_deref()
        .ok_or_else(|| Error::config("this decomposer needs edit.target_text in the config"))?;
    PromptPair::new(src, tgt)
}

/// Grounds a text sub-prompt in the scene's attribute vocabulary: for each
/// attribute, pick the option whose label occurs in the text (preferring the
/// edit's target option on ties), defaulting to the source option.
fn text_to_options(
    scene: &SceneSpec,
    source_options: &[usize],
    target_options: &[usize],
    text: &str,
) -> Vec<usize> {
    let lower = text.to_lowercase();
    scene
        .attributes
        .iter()
        .enumerate()
        .map(|(k, attr)| {
            let mut hits: Vec<usize> = attr
                .options
                .iter()
                .enumerate()
                .filter(|(_, opt)| lower.contains(&opt.label.to_lowercase()))
                .map(|(idx, _)| idx)
                .collect();
            if hits.contains(&target_options[k]) {
                target_options[k]
            } else {
                hits.pop().unwrap_or(source_options[k])
            }
        })
        .collect()
}

fn texts_to_conditions(
    scene: &SceneSpec,
    config: &ExperimentConfig,
    texts: &[String],
) -> Result<Vec<Condition>> {
    texts
        .iter()
        .map(|t| {
            let options = text_to_options(
                scene,
                &config.edit.source_options,
                &config.edit.target_options,
                t,
            );
            Ok(scene.condition_for(&options)?.with_label(t.clone()))
        })
        .collect()
}

/// Manual decomposition file: a JSON array whose items are either per-attribute
/// option-index arrays (e.g. `[1, 0, 1]`) or text sub-prompts.
fn manual_conditions(
    path: &Path,
    scene: &SceneSpec,
    config: &ExperimentConfig,
) -> Result<Vec<Condition>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read manual file '{}': {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        message: format!("manual decomposition file is not valid JSON: {e}"),
        raw: text.chars().take(200).collect(),
    })?;
    let items = value
        .as_array()
        .ok_or_else(|| Error::config("manual decomposition file must hold a JSON array"))?;
    if items.is_empty() {
        return Err(Error::config(
            "manual decomposition file lists no sub-prompts",
        ));
    }
    let mut conds = Vec::with_capacity(items.len());
    for item in items {
        match item {
            serde_json::Value::Array(opts) => {
                let options: Vec<usize> = opts
                    .iter()
                    .map(|v| {
                        v.as_u64().map(|u| u as usize).ok_or_else(|| {
                            Error::config("manual option entries must be non-negative integers")
                        })
                    })
                    .collect::<Result<_>>()?;
                conds.push(scene.condition_for(&options)?);
            }
            serde_json::Value::String(text) => {
                conds.extend(texts_to_conditions(
                    scene,
                    config,
                    std::slice::from_ref(text),
                )?);
            }
            _ => {
                return Err(Error::config(
                    "manual items must be option arrays or text strings",
                ))
            }
        }
    }
    Ok(conds)
}

fn resolve_sub_conditions(
    decomposer: &Decomposer,
    config: &ExperimentConfig,
    cond_src: &Condition,
    cond_tgt: &Condition,
    strict: bool,
) -> Result<(Vec<Condition>, Provenance)> {
    let scene = &config.scene;
    let n_max = config.edit.n_max;
    match decomposer {
        Decomposer::Attribute => {
            let result = decompose_attributes(cond_src, cond_tgt, &scene.block_layout(), n_max)?;
            Ok((
                result
                    .condition_list()
                    .expect("attribute conditions")
                    .to_vec(),
                Provenance::Attribute,
            ))
        }
        Decomposer::Rule => {
            let pair = prompt_pair_from_config(config)?;
            let result = decompose_rule_based(&pair, n_max)?;
            let texts = result.text_list().expect("rule texts");
            Ok((texts_to_conditions(scene, config, texts)?, Provenance::Rule))
        }
        Decomposer::Llm => {
            let pair = prompt_pair_from_config(config)?;
            let endpoint = config
                .llm
                .as_ref()
                .ok_or_else(|| Error::config("llm decomposer needs an [llm] config section"))?
                .to_core()?;
            match decompose_llm(&pair, Template::Psi1, &endpoint, n_max) {
                Ok(result) => {
                    let texts = result.text_list().expect("llm texts");
                    Ok((texts_to_conditions(scene, config, texts)?, Provenance::Llm))
                }
                Err(e @ (Error::Network(_) | Error::Parse { .. })) if !strict => {
                    eprintln!("warning: llm decomposition failed ({e}); falling back to rule");
                    let result = decompose_rule_based(&pair, n_max)?;
                    let texts = result.text_list().expect("rule texts");
                    Ok((texts_to_conditions(scene, config, texts)?, Provenance::Rule))
                }
                Err(e) => Err(e),
            }
        }
        Decomposer::Manual(path) => {
            Ok((manual_conditions(path, scene, config)?, Provenance::Manual))
        }
    }
}

/// `edit`: run one edit on a stored source latent and write the result plus
/// its run report.
pub fn cmd_edit(
    config_path: &Path,
    source_path: &Path,
    method: EditMethod,
    decomposer: &Decomposer,
    model_override: Option<&Path>,
    strict: bool,
) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    ensure_dirs(&config.output.dir)?;
    let model_path = model_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.model_path());
    if !model_path.exists() {
        return Err(Error::config(format!(
            "trained model not found at '{}' (run `splitflow train` first)",
            model_path.display()
        )));
    }
    let field = load_field(&model_path)?;
    let x0 = read_latent_by_ext(source_path)?;

    let scene = &config.scene;
    let cond_src = scene.condition_for(&config.edit.source_options)?;
    let cond_tgt = scene.condition_for(&config.edit.target_options)?;
    let schedule = config.schedule.to_core()?;
    let edit_config = config.edit.to_core();

    let (edited, mut report, n_sub) = match method {
        EditMethod::Baseline => {
            let (edited, report) = flowedit_run_with_report(
                &field,
                &x0,
                &cond_src,
                &cond_tgt,
                &schedule,
                &edit_config,
            )?;
            (edited, report, 0usize)
        }
        EditMethod::SplitFlow => {
            let (sub_conds, provenance) =
                resolve_sub_conditions(decomposer, &config, &cond_src, &cond_tgt, strict)?;
            eprintln!(
                "splitflow: {} sub-conditions via {:?}",
                sub_conds.len(),
                provenance
            );
            let n = sub_conds.len();
            let (edited, report) = splitflow_run(
                &field,
                &x0,
                &cond_src,
                &sub_conds,
                &cond_tgt,
                &schedule,
                &edit_config,
            )?;
            (edited, report, n)
        }
    };

    let latent_path = config.output.dir.join("latents").join("edited.sfl");
    save_latent(&edited, &latent_path)?;
    let json_path = config.output.dir.join("latents").join("edited.json");
    save_latent_json(&edited, &json_path)?;
    report.final_latent_ref = Some(latent_path.display().to_string());

    let report_path = config.output.dir.join("reports").join("edit_report.txt");
    fs::write(&report_path, report.to_text())?;
    println!(
        "edited latent written to {} (N={n_sub}, velocity-delta evals={}, vfa evals={})",
        latent_path.display(),
        report.headline_evals,
        report.vfa_evals
    );
    Ok(())
}

/// `bench`: run every toggled method across all seeds (and the eta_dec sweep
/// when configured) and emit CSV, text, and SVG artifacts.
pub fn cmd_bench(config_path: &Path, model_override: Option<&Path>) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    ensure_dirs(&config.output.dir)?;
    let model_path = model_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.model_path());
    if !model_path.exists() {
        return Err(Error::config(format!(
            "trained model not found at '{}' (run `splitflow train` first)",
            model_path.display()
        )));
    }
    let field = load_field(&model_path)?;
    let schedule = config.schedule.to_core()?;
    let methods = config
        .bench
        .methods
        .iter()
        .map(|m| parse_method(m))
        .collect::<Result<Vec<_>>>()?;
    let settings = BenchSettings {
        methods,
        seeds: config.bench.seeds(),
        eta_dec_sweep: config.bench.eta_dec_sweep.clone(),
        target_cloud_samples: config.bench.target_cloud_samples,
        data_seed: config.bench.data_seed,
    };
    let (report, _runs) = run_bench(
        &field,
        &config.scene,
        &config.edit.source_options,
        &config.edit.target_options,
        &schedule,
        &config.edit.to_core(),
        &settings,
        &config.fingerprint,
    )?;

    let csv_path = config.output.dir.join("reports").join("bench.csv");
    fs::write(&csv_path, report.to_csv())?;
    let txt_path = config.output.dir.join("reports").join("bench.txt");
    fs::write(&txt_path, report.to_text())?;
    write_bench_plots(&report, &config.output.dir.join("plots"))?;

    println!(
        "bench complete: {} rows -> {} (plots in {})",
        report.rows.len(),
        csv_path.display(),
        config.output.dir.join("plots").display()
    );
    Ok(())
}

type RowMetric = fn(&splitflow_core::metrics::MetricRow) -> f64;

fn write_bench_plots(report: &MetricReport, plots_dir: &Path) -> Result<()> {
    let metrics: [(&str, RowMetric); 4] = [
        ("mse", |r| r.mse),
        ("psnr", |r| r.psnr),
        ("background_displacement", |r| r.background_displacement),
        ("energy_distance", |r| r.energy_distance_to_target),
    ];
    let mut methods: Vec<String> = Vec::new();
    for row in &report.rows {
        if !methods.contains(&row.method) {
            methods.push(row.method.clone());
        }
    }
    for (name, extract) in metrics {
        let series = methods
            .iter()
            .map(|m| Series {
                label: m.clone(),
                points: report
                    .rows
                    .iter()
                    .filter(|r| &r.method == m)
                    .map(|r| (r.eta_dec.unwrap_or(0) as f64, extract(r)))
                    .collect(),
            })
            .collect();
        let plot = Plot {
            title: format!("{name} vs eta_dec"),
            x_label: "eta_dec".into(),
            y_label: name.into(),
            series,
        };
        fs::write(plots_dir.join(format!("bench_{name}.svg")), plot.to_svg())?;
    }
    Ok(())
}

/// `vfa-check`: sample random unit-vector sets and verify the aggregation
/// inequality; writes a margin histogram CSV.
pub fn cmd_vfa_check(
    trials: usize,
    dims: &[usize],
    k_min: usize,
    k_max: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    if trials == 0 {
        return Err(Error::config("vfa-check needs at least one trial"));
    }
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::config("vfa-check dims must be positive"));
    }
    if k_min == 0 || k_min > k_max {
        return Err(Error::config("vfa-check needs 1 <= k-min <= k-max"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut margins = Vec::with_capacity(trials);
    let mut min_aggregation = f64::INFINITY;
    let mut min_gibbs = f64::INFINITY;
    let mut min_jensen = f64::INFINITY;
    for _ in 0..trials {
        let k = rng.random_range(k_min..=k_max);
        let dim = dims[rng.random_range(0..dims.len())];
        let vectors: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let mut v: Vec<f64> = (0..dim)
                    .map(|_| {
                        let g: f64 = normal.sample(&mut rng);
                        g
                    })
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in &mut v {
                    *x /= norm;
                }
                v
            })
            .collect();
        let m = check_vfa_inequality(&vectors)?;
        min_aggregation = min_aggregation.min(m.aggregation);
        min_gibbs = min_gibbs.min(m.gibbs);
        min_jensen = min_jensen.min(m.jensen);
        margins.push(m.aggregation);
    }

    // Histogram of aggregation margins.
    let lo = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = margins.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bins = 40usize;
    let width = ((hi - lo) / bins as f64).max(1e-300);
    let mut counts = vec![0usize; bins];
    for &m in &margins {
        let idx = (((m - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let mut csv = String::from("# splitflow-vfa-margins v1\nbin_lo,bin_hi,count\n");
    for (i, c) in counts.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{c}\n",
            lo + i as f64 * width,
            lo + (i + 1) as f64 * width
        ));
    }
    fs::write(out, csv)?;

    let pass = min_aggregation >= -1e-9 && min_gibbs >= -1e-9 && min_jensen >= -1e-9;
    println!(
        "{}: {trials} trials, min margins: aggregation {min_aggregation:.3e}, gibbs {min_gibbs:.3e}, jensen {min_jensen:.3e} (histogram at {})",
        if pass { "PASS" } else { "FAIL" },
        out.display()
    );
    if !pass {
        return Err(Error::Numeric {
            step: 0,
            message: "aggregation inequality violated".into(),
        });
    }
    Ok(())
}

/// `decompose`: print numbered sub-prompts for a source/target pair.
#[allow(clippy::too_many_arguments)]
pub fn cmd_decompose(
    src: &str,
    tgt: &str,
    template: Template,
    backend: &str,
    config_path: Option<&Path>,
    base_url: Option<&str>,
    model: Option<&str>,
    strict: bool,
) -> Result<()> {
    let pair = PromptPair::new(src, tgt)?;
    let n_max = 3;
    let result: DecompositionResult = match backend {
        "rule" => decompose_rule_based(&pair, n_max)?,
        "llm" => {
            let endpoint = match (config_path, base_url) {
                (_, Some(url)) => {
                    let mut e = LlmEndpointConfig::new(url, model.unwrap_or("default"))?;
                    e.timeout_secs = 10;
                    e
                }
                (Some(path), None) => {
                    let config = ExperimentConfig::load(path)?;
                    config
                        .llm
                        .as_ref()
                        .ok_or_else(|| {
                            Error::config("config has no [llm] section for the llm backend")
                        })?
                        .to_core()?
                }
                (None, None) => {
                    return Err(Error::config(
                        "llm backend needs --base-url or --config with an [llm] section",
                    ))
                }
            };
            match decompose_llm(&pair, template, &endpoint, n_max) {
                Ok(r) => r,
                Err(e @ (Error::Network(_) | Error::Parse { .. })) if !strict => {
                    eprintln!("warning: llm decomposition failed ({e}); falling back to rule");
                    decompose_rule_based(&pair, n_max)?
                }
                Err(e) => return Err(e),
            }
        }
        other => return Err(Error::config(format!("unknown backend '{other}'"))),
    };
    match &result.sub_prompts {
        SubPrompts::Texts(texts) => {
            for (i, t) in texts.iter().enumerate() {
                println!("{}. {t}", i + 1);
            }
        }
        SubPrompts::Conditions(_) => unreachable!("text backends only"),
    }
    Ok(())
}

/// `generate`: sample latents from the trained field (sanity checking).
pub fn cmd_generate(
    config_path: &Path,
    options: &[usize],
    steps: usize,
    seed: u64,
    out: &Path,
    model_override: Option<&Path>,
) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let model_path = model_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.model_path());
    let field = load_field(&model_path)?;
    let cond = config.scene.condition_for(options)?;
    let sample = generate(&field, &cond, steps, seed)?;
    write_latent_by_ext(&sample, out)?;
    println!("generated latent written to {}", out.display());
    Ok(())
}
