//! Benchmark harness: runs editing methods across seeds (and optionally an
//! eta_dec sweep) on a scene and aggregates the metric families into a
//! [`MetricReport`] — one row per (method, sweep point).

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::edit::{
    flowedit_run_with_report, splitflow_run, AggregationMode, EditConfig, EditSchedule,
};
use crate::error::{Error, Result};
use crate::field::FieldSpec;
use crate::latent::Latent;
use crate::metrics::{
    background_displacement, energy_distance, mse, psnr, ssim, MetricReport, MetricRow, SsimConfig,
};
use crate::scene::SceneSpec;

/// An editing method under benchmark. `aggregation = None` is the FlowEdit
/// baseline; otherwise a split-flow run with the given aggregation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchMethod {
    pub name: &'static str,
    pub aggregation: Option<AggregationMode>,
}

pub const BASELINE: BenchMethod = BenchMethod {
    name: "baseline",
    aggregation: None,
};
pub const AVG: BenchMethod = BenchMethod {
    name: "avg",
    aggregation: Some(AggregationMode::Average),
};
pub const LTP: BenchMethod = BenchMethod {
    name: "ltp",
    aggregation: Some(AggregationMode::Projection),
};
pub const LTP_VFA: BenchMethod = BenchMethod {
    name: "ltp+vfa",
    aggregation: Some(AggregationMode::ProjectionVfa),
};

/// Parses a method toggle name as used in configs and CSV rows.
pub fn parse_method(name: &str) -> Result<BenchMethod> {
    match name {
        "baseline" => Ok(BASELINE),
        "avg" => Ok(AVG),
        "ltp" => Ok(LTP),
        "ltp+vfa" | "ltp_vfa" | "ltp-vfa" => Ok(LTP_VFA),
        other => Err(Error::config(format!("unknown bench method '{other}'"))),
    }
}

/// Harness settings independent of the edit configuration.
#[derive(Debug, Clone)]
pub struct BenchSettings {
    pub methods: Vec<BenchMethod>,
    pub seeds: Vec<u64>,
    /// When set, every method runs once per eta_dec value.
    pub eta_dec_sweep: Option<Vec<usize>>,
    /// Sample count of the target-condition reference cloud.
    pub target_cloud_samples: usize,
    /// Seed for the reference cloud and per-seed source draws.
    pub data_seed: u64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            methods: vec![BASELINE, AVG, LTP, LTP_VFA],
            seeds: (0..10).map(|k| 100 + k).collect(),
            eta_dec_sweep: None,
            target_cloud_samples: 200,
            data_seed: 0xED,
        }
    }
}

/// One completed edit within a bench.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub edited: Latent,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub background_displacement: f64,
    pub step_count: usize,
}

/// All runs of one (method, sweep point) cell, plus failures.
#[derive(Debug, Clone)]
pub struct MethodRuns {
    pub method: &'static str,
    pub eta_dec: usize,
    pub runs: Vec<SeedRun>,
    pub failures: Vec<(u64, String)>,
    pub energy_distance_to_target: f64,
}

/// Raw per-seed outcomes backing a [`MetricReport`].
#[derive(Debug, Clone)]
pub struct BenchRuns {
    pub cells: Vec<MethodRuns>,
}

impl BenchRuns {
    pub fn cell(&self, method: &str, eta_dec: usize) -> Option<&MethodRuns> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.eta_dec == eta_dec)
    }
}

fn scene_peak(scene: &SceneSpec) -> Result<f64> {
    let shape = scene.latent_shape()?;
    let mut lo = scene.base_mean.clone();
    let mut hi = scene.base_mean.clone();
    for attr in &scene.attributes {
        for (slot, &coord) in attr.coords.iter().enumerate() {
            let mut min_off = f64::INFINITY;
            let mut max_off = f64::NEG_INFINITY;
            for opt in &attr.options {
                min_off = min_off.min(opt.offset[slot]);
                max_off = max_off.max(opt.offset[slot]);
            }
            lo[coord] += min_off;
            hi[coord] += max_off;
        }
    }
    let span = (0..shape.len())
        .map(|i| hi[i] - lo[i])
        .fold(0.0_f64, f64::max);
    Ok(span + 6.0 * scene.noise_std)
}

/// Runs every (method, sweep point, seed) job and aggregates.
///
/// Single-run failures are recorded in the row note and the bench continues;
/// only an all-failed bench is an error.
#[allow(clippy::too_many_arguments)]
pub fn run_bench(
    field: &FieldSpec,
    scene: &SceneSpec,
    source_options: &[usize],
    target_options: &[usize],
    schedule: &EditSchedule,
    edit_config: &EditConfig,
    settings: &BenchSettings,
    config_fingerprint: &str,
) -> Result<(MetricReport, BenchRuns)> {
    scene.validate()?;
    schedule.validate()?;
    if settings.methods.is_empty() || settings.seeds.is_empty() {
        return Err(Error::config(
            "bench needs at least one method and one seed",
        ));
    }
    if settings.target_cloud_samples == 0 {
        return Err(Error::config("target cloud needs at least one sample"));
    }

    let cond_src = scene.condition_for(source_options)?;
    let cond_tgt = scene.condition_for(target_options)?;
    let changed = scene.changed_attributes(source_options, target_options)?;
    if changed.is_empty() {
        return Err(Error::config("bench edit changes no attribute"));
    }
    let mask = scene.edit_mask(source_options, target_options)?;
    let layout = scene.block_layout();
    let sub_conds = crate::decomp::decompose_attributes(
        &cond_src,
        &cond_tgt,
        &layout,
        edit_config.max_sub_prompts,
    )?
    .condition_list()
    .expect("attribute decomposition yields conditions")
    .to_vec();

    let peak = scene_peak(scene)?;
    let ssim_cfg = SsimConfig {
        peak,
        ..SsimConfig::default()
    };
    let shape = scene.latent_shape()?;
    let ssim_applicable = shape.h >= ssim_cfg.window && shape.w >= ssim_cfg.window;

    // Shared reference cloud from the target condition's distribution.
    let mut cloud_rng = ChaCha12Rng::seed_from_u64(settings.data_seed);
    let mut target_cloud = Vec::with_capacity(settings.target_cloud_samples);
    for _ in 0..settings.target_cloud_samples {
        target_cloud.push(scene.sample_for(target_options, &mut cloud_rng)?);
    }

    let sweep = settings
        .eta_dec_sweep
        .clone()
        .unwrap_or_else(|| vec![schedule.eta_dec]);

    let mut rows = Vec::new();
    let mut cells = Vec::new();
    let mut any_success = false;
    for &eta_dec in &sweep {
        let sched = EditSchedule::new(schedule.total_steps, schedule.eta_max, eta_dec)?;
        for method in &settings.methods {
            let mut runs = Vec::new();
            let mut failures: Vec<(u64, String)> = Vec::new();
            for &seed in &settings.seeds {
                // Source draw and run seed both derive from the bench seed.
                let mut src_rng = ChaCha12Rng::seed_from_u64(settings.data_seed ^ seed);
                let outcome = scene
                    .sample_for(source_options, &mut src_rng)
                    .and_then(|x0| {
                        let cfg = EditConfig {
                            seed,
                            aggregation: method.aggregation.unwrap_or_default(),
                            ..edit_config.clone()
                        };
                        let (edited, report) = match method.aggregation {
                            None => flowedit_run_with_report(
                                field, &x0, &cond_src, &cond_tgt, &sched, &cfg,
                            )?,
                            Some(_) => splitflow_run(
                                field, &x0, &cond_src, &sub_conds, &cond_tgt, &sched, &cfg,
                            )?,
                        };
                        let ssim_val = if ssim_applicable {
                            Some(ssim(&x0, &edited, &ssim_cfg)?)
                        } else {
                            None
                        };
                        Ok(SeedRun {
                            seed,
                            mse: mse(&x0, &edited)?,
                            psnr: psnr(&x0, &edited, peak)?,
                            ssim: ssim_val,
                            background_displacement: background_displacement(&x0, &edited, &mask)?
                                .0,
                            step_count: report.headline_evals,
                            edited,
                        })
                    });
                match outcome {
                    Ok(run) => runs.push(run),
                    Err(e) => failures.push((seed, e.to_string())),
                }
            }

            let ed = if runs.is_empty() {
                f64::NAN
            } else {
                let edited_cloud: Vec<Latent> = runs.iter().map(|r| r.edited.clone()).collect();
                energy_distance(&edited_cloud, &target_cloud)?
            };
            let n = runs.len();
            let mean = |f: &dyn Fn(&SeedRun) -> f64| -> f64 {
                if n == 0 {
                    f64::NAN
                } else {
                    runs.iter().map(f).sum::<f64>() / n as f64
                }
            };
            let note = if failures.is_empty() {
                None
            } else {
                Some(format!(
                    "{} of {} runs failed",
                    failures.len(),
                    settings.seeds.len()
                ))
            };
            if n > 0 {
                any_success = true;
            }
            rows.push(MetricRow {
                method: method.name.to_string(),
                eta_dec: Some(eta_dec),
                mse: mean(&|r| r.mse),
                psnr: mean(&|r| r.psnr),
                ssim: if ssim_applicable && n > 0 {
                    Some(mean(&|r| r.ssim.unwrap_or(f64::NAN)))
                } else {
                    None
                },
                energy_distance_to_target: ed,
                background_displacement: mean(&|r| r.background_displacement),
                step_count: runs.first().map(|r| r.step_count).unwrap_or(0),
                seed_count: n,
                note,
            });
            cells.push(MethodRuns {
                method: method.name,
                eta_dec,
                runs,
                failures,
                energy_distance_to_target: ed,
            });
        }
    }

    if !any_success {
        return Err(Error::config("every bench run failed"));
    }
    let report = MetricReport {
        rows,
        config_fingerprint: config_fingerprint.to_string(),
        seeds: settings.seeds.clone(),
    };
    Ok((report, cells_into(cells)))
}

fn cells_into(cells: Vec<MethodRuns>) -> BenchRuns {
    BenchRuns { cells }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{CondEntry, ConstantShiftParams};
    use crate::scene::three_attribute_scene;

    /// Constant-shift field covering every scene condition (and the sub-edit
    /// conditions) so bench runs work without training.
    fn scene_shift_field(scene: &SceneSpec) -> FieldSpec {
        let shape = scene.latent_shape().unwrap();
        let mut entries = Vec::new();
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    let cond = scene.condition_for(&[a, b, c]).unwrap();
                    let mean = scene.mean_for(&[a, b, c]).unwrap();
                    entries.push(CondEntry {
                        embedding: cond.embedding,
                        value: mean.scale(0.1),
                    });
                }
            }
        }
        FieldSpec::constant_shift(
            shape,
            scene.cond_dim(),
            ConstantShiftParams {
                entries,
                null_shift: Latent::zeros(shape),
            },
        )
        .unwrap()
    }

    #[test]
    fn row_count_is_methods_times_sweep_points() {
        let scene = three_attribute_scene();
        let field = scene_shift_field(&scene);
        let schedule = EditSchedule::new(20, 13, 9).unwrap();
        let settings = BenchSettings {
            methods: vec![BASELINE, LTP_VFA],
            seeds: vec![1, 2],
            eta_dec_sweep: Some(vec![10, 9, 8]),
            target_cloud_samples: 16,
            data_seed: 5,
        };
        let (report, runs) = run_bench(
            &field,
            &scene,
            &[0, 0, 0],
            &[1, 1, 1],
            &schedule,
            &EditConfig::default(),
            &settings,
            "test",
        )
        .unwrap();
        assert_eq!(report.rows.len(), 6);
        assert_eq!(runs.cells.len(), 6);
        assert!(report.no_nan_cells());
        assert!(runs.cell("ltp+vfa", 9).is_some());
    }

    #[test]
    fn single_seed_single_method() {
        let scene = three_attribute_scene();
        let field = scene_shift_field(&scene);
        let schedule = EditSchedule::new(20, 13, 9).unwrap();
        let settings = BenchSettings {
            methods: vec![BASELINE],
            seeds: vec![7],
            eta_dec_sweep: None,
            target_cloud_samples: 8,
            data_seed: 5,
        };
        let (report, _) = run_bench(
            &field,
            &scene,
            &[0, 0, 0],
            &[1, 0, 0],
            &schedule,
            &EditConfig::default(),
            &settings,
            "test",
        )
        .unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].seed_count, 1);
        // 1x1 spatial dims: ssim not applicable.
        assert!(report.rows[0].ssim.is_none());
        assert!(report.to_csv().contains(",na,"));
    }

    #[test]
    fn method_parsing() {
        assert_eq!(parse_method("baseline").unwrap(), BASELINE);
        assert_eq!(parse_method("ltp+vfa").unwrap(), LTP_VFA);
        assert_eq!(parse_method("ltp_vfa").unwrap(), LTP_VFA);
        assert!(parse_method("nope").is_err());
    }
}
