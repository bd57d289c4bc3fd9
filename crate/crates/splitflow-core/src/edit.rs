//! Inversion-free editing: the FlowEdit baseline loop, the split-flow
//! decomposition phase, latent trajectory projection (LTP), velocity field
//! aggregation (VFA), and the aggregation-inequality checker.
//!
//! Conventions. The schedule walks `i = eta_max, ..., 1` with noise level
//! `sigma_i = i / T`; iteration `i` moves a trajectory from its `sigma_i`
//! state to its `sigma_{i-1}` state via `x += (sigma_{i-1} - sigma_i) * v`,
//! where `v` is the guided velocity difference between the estimated target
//! latent and the interpolated source latent. With matched guidance scales a
//! null edit (target condition equal to the source condition) is a fixed
//! point of the loop; unequal scales keep the guidance term
//! `(cfg_tgt - cfg_src)(v_cond - v_null)` active even then.
//!
//! Split-flow runs: iterations with `i > eta_dec` advance N sub-trajectories
//! (one per sub-target condition) alongside the full-target trajectory, all
//! sharing the per-iteration noise draw by default. At `i = eta_dec` the
//! sub-trajectories are projected onto the full-target trajectory, their
//! velocity fields are aggregated per spatial location by a cosine-consensus
//! softmax, the unified latent is updated, and the remaining iterations run
//! as plain FlowEdit steps. The full-target flow evaluates one velocity
//! difference on every iteration of the loop, so a run costs exactly
//! `N * (eta_max - eta_dec) + eta_max` velocity-difference evaluations; the N
//! extra evaluations spent by VFA at the projected latents are tracked
//! separately.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::field::{Condition, FieldSpec};
use crate::latent::{
    cosine_similarity_map, noise_interpolate, project_onto, ChannelMap, Latent, NORM_TOL,
};

/// Timestep grid for editing runs.
///
/// `sigma(i) = i / total_steps`; editing is active for `i = eta_max .. 1`,
/// which skips the highest-noise levels above `eta_max / total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditSchedule {
    pub total_steps: usize,
    pub eta_max: usize,
    pub eta_dec: usize,
}

impl EditSchedule {
    pub fn new(total_steps: usize, eta_max: usize, eta_dec: usize) -> Result<Self> {
        let s = EditSchedule {
            total_steps,
            eta_max,
            eta_dec,
        };
        s.validate()?;
        Ok(s)
    }

    /// The standard editing grid: T = 50, eta_max = 33, eta_dec = 28.
    pub fn standard() -> Self {
        EditSchedule {
            total_steps: 50,
            eta_max: 33,
            eta_dec: 28,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.eta_dec && self.eta_dec < self.eta_max && self.eta_max <= self.total_steps) {
            return Err(Error::config(format!(
                "schedule must satisfy 1 <= eta_dec < eta_max <= T, got eta_dec={}, eta_max={}, T={}",
                self.eta_dec, self.eta_max, self.total_steps
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn sigma(&self, i: usize) -> f64 {
        i as f64 / self.total_steps as f64
    }

    /// Starting noise level `eta_max / T`.
    pub fn sigma_start(&self) -> f64 {
        self.sigma(self.eta_max)
    }
}

/// How the sub-trajectories are folded back into the unified flow at
/// `eta_dec`. `ProjectionVfa` is the full method; the other two mirror the
/// ablation rows (plain averaging, projection without VFA).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AggregationMode {
    Average,
    Projection,
    #[default]
    ProjectionVfa,
}

/// Guidance scales, variant flags, and run seeding.
#[derive(Debug, Clone)]
pub struct EditConfig {
    pub cfg_src: f64,
    pub cfg_tgt: f64,
    /// Guidance scale for sub-target evaluations; defaults to `cfg_tgt`.
    pub cfg_sub: Option<f64>,
    /// Skip noise interpolation during the decomposition phase and use the
    /// clean source latent directly (the fidelity-enhanced variant).
    pub fidelity_enhanced: bool,
    /// Share one noise draw per iteration across the target and all sub-flows.
    pub share_eps_across_flows: bool,
    pub seed: u64,
    pub max_sub_prompts: usize,
    pub aggregation: AggregationMode,
    /// Norm guard for projections and cosine maps.
    pub tol: f64,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            cfg_src: 3.5,
            cfg_tgt: 13.5,
            cfg_sub: None,
            fidelity_enhanced: false,
            share_eps_across_flows: true,
            seed: 0,
            max_sub_prompts: 3,
            aggregation: AggregationMode::ProjectionVfa,
            tol: NORM_TOL,
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cfg_src < 0.0 || self.cfg_tgt < 0.0 || self.cfg_sub.is_some_and(|s| s < 0.0) {
            return Err(Error::config("guidance scales must be >= 0"));
        }
        if self.max_sub_prompts == 0 {
            return Err(Error::config("max_sub_prompts must be >= 1"));
        }
        Ok(())
    }

    pub fn cfg_sub_scale(&self) -> f64 {
        self.cfg_sub.unwrap_or(self.cfg_tgt)
    }
}

/// Guided velocity difference between the estimated target latent and the
/// source latent:
/// `eval_cfg(x_tgt_est, sigma, cond_tgt, cfg_tgt) - eval_cfg(x_src, sigma, cond_src, cfg_src)`.
#[allow(clippy::too_many_arguments)]
pub fn velocity_delta(
    field: &FieldSpec,
    x_tgt_est: &Latent,
    x_src: &Latent,
    sigma: f64,
    cond_tgt: &Condition,
    cond_src: &Condition,
    cfg_tgt: f64,
    cfg_src: f64,
) -> Result<Latent> {
    x_tgt_est.same_shape(x_src)?;
    let v_tgt = field.eval_cfg(x_tgt_est, sigma, cond_tgt, cfg_tgt)?;
    let v_src = field.eval_cfg(x_src, sigma, cond_src, cfg_src)?;
    v_tgt.sub(&v_src)
}

/// Trajectory bundle advanced during the decomposition phase.
#[derive(Debug, Clone)]
pub struct EditState {
    /// Full-target trajectory.
    pub x_fe: Latent,
    /// Sub-target trajectories, one per sub-condition.
    pub x_fe_sub: Vec<Latent>,
    /// Current loop index (the iteration that produced this state).
    pub step_index: usize,
    /// Velocity-difference evaluations consumed so far (headline counter).
    pub evals: usize,
}

impl EditState {
    /// Both trajectory kinds start at the clean source latent.
    pub fn init(x0_src: &Latent, n_sub: usize, eta_max: usize) -> Self {
        EditState {
            x_fe: x0_src.clone(),
            x_fe_sub: vec![x0_src.clone(); n_sub],
            step_index: eta_max,
            evals: 0,
        }
    }
}

/// Advances every sub-trajectory and the full-target trajectory by one
/// iteration at noise level `sigma_i` with signed step `delta`
/// (`sigma_{i-1} - sigma_i`, negative when walking toward clean data).
///
/// Each flow k estimates its noisy target as `x_sub_k + x_src - x0_src` and
/// moves by `delta * velocity_delta(...)` under its own condition, where
/// `x_src` interpolates the source latent with `eps_i` at `sigma_i` (or is
/// the clean source latent itself under `config.fidelity_enhanced`). Per-sub
/// noise draws are supported through `eps_subs` when noise sharing is
/// disabled; by default all flows share `eps_i`.
#[allow(clippy::too_many_arguments)]
pub fn decomposition_step(
    field: &FieldSpec,
    state: &EditState,
    x0_src: &Latent,
    cond_src: &Condition,
    sub_conds: &[Condition],
    cond_tgt: &Condition,
    sigma_i: f64,
    delta: f64,
    eps_i: &Latent,
    eps_subs: Option<&[Latent]>,
    config: &EditConfig,
) -> Result<EditState> {
    if sub_conds.is_empty() {
        return Err(Error::config(
            "decomposition needs at least one sub-condition",
        ));
    }
    if sub_conds.len() != state.x_fe_sub.len() {
        return Err(Error::config(format!(
            "state holds {} sub-trajectories but {} sub-conditions were given",
            state.x_fe_sub.len(),
            sub_conds.len()
        )));
    }
    if let Some(list) = eps_subs {
        if list.len() != sub_conds.len() {
            return Err(Error::config(
                "per-sub noise list length does not match sub-condition count",
            ));
        }
    }

    let x_src_main = source_latent(x0_src, eps_i, sigma_i, config)?;
    let mut next = state.clone();
    next.step_index = state.step_index.saturating_sub(1);

    // Sub-flows first, each against its own (or the shared) source latent.
    for (k, sub_cond) in sub_conds.iter().enumerate() {
        let x_src_k = match eps_subs {
            Some(list) => source_latent(x0_src, &list[k], sigma_i, config)?,
            None => x_src_main.clone(),
        };
        let est = state.x_fe_sub[k].add(&x_src_k)?.sub(x0_src)?;
        let g = velocity_delta(
            field,
            &est,
            &x_src_k,
            sigma_i,
            sub_cond,
            cond_src,
            config.cfg_sub_scale(),
            config.cfg_src,
        )?;
        next.evals += 1;
        next.x_fe_sub[k] = state.x_fe_sub[k].axpy(delta, &g)?;
    }

    // The full-target flow runs throughout the decomposition phase.
    let est_t = state.x_fe.add(&x_src_main)?.sub(x0_src)?;
    let g_t = velocity_delta(
        field,
        &est_t,
        &x_src_main,
        sigma_i,
        cond_tgt,
        cond_src,
        config.cfg_tgt,
        config.cfg_src,
    )?;
    next.evals += 1;
    next.x_fe = state.x_fe.axpy(delta, &g_t)?;
    Ok(next)
}

fn source_latent(x0_src: &Latent, eps: &Latent, sigma: f64, config: &EditConfig) -> Result<Latent> {
    if config.fidelity_enhanced {
        Ok(x0_src.clone())
    } else {
        noise_interpolate(x0_src, eps, sigma)
    }
}

/// Latent trajectory projection: project each sub-trajectory latent onto the
/// channel-normalized full-target latent, then average the projections.
pub fn ltp(
    sub_latents: &[Latent],
    target_latent: &Latent,
    tol: f64,
) -> Result<(Vec<Latent>, Latent)> {
    if sub_latents.is_empty() {
        return Err(Error::config("ltp needs at least one sub-latent"));
    }
    let mut projected = Vec::with_capacity(sub_latents.len());
    for sub in sub_latents {
        projected.push(project_onto(sub, target_latent, tol)?);
    }
    let mut mean = Latent::zeros(target_latent.shape());
    for p in &projected {
        mean = mean.add(p)?;
    }
    let mean = mean.scale(1.0 / projected.len() as f64);
    Ok((projected, mean))
}

/// Output of [`vfa`]: the aggregated velocity, the per-sub-flow weight maps
/// (summing to one at every location), and the per-flow delta norms.
#[derive(Debug, Clone)]
pub struct VfaOutput {
    pub v_bar: Latent,
    pub weights: Vec<ChannelMap>,
    pub delta_norms: Vec<f64>,
}

/// Velocity field aggregation at the projected latents.
///
/// For each sub-flow, the velocity difference is evaluated at the noisy
/// estimate `projected_k + x_src - x0_src` (the same estimate construction
/// every editing step uses; with the fidelity-enhanced variant the two
/// coincide because `x_src` is the clean source latent). Pairwise cosine
/// similarity maps between the differences are summed per location into
/// consensus scores, a per-location softmax over flows turns scores into
/// weights, and the aggregated velocity is the weighted per-location sum.
#[allow(clippy::too_many_arguments)]
pub fn vfa(
    field: &FieldSpec,
    projected: &[Latent],
    x_src: &Latent,
    x0_src: &Latent,
    sigma: f64,
    sub_conds: &[Condition],
    cond_src: &Condition,
    config: &EditConfig,
    tol: f64,
) -> Result<VfaOutput> {
    let n = projected.len();
    if n == 0 || sub_conds.len() != n {
        return Err(Error::config(format!(
            "vfa needs matching non-empty latents and conditions, got {} and {}",
            n,
            sub_conds.len()
        )));
    }

    let mut deltas = Vec::with_capacity(n);
    for (p, cond) in projected.iter().zip(sub_conds) {
        let est = p.add(x_src)?.sub(x0_src)?;
        let g = velocity_delta(
            field,
            &est,
            x_src,
            sigma,
            cond,
            cond_src,
            config.cfg_sub_scale(),
            config.cfg_src,
        )?;
        deltas.push(g);
    }
    let delta_norms: Vec<f64> = deltas.iter().map(|g| g.norm()).collect();

    // Pairwise cosine similarity maps (symmetric; diagonal unused by the
    // score sum below).
    let shape = deltas[0].shape();
    let (rows, cols) = (shape.h, shape.w);
    let mut sims: Vec<Vec<ChannelMap>> = vec![vec![ChannelMap::zeros(rows, cols); n]; n];
    for k in 0..n {
        for j in k..n {
            let m = cosine_similarity_map(&deltas[k], &deltas[j], tol)?;
            sims[j][k] = m.clone();
            sims[k][j] = m;
        }
    }

    let mut weights = vec![ChannelMap::zeros(rows, cols); n];
    let mut v_bar = Latent::zeros(shape);
    for h in 0..rows {
        for w in 0..cols {
            let scores: Vec<f64> = (0..n)
                .map(|k| {
                    (0..n)
                        .filter(|&j| j != k)
                        .map(|j| sims[k][j].at(h, w))
                        .sum()
                })
                .collect();
            let local = softmax(&scores);
            for k in 0..n {
                weights[k].data_mut()[h * cols + w] = local[k];
                for c in 0..shape.c {
                    let idx = (c * rows + h) * cols + w;
                    v_bar.data_mut()[idx] += local[k] * deltas[k].data()[idx];
                }
            }
        }
    }

    Ok(VfaOutput {
        v_bar,
        weights,
        delta_norms,
    })
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// The aggregation update `x_proj + delta * v_bar`.
pub fn aggregate_update(x_proj: &Latent, v_bar: &Latent, delta: f64) -> Result<Latent> {
    x_proj.axpy(delta, v_bar)
}

/// Per-step record in a [`RunReport`].
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub index: usize,
    pub sigma: f64,
    /// Velocity-difference norms: target flow first, then sub-flows when active.
    pub delta_norms: Vec<f64>,
    /// Headline evaluation counter after this step.
    pub evals_total: usize,
}

/// Per-sub-flow weight-map statistics from the aggregation step.
#[derive(Debug, Clone)]
pub struct WeightSummary {
    pub flow: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// Diagnostics of one editing run.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub steps: Vec<StepRecord>,
    pub weight_summary: Vec<WeightSummary>,
    /// Velocity-difference evaluations counted by the headline formula
    /// `N * (eta_max - eta_dec) + eta_max`.
    pub headline_evals: usize,
    /// Extra evaluations spent by VFA at the projected latents.
    pub vfa_evals: usize,
    pub sub_flow_count: usize,
    pub final_latent_norm: f64,
    /// Where the final latent went (path or caller-provided tag).
    pub final_latent_ref: Option<String>,
}

impl RunReport {
    /// Human-readable structured-text rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("run_report v1\n");
        out.push_str(&format!("sub_flows: {}\n", self.sub_flow_count));
        out.push_str(&format!("headline_evals: {}\n", self.headline_evals));
        out.push_str(&format!("vfa_evals: {}\n", self.vfa_evals));
        out.push_str(&format!("final_latent_norm: {}\n", self.final_latent_norm));
        if let Some(r) = &self.final_latent_ref {
            out.push_str(&format!("final_latent: {r}\n"));
        }
        if !self.weight_summary.is_empty() {
            out.push_str("weight_maps (per sub-flow): min mean max\n");
            for w in &self.weight_summary {
                out.push_str(&format!(
                    "  flow {}: {:.6} {:.6} {:.6}\n",
                    w.flow, w.min, w.mean, w.max
                ));
            }
        }
        out.push_str("steps: i sigma evals |v_delta| (target, then sub-flows)\n");
        for s in &self.steps {
            let norms: Vec<String> = s.delta_norms.iter().map(|n| format!("{n:.6}")).collect();
            out.push_str(&format!(
                "  {} {:.4} {} [{}]\n",
                s.index,
                s.sigma,
                s.evals_total,
                norms.join(", ")
            ));
        }
        out
    }
}

fn weight_stats(weights: &[ChannelMap]) -> Vec<WeightSummary> {
    weights
        .iter()
        .enumerate()
        .map(|(k, map)| {
            let data = map.data();
            let min = data.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            let max = data.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mean = data.iter().sum::<f64>() / data.len() as f64;
            WeightSummary {
                flow: k,
                min,
                mean,
                max,
            }
        })
        .collect()
}

enum Method<'a> {
    Baseline,
    SplitFlow { sub_conds: &'a [Condition] },
}

/// FlowEdit baseline: a single guided trajectory from the source latent.
///
/// Deterministic under `config.seed`; a null edit (equal conditions) returns
/// the source latent.
pub fn flowedit_run(
    field: &FieldSpec,
    x0_src: &Latent,
    cond_src: &Condition,
    cond_tgt: &Condition,
    schedule: &EditSchedule,
    config: &EditConfig,
) -> Result<Latent> {
    run_engine(
        field,
        x0_src,
        cond_src,
        cond_tgt,
        schedule,
        config,
        Method::Baseline,
    )
    .map(|(latent, _)| latent)
}

/// FlowEdit baseline with the run diagnostics attached.
pub fn flowedit_run_with_report(
    field: &FieldSpec,
    x0_src: &Latent,
    cond_src: &Condition,
    cond_tgt: &Condition,
    schedule: &EditSchedule,
    config: &EditConfig,
) -> Result<(Latent, RunReport)> {
    run_engine(
        field,
        x0_src,
        cond_src,
        cond_tgt,
        schedule,
        config,
        Method::Baseline,
    )
}

/// Full split-flow run: decomposition phase, aggregation at `eta_dec`
/// (per `config.aggregation`), then the unified phase.
pub fn splitflow_run(
    field: &FieldSpec,
    x0_src: &Latent,
    cond_src: &Condition,
    sub_conds: &[Condition],
    cond_tgt: &Condition,
    schedule: &EditSchedule,
    config: &EditConfig,
) -> Result<(Latent, RunReport)> {
    if sub_conds.is_empty() {
        return Err(Error::config("splitflow needs at least one sub-condition"));
    }
    if sub_conds.len() > config.max_sub_prompts {
        return Err(Error::config(format!(
            "{} sub-conditions exceed the cap of {}",
            sub_conds.len(),
            config.max_sub_prompts
        )));
    }
    run_engine(
        field,
        x0_src,
        cond_src,
        cond_tgt,
        schedule,
        config,
        Method::SplitFlow { sub_conds },
    )
}

fn run_engine(
    field: &FieldSpec,
    x0_src: &Latent,
    cond_src: &Condition,
    cond_tgt: &Condition,
    schedule: &EditSchedule,
    config: &EditConfig,
    method: Method<'_>,
) -> Result<(Latent, RunReport)> {
    schedule.validate()?;
    config.validate()?;
    if x0_src.shape() != field.input_shape {
        return Err(Error::dimension(format!(
            "source latent shape {} does not match field input shape {}",
            x0_src.shape(),
            field.input_shape
        )));
    }

    let sub_conds: &[Condition] = match &method {
        Method::Baseline => &[],
        Method::SplitFlow { sub_conds } => sub_conds,
    };
    let n_sub = sub_conds.len();

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let normal = StandardNormal;
    let draw_eps = |rng: &mut ChaCha12Rng| -> Result<Latent> {
        let data: Vec<f64> = (0..x0_src.shape().len())
            .map(|_| {
                let g: f64 = normal.sample(rng);
                g
            })
            .collect();
        Latent::new(x0_src.shape(), data)
    };

    let mut state = EditState::init(x0_src, n_sub, schedule.eta_max);
    let mut report = RunReport {
        sub_flow_count: n_sub,
        ..RunReport::default()
    };

    for i in (1..=schedule.eta_max).rev() {
        let sigma_i = schedule.sigma(i);
        let delta = schedule.sigma(i - 1) - sigma_i;
        let eps = draw_eps(&mut rng)?;
        let in_decomposition = n_sub > 0 && i >= schedule.eta_dec;

        let mut step_norms = Vec::new();
        if in_decomposition && i > schedule.eta_dec {
            // Extra per-sub draws only when sharing is disabled.
            let eps_subs: Option<Vec<Latent>> = if config.share_eps_across_flows {
                None
            } else {
                let mut list = Vec::with_capacity(n_sub);
                for _ in 0..n_sub {
                    list.push(draw_eps(&mut rng)?);
                }
                Some(list)
            };
            let prev_fe = state.x_fe.clone();
            let prev_subs = state.x_fe_sub.clone();
            state = decomposition_step(
                field,
                &state,
                x0_src,
                cond_src,
                sub_conds,
                cond_tgt,
                sigma_i,
                delta,
                &eps,
                eps_subs.as_deref(),
                config,
            )?;
            // Norms for the report, recovered from the state movement.
            let inv = 1.0 / delta;
            step_norms.push(state.x_fe.sub(&prev_fe)?.scale(inv).norm());
            for (new, old) in state.x_fe_sub.iter().zip(&prev_subs) {
                step_norms.push(new.sub(old)?.scale(inv).norm());
            }
        } else if in_decomposition {
            // i == eta_dec: fold the sub-trajectories back into the unified
            // flow. The aggregation step belongs to the decomposition phase,
            // so the fidelity-enhanced source replacement still applies.
            let x_src = source_latent(x0_src, &eps, sigma_i, config)?;
            match config.aggregation {
                AggregationMode::Average => {
                    let mut mean = Latent::zeros(x0_src.shape());
                    for s in &state.x_fe_sub {
                        mean = mean.add(s)?;
                    }
                    let mean = mean.scale(1.0 / n_sub as f64);
                    let est = mean.add(&x_src)?.sub(x0_src)?;
                    let g_t = velocity_delta(
                        field,
                        &est,
                        &x_src,
                        sigma_i,
                        cond_tgt,
                        cond_src,
                        config.cfg_tgt,
                        config.cfg_src,
                    )?;
                    state.evals += 1;
                    step_norms.push(g_t.norm());
                    state.x_fe = mean.axpy(delta, &g_t)?;
                }
                AggregationMode::Projection => {
                    let (_, x_proj) = ltp(&state.x_fe_sub, &state.x_fe, config.tol)?;
                    let est = x_proj.add(&x_src)?.sub(x0_src)?;
                    let g_t = velocity_delta(
                        field,
                        &est,
                        &x_src,
                        sigma_i,
                        cond_tgt,
                        cond_src,
                        config.cfg_tgt,
                        config.cfg_src,
                    )?;
                    state.evals += 1;
                    step_norms.push(g_t.norm());
                    state.x_fe = x_proj.axpy(delta, &g_t)?;
                }
                AggregationMode::ProjectionVfa => {
                    // The unified flow still spends its velocity difference on
                    // this iteration; the aggregation update supersedes it.
                    let est_t = state.x_fe.add(&x_src)?.sub(x0_src)?;
                    let g_t = velocity_delta(
                        field,
                        &est_t,
                        &x_src,
                        sigma_i,
                        cond_tgt,
                        cond_src,
                        config.cfg_tgt,
                        config.cfg_src,
                    )?;
                    state.evals += 1;
                    step_norms.push(g_t.norm());

                    let (projected, x_proj) = ltp(&state.x_fe_sub, &state.x_fe, config.tol)?;
                    let out = vfa(
                        field, &projected, &x_src, x0_src, sigma_i, sub_conds, cond_src, config,
                        config.tol,
                    )?;
                    report.vfa_evals += n_sub;
                    step_norms.extend_from_slice(&out.delta_norms);
                    report.weight_summary = weight_stats(&out.weights);
                    state.x_fe = aggregate_update(&x_proj, &out.v_bar, delta)?;
                }
            }
            // Sub-trajectories are discarded after aggregation.
            state.x_fe_sub.clear();
            state.step_index = i - 1;
        } else {
            // Baseline step / unified phase.
            let x_src = noise_interpolate(x0_src, &eps, sigma_i)?;
            let est = state.x_fe.add(&x_src)?.sub(x0_src)?;
            let g_t = velocity_delta(
                field,
                &est,
                &x_src,
                sigma_i,
                cond_tgt,
                cond_src,
                config.cfg_tgt,
                config.cfg_src,
            )?;
            state.evals += 1;
            step_norms.push(g_t.norm());
            state.x_fe = state.x_fe.axpy(delta, &g_t)?;
            state.step_index = i - 1;
        }

        if !state.x_fe.is_finite() || state.x_fe_sub.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric {
                step: i,
                message: "latent became non-finite during editing".into(),
            });
        }
        report.steps.push(StepRecord {
            index: i,
            sigma: sigma_i,
            delta_norms: step_norms,
            evals_total: state.evals,
        });
    }

    report.headline_evals = state.evals;
    report.final_latent_norm = state.x_fe.norm();
    Ok((state.x_fe, report))
}

/// Margins of the aggregation inequality and its two intermediate bounds.
#[derive(Debug, Clone, Copy)]
pub struct VfaMargins {
    /// `<g_bar, g_avg> - ||g_avg||^2`.
    pub aggregation: f64,
    /// `sum_i w_i a_i - log(Z/K)`.
    pub gibbs: f64,
    /// `log(Z/K) - mean(a)`.
    pub jensen: f64,
}

impl VfaMargins {
    pub fn min(&self) -> f64 {
        self.aggregation.min(self.gibbs).min(self.jensen)
    }
}

/// Checks the aggregation inequality on a set of unit vectors.
///
/// Scores are `a_k = sum_j <g_k, g_j>` (diagonal included), weights are the
/// softmax of the scores, and the checked quantity is
/// `<sum_k w_k g_k, g_avg> - ||g_avg||^2`, which is provably non-negative.
/// Inputs must be unit-norm within 1e-9.
pub fn check_vfa_inequality(unit_vectors: &[Vec<f64>]) -> Result<VfaMargins> {
    if unit_vectors.is_empty() {
        return Err(Error::config("inequality check needs at least one vector"));
    }
    let dim = unit_vectors[0].len();
    let k = unit_vectors.len();
    for v in unit_vectors {
        if v.len() != dim {
            return Err(Error::dimension("vectors must share one dimension"));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!(
                "vector norm {norm} deviates from 1 by more than 1e-9"
            )));
        }
    }

    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let scores: Vec<f64> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| dot(&unit_vectors[i], &unit_vectors[j]))
                .sum()
        })
        .collect();
    let weights = softmax(&scores);

    // log(Z/K) via a stable log-sum-exp.
    let a_max = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = a_max + scores.iter().map(|a| (a - a_max).exp()).sum::<f64>().ln();
    let log_z_over_k = lse - (k as f64).ln();
    let mean_a = scores.iter().sum::<f64>() / k as f64;
    let weighted_a: f64 = weights.iter().zip(&scores).map(|(w, a)| w * a).sum();

    let mut g_bar = vec![0.0; dim];
    let mut g_avg = vec![0.0; dim];
    for (v, &w) in unit_vectors.iter().zip(&weights) {
        for (i, &x) in v.iter().enumerate() {
            g_bar[i] += w * x;
            g_avg[i] += x;
        }
    }
    for x in &mut g_avg {
        *x /= k as f64;
    }

    Ok(VfaMargins {
        aggregation: dot(&g_bar, &g_avg) - dot(&g_avg, &g_avg),
        gibbs: weighted_a - log_z_over_k,
        jensen: log_z_over_k - mean_a,
    })
}
