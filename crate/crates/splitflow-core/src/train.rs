//! Rectified-flow training of the MLP velocity field, and the Euler sampler
//! used for generation sanity checks.
//!
//! Under the noise-level convention used throughout this crate (`sigma = 0`
//! clean, `sigma = 1` noise), straight interpolation paths have the constant
//! path derivative `eps - x0`, which is the regression target. Generation
//! integrates `x' = v` from `sigma = 1` down to `0` with explicit Euler steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::field::{Condition, FieldSpec};
use crate::latent::{noise_interpolate, Latent};
use crate::mlp::{mlp_backward, mlp_forward, MlpGrads, MlpParams};
use crate::scene::SceneSpec;

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Probability of replacing a sample's condition with the null condition,
    /// which is what makes classifier-free guidance possible later.
    pub cond_dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            steps: 2000,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            cond_dropout: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::config("batch size and step count must be positive"));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::config("learning rate must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return Err(Error::config("condition dropout must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// A source of `(x0, condition)` training pairs.
pub trait Dataset {
    fn sample_pair(&self, rng: &mut ChaCha12Rng) -> Result<(Latent, Condition)>;
}

impl Dataset for SceneSpec {
    fn sample_pair(&self, rng: &mut ChaCha12Rng) -> Result<(Latent, Condition)> {
        self.sample(rng)
    }
}

/// Degenerate dataset returning one fixed pair; handy for overfit checks.
#[derive(Debug, Clone)]
pub struct FixedDataset {
    pub x0: Latent,
    pub cond: Condition,
}

impl Dataset for FixedDataset {
    fn sample_pair(&self, _rng: &mut ChaCha12Rng) -> Result<(Latent, Condition)> {
        Ok((self.x0.clone(), self.cond.clone()))
    }
}

/// One training sample: clean latent, condition, noise draw, noise level.
#[derive(Debug, Clone)]
pub struct FmSample {
    pub x0: Latent,
    pub cond: Condition,
    pub eps: Latent,
    pub sigma: f64,
}

/// Flow-matching regression loss over a batch:
/// mean over samples and coordinates of
/// `(v(x_sigma, sigma, cond) - (eps - x0))^2`.
pub fn fm_loss(field: &FieldSpec, batch: &[FmSample]) -> Result<f64> {
    fm_loss_impl(field, batch, false).map(|(l, _)| l)
}

/// Loss plus parameter gradients; requires the MLP backend.
pub fn fm_loss_with_grads(field: &FieldSpec, batch: &[FmSample]) -> Result<(f64, MlpGrads)> {
    let (loss, grads) = fm_loss_impl(field, batch, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

fn fm_loss_impl(
    field: &FieldSpec,
    batch: &[FmSample],
    want_grads: bool,
) -> Result<(f64, Option<MlpGrads>)> {
    if batch.is_empty() {
        return Err(Error::config("fm_loss needs a non-empty batch"));
    }
    let coord_count = field.input_shape.len();
    let denom = (batch.len() * coord_count) as f64;

    let params = field.mlp_params();
    if want_grads && params.is_none() {
        return Err(Error::config(
            "gradient-bearing loss requires the mlp backend",
        ));
    }

    let mut loss = 0.0;
    let mut grads = params.map(MlpGrads::zeros_like);
    for sample in batch {
        sample.x0.same_shape(&sample.eps)?;
        let x_sigma = noise_interpolate(&sample.x0, &sample.eps, sample.sigma)?;
        let target = sample.eps.sub(&sample.x0)?;
        if want_grads {
            let params = params.expect("mlp backend checked above");
            let input = field.mlp_input(&x_sigma, sample.sigma, &sample.cond);
            let (out, cache) = mlp_forward(params, &input)?;
            let mut upstream = vec![0.0; out.len()];
            for (i, slot) in upstream.iter_mut().enumerate() {
                let r = out[i] - target.data()[i];
                loss += r * r;
                *slot = 2.0 * r / denom;
            }
            let sample_grads = mlp_backward(params, &cache, &upstream)?;
            grads.as_mut().expect("allocated").accumulate(&sample_grads);
        } else {
            let v = field.eval(&x_sigma, sample.sigma, &sample.cond)?;
            for (a, b) in v.data().iter().zip(target.data()) {
                let r = a - b;
                loss += r * r;
            }
        }
    }
    Ok((loss / denom, grads))
}

/// Adam state mirroring the parameter block layout.
struct Adam {
    m: MlpGrads,
    v: MlpGrads,
    t: i32,
}

impl Adam {
    fn new(params: &MlpParams) -> Self {
        Adam {
            m: MlpGrads::zeros_like(params),
            v: MlpGrads::zeros_like(params),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut MlpParams, grads: &MlpGrads, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let bias1 = 1.0 - b1.powi(self.t);
        let bias2 = 1.0 - b2.powi(self.t);
        for (k, layer) in params.layers.iter_mut().enumerate() {
            for (block, m_block, v_block, g_block) in [
                (
                    &mut layer.weights,
                    &mut self.m.d_weights[k],
                    &mut self.v.d_weights[k],
                    &grads.d_weights[k],
                ),
                (
                    &mut layer.biases,
                    &mut self.m.d_biases[k],
                    &mut self.v.d_biases[k],
                    &grads.d_biases[k],
                ),
            ] {
                for i in 0..block.len() {
                    let g = g_block[i];
                    m_block[i] = b1 * m_block[i] + (1.0 - b1) * g;
                    v_block[i] = b2 * v_block[i] + (1.0 - b2) * g * g;
                    let m_hat = m_block[i] / bias1;
                    let v_hat = v_block[i] / bias2;
                    block[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
                }
            }
        }
    }
}

/// Result of a training run: the updated field and the per-step loss curve.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub field: FieldSpec,
    pub loss_curve: Vec<f64>,
}

/// Assembles one seeded batch (noise, sigma, condition dropout).
fn draw_batch<D: Dataset + ?Sized>(
    dataset: &D,
    cond_dim: usize,
    batch_size: usize,
    cond_dropout: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<FmSample>> {
    let normal = StandardNormal;
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let (x0, cond) = dataset.sample_pair(rng)?;
        let eps_data: Vec<f64> = (0..x0.shape().len())
            .map(|_| {
                let g: f64 = normal.sample(rng);
                g
            })
            .collect();
        let eps = Latent::new(x0.shape(), eps_data)?;
        let sigma: f64 = rng.random_range(0.0..1.0);
        let cond = if cond_dropout > 0.0 && rng.random_bool(cond_dropout.clamp(0.0, 1.0)) {
            Condition::null(cond_dim)
        } else {
            cond
        };
        batch.push(FmSample {
            x0,
            cond,
            eps,
            sigma,
        });
    }
    Ok(batch)
}

/// Trains the field's MLP on the dataset with Adam; deterministic under the
/// config seed. Fails with the step index if the loss goes non-finite.
pub fn train<D: Dataset + ?Sized>(
    field: &FieldSpec,
    dataset: &D,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if field.mlp_params().is_none() {
        return Err(Error::config("training requires the mlp backend"));
    }

    let mut field = field.clone();
    let cond_dim = field.cond_dim;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(field.mlp_params().expect("mlp checked"));
    let mut loss_curve = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let batch = draw_batch(
            dataset,
            cond_dim,
            cfg.batch_size,
            cfg.cond_dropout,
            &mut rng,
        )?;
        let (loss, grads) = fm_loss_with_grads(&field, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Numeric {
                step,
                message: format!("training loss became non-finite ({loss})"),
            });
        }
        loss_curve.push(loss);
        adam.step(field.mlp_params_mut().expect("mlp checked"), &grads, cfg);
    }

    Ok(TrainOutcome { field, loss_curve })
}

/// Euler generation: start at seeded Gaussian noise (`sigma = 1`) and
/// integrate down to `sigma = 0` in `steps` uniform steps, evaluating the
/// field at the left endpoint of each interval.
pub fn generate(field: &FieldSpec, cond: &Condition, steps: usize, seed: u64) -> Result<Latent> {
    if steps == 0 {
        return Err(Error::config("generation needs at least one step"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let data: Vec<f64> = (0..field.input_shape.len())
        .map(|_| {
            let g: f64 = normal.sample(&mut rng);
            g
        })
        .collect();
    let mut x = Latent::new(field.input_shape, data)?;
    let dt = 1.0 / steps as f64;
    for k in (1..=steps).rev() {
        let sigma = k as f64 / steps as f64;
        let v = field.eval(&x, sigma, cond)?;
        x = x.axpy(-dt, &v)?;
    }
    Ok(x)
}
