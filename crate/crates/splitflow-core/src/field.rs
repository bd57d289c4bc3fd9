//! Conditional velocity fields.
//!
//! A [`FieldSpec`] evaluates a velocity `v(x, sigma, cond)` with one of three
//! interchangeable backends:
//!
//! - `constant_shift`: a per-condition lookup of constant velocities. Exact
//!   oracle for telescoping/closed-form tests.
//! - `affine_gaussian`: the affine transport field between a conditional data
//!   Gaussian at `sigma = 0` and a noise Gaussian at `sigma = 1`, coupled by
//!   the monotone affine map. With equal standard deviations the field is the
//!   constant `noise_mean - data_mean`.
//! - `mlp`: a trainable dense network on `flatten(x) ++ [sigma] ++ embedding`.

use crate::error::{Error, Result};
use crate::latent::{Latent, Shape};
use crate::mlp::{mlp_forward, MlpParams};

/// A conditioning embedding standing in for a text prompt at desk scale.
///
/// The null condition (all zeros, `is_null = true`) is the classifier-free
/// guidance anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub embedding: Vec<f64>,
    pub is_null: bool,
    pub label: Option<String>,
}

impl Condition {
    pub fn new(embedding: Vec<f64>) -> Result<Self> {
        if let Some(bad) = embedding.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite condition entry: {bad}")));
        }
        Ok(Condition {
            embedding,
            is_null: false,
            label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// The reserved all-zeros null condition of dimension `dim`.
    pub fn null(dim: usize) -> Self {
        Condition {
            embedding: vec![0.0; dim],
            is_null: true,
            label: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.embedding.len()
    }
}

/// Lookup entry binding one condition embedding to a backend-specific latent.
#[derive(Debug, Clone, PartialEq)]
pub struct CondEntry {
    pub embedding: Vec<f64>,
    pub value: Latent,
}

/// Constant-shift backend: `v(x, sigma, cond) = shift(cond)` regardless of
/// `x` and `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantShiftParams {
    pub entries: Vec<CondEntry>,
    pub null_shift: Latent,
}

/// Affine Gaussian-transport backend.
///
/// Data at `sigma = 0` is `N(data_mean(cond), data_std^2 I)`; noise at
/// `sigma = 1` is `N(noise_mean, noise_std^2 I)`. Under the affine coupling
/// `n(d) = noise_mean + r (d - data_mean)` with `r = noise_std / data_std`,
/// the exact velocity along the straight interpolation path is affine in `x`
/// and constant when `r = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGaussianParams {
    pub entries: Vec<CondEntry>,
    pub null_data_mean: Latent,
    pub data_std: f64,
    pub noise_mean: Latent,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldKind {
    ConstantShift(ConstantShiftParams),
    AffineGaussian(AffineGaussianParams),
    Mlp(MlpParams),
}

impl FieldKind {
    pub fn name(&self) -> &'static str {
        match self {
            FieldKind::ConstantShift(_) => "constant_shift",
            FieldKind::AffineGaussian(_) => "affine_gaussian",
            FieldKind::Mlp(_) => "mlp",
        }
    }
}

/// A conditional velocity field: backend parameters plus the latent shape and
/// condition dimension it accepts.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub kind: FieldKind,
    pub input_shape: Shape,
    pub cond_dim: usize,
}

fn lookup<'a>(entries: &'a [CondEntry], cond: &Condition) -> Option<&'a Latent> {
    entries
        .iter()
        .find(|e| e.embedding == cond.embedding)
        .map(|e| &e.value)
}

impl FieldSpec {
    pub fn constant_shift(
        input_shape: Shape,
        cond_dim: usize,
        params: ConstantShiftParams,
    ) -> Result<Self> {
        params.null_shift.same_shape(&Latent::zeros(input_shape))?;
        for e in &params.entries {
            e.value.same_shape(&Latent::zeros(input_shape))?;
            if e.embedding.len() != cond_dim {
                return Err(Error::dimension(
                    "constant-shift entry embedding dim mismatch",
                ));
            }
        }
        Ok(FieldSpec {
            kind: FieldKind::ConstantShift(params),
            input_shape,
            cond_dim,
        })
    }

    pub fn affine_gaussian(
        input_shape: Shape,
        cond_dim: usize,
        params: AffineGaussianParams,
    ) -> Result<Self> {
        if params.data_std <= 0.0 || params.noise_std <= 0.0 {
            return Err(Error::domain(
                "affine gaussian standard deviations must be positive",
            ));
        }
        params
            .null_data_mean
            .same_shape(&Latent::zeros(input_shape))?;
        params.noise_mean.same_shape(&Latent::zeros(input_shape))?;
        for e in &params.entries {
            e.value.same_shape(&Latent::zeros(input_shape))?;
            if e.embedding.len() != cond_dim {
                return Err(Error::dimension(
                    "affine-gaussian entry embedding dim mismatch",
                ));
            }
        }
        Ok(FieldSpec {
            kind: FieldKind::AffineGaussian(params),
            input_shape,
            cond_dim,
        })
    }

    pub fn mlp(input_shape: Shape, cond_dim: usize, params: MlpParams) -> Result<Self> {
        let expect_in = input_shape.len() + 1 + cond_dim;
        if params.input_dim() != expect_in {
            return Err(Error::dimension(format!(
                "mlp input dim {} does not match C*H*W + 1 + D = {expect_in}",
                params.input_dim()
            )));
        }
        if params.output_dim() != input_shape.len() {
            return Err(Error::dimension(format!(
                "mlp output dim {} does not match latent size {}",
                params.output_dim(),
                input_shape.len()
            )));
        }
        Ok(FieldSpec {
            kind: FieldKind::Mlp(params),
            input_shape,
            cond_dim,
        })
    }

    pub fn mlp_params(&self) -> Option<&MlpParams> {
        match &self.kind {
            FieldKind::Mlp(p) => Some(p),
            _ => None,
        }
    }

    pub fn mlp_params_mut(&mut self) -> Option<&mut MlpParams> {
        match &mut self.kind {
            FieldKind::Mlp(p) => Some(p),
            _ => None,
        }
    }

    fn check_inputs(&self, x: &Latent, cond: &Condition) -> Result<()> {
        if x.shape() != self.input_shape {
            return Err(Error::dimension(format!(
                "latent shape {} does not match field input shape {}",
                x.shape(),
                self.input_shape
            )));
        }
        if cond.dim() != self.cond_dim {
            return Err(Error::dimension(format!(
                "condition dim {} does not match field cond dim {}",
                cond.dim(),
                self.cond_dim
            )));
        }
        Ok(())
    }

    /// Assembles the MLP input `flatten(x) ++ [sigma] ++ embedding`.
    pub fn mlp_input(&self, x: &Latent, sigma: f64, cond: &Condition) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.input_shape.len() + 1 + self.cond_dim);
        input.extend_from_slice(x.data());
        input.push(sigma);
        input.extend_from_slice(&cond.embedding);
        input
    }

    /// Evaluates the conditional velocity `v(x, sigma, cond)`.
    ///
    /// Pure and deterministic: identical inputs give bit-identical outputs.
    pub fn eval(&self, x: &Latent, sigma: f64, cond: &Condition) -> Result<Latent> {
        self.check_inputs(x, cond)?;
        match &self.kind {
            FieldKind::ConstantShift(p) => {
                if cond.is_null {
                    return Ok(p.null_shift.clone());
                }
                lookup(&p.entries, cond).cloned().ok_or_else(|| {
                    Error::config("constant-shift field has no entry for this condition")
                })
            }
            FieldKind::AffineGaussian(p) => {
                let data_mean = if cond.is_null {
                    &p.null_data_mean
                } else {
                    lookup(&p.entries, cond).ok_or_else(|| {
                        Error::config("affine-gaussian field has no entry for this condition")
                    })?
                };
                let r = p.noise_std / p.data_std;
                let denom = (1.0 - sigma) + sigma * r;
                let mut out = Latent::zeros(self.input_shape);
                for (i, slot) in out.data_mut().iter_mut().enumerate() {
                    let mu = data_mean.data()[i];
                    let nm = p.noise_mean.data()[i];
                    // Invert x = (1 - sigma) d + sigma n(d) for d, then v = n(d) - d.
                    let d = (x.data()[i] - sigma * (nm - r * mu)) / denom;
                    *slot = (nm - mu) + (r - 1.0) * (d - mu);
                }
                Ok(out)
            }
            FieldKind::Mlp(params) => {
                let input = self.mlp_input(x, sigma, cond);
                let (out, _) = mlp_forward(params, &input)?;
                Latent::new(self.input_shape, out)
            }
        }
    }

    /// Classifier-free guidance: `v_null + scale * (v_cond - v_null)`.
    pub fn eval_cfg(&self, x: &Latent, sigma: f64, cond: &Condition, scale: f64) -> Result<Latent> {
        let v_cond = self.eval(x, sigma, cond)?;
        if scale == 1.0 {
            return Ok(v_cond);
        }
        let null = Condition::null(self.cond_dim);
        let v_null = self.eval(x, sigma, &null)?;
        v_null.axpy(scale, &v_cond.sub(&v_null)?)
    }
}
