//! Latent tensors and the channel-wise geometric primitives used by
//! trajectory projection and velocity aggregation.
//!
//! A [`Latent`] is a rank-3 tensor (channels x rows x cols). All geometric
//! reductions (inner products, normalization, projection, cosine similarity)
//! operate per spatial location over the channel vector at that location,
//! producing either a new `Latent` or a [`ChannelMap`] of shape (rows, cols).

use crate::error::{Error, Result};

/// Default guard below which a channel column is treated as zero.
pub const NORM_TOL: f64 = 1e-12;

/// Tensor shape (channels, rows, cols), all dimensions >= 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(c: usize, h: usize, w: usize) -> Result<Self> {
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::dimension(format!(
                "shape dimensions must be >= 1, got ({c}, {h}, {w})"
            )));
        }
        Ok(Shape { c, h, w })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn spatial_len(&self) -> usize {
        self.h * self.w
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.c, self.h, self.w)
    }
}

/// Rank-3 latent tensor, channel-major row-major storage:
/// `data[(c * h + row) * w + col]`.
///
/// Holds source/edited/noise states as well as velocity values, which share
/// the same representation.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    shape: Shape,
    data: Vec<f64>,
}

impl Latent {
    /// Wraps raw data; the length must equal `c*h*w` and all entries must be finite.
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::dimension(format!(
                "data length {} does not match shape {} ({} entries)",
                data.len(),
                shape,
                shape.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite latent entry: {bad}")));
        }
        Ok(Latent { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Latent {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    /// Single-location latent from a channel vector (H = W = 1).
    pub fn from_channels(values: &[f64]) -> Result<Self> {
        let shape = Shape::new(values.len(), 1, 1)?;
        Latent::new(shape, values.to_vec())
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, c: usize, h: usize, w: usize) -> f64 {
        self.data[(c * self.shape.h + h) * self.shape.w + w]
    }

    pub fn same_shape(&self, other: &Latent) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dimension(format!(
                "shape mismatch: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// True if every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &Latent) -> Result<Latent> {
        self.same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Latent {
            shape: self.shape,
            data,
        })
    }

    pub fn sub(&self, other: &Latent) -> Result<Latent> {
        self.same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Latent {
            shape: self.shape,
            data,
        })
    }

    pub fn scale(&self, factor: f64) -> Latent {
        Latent {
            shape: self.shape,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// `self + factor * other`, elementwise.
    pub fn axpy(&self, factor: f64, other: &Latent) -> Result<Latent> {
        self.same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + factor * b)
            .collect();
        Ok(Latent {
            shape: self.shape,
            data,
        })
    }

    /// Frobenius norm over all entries.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// L2 norm of the channel column at (h, w).
    pub fn channel_norm(&self, h: usize, w: usize) -> f64 {
        (0..self.shape.c)
            .map(|c| {
                let v = self.at(c, h, w);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Per-location scalar map of shape (rows, cols), produced by channel reductions.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMap {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl ChannelMap {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::dimension(format!(
                "channel map data length {} does not match ({h}, {w})",
                data.len()
            )));
        }
        Ok(ChannelMap { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        ChannelMap {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn at(&self, h: usize, w: usize) -> f64 {
        self.data[h * self.w + w]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Convex combination of a clean latent and a noise latent at level `sigma`.
///
/// `sigma = 0` is clean data, `sigma = 1` is pure noise. Computed as
/// `x0 + sigma * (eps - x0)` so that interpolating a latent with itself is
/// exact for every `sigma`, with exact shortcuts at both endpoints.
pub fn noise_interpolate(x0: &Latent, eps: &Latent, sigma: f64) -> Result<Latent> {
    x0.same_shape(eps)?;
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::domain(format!(
            "noise level must lie in [0, 1], got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(x0.clone());
    }
    if sigma == 1.0 {
        return Ok(eps.clone());
    }
    let data = x0
        .data
        .iter()
        .zip(&eps.data)
        .map(|(a, e)| a + sigma * (e - a))
        .collect();
    Ok(Latent {
        shape: x0.shape,
        data,
    })
}

/// Per-location inner product along the channel dimension:
/// `out(h, w) = sum_c a(c,h,w) * b(c,h,w)`.
pub fn channel_inner(a: &Latent, b: &Latent) -> Result<ChannelMap> {
    a.same_shape(b)?;
    let s = a.shape;
    let mut out = ChannelMap::zeros(s.h, s.w);
    for h in 0..s.h {
        for w in 0..s.w {
            let mut acc = 0.0;
            for c in 0..s.c {
                acc += a.at(c, h, w) * b.at(c, h, w);
            }
            out.data[h * s.w + w] = acc;
        }
    }
    Ok(out)
}

/// Normalizes each channel column to unit L2 norm; columns with norm <= `tol`
/// map to the zero column.
pub fn channel_normalize(x: &Latent, tol: f64) -> Latent {
    let s = x.shape;
    let mut out = Latent::zeros(s);
    for h in 0..s.h {
        for w in 0..s.w {
            let n = x.channel_norm(h, w);
            if n > tol {
                for c in 0..s.c {
                    let idx = (c * s.h + h) * s.w + w;
                    out.data[idx] = x.at(c, h, w) / n;
                }
            }
        }
    }
    out
}

/// Projects `x` onto the channel-normalized direction of `reference`,
/// independently at each spatial location.
///
/// Where the reference column is degenerate (norm <= `tol`) the output column
/// is zero; zero velocity deltas legitimately occur at convergence.
pub fn project_onto(x: &Latent, reference: &Latent, tol: f64) -> Result<Latent> {
    x.same_shape(reference)?;
    let s = x.shape;
    let mut out = Latent::zeros(s);
    for h in 0..s.h {
        for w in 0..s.w {
            let norm_sq: f64 = (0..s.c)
                .map(|c| {
                    let r = reference.at(c, h, w);
                    r * r
                })
                .sum();
            if norm_sq.sqrt() <= tol {
                continue;
            }
            let dot: f64 = (0..s.c)
                .map(|c| x.at(c, h, w) * reference.at(c, h, w))
                .sum();
            let coeff = dot / norm_sq;
            for c in 0..s.c {
                let idx = (c * s.h + h) * s.w + w;
                out.data[idx] = coeff * reference.at(c, h, w);
            }
        }
    }
    Ok(out)
}

/// Per-location cosine similarity of channel columns; 0 where either column
/// is degenerate (norm <= `tol`).
pub fn cosine_similarity_map(a: &Latent, b: &Latent, tol: f64) -> Result<ChannelMap> {
    a.same_shape(b)?;
    let s = a.shape;
    let mut out = ChannelMap::zeros(s.h, s.w);
    for h in 0..s.h {
        for w in 0..s.w {
            let na = a.channel_norm(h, w);
            let nb = b.channel_norm(h, w);
            if na <= tol || nb <= tol {
                continue;
            }
            let dot: f64 = (0..s.c).map(|c| a.at(c, h, w) * b.at(c, h, w)).sum();
            out.data[h * s.w + w] = dot / (na * nb);
        }
    }
    Ok(out)
}
