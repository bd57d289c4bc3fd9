//! Desk-scale evaluation metrics: latent fidelity (MSE, PSNR, SSIM),
//! distributional alignment (energy distance), and background preservation
//! (masked mean absolute displacement).

use crate::error::{Error, Result};
use crate::latent::Latent;

/// Mean squared difference over all entries.
pub fn mse(a: &Latent, b: &Latent) -> Result<f64> {
    a.same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Latent, b: &Latent, peak: f64) -> Result<f64> {
    if peak <= 0.0 {
        return Err(Error::domain(format!(
            "psnr peak must be positive, got {peak}"
        )));
    }
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

/// SSIM configuration: Gaussian window size/sigma and the standard
/// stabilizers `C1 = (0.01 peak)^2`, `C2 = (0.03 peak)^2`.
#[derive(Debug, Clone, Copy)]
pub struct SsimConfig {
    pub window: usize,
    pub window_sigma: f64,
    pub peak: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 7,
            window_sigma: 1.5,
            peak: 1.0,
        }
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size as f64 - 1.0) / 2.0;
    let mut w = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let di = i as f64 - half;
            let dj = j as f64 - half;
            w.push((-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Mean local SSIM over all fully-interior Gaussian windows, averaged across
/// channels. Symmetric in its arguments. Requires spatial dims at least the
/// window size; 1x1 toy scenes report SSIM as not applicable instead.
pub fn ssim(a: &Latent, b: &Latent, config: &SsimConfig) -> Result<f64> {
    a.same_shape(b)?;
    let s = a.shape();
    let win = config.window;
    if win == 0 {
        return Err(Error::domain("ssim window must be positive"));
    }
    if s.h < win || s.w < win {
        return Err(Error::dimension(format!(
            "spatial dims ({}, {}) are smaller than the ssim window {win}",
            s.h, s.w
        )));
    }
    let weights = gaussian_window(win, config.window_sigma);
    let c1 = (0.01 * config.peak).powi(2);
    let c2 = (0.03 * config.peak).powi(2);

    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..s.c {
        for top in 0..=(s.h - win) {
            for left in 0..=(s.w - win) {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                for i in 0..win {
                    for j in 0..win {
                        let wgt = weights[i * win + j];
                        mu_a += wgt * a.at(c, top + i, left + j);
                        mu_b += wgt * b.at(c, top + i, left + j);
                    }
                }
                let mut var_a = 0.0;
                let mut var_b = 0.0;
                let mut cov = 0.0;
                for i in 0..win {
                    for j in 0..win {
                        let wgt = weights[i * win + j];
                        let da = a.at(c, top + i, left + j) - mu_a;
                        let db = b.at(c, top + i, left + j) - mu_b;
                        var_a += wgt * (da * da);
                        var_b += wgt * (db * db);
                        // Grouped so the product is argument-order independent.
                        cov += wgt * (da * db);
                    }
                }
                let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
                let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
                total += num / den;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

fn entry_distance(a: &Latent, b: &Latent) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Energy distance between two sample sets:
/// `2 E||A - B|| - E||A - A'|| - E||B - B'||`, with all-pairs (V-statistic)
/// expectations, which keeps the estimate non-negative.
pub fn energy_distance(samples_a: &[Latent], samples_b: &[Latent]) -> Result<f64> {
    if samples_a.is_empty() || samples_b.is_empty() {
        return Err(Error::config("energy distance needs non-empty sample sets"));
    }
    for s in samples_a.iter().chain(samples_b) {
        s.same_shape(&samples_a[0])?;
    }
    let n = samples_a.len() as f64;
    let m = samples_b.len() as f64;

    let mut cross = 0.0;
    for a in samples_a {
        for b in samples_b {
            cross += entry_distance(a, b);
        }
    }
    let mut within_a = 0.0;
    for a in samples_a {
        for a2 in samples_a {
            within_a += entry_distance(a, a2);
        }
    }
    let mut within_b = 0.0;
    for b in samples_b {
        for b2 in samples_b {
            within_b += entry_distance(b, b2);
        }
    }
    Ok(2.0 * cross / (n * m) - within_a / (n * n) - within_b / (m * m))
}

/// Background displacement: mean absolute change over entries where the mask
/// is 0. Returns the displacement and a flag set when the mask covers every
/// entry (no background; the displacement is 0 by convention).
pub fn background_displacement(
    x0_src: &Latent,
    x_edited: &Latent,
    edit_mask: &Latent,
) -> Result<(f64, bool)> {
    x0_src.same_shape(x_edited)?;
    x0_src.same_shape(edit_mask)?;
    if edit_mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::domain("edit mask must be binary (0/1 entries)"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((x, y), m) in x0_src
        .data()
        .iter()
        .zip(x_edited.data())
        .zip(edit_mask.data())
    {
        if *m == 0.0 {
            total += (x - y).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Ok((0.0, true));
    }
    Ok((total / count as f64, false))
}

/// One row of a metric report. `ssim` is `None` when the scene's spatial dims
/// make it inapplicable; `psnr` may be infinite for identical inputs.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub method: String,
    pub eta_dec: Option<usize>,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub energy_distance_to_target: f64,
    pub background_displacement: f64,
    pub step_count: usize,
    pub seed_count: usize,
    /// Failures recorded while aggregating this row, if any.
    pub note: Option<String>,
}

/// Aggregated benchmark report: one row per (method, sweep point).
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub config_fingerprint: String,
    pub seeds: Vec<u64>,
}

impl MetricReport {
    pub const CSV_SCHEMA: &'static str =
        "method,eta_dec,mse,psnr,ssim,energy_distance_to_target,background_displacement,step_count,seed_count,note";

    fn fmt_float(v: f64) -> String {
        if v.is_infinite() {
            if v > 0.0 {
                "inf".into()
            } else {
                "-inf".into()
            }
        } else {
            format!("{v}")
        }
    }

    /// CSV rendering with a schema-version comment header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# splitflow-metrics v1\n");
        out.push_str(&format!("# config: {}\n", self.config_fingerprint));
        out.push_str(&format!(
            "# seeds: {}\n",
            self.seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        ));
        out.push_str(Self::CSV_SCHEMA);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                row.method,
                row.eta_dec.map(|e| e.to_string()).unwrap_or_default(),
                Self::fmt_float(row.mse),
                Self::fmt_float(row.psnr),
                row.ssim.map(Self::fmt_float).unwrap_or_else(|| "na".into()),
                Self::fmt_float(row.energy_distance_to_target),
                Self::fmt_float(row.background_displacement),
                row.step_count,
                row.seed_count,
                row.note.clone().unwrap_or_default(),
            ));
        }
        out
    }

    /// Structured-text rendering for quick reading.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("metric_report v1\n");
        out.push_str(&format!("config: {}\n", self.config_fingerprint));
        for row in &self.rows {
            out.push_str(&format!(
                "method {}{}: mse {} psnr {} ssim {} ed_target {} bg_disp {} steps {} seeds {}\n",
                row.method,
                row.eta_dec
                    .map(|e| format!(" (eta_dec {e})"))
                    .unwrap_or_default(),
                Self::fmt_float(row.mse),
                Self::fmt_float(row.psnr),
                row.ssim.map(Self::fmt_float).unwrap_or_else(|| "na".into()),
                Self::fmt_float(row.energy_distance_to_target),
                Self::fmt_float(row.background_displacement),
                row.step_count,
                row.seed_count,
            ));
        }
        out
    }

    /// True if no cell is NaN (infinities and explicit NA cells are allowed).
    pub fn no_nan_cells(&self) -> bool {
        self.rows.iter().all(|r| {
            !r.mse.is_nan()
                && !r.psnr.is_nan()
                && !r.ssim.is_some_and(|s| s.is_nan())
                && !r.energy_distance_to_target.is_nan()
                && !r.background_displacement.is_nan()
        })
    }
}
