//! Run diagnostics: mode coverage, close pairs and overfitting sources,
//! the finite gradient surrogate at close pairs, and loss deviation from
//! the theoretical equilibrium values.

use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;
use thiserror::Error;

/// Equilibrium discriminator loss, 2·log 2 (loss = negated objective).
pub const D_LOSS_EQUILIBRIUM: f64 = 2.0 * LN_2;
/// Equilibrium generator loss, log 2.
pub const G_LOSS_EQUILIBRIUM: f64 = LN_2;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("mode coverage needs at least one mode center")]
    NoModes,
    #[error("output vectors are not aligned with point sets: {0}")]
    Misaligned(String),
}

/// Close-pair search parameters. `delta` is the pair radius; a real point
/// participating in at least `min_source_count` pairs is an overfitting
/// source.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ClosePairConfig {
    pub delta: f64,
    pub min_source_count: usize,
}

impl Default for ClosePairConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            min_source_count: 2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeCoverageReport {
    /// Modes with at least `min_count` fakes inside the quality radius.
    pub covered: usize,
    /// Fakes assigned to each mode by nearest center.
    pub per_mode_counts: Vec<usize>,
    /// Fraction of fakes within the quality radius of any mode.
    pub hq_ratio: f64,
}

/// Counts fakes around each mode center. A mode is covered when at least
/// `min_count` fakes lie within `cover_radius_mult * mode_std` of it.
pub fn mode_coverage(
    fakes: &Tensor,
    centers: &[[f64; 2]],
    mode_std: f64,
    cover_radius_mult: f64,
    min_count: usize,
) -> Result<ModeCoverageReport, MetricsError> {
    if centers.is_empty() {
        return Err(MetricsError::NoModes);
    }
    let radius2 = (cover_radius_mult * mode_std).powi(2);
    let mut per_mode_counts = vec![0usize; centers.len()];
    let mut in_radius = vec![0usize; centers.len()];
    let mut hq = 0usize;
    for i in 0..fakes.rows() {
        let p = fakes.row(i);
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for (j, c) in centers.iter().enumerate() {
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                best = j;
            }
        }
        per_mode_counts[best] += 1;
        if best_d2 <= radius2 {
            in_radius[best] += 1;
            hq += 1;
        }
    }
    let covered = in_radius.iter().filter(|&&c| c >= min_count).count();
    let hq_ratio = if fakes.rows() == 0 {
        0.0
    } else {
        hq as f64 / fakes.rows() as f64
    };
    Ok(ModeCoverageReport {
        covered,
        per_mode_counts,
        hq_ratio,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClosePairStats {
    /// Number of (real, fake) pairs within delta.
    pub pairs: usize,
    /// Reals participating in at least `min_source_count` pairs.
    pub sources: usize,
    /// Largest fake count piled on any overfitting source (0 if none).
    pub max_fakes_per_source: usize,
    /// |D0(x) - D0(y)| / ||x - y|| for every pair found.
    pub surrogates: Vec<f64>,
    /// Set when delta is not small against the dataset's own separation.
    pub separation_warning: bool,
}

impl ClosePairStats {
    pub fn surrogate_max(&self) -> f64 {
        self.surrogates.iter().copied().fold(0.0, f64::max)
    }
}

/// Brute-force close-pair enumeration between the fixed reals and a fake
/// sample set, with the finite-difference gradient surrogate per pair.
pub fn close_pairs(
    reals: &Tensor,
    fakes: &Tensor,
    d0_real: &[f64],
    d0_fake: &[f64],
    cfg: &ClosePairConfig,
) -> Result<ClosePairStats, MetricsError> {
    if d0_real.len() != reals.rows() || d0_fake.len() != fakes.rows() {
        return Err(MetricsError::Misaligned(format!(
            "{} reals / {} outputs, {} fakes / {} outputs",
            reals.rows(),
            d0_real.len(),
            fakes.rows(),
            d0_fake.len()
        )));
    }
    let delta2 = cfg.delta * cfg.delta;
    let mut per_real = vec![0usize; reals.rows()];
    let mut surrogates = Vec::new();
    for i in 0..reals.rows() {
        let x = reals.row(i);
        for j in 0..fakes.rows() {
            let y = fakes.row(j);
            let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
            if d2 <= delta2 {
                per_real[i] += 1;
                // Guard against exactly coincident points so the surrogate
                // stays finite.
                let dist = d2.sqrt().max(1e-300);
                surrogates.push((d0_real[i] - d0_fake[j]).abs() / dist);
            }
        }
    }
    let sources = per_real
        .iter()
        .filter(|&&c| c >= cfg.min_source_count)
        .count();
    let max_fakes_per_source = per_real
        .iter()
        .copied()
        .filter(|&c| c >= cfg.min_source_count)
        .max()
        .unwrap_or(0);
    let min_real_sep2 = min_pairwise_dist2(reals);
    Ok(ClosePairStats {
        pairs: surrogates.len(),
        sources,
        max_fakes_per_source,
        surrogates,
        separation_warning: delta2 >= min_real_sep2,
    })
}

fn min_pairwise_dist2(points: &Tensor) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.rows() {
        let a = points.row(i);
        for j in (i + 1)..points.rows() {
            let b = points.row(j);
            let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            if d2 < best {
                best = d2;
            }
        }
    }
    best
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindowDeviation {
    /// Signed mean of (d_loss - 2 log 2) over the window.
    pub mean_dev_d: f64,
    /// Signed mean of (g_loss - log 2) over the window.
    pub mean_dev_g: f64,
    /// Mean absolute deviations over the window.
    pub mad_d: f64,
    pub mad_g: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossDeviationSummary {
    pub windows: Vec<WindowDeviation>,
    /// Set when some window shows the collapse signature: discriminator
    /// loss below equilibrium and generator loss above it, both by more
    /// than 0.5.
    pub collapse_flag: bool,
}

/// Fraction of the trace discarded as burn-in before windowing.
const BURN_IN_FRACTION: f64 = 0.2;
/// Number of deviation windows over the post-burn-in trace.
const DEVIATION_WINDOWS: usize = 10;
/// One-sided deviation (in nats) that counts towards the collapse flag.
const COLLAPSE_THRESHOLD: f64 = 0.5;

/// Windowed deviation of the loss traces from the theoretical equilibrium
/// (2 log 2 for the discriminator, log 2 for the generator), with a flag
/// for the one-sided drift signature of mode collapse.
pub fn loss_deviation(d_losses: &[f64], g_losses: &[f64]) -> LossDeviationSummary {
    debug_assert_eq!(d_losses.len(), g_losses.len());
    let len = d_losses.len();
    let start = ((len as f64) * BURN_IN_FRACTION) as usize;
    let d = &d_losses[start..];
    let g = &g_losses[start..];
    let n = d.len();
    let mut windows = Vec::new();
    let mut collapse_flag = false;
    if n == 0 {
        return LossDeviationSummary {
            windows,
            collapse_flag,
        };
    }
    let window_count = DEVIATION_WINDOWS.min(n);
    for w in 0..window_count {
        let lo = w * n / window_count;
        let hi = ((w + 1) * n / window_count).max(lo + 1);
        let dw = &d[lo..hi.min(n)];
        let gw = &g[lo..hi.min(n)];
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let dev = WindowDeviation {
            mean_dev_d: mean(dw) - D_LOSS_EQUILIBRIUM,
            mean_dev_g: mean(gw) - G_LOSS_EQUILIBRIUM,
            mad_d: mean(&dw.iter().map(|x| (x - D_LOSS_EQUILIBRIUM).abs()).collect::<Vec<_>>()),
            mad_g: mean(&gw.iter().map(|x| (x - G_LOSS_EQUILIBRIUM).abs()).collect::<Vec<_>>()),
        };
        if dev.mean_dev_d < -COLLAPSE_THRESHOLD && dev.mean_dev_g > COLLAPSE_THRESHOLD {
            collapse_flag = true;
        }
        windows.push(dev);
    }
    LossDeviationSummary {
        windows,
        collapse_flag,
    }
}

/// One periodic metric snapshot, serialized as the per-snapshot JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricSnapshot {
    pub iter: usize,
    pub modes_covered: usize,
    pub hq_ratio: f64,
    pub pairs: usize,
    pub sources: usize,
    pub max_fakes_per_source: usize,
    pub surrogate_max: f64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub collapse_flag: bool,
}
