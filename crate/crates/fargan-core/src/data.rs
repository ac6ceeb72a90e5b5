//! Finite synthetic 2-D datasets and latent sampling.
//!
//! A run trains against a *fixed* finite sample set; the dataset is built
//! once from a seed and never mutated, which is what makes overfitting
//! sources well-defined.

use crate::tensor::Tensor;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
}

fn default_mean() -> [f64; 2] {
    [0.0, 0.0]
}
fn default_gaussian_std() -> f64 {
    1.0
}
fn default_ring_radius() -> f64 {
    2.0
}
fn default_ring_std() -> f64 {
    0.02
}
fn default_grid_spacing() -> f64 {
    2.0
}
fn default_grid_std() -> f64 {
    0.05
}
fn default_swissroll_noise() -> f64 {
    0.02
}
fn default_n_real() -> usize {
    512
}

// serde ignores deny_unknown_fields on struct variants, so the per-kind
// parameters live in their own strict structs.

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SingleGaussianParams {
    #[serde(default = "default_mean")]
    pub mean: [f64; 2],
    #[serde(default = "default_gaussian_std")]
    pub std: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Ring8Params {
    #[serde(default = "default_ring_radius")]
    pub radius: f64,
    #[serde(default = "default_ring_std")]
    pub std: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Grid25Params {
    #[serde(default = "default_grid_spacing")]
    pub spacing: f64,
    #[serde(default = "default_grid_std")]
    pub std: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SwissrollParams {
    #[serde(default = "default_swissroll_noise")]
    pub noise: f64,
}

/// Dataset family plus its shape parameters.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    SingleGaussian(SingleGaussianParams),
    #[serde(rename = "ring-8")]
    Ring8(Ring8Params),
    #[serde(rename = "grid-25")]
    Grid25(Grid25Params),
    Swissroll(SwissrollParams),
}

impl DatasetKind {
    pub fn single_gaussian(mean: [f64; 2], std: f64) -> Self {
        Self::SingleGaussian(SingleGaussianParams { mean, std })
    }

    pub fn ring8(radius: f64, std: f64) -> Self {
        Self::Ring8(Ring8Params { radius, std })
    }

    pub fn grid25(spacing: f64, std: f64) -> Self {
        Self::Grid25(Grid25Params { spacing, std })
    }

    pub fn swissroll(noise: f64) -> Self {
        Self::Swissroll(SwissrollParams { noise })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default = "default_n_real")]
    pub n_real: usize,
    pub seed: u64,
}

impl DatasetSpec {
    fn validate(&self) -> Result<(), DataError> {
        if self.n_real == 0 {
            return Err(DataError::InvalidSpec("n_real must be positive".into()));
        }
        let check_std = |name: &str, v: f64| {
            if !v.is_finite() || v < 0.0 {
                Err(DataError::InvalidSpec(format!(
                    "{name} must be finite and non-negative, got {v}"
                )))
            } else {
                Ok(())
            }
        };
        match &self.kind {
            DatasetKind::SingleGaussian(p) => {
                if p.mean.iter().any(|m| !m.is_finite()) {
                    return Err(DataError::InvalidSpec("mean must be finite".into()));
                }
                check_std("std", p.std)
            }
            DatasetKind::Ring8(p) => {
                if !p.radius.is_finite() || p.radius <= 0.0 {
                    return Err(DataError::InvalidSpec("radius must be positive".into()));
                }
                check_std("std", p.std)
            }
            DatasetKind::Grid25(p) => {
                if !p.spacing.is_finite() || p.spacing <= 0.0 {
                    return Err(DataError::InvalidSpec("spacing must be positive".into()));
                }
                check_std("std", p.std)
            }
            DatasetKind::Swissroll(p) => check_std("noise", p.noise),
        }
    }
}

/// The fixed real sample set D_r for one run, plus its mode geometry.
#[derive(Clone, Debug)]
pub struct RealDataset {
    points: Tensor,
    mode_centers: Vec<[f64; 2]>,
    mode_std: f64,
}

impl RealDataset {
    /// n x 2 sample matrix.
    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    /// Mode centers; empty for the swissroll.
    pub fn mode_centers(&self) -> &[[f64; 2]] {
        &self.mode_centers
    }

    /// Per-mode standard deviation (the swissroll reports its noise level).
    pub fn mode_std(&self) -> f64 {
        self.mode_std
    }
}

fn ring8_centers(radius: f64) -> Vec<[f64; 2]> {
    (0..8)
        .map(|j| {
            let a = 2.0 * PI * j as f64 / 8.0;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

fn grid25_centers(spacing: f64) -> Vec<[f64; 2]> {
    let mut centers = Vec::with_capacity(25);
    for i in 0..5 {
        for j in 0..5 {
            centers.push([(i as f64 - 2.0) * spacing, (j as f64 - 2.0) * spacing]);
        }
    }
    centers
}

/// Builds the fixed real dataset for a spec; bit-reproducible per seed.
pub fn generate_real(spec: &DatasetSpec) -> Result<RealDataset, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let n = spec.n_real;
    let mut points = Vec::with_capacity(n);
    let (mode_centers, mode_std) = match &spec.kind {
        DatasetKind::SingleGaussian(p) => {
            for _ in 0..n {
                points.push([p.mean[0] + p.std * normal(), p.mean[1] + p.std * normal()]);
            }
            (vec![p.mean], p.std)
        }
        DatasetKind::Ring8(p) => {
            let centers = ring8_centers(p.radius);
            for _ in 0..n {
                let j = rng.random_range(0..8);
                let c = centers[j];
                let (z0, z1): (f64, f64) =
                    (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                points.push([c[0] + p.std * z0, c[1] + p.std * z1]);
            }
            (centers, p.std)
        }
        DatasetKind::Grid25(p) => {
            let centers = grid25_centers(p.spacing);
            for _ in 0..n {
                let j = rng.random_range(0..25);
                let c = centers[j];
                let (z0, z1): (f64, f64) =
                    (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                points.push([c[0] + p.std * z0, c[1] + p.std * z1]);
            }
            (centers, p.std)
        }
        DatasetKind::Swissroll(p) => {
            // t in [1.5pi, 4.5pi], point t*(cos t, sin t) scaled into [-2, 2]^2.
            let scale = 2.0 / (4.5 * PI);
            for _ in 0..n {
                let u: f64 = rng.random();
                let t = 1.5 * PI + u * 3.0 * PI;
                let (z0, z1): (f64, f64) =
                    (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                points.push([
                    scale * t * t.cos() + p.noise * z0,
                    scale * t * t.sin() + p.noise * z1,
                ]);
            }
            (Vec::new(), p.noise)
        }
    };
    Ok(RealDataset {
        points: Tensor::from_points(&points),
        mode_centers,
        mode_std,
    })
}

/// Uniform-with-replacement minibatch of real samples.
pub fn sample_real_batch(ds: &RealDataset, count: usize, rng: &mut impl Rng) -> Tensor {
    let n = ds.len();
    let indices: Vec<usize> = (0..count).map(|_| rng.random_range(0..n)).collect();
    ds.points.select_rows(&indices)
}

/// count x 2 batch of i.i.d. standard normal latents.
pub fn sample_latent(count: usize, rng: &mut impl Rng) -> Tensor {
    let data: Vec<f64> = (0..count * 2).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_raw(count, 2, data)
}

/// CSV with header "x,y" and 17-significant-digit floats, enough to
/// round-trip f64 exactly.
pub fn points_to_csv(points: &Tensor) -> String {
    debug_assert_eq!(points.cols(), 2);
    let mut out = String::with_capacity(16 + points.rows() * 48);
    out.push_str("x,y\n");
    for i in 0..points.rows() {
        let r = points.row(i);
        out.push_str(&format!("{:.16e},{:.16e}\n", r[0], r[1]));
    }
    out
}
