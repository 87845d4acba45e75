//! Toy datasets, normalization, and dataset statistics.
//!
//! Every dataset draws i.i.d. samples reproducibly from a caller-owned rng
//! and hands them out already normalized (zero mean, per-axis standard
//! deviation `sigma_data`). Normalization statistics are fitted once at
//! construction from `n_train` reference draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TimError};

/// Variance floor below which an axis counts as constant.
const VAR_FLOOR: f64 = 1e-12;

/// Dataset families. All are 2-D except where a dimension is part of the
/// parameters; delta and Gaussian generalize to any dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetKind {
    /// Every sample is the same point.
    DeltaPoint { x0: Vec<f64> },
    /// Axis-aligned Gaussian.
    Gaussian { mean: Vec<f64>, cov_diag: Vec<f64> },
    /// Eight modes on a circle; emits the mode index as the class label.
    EightGaussians { radius: f64, mode_std: f64 },
    /// Alternating unit squares on `[-2, 2]^2`.
    Checkerboard,
    /// Two interleaved half circles with additive noise.
    TwoMoons { noise_std: f64 },
    /// Points ingested from a CSV file; draws resample rows uniformly.
    PointCloud { points: Vec<f64>, dim: usize },
}

impl DatasetKind {
    pub fn dim(&self) -> usize {
        match self {
            DatasetKind::DeltaPoint { x0 } => x0.len(),
            DatasetKind::Gaussian { mean, .. } => mean.len(),
            DatasetKind::EightGaussians { .. } => 2,
            DatasetKind::Checkerboard => 2,
            DatasetKind::TwoMoons { .. } => 2,
            DatasetKind::PointCloud { dim, .. } => *dim,
        }
    }

    /// Number of class labels the dataset emits (0 = unlabeled).
    pub fn n_classes(&self) -> usize {
        match self {
            DatasetKind::EightGaussians { .. } => 8,
            _ => 0,
        }
    }
}

/// Fitted affine normalization `x -> (x - mean) / std * sigma_data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub sigma_data: f64,
}

/// A dataset plus its fitted normalization.
#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub kind: DatasetKind,
    pub n_train: usize,
    pub seed: u64,
    stats: Normalization,
}

impl ToyDataset {
    /// Builds the dataset and fits normalization statistics from `n_train`
    /// reference draws under `seed`. A constant axis is an error for every
    /// kind except `DeltaPoint`, whose statistics are analytic (shift to the
    /// point, unit scale).
    pub fn new(kind: DatasetKind, n_train: usize, seed: u64, sigma_data: f64) -> Result<Self> {
        if n_train == 0 {
            return Err(TimError::Config("n_train must be positive".into()));
        }
        if sigma_data <= 0.0 {
            return Err(TimError::Config("sigma_data must be positive".into()));
        }
        let dim = kind.dim();
        if dim == 0 {
            return Err(TimError::Config("dataset dimension must be positive".into()));
        }
        let stats = match &kind {
            DatasetKind::DeltaPoint { x0 } => {
                Normalization { mean: x0.clone(), std: vec![1.0; dim], sigma_data }
            }
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut raw = vec![0.0f64; n_train * dim];
                let mut scratch_class = vec![0i64; n_train];
                draw_raw(&kind, &mut raw, &mut scratch_class, &mut rng);
                fit_stats(&raw, dim, sigma_data)?
            }
        };
        Ok(ToyDataset { kind, n_train, seed, stats })
    }

    /// Loads a point cloud from CSV text: a header row of dimension names
    /// followed by one row per point.
    pub fn from_csv(text: &str, n_train: usize, seed: u64, sigma_data: f64) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| TimError::Stats("empty CSV: missing header row".into()))?;
        let dim = header.split(',').count();
        if dim == 0 {
            return Err(TimError::Stats("CSV header has no columns".into()));
        }
        let mut points = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| TimError::Stats(format!("CSV row {}: {e}", i + 2)))?;
            if row.len() != dim {
                return Err(TimError::Stats(format!(
                    "CSV row {} has {} fields, expected {dim}",
                    i + 2,
                    row.len()
                )));
            }
            points.extend(row);
        }
        if points.is_empty() {
            return Err(TimError::Stats("CSV has no data rows".into()));
        }
        ToyDataset::new(DatasetKind::PointCloud { points, dim }, n_train, seed, sigma_data)
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn n_classes(&self) -> usize {
        self.kind.n_classes()
    }

    pub fn stats(&self) -> &Normalization {
        &self.stats
    }

    /// Draws `n` normalized samples; the class vector holds `-1` for
    /// unlabeled kinds.
    pub fn draw_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Vec<f64>, Vec<i64>) {
        let dim = self.dim();
        let mut raw = vec![0.0f64; n * dim];
        let mut class = vec![-1i64; n];
        draw_raw(&self.kind, &mut raw, &mut class, rng);
        let normalized = self.normalize(&raw);
        (normalized, class)
    }

    /// Applies the fitted affine map.
    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        let s = &self.stats;
        raw.iter()
            .enumerate()
            .map(|(i, &v)| (v - s.mean[i % dim]) / s.std[i % dim] * s.sigma_data)
            .collect()
    }

    /// Inverse of [`normalize`](Self::normalize).
    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        let s = &self.stats;
        x.iter()
            .enumerate()
            .map(|(i, &v)| v / s.sigma_data * s.std[i % dim] + s.mean[i % dim])
            .collect()
    }
}

fn fit_stats(raw: &[f64], dim: usize, sigma_data: f64) -> Result<Normalization> {
    let n = raw.len() / dim;
    let mut mean = vec![0.0f64; dim];
    for row in raw.chunks_exact(dim) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0f64; dim];
    for row in raw.chunks_exact(dim) {
        for ((vv, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *vv += d * d;
        }
    }
    for v in &mut var {
        *v /= n as f64;
    }
    if let Some(axis) = var.iter().position(|&v| v < VAR_FLOOR) {
        return Err(TimError::Stats(format!(
            "axis {axis} has zero variance; cannot normalize a constant dataset"
        )));
    }
    Ok(Normalization { mean, std: var.iter().map(|v| v.sqrt()).collect(), sigma_data })
}

fn draw_raw<R: Rng + ?Sized>(kind: &DatasetKind, out: &mut [f64], class: &mut [i64], rng: &mut R) {
    let dim = kind.dim();
    let n = out.len() / dim;
    match kind {
        DatasetKind::DeltaPoint { x0 } => {
            for i in 0..n {
                out[i * dim..(i + 1) * dim].copy_from_slice(x0);
            }
        }
        DatasetKind::Gaussian { mean, cov_diag } => {
            for i in 0..n {
                for j in 0..dim {
                    let z: f64 = StandardNormal.sample(rng);
                    out[i * dim + j] = mean[j] + cov_diag[j].sqrt() * z;
                }
            }
        }
        DatasetKind::EightGaussians { radius, mode_std } => {
            for i in 0..n {
                let k = rng.random_range(0..8u32);
                let angle = 2.0 * std::f64::consts::PI * (k as f64) / 8.0;
                let z0: f64 = StandardNormal.sample(rng);
                let z1: f64 = StandardNormal.sample(rng);
                out[i * 2] = radius * angle.cos() + mode_std * z0;
                out[i * 2 + 1] = radius * angle.sin() + mode_std * z1;
                class[i] = k as i64;
            }
        }
        DatasetKind::Checkerboard => {
            for i in 0..n {
                let x1: f64 = rng.random_range(-2.0..2.0);
                let shift: f64 = if rng.random_range(0..2u32) == 0 { 0.0 } else { -2.0 };
                let x2 = rng.random_range(0.0..1.0) + shift + (x1.floor().rem_euclid(2.0));
                out[i * 2] = x1;
                out[i * 2 + 1] = x2;
            }
        }
        DatasetKind::TwoMoons { noise_std } => {
            for i in 0..n {
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                let (mut x, mut y) = if rng.random_range(0..2u32) == 0 {
                    (theta.cos(), theta.sin())
                } else {
                    (1.0 - theta.cos(), 0.5 - theta.sin())
                };
                let z0: f64 = StandardNormal.sample(rng);
                let z1: f64 = StandardNormal.sample(rng);
                x += noise_std * z0;
                y += noise_std * z1;
                out[i * 2] = x;
                out[i * 2 + 1] = y;
            }
        }
        DatasetKind::PointCloud { points, dim } => {
            let rows = points.len() / dim;
            for i in 0..n {
                let r = rng.random_range(0..rows);
                out[i * dim..(i + 1) * dim].copy_from_slice(&points[r * dim..(r + 1) * dim]);
            }
        }
    }
}
