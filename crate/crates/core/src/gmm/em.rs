use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans;
use super::{DiagonalGmm, FramePool, GmmError};

/// Frames per work unit. Blocks are reduced in index order, so results do
/// not depend on how many threads process them.
pub(crate) const BLOCK_FRAMES: usize = 1024;

/// Components whose total responsibility falls below this are re-seeded.
const EMPTY_RESPONSIBILITY: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    KmeansPlusPlus,
    RandomFrames,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub num_components: usize,
    pub max_iterations: usize,
    /// Stop once the per-frame log-likelihood improves by less than
    /// `rel_tol · |previous|`.
    pub rel_tol: f64,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub variance_floor_factor: f64,
    pub seed: u64,
    pub init: InitMethod,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            num_components: 8,
            max_iterations: 50,
            rel_tol: 1e-5,
            variance_floor_factor: 1e-3,
            seed: 0,
            init: InitMethod::KmeansPlusPlus,
        }
    }
}

impl EmConfig {
    pub fn with_components(num_components: usize) -> Self {
        EmConfig {
            num_components,
            ..EmConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), GmmError> {
        if self.num_components == 0 {
            return Err(GmmError::InvalidConfig("num_components must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(GmmError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.rel_tol >= 0.0 && self.rel_tol.is_finite()) {
            return Err(GmmError::InvalidConfig("rel_tol must be finite and non-negative".into()));
        }
        if !(self.variance_floor_factor > 0.0 && self.variance_floor_factor < 1.0) {
            return Err(GmmError::InvalidConfig(
                "variance_floor_factor must lie strictly between 0 and 1".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of an EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub model: DiagonalGmm,
    /// Per-frame average log-likelihood of the initial model followed by the
    /// model after each M-step; the last entry belongs to `model`.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of empty-component re-seeds performed.
    pub reseeded: usize,
}

impl EmFit {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood_trace.last().expect("trace is never empty")
    }
}

pub(crate) fn blocks(n: usize) -> impl IndexedParallelIterator<Item = Range<usize>> {
    (0..n.div_ceil(BLOCK_FRAMES))
        .into_par_iter()
        .map(move |b| b * BLOCK_FRAMES..((b + 1) * BLOCK_FRAMES).min(n))
}

/// Sufficient statistics, with first and second moments taken about the
/// current component means to avoid cancellation.
struct Stats {
    log_likelihood: f64,
    occupancy: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Stats {
    fn zeros(k: usize, dim: usize) -> Self {
        Stats {
            log_likelihood: 0.0,
            occupancy: vec![0.0; k],
            first: vec![0.0; k * dim],
            second: vec![0.0; k * dim],
        }
    }

    fn merge(mut self, other: Stats) -> Stats {
        self.log_likelihood += other.log_likelihood;
        for (a, b) in self.occupancy.iter_mut().zip(&other.occupancy) {
            *a += b;
        }
        for (a, b) in self.first.iter_mut().zip(&other.first) {
            *a += b;
        }
        for (a, b) in self.second.iter_mut().zip(&other.second) {
            *a += b;
        }
        self
    }
}

fn e_step(model: &DiagonalGmm, frames: &FramePool) -> Stats {
    let k = model.num_components();
    let dim = model.dim();
    let partials: Vec<Stats> = blocks(frames.len())
        .map(|range| {
            let mut stats = Stats::zeros(k, dim);
            let mut joint = vec![0.0; k];
            for i in range {
                let x = frames.row(i);
                for (c, j) in joint.iter_mut().enumerate() {
                    *j = model.component_log_joint(c, x);
                }
                let norm = crate::numeric::log_sum_exp(&joint);
                stats.log_likelihood += norm;
                for (c, &j) in joint.iter().enumerate() {
                    let gamma = (j - norm).exp();
                    if gamma == 0.0 {
                        continue;
                    }
                    stats.occupancy[c] += gamma;
                    let mu = model.mean(c);
                    let base = c * dim;
                    for d in 0..dim {
                        let diff = x[d] - mu[d];
                        stats.first[base + d] += gamma * diff;
                        stats.second[base + d] += gamma * diff * diff;
                    }
                }
            }
            stats
        })
        .collect();
    partials
        .into_iter()
        .reduce(Stats::merge)
        .unwrap_or_else(|| Stats::zeros(k, dim))
}

/// Indices of the `count` frames with the lowest log-density, lowest first;
/// ties go to the earlier frame.
fn worst_frames(model: &DiagonalGmm, frames: &FramePool, count: usize) -> Vec<usize> {
    let mut lls: Vec<(f64, usize)> = (0..frames.len())
        .into_par_iter()
        .map(|i| (model.log_density_unchecked(frames.row(i)), i))
        .collect();
    lls.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    lls.into_iter().take(count).map(|(_, i)| i).collect()
}

fn m_step(
    model: &DiagonalGmm,
    stats: &Stats,
    frames: &FramePool,
    reseeded: &mut usize,
) -> Result<DiagonalGmm, GmmError> {
    let k = model.num_components();
    let dim = model.dim();
    let n = frames.len() as f64;
    let floor = model.variance_floor();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k * dim);
    let mut variances = Vec::with_capacity(k * dim);
    let mut empty = Vec::new();
    for c in 0..k {
        let occ = stats.occupancy[c];
        let mu = model.mean(c);
        if occ < EMPTY_RESPONSIBILITY {
            empty.push(c);
            weights.push(0.0);
            means.extend_from_slice(mu);
            variances.extend_from_slice(floor);
            continue;
        }
        weights.push(occ / n);
        for d in 0..dim {
            let shift = stats.first[c * dim + d] / occ;
            let var = stats.second[c * dim + d] / occ - shift * shift;
            means.push(mu[d] + shift);
            variances.push(var.max(floor[d]));
        }
    }
    if !empty.is_empty() {
        let targets = worst_frames(model, frames, empty.len());
        for (&c, &i) in empty.iter().zip(&targets) {
            log::debug!("re-seeding empty component {c} at frame {i}");
            means[c * dim..(c + 1) * dim].copy_from_slice(frames.row(i));
            weights[c] = 1.0 / n;
            *reseeded += 1;
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    DiagonalGmm::from_flat(dim, weights, means, variances, floor.to_vec())
}

/// Per-dimension mean and population variance.
fn global_moments(frames: &FramePool) -> (Vec<f64>, Vec<f64>) {
    let dim = frames.dim();
    let n = frames.len() as f64;
    let mut mean = vec![0.0; dim];
    for i in 0..frames.len() {
        for (m, x) in mean.iter_mut().zip(frames.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for i in 0..frames.len() {
        for ((v, x), m) in var.iter_mut().zip(frames.row(i)).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Fits a diagonal GMM by EM.
///
/// Initialization is k-means++ (or uniformly drawn frames) followed by one
/// nearest-centre assignment pass. Variances are floored at
/// `variance_floor_factor` times the global per-dimension variance. The
/// result is bit-identical for identical inputs regardless of thread count.
pub fn fit(frames: &FramePool, config: &EmConfig) -> Result<EmFit, GmmError> {
    config.validate()?;
    let k = config.num_components;
    if frames.len() < k {
        return Err(GmmError::TooFewFrames {
            frames: frames.len(),
            components: k,
        });
    }
    let (_, global_var) = global_moments(frames);
    if let Some(dim) = global_var.iter().position(|&v| v.is_nan() || v <= 0.0) {
        return Err(GmmError::DegenerateData { dim });
    }
    let floor: Vec<f64> = global_var
        .iter()
        .map(|v| v * config.variance_floor_factor)
        .collect();
    if let Some(dim) = floor.iter().position(|&f| !(f > 0.0 && f.is_finite())) {
        return Err(GmmError::DegenerateData { dim });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centers = kmeans::seed_centers(frames, k, config.init, &mut rng);
    let mut model = kmeans::initial_model(frames, &centers, &floor, &global_var)?;

    let mut stats = e_step(&model, frames);
    let n = frames.len() as f64;
    let mut previous = stats.log_likelihood / n;
    let mut trace = vec![previous];
    let mut iterations = 0;
    let mut converged = false;
    let mut reseeded = 0;
    while iterations < config.max_iterations {
        model = m_step(&model, &stats, frames, &mut reseeded)?;
        stats = e_step(&model, frames);
        iterations += 1;
        let current = stats.log_likelihood / n;
        trace.push(current);
        log::debug!("EM iteration {iterations}: avg log-likelihood {current}");
        if current - previous <= config.rel_tol * previous.abs() {
            converged = true;
            break;
        }
        previous = current;
    }
    Ok(EmFit {
        model,
        log_likelihood_trace: trace,
        iterations,
        converged,
        reseeded,
    })
}
