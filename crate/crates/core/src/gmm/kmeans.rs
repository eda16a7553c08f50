//! k-means++ seeding and the single assignment pass that turns seeds into
//! an initial mixture.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::em::{blocks, InitMethod};
use super::{DiagonalGmm, FramePool, GmmError};

/// Seeding looks at no more than this many frames.
const SEEDING_SUBSAMPLE: usize = 100_000;

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Returns `k` centres, flattened `k × D`.
pub(super) fn seed_centers(
    frames: &FramePool,
    k: usize,
    method: InitMethod,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let picks = match method {
        InitMethod::RandomFrames => index::sample(rng, frames.len(), k).into_vec(),
        InitMethod::KmeansPlusPlus => {
            let candidates: Vec<usize> = if frames.len() > SEEDING_SUBSAMPLE {
                let mut s = index::sample(rng, frames.len(), SEEDING_SUBSAMPLE).into_vec();
                s.sort_unstable();
                s
            } else {
                (0..frames.len()).collect()
            };
            plus_plus(frames, &candidates, k, rng)
        }
    };
    picks.iter().flat_map(|&i| frames.row(i).iter().copied()).collect()
}

fn plus_plus(frames: &FramePool, candidates: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(k);
    let first = candidates[rng.random_range(0..candidates.len())];
    chosen.push(first);
    let mut dist: Vec<f64> = candidates
        .par_iter()
        .map(|&i| squared_distance(frames.row(i), frames.row(first)))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            let mut last_positive = 0;
            for (j, &d) in dist.iter().enumerate() {
                if d > 0.0 {
                    last_positive = j;
                }
                acc += d;
                if acc > target && d > 0.0 {
                    pick = Some(j);
                    break;
                }
            }
            pick.unwrap_or(last_positive)
        } else {
            // Every candidate coincides with a chosen centre.
            rng.random_range(0..candidates.len())
        };
        let center = candidates[pick];
        chosen.push(center);
        dist.par_iter_mut().zip(candidates.par_iter()).for_each(|(d, &i)| {
            *d = d.min(squared_distance(frames.row(i), frames.row(center)));
        });
    }
    chosen
}

struct Assignment {
    counts: Vec<usize>,
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Assigns every frame to its nearest centre and builds a mixture from the
/// resulting clusters. Clusters left empty keep their centre and take the
/// global variance with a pseudo-count of one frame.
pub(super) fn initial_model(
    frames: &FramePool,
    centers: &[f64],
    floor: &[f64],
    global_var: &[f64],
) -> Result<DiagonalGmm, GmmError> {
    let dim = frames.dim();
    let k = centers.len() / dim;
    let center = |c: usize| &centers[c * dim..(c + 1) * dim];
    let partials: Vec<Assignment> = blocks(frames.len())
        .map(|range| {
            let mut a = Assignment {
                counts: vec![0; k],
                first: vec![0.0; k * dim],
                second: vec![0.0; k * dim],
            };
            for i in range {
                let x = frames.row(i);
                let mut best = (f64::INFINITY, 0);
                for c in 0..k {
                    let d = squared_distance(x, center(c));
                    if d < best.0 {
                        best = (d, c);
                    }
                }
                let c = best.1;
                a.counts[c] += 1;
                for d in 0..dim {
                    let diff = x[d] - centers[c * dim + d];
                    a.first[c * dim + d] += diff;
                    a.second[c * dim + d] += diff * diff;
                }
            }
            a
        })
        .collect();
    let mut total = Assignment {
        counts: vec![0; k],
        first: vec![0.0; k * dim],
        second: vec![0.0; k * dim],
    };
    for p in partials {
        for (a, b) in total.counts.iter_mut().zip(&p.counts) {
            *a += b;
        }
        for (a, b) in total.first.iter_mut().zip(&p.first) {
            *a += b;
        }
        for (a, b) in total.second.iter_mut().zip(&p.second) {
            *a += b;
        }
    }

    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k * dim);
    let mut variances = Vec::with_capacity(k * dim);
    for c in 0..k {
        let n = total.counts[c];
        if n == 0 {
            weights.push(1.0);
            means.extend_from_slice(center(c));
            variances.extend(global_var.iter().zip(floor).map(|(v, f)| v.max(*f)));
            continue;
        }
        weights.push(n as f64);
        let nf = n as f64;
        for d in 0..dim {
            let shift = total.first[c * dim + d] / nf;
            let var = total.second[c * dim + d] / nf - shift * shift;
            means.push(centers[c * dim + d] + shift);
            variances.push(var.max(floor[d]));
        }
    }
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    DiagonalGmm::from_flat(dim, weights, means, variances, floor.to_vec())
}
