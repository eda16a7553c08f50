//! Diagonal-covariance Gaussian mixture models: log-density evaluation,
//! EM estimation and JSON persistence.
//!
//! All density arithmetic happens in the log domain.

mod em;
mod kmeans;

use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::FeatureMatrix;
use crate::numeric::pairwise_sum;

pub use em::{fit, EmConfig, EmFit, InitMethod};

const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GmmError {
    #[error("too few frames: {frames} frames for {components} components")]
    TooFewFrames { frames: usize, components: usize },
    #[error("degenerate data: dimension {dim} has zero variance, no usable variance floor")]
    DegenerateData { dim: usize },
    #[error("dimension mismatch: model has D={expected}, input has D={found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid EM configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid frame data: {0}")]
    InvalidFrames(String),
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed model file {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Pooled N×D training frames in double precision, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePool {
    data: Vec<f64>,
    dim: usize,
}

impl FramePool {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self, GmmError> {
        if dim == 0 {
            return Err(GmmError::InvalidFrames("dimension must be at least 1".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(GmmError::InvalidFrames(format!(
                "{} values is not a multiple of D={dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(GmmError::InvalidFrames(format!(
                "non-finite value at frame {}, dimension {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(FramePool { data, dim })
    }

    /// One-dimensional pool, one frame per value.
    pub fn from_scalars(values: &[f64]) -> Result<Self, GmmError> {
        FramePool::new(values.to_vec(), 1)
    }

    /// Concatenates the frames of several utterances.
    pub fn from_matrices<'a, I>(matrices: I) -> Result<Self, GmmError>
    where
        I: IntoIterator<Item = &'a FeatureMatrix>,
    {
        let mut dim = None;
        let mut data = Vec::new();
        for m in matrices {
            match dim {
                None => dim = Some(m.dim()),
                Some(d) if d != m.dim() => {
                    return Err(GmmError::DimMismatch {
                        expected: d,
                        found: m.dim(),
                    })
                }
                Some(_) => {}
            }
            data.extend(m.as_slice().iter().map(|&v| f64::from(v)));
        }
        let dim = dim.ok_or_else(|| GmmError::InvalidFrames("no frames".into()))?;
        Ok(FramePool { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// K-component mixture with diagonal covariances.
///
/// Per-component log normalizers and inverse variances are cached at
/// construction, so the type is immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGmm {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    variance_floor: Vec<f64>,
    /// `ln w_k − ½(D·ln 2π + Σ_d ln σ²_kd)`
    log_norms: Vec<f64>,
    inv_variances: Vec<f64>,
}

impl DiagonalGmm {
    /// Builds a model from per-component rows, validating every invariant.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
        variance_floor: Vec<f64>,
    ) -> Result<Self, GmmError> {
        let dim = variance_floor.len();
        let k = weights.len();
        if means.len() != k || variances.len() != k {
            return Err(GmmError::InvalidModel(format!(
                "{k} weights but {} mean rows and {} variance rows",
                means.len(),
                variances.len()
            )));
        }
        if let Some(r) = means.iter().chain(&variances).find(|r| r.len() != dim) {
            return Err(GmmError::InvalidModel(format!(
                "row of length {} for D={dim}",
                r.len()
            )));
        }
        DiagonalGmm::from_flat(
            dim,
            weights,
            means.concat(),
            variances.concat(),
            variance_floor,
        )
    }

    pub(crate) fn from_flat(
        dim: usize,
        weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
        variance_floor: Vec<f64>,
    ) -> Result<Self, GmmError> {
        let k = weights.len();
        if k == 0 || dim == 0 {
            return Err(GmmError::InvalidModel("K and D must both be at least 1".into()));
        }
        debug_assert_eq!(means.len(), k * dim);
        debug_assert_eq!(variances.len(), k * dim);
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(GmmError::InvalidModel("weights must be finite and positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(GmmError::InvalidModel(format!("weights sum to {total}, not 1")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(GmmError::InvalidModel("non-finite mean".into()));
        }
        if variance_floor.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(GmmError::InvalidModel("variance floor must be finite and positive".into()));
        }
        for (i, v) in variances.iter().enumerate() {
            if !v.is_finite() || *v < variance_floor[i % dim] {
                return Err(GmmError::InvalidModel(format!(
                    "variance {v} of component {} dimension {} is below the floor {}",
                    i / dim,
                    i % dim,
                    variance_floor[i % dim]
                )));
            }
        }
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        let log_norms = weights
            .iter()
            .zip(variances.chunks_exact(dim))
            .map(|(w, vars)| {
                let log_det: f64 = vars.iter().map(|v| v.ln()).sum();
                w.ln() - dim as f64 * half_log_2pi - 0.5 * log_det
            })
            .collect();
        let inv_variances = variances.iter().map(|v| 1.0 / v).collect();
        Ok(DiagonalGmm {
            dim,
            weights,
            means,
            variances,
            variance_floor,
            log_norms,
            inv_variances,
        })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance_floor(&self) -> &[f64] {
        &self.variance_floor
    }

    /// `ln w_k + ln N(x; μ_k, diag σ²_k)`.
    #[inline]
    pub(crate) fn component_log_joint<T: Copy + Into<f64>>(&self, k: usize, frame: &[T]) -> f64 {
        let base = k * self.dim;
        let mu = &self.means[base..base + self.dim];
        let inv = &self.inv_variances[base..base + self.dim];
        let mut quad = 0.0;
        for ((&x, &m), &iv) in frame.iter().zip(mu).zip(inv) {
            let diff = x.into() - m;
            quad += diff * diff * iv;
        }
        self.log_norms[k] - 0.5 * quad
    }

    /// Streaming log-sum-exp over components; no allocation.
    #[inline]
    pub(crate) fn log_density_unchecked<T: Copy + Into<f64>>(&self, frame: &[T]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        let mut acc = 0.0;
        for k in 0..self.weights.len() {
            let lj = self.component_log_joint(k, frame);
            if lj > max {
                acc = acc * (max - lj).exp() + 1.0;
                max = lj;
            } else {
                acc += (lj - max).exp();
            }
        }
        max + acc.ln()
    }

    fn check_dim(&self, found: usize) -> Result<(), GmmError> {
        if found != self.dim {
            return Err(GmmError::DimMismatch {
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }

    /// `ln Σ_k w_k N(frame; μ_k, diag σ²_k)`.
    pub fn log_density(&self, frame: &[f64]) -> Result<f64, GmmError> {
        self.check_dim(frame.len())?;
        Ok(self.log_density_unchecked(frame))
    }

    /// Component posteriors for one frame; the entries sum to 1.
    pub fn posteriors(&self, frame: &[f64]) -> Result<Vec<f64>, GmmError> {
        self.check_dim(frame.len())?;
        let joints: Vec<f64> = (0..self.num_components())
            .map(|k| self.component_log_joint(k, frame))
            .collect();
        let norm = crate::numeric::log_sum_exp(&joints);
        Ok(joints.into_iter().map(|j| (j - norm).exp()).collect())
    }

    /// Per-frame log-densities of an utterance.
    pub fn frame_log_densities(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>, GmmError> {
        self.check_dim(matrix.dim())?;
        Ok(matrix.rows().map(|r| self.log_density_unchecked(r)).collect())
    }

    /// Average per-frame log-likelihood of an utterance, `(1/T) Σ_t ln p(O_t)`.
    pub fn mean_log_likelihood(&self, matrix: &FeatureMatrix) -> Result<f64, GmmError> {
        let lls = self.frame_log_densities(matrix)?;
        Ok(pairwise_sum(&lls) / lls.len() as f64)
    }

    pub fn to_file(&self, metadata: Option<ModelMetadata>) -> GmmFile {
        GmmFile {
            k: self.num_components(),
            d: self.dim,
            weights: self.weights.clone(),
            means: self.means.chunks_exact(self.dim).map(<[f64]>::to_vec).collect(),
            variances: self
                .variances
                .chunks_exact(self.dim)
                .map(<[f64]>::to_vec)
                .collect(),
            variance_floor: self.variance_floor.clone(),
            metadata,
        }
    }

    pub fn save(&self, path: &Path, metadata: Option<ModelMetadata>) -> Result<(), GmmError> {
        let mut json = serde_json::to_string_pretty(&self.to_file(metadata))
            .expect("model serialization cannot fail");
        json.push('\n');
        fs::write(path, json).map_err(|source| GmmError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<(Self, Option<ModelMetadata>), GmmError> {
        let text = fs::read_to_string(path).map_err(|source| GmmError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: GmmFile = serde_json::from_str(&text).map_err(|source| GmmError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let metadata = file.metadata.clone();
        Ok((file.into_model()?, metadata))
    }
}

/// Serialized model layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFile {
    pub k: usize,
    pub d: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub variance_floor: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<ModelMetadata>,
}

impl GmmFile {
    pub fn into_model(self) -> Result<DiagonalGmm, GmmError> {
        if self.weights.len() != self.k || self.variance_floor.len() != self.d {
            return Err(GmmError::InvalidModel(format!(
                "header k={} d={} disagrees with {} weights and a floor of length {}",
                self.k,
                self.d,
                self.weights.len(),
                self.variance_floor.len()
            )));
        }
        DiagonalGmm::new(self.weights, self.means, self.variances, self.variance_floor)
    }
}

/// Provenance stored alongside a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub seed: u64,
    pub config: EmConfig,
    /// SHA-256 over the training utterance ids and frame values.
    pub corpus_fingerprint: String,
    pub frames: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_log_likelihood: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_gaussian() -> DiagonalGmm {
        DiagonalGmm::new(vec![1.0], vec![vec![0.0]], vec![vec![1.0]], vec![1e-3]).unwrap()
    }

    #[test]
    fn standard_normal_peak() {
        let g = unit_gaussian();
        let got = g.log_density(&[0.0]).unwrap();
        assert!((got - (-0.918_938_533_204_672_7)).abs() < 1e-15);
        assert!((got + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn far_frame_stays_finite() {
        let got = unit_gaussian().log_density(&[1000.0]).unwrap();
        assert!(got.is_finite());
        assert!((got - (-500_000.918_938_533_2)).abs() < 1e-6);
    }

    #[test]
    fn dim_mismatch() {
        let g = unit_gaussian();
        assert!(matches!(
            g.log_density(&[0.0, 1.0]),
            Err(GmmError::DimMismatch { expected: 1, found: 2 })
        ));
        let m = FeatureMatrix::from_rows(&[[1.0f32, 2.0]]).unwrap();
        assert!(g.mean_log_likelihood(&m).is_err());
    }

    #[test]
    fn closed_form_diagonal_gaussian() {
        let mean = vec![0.5, -1.0, 2.0];
        let var = vec![0.3, 2.0, 1.1];
        let g = DiagonalGmm::new(vec![1.0], vec![mean.clone()], vec![var.clone()], vec![1e-4; 3]).unwrap();
        let x = [0.1, 0.7, -0.4];
        let mut expected = 0.0;
        for d in 0..3 {
            expected += -0.5 * (2.0 * PI * var[d]).ln() - (x[d] - mean[d]).powi(2) / (2.0 * var[d]);
        }
        assert!((g.log_density(&x).unwrap() - expected).abs() < 1e-12);
    }

    // Oracle values computed with mpmath at 50 significant digits:
    //   mixture 0.5·N(-1, 0.5) + 0.5·N(2, 1.5), log-density at each x.
    #[test]
    fn two_component_extended_precision_oracle() {
        let g = DiagonalGmm::new(
            vec![0.5, 0.5],
            vec![vec![-1.0], vec![2.0]],
            vec![vec![0.5], vec![1.5]],
            vec![1e-3],
        )
        .unwrap();
        let cases = [
            (-1.0, -1.237_172_921_620_040_7),
            (0.5, -2.238_055_318_376_272),
            (2.0, -1.814_604_538_609_584_7),
            (-6.0, -23.104_829_814_453_682),
            (9.0, -18.148_151_601_152_034),
        ];
        for (x, expected) in cases {
            let got = g.log_density(&[x]).unwrap();
            assert!((got - expected).abs() <= 1e-10, "x={x}: {got} vs {expected}");
        }
    }

    #[test]
    fn mean_log_likelihood_is_frame_average() {
        let g = unit_gaussian();
        let one = FeatureMatrix::from_rows(&[[0.7f32]]).unwrap();
        assert_eq!(
            g.mean_log_likelihood(&one).unwrap(),
            g.log_density(&[f64::from(0.7f32)]).unwrap()
        );
        let two = FeatureMatrix::from_rows(&[[0.0f32], [2.0]]).unwrap();
        let a = g.log_density(&[0.0]).unwrap();
        let b = g.log_density(&[2.0]).unwrap();
        assert_eq!(g.mean_log_likelihood(&two).unwrap(), (a + b) / 2.0);
    }

    #[test]
    fn posteriors_sum_to_one() {
        let g = DiagonalGmm::new(
            vec![0.2, 0.3, 0.5],
            vec![vec![-3.0, 0.0], vec![0.0, 1.0], vec![4.0, 4.0]],
            vec![vec![1.0, 1.0], vec![0.5, 2.0], vec![3.0, 0.1]],
            vec![0.01, 0.01],
        )
        .unwrap();
        for x in [[0.0, 0.0], [100.0, -50.0], [-3.0, 0.5], [4.0, 4.0]] {
            let p = g.posteriors(&x).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn invalid_models_rejected() {
        let floor = vec![0.1];
        assert!(DiagonalGmm::new(vec![0.5], vec![vec![0.0]], vec![vec![1.0]], floor.clone()).is_err());
        assert!(DiagonalGmm::new(vec![1.0], vec![vec![0.0]], vec![vec![0.05]], floor.clone()).is_err());
        assert!(DiagonalGmm::new(vec![1.0], vec![vec![f64::NAN]], vec![vec![1.0]], floor.clone()).is_err());
        assert!(DiagonalGmm::new(vec![], vec![], vec![], floor.clone()).is_err());
        assert!(DiagonalGmm::new(vec![1.0], vec![vec![0.0, 1.0]], vec![vec![1.0]], floor).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let g = DiagonalGmm::new(
            vec![0.1 + 0.2, 1.0 - (0.1 + 0.2)],
            vec![vec![std::f64::consts::E, -1.0 / 3.0], vec![1e-300, 7.0]],
            vec![vec![0.1, 2.0 / 3.0], vec![1e10, 0.3]],
            vec![1e-5, 1e-5],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        g.save(&path, None).unwrap();
        let (back, meta) = DiagonalGmm::load(&path).unwrap();
        assert!(meta.is_none());
        assert_eq!(back, g);
        let text = fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["k"], 2);
        assert_eq!(v["d"], 2);
    }
}
