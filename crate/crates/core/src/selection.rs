//! The modular likelihood-ratio objective and the selection procedures built
//! on it: greedy selection under an hours or cardinality budget, and a
//! threshold-based selection whose budget is derived from the score
//! distribution itself.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmm::{self, EmConfig, FramePool, GmmError};
use crate::numeric::{clamped_exp, order_invariant_sum};
use crate::scoring::LrScore;

/// Component weights closer than this count as tied.
const WEIGHT_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("no scores to select from")]
    EmptyInput,
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("utterance {id:?} has a non-finite score")]
    NonFiniteScore { id: String },
    #[error("duplicate utterance id {0:?} in score list")]
    DuplicateId(String),
    #[error("{distinct} distinct scores cannot support {components} mixture components")]
    TooFewScores { distinct: usize, components: usize },
    #[error("all scores are identical; no threshold can be fitted")]
    DegenerateScores,
    #[error("invalid auto-budget configuration: {0}")]
    InvalidConfig(String),
    #[error("threshold model: {0}")]
    Gmm(#[from] GmmError),
}

/// Selection stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// Maximum total duration in hours.
    Hours(f64),
    /// Maximum number of utterances.
    Count(usize),
}

impl Budget {
    pub fn hours(hours: f64) -> Result<Self, SelectionError> {
        if !(hours.is_finite() && hours > 0.0) {
            return Err(SelectionError::InvalidBudget(format!(
                "hours must be finite and positive, got {hours}"
            )));
        }
        Ok(Budget::Hours(hours))
    }

    pub fn count(count: usize) -> Result<Self, SelectionError> {
        if count == 0 {
            return Err(SelectionError::InvalidBudget("count must be at least 1".into()));
        }
        Ok(Budget::Count(count))
    }

    fn validate(self) -> Result<Self, SelectionError> {
        match self {
            Budget::Hours(h) => Budget::hours(h),
            Budget::Count(n) => Budget::count(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Budget,
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedUtterance {
    pub id: String,
    pub mean_log_lr: f64,
    pub duration_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub mode: SelectionMode,
    pub budget: Option<Budget>,
    pub threshold: Option<f64>,
    pub objective_value: f64,
    pub total_hours: f64,
    /// In selection order: score descending, ties by ascending id.
    pub selected: Vec<SelectedUtterance>,
}

impl SelectionResult {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.selected.iter().map(|s| s.id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoBudgetConfig {
    /// Components of the 1-D mixture fitted to the scores.
    pub num_components: usize,
    pub seed: u64,
    pub max_iterations: usize,
}

impl Default for AutoBudgetConfig {
    fn default() -> Self {
        AutoBudgetConfig {
            num_components: 3,
            seed: 0,
            max_iterations: EmConfig::default().max_iterations,
        }
    }
}

/// `f(S) = Σ_{O∈S} exp(mean_log_lr(O))`.
///
/// The sum is order-invariant, so `f` is a true set function: any listing
/// of the same utterances produces a bit-identical value. Exponents above
/// 700 are clamped.
pub fn f_lr(scores: &[LrScore]) -> f64 {
    objective_from_log_ratios(scores.iter().map(|s| s.mean_log_lr))
}

pub fn objective_from_log_ratios<I: IntoIterator<Item = f64>>(log_ratios: I) -> f64 {
    let terms: Vec<f64> = log_ratios.into_iter().map(clamped_exp).collect();
    order_invariant_sum(&terms)
}

fn validate_scores(scores: &[LrScore]) -> Result<(), SelectionError> {
    if scores.is_empty() {
        return Err(SelectionError::EmptyInput);
    }
    let mut seen = HashSet::with_capacity(scores.len());
    for s in scores {
        if !s.mean_log_lr.is_finite() {
            return Err(SelectionError::NonFiniteScore { id: s.id.clone() });
        }
        if !seen.insert(s.id.as_str()) {
            return Err(SelectionError::DuplicateId(s.id.clone()));
        }
    }
    Ok(())
}

/// One entry of the selection JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedEntry {
    pub id: String,
    pub mean_log_lr: f64,
    pub duration_sec: f64,
    pub domain: Option<String>,
}

/// Selection output file: the result plus each utterance's domain label,
/// which is attached only after selection has finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDocument {
    pub mode: SelectionMode,
    pub budget: Option<Budget>,
    pub threshold: Option<f64>,
    pub objective_value: f64,
    pub total_hours: f64,
    pub selected: Vec<SelectedEntry>,
}

impl SelectionDocument {
    pub fn new<'a, F>(result: &SelectionResult, domain_of: F) -> Self
    where
        F: Fn(&str) -> Option<&'a str>,
    {
        SelectionDocument {
            mode: result.mode,
            budget: result.budget,
            threshold: result.threshold,
            objective_value: result.objective_value,
            total_hours: result.total_hours,
            selected: result
                .selected
                .iter()
                .map(|s| SelectedEntry {
                    id: s.id.clone(),
                    mean_log_lr: s.mean_log_lr,
                    duration_sec: s.duration_sec,
                    domain: domain_of(&s.id).map(str::to_string),
                })
                .collect(),
        }
    }

    pub fn into_result(self) -> SelectionResult {
        SelectionResult {
            mode: self.mode,
            budget: self.budget,
            threshold: self.threshold,
            objective_value: self.objective_value,
            total_hours: self.total_hours,
            selected: self
                .selected
                .into_iter()
                .map(|e| SelectedUtterance {
                    id: e.id,
                    mean_log_lr: e.mean_log_lr,
                    duration_sec: e.duration_sec,
                })
                .collect(),
        }
    }

    /// Plain id list, one per line.
    pub fn id_list(&self) -> String {
        self.selected.iter().map(|e| format!("{}\n", e.id)).collect()
    }
}

/// Score descending, then id ascending.
pub fn selection_order(a: &LrScore, b: &LrScore) -> Ordering {
    b.mean_log_lr
        .total_cmp(&a.mean_log_lr)
        .then_with(|| a.id.cmp(&b.id))
}

/// Heap entry whose maximum is the best next pick.
struct Candidate<'a>(&'a LrScore);

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        selection_order(other.0, self.0)
    }
}

fn finish(
    mode: SelectionMode,
    budget: Option<Budget>,
    threshold: Option<f64>,
    picked: Vec<&LrScore>,
    total_sec: f64,
) -> SelectionResult {
    let objective_value = objective_from_log_ratios(picked.iter().map(|s| s.mean_log_lr));
    SelectionResult {
        mode,
        budget,
        threshold,
        objective_value,
        total_hours: total_sec / 3600.0,
        selected: picked
            .into_iter()
            .map(|s| SelectedUtterance {
                id: s.id.clone(),
                mean_log_lr: s.mean_log_lr,
                duration_sec: s.duration_sec,
            })
            .collect(),
    }
}

/// Greedy maximization of [`f_lr`] under a budget.
///
/// Each step adds the remaining utterance `s` maximizing `f(S ∪ {s})`,
/// which for a modular objective is the one with the largest score. Under an
/// hours budget an utterance that no longer fits is skipped and the walk
/// continues with the next best.
pub fn greedy_select(scores: &[LrScore], budget: Budget) -> Result<SelectionResult, SelectionError> {
    validate_scores(scores)?;
    let budget = budget.validate()?;
    let mut heap: BinaryHeap<Candidate> = scores.iter().map(Candidate).collect();
    let mut picked = Vec::new();
    let mut total_sec = 0.0;
    while let Some(Candidate(next)) = heap.pop() {
        match budget {
            Budget::Count(n) => {
                if picked.len() == n {
                    break;
                }
            }
            Budget::Hours(h) => {
                if (total_sec + next.duration_sec) / 3600.0 > h {
                    continue;
                }
            }
        }
        total_sec += next.duration_sec;
        picked.push(next);
    }
    Ok(finish(SelectionMode::Budget, Some(budget), None, picked, total_sec))
}

/// Fits a 1-D mixture to the scores and returns the mean of its
/// highest-weight component; weight ties go to the larger mean.
pub fn auto_threshold(scores: &[LrScore], config: &AutoBudgetConfig) -> Result<f64, SelectionError> {
    validate_scores(scores)?;
    if config.num_components < 2 {
        return Err(SelectionError::InvalidConfig("num_components must be at least 2".into()));
    }
    let values: Vec<f64> = scores.iter().map(|s| s.mean_log_lr).collect();
    let mut distinct = values.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() == 1 {
        return Err(SelectionError::DegenerateScores);
    }
    if distinct.len() < config.num_components {
        return Err(SelectionError::TooFewScores {
            distinct: distinct.len(),
            components: config.num_components,
        });
    }
    let em = EmConfig {
        num_components: config.num_components,
        max_iterations: config.max_iterations,
        seed: config.seed,
        ..EmConfig::default()
    };
    let fit = gmm::fit(&FramePool::from_scalars(&values)?, &em)?;
    let model = &fit.model;
    let best = (0..model.num_components())
        .max_by(|&a, &b| {
            let (wa, wb) = (model.weights()[a], model.weights()[b]);
            if (wa - wb).abs() <= WEIGHT_TIE_TOL {
                model.mean(a)[0].total_cmp(&model.mean(b)[0])
            } else {
                wa.total_cmp(&wb)
            }
        })
        .expect("at least two components");
    Ok(model.mean(best)[0])
}

/// Selects every utterance scoring strictly above [`auto_threshold`].
pub fn auto_select(scores: &[LrScore], config: &AutoBudgetConfig) -> Result<SelectionResult, SelectionError> {
    let threshold = auto_threshold(scores, config)?;
    Ok(threshold_select(scores, threshold))
}

/// Utterances with score `> threshold`, in selection order.
pub fn threshold_select(scores: &[LrScore], threshold: f64) -> SelectionResult {
    let mut picked: Vec<&LrScore> = scores.iter().filter(|s| s.mean_log_lr > threshold).collect();
    picked.sort_by(|a, b| selection_order(a, b));
    if picked.is_empty() {
        log::warn!("no utterance scores above the threshold {threshold}; selection is empty");
    }
    let total_sec = picked.iter().fold(0.0, |acc, s| acc + s.duration_sec);
    finish(SelectionMode::Auto, None, Some(threshold), picked, total_sec)
}
