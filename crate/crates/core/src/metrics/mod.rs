//! Evaluation over finished rounds: success rates, breakdowns, confusion
//! matrices, rating trajectories and the hypothesis tests in [`stats`].

pub mod report;
pub mod special;
pub mod stats;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalogue::{Catalogue, Family, CATALOGUE_SIZE};
use crate::game::{Round, RoundStatus, Task};
use crate::vecmath::ScentId;

pub use report::{build_report, MetricsReport};
pub use stats::{
    chi_squared, fdr_bh, friedman, one_sample_t, one_sample_t_sample, pearson_r, two_proportion_z,
    wilcoxon_signed_rank, Tails, TestResult,
};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no data")]
    Empty,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {need} observations, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("no nonzero differences")]
    NoNonzeroDifferences,
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRate {
    pub solved: usize,
    pub total: usize,
    pub rate: f64,
}

/// Fraction of rounds that ended Solved.
pub fn success_rate<'a>(rounds: impl IntoIterator<Item = &'a Round>) -> Result<f64, MetricsError> {
    let (mut solved, mut total) = (0usize, 0usize);
    for r in rounds {
        total += 1;
        solved += usize::from(r.status == RoundStatus::Solved);
    }
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(solved as f64 / total as f64)
}

/// Success rate per group; groups without rounds are absent.
pub fn rates_by_group<'a, K: Ord>(
    rounds: impl IntoIterator<Item = &'a Round>,
    key: impl Fn(&Round) -> K,
) -> BTreeMap<K, GroupRate> {
    let mut acc: BTreeMap<K, (usize, usize)> = BTreeMap::new();
    for r in rounds {
        let e = acc.entry(key(r)).or_default();
        e.0 += usize::from(r.status == RoundStatus::Solved);
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (solved, total))| {
            (
                k,
                GroupRate {
                    solved,
                    total,
                    rate: solved as f64 / total as f64,
                },
            )
        })
        .collect()
}

pub fn rates_by_scent<'a>(rounds: impl IntoIterator<Item = &'a Round>) -> BTreeMap<ScentId, GroupRate> {
    rates_by_group(rounds, |r| r.target_id)
}

pub fn rates_by_family<'a>(
    rounds: impl IntoIterator<Item = &'a Round>,
    catalogue: &Catalogue,
) -> BTreeMap<Family, GroupRate> {
    rates_by_group(rounds, |r| catalogue.family(r.target_id))
}

/// Guess counts with rows = predicted scent and columns = actual target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u32>>,
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; CATALOGUE_SIZE]; CATALOGUE_SIZE],
        }
    }
}

impl ConfusionMatrix {
    pub fn get(&self, predicted: ScentId, actual: ScentId) -> u32 {
        self.counts[predicted.index()][actual.index()]
    }

    pub fn column_sum(&self, actual: ScentId) -> u32 {
        self.counts.iter().map(|row| row[actual.index()]).sum()
    }

    pub fn trace(&self) -> u32 {
        (0..CATALOGUE_SIZE).map(|i| self.counts[i][i]).sum()
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().flatten().sum()
    }
}

/// Tallies every guess (not only final ones) against its round's target.
pub fn confusion_matrix<'a>(rounds: impl IntoIterator<Item = &'a Round>) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::default();
    for r in rounds {
        for g in &r.guesses {
            m.counts[g.guessed_id.index()][r.target_id.index()] += 1;
        }
    }
    m
}

/// Number of guesses a solved round needed, as a histogram.
pub fn guesses_to_solve<'a>(rounds: impl IntoIterator<Item = &'a Round>) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for r in rounds.into_iter().filter(|r| r.status == RoundStatus::Solved) {
        *h.entry(r.guesses.len()).or_default() += 1;
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Option<Summary> {
        if xs.is_empty() {
            return None;
        }
        Some(Summary {
            n: xs.len(),
            mean: stats::mean(xs),
            sd: stats::sample_sd(xs),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Similarity between the initial reference and the target.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<Summary>,
    /// Keyed by 1-based guess index; indices without data are absent.
    pub per_guess: BTreeMap<u32, Summary>,
}

fn failed_comparison_rounds<'a>(rounds: impl IntoIterator<Item = &'a Round>) -> impl Iterator<Item = &'a Round> {
    rounds
        .into_iter()
        .filter(|r| r.task == Task::Task2 && r.status == RoundStatus::Exhausted)
}

fn trajectory<'a>(
    rounds: impl IntoIterator<Item = &'a Round>,
    with_initial: bool,
    value: impl Fn(&crate::game::GuessEvent) -> Option<u8>,
) -> Trajectory {
    let mut initial = Vec::new();
    let mut per: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in failed_comparison_rounds(rounds) {
        if with_initial {
            initial.extend(r.initial_similarity().map(f64::from));
        }
        for g in &r.guesses {
            if let Some(v) = value(g) {
                per.entry(g.index).or_default().push(f64::from(v));
            }
        }
    }
    Trajectory {
        initial: Summary::of(&initial),
        per_guess: per
            .into_iter()
            .filter_map(|(k, xs)| Summary::of(&xs).map(|s| (k, s)))
            .collect(),
    }
}

/// Mean similarity-to-target per guess over failed comparison rounds,
/// starting from the initial reference/target similarity.
pub fn similarity_trajectory<'a>(rounds: impl IntoIterator<Item = &'a Round>) -> Trajectory {
    trajectory(rounds, true, |g| g.similarity_to_target.map(|r| r.value))
}

/// Mean validity per guess over failed comparison rounds.
pub fn validity_trajectory<'a>(rounds: impl IntoIterator<Item = &'a Round>) -> Trajectory {
    trajectory(rounds, false, |g| g.validity.map(|r| r.value))
}
