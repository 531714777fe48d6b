//! Full evaluation report over a set of sessions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{self, TestResult};
use super::{
    confusion_matrix, guesses_to_solve, rates_by_family, rates_by_scent, similarity_trajectory, success_rate,
    validity_trajectory, ConfusionMatrix, GroupRate, MetricsError, Trajectory,
};
use crate::catalogue::{Catalogue, Family};
use crate::game::{RatingKind, Round, RoundStatus, Session, Task};
use crate::vecmath::ScentId;

/// Midpoint of the 0–10 rating scale.
pub const SCALE_MIDPOINT: f64 = 5.0;

/// A test that either ran or was skipped for lack of data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Outcome {
    Ran(TestResult),
    Skipped { skipped: String },
}

impl From<Result<TestResult, MetricsError>> for Outcome {
    fn from(r: Result<TestResult, MetricsError>) -> Self {
        match r {
            Ok(t) => Outcome::Ran(t),
            Err(e) => Outcome::Skipped { skipped: e.to_string() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScentRow {
    pub scent_id: ScentId,
    pub name: String,
    pub family: Family,
    pub rounds: usize,
    pub accuracy_pct: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_familiarity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_intensity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_validity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub rounds: usize,
    pub solved: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub success_rate: Option<f64>,
    pub by_family: BTreeMap<Family, GroupRate>,
    pub by_scent: Vec<ScentRow>,
    pub guesses_to_solve: BTreeMap<usize, usize>,
    pub confusion: ConfusionMatrix,
    /// Family × {solved, failed} independence test.
    pub family_chi_squared: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub label: String,
    pub result: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_fdr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sessions: usize,
    pub description_task: TaskSummary,
    pub comparison_task: TaskSummary,
    /// Comparison-task success against description-task success.
    pub success_difference: Outcome,
    pub description_accuracy_vs_familiarity: Outcome,
    pub comparison_accuracy_vs_validity: Outcome,
    pub comparison_accuracy_vs_familiarity: Outcome,
    /// Participant validity ratings of wrong guesses against the scale midpoint.
    pub validity_vs_midpoint: Outcome,
    pub similarity_vs_midpoint: Outcome,
    pub similarity_trajectory: Trajectory,
    pub validity_trajectory: Trajectory,
    /// Similarity across initial + every guess, failed rounds with complete data.
    pub similarity_friedman: Outcome,
    pub similarity_posthoc: Vec<PairwiseComparison>,
}

fn mean_opt(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| stats::mean(xs))
}

fn scent_rows(rounds: &[&Round], catalogue: &Catalogue) -> Vec<ScentRow> {
    let rates = rates_by_scent(rounds.iter().copied());
    rates
        .iter()
        .map(|(&id, rate)| {
            let of_target: Vec<&&Round> = rounds.iter().filter(|r| r.target_id == id).collect();
            let fam: Vec<f64> = of_target
                .iter()
                .filter_map(|r| r.rating_of(RatingKind::Familiarity, id))
                .map(f64::from)
                .collect();
            let int: Vec<f64> = of_target
                .iter()
                .filter_map(|r| r.rating_of(RatingKind::Intensity, id))
                .map(f64::from)
                .collect();
            let val: Vec<f64> = of_target
                .iter()
                .flat_map(|r| r.guesses.iter().filter_map(|g| g.validity.map(|v| f64::from(v.value))))
                .collect();
            ScentRow {
                scent_id: id,
                name: catalogue.name(id).to_string(),
                family: catalogue.family(id),
                rounds: rate.total,
                accuracy_pct: 100.0 * rate.rate,
                mean_familiarity: mean_opt(&fam),
                mean_intensity: mean_opt(&int),
                mean_validity: mean_opt(&val),
            }
        })
        .collect()
}

fn summarize(rounds: &[&Round], catalogue: &Catalogue) -> TaskSummary {
    let by_family = rates_by_family(rounds.iter().copied(), catalogue);
    let table: Vec<Vec<f64>> = vec![
        by_family.values().map(|g| g.solved as f64).collect(),
        by_family.values().map(|g| (g.total - g.solved) as f64).collect(),
    ];
    TaskSummary {
        rounds: rounds.len(),
        solved: rounds.iter().filter(|r| r.status == RoundStatus::Solved).count(),
        success_rate: success_rate(rounds.iter().copied()).ok(),
        by_family,
        by_scent: scent_rows(rounds, catalogue),
        guesses_to_solve: guesses_to_solve(rounds.iter().copied()),
        confusion: confusion_matrix(rounds.iter().copied()),
        family_chi_squared: stats::chi_squared(&table).into(),
    }
}

fn correlate(rows: &[ScentRow], pick: impl Fn(&ScentRow) -> Option<f64>) -> Outcome {
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| pick(r).map(|v| (r.accuracy_pct, v)))
        .unzip();
    stats::pearson_r(&x, &y).into()
}

fn wrong_guess_ratings(rounds: &[&Round], kind: RatingKind) -> Vec<f64> {
    rounds
        .iter()
        .flat_map(|r| r.guesses.iter().filter(|g| !g.correct))
        .filter_map(|g| match kind {
            RatingKind::Validity => g.validity,
            _ => g.similarity_to_target,
        })
        .map(|r| f64::from(r.value))
        .collect()
}

fn similarity_matrix(rounds: &[&Round], guesses: u32) -> Vec<Vec<f64>> {
    rounds
        .iter()
        .filter(|r| r.task == Task::Task2 && r.status == RoundStatus::Exhausted)
        .filter_map(|r| {
            let mut row = vec![f64::from(r.initial_similarity()?)];
            for g in r.guesses.iter().take(guesses as usize) {
                row.push(f64::from(g.similarity_to_target?.value));
            }
            (row.len() == guesses as usize + 1).then_some(row)
        })
        .collect()
}

/// Builds every table and test the data supports; the rest are marked skipped.
pub fn build_report(sessions: &[Session], catalogue: &Catalogue) -> MetricsReport {
    let finished: Vec<&Round> = sessions
        .iter()
        .flat_map(|s| s.rounds.iter())
        .filter(|r| r.is_terminal())
        .collect();
    let t1: Vec<&Round> = finished.iter().copied().filter(|r| r.task == Task::Task1).collect();
    let t2: Vec<&Round> = finished.iter().copied().filter(|r| r.task == Task::Task2).collect();
    let description_task = summarize(&t1, catalogue);
    let comparison_task = summarize(&t2, catalogue);

    let success_difference = stats::two_proportion_z(
        description_task.solved as u64,
        t1.len() as u64,
        comparison_task.solved as u64,
        t2.len() as u64,
    )
    .into();

    let guess_limit = sessions.first().map_or(5, |s| s.config.task2_guess_limit);
    let matrix = similarity_matrix(&t2, guess_limit);
    let similarity_friedman = stats::friedman(&matrix).into();
    let mut similarity_posthoc: Vec<PairwiseComparison> = (1..=guess_limit as usize)
        .map(|k| {
            let initial: Vec<f64> = matrix.iter().map(|row| row[0]).collect();
            let at_k: Vec<f64> = matrix.iter().map(|row| row[k]).collect();
            PairwiseComparison {
                label: format!("initial vs guess {k}"),
                result: stats::wilcoxon_signed_rank(&initial, &at_k).into(),
                p_fdr: None,
            }
        })
        .collect();
    let ran: Vec<(usize, f64)> = similarity_posthoc
        .iter()
        .enumerate()
        .filter_map(|(i, c)| match &c.result {
            Outcome::Ran(t) => Some((i, t.p_value)),
            Outcome::Skipped { .. } => None,
        })
        .collect();
    if let Ok(adj) = stats::fdr_bh(&ran.iter().map(|x| x.1).collect::<Vec<_>>()) {
        for ((i, _), q) in ran.iter().zip(adj) {
            similarity_posthoc[*i].p_fdr = Some(q);
        }
    }

    MetricsReport {
        sessions: sessions.len(),
        description_accuracy_vs_familiarity: correlate(&description_task.by_scent, |r| r.mean_familiarity),
        comparison_accuracy_vs_validity: correlate(&comparison_task.by_scent, |r| r.mean_validity),
        comparison_accuracy_vs_familiarity: correlate(&comparison_task.by_scent, |r| r.mean_familiarity),
        validity_vs_midpoint: stats::one_sample_t_sample(&wrong_guess_ratings(&t2, RatingKind::Validity), SCALE_MIDPOINT)
            .into(),
        similarity_vs_midpoint: stats::one_sample_t_sample(
            &wrong_guess_ratings(&t2, RatingKind::Similarity),
            SCALE_MIDPOINT,
        )
        .into(),
        similarity_trajectory: similarity_trajectory(t2.iter().copied()),
        validity_trajectory: validity_trajectory(t2.iter().copied()),
        similarity_friedman,
        similarity_posthoc,
        description_task,
        comparison_task,
        success_difference,
    }
}
