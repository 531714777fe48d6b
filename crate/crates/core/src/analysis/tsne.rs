//! Exact t-SNE to two dimensions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::AnalysisError;

/// Target accuracy of the per-point entropy match, in nats.
pub const ENTROPY_TOLERANCE: f64 = 1e-5;
const BISECTION_STEPS: usize = 200;
const MIN_PERPLEXITY: f64 = 2.0;
const DUPLICATE_JITTER: f64 = 1e-10;
const P_FLOOR: f64 = 1e-12;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    /// `None` picks min(30, ⌊(n − 1)/3⌋).
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: None,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 4.0,
            exaggeration_iterations: 100,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    pub perplexity: f64,
    /// `kl_history[t]` is KL(P‖Q) after `t` gradient steps.
    pub kl_history: Vec<f64>,
    /// Achieved Shannon entropy (nats) of each conditional distribution.
    pub entropies: Vec<f64>,
    pub warnings: Vec<String>,
}

impl TsneResult {
    pub fn final_kl(&self) -> f64 {
        *self.kl_history.last().expect("history is never empty")
    }
}

/// Conditional affinities P(j|i) matched to `perplexity`, one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinities {
    pub conditional: Vec<Vec<f64>>,
    pub entropies: Vec<f64>,
    pub unconverged: usize,
}

pub fn squared_distances(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i][j] = s;
            d[j][i] = s;
        }
    }
    d
}

/// Row distribution for precision `beta` with the nearest distance shifted
/// to zero so the exponentials never all underflow. Returns (row, entropy).
fn row_at(dist: &[f64], i: usize, beta: f64, shift: f64) -> (Vec<f64>, f64) {
    let mut row: Vec<f64> = dist
        .iter()
        .enumerate()
        .map(|(j, &d)| if j == i { 0.0 } else { (-(d - shift) * beta).exp() })
        .collect();
    let sum: f64 = row.iter().sum();
    let weighted: f64 = dist
        .iter()
        .zip(&row)
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, (d, p))| (d - shift) * p)
        .sum();
    let h = sum.ln() + beta * weighted / sum;
    row.iter_mut().for_each(|p| *p /= sum);
    (row, h)
}

/// Finds each point's Gaussian precision by bisection on entropy.
pub fn conditional_affinities(dist: &[Vec<f64>], perplexity: f64) -> Affinities {
    let target = perplexity.ln();
    let n = dist.len();
    let mut conditional = Vec::with_capacity(n);
    let mut entropies = Vec::with_capacity(n);
    let mut unconverged = 0;
    for (i, drow) in dist.iter().enumerate() {
        let shift = drow
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, d)| *d)
            .fold(f64::INFINITY, f64::min);
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let (mut row, mut h) = row_at(drow, i, beta, shift);
        let mut done = false;
        for _ in 0..BISECTION_STEPS {
            let diff = h - target;
            if diff.abs() < ENTROPY_TOLERANCE {
                done = true;
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_infinite() { beta * 2.0 } else { (beta + hi) / 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            (row, h) = row_at(drow, i, beta, shift);
        }
        if !done && (h - target).abs() >= ENTROPY_TOLERANCE {
            unconverged += 1;
        }
        conditional.push(row);
        entropies.push(h);
    }
    Affinities {
        conditional,
        entropies,
        unconverged,
    }
}

/// Symmetrized joint affinities summing to one.
pub fn joint_affinities(conditional: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = conditional.len();
    let mut p = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = conditional[i][j] + conditional[j][i];
            p[i][j] = v;
            total += v;
        }
    }
    for row in &mut p {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    p
}

pub fn default_perplexity(n: usize) -> f64 {
    (((n.saturating_sub(1)) / 3) as f64).min(30.0)
}

fn kl_divergence(p: &[Vec<f64>], num: &[Vec<f64>], num_sum: f64) -> f64 {
    let mut kl = 0.0;
    for (i, row) in p.iter().enumerate() {
        for (j, &pij) in row.iter().enumerate() {
            if i != j && pij > 0.0 {
                let q = (num[i][j] / num_sum).max(P_FLOOR);
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

fn student_kernel(y: &[[f64; 2]]) -> (Vec<Vec<f64>>, f64) {
    let n = y.len();
    let mut num = vec![vec![0.0; n]; n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i][j] = v;
            num[j][i] = v;
            sum += 2.0 * v;
        }
    }
    (num, sum)
}

/// Embeds `points` into the plane. Deterministic for a given seed.
pub fn tsne_2d(points: &[Vec<f64>], config: &TsneConfig) -> Result<TsneResult, AnalysisError> {
    let n = points.len();
    if n < 4 {
        return Err(AnalysisError::TooFewPoints(n));
    }
    let dims = points[0].len();
    if dims == 0 || points.iter().any(|p| p.len() != dims) {
        return Err(AnalysisError::Invalid("points must share a nonzero dimensionality".into()));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(AnalysisError::Invalid("points must be finite".into()));
    }
    let mut warnings = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut pts = points.to_vec();
    let jitter = Normal::new(0.0, DUPLICATE_JITTER).expect("valid jitter scale");
    let mut duplicates = 0;
    for i in 1..n {
        if (0..i).any(|j| pts[j] == pts[i]) {
            duplicates += 1;
            for x in &mut pts[i] {
                *x += jitter.sample(&mut rng);
            }
        }
    }
    if duplicates > 0 {
        warnings.push(format!("{duplicates} duplicate point(s) jittered by {DUPLICATE_JITTER:e}"));
    }

    let ceiling = (n - 1) as f64 / 3.0;
    let requested = config.perplexity.unwrap_or_else(|| default_perplexity(n));
    let mut perplexity = requested;
    if perplexity > ceiling {
        perplexity = ceiling;
    }
    if perplexity < MIN_PERPLEXITY {
        perplexity = MIN_PERPLEXITY;
    }
    if perplexity != requested {
        warnings.push(format!("perplexity {requested} clamped to {perplexity} for {n} points"));
    }

    let dist = squared_distances(&pts);
    let aff = conditional_affinities(&dist, perplexity);
    if aff.unconverged > 0 {
        warnings.push(format!("{} point(s) missed the entropy tolerance", aff.unconverged));
    }
    let p = joint_affinities(&aff.conditional);
    let p_floored: Vec<Vec<f64>> = p.iter().map(|r| r.iter().map(|v| v.max(P_FLOOR)).collect()).collect();

    let init = Normal::new(0.0, 1e-4).expect("valid init scale");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_history = Vec::with_capacity(config.iterations + 1);

    for iter in 0..config.iterations {
        let (num, num_sum) = student_kernel(&y);
        kl_history.push(kl_divergence(&p, &num, num_sum));
        let exaggeration = if iter < config.exaggeration_iterations {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < config.momentum_switch {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        for i in 0..n {
            let mut grad = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[i][j] / num_sum).max(P_FLOOR);
                let w = 4.0 * (exaggeration * p_floored[i][j] - q) * num[i][j];
                grad[0] += w * (y[i][0] - y[j][0]);
                grad[1] += w * (y[i][1] - y[j][1]);
            }
            for d in 0..2 {
                let same_sign = (grad[d] > 0.0) == (velocity[i][d] > 0.0);
                gains[i][d] = if same_sign { gains[i][d] * 0.8 } else { gains[i][d] + 0.2 };
                gains[i][d] = gains[i][d].max(MIN_GAIN);
                velocity[i][d] = momentum * velocity[i][d] - config.learning_rate * gains[i][d] * grad[d];
            }
        }
        for (yi, vi) in y.iter_mut().zip(&velocity) {
            yi[0] += vi[0];
            yi[1] += vi[1];
        }
        let cx = y.iter().map(|v| v[0]).sum::<f64>() / n as f64;
        let cy = y.iter().map(|v| v[1]).sum::<f64>() / n as f64;
        for yi in &mut y {
            yi[0] -= cx;
            yi[1] -= cy;
        }
    }
    let (num, num_sum) = student_kernel(&y);
    kl_history.push(kl_divergence(&p, &num, num_sum));

    Ok(TsneResult {
        coords: y,
        perplexity,
        kl_history,
        entropies: aff.entropies,
        warnings,
    })
}
