//! Hypothesis tests used to evaluate the study.

use serde::{Deserialize, Serialize};

use super::special::{chi_squared_sf, normal_cdf, normal_sf, student_t_two_tailed};
use super::MetricsError;

/// Largest sample size for which the signed-rank test enumerates the exact null.
pub const WILCOXON_EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tails {
    One,
    Two,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: String,
    pub statistic: f64,
    /// p-value for `tails`.
    pub p_value: f64,
    pub tails: Tails,
    /// Upper-tail (or observed-direction) p where the test defines one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_one_tailed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effect_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

impl TestResult {
    fn new(test: &str, statistic: f64, p_value: f64, tails: Tails, n: usize) -> Self {
        TestResult {
            test: test.to_string(),
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
            tails,
            p_one_tailed: None,
            df: None,
            n,
            effect_size: None,
            method: None,
            warnings: Vec::new(),
        }
    }
}

fn check_finite(xs: &[f64]) -> Result<(), MetricsError> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(MetricsError::Invalid(format!("non-finite value at index {i}"))),
        None => Ok(()),
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); zero for a single value.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Pearson correlation with a two-tailed Student-t p-value.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<TestResult, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(MetricsError::TooFew { need: 3, got: x.len() });
    }
    check_finite(x)?;
    check_finite(y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let n = x.len();
    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        student_t_two_tailed(t, df)
    };
    let mut out = TestResult::new("pearson", r, p, Tails::Two, n);
    out.df = Some(df);
    out.effect_size = Some(r);
    Ok(out)
}

/// Pooled two-proportion z test of p2 against p1.
///
/// `statistic` is z = (p2 − p1) / se; `p_value` is two-tailed and
/// `p_one_tailed` is the upper tail P(Z ≥ z).
pub fn two_proportion_z(k1: u64, n1: u64, k2: u64, n2: u64) -> Result<TestResult, MetricsError> {
    if n1 == 0 || n2 == 0 {
        return Err(MetricsError::Empty);
    }
    if k1 > n1 || k2 > n2 {
        return Err(MetricsError::Invalid("successes exceed trials".into()));
    }
    let (p1, p2) = (k1 as f64 / n1 as f64, k2 as f64 / n2 as f64);
    let pooled = (k1 + k2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    let z = if p1 == p2 {
        0.0
    } else if se == 0.0 {
        return Err(MetricsError::ZeroVariance);
    } else {
        (p2 - p1) / se
    };
    let upper = normal_sf(z);
    let two = 2.0 * upper.min(1.0 - upper);
    let mut out = TestResult::new("two_proportion_z", z, two, Tails::Two, (n1 + n2) as usize);
    out.p_one_tailed = Some(upper);
    out.effect_size = Some(p2 - p1);
    Ok(out)
}

/// One-sample t test from summary statistics; effect size is Cohen's d.
pub fn one_sample_t(mean: f64, sd: f64, n: usize, mu0: f64) -> Result<TestResult, MetricsError> {
    if n < 2 {
        return Err(MetricsError::TooFew { need: 2, got: n });
    }
    if !(mean.is_finite() && sd.is_finite() && mu0.is_finite()) {
        return Err(MetricsError::Invalid("non-finite summary statistic".into()));
    }
    let df = (n - 1) as f64;
    let (t, d) = if mean == mu0 {
        (0.0, 0.0)
    } else if sd <= 0.0 {
        return Err(MetricsError::ZeroVariance);
    } else {
        ((mean - mu0) / (sd / (n as f64).sqrt()), (mean - mu0) / sd)
    };
    let p = student_t_two_tailed(t, df);
    let mut out = TestResult::new("one_sample_t", t, p, Tails::Two, n);
    out.df = Some(df);
    out.effect_size = Some(d);
    out.p_one_tailed = Some(if t >= 0.0 { p / 2.0 } else { 1.0 - p / 2.0 });
    Ok(out)
}

pub fn one_sample_t_sample(xs: &[f64], mu0: f64) -> Result<TestResult, MetricsError> {
    check_finite(xs)?;
    if xs.len() < 2 {
        return Err(MetricsError::TooFew { need: 2, got: xs.len() });
    }
    one_sample_t(mean(xs), sample_sd(xs), xs.len(), mu0)
}

/// Pearson chi-squared test of independence on an r×c table of counts.
pub fn chi_squared(table: &[Vec<f64>]) -> Result<TestResult, MetricsError> {
    let r = table.len();
    if r < 2 {
        return Err(MetricsError::TooFew { need: 2, got: r });
    }
    let c = table[0].len();
    if c < 2 {
        return Err(MetricsError::TooFew { need: 2, got: c });
    }
    if table.iter().any(|row| row.len() != c) {
        return Err(MetricsError::Invalid("ragged contingency table".into()));
    }
    if table.iter().flatten().any(|&x| !(x.is_finite() && x >= 0.0)) {
        return Err(MetricsError::Invalid("counts must be finite and non-negative".into()));
    }
    let rows: Vec<f64> = table.iter().map(|row| row.iter().sum()).collect();
    let cols: Vec<f64> = (0..c).map(|j| table.iter().map(|row| row[j]).sum()).collect();
    let total: f64 = rows.iter().sum();
    if rows.iter().chain(&cols).any(|&s| s == 0.0) {
        return Err(MetricsError::Invalid("a row or column sums to zero".into()));
    }
    let mut stat = 0.0;
    let mut small = 0usize;
    for (i, row) in table.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = rows[i] * cols[j] / total;
            if e < 1.0 {
                small += 1;
            }
            stat += (o - e).powi(2) / e;
        }
    }
    let df = ((r - 1) * (c - 1)) as f64;
    let mut out = TestResult::new("chi_squared", stat, chi_squared_sf(stat, df), Tails::One, total as usize);
    out.df = Some(df);
    if small > 0 {
        out.warnings.push(format!("{small} expected cell(s) below 1"));
    }
    Ok(out)
}

/// Ranks starting at 1 with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn tie_sizes(xs: &[f64]) -> Vec<usize> {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        out.push(j);
        i += j;
    }
    out
}

/// Friedman rank test over a subjects × conditions matrix, tie-corrected.
pub fn friedman(data: &[Vec<f64>]) -> Result<TestResult, MetricsError> {
    let n = data.len();
    if n < 2 {
        return Err(MetricsError::TooFew { need: 2, got: n });
    }
    let k = data[0].len();
    if k < 2 {
        return Err(MetricsError::TooFew { need: 2, got: k });
    }
    if data.iter().any(|row| row.len() != k) {
        return Err(MetricsError::Invalid("ragged data matrix".into()));
    }
    for row in data {
        check_finite(row)?;
    }
    let mut rank_sums = vec![0.0; k];
    let mut tie_term = 0.0;
    for row in data {
        for (s, r) in rank_sums.iter_mut().zip(average_ranks(row)) {
            *s += r;
        }
        tie_term += tie_sizes(row).iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
    }
    let (nf, kf) = (n as f64, k as f64);
    let ss: f64 = rank_sums.iter().map(|r| r * r).sum();
    let raw = 12.0 / (nf * kf * (kf + 1.0)) * ss - 3.0 * nf * (kf + 1.0);
    let correction = 1.0 - tie_term / (nf * (kf * kf * kf - kf));
    let df = kf - 1.0;
    let mut out = if correction <= 1e-12 {
        let mut o = TestResult::new("friedman", 0.0, 1.0, Tails::One, n);
        o.warnings.push("every row is fully tied".into());
        o
    } else {
        let stat = (raw / correction).max(0.0);
        TestResult::new("friedman", stat, chi_squared_sf(stat, df), Tails::One, n)
    };
    out.df = Some(df);
    // Kendall's W.
    out.effect_size = Some(out.statistic / (nf * df));
    Ok(out)
}

/// Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped and ties get average ranks. For up to
/// [`WILCOXON_EXACT_MAX_N`] nonzero differences the null distribution is
/// enumerated exactly (over doubled ranks, so tied half-ranks stay
/// integral); above that a continuity-corrected normal approximation with
/// tie-adjusted variance is used. `statistic` is min(W+, W−), `p_value` is
/// two-tailed, `p_one_tailed` is P(W ≤ statistic) and `effect_size` is
/// |Z|/√n.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<TestResult, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    check_finite(x)?;
    check_finite(y)?;
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(MetricsError::NoNonzeroDifferences);
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let nf = n as f64;
    let total = nf * (nf + 1.0) / 2.0;
    let w = w_plus.min(total - w_plus);

    let mean_w = total / 2.0;
    let ties: f64 = tie_sizes(&abs).iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let sd = var.sqrt();

    let z = if sd == 0.0 {
        0.0
    } else if n <= WILCOXON_EXACT_MAX_N {
        (w - mean_w) / sd
    } else {
        // Continuity correction toward the mean.
        (w - mean_w + 0.5).min(0.0) / sd
    };
    let (p_one, method) = if n <= WILCOXON_EXACT_MAX_N {
        (exact_signed_rank_cdf(&ranks, w), "exact")
    } else {
        (normal_cdf(z), "normal_approximation")
    };
    let mut out = TestResult::new(
        "wilcoxon_signed_rank",
        w,
        (2.0 * p_one).min(1.0),
        Tails::Two,
        n,
    );
    out.p_one_tailed = Some(p_one.min(1.0));
    out.effect_size = Some(z.abs() / nf.sqrt());
    out.method = Some(method.to_string());
    Ok(out)
}

/// P(W+ ≤ w) under the null, by dynamic programming over doubled ranks.
fn exact_signed_rank_cdf(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0f64; max + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let limit = (w * 2.0).round() as usize;
    let hits: f64 = counts[..=limit.min(max)].iter().sum();
    hits / 2f64.powi(ranks.len() as i32)
}

/// Benjamini–Hochberg adjusted p-values, in input order.
pub fn fdr_bh(p_values: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if let Some(i) = p_values.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(MetricsError::Invalid(format!("p-value at index {i} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        let q = p_values[i] * m as f64 / (rank + 1) as f64;
        running = running.min(q).min(1.0);
        adjusted[i] = running;
    }
    Ok(adjusted)
}
