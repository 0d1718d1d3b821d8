//! Rank statistics for makespan comparisons: a two-group Kruskal-Wallis
//! test with mid-rank tie handling, the chi-square survival function it
//! needs, and the episode filter that removes uninformative samples.

use crate::sim::{EpisodeResult, GroundTruth};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need two non-empty groups with at least 3 pooled observations")]
    InsufficientData,
    #[error("observations must be finite")]
    NonFinite,
}

/// Pooled observations with group labels and assigned mid-ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedSample {
    pub values: Vec<f64>,
    pub groups: Vec<usize>,
    pub ranks: Vec<f64>,
    /// `1 - sum(t^3 - t) / (N^3 - N)`; zero when every value ties.
    pub tie_correction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult {
    pub h_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    /// Every pooled observation was identical; `p_value` is pinned to 1.
    pub all_tied: bool,
}

/// Assigns mid-ranks to the pooled groups and computes the tie correction.
pub fn rank_pooled(groups: &[&[f64]]) -> Result<RankedSample, StatsError> {
    let values: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let group_labels: Vec<usize> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, vals)| std::iter::repeat_n(g, vals.len()))
        .collect();
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Tied block [i, j] shares the average of ranks i+1 ..= j+1.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        let t = (j - i + 1) as f64;
        tie_sum += t.powi(3) - t;
        i = j + 1;
    }
    let nf = n as f64;
    let tie_correction = if n > 1 {
        1.0 - tie_sum / (nf.powi(3) - nf)
    } else {
        1.0
    };
    Ok(RankedSample {
        values,
        groups: group_labels,
        ranks,
        tie_correction,
    })
}

/// Two-group Kruskal-Wallis test with tie correction; the null reference
/// is chi-square with one degree of freedom.
pub fn kruskal_wallis(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.is_empty() || b.is_empty() || a.len() + b.len() < 3 {
        return Err(StatsError::InsufficientData);
    }
    let ranked = rank_pooled(&[a, b])?;
    if ranked.tie_correction == 0.0 {
        return Ok(TestResult {
            h_statistic: 0.0,
            degrees_of_freedom: 1.0,
            p_value: 1.0,
            all_tied: true,
        });
    }
    let n = ranked.values.len() as f64;
    let mut rank_sums = [0.0_f64; 2];
    let mut counts = [0.0_f64; 2];
    for (&group, &rank) in ranked.groups.iter().zip(&ranked.ranks) {
        rank_sums[group] += rank;
        counts[group] += 1.0;
    }
    let mut h = 0.0;
    for g in 0..2 {
        let mean_rank = rank_sums[g] / counts[g];
        h += counts[g] * mean_rank * mean_rank;
    }
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);
    h = (h / ranked.tie_correction).max(0.0);
    Ok(TestResult {
        h_statistic: h,
        degrees_of_freedom: 1.0,
        p_value: chi2_sf(h, 1.0),
        all_tied: false,
    })
}

/// Drops episodes whose only attempt succeeded without preemption; they
/// carry no policy signal and would otherwise dominate both groups with
/// identical draws.
pub fn filter_trivial_episodes(episodes: &[EpisodeResult]) -> Vec<&EpisodeResult> {
    episodes
        .iter()
        .filter(|e| {
            !(e.attempts.len() == 1
                && e.attempts[0].ground_truth == GroundTruth::Success
                && !e.attempts[0].preempted)
        })
        .collect()
}

const GAMMA_EPS: f64 = 1e-15;
const GAMMA_MAX_ITER: usize = 500;

/// Lanczos approximation (g = 7, 9 terms), valid for positive arguments.
/// Coefficients are kept at published precision even where f64 rounds them.
#[allow(clippy::excessive_precision)]
fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Lower regularized incomplete gamma P(a, x) by power series; converges
/// fast for x < a + 1.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut denom = a;
    for _ in 0..GAMMA_MAX_ITER {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if term.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Upper regularized incomplete gamma Q(a, x) by Lentz continued fraction;
/// converges fast for x >= a + 1.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    h * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Survival function of the chi-square distribution: `P(X >= x)` for
/// `X ~ chi2(df)`. Requires `x >= 0` and `df > 0`.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    assert!(x >= 0.0 && df > 0.0, "chi2_sf domain: x={x}, df={df}");
    if x == 0.0 {
        return 1.0;
    }
    let a = df / 2.0;
    let half = x / 2.0;
    let q = if half < a + 1.0 {
        1.0 - gamma_p_series(a, half)
    } else {
        gamma_q_cf(a, half)
    };
    q.clamp(0.0, 1.0)
}
