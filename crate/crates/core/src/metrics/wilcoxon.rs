use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest sample size for which the null distribution is enumerated.
pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Rank sum of positive differences.
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(w_plus, w_minus)`.
    pub statistic: f64,
    /// Non-zero differences.
    pub n: usize,
    /// P(W+ >= observed): evidence that differences tend to be positive.
    pub p_greater: f64,
    /// P(W+ <= observed).
    pub p_less: f64,
    pub p_two_sided: f64,
    pub exact: bool,
}

impl WilcoxonResult {
    /// One-sided p-value in the direction of the observed effect.
    pub fn p_one_sided(&self) -> f64 {
        self.p_greater.min(self.p_less)
    }
}

struct Ranked {
    /// Doubled mid-ranks, so ties stay integral.
    ranks2: Vec<u64>,
    positive: Vec<bool>,
    tie_sizes: Vec<usize>,
}

fn rank(diffs: &[f64]) -> Result<Ranked> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidInput("non-finite paired difference".into()));
    }
    let mut nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    if nz.is_empty() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    nz.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let mut ranks2 = vec![0u64; nz.len()];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < nz.len() {
        let mut j = i;
        while j + 1 < nz.len() && nz[j + 1].abs() == nz[i].abs() {
            j += 1;
        }
        // ranks i+1..=j+1, doubled mean = i + j + 2
        for r in &mut ranks2[i..=j] {
            *r = (i + j + 2) as u64;
        }
        tie_sizes.push(j - i + 1);
        i = j + 1;
    }
    Ok(Ranked {
        ranks2,
        positive: nz.iter().map(|&d| d > 0.0).collect(),
        tie_sizes,
    })
}

fn rank_sums(r: &Ranked) -> (u64, u64) {
    let plus: u64 = r.ranks2.iter().zip(&r.positive).filter(|(_, &p)| p).map(|(x, _)| x).sum();
    let total: u64 = r.ranks2.iter().sum();
    (plus, total - plus)
}

fn finish(w_plus2: u64, w_minus2: u64, n: usize, p_greater: f64, p_less: f64, exact: bool) -> WilcoxonResult {
    let (w_plus, w_minus) = (w_plus2 as f64 / 2.0, w_minus2 as f64 / 2.0);
    WilcoxonResult {
        w_plus,
        w_minus,
        statistic: w_plus.min(w_minus),
        n,
        p_greater: p_greater.min(1.0),
        p_less: p_less.min(1.0),
        p_two_sided: (2.0 * p_greater.min(p_less)).min(1.0),
        exact,
    }
}

/// Exact null distribution of W+ by enumerating all sign assignments of the
/// observed (tied) ranks.
pub fn wilcoxon_exact(diffs: &[f64]) -> Result<WilcoxonResult> {
    let r = rank(diffs)?;
    let (plus, minus) = rank_sums(&r);
    let total = (plus + minus) as usize;
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    for &x in &r.ranks2 {
        let x = x as usize;
        for s in (x..=total).rev() {
            counts[s] += counts[s - x];
        }
    }
    let all = 2f64.powi(r.ranks2.len() as i32);
    let obs = plus as usize;
    let p_greater = counts[obs..].iter().sum::<f64>() / all;
    let p_less = counts[..=obs].iter().sum::<f64>() / all;
    Ok(finish(plus, minus, r.ranks2.len(), p_greater, p_less, true))
}

/// Normal approximation with tie-corrected variance and continuity correction.
pub fn wilcoxon_normal(diffs: &[f64]) -> Result<WilcoxonResult> {
    let r = rank(diffs)?;
    let (plus, minus) = rank_sums(&r);
    let n = r.ranks2.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let ties: f64 = r.tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ties / 48.0;
    let w = plus as f64 / 2.0;
    let (p_greater, p_less) = if var <= 0.0 {
        (1.0, 1.0)
    } else {
        let sd = var.sqrt();
        let std = Normal::standard();
        (
            1.0 - std.cdf((w - mean - 0.5) / sd),
            std.cdf((w - mean + 0.5) / sd),
        )
    };
    Ok(finish(plus, minus, r.ranks2.len(), p_greater, p_less, false))
}

/// Signed-rank test on paired differences. Zeros are dropped; exact for up
/// to [`EXACT_MAX_N`] non-zero differences, normal approximation above.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<WilcoxonResult> {
    let n = diffs.iter().filter(|&&d| d != 0.0).count();
    if n <= EXACT_MAX_N {
        wilcoxon_exact(diffs)
    } else {
        wilcoxon_normal(diffs)
    }
}
