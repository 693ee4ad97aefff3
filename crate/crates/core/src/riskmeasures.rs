//! Empirical risk functionals over scenario losses.
//!
//! All functions take the per-scenario losses `L_i(u)` of one decision and
//! work on the empirical measure that puts mass `1/N_s` on each scenario.

use std::cmp::Ordering;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("loss vector is empty")]
    Empty,
    #[error("loss vector contains a non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("tail size k = {k} must lie in 1..={n}")]
    TailSize { k: usize, n: usize },
    #[error("quantile level {0} must lie strictly between 0 and 1")]
    Level(f64),
}

/// Realized losses, one per scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct LossVector(Vec<f64>);

impl LossVector {
    pub fn new(values: Vec<f64>) -> Result<Self, RiskError> {
        if values.is_empty() {
            return Err(RiskError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(RiskError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    fn sorted_ascending(&self) -> Vec<f64> {
        let mut v = self.0.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

impl TryFrom<Vec<f64>> for LossVector {
    type Error = RiskError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

/// Tail size of the empirical expected shortfall.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EesSpec {
    k: usize,
    n: usize,
}

impl EesSpec {
    pub fn new(k: usize, n: usize) -> Result<Self, RiskError> {
        if k == 0 || k > n {
            return Err(RiskError::TailSize { k, n });
        }
        Ok(Self { k, n })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Quantile level `1 - k/N_s` the EES corresponds to.
    pub fn level(&self) -> f64 {
        1.0 - self.k as f64 / self.n as f64
    }
}

fn check_level(zeta: f64) -> Result<(), RiskError> {
    if zeta > 0.0 && zeta < 1.0 {
        Ok(())
    } else {
        Err(RiskError::Level(zeta))
    }
}

/// Empirical value-at-risk: the smallest order statistic `l` with
/// `#{i : L_i <= l} / N_s >= zeta`.
pub fn empirical_var(losses: &LossVector, zeta: f64) -> Result<f64, RiskError> {
    check_level(zeta)?;
    let sorted = losses.sorted_ascending();
    let n = sorted.len();
    // the count condition is checked directly instead of through ceil(zeta * n)
    // so that levels like 0.3 * 10 do not round to the wrong index
    let idx = (0..n)
        .find(|&i| (i + 1) as f64 >= zeta * n as f64)
        .unwrap_or(n - 1);
    Ok(sorted[idx])
}

/// Empirical expected shortfall: mean of all losses at or above the empirical VaR.
pub fn empirical_es(losses: &LossVector, zeta: f64) -> Result<f64, RiskError> {
    let var = empirical_var(losses, zeta)?;
    // summed in sorted order so that the result does not depend on the input order
    let (sum, count) = losses
        .sorted_ascending()
        .iter()
        .filter(|&&v| v >= var)
        .fold((0.0, 0usize), |(s, c), &v| (s + v, c + 1));
    Ok(sum / count as f64)
}

/// Empirical expected shortfall with tail size `k`: the average of the `k`
/// largest losses.
pub fn ees(losses: &LossVector, k: usize) -> Result<f64, RiskError> {
    EesSpec::new(k, losses.len())?;
    let sorted = losses.sorted_ascending();
    let tail = &sorted[sorted.len() - k..];
    Ok(tail.iter().sum::<f64>() / k as f64)
}

/// Descending order with ties resolved by ascending original index.
fn descending(values: &[f64], a: usize, b: usize) -> Ordering {
    values[b].total_cmp(&values[a]).then(a.cmp(&b))
}

/// Zero-based indices of the scenarios realizing the `k` largest losses,
/// returned in ascending index order.
pub fn top_k_indices(losses: &LossVector, k: usize) -> Result<Vec<usize>, RiskError> {
    EesSpec::new(k, losses.len())?;
    Ok(top_k_unchecked(losses.values(), k))
}

/// Same as [`top_k_indices`] on a raw slice; callers guarantee `1 <= k <= len`.
pub(crate) fn top_k_unchecked(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| descending(values, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// Primal/dual pair certifying the value of the k-largest-sum program
/// `min k t + sum(lambda)  s.t. lambda_i >= L_i - t, lambda_i >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct KLargestSum {
    pub value: f64,
    pub t_bar: f64,
    pub lambda: Vec<f64>,
    /// Dual multipliers of `lambda_i >= L_i - t`; one on the top-k set, zero elsewhere.
    pub dual: Vec<f64>,
    pub duality_gap: f64,
}

/// Solves the k-largest-sum linear program in closed form.
///
/// The primal point is `t = L_(k)`, `lambda_i = max(0, L_i - t)`; the dual
/// point puts weight one on the top-k scenarios. Both objectives are
/// evaluated and the returned value is the primal one, with the gap kept for
/// inspection.
pub fn k_largest_sum_lp(losses: &LossVector, k: usize) -> Result<KLargestSum, RiskError> {
    let top = top_k_indices(losses, k)?;
    let values = losses.values();
    let t_bar = top
        .iter()
        .map(|&i| values[i])
        .fold(f64::INFINITY, f64::min);
    let lambda: Vec<f64> = values.iter().map(|&l| (l - t_bar).max(0.0)).collect();
    let primal = k as f64 * t_bar + lambda.iter().sum::<f64>();

    let mut dual = vec![0.0; values.len()];
    for &i in &top {
        dual[i] = 1.0;
    }
    let dual_value: f64 = top.iter().map(|&i| values[i]).sum();

    Ok(KLargestSum {
        value: primal,
        t_bar,
        lambda,
        dual,
        duality_gap: (primal - dual_value).abs(),
    })
}
