//! Probabilistic risk bounds from support counts, and the number of test
//! samples needed for the support-discovery stopping rule.
//!
//! Both computations involve binomial coefficients far outside the `f64`
//! range (up to `C(4m, k)` with `m` in the tens of thousands), so every
//! quantity is carried as a logarithm and combined with log-sum-exp.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertificateError {
    #[error("k exceeds m (k = {k}, m = {m})")]
    SupportExceedsScenarios { k: usize, m: usize },
    #[error("scenario count m must be positive")]
    NoScenarios,
    #[error("confidence parameter beta = {0} must lie in (0, 1)")]
    Beta(f64),
    #[error("test-size parameters must satisfy 0 < rho < mu < 1 and 0 < beta_bar < 1 (mu = {mu}, rho = {rho}, beta_bar = {beta_bar})")]
    TestSize { mu: f64, rho: f64, beta_bar: f64 },
    #[error("no sign change of the bound polynomial found for m = {m}, k = {k}, beta = {beta}: max of log(T1) - log(T2 + T3) is {peak} at t = {t_peak}")]
    Bracketing {
        m: usize,
        k: usize,
        beta: f64,
        peak: f64,
        t_peak: f64,
    },
}

/// `m` scenarios, `k` support elements, confidence `1 - beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskBoundQuery {
    pub m: usize,
    pub k: usize,
    pub beta: f64,
}

impl RiskBoundQuery {
    pub fn new(m: usize, k: usize, beta: f64) -> Result<Self, CertificateError> {
        if m == 0 {
            return Err(CertificateError::NoScenarios);
        }
        if k > m {
            return Err(CertificateError::SupportExceedsScenarios { k, m });
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(CertificateError::Beta(beta));
        }
        Ok(Self { m, k, beta })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateScope {
    /// Bounds on the probability that a new scenario changes the top-k region.
    Region,
    /// The same bounds read as a certificate for the EES at a computed solution.
    Solution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskCertificate {
    pub query: RiskBoundQuery,
    pub eps_lo: f64,
    pub eps_hi: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    /// Normalized residual `|T1 - T2 - T3| / (T1 + T2 + T3)` at each root
    /// (zero for the pinned `t_lo = 0` when `k = m`).
    pub residual_lo: f64,
    pub residual_hi: f64,
    pub scope: CertificateScope,
}

/// Cumulative `ln(i!)` for `i = 0..=n`.
struct LogFactorials(Vec<f64>);

impl LogFactorials {
    fn new(n: usize) -> Self {
        let mut table = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        table.push(0.0);
        for i in 1..=n {
            acc += (i as f64).ln();
            table.push(acc);
        }
        Self(table)
    }

    fn ln_choose(&self, n: usize, k: usize) -> f64 {
        self.0[n] - self.0[k] - self.0[n - k]
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// The bound polynomial for one query, written as `T1(t) - R(t)` with both
/// parts nonnegative. For `k < m`, `T1 = C(m,k) t^(m-k)` and `R` collects the
/// two beta-weighted sums; for `k = m`, `T1 = 1` and `R` is the single sum.
struct BoundPolynomial {
    log_t1_coeff: f64,
    t1_power: f64,
    /// `(log coefficient, power)` of every term in `R`.
    rest: Vec<(f64, f64)>,
}

impl BoundPolynomial {
    fn new(q: &RiskBoundQuery) -> Self {
        let (m, k) = (q.m, q.k);
        let table = LogFactorials::new(4 * m);
        let mf = m as f64;
        let mut rest = Vec::with_capacity(4 * m);
        if k < m {
            let w2 = (q.beta / (2.0 * mf)).ln();
            rest.extend((k..m).map(|i| (w2 + table.ln_choose(i, k), (i - k) as f64)));
        }
        let w3 = (q.beta / (6.0 * mf)).ln();
        rest.extend((m + 1..=4 * m).map(|i| (w3 + table.ln_choose(i, k), (i - k) as f64)));
        let (log_t1_coeff, t1_power) = if k < m {
            (table.ln_choose(m, k), (m - k) as f64)
        } else {
            (0.0, 0.0)
        };
        Self {
            log_t1_coeff,
            t1_power,
            rest,
        }
    }

    /// `ln T1 - ln R` at `t = exp(s)`. Concave in `s`: the first part is
    /// affine and the second is a log-sum-exp of affine functions.
    fn gap(&self, s: f64, scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        scratch.extend(self.rest.iter().map(|&(c, p)| c + p * s));
        self.log_t1_coeff + self.t1_power * s - log_sum_exp(scratch)
    }

    fn leading_rest_dominates(&self, s: f64) -> bool {
        let &(c, p) = self.rest.last().expect("rest always holds the 4m term");
        c + p * s >= self.log_t1_coeff + self.t1_power * s
    }
}

/// Normalized residual from the log gap: `(T1 - R)/(T1 + R) = tanh(gap / 2)`.
fn normalized_residual(gap: f64) -> f64 {
    (gap / 2.0).tanh().abs()
}

const LOG_T_FLOOR: f64 = -40.0;
const GRID_POINTS: usize = 400;
const MAX_BISECTIONS: usize = 200;

/// Bisection on `[lo, hi]` where `gap(lo)` and `gap(hi)` have opposite signs.
fn bisect(
    poly: &BoundPolynomial,
    mut lo: f64,
    mut hi: f64,
    scratch: &mut Vec<f64>,
) -> (f64, f64) {
    let lo_positive = poly.gap(lo, scratch) > 0.0;
    let mut mid = 0.5 * (lo + hi);
    let mut g = poly.gap(mid, scratch);
    for _ in 0..MAX_BISECTIONS {
        if (g > 0.0) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
        let next = 0.5 * (lo + hi);
        if next == mid || g == 0.0 {
            break;
        }
        mid = next;
        g = poly.gap(mid, scratch);
    }
    (mid, g)
}

/// Computes the risk bounds `(eps_lo, eps_hi)` for `k` support elements out
/// of `m` scenarios at confidence `1 - beta`.
pub fn epsilon_bounds(q: &RiskBoundQuery) -> Result<RiskCertificate, CertificateError> {
    let q = RiskBoundQuery::new(q.m, q.k, q.beta)?;
    let poly = BoundPolynomial::new(&q);
    let mut scratch = Vec::with_capacity(poly.rest.len());

    // upper end: double t until the top-degree term alone beats T1, beyond
    // which the gap stays negative for good
    let ln2 = std::f64::consts::LN_2;
    let mut s_hi = 0.0;
    while !(poly.leading_rest_dominates(s_hi) && poly.gap(s_hi, &mut scratch) < 0.0) {
        s_hi += ln2;
    }

    if q.k == q.m {
        let mut s_lo = LOG_T_FLOOR;
        while poly.gap(s_lo, &mut scratch) <= 0.0 {
            s_lo *= 2.0;
        }
        let (s, g) = bisect(&poly, s_lo, s_hi, &mut scratch);
        let t_hi = s.exp();
        return Ok(RiskCertificate {
            query: q,
            eps_lo: (1.0 - t_hi).max(0.0),
            eps_hi: 1.0,
            t_lo: 0.0,
            t_hi,
            residual_lo: 0.0,
            residual_hi: normalized_residual(g),
            scope: CertificateScope::Region,
        });
    }

    let mut s_lo = LOG_T_FLOOR;
    while poly.gap(s_lo, &mut scratch) >= 0.0 {
        s_lo *= 2.0;
    }

    // coarse grid for the peak region, then golden-section refinement, which
    // is exact for a concave gap
    let step = (s_hi - s_lo) / GRID_POINTS as f64;
    let (best, _) = (0..=GRID_POINTS)
        .map(|i| {
            let s = s_lo + step * i as f64;
            (i, poly.gap(s, &mut scratch))
        })
        .fold((0, f64::NEG_INFINITY), |acc, (i, g)| if g > acc.1 { (i, g) } else { acc });
    let mut a = s_lo + step * best.saturating_sub(1) as f64;
    let mut b = (s_lo + step * (best + 1) as f64).min(s_hi);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut gc = poly.gap(c, &mut scratch);
    let mut gd = poly.gap(d, &mut scratch);
    for _ in 0..MAX_BISECTIONS {
        if gc >= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - inv_phi * (b - a);
            gc = poly.gap(c, &mut scratch);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + inv_phi * (b - a);
            gd = poly.gap(d, &mut scratch);
        }
        if b - a <= f64::EPSILON * (1.0 + a.abs()) {
            break;
        }
    }
    let (s_peak, g_peak) = if gc >= gd { (c, gc) } else { (d, gd) };
    if g_peak <= 0.0 {
        return Err(CertificateError::Bracketing {
            m: q.m,
            k: q.k,
            beta: q.beta,
            peak: g_peak,
            t_peak: s_peak.exp(),
        });
    }

    let (s_lower, g_lower) = bisect(&poly, s_lo, s_peak, &mut scratch);
    let (s_upper, g_upper) = bisect(&poly, s_peak, s_hi, &mut scratch);
    let (t_lo, t_hi) = (s_lower.exp(), s_upper.exp());
    Ok(RiskCertificate {
        query: q,
        eps_lo: (1.0 - t_hi).max(0.0),
        eps_hi: (1.0 - t_lo).clamp(0.0, 1.0),
        t_lo,
        t_hi,
        residual_lo: normalized_residual(g_lower),
        residual_hi: normalized_residual(g_upper),
        scope: CertificateScope::Region,
    })
}

/// Certificate for the EES at a computed solution with `s_star` support
/// elements among `m` scenarios. Numerically identical to
/// [`epsilon_bounds`]; only the scope tag differs.
pub fn certify_solution(s_star: usize, m: usize, beta: f64) -> Result<RiskCertificate, CertificateError> {
    let mut cert = epsilon_bounds(&RiskBoundQuery::new(m, s_star, beta)?)?;
    cert.scope = CertificateScope::Solution;
    Ok(cert)
}

/// Target for the support-discovery stopping rule: an empirical frequency at
/// most `mu - rho` should certify a true frequency at most `mu` with
/// confidence `1 - beta_bar`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestSizeQuery {
    pub mu: f64,
    pub rho: f64,
    pub beta_bar: f64,
}

impl TestSizeQuery {
    pub fn new(mu: f64, rho: f64, beta_bar: f64) -> Result<Self, CertificateError> {
        let ok = rho > 0.0 && rho < mu && mu < 1.0 && beta_bar > 0.0 && beta_bar < 1.0;
        if !ok {
            return Err(CertificateError::TestSize { mu, rho, beta_bar });
        }
        Ok(Self { mu, rho, beta_bar })
    }

    /// `floor(n (mu - rho))`, snapping values within rounding noise of an
    /// integer up to that integer.
    fn cutoff(&self, n: u64) -> u64 {
        let x = n as f64 * (self.mu - self.rho);
        (x * (1.0 + 1e-12)).floor() as u64
    }

    /// `ln P[Bin(n, mu) <= floor(n (mu - rho))]`.
    pub fn log_tail(&self, n: u64) -> f64 {
        let kmax = self.cutoff(n);
        let (ln_p, ln_q) = (self.mu.ln(), (-self.mu).ln_1p());
        let nf = n as f64;
        let mut log_choose = 0.0;
        let mut terms = Vec::with_capacity(kmax as usize + 1);
        for i in 0..=kmax {
            if i > 0 {
                log_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
            }
            let fi = i as f64;
            terms.push(log_choose + fi * ln_p + (nf - fi) * ln_q);
        }
        // accumulate smallest to largest
        terms.sort_by(f64::total_cmp);
        let mut acc = f64::NEG_INFINITY;
        for t in terms {
            let (hi, lo) = if acc > t { (acc, t) } else { (t, acc) };
            acc = hi + (lo - hi).exp().ln_1p();
        }
        acc
    }

    pub fn is_satisfied_by(&self, n: u64) -> bool {
        n > 0 && self.log_tail(n) < self.beta_bar.ln()
    }
}

/// Smallest number of test samples satisfying the binomial tail condition.
///
/// The floor in the cutoff makes the condition non-monotone in `n`, so after
/// a doubling search and bisection the `2 / (mu - rho)` integers below the
/// candidate are checked explicitly.
pub fn required_test_samples(q: &TestSizeQuery) -> Result<u64, CertificateError> {
    let q = TestSizeQuery::new(q.mu, q.rho, q.beta_bar)?;
    let mut hi = 1u64;
    while !q.is_satisfied_by(hi) {
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if q.is_satisfied_by(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let window = (2.0 / (q.mu - q.rho)).ceil() as u64;
    loop {
        let start = hi.saturating_sub(window).max(1);
        match (start..hi).find(|&n| q.is_satisfied_by(n)) {
            Some(n) => hi = n,
            None => break,
        }
    }
    debug_assert!(q.is_satisfied_by(hi));
    Ok(hi)
}
