//! Support-element discovery for the top-k region of linear scenario losses.
//!
//! [`find_support_box`] samples the input box and collects every scenario
//! that ranks among the `k` largest losses at some sample, testing the
//! collected set on fresh batches until the empirical frequency of new
//! members drops to `mu - rho`. [`filter_support_in_p`] then keeps only
//! the members that can reach the top `k` somewhere in the MPC feasible set.

use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::certificates::{required_test_samples, CertificateError, TestSizeQuery};
use crate::optim::{
    solve_conic, solve_mixed_binary, ConicOutcome, ConicProgram, MixedBinaryFeasibility, MixedOutcome, MixedRow,
    OptimError, SolverOptions,
};
use crate::plantmodel::{FeasibleSet, InputBox, Scenario};
use crate::riskmeasures::top_k_unchecked;

#[derive(Debug, Error)]
pub enum SupportError {
    #[error("invalid support configuration: {0}")]
    Config(String),
    #[error("no scenarios")]
    NoScenarios,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("scenario index {j} out of range for {n} scenarios")]
    Index { j: usize, n: usize },
    #[error("input box must be bounded")]
    UnboundedBox,
    #[error("no termination after {max_rounds} rounds ({} candidates, p_hat {})", partial.indices.len(), partial.p_hat)]
    NonTermination { max_rounds: usize, partial: SupportResult },
    #[error("solver could not decide whether scenario {j} is of support")]
    Indeterminate { j: usize },
    #[error("big-G constant {g} is below the required {required}")]
    BigGTooSmall { g: f64, required: f64 },
    #[error(transparent)]
    Solver(#[from] OptimError),
    #[error(transparent)]
    TestSize(#[from] CertificateError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportConfig {
    pub n_r: usize,
    pub n_t: usize,
    pub k: usize,
    pub mu: f64,
    pub rho: f64,
    pub max_rounds: usize,
    pub seed: u64,
}

impl SupportConfig {
    pub fn new(n_r: usize, n_t: usize, k: usize, mu: f64, rho: f64, seed: u64) -> Result<Self, SupportError> {
        let cfg = Self {
            n_r,
            n_t,
            k,
            mu,
            rho,
            max_rounds: 1000,
            seed,
        };
        cfg.check()?;
        Ok(cfg)
    }

    /// Uses the smallest test batch that makes a passing round meaningful at
    /// confidence `1 - beta_bar`.
    pub fn with_test_size(n_r: usize, k: usize, mu: f64, rho: f64, beta_bar: f64, seed: u64) -> Result<Self, SupportError> {
        let n_t = required_test_samples(&TestSizeQuery::new(mu, rho, beta_bar)?)?;
        let n_t = usize::try_from(n_t).map_err(|_| SupportError::Config(format!("test size {n_t} is too large")))?;
        Self::new(n_r, n_t, k, mu, rho, seed)
    }

    fn check(&self) -> Result<(), SupportError> {
        if self.n_r == 0 || self.n_t == 0 {
            return Err(SupportError::Config("N_r and N_T must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(SupportError::Config("k must be at least 1".into()));
        }
        if !(self.rho > 0.0 && self.rho < self.mu && self.mu < 1.0) {
            return Err(SupportError::Config(format!(
                "need 0 < rho < mu < 1, got mu = {}, rho = {}",
                self.mu, self.rho
            )));
        }
        if self.max_rounds == 0 {
            return Err(SupportError::Config("max_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportResult {
    /// Zero-based scenario indices, ascending.
    pub indices: Vec<usize>,
    pub p_hat: f64,
    pub rounds: usize,
    pub samples_used: usize,
}

/// Scenario prices stacked as rows.
fn price_matrix(scenarios: &[Scenario], dim: usize) -> Result<DMatrix<f64>, SupportError> {
    if scenarios.is_empty() {
        return Err(SupportError::NoScenarios);
    }
    if let Some(i) = scenarios.iter().position(|s| s.len() != dim) {
        return Err(SupportError::Dimension(format!(
            "scenario {i} has {} prices, the input box has dimension {dim}",
            scenarios[i].len()
        )));
    }
    Ok(DMatrix::from_fn(scenarios.len(), dim, |i, c| scenarios[i].prices[c]))
}

const CHUNK: usize = 2048;

struct TopKSampler<'a> {
    prices: DMatrix<f64>,
    u_box: &'a InputBox,
    k: usize,
}

impl TopKSampler<'_> {
    /// Draws `count` samples from `rng` and returns the top-k set of each, in draw order.
    fn draw(
        &self,
        rng: &mut ChaCha8Rng,
        count: usize,
        observe: &mut Option<&mut dyn FnMut(&DVector<f64>)>,
    ) -> Vec<Vec<usize>> {
        let dim = self.u_box.dim();
        let ns = self.prices.nrows();
        let mut out = Vec::with_capacity(count);
        let mut left = count;
        while left > 0 {
            let c = left.min(CHUNK);
            let mut samples = DMatrix::zeros(dim, c);
            for col in 0..c {
                for r in 0..dim {
                    let (lo, hi) = (self.u_box.lo[r], self.u_box.hi[r]);
                    samples[(r, col)] = if hi > lo { rng.gen_range(lo..hi) } else { lo };
                }
                if let Some(f) = observe.as_mut() {
                    f(&samples.column(col).into_owned());
                }
            }
            let losses = &self.prices * &samples;
            let data = losses.as_slice();
            let tops: Vec<Vec<usize>> = (0..c)
                .into_par_iter()
                .map(|col| top_k_unchecked(&data[col * ns..(col + 1) * ns], self.k))
                .collect();
            out.extend(tops);
            left -= c;
        }
        out
    }
}

fn round_rng(seed: u64, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64);
    rng
}

/// Algorithm 1 on the input box with a fresh candidate set.
pub fn find_support_box(scenarios: &[Scenario], cfg: &SupportConfig, u_box: &InputBox) -> Result<SupportResult, SupportError> {
    find_support_box_from(scenarios, cfg, u_box, &[], None)
}

/// Algorithm 1 starting from the candidates in `warm` (indices past the
/// scenario count are ignored). `observe` sees every drawn input.
pub fn find_support_box_from(
    scenarios: &[Scenario],
    cfg: &SupportConfig,
    u_box: &InputBox,
    warm: &[usize],
    mut observe: Option<&mut dyn FnMut(&DVector<f64>)>,
) -> Result<SupportResult, SupportError> {
    cfg.check()?;
    if !u_box.is_bounded() {
        return Err(SupportError::UnboundedBox);
    }
    let ns = scenarios.len();
    let sampler = TopKSampler {
        prices: price_matrix(scenarios, u_box.dim())?,
        u_box,
        k: cfg.k,
    };
    if cfg.k > ns {
        return Err(SupportError::Config(format!("k = {} exceeds the {ns} scenarios", cfg.k)));
    }

    let mut member = vec![false; ns];
    for &i in warm.iter().filter(|&&i| i < ns) {
        member[i] = true;
    }
    for top in sampler.draw(&mut round_rng(cfg.seed, 0), cfg.n_r, &mut observe) {
        for i in top {
            member[i] = true;
        }
    }
    let mut samples_used = cfg.n_r;
    let collect = |member: &[bool]| (0..ns).filter(|&i| member[i]).collect::<Vec<_>>();

    for round in 1..=cfg.max_rounds {
        let tops = sampler.draw(&mut round_rng(cfg.seed, round), cfg.n_t, &mut observe);
        samples_used += cfg.n_t;
        let mut hits = 0usize;
        for top in tops {
            if top.iter().any(|&i| !member[i]) {
                hits += 1;
                for i in top {
                    member[i] = true;
                }
            }
        }
        let p_hat = hits as f64 / cfg.n_t as f64;
        if p_hat <= cfg.mu - cfg.rho {
            return Ok(SupportResult {
                indices: collect(&member),
                p_hat,
                rounds: round,
                samples_used,
            });
        }
        if round == cfg.max_rounds {
            return Err(SupportError::NonTermination {
                max_rounds: cfg.max_rounds,
                partial: SupportResult {
                    indices: collect(&member),
                    p_hat,
                    rounds: round,
                    samples_used,
                },
            });
        }
    }
    unreachable!("the loop returns on its last round")
}

/// Largest value of `(alpha_i - alpha_j) . u` over the box and over the
/// given pairs, by interval arithmetic, floored at 1.
fn interval_bound(
    prices: &DMatrix<f64>,
    u_box: &InputBox,
    pairs: impl Iterator<Item = (usize, usize)>,
) -> Result<f64, SupportError> {
    if !u_box.is_bounded() {
        return Err(SupportError::UnboundedBox);
    }
    let mut g = 0.0f64;
    for (i, j) in pairs {
        let v: f64 = (0..u_box.dim())
            .map(|c| {
                let d = prices[(i, c)] - prices[(j, c)];
                (d * u_box.lo[c]).max(d * u_box.hi[c])
            })
            .sum();
        g = g.max(v);
    }
    Ok(g.max(1.0))
}

/// A big-G constant that makes every relaxed linking row vacuous on the box:
/// `max_{i,j} max_u (alpha_i - alpha_j) . u`, at least 1.
pub fn big_g_bound(scenarios: &[Scenario], u_box: &InputBox) -> Result<f64, SupportError> {
    let prices = price_matrix(scenarios, u_box.dim())?;
    let n = prices.nrows();
    interval_bound(&prices, u_box, (0..n).flat_map(|i| (0..n).map(move |j| (i, j))))
}

/// Like [`big_g_bound`] with the second scenario fixed to `j`.
pub fn big_g_bound_for(scenarios: &[Scenario], u_box: &InputBox, j: usize) -> Result<f64, SupportError> {
    let prices = price_matrix(scenarios, u_box.dim())?;
    if j >= prices.nrows() {
        return Err(SupportError::Index { j, n: prices.nrows() });
    }
    interval_bound(&prices, u_box, (0..prices.nrows()).map(|i| (i, j)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum SupportStrategy {
    /// Enumeration for `k <= 3`, branch-and-bound otherwise.
    #[default]
    Auto,
    Enumerate,
    BranchAndBound,
}

#[derive(Debug, Clone)]
pub struct CheckOptions {
    pub strategy: SupportStrategy,
    /// Limit for each branch-and-bound run.
    pub time_limit: Option<Duration>,
    pub solver: SolverOptions,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            strategy: SupportStrategy::Auto,
            time_limit: Some(Duration::from_secs(60)),
            solver: SolverOptions::default(),
        }
    }
}

/// `(alpha_i - alpha_j)` as sparse coefficients on `u`.
fn diff_coeffs(prices: &DMatrix<f64>, i: usize, j: usize) -> Vec<(usize, f64)> {
    (0..prices.ncols())
        .map(|c| (c, prices[(i, c)] - prices[(j, c)]))
        .filter(|&(_, v)| v != 0.0)
        .collect()
}

fn base_program(p: &FeasibleSet) -> ConicProgram {
    let mut prog = ConicProgram::new(p.dim());
    p.add_to_program(&mut prog, 0);
    prog
}

/// All subsets of `pool` of size exactly `size` (or `pool` itself when smaller),
/// in lexicographic order.
fn subsets(pool: &[usize], size: usize) -> Vec<Vec<usize>> {
    if size >= pool.len() {
        return vec![pool.to_vec()];
    }
    let mut out = Vec::new();
    let mut pick: Vec<usize> = (0..size).collect();
    loop {
        out.push(pick.iter().map(|&p| pool[p]).collect());
        let Some(pos) = (0..size).rev().find(|&q| pick[q] != q + pool.len() - size) else {
            return out;
        };
        pick[pos] += 1;
        for q in pos + 1..size {
            pick[q] = pick[q - 1] + 1;
        }
    }
}

struct Check<'a> {
    prices: DMatrix<f64>,
    set: &'a FeasibleSet,
    k: usize,
    g: f64,
    opts: &'a CheckOptions,
}

impl Check<'_> {
    /// Whether some `u` in the set ranks `j` among the `k` largest, where only
    /// scenarios in `candidates` may exceed `j`.
    fn run(&self, j: usize, candidates: &[usize]) -> Result<bool, SupportError> {
        let ns = self.prices.nrows();
        let pool: Vec<usize> = candidates.iter().copied().filter(|&i| i != j).collect();
        let fixed: Vec<usize> = {
            let mut in_pool = vec![false; ns];
            for &i in &pool {
                in_pool[i] = true;
            }
            (0..ns).filter(|&i| i != j && !in_pool[i]).collect()
        };
        let enumerate = match self.opts.strategy {
            SupportStrategy::Auto => self.k <= 3,
            SupportStrategy::Enumerate => true,
            SupportStrategy::BranchAndBound => false,
        };
        if enumerate {
            self.by_enumeration(j, &pool, &fixed)
        } else {
            self.by_branch_and_bound(j, &pool, &fixed)
        }
    }

    /// A superset of exceeders only relaxes the program, so only maximal
    /// exceeder sets (`k - 1` members) need checking.
    fn by_enumeration(&self, j: usize, pool: &[usize], fixed: &[usize]) -> Result<bool, SupportError> {
        let base = base_program(self.set);
        let mut indeterminate = false;
        for s in subsets(pool, self.k - 1) {
            let mut prog = base.clone();
            for &i in fixed.iter().chain(pool.iter().filter(|i| !s.contains(i))) {
                prog.add_le(diff_coeffs(&self.prices, i, j), 0.0);
            }
            match solve_conic(&prog, &self.opts.solver)? {
                ConicOutcome::Optimal { .. } => return Ok(true),
                ConicOutcome::Infeasible => {}
                ConicOutcome::Unbounded | ConicOutcome::Limit { .. } => indeterminate = true,
            }
        }
        if indeterminate {
            Err(SupportError::Indeterminate { j })
        } else {
            Ok(false)
        }
    }

    fn by_branch_and_bound(&self, j: usize, pool: &[usize], fixed: &[usize]) -> Result<bool, SupportError> {
        let mut continuous = base_program(self.set);
        for &i in fixed {
            continuous.add_le(diff_coeffs(&self.prices, i, j), 0.0);
        }
        let linking: Vec<MixedRow> = pool
            .iter()
            .enumerate()
            .map(|(b, &i)| MixedRow {
                continuous: diff_coeffs(&self.prices, i, j),
                binary: vec![(b, self.g)],
                rhs: self.g,
            })
            .collect();
        let f = MixedBinaryFeasibility {
            continuous,
            num_binary: pool.len(),
            linking,
            min_ones: Some(pool.len().saturating_sub(self.k - 1)),
            maximize_ones: false,
        };
        match solve_mixed_binary(&f, self.opts.time_limit, &self.opts.solver)? {
            MixedOutcome::Feasible { x, z } => {
                // a relaxed row that binds means G did not make it vacuous
                for (row, &on) in f.linking.iter().zip(&z) {
                    let lhs: f64 = row.continuous.iter().map(|&(c, a)| a * x[c]).sum();
                    if !on && lhs >= self.g - 1e-9 * self.g {
                        return Err(SupportError::BigGTooSmall { g: self.g, required: lhs });
                    }
                }
                Ok(true)
            }
            MixedOutcome::Infeasible => Ok(false),
            MixedOutcome::Limit { .. } => Err(SupportError::Indeterminate { j }),
        }
    }
}

fn prepare<'a>(
    scenarios: &[Scenario],
    set: &'a FeasibleSet,
    k: usize,
    g: f64,
    opts: &'a CheckOptions,
) -> Result<Check<'a>, SupportError> {
    let prices = price_matrix(scenarios, set.dim())?;
    if k == 0 || k > prices.nrows() {
        return Err(SupportError::Config(format!("k = {k} must lie in 1..={}", prices.nrows())));
    }
    if !(g.is_finite() && g > 0.0) {
        return Err(SupportError::Config(format!("big-G constant {g} must be positive and finite")));
    }
    Ok(Check { prices, set, k, g, opts })
}

fn check_g(check: &Check<'_>, j: usize) -> Result<(), SupportError> {
    let n = check.prices.nrows();
    let required = interval_bound(&check.prices, &check.set.u_box, (0..n).map(|i| (i, j)))?;
    if check.g < required {
        return Err(SupportError::BigGTooSmall { g: check.g, required });
    }
    Ok(())
}

/// Whether some input in `set` puts scenario `j` among the `k` largest losses
/// (ties count in favor of `j`).
pub fn support_in_feasible_set(
    j: usize,
    scenarios: &[Scenario],
    set: &FeasibleSet,
    k: usize,
    g: f64,
) -> Result<bool, SupportError> {
    support_in_feasible_set_with(j, scenarios, set, k, g, &CheckOptions::default())
}

pub fn support_in_feasible_set_with(
    j: usize,
    scenarios: &[Scenario],
    set: &FeasibleSet,
    k: usize,
    g: f64,
    opts: &CheckOptions,
) -> Result<bool, SupportError> {
    let check = prepare(scenarios, set, k, g, opts)?;
    let n = check.prices.nrows();
    if j >= n {
        return Err(SupportError::Index { j, n });
    }
    check_g(&check, j)?;
    let all: Vec<usize> = (0..n).collect();
    check.run(j, &all)
}

/// Members of `candidates` that are of support in `set`. Only candidates are
/// allowed to outrank the scenario under test, which is exact when the
/// candidates contain every scenario that reaches the top `k` on the box.
pub fn filter_support_in_p(
    candidates: &[usize],
    scenarios: &[Scenario],
    set: &FeasibleSet,
    k: usize,
    g: f64,
) -> Result<Vec<usize>, SupportError> {
    filter_support_in_p_with(candidates, scenarios, set, k, g, &CheckOptions::default())
}

pub fn filter_support_in_p_with(
    candidates: &[usize],
    scenarios: &[Scenario],
    set: &FeasibleSet,
    k: usize,
    g: f64,
    opts: &CheckOptions,
) -> Result<Vec<usize>, SupportError> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let check = prepare(scenarios, set, k, g, opts)?;
    let n = check.prices.nrows();
    if let Some(&j) = candidates.iter().find(|&&j| j >= n) {
        return Err(SupportError::Index { j, n });
    }
    let mut cand = candidates.to_vec();
    cand.sort_unstable();
    cand.dedup();
    for &j in &cand {
        check_g(&check, j)?;
    }
    let keep = cand
        .par_iter()
        .map(|&j| check.run(j, &cand))
        .collect::<Result<Vec<bool>, _>>()?;
    Ok(cand.into_iter().zip(keep).filter(|&(_, k)| k).map(|(j, _)| j).collect())
}
