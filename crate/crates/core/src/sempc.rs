//! Scenario economic MPC with an empirical expected shortfall cap, and the
//! receding-horizon loop around it.
//!
//! The cap on the mean of the `k` largest scenario costs is imposed through
//! the `k`-largest-sum program: auxiliary `lambda_i >= alpha_i . u - t_bar`,
//! `lambda >= 0` and `t_bar + sum(lambda) / k <= M`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::certificates::{certify_solution, CertificateError};
use crate::optim::{solve_conic, ConicOutcome, ConicProgram, OptimError, SolverOptions};
use crate::plantmodel::{
    condense, draw_scenarios, steady_input, ConstraintSets, DemandProfile, FeasibleSet, InputBox, LinearSystem,
    ModelError, Scenario, TariffModel,
};
use crate::riskmeasures::{k_largest_sum_lp, LossVector, RiskError};
use crate::support::{
    big_g_bound, filter_support_in_p_with, find_support_box_from, CheckOptions, SupportConfig, SupportError,
    SupportStrategy,
};

#[derive(Debug, Error)]
pub enum SempcError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Solver(#[from] OptimError),
    #[error(transparent)]
    Support(#[from] SupportError),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
}

/// Exact-penalty weight on softened state and terminal constraints.
pub const SOFT_PENALTY: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct SempcProblem {
    pub system: LinearSystem,
    pub cons: ConstraintSets,
    pub scenarios: Vec<Scenario>,
    pub horizon: usize,
    /// Demand forecast, at least `horizon` steps.
    pub demands: Vec<DVector<f64>>,
    /// Weight on input increments, `m x m`, symmetric PSD.
    pub r: DMatrix<f64>,
    /// Weight of the terminal cost `(x_N - x_s)' Omega (x_N - x_s)`.
    pub terminal_weight: f64,
    pub k: usize,
    /// Cap on the EES of the energy cost; `f64::INFINITY` disables it.
    pub ees_cap: f64,
    pub x0: DVector<f64>,
    pub u_prev: DVector<f64>,
}

impl SempcProblem {
    pub fn validate(&self) -> Result<(), SempcError> {
        let (n, m) = (self.system.states(), self.system.inputs());
        self.cons.check_system(&self.system)?;
        if self.horizon == 0 {
            return Err(SempcError::Invalid("horizon must be at least 1".into()));
        }
        let ns = self.scenarios.len();
        if self.k == 0 || self.k > ns {
            return Err(SempcError::Invalid(format!("need 1 <= k <= N_s, got k = {} with {ns} scenarios", self.k)));
        }
        if let Some(i) = self.scenarios.iter().position(|s| s.len() != self.horizon * m) {
            return Err(SempcError::Invalid(format!(
                "scenario {i} has {} prices, expected {}",
                self.scenarios[i].len(),
                self.horizon * m
            )));
        }
        if self.scenarios.iter().any(|s| s.prices.iter().any(|p| !p.is_finite())) {
            return Err(SempcError::Invalid("non-finite scenario price".into()));
        }
        if !(self.ees_cap > 0.0 || self.ees_cap == f64::INFINITY) || self.ees_cap.is_nan() {
            return Err(SempcError::Invalid(format!("EES cap {} must be positive or infinite", self.ees_cap)));
        }
        if !(self.terminal_weight >= 0.0 && self.terminal_weight.is_finite()) {
            return Err(SempcError::Invalid(format!("terminal weight {} must be nonnegative", self.terminal_weight)));
        }
        if self.x0.len() != n || self.u_prev.len() != m {
            return Err(SempcError::Invalid("x0 or u_prev has the wrong length".into()));
        }
        if self.demands.len() < self.horizon {
            return Err(SempcError::Invalid(format!("{} demand steps for horizon {}", self.demands.len(), self.horizon)));
        }
        if self.r.nrows() != m || self.r.ncols() != m {
            return Err(SempcError::Invalid(format!("R must be {m}x{m}")));
        }
        if self.r.iter().any(|v| !v.is_finite()) || (&self.r - self.r.transpose()).amax() > 1e-12 * self.r.amax().max(1.0) {
            return Err(SempcError::Invalid("R must be finite and symmetric".into()));
        }
        if m > 0 {
            let min_eig = SymmetricEigen::new(self.r.clone()).eigenvalues.min();
            if min_eig < -1e-10 * self.r.amax().max(1.0) {
                return Err(SempcError::Invalid(format!("R is not positive semidefinite (eigenvalue {min_eig:e})")));
            }
        }
        Ok(())
    }

    fn with_cap(&self, ees_cap: f64) -> Self {
        Self { ees_cap, ..self.clone() }
    }
}

/// Assembled program and where each block of variables lives.
#[derive(Debug, Clone)]
pub struct SempcProgram {
    pub program: ConicProgram,
    pub feasible: FeasibleSet,
    pub u: Range<usize>,
    pub lambda: Range<usize>,
    pub t_bar: usize,
    /// Slacks of softened constraints; empty for the exact program.
    pub slacks: Range<usize>,
}

/// Adds `u' H u` for a symmetric `H` acting on variables `offset..`.
fn add_quadratic_form(p: &mut ConicProgram, offset: usize, h: &DMatrix<f64>) {
    for i in 0..h.nrows() {
        for j in i..h.ncols() {
            if h[(i, j)] != 0.0 {
                p.add_quadratic(offset + i, offset + j, h[(i, j)]);
            }
        }
    }
}

/// Builds the exact program: variables `(u, lambda, t_bar)`.
pub fn build_sempc(problem: &SempcProblem) -> Result<SempcProgram, SempcError> {
    build(problem, false)
}

fn build(problem: &SempcProblem, soften: bool) -> Result<SempcProgram, SempcError> {
    problem.validate()?;
    let m = problem.system.inputs();
    let fs = condense(&problem.system, &problem.cons, &problem.x0, &problem.demands, problem.horizon)?;
    let nu = fs.dim();
    let ns = problem.scenarios.len();
    let t_bar = nu + ns;
    let n_slack = if soften { fs.bbar.nrows() + 1 } else { 0 };
    let mut p = ConicProgram::new(nu + ns + 1 + n_slack);
    let slacks = t_bar + 1..t_bar + 1 + n_slack;

    // sample-average energy cost
    for s in &problem.scenarios {
        for c in 0..nu {
            p.linear[c] += s.prices[c] / ns as f64;
        }
    }

    // input increments, the first one measured from u_prev
    let r = &problem.r;
    for l in 0..problem.horizon {
        add_quadratic_form(&mut p, l * m, r);
        if l > 0 {
            add_quadratic_form(&mut p, (l - 1) * m, r);
            for a in 0..m {
                for b in 0..m {
                    if r[(a, b)] != 0.0 {
                        p.add_quadratic(l * m + a, (l - 1) * m + b, -r[(a, b)]);
                    }
                }
            }
        }
    }
    let ru = r * &problem.u_prev;
    for a in 0..m {
        p.linear[a] -= 2.0 * ru[a];
    }
    p.constant += problem.u_prev.dot(&ru);

    if problem.terminal_weight > 0.0 {
        let w = problem.terminal_weight;
        let omega = &fs.terminal.omega;
        let h = fs.bhat.transpose() * omega * &fs.bhat * w;
        add_quadratic_form(&mut p, 0, &(0.5 * (&h + h.transpose())));
        let lin = fs.bhat.transpose() * (omega * &fs.gamma) * (2.0 * w);
        for c in 0..nu {
            p.linear[c] += lin[c];
        }
        p.constant += w * fs.gamma.dot(&(omega * &fs.gamma));
    }

    // input box, state box, terminal ellipsoid
    if soften {
        for i in 0..nu {
            p.set_bounds(i, fs.u_box.lo[i], fs.u_box.hi[i]);
        }
        for r in 0..fs.bbar.nrows() {
            let mut coeffs = fs.row_coeffs(&fs.bbar, r, 0);
            coeffs.push((slacks.start + r, -1.0));
            p.add_le(coeffs, fs.abar[r]);
        }
        p.cones.push(fs.terminal_cone(0, Some(slacks.end - 1)));
        for s in slacks.clone() {
            p.set_bounds(s, 0.0, f64::INFINITY);
            p.linear[s] = SOFT_PENALTY;
        }
    } else {
        fs.add_to_program(&mut p, 0);
    }

    // k-largest-sum rows; the bounds on lambda and t_bar contain the
    // closed-form completion for every u in the box and keep the set compact
    let span = problem
        .scenarios
        .iter()
        .map(|s| {
            (0..nu)
                .map(|c| (s.prices[c] * fs.u_box.lo[c]).abs().max((s.prices[c] * fs.u_box.hi[c]).abs()))
                .sum::<f64>()
        })
        .fold(0.0f64, f64::max)
        + 1.0;
    for (j, s) in problem.scenarios.iter().enumerate() {
        let mut coeffs: Vec<(usize, f64)> = (0..nu).filter(|&c| s.prices[c] != 0.0).map(|c| (c, s.prices[c])).collect();
        coeffs.push((t_bar, -1.0));
        coeffs.push((nu + j, -1.0));
        p.add_le(coeffs, 0.0);
        p.set_bounds(nu + j, 0.0, 2.0 * span);
    }
    p.set_bounds(t_bar, -span, span);
    if problem.ees_cap.is_finite() {
        let k = problem.k as f64;
        let mut coeffs = vec![(t_bar, 1.0)];
        coeffs.extend((nu..nu + ns).map(|i| (i, 1.0 / k)));
        p.add_le(coeffs, problem.ees_cap);
    }

    Ok(SempcProgram {
        program: p,
        feasible: fs,
        u: 0..nu,
        lambda: nu..nu + ns,
        t_bar,
        slacks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SempcStatus {
    Optimal,
    /// Solved only after softening the state and terminal constraints.
    Softened,
    Infeasible,
    SolverLimit,
}

impl SempcStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SempcStatus::Optimal => "optimal",
            SempcStatus::Softened => "softened",
            SempcStatus::Infeasible => "infeasible",
            SempcStatus::SolverLimit => "solver-limit",
        }
    }
}

/// Result of one solve. Outside `Optimal`/`Softened` the vectors are empty
/// and the numbers NaN; `diagnostics` says why.
#[derive(Debug, Clone, PartialEq)]
pub struct SempcSolution {
    pub status: SempcStatus,
    pub u_tilde: DVector<f64>,
    pub x_traj: Vec<DVector<f64>>,
    pub objective: f64,
    /// Sample-average energy cost.
    pub energy_cost: f64,
    pub ees_value: f64,
    /// Zero-based indices of the `k` most expensive scenarios at `u_tilde`.
    pub top_k: Vec<usize>,
    pub lambda: Vec<f64>,
    pub t_bar: f64,
    /// Largest softening slack; zero for exact solves.
    pub max_slack: f64,
    pub diagnostics: Option<String>,
}

impl SempcSolution {
    fn failed(status: SempcStatus, why: String) -> Self {
        Self {
            status,
            u_tilde: DVector::zeros(0),
            x_traj: Vec::new(),
            objective: f64::NAN,
            energy_cost: f64::NAN,
            ees_value: f64::NAN,
            top_k: Vec::new(),
            lambda: Vec::new(),
            t_bar: f64::NAN,
            max_slack: f64::NAN,
            diagnostics: Some(why),
        }
    }

    pub fn is_solved(&self) -> bool {
        matches!(self.status, SempcStatus::Optimal | SempcStatus::Softened)
    }

    /// `t_bar + sum(lambda) / k`, the reformulated EES bound.
    pub fn ees_bound(&self, k: usize) -> f64 {
        self.t_bar + self.lambda.iter().sum::<f64>() / k as f64
    }
}

/// Gap tolerance for SEMPC solves; tighter than the solver default so that
/// objective comparisons between related problems are meaningful.
fn sempc_options() -> SolverOptions {
    SolverOptions {
        tol_gap: 1e-10,
        ..SolverOptions::default()
    }
}

/// Solves the capped problem. The uncapped relaxation is solved first; when
/// its minimizer already meets the cap it is optimal for the capped problem
/// as well and is returned as is.
pub fn solve_sempc(problem: &SempcProblem) -> Result<SempcSolution, SempcError> {
    solve_relaxation_first(problem, false)
}

fn solve_relaxation_first(problem: &SempcProblem, soften: bool) -> Result<SempcSolution, SempcError> {
    if problem.ees_cap.is_finite() {
        let relaxed = solve_with(&problem.with_cap(f64::INFINITY), soften, &sempc_options())?;
        if relaxed.status == SempcStatus::Optimal && relaxed.ees_value <= problem.ees_cap {
            return Ok(relaxed);
        }
        if relaxed.status == SempcStatus::Infeasible {
            return Ok(relaxed);
        }
    }
    solve_with(problem, soften, &sempc_options())
}

/// Like [`solve_sempc`], but on infeasibility retries with state and
/// terminal constraints softened by exact-penalty slacks. The EES cap and
/// the input box stay hard.
pub fn solve_sempc_softened(problem: &SempcProblem) -> Result<SempcSolution, SempcError> {
    let exact = solve_sempc(problem)?;
    if exact.status != SempcStatus::Infeasible {
        return Ok(exact);
    }
    let soft = solve_relaxation_first(problem, true)?;
    Ok(match soft.status {
        SempcStatus::Optimal => SempcSolution {
            status: SempcStatus::Softened,
            ..soft
        },
        _ => exact,
    })
}

/// The returned `(lambda, t_bar)` is the closed-form minimizer of the
/// k-largest-sum program at the returned inputs, so `ees_bound` equals the
/// EES there; it is no larger than the solver's own pair.
fn solve_with(problem: &SempcProblem, soften: bool, opts: &SolverOptions) -> Result<SempcSolution, SempcError> {
    let sp = build(problem, soften)?;
    let x = match solve_conic(&sp.program, opts)? {
        ConicOutcome::Optimal { x, .. } => x,
        ConicOutcome::Infeasible => {
            return Ok(SempcSolution::failed(SempcStatus::Infeasible, "primal infeasibility certificate".into()))
        }
        ConicOutcome::Unbounded => {
            return Ok(SempcSolution::failed(SempcStatus::SolverLimit, "solver reported unboundedness".into()))
        }
        ConicOutcome::Limit { reason } => return Ok(SempcSolution::failed(SempcStatus::SolverLimit, reason)),
    };
    let u = DVector::from_column_slice(&x[sp.u.clone()]);
    let losses: Vec<f64> = problem.scenarios.iter().map(|s| s.prices.dot(&u)).collect();
    let energy_cost = losses.iter().sum::<f64>() / losses.len() as f64;
    let kls = k_largest_sum_lp(&LossVector::new(losses)?, problem.k)?;
    let top_k = (0..kls.dual.len()).filter(|&i| kls.dual[i] > 0.5).collect();
    let max_slack = x[sp.slacks.clone()].iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(SempcSolution {
        status: SempcStatus::Optimal,
        x_traj: sp.feasible.predict(&u),
        objective: sp.program.objective(&x),
        energy_cost,
        ees_value: kls.value / problem.k as f64,
        top_k,
        lambda: kls.lambda,
        t_bar: kls.t_bar,
        u_tilde: u,
        max_slack,
        diagnostics: None,
    })
}

/// Per-step support discovery and certification settings.
#[derive(Debug, Clone, Serialize)]
pub struct CertifySettings {
    pub n_r: usize,
    pub n_t: usize,
    pub mu: f64,
    pub rho: f64,
    pub beta: f64,
    /// Filter the box candidates down to the feasible set.
    pub in_p: bool,
    pub strategy: SupportStrategy,
    pub max_rounds: usize,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopSetup {
    pub system: LinearSystem,
    pub cons: ConstraintSets,
    pub demand: DemandProfile,
    /// Scenario generator; its seed drives every random draw of the run.
    pub tariff: TariffModel,
    pub horizon: usize,
    pub n_s: usize,
    pub k: usize,
    pub ees_cap: f64,
    pub r: DMatrix<f64>,
    pub terminal_weight: f64,
    pub x0: DVector<f64>,
    /// Input before the first step; the steady input (or zero) when absent.
    pub u_prev: Option<DVector<f64>>,
    pub steps: usize,
    pub certify: Option<CertifySettings>,
    /// Also solve each step without the cap from the same state.
    pub compare_uncapped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: usize,
    /// State at the start of the step.
    pub x: Vec<f64>,
    pub u_applied: Vec<f64>,
    pub status: SempcStatus,
    pub objective: f64,
    pub energy_cost: f64,
    pub ees_value: f64,
    pub s_box: Option<usize>,
    pub s_p: Option<usize>,
    pub eps_lo: Option<f64>,
    pub eps_hi: Option<f64>,
    pub cert_error: Option<String>,
    pub uncapped_status: Option<SempcStatus>,
    pub uncapped_objective: Option<f64>,
    pub uncapped_energy_cost: Option<f64>,
    pub uncapped_ees: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedLoopTrace {
    pub records: Vec<StepRecord>,
    pub seed: u64,
    pub final_state: Vec<f64>,
}

fn step_seed(seed: u64, t: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(t as u64)
}

struct Certified {
    s_box: usize,
    s_p: Option<usize>,
    eps_lo: f64,
    eps_hi: f64,
    box_indices: Vec<usize>,
}

fn certify_step(
    settings: &CertifySettings,
    scenarios: &[Scenario],
    fs: &FeasibleSet,
    k: usize,
    seed: u64,
    warm: &[usize],
) -> Result<Certified, SempcError> {
    let mut cfg = SupportConfig::new(settings.n_r, settings.n_t, k, settings.mu, settings.rho, seed)?;
    cfg.max_rounds = settings.max_rounds;
    let found = find_support_box_from(scenarios, &cfg, &fs.u_box, warm, None)?;
    let s_p = if settings.in_p {
        let g = big_g_bound(scenarios, &fs.u_box)?;
        let opts = CheckOptions {
            strategy: settings.strategy,
            ..CheckOptions::default()
        };
        Some(filter_support_in_p_with(&found.indices, scenarios, fs, k, g, &opts)?.len())
    } else {
        None
    };
    let s_star = s_p.unwrap_or(found.indices.len());
    let cert = certify_solution(s_star, scenarios.len(), settings.beta)?;
    Ok(Certified {
        s_box: found.indices.len(),
        s_p,
        eps_lo: cert.eps_lo,
        eps_hi: cert.eps_hi,
        box_indices: found.indices,
    })
}

/// Receding-horizon simulation: at every step fresh scenarios are drawn for
/// the window starting at hour `t`, the problem is solved (softened on
/// infeasibility), its first input is applied against the actual demand
/// and the state advances. An unsolved step holds the previous input,
/// clamped to the input bounds.
pub fn closed_loop(setup: &ClosedLoopSetup) -> Result<ClosedLoopTrace, SempcError> {
    let sys = &setup.system;
    let m = sys.inputs();
    setup.cons.check_system(sys)?;
    if setup.x0.len() != sys.states() {
        return Err(SempcError::Invalid("x0 has the wrong length".into()));
    }
    let mut u_prev = match &setup.u_prev {
        Some(u) => u.clone(),
        None => steady_input(sys, &setup.cons, setup.demand.d_bar()).unwrap_or_else(|| DVector::zeros(m)),
    };
    let mut x = setup.x0.clone();
    // Candidate indices from the last certified step, with the scenarios
    // they index; reused only while the scenario set is unchanged.
    let mut warm: Option<(Vec<Scenario>, Vec<usize>)> = None;
    let mut records = Vec::with_capacity(setup.steps);
    let seed = setup.tariff.seed();

    for t in 0..setup.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let scenarios = draw_scenarios(&setup.tariff, t, setup.horizon, m, setup.n_s, &mut rng);
        let problem = SempcProblem {
            system: sys.clone(),
            cons: setup.cons.clone(),
            scenarios,
            horizon: setup.horizon,
            demands: setup.demand.window(t, setup.horizon),
            r: setup.r.clone(),
            terminal_weight: setup.terminal_weight,
            k: setup.k,
            ees_cap: setup.ees_cap,
            x0: x.clone(),
            u_prev: u_prev.clone(),
        };
        let sol = solve_sempc_softened(&problem)?;
        let twin = if setup.compare_uncapped {
            Some(solve_sempc(&problem.with_cap(f64::INFINITY))?)
        } else {
            None
        };

        let (mut s_box, mut s_p, mut eps_lo, mut eps_hi, mut cert_error) = (None, None, None, None, None);
        if let (Some(settings), true) = (&setup.certify, sol.is_solved()) {
            let fs = condense(sys, &setup.cons, &x, &problem.demands, setup.horizon)?;
            let reuse = match &warm {
                Some((prev, idx)) if *prev == problem.scenarios => idx.as_slice(),
                _ => &[],
            };
            match certify_step(settings, &problem.scenarios, &fs, setup.k, step_seed(seed, t), reuse) {
                Ok(c) => {
                    s_box = Some(c.s_box);
                    s_p = c.s_p;
                    eps_lo = Some(c.eps_lo);
                    eps_hi = Some(c.eps_hi);
                    warm = Some((problem.scenarios.clone(), c.box_indices));
                }
                Err(e @ (SempcError::Support(_) | SempcError::Certificate(_))) => cert_error = Some(e.to_string()),
                Err(e) => return Err(e),
            }
        }

        let u0 = if sol.is_solved() {
            sol.u_tilde.rows(0, m).into_owned()
        } else {
            u_prev.zip_zip_map(&setup.cons.u_lo, &setup.cons.u_hi, |v, l, h| v.clamp(l, h))
        };
        records.push(StepRecord {
            t,
            x: x.iter().copied().collect(),
            u_applied: u0.iter().copied().collect(),
            status: sol.status,
            objective: sol.objective,
            energy_cost: sol.energy_cost,
            ees_value: sol.ees_value,
            s_box,
            s_p,
            eps_lo,
            eps_hi,
            cert_error,
            uncapped_status: twin.as_ref().map(|s| s.status),
            uncapped_objective: twin.as_ref().map(|s| s.objective),
            uncapped_energy_cost: twin.as_ref().map(|s| s.energy_cost),
            uncapped_ees: twin.as_ref().map(|s| s.ees_value),
        });
        x = sys.step(&x, &u0, &setup.demand.at(t));
        u_prev = u0;
    }
    Ok(ClosedLoopTrace {
        records,
        seed,
        final_state: x.iter().copied().collect(),
    })
}

/// Stacked input box of a problem, for callers that sample it.
pub fn input_box(problem: &SempcProblem) -> InputBox {
    InputBox::repeat(&problem.cons, problem.horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plantmodel::TerminalSet;
    use crate::riskmeasures::ees;

    fn s(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    /// Integrator tank, x in [0, 10], u in [0, 3], terminal ellipsoid around 5.
    fn tank_problem(scenarios: Vec<Vec<f64>>, ees_cap: f64) -> SempcProblem {
        let one = DMatrix::from_element(1, 1, 1.0);
        let sys = LinearSystem::new(one.clone(), one.clone(), -one.clone()).unwrap();
        let cons = ConstraintSets::new(s(0.0), s(10.0), s(0.0), s(3.0), TerminalSet::new(one, 0.8, s(5.0)).unwrap()).unwrap();
        SempcProblem {
            system: sys,
            cons,
            scenarios: scenarios.into_iter().map(|p| Scenario::new(DVector::from_vec(p))).collect(),
            horizon: 2,
            demands: vec![s(1.0), s(1.0)],
            r: DMatrix::zeros(1, 1),
            terminal_weight: 0.0,
            k: 1,
            ees_cap,
            x0: s(4.0),
            u_prev: s(0.0),
        }
    }

    #[test]
    fn variable_count() {
        let p = tank_problem(vec![vec![1.0, 2.0]; 4], f64::INFINITY);
        let sp = build_sempc(&p).unwrap();
        assert_eq!(sp.program.num_vars(), 2 + 4 + 1);
        assert_eq!((sp.u.clone(), sp.lambda.clone(), sp.t_bar), (0..2, 2..6, 6));
        assert!(sp.slacks.is_empty());
    }

    #[test]
    fn constant_price_minimizes_total_pumping() {
        // x2 = 4 + u0 + u1 - 2 must satisfy (x2 - 5)^2 <= 0.8
        let sol = solve_sempc(&tank_problem(vec![vec![1.0, 1.0]], f64::INFINITY)).unwrap();
        assert_eq!(sol.status, SempcStatus::Optimal);
        assert!((sol.objective - (3.0 - 0.8f64.sqrt())).abs() < 1e-6, "{}", sol.objective);
        assert!((sol.ees_value - sol.objective).abs() < 1e-9);
    }

    #[test]
    fn cheap_hour_is_preferred() {
        let sol = solve_sempc(&tank_problem(vec![vec![1.0, 2.0]], f64::INFINITY)).unwrap();
        let need = 3.0 - 0.8f64.sqrt();
        assert!((sol.u_tilde[0] - need).abs() < 1e-6 && sol.u_tilde[1].abs() < 1e-6);
    }

    #[test]
    fn cap_binds_and_is_reported() {
        let scen = vec![vec![1.0, 3.0], vec![1.0, 3.0], vec![3.0, 1.0]];
        let free = solve_sempc(&tank_problem(scen.clone(), f64::INFINITY)).unwrap();
        let mut p = tank_problem(scen, f64::INFINITY);
        p.k = 1;
        let free_ees = free.ees_value;
        p.ees_cap = free_ees - 0.2;
        let capped = solve_sempc(&p).unwrap();
        assert_eq!(capped.status, SempcStatus::Optimal);
        assert!((capped.ees_bound(1) - p.ees_cap).abs() < 1e-6);
        assert!(capped.objective >= free.objective - 1e-9);
        let losses = LossVector::new(p.scenarios.iter().map(|s| s.prices.dot(&capped.u_tilde)).collect()).unwrap();
        assert!((ees(&losses, 1).unwrap() - capped.ees_value).abs() < 1e-12);
    }

    #[test]
    fn infeasible_cap_and_softening() {
        let p = tank_problem(vec![vec![1.0, 1.0]], 0.5);
        assert_eq!(solve_sempc(&p).unwrap().status, SempcStatus::Infeasible);
        // softening the terminal set lets the pumps stay off, the cap still holds
        let soft = solve_sempc_softened(&p).unwrap();
        assert_eq!(soft.status, SempcStatus::Softened);
        assert!(soft.ees_value <= 0.5 + 1e-6);

        let mut q = p.clone();
        q.cons.u_lo = s(1.0);
        assert_eq!(solve_sempc_softened(&q).unwrap().status, SempcStatus::Infeasible);

        let mut q = tank_problem(vec![vec![1.0, 1.0]], f64::INFINITY);
        q.x0 = s(0.0);
        q.demands = vec![s(3.0), s(3.0)];
        assert_eq!(solve_sempc(&q).unwrap().status, SempcStatus::Infeasible);
        let soft = solve_sempc_softened(&q).unwrap();
        assert_eq!(soft.status, SempcStatus::Softened);
        assert!(soft.max_slack > 0.1);
    }

    #[test]
    fn duplicate_scenarios_change_nothing() {
        let one = solve_sempc(&tank_problem(vec![vec![1.0, 2.0]], 5.0)).unwrap();
        let mut p = tank_problem(vec![vec![1.0, 2.0]; 5], 5.0);
        p.k = 2;
        let many = solve_sempc(&p).unwrap();
        assert!((one.objective - many.objective).abs() < 1e-7);
        assert!((&one.u_tilde - &many.u_tilde).amax() < 1e-5);
    }

    #[test]
    fn smoothness_and_terminal_terms_enter_objective() {
        let mut p = tank_problem(vec![vec![1.0, 1.0]], f64::INFINITY);
        p.r = DMatrix::from_element(1, 1, 0.5);
        p.u_prev = s(1.0);
        p.terminal_weight = 2.0;
        let sol = solve_sempc(&p).unwrap();
        let u = &sol.u_tilde;
        let x2 = 4.0 + u[0] + u[1] - 2.0;
        let direct = u[0] + u[1] + 0.5 * ((u[0] - 1.0).powi(2) + (u[1] - u[0]).powi(2)) + 2.0 * (x2 - 5.0).powi(2);
        assert!((sol.objective - direct).abs() < 1e-9);
    }

    #[test]
    fn rejects_invalid_problems() {
        let mut p = tank_problem(vec![vec![1.0, 1.0]], f64::INFINITY);
        p.k = 2;
        assert!(build_sempc(&p).is_err());
        let mut p = tank_problem(vec![vec![1.0, 1.0]], 0.0);
        assert!(build_sempc(&p).is_err());
        p.ees_cap = f64::INFINITY;
        p.r = DMatrix::from_element(1, 1, -1.0);
        assert!(build_sempc(&p).is_err());
        let p = tank_problem(vec![vec![1.0]], f64::INFINITY);
        assert!(build_sempc(&p).is_err());
    }
}
