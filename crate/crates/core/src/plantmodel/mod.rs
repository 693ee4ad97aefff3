//! Linear tank-network models, their constraint sets, demand and tariff
//! profiles, and the condensed (input-only) form of the MPC constraints.

mod config;
mod scenario_csv;

pub use config::{NetworkConfig, SteadyState, TariffConfig};
pub use scenario_csv::{read_scenarios_csv, scenario_header, write_scenarios_csv};

use std::ops::AddAssign;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::optim::{solve_conic, Affine, ConicOutcome, ConicProgram, SecondOrderCone, SolverOptions};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid bounds: {0}")]
    Bounds(String),
    #[error("terminal weight matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("terminal level kappa must be positive, got {0}")]
    Kappa(f64),
    #[error("demand profile: {0}")]
    Demand(String),
    #[error("tariff: {0}")]
    Tariff(String),
    #[error("scenario file: {0}")]
    ScenarioFile(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn ensure_finite(values: &[f64], what: &'static str) -> Result<(), ModelError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite(what))
    }
}

/// `x+ = A x + Bu u + Bd d` with tank levels as states, pump flows as inputs
/// and demands as disturbances.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    bu: DMatrix<f64>,
    bd: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, bu: DMatrix<f64>, bd: DMatrix<f64>) -> Result<Self, ModelError> {
        let n = a.nrows();
        if a.ncols() != n || bu.nrows() != n || bd.nrows() != n {
            return Err(ModelError::Dimension(format!(
                "A is {}x{}, Bu is {}x{}, Bd is {}x{}",
                a.nrows(),
                a.ncols(),
                bu.nrows(),
                bu.ncols(),
                bd.nrows(),
                bd.ncols()
            )));
        }
        ensure_finite(a.as_slice(), "A")?;
        ensure_finite(bu.as_slice(), "Bu")?;
        ensure_finite(bd.as_slice(), "Bd")?;
        Ok(Self { a, bu, bd })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn bu(&self) -> &DMatrix<f64> {
        &self.bu
    }

    pub fn bd(&self) -> &DMatrix<f64> {
        &self.bd
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.bu.ncols()
    }

    pub fn disturbances(&self) -> usize {
        self.bd.ncols()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.bu * u + &self.bd * d
    }
}

/// Trajectory `x_0..x_N` of the recursion for the given input and demand sequences.
pub fn simulate(
    sys: &LinearSystem,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    demands: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>, ModelError> {
    if inputs.len() != demands.len() {
        return Err(ModelError::Dimension(format!(
            "{} inputs but {} demands",
            inputs.len(),
            demands.len()
        )));
    }
    if x0.len() != sys.states() {
        return Err(ModelError::Dimension(format!("x0 has {} entries, expected {}", x0.len(), sys.states())));
    }
    if let Some(u) = inputs.iter().find(|u| u.len() != sys.inputs()) {
        return Err(ModelError::Dimension(format!("input of length {}, expected {}", u.len(), sys.inputs())));
    }
    if let Some(d) = demands.iter().find(|d| d.len() != sys.disturbances()) {
        return Err(ModelError::Dimension(format!(
            "demand of length {}, expected {}",
            d.len(),
            sys.disturbances()
        )));
    }
    let mut traj = Vec::with_capacity(inputs.len() + 1);
    traj.push(x0.clone());
    for (u, d) in inputs.iter().zip(demands) {
        let next = sys.step(traj.last().unwrap(), u, d);
        traj.push(next);
    }
    Ok(traj)
}

/// `{x : (x - x_s)' Omega (x - x_s) <= kappa}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSet {
    pub omega: DMatrix<f64>,
    pub kappa: f64,
    pub x_s: DVector<f64>,
    /// Upper-triangular `R` with `R'R = Omega`.
    root: DMatrix<f64>,
}

impl TerminalSet {
    pub fn new(omega: DMatrix<f64>, kappa: f64, x_s: DVector<f64>) -> Result<Self, ModelError> {
        let n = x_s.len();
        if omega.nrows() != n || omega.ncols() != n {
            return Err(ModelError::Dimension(format!("Omega must be {n}x{n}")));
        }
        ensure_finite(omega.as_slice(), "Omega")?;
        ensure_finite(x_s.as_slice(), "x_s")?;
        if (&omega - omega.transpose()).amax() > 1e-12 * omega.amax().max(1.0) {
            return Err(ModelError::NotPositiveDefinite);
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(ModelError::Kappa(kappa));
        }
        let chol = Cholesky::new(omega.clone()).ok_or(ModelError::NotPositiveDefinite)?;
        let root = chol.l().transpose();
        Ok(Self { omega, kappa, x_s, root })
    }

    /// `R` with `R'R = Omega`, so that `||R (x - x_s)||^2` is the ellipsoid form.
    pub fn root(&self) -> &DMatrix<f64> {
        &self.root
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let e = x - &self.x_s;
        e.dot(&(&self.omega * &e))
    }
}

/// Level and flow boxes plus the terminal ellipsoid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSets {
    pub x_lo: DVector<f64>,
    pub x_hi: DVector<f64>,
    pub u_lo: DVector<f64>,
    pub u_hi: DVector<f64>,
    pub terminal: TerminalSet,
}

impl ConstraintSets {
    pub fn new(
        x_lo: DVector<f64>,
        x_hi: DVector<f64>,
        u_lo: DVector<f64>,
        u_hi: DVector<f64>,
        terminal: TerminalSet,
    ) -> Result<Self, ModelError> {
        if x_lo.len() != x_hi.len() || x_lo.len() != terminal.x_s.len() {
            return Err(ModelError::Dimension("state bounds and terminal set disagree".into()));
        }
        if u_lo.len() != u_hi.len() {
            return Err(ModelError::Dimension("input bounds disagree".into()));
        }
        for (what, lo, hi) in [("state", &x_lo, &x_hi), ("input", &u_lo, &u_hi)] {
            ensure_finite(lo.as_slice(), "bounds")?;
            ensure_finite(hi.as_slice(), "bounds")?;
            if let Some(i) = lo.iter().zip(hi.iter()).position(|(l, h)| l >= h) {
                return Err(ModelError::Bounds(format!("{what} bound {i}: lower {} >= upper {}", lo[i], hi[i])));
            }
        }
        Ok(Self { x_lo, x_hi, u_lo, u_hi, terminal })
    }

    pub fn check_system(&self, sys: &LinearSystem) -> Result<(), ModelError> {
        if self.x_lo.len() != sys.states() || self.u_lo.len() != sys.inputs() {
            return Err(ModelError::Dimension(format!(
                "constraints are for {} states / {} inputs, system has {} / {}",
                self.x_lo.len(),
                self.u_lo.len(),
                sys.states(),
                sys.inputs()
            )));
        }
        Ok(())
    }
}

/// Periodic demand multiplier with unit mean, scaled by per-node averages.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    multiplier: Vec<f64>,
    d_bar: DVector<f64>,
}

impl DemandProfile {
    /// Normalizes the multiplier to unit mean.
    pub fn new(multiplier: Vec<f64>, d_bar: DVector<f64>) -> Result<Self, ModelError> {
        if multiplier.is_empty() {
            return Err(ModelError::Demand("empty multiplier".into()));
        }
        ensure_finite(&multiplier, "demand multiplier")?;
        ensure_finite(d_bar.as_slice(), "d_bar")?;
        let mean = multiplier.iter().sum::<f64>() / multiplier.len() as f64;
        if mean <= 0.0 {
            return Err(ModelError::Demand(format!("multiplier mean {mean} is not positive")));
        }
        let multiplier = multiplier.into_iter().map(|m| m / mean).collect();
        Ok(Self { multiplier, d_bar })
    }

    pub fn multiplier(&self) -> &[f64] {
        &self.multiplier
    }

    pub fn d_bar(&self) -> &DVector<f64> {
        &self.d_bar
    }

    pub fn period(&self) -> usize {
        self.multiplier.len()
    }

    pub fn at(&self, hour: usize) -> DVector<f64> {
        &self.d_bar * self.multiplier[hour % self.multiplier.len()]
    }

    /// Demands for hours `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Vec<DVector<f64>> {
        (start..start + len).map(|h| self.at(h)).collect()
    }
}

/// Per-hour base price plus independent `Uniform(0, noise_width)` noise.
#[derive(Debug, Clone, PartialEq)]
pub struct TariffModel {
    base: Vec<f64>,
    noise_width: f64,
    seed: u64,
}

impl TariffModel {
    pub fn new(base: Vec<f64>, noise_width: f64, seed: u64) -> Result<Self, ModelError> {
        if base.is_empty() {
            return Err(ModelError::Tariff("empty base profile".into()));
        }
        if base.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(ModelError::Tariff("base prices must be positive and finite".into()));
        }
        if !(noise_width >= 0.0 && noise_width.is_finite()) {
            return Err(ModelError::Tariff(format!("noise width {noise_width} must be nonnegative")));
        }
        Ok(Self { base, noise_width, seed })
    }

    /// Low price on hours `0..switch_hour`, high price on the rest of a 24 h day.
    pub fn two_level(low: f64, high: f64, switch_hour: usize, noise_width: f64, seed: u64) -> Result<Self, ModelError> {
        if switch_hour == 0 || switch_hour >= 24 {
            return Err(ModelError::Tariff(format!("switch hour {switch_hour} must lie in 1..24")));
        }
        if low == high {
            return Err(ModelError::Tariff("the two tariff levels must differ".into()));
        }
        let base = (0..24).map(|h| if h < switch_hour { low } else { high }).collect();
        Self::new(base, noise_width, seed)
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn base_at(&self, hour: usize) -> f64 {
        self.base[hour % self.base.len()]
    }

    pub fn noise_width(&self) -> f64 {
        self.noise_width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Deterministic price vector (no noise) over a horizon starting at `start_hour`.
    pub fn deterministic(&self, start_hour: usize, horizon: usize, inputs: usize) -> Scenario {
        let prices = (0..horizon)
            .flat_map(|l| std::iter::repeat(self.base_at(start_hour + l)).take(inputs))
            .collect::<Vec<_>>();
        Scenario::new(DVector::from_vec(prices))
    }
}

/// One sampled price vector `[alpha_0' ... alpha_{N-1}']'` over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub prices: DVector<f64>,
}

impl Scenario {
    pub fn new(prices: DVector<f64>) -> Self {
        Self { prices }
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

/// Draws `count` i.i.d. price scenarios for the horizon starting at `start_hour`.
pub fn draw_scenarios<R: Rng + ?Sized>(
    tariff: &TariffModel,
    start_hour: usize,
    horizon: usize,
    inputs: usize,
    count: usize,
    rng: &mut R,
) -> Vec<Scenario> {
    let w = tariff.noise_width();
    (0..count)
        .map(|_| {
            let prices = (0..horizon * inputs)
                .map(|e| {
                    let base = tariff.base_at(start_hour + e / inputs);
                    if w > 0.0 {
                        base + rng.gen_range(0.0..w)
                    } else {
                        base
                    }
                })
                .collect::<Vec<_>>();
            Scenario::new(DVector::from_vec(prices))
        })
        .collect()
}

/// Energy cost `alpha . u` of one scenario.
pub fn loss(scenario: &Scenario, u_tilde: &DVector<f64>) -> Result<f64, ModelError> {
    if scenario.len() != u_tilde.len() {
        return Err(ModelError::Dimension(format!(
            "scenario has {} prices, input sequence has {} entries",
            scenario.len(),
            u_tilde.len()
        )));
    }
    Ok(scenario.prices.dot(u_tilde))
}

/// Box on the stacked input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBox {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl InputBox {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self, ModelError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(ModelError::Dimension("input box bounds disagree or are empty".into()));
        }
        if let Some(i) = lo.iter().zip(hi.iter()).position(|(l, h)| !(l <= h)) {
            return Err(ModelError::Bounds(format!("input box coordinate {i} is empty")));
        }
        Ok(Self { lo, hi })
    }

    /// Stacks the per-step input bounds over `horizon` steps.
    pub fn repeat(cons: &ConstraintSets, horizon: usize) -> Self {
        let m = cons.u_lo.len();
        let lo = DVector::from_fn(horizon * m, |i, _| cons.u_lo[i % m]);
        let hi = DVector::from_fn(horizon * m, |i, _| cons.u_hi[i % m]);
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.iter().chain(self.hi.iter()).all(|v| v.is_finite())
    }

    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        u.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .all(|(&v, (&l, &h))| v >= l - tol && v <= h + tol)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            let (l, h) = (self.lo[i], self.hi[i]);
            if h > l {
                rng.gen_range(l..h)
            } else {
                l
            }
        })
    }
}

/// All MPC constraints expressed on the stacked input sequence `u`:
/// `u` in the input box, `Bbar u <= Abar` for the intermediate level bounds,
/// and `(Bhat u + gamma)' Omega (Bhat u + gamma) <= kappa` for the terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleSet {
    pub abar: DVector<f64>,
    pub bbar: DMatrix<f64>,
    pub bhat: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub terminal: TerminalSet,
    pub u_box: InputBox,
    /// `x_l` under zero input, `l = 0..=N`.
    pub free_response: Vec<DVector<f64>>,
    /// Map from `u` to the forced part of `x_l`, `l = 0..=N`.
    pub forced_response: Vec<DMatrix<f64>>,
    pub horizon: usize,
}

/// Condenses the dynamics over `horizon` steps from `x0` into constraints on the inputs alone.
pub fn condense(
    sys: &LinearSystem,
    cons: &ConstraintSets,
    x0: &DVector<f64>,
    demands: &[DVector<f64>],
    horizon: usize,
) -> Result<FeasibleSet, ModelError> {
    cons.check_system(sys)?;
    if horizon == 0 {
        return Err(ModelError::Dimension("horizon must be at least 1".into()));
    }
    if demands.len() < horizon {
        return Err(ModelError::Dimension(format!("{} demand steps for horizon {horizon}", demands.len())));
    }
    if x0.len() != sys.states() {
        return Err(ModelError::Dimension(format!("x0 has {} entries, expected {}", x0.len(), sys.states())));
    }
    let (n, m) = (sys.states(), sys.inputs());
    let nu = horizon * m;

    let mut free = Vec::with_capacity(horizon + 1);
    let mut forced = Vec::with_capacity(horizon + 1);
    free.push(x0.clone());
    forced.push(DMatrix::zeros(n, nu));
    for l in 0..horizon {
        if demands[l].len() != sys.disturbances() {
            return Err(ModelError::Dimension(format!("demand {l} has wrong length")));
        }
        free.push(sys.a() * &free[l] + sys.bd() * &demands[l]);
        let mut next = sys.a() * &forced[l];
        next.view_mut((0, l * m), (n, m)).add_assign(sys.bu());
        forced.push(next);
    }

    let rows = 2 * n * (horizon - 1);
    let mut bbar = DMatrix::zeros(rows, nu);
    let mut abar = DVector::zeros(rows);
    for l in 1..horizon {
        let r = 2 * n * (l - 1);
        bbar.view_mut((r, 0), (n, nu)).copy_from(&forced[l]);
        bbar.view_mut((r + n, 0), (n, nu)).copy_from(&(-&forced[l]));
        abar.rows_mut(r, n).copy_from(&(&cons.x_hi - &free[l]));
        abar.rows_mut(r + n, n).copy_from(&(&free[l] - &cons.x_lo));
    }

    Ok(FeasibleSet {
        abar,
        bbar,
        bhat: forced[horizon].clone(),
        gamma: &free[horizon] - &cons.terminal.x_s,
        terminal: cons.terminal.clone(),
        u_box: InputBox::repeat(cons, horizon),
        free_response: free,
        forced_response: forced,
        horizon,
    })
}

impl FeasibleSet {
    pub fn dim(&self) -> usize {
        self.u_box.dim()
    }

    /// Predicted states `x_0..x_N` for the input sequence `u`.
    pub fn predict(&self, u: &DVector<f64>) -> Vec<DVector<f64>> {
        self.free_response
            .iter()
            .zip(&self.forced_response)
            .map(|(f, g)| f + g * u)
            .collect()
    }

    pub fn terminal_value(&self, u: &DVector<f64>) -> f64 {
        let e = &self.bhat * u + &self.gamma;
        e.dot(&(&self.terminal.omega * &e))
    }

    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        if u.len() != self.dim() || !self.u_box.contains(u, tol) {
            return false;
        }
        let slack = &self.abar - &self.bbar * u;
        slack.iter().all(|&s| s >= -tol) && self.terminal_value(u) <= self.terminal.kappa + tol
    }

    /// Adds the constraints on `u = x[offset..offset + dim]` to `p`.
    pub fn add_to_program(&self, p: &mut ConicProgram, offset: usize) {
        for i in 0..self.dim() {
            p.set_bounds(offset + i, self.u_box.lo[i], self.u_box.hi[i]);
        }
        for r in 0..self.bbar.nrows() {
            p.add_le(self.row_coeffs(&self.bbar, r, offset), self.abar[r]);
        }
        p.cones.push(self.terminal_cone(offset, None));
    }

    pub(crate) fn row_coeffs(&self, mat: &DMatrix<f64>, r: usize, offset: usize) -> Vec<(usize, f64)> {
        mat.row(r)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, &v)| (offset + j, v))
            .collect()
    }

    /// `||R (Bhat u + gamma)|| <= sqrt(kappa) + slack`.
    pub(crate) fn terminal_cone(&self, offset: usize, slack: Option<usize>) -> SecondOrderCone {
        let map = self.terminal.root() * &self.bhat;
        let shift = self.terminal.root() * &self.gamma;
        let vector = (0..map.nrows())
            .map(|r| Affine::new(self.row_coeffs(&map, r, offset), shift[r]))
            .collect();
        let bound = Affine::new(
            slack.map(|s| vec![(s, 1.0)]).unwrap_or_default(),
            self.terminal.kappa.sqrt(),
        );
        SecondOrderCone { bound, vector }
    }
}

/// Smallest-norm input inside the flow bounds that holds the levels at the
/// terminal steady state under average demand,
/// `(A - I) x_s + Bu u + Bd d_bar = 0`, if one exists.
pub fn steady_input(
    sys: &LinearSystem,
    cons: &ConstraintSets,
    d_bar: &DVector<f64>,
) -> Option<DVector<f64>> {
    let (n, m) = (sys.states(), sys.inputs());
    let target = -((sys.a() - DMatrix::identity(n, n)) * &cons.terminal.x_s + sys.bd() * d_bar);
    let mut p = ConicProgram::new(m);
    for j in 0..m {
        p.add_quadratic(j, j, 1.0);
        p.set_bounds(j, cons.u_lo[j], cons.u_hi[j]);
    }
    for i in 0..n {
        let coeffs = (0..m).filter(|&j| sys.bu()[(i, j)] != 0.0).map(|j| (j, sys.bu()[(i, j)])).collect();
        p.add_eq(coeffs, target[i]);
    }
    match solve_conic(&p, &SolverOptions::default()) {
        Ok(ConicOutcome::Optimal { x, .. }) => {
            let u = DVector::from_vec(x).zip_zip_map(&cons.u_lo, &cons.u_hi, |v, l, h| v.clamp(l, h));
            let residual = (sys.bu() * &u - &target).amax();
            (residual <= 1e-6 * (1.0 + target.amax())).then_some(u)
        }
        _ => None,
    }
}
