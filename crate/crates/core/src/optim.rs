//! Solver layer: convex quadratic programs with linear and second-order-cone
//! constraints (interior point, via Clarabel), and mixed-binary feasibility
//! by depth-first branch-and-bound over those relaxations.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("variable index {index} out of range for a program with {n} variables")]
    Index { index: usize, n: usize },
    #[error("objective matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
    #[error("binary variable {0} appears in no linking row")]
    UnlinkedBinary(usize),
    #[error("lower bound exceeds upper bound for variable {0}")]
    Bounds(usize),
}

/// Sparse linear form `sum(coeffs) + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn new(coeffs: Vec<(usize, f64)>, constant: f64) -> Self {
        Self { coeffs, constant }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().map(|&(i, a)| a * x[i]).sum::<f64>()
    }

    /// Largest magnitude among the evaluated terms, used to scale tolerances.
    fn scale(&self, x: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .map(|&(i, a)| (a * x[i]).abs())
            .fold(self.constant.abs(), f64::max)
    }
}

/// `||vector||_2 <= bound`, every entry affine in the decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderCone {
    pub bound: Affine,
    pub vector: Vec<Affine>,
}

/// `min x'Qx + c'x + constant` subject to `Ax = b`, `Gx <= h`, cone blocks
/// and variable bounds. Bounds may be infinite.
#[derive(Debug, Clone)]
pub struct ConicProgram {
    n: usize,
    quadratic: BTreeMap<(usize, usize), f64>,
    pub linear: Vec<f64>,
    pub constant: f64,
    /// Rows `affine == 0`.
    pub equalities: Vec<Affine>,
    /// Rows `affine <= 0`.
    pub inequalities: Vec<Affine>,
    pub cones: Vec<SecondOrderCone>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ConicProgram {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            quadratic: BTreeMap::new(),
            linear: vec![0.0; n],
            constant: 0.0,
            equalities: Vec::new(),
            inequalities: Vec::new(),
            cones: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    /// Adds `v` to the symmetric entries `Q[i][j]` and `Q[j][i]` (once if `i == j`).
    pub fn add_quadratic(&mut self, i: usize, j: usize, v: f64) {
        let key = (i.min(j), i.max(j));
        *self.quadratic.entry(key).or_insert(0.0) += v;
    }

    pub fn quadratic_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.quadratic.iter().map(|(&(i, j), &v)| (i, j, v))
    }

    /// Adds `sum(coeffs) <= rhs`.
    pub fn add_le(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.inequalities.push(Affine::new(coeffs, -rhs));
    }

    /// Adds `sum(coeffs) == rhs`.
    pub fn add_eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.equalities.push(Affine::new(coeffs, -rhs));
    }

    pub fn set_bounds(&mut self, i: usize, lo: f64, hi: f64) {
        self.lower[i] = lo;
        self.upper[i] = hi;
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let quad: f64 = self
            .quadratic
            .iter()
            .map(|(&(i, j), &v)| if i == j { v * x[i] * x[i] } else { 2.0 * v * x[i] * x[j] })
            .sum();
        quad + self.linear.iter().zip(x).map(|(c, xi)| c * xi).sum::<f64>() + self.constant
    }

    /// Worst constraint violation at `x`, each row measured relative to
    /// `1 + ` the magnitude of its evaluated terms.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rel = |v: f64, scale: f64| v.max(0.0) / (1.0 + scale);
        let mut worst = 0.0f64;
        for row in &self.equalities {
            worst = worst.max(rel(row.eval(x).abs(), row.scale(x)));
        }
        for row in &self.inequalities {
            worst = worst.max(rel(row.eval(x), row.scale(x)));
        }
        for cone in &self.cones {
            let norm = cone.vector.iter().map(|a| a.eval(x).powi(2)).sum::<f64>().sqrt();
            let scale = cone.vector.iter().map(|a| a.scale(x)).fold(cone.bound.scale(x), f64::max);
            worst = worst.max(rel(norm - cone.bound.eval(x), scale));
        }
        for (i, &xi) in x.iter().enumerate() {
            worst = worst.max(rel(self.lower[i] - xi, self.lower[i].abs()));
            worst = worst.max(rel(xi - self.upper[i], self.upper[i].abs()));
        }
        worst
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let n = self.n;
        let check_affine = |a: &Affine, what: &'static str| -> Result<(), OptimError> {
            if !a.constant.is_finite() {
                return Err(OptimError::NonFinite(what));
            }
            for &(i, v) in &a.coeffs {
                if i >= n {
                    return Err(OptimError::Index { index: i, n });
                }
                if !v.is_finite() {
                    return Err(OptimError::NonFinite(what));
                }
            }
            Ok(())
        };
        for row in &self.equalities {
            check_affine(row, "equality row")?;
        }
        for row in &self.inequalities {
            check_affine(row, "inequality row")?;
        }
        for cone in &self.cones {
            check_affine(&cone.bound, "cone bound")?;
            for a in &cone.vector {
                check_affine(a, "cone entry")?;
            }
        }
        if self.linear.iter().any(|v| !v.is_finite()) || !self.constant.is_finite() {
            return Err(OptimError::NonFinite("objective"));
        }
        for i in 0..n {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return Err(OptimError::Bounds(i));
            }
        }
        self.check_psd()
    }

    /// Eigenvalue check on the principal submatrix of variables that appear
    /// in the quadratic term; all other rows and columns are zero.
    fn check_psd(&self) -> Result<(), OptimError> {
        if self.quadratic.is_empty() {
            return Ok(());
        }
        let mut touched: Vec<usize> = self.quadratic.keys().flat_map(|&(i, j)| [i, j]).collect();
        touched.sort_unstable();
        touched.dedup();
        if let Some(&bad) = touched.iter().find(|&&i| i >= self.n) {
            return Err(OptimError::Index { index: bad, n: self.n });
        }
        let pos = |v: usize| touched.binary_search(&v).unwrap();
        let d = touched.len();
        let mut q = DMatrix::zeros(d, d);
        for (&(i, j), &v) in &self.quadratic {
            if !v.is_finite() {
                return Err(OptimError::NonFinite("quadratic term"));
            }
            q[(pos(i), pos(j))] = v;
            q[(pos(j), pos(i))] = v;
        }
        let eig = SymmetricEigen::new(q).eigenvalues;
        let max_abs = eig.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let min = eig.min();
        if min < -1e-9 * max_abs {
            return Err(OptimError::NotPsd(min));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub max_iter: u32,
    pub time_limit: Option<Duration>,
    /// Relative violation above which a "solved" point is refused.
    pub accept_violation: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            max_iter: 200,
            time_limit: None,
            accept_violation: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConicOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
    Limit { reason: String },
}

impl ConicOutcome {
    pub fn is_optimal(&self) -> bool {
        matches!(self, ConicOutcome::Optimal { .. })
    }
}

fn csc_from_triplets(m: usize, n: usize, i: Vec<usize>, j: Vec<usize>, v: Vec<f64>) -> CscMatrix<f64> {
    // the triplet constructor rejects empty input
    if v.is_empty() {
        CscMatrix::zeros((m, n))
    } else {
        CscMatrix::new_from_triplets(m, n, i, j, v)
    }
}

struct Assembled {
    p: CscMatrix<f64>,
    q: Vec<f64>,
    a: CscMatrix<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

fn assemble(p: &ConicProgram) -> Assembled {
    let n = p.n;
    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for (&(i, j), &v) in &p.quadratic {
        pi.push(i);
        pj.push(j);
        pv.push(2.0 * v);
    }

    let (mut ai, mut aj, mut av) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::new();
    let mut cones = Vec::new();
    let mut push_row = |coeffs: &[(usize, f64)], sign: f64, rhs: f64, b: &mut Vec<f64>| {
        let r = b.len();
        for &(j, v) in coeffs {
            ai.push(r);
            aj.push(j);
            av.push(sign * v);
        }
        b.push(rhs);
    };

    if !p.equalities.is_empty() {
        for row in &p.equalities {
            push_row(&row.coeffs, 1.0, -row.constant, &mut b);
        }
        cones.push(SupportedConeT::ZeroConeT(p.equalities.len()));
    }

    let before = b.len();
    for row in &p.inequalities {
        push_row(&row.coeffs, 1.0, -row.constant, &mut b);
    }
    for i in 0..n {
        if p.upper[i].is_finite() {
            push_row(&[(i, 1.0)], 1.0, p.upper[i], &mut b);
        }
        if p.lower[i].is_finite() {
            push_row(&[(i, -1.0)], 1.0, -p.lower[i], &mut b);
        }
    }
    if b.len() > before {
        cones.push(SupportedConeT::NonnegativeConeT(b.len() - before));
    }

    // s = b - Ax = (bound, vector) in the cone
    for cone in &p.cones {
        push_row(&cone.bound.coeffs, -1.0, cone.bound.constant, &mut b);
        for entry in &cone.vector {
            push_row(&entry.coeffs, -1.0, entry.constant, &mut b);
        }
        cones.push(SupportedConeT::SecondOrderConeT(1 + cone.vector.len()));
    }

    Assembled {
        p: csc_from_triplets(n, n, pi, pj, pv),
        q: p.linear.clone(),
        a: csc_from_triplets(b.len(), n, ai, aj, av),
        b,
        cones,
    }
}

/// Solves a convex conic program. Statuses other than optimal, infeasible
/// and unbounded come back as [`ConicOutcome::Limit`].
pub fn solve_conic(p: &ConicProgram, opts: &SolverOptions) -> Result<ConicOutcome, OptimError> {
    p.validate()?;
    let data = assemble(p);
    let mut builder = DefaultSettingsBuilder::default();
    builder
        .verbose(false)
        .max_iter(opts.max_iter)
        .tol_feas(opts.tol_feas)
        .tol_gap_abs(opts.tol_gap)
        .tol_gap_rel(opts.tol_gap);
    if let Some(limit) = opts.time_limit {
        builder.time_limit(limit.as_secs_f64());
    }
    let settings = builder.build().expect("static solver settings are valid");
    let mut solver = DefaultSolver::new(&data.p, &data.q, &data.a, &data.b, &data.cones, settings);
    solver.solve();
    let sol = &solver.solution;
    let outcome = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            let x = sol.x.clone();
            let viol = p.max_violation(&x);
            if viol <= opts.accept_violation {
                let value = p.objective(&x);
                ConicOutcome::Optimal { x, value }
            } else {
                ConicOutcome::Limit {
                    reason: format!("{:?} with constraint violation {viol:e}", sol.status),
                }
            }
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => ConicOutcome::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => ConicOutcome::Unbounded,
        other => ConicOutcome::Limit {
            reason: format!("{other:?}"),
        },
    };
    Ok(outcome)
}

/// `sum(continuous) + sum(binary) <= rhs` over continuous variables `x` and
/// binaries `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedRow {
    pub continuous: Vec<(usize, f64)>,
    pub binary: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct MixedBinaryFeasibility {
    /// Continuous block; its objective is ignored.
    pub continuous: ConicProgram,
    pub num_binary: usize,
    pub linking: Vec<MixedRow>,
    /// `sum(z) >= min_ones` when set.
    pub min_ones: Option<usize>,
    /// Search for a witness maximizing `sum(z)` instead of stopping at the first one.
    pub maximize_ones: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MixedOutcome {
    Feasible { x: Vec<f64>, z: Vec<bool> },
    Infeasible,
    Limit { nodes: usize },
}

impl MixedBinaryFeasibility {
    pub fn validate(&self) -> Result<(), OptimError> {
        self.continuous.validate()?;
        let nc = self.continuous.num_vars();
        let mut linked = vec![false; self.num_binary];
        for row in &self.linking {
            for &(i, _) in &row.continuous {
                if i >= nc {
                    return Err(OptimError::Index { index: i, n: nc });
                }
            }
            for &(i, v) in &row.binary {
                if i >= self.num_binary {
                    return Err(OptimError::Index { index: i, n: self.num_binary });
                }
                if v != 0.0 {
                    linked[i] = true;
                }
            }
        }
        match linked.iter().position(|&l| !l) {
            Some(i) => Err(OptimError::UnlinkedBinary(i)),
            None => Ok(()),
        }
    }

    /// Relaxation with `z` bounded to `[0,1]` or fixed per `fixed`.
    fn relaxation(&self, fixed: &[Option<bool>]) -> ConicProgram {
        let nc = self.continuous.num_vars();
        let mut p = ConicProgram::new(nc + self.num_binary);
        p.equalities = self.continuous.equalities.clone();
        p.inequalities = self.continuous.inequalities.clone();
        p.cones = self.continuous.cones.clone();
        p.lower[..nc].copy_from_slice(&self.continuous.lower);
        p.upper[..nc].copy_from_slice(&self.continuous.upper);
        for (i, f) in fixed.iter().enumerate() {
            let (lo, hi) = match f {
                Some(true) => (1.0, 1.0),
                Some(false) => (0.0, 0.0),
                None => (0.0, 1.0),
            };
            p.set_bounds(nc + i, lo, hi);
        }
        for row in &self.linking {
            let coeffs = row
                .continuous
                .iter()
                .copied()
                .chain(row.binary.iter().map(|&(i, v)| (nc + i, v)))
                .collect();
            p.add_le(coeffs, row.rhs);
        }
        if let Some(c) = self.min_ones {
            p.add_le((0..self.num_binary).map(|i| (nc + i, -1.0)).collect(), -(c as f64));
        }
        if self.maximize_ones {
            for i in 0..self.num_binary {
                p.linear[nc + i] = -1.0;
            }
        }
        p
    }
}

const INTEGRALITY_TOL: f64 = 1e-6;

/// Depth-first branch-and-bound on the binaries, branching on the most
/// fractional one and exploring the side nearer to its relaxed value first.
///
/// `Infeasible` is returned only after every node has been closed by an
/// infeasible relaxation; a node whose relaxation ends in a solver limit
/// makes the overall answer `Limit` unless a witness turns up elsewhere.
pub fn solve_mixed_binary(
    f: &MixedBinaryFeasibility,
    time_limit: Option<Duration>,
    opts: &SolverOptions,
) -> Result<MixedOutcome, OptimError> {
    f.validate()?;
    let start = Instant::now();
    let nc = f.continuous.num_vars();
    let mut stack: Vec<Vec<Option<bool>>> = vec![vec![None; f.num_binary]];
    let mut nodes = 0usize;
    let mut indeterminate = false;
    let mut best: Option<(Vec<f64>, Vec<bool>, usize)> = None;

    while let Some(fixed) = stack.pop() {
        if time_limit.is_some_and(|limit| start.elapsed() > limit) {
            return Ok(match best {
                Some((x, z, _)) => MixedOutcome::Feasible { x, z },
                None => MixedOutcome::Limit { nodes },
            });
        }
        nodes += 1;
        let x = match solve_conic(&f.relaxation(&fixed), opts)? {
            ConicOutcome::Optimal { x, .. } => x,
            ConicOutcome::Infeasible => continue,
            ConicOutcome::Unbounded | ConicOutcome::Limit { .. } => {
                indeterminate = true;
                continue;
            }
        };
        let z = &x[nc..];
        if f.maximize_ones {
            let relaxed: f64 = z.iter().sum();
            if let Some((_, _, count)) = &best {
                if (relaxed + INTEGRALITY_TOL).floor() as usize <= *count {
                    continue;
                }
            }
        }
        let branch = fixed
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_none())
            .map(|(i, _)| (i, (z[i] - z[i].round()).abs()))
            .filter(|&(_, frac)| frac > INTEGRALITY_TOL)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));

        match branch {
            Some((i, _)) => {
                let near = z[i] >= 0.5;
                let mut far_child = fixed.clone();
                far_child[i] = Some(!near);
                let mut near_child = fixed;
                near_child[i] = Some(near);
                stack.push(far_child);
                stack.push(near_child);
            }
            None => {
                // integral relaxation: confirm with every binary pinned
                let pinned: Vec<Option<bool>> = z.iter().map(|&v| Some(v >= 0.5)).collect();
                match solve_conic(&f.relaxation(&pinned), opts)? {
                    ConicOutcome::Optimal { x, .. } => {
                        let zb: Vec<bool> = pinned.iter().map(|p| p.unwrap()).collect();
                        let count = zb.iter().filter(|&&b| b).count();
                        let witness = x[..nc].to_vec();
                        if !f.maximize_ones {
                            return Ok(MixedOutcome::Feasible { x: witness, z: zb });
                        }
                        if best.as_ref().map_or(true, |b| count > b.2) {
                            best = Some((witness, zb, count));
                        }
                    }
                    ConicOutcome::Infeasible => {
                        // the rounded point lost feasibility; keep exploring
                        // by branching on the first free binary, if any
                        if let Some(i) = fixed.iter().position(|v| v.is_none()) {
                            for side in [false, true] {
                                let mut child = fixed.clone();
                                child[i] = Some(side);
                                stack.push(child);
                            }
                        }
                    }
                    _ => indeterminate = true,
                }
            }
        }
    }

    Ok(match best {
        Some((x, z, _)) => MixedOutcome::Feasible { x, z },
        None if indeterminate => MixedOutcome::Limit { nodes },
        None => MixedOutcome::Infeasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn projection_onto_half_line() {
        let mut p = ConicProgram::new(1);
        p.add_quadratic(0, 0, 1.0);
        p.add_le(vec![(0, -1.0)], -3.0);
        match solve_conic(&p, &opts()).unwrap() {
            ConicOutcome::Optimal { x, value } => {
                assert!((x[0] - 3.0).abs() < 1e-7);
                assert!((value - 9.0).abs() < 1e-6);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_box_is_infeasible() {
        let mut p = ConicProgram::new(1);
        p.add_le(vec![(0, 1.0)], 0.0);
        p.add_le(vec![(0, -1.0)], -1.0);
        assert_eq!(solve_conic(&p, &opts()).unwrap(), ConicOutcome::Infeasible);
    }

    #[test]
    fn unbounded_linear_program() {
        let mut p = ConicProgram::new(1);
        p.linear[0] = -1.0;
        p.add_le(vec![(0, -1.0)], 0.0);
        assert_eq!(solve_conic(&p, &opts()).unwrap(), ConicOutcome::Unbounded);
    }

    #[test]
    fn second_order_cone_constraint() {
        // min x + y  s.t.  ||(x, y)|| <= 1  ->  x = y = -1/sqrt(2)
        let mut p = ConicProgram::new(2);
        p.linear = vec![1.0, 1.0];
        p.cones.push(SecondOrderCone {
            bound: Affine::new(vec![], 1.0),
            vector: vec![Affine::new(vec![(0, 1.0)], 0.0), Affine::new(vec![(1, 1.0)], 0.0)],
        });
        match solve_conic(&p, &opts()).unwrap() {
            ConicOutcome::Optimal { x, value } => {
                let r = -std::f64::consts::FRAC_1_SQRT_2;
                assert!((x[0] - r).abs() < 1e-6 && (x[1] - r).abs() < 1e-6);
                assert!((value + 2f64.sqrt()).abs() < 1e-6);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_indefinite_objective() {
        let mut p = ConicProgram::new(2);
        p.add_quadratic(0, 0, 1.0);
        p.add_quadratic(0, 1, 2.0);
        p.add_quadratic(1, 1, 1.0);
        assert!(matches!(solve_conic(&p, &opts()), Err(OptimError::NotPsd(_))));
    }

    fn two_binary_instance() -> MixedBinaryFeasibility {
        // x in [0, 1]; z0 forced on by x + z0 >= 1.5, z1 forced off by x + z1 <= 1
        let mut cont = ConicProgram::new(1);
        cont.set_bounds(0, 0.0, 1.0);
        MixedBinaryFeasibility {
            continuous: cont,
            num_binary: 2,
            linking: vec![
                MixedRow { continuous: vec![(0, -1.0)], binary: vec![(0, -1.0)], rhs: -1.5 },
                MixedRow { continuous: vec![(0, 1.0)], binary: vec![(1, 1.0)], rhs: 1.0 },
                MixedRow { continuous: vec![(0, -1.0)], binary: vec![(1, 0.0), (0, 0.0)], rhs: -0.6 },
            ],
            min_ones: None,
            maximize_ones: false,
        }
    }

    #[test]
    fn forced_assignment_is_found() {
        match solve_mixed_binary(&two_binary_instance(), None, &opts()).unwrap() {
            MixedOutcome::Feasible { x, z } => {
                assert_eq!(z, vec![true, false]);
                assert!(x[0] >= 0.5 - 1e-7 && x[0] <= 1.0 + 1e-7);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unreachable_cardinality_is_infeasible() {
        let mut f = two_binary_instance();
        f.linking.truncate(2);
        f.min_ones = Some(3);
        assert_eq!(solve_mixed_binary(&f, None, &opts()).unwrap(), MixedOutcome::Infeasible);
    }

    #[test]
    fn integer_infeasible_after_branching() {
        // z0 + z1 == 1 relaxed to 0.5 each, but rows demand both or neither
        let cont = {
            let mut c = ConicProgram::new(1);
            c.set_bounds(0, 0.0, 1.0);
            c
        };
        let f = MixedBinaryFeasibility {
            continuous: cont,
            num_binary: 2,
            linking: vec![
                MixedRow { continuous: vec![], binary: vec![(0, 1.0), (1, 1.0)], rhs: 1.0 },
                MixedRow { continuous: vec![], binary: vec![(0, -1.0), (1, -1.0)], rhs: -1.0 },
                MixedRow { continuous: vec![], binary: vec![(0, 1.0), (1, -1.0)], rhs: 0.0 },
                MixedRow { continuous: vec![], binary: vec![(0, -1.0), (1, 1.0)], rhs: 0.0 },
            ],
            min_ones: None,
            maximize_ones: false,
        };
        assert_eq!(solve_mixed_binary(&f, None, &opts()).unwrap(), MixedOutcome::Infeasible);
    }

    #[test]
    fn maximize_mode_finds_most_ones() {
        let mut f = two_binary_instance();
        f.maximize_ones = true;
        f.linking.remove(1);
        f.linking.push(MixedRow { continuous: vec![(0, 1.0)], binary: vec![(1, 1.0)], rhs: 2.5 });
        match solve_mixed_binary(&f, None, &opts()).unwrap() {
            MixedOutcome::Feasible { z, .. } => assert_eq!(z, vec![true, true]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unlinked_binary_rejected() {
        let mut f = two_binary_instance();
        f.num_binary = 3;
        assert_eq!(f.validate(), Err(OptimError::UnlinkedBinary(2)));
    }
}
