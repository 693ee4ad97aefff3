//! Command-line front end: `certify`, `testsize`, `support`, `solve`, `run`
//! and `gen-scenarios`.
//!
//! Exit codes: 0 on success, 1 on solver or numerical failure, 2 on usage or
//! configuration errors. Files are written atomically and only after every
//! input has been validated.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::certificates::{
    certify_solution, epsilon_bounds, required_test_samples, CertificateError, RiskBoundQuery, TestSizeQuery,
};
use crate::numfmt::sig12;
use crate::plantmodel::{
    condense, draw_scenarios, read_scenarios_csv, steady_input, write_scenarios_csv, ModelError, NetworkConfig,
    Scenario,
};
use crate::sempc::{
    closed_loop, solve_sempc, CertifySettings, ClosedLoopSetup, ClosedLoopTrace, SempcError, SempcProblem,
    SempcStatus,
};
use crate::support::{
    big_g_bound, filter_support_in_p_with, find_support_box, CheckOptions, SupportConfig, SupportError,
    SupportStrategy,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<CertificateError> for CliError {
    fn from(e: CertificateError) -> Self {
        match e {
            CertificateError::Bracketing { .. } => CliError::Failure(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SupportError> for CliError {
    fn from(e: SupportError) -> Self {
        match e {
            SupportError::Config(_)
            | SupportError::Dimension(_)
            | SupportError::Index { .. }
            | SupportError::NoScenarios
            | SupportError::UnboundedBox
            | SupportError::BigGTooSmall { .. } => CliError::Usage(e.to_string()),
            SupportError::TestSize(c) => c.into(),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

impl From<SempcError> for CliError {
    fn from(e: SempcError) -> Self {
        match e {
            SempcError::Invalid(_) | SempcError::Model(_) => CliError::Usage(e.to_string()),
            SempcError::Support(s) => s.into(),
            SempcError::Certificate(c) => c.into(),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "sempc", version, about = "Scenario economic MPC with expected-shortfall caps and risk certificates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Risk bounds for a support count `k` among `m` scenarios.
    Certify(CertifyArgs),
    /// Number of test inputs per round of the support search.
    Testsize(TestsizeArgs),
    /// Support elements on the input box and, optionally, in the feasible set.
    Support(SupportArgs),
    /// One SEMPC solve from the initial state.
    Solve(SolveArgs),
    /// Closed-loop receding-horizon simulation.
    Run(RunArgs),
    /// Draw price scenarios to CSV.
    GenScenarios(GenScenariosArgs),
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub beta: f64,
}

#[derive(Debug, Args)]
pub struct TestsizeArgs {
    #[arg(long)]
    pub mu: f64,
    #[arg(long)]
    pub rho: f64,
    #[arg(long)]
    pub beta_bar: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NetworkArgs {
    /// Network configuration JSON.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Bundled network: richmond-like, three-tank or single-tank.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub tariff_low: Option<f64>,
    #[arg(long)]
    pub tariff_high: Option<f64>,
    #[arg(long)]
    pub noise_width: Option<f64>,
    /// Multiplies every average demand.
    #[arg(long)]
    pub demand_scale: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProblemArgs {
    /// Prediction horizon in hours.
    #[arg(long, default_value_t = 30)]
    pub horizon: usize,
    #[arg(long, default_value_t = 2000)]
    pub n_s: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hour of day of the first prediction step.
    #[arg(long, default_value_t = 0)]
    pub start_hour: usize,
    /// Scenario CSV used instead of drawing scenarios.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ControlArgs {
    /// Cap on the expected shortfall of the energy cost; uncapped when absent.
    #[arg(long)]
    pub ees_cap: Option<f64>,
    /// Input-increment weight `r`, applied as `R = r I`.
    #[arg(long, default_value_t = 0.0)]
    pub r: f64,
    #[arg(long, default_value_t = 0.0)]
    pub terminal_weight: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum StrategyArg {
    Auto,
    Enumerate,
    BranchAndBound,
}

impl From<StrategyArg> for SupportStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Auto => SupportStrategy::Auto,
            StrategyArg::Enumerate => SupportStrategy::Enumerate,
            StrategyArg::BranchAndBound => SupportStrategy::BranchAndBound,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SearchArgs {
    #[arg(long, default_value_t = 3000)]
    pub n_r: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub mu: f64,
    /// Defaults to `mu / 2`.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = 1e-5)]
    pub beta_bar: f64,
    /// Overrides the test size derived from `mu`, `rho` and `beta_bar`.
    #[arg(long)]
    pub n_t: Option<usize>,
    /// Confidence parameter of the risk bounds.
    #[arg(long, default_value_t = 1e-6)]
    pub beta: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_rounds: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Auto)]
    pub strategy: StrategyArg,
}

impl SearchArgs {
    fn rho(&self) -> f64 {
        self.rho.unwrap_or(self.mu / 2.0)
    }

    fn n_t(&self) -> Result<usize, CliError> {
        match self.n_t {
            Some(n) => Ok(n),
            None => {
                let n = required_test_samples(&TestSizeQuery::new(self.mu, self.rho(), self.beta_bar)?)?;
                usize::try_from(n).map_err(|_| CliError::Usage(format!("test size {n} is too large")))
            }
        }
    }

    fn support_config(&self, k: usize, seed: u64) -> Result<SupportConfig, CliError> {
        let mut cfg = SupportConfig::new(self.n_r, self.n_t()?, k, self.mu, self.rho(), seed)?;
        cfg.max_rounds = self.max_rounds;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SupportArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Also filter the candidates down to the MPC feasible set.
    #[arg(long)]
    pub in_p: bool,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub control: ControlArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub control: ControlArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Number of closed-loop steps.
    #[arg(long, default_value_t = 24)]
    pub steps: usize,
    /// Certify every step from its support count.
    #[arg(long)]
    pub certify_each_step: bool,
    /// Count support in the feasible set rather than on the input box.
    #[arg(long)]
    pub in_p: bool,
    /// Also solve every step without the cap, from the same state.
    #[arg(long)]
    pub compare_uncapped: bool,
    /// Trace CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Metadata JSON; defaults to the trace path with a `.json` extension.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Plot-series CSV.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenScenariosArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[arg(long, default_value_t = 30)]
    pub horizon: usize,
    #[arg(long, default_value_t = 2000)]
    pub n_s: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub start_hour: usize,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Every run-level parameter, validated before any computation; its hash
/// identifies a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub source: String,
    pub horizon: usize,
    pub n_s: usize,
    pub k: usize,
    /// `None` is an uncapped run.
    pub ees_cap: Option<f64>,
    pub r: f64,
    pub terminal_weight: f64,
    pub beta: f64,
    pub mu: f64,
    pub rho: f64,
    pub beta_bar: f64,
    pub n_r: usize,
    pub n_t: Option<usize>,
    pub seed: u64,
    pub steps: usize,
    pub certify_each_step: bool,
    pub support_in_p: bool,
    pub compare_uncapped: bool,
    pub emit_plot_data: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.horizon == 0 {
            return Err(CliError::Usage("horizon must be at least 1".into()));
        }
        if self.n_s == 0 {
            return Err(CliError::Usage("n-s must be at least 1".into()));
        }
        if self.k == 0 || self.k > self.n_s {
            return Err(CliError::Usage(format!("k = {} must lie in 1..={}", self.k, self.n_s)));
        }
        if let Some(m) = self.ees_cap {
            if !(m > 0.0 && m.is_finite()) {
                return Err(CliError::Usage(format!("ees-cap {m} must be positive and finite")));
            }
        }
        if !(self.r >= 0.0 && self.r.is_finite() && self.terminal_weight >= 0.0 && self.terminal_weight.is_finite()) {
            return Err(CliError::Usage("r and terminal-weight must be nonnegative".into()));
        }
        if self.certify_each_step {
            RiskBoundQuery::new(self.n_s, self.k, self.beta)?;
            SupportConfig::new(self.n_r, self.n_t.unwrap_or(1), self.k, self.mu, self.rho, self.seed)?;
            TestSizeQuery::new(self.mu, self.rho, self.beta_bar)?;
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("run config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn load_network(args: &NetworkArgs) -> Result<(NetworkConfig, String), CliError> {
    let (mut cfg, source) = match (&args.config, &args.preset) {
        (Some(path), _) => {
            if !path.is_file() {
                return Err(CliError::Usage(format!("config file {} not found", path.display())));
            }
            (NetworkConfig::load(path)?, path.display().to_string())
        }
        (None, Some(name)) => (
            NetworkConfig::preset(name).ok_or_else(|| CliError::Usage(format!("unknown preset {name:?}")))?,
            format!("preset:{name}"),
        ),
        (None, None) => return Err(CliError::Usage("one of --config or --preset is required".into())),
    };
    if let Some(v) = args.tariff_low {
        cfg.tariff.low = v;
    }
    if let Some(v) = args.tariff_high {
        cfg.tariff.high = v;
    }
    if let Some(v) = args.noise_width {
        cfg.tariff.noise_width = v;
    }
    if let Some(s) = args.demand_scale {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(CliError::Usage(format!("demand scale {s} must be nonnegative")));
        }
        cfg.d_bar.iter_mut().for_each(|d| *d *= s);
    }
    // re-validate after overrides
    let cfg = NetworkConfig::from_json(&cfg.to_json())?;
    Ok((cfg, source))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)
        .map_err(|e| CliError::Usage(format!("cannot write to {}: {e}", dir.display())))?;
    tmp.write_all(bytes).map_err(failure)?;
    tmp.persist(path).map_err(|e| failure(e.error))?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}").and_then(|_| stdout.flush()) {
                // a closed reader (`| head`) is not an error of ours
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(failure(e)),
                _ => Ok(()),
            }
        }
    }
}

/// Scenarios from the CSV in `problem`, or drawn from the tariff.
fn scenarios_for(cfg: &NetworkConfig, problem: &ProblemArgs, inputs: usize) -> Result<Vec<Scenario>, CliError> {
    match &problem.scenarios {
        Some(path) => {
            let file = std::fs::File::open(path)
                .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
            let (s, n, m) = read_scenarios_csv(file)?;
            if (n, m) != (problem.horizon, inputs) {
                return Err(CliError::Usage(format!(
                    "scenario file covers {n} steps x {m} inputs, expected {} x {inputs}",
                    problem.horizon
                )));
            }
            Ok(s)
        }
        None => {
            let tariff = cfg.tariff(problem.seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
            Ok(draw_scenarios(&tariff, problem.start_hour, problem.horizon, inputs, problem.n_s, &mut rng))
        }
    }
}

fn check_problem_args(p: &ProblemArgs) -> Result<(), CliError> {
    if p.horizon == 0 {
        return Err(CliError::Usage("horizon must be at least 1".into()));
    }
    if p.n_s == 0 || p.k == 0 || p.k > p.n_s {
        return Err(CliError::Usage(format!("need 1 <= k <= n-s, got k = {}, n-s = {}", p.k, p.n_s)));
    }
    Ok(())
}

fn cmd_certify(a: &CertifyArgs) -> Result<String, CliError> {
    let cert = epsilon_bounds(&RiskBoundQuery::new(a.m, a.k, a.beta)?)?;
    Ok(serde_json::to_string_pretty(&cert).map_err(failure)?)
}

fn cmd_testsize(a: &TestsizeArgs) -> Result<String, CliError> {
    Ok(required_test_samples(&TestSizeQuery::new(a.mu, a.rho, a.beta_bar)?)?.to_string())
}

fn cmd_support(a: &SupportArgs) -> Result<(), CliError> {
    let (cfg, _) = load_network(&a.network)?;
    check_problem_args(&a.problem)?;
    let sys = cfg.system()?;
    let cons = cfg.constraints()?;
    let scfg = a.search.support_config(a.problem.k, a.problem.seed)?;
    RiskBoundQuery::new(a.problem.n_s, 0, a.search.beta)?;
    let scenarios = scenarios_for(&cfg, &a.problem, sys.inputs())?;
    if a.problem.k > scenarios.len() {
        return Err(CliError::Usage(format!("k = {} exceeds the {} scenarios", a.problem.k, scenarios.len())));
    }
    let demands = cfg.demand()?.window(a.problem.start_hour, a.problem.horizon);
    let fs = condense(&sys, &cons, &cfg.initial_state()?, &demands, a.problem.horizon)?;

    let found = find_support_box(&scenarios, &scfg, &fs.u_box)?;
    let s_box = found.indices.len();
    let in_p = if a.in_p {
        let g = big_g_bound(&scenarios, &fs.u_box)?;
        let opts = CheckOptions {
            strategy: a.search.strategy.into(),
            ..CheckOptions::default()
        };
        Some(filter_support_in_p_with(&found.indices, &scenarios, &fs, a.problem.k, g, &opts)?)
    } else {
        None
    };
    let s_star = in_p.as_ref().map_or(s_box, Vec::len);
    let cert = certify_solution(s_star, scenarios.len(), a.search.beta)?;
    let out = json!({
        "I_k": found.indices,
        "s_box": s_box,
        "s_P": in_p.as_ref().map(Vec::len),
        "I_k_P": in_p,
        "p_hat": found.p_hat,
        "rounds": found.rounds,
        "N_T": scfg.n_t,
        "N_T_used": found.samples_used - scfg.n_r,
        "N_s": scenarios.len(),
        "k": a.problem.k,
        "eps_lo": cert.eps_lo,
        "eps_hi": cert.eps_hi,
        "support_claim": "heuristic",
    });
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&out).map_err(failure)?)
}

fn cmd_solve(a: &SolveArgs) -> Result<(), CliError> {
    let (cfg, _) = load_network(&a.network)?;
    check_problem_args(&a.problem)?;
    let sys = cfg.system()?;
    let cons = cfg.constraints()?;
    let m = sys.inputs();
    let demand = cfg.demand()?;
    let scenarios = scenarios_for(&cfg, &a.problem, m)?;
    let problem = SempcProblem {
        u_prev: steady_input(&sys, &cons, demand.d_bar()).unwrap_or_else(|| DVector::zeros(m)),
        demands: demand.window(a.problem.start_hour, a.problem.horizon),
        x0: cfg.initial_state()?,
        horizon: a.problem.horizon,
        r: DMatrix::identity(m, m) * a.control.r,
        terminal_weight: a.control.terminal_weight,
        k: a.problem.k,
        ees_cap: a.control.ees_cap.unwrap_or(f64::INFINITY),
        scenarios,
        system: sys,
        cons,
    };
    problem.validate()?;
    let sol = solve_sempc(&problem)?;
    let out = json!({
        "status": sol.status,
        "objective": sol.objective,
        "energy_cost": sol.energy_cost,
        "ees": sol.ees_value,
        "ees_bound": sol.is_solved().then(|| sol.ees_bound(problem.k)),
        "ees_cap": a.control.ees_cap,
        "t_bar": sol.t_bar,
        "top_k": sol.top_k,
        "u_tilde": sol.u_tilde.as_slice(),
        "x_traj": sol.x_traj.iter().map(|x| x.as_slice().to_vec()).collect::<Vec<_>>(),
        "diagnostics": sol.diagnostics,
    });
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&out).map_err(failure)?)?;
    if sol.status == SempcStatus::Optimal {
        Ok(())
    } else {
        Err(CliError::Failure(format!("solve ended with status {}", sol.status.as_str())))
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map(sig12).unwrap_or_default()
}

fn opt_int(v: Option<usize>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per closed-loop step.
pub fn trace_csv(trace: &ClosedLoopTrace, states: usize, inputs: usize) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = vec!["t".into(), "status".into()];
    header.extend((0..states).map(|i| format!("x_{i}")));
    header.extend((0..inputs).map(|j| format!("u_{j}")));
    for h in [
        "objective",
        "energy_cost",
        "ees",
        "s_box",
        "s_p",
        "eps_lo",
        "eps_hi",
        "uncapped_status",
        "uncapped_objective",
        "uncapped_energy_cost",
        "uncapped_ees",
    ] {
        header.push(h.into());
    }
    w.write_record(&header).map_err(failure)?;
    for r in &trace.records {
        let mut row = vec![r.t.to_string(), r.status.as_str().to_string()];
        row.extend(r.x.iter().map(|&v| sig12(v)));
        row.extend(r.u_applied.iter().map(|&v| sig12(v)));
        let solved = matches!(r.status, SempcStatus::Optimal | SempcStatus::Softened);
        let num = |v: f64| if solved { sig12(v) } else { String::new() };
        row.push(num(r.objective));
        row.push(num(r.energy_cost));
        row.push(num(r.ees_value));
        row.push(opt_int(r.s_box));
        row.push(opt_int(r.s_p));
        row.push(opt_num(r.eps_lo));
        row.push(opt_num(r.eps_hi));
        row.push(r.uncapped_status.map(|s| s.as_str().to_string()).unwrap_or_default());
        let twin_ok = r.uncapped_status == Some(SempcStatus::Optimal);
        let twin = |v: Option<f64>| if twin_ok { opt_num(v) } else { String::new() };
        row.push(twin(r.uncapped_objective));
        row.push(twin(r.uncapped_energy_cost));
        row.push(twin(r.uncapped_ees));
        w.write_record(&row).map_err(failure)?;
    }
    w.into_inner().map_err(|e| failure(e.error()))
}

/// State, input, average cost and EES series, with and without the cap.
fn plot_csv(trace: &ClosedLoopTrace, states: usize, inputs: usize, cap: Option<f64>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((0..states).map(|i| format!("x_{i}")));
    header.extend((0..inputs).map(|j| format!("u_{j}")));
    for h in ["avg_cost", "ees", "ees_cap", "avg_cost_uncapped", "ees_uncapped"] {
        header.push(h.into());
    }
    w.write_record(&header).map_err(failure)?;
    for r in &trace.records {
        let solved = matches!(r.status, SempcStatus::Optimal | SempcStatus::Softened);
        let mut row = vec![r.t.to_string()];
        row.extend(r.x.iter().map(|&v| sig12(v)));
        row.extend(r.u_applied.iter().map(|&v| sig12(v)));
        row.push(if solved { sig12(r.energy_cost) } else { String::new() });
        row.push(if solved { sig12(r.ees_value) } else { String::new() });
        row.push(opt_num(cap));
        let twin_ok = r.uncapped_status == Some(SempcStatus::Optimal);
        row.push(if twin_ok { opt_num(r.uncapped_energy_cost) } else { String::new() });
        row.push(if twin_ok { opt_num(r.uncapped_ees) } else { String::new() });
        w.write_record(&row).map_err(failure)?;
    }
    w.into_inner().map_err(|e| failure(e.error()))
}

fn cmd_run(a: &RunArgs) -> Result<(), CliError> {
    let (network, source) = load_network(&a.network)?;
    let rc = RunConfig {
        network: network.clone(),
        source,
        horizon: a.problem.horizon,
        n_s: a.problem.n_s,
        k: a.problem.k,
        ees_cap: a.control.ees_cap,
        r: a.control.r,
        terminal_weight: a.control.terminal_weight,
        beta: a.search.beta,
        mu: a.search.mu,
        rho: a.search.rho(),
        beta_bar: a.search.beta_bar,
        n_r: a.search.n_r,
        n_t: a.search.n_t,
        seed: a.problem.seed,
        steps: a.steps,
        certify_each_step: a.certify_each_step,
        support_in_p: a.in_p,
        compare_uncapped: a.compare_uncapped,
        emit_plot_data: a.plot_data.is_some(),
    };
    rc.validate()?;
    if a.problem.scenarios.is_some() {
        return Err(CliError::Usage("run draws fresh scenarios every step; --scenarios is not accepted".into()));
    }
    let sys = network.system()?;
    let (n, m) = (sys.states(), sys.inputs());
    let certify = if a.certify_each_step {
        Some(CertifySettings {
            n_r: rc.n_r,
            n_t: a.search.n_t()?,
            mu: rc.mu,
            rho: rc.rho,
            beta: rc.beta,
            in_p: rc.support_in_p,
            strategy: a.search.strategy.into(),
            max_rounds: a.search.max_rounds,
        })
    } else {
        None
    };
    let setup = ClosedLoopSetup {
        cons: network.constraints()?,
        demand: network.demand()?,
        tariff: network.tariff(rc.seed)?,
        horizon: rc.horizon,
        n_s: rc.n_s,
        k: rc.k,
        ees_cap: rc.ees_cap.unwrap_or(f64::INFINITY),
        r: DMatrix::identity(m, m) * rc.r,
        terminal_weight: rc.terminal_weight,
        x0: network.initial_state()?,
        u_prev: None,
        steps: rc.steps,
        certify,
        compare_uncapped: rc.compare_uncapped,
        system: sys,
    };
    let meta_path = a.meta.clone().unwrap_or_else(|| a.out.with_extension("json"));

    let trace = closed_loop(&setup)?;
    let meta = json!({
        "seed": trace.seed,
        "config_hash": rc.hash(),
        "source": rc.source,
        "parameters": rc,
        "steps": trace.records.len(),
        "final_state": trace.final_state,
        "support_claim": if rc.certify_each_step { Some("heuristic") } else { None },
    });
    let csv = trace_csv(&trace, n, m)?;
    let plot = match &a.plot_data {
        Some(_) => Some(plot_csv(&trace, n, m, rc.ees_cap)?),
        None => None,
    };
    write_atomic(&a.out, &csv)?;
    write_atomic(&meta_path, serde_json::to_string_pretty(&meta).map_err(failure)?.as_bytes())?;
    if let (Some(path), Some(bytes)) = (&a.plot_data, plot) {
        write_atomic(path, &bytes)?;
    }
    Ok(())
}

fn cmd_gen_scenarios(a: &GenScenariosArgs) -> Result<(), CliError> {
    let (cfg, _) = load_network(&a.network)?;
    if a.horizon == 0 || a.n_s == 0 {
        return Err(CliError::Usage("horizon and n-s must be at least 1".into()));
    }
    let m = cfg.system()?.inputs();
    let tariff = cfg.tariff(a.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let scenarios = draw_scenarios(&tariff, a.start_hour, a.horizon, m, a.n_s, &mut rng);
    let mut buf = Vec::new();
    write_scenarios_csv(&mut buf, &scenarios, a.horizon, m)?;
    match &a.out {
        Some(p) => write_atomic(p, &buf),
        None => std::io::stdout().write_all(&buf).map_err(failure),
    }
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("SEMPC_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("SEMPC_THREADS must be a positive integer, got {v:?}")))?;
        // a pool built earlier in the same process keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    configure_threads()?;
    match &cli.command {
        Command::Certify(a) => emit(None, &cmd_certify(a)?),
        Command::Testsize(a) => emit(None, &cmd_testsize(a)?),
        Command::Support(a) => cmd_support(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Run(a) => cmd_run(a),
        Command::GenScenarios(a) => cmd_gen_scenarios(a),
    }
}

/// Parses `args` and runs the command, reporting errors on stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
