//! Command-line front end: `solve`, `verify` and `convergence`.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 solver
//! non-convergence (including excessive censoring), 3 verification failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bsde::{corrupt_with_bump, horizon_truncation, martingale_residual};
use crate::config::{Problem, RunConfig};
use crate::error::{Error, Result};
use crate::green::kernel_for;
use crate::grid::{SolutionField, UniformGrid};
use crate::process::{sample_path, write_path_dump, HorizonPolicy, SimConfig};
use crate::regularity::{default_test_measures, duality_check, energy_estimate_check, l1_estimate_check, ENERGY_TOL};
use crate::solver::{picard_solve, solution_grid, MeasureTermMode, SolveReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

const DUMP_PATHS: u64 = 16;

#[derive(Debug, Parser)]
#[command(name = "fkmeasure", version, about = "Feynman–Kac solver for semilinear equations with measure data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub grid: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write `paths.csv` with a few sample paths from the probe point.
    #[arg(long)]
    pub dump_paths: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve and write `solution.csv` and `report.json`.
    Solve(Common),
    /// Run a-posteriori checks on a solution.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of l1, energy, duality, martingale, horizon.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        checks: Vec<Check>,
        /// Existing `solution.csv`; defaults to the one in the output directory.
        #[arg(long, conflicts_with = "solve_inline")]
        solution: Option<PathBuf>,
        /// Solve first instead of reading a solution file.
        #[arg(long)]
        solve_inline: bool,
    },
    /// Re-solve along a ladder of one parameter.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        ladder: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    L1,
    Energy,
    Duality,
    Martingale,
    Horizon,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Dt,
    Paths,
    Grid,
    Horizon,
    Epsilon,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::Dt => "dt",
            Axis::Paths => "paths",
            Axis::Grid => "grid",
            Axis::Horizon => "horizon",
            Axis::Epsilon => "epsilon",
        }
    }
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NotConverged { .. } | Error::HorizonTooSmall { .. } => EXIT_SOLVER,
            _ => EXIT_INPUT,
        };
        Failure { code, message: e.to_string() }
    }
}

type CmdResult = std::result::Result<i32, Failure>;

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let threads = match &cli.command {
        Command::Solve(c) | Command::Verify { common: c, .. } | Command::Convergence { common: c, .. } => c.threads,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_INPUT;
        }
    };
    let outcome = pool.install(|| match cli.command {
        Command::Solve(c) => solve_cmd(&c),
        Command::Verify { common, checks, solution, solve_inline } => {
            verify_cmd(&common, &checks, solution.as_deref(), solve_inline)
        }
        Command::Convergence { common, axis, ladder } => convergence_cmd(&common, axis, &ladder),
    });
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message.replace('\n', " "));
            f.code
        }
    }
}

fn load(common: &Common) -> Result<Problem> {
    let cfg = RunConfig::load(&common.config)?;
    let mut cfg_problem = cfg.problem()?;
    if let Some(s) = common.seed {
        cfg_problem.sim.seed = s;
    }
    if let Some(p) = common.paths {
        cfg_problem.sim.paths = p;
    }
    if let Some(dt) = common.dt {
        cfg_problem.sim.dt = dt;
    }
    if let Some(g) = common.grid {
        cfg_problem.picard.grid = g;
    }
    if let Some(o) = &common.out {
        cfg_problem.out_dir = o.clone();
    }
    cfg_problem.sim.validate()?;
    cfg_problem.picard.validate()?;
    Ok(cfg_problem)
}

fn fmt_row(vals: &[f64]) -> String {
    vals.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// `x1..xd,u,stderr`, one row per grid node in grid order.
pub fn solution_csv(u: &SolutionField, stderr: &[f64]) -> String {
    let d = u.dim();
    let mut s = (1..=d).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",");
    s.push_str(",u,stderr\n");
    for i in 0..u.grid.len() {
        let mut row = u.grid.node(i);
        row.push(u.values[i]);
        row.push(stderr[i]);
        s.push_str(&fmt_row(&row));
        s.push('\n');
    }
    s
}

/// Read a `solution.csv` back onto the grid of `problem`.
pub fn read_solution(path: &Path, problem: &Problem) -> Result<(SolutionField, Vec<f64>)> {
    let grid = solver_grid(problem)?;
    let mut rdr = csv::Reader::from_path(path)?;
    let d = problem.domain.dim();
    let mut values = Vec::with_capacity(grid.len());
    let mut stderr = Vec::with_capacity(grid.len());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let nums: Vec<f64> = rec
            .iter()
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        if nums.len() != d + 2 || i >= grid.len() {
            return Err(Error::InvalidArgument(format!("{} does not match the configured grid", path.display())));
        }
        let node = grid.node(i);
        if node.iter().zip(&nums[..d]).any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + a.abs())) {
            return Err(Error::InvalidArgument(format!("{}: row {} is off the configured grid", path.display(), i + 1)));
        }
        values.push(nums[d]);
        stderr.push(nums[d + 1]);
    }
    if values.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "{} has {} rows, the configured grid has {}",
            path.display(),
            values.len(),
            grid.len()
        )));
    }
    Ok((SolutionField::new(problem.domain.clone(), grid, values)?, stderr))
}

fn solver_grid(problem: &Problem) -> Result<UniformGrid> {
    solution_grid(&problem.spec, &problem.domain, &problem.picard)
}

#[derive(Serialize)]
struct RunSummary<'a> {
    operator: &'static str,
    dim: usize,
    seed: u64,
    paths: usize,
    dt: f64,
    max_horizon: f64,
    grid: usize,
    probe: Vec<f64>,
    u_probe: f64,
    stderr_probe: f64,
    solve: &'a SolveReport,
}

fn solve(problem: &Problem) -> Result<(SolutionField, SolveReport)> {
    picard_solve(&problem.spec, &problem.domain, &problem.f, &problem.mu, &problem.sim, &problem.picard)
}

fn at_probe(u: &SolutionField, stderr: &[f64], x: &[f64]) -> (f64, f64) {
    let mut se = 0.0;
    u.grid.for_each_corner(x, |i, w| se += w * stderr[i]);
    (u.eval(x), se)
}

fn write_solution(problem: &Problem, u: &SolutionField, rep: &SolveReport) -> Result<()> {
    let dir = &problem.out_dir;
    write_text(&dir.join("solution.csv"), &solution_csv(u, &rep.stderr))?;
    let probe = problem.probe();
    let (u_probe, stderr_probe) = at_probe(u, &rep.stderr, &probe);
    let summary = RunSummary {
        operator: problem.spec.name(),
        dim: problem.domain.dim(),
        seed: problem.sim.seed,
        paths: problem.sim.paths,
        dt: problem.sim.dt,
        max_horizon: problem.sim.max_horizon,
        grid: problem.picard.grid,
        probe,
        u_probe,
        stderr_probe,
        solve: rep,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_text(&dir.join("report.json"), &(json + "\n"))
}

fn dump_paths(problem: &Problem) -> Result<()> {
    let x0 = problem.probe();
    let paths = (0..DUMP_PATHS)
        .map(|i| Ok((i, sample_path(&problem.spec, &problem.domain, &x0, &problem.sim, i)?)))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&problem.out_dir)?;
    let file = fs::File::create(problem.out_dir.join("paths.csv"))?;
    write_path_dump(std::io::BufWriter::new(file), &paths)
}

fn solve_cmd(common: &Common) -> CmdResult {
    let problem = load(common)?;
    if common.dump_paths {
        dump_paths(&problem)?;
    }
    let (u, rep) = solve(&problem)?;
    write_solution(&problem, &u, &rep)?;
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
    let (v, se) = at_probe(&u, &rep.stderr, &problem.probe());
    println!(
        "converged in {} iterations; u({}) = {v} ± {se}",
        rep.iterations,
        fmt_row(&problem.probe())
    );
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct CheckOutcome {
    check: Check,
    pass: bool,
    detail: serde_json::Value,
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn verify_cmd(common: &Common, checks: &[Check], solution: Option<&Path>, solve_inline: bool) -> CmdResult {
    let problem = load(common)?;
    if checks.is_empty() {
        eprintln!("warning: no checks selected; nothing to verify");
        return Ok(EXIT_OK);
    }
    let dir = problem.out_dir.clone();
    let needs_solution = checks.iter().any(|c| *c != Check::Horizon);
    let loaded = if !needs_solution {
        None
    } else if solve_inline {
        let (u, rep) = solve(&problem)?;
        write_solution(&problem, &u, &rep)?;
        Some((u, rep.stderr))
    } else {
        let path = solution.map(Path::to_path_buf).unwrap_or_else(|| dir.join("solution.csv"));
        if !path.exists() {
            return Err(Failure {
                code: EXIT_INPUT,
                message: format!("solution file {} not found; run solve first or pass --solve-inline", path.display()),
            });
        }
        Some(read_solution(&path, &problem)?)
    };
    let x0 = problem.probe();
    let reference = problem.spec.reference_measure()?;
    let mut outcomes = Vec::new();
    let mut seen = Vec::new();
    for &check in checks {
        if seen.contains(&check) {
            continue;
        }
        seen.push(check);
        let outcome = match check {
            Check::L1 => {
                let (u, se) = loaded.as_ref().expect("solution loaded");
                let r = l1_estimate_check(u, se, &problem.f, &problem.mu, &reference)?;
                write_text(
                    &dir.join("l1.csv"),
                    &format!(
                        "l1_f_u,l1_f0,tv_mu,bound,tolerance,pass\n{},{}\n",
                        fmt_row(&[r.l1_f_u, r.l1_f0, r.tv_mu.unwrap_or(f64::INFINITY), r.bound, r.tolerance]),
                        r.pass
                    ),
                )?;
                CheckOutcome { check, pass: r.pass, detail: json(&r) }
            }
            Check::Energy => {
                let (u, _) = loaded.as_ref().expect("solution loaded");
                let top = u.sup_norm();
                let ks = problem.verify.k_values.clone().unwrap_or_else(|| vec![top, top / 2.0, top / 4.0]);
                let tol = problem.verify.energy_tolerance.unwrap_or(ENERGY_TOL);
                let r = energy_estimate_check(u, &problem.spec, &problem.f, &problem.mu, &ks, tol)?;
                let mut s = String::from("k,energy,bound,pass\n");
                for i in 0..r.k_values.len() {
                    s.push_str(&format!("{},{}\n", fmt_row(&[r.k_values[i], r.energies[i], r.bounds[i]]), r.row_pass[i]));
                }
                write_text(&dir.join("energy.csv"), &s)?;
                CheckOutcome { check, pass: r.pass, detail: json(&r) }
            }
            Check::Duality => {
                let (u, se) = loaded.as_ref().expect("solution loaded");
                let kernel = kernel_for(&problem.spec, &problem.domain).ok_or_else(|| {
                    Error::NoKernel(format!("duality check needs an exact kernel for the {} operator", problem.spec.name()))
                })?;
                let r = duality_check(u, se, &problem.f, &problem.mu, &kernel, &default_test_measures(&problem.domain))?;
                for w in &r.warnings {
                    eprintln!("warning: {w}");
                }
                let mut s = String::from("nu_id,lhs,rhs,residual\n");
                for row in &r.rows {
                    s.push_str(&format!("{},{}\n", row.nu_id, fmt_row(&[row.lhs, row.rhs, row.residual])));
                }
                write_text(&dir.join("duality.csv"), &s)?;
                CheckOutcome { check, pass: r.pass, detail: json(&r) }
            }
            Check::Martingale => {
                let (u, se) = loaded.as_ref().expect("solution loaded");
                let se_max = se.iter().fold(0.0f64, |m, v| m.max(*v));
                let corrupted;
                let u = match problem.verify.corrupt_bump {
                    Some(a) => {
                        corrupted = corrupt_with_bump(u, &x0, a);
                        &corrupted
                    }
                    None => u,
                };
                let r = martingale_residual(
                    u,
                    &problem.spec,
                    &problem.domain,
                    &x0,
                    &problem.f,
                    &problem.mu,
                    &problem.sim,
                    problem.verify.checkpoints.as_deref(),
                    problem.picard.epsilon,
                )?;
                let mut s = String::from("t,mean,stderr\n");
                for i in 0..r.checkpoint_times.len() {
                    s.push_str(&fmt_row(&[r.checkpoint_times[i], r.ensemble_means[i], r.stderr[i]]));
                    s.push('\n');
                }
                write_text(&dir.join("martingale.csv"), &s)?;
                CheckOutcome { check, pass: r.pass_with_solution_error(se_max), detail: json(&r) }
            }
            Check::Horizon => {
                let ladder = problem.verify.horizons.clone().unwrap_or_else(|| {
                    (0..5).map(|j| problem.sim.max_horizon * 2f64.powi(j - 4)).collect()
                });
                let r = horizon_truncation(
                    &problem.spec,
                    &problem.domain,
                    &x0,
                    &problem.f,
                    &problem.mu,
                    &ladder,
                    &problem.sim,
                    &problem.picard,
                )?;
                let mut s = String::from("horizon,value,stderr\n");
                for g in &r.rungs {
                    s.push_str(&fmt_row(&[g.horizon, g.value, g.stderr]));
                    s.push('\n');
                }
                write_text(&dir.join("horizon.csv"), &s)?;
                CheckOutcome { check, pass: r.monotone && r.stabilized, detail: json(&r) }
            }
        };
        println!("{}: {}", json(&outcome.check).as_str().unwrap_or("?"), if outcome.pass { "pass" } else { "FAIL" });
        outcomes.push(outcome);
    }
    let text = serde_json::to_string_pretty(&outcomes).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_text(&dir.join("verify.json"), &(text + "\n"))?;
    Ok(if outcomes.iter().all(|o| o.pass) { EXIT_OK } else { EXIT_VERIFY })
}

fn convergence_cmd(common: &Common, axis: Axis, ladder: &[f64]) -> CmdResult {
    let base = load(common)?;
    let increasing = ladder.windows(2).all(|w| w[0] < w[1]);
    let decreasing = ladder.windows(2).all(|w| w[0] > w[1]);
    if ladder.len() < 2 || !(increasing || decreasing) {
        return Err(Failure { code: EXIT_INPUT, message: "ladder must have at least two strictly monotone values".into() });
    }
    let x0 = base.probe();
    let mut rows = Vec::with_capacity(ladder.len());
    for &v in ladder {
        let mut p = base.clone();
        let as_count = |what: &str| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidArgument(format!("{what} ladder values must be positive integers, got {v}")))
            }
        };
        match axis {
            Axis::Dt => p.sim.dt = v,
            Axis::Paths => p.sim.paths = as_count("paths")?,
            Axis::Grid => p.picard.grid = as_count("grid")?,
            Axis::Horizon => {
                p.sim = SimConfig { max_horizon: v, horizon_policy: HorizonPolicy::Truncate, ..p.sim };
                p.picard.measure_term = MeasureTermMode::Pathwise;
            }
            Axis::Epsilon => {
                p.picard.epsilon = Some(v);
                p.picard.measure_term = MeasureTermMode::Pathwise;
            }
        }
        p.sim.validate()?;
        p.picard.validate()?;
        let (u, rep) = solve(&p)?;
        let (est, se) = at_probe(&u, &rep.stderr, &x0);
        println!("{} = {v}: {est} ± {se}", axis.name());
        rows.push([v, est, se]);
    }
    let mut s = String::from("axis_value,estimate,stderr\n");
    for r in &rows {
        s.push_str(&fmt_row(r));
        s.push('\n');
    }
    write_text(&base.out_dir.join("convergence.csv"), &s)?;
    let (a, b) = (rows[rows.len() - 2], rows[rows.len() - 1]);
    let agree = (a[1] - b[1]).abs() <= 3.0 * (a[2] * a[2] + b[2] * b[2]).sqrt() + 1e-12 * a[1].abs().max(b[1].abs());
    if !agree {
        eprintln!("last two rungs differ by {} (3 combined stderr: {})", (a[1] - b[1]).abs(), 3.0 * (a[2] * a[2] + b[2] * b[2]).sqrt());
    }
    Ok(if agree { EXIT_OK } else { EXIT_VERIFY })
}
