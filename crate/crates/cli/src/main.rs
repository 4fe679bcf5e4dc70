//! `kelly-riskcal`: solve risk-constrained Kelly problems from market files.
//!
//! Exit status: 0 success, 1 unreadable input or bad arguments, 2 model
//! errors (invalid market, wrong regime, no usable prefix), 3 convergence
//! failures.

// Negated comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kelly_riskcal::crra::{find_prefix, solve_kelly, solve_unconstrained_crra, PrefixOutcome, SolverParams};
use kelly_riskcal::fairbench::{fair_constrained_solve, fair_feasibility, fair_kelly, fair_kelly_risk};
use kelly_riskcal::logcal::{calibrate_with, kelly_risk, solve_log, CalibrationResult, Tolerances};
use kelly_riskcal::market::{sort_market, validate, Allocation, Market, Regime, SortedMarket};
use kelly_riskcal::oracle::{audit_kkt, solve_detailed, MIN_RESOLUTION, SUPPORT_TOL};
use kelly_riskcal::{par, Error};
use log::info;
use serde::Deserialize;

use report::{fmt10, fmt4, Field, Report};

/// Fixed column prefix of `sweep` CSV output; stake columns `x_1..x_n` follow.
const SWEEP_COLUMNS: [&str; 6] = ["lambda", "binding", "s_star", "c", "risk", "objective"];

#[derive(Parser, Debug)]
#[command(name = "kelly-riskcal", version, about = "Risk-constrained Kelly betting with state prices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Constrained logarithmic optimum (overround or fair markets)
    Solve(Solve),
    /// Unconstrained Kelly allocation and its risk
    Kelly(Solve),
    /// Unconstrained CRRA optimum
    Crra(Solve),
    /// Constrained logarithmic optimum over a grid of lambda values
    Sweep(Sweep),
    /// Brute-force enumeration solver
    Oracle(Oracle),
    /// KKT audit of an allocation
    Audit(Audit),
    /// Regime and prefix diagnosis
    Classify(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Market JSON file: {"p": [...], "q": [...], "labels": [...]}
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write to this file instead of stdout
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Tol {
    /// Outer calibration tolerance on R(s) - 1
    #[arg(long, value_name = "X")]
    tol_outer: Option<f64>,
    /// Relative residual tolerance of the inner scalar solves
    #[arg(long, value_name = "X")]
    tol_inner: Option<f64>,
}

#[derive(Args, Debug)]
struct Solve {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[command(flatten)]
    tol: Tol,
}

#[derive(Args, Debug)]
struct Sweep {
    #[command(flatten)]
    common: Common,
    /// Comma-separated lambda values
    #[arg(long, value_delimiter = ',', required = true, value_name = "A,B,C")]
    lambda_grid: Vec<f64>,
    #[command(flatten)]
    tol: Tol,
}

#[derive(Args, Debug)]
struct Oracle {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Grid resolution of the sanity search
    #[arg(long, default_value_t = MIN_RESOLUTION, value_name = "N")]
    resolution: usize,
}

#[derive(Args, Debug)]
struct Audit {
    #[command(flatten)]
    common: Common,
    /// Overrides the allocation's gamma
    #[arg(long)]
    gamma: Option<f64>,
    /// Overrides the allocation's lambda
    #[arg(long, conflicts_with = "unconstrained")]
    lambda: Option<f64>,
    /// Audit without the risk constraint
    #[arg(long)]
    unconstrained: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Deserialize, Debug)]
struct MarketFile {
    p: Vec<f64>,
    q: Vec<f64>,
    #[serde(default)]
    labels: Option<Vec<String>>,
    #[serde(default)]
    allocation: Option<AllocationFile>,
}

#[derive(Deserialize, Debug)]
struct AllocationFile {
    cash: f64,
    stakes: Vec<f64>,
    #[serde(default)]
    gamma: Option<f64>,
    #[serde(default)]
    lambda: Option<f64>,
}

#[derive(Debug)]
enum Failure {
    Parse(String),
    Model(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        Failure::Model(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Parse(_) => 1,
            Failure::Model(e) if e.is_convergence() => 3,
            Failure::Model(_) => 2,
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

struct Input {
    market: Market,
    labels: Option<Vec<String>>,
    allocation: Option<AllocationFile>,
}

fn read_input(path: &Path) -> Outcome<Input> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))?;
    let file: MarketFile =
        serde_json::from_str(&text).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))?;
    if let Some(labels) = &file.labels {
        if labels.len() != file.p.len() {
            return Err(Failure::Parse(format!(
                "{} labels for {} outcomes",
                labels.len(),
                file.p.len()
            )));
        }
    }
    let market = validate(&file.p, &file.q)?;
    info!("read {} outcomes from {}", market.len(), path.display());
    Ok(Input {
        market,
        labels: file.labels,
        allocation: file.allocation,
    })
}

fn tolerances(t: &Tol) -> Outcome<Tolerances> {
    let mut tol = Tolerances::default();
    for (name, value, slot) in [("--tol-outer", t.tol_outer, &mut tol.outer), ("--tol-inner", t.tol_inner, &mut tol.inner)] {
        if let Some(v) = value {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Failure::Parse(format!("{name} must be positive, got {v}")));
            }
            *slot = v;
        }
    }
    Ok(tol)
}

fn header(r: &mut Report, command: &'static str, input: &Input) {
    r.add("command", "command", command);
    r.add("regime", "regime", input.market.regime().to_string());
    r.add("n", "n", input.market.len());
    if let Some(labels) = &input.labels {
        r.add("labels", "labels", Field::Texts(labels.clone()));
    }
    r.add("p", "p", input.market.probabilities().to_vec());
    r.add("q", "q", input.market.prices().to_vec());
}

fn allocation_report(a: &Allocation) -> Report {
    let mut r = Report::new();
    r.add("c", "cash", a.cash)
        .add("x", "stakes", a.stakes.clone())
        .add("W", "wealth", a.wealth.clone())
        .add("objective", "objective", a.objective)
        .add("risk", "risk", a.risk)
        .add("gamma", "gamma", a.gamma)
        .add("lambda", "lambda", a.lambda);
    r
}

fn require_overround(sm: &SortedMarket) -> Outcome<()> {
    match sm.regime() {
        Regime::Overround => Ok(()),
        _ => Err(Error::NotOverround {
            price_sum: sm.market().price_sum(),
        }
        .into()),
    }
}

fn reject_subfair(sm: &SortedMarket) -> Outcome<()> {
    if sm.regime() == Regime::Subfair {
        return Err(Failure::Model(Error::PreconditionViolated(format!(
            "subfair market (price sum {}): solver not applicable",
            sm.market().price_sum()
        ))));
    }
    Ok(())
}

fn run_solve(args: &Solve) -> Outcome<Report> {
    if args.gamma != 1.0 {
        return Err(Failure::Model(Error::InvalidParameter {
            name: "gamma",
            value: args.gamma,
            reason: "solve calibrates logarithmic utility only; use oracle for other gamma",
        }));
    }
    let input = read_input(&args.common.input)?;
    let tol = tolerances(&args.tol)?;
    let sm = sort_market(&input.market);
    reject_subfair(&sm)?;
    let mut r = Report::new();
    header(&mut r, "solve", &input);
    r.add("lambda", "lambda", args.lambda);

    if sm.regime() == Regime::Fair {
        let (alloc, eta, nu, r0, binding) = solve_fair(&sm, args.lambda)?;
        r.add("k*", "k_star", input.market.len())
            .add("tau*", "tau_star", Field::Missing)
            .add("R(0)", "r0", r0)
            .add("binding", "binding", binding)
            .add("s*", "s_star", Field::Missing)
            .add("c*", "cash", alloc.cash)
            .add("x*", "stakes", alloc.stakes.clone())
            .add("W*", "wealth", alloc.wealth.clone())
            .add("eta*", "eta_star", eta)
            .add("nu*", "nu_star", nu)
            .add("objective", "objective", alloc.objective)
            .add("risk", "risk", alloc.risk)
            .add("allocation", "allocation", Field::JsonOnly(allocation_report(&alloc)));
        return Ok(r);
    }

    let sol = solve_log(&sm, args.lambda, &tol)?;
    let res = &sol.result;
    let a = &res.allocation;
    match &sol.prefix {
        Some(sel) => r.add("k*", "k_star", sel.k_star).add("tau*", "tau_star", sel.tau_star),
        None => r.add("k*", "k_star", 0usize).add("tau*", "tau_star", Field::Missing),
    };
    r.add("R(0)", "r0", res.r0)
        .add("binding", "binding", res.binding)
        .add("s*", "s_star", res.s_star)
        .add("c*", "cash", a.cash)
        .add("x*", "stakes", a.stakes.clone())
        .add("W*", "wealth", a.wealth.clone())
        .add("eta*", "eta_star", res.eta_star)
        .add("nu*", "nu_star", res.nu_star)
        .add("objective", "objective", a.objective)
        .add("risk", "risk", a.risk)
        .add("allocation", "allocation", Field::JsonOnly(allocation_report(a)));
    Ok(r)
}

/// Fair markets: Kelly when feasible, otherwise the interior benchmark.
/// Returns the allocation, `eta`, `nu`, the Kelly risk and the binding flag.
fn solve_fair(sm: &SortedMarket, lambda: f64) -> Outcome<(Allocation, f64, f64, f64, bool)> {
    let m = sm.market();
    let r0 = fair_kelly_risk(sm, lambda)?;
    if fair_feasibility(sm, lambda)? {
        let stakes = fair_kelly(sm)?.iter().zip(m.prices()).map(|(w, q)| w * q).collect();
        return Ok((Allocation::evaluate(m, 0.0, stakes, 1.0, lambda), 0.0, 1.0, r0, false));
    }
    let sol = fair_constrained_solve(sm, lambda)?;
    Ok((sol.allocation(m, lambda), sol.eta, sol.nu, r0, true))
}

fn run_kelly(args: &Solve) -> Outcome<Report> {
    let input = read_input(&args.common.input)?;
    let sm = sort_market(&input.market);
    reject_subfair(&sm)?;
    let mut r = Report::new();
    header(&mut r, "kelly", &input);
    r.add("lambda", "lambda", args.lambda);
    let alloc = if sm.regime() == Regime::Fair {
        let stakes = fair_kelly(&sm)?.iter().zip(input.market.prices()).map(|(w, q)| w * q).collect();
        r.add("k*", "k_star", input.market.len()).add("tau*", "tau_star", Field::Missing);
        Allocation::evaluate(&input.market, 0.0, stakes, 1.0, args.lambda)
    } else {
        match find_prefix(&sm)? {
            PrefixOutcome::Active(sel) => {
                r.add("k*", "k_star", sel.k_star).add("tau*", "tau_star", sel.tau_star);
                let a = solve_kelly(&sel, &sm, args.lambda);
                debug_assert!((a.risk - kelly_risk(&sel, args.lambda)).abs() < 1e-9);
                a
            }
            PrefixOutcome::AllCash => {
                r.add("k*", "k_star", 0usize).add("tau*", "tau_star", Field::Missing);
                Allocation::evaluate(&input.market, 1.0, vec![0.0; input.market.len()], 1.0, args.lambda)
            }
        }
    };
    r.add("c", "cash", alloc.cash)
        .add("x", "stakes", alloc.stakes.clone())
        .add("W", "wealth", alloc.wealth.clone())
        .add("objective", "objective", alloc.objective)
        .add("risk", "risk", alloc.risk)
        .add("feasible", "feasible", alloc.risk <= 1.0 + 1e-12)
        .add("allocation", "allocation", Field::JsonOnly(allocation_report(&alloc)));
    Ok(r)
}

fn run_crra(args: &Solve) -> Outcome<Report> {
    let input = read_input(&args.common.input)?;
    let sm = sort_market(&input.market);
    require_overround(&sm)?;
    let params = SolverParams::new(args.gamma, args.lambda)?;
    let mut r = Report::new();
    header(&mut r, "crra", &input);
    r.add("gamma", "gamma", args.gamma);
    let alloc = match find_prefix(&sm)? {
        PrefixOutcome::Active(sel) => {
            r.add("k*", "k_star", sel.k_star).add("tau*", "tau_star", sel.tau_star);
            solve_unconstrained_crra(&sel, &sm, params)
        }
        PrefixOutcome::AllCash => {
            r.add("k*", "k_star", 0usize).add("tau*", "tau_star", Field::Missing);
            Allocation::evaluate(&input.market, 1.0, vec![0.0; input.market.len()], args.gamma, args.lambda)
        }
    };
    r.add("c", "cash", alloc.cash)
        .add("x", "stakes", alloc.stakes.clone())
        .add("W", "wealth", alloc.wealth.clone())
        .add("objective", "objective", alloc.objective)
        .add("risk", "risk", alloc.risk)
        .add("allocation", "allocation", Field::JsonOnly(allocation_report(&alloc)));
    Ok(r)
}

fn run_sweep(args: &Sweep) -> Outcome<String> {
    let input = read_input(&args.common.input)?;
    let tol = tolerances(&args.tol)?;
    let sm = sort_market(&input.market);
    require_overround(&sm)?;
    let rows: Vec<CalibrationResult> = match find_prefix(&sm)? {
        PrefixOutcome::Active(sel) => par::map(&args.lambda_grid, |&l| calibrate_with(&sel, &sm, l, &tol))
            .into_iter()
            .collect::<kelly_riskcal::Result<_>>()?,
        PrefixOutcome::AllCash => args
            .lambda_grid
            .iter()
            .map(|&l| solve_log(&sm, l, &tol).map(|s| s.result))
            .collect::<kelly_riskcal::Result<_>>()?,
    };
    let n = input.market.len();
    Ok(match args.common.format {
        Format::Csv => {
            let mut out = sweep_header(n).join(",");
            out.push('\n');
            for row in &rows {
                out.push_str(&sweep_cells(row, fmt10).join(","));
                out.push('\n');
            }
            out
        }
        Format::Text => {
            let head = sweep_header(n);
            let body: Vec<Vec<String>> = rows.iter().map(|row| sweep_cells(row, fmt4)).collect();
            let widths: Vec<usize> = (0..head.len())
                .map(|j| body.iter().map(|b| b[j].len()).chain([head[j].len()]).max().unwrap_or(0))
                .collect();
            let line = |cells: &[String]| {
                let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
                padded.join("  ") + "\n"
            };
            let mut out = line(&head);
            for b in &body {
                out.push_str(&line(b));
            }
            out
        }
        Format::Json => {
            let items: Vec<serde_json::Value> = rows
                .iter()
                .map(|row| {
                    let mut r = Report::new();
                    r.add("lambda", "lambda", row.lambda)
                        .add("binding", "binding", row.binding)
                        .add("s_star", "s_star", row.s_star)
                        .add("c", "c", row.allocation.cash)
                        .add("risk", "risk", row.allocation.risk)
                        .add("objective", "objective", row.allocation.objective)
                        .add("x", "stakes", row.allocation.stakes.clone());
                    r.to_json()
                })
                .collect();
            let mut r = Report::new();
            header(&mut r, "sweep", &input);
            let mut doc = r.to_json();
            doc["rows"] = serde_json::Value::Array(items);
            pretty(&doc)
        }
    })
}

fn sweep_header(n: usize) -> Vec<String> {
    SWEEP_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((1..=n).map(|i| format!("x_{i}")))
        .collect()
}

fn sweep_cells(row: &CalibrationResult, num: fn(f64) -> String) -> Vec<String> {
    let a = &row.allocation;
    [num(row.lambda), row.binding.to_string(), num(row.s_star), num(a.cash), num(a.risk), num(a.objective)]
        .into_iter()
        .chain(a.stakes.iter().map(|&x| num(x)))
        .collect()
}

fn run_oracle(args: &Oracle) -> Outcome<Report> {
    let input = read_input(&args.common.input)?;
    let sol = solve_detailed(&input.market, args.gamma, args.lambda, args.resolution)?;
    let a = &sol.allocation;
    let mut r = Report::new();
    header(&mut r, "oracle", &input);
    let support: Vec<String> = a.support(SUPPORT_TOL).iter().map(|i| (i + 1).to_string()).collect();
    r.add("gamma", "gamma", args.gamma)
        .add("lambda", "lambda", args.lambda)
        .add("resolution", "resolution", args.resolution)
        .add("support", "support", Field::Texts(support))
        .add("c", "cash", a.cash)
        .add("x", "stakes", a.stakes.clone())
        .add("W", "wealth", a.wealth.clone())
        .add("eta", "eta", sol.eta)
        .add("nu", "nu", sol.nu)
        .add("objective", "objective", a.objective)
        .add("risk", "risk", a.risk)
        .add("allocation", "allocation", Field::JsonOnly(allocation_report(a)));
    Ok(r)
}

fn run_audit(args: &Audit) -> Outcome<Report> {
    let input = read_input(&args.common.input)?;
    let Some(file) = &input.allocation else {
        return Err(Failure::Parse("input has no \"allocation\" object".into()));
    };
    let n = input.market.len();
    if file.stakes.len() != n {
        return Err(Failure::Parse(format!("{} stakes for {n} outcomes", file.stakes.len())));
    }
    let gamma = args.gamma.or(file.gamma).unwrap_or(1.0);
    let lambda = if args.unconstrained { None } else { args.lambda.or(file.lambda) };
    let alloc = Allocation::evaluate(&input.market, file.cash, file.stakes.clone(), gamma, lambda.unwrap_or(1.0));
    if alloc.wealth.iter().any(|&w| !(w > 0.0)) {
        return Err(Failure::Model(Error::NonPositiveWealth {
            index: alloc.wealth.iter().position(|&w| !(w > 0.0)).unwrap_or(0),
            value: alloc.wealth.iter().cloned().fold(f64::INFINITY, f64::min),
        }));
    }
    let k = audit_kkt(&input.market, gamma, lambda, &alloc);
    let mut r = Report::new();
    header(&mut r, "audit", &input);
    r.add("gamma", "gamma", gamma)
        .add("lambda", "lambda", lambda)
        .add("status", "status", if k.pass { "PASS" } else { "FAIL" })
        .add("feasible", "feasible", k.feasible)
        .add("risk", "risk", k.risk)
        .add("budget residual", "budget_residual", k.budget_residual)
        .add("max residual", "max_residual", Field::Text(format!("{:.3e}", k.max_residual)))
        .add("nu", "nu", k.nu)
        .add("eta", "eta", k.eta)
        .add("rho", "rho", k.rho)
        .add("mu", "mu", k.mu.clone())
        .add("stationarity", "stationarity_residuals", k.stationarity_residuals.clone())
        .add("complementarity", "complementarity_residuals", k.complementarity_residuals.clone());
    Ok(r)
}

fn run_classify(args: &Common) -> Outcome<Report> {
    let input = read_input(&args.input)?;
    let sm = sort_market(&input.market);
    let regime = sm.regime();
    let mut r = Report::new();
    match regime {
        Regime::Subfair => {
            r.add("regime", "regime", "Subfair — solver not applicable; see documentation");
        }
        Regime::Fair => {
            r.add("regime", "regime", "Fair (full-support benchmark; solve dispatches to it)");
        }
        Regime::Overround => {
            r.add("regime", "regime", "Overround");
        }
    }
    r.add("price sum", "price_sum", input.market.price_sum());
    let order: Vec<String> = sm.perm().iter().map(|i| (i + 1).to_string()).collect();
    r.add("order", "order", Field::Texts(order))
        .add("L", "ratios", sm.ratios().to_vec())
        .add("tau", "tau", Field::MaybeNums(sm.tau().to_vec()));
    if regime == Regime::Overround {
        let diagnosis = match find_prefix(&sm) {
            Ok(PrefixOutcome::Active(sel)) => {
                r.add("k*", "k_star", sel.k_star).add("tau*", "tau_star", sel.tau_star);
                format!("unique active prefix of length {}", sel.k_star)
            }
            Ok(PrefixOutcome::AllCash) => {
                r.add("k*", "k_star", 0usize);
                "no likelihood ratio exceeds one: hold cash".to_string()
            }
            Err(e) => e.to_string(),
        };
        r.add("prefix", "prefix", diagnosis);
    }
    Ok(r)
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

fn render(r: &Report, format: Format) -> Outcome<String> {
    match format {
        Format::Text => Ok(r.to_text()),
        Format::Json => Ok(pretty(&r.to_json())),
        Format::Csv => Err(Failure::Parse("csv output is only available for sweep".into())),
    }
}

fn run(cli: &Cli) -> Outcome<(String, Option<PathBuf>)> {
    let (text, common) = match &cli.command {
        Command::Solve(a) => (render(&run_solve(a)?, a.common.format)?, &a.common),
        Command::Kelly(a) => (render(&run_kelly(a)?, a.common.format)?, &a.common),
        Command::Crra(a) => (render(&run_crra(a)?, a.common.format)?, &a.common),
        Command::Sweep(a) => (run_sweep(a)?, &a.common),
        Command::Oracle(a) => (render(&run_oracle(a)?, a.common.format)?, &a.common),
        Command::Audit(a) => (render(&run_audit(a)?, a.common.format)?, &a.common),
        Command::Classify(a) => (render(&run_classify(a)?, a.format)?, a),
    };
    Ok((text, common.output.clone()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KELLY_RISKCAL_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok((text, None)) => {
            let mut out = std::io::stdout().lock();
            if out.write_all(text.as_bytes()).is_err() {
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Ok((text, Some(path))) => match fs::write(&path, text) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                ExitCode::from(1)
            }
        },
        Err(f) => {
            match &f {
                Failure::Parse(msg) => eprintln!("error: {msg}"),
                Failure::Model(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}
