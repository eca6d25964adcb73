//! `metabandit`: experiments, bound tables, ϑ estimates and invariant checks.
//!
//! Exit codes: 0 success, 1 failed invariant, 2 invalid configuration or
//! violated precondition, 3 runtime failure.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use metabandit::env::UniformContexts;
use metabandit::harness::config::{ExperimentConfig, ExperimentKind};
use metabandit::harness::output::{format_sig, read_summary, read_trace};
use metabandit::harness::stats::sign_test;
use metabandit::harness::{draw_model, run_experiment, run_generalization, RunOptions};
use metabandit::linalg;
use metabandit::parallel::ExecMode;
use metabandit::rng::SeedTree;
use metabandit::theory::{
    bound_constants, check_generalization_threshold, concentration_radius, estimate_vartheta,
    theorem_terms, BoundInputs, BoundKind, VarthetaMode, MIN_MC_SAMPLES,
};
use metabandit::verify::{run_verification, CheckKind, Fault, VerifyConfig};
use metabandit::{AgentKind, Error};

#[derive(Parser)]
#[command(name = "metabandit", version, about = "Meta-learned Thompson sampling simulator")]
struct Cli {
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write trace and summary CSVs.
    Run(RunArgs),
    /// Print u₁…u₅ and both regret bounds.
    Bounds(BoundsArgs),
    /// Compute the context-richness constant ϑ for one task.
    Vartheta(VarthetaArgs),
    /// Run the invariant suite.
    Verify(VerifyArgs),
    /// Summarize a summary CSV, with paired sign tests when a trace is given.
    Report(ReportArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment config. Defaults of `--experiment` are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment to run when no config file is given.
    #[arg(long, value_parser = parse_experiment)]
    experiment: Option<ExperimentKind>,
    /// Overrides the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    normalize_contexts: bool,
    #[arg(long)]
    shared_contexts: bool,
    /// Comma-separated agent names, e.g. `oracle_ts,meta_tslb`.
    #[arg(long, value_delimiter = ',', value_parser = parse_agent)]
    agents: Option<Vec<AgentKind>>,
    /// Harness thread-pool size.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write hashes of every environment draw.
    #[arg(long)]
    environment_log: bool,
    /// Run on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct BoundsArgs {
    /// JSON object with every bound input; replaces the flags below.
    #[arg(long)]
    inputs: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 0.2)]
    v: f64,
    #[arg(long, default_value_t = 0.045)]
    delta: f64,
    /// Smallest eigenvalue of Σ_*⁻¹.
    #[arg(long, default_value_t = 0.5)]
    lambda_min: f64,
    /// Largest eigenvalue of Σ_*⁻¹.
    #[arg(long, default_value_t = 4.0)]
    lambda_max: f64,
    #[arg(long, default_value_t = 3.0)]
    lambda_max_sigma_q: f64,
    #[arg(long, default_value_t = 0.7)]
    mu_q_norm: f64,
    #[arg(long, default_value_t = 0.01)]
    vartheta: f64,
    /// Also print the concentration radius after this many tasks.
    #[arg(long)]
    tasks_seen: Option<usize>,
}

#[derive(Args)]
struct VarthetaArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long, default_value_t = 0)]
    run: usize,
    #[arg(long, default_value_t = 1)]
    task: usize,
    /// Rounds considered; the config's `n` when absent.
    #[arg(long)]
    rounds: Option<usize>,
    /// Window length Δ; defaults to d, the shortest window that can span ℝ^d.
    #[arg(long)]
    window: Option<usize>,
    /// Estimate by sampling this many arm sequences per window.
    #[arg(long)]
    monte_carlo: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = VerifyConfig::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = VerifyConfig::default().trajectories)]
    trajectories: usize,
    #[arg(long, default_value_t = VerifyConfig::default().n)]
    n: usize,
    #[arg(long, default_value_t = VerifyConfig::default().meta_runs)]
    meta_runs: usize,
    /// Comma-separated checks; all when absent. An empty list is an error.
    #[arg(long, value_delimiter = ',')]
    checks: Option<Vec<String>>,
    #[arg(long, value_parser = parse_fault)]
    fault: Option<Fault>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    summary: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn parse_experiment(s: &str) -> Result<ExperimentKind, String> {
    serde_json::from_value(json!(s)).map_err(|_| {
        format!("unknown experiment '{s}' (linear, finite_priors, infinite_arms, sequential, generalization)")
    })
}

fn parse_agent(s: &str) -> Result<AgentKind, String> {
    AgentKind::parse(s.trim()).ok_or_else(|| {
        let names: Vec<_> = AgentKind::ALL.iter().map(|a| a.as_str()).collect();
        format!("unknown agent '{s}' (expected one of {})", names.join(", "))
    })
}

fn parse_fault(s: &str) -> Result<Fault, String> {
    Fault::parse(s).ok_or_else(|| format!("unknown fault '{s}' (expected skip-symmetrize)"))
}

/// A command's failure together with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Precondition(_) | Error::InvalidBelief(_) => 2,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn invariant_failure(message: String) -> Failure {
    Failure { code: 1, message }
}

type CmdResult = Result<(), Failure>;

fn load_config(args: &ExperimentArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::for_experiment(args.experiment.unwrap_or_default()),
    };
    if let (Some(_), Some(kind)) = (&args.config, args.experiment) {
        if kind != cfg.experiment {
            return Err(Error::Config(format!(
                "--experiment {kind:?} conflicts with the config's experiment {:?}",
                cfg.experiment
            )));
        }
    }
    if let Some(seed) = args.seed {
        cfg.root_seed = seed;
    }
    cfg.normalize_contexts |= args.normalize_contexts;
    cfg.shared_contexts |= args.shared_contexts;
    if let Some(agents) = &args.agents {
        cfg.agents = agents.clone();
    }
    if args.threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("JSON values always serialize"));
}

fn cmd_run(args: &RunArgs, as_json: bool) -> CmdResult {
    let cfg = load_config(&args.exp)?;
    let opts = RunOptions {
        mode: if args.sequential { ExecMode::Sequential } else { ExecMode::Parallel },
        threads: args.exp.threads,
        environment_log: args.environment_log,
    };
    let mut tables = Vec::new();
    let files = if cfg.experiment == ExperimentKind::Generalization {
        let out = run_generalization(&cfg, &opts)?;
        tables.push(("phase1".to_string(), final_rows(&out.phase_one)));
        for (norm, phase) in out.norms.iter().zip(&out.phase_two) {
            tables.push((format!("eps_{}", format_sig(*norm)), final_rows(phase)));
        }
        out.write(&args.out)?
    } else {
        let out = run_experiment(&cfg, &opts)?;
        tables.push(("final".to_string(), final_rows(&out)));
        out.write(&args.out, "")?
    };
    if as_json {
        let tables: serde_json::Map<_, _> = tables
            .iter()
            .map(|(name, rows)| {
                let rows: Vec<_> = rows
                    .iter()
                    .map(|(a, mean, se)| json!({"agent": a.as_str(), "mean_cumulative_regret": mean, "stderr": se}))
                    .collect();
                (name.clone(), json!(rows))
            })
            .collect();
        print_json(&json!({
            "experiment": cfg.experiment,
            "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "final": tables,
        }));
    } else {
        for (name, rows) in &tables {
            println!("[{name}] cumulative regret after task {}", cfg.m);
            println!("{:<12} {:>16} {:>12}", "agent", "mean", "stderr");
            for (a, mean, se) in rows {
                println!("{:<12} {:>16} {:>12}", a.as_str(), format_sig(*mean), format_sig(*se));
            }
        }
        for f in &files {
            println!("wrote {}", f.display());
        }
    }
    Ok(())
}

fn final_rows(out: &metabandit::harness::ExperimentOutput) -> Vec<(AgentKind, f64, f64)> {
    out.agents
        .iter()
        .filter_map(|&a| {
            let last = out.summary.iter().filter(|r| r.agent == a).max_by_key(|r| r.task)?;
            Some((a, last.mean_cumulative_regret, last.stderr))
        })
        .collect()
}

fn cmd_bounds(args: &BoundsArgs, as_json: bool) -> CmdResult {
    let inputs = match &args.inputs {
        Some(path) => {
            let file = File::open(path)
                .map_err(|e| Error::Config(format!("cannot read bound inputs {}: {e}", path.display())))?;
            serde_json::from_reader(BufReader::new(file))
                .map_err(|e| Error::Config(format!("invalid bound inputs {}: {e}", path.display())))?
        }
        None => BoundInputs {
            m: args.m,
            n: args.n,
            k: args.k,
            d: args.d,
            v: args.v,
            delta: args.delta,
            lambda_min: args.lambda_min,
            lambda_max: args.lambda_max,
            lambda_max_sigma_q: args.lambda_max_sigma_q,
            mu_q_norm: args.mu_q_norm,
            vartheta: args.vartheta,
        },
    };
    let u = bound_constants(&inputs)?;
    let tslb = theorem_terms(&inputs, BoundKind::MetaTslb)?;
    let ts = theorem_terms(&inputs, BoundKind::MetaTs)?;
    let threshold = if inputs.m >= 2 {
        Some(check_generalization_threshold(&inputs)?)
    } else {
        None
    };
    let radius = match args.tasks_seen {
        Some(s) => Some((
            s,
            concentration_radius(&inputs, s, BoundKind::MetaTslb)?,
            concentration_radius(&inputs, s, BoundKind::MetaTs)?,
        )),
        None => None,
    };
    if as_json {
        let mut obj = json!({
            "inputs": inputs,
            "eigenvalue_condition_floor": inputs.contraction_floor(),
            "constants": u,
            "meta_tslb": {"terms": tslb, "rhs": tslb.total()},
            "meta_ts": {"terms": ts, "rhs": ts.total()},
            "generalization_threshold": threshold,
        });
        if let Some((s, a, b)) = radius {
            obj["concentration_radius"] = json!({"tasks_seen": s, "meta_tslb": a, "meta_ts": b});
        }
        print_json(&obj);
    } else {
        println!("{:<10} {:>20}", "constant", "value");
        for (name, x) in [("u1", u.u1), ("u2", u.u2), ("u3", u.u3), ("u4", u.u4), ("u5", u.u5)] {
            println!("{:<10} {:>20}", name, format_sig(x));
        }
        println!();
        println!(
            "{:<10} {:>16} {:>16} {:>16} {:>16} {:>16}",
            "agent", "exploration", "tail", "learning", "mismatch", "rhs"
        );
        for (name, t) in [("meta_tslb", tslb), ("meta_ts", ts)] {
            println!(
                "{:<10} {:>16} {:>16} {:>16} {:>16} {:>16}",
                name,
                format_sig(t.exploration),
                format_sig(t.tail),
                format_sig(t.learning),
                format_sig(t.mismatch),
                format_sig(t.total())
            );
        }
        if let Some(th) = threshold {
            println!("\ngeneralization threshold  {}", format_sig(th));
        }
        if let Some((s, a, b)) = radius {
            println!("concentration radius after {s} tasks  meta_tslb {}  meta_ts {}", format_sig(a), format_sig(b));
        }
    }
    Ok(())
}

fn cmd_vartheta(args: &VarthetaArgs, as_json: bool) -> CmdResult {
    let cfg = load_config(&args.exp)?;
    if !matches!(cfg.experiment, ExperimentKind::Linear | ExperimentKind::Generalization) {
        return Err(Error::Config("ϑ is computed for finite-armed linear contexts only".into()).into());
    }
    if args.task == 0 || args.task > cfg.m || args.run >= cfg.runs {
        return Err(Error::Config(format!(
            "run {} / task {} outside the config's {} runs of {} tasks",
            args.run, args.task, cfg.runs, cfg.m
        ))
        .into());
    }
    let tree = SeedTree::new(cfg.root_seed);
    let model = draw_model(&cfg, tree, args.run)?;
    let b1 = linalg::spd_inverse(model.instance_prior.cov_core(), "Σ_*")?;
    let contexts = UniformContexts {
        tree,
        run: args.run,
        k: cfg.k,
        d: cfg.d,
        low: cfg.context_low,
        high: cfg.context_high,
        normalize: cfg.normalize_contexts,
        shared: cfg.shared_contexts,
    };
    let mode = match args.monte_carlo {
        Some(samples) if samples < MIN_MC_SAMPLES => {
            return Err(Error::Config(format!("--monte-carlo needs at least {MIN_MC_SAMPLES} samples")).into())
        }
        Some(samples) => VarthetaMode::MonteCarlo {
            samples,
            seed: cfg.root_seed,
        },
        None => VarthetaMode::Exact,
    };
    let exec = ExecMode::Parallel;
    let n = args.rounds.unwrap_or(cfg.n);
    let window = args.window.unwrap_or(cfg.d);
    let params = estimate_vartheta(&contexts, args.task, n, window, &b1, mode, exec)?;
    if as_json {
        print_json(&json!({"run": args.run, "task": args.task, "rounds": n, "params": params}));
    } else {
        println!("window          {}", params.window);
        println!("rho_min         {}", format_sig(params.rho_min));
        println!("lambda_min(B1)  {}", format_sig(params.lambda_min_b1));
        match params.vartheta {
            Some(v) => println!("vartheta        {}{}", format_sig(v), if params.estimated { " (estimated)" } else { "" }),
            None => println!("vartheta        undefined (rank-deficient window)"),
        }
    }
    Ok(())
}

fn cmd_verify(args: &VerifyArgs, as_json: bool) -> CmdResult {
    let checks = match &args.checks {
        None => CheckKind::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| CheckKind::parse(s).ok_or_else(|| Error::Config(format!("unknown check '{s}'"))))
            .collect::<Result<Vec<_>, _>>()?,
    };
    let cfg = VerifyConfig {
        seed: args.seed,
        trajectories: args.trajectories,
        n: args.n,
        meta_runs: args.meta_runs,
        checks,
        fault: args.fault,
        ..VerifyConfig::default()
    };
    let report = run_verification(&cfg)?;
    if as_json {
        print_json(&json!({"all_passed": report.all_passed(), "report": report}));
    } else {
        println!("{:<22} {:<6} {:>14} {:>7} {:>7}  detail", "check", "result", "worst slack", "cases", "skipped");
        for c in &report.checks {
            println!(
                "{:<22} {:<6} {:>14.6e} {:>7} {:>7}  {}",
                c.check.as_str(),
                if c.passed { "PASS" } else { "FAIL" },
                c.worst_slack,
                c.cases,
                c.skipped,
                c.detail
            );
        }
    }
    if report.all_passed() {
        Ok(())
    } else {
        let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).map(|c| c.check.as_str()).collect();
        Err(invariant_failure(format!("failed invariants: {}", failed.join(", "))))
    }
}

fn open(path: &Path) -> Result<File, Error> {
    File::open(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn cmd_report(args: &ReportArgs, as_json: bool) -> CmdResult {
    let summary = read_summary(BufReader::new(open(&args.summary)?))?;
    let mut last: BTreeMap<AgentKind, (usize, f64, f64)> = BTreeMap::new();
    for r in &summary {
        let e = last.entry(r.agent).or_insert((0, 0.0, 0.0));
        if r.task >= e.0 {
            *e = (r.task, r.mean_cumulative_regret, r.stderr);
        }
    }
    let order: Vec<AgentKind> = AgentKind::ALL.into_iter().filter(|a| last.contains_key(a)).collect();

    let mut tests = Vec::new();
    if let Some(path) = &args.trace {
        let trace = read_trace(BufReader::new(open(path)?))?;
        // Per-run total regret: the last round's cumulative value of each task, summed.
        let mut ends: BTreeMap<(AgentKind, usize, usize), (usize, f64)> = BTreeMap::new();
        for r in &trace.records {
            let e = ends.entry((r.agent, r.run, r.task)).or_insert((0, 0.0));
            if r.round >= e.0 {
                *e = (r.round, r.cumulative_regret);
            }
        }
        let mut totals: BTreeMap<AgentKind, BTreeMap<usize, f64>> = BTreeMap::new();
        for ((agent, run, _), (_, c)) in ends {
            *totals.entry(agent).or_default().entry(run).or_insert(0.0) += c;
        }
        for pair in order.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (ta, tb) = (&totals[&a], &totals[&b]);
            let runs: Vec<usize> = ta.keys().filter(|r| tb.contains_key(r)).copied().collect();
            let xa: Vec<f64> = runs.iter().map(|r| ta[r]).collect();
            let xb: Vec<f64> = runs.iter().map(|r| tb[r]).collect();
            tests.push((a, b, sign_test(&xa, &xb)));
        }
    }

    if as_json {
        let finals: Vec<_> = order
            .iter()
            .map(|a| {
                let (task, mean, se) = last[a];
                json!({"agent": a.as_str(), "task": task, "mean_cumulative_regret": mean, "stderr": se})
            })
            .collect();
        let tests: Vec<_> = tests
            .iter()
            .map(|(a, b, t)| json!({"better": a.as_str(), "worse": b.as_str(), "wins": t.wins, "losses": t.losses, "ties": t.ties, "p_value": t.p_value}))
            .collect();
        print_json(&json!({"final": finals, "sign_tests": tests}));
    } else {
        println!("{:<12} {:>6} {:>16} {:>12}", "agent", "task", "mean", "stderr");
        for a in &order {
            let (task, mean, se) = last[a];
            println!("{:<12} {:>6} {:>16} {:>12}", a.as_str(), task, format_sig(mean), format_sig(se));
        }
        if !tests.is_empty() {
            println!("\npaired sign tests on per-run total regret (H1: left < right)");
            for (a, b, t) in &tests {
                println!(
                    "{} < {}: {} wins, {} losses, {} ties, p = {}",
                    a.as_str(),
                    b.as_str(),
                    t.wins,
                    t.losses,
                    t.ties,
                    format_sig(t.p_value)
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a, cli.json),
        Command::Bounds(a) => cmd_bounds(a, cli.json),
        Command::Vartheta(a) => cmd_vartheta(a, cli.json),
        Command::Verify(a) => cmd_verify(a, cli.json),
        Command::Report(a) => cmd_report(a, cli.json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
