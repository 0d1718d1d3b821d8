//! Command-line front end for the preempt toolkit.
//!
//! Every command prints a metadata block (tool version, seed, RNG
//! identifier, variant flags) sufficient to reproduce the run exactly.
//! With `--json` stdout carries machine-readable JSON (JSON Lines for the
//! episode stream of `bt-run`); otherwise a short human summary. stderr is
//! reserved for diagnostics. Exit codes: 0 success, 1 runtime failure,
//! 2 invalid input (bad flags, config, schema, or parameters).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value as Json};

use preempt_core::bt::{
    run_pbt_episode_with_tree_traced, run_pbt_episodes_with_tree, BtError, BtRunConfig,
};
use preempt_core::formulas::FormulaError;
use preempt_core::logio::{
    episode_makespans, estimate_params, read_attempt_log, read_config, records_from_episodes,
    write_attempt_log, LogError,
};
use preempt_core::markov::{
    build_preemptive_chain, build_reactive_chain, ChainError, ChainVariant,
};
use preempt_core::rng::RNG_PROTOCOL;
use preempt_core::stats::{kruskal_wallis, StatsError};
use preempt_core::sweep::{find_crossover, run_sweep, write_grid_csv, SweepAxis, SweepParam};
use preempt_core::{
    apply_guards, build_twist_insert_tree, load_tree, preemptive_makespan, reactive_makespan,
    run_episodes, time_saved, BtNode, FloorMode, MakespanStats, ParamError, Policy, SimError,
    Variant,
};

/// Residual bound for the formula-vs-chain cross-check in `analyze`.
const CROSSCHECK_TOL: f64 = 1e-9;

#[derive(Parser)]
#[command(
    name = "preempt",
    version,
    about = "Makespan analysis and simulation for retried tasks with a run-time failure classifier"
)]
struct Cli {
    /// Emit machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Cap the worker thread count (results are unaffected).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form policy comparison with a chain-solver cross-check.
    Analyze(AnalyzeArgs),
    /// Monte Carlo episode simulation, optionally writing an attempt log.
    Simulate(SimulateArgs),
    /// Closed-form parameter sweep with crossover detection.
    Sweep(SweepArgs),
    /// Estimate timings and confusion probabilities from an attempt log.
    Estimate(EstimateArgs),
    /// Rank-based significance test between two attempt logs.
    Compare(CompareArgs),
    /// Behavior-tree episodes under the preemptive supervisor.
    BtRun(BtRunArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Paper,
    Renewal,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Paper => Variant::Paper,
            VariantArg::Renewal => Variant::Renewal,
        }
    }
}

impl VariantArg {
    fn name(self) -> &'static str {
        match self {
            VariantArg::Paper => "paper",
            VariantArg::Renewal => "renewal",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ChainArg {
    AsPrinted,
    ChainDerived,
}

impl From<ChainArg> for ChainVariant {
    fn from(v: ChainArg) -> Self {
        match v {
            ChainArg::AsPrinted => ChainVariant::AsPrinted,
            ChainArg::ChainDerived => ChainVariant::ChainDerived,
        }
    }
}

impl ChainArg {
    fn name(self) -> &'static str {
        match self {
            ChainArg::AsPrinted => "as-printed",
            ChainArg::ChainDerived => "chain-derived",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Reactive,
    Preemptive,
}

impl From<PolicyArg> for Policy {
    fn from(v: PolicyArg) -> Self {
        match v {
            PolicyArg::Reactive => Policy::Reactive,
            PolicyArg::Preemptive => Policy::Preemptive,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FloorModeArg {
    None,
    Shifted,
}

impl From<FloorModeArg> for FloorMode {
    fn from(v: FloorModeArg) -> Self {
        match v {
            FloorModeArg::None => FloorMode::None,
            FloorModeArg::Shifted => FloorMode::Shifted,
        }
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Experiment config (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Formula variant driving the recommendation.
    #[arg(long, value_enum, default_value = "renewal")]
    variant: VariantArg,
    /// Which preemptive chain encoding to report alongside.
    #[arg(long, value_enum, default_value = "chain-derived")]
    chain: ChainArg,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment config (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the config's policy.
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    /// Override the config's episode count.
    #[arg(long, value_name = "EPISODES")]
    n: Option<u64>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's verdict floor handling.
    #[arg(long, value_enum)]
    floor_mode: Option<FloorModeArg>,
    /// Write the attempt log CSV here.
    #[arg(long, value_name = "PATH")]
    out_log: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment config (JSON) providing the base point.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Axis spec `param:start:stop:steps`; repeat once for a 2-D grid.
    /// Params: p_f, p_tp_rate, p_tn_rate, mtf, mts, mtn.
    #[arg(long = "axis", value_name = "SPEC", required = true, num_args = 1)]
    axes: Vec<String>,
    /// Formula variant evaluated over the grid.
    #[arg(long, value_enum, default_value = "renewal")]
    variant: VariantArg,
    /// Write the grid CSV here (stdout summary otherwise).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Attempt log CSV to estimate from.
    #[arg(long, value_name = "PATH")]
    log: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// First attempt log (group A).
    #[arg(long, value_name = "PATH")]
    log_a: PathBuf,
    /// Second attempt log (group B).
    #[arg(long, value_name = "PATH")]
    log_b: PathBuf,
    /// Keep single-attempt immediate successes instead of filtering them.
    #[arg(long)]
    keep_trivial: bool,
}

#[derive(Args)]
struct BtRunArgs {
    /// Experiment config (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the config's episode count.
    #[arg(long, value_name = "EPISODES")]
    n: Option<u64>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's verdict floor handling.
    #[arg(long, value_enum)]
    floor_mode: Option<FloorModeArg>,
    /// Engine tick period in seconds.
    #[arg(long, value_name = "SECONDS")]
    tick_dt: Option<f64>,
    /// Load the tree from a JSON document instead of the built-in skill.
    #[arg(long, value_name = "PATH")]
    tree: Option<PathBuf>,
    /// Include per-tick status traces in the output.
    #[arg(long)]
    trace: bool,
}

/// A failure carrying its intended process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    /// Downstream closed stdout (e.g. `preempt ... | head`); by pipeline
    /// convention that ends output early without an error report.
    fn pipe_closed() -> Self {
        Failure {
            code: 0,
            message: String::new(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            return Failure::pipe_closed();
        }
        Failure::runtime(format!("io: {e}"))
    }
}

impl From<LogError> for Failure {
    fn from(e: LogError) -> Self {
        match e {
            LogError::Io(inner) => inner.into(),
            other => Failure::invalid(other.to_string()),
        }
    }
}

impl From<ParamError> for Failure {
    fn from(e: ParamError) -> Self {
        Failure::invalid(e.to_string())
    }
}

impl From<FormulaError> for Failure {
    fn from(e: FormulaError) -> Self {
        Failure::invalid(e.to_string())
    }
}

impl From<ChainError> for Failure {
    fn from(e: ChainError) -> Self {
        Failure::invalid(e.to_string())
    }
}

impl From<preempt_core::sweep::SweepError> for Failure {
    fn from(e: preempt_core::sweep::SweepError) -> Self {
        Failure::invalid(e.to_string())
    }
}

impl From<StatsError> for Failure {
    fn from(e: StatsError) -> Self {
        Failure::invalid(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::NoEpisodes => Failure::invalid(e.to_string()),
            SimError::AttemptLimitExceeded { .. } => Failure::runtime(e.to_string()),
        }
    }
}

impl From<BtError> for Failure {
    fn from(e: BtError) -> Self {
        match e {
            BtError::MalformedTree { .. }
            | BtError::TreeLoad { .. }
            | BtError::InvalidConfig { .. } => Failure::invalid(e.to_string()),
            BtError::AttemptLimitExceeded { .. } | BtError::StalledTree { .. } => {
                Failure::runtime(e.to_string())
            }
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        if e.io_error_kind() == Some(std::io::ErrorKind::BrokenPipe) {
            return Failure::pipe_closed();
        }
        Failure::runtime(format!("json: {e}"))
    }
}

fn open_config(path: &Path) -> Result<preempt_core::logio::ExperimentConfig, Failure> {
    let file = File::open(path)
        .map_err(|e| Failure::runtime(format!("cannot open {}: {e}", path.display())))?;
    Ok(read_config(BufReader::new(file))?)
}

fn meta_block(pairs: &[(&str, Json)]) -> Json {
    let mut map = serde_json::Map::new();
    map.insert("tool".into(), json!("preempt"));
    map.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    map.insert("rng".into(), json!(RNG_PROTOCOL));
    for (key, value) in pairs {
        map.insert((*key).into(), value.clone());
    }
    Json::Object(map)
}

fn print_json(value: &Json) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn policy_name(policy: Policy) -> &'static str {
    match policy {
        Policy::Reactive => "reactive",
        Policy::Preemptive => "preemptive",
    }
}

fn floor_name(mode: FloorMode) -> &'static str {
    match mode {
        FloorMode::None => "none",
        FloorMode::Shifted => "shifted",
    }
}

fn cmd_analyze(args: &AnalyzeArgs, as_json: bool) -> Result<(), Failure> {
    let cfg = open_config(&args.config)?;
    let variant: Variant = args.variant.into();
    let advice = time_saved(&cfg.rates, &cfg.timings, &cfg.confusion, variant)?;
    let params = apply_guards(&cfg.timings, &cfg.confusion)?;

    let mut variants = serde_json::Map::new();
    for (name, v) in [("paper", Variant::Paper), ("renewal", Variant::Renewal)] {
        let a = time_saved(&cfg.rates, &cfg.timings, &cfg.confusion, v)?;
        variants.insert(
            name.into(),
            json!({
                "reactive_s": a.reactive.seconds,
                "preemptive_s": a.preemptive.seconds,
                "time_saved_s": a.time_saved_s,
            }),
        );
    }

    // Cross-check: the as-printed closed forms must match the chain
    // solver's sojourn times, which were derived independently.
    let reactive_paper = reactive_makespan(&cfg.rates, &cfg.timings, Variant::Paper)?;
    let preemptive_paper = preemptive_makespan(&params, Variant::Paper)?;
    let reactive_chain = build_reactive_chain(&cfg.rates, &cfg.timings)?;
    let reactive_sojourn = reactive_chain
        .sojourn()?
        .for_state("Run")
        .expect("reactive chain has a Run state");
    let printed_chain = build_preemptive_chain(&params, ChainVariant::AsPrinted)?;
    let printed_sojourn = printed_chain
        .sojourn()?
        .for_state("Run")
        .expect("preemptive chain has a Run state");
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    let reactive_residual = rel(reactive_paper.seconds, reactive_sojourn);
    let preemptive_residual = rel(preemptive_paper.seconds, printed_sojourn);
    let crosscheck_ok =
        reactive_residual <= CROSSCHECK_TOL && preemptive_residual <= CROSSCHECK_TOL;

    let reported_chain = build_preemptive_chain(&params, args.chain.into())?;
    let reported_sojourn = reported_chain
        .sojourn()?
        .for_state("Run")
        .expect("preemptive chain has a Run state");

    let output = json!({
        "meta": meta_block(&[
            ("variant", json!(args.variant.name())),
            ("chain", json!(args.chain.name())),
        ]),
        "advice": advice,
        "variants": Json::Object(variants),
        "chain": {
            "variant": args.chain.name(),
            "reactive_sojourn_s": reactive_sojourn,
            "preemptive_sojourn_s": reported_sojourn,
        },
        "crosscheck": {
            "reactive_residual": reactive_residual,
            "preemptive_residual": preemptive_residual,
            "tolerance": CROSSCHECK_TOL,
            "ok": crosscheck_ok,
        },
    });
    if as_json {
        print_json(&output)?;
    } else {
        println!("variant:     {}", args.variant.name());
        println!("reactive:    {:.4} s", advice.reactive.seconds);
        println!("preemptive:  {:.4} s", advice.preemptive.seconds);
        println!("time saved:  {:.4} s", advice.time_saved_s);
        println!("recommended: {:?}", advice.recommended);
        println!("guard:       {:?}", advice.guard_applied);
        println!(
            "cross-check: reactive {reactive_residual:.3e}, preemptive {preemptive_residual:.3e} (tol {CROSSCHECK_TOL:.0e}, {})",
            if crosscheck_ok { "ok" } else { "FAILED" }
        );
    }
    if !crosscheck_ok {
        return Err(Failure::runtime(format!(
            "chain cross-check failed: reactive {reactive_residual:.3e}, preemptive {preemptive_residual:.3e}"
        )));
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs, as_json: bool) -> Result<(), Failure> {
    let cfg = open_config(&args.config)?;
    let params = apply_guards(&cfg.timings, &cfg.confusion)?;
    let mut sim = cfg.sim;
    if let Some(policy) = args.policy {
        sim.policy = policy.into();
    }
    if let Some(n) = args.n {
        sim.n_episodes = n;
    }
    if let Some(seed) = args.seed {
        sim.seed = seed;
    }
    if let Some(mode) = args.floor_mode {
        sim.floor_mode = mode.into();
    }
    let episodes = run_episodes(&params, &sim)?;
    if let Some(path) = &args.out_log {
        let records = records_from_episodes(&episodes);
        let file = File::create(path)?;
        write_attempt_log(&records, BufWriter::new(file))?;
    }
    let stats = MakespanStats::from_makespans(episodes.iter().map(|e| e.makespan_s).collect());
    let meta = meta_block(&[
        ("seed", json!(sim.seed)),
        ("policy", json!(policy_name(sim.policy))),
        ("n_episodes", json!(sim.n_episodes)),
        ("floor_mode", json!(floor_name(sim.floor_mode))),
    ]);
    if as_json {
        print_json(&json!({
            "meta": meta,
            "stats": {
                "mean_s": stats.mean_s,
                "std_s": stats.std_s,
                "min_s": stats.min_s,
                "max_s": stats.max_s,
                "n": stats.n,
                "standard_error_s": stats.standard_error(),
            },
        }))?;
    } else {
        println!(
            "{} episodes, policy {}, seed {}",
            stats.n,
            policy_name(sim.policy),
            sim.seed
        );
        println!(
            "makespan mean {:.4} s (se {:.4}), min {:.4}, max {:.4}",
            stats.mean_s,
            stats.standard_error(),
            stats.min_s,
            stats.max_s
        );
        if let Some(path) = &args.out_log {
            println!("attempt log written to {}", path.display());
        }
    }
    Ok(())
}

fn parse_axis(spec: &str) -> Result<SweepAxis, Failure> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 4 {
        return Err(Failure::invalid(format!(
            "axis `{spec}`: expected param:start:stop:steps"
        )));
    }
    let param: SweepParam = parts[0]
        .parse()
        .map_err(|e| Failure::invalid(format!("axis `{spec}`: {e}")))?;
    let num = |s: &str| -> Result<f64, Failure> {
        s.parse()
            .map_err(|_| Failure::invalid(format!("axis `{spec}`: `{s}` is not a number")))
    };
    let steps: usize = parts[3]
        .parse()
        .map_err(|_| Failure::invalid(format!("axis `{spec}`: `{}` is not a count", parts[3])))?;
    Ok(SweepAxis::new(
        param,
        num(parts[1])?,
        num(parts[2])?,
        steps,
    )?)
}

fn cmd_sweep(args: &SweepArgs, as_json: bool) -> Result<(), Failure> {
    let cfg = open_config(&args.config)?;
    let axes: Vec<SweepAxis> = args
        .axes
        .iter()
        .map(|spec| parse_axis(spec))
        .collect::<Result<_, _>>()?;
    let grid = run_sweep(&cfg.timings, &cfg.confusion, &axes, args.variant.into())?;
    let crossovers = find_crossover(&grid);
    if let Some(path) = &args.out {
        let file = File::create(path)?;
        write_grid_csv(&grid, BufWriter::new(file))?;
    }
    let meta = meta_block(&[("variant", json!(args.variant.name()))]);
    if as_json {
        print_json(&json!({
            "meta": meta,
            "grid": grid,
            "crossovers": crossovers,
        }))?;
    } else {
        println!(
            "swept {} cells over {} axis/axes ({} variant)",
            grid.cells.len(),
            grid.axes.len(),
            args.variant.name()
        );
        if crossovers.is_empty() {
            println!("no policy crossover in range");
        }
        for c in &crossovers {
            let axis = &grid.axes[c.axis];
            match c.fixed {
                Some(fixed) => println!(
                    "crossover: {} = {:.6} (other axis at {:.6})",
                    axis.param, c.value, fixed
                ),
                None => println!("crossover: {} = {:.6}", axis.param, c.value),
            }
        }
        if let Some(path) = &args.out {
            println!("grid written to {}", path.display());
        }
    }
    Ok(())
}

fn cmd_estimate(args: &EstimateArgs, as_json: bool) -> Result<(), Failure> {
    let file = File::open(&args.log)
        .map_err(|e| Failure::runtime(format!("cannot open {}: {e}", args.log.display())))?;
    let records = read_attempt_log(BufReader::new(file))?;
    let estimate = estimate_params(&records)?;
    if as_json {
        print_json(&json!({
            "meta": meta_block(&[("log", json!(args.log.display().to_string()))]),
            "estimate": estimate,
        }))?;
    } else {
        let t = &estimate.timings;
        println!(
            "timings: mtf {:.4}, mts {:.4}, mtn {:.4}, mtp {}",
            t.mtf,
            t.mts,
            t.mtn,
            t.mtp
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into())
        );
        let c = &estimate.confusion;
        println!(
            "confusion: tp {:.4} fn {:.4} tn {:.4} fp {:.4} ncs {:.4} ncf {:.4}",
            c.p_tp, c.p_fn, c.p_tn, c.p_fp, c.p_ncs, c.p_ncf
        );
        println!(
            "rates: p_s {:.4}, p_f {:.4} ({} attempts)",
            estimate.rates.p_s, estimate.rates.p_f, estimate.counts.total
        );
        for warning in &estimate.warnings {
            eprintln!("warning: {warning}");
        }
    }
    Ok(())
}

fn cmd_compare(args: &CompareArgs, as_json: bool) -> Result<(), Failure> {
    let load = |path: &Path| -> Result<Vec<f64>, Failure> {
        let file = File::open(path)
            .map_err(|e| Failure::runtime(format!("cannot open {}: {e}", path.display())))?;
        let records = read_attempt_log(BufReader::new(file))?;
        Ok(episode_makespans(&records, !args.keep_trivial))
    };
    let group_a = load(&args.log_a)?;
    let group_b = load(&args.log_b)?;
    let result = kruskal_wallis(&group_a, &group_b)?;
    let meta = meta_block(&[(
        "trivial_filter",
        json!(if args.keep_trivial { "off" } else { "on" }),
    )]);
    if as_json {
        print_json(&json!({
            "meta": meta,
            "n_a": group_a.len(),
            "n_b": group_b.len(),
            "result": result,
        }))?;
    } else {
        println!(
            "groups: a n={} (mean {:.4}), b n={} (mean {:.4})",
            group_a.len(),
            group_a.iter().sum::<f64>() / group_a.len() as f64,
            group_b.len(),
            group_b.iter().sum::<f64>() / group_b.len() as f64,
        );
        println!(
            "kruskal-wallis: H = {:.6}, df = {}, p = {:.6}{}",
            result.h_statistic,
            result.degrees_of_freedom,
            result.p_value,
            if result.all_tied {
                " (all values tied)"
            } else {
                ""
            }
        );
    }
    Ok(())
}

fn cmd_bt_run(args: &BtRunArgs, as_json: bool) -> Result<(), Failure> {
    let cfg = open_config(&args.config)?;
    let params = apply_guards(&cfg.timings, &cfg.confusion)?;
    let mut run_cfg = BtRunConfig {
        n_episodes: cfg.sim.n_episodes,
        seed: cfg.sim.seed,
        max_attempts_per_episode: cfg.sim.max_attempts_per_episode,
        floor_mode: cfg.sim.floor_mode,
        ..BtRunConfig::default()
    };
    if let Some(n) = args.n {
        run_cfg.n_episodes = n;
    }
    if let Some(seed) = args.seed {
        run_cfg.seed = seed;
    }
    if let Some(mode) = args.floor_mode {
        run_cfg.floor_mode = mode.into();
    }
    if let Some(dt) = args.tick_dt {
        run_cfg.tick_dt = dt;
    }
    let tree: BtNode = match &args.tree {
        Some(path) => {
            let file = File::open(path)
                .map_err(|e| Failure::runtime(format!("cannot open {}: {e}", path.display())))?;
            load_tree(BufReader::new(file))?
        }
        None => build_twist_insert_tree(),
    };
    let meta = meta_block(&[
        ("seed", json!(run_cfg.seed)),
        ("n_episodes", json!(run_cfg.n_episodes)),
        ("tick_dt", json!(run_cfg.tick_dt)),
        ("floor_mode", json!(floor_name(run_cfg.floor_mode))),
        ("tree", json!(args.tree.is_some())),
    ]);

    let mut out = std::io::stdout().lock();
    if as_json {
        serde_json::to_writer(&mut out, &json!({ "meta": meta }))?;
        writeln!(out)?;
    }
    let episodes = if args.trace {
        // Traced runs go episode by episode so traces stream in order.
        let mut all = Vec::with_capacity(run_cfg.n_episodes as usize);
        for episode in 0..run_cfg.n_episodes {
            let (result, trace) =
                run_pbt_episode_with_tree_traced(&tree, &params, &run_cfg, episode)?;
            if as_json {
                serde_json::to_writer(&mut out, &json!({ "result": result, "trace": trace }))?;
                writeln!(out)?;
            } else {
                writeln!(
                    out,
                    "episode {episode}: {} attempts, makespan {:.3} s",
                    result.attempt_count(),
                    result.makespan_s
                )?;
                for line in &trace {
                    writeln!(out, "  {line}")?;
                }
            }
            all.push(result);
        }
        all
    } else {
        let episodes = run_pbt_episodes_with_tree(&tree, &params, &run_cfg)?;
        for result in &episodes {
            if as_json {
                serde_json::to_writer(&mut out, &json!({ "result": result }))?;
                writeln!(out)?;
            } else {
                writeln!(
                    out,
                    "episode {}: {} attempts, makespan {:.3} s",
                    result.episode,
                    result.attempt_count(),
                    result.makespan_s
                )?;
            }
        }
        episodes
    };
    let stats = MakespanStats::from_makespans(episodes.iter().map(|e| e.makespan_s).collect());
    if as_json {
        serde_json::to_writer(
            &mut out,
            &json!({ "stats": { "mean_s": stats.mean_s, "std_s": stats.std_s, "n": stats.n } }),
        )?;
        writeln!(out)?;
    } else {
        writeln!(
            out,
            "{} episodes, makespan mean {:.4} s (std {:.4})",
            stats.n, stats.mean_s, stats.std_s
        )?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Failure::invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::runtime(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Analyze(args) => cmd_analyze(args, cli.json),
        Command::Simulate(args) => cmd_simulate(args, cli.json),
        Command::Sweep(args) => cmd_sweep(args, cli.json),
        Command::Estimate(args) => cmd_estimate(args, cli.json),
        Command::Compare(args) => cmd_compare(args, cli.json),
        Command::BtRun(args) => cmd_bt_run(args, cli.json),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            if !failure.message.is_empty() {
                eprintln!("error: {}", failure.message);
            }
            ExitCode::from(failure.code)
        }
    }
}
