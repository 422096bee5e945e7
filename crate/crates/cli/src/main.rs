//! `flaute` command-line front end.
//!
//! Every command is a pure function of the config file and flags: the same
//! inputs give byte-identical outputs for any `--threads` value.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use flaute_core::evaluation::{
    dispatch_batch, render_table, reproduce_replications, trajectory_rows, write_traces_csv, write_trajectories_csv,
    EvaluationReport,
};
use flaute_core::fv::{estimate_tail, TailEstimate};
use flaute_core::lp::export_lp;
use flaute_core::solver::{read_solution, write_solution_csv, SolutionSummary};
use flaute_core::stochastic::{generate_batch, write_realizations_csv, ARState};
use flaute_core::tree::{read_tree, write_tree};
use flaute_core::{build_tree, solve_tree_dp, verify_solution, CostParams, RunConfig, ScenarioTree, TreeMode};

#[derive(Debug, Parser)]
#[command(
    name = "flaute",
    version,
    about = "Rare-event-aware scenario trees for backup plant commitment"
)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Caps worker threads. Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate tail-interval probabilities and write tail.json.
    EstimateTail,
    /// Build a scenario tree and write tree-<mode>.txt.
    BuildTree {
        #[arg(long, value_parser = parse_mode)]
        mode: Option<TreeMode>,
        /// Tail estimate for biased trees; defaults to <out>/tail.json.
        #[arg(long)]
        tail: Option<PathBuf>,
    },
    /// Solve a tree exactly and write <stem>.solution.{csv,json}.
    Solve {
        #[arg(long)]
        tree: PathBuf,
        /// Also write the integer program as <stem>.lp.
        #[arg(long)]
        export_lp: bool,
    },
    /// Replay a solved tree on realization batches, one per configured q.
    Evaluate {
        #[arg(long)]
        tree: PathBuf,
        /// Solution CSV; the JSON sidecar is found next to it.
        #[arg(long)]
        solution: PathBuf,
        /// Tail estimate for rare jumps; defaults to <out>/tail.json.
        #[arg(long)]
        tail: Option<PathBuf>,
    },
    /// Full pipeline for both tree modes; writes table.{json,txt} and trajectories.csv.
    ReproduceTable {
        /// Number of master-seed replications; defaults to the config value.
        #[arg(long)]
        replications: Option<usize>,
    },
}

fn parse_mode(s: &str) -> std::result::Result<TreeMode, String> {
    s.parse().map_err(|e: flaute_core::Error| e.to_string())
}

/// Errors the user can fix by changing inputs; exit code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Marks an infeasible instance; exit code 3.
#[derive(Debug)]
struct Infeasible(String);

impl std::fmt::Display for Infeasible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Infeasible {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if cause.is::<Infeasible>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<flaute_core::Error>() {
            return match e {
                flaute_core::Error::Estimation(_) => 4,
                flaute_core::Error::Io(_) => 1,
                _ => 2,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        set_threads(n)?;
    }
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let out = cli.out.as_path();
    match cli.command {
        Command::EstimateTail => cmd_estimate_tail(&config, out),
        Command::BuildTree { mode, tail } => cmd_build_tree(&config, mode.unwrap_or(config.tree.mode), tail, out),
        Command::Solve { tree, export_lp } => cmd_solve(&config, &tree, export_lp, out),
        Command::Evaluate { tree, solution, tail } => cmd_evaluate(&config, &tree, &solution, tail, out),
        Command::ReproduceTable { replications } => {
            cmd_reproduce_table(&config, replications.unwrap_or(config.evaluation.replications), out)
        }
    }
}

#[cfg(feature = "parallel")]
fn set_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Usage("--threads must be >= 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")
}

#[cfg(not(feature = "parallel"))]
fn set_threads(_: usize) -> Result<()> {
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path, what: &str) -> Result<BufReader<File>> {
    let file = File::open(path).map_err(|e| Usage(format!("cannot open {what} {}: {e}", path.display())))?;
    Ok(BufReader::new(file))
}

fn load_tail(path: &Path) -> Result<TailEstimate> {
    let text = fs::read_to_string(path).map_err(|e| Usage(format!("cannot read tail file {}: {e}", path.display())))?;
    TailEstimate::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "tree".into())
}

/// Cost parameters with one demand value per stage of `tree`. A flat demand
/// follows the tree's horizon; a per-stage demand must match it.
fn cost_params_for(config: &RunConfig, tree: &ScenarioTree) -> Result<CostParams> {
    let mut params = config.cost_params()?;
    if params.demand.len() != tree.horizon() {
        let flat = params.demand.iter().all(|&d| d == params.demand[0]);
        if !flat {
            return Err(Usage(format!(
                "config demand has {} stages, tree has {}",
                params.demand.len(),
                tree.horizon()
            ))
            .into());
        }
        params.demand = vec![params.demand[0]; tree.horizon()];
    }
    Ok(params)
}

fn cmd_estimate_tail(config: &RunConfig, out: &Path) -> Result<()> {
    let run = config.tail_run_config(config.master_seed);
    info!(
        "estimating tail: {} plain steps, {} particles, a = {}, c = {}",
        run.mc_steps, run.fv.n_particles, config.tail.a, config.tail.c_threshold
    );
    let estimate = estimate_tail(&config.ar_model()?, &config.partition()?, &run)?;
    let path = out.join("tail.json");
    fs::write(&path, estimate.to_json()?)?;
    info!("exit mass {:.6}, weights {:?}", estimate.exit_mass, estimate.weights);
    info!("wrote {}", path.display());
    Ok(())
}

fn cmd_build_tree(config: &RunConfig, mode: TreeMode, tail: Option<PathBuf>, out: &Path) -> Result<()> {
    let tree_config = config.tree_config(mode, config.master_seed)?;
    let sampler = match mode {
        TreeMode::Benchmark => None,
        TreeMode::Biased => {
            let path = tail.unwrap_or_else(|| out.join("tail.json"));
            Some(load_tail(&path)?.sampler()?)
        }
    };
    let tree = build_tree(&tree_config, &config.ar_model()?, sampler.as_ref())?;
    let path = out.join(format!("tree-{}.txt", mode.as_str()));
    let mut w = create(&path)?;
    write_tree(&tree, &mut w)?;
    w.flush()?;
    info!(
        "{} tree: {} nodes, {} scenarios -> {}",
        mode.as_str(),
        tree.len(),
        tree.n_scenarios(),
        path.display()
    );
    Ok(())
}

fn cmd_solve(config: &RunConfig, tree_path: &Path, lp: bool, out: &Path) -> Result<()> {
    let tree = read_tree(open(tree_path, "tree file")?).with_context(|| format!("reading {}", tree_path.display()))?;
    let params = cost_params_for(config, &tree)?;
    let options = config.solver_options();
    let solution = solve_tree_dp(&tree, &params, &options)?;
    let name = stem(tree_path);

    if lp {
        let path = out.join(format!("{name}.lp"));
        let mut w = create(&path)?;
        let stats = export_lp(&tree, &params, &options, &mut w)?;
        w.flush()?;
        info!(
            "LP: {} binary variables, {} rows -> {}",
            stats.variables,
            stats.constraints,
            path.display()
        );
    }

    let summary = SolutionSummary::from(&solution);
    fs::write(
        out.join(format!("{name}.solution.json")),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    let csv_path = out.join(format!("{name}.solution.csv"));
    let mut w = create(&csv_path)?;
    write_solution_csv(&solution, &mut w)?;
    w.flush()?;

    if !solution.feasible {
        return Err(Infeasible(format!("instance is infeasible; witness node {:?}", solution.witness)).into());
    }
    let check = verify_solution(&tree, &params, &options, &solution.states)?;
    if let Some(v) = &check.violation {
        return Err(anyhow!("solver produced an invalid solution: {v}"));
    }
    if check.objective != solution.objective {
        return Err(anyhow!(
            "objective mismatch: solver {} vs recomputed {}",
            solution.objective,
            check.objective
        ));
    }
    info!(
        "{} ({} nodes) -> {}",
        flaute_core::solver::describe(&solution),
        tree.len(),
        csv_path.display()
    );
    Ok(())
}

fn cmd_evaluate(
    config: &RunConfig,
    tree_path: &Path,
    solution_path: &Path,
    tail: Option<PathBuf>,
    out: &Path,
) -> Result<()> {
    let tree = read_tree(open(tree_path, "tree file")?).with_context(|| format!("reading {}", tree_path.display()))?;
    let summary_path = solution_path.with_extension("json");
    let summary_text = fs::read_to_string(&summary_path)
        .map_err(|e| Usage(format!("cannot read solution summary {}: {e}", summary_path.display())))?;
    let summary: SolutionSummary =
        serde_json::from_str(&summary_text).map_err(|e| Usage(format!("{}: {e}", summary_path.display())))?;
    let solution = read_solution(open(solution_path, "solution file")?, &summary)?;
    if solution.states.len() != tree.len() {
        return Err(Usage(format!(
            "solution has {} states, tree has {} nodes",
            solution.states.len(),
            tree.len()
        ))
        .into());
    }
    let tail = load_tail(&tail.unwrap_or_else(|| out.join("tail.json")))?;
    let sampler = tail.sampler()?;
    let model = config.ar_model()?;
    let params = cost_params_for(config, &tree)?;

    let name = stem(tree_path);
    let method = tree.config().mode;
    let mut columns = Vec::new();
    let mut trajectories = Vec::new();
    for &q in &config.evaluation.q {
        let mut rcfg = config.realization_config(q, config.master_seed)?;
        rcfg.horizon = tree.horizon();
        let batch = generate_batch(&rcfg, config.evaluation.n_realizations, &model, ARState::ZERO, &sampler);
        let traces = dispatch_batch(&solution, &tree, &batch, &params)?;
        let report = EvaluationReport::from_traces(&traces, &batch, &params)?;
        info!(
            "q = {q}: {} rare, avg cost {:.2}, {:.1}% unsatisfied",
            report.n_rare, report.avg_cost, report.pct_realizations_unsatisfied
        );
        let mut w = create(&out.join(format!("{name}.traces-q{q}.csv")))?;
        write_traces_csv(&mut w, &traces, &batch)?;
        w.flush()?;
        let mut w = create(&out.join(format!("{name}.realizations-q{q}.csv")))?;
        write_realizations_csv(&mut w, &batch)?;
        w.flush()?;
        trajectories.extend(trajectory_rows(method, q, &tree, &traces, &batch));
        columns.push(serde_json::json!({ "q": q, "report": report }));
    }
    fs::write(
        out.join(format!("{name}.report.json")),
        serde_json::to_string_pretty(&columns)? + "\n",
    )?;
    let mut w = create(&out.join(format!("{name}.trajectories.csv")))?;
    write_trajectories_csv(&mut w, &trajectories)?;
    w.flush()?;
    Ok(())
}

fn cmd_reproduce_table(config: &RunConfig, replications: usize, out: &Path) -> Result<()> {
    if replications == 0 {
        return Err(Usage("--replications must be >= 1".into()).into());
    }
    info!(
        "reproducing table: B = {}, H = {}, n = {}, {} replication(s)",
        config.tree.branching, config.tree.horizon, config.evaluation.n_realizations, replications
    );
    let runs = reproduce_replications(config, replications)?;
    let reports: Vec<_> = runs.iter().map(|r| &r.report).collect();
    fs::write(out.join("table.json"), serde_json::to_string_pretty(&reports)? + "\n")?;
    let text: String = reports.iter().map(|r| render_table(r) + "\n").collect();
    fs::write(out.join("table.txt"), &text)?;
    let mut w = create(&out.join("trajectories.csv"))?;
    write_trajectories_csv(&mut w, &runs[0].trajectories)?;
    w.flush()?;
    print!("{text}");
    Ok(())
}
