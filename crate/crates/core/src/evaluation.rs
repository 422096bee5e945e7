//! Out-of-sample evaluation of a solved tree.
//!
//! Each realized wind path is matched to a root-to-leaf path of the tree by
//! walking down from the root and picking, at every stage, the child whose
//! wind power is nearest the realized value. The plant follows the states
//! stored on that path, and realized coal power, cost and unmet demand are
//! computed from the realized wind.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fmt::fmt17;
use crate::fv::{estimate_tail, RareChangeSampler, TailEstimate};
use crate::par;
use crate::solver::{solve_tree_dp, stage_cost, CostParams, PlantState, Solution};
use crate::stochastic::{generate_batch, ARState, Realization};
use crate::tree::{build_tree, ScenarioTree, TreeMode};

/// Nearest-child descent; ties go to the lower node id.
pub fn closest_path(tree: &ScenarioTree, realization: &Realization) -> Result<Vec<usize>> {
    if realization.horizon() != tree.horizon() {
        return Err(Error::HorizonMismatch {
            tree: tree.horizon(),
            realization: realization.horizon(),
        });
    }
    let nodes = tree.nodes();
    let mut path = Vec::with_capacity(tree.horizon());
    let mut current = 0;
    path.push(current);
    for &y in &realization.y[1..] {
        let mut best = usize::MAX;
        let mut best_dist = f64::INFINITY;
        for c in tree.children(current) {
            let d = (y - nodes[c].w).abs();
            if d < best_dist {
                best = c;
                best_dist = d;
            }
        }
        current = best;
        path.push(current);
    }
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchTrace {
    pub path: Vec<usize>,
    pub states: Vec<PlantState>,
    pub coal_power: Vec<f64>,
    pub stage_costs: Vec<f64>,
    pub unmet: Vec<f64>,
    pub cost: f64,
    pub satisfied: bool,
}

/// Applies the solution along the closest path to the realized wind.
pub fn realized_dispatch(
    solution: &Solution,
    tree: &ScenarioTree,
    realization: &Realization,
    params: &CostParams,
) -> Result<DispatchTrace> {
    if !solution.feasible || solution.states.len() != tree.len() {
        return Err(Error::invalid("solution", "needs a feasible state for every tree node"));
    }
    let path = closest_path(tree, realization)?;
    let h_max = path.len();
    let mut trace = DispatchTrace {
        states: Vec::with_capacity(h_max),
        coal_power: Vec::with_capacity(h_max),
        stage_costs: Vec::with_capacity(h_max),
        unmet: Vec::with_capacity(h_max),
        cost: 0.0,
        satisfied: true,
        path,
    };
    for (h, &node) in trace.path.iter().enumerate() {
        let state = solution.states[node];
        let gap = (params.demand_at(h) - realization.y[h]).max(0.0);
        let coal = if state == PlantState::Operating {
            params.p_max.min(gap)
        } else {
            0.0
        };
        let cost = stage_cost(state, coal, params);
        let unmet = (gap - coal).max(0.0);
        trace.states.push(state);
        trace.coal_power.push(coal);
        trace.stage_costs.push(cost);
        trace.unmet.push(unmet);
        trace.cost += cost;
        trace.satisfied &= unmet == 0.0;
    }
    Ok(trace)
}

/// Table-style metrics over a batch. Rare-subset metrics are `None` when the
/// batch has no rare realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_realizations: usize,
    pub n_rare: usize,
    pub avg_cost: f64,
    pub pct_realizations_unsatisfied: f64,
    pub pct_unmet_power_all: f64,
    pub pct_rare_realizations_unsatisfied: Option<f64>,
    pub pct_unmet_power_rare: Option<f64>,
}

// Order-independent sum: sorting first makes the result exactly invariant
// under permutations of the batch.
fn sorted_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum()
}

impl EvaluationReport {
    pub fn from_traces(traces: &[DispatchTrace], realizations: &[Realization], params: &CostParams) -> Result<Self> {
        if traces.is_empty() || traces.len() != realizations.len() {
            return Err(Error::invalid(
                "batch",
                "needs one trace per realization and at least one realization",
            ));
        }
        let n = traces.len();
        let subset = |rare_only: bool| {
            let picked: Vec<&DispatchTrace> = traces
                .iter()
                .zip(realizations)
                .filter(|(_, r)| !rare_only || r.is_rare)
                .map(|(t, _)| t)
                .collect();
            if picked.is_empty() {
                return None;
            }
            let unsatisfied = picked.iter().filter(|t| !t.satisfied).count();
            let unmet = sorted_sum(picked.iter().flat_map(|t| t.unmet.iter().copied()).collect());
            let demand = sorted_sum(
                picked
                    .iter()
                    .flat_map(|t| (0..t.unmet.len()).map(|h| params.demand_at(h)))
                    .collect(),
            );
            let pct_unmet = if demand > 0.0 { 100.0 * unmet / demand } else { 0.0 };
            Some((100.0 * unsatisfied as f64 / picked.len() as f64, pct_unmet))
        };
        let (pct_all, unmet_all) = subset(false).expect("batch is non-empty");
        let rare = subset(true);
        Ok(EvaluationReport {
            n_realizations: n,
            n_rare: realizations.iter().filter(|r| r.is_rare).count(),
            avg_cost: sorted_sum(traces.iter().map(|t| t.cost).collect()) / n as f64,
            pct_realizations_unsatisfied: pct_all,
            pct_unmet_power_all: unmet_all,
            pct_rare_realizations_unsatisfied: rare.map(|r| r.0),
            pct_unmet_power_rare: rare.map(|r| r.1),
        })
    }

    /// True when no realization had unmet demand.
    pub fn all_satisfied(&self) -> bool {
        self.pct_realizations_unsatisfied == 0.0
    }
}

pub fn dispatch_batch(
    solution: &Solution,
    tree: &ScenarioTree,
    realizations: &[Realization],
    params: &CostParams,
) -> Result<Vec<DispatchTrace>> {
    par::map_slice(realizations, |r| realized_dispatch(solution, tree, r, params))
        .into_iter()
        .collect()
}

pub fn evaluate_batch(
    solution: &Solution,
    tree: &ScenarioTree,
    realizations: &[Realization],
    params: &CostParams,
) -> Result<EvaluationReport> {
    let traces = dispatch_batch(solution, tree, realizations, params)?;
    EvaluationReport::from_traces(&traces, realizations, params)
}

/// CSV with columns `realization_id,stage,y,node_id,state,coal_power,unmet,cost`;
/// `cost` is the stage cost.
pub fn write_traces_csv<W: Write>(mut out: W, traces: &[DispatchTrace], realizations: &[Realization]) -> Result<()> {
    writeln!(out, "realization_id,stage,y,node_id,state,coal_power,unmet,cost")?;
    for (id, (t, r)) in traces.iter().zip(realizations).enumerate() {
        for h in 0..t.path.len() {
            writeln!(
                out,
                "{id},{h},{},{},{},{},{},{}",
                fmt17(r.y[h]),
                t.path[h],
                t.states[h].code(),
                fmt17(t.coal_power[h]),
                fmt17(t.unmet[h]),
                fmt17(t.stage_costs[h])
            )?;
        }
    }
    Ok(())
}

/// One row of the realization-versus-closest-scenario trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub method: TreeMode,
    pub q: f64,
    pub realization_id: usize,
    pub stage: usize,
    pub y: f64,
    pub closest_w: f64,
}

pub fn trajectory_rows(
    method: TreeMode,
    q: f64,
    tree: &ScenarioTree,
    traces: &[DispatchTrace],
    realizations: &[Realization],
) -> Vec<TrajectoryRow> {
    let mut rows = Vec::with_capacity(traces.len() * tree.horizon());
    for (id, (t, r)) in traces.iter().zip(realizations).enumerate() {
        for (stage, &node) in t.path.iter().enumerate() {
            rows.push(TrajectoryRow {
                method,
                q,
                realization_id: id,
                stage,
                y: r.y[stage],
                closest_w: tree.nodes()[node].w,
            });
        }
    }
    rows
}

/// CSV with columns `method,q,realization_id,stage,y,closest_w`.
pub fn write_trajectories_csv<W: Write>(mut out: W, rows: &[TrajectoryRow]) -> Result<()> {
    writeln!(out, "method,q,realization_id,stage,y,closest_w")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.method.as_str(),
            fmt17(r.q),
            r.realization_id,
            r.stage,
            fmt17(r.y),
            fmt17(r.closest_w)
        )?;
    }
    Ok(())
}

/// One `q` column of the table: paired reports on a shared realization batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableColumn {
    pub q: f64,
    pub n_rare: usize,
    pub benchmark: EvaluationReport,
    pub biased: EvaluationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub master_seed: u64,
    pub n_realizations: usize,
    pub benchmark_objective: f64,
    pub biased_objective: f64,
    pub tail_weights: Vec<f64>,
    pub columns: Vec<TableColumn>,
}

impl TableReport {
    pub fn column(&self, q: f64) -> Option<&TableColumn> {
        self.columns.iter().find(|c| c.q == q)
    }
}

#[derive(Debug, Clone)]
pub struct TableRun {
    pub report: TableReport,
    pub tail: TailEstimate,
    pub trajectories: Vec<TrajectoryRow>,
}

struct Method {
    mode: TreeMode,
    tree: ScenarioTree,
    solution: Solution,
}

fn solve_method(config: &RunConfig, mode: TreeMode, master: u64, sampler: &RareChangeSampler) -> Result<Method> {
    let tree = build_tree(&config.tree_config(mode, master)?, &config.ar_model()?, Some(sampler))?;
    let solution = solve_tree_dp(&tree, &config.cost_params()?, &config.solver_options())?;
    if !solution.feasible {
        return Err(Error::invalid(
            "instance",
            format!(
                "{} tree is infeasible (witness node {:?})",
                mode.as_str(),
                solution.witness
            ),
        ));
    }
    Ok(Method { mode, tree, solution })
}

/// Full pipeline for one master seed: tail estimation, benchmark and biased
/// trees, exact solves, and paired evaluation on one realization batch per `q`.
/// Batches for different `q` share their seeds, so paths are coupled across
/// columns as well.
pub fn reproduce_table(config: &RunConfig, master: u64) -> Result<TableRun> {
    config.validate()?;
    let model = config.ar_model()?;
    let partition = config.partition()?;
    let tail = estimate_tail(&model, &partition, &config.tail_run_config(master))?;
    let sampler = tail.sampler()?;
    let params = config.cost_params()?;

    let methods = [
        solve_method(config, TreeMode::Benchmark, master, &sampler)?,
        solve_method(config, TreeMode::Biased, master, &sampler)?,
    ];

    let mut columns = Vec::new();
    let mut trajectories = Vec::new();
    for &q in &config.evaluation.q {
        let rcfg = config.realization_config(q, master)?;
        let batch = generate_batch(&rcfg, config.evaluation.n_realizations, &model, ARState::ZERO, &sampler);
        let mut reports = Vec::with_capacity(2);
        for m in &methods {
            let traces = dispatch_batch(&m.solution, &m.tree, &batch, &params)?;
            reports.push(EvaluationReport::from_traces(&traces, &batch, &params)?);
            trajectories.extend(trajectory_rows(m.mode, q, &m.tree, &traces, &batch));
        }
        let biased = reports.pop().expect("two methods");
        let benchmark = reports.pop().expect("two methods");
        columns.push(TableColumn {
            q,
            n_rare: benchmark.n_rare,
            benchmark,
            biased,
        });
    }
    Ok(TableRun {
        report: TableReport {
            master_seed: master,
            n_realizations: config.evaluation.n_realizations,
            benchmark_objective: methods[0].solution.objective,
            biased_objective: methods[1].solution.objective,
            tail_weights: tail.weights.clone(),
            columns,
        },
        tail,
        trajectories,
    })
}

/// Runs [`reproduce_table`] for `replications` derived master seeds.
pub fn reproduce_replications(config: &RunConfig, replications: usize) -> Result<Vec<TableRun>> {
    par::map_range(replications, |r| reproduce_table(config, config.replication_seed(r)))
        .into_iter()
        .collect()
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "---".to_string(), |v| format!("{v:.1}%"))
}

/// Plain-text rendering in the layout of the results table.
pub fn render_table(report: &TableReport) -> String {
    let mut header = format!(
        "{:<48}",
        format!("metric (n = {}, seed {})", report.n_realizations, report.master_seed)
    );
    let mut sub = format!("{:<48}", "");
    for c in &report.columns {
        header.push_str(&format!(
            "| {:^21} ",
            format!("q = {:.0}% (n_r = {})", c.q * 100.0, c.n_rare)
        ));
        sub.push_str(&format!("| {:>10} {:>10} ", "BM", "Biased"));
    }
    let mut out = format!("{header}\n{sub}\n");
    type Row = (&'static str, fn(&EvaluationReport) -> String);
    let rows: [Row; 5] = [
        ("1 Average observed cost", |r| format!("{:.1}", r.avg_cost)),
        ("2 % Realizations with some unsatisfied demand", |r| {
            pct(Some(r.pct_realizations_unsatisfied))
        }),
        ("3 % Unsatisfied power demand, all", |r| {
            pct(Some(r.pct_unmet_power_all))
        }),
        ("4 % Rare realizations with unsatisfied demand", |r| {
            pct(r.pct_rare_realizations_unsatisfied)
        }),
        ("5 % Unsatisfied power demand, rare", |r| pct(r.pct_unmet_power_rare)),
    ];
    for (label, cell) in rows {
        out.push_str(&format!("{label:<48}"));
        for c in &report.columns {
            out.push_str(&format!("| {:>10} {:>10} ", cell(&c.benchmark), cell(&c.biased)));
        }
        out.push('\n');
    }
    out
}
