//! Exact solution of the scenario-tree commitment problem.
//!
//! One plant state is chosen per tree node. Consecutive states must follow
//! the plant state machine, every node with positive shortfall must be
//! operating, and the objective is the scenario-averaged cost, i.e. the sum
//! of node costs weighted by `B^-stage`. Constraints only couple a node with
//! its parent and the objective separates over nodes, so a bottom-up value
//! recursion over the tree solves the integer program exactly.
//!
//! Subtree costs are always accumulated as `weight * cost + sum(children in
//! id order)`. The solver, the verifier and the test oracles share that
//! association order, which makes their objectives bit-identical.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::fmt17;
use crate::par;
use crate::tree::{stage_weight, ScenarioTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum PlantState {
    Idle = 1,
    Starting = 2,
    Operating = 3,
    Stopping = 4,
}

impl PlantState {
    pub const ALL: [PlantState; 4] = [
        PlantState::Idle,
        PlantState::Starting,
        PlantState::Operating,
        PlantState::Stopping,
    ];

    /// States allowed at the next stage.
    pub fn successors(self) -> [PlantState; 2] {
        use PlantState::*;
        match self {
            Idle | Stopping => [Idle, Starting],
            Starting | Operating => [Operating, Stopping],
        }
    }

    pub fn can_follow(self, previous: PlantState) -> bool {
        previous.successors().contains(&self)
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        PlantState::ALL.get(usize::from(code).wrapping_sub(1)).copied()
    }

    fn index(self) -> usize {
        self as usize - 1
    }
}

impl fmt::Display for PlantState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            PlantState::Idle => "idle",
            PlantState::Starting => "starting",
            PlantState::Operating => "operating",
            PlantState::Stopping => "stopping",
        };
        f.write_str(name)
    }
}

pub fn successor_states(s: PlantState) -> [PlantState; 2] {
    s.successors()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub c_start: f64,
    pub c_operate: f64,
    pub c_stop: f64,
    /// Cost per GW supplied while operating.
    pub c_per_gw: f64,
    pub p_max: f64,
    /// Demand per stage, GW.
    pub demand: Vec<f64>,
}

impl CostParams {
    /// Start 3, operate 5, stop 2, 20 per GW, 400 GW capacity and a flat
    /// 6 GW demand.
    pub fn reference(horizon: usize) -> Self {
        CostParams {
            c_start: 3.0,
            c_operate: 5.0,
            c_stop: 2.0,
            c_per_gw: 20.0,
            p_max: 400.0,
            demand: vec![6.0; horizon],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cost.c_start", self.c_start),
            ("cost.c_operate", self.c_operate),
            ("cost.c_stop", self.c_stop),
            ("cost.c_per_gw", self.c_per_gw),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, format!("{v} must be finite and >= 0")));
            }
        }
        if !(self.p_max.is_finite() && self.p_max > 0.0) {
            return Err(Error::invalid("cost.p_max", format!("{} must be > 0", self.p_max)));
        }
        if self.demand.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::invalid("cost.demand", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn demand_at(&self, stage: usize) -> f64 {
        self.demand[stage]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        CostParams {
            c_start: self.c_start * factor,
            c_operate: self.c_operate * factor,
            c_stop: self.c_stop * factor,
            c_per_gw: self.c_per_gw * factor,
            ..self.clone()
        }
    }
}

/// Coal power needed to cover demand: `min(p_max, max(demand - wind, 0))`.
#[inline]
pub fn shortfall_power(demand: f64, wind: f64, p_max: f64) -> f64 {
    p_max.min((demand - wind).max(0.0))
}

#[inline]
pub fn stage_cost(state: PlantState, p: f64, params: &CostParams) -> f64 {
    match state {
        PlantState::Idle => 0.0,
        PlantState::Starting => params.c_start,
        PlantState::Operating => params.c_operate + params.c_per_gw * p,
        PlantState::Stopping => params.c_stop,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub allowed_root: Vec<PlantState>,
    /// Shortfall above this value forces the plant to operate.
    pub shortfall_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            allowed_root: vec![PlantState::Idle, PlantState::Starting],
            shortfall_tol: 0.0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.allowed_root.is_empty() {
            return Err(Error::invalid("solver.allowed_root", "must not be empty"));
        }
        if !(self.shortfall_tol.is_finite() && self.shortfall_tol >= 0.0) {
            return Err(Error::invalid("solver.shortfall_tol", "must be finite and >= 0"));
        }
        Ok(())
    }

    fn root_allowed(&self, s: PlantState) -> bool {
        self.allowed_root.contains(&s)
    }
}

/// Shortfall power at each node of `tree`.
pub fn node_shortfalls(tree: &ScenarioTree, params: &CostParams) -> Vec<f64> {
    tree.nodes()
        .iter()
        .map(|n| shortfall_power(params.demand_at(n.stage), n.w, params.p_max))
        .collect()
}

fn check_inputs(tree: &ScenarioTree, params: &CostParams, options: &SolverOptions) -> Result<()> {
    params.validate()?;
    options.validate()?;
    if params.demand.len() < tree.horizon() {
        return Err(Error::invalid(
            "cost.demand",
            format!(
                "{} stages of demand for a {}-stage tree",
                params.demand.len(),
                tree.horizon()
            ),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// State per node id; empty when infeasible.
    pub states: Vec<PlantState>,
    /// Expected total cost; `+inf` when infeasible.
    pub objective: f64,
    pub feasible: bool,
    /// A node whose forcing constraint cannot be met, when infeasible.
    pub witness: Option<usize>,
}

impl Solution {
    pub fn root_state(&self) -> Option<PlantState> {
        self.states.first().copied()
    }
}

type Values = [f64; 4];

fn best_successor(values: &Values, from: PlantState) -> (PlantState, f64) {
    let [a, b] = from.successors();
    let (va, vb) = (values[a.index()], values[b.index()]);
    // Successors are listed in enumeration order, so ties keep the lower one.
    if vb < va {
        (b, vb)
    } else {
        (a, va)
    }
}

/// Bottom-up value recursion
/// `V(n, s) = B^-stage(n) * cost(s, p(n)) + sum_children min_{s' in succ(s)} V(m, s')`
/// with `V(n, s) = +inf` when `p(n) > tol` and `s` is not operating. Stages
/// are swept leaves first; nodes within a stage are independent.
pub fn solve_tree_dp(tree: &ScenarioTree, params: &CostParams, options: &SolverOptions) -> Result<Solution> {
    check_inputs(tree, params, options)?;
    let shortfall = node_shortfalls(tree, params);
    let b = tree.branching();
    let mut values: Vec<Values> = vec![[0.0; 4]; tree.len()];

    for stage in (0..tree.horizon()).rev() {
        let range = tree.stage_range(stage);
        let (head, below) = values.split_at_mut(range.end);
        let below: &[Values] = below;
        let child_base = range.end;
        let weight = stage_weight(b, stage);
        let leaf = stage + 1 == tree.horizon();
        let shortfall = &shortfall;
        par::fill_indexed(&mut head[range.start..], |i, slot| {
            let id = range.start + i;
            let p = shortfall[id];
            let forced = p > options.shortfall_tol;
            for s in PlantState::ALL {
                slot[s.index()] = if forced && s != PlantState::Operating {
                    f64::INFINITY
                } else {
                    let mut acc = weight * stage_cost(s, p, params);
                    if !leaf {
                        for c in tree.children(id) {
                            acc += best_successor(&below[c - child_base], s).1;
                        }
                    }
                    acc
                };
            }
        });
    }

    let root_values = &values[0];
    let mut root = None;
    for s in PlantState::ALL {
        if options.root_allowed(s) && root.is_none_or(|(_, v)| root_values[s.index()] < v) {
            root = Some((s, root_values[s.index()]));
        }
    }
    let (root_state, objective) = root.expect("allowed_root is non-empty");
    if !objective.is_finite() {
        return Ok(Solution {
            states: Vec::new(),
            objective: f64::INFINITY,
            feasible: false,
            witness: Some(find_witness(tree, &values, &shortfall, options)),
        });
    }

    let mut states = vec![PlantState::Idle; tree.len()];
    states[0] = root_state;
    for id in 1..tree.len() {
        let parent = (id - 1) / b;
        states[id] = best_successor(&values[id], states[parent]).0;
    }
    Ok(Solution {
        states,
        objective,
        feasible: true,
        witness: None,
    })
}

/// Descends from the root through infeasible subtrees until reaching a node
/// that is forced to operate but cannot be.
fn find_witness(tree: &ScenarioTree, values: &[Values], shortfall: &[f64], options: &SolverOptions) -> usize {
    let mut node = 0;
    let mut possible: Vec<PlantState> = options.allowed_root.clone();
    possible.sort();
    loop {
        let forced = shortfall[node] > options.shortfall_tol;
        if forced && !possible.contains(&PlantState::Operating) {
            return node;
        }
        let s = if forced { PlantState::Operating } else { possible[0] };
        let next = tree
            .children(node)
            .find(|&c| !best_successor(&values[c], s).1.is_finite());
        match next {
            Some(c) => {
                node = c;
                possible = s.successors().to_vec();
            }
            None => return node,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    StateCount {
        expected: usize,
        found: usize,
    },
    RootState {
        state: PlantState,
    },
    Transition {
        parent: usize,
        child: usize,
        from: PlantState,
        to: PlantState,
    },
    Forcing {
        node: usize,
        state: PlantState,
        shortfall: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::StateCount { expected, found } => write!(f, "expected {expected} node states, found {found}"),
            Violation::RootState { state } => write!(f, "root state {state} is not allowed"),
            Violation::Transition {
                parent,
                child,
                from,
                to,
            } => {
                write!(f, "edge {parent} -> {child}: {from} cannot be followed by {to}")
            }
            Violation::Forcing { node, state, shortfall } => {
                write!(f, "node {node} has shortfall {shortfall} GW but is {state}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub objective: f64,
    pub violation: Option<Violation>,
}

impl Verification {
    pub fn feasible(&self) -> bool {
        self.violation.is_none()
    }
}

/// Re-checks a state assignment against every constraint and recomputes its
/// expected cost. Reports the first violation in node order.
pub fn verify_solution(
    tree: &ScenarioTree,
    params: &CostParams,
    options: &SolverOptions,
    states: &[PlantState],
) -> Result<Verification> {
    check_inputs(tree, params, options)?;
    if states.len() != tree.len() {
        return Ok(Verification {
            objective: f64::NAN,
            violation: Some(Violation::StateCount {
                expected: tree.len(),
                found: states.len(),
            }),
        });
    }
    let mut violation = None;
    if !options.root_allowed(states[0]) {
        violation = Some(Violation::RootState { state: states[0] });
    }
    for node in tree.nodes() {
        if violation.is_some() {
            break;
        }
        let s = states[node.id];
        if let Some(parent) = node.parent {
            if !s.can_follow(states[parent]) {
                violation = Some(Violation::Transition {
                    parent,
                    child: node.id,
                    from: states[parent],
                    to: s,
                });
                break;
            }
        }
        let p = shortfall_power(params.demand_at(node.stage), node.w, params.p_max);
        if p > options.shortfall_tol && s != PlantState::Operating {
            violation = Some(Violation::Forcing {
                node: node.id,
                state: s,
                shortfall: p,
            });
        }
    }

    let b = tree.branching();
    let mut subtree = vec![0.0; tree.len()];
    for node in tree.nodes().iter().rev() {
        let p = shortfall_power(params.demand_at(node.stage), node.w, params.p_max);
        let mut acc = stage_weight(b, node.stage) * stage_cost(states[node.id], p, params);
        for c in tree.children(node.id) {
            acc += subtree[c];
        }
        subtree[node.id] = acc;
    }
    Ok(Verification {
        objective: subtree[0],
        violation,
    })
}

/// JSON sidecar of a solution file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub objective: Option<f64>,
    pub feasible: bool,
    pub root_state: Option<u8>,
    pub witness: Option<usize>,
}

impl From<&Solution> for SolutionSummary {
    fn from(s: &Solution) -> Self {
        SolutionSummary {
            objective: s.feasible.then_some(s.objective),
            feasible: s.feasible,
            root_state: s.root_state().map(PlantState::code),
            witness: s.witness,
        }
    }
}

/// `node_id,state` with states coded 1-4.
pub fn write_solution_csv<W: Write>(solution: &Solution, mut out: W) -> Result<()> {
    writeln!(out, "node_id,state")?;
    for (id, s) in solution.states.iter().enumerate() {
        writeln!(out, "{id},{}", s.code())?;
    }
    Ok(())
}

pub fn read_solution<R: BufRead>(csv: R, summary: &SolutionSummary) -> Result<Solution> {
    let mut states = Vec::new();
    for (i, line) in csv.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if i == 0 {
            if line.trim() != "node_id,state" {
                return Err(Error::format(1, format!("unexpected header `{line}`")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let (id, code) = line
            .split_once(',')
            .ok_or_else(|| Error::format(lineno, "expected `node_id,state`"))?;
        let id: usize = id
            .parse()
            .map_err(|_| Error::format(lineno, format!("bad node id `{id}`")))?;
        if id != states.len() {
            return Err(Error::format(lineno, format!("node id {id} out of order")));
        }
        let state = code
            .parse::<u8>()
            .ok()
            .and_then(PlantState::from_code)
            .ok_or_else(|| Error::format(lineno, format!("bad state `{code}`")))?;
        states.push(state);
    }
    Ok(Solution {
        states,
        objective: summary.objective.unwrap_or(f64::INFINITY),
        feasible: summary.feasible,
        witness: summary.witness,
    })
}

/// Expected cost in the summary's fixed-width form, used in logs.
pub fn describe(solution: &Solution) -> String {
    if solution.feasible {
        format!("objective {} root {}", fmt17(solution.objective), solution.states[0])
    } else {
        format!("infeasible, witness node {:?}", solution.witness)
    }
}
