//! Order-`B` scenario trees of wind power.
//!
//! Nodes are stored breadth-first. Every non-leaf has exactly `B` children,
//! so the children of node `n` are `n*B + 1 ..= n*B + B` and the nodes of
//! stage `h` occupy one contiguous id range.

use std::io::{BufRead, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::fmt17;
use crate::fv::RareChangeSampler;
use crate::par;
use crate::seed::{self, tag};
use crate::stochastic::{apply_change, ARModel, ARState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeMode {
    /// Every branch is an AR draw.
    Benchmark,
    /// A fixed share of each sibling group is drawn from the rare sampler.
    Biased,
}

impl TreeMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TreeMode::Benchmark => "benchmark",
            TreeMode::Biased => "biased",
        }
    }
}

impl std::str::FromStr for TreeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "benchmark" => Ok(TreeMode::Benchmark),
            "biased" => Ok(TreeMode::Biased),
            other => Err(Error::invalid("mode", format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub horizon: usize,
    pub branching: usize,
    pub w0: f64,
    pub mode: TreeMode,
    /// Share of each sibling group fed by the rare sampler in biased mode.
    pub rare_fraction: f64,
    pub seed: u64,
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::invalid("tree.horizon", format!("{} < 2", self.horizon)));
        }
        if self.branching < 1 {
            return Err(Error::invalid("tree.branching", "must be >= 1"));
        }
        if !(self.w0.is_finite() && self.w0 >= 0.0) {
            return Err(Error::invalid(
                "tree.w0",
                format!("{} must be finite and >= 0", self.w0),
            ));
        }
        node_count(self.branching, self.horizon)?;
        if self.mode == TreeMode::Biased {
            self.rare_children()?;
        }
        Ok(())
    }

    /// Rare children per sibling group; zero in benchmark mode.
    pub fn rare_children(&self) -> Result<usize> {
        if self.mode == TreeMode::Benchmark {
            return Ok(0);
        }
        let exact = self.branching as f64 * self.rare_fraction;
        let rounded = exact.round();
        if !(self.rare_fraction > 0.0 && self.rare_fraction <= 1.0) || (exact - rounded).abs() > 1e-9 || rounded < 1.0 {
            return Err(Error::invalid(
                "tree.rare_fraction",
                format!(
                    "branching {} x rare_fraction {} must be a positive integer",
                    self.branching, self.rare_fraction
                ),
            ));
        }
        Ok(rounded as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub stage: usize,
    pub w: f64,
    /// Z history of the path; `z_lag1` is the (unclamped) change into this node.
    pub ar_state: ARState,
    pub rare_branch: bool,
}

impl TreeNode {
    /// Change into this node before clamping (zero at the root).
    pub fn change(&self) -> f64 {
        if self.parent.is_some() {
            self.ar_state.z_lag1
        } else {
            0.0
        }
    }
}

/// `1 + B + ... + B^(H-1)`, checked.
pub fn node_count(branching: usize, horizon: usize) -> Result<usize> {
    let mut total: usize = 0;
    let mut level: usize = 1;
    for h in 0..horizon {
        total = total.checked_add(level).ok_or(Error::Overflow("node count"))?;
        if h + 1 < horizon {
            level = level.checked_mul(branching).ok_or(Error::Overflow("node count"))?;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    config: TreeConfig,
    nodes: Vec<TreeNode>,
    /// `stage_offsets[h]` is the first id of stage `h`; the last entry is the node count.
    stage_offsets: Vec<usize>,
}

impl ScenarioTree {
    fn from_nodes(config: TreeConfig, nodes: Vec<TreeNode>) -> Result<Self> {
        let stage_offsets = (0..=config.horizon)
            .map(|h| node_count(config.branching, h))
            .collect::<Result<_>>()?;
        Ok(ScenarioTree {
            config,
            nodes,
            stage_offsets,
        })
    }

    /// Tree with the given node wind powers in breadth-first order and zero
    /// AR history; the horizon is inferred from the node count.
    pub fn from_winds(branching: usize, winds: &[f64]) -> Result<Self> {
        let horizon = (1..=64)
            .find(|&h| node_count(branching, h).is_ok_and(|n| n == winds.len()))
            .ok_or_else(|| {
                Error::invalid(
                    "winds",
                    format!("{} nodes is not a complete {branching}-ary tree", winds.len()),
                )
            })?;
        let config = TreeConfig {
            horizon,
            branching,
            w0: winds[0],
            mode: TreeMode::Benchmark,
            rare_fraction: 0.5,
            seed: 0,
        };
        config.validate()?;
        let offsets: Vec<usize> = (0..=horizon).map(|h| node_count(branching, h)).collect::<Result<_>>()?;
        let nodes = winds
            .iter()
            .enumerate()
            .map(|(id, &w)| {
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::invalid("winds", format!("node {id}: {w}")));
                }
                Ok(TreeNode {
                    id,
                    parent: (id > 0).then(|| (id - 1) / branching),
                    stage: offsets.partition_point(|&o| o <= id) - 1,
                    w,
                    ar_state: ARState::ZERO,
                    rare_branch: false,
                })
            })
            .collect::<Result<_>>()?;
        ScenarioTree::from_nodes(config, nodes)
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn branching(&self) -> usize {
        self.config.branching
    }

    pub fn node(&self, id: usize) -> Result<&TreeNode> {
        self.nodes.get(id).ok_or(Error::InvalidNode {
            id,
            count: self.nodes.len(),
        })
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    /// Ids of stage `h`.
    pub fn stage_range(&self, h: usize) -> Range<usize> {
        self.stage_offsets[h]..self.stage_offsets[h + 1]
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        id >= self.stage_offsets[self.config.horizon - 1]
    }

    /// Child ids of `id`; empty for leaves.
    pub fn children(&self, id: usize) -> Range<usize> {
        if self.is_leaf(id) {
            return 0..0;
        }
        let b = self.config.branching;
        id * b + 1..id * b + b + 1
    }

    /// Number of scenarios `S = B^(H-1)`.
    pub fn n_scenarios(&self) -> usize {
        self.stage_range(self.config.horizon - 1).len()
    }

    pub fn leaves(&self) -> Range<usize> {
        self.stage_range(self.config.horizon - 1)
    }

    /// Share of scenarios passing through `id`, `B^-stage`.
    pub fn node_weight(&self, id: usize) -> Result<f64> {
        Ok(stage_weight(self.config.branching, self.node(id)?.stage))
    }

    /// Root-to-node path ids.
    pub fn path_to(&self, id: usize) -> Vec<usize> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }
}

#[inline]
pub(crate) fn stage_weight(branching: usize, stage: usize) -> f64 {
    1.0 / (branching as f64).powi(stage as i32)
}

/// Builds a tree stage by stage. The children of node `n` are drawn from the
/// stream derived from `(config.seed, "tree-node", n)`, so construction is
/// independent of the order in which sibling groups are generated. In biased
/// mode the first `B - rare` children are AR draws and the rest come from
/// `sampler`; a rare change enters the child's AR history like any other.
pub fn build_tree(config: &TreeConfig, model: &ARModel, sampler: Option<&RareChangeSampler>) -> Result<ScenarioTree> {
    config.validate()?;
    model.validate()?;
    let rare = config.rare_children()?;
    let sampler = match (config.mode, sampler) {
        (TreeMode::Biased, None) => {
            return Err(Error::invalid("tail", "biased trees need tail probabilities"));
        }
        (TreeMode::Biased, s) => s,
        (TreeMode::Benchmark, _) => None,
    };
    let b = config.branching;
    let n_ar = b - rare;

    let total = node_count(b, config.horizon)?;
    let mut nodes = Vec::with_capacity(total);
    nodes.push(TreeNode {
        id: 0,
        parent: None,
        stage: 0,
        w: config.w0,
        ar_state: ARState::ZERO,
        rare_branch: false,
    });

    let mut stage_start = 0;
    for stage in 1..config.horizon {
        let parents = &nodes[stage_start..];
        let first_parent = stage_start;
        let groups: Vec<Vec<TreeNode>> = par::map_slice(parents, |parent| {
            let mut rng = seed::derived_stream(config.seed, tag::TREE_NODE, parent.id as u64);
            (0..b)
                .map(|j| {
                    let (z, ar_state, rare_branch) = if j < n_ar {
                        let (z, st) = model.step(parent.ar_state, &mut rng);
                        (z, st, false)
                    } else {
                        let z = sampler.expect("checked above").sample(&mut rng);
                        (z, parent.ar_state.push(z), true)
                    };
                    TreeNode {
                        id: parent.id * b + 1 + j,
                        parent: Some(parent.id),
                        stage,
                        w: apply_change(parent.w, z),
                        ar_state,
                        rare_branch,
                    }
                })
                .collect()
        });
        stage_start = nodes.len();
        debug_assert_eq!(stage_start, first_parent + parents.len());
        nodes.extend(groups.into_iter().flatten());
    }
    ScenarioTree::from_nodes(*config, nodes)
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    #[serde(rename = "B")]
    branching: usize,
    #[serde(rename = "H")]
    horizon: usize,
    w0: f64,
    mode: TreeMode,
    seed: u64,
    count: usize,
    rare_fraction: f64,
}

/// Writes the tree: a JSON header line, then
/// `id,parent,stage,w,z_lag1,z_lag2,rare_flag` per node.
pub fn write_tree<W: Write>(tree: &ScenarioTree, mut out: W) -> Result<()> {
    let c = &tree.config;
    let header = Header {
        branching: c.branching,
        horizon: c.horizon,
        w0: c.w0,
        mode: c.mode,
        seed: c.seed,
        count: tree.len(),
        rare_fraction: c.rare_fraction,
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for n in &tree.nodes {
        let parent = n.parent.map(|p| p.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            n.id,
            parent,
            n.stage,
            fmt17(n.w),
            fmt17(n.ar_state.z_lag1),
            fmt17(n.ar_state.z_lag2),
            u8::from(n.rare_branch)
        )?;
    }
    Ok(())
}

pub fn read_tree<R: BufRead>(input: R) -> Result<ScenarioTree> {
    let mut lines = input.lines();
    let header_line = lines.next().ok_or_else(|| Error::format(1, "empty file"))??;
    let header: Header =
        serde_json::from_str(&header_line).map_err(|e| Error::format(1, format!("bad header: {e}")))?;
    let config = TreeConfig {
        horizon: header.horizon,
        branching: header.branching,
        w0: header.w0,
        mode: header.mode,
        rare_fraction: header.rare_fraction,
        seed: header.seed,
    };
    config.validate().map_err(|e| Error::format(1, e.to_string()))?;
    let expected = node_count(config.branching, config.horizon)?;
    if header.count != expected {
        return Err(Error::format(
            1,
            format!(
                "count {} does not match B = {}, H = {}",
                header.count, config.branching, config.horizon
            ),
        ));
    }

    let b = config.branching;
    let offsets: Vec<usize> = (0..=config.horizon).map(|h| node_count(b, h)).collect::<Result<_>>()?;
    let mut nodes = Vec::with_capacity(expected);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        if nodes.len() == expected {
            return Err(Error::format(lineno, "more node lines than the header count"));
        }
        let node = parse_node(&line, lineno)?;
        let id = nodes.len();
        let stage = offsets.partition_point(|&o| o <= id) - 1;
        let parent = (id > 0).then(|| (id - 1) / b);
        if node.id != id || node.parent != parent || node.stage != stage {
            return Err(Error::format(
                lineno,
                format!(
                    "node {} (parent {:?}, stage {}) breaks breadth-first layout",
                    node.id, node.parent, node.stage
                ),
            ));
        }
        if !(node.w.is_finite() && node.w >= 0.0) {
            return Err(Error::format(
                lineno,
                format!("wind power {} must be finite and >= 0", node.w),
            ));
        }
        nodes.push(node);
    }
    if nodes.len() != expected {
        return Err(Error::format(
            nodes.len() + 2,
            format!("truncated: expected {expected} nodes, found {}", nodes.len()),
        ));
    }
    ScenarioTree::from_nodes(config, nodes)
}

fn parse_node(line: &str, lineno: usize) -> Result<TreeNode> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 7 {
        return Err(Error::format(
            lineno,
            format!("expected 7 fields, found {}", fields.len()),
        ));
    }
    let int = |s: &str, name: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(lineno, format!("bad {name} `{s}`")))
    };
    let float = |s: &str, name: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::format(lineno, format!("bad {name} `{s}`")))
    };
    let parent = if fields[1].is_empty() {
        None
    } else {
        Some(int(fields[1], "parent")?)
    };
    let rare_branch = match fields[6] {
        "0" => false,
        "1" => true,
        other => return Err(Error::format(lineno, format!("bad rare flag `{other}`"))),
    };
    Ok(TreeNode {
        id: int(fields[0], "id")?,
        parent,
        stage: int(fields[2], "stage")?,
        w: float(fields[3], "w")?,
        ar_state: ARState::new(float(fields[4], "z_lag1")?, float(fields[5], "z_lag2")?),
        rare_branch,
    })
}
