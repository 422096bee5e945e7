//! TOML run configuration. Every field has a default, and the defaults are
//! the reference experiment: 5 stages, 20 branches, `W_0 = 10` GW, 6 GW
//! demand, 400 GW plant capacity, `a = 2`, `c = 3`.
//!
//! ```toml
//! master_seed = 2025
//!
//! [ar]
//! phi1 = 0.9
//! phi2 = 0.05
//! innovation_std = 1.0
//!
//! [tail]
//! a = 2.0
//! c_threshold = 3.0
//! inner_edge = 9.0
//! inner_count = 5
//!
//! [fv]
//! n_particles = 1000
//! burn_in = 100
//! n_steps = 10000
//! mc_steps = 10000000
//!
//! [tree]
//! horizon = 5
//! branching = 20
//! w0 = 10.0
//! mode = "biased"
//! rare_fraction = 0.5
//!
//! [cost]
//! c_start = 3.0
//! c_operate = 5.0
//! c_stop = 2.0
//! c_per_gw = 20.0
//! p_max = 400.0
//! demand = 6.0            # or one value per stage
//! root_states = ["idle", "starting"]
//! shortfall_tol = 0.0
//!
//! [evaluation]
//! q = [0.0, 0.05, 0.10]
//! n_realizations = 100
//! replications = 1
//! # y0 defaults to tree.w0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fv::{FVConfig, TailPartition, TailRunConfig};
use crate::seed::{derive_seed, tag};
use crate::solver::{CostParams, PlantState, SolverOptions};
use crate::stochastic::{ARModel, RealizationConfig};
use crate::tree::{node_count, TreeConfig, TreeMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub ar: ArSection,
    pub tail: TailSection,
    pub fv: FvSection,
    pub tree: TreeSection,
    pub cost: CostSection,
    pub evaluation: EvaluationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            master_seed: 2025,
            ar: ArSection::default(),
            tail: TailSection::default(),
            fv: FvSection::default(),
            tree: TreeSection::default(),
            cost: CostSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArSection {
    pub phi1: f64,
    pub phi2: f64,
    pub innovation_std: f64,
}

impl Default for ArSection {
    fn default() -> Self {
        let m = ARModel::default();
        ArSection {
            phi1: m.phi1(),
            phi2: m.phi2(),
            innovation_std: m.innovation_std(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailSection {
    pub a: f64,
    pub c_threshold: f64,
    pub inner_edge: f64,
    pub inner_count: usize,
}

impl Default for TailSection {
    fn default() -> Self {
        TailSection {
            a: 2.0,
            c_threshold: 3.0,
            inner_edge: 9.0,
            inner_count: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FvSection {
    pub n_particles: usize,
    pub burn_in: usize,
    pub n_steps: usize,
    /// Plain-simulation length for the exit mass and excursion survival.
    pub mc_steps: u64,
}

impl Default for FvSection {
    fn default() -> Self {
        let fv = FVConfig::default();
        FvSection {
            n_particles: fv.n_particles,
            burn_in: fv.burn_in,
            n_steps: fv.n_steps,
            mc_steps: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeSection {
    pub horizon: usize,
    pub branching: usize,
    pub w0: f64,
    pub mode: TreeMode,
    pub rare_fraction: f64,
}

impl Default for TreeSection {
    fn default() -> Self {
        TreeSection {
            horizon: 5,
            branching: 20,
            w0: 10.0,
            mode: TreeMode::Biased,
            rare_fraction: 0.5,
        }
    }
}

/// A flat demand or one value per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Demand {
    Constant(f64),
    PerStage(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub c_start: f64,
    pub c_operate: f64,
    pub c_stop: f64,
    pub c_per_gw: f64,
    pub p_max: f64,
    pub demand: Demand,
    pub root_states: Vec<PlantState>,
    pub shortfall_tol: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        let c = CostParams::reference(1);
        let s = SolverOptions::default();
        CostSection {
            c_start: c.c_start,
            c_operate: c.c_operate,
            c_stop: c.c_stop,
            c_per_gw: c.c_per_gw,
            p_max: c.p_max,
            demand: Demand::Constant(c.demand[0]),
            root_states: s.allowed_root,
            shortfall_tol: s.shortfall_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub q: Vec<f64>,
    pub n_realizations: usize,
    pub replications: usize,
    /// Initial realized wind; defaults to `tree.w0`.
    pub y0: Option<f64>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            q: vec![0.0, 0.05, 0.10],
            n_realizations: 100,
            replications: 1,
            y0: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::invalid("config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Re-checks every module-level invariant.
    pub fn validate(&self) -> Result<()> {
        self.ar_model()?;
        self.partition()?;
        self.tail_run_config(0).fv.validate()?;
        if self.fv.mc_steps < 100_000 {
            return Err(Error::invalid("fv.mc_steps", "must be >= 100000"));
        }
        self.tree_config(self.tree.mode, 0)?;
        self.cost_params()?;
        self.solver_options().validate()?;
        if self.evaluation.n_realizations == 0 {
            return Err(Error::invalid("evaluation.n_realizations", "must be >= 1"));
        }
        for &q in &self.evaluation.q {
            self.realization_config(q, 0)?;
        }
        Ok(())
    }

    pub fn ar_model(&self) -> Result<ARModel> {
        let ar = ARModel::new(self.ar.phi1, self.ar.phi2, self.ar.innovation_std)?;
        if ar.innovation_std() <= 0.0 {
            return Err(Error::invalid("ar.innovation_std", "must be > 0"));
        }
        Ok(ar)
    }

    pub fn partition(&self) -> Result<TailPartition> {
        TailPartition::new(
            self.tail.a,
            self.tail.c_threshold,
            self.tail.inner_edge,
            self.tail.inner_count,
        )
    }

    pub fn tail_run_config(&self, master: u64) -> TailRunConfig {
        TailRunConfig {
            fv: FVConfig {
                n_particles: self.fv.n_particles,
                n_steps: self.fv.n_steps,
                burn_in: self.fv.burn_in,
                seed: derive_seed(master, tag::FLEMING_VIOT, 0),
            },
            mc_steps: self.fv.mc_steps,
            mc_seed: derive_seed(master, tag::EXIT_MASS, 0),
        }
    }

    pub fn tree_config(&self, mode: TreeMode, master: u64) -> Result<TreeConfig> {
        let tag = match mode {
            TreeMode::Benchmark => tag::TREE_BENCHMARK,
            TreeMode::Biased => tag::TREE_BIASED,
        };
        let config = TreeConfig {
            horizon: self.tree.horizon,
            branching: self.tree.branching,
            w0: self.tree.w0,
            mode,
            rare_fraction: self.tree.rare_fraction,
            seed: derive_seed(master, tag, 0),
        };
        config.validate()?;
        node_count(config.branching, config.horizon)?;
        Ok(config)
    }

    pub fn cost_params(&self) -> Result<CostParams> {
        let h = self.tree.horizon;
        let demand = match &self.cost.demand {
            Demand::Constant(d) => vec![*d; h],
            Demand::PerStage(v) if v.len() == h => v.clone(),
            Demand::PerStage(v) => {
                return Err(Error::invalid(
                    "cost.demand",
                    format!("{} values for {h} stages", v.len()),
                ));
            }
        };
        let params = CostParams {
            c_start: self.cost.c_start,
            c_operate: self.cost.c_operate,
            c_stop: self.cost.c_stop,
            c_per_gw: self.cost.c_per_gw,
            p_max: self.cost.p_max,
            demand,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            allowed_root: self.cost.root_states.clone(),
            shortfall_tol: self.cost.shortfall_tol,
        }
    }

    /// Realization batch settings for `q`. The batch seed does not depend on
    /// `q`, which couples the batches across columns.
    pub fn realization_config(&self, q: f64, master: u64) -> Result<RealizationConfig> {
        let config = RealizationConfig {
            q,
            horizon: self.tree.horizon,
            y0: self.evaluation.y0.unwrap_or(self.tree.w0),
            seed: derive_seed(master, tag::REALIZATION_BATCH, 0),
        };
        config.validate()?;
        Ok(config)
    }

    /// Master seed of replication `r`; replication 0 uses `master_seed` itself.
    pub fn replication_seed(&self, r: usize) -> u64 {
        if r == 0 {
            self.master_seed
        } else {
            derive_seed(self.master_seed, tag::REPLICATION, r as u64)
        }
    }
}
