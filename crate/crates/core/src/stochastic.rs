//! The wind-change process and the wind paths built from it.
//!
//! Wind power changes `Z_h = W_h - W_{h-1}` follow a zero-mean AR(2) model
//! with Gaussian innovations. Wind power itself is recovered by accumulating
//! changes and clamping at zero. Out-of-sample evaluation paths mix AR
//! changes with rare negative jumps drawn from the tail sampler.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::fmt17;
use crate::fv::RareChangeSampler;
use crate::par;
use crate::seed::{self, tag};

/// Zero-mean AR(2) model `Z_h = phi1 Z_{h-1} + phi2 Z_{h-2} + eps_h`,
/// `eps_h ~ N(0, innovation_std^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ARModel {
    phi1: f64,
    phi2: f64,
    innovation_std: f64,
}

impl Default for ARModel {
    fn default() -> Self {
        ARModel {
            phi1: 0.90,
            phi2: 0.05,
            innovation_std: 1.0,
        }
    }
}

impl ARModel {
    /// Rejects coefficients outside the AR(2) stationarity triangle. A zero
    /// innovation std is accepted and yields the deterministic recursion.
    pub fn new(phi1: f64, phi2: f64, innovation_std: f64) -> Result<Self> {
        let model = ARModel {
            phi1,
            phi2,
            innovation_std,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let ARModel {
            phi1,
            phi2,
            innovation_std,
        } = *self;
        if !(phi1.is_finite() && phi2.is_finite()) {
            return Err(Error::invalid("ar", "coefficients must be finite"));
        }
        if !(phi2 + phi1 < 1.0 && phi2 - phi1 < 1.0 && phi2.abs() < 1.0) {
            return Err(Error::invalid(
                "ar",
                format!("phi1 = {phi1}, phi2 = {phi2} is not stationary"),
            ));
        }
        if !(innovation_std.is_finite() && innovation_std >= 0.0) {
            return Err(Error::invalid(
                "ar.innovation_std",
                format!("{innovation_std} must be finite and >= 0"),
            ));
        }
        Ok(())
    }

    pub fn phi1(&self) -> f64 {
        self.phi1
    }

    pub fn phi2(&self) -> f64 {
        self.phi2
    }

    pub fn innovation_std(&self) -> f64 {
        self.innovation_std
    }

    /// Conditional mean of the next change given the two lags.
    #[inline]
    pub fn predict(&self, state: ARState) -> f64 {
        self.phi1 * state.z_lag1 + self.phi2 * state.z_lag2
    }

    /// One step of the recursion. Returns the drawn change and the shifted state.
    #[inline]
    pub fn step<R: Rng + ?Sized>(&self, state: ARState, rng: &mut R) -> (f64, ARState) {
        let eps: f64 = rng.sample(StandardNormal);
        let z = self.predict(state) + self.innovation_std * eps;
        (z, state.push(z))
    }

    /// Stationary variance from the Yule-Walker equations:
    /// `sigma^2 (1 - phi2) / ((1 + phi2) ((1 - phi2)^2 - phi1^2))`.
    pub fn stationary_variance(&self) -> Result<f64> {
        self.validate()?;
        let ARModel {
            phi1,
            phi2,
            innovation_std,
        } = *self;
        Ok(innovation_std * innovation_std * (1.0 - phi2) / ((1.0 + phi2) * ((1.0 - phi2).powi(2) - phi1 * phi1)))
    }

    /// Stationary lag-1 autocorrelation `phi1 / (1 - phi2)`.
    pub fn lag1_autocorrelation(&self) -> f64 {
        self.phi1 / (1.0 - self.phi2)
    }
}

/// Two-lag memory of the change process.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ARState {
    pub z_lag1: f64,
    pub z_lag2: f64,
}

impl ARState {
    pub const ZERO: ARState = ARState {
        z_lag1: 0.0,
        z_lag2: 0.0,
    };

    pub fn new(z_lag1: f64, z_lag2: f64) -> Self {
        ARState { z_lag1, z_lag2 }
    }

    /// State after `z` is realized.
    #[inline]
    pub fn push(self, z: f64) -> Self {
        ARState {
            z_lag1: z,
            z_lag2: self.z_lag1,
        }
    }
}

/// Applies a change to a wind power level, clamping at zero.
#[inline]
pub fn apply_change(w: f64, z: f64) -> f64 {
    (w + z).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizationConfig {
    /// Per-stage probability of a rare jump.
    pub q: f64,
    pub horizon: usize,
    pub y0: f64,
    pub seed: u64,
}

impl RealizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::invalid("q", format!("{} not in [0, 1]", self.q)));
        }
        if self.horizon < 2 {
            return Err(Error::invalid("horizon", format!("{} < 2", self.horizon)));
        }
        if !(self.y0.is_finite() && self.y0 >= 0.0) {
            return Err(Error::invalid("y0", format!("{} must be finite and >= 0", self.y0)));
        }
        Ok(())
    }
}

/// One realized wind path.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub y: Vec<f64>,
    /// `jumps[h]` is true when the change into stage `h` was a rare jump.
    pub jumps: Vec<bool>,
    /// Change into each stage before clamping (`changes[0] = 0`).
    pub changes: Vec<f64>,
    pub is_rare: bool,
}

impl Realization {
    pub fn horizon(&self) -> usize {
        self.y.len()
    }
}

/// Draws one path of the jump mixture
/// `Y_h = Y_{h-1} + Z_h [J_h = 0] + R_h [J_h = 1]`.
///
/// Every stage consumes the jump uniform, the AR innovation and a rare
/// change in that order whether or not they are used, so the same seed gives
/// coupled paths across different `q`. A realized rare change enters the AR
/// history in place of `Z_h`.
pub fn generate_realization(
    config: &RealizationConfig,
    model: &ARModel,
    state0: ARState,
    sampler: &RareChangeSampler,
) -> Realization {
    let mut rng = seed::stream(config.seed);
    let h_max = config.horizon;
    let mut y = Vec::with_capacity(h_max);
    let mut jumps = Vec::with_capacity(h_max);
    let mut changes = Vec::with_capacity(h_max);
    y.push(config.y0);
    jumps.push(false);
    changes.push(0.0);

    let mut state = state0;
    for h in 1..h_max {
        let u: f64 = rng.random();
        let (z, ar_next) = model.step(state, &mut rng);
        let rare = sampler.sample(&mut rng);
        let jump = u < config.q;
        let change = if jump { rare } else { z };
        state = if jump { state.push(rare) } else { ar_next };
        y.push(apply_change(y[h - 1], change));
        jumps.push(jump);
        changes.push(change);
    }
    let is_rare = jumps.iter().any(|&j| j);
    Realization {
        y,
        jumps,
        changes,
        is_rare,
    }
}

/// Generates `n` realizations. Realization `i` uses the stream derived from
/// `(config.seed, "realization", i)`, so batches with the same seed but
/// different `q` are coupled path by path.
pub fn generate_batch(
    config: &RealizationConfig,
    n: usize,
    model: &ARModel,
    state0: ARState,
    sampler: &RareChangeSampler,
) -> Vec<Realization> {
    par::map_range(n, |i| {
        let cfg = RealizationConfig {
            seed: seed::derive_seed(config.seed, tag::REALIZATION, i as u64),
            ..*config
        };
        generate_realization(&cfg, model, state0, sampler)
    })
}

/// CSV with columns `realization_id,stage,y,jump,is_rare`.
pub fn write_realizations_csv<W: Write>(mut out: W, batch: &[Realization]) -> Result<()> {
    writeln!(out, "realization_id,stage,y,jump,is_rare")?;
    for (id, r) in batch.iter().enumerate() {
        for (stage, (&y, &jump)) in r.y.iter().zip(&r.jumps).enumerate() {
            writeln!(
                out,
                "{id},{stage},{},{},{}",
                fmt17(y),
                u8::from(jump),
                u8::from(r.is_rare)
            )?;
        }
    }
    Ok(())
}
