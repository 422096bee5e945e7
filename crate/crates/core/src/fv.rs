//! Rare negative wind-change probabilities from a discrete-time
//! Fleming-Viot particle system.
//!
//! The change process `Z` is killed when it enters the frequently visited
//! absorption set `A = (-a, +inf)`. Each visit of `Z` to `A^c = (-inf, -a]`
//! is an excursion that starts from the stationary entrance law. The
//! stationary probability of a tail set `C` inside `A^c` is then
//!
//! ```text
//! p(C) = entry_rate * sum_t P(tau > t) * P(Z_t in C | tau > t)
//! ```
//!
//! where `t` counts steps since entry and `tau` is the excursion length. The
//! survival curve `P(tau > t)` and the entry rate come from a plain
//! simulation, where excursions are plentiful. The conditional law
//! `P(Z_t in C | tau > t)` is what plain simulation gets wrong in the deep
//! tail; the particle system estimates it by running `N` excursions in
//! parallel and restarting any particle that returns to `A` from the
//! position of a surviving one.
//!
//! The estimate factors as `p_hat(C_k) = exit_mass * occupation(C_k)`, with
//! `exit_mass = P(Z <= -a)` and `occupation` the survival-weighted particle
//! occupation, i.e. the law of `Z` given `Z <= -a`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Exp;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Stream};
use crate::stochastic::{ARModel, ARState};

/// Steps discarded at the start of every plain simulation.
pub const PLAIN_BURN_IN: u64 = 1_000;

/// Absorption boundary, tail threshold and the tail intervals.
///
/// The tail `(-inf, -c)` is split into `inner_count` intervals with
/// log10-equal widths covering `[-inner_edge, -c)` plus the unbounded
/// `(-inf, -inner_edge)`. Interval `k` (0-based) is `[edges[k+1], edges[k])`
/// for `k < inner_count`; the last one is `(-inf, edges[inner_count])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartitionParams", into = "PartitionParams")]
pub struct TailPartition {
    a: f64,
    c_threshold: f64,
    inner_edge: f64,
    inner_count: usize,
    edges: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PartitionParams {
    a: f64,
    c_threshold: f64,
    inner_edge: f64,
    inner_count: usize,
    #[serde(default)]
    edges: Vec<f64>,
}

impl TryFrom<PartitionParams> for TailPartition {
    type Error = Error;

    fn try_from(p: PartitionParams) -> Result<Self> {
        TailPartition::new(p.a, p.c_threshold, p.inner_edge, p.inner_count)
    }
}

impl From<TailPartition> for PartitionParams {
    fn from(p: TailPartition) -> Self {
        PartitionParams {
            a: p.a,
            c_threshold: p.c_threshold,
            inner_edge: p.inner_edge,
            inner_count: p.inner_count,
            edges: p.edges,
        }
    }
}

/// Where a value of `Z` falls relative to the partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// Inside the absorption set, `z > -a`.
    Absorbing,
    /// `[-c, -a]`: outside `A` but not in the tail.
    Gap,
    /// Tail interval index (0-based).
    Tail(usize),
}

impl Default for TailPartition {
    fn default() -> Self {
        TailPartition::new(2.0, 3.0, 9.0, 5).expect("default partition is valid")
    }
}

impl TailPartition {
    pub fn new(a: f64, c_threshold: f64, inner_edge: f64, inner_count: usize) -> Result<Self> {
        if !(a.is_finite() && c_threshold.is_finite() && inner_edge.is_finite()) {
            return Err(Error::invalid("tail", "bounds must be finite"));
        }
        if !(0.0 < a && a < c_threshold && c_threshold < inner_edge) {
            return Err(Error::invalid(
                "tail",
                format!("need 0 < a < c_threshold < inner_edge, got {a}, {c_threshold}, {inner_edge}"),
            ));
        }
        if inner_count == 0 {
            return Err(Error::invalid("tail.inner_count", "must be >= 1"));
        }
        let delta = (inner_edge.log10() - c_threshold.log10()) / inner_count as f64;
        let mut edges: Vec<f64> = (0..inner_count)
            .map(|k| -c_threshold * 10f64.powf(k as f64 * delta))
            .collect();
        edges.push(-inner_edge);
        Ok(TailPartition {
            a,
            c_threshold,
            inner_edge,
            inner_count,
            edges,
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn c_threshold(&self) -> f64 {
        self.c_threshold
    }

    pub fn inner_edge(&self) -> f64 {
        self.inner_edge
    }

    pub fn inner_count(&self) -> usize {
        self.inner_count
    }

    /// Log10 width of the inner intervals.
    pub fn delta(&self) -> f64 {
        (self.inner_edge.log10() - self.c_threshold.log10()) / self.inner_count as f64
    }

    /// Finite edges in decreasing order, from `-c_threshold` to `-inner_edge`.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Number of tail intervals `K = inner_count + 1`.
    pub fn n_intervals(&self) -> usize {
        self.inner_count + 1
    }

    /// `(lower, upper)` of interval `k`; the lower end is inclusive except for
    /// the last, unbounded interval. The upper end is always exclusive.
    pub fn interval(&self, k: usize) -> (f64, f64) {
        if k < self.inner_count {
            (self.edges[k + 1], self.edges[k])
        } else {
            (f64::NEG_INFINITY, self.edges[self.inner_count])
        }
    }

    pub fn region(&self, z: f64) -> Region {
        if z > -self.a {
            return Region::Absorbing;
        }
        if z >= self.edges[0] {
            return Region::Gap;
        }
        // edges are decreasing: find the first edge <= z.
        match self.edges[1..].iter().position(|&e| z >= e) {
            Some(k) => Region::Tail(k),
            None => Region::Tail(self.inner_count),
        }
    }

    /// Index into an occupation histogram: tail intervals first, gap last.
    pub(crate) fn bin(&self, z: f64) -> Option<usize> {
        match self.region(z) {
            Region::Absorbing => None,
            Region::Gap => Some(self.n_intervals()),
            Region::Tail(k) => Some(k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FVConfig {
    pub n_particles: usize,
    /// Upper bound on the number of particle-system steps. The run also stops
    /// once the estimated excursion survival reaches zero.
    pub n_steps: usize,
    /// Plain-chain steps discarded before warm-start entries are collected.
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for FVConfig {
    fn default() -> Self {
        FVConfig {
            n_particles: 1000,
            n_steps: 10_000,
            burn_in: 100,
            seed: 0,
        }
    }
}

impl FVConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::invalid("fv.n_particles", "must be >= 2"));
        }
        if self.n_steps < 1 {
            return Err(Error::invalid("fv.n_steps", "must be >= 1"));
        }
        Ok(())
    }
}

/// Entry states into `A^c` collected from a plain simulation started at the
/// zero state. Every returned state has `z_lag1 <= -a`.
pub fn warm_start_particles<R: Rng + ?Sized>(
    model: &ARModel,
    partition: &TailPartition,
    n_particles: usize,
    burn_in: usize,
    rng: &mut R,
) -> Vec<ARState> {
    let threshold = -partition.a;
    let mut state = ARState::ZERO;
    for _ in 0..burn_in {
        state = model.step(state, rng).1;
    }
    let mut particles = Vec::with_capacity(n_particles);
    while particles.len() < n_particles {
        let was_outside = state.z_lag1 <= threshold;
        let (z, next) = model.step(state, rng);
        if z <= threshold && !was_outside {
            particles.push(next);
        }
        state = next;
    }
    particles
}

/// Statistics of excursions into `A^c` from one plain simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionStats {
    /// Steps counted after burn-in.
    pub steps: u64,
    /// Steps with `Z <= -a`.
    pub exit_steps: u64,
    /// Completed excursions.
    pub excursions: u64,
    /// `survival[t]` estimates `P(tau > t)`; `survival[0] = 1`.
    pub survival: Vec<f64>,
}

impl ExcursionStats {
    /// `P(Z <= -a)` estimated by the long-run fraction of steps.
    pub fn exit_mass(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.exit_steps as f64 / self.steps as f64
        }
    }
}

/// Plain simulation from the zero state with [`PLAIN_BURN_IN`] discarded
/// steps, recording the fraction of time spent in `A^c` and the length of
/// every excursion that starts and ends inside the counted window.
pub fn excursion_stats<R: Rng + ?Sized>(model: &ARModel, a: f64, n_steps: u64, rng: &mut R) -> ExcursionStats {
    let threshold = -a;
    let mut state = ARState::ZERO;
    for _ in 0..PLAIN_BURN_IN {
        state = model.step(state, rng).1;
    }
    // Skip any excursion already running when counting starts.
    let mut in_counted = false;
    let mut current = 0usize;
    let mut lengths: Vec<u64> = Vec::new();
    let mut exit_steps = 0u64;
    let mut excursions = 0u64;
    for _ in 0..n_steps {
        let was_outside = state.z_lag1 <= threshold;
        let (z, next) = model.step(state, rng);
        state = next;
        if z <= threshold {
            exit_steps += 1;
            if !was_outside {
                in_counted = true;
                current = 0;
            }
            current += 1;
        } else if was_outside && in_counted {
            if lengths.len() < current {
                lengths.resize(current, 0);
            }
            lengths[current - 1] += 1;
            excursions += 1;
            in_counted = false;
        }
    }
    // survival[t] = #{len > t} / total
    let mut survival = vec![0.0; lengths.len()];
    let mut longer = excursions;
    for (t, &count) in lengths.iter().enumerate() {
        survival[t] = longer as f64 / excursions as f64;
        longer -= count;
    }
    ExcursionStats {
        steps: n_steps,
        exit_steps,
        excursions,
        survival,
    }
}

/// Long-run fraction of steps with `Z <= -a`.
pub fn estimate_exit_mass<R: Rng + ?Sized>(model: &ARModel, a: f64, n_steps: u64, rng: &mut R) -> f64 {
    excursion_stats(model, a, n_steps, rng).exit_mass()
}

/// `N` copies of the change process held inside `A^c`.
#[derive(Debug, Clone)]
pub struct FlemingViot {
    model: ARModel,
    threshold: f64,
    particles: Vec<ARState>,
    scratch: Vec<ARState>,
    survivors: Vec<usize>,
    rng: Stream,
}

/// Attempts at redrawing a step in which every particle was absorbed.
const MAX_EXTINCTION_RETRIES: usize = 1_000;

impl FlemingViot {
    pub fn new(model: &ARModel, partition: &TailPartition, config: &FVConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::stream(config.seed);
        let particles = warm_start_particles(model, partition, config.n_particles, config.burn_in, &mut rng);
        Ok(FlemingViot {
            model: *model,
            threshold: -partition.a,
            scratch: particles.clone(),
            survivors: Vec::with_capacity(particles.len()),
            particles,
            rng,
        })
    }

    pub fn particles(&self) -> &[ARState] {
        &self.particles
    }

    /// Advances every particle once. Particles that enter `A` take the full
    /// state of a particle chosen uniformly among those that stayed outside.
    /// Returns the number of restarts.
    pub fn step(&mut self) -> Result<usize> {
        for _ in 0..MAX_EXTINCTION_RETRIES {
            self.survivors.clear();
            for (i, (old, new)) in self.particles.iter().zip(self.scratch.iter_mut()).enumerate() {
                let (z, next) = self.model.step(*old, &mut self.rng);
                *new = next;
                if z <= self.threshold {
                    self.survivors.push(i);
                }
            }
            if self.survivors.is_empty() {
                continue;
            }
            let mut restarts = 0;
            let mut next_survivor = 0;
            for i in 0..self.particles.len() {
                if self.survivors.get(next_survivor) == Some(&i) {
                    next_survivor += 1;
                    self.particles[i] = self.scratch[i];
                } else {
                    let donor = self.survivors[self.rng.random_range(0..self.survivors.len())];
                    self.particles[i] = self.scratch[donor];
                    restarts += 1;
                }
            }
            return Ok(restarts);
        }
        Err(Error::Estimation(format!(
            "all {} particles absorbed in {MAX_EXTINCTION_RETRIES} consecutive attempts",
            self.particles.len()
        )))
    }

    fn accumulate(&self, partition: &TailPartition, weight: f64, hist: &mut [f64]) {
        let w = weight / self.particles.len() as f64;
        for p in &self.particles {
            if let Some(bin) = partition.bin(p.z_lag1) {
                hist[bin] += w;
            }
        }
    }
}

/// Law of `Z` given `Z <= -a` over the tail intervals (first `K` bins) and
/// the gap `[-c, -a]` (last bin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupation {
    pub bins: Vec<f64>,
}

impl Occupation {
    pub fn tail(&self) -> &[f64] {
        &self.bins[..self.bins.len() - 1]
    }

    pub fn gap(&self) -> f64 {
        self.bins[self.bins.len() - 1]
    }
}

/// Runs the particle system for `min(n_steps, survival.len())` steps and
/// returns the occupation of `A^c` with step `t` weighted by `survival[t]`.
pub fn fv_run(model: &ARModel, partition: &TailPartition, config: &FVConfig, survival: &[f64]) -> Result<Occupation> {
    let horizon = config.n_steps.min(survival.len());
    if horizon == 0 {
        return Err(Error::Estimation(
            "no completed excursion below -a; increase the plain simulation length".into(),
        ));
    }
    let mut system = FlemingViot::new(model, partition, config)?;
    let mut bins = vec![0.0; partition.n_intervals() + 1];
    for (t, &s) in survival[..horizon].iter().enumerate() {
        if t > 0 {
            system.step()?;
        }
        system.accumulate(partition, s, &mut bins);
    }
    let total: f64 = bins.iter().sum();
    bins.iter_mut().for_each(|b| *b /= total);
    Ok(Occupation { bins })
}

/// Absolute and normalized tail-interval probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailProbabilities {
    pub p_hat: Vec<f64>,
    pub weights: Vec<f64>,
    pub occupation: Vec<f64>,
    pub exit_mass: f64,
}

impl TailProbabilities {
    /// Builds probabilities from unnormalized interval weights alone, for
    /// callers that bypass estimation. `p_hat` holds the raw weights.
    pub fn from_weights(raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights", "must be finite and >= 0"));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::Estimation("all tail weights are zero".into()));
        }
        let weights = raw.iter().map(|w| w / total).collect();
        Ok(TailProbabilities {
            weights,
            occupation: Vec::new(),
            exit_mass: total,
            p_hat: raw,
        })
    }

    /// `sum_k p_hat_k`, the estimate of `P(Z < -c)`.
    pub fn tail_mass(&self) -> f64 {
        self.p_hat.iter().sum()
    }
}

/// `p_hat_k = exit_mass * occupation(C_k)`, `weights_k = p_hat_k / sum_j p_hat_j`.
pub fn tail_probabilities(
    occupation: &Occupation,
    exit_mass: f64,
    partition: &TailPartition,
) -> Result<TailProbabilities> {
    let k = partition.n_intervals();
    if occupation.bins.len() != k + 1 {
        return Err(Error::invalid(
            "occupation",
            format!("expected {} bins, got {}", k + 1, occupation.bins.len()),
        ));
    }
    let p_hat: Vec<f64> = occupation.tail().iter().map(|nu| exit_mass * nu).collect();
    let total: f64 = p_hat.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Estimation(
            "no tail interval was visited; increase the particle count or the number of steps".into(),
        ));
    }
    let weights = p_hat.iter().map(|p| p / total).collect();
    Ok(TailProbabilities {
        p_hat,
        weights,
        occupation: occupation.bins.clone(),
        exit_mass,
    })
}

/// Draws rare changes: an interval with probability `weights_l`, then a
/// point inside it. Inner intervals are sampled uniformly below their upper
/// edge; the unbounded one as `-inner_edge - Exp(1)`.
#[derive(Debug, Clone)]
pub struct RareChangeSampler {
    partition: TailPartition,
    choose: WeightedIndex<f64>,
    tail_excess: Exp<f64>,
}

impl RareChangeSampler {
    pub fn new(partition: &TailPartition, tail: &TailProbabilities) -> Result<Self> {
        if tail.weights.len() != partition.n_intervals() {
            return Err(Error::invalid(
                "weights",
                format!(
                    "expected {} weights, got {}",
                    partition.n_intervals(),
                    tail.weights.len()
                ),
            ));
        }
        let choose = WeightedIndex::new(&tail.weights).map_err(|e| Error::invalid("weights", e.to_string()))?;
        Ok(RareChangeSampler {
            partition: partition.clone(),
            choose,
            tail_excess: Exp::new(1.0).expect("rate 1 is valid"),
        })
    }

    pub fn partition(&self) -> &TailPartition {
        &self.partition
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let l = self.choose.sample(rng);
        self.sample_in(l, rng)
    }

    /// Draws a point in interval `l`.
    pub fn sample_in<R: Rng + ?Sized>(&self, l: usize, rng: &mut R) -> f64 {
        let (lower, upper) = self.partition.interval(l);
        if l < self.partition.inner_count {
            // r in (0, delta] keeps the draw in [lower, upper).
            let u: f64 = rng.random();
            let r = (upper - lower) * (1.0 - u);
            (upper - r).max(lower)
        } else {
            loop {
                let r = self.tail_excess.sample(rng);
                let z = upper - r;
                if z < upper {
                    return z;
                }
            }
        }
    }
}

/// One-off draw; prefer [`RareChangeSampler`] for repeated sampling.
pub fn sample_rare_change<R: Rng + ?Sized>(
    tail: &TailProbabilities,
    partition: &TailPartition,
    rng: &mut R,
) -> Result<f64> {
    Ok(RareChangeSampler::new(partition, tail)?.sample(rng))
}

/// Parameters of a full tail estimation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRunConfig {
    pub fv: FVConfig,
    /// Length of the plain simulation giving the exit mass and survival curve.
    pub mc_steps: u64,
    pub mc_seed: u64,
}

/// On-disk tail estimate, `tail.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub a: f64,
    pub c_threshold: f64,
    pub inner_edge: f64,
    pub inner_count: usize,
    /// Finite interval edges; the last interval extends to minus infinity.
    pub edges: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub weights: Vec<f64>,
    pub occupation: Vec<f64>,
    pub exit_mass: f64,
    pub excursions: u64,
    pub config: TailRunConfig,
}

impl TailEstimate {
    pub fn partition(&self) -> Result<TailPartition> {
        TailPartition::new(self.a, self.c_threshold, self.inner_edge, self.inner_count)
    }

    pub fn probabilities(&self) -> TailProbabilities {
        TailProbabilities {
            p_hat: self.p_hat.clone(),
            weights: self.weights.clone(),
            occupation: self.occupation.clone(),
            exit_mass: self.exit_mass,
        }
    }

    pub fn sampler(&self) -> Result<RareChangeSampler> {
        RareChangeSampler::new(&self.partition()?, &self.probabilities())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let est: TailEstimate = serde_json::from_str(text)?;
        let partition = est.partition()?;
        if est.weights.len() != partition.n_intervals() || est.p_hat.len() != partition.n_intervals() {
            return Err(Error::invalid(
                "tail",
                "weights/p_hat length does not match the partition",
            ));
        }
        let sum: f64 = est.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("tail.weights", format!("sum to {sum}, not 1")));
        }
        Ok(est)
    }
}

/// Plain simulation for the exit mass and survival curve, then the particle
/// system for the conditional tail occupation.
pub fn estimate_tail(model: &ARModel, partition: &TailPartition, config: &TailRunConfig) -> Result<TailEstimate> {
    config.fv.validate()?;
    let mut rng = seed::stream(config.mc_seed);
    let stats = excursion_stats(model, partition.a, config.mc_steps, &mut rng);
    let occupation = fv_run(model, partition, &config.fv, &stats.survival)?;
    let tp = tail_probabilities(&occupation, stats.exit_mass(), partition)?;
    Ok(TailEstimate {
        a: partition.a,
        c_threshold: partition.c_threshold,
        inner_edge: partition.inner_edge,
        inner_count: partition.inner_count,
        edges: partition.edges.clone(),
        p_hat: tp.p_hat,
        weights: tp.weights,
        occupation: tp.occupation,
        exit_mass: tp.exit_mass,
        excursions: stats.excursions,
        config: *config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_partition_edges() {
        let p = TailPartition::default();
        assert!((p.delta() - 0.0954).abs() < 5e-5);
        let expected = [-3.000, -3.737, -4.655, -5.800, -7.225, -9.000];
        // Within one unit of the third decimal.
        for (e, x) in p.edges().iter().zip(expected) {
            assert!((e - x).abs() < 1e-3, "{e} vs {x}");
        }
        assert_eq!(p.n_intervals(), 6);
        assert_eq!(p.interval(5), (f64::NEG_INFINITY, -9.0));
    }

    #[test]
    fn single_inner_interval() {
        let p = TailPartition::new(1.0, 3.0, 30.0, 1).unwrap();
        assert_eq!(p.interval(0), (-30.0, -3.0));
        assert_eq!(p.interval(1), (f64::NEG_INFINITY, -30.0));
    }

    #[test]
    fn partition_rejects_bad_order() {
        assert!(TailPartition::new(3.0, 2.0, 9.0, 5).is_err());
        assert!(TailPartition::new(0.0, 3.0, 9.0, 5).is_err());
        assert!(TailPartition::new(2.0, 9.0, 9.0, 5).is_err());
        assert!(TailPartition::new(2.0, 3.0, 9.0, 0).is_err());
    }

    #[test]
    fn regions_cover_the_line() {
        let p = TailPartition::default();
        assert_eq!(p.region(-1.9), Region::Absorbing);
        assert_eq!(p.region(-2.0), Region::Gap);
        assert_eq!(p.region(-3.0), Region::Gap);
        assert_eq!(p.region(-3.0000001), Region::Tail(0));
        assert_eq!(p.region(p.edges()[1]), Region::Tail(0));
        assert_eq!(p.region(-9.0), Region::Tail(4));
        assert_eq!(p.region(-9.0000001), Region::Tail(5));
        assert_eq!(p.region(-1e300), Region::Tail(5));
        for k in 0..6 {
            let (lo, hi) = p.interval(k);
            let mid = if lo.is_finite() { 0.5 * (lo + hi) } else { hi - 1.0 };
            assert_eq!(p.region(mid), Region::Tail(k));
        }
    }

    #[test]
    fn warm_start_particles_are_outside() {
        let p = TailPartition::default();
        let mut rng = seed::stream(5);
        let ps = warm_start_particles(&ARModel::default(), &p, 500, 100, &mut rng);
        assert_eq!(ps.len(), 500);
        assert!(ps.iter().all(|s| s.z_lag1 <= -2.0 && s.z_lag2 > -2.0));
        let two = warm_start_particles(&ARModel::default(), &p, 2, 0, &mut rng);
        assert_eq!(two.len(), 2);
    }

    #[test]
    fn particles_never_enter_absorbing_set() {
        let config = FVConfig {
            n_particles: 200,
            seed: 11,
            ..FVConfig::default()
        };
        let mut fv = FlemingViot::new(&ARModel::default(), &TailPartition::default(), &config).unwrap();
        let mut restarts = 0;
        for _ in 0..300 {
            restarts += fv.step().unwrap();
            assert!(fv.particles().iter().all(|s| s.z_lag1 <= -2.0));
        }
        assert!(restarts > 0);
    }

    #[test]
    fn two_particles_survive() {
        let config = FVConfig {
            n_particles: 2,
            seed: 1,
            ..FVConfig::default()
        };
        let mut fv = FlemingViot::new(&ARModel::default(), &TailPartition::default(), &config).unwrap();
        for _ in 0..1000 {
            fv.step().unwrap();
        }
        assert!(fv.particles().iter().all(|s| s.z_lag1 <= -2.0));
    }

    #[test]
    fn exit_mass_limits() {
        let model = ARModel::default();
        let mut rng = seed::stream(2);
        assert_eq!(estimate_exit_mass(&model, 1e6, 100_000, &mut rng), 0.0);
        // Symmetric zero-mean process; the std error with phi ~ 0.95 is ~0.01.
        let half = estimate_exit_mass(&model, 0.0, 1_000_000, &mut rng);
        assert!((half - 0.5).abs() < 0.03, "{half}");
    }

    #[test]
    fn survival_curve_shape() {
        let mut rng = seed::stream(3);
        let stats = excursion_stats(&ARModel::default(), 2.0, 1_000_000, &mut rng);
        assert!(stats.excursions > 1000);
        assert_eq!(stats.survival[0], 1.0);
        assert!(stats.survival.windows(2).all(|w| w[1] <= w[0]));
        // Renewal identity: exit_mass ~ entry rate * mean excursion length.
        let mean_len: f64 = stats.survival.iter().sum();
        let renewal = stats.excursions as f64 / stats.steps as f64 * mean_len;
        assert!((renewal / stats.exit_mass() - 1.0).abs() < 0.01);
    }

    #[test]
    fn occupation_is_normalized() {
        let mut rng = seed::stream(4);
        let stats = excursion_stats(&ARModel::default(), 2.0, 200_000, &mut rng);
        let config = FVConfig {
            n_particles: 200,
            seed: 4,
            ..FVConfig::default()
        };
        let occ = fv_run(&ARModel::default(), &TailPartition::default(), &config, &stats.survival).unwrap();
        assert_eq!(occ.bins.len(), 7);
        assert!((occ.bins.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fv_run_needs_survival() {
        let err = fv_run(
            &ARModel::default(),
            &TailPartition::default(),
            &FVConfig::default(),
            &[],
        );
        assert!(matches!(err, Err(Error::Estimation(_))));
    }

    #[test]
    fn tail_probabilities_arithmetic() {
        let occ = Occupation {
            bins: vec![0.1, 0.05, 0.02, 0.01, 0.005, 0.001, 0.814],
        };
        let tp = tail_probabilities(&occ, 0.3, &TailPartition::default()).unwrap();
        let expected = [0.03, 0.015, 0.006, 0.003, 0.0015, 0.0003];
        for (p, e) in tp.p_hat.iter().zip(expected) {
            assert!((p - e).abs() < 1e-15);
        }
        let total: f64 = expected.iter().sum();
        for (w, e) in tp.weights.iter().zip(expected) {
            assert!((w - e / total).abs() < 1e-15);
        }
        assert!((tp.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(tp.p_hat.iter().all(|&p| p <= tp.exit_mass));
    }

    #[test]
    fn empty_tail_is_an_error() {
        let occ = Occupation {
            bins: vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        };
        assert!(matches!(
            tail_probabilities(&occ, 0.3, &TailPartition::default()),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn sampler_support() {
        let p = TailPartition::default();
        let mut rng = seed::stream(8);
        let first = RareChangeSampler::new(
            &p,
            &TailProbabilities::from_weights(vec![1.0, 0., 0., 0., 0., 0.]).unwrap(),
        )
        .unwrap();
        for _ in 0..10_000 {
            let z = first.sample(&mut rng);
            assert!((p.edges()[1]..-3.0).contains(&z), "{z}");
        }
        let last = RareChangeSampler::new(
            &p,
            &TailProbabilities::from_weights(vec![0., 0., 0., 0., 0., 1.0]).unwrap(),
        )
        .unwrap();
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let z = last.sample(&mut rng);
            assert!(z < -9.0);
            sum += z;
        }
        // Exp(1) mean; std error of the mean is 1/sqrt(n) ~ 0.003.
        assert!((sum / n as f64 + 10.0).abs() < 0.02);
        let mixed = RareChangeSampler::new(
            &p,
            &TailProbabilities::from_weights(vec![6., 5., 4., 3., 2., 1.]).unwrap(),
        )
        .unwrap();
        for i in 0..10_000 {
            assert!(mixed.sample(&mut rng) < -3.0);
            let l = i % 6;
            assert_eq!(p.region(mixed.sample_in(l, &mut rng)), Region::Tail(l));
        }
    }

    #[test]
    fn tail_json_round_trip() {
        let model = ARModel::default();
        let cfg = TailRunConfig {
            fv: FVConfig {
                n_particles: 100,
                n_steps: 10_000,
                burn_in: 10,
                seed: 1,
            },
            mc_steps: 200_000,
            mc_seed: 2,
        };
        let est = estimate_tail(&model, &TailPartition::default(), &cfg).unwrap();
        let back = TailEstimate::from_json(&est.to_json().unwrap()).unwrap();
        assert_eq!(est, back);
        assert_eq!(est.edges.len(), 6);
    }
}
