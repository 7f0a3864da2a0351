//! Trajectory ensembles and the zero-momentum observables.
//!
//! Each trajectory is one atom: a momentum eigenstate `n₀` with quasimomentum
//! `β` drawn from the thermal distribution, optionally a kick strength scaled
//! by the local beam intensity, and optionally random recoils from
//! spontaneous emission. Trajectories run in fixed-size chunks; partial sums
//! are merged in chunk order, so the result is bit-identical for any worker
//! count.

use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::qprop::{KickProgram, QuantumState, SpectralGrid, DEFAULT_N_MAX, DEFAULT_SUBSTEPS};
use crate::rng::{resampling_stream, trajectory_stream, Purpose};
use crate::schedule::{build_timeline, KickTimeline, DEFAULT_MERGE_TOLERANCE};
use crate::units::{thermal_sigma, LabParams, ScaledParams};
use crate::{Error, Result};

/// Trajectories per reduction chunk. Part of the determinism contract: the
/// summation order depends on it, the worker count does not.
pub const CHUNK: usize = 32;
pub const DEFAULT_N_TRAJ: usize = 2000;
pub const DEFAULT_DETECT_HALFWIDTH: f64 = 2.0;
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BeamModel {
    Off,
    /// Gaussian cloud of rms size `cloud_to_waist × w` in a Gaussian beam of
    /// waist `w`.
    Gaussian { cloud_to_waist: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    pub seed: u64,
    /// Thermal momentum spread, units of `2ħk_L`.
    pub init_sigma: f64,
    /// Half-width of the zero-momentum detection window, units of `2ħk_L`.
    pub detect_halfwidth: f64,
    pub beam: BeamModel,
    /// Probability of a spontaneous emission after each kick event.
    pub se_prob: f64,
    pub n_max: usize,
    pub substeps: usize,
    pub merge_tolerance: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            n_traj: DEFAULT_N_TRAJ,
            seed: 0,
            init_sigma: default_init_sigma(),
            detect_halfwidth: DEFAULT_DETECT_HALFWIDTH,
            beam: BeamModel::Off,
            se_prob: 0.0,
            n_max: DEFAULT_N_MAX,
            substeps: DEFAULT_SUBSTEPS,
            merge_tolerance: DEFAULT_MERGE_TOLERANCE,
        }
    }
}

/// Thermal width of a 3 µK cesium cloud.
pub fn default_init_sigma() -> f64 {
    thermal_sigma(&LabParams::cesium(30e3, -18.8e9, 0.095, 0.6e-6))
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(Error::invalid("n_traj", "must be at least 1"));
        }
        if !(self.init_sigma >= 0.0 && self.init_sigma.is_finite()) {
            return Err(Error::invalid("init_sigma", "must be non-negative"));
        }
        if !(self.detect_halfwidth > 0.0) {
            return Err(Error::invalid("detect_halfwidth", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.se_prob) {
            return Err(Error::invalid("se_prob", "must lie in [0, 1)"));
        }
        if let BeamModel::Gaussian { cloud_to_waist } = self.beam {
            if !(cloud_to_waist >= 0.0 && cloud_to_waist.is_finite()) {
                return Err(Error::invalid("cloud_to_waist", "must be non-negative"));
            }
        }
        if self.substeps == 0 {
            return Err(Error::invalid("substeps", "must be at least 1"));
        }
        Ok(())
    }
}

/// Probability per integer momentum class (units of `2ħk_L`).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumHistogram {
    offset: i64,
    bins: Vec<f64>,
    pub n_traj: usize,
    pub params: ScaledParams,
}

impl MomentumHistogram {
    /// Builds a histogram from `(class, probability)` pairs; repeated classes add.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (i64, f64)>, n_traj: usize, params: ScaledParams) -> Self {
        let mut acc = Accumulator::default();
        for (n, p) in pairs {
            acc.add(n, p);
        }
        MomentumHistogram {
            offset: acc.offset,
            bins: acc.bins,
            n_traj,
            params,
        }
    }

    pub fn get(&self, class: i64) -> f64 {
        let i = class - self.offset;
        if i >= 0 && (i as usize) < self.bins.len() {
            self.bins[i as usize]
        } else {
            0.0
        }
    }

    /// `(class, probability)` pairs in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.bins
            .iter()
            .enumerate()
            .map(move |(i, &p)| (self.offset + i as i64, p))
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }

    /// Mass in classes with `|n| ≤ halfwidth`.
    pub fn window_mass(&self, halfwidth: f64) -> f64 {
        self.iter()
            .filter(|&(n, _)| (n as f64).abs() <= halfwidth)
            .map(|(_, p)| p)
            .sum()
    }

    /// Same histogram with every bin multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        MomentumHistogram {
            bins: self.bins.iter().map(|p| p * factor).collect(),
            ..self.clone()
        }
    }

    /// `n,prob` CSV rows (with header line), skipping empty classes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,prob\n");
        for (n, p) in self.iter() {
            if p > 0.0 {
                out.push_str(&format!("{n},{p:.16e}\n"));
            }
        }
        out
    }
}

/// Dense, growable sum over momentum classes.
#[derive(Debug, Clone, Default)]
pub(crate) struct Accumulator {
    offset: i64,
    bins: Vec<f64>,
}

impl Accumulator {
    fn reserve(&mut self, lo: i64, hi: i64) {
        if self.bins.is_empty() {
            self.offset = lo;
            self.bins = vec![0.0; (hi - lo + 1) as usize];
            return;
        }
        let end = self.offset + self.bins.len() as i64 - 1;
        if lo < self.offset {
            let mut grown = vec![0.0; (self.offset - lo) as usize];
            grown.extend_from_slice(&self.bins);
            self.bins = grown;
            self.offset = lo;
        }
        if hi > end {
            self.bins.resize(self.bins.len() + (hi - end) as usize, 0.0);
        }
    }

    pub(crate) fn add(&mut self, class: i64, p: f64) {
        self.reserve(class, class);
        self.bins[(class - self.offset) as usize] += p;
    }

    /// Adds a contiguous run of classes starting at `first`.
    pub(crate) fn add_run(&mut self, first: i64, probs: impl ExactSizeIterator<Item = f64>) {
        let len = probs.len() as i64;
        if len == 0 {
            return;
        }
        self.reserve(first, first + len - 1);
        let start = (first - self.offset) as usize;
        for (b, p) in self.bins[start..].iter_mut().zip(probs) {
            *b += p;
        }
    }

    pub(crate) fn merge(&mut self, other: &Accumulator) {
        if !other.bins.is_empty() {
            self.add_run(other.offset, other.bins.iter().copied());
        }
    }

    pub(crate) fn finish(mut self, n_traj: usize, params: ScaledParams) -> MomentumHistogram {
        let inv = 1.0 / n_traj as f64;
        self.bins.iter_mut().for_each(|b| *b *= inv);
        // Trim classes that never received weight.
        let first = self.bins.iter().position(|&b| b != 0.0).unwrap_or(0);
        let last = self.bins.iter().rposition(|&b| b != 0.0).map_or(first, |i| i + 1);
        MomentumHistogram {
            offset: self.offset + first as i64,
            bins: self.bins[first..last].to_vec(),
            n_traj,
            params,
        }
    }
}

/// Ensemble observables of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub hist: MomentumHistogram,
    /// Population of the zero-momentum detection window.
    pub pi0: f64,
    /// `⟨p²⟩` in units of `(2ħk_L)²`.
    pub p2: f64,
    /// `⟨p²⟩` after each primary period, one entry per primary kick.
    pub p2_series: Vec<f64>,
    /// Per-trajectory window populations, in trajectory order.
    pub traj_pi0: Vec<f64>,
    /// Total number of spontaneous emissions.
    pub emissions: u64,
    /// Trajectories rerun on a doubled grid after tripping the edge guard.
    pub regrown: usize,
}

impl RunResult {
    /// Bootstrap standard error of `pi0` over trajectories.
    pub fn pi0_error(&self, resamples: usize, seed: u64) -> f64 {
        bootstrap_mean_error(&self.traj_pi0, resamples, seed)
    }
}

/// Standard deviation of the resampled means of `values`.
pub fn bootstrap_mean_error(values: &[f64], resamples: usize, seed: u64) -> f64 {
    if values.len() < 2 || resamples < 2 {
        return 0.0;
    }
    let mut rng = resampling_stream(seed);
    let n = values.len();
    let means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / resamples as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (resamples - 1) as f64;
    var.sqrt()
}

/// Initial momentum class and quasimomentum: `p₀ ~ N(0, σ²)` split as
/// `n₀ = ⌊p₀ + ½⌋`, `β = p₀ − n₀ ∈ [−½, ½)`.
pub fn sample_initial(cfg: &EnsembleConfig, rng: &mut impl Rng) -> (i64, f64) {
    let z: f64 = rng.sample(StandardNormal);
    split_momentum(cfg.init_sigma * z)
}

pub(crate) fn split_momentum(p0: f64) -> (i64, f64) {
    let n0 = (p0 + 0.5).floor();
    let mut beta = p0 - n0;
    // Guard the rounding edge so β stays in [−½, ½).
    if beta >= 0.5 {
        beta -= 1.0;
        return (n0 as i64 + 1, beta);
    }
    (n0 as i64, beta)
}

/// Per-trajectory kick strength under the beam model.
pub fn draw_kick_strength(cfg: &EnsembleConfig, kick: f64, rng: &mut impl Rng) -> f64 {
    kick * beam_factor(cfg.beam, rng)
}

fn beam_factor(beam: BeamModel, rng: &mut impl Rng) -> f64 {
    match beam {
        BeamModel::Off => 1.0,
        BeamModel::Gaussian { cloud_to_waist } => {
            let x: f64 = rng.sample(StandardNormal);
            let y: f64 = rng.sample(StandardNormal);
            (-2.0 * cloud_to_waist * cloud_to_waist * (x * x + y * y)).exp()
        }
    }
}

/// With probability `se_prob`, kicks the quasimomentum by a recoil drawn
/// uniformly from `[−½, ½)`. Amplitudes are untouched. Returns whether an
/// emission happened.
pub fn apply_spontaneous_emission(state: &mut QuantumState, se_prob: f64, rng: &mut impl Rng) -> bool {
    if se_prob <= 0.0 {
        return false;
    }
    if rng.random::<f64>() < se_prob {
        state.beta += rng.random::<f64>() - 0.5;
        true
    } else {
        false
    }
}

/// Detection class offset for quasimomentum `β`: class `n` of the state is
/// recorded in histogram bin `n + ⌊β + ½⌋`.
fn detection_shift(beta: f64) -> i64 {
    (beta + 0.5).floor() as i64
}

struct Trajectory {
    state: QuantumState,
    p2_series: Vec<f64>,
    emissions: u64,
}

struct Compiled {
    program: KickProgram,
    params: ScaledParams,
    cfg: EnsembleConfig,
}

impl Compiled {
    fn new(p: &ScaledParams, cfg: &EnsembleConfig, timeline: &KickTimeline, n_max: usize) -> Result<Self> {
        let grid = Arc::new(SpectralGrid::new(n_max)?);
        let program = KickProgram::compile(grid, timeline, p.hbar_eff, p.pulse_frac, cfg.substeps)?;
        Ok(Compiled {
            program,
            params: p.clone(),
            cfg: cfg.clone(),
        })
    }

    fn run(
        &self,
        index: usize,
        snapshot: &mut dyn FnMut(usize, &QuantumState),
    ) -> Result<Trajectory> {
        let cfg = &self.cfg;
        let (n0, beta) = sample_initial(cfg, &mut trajectory_stream(cfg.seed, index, Purpose::InitialCondition));
        let scale = beam_factor(cfg.beam, &mut trajectory_stream(cfg.seed, index, Purpose::Beam));
        let mut se_rng = trajectory_stream(cfg.seed, index, Purpose::Emission);

        let mut state = self.program.grid().momentum_eigenstate(n0, beta)?;
        let kicks = self.program.scaled_kicks(scale);
        let mut p2_series = Vec::with_capacity(self.params.n_kicks);
        let mut emissions = 0;
        self.program.run(&mut state, &kicks, &mut |info, state| {
            if apply_spontaneous_emission(state, cfg.se_prob, &mut se_rng) {
                emissions += 1;
            }
            if info.period_end {
                p2_series.push(state.mean_p2());
                snapshot(p2_series.len(), state);
            }
        })?;
        Ok(Trajectory {
            state,
            p2_series,
            emissions,
        })
    }
}

#[derive(Default)]
struct Partial {
    hist: Accumulator,
    p2: f64,
    p2_series: Vec<f64>,
    pi0: Vec<f64>,
    emissions: u64,
    regrown: usize,
}

impl Partial {
    fn absorb(&mut self, t: &Trajectory, halfwidth: f64) {
        let shift = detection_shift(t.state.beta);
        let probs = t.state.probabilities();
        let first = probs.first().map_or(0, |(n, _)| n + shift);
        let pi0 = probs
            .iter()
            .filter(|(n, _)| ((n + shift) as f64).abs() <= halfwidth)
            .map(|(_, p)| p)
            .sum();
        self.hist.add_run(first, probs.iter().map(|(_, p)| *p));
        self.pi0.push(pi0);
        self.p2 += t.state.mean_p2();
        add_series(&mut self.p2_series, &t.p2_series);
        self.emissions += t.emissions;
    }

    fn merge(&mut self, other: Partial) {
        self.hist.merge(&other.hist);
        self.p2 += other.p2;
        add_series(&mut self.p2_series, &other.p2_series);
        self.pi0.extend(other.pi0);
        self.emissions += other.emissions;
        self.regrown += other.regrown;
    }
}

fn add_series(acc: &mut Vec<f64>, s: &[f64]) {
    if acc.len() < s.len() {
        acc.resize(s.len(), 0.0);
    }
    for (a, b) in acc.iter_mut().zip(s) {
        *a += b;
    }
}

/// Runs `cfg.n_traj` quantum trajectories for `p` and reduces them.
///
/// Uses the ambient rayon pool; the result does not depend on its size.
pub fn run_ensemble(p: &ScaledParams, cfg: &EnsembleConfig) -> Result<RunResult> {
    p.validate()?;
    cfg.validate()?;
    let timeline = build_timeline(p, cfg.merge_tolerance)?;
    let primary = Compiled::new(p, cfg, &timeline, cfg.n_max)?;
    let regrown: OnceLock<Result<Compiled>> = OnceLock::new();

    let run_one = |index: usize| -> Result<(Trajectory, bool)> {
        match primary.run(index, &mut |_, _| {}) {
            Ok(t) => Ok((t, false)),
            Err(Error::GridTooSmall { .. }) => {
                let bigger = regrown
                    .get_or_init(|| Compiled::new(p, cfg, &timeline, 2 * cfg.n_max))
                    .as_ref()
                    .map_err(|e| Error::Configuration(e.to_string()))?;
                bigger.run(index, &mut |_, _| {}).map(|t| (t, true))
            }
            Err(e) => Err(e),
        }
    };

    let chunks: Vec<usize> = (0..cfg.n_traj).step_by(CHUNK).collect();
    let partials: Vec<Partial> = chunks
        .par_iter()
        .map(|&start| {
            let mut part = Partial::default();
            for index in start..(start + CHUNK).min(cfg.n_traj) {
                let (t, grew) = run_one(index).map_err(|e| Error::Trajectory {
                    index,
                    source: Box::new(e),
                })?;
                part.absorb(&t, cfg.detect_halfwidth);
                part.regrown += grew as usize;
            }
            Ok(part)
        })
        .collect::<Result<_>>()?;

    let mut total = Partial::default();
    for part in partials {
        total.merge(part);
    }
    let n = cfg.n_traj as f64;
    let hist = total.hist.finish(cfg.n_traj, p.clone());
    let pi0 = total.pi0.iter().sum::<f64>() / n;
    Ok(RunResult {
        pi0,
        p2: total.p2 / n,
        p2_series: total.p2_series.iter().map(|s| s / n).collect(),
        traj_pi0: total.pi0,
        emissions: total.emissions,
        regrown: total.regrown,
        hist,
    })
}

/// Reruns trajectory `index` alone and returns its state after every
/// `every`-th primary period.
pub fn trajectory_snapshots(
    p: &ScaledParams,
    cfg: &EnsembleConfig,
    index: usize,
    every: usize,
) -> Result<Vec<(usize, QuantumState)>> {
    p.validate()?;
    cfg.validate()?;
    if every == 0 {
        return Err(Error::invalid("snapshot_every", "must be at least 1"));
    }
    let timeline = build_timeline(p, cfg.merge_tolerance)?;
    let compiled = Compiled::new(p, cfg, &timeline, cfg.n_max)?;
    let mut snaps = Vec::new();
    compiled.run(index, &mut |period, state| {
        if period % every == 0 {
            snaps.push((period, state.clone()));
        }
    })?;
    Ok(snaps)
}
