//! Split-step spectral propagation of one atomic wavefunction.
//!
//! The state is stored on a truncated ladder of momentum classes
//! `n ∈ [−n_max, n_max)` plus a quasimomentum `β`, so the Hamiltonian momentum
//! of class `n` is `ħ̄ (n + β)`. Free flight is diagonal in momentum; kicks are
//! diagonal on the angle grid `θ_j = 2πj/L`, `L = 2 n_max`, reached by FFT.
//! Amplitudes are kept in FFT order: slot `k` holds class `k` for `k < L/2`
//! and class `k − L` above.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::schedule::{KickEvent, KickTimeline};
use crate::{Error, Result};

pub const DEFAULT_N_MAX: usize = 1024;
pub const DEFAULT_SUBSTEPS: usize = 10;
/// Fraction of the grid, split over both ends, watched by the aliasing guard.
pub const EDGE_FRACTION: f64 = 0.02;
/// Largest probability tolerated in the watched edge slots.
pub const EDGE_LIMIT: f64 = 1e-8;

// Slots between exact re-anchoring of the quasimomentum phase recurrence.
const ANCHOR_STRIDE: usize = 32;

/// FFT plans and static tables for one grid size. Immutable and shareable.
pub struct SpectralGrid {
    n_max: usize,
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch_len: usize,
    sin_theta: Vec<f64>,
    edge_width: usize,
}

impl std::fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralGrid").field("n_max", &self.n_max).finish()
    }
}

impl SpectralGrid {
    pub fn new(n_max: usize) -> Result<Self> {
        if n_max < 4 {
            return Err(Error::invalid("n_max", "must be at least 4"));
        }
        let len = 2 * n_max;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        let sin_theta = (0..len).map(|j| (TAU * j as f64 / len as f64).sin()).collect();
        let edge_width = ((EDGE_FRACTION * len as f64 / 2.0).ceil() as usize).max(1);
        Ok(SpectralGrid {
            n_max,
            len,
            forward,
            inverse,
            scratch_len,
            sin_theta,
            edge_width,
        })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Transform length `L = 2 n_max`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Momentum class stored in `slot`.
    pub fn class_of(&self, slot: usize) -> i64 {
        class_of(slot, self.len)
    }

    pub fn slot_of(&self, class: i64) -> Option<usize> {
        let half = self.n_max as i64;
        if (-half..half).contains(&class) {
            Some(class.rem_euclid(self.len as i64) as usize)
        } else {
            None
        }
    }

    /// State with all weight in momentum class `class` and quasimomentum `beta`.
    pub fn momentum_eigenstate(&self, class: i64, beta: f64) -> Result<QuantumState> {
        let slot = self.slot_of(class).ok_or_else(|| {
            Error::invalid("n0", format!("momentum class {class} is outside ±{}", self.n_max))
        })?;
        let mut amps = vec![Complex64::new(0.0, 0.0); self.len];
        amps[slot] = Complex64::new(1.0, 0.0);
        Ok(QuantumState {
            amps,
            beta,
            time: 0.0,
            scratch: Vec::new(),
        })
    }

    /// Builds a state from explicit `(class, amplitude)` pairs.
    pub fn state_from_amplitudes(
        &self,
        amplitudes: impl IntoIterator<Item = (i64, Complex64)>,
        beta: f64,
    ) -> Result<QuantumState> {
        let mut amps = vec![Complex64::new(0.0, 0.0); self.len];
        for (class, amp) in amplitudes {
            let slot = self.slot_of(class).ok_or_else(|| {
                Error::invalid("n", format!("momentum class {class} is outside ±{}", self.n_max))
            })?;
            amps[slot] = amp;
        }
        Ok(QuantumState {
            amps,
            beta,
            time: 0.0,
            scratch: Vec::new(),
        })
    }

    /// Pointwise kick factors `exp(−i A sin θ_j / ħ̄) / L` (the `1/L` completes
    /// the unnormalized transform pair).
    pub fn kick_phases(&self, amplitude: f64, hbar: f64) -> Vec<Complex64> {
        let scale = 1.0 / self.len as f64;
        self.sin_theta
            .iter()
            .map(|s| {
                let arg = (amplitude * s / hbar).rem_euclid(TAU);
                Complex64::from_polar(scale, -arg)
            })
            .collect()
    }

    /// `exp(−i ħ̄ n² dt / 2)` per slot, the β-independent part of free flight.
    fn drift_base(&self, dt: f64, hbar: f64) -> Vec<Complex64> {
        let c = 0.5 * hbar * dt;
        (0..self.len)
            .map(|k| {
                let n = self.class_of(k) as f64;
                Complex64::from_polar(1.0, -(n * n * c).rem_euclid(TAU))
            })
            .collect()
    }

    fn check_state(&self, state: &QuantumState) {
        assert_eq!(state.amps.len(), self.len, "state does not belong to this grid");
    }

    /// Free flight for `dt`: `c_n ← c_n exp(−i ħ̄ (n+β)² dt / 2)`.
    pub fn free_flight(&self, state: &mut QuantumState, dt: f64, hbar: f64) {
        self.check_state(state);
        let c = 0.5 * hbar * dt;
        let beta = state.beta;
        for (k, amp) in state.amps.iter_mut().enumerate() {
            let q = self.class_of(k) as f64 + beta;
            *amp *= Complex64::from_polar(1.0, -(q * q * c).rem_euclid(TAU));
        }
        state.time += dt;
    }

    /// Instantaneous kick `exp(−i A sin θ / ħ̄)`.
    pub fn delta_kick(&self, state: &mut QuantumState, amplitude: f64, hbar: f64) -> Result<()> {
        self.check_state(state);
        if amplitude == 0.0 {
            return Ok(());
        }
        let phases = self.kick_phases(amplitude, hbar);
        self.apply_kick(state, &phases);
        self.guard(state, 0)
    }

    /// Square pulse of total strength `amplitude` lasting `pulse_frac`,
    /// integrated by symmetric splitting with `substeps` kick slices.
    pub fn square_pulse(
        &self,
        state: &mut QuantumState,
        amplitude: f64,
        pulse_frac: f64,
        hbar: f64,
        substeps: usize,
    ) -> Result<()> {
        self.check_state(state);
        if substeps == 0 {
            return Err(Error::invalid("substeps", "must be at least 1"));
        }
        if !(pulse_frac > 0.0) {
            return Err(Error::invalid("pulse_frac", "must be positive for a square pulse"));
        }
        let slice = self.kick_phases(amplitude / substeps as f64, hbar);
        let h = pulse_frac / (2 * substeps) as f64;
        self.free_flight(state, h, hbar);
        for i in 0..substeps {
            if amplitude != 0.0 {
                self.apply_kick(state, &slice);
            }
            let dt = if i + 1 == substeps { h } else { 2.0 * h };
            self.free_flight(state, dt, hbar);
        }
        self.guard(state, 0)
    }

    /// Evolves `state` through every event of `timeline`: free flight across
    /// the gaps and a δ-kick (`pulse_frac == 0`) or square pulse at each event.
    pub fn propagate(
        self: &Arc<Self>,
        state: &mut QuantumState,
        timeline: &KickTimeline,
        hbar: f64,
        pulse_frac: f64,
        substeps: usize,
    ) -> Result<()> {
        let program = KickProgram::compile(self.clone(), timeline, hbar, pulse_frac, substeps)?;
        program.run(state, &program.nominal_kicks(), &mut |_, _| {})
    }

    fn apply_kick(&self, state: &mut QuantumState, phases: &[Complex64]) {
        if state.scratch.len() < self.scratch_len {
            state.scratch.resize(self.scratch_len, Complex64::new(0.0, 0.0));
        }
        self.inverse.process_with_scratch(&mut state.amps, &mut state.scratch);
        for (a, p) in state.amps.iter_mut().zip(phases) {
            *a *= p;
        }
        self.forward.process_with_scratch(&mut state.amps, &mut state.scratch);
    }

    /// Free flight using a precomputed β-independent table.
    fn apply_drift(&self, state: &mut QuantumState, table: &DriftTable, hbar: f64) {
        let beta = state.beta;
        state.time += table.dt;
        if beta == 0.0 {
            for (a, b) in state.amps.iter_mut().zip(&table.base) {
                *a *= b;
            }
            return;
        }
        // (n+β)² = n² + 2βn + β²: the cross term is a geometric sequence in n.
        let c = hbar * table.dt * beta;
        let g = 0.5 * hbar * table.dt * beta * beta;
        let step = Complex64::from_polar(1.0, -c.rem_euclid(TAU));
        for (block, (amps, base)) in state
            .amps
            .chunks_mut(ANCHOR_STRIDE)
            .zip(table.base.chunks(ANCHOR_STRIDE))
            .enumerate()
        {
            let n0 = self.class_of(block * ANCHOR_STRIDE) as f64;
            let mut f = Complex64::from_polar(1.0, -(c * n0 + g).rem_euclid(TAU));
            for (a, b) in amps.iter_mut().zip(base) {
                *a *= b * f;
                f *= step;
            }
        }
    }

    fn guard(&self, state: &QuantumState, event: usize) -> Result<()> {
        let occupancy = state.edge_occupancy_with(self.edge_width);
        if occupancy < EDGE_LIMIT {
            Ok(())
        } else {
            Err(Error::GridTooSmall {
                n_max: self.n_max,
                occupancy,
                event,
            })
        }
    }
}

fn class_of(slot: usize, len: usize) -> i64 {
    if slot < len / 2 {
        slot as i64
    } else {
        slot as i64 - len as i64
    }
}

/// Wavefunction on the momentum ladder.
#[derive(Debug, Clone)]
pub struct QuantumState {
    amps: Vec<Complex64>,
    /// Quasimomentum in units of `2ħk_L`. Kicks and free flight conserve it;
    /// only spontaneous emission moves it.
    pub beta: f64,
    /// Current time in units of the primary period.
    pub time: f64,
    scratch: Vec<Complex64>,
}

impl QuantumState {
    pub fn grid_size(&self) -> usize {
        self.amps.len()
    }

    pub fn n_max(&self) -> usize {
        self.amps.len() / 2
    }

    /// Amplitudes in FFT slot order.
    pub fn raw_amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitude(&self, class: i64) -> Complex64 {
        let len = self.amps.len() as i64;
        if (-len / 2..len / 2).contains(&class) {
            self.amps[class.rem_euclid(len) as usize]
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    /// `(class, amplitude)` pairs in ascending class order.
    pub fn amplitudes(&self) -> Vec<(i64, Complex64)> {
        let len = self.amps.len();
        let half = len / 2;
        (half..len)
            .chain(0..half)
            .map(|k| (class_of(k, len), self.amps[k]))
            .collect()
    }

    /// `(class, |amplitude|²)` pairs in ascending class order.
    pub fn probabilities(&self) -> Vec<(i64, f64)> {
        self.amplitudes()
            .into_iter()
            .map(|(n, a)| (n, a.norm_sqr()))
            .collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `⟨(n+β)²⟩`, in units of `(2ħk_L)²`.
    pub fn mean_p2(&self) -> f64 {
        let len = self.amps.len();
        self.amps
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let q = class_of(k, len) as f64 + self.beta;
                q * q * a.norm_sqr()
            })
            .sum()
    }

    /// Probability held in the outermost slots watched by the aliasing guard.
    pub fn edge_occupancy(&self) -> f64 {
        let len = self.amps.len();
        let width = ((EDGE_FRACTION * len as f64 / 2.0).ceil() as usize).max(1);
        self.edge_occupancy_with(width)
    }

    fn edge_occupancy_with(&self, width: usize) -> f64 {
        let half = self.amps.len() / 2;
        self.amps[half - width..half + width]
            .iter()
            .map(|a| a.norm_sqr())
            .sum()
    }

    /// Euclidean distance between amplitude vectors of equal size.
    pub fn l2_distance(&self, other: &QuantumState) -> f64 {
        assert_eq!(self.amps.len(), other.amps.len());
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// CSV snapshot `n,re,im` in ascending class order, skipping classes with
    /// negligible weight.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,re,im\n");
        for (n, a) in self.amplitudes() {
            if a.norm_sqr() > 1e-30 {
                out.push_str(&format!("{n},{:.16e},{:.16e}\n", a.re, a.im));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct DriftTable {
    dt: f64,
    base: Vec<Complex64>,
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Drift(usize),
    Kick(usize),
    /// All operations of event `.0` are done.
    EventEnd(usize),
}

/// Where the propagation stands when the observer is called.
#[derive(Debug, Clone, Copy)]
pub struct EventInfo {
    pub index: usize,
    pub event: KickEvent,
    /// Whether this is the last event before the next primary kick (or the
    /// end of the timeline), i.e. a primary-period boundary follows.
    pub period_end: bool,
}

/// A timeline compiled against one grid and `ħ̄`: the sequence of drift and
/// kick operations with all β-independent phase tables precomputed. Shared
/// read-only by every trajectory of a run.
#[derive(Debug)]
pub struct KickProgram {
    grid: Arc<SpectralGrid>,
    hbar: f64,
    steps: Vec<Step>,
    drifts: Vec<DriftTable>,
    kick_amplitudes: Vec<f64>,
    kicks: Vec<Vec<Complex64>>,
    events: Vec<KickEvent>,
    period_end: Vec<bool>,
    first_time: f64,
}

impl KickProgram {
    pub fn compile(
        grid: Arc<SpectralGrid>,
        timeline: &KickTimeline,
        hbar: f64,
        pulse_frac: f64,
        substeps: usize,
    ) -> Result<Self> {
        if !(hbar > 0.0) {
            return Err(Error::invalid("hbar_eff", "must be positive"));
        }
        if !(pulse_frac >= 0.0) {
            return Err(Error::invalid("pulse_frac", "must be non-negative"));
        }
        if pulse_frac > 0.0 && substeps == 0 {
            return Err(Error::invalid("substeps", "must be at least 1"));
        }
        let mut drift_index: HashMap<u64, usize> = HashMap::new();
        let mut drifts = Vec::new();
        let mut kick_index: HashMap<u64, usize> = HashMap::new();
        let mut kick_amplitudes = Vec::new();
        let mut steps = Vec::new();

        let mut drift = |dt: f64, steps: &mut Vec<Step>| {
            if dt == 0.0 {
                return;
            }
            let id = *drift_index.entry(dt.to_bits()).or_insert_with(|| {
                drifts.push(DriftTable {
                    dt,
                    base: grid.drift_base(dt, hbar),
                });
                drifts.len() - 1
            });
            steps.push(Step::Drift(id));
        };
        let mut kick = |amplitude: f64, steps: &mut Vec<Step>| {
            if amplitude == 0.0 {
                return;
            }
            let id = *kick_index.entry(amplitude.to_bits()).or_insert_with(|| {
                kick_amplitudes.push(amplitude);
                kick_amplitudes.len() - 1
            });
            steps.push(Step::Kick(id));
        };

        let events = timeline.events();
        for (i, e) in events.iter().enumerate() {
            if i > 0 {
                let gap = e.time - events[i - 1].time - pulse_frac;
                if gap < 0.0 {
                    return Err(Error::Configuration(format!(
                        "pulse of event {} overlaps event {i}",
                        i - 1
                    )));
                }
                drift(gap, &mut steps);
            }
            if pulse_frac > 0.0 {
                let h = pulse_frac / (2 * substeps) as f64;
                drift(h, &mut steps);
                for s in 0..substeps {
                    kick(e.amplitude / substeps as f64, &mut steps);
                    drift(if s + 1 == substeps { h } else { 2.0 * h }, &mut steps);
                }
            } else {
                kick(e.amplitude, &mut steps);
            }
            steps.push(Step::EventEnd(i));
        }

        let kicks = kick_amplitudes
            .iter()
            .map(|&amp| grid.kick_phases(amp, hbar))
            .collect();
        let period_end = (0..events.len())
            .map(|i| events.get(i + 1).is_none_or(|next| next.tag.has_primary()))
            .collect();
        Ok(KickProgram {
            grid,
            hbar,
            steps,
            drifts,
            kick_amplitudes,
            kicks,
            events: events.to_vec(),
            period_end,
            first_time: events.first().map_or(0.0, |e| e.time),
        })
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn events(&self) -> &[KickEvent] {
        &self.events
    }

    /// Kick tables at the nominal amplitudes.
    pub fn nominal_kicks(&self) -> KickTables<'_> {
        KickTables::Shared(&self.kicks)
    }

    /// Kick tables with every amplitude multiplied by `scale`.
    pub fn scaled_kicks(&self, scale: f64) -> KickTables<'_> {
        if scale == 1.0 {
            return self.nominal_kicks();
        }
        KickTables::Owned(
            self.kick_amplitudes
                .iter()
                .map(|&amp| self.grid.kick_phases(amp * scale, self.hbar))
                .collect(),
        )
    }

    /// Runs the program on `state`. `observer` is called after every event
    /// and may change the quasimomentum (spontaneous emission).
    pub fn run(
        &self,
        state: &mut QuantumState,
        kicks: &KickTables<'_>,
        observer: &mut dyn FnMut(EventInfo, &mut QuantumState),
    ) -> Result<()> {
        self.grid.check_state(state);
        if self.events.is_empty() {
            return Ok(());
        }
        if state.time > self.first_time {
            return Err(Error::Configuration(format!(
                "state time {} is past the first kick at {}",
                state.time, self.first_time
            )));
        }
        let lead = self.first_time - state.time;
        if lead > 0.0 {
            self.grid.free_flight(state, lead, self.hbar);
        }
        let kicks = kicks.tables();
        let mut kicked = false;
        for step in &self.steps {
            match *step {
                Step::Drift(id) => self.grid.apply_drift(state, &self.drifts[id], self.hbar),
                Step::Kick(id) => {
                    self.grid.apply_kick(state, &kicks[id]);
                    kicked = true;
                }
                Step::EventEnd(i) => {
                    if kicked {
                        self.grid.guard(state, i)?;
                        kicked = false;
                    }
                    let info = EventInfo {
                        index: i,
                        event: self.events[i],
                        period_end: self.period_end[i],
                    };
                    observer(info, state);
                }
            }
        }
        Ok(())
    }
}

pub enum KickTables<'a> {
    Shared(&'a [Vec<Complex64>]),
    Owned(Vec<Vec<Complex64>>),
}

impl KickTables<'_> {
    fn tables(&self) -> &[Vec<Complex64>] {
        match self {
            KickTables::Shared(t) => t,
            KickTables::Owned(t) => t,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_timeline, SeriesTag, DEFAULT_MERGE_TOLERANCE};
    use crate::units::{ScaledParams, TABLE_FREQ_RATIO};

    fn grid(n_max: usize) -> Arc<SpectralGrid> {
        Arc::new(SpectralGrid::new(n_max).unwrap())
    }

    fn params(k: f64, hbar: f64, a: f64, n: usize) -> ScaledParams {
        ScaledParams {
            kick_strength: k,
            hbar_eff: hbar,
            amp_ratio: a,
            freq_ratio: TABLE_FREQ_RATIO,
            n_kicks: n,
            pulse_frac: 0.0,
        }
    }

    fn spread_state(g: &SpectralGrid, beta: f64) -> QuantumState {
        let mut s = g.momentum_eigenstate(0, beta).unwrap();
        g.delta_kick(&mut s, 6.8, 3.46).unwrap();
        g.free_flight(&mut s, 0.37, 3.46);
        g.delta_kick(&mut s, 6.8, 3.46).unwrap();
        s
    }

    #[test]
    fn slot_layout() {
        let g = grid(8);
        assert_eq!(g.len(), 16);
        assert_eq!(g.class_of(0), 0);
        assert_eq!(g.class_of(7), 7);
        assert_eq!(g.class_of(8), -8);
        assert_eq!(g.class_of(15), -1);
        assert_eq!(g.slot_of(-1), Some(15));
        assert_eq!(g.slot_of(8), None);
        let s = g.momentum_eigenstate(-3, 0.0).unwrap();
        assert_eq!(s.amplitude(-3), Complex64::new(1.0, 0.0));
        let probs = s.probabilities();
        assert_eq!(probs.first().unwrap().0, -8);
        assert_eq!(probs.last().unwrap().0, 7);
    }

    #[test]
    fn free_flight_identity_and_inverse() {
        let g = grid(64);
        let s0 = spread_state(&g, 0.23);
        let mut s = s0.clone();
        g.free_flight(&mut s, 0.0, 3.46);
        assert_eq!(s.l2_distance(&s0), 0.0);

        g.free_flight(&mut s, 0.81, 3.46);
        g.free_flight(&mut s, -0.81, 3.46);
        assert!(s.l2_distance(&s0) < 1e-12);
        assert!((s.time - s0.time).abs() < 1e-15);

        let mut e = g.momentum_eigenstate(5, 0.1).unwrap();
        g.free_flight(&mut e, 12.3, 1.44);
        assert!((e.amplitude(5).norm_sqr() - 1.0).abs() < 1e-15);
        assert!((e.norm_sqr() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kick_identity_and_inverse() {
        let g = grid(64);
        let s0 = spread_state(&g, -0.4);
        let mut s = s0.clone();
        g.delta_kick(&mut s, 0.0, 3.46).unwrap();
        assert_eq!(s.l2_distance(&s0), 0.0);

        g.delta_kick(&mut s, 5.3, 2.0).unwrap();
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        g.delta_kick(&mut s, -5.3, 2.0).unwrap();
        assert!(s.l2_distance(&s0) < 1e-12);
    }

    #[test]
    fn kick_trips_guard_on_small_grid() {
        let g = grid(8);
        let mut s = g.momentum_eigenstate(0, 0.0).unwrap();
        let err = g.delta_kick(&mut s, 40.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::GridTooSmall { n_max: 8, .. }));
        assert!(err.to_string().contains("enlarge n_max"));
    }

    #[test]
    fn fast_drift_matches_direct_drift() {
        let g = grid(256);
        for beta in [0.0, 0.31, -0.5, 1.7] {
            let s0 = spread_state(&g, beta);
            let mut direct = s0.clone();
            g.free_flight(&mut direct, 0.6843, 2.88);
            let mut fast = s0.clone();
            let table = DriftTable {
                dt: 0.6843,
                base: g.drift_base(0.6843, 2.88),
            };
            g.apply_drift(&mut fast, &table, 2.88);
            assert!(fast.l2_distance(&direct) < 1e-12, "beta {beta}");
        }
    }

    #[test]
    fn square_pulse_without_amplitude_is_free_flight() {
        let g = grid(64);
        let s0 = spread_state(&g, 0.2);
        let mut a = s0.clone();
        g.square_pulse(&mut a, 0.0, 0.018, 3.46, 10).unwrap();
        let mut b = s0;
        g.free_flight(&mut b, 0.018, 3.46);
        assert!(a.l2_distance(&b) < 1e-12);
        assert!((a.time - b.time).abs() < 1e-15);
    }

    #[test]
    fn square_pulse_rejects_bad_arguments() {
        let g = grid(16);
        let mut s = g.momentum_eigenstate(0, 0.0).unwrap();
        assert!(g.square_pulse(&mut s, 1.0, 0.01, 1.0, 0).is_err());
        assert!(g.square_pulse(&mut s, 1.0, 0.0, 1.0, 10).is_err());
    }

    #[test]
    fn square_pulse_tends_to_delta_kick() {
        // The splitting differs from kick-then-drift at first order in the
        // pulse length, so the gap must shrink linearly as the pulse shortens.
        let g = grid(64);
        let s0 = g.momentum_eigenstate(0, 0.13).unwrap();
        let gap = |tau: f64| {
            let mut pulse = s0.clone();
            g.square_pulse(&mut pulse, 6.8, tau, 3.46, 10).unwrap();
            let mut ideal = s0.clone();
            g.delta_kick(&mut ideal, 6.8, 3.46).unwrap();
            g.free_flight(&mut ideal, tau, 3.46);
            pulse.l2_distance(&ideal)
        };
        let (d1, d2, d3) = (gap(1e-4), gap(1e-5), gap(1e-6));
        assert!(d3 < 1e-4, "{d3}");
        assert!((d1 / d2 - 10.0).abs() < 0.5, "{d1} {d2}");
        assert!((d2 / d3 - 10.0).abs() < 0.5, "{d2} {d3}");
    }

    #[test]
    fn square_pulse_second_order_in_substeps() {
        let g = grid(128);
        let s0 = g.momentum_eigenstate(0, 0.13).unwrap();
        let pulse = |m: usize| {
            let mut s = s0.clone();
            g.square_pulse(&mut s, 6.8, 0.018, 3.46, m).unwrap();
            s
        };
        let (s10, s20, s40) = (pulse(10), pulse(20), pulse(40));
        let d1 = s10.l2_distance(&s20);
        let d2 = s20.l2_distance(&s40);
        assert!((d1 / d2 - 4.0).abs() < 0.2, "{d1} {d2}");
    }

    #[test]
    fn empty_and_single_event_timelines() {
        let g = grid(64);
        let p = params(6.8, 3.46, 0.0, 1);
        let s0 = spread_state(&g, 0.1);

        let empty = KickTimeline::from_events(vec![], p.clone(), 0.0).unwrap();
        let mut s = s0.clone();
        g.propagate(&mut s, &empty, 3.46, 0.0, 10).unwrap();
        assert_eq!(s.l2_distance(&s0), 0.0);

        let single = build_timeline(&p, DEFAULT_MERGE_TOLERANCE).unwrap();
        let mut a = g.momentum_eigenstate(2, 0.1).unwrap();
        g.propagate(&mut a, &single, 3.46, 0.0, 10).unwrap();
        let mut b = g.momentum_eigenstate(2, 0.1).unwrap();
        g.delta_kick(&mut b, 6.8, 3.46).unwrap();
        assert_eq!(a.l2_distance(&b), 0.0);
    }

    #[test]
    fn propagate_matches_step_by_step_composition() {
        let g = grid(256);
        let p = params(6.8, 2.88, 0.2, 12);
        let tl = build_timeline(&p, DEFAULT_MERGE_TOLERANCE).unwrap();
        let mut fast = g.momentum_eigenstate(1, 0.27).unwrap();
        g.propagate(&mut fast, &tl, 2.88, 0.0, 10).unwrap();

        let mut slow = g.momentum_eigenstate(1, 0.27).unwrap();
        let mut t = 0.0;
        for e in tl.events() {
            g.free_flight(&mut slow, e.time - t, 2.88);
            t = e.time;
            g.delta_kick(&mut slow, e.amplitude, 2.88).unwrap();
        }
        assert!(fast.l2_distance(&slow) < 1e-11);
        assert!((fast.time - tl.events().last().unwrap().time).abs() < 1e-12);
    }

    #[test]
    fn propagate_with_pulses_matches_composition() {
        let g = grid(128);
        let mut p = params(6.8, 3.46, 0.0, 6);
        p.pulse_frac = 0.018;
        let tl = build_timeline(&p, DEFAULT_MERGE_TOLERANCE).unwrap();
        let mut fast = g.momentum_eigenstate(0, -0.2).unwrap();
        g.propagate(&mut fast, &tl, 3.46, 0.018, 4).unwrap();

        let mut slow = g.momentum_eigenstate(0, -0.2).unwrap();
        for (i, e) in tl.events().iter().enumerate() {
            if i > 0 {
                let dt = e.time - slow.time;
                g.free_flight(&mut slow, dt, 3.46);
            }
            g.square_pulse(&mut slow, e.amplitude, 0.018, 3.46, 4).unwrap();
        }
        assert!(fast.l2_distance(&slow) < 1e-11);
        assert!((fast.time - (5.0 + 0.018)).abs() < 1e-12);
    }

    #[test]
    fn observer_sees_period_boundaries() {
        let g = grid(64);
        let p = params(6.8, 3.46, 0.1, 3);
        let tl = build_timeline(&p, DEFAULT_MERGE_TOLERANCE).unwrap();
        let program = KickProgram::compile(g.clone(), &tl, 3.46, 0.0, 10).unwrap();
        let mut s = g.momentum_eigenstate(0, 0.0).unwrap();
        let mut seen = Vec::new();
        program
            .run(&mut s, &program.nominal_kicks(), &mut |info, _| {
                seen.push((info.index, info.event.tag, info.period_end))
            })
            .unwrap();
        assert_eq!(
            seen,
            vec![
                (0, SeriesTag::Merged, true),
                (1, SeriesTag::Primary, false),
                (2, SeriesTag::Secondary, true),
                (3, SeriesTag::Primary, false),
                (4, SeriesTag::Secondary, true),
            ]
        );
    }

    #[test]
    fn scaled_kicks_equal_rescaled_timeline() {
        let g = grid(128);
        let p = params(6.8, 3.46, 0.25, 8);
        let tl = build_timeline(&p, DEFAULT_MERGE_TOLERANCE).unwrap();
        let program = KickProgram::compile(g.clone(), &tl, 3.46, 0.0, 10).unwrap();
        let mut a = g.momentum_eigenstate(0, 0.3).unwrap();
        program.run(&mut a, &program.scaled_kicks(0.7), &mut |_, _| {}).unwrap();

        let q = ScaledParams {
            kick_strength: 6.8 * 0.7,
            ..p
        };
        let tl2 = build_timeline(&q, DEFAULT_MERGE_TOLERANCE).unwrap();
        let mut b = g.momentum_eigenstate(0, 0.3).unwrap();
        g.propagate(&mut b, &tl2, 3.46, 0.0, 10).unwrap();
        assert!(a.l2_distance(&b) < 1e-11);
    }

    #[test]
    fn state_must_not_start_after_first_kick() {
        let g = grid(16);
        let p = params(1.0, 3.46, 0.0, 2);
        let tl = build_timeline(&p, DEFAULT_MERGE_TOLERANCE).unwrap();
        let mut s = g.momentum_eigenstate(0, 0.0).unwrap();
        s.time = 0.5;
        assert!(g.propagate(&mut s, &tl, 3.46, 0.0, 10).is_err());
    }
}
