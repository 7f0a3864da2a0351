//! Classical kicked-rotor map over the same two-series timeline.
//!
//! Momentum here is the Hamiltonian momentum `P` (a class-`n` atom has
//! `P = ħ̄ n`), so the map is free of `ħ̄`; results are converted to units of
//! `2ħk_L` before binning so they overlay the quantum histograms.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::ensemble::{Accumulator, EnsembleConfig, RunResult, CHUNK};
use crate::rng::{trajectory_stream, Purpose};
use crate::schedule::{build_timeline, KickTimeline};
use crate::units::ScaledParams;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalState {
    /// Angle, kept in `[0, 2π)`.
    pub theta: f64,
    /// Hamiltonian momentum `P`.
    pub p: f64,
}

/// Drift for `dt`, then kick: `θ ← θ + p dt (mod 2π)`, `p ← p − A cos θ`.
pub fn classical_step(s: ClassicalState, dt: f64, amplitude: f64) -> ClassicalState {
    let theta = (s.theta + s.p * dt).rem_euclid(TAU);
    ClassicalState {
        theta,
        p: s.p - amplitude * theta.cos(),
    }
}

pub fn run_classical(p: &ScaledParams, cfg: &EnsembleConfig) -> Result<RunResult> {
    p.validate()?;
    cfg.validate()?;
    let timeline = build_timeline(p, cfg.merge_tolerance)?;
    run_classical_timeline(&timeline, cfg)
}

/// Classical ensemble over an explicit timeline (which may be empty).
pub fn run_classical_timeline(timeline: &KickTimeline, cfg: &EnsembleConfig) -> Result<RunResult> {
    cfg.validate()?;
    let params = timeline.params().clone();
    let hbar = params.hbar_eff;
    let events = timeline.events();
    let period_end: Vec<bool> = (0..events.len())
        .map(|i| events.get(i + 1).is_none_or(|next| next.tag.has_primary()))
        .collect();

    struct Partial {
        hist: Accumulator,
        p2: f64,
        p2_series: Vec<f64>,
        pi0: Vec<f64>,
    }

    let chunks: Vec<usize> = (0..cfg.n_traj).step_by(CHUNK).collect();
    let partials: Vec<Partial> = chunks
        .par_iter()
        .map(|&start| {
            let mut part = Partial {
                hist: Accumulator::default(),
                p2: 0.0,
                p2_series: vec![0.0; period_end.iter().filter(|&&e| e).count()],
                pi0: Vec::new(),
            };
            for index in start..(start + CHUNK).min(cfg.n_traj) {
                let mut rng = trajectory_stream(cfg.seed, index, Purpose::InitialCondition);
                let z: f64 = rng.sample(StandardNormal);
                let mut s = ClassicalState {
                    theta: rng.random::<f64>() * TAU,
                    p: hbar * cfg.init_sigma * z,
                };
                let mut t = events.first().map_or(0.0, |e| e.time);
                let mut period = 0;
                for (e, &end) in events.iter().zip(&period_end) {
                    s = classical_step(s, e.time - t, e.amplitude);
                    t = e.time;
                    if end {
                        part.p2_series[period] += (s.p / hbar).powi(2);
                        period += 1;
                    }
                }
                let q = s.p / hbar;
                let class = (q + 0.5).floor() as i64;
                part.hist.add(class, 1.0);
                part.pi0.push(if (class as f64).abs() <= cfg.detect_halfwidth { 1.0 } else { 0.0 });
                part.p2 += q * q;
            }
            part
        })
        .collect();

    let mut hist = Accumulator::default();
    let mut p2 = 0.0;
    let mut p2_series = vec![0.0; period_end.iter().filter(|&&e| e).count()];
    let mut traj_pi0 = Vec::with_capacity(cfg.n_traj);
    for part in partials {
        hist.merge(&part.hist);
        p2 += part.p2;
        for (a, b) in p2_series.iter_mut().zip(&part.p2_series) {
            *a += b;
        }
        traj_pi0.extend(part.pi0);
    }
    let n = cfg.n_traj as f64;
    let hist = hist.finish(cfg.n_traj, params);
    Ok(RunResult {
        pi0: traj_pi0.iter().sum::<f64>() / n,
        p2: p2 / n,
        p2_series: p2_series.iter().map(|s| s / n).collect(),
        traj_pi0,
        emissions: 0,
        regrown: 0,
        hist,
    })
}
