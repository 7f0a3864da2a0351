use std::sync::Arc;

use proptest::prelude::*;
use qpkr::ensemble::{run_ensemble, EnsembleConfig};
use qpkr::qprop::{SpectralGrid, DEFAULT_SUBSTEPS};
use qpkr::schedule::{build_timeline, DEFAULT_MERGE_TOLERANCE};
use qpkr::units::{preset, ScaledParams, TABLE_FREQ_RATIO};

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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn norm_is_conserved(
        k in 0.5f64..9.0,
        hbar in 1.4f64..3.5,
        a in 0.0f64..0.3,
        n in 1usize..60,
        beta in -0.5f64..0.5,
        n0 in -5i64..=5,
    ) {
        let grid = Arc::new(SpectralGrid::new(512).unwrap());
        let tl = build_timeline(&params(k, hbar, a, n), DEFAULT_MERGE_TOLERANCE).unwrap();
        let mut s = grid.momentum_eigenstate(n0, beta).unwrap();
        grid.propagate(&mut s, &tl, hbar, 0.0, DEFAULT_SUBSTEPS).unwrap();
        prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn time_reversal_restores_initial_state(
        k in 0.5f64..7.0,
        hbar in 1.4f64..3.5,
        a in 0.0f64..0.3,
        n in 1usize..=50,
        beta in -0.5f64..0.5,
    ) {
        let grid = Arc::new(SpectralGrid::new(512).unwrap());
        let tl = build_timeline(&params(k, hbar, a, n), DEFAULT_MERGE_TOLERANCE).unwrap();
        let start = grid.momentum_eigenstate(1, beta).unwrap();
        let mut s = start.clone();
        grid.propagate(&mut s, &tl, hbar, 0.0, DEFAULT_SUBSTEPS).unwrap();
        let ev = tl.events();
        for i in (0..ev.len()).rev() {
            grid.delta_kick(&mut s, -ev[i].amplitude, hbar).unwrap();
            if i > 0 {
                grid.free_flight(&mut s, -(ev[i].time - ev[i - 1].time), hbar);
            }
        }
        prop_assert!(s.l2_distance(&start) < 1e-8, "distance {}", s.l2_distance(&start));
    }

    #[test]
    fn shifting_beta_by_one_relabels_classes(
        k in 0.5f64..7.0,
        hbar in 1.4f64..3.5,
        a in 0.0f64..0.3,
        n in 1usize..40,
        beta in -0.5f64..0.5,
    ) {
        let grid = Arc::new(SpectralGrid::new(256).unwrap());
        let tl = build_timeline(&params(k, hbar, a, n), DEFAULT_MERGE_TOLERANCE).unwrap();
        let mut s = grid.momentum_eigenstate(0, beta).unwrap();
        let mut t = grid.momentum_eigenstate(-1, beta + 1.0).unwrap();
        grid.propagate(&mut s, &tl, hbar, 0.0, DEFAULT_SUBSTEPS).unwrap();
        grid.propagate(&mut t, &tl, hbar, 0.0, DEFAULT_SUBSTEPS).unwrap();
        for class in -200..200 {
            let (ps, pt) = (s.amplitude(class).norm_sqr(), t.amplitude(class - 1).norm_sqr());
            prop_assert!((ps - pt).abs() < 1e-10, "class {}: {} vs {}", class, ps, pt);
        }
    }
}

#[test]
fn unitarity_over_500_kicks() {
    let grid = Arc::new(SpectralGrid::new(1024).unwrap());
    let p = params(6.8, 3.46, 0.25, 300);
    let tl = build_timeline(&p, DEFAULT_MERGE_TOLERANCE).unwrap();
    assert!(tl.len() >= 500, "{} events", tl.len());
    let mut s = grid.momentum_eigenstate(0, 0.17).unwrap();
    grid.propagate(&mut s, &tl, p.hbar_eff, 0.0, DEFAULT_SUBSTEPS).unwrap();
    assert!((s.norm_sqr() - 1.0).abs() < 1e-10, "{}", s.norm_sqr());
}

#[test]
fn emission_breaks_beta_relabelling() {
    let grid = Arc::new(SpectralGrid::new(256).unwrap());
    let p = params(6.8, 3.46, 0.0, 20);
    let tl = build_timeline(&p, DEFAULT_MERGE_TOLERANCE).unwrap();
    let (first, second) = tl.events().split_at(10);
    let beta = 0.3;
    let mut s = grid.momentum_eigenstate(0, beta).unwrap();
    let mut t = grid.momentum_eigenstate(-1, beta + 1.0).unwrap();
    for e in first {
        for st in [&mut s, &mut t] {
            let dt = e.time - st.time;
            grid.free_flight(st, dt, p.hbar_eff);
            grid.delta_kick(st, e.amplitude, p.hbar_eff).unwrap();
        }
    }
    // One recoil that moves β across the bin edge at +0.5.
    s.beta += 0.35;
    for e in second {
        for st in [&mut s, &mut t] {
            let dt = e.time - st.time;
            grid.free_flight(st, dt, p.hbar_eff);
            grid.delta_kick(st, e.amplitude, p.hbar_eff).unwrap();
        }
    }
    let mismatch: f64 = (-100..100)
        .map(|c| (s.amplitude(c).norm_sqr() - t.amplitude(c - 1).norm_sqr()).abs())
        .sum();
    assert!(mismatch > 1e-2, "{mismatch}");
}

#[test]
fn grid_doubling_leaves_observables_unchanged() {
    for (name, a) in [("table1_row1", 0.25), ("table1_row4", 0.25)] {
        let p = preset(name).unwrap().scaled(a);
        let cfg = EnsembleConfig {
            n_traj: 8,
            seed: 11,
            ..EnsembleConfig::default()
        };
        let base = run_ensemble(&p, &cfg).unwrap();
        let big = run_ensemble(&p, &EnsembleConfig { n_max: 2 * cfg.n_max, ..cfg.clone() }).unwrap();
        let rel = |x: f64, y: f64| ((x - y) / x).abs();
        assert!(rel(base.pi0, big.pi0) < 1e-6, "{name}: {} {}", base.pi0, big.pi0);
        assert!(rel(base.p2, big.p2) < 1e-6, "{name}: {} {}", base.p2, big.p2);
    }
}
