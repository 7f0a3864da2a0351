//! The `simulate`, `sweep` and `collapse` commands.

use std::fs;
use std::path::{Path, PathBuf};

use qpkr::analysis::{collapse_test, fit_shape, shape_csv, CollapseReport, ShapeFit, SweepCurve};
use qpkr::classical::run_classical;
use qpkr::ensemble::{run_ensemble, trajectory_snapshots, RunResult, DEFAULT_BOOTSTRAP_RESAMPLES};
use qpkr::units::ScaledParams;
use serde_json::{json, Value};

use crate::config::{load_source, resolve, Engine, RawConfig, RunConfig};
use crate::output::{
    data_lines, ensure_dir, header, header_value, sha256_hex, write_atomic, SCHEMA_COLLAPSE, SCHEMA_HISTOGRAM,
    SCHEMA_SHAPE, SCHEMA_SNAPSHOT, SCHEMA_SUMMARY, SCHEMA_SWEEP, SCHEMA_SWEEP_PART, VERSION,
};
use crate::CliError;

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

/// Runs the configured engine at the given parameters.
pub fn run_engine(cfg: &RunConfig, params: &ScaledParams) -> Result<RunResult, CliError> {
    let r = match cfg.engine {
        Engine::Quantum => run_ensemble(params, &cfg.ensemble)?,
        Engine::Classical => run_classical(params, &cfg.ensemble)?,
    };
    Ok(r)
}

#[derive(Debug)]
pub struct SimulateOutcome {
    pub result: RunResult,
    pub pi0_err: f64,
    pub shape: Result<ShapeFit, String>,
}

fn params_json(p: &ScaledParams) -> Value {
    json!({
        "kick_strength": p.kick_strength,
        "hbar_eff": p.hbar_eff,
        "amp_ratio": p.amp_ratio,
        "freq_ratio": p.freq_ratio.to_string(),
        "n_kicks": p.n_kicks,
        "pulse_frac": p.pulse_frac,
        "atilde": p.atilde(),
    })
}

/// Writes `histogram.csv`, `summary.json` and, when the tails can be
/// classified, `shape.csv` into `out`.
pub fn simulate(cfg: &RunConfig, out: &Path, snapshot_every: Option<usize>) -> Result<SimulateOutcome, CliError> {
    ensure_dir(out)?;
    let text = cfg.to_text();
    let result = run_engine(cfg, &cfg.params)?;
    let pi0_err = result.pi0_error(DEFAULT_BOOTSTRAP_RESAMPLES, cfg.ensemble.seed);

    let meta = [("engine", cfg.engine.to_string())];
    write_atomic(
        &out.join("histogram.csv"),
        &(header(SCHEMA_HISTOGRAM, &meta, Some(&text)) + &result.hist.to_csv()),
    )?;

    let shape = fit_shape(&result.hist, cfg.analysis.core_exclusion).map_err(|e| e.to_string());
    let shape_json = match &shape {
        Ok(fit) => {
            let meta = [
                ("verdict", fit.verdict.to_string()),
                ("exp_decay_length", f(fit.exp_decay_length)),
                ("gauss_sigma", f(fit.gauss_sigma)),
                ("exp_sse", f(fit.exp_sse)),
                ("gauss_sse", f(fit.gauss_sse)),
            ];
            write_atomic(
                &out.join("shape.csv"),
                &(header(SCHEMA_SHAPE, &meta, Some(&text)) + &shape_csv(&result.hist, fit)),
            )?;
            json!({
                "verdict": fit.verdict.as_str(),
                "exp_decay_length": fit.exp_decay_length,
                "gauss_sigma": fit.gauss_sigma,
                "exp_sse": fit.exp_sse,
                "gauss_sse": fit.gauss_sse,
                "n_points": fit.n_points,
            })
        }
        Err(msg) => {
            let stale = out.join("shape.csv");
            if stale.exists() {
                fs::remove_file(&stale)?;
            }
            json!({ "error": msg })
        }
    };

    let summary = json!({
        "schema": SCHEMA_SUMMARY,
        "version": VERSION,
        "engine": cfg.engine.as_str(),
        "seed": cfg.ensemble.seed,
        "n_traj": cfg.ensemble.n_traj,
        "pi0": result.pi0,
        "pi0_err": pi0_err,
        "p2": result.p2,
        "p2_series": result.p2_series,
        "emissions": result.emissions,
        "regrown": result.regrown,
        "params": params_json(&cfg.params),
        "shape": shape_json,
        "config": text,
    });
    let body = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))? + "\n";
    write_atomic(&out.join("summary.json"), &body)?;

    if let Some(every) = snapshot_every {
        if cfg.engine != Engine::Quantum {
            return Err(CliError::Usage("--snapshot-every needs the quantum engine".into()));
        }
        let dir = out.join("snapshots");
        ensure_dir(&dir)?;
        for (period, state) in trajectory_snapshots(&cfg.params, &cfg.ensemble, 0, every)? {
            let meta = [
                ("trajectory", "0".to_string()),
                ("period", period.to_string()),
                ("beta", f(state.beta)),
            ];
            write_atomic(
                &dir.join(format!("traj0_period{period:05}.csv")),
                &(header(SCHEMA_SNAPSHOT, &meta, Some(&text)) + &state.to_csv()),
            )?;
        }
    }
    Ok(SimulateOutcome { result, pi0_err, shape })
}

fn part_path(parts: &Path, a: f64) -> PathBuf {
    parts.join(format!("a_{}.part", f(a)))
}

/// Reads a finished per-`a` result, refusing one from another configuration.
fn read_part(path: &Path, hash: &str) -> Result<Option<(f64, f64)>, CliError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(CliError::Runtime(format!("cannot read {}: {e}", path.display()))),
    };
    if header_value(&text, "schema") != Some(SCHEMA_SWEEP_PART) {
        return Err(CliError::Runtime(format!("{}: not a sweep part file", path.display())));
    }
    let found = header_value(&text, "hash").unwrap_or("");
    if found != hash {
        return Err(CliError::Runtime(format!(
            "refusing to resume: {} was computed for a different configuration (hash {found}, expected {hash})",
            path.display()
        )));
    }
    let value = |key: &str| -> Result<f64, CliError> {
        header_value(&text, key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Runtime(format!("{}: missing `{key}`", path.display())))
    };
    Ok(Some((value("pi0")?, value("pi0_err")?)))
}

/// Runs every point of the configured a-grid, reusing finished points in
/// `out/parts`, and writes `sweep.csv`.
pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<SweepCurve, CliError> {
    let grid = cfg
        .analysis
        .a_grid
        .clone()
        .ok_or_else(|| CliError::Usage("sweep needs an a-grid ([analysis] a_grid or --a-grid)".into()))?;
    if grid[0] != 0.0 {
        return Err(CliError::Usage("the a-grid must start at 0".into()));
    }
    let parts = out.join("parts");
    ensure_dir(&parts)?;
    let hash = sha256_hex(cfg.result_key().as_bytes());
    let mut raw = Vec::with_capacity(grid.len());
    for &a in &grid {
        let path = part_path(&parts, a);
        let (pi0, err) = match read_part(&path, &hash)? {
            Some(v) => v,
            None => {
                let r = run_engine(cfg, &cfg.params.with_amp_ratio(a))?;
                let err = r.pi0_error(DEFAULT_BOOTSTRAP_RESAMPLES, cfg.ensemble.seed);
                let meta = [
                    ("hash", hash.clone()),
                    ("a", f(a)),
                    ("pi0", f(r.pi0)),
                    ("pi0_err", f(err)),
                ];
                write_atomic(&path, &header(SCHEMA_SWEEP_PART, &meta, None))?;
                (r.pi0, err)
            }
        };
        raw.push((a, pi0, err));
    }
    let curve = SweepCurve::from_raw(cfg.params.clone(), &raw)?;
    let meta = [("engine", cfg.engine.to_string()), ("normalization", f(curve.normalization()))];
    write_atomic(
        &out.join("sweep.csv"),
        &(header(SCHEMA_SWEEP, &meta, Some(&cfg.to_text())) + &curve.to_csv()),
    )?;
    Ok(curve)
}

/// Loads a `sweep.csv` written by [`sweep`].
pub fn read_sweep(path: &Path) -> Result<(SweepCurve, String), CliError> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("cannot read {name}: {e}")))?;
    match header_value(&text, "schema") {
        Some(SCHEMA_SWEEP) => {}
        Some(other) => {
            return Err(CliError::Runtime(format!(
                "{name}: incompatible schema `{other}` (expected {SCHEMA_SWEEP})"
            )))
        }
        None => return Err(CliError::Runtime(format!("{name}: no schema header; not a sweep file"))),
    }
    let cfg = resolve(&RawConfig::parse(&load_source(&text, &name)?, &name)?)
        .map_err(|e| CliError::Runtime(format!("{name}: embedded config: {e}")))?;
    let bad = |line: &str| CliError::Runtime(format!("{name}: malformed row `{line}`"));
    let mut rows = Vec::new();
    for line in data_lines(&text).skip(1) {
        let cols: Vec<f64> = line
            .split(',')
            .map(|c| c.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(line))?;
        let [a, _atilde, pi0, err] = cols[..] else {
            return Err(bad(line));
        };
        rows.push((a, pi0, err));
    }
    // Rows are already normalized, so the first value is the unit anchor.
    let curve = SweepCurve::from_raw(cfg.params, &rows)
        .map_err(|e| CliError::Runtime(format!("{name}: {e}")))?;
    Ok((curve, sha256_hex(text.as_bytes())))
}

/// Collapse test over sweep files; writes `collapse.csv` and `verdict.json`.
/// A negative verdict is reported as [`CliError::NotCollapsed`] after the
/// files are written.
pub fn collapse(files: &[PathBuf], tolerance: f64, out: &Path) -> Result<CollapseReport, CliError> {
    if files.len() < 2 {
        return Err(CliError::Usage(format!("collapse needs at least 2 sweep files, got {}", files.len())));
    }
    let mut curves = Vec::new();
    let mut digests = Vec::new();
    for path in files {
        let (curve, digest) = read_sweep(path)?;
        curves.push(curve);
        digests.push(digest);
    }
    let report = collapse_test(&curves, tolerance)?;
    ensure_dir(out)?;
    let mut meta = vec![
        ("tolerance", f(tolerance)),
        ("spread_a", f(report.spread_a)),
        ("spread_atilde", f(report.spread_atilde)),
        ("collapsed", report.collapsed.to_string()),
    ];
    let inputs: Vec<String> = curves
        .iter()
        .zip(&digests)
        .enumerate()
        .map(|(i, (c, d))| {
            format!(
                "curve{i} sha256={d} kick_strength={} hbar_eff={}",
                f(c.params().kick_strength),
                f(c.params().hbar_eff)
            )
        })
        .collect();
    meta.extend(inputs.iter().map(|s| ("input", s.clone())));
    write_atomic(&out.join("collapse.csv"), &(header(SCHEMA_COLLAPSE, &meta, None) + &report.to_csv()))?;
    let verdict = json!({
        "schema": SCHEMA_COLLAPSE,
        "version": VERSION,
        "tolerance": tolerance,
        "spread_a": report.spread_a,
        "spread_atilde": report.spread_atilde,
        "collapsed": report.collapsed,
        "inputs": digests,
    });
    let body = serde_json::to_string_pretty(&verdict).map_err(|e| CliError::Runtime(e.to_string()))? + "\n";
    write_atomic(&out.join("verdict.json"), &body)?;
    if !report.collapsed {
        return Err(CliError::NotCollapsed(format!(
            "no collapse: spread_atilde = {:.4} > tolerance {tolerance}",
            report.spread_atilde
        )));
    }
    Ok(report)
}
