//! Post-processing: normalized Π₀(a) sweeps, the collapse test in ã, and
//! exponential-versus-Gaussian tail classification.

use std::fmt;

use crate::ensemble::{run_ensemble, EnsembleConfig, MomentumHistogram, DEFAULT_BOOTSTRAP_RESAMPLES};
use crate::units::ScaledParams;
use crate::{Error, Result};

pub const DEFAULT_CORE_EXCLUSION: u32 = 4;
/// Bins below this probability do not count towards the fit precondition.
pub const SHAPE_FLOOR: f64 = 1e-6;
pub const SHAPE_MIN_BINS: usize = 20;
/// Fit window, relative to the peak bin.
pub const FIT_WINDOW: (f64, f64) = (1e-5, 1e-1);
pub const VERDICT_RATIO: f64 = 2.0;
pub const DEFAULT_COLLAPSE_TOLERANCE: f64 = 0.1;
/// Points in each common interpolation grid.
pub const COLLAPSE_GRID_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub sse: f64,
}

/// Ordinary least squares `y = intercept + slope·x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len(), "linear_fit: length mismatch");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    LinearFit {
        slope,
        intercept,
        r_squared,
        sse,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Verdict {
    Exponential,
    Intermediate,
    Gaussian,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Exponential => "exponential",
            Verdict::Intermediate => "intermediate",
            Verdict::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeFit {
    pub exp_decay_length: f64,
    pub gauss_sigma: f64,
    pub exp_sse: f64,
    pub gauss_sse: f64,
    /// `ln Π ≈ exp_intercept − |n|/ξ`, in the normalized histogram.
    pub exp_intercept: f64,
    /// `ln Π ≈ gauss_intercept − n²/(2σ²)`.
    pub gauss_intercept: f64,
    /// Number of bins entering both fits.
    pub n_points: usize,
    pub verdict: Verdict,
}

impl ShapeFit {
    /// Fitted exponential at class `n`, in normalized probability.
    pub fn exp_model(&self, n: i64) -> f64 {
        (self.exp_intercept - (n as f64).abs() / self.exp_decay_length).exp()
    }

    pub fn gauss_model(&self, n: i64) -> f64 {
        let x = n as f64;
        (self.gauss_intercept - x * x / (2.0 * self.gauss_sigma * self.gauss_sigma)).exp()
    }
}

/// Classify the tails of `hist` as exponential or Gaussian.
///
/// The histogram is normalized first, so the verdict does not depend on
/// overall scale. Both tails are pooled; bins with `|n| < core_exclusion`
/// are dropped.
pub fn fit_shape(hist: &MomentumHistogram, core_exclusion: u32) -> Result<ShapeFit> {
    let total = hist.total();
    if !(total > 0.0) {
        return Err(Error::ShapeUndetermined("histogram is empty".into()));
    }
    let norm: Vec<(i64, f64)> = hist.iter().map(|(n, p)| (n, p / total)).collect();
    let populated = norm.iter().filter(|(_, p)| *p > SHAPE_FLOOR).count();
    if populated < SHAPE_MIN_BINS {
        return Err(Error::ShapeUndetermined(format!(
            "{populated} bins above {SHAPE_FLOOR:e}, need {SHAPE_MIN_BINS}"
        )));
    }
    let peak = norm.iter().map(|(_, p)| *p).fold(0.0, f64::max);
    let (lo, hi) = (FIT_WINDOW.0 * peak, FIT_WINDOW.1 * peak);
    let pts: Vec<(f64, f64)> = norm
        .iter()
        .filter(|(n, p)| n.unsigned_abs() >= core_exclusion as u64 && *p >= lo && *p <= hi)
        .map(|&(n, p)| (n as f64, p.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::ShapeUndetermined(format!(
            "only {} bins inside the tail window",
            pts.len()
        )));
    }
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let abs: Vec<f64> = pts.iter().map(|p| p.0.abs()).collect();
    let sq: Vec<f64> = pts.iter().map(|p| p.0 * p.0).collect();
    let e = linear_fit(&abs, &y);
    let g = linear_fit(&sq, &y);
    if !(e.slope < 0.0 && g.slope < 0.0) {
        return Err(Error::ShapeUndetermined("tails do not decay".into()));
    }
    let verdict = if g.sse > VERDICT_RATIO * e.sse {
        Verdict::Exponential
    } else if e.sse > VERDICT_RATIO * g.sse {
        Verdict::Gaussian
    } else {
        Verdict::Intermediate
    };
    Ok(ShapeFit {
        exp_decay_length: -1.0 / e.slope,
        gauss_sigma: (-0.5 / g.slope).sqrt(),
        exp_sse: e.sse,
        gauss_sse: g.sse,
        exp_intercept: e.intercept,
        gauss_intercept: g.intercept,
        n_points: pts.len(),
        verdict,
    })
}

/// CSV `p,prob,exp_fit,gauss_fit` over every histogram bin; `prob` is normalized.
pub fn shape_csv(hist: &MomentumHistogram, fit: &ShapeFit) -> String {
    let total = hist.total();
    let mut out = String::from("p,prob,exp_fit,gauss_fit\n");
    for (n, p) in hist.iter() {
        out.push_str(&format!(
            "{n},{:.16e},{:.16e},{:.16e}\n",
            p / total,
            fit.exp_model(n),
            fit.gauss_model(n)
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub a: f64,
    pub atilde: f64,
    /// Normalized by the `a = 0` value.
    pub pi0: f64,
    pub pi0_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    points: Vec<SweepPoint>,
    params: ScaledParams,
    normalization: f64,
}

impl SweepCurve {
    /// Build from raw `(a, pi0, pi0_err)` triples; the first must be at `a = 0`.
    pub fn from_raw(params: ScaledParams, raw: &[(f64, f64, f64)]) -> Result<Self> {
        let Some(&(a0, norm, _)) = raw.first() else {
            return Err(Error::invalid("a_grid", "empty"));
        };
        if a0 != 0.0 {
            return Err(Error::invalid("a_grid", format!("must start at 0, got {a0}")));
        }
        if !(norm > 0.0) {
            return Err(Error::invalid("pi0", format!("normalization {norm} at a = 0 is not positive")));
        }
        if raw.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::invalid("a_grid", "must be strictly increasing"));
        }
        let scale = params.kick_strength * params.kick_strength / (params.hbar_eff * params.hbar_eff);
        let points = raw
            .iter()
            .map(|&(a, pi0, err)| SweepPoint {
                a,
                atilde: a * scale,
                pi0: pi0 / norm,
                pi0_err: err / norm,
            })
            .collect();
        Ok(SweepCurve {
            points,
            params: ScaledParams { amp_ratio: 0.0, ..params },
            normalization: norm,
        })
    }

    pub fn points(&self) -> &[SweepPoint] {
        &self.points
    }

    /// Parameter snapshot with `amp_ratio` zeroed.
    pub fn params(&self) -> &ScaledParams {
        &self.params
    }

    /// Raw Π₀ at `a = 0`.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// CSV `a,atilde,pi0,pi0_err`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("a,atilde,pi0,pi0_err\n");
        for p in &self.points {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e}\n",
                p.a, p.atilde, p.pi0, p.pi0_err
            ));
        }
        out
    }
}

/// Π₀ and its bootstrap error for one amplitude ratio.
pub fn sweep_point(p: &ScaledParams, a: f64, cfg: &EnsembleConfig) -> Result<(f64, f64)> {
    let r = run_ensemble(&p.with_amp_ratio(a), cfg)?;
    Ok((r.pi0, r.pi0_error(DEFAULT_BOOTSTRAP_RESAMPLES, cfg.seed)))
}

/// Every grid point reuses `cfg.seed`, so neighbouring points share initial
/// conditions and their difference carries less noise.
pub fn build_sweep(p: &ScaledParams, a_grid: &[f64], cfg: &EnsembleConfig) -> Result<SweepCurve> {
    if a_grid.first() != Some(&0.0) {
        return Err(Error::invalid("a_grid", "must start at 0"));
    }
    let raw = a_grid
        .iter()
        .map(|&a| sweep_point(p, a, cfg).map(|(pi0, err)| (a, pi0, err)))
        .collect::<Result<Vec<_>>>()?;
    SweepCurve::from_raw(p.clone(), &raw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollapseReport {
    pub curves: Vec<SweepCurve>,
    pub grid_a: Vec<f64>,
    pub grid_atilde: Vec<f64>,
    /// `values_a[c][i]`: curve `c` interpolated at `grid_a[i]`.
    pub values_a: Vec<Vec<f64>>,
    pub values_atilde: Vec<Vec<f64>>,
    pub spread_a: f64,
    pub spread_atilde: f64,
    pub tolerance: f64,
    pub collapsed: bool,
}

impl CollapseReport {
    /// CSV with one block per axis: `axis,x,<curve 0>,…,<curve k>,std`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis,x");
        for i in 0..self.curves.len() {
            out.push_str(&format!(",curve{i}"));
        }
        out.push_str(",std\n");
        for (axis, grid, values) in [
            ("a", &self.grid_a, &self.values_a),
            ("atilde", &self.grid_atilde, &self.values_atilde),
        ] {
            for (i, x) in grid.iter().enumerate() {
                out.push_str(&format!("{axis},{x:.16e}"));
                let column: Vec<f64> = values.iter().map(|v| v[i]).collect();
                for v in &column {
                    out.push_str(&format!(",{v:.16e}"));
                }
                out.push_str(&format!(",{:.16e}\n", population_std(&column)));
            }
        }
        out
    }
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Piecewise-linear interpolation; `x` must lie within the sample range.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&v| v <= x);
    if i == 0 {
        return ys[0];
    }
    if i == xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1) = (xs[i - 1], xs[i]);
    ys[i - 1] + (ys[i] - ys[i - 1]) * (x - x0) / (x1 - x0)
}

/// Curves resampled on a uniform grid over the common support, and the RMS
/// of the across-curve population standard deviation.
fn spread_on(curves: &[SweepCurve], axis: fn(&SweepPoint) -> f64) -> Result<(Vec<f64>, Vec<Vec<f64>>, f64)> {
    let lo = curves
        .iter()
        .map(|c| axis(&c.points[0]))
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = curves
        .iter()
        .map(|c| axis(c.points.last().expect("curves are non-empty")))
        .fold(f64::INFINITY, f64::min);
    if !(hi > lo) {
        return Err(Error::Range(format!("curves share no common support ([{lo}, {hi}])")));
    }
    let m = COLLAPSE_GRID_POINTS;
    let grid: Vec<f64> = (0..m)
        .map(|i| if i + 1 == m { hi } else { lo + (hi - lo) * i as f64 / (m - 1) as f64 })
        .collect();
    let values: Vec<Vec<f64>> = curves
        .iter()
        .map(|c| {
            let xs: Vec<f64> = c.points.iter().map(axis).collect();
            let ys: Vec<f64> = c.points.iter().map(|p| p.pi0).collect();
            grid.iter().map(|&x| interpolate(&xs, &ys, x)).collect()
        })
        .collect();
    let mean_var = (0..m)
        .map(|i| {
            let column: Vec<f64> = values.iter().map(|v| v[i]).collect();
            population_std(&column).powi(2)
        })
        .sum::<f64>()
        / m as f64;
    Ok((grid, values, mean_var.sqrt()))
}

pub fn collapse_test(curves: &[SweepCurve], tolerance: f64) -> Result<CollapseReport> {
    if curves.len() < 2 {
        return Err(Error::invalid("curves", format!("need at least 2, got {}", curves.len())));
    }
    if !(tolerance >= 0.0) {
        return Err(Error::invalid("tolerance", format!("{tolerance} is negative")));
    }
    let (grid_a, values_a, spread_a) = spread_on(curves, |p| p.a)?;
    let (grid_atilde, values_atilde, spread_atilde) = spread_on(curves, |p| p.atilde)?;
    Ok(CollapseReport {
        curves: curves.to_vec(),
        grid_a,
        grid_atilde,
        values_a,
        values_atilde,
        spread_a,
        spread_atilde,
        tolerance,
        collapsed: spread_atilde <= tolerance,
    })
}
