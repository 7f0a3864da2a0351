//! Laboratory to dimensionless parameter conversions.
//!
//! The dimensionless model is fully specified by [`ScaledParams`]. Laboratory
//! inputs ([`LabParams`]) are converted once and then kept only as metadata.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817_646_156_4e-34;
/// Boltzmann constant (J/K), exact SI value.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Atomic mass constant (kg).
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Mass of a cesium-133 atom (kg).
pub const CESIUM_MASS: f64 = 132.905_451_961 * ATOMIC_MASS_UNIT;
/// Cesium D2 line wavelength in vacuum (m).
pub const CESIUM_D2_WAVELENGTH: f64 = 852.347_275_82e-9;
/// Standing-wave wavenumber `k_L = 2π/λ_L` at the cesium D2 line (1/m).
pub const CESIUM_WAVENUMBER: f64 = std::f64::consts::TAU / CESIUM_D2_WAVELENGTH;
/// Initial cloud temperature used by the bundled presets (K).
pub const CLOUD_TEMPERATURE: f64 = 3.0e-6;

/// Localization-time constant fitted to the first four table rows.
pub const LOC_CONST_FREQUENCY_SERIES: f64 = 3.6;
/// Localization-time constant fitted to the last three table rows.
pub const LOC_CONST_AMPLITUDE_SERIES: f64 = 4.2;

/// Laboratory description of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct LabParams {
    /// Primary kick frequency `f₁` (Hz).
    pub f1: f64,
    /// Laser detuning Δ (signed, same frequency convention as `rabi_sq`).
    pub detuning: f64,
    /// Laser power (W). Informational only.
    pub power: f64,
    /// Pulse duration τ (s).
    pub pulse_duration: f64,
    /// Atomic mass (kg).
    pub atom_mass: f64,
    /// Standing-wave wavenumber `k_L` (1/m).
    pub wavenumber: f64,
    /// Squared resonant Rabi frequency `Ω₁²` (1/s²), when known.
    pub rabi_sq: Option<f64>,
    /// Initial cloud temperature (K).
    pub temperature: f64,
}

impl LabParams {
    /// Cesium atoms in a standing wave at the D2 line.
    pub fn cesium(f1: f64, detuning: f64, power: f64, pulse_duration: f64) -> Self {
        LabParams {
            f1,
            detuning,
            power,
            pulse_duration,
            atom_mass: CESIUM_MASS,
            wavenumber: CESIUM_WAVENUMBER,
            rabi_sq: None,
            temperature: CLOUD_TEMPERATURE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("f1", self.f1)?;
        positive("pulse_duration", self.pulse_duration)?;
        positive("atom_mass", self.atom_mass)?;
        positive("wavenumber", self.wavenumber)?;
        if !(self.temperature >= 0.0) {
            return Err(Error::invalid("temperature", "must be non-negative"));
        }
        if self.rabi_sq.is_some() && self.detuning == 0.0 {
            return Err(Error::invalid("detuning", "must be non-zero when rabi_sq is given"));
        }
        Ok(())
    }

    /// Pulse duration in units of the primary period, `τ f₁`.
    pub fn pulse_frac(&self) -> f64 {
        self.pulse_duration * self.f1
    }
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be positive and finite, got {value}")))
    }
}

/// Frequency ratio `r = f₂/f₁` of the secondary series.
///
/// A ratio written as `num/den` is kept exact so that kick times and
/// coincidences are computed with integer arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FreqRatio {
    Exact { num: u64, den: u64 },
    Float(f64),
}

impl FreqRatio {
    pub fn value(&self) -> f64 {
        match *self {
            FreqRatio::Exact { num, den } => num as f64 / den as f64,
            FreqRatio::Float(r) => r,
        }
    }
}

impl fmt::Display for FreqRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FreqRatio::Exact { num, den } => write!(f, "{num}/{den}"),
            FreqRatio::Float(r) => write!(f, "{r:.16e}"),
        }
    }
}

impl FromStr for FreqRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::invalid("freq_ratio", format!("cannot parse `{s}`"));
        if let Some((num, den)) = s.split_once('/') {
            let num: u64 = num.trim().parse().map_err(|_| bad())?;
            let den: u64 = den.trim().parse().map_err(|_| bad())?;
            if num == 0 || den == 0 {
                return Err(Error::invalid("freq_ratio", "numerator and denominator must be positive"));
            }
            Ok(FreqRatio::Exact { num, den })
        } else {
            let r: f64 = s.parse().map_err(|_| bad())?;
            Ok(FreqRatio::Float(r))
        }
    }
}

/// Dimensionless knobs that fully define one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledParams {
    /// Stochasticity parameter `K`.
    pub kick_strength: f64,
    /// Effective Planck constant `ħ̄`.
    pub hbar_eff: f64,
    /// Amplitude ratio `a` of the secondary series.
    pub amp_ratio: f64,
    /// Frequency ratio `r`.
    pub freq_ratio: FreqRatio,
    /// Number of primary kicks `N`.
    pub n_kicks: usize,
    /// Pulse length `τ/T₁`; zero for ideal δ-kicks.
    pub pulse_frac: f64,
}

impl ScaledParams {
    pub fn validate(&self) -> Result<()> {
        positive("kick_strength", self.kick_strength)?;
        positive("hbar_eff", self.hbar_eff)?;
        if !(self.amp_ratio >= 0.0 && self.amp_ratio.is_finite()) {
            return Err(Error::invalid("amp_ratio", "must be non-negative"));
        }
        let r = self.freq_ratio.value();
        positive("freq_ratio", r)?;
        if self.n_kicks == 0 {
            return Err(Error::invalid("n_kicks", "must be at least 1"));
        }
        if !(self.pulse_frac >= 0.0 && self.pulse_frac < 0.5 / r) {
            return Err(Error::invalid(
                "pulse_frac",
                format!("must lie in [0, 1/(2r)) = [0, {}), got {}", 0.5 / r, self.pulse_frac),
            ));
        }
        Ok(())
    }

    pub fn with_amp_ratio(&self, amp_ratio: f64) -> Self {
        ScaledParams {
            amp_ratio,
            ..self.clone()
        }
    }

    /// Shorthand for [`scaled_amplitude`].
    pub fn atilde(&self) -> f64 {
        scaled_amplitude(self)
    }
}

/// Effective Planck constant `ħ̄ = 4 ħ k_L² T₁ / M`.
pub fn hbar_eff(lab: &LabParams) -> Result<f64> {
    positive("f1", lab.f1)?;
    positive("atom_mass", lab.atom_mass)?;
    positive("wavenumber", lab.wavenumber)?;
    Ok(4.0 * HBAR * lab.wavenumber * lab.wavenumber / (lab.atom_mass * lab.f1))
}

/// Magnitude and sign of the dimensionless kick amplitude.
///
/// The dynamics under a `sin θ` potential depend only on `|K|` up to a
/// translation of θ by π, so the sign is kept separately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KickStrength {
    pub magnitude: f64,
    pub negative: bool,
}

/// `K = Ω₁² ħ k_L² τ T₁ / (2 M Δ)`.
pub fn kick_strength(lab: &LabParams) -> Result<KickStrength> {
    let rabi_sq = lab
        .rabi_sq
        .ok_or_else(|| Error::Unsupported("K needs rabi_sq; laser power alone does not fix it".into()))?;
    if lab.detuning == 0.0 || !lab.detuning.is_finite() {
        return Err(Error::invalid("detuning", "must be non-zero"));
    }
    positive("f1", lab.f1)?;
    positive("pulse_duration", lab.pulse_duration)?;
    positive("atom_mass", lab.atom_mass)?;
    let period = 1.0 / lab.f1;
    let k = rabi_sq * HBAR * lab.wavenumber * lab.wavenumber * lab.pulse_duration * period
        / (2.0 * lab.atom_mass * lab.detuning);
    Ok(KickStrength {
        magnitude: k.abs(),
        negative: k < 0.0,
    })
}

/// Scaled amplitude `ã = a K² / ħ̄²`.
pub fn scaled_amplitude(p: &ScaledParams) -> f64 {
    p.amp_ratio * (p.kick_strength / p.hbar_eff).powi(2)
}

/// Localization time `N_L = round(c (K/ħ̄)²)` in primary kicks.
pub fn estimate_loc_time(p: &ScaledParams, c: f64) -> u64 {
    (c * (p.kick_strength / p.hbar_eff).powi(2)).round() as u64
}

/// Thermal momentum spread `sqrt(k_B T M) / (2ħk_L)` in units of `2ħk_L`.
pub fn thermal_sigma(lab: &LabParams) -> f64 {
    (BOLTZMANN * lab.temperature * lab.atom_mass).sqrt() / (2.0 * HBAR * lab.wavenumber)
}

/// One row of the bundled parameter table.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub name: &'static str,
    pub lab: LabParams,
    pub n_kicks: usize,
    pub kick_strength: f64,
    /// `ħ̄` as printed in the table (two decimals).
    pub printed_hbar: f64,
    /// `N_L` as printed in the table.
    pub printed_loc_time: u64,
    /// Localization-time constant for the sub-series the row belongs to.
    pub loc_const: f64,
}

impl TableRow {
    /// Dimensionless parameters for this row at amplitude ratio `a`, with
    /// ideal δ-kicks and `r = 681/1000`.
    pub fn scaled(&self, amp_ratio: f64) -> ScaledParams {
        ScaledParams {
            kick_strength: self.kick_strength,
            hbar_eff: hbar_eff(&self.lab).expect("table rows are valid"),
            amp_ratio,
            freq_ratio: TABLE_FREQ_RATIO,
            n_kicks: self.n_kicks,
            pulse_frac: 0.0,
        }
    }
}

pub const TABLE_FREQ_RATIO: FreqRatio = FreqRatio::Exact { num: 681, den: 1000 };

/// The seven parameter sets, `table1_row1` … `table1_row7`.
pub fn table1() -> Vec<TableRow> {
    // (f1 kHz, Δ GHz, P mW, N, N_L, K, ħ̄, τ µs, c)
    const ROWS: [(f64, f64, f64, usize, u64, f64, f64, f64, f64); 7] = [
        (30.0, -18.8, 95.0, 35, 14, 6.8, 3.46, 0.6, LOC_CONST_FREQUENCY_SERIES),
        (36.0, -15.6, 95.0, 50, 20, 6.8, 2.88, 0.6, LOC_CONST_FREQUENCY_SERIES),
        (54.0, -10.5, 95.0, 113, 45, 6.8, 1.92, 0.6, LOC_CONST_FREQUENCY_SERIES),
        (72.0, -7.9, 95.0, 200, 79, 6.8, 1.44, 0.6, LOC_CONST_FREQUENCY_SERIES),
        (30.0, -21.3, 62.0, 18, 7, 4.5, 3.46, 0.7, LOC_CONST_AMPLITUDE_SERIES),
        (30.0, -21.3, 87.0, 35, 14, 6.3, 3.46, 0.7, LOC_CONST_AMPLITUDE_SERIES),
        (30.0, -21.3, 123.0, 70, 28, 8.9, 3.46, 0.7, LOC_CONST_AMPLITUDE_SERIES),
    ];
    const NAMES: [&str; 7] = [
        "table1_row1",
        "table1_row2",
        "table1_row3",
        "table1_row4",
        "table1_row5",
        "table1_row6",
        "table1_row7",
    ];
    ROWS.iter()
        .zip(NAMES)
        .map(|(&(f1, det, power, n, nl, k, hb, tau, c), name)| TableRow {
            name,
            lab: LabParams::cesium(f1 * 1e3, det * 1e9, power * 1e-3, tau * 1e-6),
            n_kicks: n,
            kick_strength: k,
            printed_hbar: hb,
            printed_loc_time: nl,
            loc_const: c,
        })
        .collect()
}

/// Looks up a bundled row by name.
pub fn preset(name: &str) -> Option<TableRow> {
    table1().into_iter().find(|row| row.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cesium_at(f1: f64) -> LabParams {
        LabParams::cesium(f1, -18.8e9, 0.095, 0.6e-6)
    }

    fn params(k: f64, hbar: f64, a: f64) -> ScaledParams {
        ScaledParams {
            kick_strength: k,
            hbar_eff: hbar,
            amp_ratio: a,
            freq_ratio: TABLE_FREQ_RATIO,
            n_kicks: 35,
            pulse_frac: 0.0,
        }
    }

    #[test]
    fn hbar_from_frequency() {
        assert!((hbar_eff(&cesium_at(30e3)).unwrap() - 3.46).abs() < 0.01);
        assert!((hbar_eff(&cesium_at(72e3)).unwrap() - 1.44).abs() < 0.01);
        let h1 = hbar_eff(&cesium_at(30e3)).unwrap();
        let h2 = hbar_eff(&cesium_at(15e3)).unwrap();
        assert!((h2 / h1 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hbar_rejects_bad_frequency() {
        assert!(matches!(
            hbar_eff(&cesium_at(0.0)),
            Err(Error::InvalidParameter { name: "f1", .. })
        ));
        assert!(hbar_eff(&cesium_at(-1.0)).is_err());
    }

    #[test]
    fn kick_strength_matches_formula() {
        let lab = LabParams {
            f1: 41_234.5,
            detuning: 2.0 * std::f64::consts::PI * 13.7e9,
            power: 0.1,
            pulse_duration: 0.55e-6,
            atom_mass: 1.9e-25,
            wavenumber: 8.1e6,
            rabi_sq: Some(3.3e18),
            temperature: 1e-6,
        };
        // Direct evaluation of Ω² ħ k² τ T / (2 M Δ), written out independently.
        let t1 = 1.0 / 41_234.5;
        let expected = 3.3e18 * 1.054_571_817_646_156_4e-34 * (8.1e6 * 8.1e6) * 0.55e-6 * t1
            / (2.0 * 1.9e-25 * (2.0 * std::f64::consts::PI * 13.7e9));
        let got = kick_strength(&lab).unwrap();
        assert!(((got.magnitude - expected) / expected).abs() < 1e-12);
        assert!(!got.negative);

        let doubled = LabParams {
            rabi_sq: Some(6.6e18),
            ..lab.clone()
        };
        let k2 = kick_strength(&doubled).unwrap().magnitude;
        assert!((k2 / got.magnitude - 2.0).abs() < 1e-14);

        let wider = LabParams {
            detuning: 2.0 * lab.detuning,
            ..lab.clone()
        };
        let k3 = kick_strength(&wider).unwrap().magnitude;
        assert!((k3 / got.magnitude - 0.5).abs() < 1e-14);

        let red = LabParams {
            detuning: -lab.detuning,
            ..lab
        };
        let k4 = kick_strength(&red).unwrap();
        assert!(k4.negative);
        assert_eq!(k4.magnitude, got.magnitude);
    }

    #[test]
    fn kick_strength_errors() {
        let lab = cesium_at(30e3);
        assert!(matches!(kick_strength(&lab), Err(Error::Unsupported(_))));
        let zero = LabParams {
            rabi_sq: Some(1e18),
            detuning: 0.0,
            ..lab
        };
        assert!(matches!(kick_strength(&zero), Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn kick_strength_homogeneous_in_period() {
        let lab = LabParams {
            rabi_sq: Some(2.0e18),
            ..cesium_at(30e3)
        };
        let slow = LabParams { f1: 15e3, ..lab.clone() };
        let k1 = kick_strength(&lab).unwrap().magnitude;
        let k2 = kick_strength(&slow).unwrap().magnitude;
        assert!((k2 / k1 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn scaled_amplitude_anchors() {
        assert!((scaled_amplitude(&params(6.8, 3.46, 0.25)) - 0.97).abs() < 0.01);
        assert!((scaled_amplitude(&params(6.8, 1.44, 0.25)) - 5.6).abs() < 0.05);
        assert_eq!(scaled_amplitude(&params(6.8, 1.44, 0.0)), 0.0);
    }

    #[test]
    fn scaled_amplitude_invariant_under_common_scaling() {
        let p = params(6.8, 2.88, 0.2);
        for lambda in [0.1, 0.5, 3.0, 17.0] {
            let q = params(6.8 * lambda, 2.88 * lambda, 0.2);
            assert!((scaled_amplitude(&q) - scaled_amplitude(&p)).abs() < 1e-12);
        }
    }

    #[test]
    fn loc_time_examples() {
        assert!((estimate_loc_time(&params(6.8, 2.88, 0.0), 3.6) as i64 - 20).abs() <= 1);
        assert!((estimate_loc_time(&params(6.8, 1.44, 0.0), 3.6) as i64 - 79).abs() <= 2);
        assert!((estimate_loc_time(&params(6.3, 3.46, 0.0), 4.2) as i64 - 14).abs() <= 1);
    }

    #[test]
    fn thermal_width() {
        let lab = cesium_at(30e3);
        let sigma = thermal_sigma(&lab);
        // sqrt(k_B T / M) over twice the recoil velocity ħk_L/M.
        let recoil = HBAR * CESIUM_WAVENUMBER / CESIUM_MASS;
        assert!((recoil - 3.52e-3).abs() < 0.01e-3);
        let oracle = (BOLTZMANN * 3e-6 / CESIUM_MASS).sqrt() / (2.0 * recoil);
        assert!((sigma - oracle).abs() < 1e-12);
        assert!((sigma - 1.95).abs() < 0.01);

        let cold = LabParams {
            temperature: 0.0,
            ..lab.clone()
        };
        assert_eq!(thermal_sigma(&cold), 0.0);
        let hot = LabParams {
            temperature: 12e-6,
            ..lab
        };
        assert!((thermal_sigma(&hot) / sigma - 2.0).abs() < 1e-14);
    }

    #[test]
    fn table_round_trip() {
        let rows = table1();
        assert_eq!(rows.len(), 7);
        for row in &rows {
            row.lab.validate().unwrap();
            let p = row.scaled(0.0);
            p.validate().unwrap();
            assert!((p.hbar_eff - row.printed_hbar).abs() <= 0.02, "{}", row.name);
            let nl = estimate_loc_time(&p, row.loc_const) as i64;
            assert!((nl - row.printed_loc_time as i64).abs() <= 1, "{}: {nl}", row.name);
            // N/N_L is held near 2.5 across the table.
            let ratio = row.n_kicks as f64 / row.printed_loc_time as f64;
            assert!((ratio - 2.5).abs() < 0.15, "{}", row.name);
        }
        assert_eq!(preset("table1_row4").unwrap().n_kicks, 200);
        assert!(preset("table1_row8").is_none());
    }

    #[test]
    fn scaled_params_validation() {
        let mut p = params(6.8, 3.46, 0.1);
        p.validate().unwrap();
        p.n_kicks = 0;
        assert!(p.validate().is_err());
        let mut p = params(6.8, 3.46, 0.1);
        p.pulse_frac = 0.8; // 1/(2r) ≈ 0.734
        assert!(p.validate().is_err());
        let mut p = params(-1.0, 3.46, 0.1);
        assert!(p.validate().is_err());
        p.kick_strength = 1.0;
        p.amp_ratio = -0.1;
        assert!(p.validate().is_err());
    }

    #[test]
    fn freq_ratio_parsing() {
        assert_eq!("681/1000".parse::<FreqRatio>().unwrap(), FreqRatio::Exact { num: 681, den: 1000 });
        assert_eq!("0.5".parse::<FreqRatio>().unwrap(), FreqRatio::Float(0.5));
        assert!("0/3".parse::<FreqRatio>().is_err());
        assert!("x".parse::<FreqRatio>().is_err());
        let r: FreqRatio = FreqRatio::Float(0.681).to_string().parse().unwrap();
        assert_eq!(r, FreqRatio::Float(0.681));
    }
}
