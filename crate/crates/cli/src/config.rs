//! Run configuration files.
//!
//! The grammar is line oriented:
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Keys must belong to
//! the section they appear in; unknown sections or keys are errors, as is a
//! key repeated within one file. Sources are layered (preset, then file),
//! later sources replacing earlier ones key by key.
//!
//! A resolved [`RunConfig`] is written back in canonical form, always with a
//! `[scaled]` section; laboratory inputs survive only as `[provenance]`
//! entries. Output files embed that canonical text between `# begin config`
//! and `# end config`, and [`load_source`] accepts such a file in place of a
//! config.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use qpkr::analysis::{DEFAULT_COLLAPSE_TOLERANCE, DEFAULT_CORE_EXCLUSION};
use qpkr::ensemble::{BeamModel, EnsembleConfig};
use qpkr::units::{
    hbar_eff, kick_strength, preset, table1, thermal_sigma, FreqRatio, LabParams, ScaledParams, TableRow,
    CESIUM_MASS, CESIUM_WAVENUMBER, CLOUD_TEMPERATURE, TABLE_FREQ_RATIO,
};

use crate::CliError;

pub const BEGIN_MARKER: &str = "# begin config";
pub const END_MARKER: &str = "# end config";

/// Grid used by the bundled presets: 0 to 0.25 in steps of 0.025.
pub const PRESET_A_GRID: [f64; 11] = [0.0, 0.025, 0.05, 0.075, 0.1, 0.125, 0.15, 0.175, 0.2, 0.225, 0.25];

const SECTIONS: [(&str, &[&str]); 6] = [
    ("run", &["engine", "seed"]),
    (
        "scaled",
        &["kick_strength", "hbar_eff", "amp_ratio", "freq_ratio", "n_kicks", "pulse_frac"],
    ),
    (
        "lab",
        &[
            "f1",
            "detuning",
            "power",
            "pulse_duration",
            "atom_mass",
            "wavenumber",
            "rabi_sq",
            "temperature",
            "kick_strength",
            "amp_ratio",
            "freq_ratio",
            "n_kicks",
            "finite_pulses",
        ],
    ),
    (
        "ensemble",
        &[
            "n_traj",
            "init_sigma",
            "detect_halfwidth",
            "beam",
            "cloud_to_waist",
            "se_prob",
            "n_max",
            "substeps",
            "merge_tolerance",
        ],
    ),
    ("analysis", &["a_grid", "tolerance", "core_exclusion"]),
    // Free-form.
    ("provenance", &[]),
];

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    origin: String,
}

/// Parsed but unresolved key/value pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

impl RawConfig {
    /// Parses `text`; `name` is used in diagnostics.
    pub fn parse(text: &str, name: &str) -> Result<Self, CliError> {
        let mut raw = RawConfig::default();
        let mut current: Option<String> = None;
        for (i, line) in text.lines().enumerate() {
            let origin = format!("{name}:{}", i + 1);
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let section = rest
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::Usage(format!("{origin}: malformed section header `{line}`")))?
                    .trim();
                if !SECTIONS.iter().any(|(s, _)| *s == section) {
                    return Err(CliError::Usage(format!("{origin}: unknown section [{section}]")));
                }
                raw.sections.entry(section.to_string()).or_default();
                current = Some(section.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{origin}: expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let section = current
                .as_deref()
                .ok_or_else(|| CliError::Usage(format!("{origin}: key `{key}` appears before any section")))?;
            let allowed = SECTIONS.iter().find(|(s, _)| *s == section).map(|(_, k)| *k).unwrap_or(&[]);
            let known = if section == "provenance" {
                !key.is_empty() && key.chars().all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c))
            } else {
                allowed.contains(&key)
            };
            if !known {
                return Err(CliError::Usage(format!("{origin}: unknown key `{key}` in [{section}]")));
            }
            let entries = raw.sections.get_mut(section).expect("section was inserted");
            if let Some(prev) = entries.get(key) {
                return Err(CliError::Usage(format!(
                    "{origin}: duplicate key `{key}` in [{section}] (first at {})",
                    prev.origin
                )));
            }
            entries.insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    origin,
                },
            );
        }
        Ok(raw)
    }

    /// Layers `other` on top of `self`, key by key.
    pub fn overlay(mut self, other: RawConfig) -> Self {
        for (section, entries) in other.sections {
            self.sections.entry(section).or_default().extend(entries);
        }
        self
    }

    fn has(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section)?.get(key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Quantum,
    Classical,
}

impl Engine {
    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Quantum => "quantum",
            Engine::Classical => "classical",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "quantum" => Ok(Engine::Quantum),
            "classical" => Ok(Engine::Classical),
            other => Err(format!("unknown engine `{other}` (expected quantum or classical)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub a_grid: Option<Vec<f64>>,
    pub tolerance: f64,
    pub core_exclusion: u32,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            a_grid: None,
            tolerance: DEFAULT_COLLAPSE_TOLERANCE,
            core_exclusion: DEFAULT_CORE_EXCLUSION,
        }
    }
}

/// Fully resolved configuration. The seed lives in `ensemble.seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub engine: Engine,
    pub params: ScaledParams,
    pub ensemble: EnsembleConfig,
    pub analysis: AnalysisConfig,
    pub provenance: BTreeMap<String, String>,
}

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

impl RunConfig {
    /// Canonical text; parsing it back yields an identical `RunConfig`.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let e = &self.ensemble;
        let mut s = String::new();
        s += &format!("[run]\nengine = {}\nseed = {}\n", self.engine, e.seed);
        s += &format!(
            "\n[scaled]\nkick_strength = {}\nhbar_eff = {}\namp_ratio = {}\nfreq_ratio = {}\nn_kicks = {}\npulse_frac = {}\n",
            f(p.kick_strength),
            f(p.hbar_eff),
            f(p.amp_ratio),
            p.freq_ratio,
            p.n_kicks,
            f(p.pulse_frac)
        );
        s += &format!(
            "\n[ensemble]\nn_traj = {}\ninit_sigma = {}\ndetect_halfwidth = {}\n",
            e.n_traj,
            f(e.init_sigma),
            f(e.detect_halfwidth)
        );
        match e.beam {
            BeamModel::Off => s += "beam = off\n",
            BeamModel::Gaussian { cloud_to_waist } => {
                s += &format!("beam = gaussian\ncloud_to_waist = {}\n", f(cloud_to_waist))
            }
        }
        s += &format!(
            "se_prob = {}\nn_max = {}\nsubsteps = {}\nmerge_tolerance = {}\n",
            f(e.se_prob),
            e.n_max,
            e.substeps,
            f(e.merge_tolerance)
        );
        s += "\n[analysis]\n";
        if let Some(grid) = &self.analysis.a_grid {
            let items: Vec<String> = grid.iter().map(|&a| f(a)).collect();
            s += &format!("a_grid = {}\n", items.join(", "));
        }
        s += &format!(
            "tolerance = {}\ncore_exclusion = {}\n",
            f(self.analysis.tolerance),
            self.analysis.core_exclusion
        );
        if !self.provenance.is_empty() {
            s += "\n[provenance]\n";
            for (k, v) in &self.provenance {
                s += &format!("{k} = {v}\n");
            }
        }
        s
    }

    /// Canonical text restricted to what determines per-`a` sweep results.
    pub fn result_key(&self) -> String {
        RunConfig {
            params: self.params.with_amp_ratio(0.0),
            analysis: AnalysisConfig::default(),
            provenance: BTreeMap::new(),
            ..self.clone()
        }
        .to_text()
    }
}

fn bad(e: &Entry, section: &str, key: &str, what: &str) -> CliError {
    CliError::Usage(format!(
        "{}: [{section}] {key}: cannot parse `{}` as {what}",
        e.origin, e.value
    ))
}

struct Reader<'a> {
    raw: &'a RawConfig,
    section: &'static str,
}

impl Reader<'_> {
    fn entry(&self, key: &str) -> Option<&Entry> {
        self.raw.get(self.section, key)
    }

    fn require<T>(&self, key: &str, v: Option<T>) -> Result<T, CliError> {
        v.ok_or_else(|| CliError::Usage(format!("[{}] is missing required key `{key}`", self.section)))
    }

    fn f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.entry(key)
            .map(|e| {
                e.value
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| bad(e, self.section, key, "a finite number"))
            })
            .transpose()
    }

    fn int<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.entry(key)
            .map(|e| e.value.parse::<T>().map_err(|_| bad(e, self.section, key, "a non-negative integer")))
            .transpose()
    }

    fn bool(&self, key: &str) -> Result<Option<bool>, CliError> {
        self.entry(key)
            .map(|e| match e.value.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(bad(e, self.section, key, "true or false")),
            })
            .transpose()
    }

    fn ratio(&self, key: &str) -> Result<Option<FreqRatio>, CliError> {
        self.entry(key)
            .map(|e| {
                e.value
                    .parse::<FreqRatio>()
                    .map_err(|_| bad(e, self.section, key, "a ratio (`num/den` or a number)"))
            })
            .transpose()
    }

    fn string(&self, key: &str) -> Option<&str> {
        self.entry(key).map(|e| e.value.as_str())
    }
}

/// Parses a comma-separated list of amplitude ratios.
pub fn parse_a_grid(text: &str) -> Result<Vec<f64>, String> {
    let grid = text
        .split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite() && *x >= 0.0)
                .ok_or_else(|| format!("bad a-grid entry `{s}`"))
        })
        .collect::<Result<Vec<f64>, String>>()?;
    if grid.is_empty() {
        return Err("empty a-grid".into());
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err("a-grid must be strictly increasing".into());
    }
    Ok(grid)
}

fn core_error(e: qpkr::Error) -> CliError {
    CliError::Usage(e.to_string())
}

/// Resolves layered raw entries into a validated [`RunConfig`].
pub fn resolve(raw: &RawConfig) -> Result<RunConfig, CliError> {
    let run = Reader { raw, section: "run" };
    let engine = match run.entry("engine") {
        Some(e) => e
            .value
            .parse::<Engine>()
            .map_err(|msg| CliError::Usage(format!("{}: [run] engine: {msg}", e.origin)))?,
        None => Engine::Quantum,
    };
    let seed = run.int::<u64>("seed")?.unwrap_or(0);
    let mut provenance: BTreeMap<String, String> = raw
        .sections
        .get("provenance")
        .map(|m| m.iter().map(|(k, e)| (k.clone(), e.value.clone())).collect())
        .unwrap_or_default();

    let (params, lab) = match (raw.has("scaled"), raw.has("lab")) {
        (true, true) => {
            return Err(CliError::Usage(
                "config has both [scaled] and [lab]; give exactly one".into(),
            ))
        }
        (false, false) => return Err(CliError::Usage("config needs a [scaled] or a [lab] section".into())),
        (true, false) => {
            let r = Reader { raw, section: "scaled" };
            let params = ScaledParams {
                kick_strength: r.require("kick_strength", r.f64("kick_strength")?)?,
                hbar_eff: r.require("hbar_eff", r.f64("hbar_eff")?)?,
                amp_ratio: r.f64("amp_ratio")?.unwrap_or(0.0),
                freq_ratio: r.ratio("freq_ratio")?.unwrap_or(TABLE_FREQ_RATIO),
                n_kicks: r.require("n_kicks", r.int("n_kicks")?)?,
                pulse_frac: r.f64("pulse_frac")?.unwrap_or(0.0),
            };
            (params, None)
        }
        (false, true) => {
            let r = Reader { raw, section: "lab" };
            let lab = LabParams {
                f1: r.require("f1", r.f64("f1")?)?,
                detuning: r.f64("detuning")?.unwrap_or(0.0),
                power: r.f64("power")?.unwrap_or(0.0),
                pulse_duration: r.require("pulse_duration", r.f64("pulse_duration")?)?,
                atom_mass: r.f64("atom_mass")?.unwrap_or(CESIUM_MASS),
                wavenumber: r.f64("wavenumber")?.unwrap_or(CESIUM_WAVENUMBER),
                rabi_sq: r.f64("rabi_sq")?,
                temperature: r.f64("temperature")?.unwrap_or(CLOUD_TEMPERATURE),
            };
            lab.validate().map_err(core_error)?;
            let k = match (r.f64("kick_strength")?, lab.rabi_sq) {
                (Some(_), Some(_)) => {
                    return Err(CliError::Usage(
                        "[lab] give either kick_strength or rabi_sq, not both".into(),
                    ))
                }
                (Some(k), None) => k,
                (None, _) => {
                    let k = kick_strength(&lab).map_err(core_error)?;
                    if k.negative {
                        provenance.insert("lab.kick_sign".into(), "negative".into());
                    }
                    k.magnitude
                }
            };
            let finite = r.bool("finite_pulses")?.unwrap_or(false);
            let params = ScaledParams {
                kick_strength: k,
                hbar_eff: hbar_eff(&lab).map_err(core_error)?,
                amp_ratio: r.f64("amp_ratio")?.unwrap_or(0.0),
                freq_ratio: r.ratio("freq_ratio")?.unwrap_or(TABLE_FREQ_RATIO),
                n_kicks: r.require("n_kicks", r.int("n_kicks")?)?,
                pulse_frac: if finite { lab.pulse_frac() } else { 0.0 },
            };
            for (key, value) in [
                ("f1", lab.f1),
                ("detuning", lab.detuning),
                ("power", lab.power),
                ("pulse_duration", lab.pulse_duration),
                ("atom_mass", lab.atom_mass),
                ("wavenumber", lab.wavenumber),
                ("temperature", lab.temperature),
            ] {
                provenance.insert(format!("lab.{key}"), f(value));
            }
            if let Some(rs) = lab.rabi_sq {
                provenance.insert("lab.rabi_sq".into(), f(rs));
            }
            (params, Some(lab))
        }
    };
    params.validate().map_err(core_error)?;

    let r = Reader { raw, section: "ensemble" };
    let defaults = EnsembleConfig::default();
    let beam = match (r.string("beam").unwrap_or("off"), r.f64("cloud_to_waist")?) {
        ("off", None) => BeamModel::Off,
        ("off", Some(_)) => {
            return Err(CliError::Usage("[ensemble] cloud_to_waist needs beam = gaussian".into()))
        }
        ("gaussian", Some(rho)) => BeamModel::Gaussian { cloud_to_waist: rho },
        ("gaussian", None) => {
            return Err(CliError::Usage("[ensemble] beam = gaussian needs cloud_to_waist".into()))
        }
        (other, _) => {
            let e = r.entry("beam").expect("beam is set");
            return Err(CliError::Usage(format!(
                "{}: [ensemble] beam: unknown model `{other}` (expected off or gaussian)",
                e.origin
            )));
        }
    };
    let init_sigma = match r.f64("init_sigma")? {
        Some(s) => s,
        None => lab.as_ref().map(thermal_sigma).unwrap_or(defaults.init_sigma),
    };
    let ensemble = EnsembleConfig {
        n_traj: r.int("n_traj")?.unwrap_or(defaults.n_traj),
        seed,
        init_sigma,
        detect_halfwidth: r.f64("detect_halfwidth")?.unwrap_or(defaults.detect_halfwidth),
        beam,
        se_prob: r.f64("se_prob")?.unwrap_or(defaults.se_prob),
        n_max: r.int("n_max")?.unwrap_or(defaults.n_max),
        substeps: r.int("substeps")?.unwrap_or(defaults.substeps),
        merge_tolerance: r.f64("merge_tolerance")?.unwrap_or(defaults.merge_tolerance),
    };
    ensemble.validate().map_err(core_error)?;

    let r = Reader { raw, section: "analysis" };
    let a_grid = match r.entry("a_grid") {
        Some(e) => Some(parse_a_grid(&e.value).map_err(|m| CliError::Usage(format!("{}: [analysis] a_grid: {m}", e.origin)))?),
        None => None,
    };
    let analysis = AnalysisConfig {
        a_grid,
        tolerance: r.f64("tolerance")?.unwrap_or(DEFAULT_COLLAPSE_TOLERANCE),
        core_exclusion: r.int("core_exclusion")?.unwrap_or(DEFAULT_CORE_EXCLUSION),
    };
    if !(analysis.tolerance >= 0.0) {
        return Err(CliError::Usage("[analysis] tolerance must be non-negative".into()));
    }

    Ok(RunConfig {
        engine,
        params,
        ensemble,
        analysis,
        provenance,
    })
}

/// Compiled-in config text for a bundled preset.
pub fn preset_text(name: &str) -> Option<String> {
    preset(name).map(|row| row_text(&row))
}

pub fn preset_names() -> Vec<&'static str> {
    table1().iter().map(|r| r.name).collect()
}

fn row_text(row: &TableRow) -> String {
    let l = &row.lab;
    let grid: Vec<String> = PRESET_A_GRID.iter().map(|a| a.to_string()).collect();
    format!(
        "[lab]\nf1 = {}\ndetuning = {}\npower = {}\npulse_duration = {}\ntemperature = {}\n\
         kick_strength = {}\nn_kicks = {}\namp_ratio = 0\nfreq_ratio = {}\nfinite_pulses = false\n\
         \n[analysis]\na_grid = {}\n\n[provenance]\npreset = {}\n",
        l.f1,
        l.detuning,
        l.power,
        l.pulse_duration,
        l.temperature,
        row.kick_strength,
        row.n_kicks,
        TABLE_FREQ_RATIO,
        grid.join(", "),
        row.name
    )
}

/// Config text from a config file, an output file with an embedded config,
/// or a `summary.json`.
pub fn load_source(text: &str, name: &str) -> Result<String, CliError> {
    if text.trim_start().starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| CliError::Usage(format!("{name}: not valid JSON: {e}")))?;
        return v
            .get("config")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| CliError::Usage(format!("{name}: JSON has no `config` string")));
    }
    match embedded_config(text) {
        Some(found) => found.map_err(|m| CliError::Usage(format!("{name}: {m}"))),
        None => Ok(text.to_string()),
    }
}

/// The block between the begin/end markers, with comment prefixes removed.
pub fn embedded_config(text: &str) -> Option<Result<String, String>> {
    let mut lines = text.lines();
    lines.by_ref().find(|l| *l == BEGIN_MARKER)?;
    let mut out = String::new();
    for line in lines {
        if line == END_MARKER {
            return Some(Ok(out));
        }
        let Some(body) = line.strip_prefix('#') else {
            return Some(Err("embedded config is not terminated".into()));
        };
        out.push_str(body.strip_prefix(' ').unwrap_or(body));
        out.push('\n');
    }
    Some(Err("embedded config is not terminated".into()))
}

/// Canonical text as `#`-prefixed lines between the markers.
pub fn embed(text: &str) -> String {
    let mut out = format!("{BEGIN_MARKER}\n");
    for line in text.lines() {
        if line.is_empty() {
            out.push_str("#\n");
        } else {
            out.push_str(&format!("# {line}\n"));
        }
    }
    out.push_str(END_MARKER);
    out.push('\n');
    out
}
