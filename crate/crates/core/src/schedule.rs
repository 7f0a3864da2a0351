//! Merged kick timeline for the two kick series.
//!
//! Primary kicks of strength `K` fall at `t = 0, 1, …, N−1`; secondary kicks
//! of strength `aK` at `t = n/r` for integers `0 ≤ n < rN`. Kicks closer than
//! the merge tolerance share one event whose amplitude is the sum, which is
//! exact because both series act through the same `sin θ` potential.

use std::cmp::Ordering;
use std::fmt;

use crate::units::{FreqRatio, ScaledParams};
use crate::{Error, Result};

pub const DEFAULT_MERGE_TOLERANCE: f64 = 1e-9;
pub const MAX_MERGE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeriesTag {
    Primary,
    Secondary,
    Merged,
}

impl SeriesTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SeriesTag::Primary => "primary",
            SeriesTag::Secondary => "secondary",
            SeriesTag::Merged => "merged",
        }
    }

    /// Whether the event contains a kick of the primary series.
    pub fn has_primary(&self) -> bool {
        matches!(self, SeriesTag::Primary | SeriesTag::Merged)
    }
}

impl fmt::Display for SeriesTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KickEvent {
    /// Time in units of the primary period.
    pub time: f64,
    pub amplitude: f64,
    pub tag: SeriesTag,
}

/// Immutable, time-ordered list of kick events.
#[derive(Debug, Clone, PartialEq)]
pub struct KickTimeline {
    events: Vec<KickEvent>,
    params: ScaledParams,
    merge_tolerance: f64,
}

impl KickTimeline {
    /// Wraps an explicit event list, checking the ordering invariants.
    pub fn from_events(events: Vec<KickEvent>, params: ScaledParams, merge_tolerance: f64) -> Result<Self> {
        for e in &events {
            if !(e.time >= 0.0) || !(e.amplitude >= 0.0) {
                return Err(Error::Configuration(format!(
                    "kick event at t = {} with amplitude {} is invalid",
                    e.time, e.amplitude
                )));
            }
        }
        for w in events.windows(2) {
            if !(w[1].time - w[0].time > merge_tolerance) {
                return Err(Error::Configuration(format!(
                    "kick events at t = {} and t = {} are not separated by more than {merge_tolerance}",
                    w[0].time, w[1].time
                )));
            }
        }
        Ok(KickTimeline {
            events,
            params,
            merge_tolerance,
        })
    }

    pub fn events(&self) -> &[KickEvent] {
        &self.events
    }

    pub fn params(&self) -> &ScaledParams {
        &self.params
    }

    pub fn merge_tolerance(&self) -> f64 {
        self.merge_tolerance
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Sum of all event amplitudes.
    pub fn total_amplitude(&self) -> f64 {
        self.events.iter().map(|e| e.amplitude).sum()
    }

    /// Gaps between consecutive events; the first entry is the time of the
    /// first event.
    pub fn gaps(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.events
            .iter()
            .map(|e| {
                let gap = e.time - prev;
                prev = e.time;
                gap
            })
            .collect()
    }

    /// CSV dump with `time,amplitude,tag` columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,amplitude,tag\n");
        for e in &self.events {
            out.push_str(&format!("{:.16e},{:.16e},{}\n", e.time, e.amplitude, e.tag));
        }
        out
    }
}

/// Number of secondary kicks, the count of integers `0 ≤ n < rN`.
pub fn secondary_count(r: FreqRatio, n_kicks: usize) -> usize {
    match r {
        FreqRatio::Exact { num, den } => {
            let prod = num as u128 * n_kicks as u128;
            prod.div_ceil(den as u128) as usize
        }
        FreqRatio::Float(r) => (r * n_kicks as f64).ceil().max(0.0) as usize,
    }
}

/// Builds the merged timeline of both series.
pub fn build_timeline(p: &ScaledParams, merge_tolerance: f64) -> Result<KickTimeline> {
    p.validate()?;
    if !(0.0..=MAX_MERGE_TOLERANCE).contains(&merge_tolerance) {
        return Err(Error::invalid(
            "merge_tolerance",
            format!("must lie in [0, {MAX_MERGE_TOLERANCE}]"),
        ));
    }
    let k = p.kick_strength;
    let ak = p.amp_ratio * k;
    let n_secondary = if p.amp_ratio > 0.0 {
        secondary_count(p.freq_ratio, p.n_kicks)
    } else {
        0
    };

    let mut events = Vec::with_capacity(p.n_kicks + n_secondary);
    let (mut m, mut n) = (0usize, 0usize);
    while m < p.n_kicks || n < n_secondary {
        let order = if n >= n_secondary {
            Ordering::Less
        } else if m >= p.n_kicks {
            Ordering::Greater
        } else {
            compare(m, n, p.freq_ratio, merge_tolerance)
        };
        let event = match order {
            Ordering::Less => {
                m += 1;
                KickEvent {
                    time: (m - 1) as f64,
                    amplitude: k,
                    tag: SeriesTag::Primary,
                }
            }
            Ordering::Greater => {
                n += 1;
                KickEvent {
                    time: secondary_time(n - 1, p.freq_ratio),
                    amplitude: ak,
                    tag: SeriesTag::Secondary,
                }
            }
            Ordering::Equal => {
                m += 1;
                n += 1;
                KickEvent {
                    time: (m - 1) as f64,
                    amplitude: k + ak,
                    tag: SeriesTag::Merged,
                }
            }
        };
        events.push(event);
    }

    if p.pulse_frac > 0.0 {
        for (i, w) in events.windows(2).enumerate() {
            let gap = w[1].time - w[0].time;
            if p.pulse_frac > gap {
                return Err(Error::Configuration(format!(
                    "finite pulses overlap: event {i} ({} at t = {}) and event {} ({} at t = {}) are {gap} apart, pulse length {}",
                    w[0].tag,
                    w[0].time,
                    i + 1,
                    w[1].tag,
                    w[1].time,
                    p.pulse_frac
                )));
            }
        }
    }

    Ok(KickTimeline {
        events,
        params: p.clone(),
        merge_tolerance,
    })
}

fn secondary_time(n: usize, r: FreqRatio) -> f64 {
    match r {
        FreqRatio::Exact { num, den } => (n as u128 * den as u128) as f64 / num as f64,
        FreqRatio::Float(r) => n as f64 / r,
    }
}

/// Orders primary kick `m` against secondary kick `n`; `Equal` means merge.
fn compare(m: usize, n: usize, r: FreqRatio, tol: f64) -> Ordering {
    if let FreqRatio::Exact { num, den } = r {
        let lhs = m as u128 * num as u128;
        let rhs = n as u128 * den as u128;
        if lhs == rhs {
            return Ordering::Equal;
        }
    }
    let tp = m as f64;
    let ts = secondary_time(n, r);
    if (tp - ts).abs() <= tol {
        Ordering::Equal
    } else if tp < ts {
        Ordering::Less
    } else {
        Ordering::Greater
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::TABLE_FREQ_RATIO;

    fn params(n: usize, r: FreqRatio, a: f64) -> ScaledParams {
        ScaledParams {
            kick_strength: 6.8,
            hbar_eff: 3.46,
            amp_ratio: a,
            freq_ratio: r,
            n_kicks: n,
            pulse_frac: 0.0,
        }
    }

    #[test]
    fn three_kick_example() {
        let tl = build_timeline(&params(3, TABLE_FREQ_RATIO, 0.1), DEFAULT_MERGE_TOLERANCE).unwrap();
        let ev = tl.events();
        assert_eq!(ev.len(), 5);
        // Enumerated directly: primary 0,1,2 and secondary 0, 1/0.681, 2/0.681.
        let times = [0.0, 1.0, 1000.0 / 681.0, 2.0, 2000.0 / 681.0];
        let amps = [6.8 + 0.68, 6.8, 0.68, 6.8, 0.68];
        let tags = [
            SeriesTag::Merged,
            SeriesTag::Primary,
            SeriesTag::Secondary,
            SeriesTag::Primary,
            SeriesTag::Secondary,
        ];
        for i in 0..5 {
            assert!((ev[i].time - times[i]).abs() < 1e-15);
            assert!((ev[i].amplitude - amps[i]).abs() < 1e-12);
            assert_eq!(ev[i].tag, tags[i]);
        }
        assert!((ev[2].time - 1.4684).abs() < 1e-4);
        assert!((ev[4].time - 2.9369).abs() < 1e-4);
    }

    #[test]
    fn unperturbed_rotor() {
        let tl = build_timeline(&params(3, TABLE_FREQ_RATIO, 0.0), DEFAULT_MERGE_TOLERANCE).unwrap();
        let times: Vec<f64> = tl.events().iter().map(|e| e.time).collect();
        assert_eq!(times, vec![0.0, 1.0, 2.0]);
        assert!(tl.events().iter().all(|e| e.amplitude == 6.8 && e.tag == SeriesTag::Primary));
    }

    #[test]
    fn no_spurious_coincidences_over_long_horizon() {
        // Brute-force scan: n/r is an integer only when 681 divides 1000 n,
        // i.e. n a multiple of 681, which never happens for n < 0.681 * 200.
        let coincident: Vec<usize> = (0..137).filter(|n| (n * 1000) % 681 == 0).collect();
        assert_eq!(coincident, vec![0]);
        let tl = build_timeline(&params(200, TABLE_FREQ_RATIO, 0.1), DEFAULT_MERGE_TOLERANCE).unwrap();
        let merged: Vec<&KickEvent> = tl.events().iter().filter(|e| e.tag == SeriesTag::Merged).collect();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].time, 0.0);
        assert_eq!(tl.len(), 200 + 137 - 1);
    }

    #[test]
    fn counts_and_total_amplitude() {
        for (n, a) in [(35, 0.25), (200, 0.1), (18, 0.05), (1, 0.3)] {
            let p = params(n, TABLE_FREQ_RATIO, a);
            let tl = build_timeline(&p, DEFAULT_MERGE_TOLERANCE).unwrap();
            let n_sec = (0.681 * n as f64).ceil() as usize;
            assert_eq!(secondary_count(TABLE_FREQ_RATIO, n), n_sec);
            let primary = tl.events().iter().filter(|e| e.tag.has_primary()).count();
            let secondary = tl.events().iter().filter(|e| e.tag != SeriesTag::Primary).count();
            assert_eq!(primary, n);
            assert_eq!(secondary, n_sec);
            let expected = 6.8 * n as f64 + a * 6.8 * n_sec as f64;
            assert!((tl.total_amplitude() - expected).abs() < 1e-9 * expected);
            for w in tl.events().windows(2) {
                assert!(w[1].time - w[0].time > tl.merge_tolerance());
            }
        }
    }

    #[test]
    fn commensurate_degeneracy() {
        for r in [FreqRatio::Exact { num: 1, den: 1 }, FreqRatio::Float(1.0)] {
            let tl = build_timeline(&params(7, r, 0.3), DEFAULT_MERGE_TOLERANCE).unwrap();
            assert_eq!(tl.len(), 7);
            for e in tl.events() {
                assert!((e.amplitude - 6.8 * 1.3).abs() < 1e-12);
                assert_eq!(e.tag, SeriesTag::Merged);
            }
        }
    }

    #[test]
    fn float_ratio_matches_exact_ratio() {
        let exact = build_timeline(&params(50, TABLE_FREQ_RATIO, 0.2), DEFAULT_MERGE_TOLERANCE).unwrap();
        let float = build_timeline(&params(50, FreqRatio::Float(0.681), 0.2), DEFAULT_MERGE_TOLERANCE).unwrap();
        assert_eq!(exact.len(), float.len());
        for (a, b) in exact.events().iter().zip(float.events()) {
            assert!((a.time - b.time).abs() < 1e-12);
            assert_eq!(a.tag, b.tag);
        }
    }

    #[test]
    fn overlapping_pulses_rejected() {
        let mut p = params(200, TABLE_FREQ_RATIO, 0.1);
        p.pulse_frac = 0.0432;
        let err = build_timeline(&p, DEFAULT_MERGE_TOLERANCE).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("overlap") && msg.contains("event"), "{msg}");

        let mut p = params(35, TABLE_FREQ_RATIO, 0.0);
        p.pulse_frac = 0.018;
        assert!(build_timeline(&p, DEFAULT_MERGE_TOLERANCE).is_ok());
    }

    #[test]
    fn rejects_bad_tolerance() {
        assert!(build_timeline(&params(3, TABLE_FREQ_RATIO, 0.1), 1e-3).is_err());
        assert!(build_timeline(&params(3, TABLE_FREQ_RATIO, 0.1), -1.0).is_err());
    }

    #[test]
    fn deterministic() {
        let p = params(113, TABLE_FREQ_RATIO, 0.17);
        let a = build_timeline(&p, DEFAULT_MERGE_TOLERANCE).unwrap();
        let b = build_timeline(&p, DEFAULT_MERGE_TOLERANCE).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn from_events_checks_order() {
        let p = params(3, TABLE_FREQ_RATIO, 0.0);
        let ev = |t| KickEvent {
            time: t,
            amplitude: 1.0,
            tag: SeriesTag::Primary,
        };
        assert!(KickTimeline::from_events(vec![ev(0.0), ev(1.0)], p.clone(), 0.0).is_ok());
        assert!(KickTimeline::from_events(vec![ev(1.0), ev(0.5)], p.clone(), 0.0).is_err());
        assert!(KickTimeline::from_events(vec![], p, 0.0).unwrap().is_empty());
    }
}
