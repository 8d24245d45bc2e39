//! From per-segment EA probabilities to clinical burden summaries.
//!
//! The chain is: HMM smoothing of the 2-second probability stream, optional
//! artifact masking by 10-second window, EA fraction over 6-hour windows slid
//! in 10-minute steps across the first 24 hours, and finally the maximum and
//! mean of those window fractions binned into four levels.

mod artifact;
mod hmm;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use bitvec::vec::BitVec;
use serde::{Deserialize, Serialize};

pub use artifact::{
    detect_artifacts, read_window_features, ArtifactMask, ArtifactReport, WindowFeatures,
    MAX_ARTIFACT_RUN_FRACTION, SEGMENTS_PER_WINDOW,
};
pub use hmm::{fit_transition_matrix, smooth_labels_hmm, Smoothed, TransitionMatrix};

use crate::cohort::DoseRecord;
use crate::error::{Error, Result};
use crate::stats;

/// Cadence of the EA classifier output.
pub const SEGMENT_SECONDS: f64 = 2.0;
pub const SEGMENTS_PER_HOUR: usize = 1800;

#[derive(Debug, Clone, PartialEq)]
enum Samples {
    Dense(Vec<f64>),
    /// Binarized classifier output: each segment takes one of two
    /// probabilities. Compact storage for long simulated recordings.
    Levels {
        labels: BitVec,
        p_on: f64,
        p_off: f64,
    },
}

/// Per-segment probability of EA at a fixed 2-second cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct EaProbabilityStream {
    pub start_s: f64,
    samples: Samples,
}

fn check_prob(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain(format!("EA probability {p} outside [0, 1]")))
    }
}

impl EaProbabilityStream {
    pub fn dense(start_s: f64, p_ea: Vec<f64>) -> Result<Self> {
        for &p in &p_ea {
            check_prob(p)?;
        }
        Ok(EaProbabilityStream {
            start_s,
            samples: Samples::Dense(p_ea),
        })
    }

    pub fn from_labels(start_s: f64, labels: BitVec, p_on: f64, p_off: f64) -> Result<Self> {
        check_prob(p_on)?;
        check_prob(p_off)?;
        Ok(EaProbabilityStream {
            start_s,
            samples: Samples::Levels { labels, p_on, p_off },
        })
    }

    pub fn len(&self) -> usize {
        match &self.samples {
            Samples::Dense(v) => v.len(),
            Samples::Levels { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, k: usize) -> f64 {
        match &self.samples {
            Samples::Dense(v) => v[k],
            Samples::Levels { labels, p_on, p_off } => {
                if labels[k] {
                    *p_on
                } else {
                    *p_off
                }
            }
        }
    }

    pub fn iter(&self) -> StreamIter<'_> {
        StreamIter {
            stream: self,
            pos: 0,
        }
    }

    pub fn duration_hours(&self) -> f64 {
        self.len() as f64 * SEGMENT_SECONDS / 3600.0
    }

    /// Parses `t_seconds, p_ea` lines (an optional non-numeric header is
    /// skipped). Timestamps must advance by exactly 2 seconds.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut start = None;
        let mut values = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let (a, b) = t
                .split_once(',')
                .ok_or_else(|| Error::parse(path, i + 1, "expected `t_seconds, p_ea`"))?;
            let ts = match a.trim().parse::<f64>() {
                Ok(v) => v,
                Err(_) if i == 0 => continue,
                Err(_) => return Err(Error::parse(path, i + 1, format!("bad time `{}`", a.trim()))),
            };
            let p = b
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(path, i + 1, format!("bad probability `{}`", b.trim())))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::parse(path, i + 1, format!("probability {p} outside [0, 1]")));
            }
            let t0 = *start.get_or_insert(ts);
            let expected = t0 + SEGMENT_SECONDS * values.len() as f64;
            if (ts - expected).abs() > 1e-6 {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("time {ts} breaks the 2-second cadence (expected {expected})"),
                ));
            }
            values.push(p);
        }
        Ok(EaProbabilityStream {
            start_s: start.unwrap_or(0.0),
            samples: Samples::Dense(values),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        for (k, p) in self.iter().enumerate() {
            let t = self.start_s + SEGMENT_SECONDS * k as f64;
            writeln!(w, "{t},{p}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone)]
pub struct StreamIter<'a> {
    stream: &'a EaProbabilityStream,
    pos: usize,
}

impl Iterator for StreamIter<'_> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        if self.pos < self.stream.len() {
            let v = self.stream.get(self.pos);
            self.pos += 1;
            Some(v)
        } else {
            None
        }
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let r = self.stream.len() - self.pos;
        (r, Some(r))
    }
}

impl ExactSizeIterator for StreamIter<'_> {}

/// Sliding-window geometry, in hours / minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub window_hr: f64,
    pub step_min: f64,
    pub horizon_hr: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_hr: 6.0,
            step_min: 10.0,
            horizon_hr: 24.0,
        }
    }
}

impl WindowConfig {
    fn segments(hours: f64) -> usize {
        (hours * SEGMENTS_PER_HOUR as f64).round() as usize
    }

    pub fn step_segments(&self) -> usize {
        Self::segments(self.step_min / 60.0)
    }

    pub fn window_segments(&self) -> usize {
        Self::segments(self.window_hr)
    }

    pub fn horizon_segments(&self) -> usize {
        Self::segments(self.horizon_hr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowFraction {
    pub start_hr: f64,
    pub fraction: f64,
}

/// Running counts of EA and usable (non-artifact) segments.
struct Prefix {
    ea: Vec<u32>,
    valid: Vec<u32>,
}

impl Prefix {
    fn new(labels: &[bool], mask: Option<&ArtifactMask>, n: usize) -> Self {
        let mut ea = Vec::with_capacity(n + 1);
        let mut valid = Vec::with_capacity(n + 1);
        ea.push(0);
        valid.push(0);
        for (k, &l) in labels.iter().take(n).enumerate() {
            let ok = !mask.is_some_and(|m| m.covers_segment(k));
            ea.push(ea[k] + u32::from(ok && l));
            valid.push(valid[k] + u32::from(ok));
        }
        Prefix { ea, valid }
    }

    fn fraction(&self, a: usize, b: usize) -> Option<f64> {
        let v = self.valid[b] - self.valid[a];
        (v > 0).then(|| f64::from(self.ea[b] - self.ea[a]) / f64::from(v))
    }
}

/// EA fraction over sliding windows within the horizon.
///
/// Only full windows are used; a recording shorter than one window (but at
/// least 2 hours) yields a single window spanning all of it. Windows whose
/// segments are all artifact are skipped.
pub fn ea_fraction_series(labels: &[bool], mask: Option<&ArtifactMask>, cfg: &WindowConfig) -> Result<Vec<WindowFraction>> {
    let min = WindowConfig::segments(crate::cohort::MIN_EEG_HOURS);
    if labels.len() < min {
        return Err(Error::InsufficientData(format!(
            "{} segments is below the 2-hour minimum",
            labels.len()
        )));
    }
    let horizon = cfg.horizon_segments().min(labels.len());
    let win = cfg.window_segments().min(horizon);
    let step = cfg.step_segments().max(1);
    let prefix = Prefix::new(labels, mask, horizon);
    let mut out = Vec::new();
    let mut start = 0;
    while start + win <= horizon {
        if let Some(f) = prefix.fraction(start, start + win) {
            out.push(WindowFraction {
                start_hr: start as f64 / SEGMENTS_PER_HOUR as f64,
                fraction: f,
            });
        }
        start += step;
    }
    if out.is_empty() {
        return Err(Error::InsufficientData("no window contains a non-artifact segment".into()));
    }
    Ok(out)
}

/// EA fraction per non-overlapping step (10 minutes by default) within the
/// horizon; `None` where every segment is artifact.
pub fn step_fractions(labels: &[bool], mask: Option<&ArtifactMask>, cfg: &WindowConfig) -> Vec<Option<f64>> {
    let horizon = cfg.horizon_segments().min(labels.len());
    let step = cfg.step_segments().max(1);
    let prefix = Prefix::new(labels, mask, horizon);
    (0..horizon / step)
        .map(|i| prefix.fraction(i * step, (i + 1) * step))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurdenStats {
    pub e_max: f64,
    pub e_mean: f64,
    /// Kept for reporting; never used for estimation.
    pub e_median: Option<f64>,
}

/// Maximum and mean of the window fractions.
pub fn burden_summary(fractions: &[f64]) -> Result<BurdenStats> {
    if fractions.is_empty() {
        return Err(Error::InsufficientData("burden summary of an empty series".into()));
    }
    let e_max = fractions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e_mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    Ok(BurdenStats {
        e_max,
        e_mean: e_mean.min(e_max),
        e_median: stats::median(fractions),
    })
}

/// Which burden summary defines the exposure arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Summary {
    EMax,
    EMean,
}

impl Summary {
    pub fn as_str(self) -> &'static str {
        match self {
            Summary::EMax => "e_max",
            Summary::EMean => "e_mean",
        }
    }
}

/// Level boundaries on [0, 1]; level `k` covers `[cuts[k-1], cuts[k])` and
/// the top level is closed at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BinScheme {
    pub cuts: Vec<f64>,
}

pub const FOUR_LEVEL_NAMES: [&str; 4] = ["mild", "moderate", "severe", "very severe"];

impl BinScheme {
    pub fn new(cuts: Vec<f64>) -> Result<Self> {
        if cuts.iter().any(|c| !(*c > 0.0 && *c < 1.0)) || cuts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(vec![format!(
                "bin cuts {cuts:?} must be strictly increasing inside (0, 1)"
            )]));
        }
        Ok(BinScheme { cuts })
    }

    pub fn e_max_default() -> Self {
        BinScheme {
            cuts: vec![0.25, 0.5, 0.75],
        }
    }

    pub fn e_mean_default() -> Self {
        BinScheme {
            cuts: vec![0.02, 0.10, 0.30],
        }
    }

    pub fn n_levels(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn level(&self, e: f64) -> usize {
        self.cuts.iter().take_while(|&&c| e >= c).count()
    }

    pub fn label(&self, level: usize) -> String {
        if self.n_levels() == 4 {
            FOUR_LEVEL_NAMES[level].to_string()
        } else {
            let lo = if level == 0 { 0.0 } else { self.cuts[level - 1] };
            let hi = self.cuts.get(level).copied().unwrap_or(1.0);
            format!("[{lo},{hi}{}", if level + 1 == self.n_levels() { "]" } else { ")" })
        }
    }

    /// Index of the level with the given label, if any.
    pub fn level_of_label(&self, label: &str) -> Option<usize> {
        (0..self.n_levels()).find(|&l| self.label(l) == label)
    }
}

/// Four-level labels for `(e_max, e_mean)` under the given schemes.
pub fn bin_burden(e_max: f64, e_mean: f64, max_bins: &BinScheme, mean_bins: &BinScheme) -> (usize, usize) {
    (max_bins.level(e_max), mean_bins.level(e_mean))
}

/// Total administered dose per drug within the EEG window divided by the
/// EEG duration (mg/kg/h).
pub fn mean_dose_rates(doses: &[DoseRecord], eeg_hours: f64) -> BTreeMap<String, f64> {
    let mut totals: BTreeMap<String, f64> = BTreeMap::new();
    for d in doses {
        if d.start_hr > eeg_hours {
            continue;
        }
        let amount = if d.is_bolus() {
            d.amount_mg_per_kg
        } else {
            let end = (d.start_hr + d.duration_hr).min(eeg_hours);
            d.amount_mg_per_kg * (end - d.start_hr) / d.duration_hr
        };
        *totals.entry(d.drug.clone()).or_insert(0.0) += amount;
    }
    for v in totals.values_mut() {
        *v /= eeg_hours;
    }
    totals
}

/// A patient is treated when any drug's mean dose reaches a tenth of that
/// drug's population median ED50.
pub fn classify_treatment(mean_doses: &BTreeMap<String, f64>, medians: &BTreeMap<String, f64>) -> Result<bool> {
    let mut treated = false;
    for (drug, &dose) in mean_doses {
        if dose <= 0.0 {
            continue;
        }
        let median = medians.get(drug).ok_or_else(|| {
            Error::InsufficientData(format!("no population median ED50 for administered drug {drug}"))
        })?;
        if dose >= median / 10.0 {
            treated = true;
        }
    }
    Ok(treated)
}

/// Full per-patient burden summary with level labels and treatment flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurdenSummary {
    pub e_max: f64,
    pub e_mean: f64,
    pub e_median: Option<f64>,
    pub e_max_bin: usize,
    pub e_mean_bin: usize,
    pub treated: bool,
}

/// Smoothed labels, window fractions and per-step fractions for one stream.
#[derive(Debug, Clone)]
pub struct ProcessedStream {
    pub windows: Vec<WindowFraction>,
    pub steps: Vec<Option<f64>>,
    pub stats: BurdenStats,
    pub artifact_excluded: bool,
}

/// Runs smoothing, masking and windowing for one recording.
pub fn process_stream(
    stream: &EaProbabilityStream,
    transition: &TransitionMatrix,
    artifacts: Option<&ArtifactReport>,
    cfg: &WindowConfig,
) -> Result<ProcessedStream> {
    let smoothed = smooth_labels_hmm(stream.iter(), transition)?;
    process_labels(&smoothed.labels, artifacts, cfg)
}

pub fn process_labels(labels: &[bool], artifacts: Option<&ArtifactReport>, cfg: &WindowConfig) -> Result<ProcessedStream> {
    let mask = artifacts.map(|a| &a.mask);
    let windows = ea_fraction_series(labels, mask, cfg)?;
    let fr: Vec<f64> = windows.iter().map(|w| w.fraction).collect();
    let stats = burden_summary(&fr)?;
    Ok(ProcessedStream {
        steps: step_fractions(labels, mask, cfg),
        windows,
        stats,
        artifact_excluded: artifacts.is_some_and(|a| a.exclude),
    })
}
