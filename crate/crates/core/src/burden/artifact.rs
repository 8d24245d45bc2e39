use std::path::Path;

use crate::error::{Error, Result};
use crate::stats;

/// Segments per 10-second artifact window.
pub const SEGMENTS_PER_WINDOW: usize = 5;

/// Longest artifact run, as a fraction of the recording, above which the
/// recording is excluded.
pub const MAX_ARTIFACT_RUN_FRACTION: f64 = 0.30;

/// Spectral features of one 10-second window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowFeatures {
    pub total_power: f64,
    pub psd_slope: f64,
}

/// One flag per 10-second window; `true` marks an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ArtifactMask(pub Vec<bool>);

impl ArtifactMask {
    /// Whether 2-second segment `k` falls in a flagged window.
    pub fn covers_segment(&self, k: usize) -> bool {
        self.0.get(k / SEGMENTS_PER_WINDOW).copied().unwrap_or(false)
    }

    pub fn longest_run(&self) -> usize {
        let mut best = 0;
        let mut run = 0;
        for &f in &self.0 {
            run = if f { run + 1 } else { 0 };
            best = best.max(run);
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactReport {
    pub mask: ArtifactMask,
    pub longest_run_fraction: f64,
    /// Longest consecutive artifact run exceeds 30% of the recording.
    pub exclude: bool,
}

fn quartiles(xs: &[f64]) -> (f64, f64) {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    (
        stats::quantile_sorted(&v, 0.25).unwrap_or(f64::NAN),
        stats::quantile_sorted(&v, 0.75).unwrap_or(f64::NAN),
    )
}

/// Flags windows whose total power lies beyond `Q1 - 3·IQR` / `Q3 + 3·IQR`
/// or whose log-PSD slope exceeds `Q3 + 3·IQR` of the slopes.
pub fn detect_artifacts(windows: &[WindowFeatures]) -> Result<ArtifactReport> {
    if windows.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "artifact detection needs >= 4 windows, got {}",
            windows.len()
        )));
    }
    let power: Vec<f64> = windows.iter().map(|w| w.total_power).collect();
    let slope: Vec<f64> = windows.iter().map(|w| w.psd_slope).collect();
    let (p1, p3) = quartiles(&power);
    let (s1, s3) = quartiles(&slope);
    let piqr = p3 - p1;
    let siqr = s3 - s1;
    let mask = ArtifactMask(
        windows
            .iter()
            .map(|w| {
                w.total_power < p1 - 3.0 * piqr
                    || w.total_power > p3 + 3.0 * piqr
                    || w.psd_slope > s3 + 3.0 * siqr
            })
            .collect(),
    );
    let frac = mask.longest_run() as f64 / windows.len() as f64;
    Ok(ArtifactReport {
        longest_run_fraction: frac,
        exclude: frac > MAX_ARTIFACT_RUN_FRACTION,
        mask,
    })
}

/// Reads `window_start_s, total_power, psd_slope` rows.
pub fn read_window_features(path: &Path) -> Result<Vec<WindowFeatures>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, 1, e))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, i + 2, e))?;
        let num = |k: usize| -> Result<f64> {
            rec.get(k)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|_| Error::parse(path, i + 2, format!("column {k} is not a number")))
        };
        out.push(WindowFeatures {
            total_power: num(1)?,
            psd_slope: num(2)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(p: f64, s: f64) -> WindowFeatures {
        WindowFeatures {
            total_power: p,
            psd_slope: s,
        }
    }

    #[test]
    fn identical_windows_flag_nothing() {
        let r = detect_artifacts(&vec![w(1.0, -1.0); 20]).unwrap();
        assert!(r.mask.0.iter().all(|f| !f));
        assert!(!r.exclude);
    }

    #[test]
    fn power_outlier_is_flagged() {
        let mut v: Vec<WindowFeatures> = (0..40).map(|i| w(10.0 + (i % 5) as f64 * 0.1, -1.0)).collect();
        v[17] = w(1000.0, -1.0);
        let r = detect_artifacts(&v).unwrap();
        // oracle: quartiles computed directly
        let mut p: Vec<f64> = v.iter().map(|x| x.total_power).collect();
        p.sort_by(f64::total_cmp);
        let q = |f: f64| {
            let pos = f * 39.0;
            let lo = pos.floor() as usize;
            p[lo] + (p[(lo + 1).min(39)] - p[lo]) * (pos - lo as f64)
        };
        let hi = q(0.75) + 3.0 * (q(0.75) - q(0.25));
        for (i, f) in r.mask.0.iter().enumerate() {
            assert_eq!(*f, v[i].total_power > hi, "window {i}");
        }
        assert!(r.mask.0[17]);
        assert_eq!(r.mask.0.iter().filter(|f| **f).count(), 1);
    }

    #[test]
    fn slope_outlier_is_flagged() {
        let mut v: Vec<WindowFeatures> = (0..12).map(|i| w(5.0, -2.0 + (i % 3) as f64 * 0.01)).collect();
        v[3] = w(5.0, 4.0);
        let r = detect_artifacts(&v).unwrap();
        assert!(r.mask.0[3]);
    }

    #[test]
    fn long_artifact_run_triggers_exclusion() {
        // 20 near-silent windows followed by 20 saturated ones: 40% of the
        // recording in one consecutive run, while the quartiles stay on the
        // clean windows.
        let mut v: Vec<WindowFeatures> = (0..100).map(|i| w(10.0 + (i % 7) as f64 * 0.05, -1.0)).collect();
        for x in v.iter_mut().skip(30).take(20) {
            *x = w(1e-6, -1.0);
        }
        for x in v.iter_mut().skip(50).take(20) {
            *x = w(1e6, -1.0);
        }
        let r = detect_artifacts(&v).unwrap();
        assert_eq!(r.mask.longest_run(), 40);
        assert!((r.longest_run_fraction - 0.40).abs() < 1e-15);
        assert!(r.exclude);
    }

    #[test]
    fn too_few_windows() {
        assert!(detect_artifacts(&[w(1.0, 1.0); 3]).is_err());
    }
}
