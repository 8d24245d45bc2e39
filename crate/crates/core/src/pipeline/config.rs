//! Run configuration: one TOML document with a section per module.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::burden::{BinScheme, Summary, WindowConfig};
use crate::cohort::CovariateSchema;
use crate::error::{Error, Result};
use crate::matching::MatchingConfig;
use crate::pkpd::{DrugTable, PdFitOptions};
use crate::sensibase::SensitivityConfig;
use crate::simulator::{ScenarioConfig, COVARIATES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortOptions {
    /// `name:continuous` or `name:binary`, in column order.
    pub covariates: Vec<String>,
}

impl Default for CohortOptions {
    fn default() -> Self {
        CohortOptions {
            covariates: COVARIATES.iter().map(|(n, k)| format!("{n}:{k}")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BurdenOptions {
    pub window: WindowConfig,
    pub e_max_cuts: Vec<f64>,
    pub e_mean_cuts: Vec<f64>,
}

impl Default for BurdenOptions {
    fn default() -> Self {
        BurdenOptions {
            window: WindowConfig::default(),
            e_max_cuts: BinScheme::e_max_default().cuts,
            e_mean_cuts: BinScheme::e_mean_default().cuts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    /// Burden summary that defines the exposure arms.
    pub summary: Summary,
    /// `[high, low]` arm index pairs reported as differences.
    pub contrasts: Vec<[usize; 2]>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            summary: Summary::EMax,
            contrasts: vec![[6, 0]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineOptions {
    pub replicates: usize,
    pub train_fraction: f64,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        BaselineOptions {
            replicates: 15,
            train_fraction: 2.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Base seed; every random stream of a run derives from it.
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub drugs: DrugTable,
    pub cohort: CohortOptions,
    pub burden: BurdenOptions,
    pub pd: PdFitOptions,
    pub matching: MatchingConfig,
    pub analysis: AnalysisOptions,
    pub sensitivity: SensitivityConfig,
    pub baselines: BaselineOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            scenario: ScenarioConfig::default(),
            drugs: DrugTable::default(),
            cohort: CohortOptions::default(),
            burden: BurdenOptions::default(),
            pd: PdFitOptions::default(),
            matching: MatchingConfig::default(),
            analysis: AnalysisOptions::default(),
            sensitivity: SensitivityConfig::default(),
            baselines: BaselineOptions::default(),
        }
    }
}

/// Top-level sections, in serialization order.
pub const SECTIONS: [&str; 10] = [
    "seed",
    "scenario",
    "drugs",
    "cohort",
    "burden",
    "pd",
    "matching",
    "analysis",
    "sensitivity",
    "baselines",
];

fn absorb(bad: &mut Vec<String>, r: Result<()>) {
    match r {
        Ok(()) => {}
        Err(Error::Config(v)) => bad.extend(v),
        Err(e) => bad.push(e.to_string()),
    }
}

impl PipelineConfig {
    pub fn max_bins(&self) -> Result<BinScheme> {
        BinScheme::new(self.burden.e_max_cuts.clone())
    }

    pub fn mean_bins(&self) -> Result<BinScheme> {
        BinScheme::new(self.burden.e_mean_cuts.clone())
    }

    /// Bins of the summary that defines the arms.
    pub fn arm_bins(&self) -> Result<BinScheme> {
        match self.analysis.summary {
            Summary::EMax => self.max_bins(),
            Summary::EMean => self.mean_bins(),
        }
    }

    pub fn schema(&self) -> Result<CovariateSchema> {
        CovariateSchema::parse(&self.cohort.covariates)
    }

    pub fn contrasts(&self) -> Vec<(usize, usize)> {
        self.analysis.contrasts.iter().map(|c| (c[0], c[1])).collect()
    }

    /// Checks every section, reporting all offending fields at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        absorb(&mut bad, self.drugs.validate());
        absorb(&mut bad, self.scenario.validate(&self.drugs));
        absorb(&mut bad, self.schema().map(drop));
        absorb(&mut bad, self.matching.validate());
        absorb(&mut bad, self.sensitivity.validate());
        let w = &self.burden.window;
        if !(w.window_hr > 0.0 && w.step_min > 0.0 && w.horizon_hr >= w.window_hr) {
            bad.push("burden.window needs window_hr > 0, step_min > 0 and horizon_hr >= window_hr".into());
        }
        absorb(&mut bad, self.max_bins().map(drop));
        absorb(&mut bad, self.mean_bins().map(drop));
        if let Ok(bins) = self.arm_bins() {
            let n_arms = 2 * bins.n_levels();
            for c in &self.analysis.contrasts {
                if c[0] >= n_arms || c[1] >= n_arms || c[0] == c[1] {
                    bad.push(format!("analysis.contrasts entry {c:?} must name two distinct arms below {n_arms}"));
                }
            }
        }
        if self.pd.min_samples < 2 || self.pd.max_iter == 0 || !(self.pd.tolerance > 0.0) {
            bad.push("pd needs min_samples >= 2, max_iter >= 1 and tolerance > 0".into());
        }
        if self.baselines.replicates == 0 {
            bad.push("baselines.replicates must be >= 1".into());
        }
        if !(self.baselines.train_fraction > 0.0 && self.baselines.train_fraction <= 1.0) {
            bad.push("baselines.train_fraction must lie in (0, 1]".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    /// Canonical text: one `dotted.key = value` line per leaf, sorted by
    /// key. The config hash is taken over these bytes.
    pub fn canonical(&self) -> Result<String> {
        let value = toml::Value::try_from(self)
            .map_err(|e| Error::Config(vec![format!("cannot serialize configuration: {e}")]))?;
        let mut lines = Vec::new();
        if let toml::Value::Table(t) = value {
            flatten("", &t, &mut lines);
        }
        let mut text = lines.join("\n");
        text.push('\n');
        Ok(text)
    }

    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.canonical()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// A parsed configuration and the top-level sections its file set.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub explicit: Vec<String>,
}

impl LoadedConfig {
    /// Sections filled entirely from built-in defaults.
    pub fn defaulted(&self) -> Vec<String> {
        SECTIONS
            .iter()
            .filter(|s| !self.explicit.iter().any(|e| e == *s))
            .map(|s| s.to_string())
            .collect()
    }
}

impl Default for LoadedConfig {
    fn default() -> Self {
        LoadedConfig {
            config: PipelineConfig::default(),
            explicit: Vec::new(),
        }
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<String>) {
    for (k, v) in table {
        let key = format!("{prefix}{k}");
        match v {
            toml::Value::Table(t) => flatten(&format!("{key}."), t, out),
            leaf => out.push(format!("{key} = {leaf}")),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses configuration text; `path` is only used in error messages.
pub fn parse_config(text: &str, path: &Path) -> Result<LoadedConfig> {
    let err = |e: toml::de::Error| {
        let line = e.span().map_or(0, |s| line_of(text, s.start));
        Error::parse(path, line, e.message().to_string())
    };
    let table: toml::Table = toml::from_str(text).map_err(err)?;
    let config: PipelineConfig = toml::from_str(text).map_err(err)?;
    let mut explicit: Vec<String> = table.keys().cloned().collect();
    explicit.sort_by_key(|k| SECTIONS.iter().position(|s| s == k));
    Ok(LoadedConfig { config, explicit })
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    if !path.exists() {
        return Err(Error::MissingInputs(vec![path.to_path_buf()]));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}
