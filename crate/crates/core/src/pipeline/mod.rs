//! Stage orchestration behind the command-line tool.
//!
//! A run directory holds one subdirectory per stage. Each stage reads the
//! cohort plus whatever upstream stage outputs exist, recomputing missing
//! intermediates in memory, and writes its files together with a
//! `manifest.json` into its own subdirectory. Stage directories are built
//! under a temporary name and moved into place only on success.

mod config;
mod report;
mod tables;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use config::{
    load_config, parse_config, AnalysisOptions, BaselineOptions, BurdenOptions, CohortOptions, LoadedConfig,
    PipelineConfig, SECTIONS,
};
pub use report::{PLOT_APO_COLUMNS, PLOT_PSI_COLUMNS, PLOT_SURFACE_COLUMNS};
pub use tables::{read_burden_csv, read_pd_csv, write_burden_csv, write_pd_csv, BurdenRow};

use crate::analysis::{burden_summaries, fit_cohort_pd, population_medians, process_cohort, AnalysisInputs, MatchSpace};
use crate::burden::{detect_artifacts, read_window_features, ArtifactReport, BinScheme, TransitionMatrix};
use crate::cohort::{self, load_cohort, write_exclusions, ExclusionReason, LoadedCohort};
use crate::error::{Error, Result};
use crate::matching::{
    write_apo_csv, write_groups_jsonl, write_pruning_csv, write_weights_csv, MatchingRun, MetricSource,
    StoredMetrics,
};
use crate::pkpd::PdParams;
use crate::sensibase::{
    class_propensities, granular_bins, mann_whitney_u, naive_average, outcome_regression, propensity_match,
    psi_sweep, quantization_sweep, significant_psi_range, write_baselines_csv, write_mwu_csv, write_psi_csv,
    write_surface_csv, BaselineRow, GranularResult, MwuRow,
};
use crate::simulator::generate_cohort;
use crate::stats::derive_seed;

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Simulate,
    FitPd,
    Burden,
    Match,
    Estimate,
    Sensitivity,
    Baselines,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Simulate,
        Stage::FitPd,
        Stage::Burden,
        Stage::Match,
        Stage::Estimate,
        Stage::Sensitivity,
        Stage::Baselines,
        Stage::Report,
    ];

    /// Subcommand name, also the name of the stage's output directory.
    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::FitPd => "fit-pd",
            Stage::Burden => "burden",
            Stage::Match => "match",
            Stage::Estimate => "estimate",
            Stage::Sensitivity => "sensitivity",
            Stage::Baselines => "baselines",
            Stage::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }
}

pub const MANIFEST: &str = "manifest.json";

/// Provenance record written next to every stage's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    /// SHA-256 of the canonical configuration text.
    pub config_hash: String,
    /// Input role → path, relative to the run directory when inside it.
    pub inputs: BTreeMap<String, String>,
    /// Files written, relative to the stage directory.
    pub outputs: Vec<String>,
    /// Configuration sections taken from the built-in defaults of this version.
    pub defaulted_sections: Vec<String>,
    /// The full effective configuration.
    pub config: String,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Everything one stage invocation needs.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: LoadedConfig,
    /// Overrides the configured seed.
    pub seed: Option<u64>,
    /// Run directory.
    pub out: PathBuf,
    /// Cohort directory; defaults to the run's `simulate` output.
    pub input: Option<PathBuf>,
}

/// What a finished stage produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

struct Ctx {
    cfg: PipelineConfig,
    defaulted: Vec<String>,
    seed: u64,
    out: PathBuf,
    input: PathBuf,
    inputs: BTreeMap<String, String>,
}

impl Ctx {
    fn new(opts: &RunOptions) -> Result<Self> {
        let mut cfg = opts.config.config.clone();
        if let Some(s) = opts.seed {
            cfg.seed = s;
        }
        cfg.scenario.seed = cfg.seed;
        cfg.validate()?;
        Ok(Ctx {
            seed: cfg.seed,
            cfg,
            defaulted: opts.config.defaulted(),
            input: opts.input.clone().unwrap_or_else(|| opts.out.join(Stage::Simulate.name())),
            out: opts.out.clone(),
            inputs: BTreeMap::new(),
        })
    }

    fn seed_for(&self, domain: &str) -> u64 {
        derive_seed(self.seed, domain, 0)
    }

    fn stage_file(&self, stage: Stage, name: &str) -> PathBuf {
        self.out.join(stage.name()).join(name)
    }

    fn display(&self, p: &Path) -> String {
        p.strip_prefix(&self.out)
            .map(|r| r.display().to_string())
            .unwrap_or_else(|_| p.display().to_string())
    }

    fn declare(&mut self, role: &str, p: &Path) {
        let shown = self.display(p);
        self.inputs.insert(role.to_string(), shown);
    }
}

/// Collects a stage's files in a temporary directory that replaces the
/// stage directory on commit and is deleted otherwise.
struct StageDir {
    tmp: PathBuf,
    target: PathBuf,
    outputs: Vec<String>,
    committed: bool,
}

impl StageDir {
    fn create(out: &Path, stage: Stage) -> Result<Self> {
        let target = out.join(stage.name());
        let tmp = out.join(format!(".{}.partial", stage.name()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        Ok(StageDir {
            tmp,
            target,
            outputs: Vec::new(),
            committed: false,
        })
    }

    fn file(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.tmp.join(name)
    }

    fn commit(mut self, ctx: &Ctx, stage: Stage) -> Result<StageOutcome> {
        self.outputs.sort();
        let manifest = RunManifest {
            tool: "eacause".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: stage.name().into(),
            seed: ctx.seed,
            config_hash: ctx.cfg.hash()?,
            inputs: ctx.inputs.clone(),
            outputs: std::mem::take(&mut self.outputs),
            defaulted_sections: ctx.defaulted.clone(),
            config: ctx.cfg.canonical()?,
        };
        let mpath = self.tmp.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        fs::rename(&self.tmp, &self.target).map_err(|e| Error::io(&self.target, e))?;
        self.committed = true;
        Ok(StageOutcome {
            dir: self.target.clone(),
            manifest,
        })
    }
}

impl Drop for StageDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}

/// Runs one stage and writes its outputs under `opts.out/<stage>`.
pub fn run_stage(stage: Stage, opts: &RunOptions) -> Result<StageOutcome> {
    let mut ctx = Ctx::new(opts)?;
    info!("{} (seed {})", stage.name(), ctx.seed);
    match stage {
        Stage::Simulate => simulate(&mut ctx),
        Stage::FitPd => fit_pd(&mut ctx),
        Stage::Burden => burden(&mut ctx),
        Stage::Match => matching(&mut ctx),
        Stage::Estimate => estimate(&mut ctx),
        Stage::Sensitivity => sensitivity(&mut ctx),
        Stage::Baselines => baselines(&mut ctx),
        Stage::Report => report::report(&mut ctx),
    }
}

fn simulate(ctx: &mut Ctx) -> Result<StageOutcome> {
    let sim = generate_cohort(&ctx.cfg.scenario, &ctx.cfg.drugs)?;
    let mut dir = StageDir::create(&ctx.out, Stage::Simulate)?;
    sim.export_cohort(&dir.tmp)?;
    for f in ["cohort.csv", "doses.csv", "transition.txt", "streams/"] {
        dir.outputs.push(f.into());
    }
    sim.write_ground_truth(&dir.file("ground_truth.csv"))?;
    sim.write_arm_truth(&dir.file("arm_truth.csv"))?;
    let resolved = crate::simulator::ScenarioConfig {
        outcome: sim.outcome.clone(),
        calibration: None,
        ..sim.config.clone()
    };
    let path = dir.file("scenario_resolved.toml");
    let text = toml::to_string(&resolved).map_err(|e| Error::Config(vec![e.to_string()]))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    dir.commit(ctx, Stage::Simulate)
}

/// The cohort directory plus its HMM transition matrix and optional
/// per-patient artifact features.
struct Source {
    loaded: LoadedCohort,
    transition: TransitionMatrix,
    artifacts: BTreeMap<String, ArtifactReport>,
}

fn load_source(ctx: &mut Ctx) -> Result<Source> {
    let dir = ctx.input.clone();
    let required = [cohort::cohort_csv(&dir), cohort::doses_csv(&dir), dir.join("transition.txt")];
    let missing: Vec<PathBuf> = required.iter().filter(|p| !p.exists()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing));
    }
    ctx.declare("cohort", &dir);
    let loaded = load_cohort(&dir, &ctx.cfg.schema()?, &ctx.cfg.drugs)?;
    let transition = TransitionMatrix::read(&dir.join("transition.txt"))?;
    let mut artifacts = BTreeMap::new();
    let adir = dir.join("artifacts");
    if adir.is_dir() {
        ctx.declare("artifacts", &adir);
        for p in &loaded.cohort.patients {
            let f = adir.join(format!("{}.csv", p.id));
            if f.exists() {
                artifacts.insert(p.id.clone(), detect_artifacts(&read_window_features(&f)?)?);
            }
        }
    }
    Ok(Source {
        loaded,
        transition,
        artifacts,
    })
}

/// PD fits and burden rows keyed by patient id.
struct Stages {
    pd: BTreeMap<String, PdParams>,
    burden: BTreeMap<String, BurdenRow>,
    medians: BTreeMap<String, f64>,
}

fn compute_pd(ctx: &Ctx, src: &Source) -> Result<(BTreeMap<String, PdParams>, Vec<crate::burden::ProcessedStream>)> {
    let processed = process_cohort(&src.loaded.cohort, &src.transition, &src.artifacts, &ctx.cfg.burden.window)?;
    let fits = fit_cohort_pd(
        &src.loaded.cohort,
        &processed,
        &ctx.cfg.drugs,
        &ctx.cfg.pd,
        &ctx.cfg.burden.window,
    )?;
    let pd = src.loaded.cohort.patients.iter().map(|p| p.id.clone()).zip(fits).collect();
    Ok((pd, processed))
}

/// Loads the PD fits from `fit-pd` when present, otherwise fits them.
fn pd_params(ctx: &mut Ctx, src: &Source) -> Result<BTreeMap<String, PdParams>> {
    let path = ctx.stage_file(Stage::FitPd, "pd_params.csv");
    if path.exists() {
        ctx.declare("pd_params", &path);
        let mut pd = read_pd_csv(&path, &ctx.cfg.drugs)?;
        let mut out = BTreeMap::new();
        for p in &src.loaded.cohort.patients {
            out.insert(p.id.clone(), pd.remove(&p.id).unwrap_or_default());
        }
        if let Some(extra) = pd.keys().next() {
            return Err(Error::Schema(format!(
                "{}: patient `{extra}` is not in the cohort",
                path.display()
            )));
        }
        Ok(out)
    } else {
        info!("no fit-pd output; fitting PD parameters");
        Ok(compute_pd(ctx, src)?.0)
    }
}

fn compute_burden(
    ctx: &Ctx,
    src: &Source,
    pd: &BTreeMap<String, PdParams>,
) -> Result<(BTreeMap<String, BurdenRow>, BTreeMap<String, f64>)> {
    let processed = process_cohort(&src.loaded.cohort, &src.transition, &src.artifacts, &ctx.cfg.burden.window)?;
    let fits: Vec<PdParams> = src.loaded.cohort.patients.iter().map(|p| pd[&p.id].clone()).collect();
    let medians = population_medians(&fits, &ctx.cfg.drugs)?;
    let summaries = burden_summaries(
        &src.loaded.cohort,
        &processed,
        &medians,
        &ctx.cfg.max_bins()?,
        &ctx.cfg.mean_bins()?,
    )?;
    let rows = src
        .loaded
        .cohort
        .patients
        .iter()
        .zip(summaries)
        .zip(&processed)
        .map(|((p, s), pr)| {
            (
                p.id.clone(),
                BurdenRow {
                    e_max: s.e_max,
                    e_mean: s.e_mean,
                    e_median: s.e_median,
                    treated: s.treated,
                    artifact_excluded: pr.artifact_excluded,
                },
            )
        })
        .collect();
    Ok((rows, medians))
}

fn upstream(ctx: &mut Ctx, src: &Source) -> Result<Stages> {
    let pd = pd_params(ctx, src)?;
    let path = ctx.stage_file(Stage::Burden, "burden.csv");
    let (burden, medians) = if path.exists() {
        ctx.declare("burden", &path);
        let rows = read_burden_csv(&path)?;
        let fits: Vec<PdParams> = pd.values().cloned().collect();
        let medians = population_medians(&fits, &ctx.cfg.drugs)?;
        for p in &src.loaded.cohort.patients {
            if !rows.contains_key(&p.id) {
                return Err(Error::Schema(format!("{}: no row for patient `{}`", path.display(), p.id)));
            }
        }
        (rows, medians)
    } else {
        info!("no burden output; computing burden summaries");
        compute_burden(ctx, src, &pd)?
    };
    Ok(Stages { pd, burden, medians })
}

/// Analysed patients (artifact exclusions dropped), ordered by id.
fn analysis_inputs(src: &Source, st: &Stages) -> AnalysisInputs {
    let mut patients: Vec<_> = src
        .loaded
        .cohort
        .patients
        .iter()
        .filter(|p| !st.burden[&p.id].artifact_excluded)
        .collect();
    patients.sort_by(|a, b| a.id.cmp(&b.id));
    let b = |id: &String| &st.burden[id];
    AnalysisInputs {
        ids: patients.iter().map(|p| p.id.clone()).collect(),
        covariate_names: src.loaded.cohort.schema.names().map(str::to_string).collect(),
        covariates: patients.iter().map(|p| p.covariates.0.clone()).collect(),
        pd: patients.iter().map(|p| st.pd[&p.id].clone()).collect(),
        e_max: patients.iter().map(|p| b(&p.id).e_max).collect(),
        e_mean: patients.iter().map(|p| b(&p.id).e_mean).collect(),
        treated: patients.iter().map(|p| b(&p.id).treated).collect(),
        outcome: patients.iter().map(|p| f64::from(u8::from(p.poor_outcome()))).collect(),
        mrs: patients.iter().map(|p| p.outcome_mrs).collect(),
    }
}

fn fit_pd(ctx: &mut Ctx) -> Result<StageOutcome> {
    let src = load_source(ctx)?;
    let (pd, _) = compute_pd(ctx, &src)?;
    let mut dir = StageDir::create(&ctx.out, Stage::FitPd)?;
    write_pd_csv(&dir.file("pd_params.csv"), &pd)?;
    write_exclusions(&dir.file("exclusions.csv"), &src.loaded.exclusions)?;
    dir.commit(ctx, Stage::FitPd)
}

fn burden(ctx: &mut Ctx) -> Result<StageOutcome> {
    let src = load_source(ctx)?;
    let pd = pd_params(ctx, &src)?;
    let (rows, medians) = compute_burden(ctx, &src, &pd)?;
    let mut dir = StageDir::create(&ctx.out, Stage::Burden)?;
    write_burden_csv(
        &dir.file("burden.csv"),
        &rows,
        &ctx.cfg.max_bins()?,
        &ctx.cfg.mean_bins()?,
    )?;
    src.transition.write(&dir.file("transition.txt"))?;
    tables::write_medians_csv(&dir.file("median_ed50.csv"), &medians)?;
    dir.commit(ctx, Stage::Burden)
}

/// Inputs, matching space and arms shared by the matching-based stages.
struct Prepared {
    src: Source,
    inputs: AnalysisInputs,
    space: MatchSpace,
    arms: Vec<usize>,
    bins: BinScheme,
}

fn prepare(ctx: &mut Ctx) -> Result<Prepared> {
    let src = load_source(ctx)?;
    let st = upstream(ctx, &src)?;
    info!("population median ED50: {:?}", st.medians);
    let inputs = analysis_inputs(&src, &st);
    if inputs.is_empty() {
        return Err(Error::InsufficientData("no patients left to analyse".into()));
    }
    let space = inputs.match_space(&ctx.cfg.drugs)?;
    let bins = ctx.cfg.arm_bins()?;
    let arms = inputs.arms(ctx.cfg.analysis.summary, &bins);
    Ok(Prepared {
        src,
        inputs,
        space,
        arms,
        bins,
    })
}

/// Reuses the metrics stored by `match` when present, otherwise learns them.
fn matched_run(ctx: &mut Ctx, p: &Prepared) -> Result<MatchingRun> {
    let n_arms = 2 * p.bins.n_levels();
    let seed = ctx.seed_for("match");
    let path = ctx.stage_file(Stage::Match, "metrics.json");
    if path.exists() {
        ctx.declare("metrics", &path);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let stored: StoredMetrics = serde_json::from_str(&text)?;
        MatchingRun::from_stored(&p.space, &p.arms, n_arms, &ctx.cfg.matching, &stored, seed)
    } else {
        info!("no match output; learning metrics");
        MatchingRun::fit(
            &p.space,
            &p.inputs.outcome,
            &p.arms,
            n_arms,
            &ctx.cfg.matching,
            &MetricSource::Learn,
            seed,
        )
    }
}

fn matching(ctx: &mut Ctx) -> Result<StageOutcome> {
    let p = prepare(ctx)?;
    let n_arms = 2 * p.bins.n_levels();
    let run = MatchingRun::fit(
        &p.space,
        &p.inputs.outcome,
        &p.arms,
        n_arms,
        &ctx.cfg.matching,
        &MetricSource::Learn,
        ctx.seed_for("match"),
    )?;
    let mut dir = StageDir::create(&ctx.out, Stage::Match)?;
    write_weights_csv(&dir.file("weights.csv"), &run.feature_names, &run.mean_weights())?;
    let path = dir.file("metrics.json");
    let mut text = serde_json::to_string_pretty(&run.stored_metrics())?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    write_groups_jsonl(&dir.file("matched_groups.jsonl"), &run, &p.inputs.ids)?;
    write_pruning_csv(&dir.file("pruning.csv"), &run.pruning())?;
    tables::write_arm_counts_csv(&dir.file("arm_counts.csv"), &p.arms, &p.bins)?;
    dir.commit(ctx, Stage::Match)
}

fn estimate(ctx: &mut Ctx) -> Result<StageOutcome> {
    let p = prepare(ctx)?;
    let run = matched_run(ctx, &p)?;
    let est = run.estimate(&p.inputs.outcome, &ctx.cfg.contrasts(), ctx.seed_for("estimate"))?;
    let mut dir = StageDir::create(&ctx.out, Stage::Estimate)?;
    write_apo_csv(&dir.file("apo.csv"), &est, |l| p.bins.label(l))?;
    tables::write_contrasts_csv(&dir.file("contrasts.csv"), &est, &p.bins)?;
    dir.commit(ctx, Stage::Estimate)
}

#[derive(Serialize)]
struct ContrastRange {
    contrast: String,
    /// Contiguous ψ interval around zero where the interval excludes zero.
    significant_psi: Option<(f64, f64)>,
}

#[derive(Serialize)]
struct SensitivitySummary {
    psi_ranges: Vec<ContrastRange>,
    surface_points: usize,
    surface_unavailable: usize,
    /// Grid points where the lowest untreated level is below the highest.
    surface_monotone_points: usize,
    fine_cuts_used: Vec<f64>,
    fine_cuts_merged: Vec<f64>,
    fine_widened: Vec<Option<bool>>,
}

fn sensitivity(ctx: &mut Ctx) -> Result<StageOutcome> {
    let p = prepare(ctx)?;
    let run = matched_run(ctx, &p)?;
    let sens = ctx.cfg.sensitivity.clone();
    let y = &p.inputs.outcome;
    let e_max = &p.inputs.e_max;
    let treated = &p.inputs.treated;
    let max_bins = ctx.cfg.max_bins()?;
    let contrasts = ctx.cfg.contrasts();

    let level: Vec<usize> = e_max.iter().map(|&e| max_bins.level(e)).collect();
    let props = class_propensities(&p.space.rows, &level, max_bins.n_levels())?;
    let own: Vec<f64> = level.iter().zip(&props).map(|(&l, pr)| pr[l]).collect();
    let mut srun = run.clone();
    srun.config.n_boot = sens.n_boot;
    let rows = psi_sweep(
        &srun,
        y,
        e_max,
        &own,
        &sens.psi_grid,
        sens.double_log,
        &contrasts,
        ctx.seed_for("psi"),
    )?;
    let surface = quantization_sweep(&run, y, e_max, treated, &sens.rho1_grid, &sens.rho2_grid)?;
    let coarse = srun.estimate(y, &[], ctx.seed_for("granular"))?;
    let granular = granular_bins(
        &srun,
        y,
        e_max,
        treated,
        &sens.fine_cuts,
        sens.min_bin_size,
        &coarse,
        &max_bins,
        ctx.seed_for("granular"),
    )?;

    let last = 2 * (max_bins.n_levels() - 1);
    let summary = SensitivitySummary {
        psi_ranges: contrasts
            .iter()
            .enumerate()
            .map(|(j, &(h, l))| ContrastRange {
                contrast: format!("{}-{}", tables::arm_name(h, &p.bins), tables::arm_name(l, &p.bins)),
                significant_psi: significant_psi_range(&rows, j),
            })
            .collect(),
        surface_points: surface.len(),
        surface_unavailable: surface.iter().filter(|s| !s.available()).count(),
        surface_monotone_points: surface
            .iter()
            .filter(|s| matches!((s.apo[0], s.apo[last]), (Some(a), Some(b)) if a < b))
            .count(),
        fine_cuts_used: granular.bins.cuts.clone(),
        fine_cuts_merged: granular.merged_cuts.clone(),
        fine_widened: granular.widened.clone(),
    };

    let mut dir = StageDir::create(&ctx.out, Stage::Sensitivity)?;
    write_psi_csv(&dir.file("sensitivity_psi.csv"), &rows, |l| p.bins.label(l))?;
    write_surface_csv(&dir.file("quantization_surface.csv"), &surface)?;
    write_granular_csv(&dir.file("granular_bins.csv"), &granular)?;
    let path = dir.file("summary.json");
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    dir.commit(ctx, Stage::Sensitivity)
}

/// `level, lower, upper, arm_treated, estimate, ci_low, ci_high, n, widened`.
fn write_granular_csv(path: &Path, g: &GranularResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "level", "lower", "upper", "arm_treated", "estimate", "ci_low", "ci_high", "n", "widened",
    ])?;
    let levels = g.bins.n_levels();
    for a in &g.estimates.arms {
        let l = a.arm / 2;
        let lower = if l == 0 { 0.0 } else { g.bins.cuts[l - 1] };
        let upper = if l + 1 == levels { 1.0 } else { g.bins.cuts[l] };
        let widened = if a.arm % 2 == 0 { g.widened[l] } else { None };
        w.write_record([
            l.to_string(),
            lower.to_string(),
            upper.to_string(),
            (a.arm % 2).to_string(),
            tables::fmt_opt(a.estimate),
            tables::fmt_opt(a.ci.map(|c| c.0)),
            tables::fmt_opt(a.ci.map(|c| c.1)),
            a.n.to_string(),
            widened.map_or("NA".to_string(), |b| u8::from(b).to_string()),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn baselines(ctx: &mut Ctx) -> Result<StageOutcome> {
    let p = prepare(ctx)?;
    let n_arms = 2 * p.bins.n_levels();
    let y = &p.inputs.outcome;
    let opts = &ctx.cfg.baselines;
    let naive = naive_average(y, &p.arms, n_arms, opts.replicates, opts.train_fraction, ctx.seed_for("naive"));
    let regression = outcome_regression(&p.space.rows, y, &p.arms, n_arms)?;
    if regression.separated {
        warn!("outcome regression hit separation; ridge fallback used");
    }
    let propensity = propensity_match(&p.space.rows, y, &p.arms, n_arms)?;
    let mut rows = Vec::new();
    for a in 0..n_arms {
        rows.push(BaselineRow {
            method: "naive".into(),
            arm: a,
            estimate: naive[a].mean,
            spread: naive[a].sd,
        });
    }
    for (method, apo) in [("regression", &regression.apo), ("propensity", &propensity)] {
        for (a, v) in apo.iter().enumerate() {
            rows.push(BaselineRow {
                method: method.into(),
                arm: a,
                estimate: *v,
                spread: None,
            });
        }
    }
    let mwu = missingness(&p)?;
    let mut dir = StageDir::create(&ctx.out, Stage::Baselines)?;
    write_baselines_csv(&dir.file("baselines.csv"), &rows, |l| p.bins.label(l))?;
    write_mwu_csv(&dir.file("mwu.csv"), &mwu)?;
    dir.commit(ctx, Stage::Baselines)
}

/// Discharge mRS of analysed patients against excluded patients whose
/// outcome was readable, and of patients with usable EEG against those
/// without.
fn missingness(p: &Prepared) -> Result<Vec<MwuRow>> {
    let analysed: Vec<f64> = p.inputs.mrs.iter().map(|&m| f64::from(m)).collect();
    let artifact: Vec<f64> = p
        .src
        .loaded
        .cohort
        .patients
        .iter()
        .filter(|pt| !p.inputs.ids.contains(&pt.id))
        .map(|pt| f64::from(pt.outcome_mrs))
        .collect();
    let excluded = |pred: &dyn Fn(ExclusionReason) -> bool| -> Vec<f64> {
        p.src
            .loaded
            .exclusions
            .iter()
            .filter(|e| pred(e.reason))
            .filter_map(|e| e.outcome_mrs.map(f64::from))
            .collect()
    };
    let mut all_excluded = excluded(&|_| true);
    all_excluded.extend(&artifact);
    let mut with_eeg = analysed.clone();
    with_eeg.extend(&artifact);
    let no_eeg = excluded(&|r| matches!(r, ExclusionReason::NoEeg | ExclusionReason::ShortEeg));
    let mut out = Vec::new();
    for (name, a, b) in [
        ("analysed_vs_excluded", &analysed, &all_excluded),
        ("eeg_vs_no_eeg", &with_eeg, &no_eeg),
    ] {
        if a.is_empty() || b.is_empty() {
            warn!("missingness comparison {name} skipped: one group is empty");
            continue;
        }
        out.push(MwuRow {
            comparison: name.into(),
            variable: "mrs".into(),
            n_a: a.len(),
            n_b: b.len(),
            result: mann_whitney_u(a, b)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
