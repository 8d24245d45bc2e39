//! Consolidated report over the stage outputs of one run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{Ctx, Stage, StageDir, StageOutcome, MANIFEST};
use crate::error::{Error, Result};

/// Columns of `plot_apo.csv` (arm against APO with interval).
pub const PLOT_APO_COLUMNS: [&str; 5] = ["arm_burden", "arm_treated", "estimate", "ci_low", "ci_high"];
/// Columns of `plot_psi.csv` (ψ against APO).
pub const PLOT_PSI_COLUMNS: [&str; 6] = ["psi", "arm_burden", "arm_treated", "estimate", "ci_low", "ci_high"];
/// Columns of `plot_surface.csv` (APO over the two quantization cuts).
pub const PLOT_SURFACE_COLUMNS: [&str; 5] = ["rho1", "rho2", "arm_burden", "arm_treated", "apo"];

/// A CSV file held as text cells.
struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, 1, e))?;
        let headers = rdr
            .headers()
            .map_err(|e| Error::csv(path, 1, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::csv(path, i + 2, e))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Table { headers, rows })
    }

    fn col(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    /// The named columns in the given order; `None` when one is absent.
    fn project(&self, names: &[&str]) -> Option<Table> {
        let idx: Vec<usize> = names.iter().map(|n| self.col(n)).collect::<Option<_>>()?;
        Some(Table {
            headers: names.iter().map(|s| s.to_string()).collect(),
            rows: self.rows.iter().map(|r| idx.iter().map(|&i| r[i].clone()).collect()).collect(),
        })
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|r| {
                    let obj: Map<String, Value> = self.headers.iter().cloned().zip(r.iter().map(|c| cell(c))).collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }

    fn markdown(&self, out: &mut String) {
        let _ = writeln!(out, "| {} |", self.headers.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(self.headers.len()));
        for r in &self.rows {
            let _ = writeln!(out, "| {} |", r.join(" | "));
        }
        out.push('\n');
    }
}

fn cell(c: &str) -> Value {
    if c == "NA" || c.is_empty() {
        return Value::Null;
    }
    match c.parse::<f64>() {
        Ok(v) if v.is_finite() => json!(v),
        _ => Value::String(c.to_string()),
    }
}

/// Shortens numeric cells to four decimals for the human-readable report.
fn rounded(t: &Table) -> Table {
    Table {
        headers: t.headers.clone(),
        rows: t
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| match c.parse::<f64>() {
                        Ok(v) if c.contains('.') => format!("{v:.4}"),
                        _ => c.clone(),
                    })
                    .collect()
            })
            .collect(),
    }
}

/// Stage outputs the report consumes: (key, stage, file).
const SOURCES: [(&str, Stage, &str); 10] = [
    ("apo", Stage::Estimate, "apo.csv"),
    ("contrasts", Stage::Estimate, "contrasts.csv"),
    ("weights", Stage::Match, "weights.csv"),
    ("pruning", Stage::Match, "pruning.csv"),
    ("arm_counts", Stage::Match, "arm_counts.csv"),
    ("psi", Stage::Sensitivity, "sensitivity_psi.csv"),
    ("surface", Stage::Sensitivity, "quantization_surface.csv"),
    ("granular", Stage::Sensitivity, "granular_bins.csv"),
    ("baselines", Stage::Baselines, "baselines.csv"),
    ("mwu", Stage::Baselines, "mwu.csv"),
];

pub(super) fn report(ctx: &mut Ctx) -> Result<StageOutcome> {
    let stages: Vec<Stage> = Stage::ALL
        .into_iter()
        .filter(|&s| s != Stage::Report && ctx.stage_file(s, MANIFEST).exists())
        .collect();
    if stages.is_empty() {
        let expected = Stage::ALL[..7].iter().map(|&s| ctx.stage_file(s, MANIFEST)).collect();
        return Err(Error::MissingInputs(expected));
    }

    let mut tables = BTreeMap::new();
    let mut missing = Vec::new();
    for (key, stage, file) in SOURCES {
        let path = ctx.stage_file(stage, file);
        if path.exists() {
            ctx.declare(key, &path);
            tables.insert(key, Table::read(&path)?);
        } else {
            missing.push(format!("{}/{file}", stage.name()));
        }
    }
    let truth_path = ctx.stage_file(Stage::Simulate, "arm_truth.csv");
    let truth = if truth_path.exists() {
        ctx.declare("truth", &truth_path);
        Some(Table::read(&truth_path)?)
    } else {
        None
    };
    let summary_path = ctx.stage_file(Stage::Sensitivity, "summary.json");
    let sens_summary: Option<Value> = if summary_path.exists() {
        ctx.declare("sensitivity_summary", &summary_path);
        let text = fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
        Some(serde_json::from_str(&text)?)
    } else {
        missing.push(format!("{}/summary.json", Stage::Sensitivity.name()));
        None
    };

    let mut dir = StageDir::create(&ctx.out, Stage::Report)?;
    let plots: [(&str, &str, &[&str]); 3] = [
        ("apo", "plot_apo.csv", &PLOT_APO_COLUMNS),
        ("psi", "plot_psi.csv", &PLOT_PSI_COLUMNS),
        ("surface", "plot_surface.csv", &PLOT_SURFACE_COLUMNS),
    ];
    for (key, file, cols) in plots {
        if let Some(t) = tables.get(key) {
            match t.project(cols) {
                Some(p) => p.write(&dir.file(file))?,
                None => missing.push(format!("{file} (source lacks documented columns)")),
            }
        }
    }
    let ranking = tables.get("weights").and_then(|t| {
        let mut p = t.project(&["rank", "covariate", "weight"])?;
        p.rows.sort_by_key(|r| r[0].parse::<usize>().unwrap_or(usize::MAX));
        Some(p)
    });
    if let Some(r) = &ranking {
        r.write(&dir.file("weight_ranking.csv"))?;
    }
    let pruning = tables.get("pruning").map(pruning_totals);

    let mut agg = Map::new();
    agg.insert("seed".into(), json!(ctx.seed));
    agg.insert("config_hash".into(), json!(ctx.cfg.hash()?));
    agg.insert("missing".into(), json!(missing));
    for (k, t) in &tables {
        agg.insert((*k).into(), t.json());
    }
    if let Some(r) = &ranking {
        agg.insert("weight_ranking".into(), r.json());
    }
    if let Some(p) = &pruning {
        agg.insert("pruning_totals".into(), p.json());
    }
    if let Some(t) = &truth {
        agg.insert("truth".into(), t.json());
    }
    if let Some(s) = &sens_summary {
        agg.insert("sensitivity_summary".into(), s.clone());
    }
    let path = dir.file("report.json");
    let mut text = serde_json::to_string_pretty(&Value::Object(agg))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    let md = markdown(ctx, &tables, truth.as_ref(), ranking.as_ref(), pruning.as_ref(), sens_summary.as_ref(), &missing);
    let path = dir.file("report.md");
    fs::write(&path, md).map_err(|e| Error::io(&path, e))?;
    dir.commit(ctx, Stage::Report)
}

fn pruning_totals(t: &Table) -> Table {
    let sum = |name: &str| -> u64 {
        t.col(name)
            .map(|c| t.rows.iter().filter_map(|r| r[c].parse::<u64>().ok()).sum())
            .unwrap_or(0)
    };
    Table {
        headers: vec!["replicates".into(), "n_queries".into(), "n_pruned".into()],
        rows: vec![vec![
            t.rows.len().to_string(),
            sum("n_queries").to_string(),
            sum("n_pruned").to_string(),
        ]],
    }
}

/// APO table with the simulator's population-standardized truth for the
/// untreated arms when a ground-truth file exists.
fn apo_with_truth(apo: &Table, truth: Option<&Table>) -> Table {
    let mut t = rounded(apo);
    let Some(truth) = truth else { return t };
    let (Some(s), Some(l), Some(v)) = (truth.col("summary"), truth.col("label"), truth.col("true_apo")) else {
        return t;
    };
    let (Some(ab), Some(at)) = (apo.col("arm_burden"), apo.col("arm_treated")) else {
        return t;
    };
    t.headers.push("true_apo (e_max)".into());
    for (row, raw) in t.rows.iter_mut().zip(&apo.rows) {
        let hit = (raw[at] == "0")
            .then(|| truth.rows.iter().find(|r| r[s] == "e_max" && r[l] == raw[ab]))
            .flatten();
        row.push(hit.map_or("".into(), |r| rounded_cell(&r[v])));
    }
    t
}

fn rounded_cell(c: &str) -> String {
    c.parse::<f64>().map_or(c.to_string(), |v| format!("{v:.4}"))
}

fn markdown(
    ctx: &Ctx,
    tables: &BTreeMap<&str, Table>,
    truth: Option<&Table>,
    ranking: Option<&Table>,
    pruning: Option<&Table>,
    sens: Option<&Value>,
    missing: &[String],
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Run report\n");
    let _ = writeln!(out, "- seed: {}", ctx.seed);
    let _ = writeln!(out, "- config hash: {}", ctx.cfg.hash().unwrap_or_default());
    let _ = writeln!(out, "- arm summary: {}\n", ctx.cfg.analysis.summary.as_str());

    let section = |out: &mut String, title: &str, t: Option<Table>| {
        let _ = writeln!(out, "## {title}\n");
        match t {
            Some(t) => t.markdown(out),
            None => out.push_str("_not available_\n\n"),
        }
    };
    section(&mut out, "Average potential outcomes", tables.get("apo").map(|t| apo_with_truth(t, truth)));
    section(&mut out, "Contrasts", tables.get("contrasts").map(rounded));
    section(&mut out, "Arm sizes", tables.get("arm_counts").map(rounded));
    section(&mut out, "Matching weight ranking", ranking.map(rounded));
    section(&mut out, "Pruning", pruning.map(rounded));

    let _ = writeln!(out, "## Sensitivity\n");
    match sens {
        Some(s) => {
            if let Some(ranges) = s["psi_ranges"].as_array() {
                for r in ranges {
                    let range = match r["significant_psi"].as_array() {
                        Some(v) => format!("[{}, {}]", v[0], v[1]),
                        None => "none (not significant at ψ = 0)".into(),
                    };
                    let _ = writeln!(out, "- {}: interval excludes zero for ψ in {range}", r["contrast"].as_str().unwrap_or("?"));
                }
            }
            let _ = writeln!(
                out,
                "- quantization surface: {} grid points, {} unavailable, lowest level below highest at {}",
                s["surface_points"], s["surface_unavailable"], s["surface_monotone_points"]
            );
            let _ = writeln!(out, "- fine E_max cuts used: {}, merged away: {}\n", s["fine_cuts_used"], s["fine_cuts_merged"]);
        }
        None => out.push_str("_not available_\n\n"),
    }
    section(&mut out, "Baseline estimators", tables.get("baselines").map(rounded));
    section(&mut out, "Missingness (Mann-Whitney U on discharge mRS)", tables.get("mwu").map(rounded));

    let _ = writeln!(out, "## Missing stage outputs\n");
    if missing.is_empty() {
        out.push_str("none\n");
    } else {
        for m in missing {
            let _ = writeln!(out, "- {m}");
        }
    }
    out
}
