//! Experiment report structure and its markdown / csv renderings.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KgdgError, Result};
use crate::io::write_atomic;
use crate::learn::ModelKind;
use crate::metrics::{format_percent, seeded_summary};
use crate::model::FeatureSet;

use super::Mode;

/// Mean and population std of one metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
    pub per_seed: Vec<f64>,
}

impl Summary {
    pub fn from_values(per_seed: Vec<f64>) -> Result<Summary> {
        let (mean, std) = seeded_summary(&per_seed)?;
        Ok(Summary { mean, std, n_seeds: per_seed.len(), per_seed })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub accuracy: Summary,
    pub macro_f1: Summary,
    /// Absent when some seed had no grade qualifying for one-vs-rest AUC.
    pub auc: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    /// Aligned with `ReportBlock::columns`.
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightChoice {
    pub target: String,
    pub seed: u64,
    pub alpha_dl: f64,
    pub alpha_kl: f64,
}

/// One results table: a method per row, target domains then `Average` as
/// columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBlock {
    pub title: String,
    pub sources: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<MethodRow>,
    /// Summed pairwise domain KL over the block's domains.
    pub kl_before: f64,
    /// Same quantity after alignment; absent when alignment is off.
    pub kl_after: Option<f64>,
    pub weights: Vec<WeightChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub model_kind: ModelKind,
    pub feature_set: FeatureSet,
    pub seeds: Vec<u64>,
    pub blocks: Vec<ReportBlock>,
    pub config_fingerprint: String,
    pub synthetic: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = KgdgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" | "markdown_table" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(KgdgError::InvalidConfig(format!("unknown report format `{other}`"))),
        }
    }
}

#[derive(Clone, Copy)]
enum Metric {
    Accuracy,
    MacroF1,
    Auc,
}

impl Metric {
    const ALL: [Metric; 3] = [Metric::Accuracy, Metric::MacroF1, Metric::Auc];

    fn key(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::MacroF1 => "macro_f1",
            Metric::Auc => "auc",
        }
    }

    fn heading(self) -> &'static str {
        match self {
            Metric::Accuracy => "Cross-domain accuracy (%)",
            Metric::MacroF1 => "Macro F1 (%)",
            Metric::Auc => "AUC-ROC, one-vs-rest macro (%)",
        }
    }

    fn of(self, c: &Cell) -> Option<&Summary> {
        match self {
            Metric::Accuracy => Some(&c.accuracy),
            Metric::MacroF1 => Some(&c.macro_f1),
            Metric::Auc => c.auc.as_ref(),
        }
    }
}

fn display_mean(s: &Summary) -> i64 {
    (s.mean * 1000.0).round() as i64
}

fn markdown_table(out: &mut String, block: &ReportBlock, metric: Metric) {
    let _ = writeln!(out, "### {}\n", metric.heading());
    let _ = writeln!(out, "| Method | {} |", block.columns.join(" | "));
    let _ = writeln!(out, "|---|{}", "---|".repeat(block.columns.len()));
    // best displayed value per column; ties all bold
    let best: Vec<Option<i64>> = (0..block.columns.len())
        .map(|j| block.rows.iter().filter_map(|r| metric.of(&r.cells[j]).map(display_mean)).max())
        .collect();
    for row in &block.rows {
        let cells: Vec<String> = row
            .cells
            .iter()
            .enumerate()
            .map(|(j, c)| match metric.of(c) {
                None => "n/a".to_string(),
                Some(s) => {
                    let text = format_percent(s.mean, s.std);
                    if Some(display_mean(s)) == best[j] {
                        format!("**{text}**")
                    } else {
                        text
                    }
                }
            })
            .collect();
        let _ = writeln!(out, "| {} | {} |", row.method, cells.join(" | "));
    }
    out.push('\n');
}

pub fn render_markdown(report: &ExperimentReport) -> String {
    let mut out = String::new();
    for block in &report.blocks {
        let _ = writeln!(out, "## {}\n", block.title);
        for m in Metric::ALL {
            markdown_table(&mut out, block, m);
        }
        match block.kl_after {
            Some(after) => {
                let _ = writeln!(
                    out,
                    "Domain KL (summed pairwise): {:.4} before alignment, {:.4} after.\n",
                    block.kl_before, after
                );
            }
            None => {
                let _ = writeln!(out, "Domain KL (summed pairwise): {:.4}; alignment off.\n", block.kl_before);
            }
        }
        if !block.weights.is_empty() {
            let list: Vec<String> =
                block.weights.iter().map(|w| format!("{}/seed {}: α_KL={:.1}", w.target, w.seed, w.alpha_kl)).collect();
            let _ = writeln!(out, "Weighted fusion α: {}.\n", list.join(", "));
        }
    }
    let seeds: Vec<String> = report.seeds.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "---\n");
    let _ =
        writeln!(out, "- Symbolic branch: {} on {} features.", report.model_kind.as_str(), report.feature_set.label());
    let _ = writeln!(
        out,
        "- Aggregation: each cell is mean±population std over {} seeds ({}), n={} per cell. Average is the per-seed mean over target columns.",
        report.seeds.len(),
        seeds.join(", "),
        report.seeds.len()
    );
    for note in &report.notes {
        let _ = writeln!(out, "- {note}");
    }
    let _ = writeln!(out, "- Best value per column in bold.");
    if report.synthetic {
        let _ = writeln!(out, "- Data: synthetic; not comparable with published numbers.");
    }
    let _ = writeln!(out, "- Config fingerprint: {}", report.config_fingerprint);
    out
}

pub fn render_csv(report: &ExperimentReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    let err = |e: csv::Error| KgdgError::Malformed(e.to_string());
    w.write_record(["block", "method", "column", "metric", "mean", "std", "n_seeds"]).map_err(err)?;
    for block in &report.blocks {
        for row in &block.rows {
            for (col, cell) in block.columns.iter().zip(&row.cells) {
                for m in Metric::ALL {
                    if let Some(s) = m.of(cell) {
                        w.write_record([
                            block.title.as_str(),
                            row.method.as_str(),
                            col.as_str(),
                            m.key(),
                            &s.mean.to_string(),
                            &s.std.to_string(),
                            &s.n_seeds.to_string(),
                        ])
                        .map_err(err)?;
                    }
                }
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| KgdgError::Malformed(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render_report(report: &ExperimentReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Markdown => Ok(render_markdown(report)),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).map_err(|e| KgdgError::Malformed(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
    }
}

pub fn emit_report(report: &ExperimentReport, format: ReportFormat, path: &Path) -> Result<()> {
    write_atomic(path, render_report(report, format)?.as_bytes())
}

pub fn parse_report(text: &str) -> Result<ExperimentReport> {
    serde_json::from_str(text).map_err(|e| KgdgError::Malformed(format!("report: {e}")))
}
