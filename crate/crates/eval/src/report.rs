//! Evaluation report: one row per sample, aggregates recomputed from rows,
//! serialized as JSON plus a rendered markdown table.

use crate::motion::MotionEnd;
use crate::EvalError;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Per-sample metrics; absent entries simply were not measured in this mode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eta: Option<f64>,
    /// PSNR of the tokenizer's own reconstruction of the reference clip.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr_tokenizer: Option<f64>,
    /// PSNR of the fully generated clip against the reference.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr_generated: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ssim_tokenizer: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ssim_generated: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diversity_pixel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diversity_feature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub motion_end_detected: Option<MotionEnd>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub motion_end_script: Option<MotionEnd>,
}

/// Mean over the rows where a metric is present.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanCount {
    pub mean: f64,
    pub count: usize,
}

fn mean_count(values: impl Iterator<Item = f64>) -> Option<MeanCount> {
    let values: Vec<f64> = values.collect();
    if values.is_empty() {
        return None;
    }
    Some(MeanCount {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        count: values.len(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr_tokenizer: Option<MeanCount>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr_generated: Option<MeanCount>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ssim_tokenizer: Option<MeanCount>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ssim_generated: Option<MeanCount>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diversity_pixel: Option<MeanCount>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diversity_feature: Option<MeanCount>,
    /// Mean detected end frame over rows that ended.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub motion_end_detected: Option<MeanCount>,
    pub motion_no_end_count: usize,
    /// Fraction of rows where detector and script agree (both present).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub motion_end_agreement: Option<MeanCount>,
}

impl Aggregates {
    pub fn from_rows(rows: &[SampleRow]) -> Aggregates {
        Aggregates {
            psnr_tokenizer: mean_count(rows.iter().filter_map(|r| r.psnr_tokenizer)),
            psnr_generated: mean_count(rows.iter().filter_map(|r| r.psnr_generated)),
            ssim_tokenizer: mean_count(rows.iter().filter_map(|r| r.ssim_tokenizer)),
            ssim_generated: mean_count(rows.iter().filter_map(|r| r.ssim_generated)),
            diversity_pixel: mean_count(rows.iter().filter_map(|r| r.diversity_pixel)),
            diversity_feature: mean_count(rows.iter().filter_map(|r| r.diversity_feature)),
            motion_end_detected: mean_count(
                rows.iter()
                    .filter_map(|r| r.motion_end_detected.and_then(MotionEnd::frame))
                    .map(|f| f as f64),
            ),
            motion_no_end_count: rows
                .iter()
                .filter(|r| r.motion_end_detected == Some(MotionEnd::NoEnd))
                .count(),
            motion_end_agreement: mean_count(rows.iter().filter_map(|r| {
                match (r.motion_end_detected, r.motion_end_script) {
                    (Some(d), Some(s)) => Some(if d == s { 1.0 } else { 0.0 }),
                    _ => None,
                }
            })),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_kind: String,
    /// "deterministic" or "stochastic".
    pub mode: String,
    pub checkpoint: String,
    pub rows: Vec<SampleRow>,
    pub aggregates: Aggregates,
}

impl EvalReport {
    pub fn new(dataset_kind: &str, mode: &str, checkpoint: &str, rows: Vec<SampleRow>) -> EvalReport {
        let aggregates = Aggregates::from_rows(&rows);
        EvalReport {
            dataset_kind: dataset_kind.to_string(),
            mode: mode.to_string(),
            checkpoint: checkpoint.to_string(),
            rows,
            aggregates,
        }
    }

    /// Invariant check: stored aggregates must equal a fresh recomputation.
    pub fn aggregates_consistent(&self) -> bool {
        self.aggregates == Aggregates::from_rows(&self.rows)
    }

    pub fn save_json(&self, path: &Path) -> Result<(), EvalError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<EvalReport, EvalError> {
        let file = std::fs::File::open(path)?;
        let report: EvalReport = serde_json::from_reader(file)?;
        if !report.aggregates_consistent() {
            return Err(EvalError::Input(format!(
                "report {} aggregates do not match its rows",
                path.display()
            )));
        }
        Ok(report)
    }

    /// Markdown rendering: one table row per sample plus an aggregate footer.
    pub fn to_markdown(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
        }
        fn end_cell(v: Option<MotionEnd>) -> String {
            match v {
                Some(MotionEnd::Frame(f)) => f.to_string(),
                Some(MotionEnd::NoEnd) => "no-end".into(),
                None => "-".into(),
            }
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# Evaluation: {} ({} mode)\n\ncheckpoint: `{}`\n",
            self.dataset_kind, self.mode, self.checkpoint
        );
        out.push_str(
            "| id | eta | psnr tok | psnr gen | ssim tok | ssim gen | div px | div feat | end det | end script |\n",
        );
        out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                r.id,
                cell(r.eta),
                cell(r.psnr_tokenizer),
                cell(r.psnr_generated),
                cell(r.ssim_tokenizer),
                cell(r.ssim_generated),
                cell(r.diversity_pixel),
                cell(r.diversity_feature),
                end_cell(r.motion_end_detected),
                end_cell(r.motion_end_script),
            );
        }
        let a = &self.aggregates;
        let agg = |m: Option<MeanCount>| {
            m.map(|m| format!("{:.3} (n={})", m.mean, m.count)).unwrap_or_else(|| "-".into())
        };
        let _ = writeln!(out, "\n## Aggregates\n");
        let _ = writeln!(out, "- PSNR tokenizer: {}", agg(a.psnr_tokenizer));
        let _ = writeln!(out, "- PSNR generated: {}", agg(a.psnr_generated));
        let _ = writeln!(out, "- SSIM tokenizer: {}", agg(a.ssim_tokenizer));
        let _ = writeln!(out, "- SSIM generated: {}", agg(a.ssim_generated));
        let _ = writeln!(out, "- diversity (pixel): {}", agg(a.diversity_pixel));
        let _ = writeln!(out, "- diversity (feature): {}", agg(a.diversity_feature));
        let _ = writeln!(out, "- motion end (detected): {}", agg(a.motion_end_detected));
        let _ = writeln!(out, "- clips with no end: {}", a.motion_no_end_count);
        let _ = writeln!(out, "- detector/script agreement: {}", agg(a.motion_end_agreement));
        out
    }
}
