//! Per-repeat metrics: `metrics.jsonl` holds one `RepeatReport` per line and
//! `metrics.csv` is the flat `run,mode,alpha_max,repeat,metric,value` table.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use amtl::model::Mode;
use amtl::trainer::RepeatReport;

use crate::error::{CliError, Result};

pub const CSV_HEADER: &str = "run,mode,alpha_max,repeat,metric,value";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub run: String,
    pub mode: Mode,
    pub alpha_max: f64,
    pub repeat: usize,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.run, self.mode, self.alpha_max, self.repeat, self.metric, self.value
        )
    }
}

/// Flattens reports into one row per repeat and metric.
pub fn flat_rows(run: &str, alpha_max: f64, reports: &[RepeatReport]) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for rep in reports {
        let mut push = |metric: String, value: f64| {
            rows.push(MetricRow {
                run: run.to_string(),
                mode: rep.mode,
                alpha_max,
                repeat: rep.repeat,
                metric,
                value,
            })
        };
        push("alpha_effective".into(), rep.alpha_effective);
        push("learning_rate".into(), rep.learning_rate);
        for eval in [&rep.dev, &rep.test] {
            push(format!("{}_fer", eval.split), eval.overall_fer);
            for a in &eval.per_age_fer {
                push(format!("{}_fer_age{}", eval.split, a.age_group), a.fer);
            }
        }
        let end = rep.final_losses();
        push("loss_senone".into(), end.senone);
        if let Some(v) = end.speaker {
            push("loss_speaker".into(), v);
        }
        if let Some(v) = end.age {
            push("loss_age".into(), v);
        }
        push("best_dev".into(), if rep.best_dev { 1.0 } else { 0.0 });
    }
    rows
}

pub fn csv_text(rows: &[MetricRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.to_csv());
    }
    out
}

pub fn append_jsonl(path: &Path, report: &RepeatReport) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let line = serde_json::to_string(report).expect("report serializes");
    writeln!(f, "{line}")?;
    f.sync_data()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<RepeatReport>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                CliError::Core(amtl::Error::format(
                    "metrics",
                    format!("{} line {}: {e}", path.display(), i + 1),
                ))
            })
        })
        .collect()
}

/// Rewrites `path` to hold exactly `reports`, one per line.
pub fn write_jsonl(path: &Path, reports: &[RepeatReport]) -> Result<()> {
    let mut text = String::new();
    for r in reports {
        text += &serde_json::to_string(r).expect("report serializes");
        text.push('\n');
    }
    amtl::formats::write_atomic(path, text.as_bytes())?;
    Ok(())
}
