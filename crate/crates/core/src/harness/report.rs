use std::fmt::Write as _;
use std::str::FromStr;

use super::{HarnessError, TrialReport};
use crate::metrics::{format_percent, ConfusionMatrix, MetricSet, METRIC_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Markdown,
    Json,
}

impl FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(ReportFormat::Text),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            _ => Err(HarnessError::UnknownFormat(s.to_string())),
        }
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn render(&self, format: ReportFormat) -> String {
        let mut out = String::new();
        match format {
            ReportFormat::Markdown => {
                let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
                out.push_str(&line(&self.header));
                out.push_str(&line(&vec!["---".to_string(); self.header.len()]));
                for r in &self.rows {
                    out.push_str(&line(r));
                }
            }
            _ => {
                let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
                for r in &self.rows {
                    for (w, c) in widths.iter_mut().zip(r) {
                        *w = (*w).max(c.chars().count());
                    }
                }
                let line = |cells: &[String]| {
                    let padded: Vec<String> = cells
                        .iter()
                        .zip(&widths)
                        .enumerate()
                        .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                        .collect();
                    format!("{}\n", padded.join("  ").trim_end())
                };
                out.push_str(&line(&self.header));
                for r in &self.rows {
                    out.push_str(&line(r));
                }
            }
        }
        out
    }
}

fn metric_rows(label: &str, per_fold: &[Option<&MetricSet>], average: &MetricSet) -> Vec<Vec<String>> {
    METRIC_NAMES
        .iter()
        .enumerate()
        .map(|(m, name)| {
            let mut row = vec![format!("{label} {name}")];
            row.extend(per_fold.iter().map(|f| format_percent(f.and_then(|s| s.values()[m]))));
            row.push(format_percent(average.values()[m]));
            row
        })
        .collect()
}

fn fold_table(trial: &TrialReport) -> Table {
    let mut header = vec!["Class / metric".to_string()];
    header.extend(trial.folds.iter().map(|f| format!("Fold {}", f.index + 1)));
    header.push("Average".into());
    let mut rows = Vec::new();
    for avg in &trial.averages {
        let per_fold: Vec<Option<&MetricSet>> = trial
            .folds
            .iter()
            .map(|f| f.class(&avg.label).map(|c| &c.metrics))
            .collect();
        rows.extend(metric_rows(avg.label.name(), &per_fold, &avg.metrics));
    }
    let overall: Vec<Option<&MetricSet>> = trial.folds.iter().map(|f| Some(&f.overall)).collect();
    rows.extend(metric_rows("Overall", &overall, &trial.overall_average));
    Table { header, rows }
}

fn confusion_table(cm: &ConfusionMatrix, format: ReportFormat) -> Table {
    let mut header = vec!["Actual \\ Predicted".to_string()];
    header.extend(cm.labels().iter().map(|l| l.name().to_string()));
    header.push("Total".into());
    let rows = cm
        .labels()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let mut row = vec![l.name().to_string()];
            for (j, v) in cm.cells()[i].iter().enumerate() {
                row.push(match (i == j, format) {
                    (true, ReportFormat::Markdown) => format!("**{v}**"),
                    (true, _) => format!("[{v}]"),
                    _ => v.to_string(),
                });
            }
            row.push(cm.row_sum(i).to_string());
            row
        })
        .collect();
    Table { header, rows }
}

fn pooled_table(trial: &TrialReport) -> Table {
    let mut header = vec!["Class".to_string(), "Support".to_string()];
    header.extend(METRIC_NAMES.iter().map(|m| m.to_string()));
    let rows = trial
        .pooled
        .iter()
        .map(|c| {
            let mut row = vec![c.label.name().to_string(), c.support.to_string()];
            row.extend(c.metrics.values().iter().map(|v| format_percent(*v)));
            row
        })
        .collect();
    Table { header, rows }
}

/// Renders a trial. Percentages carry two decimals rounded half-up; undefined
/// values print as "n/a"; diagonal confusion cells are marked.
pub fn emit_report(trial: &TrialReport, format: ReportFormat) -> Result<String, HarnessError> {
    if format == ReportFormat::Json {
        let mut s = serde_json::to_string_pretty(trial).map_err(std::io::Error::from)?;
        s.push('\n');
        return Ok(s);
    }
    let heading = |out: &mut String, title: &str| match format {
        ReportFormat::Markdown => {
            let _ = writeln!(out, "## {title}\n");
        }
        _ => {
            let _ = writeln!(out, "{title}\n{}", "=".repeat(title.len()));
        }
    };

    let mut out = String::new();
    heading(&mut out, "Per-fold metrics");
    out.push_str(&fold_table(trial).render(format));
    out.push('\n');
    heading(&mut out, "Pooled confusion matrix (rows actual, columns predicted)");
    out.push_str(&confusion_table(&trial.pooled_confusion, format).render(format));
    out.push('\n');
    heading(&mut out, "Pooled metrics");
    out.push_str(&pooled_table(trial).render(format));

    if !trial.excluded.is_empty() || trial.recommended_sample.is_some() {
        out.push('\n');
        heading(&mut out, "Notes");
        for e in &trial.excluded {
            let _ = writeln!(out, "- excluded {}: only {} images", e.label, e.support);
        }
        if let Some(n) = trial.recommended_sample {
            let _ = writeln!(out, "- recommended sample size: {n}");
        }
    }
    Ok(out)
}
