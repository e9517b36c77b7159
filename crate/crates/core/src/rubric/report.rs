use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::aggregate::round_1dp;
use crate::domain::AggregateRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Table,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" | "table-text" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?}; use table or csv")),
        }
    }
}

/// What the first numeric column counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeColumn {
    /// Annotations in the group.
    SampleSize,
    /// Distinct buggy programs in the group.
    NumPrograms,
}

const METRIC_HEADERS: [&str; 6] = [
    "Correct %",
    "Num. Words",
    "Num. Sentences",
    "Gives Fix %",
    "Mentions Variables %",
    "Mentions Lines %",
];

fn metrics(row: &AggregateRow) -> [Option<f64>; 6] {
    [
        row.correct_pct,
        row.mean_words,
        row.mean_sentences,
        row.gives_fix_pct,
        row.mentions_variables_pct,
        row.mentions_lines_pct,
    ]
}

fn size(row: &AggregateRow, column: SizeColumn) -> usize {
    match column {
        SizeColumn::SampleSize => row.sample_size,
        SizeColumn::NumPrograms => row.num_programs,
    }
}

/// Renders rows in the given order: a header line and one line per row.
///
/// The text table shows half-up 1-decimal values and `-` for absent means.
/// CSV carries the unrounded values and leaves absent cells empty.
pub fn render_report(rows: &[AggregateRow], format: ReportFormat, column: SizeColumn) -> String {
    let size_header = match column {
        SizeColumn::SampleSize => "Sample Size",
        SizeColumn::NumPrograms => "Num. Programs",
    };
    let mut header = vec!["Group", size_header];
    header.extend(METRIC_HEADERS);

    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&header).expect("in-memory write");
            for row in rows {
                let mut record = vec![row.label.clone(), size(row, column).to_string()];
                record.extend(metrics(row).iter().map(|m| m.map(|v| v.to_string()).unwrap_or_default()));
                w.write_record(&record).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
        }
        ReportFormat::Table => {
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|row| {
                    let mut cells = vec![row.label.clone(), size(row, column).to_string()];
                    cells.extend(metrics(row).iter().map(|m| match m {
                        Some(v) => format!("{:.1}", round_1dp(*v)),
                        None => "-".to_string(),
                    }));
                    cells
                })
                .collect();
            let widths: Vec<usize> = (0..header.len())
                .map(|i| {
                    body.iter()
                        .map(|r| r[i].chars().count())
                        .chain(std::iter::once(header[i].len()))
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let line = |cells: &[&str]| -> String {
                cells
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        if i == 0 {
                            format!("{c:<w$}", w = widths[i])
                        } else {
                            format!("{c:>w$}", w = widths[i])
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" | ")
                    .trim_end()
                    .to_string()
            };
            let mut out = line(&header);
            out.push('\n');
            for r in &body {
                out.push_str(&line(&r.iter().map(String::as_str).collect::<Vec<_>>()));
                out.push('\n');
            }
            out
        }
    }
}
