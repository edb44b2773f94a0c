//! Score records and the report tables rendered from them.
//!
//! Derived columns are always recomputed from the stored full-precision
//! scores. Text output prints scores with three decimals and point columns
//! with one; CSV output keeps full precision.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Partition, PartitionCounts, Setting};
use crate::error::Result;
use crate::metrics::{drop_points, f1_from_pr, improvement_points, Counts, ScoreMode, ScoreReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    EndToEnd,
    TwoStep,
    Classifier,
}

impl RecordKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecordKind::EndToEnd => "end_to_end",
            RecordKind::TwoStep => "two_step",
            RecordKind::Classifier => "classifier",
        }
    }
}

/// One evaluated (model, training setting, test setting) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub kind: RecordKind,
    pub dataset: String,
    /// Extractor name, or the classifier mode for classifier records.
    pub model: String,
    /// Classifier mode used as the first step of a two-step run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<String>,
    pub train_setting: Setting,
    pub test_setting: Setting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ScoreMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Counts>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ScoreRecord {
    pub fn from_report(
        kind: RecordKind,
        dataset: impl Into<String>,
        model: impl Into<String>,
        train_setting: Setting,
        test_setting: Setting,
        report: &ScoreReport,
    ) -> Self {
        ScoreRecord {
            kind,
            dataset: dataset.into(),
            model: model.into(),
            classifier: None,
            train_setting,
            test_setting,
            mode: Some(report.mode),
            counts: Some(report.counts()),
            precision: report.precision,
            recall: report.recall,
            f1: report.f1,
        }
    }

    /// Record from published precision and recall; F1 is recomputed.
    pub fn from_pr(
        kind: RecordKind,
        dataset: impl Into<String>,
        model: impl Into<String>,
        train_setting: Setting,
        test_setting: Setting,
        precision: f64,
        recall: f64,
    ) -> Result<Self> {
        Ok(ScoreRecord {
            kind,
            dataset: dataset.into(),
            model: model.into(),
            classifier: None,
            train_setting,
            test_setting,
            mode: None,
            counts: None,
            precision,
            recall,
            f1: f1_from_pr(precision, recall)?,
        })
    }

    pub fn with_classifier(mut self, classifier: impl Into<String>) -> Self {
        self.classifier = Some(classifier.into());
        self
    }

    /// File stem under which the record is stored.
    pub fn key(&self) -> String {
        let mut key = format!(
            "{}__{}__{}__{}",
            self.kind.as_str(),
            sanitize(&self.model),
            self.train_setting,
            self.test_setting
        );
        if let Some(c) = &self.classifier {
            key.push_str("__");
            key.push_str(&sanitize(c));
        }
        key
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Observed counts of one prepared partition, with the expected counts when
/// they were supplied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsEntry {
    pub dataset: String,
    pub partition: Partition,
    pub counts: PartitionCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<PartitionCounts>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    Stats,
    EndToEnd,
    Classifier,
    TwoStep,
}

impl TableKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TableKind::Stats => "stats",
            TableKind::EndToEnd => "end_to_end",
            TableKind::Classifier => "classifier",
            TableKind::TwoStep => "two_step",
        }
    }

    fn title(&self) -> &'static str {
        match self {
            TableKind::Stats => "Dataset statistics",
            TableKind::EndToEnd => "End-to-end extraction",
            TableKind::Classifier => "Zero-cardinality classification",
            TableKind::TwoStep => "Two-step extraction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Text(String),
    Count(usize),
    Score(f64),
    Points { value: f64, bold: bool },
    Empty,
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Count(n) => n.to_string(),
            Cell::Score(v) => format!("{v:.3}"),
            Cell::Points { value, bold: false } => format!("{value:.1}"),
            Cell::Points { value, bold: true } => format!("**{value:.1}**"),
            Cell::Empty => "-".into(),
        }
    }

    fn csv(&self) -> String {
        match self {
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
            Cell::Count(n) => n.to_string(),
            Cell::Score(v) | Cell::Points { value: v, .. } => v.to_string(),
            Cell::Empty => String::new(),
        }
    }

    /// Numeric value of score and point cells.
    pub fn value(&self) -> Option<f64> {
        match self {
            Cell::Score(v) | Cell::Points { value: v, .. } => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub kind: TableKind,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

pub const POINT_DROP: &str = "% point ↓";
pub const BOLD_POINT_DROP: &str = "% point ↓ (NZ/NZ vs WZ/WZ)";
pub const IMPROVEMENT: &str = "% ↑";

impl ReportTable {
    pub fn column(&self, header: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == header)
    }

    /// Cell at `row` under `header`.
    pub fn cell(&self, row: usize, header: &str) -> Option<&Cell> {
        self.rows.get(row)?.get(self.column(header)?)
    }

    /// Index of the first row whose leading text cells equal `key`.
    pub fn find_row(&self, key: &[&str]) -> Option<usize> {
        self.rows.iter().position(|r| {
            key.iter()
                .zip(r)
                .all(|(k, c)| matches!(c, Cell::Text(t) if t == k))
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.headers.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::text).collect()).collect();
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |items: &[String]| {
            let padded: Vec<String> = items
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
                .collect();
            format!("| {} |\n", padded.join(" | "))
        };
        let rule = format!("|{}|\n", widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|"));
        let mut out = format!("{}\n", self.kind.title());
        out.push_str(&line(&self.headers));
        out.push_str(&rule);
        for row in &cells {
            out.push_str(&line(row));
        }
        out
    }
}

fn text(s: impl Into<String>) -> Cell {
    Cell::Text(s.into())
}

fn score_or_empty(r: Option<&ScoreRecord>, f: impl Fn(&ScoreRecord) -> f64) -> Cell {
    r.map_or(Cell::Empty, |r| Cell::Score(f(r)))
}

/// Positions of first appearance, used to keep input order stable.
fn order_of<'a>(items: impl IntoIterator<Item = &'a str>) -> BTreeMap<&'a str, usize> {
    let mut order = BTreeMap::new();
    for s in items {
        let n = order.len();
        order.entry(s).or_insert(n);
    }
    order
}

pub fn stats_table(entries: &[StatsEntry]) -> ReportTable {
    let with_expected = entries.iter().any(|e| e.expected.is_some());
    let mut headers: Vec<String> = ["Dataset", "Partition", "Sentences with tuples", "Tuples", "Zero-tuple sentences"]
        .map(String::from)
        .to_vec();
    if with_expected {
        headers.push("Matches expected".into());
    }
    let rows = entries
        .iter()
        .map(|e| {
            let mut row = vec![
                text(&e.dataset),
                text(e.partition.as_str()),
                Cell::Count(e.counts.positive),
                Cell::Count(e.counts.tuples),
                Cell::Count(e.counts.zeros),
            ];
            if with_expected {
                row.push(match e.expected {
                    Some(x) => text(if x == e.counts { "yes" } else { "no" }),
                    None => Cell::Empty,
                });
            }
            row
        })
        .collect();
    ReportTable {
        kind: TableKind::Stats,
        headers,
        rows,
    }
}

/// One row per (dataset, training setting, model) with both test settings
/// side by side. `% point ↓` is the drop from the NZ test to the WZ test
/// within the row; the bold column, on WZ-trained rows, is the drop from the
/// model's NZ-trained NZ-tested F1 to its WZ-trained WZ-tested F1.
pub fn end_to_end_table(records: &[ScoreRecord]) -> ReportTable {
    let records: Vec<&ScoreRecord> = records.iter().filter(|r| r.kind == RecordKind::EndToEnd).collect();
    let find = |dataset: &str, model: &str, train: Setting, test: Setting| {
        records
            .iter()
            .rev()
            .find(|r| r.dataset == dataset && r.model == model && r.train_setting == train && r.test_setting == test)
            .copied()
    };
    let datasets = order_of(records.iter().map(|r| r.dataset.as_str()));
    let models = order_of(records.iter().map(|r| r.model.as_str()));
    let mut keys: Vec<(&str, Setting, &str)> = Vec::new();
    for r in &records {
        let k = (r.dataset.as_str(), r.train_setting, r.model.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.sort_by_key(|(d, s, m)| (datasets[d], *s, models[m]));

    let headers = [
        "Dataset",
        "Training setting",
        "Model",
        "NZ Prec.",
        "NZ Rec.",
        "NZ F1",
        "WZ Prec.",
        "WZ Rec.",
        "WZ F1",
        POINT_DROP,
        BOLD_POINT_DROP,
    ]
    .map(String::from)
    .to_vec();
    let rows = keys
        .into_iter()
        .map(|(dataset, train, model)| {
            let nz = find(dataset, model, train, Setting::NZ);
            let wz = find(dataset, model, train, Setting::WZ);
            let drop = match (nz, wz) {
                (Some(a), Some(b)) => Cell::Points {
                    value: drop_points(a.f1, b.f1),
                    bold: false,
                },
                _ => Cell::Empty,
            };
            let bold = match (train, find(dataset, model, Setting::NZ, Setting::NZ), wz) {
                (Setting::WZ, Some(a), Some(b)) => Cell::Points {
                    value: drop_points(a.f1, b.f1),
                    bold: true,
                },
                _ => Cell::Empty,
            };
            vec![
                text(dataset),
                text(train.to_string()),
                text(model),
                score_or_empty(nz, |r| r.precision),
                score_or_empty(nz, |r| r.recall),
                score_or_empty(nz, |r| r.f1),
                score_or_empty(wz, |r| r.precision),
                score_or_empty(wz, |r| r.recall),
                score_or_empty(wz, |r| r.f1),
                drop,
                bold,
            ]
        })
        .collect();
    ReportTable {
        kind: TableKind::EndToEnd,
        headers,
        rows,
    }
}

pub fn classifier_table(records: &[ScoreRecord]) -> ReportTable {
    let rows = records
        .iter()
        .filter(|r| r.kind == RecordKind::Classifier)
        .map(|r| {
            vec![
                text(&r.dataset),
                text(&r.model),
                text(r.test_setting.to_string()),
                Cell::Score(r.precision),
                Cell::Score(r.recall),
                Cell::Score(r.f1),
            ]
        })
        .collect();
    ReportTable {
        kind: TableKind::Classifier,
        headers: ["Dataset", "Mode", "Test setting", "Prec.", "Rec.", "F1"].map(String::from).to_vec(),
        rows,
    }
}

/// Two-step rows; `% ↑` compares against the same model's WZ-trained,
/// WZ-tested end-to-end F1 from `records`.
pub fn two_step_table(records: &[ScoreRecord]) -> ReportTable {
    let rows = records
        .iter()
        .filter(|r| r.kind == RecordKind::TwoStep)
        .map(|r| {
            let baseline = records.iter().rev().find(|b| {
                b.kind == RecordKind::EndToEnd
                    && b.dataset == r.dataset
                    && b.model == r.model
                    && b.train_setting == Setting::WZ
                    && b.test_setting == r.test_setting
            });
            vec![
                text(&r.dataset),
                text(&r.model),
                r.classifier.as_ref().map_or(Cell::Empty, text),
                Cell::Score(r.precision),
                Cell::Score(r.recall),
                Cell::Score(r.f1),
                baseline.map_or(Cell::Empty, |b| Cell::Points {
                    value: improvement_points(r.f1, b.f1),
                    bold: false,
                }),
            ]
        })
        .collect();
    ReportTable {
        kind: TableKind::TwoStep,
        headers: ["Dataset", "Model", "Classifier", "Prec.", "Rec.", "F1", IMPROVEMENT]
            .map(String::from)
            .to_vec(),
        rows,
    }
}

/// Every non-empty table, in the order stats, end-to-end, classifier,
/// two-step.
pub fn build_tables(stats: &[StatsEntry], records: &[ScoreRecord]) -> Vec<ReportTable> {
    [
        stats_table(stats),
        end_to_end_table(records),
        classifier_table(records),
        two_step_table(records),
    ]
    .into_iter()
    .filter(|t| !t.rows.is_empty())
    .collect()
}

pub fn render_text(tables: &[ReportTable]) -> String {
    let mut out = String::new();
    for (i, t) in tables.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = write!(out, "{}", t.to_text());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e2e(model: &str, train: Setting, test: Setting, p: f64, r: f64) -> ScoreRecord {
        ScoreRecord::from_pr(RecordKind::EndToEnd, "d", model, train, test, p, r).unwrap()
    }

    #[test]
    fn drop_columns_come_from_full_precision() {
        let records = vec![
            e2e("m", Setting::NZ, Setting::NZ, 0.9, 0.9),
            e2e("m", Setting::NZ, Setting::WZ, 0.6, 0.9),
            e2e("m", Setting::WZ, Setting::NZ, 0.9, 0.8),
            e2e("m", Setting::WZ, Setting::WZ, 0.8, 0.8),
        ];
        let t = end_to_end_table(&records);
        assert_eq!(t.rows.len(), 2);
        let nz_row = t.find_row(&["d", "NZ", "m"]).unwrap();
        let expected = 100.0 * (0.9 - f1_from_pr(0.6, 0.9).unwrap());
        assert_eq!(t.cell(nz_row, POINT_DROP).unwrap().value(), Some(expected));
        assert_eq!(t.cell(nz_row, BOLD_POINT_DROP), Some(&Cell::Empty));
        let wz_row = t.find_row(&["d", "WZ", "m"]).unwrap();
        let bold = t.cell(wz_row, BOLD_POINT_DROP).unwrap();
        assert!((bold.value().unwrap() - 10.0).abs() < 1e-9);
        assert!(t.to_text().contains("**10.0**"));
    }

    #[test]
    fn missing_counterparts_render_as_dashes() {
        let t = end_to_end_table(&[e2e("m", Setting::NZ, Setting::WZ, 0.5, 0.5)]);
        assert_eq!(t.cell(0, "NZ F1"), Some(&Cell::Empty));
        assert_eq!(t.cell(0, POINT_DROP), Some(&Cell::Empty));
        assert!(t.to_text().contains(" - "));
        assert!(t.to_csv().lines().nth(1).unwrap().ends_with(",,"));
    }

    #[test]
    fn two_step_improvement_against_wz_trained_run() {
        let mut records = vec![e2e("m", Setting::WZ, Setting::WZ, 0.8, 0.8)];
        records.push(
            ScoreRecord::from_pr(RecordKind::TwoStep, "d", "m", Setting::NZ, Setting::WZ, 0.85, 0.85)
                .unwrap()
                .with_classifier("binary"),
        );
        let t = two_step_table(&records);
        assert!(t.headers.contains(&IMPROVEMENT.to_string()));
        assert!((t.cell(0, IMPROVEMENT).unwrap().value().unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn text_uses_three_and_one_decimals_csv_keeps_everything() {
        let records = vec![
            e2e("m", Setting::NZ, Setting::NZ, 0.92345, 0.9),
            e2e("m", Setting::NZ, Setting::WZ, 0.61234, 0.9),
        ];
        let t = end_to_end_table(&records);
        let text = t.to_text();
        assert!(text.contains("0.923"));
        assert!(!text.contains("0.9234"));
        assert!(t.to_csv().contains("0.92345"));
        assert_eq!(text, end_to_end_table(&records).to_text());
    }

    #[test]
    fn record_keys_are_file_safe() {
        let r = e2e("PFN*", Setting::WZ, Setting::NZ, 0.5, 0.5).with_classifier("mcml");
        assert_eq!(r.key(), "end_to_end__PFN___WZ__NZ__mcml");
    }

    #[test]
    fn stats_table_flags_mismatches() {
        let c = PartitionCounts {
            positive: 2,
            tuples: 3,
            zeros: 1,
        };
        let t = stats_table(&[StatsEntry {
            dataset: "d".into(),
            partition: Partition::Test,
            counts: c,
            expected: Some(PartitionCounts { zeros: 2, ..c }),
        }]);
        assert_eq!(t.cell(0, "Matches expected"), Some(&Cell::Text("no".into())));
    }
}
