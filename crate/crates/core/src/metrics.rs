//! Confusion matrices, per-class statistics and the split of three-class
//! accuracy into a volatility part (STABLE vs DIVERGE) and a directional
//! part (UP vs DOWN among correctly identified DIVERGE samples).
//!
//! Rates with an empty denominator are `None` and stay `None` through
//! serialization (`null`) and aggregation.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labeling::Label;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("predictions ({preds}) and truths ({truths}) differ in length")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("empty input")]
    EmptyInput,
}

/// Rows are true classes, columns predicted, both in UP, DOWN, STABLE order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; 3]; 3]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn record(&mut self, truth: Label, pred: Label) {
        self.counts[truth.index()][pred.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn row(&self, c: Label) -> u64 {
        self.counts[c.index()].iter().sum()
    }

    pub fn column(&self, c: Label) -> u64 {
        self.counts.iter().map(|r| r[c.index()]).sum()
    }

    /// Same matrix with UP and DOWN relabelled on both axes.
    pub fn mirrored(&self) -> Self {
        let mut out = ConfusionMatrix::default();
        for t in Label::ALL {
            for p in Label::ALL {
                out.counts[t.flipped().index()][p.flipped().index()] = self.counts[t.index()][p.index()];
            }
        }
        out
    }

    pub fn overall_accuracy(&self) -> Option<f64> {
        ratio(self.trace(), self.total())
    }

    /// Samples whose truth and prediction are both UP or DOWN.
    pub fn both_diverge(&self) -> u64 {
        self.counts[0][0] + self.counts[0][1] + self.counts[1][0] + self.counts[1][1]
    }

    pub fn volatility_accuracy(&self) -> Option<f64> {
        ratio(self.both_diverge() + self.counts[2][2], self.total())
    }

    pub fn directional_accuracy(&self, basis: DirectionalBasis) -> Option<f64> {
        let correct = self.counts[0][0] + self.counts[1][1];
        let denom = match basis {
            DirectionalBasis::PredictedAndTrueDiverge => self.both_diverge(),
            DirectionalBasis::TrueDiverge => self.row(Label::Up) + self.row(Label::Down),
        };
        ratio(correct, denom)
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, rhs: Self) {
        for i in 0..3 {
            for j in 0..3 {
                self.counts[i][j] += rhs.counts[i][j];
            }
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Denominator of the directional accuracy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionalBasis {
    /// Samples both truly and predicted UP/DOWN.
    #[default]
    PredictedAndTrueDiverge,
    /// All samples that are truly UP/DOWN.
    TrueDiverge,
}

pub fn confusion(preds: &[Label], truths: &[Label]) -> Result<ConfusionMatrix, MetricsError> {
    if preds.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(truths) {
        cm.record(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub size: u64,
}

pub fn class_metrics(cm: &ConfusionMatrix) -> [ClassMetrics; 3] {
    Label::ALL.map(|c| {
        let tp = cm.counts[c.index()][c.index()];
        let precision = ratio(tp, cm.column(c));
        let recall = ratio(tp, cm.row(c));
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            size: cm.row(c),
        }
    })
}

/// Per-day evaluation summary. Field names are the JSON keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub day: NaiveDate,
    pub model: String,
    pub confusion: ConfusionMatrix,
    pub up: ClassMetrics,
    pub down: ClassMetrics,
    pub stable: ClassMetrics,
    pub overall_accuracy: Option<f64>,
    pub volatility_accuracy: Option<f64>,
    pub directional_accuracy: Option<f64>,
    pub directional_basis: DirectionalBasis,
    pub total: u64,
}

impl EvaluationReport {
    pub fn from_confusion(
        day: NaiveDate,
        model: impl Into<String>,
        cm: ConfusionMatrix,
        basis: DirectionalBasis,
    ) -> Self {
        let [up, down, stable] = class_metrics(&cm);
        EvaluationReport {
            day,
            model: model.into(),
            confusion: cm,
            up,
            down,
            stable,
            overall_accuracy: cm.overall_accuracy(),
            volatility_accuracy: cm.volatility_accuracy(),
            directional_accuracy: cm.directional_accuracy(basis),
            directional_basis: basis,
            total: cm.total(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn class(&self, c: Label) -> &ClassMetrics {
        match c {
            Label::Up => &self.up,
            Label::Down => &self.down,
            Label::Stable => &self.stable,
        }
    }
}

/// Mean and population standard deviation of one metric over days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub days: usize,
    /// Days whose value was undefined.
    pub excluded: usize,
}

pub fn summarize(values: impl IntoIterator<Item = Option<f64>>) -> Option<Summary> {
    let mut defined = Vec::new();
    let mut excluded = 0;
    for v in values {
        match v {
            Some(x) => defined.push(x),
            None => excluded += 1,
        }
    }
    if defined.is_empty() {
        return None;
    }
    let n = defined.len() as f64;
    let mean = defined.iter().sum::<f64>() / n;
    let var = defined.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Some(Summary {
        mean,
        std: var.sqrt(),
        days: defined.len(),
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub precision: Option<Summary>,
    pub recall: Option<Summary>,
    pub f1: Option<Summary>,
    pub mean_size: f64,
}

/// Daily averages of every metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub model: String,
    pub days: usize,
    pub up: ClassSummary,
    pub down: ClassSummary,
    pub stable: ClassSummary,
    pub overall_accuracy: Option<Summary>,
    pub volatility_accuracy: Option<Summary>,
    pub directional_accuracy: Option<Summary>,
}

impl AggregateReport {
    pub fn class(&self, c: Label) -> &ClassSummary {
        match c {
            Label::Up => &self.up,
            Label::Down => &self.down,
            Label::Stable => &self.stable,
        }
    }
}

pub fn aggregate_daily(reports: &[EvaluationReport]) -> Result<AggregateReport, MetricsError> {
    let first = reports.first().ok_or(MetricsError::EmptyInput)?;
    let class = |c: Label| {
        let per: Vec<&ClassMetrics> = reports.iter().map(|r| r.class(c)).collect();
        ClassSummary {
            precision: summarize(per.iter().map(|m| m.precision)),
            recall: summarize(per.iter().map(|m| m.recall)),
            f1: summarize(per.iter().map(|m| m.f1)),
            mean_size: per.iter().map(|m| m.size as f64).sum::<f64>() / per.len() as f64,
        }
    };
    Ok(AggregateReport {
        model: first.model.clone(),
        days: reports.len(),
        up: class(Label::Up),
        down: class(Label::Down),
        stable: class(Label::Stable),
        overall_accuracy: summarize(reports.iter().map(|r| r.overall_accuracy)),
        volatility_accuracy: summarize(reports.iter().map(|r| r.volatility_accuracy)),
        directional_accuracy: summarize(reports.iter().map(|r| r.directional_accuracy)),
    })
}

/// `mean(std)` with three decimals; `n/a` when undefined on every day.
pub fn fmt_summary(s: &Option<Summary>) -> String {
    match s {
        Some(s) if s.excluded > 0 => format!("{:.3}({:.3})*{}", s.mean, s.std, s.excluded),
        Some(s) => format!("{:.3}({:.3})", s.mean, s.std),
        None => "n/a".to_string(),
    }
}

/// Per-class table with accuracy rows beneath, one column group per metric.
pub fn render_table(agg: &AggregateReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Daily average and standard deviation ({} days): {}",
        agg.days, agg.model
    );
    let _ = writeln!(
        out,
        "{:<20} | {:>14} | {:>14} | {:>14} | {:>9}",
        "", "Precision", "Recall", "F1-Score", "Size"
    );
    let _ = writeln!(out, "{}", "-".repeat(82));
    for c in Label::ALL {
        let s = agg.class(c);
        let _ = writeln!(
            out,
            "{:<20} | {:>14} | {:>14} | {:>14} | {:>9.0}",
            c.name(),
            fmt_summary(&s.precision),
            fmt_summary(&s.recall),
            fmt_summary(&s.f1),
            s.mean_size
        );
    }
    let _ = writeln!(out, "{}", "-".repeat(82));
    for (name, s) in [
        ("Overall accuracy", &agg.overall_accuracy),
        ("Directional accuracy", &agg.directional_accuracy),
        ("Volatility accuracy", &agg.volatility_accuracy),
    ] {
        let _ = writeln!(out, "{:<20} | {:>14}", name, fmt_summary(s));
    }
    out
}

/// Side-by-side accuracy rows, one column per named aggregate.
pub fn render_comparison(columns: &[(String, AggregateReport)]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<12}", "Accuracy");
    for (name, _) in columns {
        let _ = write!(out, " | {:>20}", name);
    }
    out.push('\n');
    let _ = writeln!(out, "{}", "-".repeat(12 + 23 * columns.len()));
    type Pick = fn(&AggregateReport) -> &Option<Summary>;
    let rows: [(&str, Pick); 3] = [
        ("Overall", |a| &a.overall_accuracy),
        ("Directional", |a| &a.directional_accuracy),
        ("Volatility", |a| &a.volatility_accuracy),
    ];
    for (name, pick) in rows {
        let _ = write!(out, "{:<12}", name);
        for (_, agg) in columns {
            let _ = write!(out, " | {:>20}", fmt_summary(pick(agg)));
        }
        out.push('\n');
    }
    out
}
