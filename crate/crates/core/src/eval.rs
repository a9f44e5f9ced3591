//! Classification metrics, run aggregation, report files and attention
//! listings.
//!
//! Precision, recall and F1 use the zero-denominator convention: a ratio
//! whose denominator is zero is reported as 0 and flagged.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Category;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("gold and predicted lists differ in length ({gold} vs {pred})")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("no predictions to evaluate")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinaryLabel {
    NotHallucinated,
    Hallucinated,
}

/// `Factual` is the only non-hallucinated category.
pub fn to_binary(c: Category) -> BinaryLabel {
    match c {
        Category::Factual => BinaryLabel::NotHallucinated,
        _ => BinaryLabel::Hallucinated,
    }
}

/// Rows are gold categories, columns predictions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; Category::COUNT]; Category::COUNT],
}

impl ConfusionMatrix {
    pub fn from_pairs(gold: &[Category], pred: &[Category]) -> Self {
        let mut m = Self::default();
        for (g, p) in gold.iter().zip(pred) {
            m.counts[g.index()][p.index()] += 1;
        }
        m
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, c: Category) -> u64 {
        self.counts[c.index()].iter().sum()
    }

    pub fn predicted(&self, c: Category) -> u64 {
        self.counts.iter().map(|row| row[c.index()]).sum()
    }

    /// `confusion.csv`: header row and column of category names.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gold\\pred");
        for c in Category::ALL {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
        for g in Category::ALL {
            out.push_str(g.name());
            for p in Category::ALL {
                write!(out, ",{}", self.counts[g.index()][p.index()]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when any of the three ratios hit a zero denominator.
    pub undefined: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn f1_of(p: f64, r: f64) -> (f64, bool) {
    if p + r == 0.0 {
        (0.0, true)
    } else {
        (2.0 * p * r / (p + r), false)
    }
}

fn class_metrics(tp: u64, fp: u64, fn_: u64) -> ClassMetrics {
    let (precision, u1) = ratio(tp, tp + fp);
    let (recall, u2) = ratio(tp, tp + fn_);
    let (f1, u3) = f1_of(precision, recall);
    ClassMetrics {
        precision,
        recall,
        f1,
        support: tp + fn_,
        undefined: u1 || u2 || u3,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub category: Category,
    #[serde(flatten)]
    pub metrics: ClassMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassMetrics {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub per_class: Vec<PerClass>,
    pub confusion: ConfusionMatrix,
}

fn check_lengths(gold: &[Category], pred: &[Category]) -> Result<(), MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

pub fn multiclass_metrics(gold: &[Category], pred: &[Category]) -> Result<MulticlassMetrics, MetricsError> {
    check_lengths(gold, pred)?;
    let confusion = ConfusionMatrix::from_pairs(gold, pred);
    let n = gold.len() as f64;
    let correct: u64 = Category::ALL.iter().map(|c| confusion.counts[c.index()][c.index()]).sum();
    let per_class: Vec<PerClass> = Category::ALL
        .iter()
        .map(|&c| {
            let tp = confusion.counts[c.index()][c.index()];
            let fp = confusion.predicted(c) - tp;
            let fn_ = confusion.support(c) - tp;
            PerClass {
                category: c,
                metrics: class_metrics(tp, fp, fn_),
            }
        })
        .collect();
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|p| p.metrics.support as f64 * f(&p.metrics)).sum::<f64>() / n
    };
    Ok(MulticlassMetrics {
        accuracy: correct as f64 / n,
        weighted_f1: weighted(|m| m.f1),
        weighted_precision: weighted(|m| m.precision),
        weighted_recall: weighted(|m| m.recall),
        per_class,
        confusion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    /// F1 of the `Hallucinated` class.
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// No gold and no predicted positives; F1 is 0 by convention.
    pub no_positives: bool,
}

pub fn binary_metrics(gold: &[Category], pred: &[Category]) -> Result<BinaryMetrics, MetricsError> {
    check_lengths(gold, pred)?;
    let (mut tp, mut fp, mut fn_, mut correct) = (0u64, 0u64, 0u64, 0u64);
    for (&g, &p) in gold.iter().zip(pred) {
        let (g, p) = (to_binary(g), to_binary(p));
        correct += (g == p) as u64;
        match (g, p) {
            (BinaryLabel::Hallucinated, BinaryLabel::Hallucinated) => tp += 1,
            (BinaryLabel::NotHallucinated, BinaryLabel::Hallucinated) => fp += 1,
            (BinaryLabel::Hallucinated, BinaryLabel::NotHallucinated) => fn_ += 1,
            _ => {}
        }
    }
    let m = class_metrics(tp, fp, fn_);
    Ok(BinaryMetrics {
        accuracy: correct as f64 / gold.len() as f64,
        f1: m.f1,
        precision: m.precision,
        recall: m.recall,
        no_positives: tp + fp + fn_ == 0,
    })
}

/// Everything reported for one evaluated set of dialogues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n: usize,
    pub multiclass_acc: f64,
    pub multiclass_weighted_f1: f64,
    pub binary_acc: f64,
    pub binary_f1: f64,
    pub binary_no_positives: bool,
    pub per_class: Vec<PerClass>,
    pub confusion: ConfusionMatrix,
}

impl EvaluationReport {
    pub fn from_predictions(gold: &[Category], pred: &[Category]) -> Result<Self, MetricsError> {
        let mc = multiclass_metrics(gold, pred)?;
        let bin = binary_metrics(gold, pred)?;
        Ok(Self {
            n: gold.len(),
            multiclass_acc: mc.accuracy,
            multiclass_weighted_f1: mc.weighted_f1,
            binary_acc: bin.accuracy,
            binary_f1: bin.f1,
            binary_no_positives: bin.no_positives,
            per_class: mc.per_class,
            confusion: mc.confusion,
        })
    }

    /// Per-class precision/recall/F1 with a weighted-average row.
    pub fn per_class_table(&self) -> String {
        let mut out = format!("{:<16}{:>10}{:>10}{:>10}{:>9}\n", "Category", "Precision", "Recall", "F1", "Support");
        let (mut wp, mut wr) = (0.0, 0.0);
        for pc in &self.per_class {
            let m = &pc.metrics;
            wp += m.support as f64 * m.precision;
            wr += m.support as f64 * m.recall;
            writeln!(
                out,
                "{:<16}{:>10.2}{:>10.2}{:>10.2}{:>9}",
                pc.category.name(),
                m.precision,
                m.recall,
                m.f1,
                m.support
            )
            .unwrap();
        }
        let n = self.n.max(1) as f64;
        writeln!(
            out,
            "{:<16}{:>10.2}{:>10.2}{:>10.2}{:>9}",
            "Weighted Avg",
            wp / n,
            wr / n,
            self.multiclass_weighted_f1,
            self.n
        )
        .unwrap();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Arithmetic mean and sample (n - 1) standard deviation; a single value
    /// has std 0.
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

/// Mean ± std of the four headline metrics over several runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub label: String,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub multiclass_acc: MeanStd,
    pub multiclass_weighted_f1: MeanStd,
    pub binary_acc: MeanStd,
    pub binary_f1: MeanStd,
    pub per_run: Vec<EvaluationReport>,
}

impl AggregateReport {
    pub fn from_runs(label: impl Into<String>, seeds: Vec<u64>, per_run: Vec<EvaluationReport>) -> Self {
        let col = |f: fn(&EvaluationReport) -> f64| MeanStd::of(&per_run.iter().map(f).collect::<Vec<_>>());
        Self {
            label: label.into(),
            runs: per_run.len(),
            seeds,
            multiclass_acc: col(|r| r.multiclass_acc),
            multiclass_weighted_f1: col(|r| r.multiclass_weighted_f1),
            binary_acc: col(|r| r.binary_acc),
            binary_f1: col(|r| r.binary_f1),
            per_run,
        }
    }
}

pub const TABLE_HEADER: &str = "model,multiclass_acc,multiclass_weighted_f1,binary_acc,binary_f1";

/// One CSV line per aggregate, cells formatted `mean ± std`.
pub fn aggregate_csv(rows: &[AggregateReport]) -> String {
    let mut out = format!("{TABLE_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.label, r.multiclass_acc, r.multiclass_weighted_f1, r.binary_acc, r.binary_f1
        )
        .unwrap();
    }
    out
}

/// Single-run `report.csv` row.
pub fn report_csv(label: &str, r: &EvaluationReport) -> String {
    format!(
        "{TABLE_HEADER}\n{label},{:.4},{:.4},{:.4},{:.4}\n",
        r.multiclass_acc, r.multiclass_weighted_f1, r.binary_acc, r.binary_f1
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnWeight {
    pub index: usize,
    pub weight: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionExplanation {
    pub dialogue_id: String,
    pub turns: Vec<TurnWeight>,
    pub predicted: Category,
    pub gold: Category,
}

pub const DEFAULT_SNIPPET_WIDTH: usize = 100;

fn truncate(text: &str, width: usize) -> String {
    if text.chars().count() <= width {
        return text.to_string();
    }
    let keep = width.saturating_sub(3);
    let mut s: String = text.chars().take(keep).collect();
    s.push_str("...");
    s
}

/// Renders the per-turn attention listing. The `top_k` heaviest turns are
/// wrapped in `/+ ... +/`; ties go to the earlier turn.
pub fn render_explanation(expl: &AttentionExplanation, top_k: usize, width: usize) -> String {
    let top_k = top_k.max(1);
    let mut order: Vec<usize> = (0..expl.turns.len()).collect();
    order.sort_by(|&a, &b| expl.turns[b].weight.total_cmp(&expl.turns[a].weight).then(a.cmp(&b)));
    let highlighted: Vec<bool> = {
        let mut h = vec![false; expl.turns.len()];
        for &i in order.iter().take(top_k) {
            h[i] = true;
        }
        h
    };
    let mut out = format!(
        "Dialogue {} (predicted: {}, gold: {})\nAttention Weights (per dialogue turn):\n",
        expl.dialogue_id, expl.predicted, expl.gold
    );
    for (t, &hl) in expl.turns.iter().zip(&highlighted) {
        let text = truncate(&t.text, width);
        if hl {
            writeln!(out, "  {}: /+{:.4} | {}+/", t.index, t.weight, text).unwrap();
        } else {
            writeln!(out, "  {}: {:.4} | {}", t.index, t.weight, text).unwrap();
        }
    }
    out
}
