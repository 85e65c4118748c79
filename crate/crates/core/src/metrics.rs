//! Sentence accuracy, per-operation-count breakdowns, and error dumps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::vocab::{TokenSequence, EOI_STR, EOS_STR};

pub const METRICS_HEADER: &str = "split,op_count,total,correct,accuracy,per_step_error_paper,per_step_error_alt";

/// Drops trailing `[END]` / `[EOS]` tokens.
pub fn strip_terminators(seq: &TokenSequence) -> &[crate::vocab::Token] {
    let toks = seq.tokens();
    let keep = toks
        .iter()
        .rposition(|t| t.as_str() != EOI_STR && t.as_str() != EOS_STR)
        .map_or(0, |i| i + 1);
    &toks[..keep]
}

pub fn matches(prediction: &TokenSequence, gold: &TokenSequence) -> bool {
    strip_terminators(prediction) == strip_terminators(gold)
}

/// Fraction of exact sequence matches.
pub fn sentence_accuracy(predictions: &[TokenSequence], golds: &[TokenSequence]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if golds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let correct = predictions.iter().zip(golds).filter(|(p, g)| matches(p, g)).count();
    Ok(correct as f64 / golds.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Bucket {
    pub correct: usize,
    pub total: usize,
}

impl Bucket {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Correct and total counts keyed by operation count.
pub fn per_op_histogram(items: impl IntoIterator<Item = (usize, bool)>) -> BTreeMap<usize, Bucket> {
    let mut out: BTreeMap<usize, Bucket> = BTreeMap::new();
    for (ops, ok) in items {
        let b = out.entry(ops).or_default();
        b.total += 1;
        b.correct += ok as usize;
    }
    out
}

/// `(1 - accuracy)^(1/n)`, the test error taken to the `1/n` power.
pub fn per_step_error(accuracy: f64, n: usize) -> f64 {
    (1.0 - accuracy).max(0.0).powf(1.0 / n.max(1) as f64)
}

/// `1 - accuracy^(1/n)`, the error of one step if steps fail independently.
pub fn per_step_error_alt(accuracy: f64, n: usize) -> f64 {
    1.0 - accuracy.max(0.0).powf(1.0 / n.max(1) as f64)
}

/// One evaluated example. `prediction` is `None` when iterative decoding
/// never terminated.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub input: TokenSequence,
    pub gold: TokenSequence,
    pub prediction: Option<TokenSequence>,
    pub op_count: usize,
}

impl EvalRecord {
    pub fn correct(&self) -> bool {
        self.prediction.as_ref().is_some_and(|p| matches(p, &self.gold))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub split: String,
    pub correct: usize,
    pub total: usize,
    pub per_op: BTreeMap<usize, Bucket>,
    pub errors: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn build(split: impl Into<String>, records: &[EvalRecord]) -> Self {
        let per_op = per_op_histogram(records.iter().map(|r| (r.op_count, r.correct())));
        let errors: Vec<EvalRecord> = records.iter().filter(|r| !r.correct()).cloned().collect();
        EvalReport {
            split: split.into(),
            correct: records.len() - errors.len(),
            total: records.len(),
            per_op,
            errors,
        }
    }

    pub fn sentence_accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    /// Per-step error per operation-count bucket.
    pub fn per_step_error(&self) -> BTreeMap<usize, f64> {
        self.per_op.iter().map(|(&n, b)| (n, per_step_error(b.accuracy(), n))).collect()
    }

    /// Rows for `metrics.csv` (no header): one per bucket, then an `all`
    /// row with the per-step columns left empty.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for (&n, b) in &self.per_op {
            let acc = b.accuracy();
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6}",
                self.split,
                n,
                b.total,
                b.correct,
                acc,
                per_step_error(acc, n),
                per_step_error_alt(acc, n)
            );
        }
        let _ = writeln!(
            out,
            "{},all,{},{},{:.6},,",
            self.split,
            self.total,
            self.correct,
            self.sentence_accuracy()
        );
        out
    }
}

/// Full `metrics.csv` contents for several splits.
pub fn metrics_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in reports {
        out.push_str(&r.csv_rows());
    }
    out
}

/// Up to `limit` wrong examples as three-line blocks separated by blank lines.
pub fn dump_errors(report: &EvalReport, limit: usize) -> String {
    let mut out = String::new();
    for r in report.errors.iter().take(limit) {
        let pred = r
            .prediction
            .as_ref()
            .map_or_else(|| "<no prediction>".to_string(), |p| p.to_string());
        let _ = write!(out, "Input: {}\nTrue output: {}\nPrediction: {}\n\n", r.input, r.gold, pred);
    }
    out
}
