//! Scoring verdicts against ground truth.
//!
//! `Illegal` is the positive class throughout. [`accuracy_f1`] and [`auroc`]
//! are the benchmark's evaluation surface; [`aggregate`] turns a block of
//! scored verdicts into one summary, and [`average_blocks`] produces the
//! cross-defender average row.
//!
//! This module also owns the CSV schemas benchmark sweeps are stored in (see
//! [`csv`]), so that summaries can always be recomputed from the per-cell
//! files alone.

use serde::{Deserialize, Serialize};

use crate::verifier::{Verdict, VerificationReport};
use crate::{Error, Result};

/// Confusion counts with `Illegal` as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub true_negatives: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            true_negatives: tn,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_positives + self.false_positives + self.false_negatives + self.true_negatives
    }

    pub fn record(&mut self, verdict: Verdict, truth_illegal: bool) {
        match (verdict, truth_illegal) {
            (Verdict::Illegal, true) => self.true_positives += 1,
            (Verdict::Illegal, false) => self.false_positives += 1,
            (Verdict::Legal, true) => self.false_negatives += 1,
            (Verdict::Legal, false) => self.true_negatives += 1,
        }
    }
}

/// `(accuracy, F1)` from confusion counts:
/// `accuracy = (tp + tn) / total`, `f1 = 2 tp / (2 tp + fp + fn)`.
pub fn accuracy_f1(counts: &ConfusionCounts) -> Result<(f64, f64)> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::EmptyInput("confusion counts are all zero".into()));
    }
    let accuracy = (counts.true_positives + counts.true_negatives) as f64 / total as f64;
    let denominator =
        2 * counts.true_positives + counts.false_positives + counts.false_negatives;
    if denominator == 0 {
        return Err(Error::UndefinedF1);
    }
    let f1 = 2.0 * counts.true_positives as f64 / denominator as f64;
    Ok((accuracy, f1))
}

/// AUROC by the rank (Mann-Whitney) formulation: the probability that a
/// uniformly random positive outscores a uniformly random negative, with ties
/// counted half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NumericalOverflow("auroc scores".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::OneClassOnly);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks across ties (1-based).
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let average = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = average;
        }
        i = j + 1;
    }
    let positive_rank_sum: f64 = ranks
        .iter()
        .zip(labels.iter())
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let u = positive_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// One scored decision: the verdict plus the continuous evidence behind it.
#[derive(Debug, Clone, Copy)]
pub struct ScoredVerdict {
    pub verdict: Verdict,
    pub illegality_score: f64,
}

/// Metrics of one block of decisions (typically: one defender, one method).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockSummary {
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub f1: f64,
    pub auroc: f64,
}

/// Scores a block of `(decision, truth)` pairs: confusion counts, accuracy,
/// F1, and AUROC over the illegality scores.
pub fn aggregate(outcomes: &[(ScoredVerdict, bool)]) -> Result<BlockSummary> {
    if outcomes.is_empty() {
        return Err(Error::EmptyInput("no outcomes to aggregate".into()));
    }
    let mut counts = ConfusionCounts::default();
    let mut scores = Vec::with_capacity(outcomes.len());
    let mut labels = Vec::with_capacity(outcomes.len());
    for (scored, truth) in outcomes {
        counts.record(scored.verdict, *truth);
        scores.push(scored.illegality_score);
        labels.push(*truth);
    }
    let (accuracy, f1) = accuracy_f1(&counts)?;
    let auroc = auroc(&scores, &labels)?;
    Ok(BlockSummary {
        counts,
        accuracy,
        f1,
        auroc,
    })
}

/// Convenience wrapper over [`aggregate`] for full verification reports.
pub fn aggregate_reports(reports: &[(&VerificationReport, bool)]) -> Result<BlockSummary> {
    let outcomes: Vec<(ScoredVerdict, bool)> = reports
        .iter()
        .map(|(r, truth)| {
            (
                ScoredVerdict {
                    verdict: r.verdict,
                    illegality_score: r.illegality_score,
                },
                *truth,
            )
        })
        .collect();
    aggregate(&outcomes)
}

/// Plain means of per-block metrics — the cross-defender average row.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricAverages {
    pub accuracy: f64,
    pub f1: f64,
    pub auroc: f64,
}

pub fn average_blocks(blocks: &[BlockSummary]) -> Result<MetricAverages> {
    if blocks.is_empty() {
        return Err(Error::EmptyInput("no blocks to average".into()));
    }
    let n = blocks.len() as f64;
    Ok(MetricAverages {
        accuracy: blocks.iter().map(|b| b.accuracy).sum::<f64>() / n,
        f1: blocks.iter().map(|b| b.f1).sum::<f64>() / n,
        auroc: blocks.iter().map(|b| b.auroc).sum::<f64>() / n,
    })
}

/// CSV schemas for benchmark output.
///
/// Two files describe a sweep:
///
/// - **cells** (one file per defender, header [`CELLS_HEADER`]): one row per
///   verification cell. `truth` and `verdict` are `illegal`/`legal`; `g`,
///   `g0` are empty when the degenerate zero-variance fallback decided the
///   cell; every column after `status` is empty when the cell failed, and
///   `status` then carries `failed: <reason>` instead of `ok`.
/// - **summary** (header [`SUMMARY_HEADER`]): per `(method, defender)` block,
///   pooled counts and metrics over all seeds, plus one `(average)` row per
///   method holding the plain mean of the per-defender metrics.
///
/// Floats are written in shortest round-trip form, so recomputing the summary
/// from the cell files reproduces it byte for byte.
pub mod csv {
    use super::*;
    use std::fmt::Write as _;
    use std::path::Path;

    pub const CELLS_HEADER: &str =
        "seed,defender,suspect_source,suspect_index,method,truth,verdict,g,g0,score,status";
    pub const SUMMARY_HEADER: &str = "method,defender,tp,fp,fn,tn,accuracy,f1,auroc";

    /// One verification cell of a sweep.
    #[derive(Debug, Clone, PartialEq)]
    pub struct CellRow {
        pub seed_index: usize,
        pub defender: String,
        pub suspect_source: String,
        pub suspect_index: usize,
        /// `accuracy`, `entropy`, `similarity`, or `random`.
        pub method: String,
        pub truth_illegal: bool,
        pub verdict: Option<Verdict>,
        pub g: Option<f64>,
        pub g0: Option<f64>,
        pub score: Option<f64>,
        /// `ok`, or `failed: <reason>`.
        pub status: String,
    }

    /// One summary block; `counts` is `None` on `(average)` rows.
    #[derive(Debug, Clone, PartialEq)]
    pub struct SummaryRow {
        pub method: String,
        pub defender: String,
        pub counts: Option<ConfusionCounts>,
        pub accuracy: f64,
        pub f1: f64,
        pub auroc: f64,
    }

    fn verdict_str(v: Option<Verdict>) -> &'static str {
        match v {
            Some(Verdict::Illegal) => "illegal",
            Some(Verdict::Legal) => "legal",
            None => "",
        }
    }

    fn parse_verdict(s: &str) -> Result<Option<Verdict>> {
        match s {
            "illegal" => Ok(Some(Verdict::Illegal)),
            "legal" => Ok(Some(Verdict::Legal)),
            "" => Ok(None),
            other => Err(Error::Malformed {
                what: "verdict".into(),
                detail: other.into(),
            }),
        }
    }

    fn opt_float(v: Option<f64>) -> String {
        v.map(|x| x.to_string()).unwrap_or_default()
    }

    fn parse_opt_float(s: &str) -> Result<Option<f64>> {
        if s.is_empty() {
            return Ok(None);
        }
        s.parse::<f64>().map(Some).map_err(|e| Error::Malformed {
            what: "float".into(),
            detail: format!("`{s}`: {e}"),
        })
    }

    /// Commas would break the one-line-per-cell contract; statuses come from
    /// error messages, so scrub them.
    fn sanitize(status: &str) -> String {
        status.replace([',', '\n'], ";")
    }

    pub fn cells_to_string(rows: &[CellRow]) -> String {
        let mut out = String::new();
        out.push_str(CELLS_HEADER);
        out.push('\n');
        for row in rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                row.seed_index,
                row.defender,
                row.suspect_source,
                row.suspect_index,
                row.method,
                if row.truth_illegal { "illegal" } else { "legal" },
                verdict_str(row.verdict),
                opt_float(row.g),
                opt_float(row.g0),
                opt_float(row.score),
                sanitize(&row.status),
            )
            .expect("string write");
        }
        out
    }

    pub fn write_cells_csv(path: impl AsRef<Path>, rows: &[CellRow]) -> Result<()> {
        std::fs::write(path, cells_to_string(rows))?;
        Ok(())
    }

    pub fn read_cells_csv(path: impl AsRef<Path>) -> Result<Vec<CellRow>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let malformed = |detail: String| Error::Malformed {
            what: format!("cells file {}", path.display()),
            detail,
        };
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == CELLS_HEADER => {}
            other => return Err(malformed(format!("bad header {other:?}"))),
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 11 {
                return Err(malformed(format!(
                    "row {lineno} has {} fields, expected 11",
                    fields.len()
                )));
            }
            rows.push(CellRow {
                seed_index: fields[0]
                    .parse()
                    .map_err(|e| malformed(format!("row {lineno} seed: {e}")))?,
                defender: fields[1].into(),
                suspect_source: fields[2].into(),
                suspect_index: fields[3]
                    .parse()
                    .map_err(|e| malformed(format!("row {lineno} index: {e}")))?,
                method: fields[4].into(),
                truth_illegal: match fields[5] {
                    "illegal" => true,
                    "legal" => false,
                    other => return Err(malformed(format!("row {lineno} truth `{other}`"))),
                },
                verdict: parse_verdict(fields[6])?,
                g: parse_opt_float(fields[7])?,
                g0: parse_opt_float(fields[8])?,
                score: parse_opt_float(fields[9])?,
                status: fields[10].into(),
            });
        }
        Ok(rows)
    }

    pub fn summary_to_string(rows: &[SummaryRow]) -> String {
        let mut out = String::new();
        out.push_str(SUMMARY_HEADER);
        out.push('\n');
        for row in rows {
            let (tp, fp, fn_, tn) = match &row.counts {
                Some(c) => (
                    c.true_positives.to_string(),
                    c.false_positives.to_string(),
                    c.false_negatives.to_string(),
                    c.true_negatives.to_string(),
                ),
                None => Default::default(),
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                row.method, row.defender, tp, fp, fn_, tn, row.accuracy, row.f1, row.auroc,
            )
            .expect("string write");
        }
        out
    }

    pub fn write_summary_csv(path: impl AsRef<Path>, rows: &[SummaryRow]) -> Result<()> {
        std::fs::write(path, summary_to_string(rows))?;
        Ok(())
    }

    pub fn read_summary_csv(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let malformed = |detail: String| Error::Malformed {
            what: format!("summary file {}", path.display()),
            detail,
        };
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == SUMMARY_HEADER => {}
            other => return Err(malformed(format!("bad header {other:?}"))),
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 9 {
                return Err(malformed(format!("row {lineno} has {} fields", fields.len())));
            }
            let counts = if fields[2].is_empty() {
                None
            } else {
                let parse = |s: &str| -> Result<u64> {
                    s.parse().map_err(|e| malformed(format!("row {lineno}: {e}")))
                };
                Some(ConfusionCounts::new(
                    parse(fields[2])?,
                    parse(fields[3])?,
                    parse(fields[4])?,
                    parse(fields[5])?,
                ))
            };
            let parse_f = |s: &str| -> Result<f64> {
                s.parse().map_err(|e| malformed(format!("row {lineno}: {e}")))
            };
            rows.push(SummaryRow {
                method: fields[0].into(),
                defender: fields[1].into(),
                counts,
                accuracy: parse_f(fields[6])?,
                f1: parse_f(fields[7])?,
                auroc: parse_f(fields[8])?,
            });
        }
        Ok(rows)
    }
}
