//! Outcome counting, precision/recall/F1 and the punctuation-stratified
//! report.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use serde::Serialize;

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::lexfeat::AnnotatedToken;

/// Stratum definition printed in report headers.
pub const STRATUM_DEFINITION: &str =
    "with punctuation = positions whose token is punctuation or is immediately followed by punctuation";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OutcomeCounts {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
}

impl OutcomeCounts {
    pub fn new(tp: u64, fn_: u64, fp: u64) -> Self {
        OutcomeCounts { tp, fn_, fp }
    }

    fn record(&mut self, pred: bool, gold: bool) {
        match (pred, gold) {
            (true, true) => self.tp += 1,
            (false, true) => self.fn_ += 1,
            (true, false) => self.fp += 1,
            (false, false) => {}
        }
    }
}

impl Add for OutcomeCounts {
    type Output = OutcomeCounts;

    fn add(self, o: OutcomeCounts) -> OutcomeCounts {
        OutcomeCounts::new(self.tp + o.tp, self.fn_ + o.fn_, self.fp + o.fp)
    }
}

impl AddAssign for OutcomeCounts {
    fn add_assign(&mut self, o: OutcomeCounts) {
        *self = *self + o;
    }
}

/// Precision, recall and F1 in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Scores {
    /// Unrounded scores; 0/0 gives 0.
    pub fn exact(c: OutcomeCounts) -> Scores {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        Scores {
            precision: 100.0 * ratio(c.tp, c.tp + c.fp),
            recall: 100.0 * ratio(c.tp, c.tp + c.fn_),
            // 2PR/(P+R) with P and R substituted.
            f1: 100.0 * ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        }
    }
}

/// Percentages rounded half-up to one decimal. Rounding is done on the
/// exact rational value in integer arithmetic so that ties such as x.x5
/// cannot be lost to binary floating point.
pub fn prf(c: OutcomeCounts) -> Scores {
    let tenths = |num: u64, den: u64| -> f64 {
        if den == 0 {
            return 0.0;
        }
        let (num, den) = (num as u128 * 1000, den as u128);
        ((2 * num + den) / (2 * den)) as f64 / 10.0
    };
    Scores {
        precision: tenths(c.tp, c.tp + c.fp),
        recall: tenths(c.tp, c.tp + c.fn_),
        f1: tenths(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}

fn check_lengths(pred: &[bool], gold: &[bool]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::Length(format!(
            "{} predictions against {} gold labels",
            pred.len(),
            gold.len()
        )));
    }
    Ok(())
}

pub fn count_outcomes(pred: &[bool], gold: &[bool]) -> Result<OutcomeCounts> {
    check_lengths(pred, gold)?;
    let mut c = OutcomeCounts::default();
    for (&p, &g) in pred.iter().zip(gold) {
        c.record(p, g);
    }
    Ok(c)
}

/// Whether position `i` falls in the with-punctuation stratum.
pub fn punctuation_adjacent(tokens: &[AnnotatedToken], i: usize) -> bool {
    tokens[i].is_punct() || tokens.get(i + 1).is_some_and(AnnotatedToken::is_punct)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StratumReport {
    pub counts: OutcomeCounts,
    pub scores: Scores,
}

impl StratumReport {
    fn new(counts: OutcomeCounts) -> Self {
        StratumReport {
            counts,
            scores: prf(counts),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StratifiedCounts {
    pub with_punct: OutcomeCounts,
    pub without_punct: OutcomeCounts,
}

impl StratifiedCounts {
    pub fn overall(&self) -> OutcomeCounts {
        self.with_punct + self.without_punct
    }

    pub fn report(&self) -> StratifiedReport {
        StratifiedReport {
            overall: StratumReport::new(self.overall()),
            with_punct: StratumReport::new(self.with_punct),
            without_punct: StratumReport::new(self.without_punct),
        }
    }
}

impl AddAssign for StratifiedCounts {
    fn add_assign(&mut self, o: StratifiedCounts) {
        self.with_punct += o.with_punct;
        self.without_punct += o.without_punct;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StratifiedReport {
    pub overall: StratumReport,
    pub with_punct: StratumReport,
    pub without_punct: StratumReport,
}

pub fn stratify_counts(pred: &[bool], gold: &[bool], tokens: &[AnnotatedToken]) -> Result<StratifiedCounts> {
    check_lengths(pred, gold)?;
    if tokens.len() != gold.len() {
        return Err(Error::Length(format!(
            "{} tokens against {} labels",
            tokens.len(),
            gold.len()
        )));
    }
    let mut c = StratifiedCounts::default();
    for i in 0..tokens.len() {
        let stratum = if punctuation_adjacent(tokens, i) {
            &mut c.with_punct
        } else {
            &mut c.without_punct
        };
        stratum.record(pred[i], gold[i]);
    }
    Ok(c)
}

pub fn stratify(pred: &[bool], gold: &[bool], tokens: &[AnnotatedToken]) -> Result<StratifiedReport> {
    Ok(stratify_counts(pred, gold, tokens)?.report())
}

/// Micro-averaged report over a labeled corpus and one prediction vector
/// per utterance.
pub fn evaluate_corpus(gold: &[Utterance], predictions: &[Vec<bool>]) -> Result<StratifiedReport> {
    if gold.len() != predictions.len() {
        return Err(Error::Length(format!(
            "{} gold utterances against {} predictions",
            gold.len(),
            predictions.len()
        )));
    }
    let mut total = StratifiedCounts::default();
    for (utt, pred) in gold.iter().zip(predictions) {
        let labels = utt.labels.as_ref().ok_or_else(|| Error::InvalidUtterance {
            id: utt.id.clone(),
            message: "gold utterance has no labels".into(),
        })?;
        total += stratify_counts(pred, labels, &utt.tokens).map_err(|e| Error::InvalidUtterance {
            id: utt.id.clone(),
            message: e.to_string(),
        })?;
    }
    Ok(total.report())
}

/// Overall F1 without rounding, as used for model selection.
pub fn exact_f1(gold: &[Utterance], predictions: &[Vec<bool>]) -> Result<f64> {
    let report = evaluate_corpus(gold, predictions)?;
    Ok(Scores::exact(report.overall.counts).f1)
}

fn row(out: &mut String, label: &str, r: &StratumReport) {
    let _ = writeln!(
        out,
        "{label:<24}{:>8.1}{:>11.1}{:>8.1}{:>8}{:>8}{:>8}",
        r.scores.f1, r.scores.precision, r.scores.recall, r.counts.tp, r.counts.fn_, r.counts.fp
    );
}

/// Human-readable report: an overall block followed by the two strata.
pub fn render_report(system: &str, report: &StratifiedReport) -> String {
    let header = format!(
        "{:<24}{:>8}{:>11}{:>8}{:>8}{:>8}{:>8}\n",
        "", "F1", "Precision", "Recall", "TP", "FN", "FP"
    );
    let mut out = format!("system: {system}\n\n[overall]\n{header}");
    row(&mut out, system, &report.overall);
    let _ = write!(out, "\n[by punctuation]\n# {STRATUM_DEFINITION}\n{header}");
    row(&mut out, "with punctuation", &report.with_punct);
    row(&mut out, "without punctuation", &report.without_punct);
    out
}

#[derive(Serialize)]
struct JsonReport<'a> {
    system: &'a str,
    stratum_definition: &'a str,
    #[serde(flatten)]
    report: &'a StratifiedReport,
}

pub fn report_json(system: &str, report: &StratifiedReport) -> String {
    serde_json::to_string_pretty(&JsonReport {
        system,
        stratum_definition: STRATUM_DEFINITION,
        report,
    })
    .expect("report serializes")
}
