//! Synthetic Japanese-like corpus with known break structure.
//!
//! Sentences are chains of clauses. Clauses are joined either by a comma,
//! which is always followed by a break, or by a conjunctive particle. A
//! seeded fraction of conjunction junctions carry a break; those use
//! conjunctions from a separate set, so the break is recoverable from the
//! surface form while no punctuation marks it. The sentence-final period is
//! never a break.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::lexfeat::{Annotator, RuleAnnotator};

const NOUNS: &[&str] = &[
    "今日",
    "明日",
    "学校",
    "先生",
    "電車",
    "会社",
    "友達",
    "駅",
    "本",
    "映画",
    "東京",
    "公園",
    "家族",
    "仕事",
    "手紙",
    "音楽",
    "天気",
    "写真",
    "料理",
    "時間",
    "部屋",
    "旅行",
    "コーヒー",
    "テレビ",
    "ニュース",
    "パン",
    "メール",
    "カメラ",
    "ホテル",
    "バス",
];
const PARTICLES: &[&str] = &["は", "が", "を", "に", "で", "と", "も", "へ"];
const VERBS: &[&str] = &[
    "行き", "食べ", "見", "読み", "書き", "話し", "待ち", "使い", "聞き", "作り", "会い", "帰り",
];
const ENDINGS: &[&str] = &["ます", "ました", "た"];
const CONJUNCTIONS: &[&str] = &["て", "たり", "ば"];
const BREAKING_CONJUNCTIONS: &[&str] = &["ので", "けれども", "のに"];
const COMMA: &str = "、";
const PERIOD: &str = "。";

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub utterances: usize,
    pub seed: u64,
    /// Probability that a junction between clauses is a comma.
    pub comma_rate: f64,
    /// Probability that a conjunction junction carries a break.
    pub conjunction_break_rate: f64,
    pub max_clauses: usize,
    pub max_phrases_per_clause: usize,
}

impl SyntheticConfig {
    pub fn new(utterances: usize, seed: u64) -> Self {
        SyntheticConfig {
            utterances,
            seed,
            comma_rate: 0.25,
            conjunction_break_rate: 0.1,
            max_clauses: 3,
            max_phrases_per_clause: 3,
        }
    }

    /// Every break follows a comma.
    pub fn comma_only(utterances: usize, seed: u64) -> Self {
        SyntheticConfig {
            conjunction_break_rate: 0.0,
            ..Self::new(utterances, seed)
        }
    }
}

/// Words and labels of one sentence.
fn sentence(rng: &mut ChaCha8Rng, config: &SyntheticConfig) -> (Vec<&'static str>, Vec<bool>) {
    let pick = |rng: &mut ChaCha8Rng, set: &'static [&'static str]| *set.choose(rng).expect("non-empty word list");
    let clauses = rng.random_range(1..=config.max_clauses.max(1));
    let mut words = Vec::new();
    let mut labels = Vec::new();
    for clause in 0..clauses {
        for _ in 0..rng.random_range(1..=config.max_phrases_per_clause.max(1)) {
            words.extend([pick(rng, NOUNS), pick(rng, PARTICLES)]);
            labels.extend([false, false]);
        }
        words.push(pick(rng, VERBS));
        labels.push(false);
        if clause + 1 == clauses {
            words.extend([pick(rng, ENDINGS), PERIOD]);
            labels.extend([false, false]);
        } else if rng.random_bool(config.comma_rate) {
            words.extend([pick(rng, CONJUNCTIONS), COMMA]);
            labels.extend([false, true]);
        } else if rng.random_bool(config.conjunction_break_rate) {
            words.push(pick(rng, BREAKING_CONJUNCTIONS));
            labels.push(true);
        } else {
            words.push(pick(rng, CONJUNCTIONS));
            labels.push(false);
        }
    }
    (words, labels)
}

/// Labeled, annotated utterances with ids `syn-00000`, `syn-00001`, ...
pub fn generate(config: &SyntheticConfig) -> Result<Vec<Utterance>> {
    if !(0.0..=1.0).contains(&config.comma_rate) || !(0.0..=1.0).contains(&config.conjunction_break_rate) {
        return Err(Error::Config(format!("rates must lie in [0, 1]: {config:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let annotator = RuleAnnotator;
    (0..config.utterances)
        .map(|i| {
            let id = format!("syn-{i:05}");
            let (words, labels) = sentence(&mut rng, config);
            let tokens = annotator.annotate_words(&words).map_err(|message| Error::Annotation {
                id: id.clone(),
                message,
            })?;
            Utterance::new(id, tokens, Some(labels))
        })
        .collect()
}

/// Renders utterances as an alignment file whose silences reproduce their
/// labels at the default 200 ms threshold: 300 ms after a break, 40 ms
/// elsewhere.
pub fn alignment_text(utterances: &[Utterance]) -> String {
    let mut out = String::new();
    for utt in utterances {
        out.push_str(&format!("# id={}\n", utt.id));
        let labels = utt.labels.clone().unwrap_or_else(|| vec![false; utt.len()]);
        let mut t = 0u64;
        for (tok, brk) in utt.tokens.iter().zip(labels) {
            let len = 80 * tok.surface.chars().count() as u64;
            out.push_str(&format!("{}\t{}\t{}\n", tok.surface, t, t + len));
            t += len + if brk { 300 } else { 40 };
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{label_alignments, parse_alignment};

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&SyntheticConfig::new(20, 3)).unwrap();
        assert_eq!(a, generate(&SyntheticConfig::new(20, 3)).unwrap());
        assert_ne!(a, generate(&SyntheticConfig::new(20, 4)).unwrap());
    }

    #[test]
    fn break_structure() {
        let utts = generate(&SyntheticConfig::new(300, 1)).unwrap();
        let mut conj_breaks = 0;
        for u in &utts {
            let labels = u.labels.as_ref().unwrap();
            assert_eq!(u.tokens.last().unwrap().surface, PERIOD);
            assert!(!labels.last().unwrap());
            for (tok, &brk) in u.tokens.iter().zip(labels) {
                if tok.surface == COMMA {
                    assert!(brk);
                } else if brk {
                    assert!(BREAKING_CONJUNCTIONS.contains(&tok.surface.as_str()));
                    conj_breaks += 1;
                }
            }
        }
        assert!(conj_breaks > 0);
        let comma_only = generate(&SyntheticConfig::comma_only(100, 1)).unwrap();
        for u in &comma_only {
            for (tok, &brk) in u.tokens.iter().zip(u.labels.as_ref().unwrap()) {
                assert_eq!(brk, tok.surface == COMMA);
            }
        }
    }

    #[test]
    fn alignment_reproduces_labels() {
        let utts = generate(&SyntheticConfig::new(30, 9)).unwrap();
        let aligned = parse_alignment(&alignment_text(&utts), "synthetic").unwrap();
        let relabeled = label_alignments(&aligned, 200, &RuleAnnotator).unwrap();
        assert_eq!(relabeled, utts);
    }
}
