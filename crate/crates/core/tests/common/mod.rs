#![allow(dead_code)]

use std::path::Path;

use phrase_break::corpus::Utterance;
use phrase_break::encoders::{create_random_lm, BertConfig, BiLstmEncoderConfig, LmAssets};
use phrase_break::lexfeat::{AnnotatedToken, DepRel, EmbeddingTable, PosTag, WordPiece};
use phrase_break::model::{SystemConfig, SystemKind};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CHARS: &[char] = &[
    'あ', 'い', 'う', 'か', 'き', 'た', 'て', 'の', 'は', 'を', '日', '本', '語', '駅', '雨', 'カ', 'メ', 'ラ', 'A',
    '1',
];
const PUNCT: &[&str] = &["、", "。", "！", "？"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Arbitrary valid labeled utterance of 1..=max_len tokens.
pub fn random_utterance(rng: &mut ChaCha8Rng, id: &str, max_len: usize) -> Utterance {
    let n = rng.random_range(1..=max_len);
    let mut tokens = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let punct = rng.random_bool(0.2);
        let (surface, pos) = if punct {
            (PUNCT.choose(rng).unwrap().to_string(), PosTag::Punct)
        } else {
            let len = rng.random_range(1..=3);
            let s: String = (0..len).map(|_| *CHARS.choose(rng).unwrap()).collect();
            let pos = *[PosTag::Noun, PosTag::Verb, PosTag::Adp, PosTag::Aux, PosTag::Propn]
                .choose(rng)
                .unwrap();
            (s, pos)
        };
        let head = if rng.random_bool(0.15) {
            None
        } else {
            Some(rng.random_range(0..n)).filter(|&h| h != i)
        };
        let rel = if head.is_none() {
            DepRel::Root
        } else {
            *DepRel::ALL.choose(rng).unwrap()
        };
        tokens.push(AnnotatedToken::new(surface, pos, head, rel));
        labels.push(i + 1 < n && rng.random_bool(0.3));
    }
    Utterance::new(id, tokens, Some(labels)).unwrap()
}

pub fn random_corpus(seed: u64, count: usize, max_len: usize) -> Vec<Utterance> {
    let mut r = rng(seed);
    (0..count)
        .map(|i| random_utterance(&mut r, &format!("utt-{i:04}"), max_len))
        .collect()
}

/// A small randomly initialized LM whose character vocabulary covers
/// `utterances`.
pub fn tiny_lm(dir: &Path, utterances: &[Utterance], seed: u64) -> LmAssets {
    let texts: Vec<String> = utterances.iter().map(Utterance::text).collect();
    let vocab = WordPiece::char_vocab(texts.iter().map(String::as_str));
    let mut config = BertConfig::tiny(vocab.len());
    config.max_position_embeddings = 256;
    create_random_lm(dir, &config, &vocab, seed).unwrap();
    LmAssets::load(dir).unwrap()
}

/// Random word vectors for every surface of `utterances`.
pub fn word_vectors(utterances: &[Utterance], dim: usize, seed: u64) -> EmbeddingTable {
    let mut r = rng(seed);
    let mut seen = std::collections::BTreeSet::new();
    for u in utterances {
        for t in &u.tokens {
            seen.insert(t.surface.clone());
        }
    }
    let entries = seen
        .into_iter()
        .map(|w| (w, (0..dim).map(|_| r.random_range(-1.0..1.0)).collect()))
        .collect();
    EmbeddingTable::new(entries, dim).unwrap()
}

pub fn small_bilstm(kind: SystemKind, pretrained: bool) -> BiLstmEncoderConfig {
    BiLstmEncoderConfig {
        layers: 2,
        hidden_per_direction: 8,
        token_embedding_dim: 8,
        feature_embedding_dim: 4,
        use_linguistic_features: kind.uses_features(),
        use_pretrained_word_embeddings: pretrained && kind.uses_features(),
    }
}

/// Desk-sized configuration of `kind`.
pub fn small_system(kind: SystemKind, lm: Option<&LmAssets>, hidden: usize) -> SystemConfig {
    let mut config = SystemConfig::new(kind, lm.map(|l| l.encoder_config(true)));
    if let Some(b) = &mut config.bilstm {
        *b = small_bilstm(kind, true);
    }
    config.classifier_hidden = hidden;
    config
}

/// Whether a tensor-level comparison of two slices holds within `tol`.
pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}
