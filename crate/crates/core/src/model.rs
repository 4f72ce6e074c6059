//! The five learned systems and the punctuation baseline behind one
//! per-token break classifier.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use candle::{DType, Device, Tensor, Var, D};
use candle_nn::{Linear, Module, VarBuilder};

use crate::corpus::Utterance;
use crate::encoders::{
    fuse, pooling_matrix, BertEncoder, BiLstmEncoder, BiLstmEncoderConfig, ExplicitInputs, LmAssets, LmEncoderConfig,
    Pooling, ScalarMix,
};
use crate::error::{Error, Result};
use crate::lexfeat::{align_subwords, AnnotatedToken, EmbeddingTable, WordPiece};
use crate::params::ParamStore;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_CLASSIFIER_HIDDEN: usize = 256;
/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the loss.
pub const PROBABILITY_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SystemKind {
    RuleBased,
    BilstmTokens,
    BilstmFeatures,
    LmOnly,
    BilstmTokensPlusLm,
    BilstmFeaturesPlusLm,
}

impl SystemKind {
    pub const ALL: [SystemKind; 6] = [
        SystemKind::RuleBased,
        SystemKind::BilstmTokens,
        SystemKind::BilstmFeatures,
        SystemKind::LmOnly,
        SystemKind::BilstmTokensPlusLm,
        SystemKind::BilstmFeaturesPlusLm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::RuleBased => "rule-based",
            SystemKind::BilstmTokens => "bilstm-tokens",
            SystemKind::BilstmFeatures => "bilstm-features",
            SystemKind::LmOnly => "lm",
            SystemKind::BilstmTokensPlusLm => "bilstm-tokens+lm",
            SystemKind::BilstmFeaturesPlusLm => "bilstm-features+lm",
        }
    }

    pub fn uses_bilstm(self) -> bool {
        matches!(
            self,
            SystemKind::BilstmTokens
                | SystemKind::BilstmFeatures
                | SystemKind::BilstmTokensPlusLm
                | SystemKind::BilstmFeaturesPlusLm
        )
    }

    pub fn uses_features(self) -> bool {
        matches!(self, SystemKind::BilstmFeatures | SystemKind::BilstmFeaturesPlusLm)
    }

    pub fn uses_lm(self) -> bool {
        matches!(
            self,
            SystemKind::LmOnly | SystemKind::BilstmTokensPlusLm | SystemKind::BilstmFeaturesPlusLm
        )
    }

    pub fn is_trainable(self) -> bool {
        self != SystemKind::RuleBased
    }

    pub fn names() -> String {
        Self::ALL.map(Self::name).join(", ")
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown system '{s}'; valid systems: {}", Self::names()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig {
    pub kind: SystemKind,
    pub bilstm: Option<BiLstmEncoderConfig>,
    pub lm: Option<LmEncoderConfig>,
    /// Width of the tanh hidden layer of the head; 0 means a direct linear
    /// projection to the logit.
    pub classifier_hidden: usize,
    pub pooling: Pooling,
}

impl SystemConfig {
    /// Default dimensions for `kind`. Pretrained word vectors are off until
    /// a table is supplied.
    pub fn new(kind: SystemKind, lm: Option<LmEncoderConfig>) -> Self {
        let bilstm = kind.uses_bilstm().then(|| BiLstmEncoderConfig {
            use_linguistic_features: kind.uses_features(),
            ..BiLstmEncoderConfig::default()
        });
        SystemConfig {
            kind,
            bilstm,
            lm: if kind.uses_lm() { lm } else { None },
            classifier_hidden: DEFAULT_CLASSIFIER_HIDDEN,
            pooling: Pooling::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bilstm.is_some() != self.kind.uses_bilstm() {
            return Err(Error::Config(format!(
                "system {} {} a BiLSTM configuration",
                self.kind,
                if self.kind.uses_bilstm() { "needs" } else { "takes no" }
            )));
        }
        if self.lm.is_some() != self.kind.uses_lm() {
            return Err(Error::Config(format!(
                "system {} {} an LM configuration",
                self.kind,
                if self.kind.uses_lm() { "needs" } else { "takes no" }
            )));
        }
        if let Some(b) = &self.bilstm {
            b.validate()?;
        }
        if let Some(lm) = &self.lm {
            if lm.layer_count == 0 || lm.hidden_dim == 0 {
                return Err(Error::Config(format!(
                    "LM needs at least one layer and a positive width: {lm:?}"
                )));
            }
        }
        Ok(())
    }

    /// Width of the classifier input.
    pub fn feature_dim(&self) -> usize {
        self.bilstm.as_ref().map_or(0, BiLstmEncoderConfig::output_dim) + self.lm.as_ref().map_or(0, |l| l.hidden_dim)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("system".to_string(), self.kind.to_string()),
            ("classifier_hidden".into(), self.classifier_hidden.to_string()),
            ("pooling".into(), self.pooling.to_string()),
        ];
        if let Some(b) = &self.bilstm {
            kv.extend([
                ("bilstm.layers".into(), b.layers.to_string()),
                ("bilstm.hidden_per_direction".into(), b.hidden_per_direction.to_string()),
                ("bilstm.token_embedding_dim".into(), b.token_embedding_dim.to_string()),
                (
                    "bilstm.feature_embedding_dim".into(),
                    b.feature_embedding_dim.to_string(),
                ),
                (
                    "bilstm.use_linguistic_features".into(),
                    b.use_linguistic_features.to_string(),
                ),
                (
                    "bilstm.use_pretrained_word_embeddings".into(),
                    b.use_pretrained_word_embeddings.to_string(),
                ),
            ]);
        }
        if let Some(lm) = &self.lm {
            kv.extend([
                ("lm.checkpoint_id".into(), lm.checkpoint_id.clone()),
                ("lm.layer_count".into(), lm.layer_count.to_string()),
                ("lm.hidden_dim".into(), lm.hidden_dim.to_string()),
                ("lm.finetune".into(), lm.finetune.to_string()),
            ]);
        }
        kv
    }

    pub fn from_pairs(kv: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = kv.get(key).ok_or_else(|| Error::Config(format!("missing key {key}")))?;
            raw.parse()
                .map_err(|_| Error::Config(format!("bad value for {key}: {raw}")))
        }
        let kind: SystemKind = get(kv, "system")?;
        let bilstm = if kind.uses_bilstm() {
            Some(BiLstmEncoderConfig {
                layers: get(kv, "bilstm.layers")?,
                hidden_per_direction: get(kv, "bilstm.hidden_per_direction")?,
                token_embedding_dim: get(kv, "bilstm.token_embedding_dim")?,
                feature_embedding_dim: get(kv, "bilstm.feature_embedding_dim")?,
                use_linguistic_features: get(kv, "bilstm.use_linguistic_features")?,
                use_pretrained_word_embeddings: get(kv, "bilstm.use_pretrained_word_embeddings")?,
            })
        } else {
            None
        };
        let lm = if kind.uses_lm() {
            Some(LmEncoderConfig {
                checkpoint_id: get(kv, "lm.checkpoint_id")?,
                layer_count: get(kv, "lm.layer_count")?,
                hidden_dim: get(kv, "lm.hidden_dim")?,
                finetune: get(kv, "lm.finetune")?,
            })
        } else {
            None
        };
        let config = SystemConfig {
            kind,
            bilstm,
            lm,
            classifier_hidden: get(kv, "classifier_hidden")?,
            pooling: get(kv, "pooling")?,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Surface vocabulary of the learned token embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub const PAD: &'static str = "<pad>";
    pub const UNK: &'static str = "<unk>";
    pub const PAD_ID: u32 = 0;
    pub const UNK_ID: u32 = 1;

    /// Surfaces seen at least `min_count` times, ordered by first
    /// occurrence.
    pub fn build(utterances: &[Utterance], min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut order = Vec::new();
        for utt in utterances {
            for tok in &utt.tokens {
                let c = counts.entry(&tok.surface).or_insert(0);
                if *c == 0 {
                    order.push(tok.surface.as_str());
                }
                *c += 1;
            }
        }
        let words = order
            .into_iter()
            .filter(|w| counts[w] >= min_count.max(1))
            .map(String::from);
        Self::from_words(words).expect("specials are added once")
    }

    /// Vocabulary from words in id order, specials excluded.
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut all = vec![Self::PAD.to_string(), Self::UNK.to_string()];
        all.extend(words);
        let mut index = HashMap::with_capacity(all.len());
        for (i, w) in all.iter().enumerate() {
            if index.insert(w.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry '{w}'")));
            }
        }
        Ok(Vocabulary { words: all, index })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(Self::PAD) || lines.next() != Some(Self::UNK) {
            return Err(Error::Config("vocabulary must start with <pad> and <unk>".into()));
        }
        Self::from_words(lines.map(String::from))
    }

    pub fn to_text(&self) -> String {
        let mut s = self.words.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, surface: &str) -> u32 {
        self.index.get(surface).copied().unwrap_or(Self::UNK_ID)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f32>,
    pub labels: Vec<bool>,
}

impl Prediction {
    pub fn from_probabilities(probabilities: Vec<f32>, threshold: f64) -> Self {
        let labels = probabilities.iter().map(|&p| p as f64 >= threshold).collect();
        Prediction { probabilities, labels }
    }
}

/// Break after every punctuation token except the last token.
pub fn rule_based_predict(tokens: &[AnnotatedToken]) -> Prediction {
    let n = tokens.len();
    let probabilities = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| if t.is_punct() && i + 1 < n { 1.0 } else { 0.0 })
        .collect();
    Prediction::from_probabilities(probabilities, DEFAULT_THRESHOLD)
}

/// Mean binary cross-entropy over tokens.
pub fn loss(probabilities: &[f64], labels: &[bool]) -> Result<f64> {
    if probabilities.len() != labels.len() {
        return Err(Error::Length(format!(
            "{} probabilities against {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROBABILITY_EPS, 1.0 - PROBABILITY_EPS);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Masked mean binary cross-entropy over all real tokens of a batch.
pub fn masked_bce(probabilities: &Tensor, labels: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let p = probabilities.clamp(PROBABILITY_EPS, 1.0 - PROBABILITY_EPS)?;
    let positive = labels.mul(&p.log()?)?;
    let negative = labels.affine(-1.0, 1.0)?.mul(&p.affine(-1.0, 1.0)?.log()?)?;
    let per_token = (positive + negative)?.neg()?;
    let total = per_token.mul(mask)?.sum_all()?;
    Ok(total.broadcast_div(&mask.sum_all()?)?)
}

/// Padded tensors for a batch of utterances.
#[derive(Clone, Debug)]
pub struct Batch {
    pub lengths: Vec<usize>,
    pub explicit: Option<ExplicitInputs>,
    /// `(batch, subwords)` LM input ids and key mask.
    pub lm_ids: Option<Tensor>,
    pub lm_mask: Option<Tensor>,
    /// `(batch, tokens, subwords)` subword-to-word pooling weights.
    pub pool: Option<Tensor>,
    /// `(batch, tokens)` 1 for real tokens, 0 for padding.
    pub mask: Tensor,
    pub labels: Option<Tensor>,
}

struct LmBranch {
    encoder: BertEncoder,
    mix: ScalarMix,
    tokenizer: WordPiece,
    assets: LmAssets,
    store: ParamStore,
}

pub struct PhraseBreakModel {
    config: SystemConfig,
    vocab: Vocabulary,
    word_vectors: Option<EmbeddingTable>,
    bilstm: Option<BiLstmEncoder>,
    lm: Option<LmBranch>,
    hidden: Option<Linear>,
    output: Linear,
    store: ParamStore,
    dtype: DType,
    device: Device,
}

impl fmt::Debug for PhraseBreakModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhraseBreakModel")
            .field("config", &self.config)
            .field("vocab_size", &self.vocab.len())
            .field("parameters", &self.store.parameter_count())
            .finish()
    }
}

impl PhraseBreakModel {
    /// Builds a model. Parameters found in `trained` (a saved model) are
    /// used as is; the rest are drawn from `seed`. The LM starts from the
    /// weights in `lm`.
    pub fn new(
        config: SystemConfig,
        vocab: Vocabulary,
        word_vectors: Option<EmbeddingTable>,
        lm: Option<LmAssets>,
        trained: HashMap<String, Tensor>,
        seed: u64,
        dtype: DType,
    ) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let store = ParamStore::with_preloaded(seed, trained);
        let vb = store.var_builder(dtype, &device);

        let bilstm = match &config.bilstm {
            Some(b) => {
                let pretrained = match (b.use_pretrained_word_embeddings, &word_vectors) {
                    (true, Some(table)) => Some(table.dimension()),
                    (true, None) => {
                        return Err(Error::Config(format!(
                            "system {} is configured with pretrained word vectors but none were given",
                            config.kind
                        )))
                    }
                    (false, _) => None,
                };
                Some(BiLstmEncoder::new(b, vocab.len(), pretrained, vb.pp("bilstm"))?)
            }
            None => None,
        };

        let lm = match (&config.lm, lm) {
            (Some(lm_config), Some(assets)) => {
                Some(Self::lm_branch(lm_config, assets, seed, dtype, &device, vb.pp("mix"))?)
            }
            (Some(_), None) => return Err(Error::Config(format!("system {} needs a pretrained LM", config.kind))),
            (None, _) => None,
        };

        let input_dim = config.feature_dim();
        let head = vb.pp("classifier");
        let (hidden, output) = if config.classifier_hidden > 0 {
            let hidden = candle_nn::linear(input_dim, config.classifier_hidden, head.pp("hidden"))?;
            let output = candle_nn::linear(config.classifier_hidden, 1, head.pp("output"))?;
            (Some(hidden), output)
        } else {
            (None, candle_nn::linear(input_dim, 1, head.pp("output"))?)
        };

        Ok(PhraseBreakModel {
            config,
            vocab,
            word_vectors,
            bilstm,
            lm,
            hidden,
            output,
            store,
            dtype,
            device,
        })
    }

    fn lm_branch(
        config: &LmEncoderConfig,
        assets: LmAssets,
        seed: u64,
        dtype: DType,
        device: &Device,
        mix_vb: VarBuilder,
    ) -> Result<LmBranch> {
        if config.layer_count != assets.config.num_hidden_layers || config.hidden_dim != assets.config.hidden_size {
            return Err(Error::Config(format!(
                "LM configuration {config:?} does not match checkpoint {} ({} layers, width {})",
                assets.dir.display(),
                assets.config.num_hidden_layers,
                assets.config.hidden_size
            )));
        }
        let store = ParamStore::with_preloaded(seed, assets.weights.clone());
        let encoder = BertEncoder::new(&assets.config, store.var_builder(dtype, device))?;
        let mix = ScalarMix::new(encoder.layer_count(), mix_vb)?;
        Ok(LmBranch {
            encoder,
            mix,
            tokenizer: assets.tokenizer.clone(),
            assets,
            store,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn word_vectors(&self) -> Option<&EmbeddingTable> {
        self.word_vectors.as_ref()
    }

    pub fn lm_assets(&self) -> Option<&LmAssets> {
        self.lm.as_ref().map(|b| &b.assets)
    }

    pub fn scalar_mix(&self) -> Option<&ScalarMix> {
        self.lm.as_ref().map(|b| &b.mix)
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Parameters owned by this model (everything except the LM).
    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn lm_store(&self) -> Option<&ParamStore> {
        self.lm.as_ref().map(|b| &b.store)
    }

    /// Parameters the optimizer updates: the model's own, plus the LM's
    /// when it is fine-tuned.
    pub fn trainable_vars(&self) -> Vec<Var> {
        let mut vars = self.store.vars();
        if let (Some(branch), Some(lm)) = (&self.lm, &self.config.lm) {
            if lm.finetune {
                vars.extend(branch.store.vars());
            }
        }
        vars
    }

    /// Values of every parameter, LM included, for best-epoch restore.
    pub fn snapshot(&self) -> Result<Vec<Vec<(String, Tensor)>>> {
        let mut s = vec![self.store.snapshot()?];
        if let Some(b) = &self.lm {
            s.push(b.store.snapshot()?);
        }
        Ok(s)
    }

    pub fn restore(&self, snapshot: &[Vec<(String, Tensor)>]) -> Result<()> {
        self.store.restore(&snapshot[0])?;
        if let (Some(b), Some(lm)) = (&self.lm, snapshot.get(1)) {
            b.store.restore(lm)?;
        }
        Ok(())
    }

    /// Pads and indexes a batch of utterances.
    pub fn encode_batch(&self, utterances: &[&Utterance]) -> Result<Batch> {
        if utterances.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        if let Some(u) = utterances.iter().find(|u| u.is_empty()) {
            return Err(Error::InvalidUtterance {
                id: u.id.clone(),
                message: "no tokens".into(),
            });
        }
        let b = utterances.len();
        let lengths: Vec<usize> = utterances.iter().map(|u| u.len()).collect();
        let t = *lengths.iter().max().expect("non-empty batch");
        let dev = &self.device;

        let mut mask = vec![0f32; b * t];
        for (i, &len) in lengths.iter().enumerate() {
            mask[i * t..i * t + len].fill(1.0);
        }
        let mask = Tensor::from_vec(mask, (b, t), dev)?.to_dtype(self.dtype)?;

        let labels = if utterances.iter().all(|u| u.labels.is_some()) {
            let mut y = vec![0f32; b * t];
            for (i, u) in utterances.iter().enumerate() {
                for (j, &l) in u.labels.as_ref().expect("checked").iter().enumerate() {
                    y[i * t + j] = if l { 1.0 } else { 0.0 };
                }
            }
            Some(Tensor::from_vec(y, (b, t), dev)?.to_dtype(self.dtype)?)
        } else {
            None
        };

        let explicit = match &self.bilstm {
            Some(_) => Some(self.explicit_inputs(utterances, &lengths, t)?),
            None => None,
        };

        let (lm_ids, lm_mask, pool) = match &self.lm {
            Some(branch) => {
                let (ids, m, p) = self.lm_inputs(branch, utterances, t)?;
                (Some(ids), Some(m), Some(p))
            }
            None => (None, None, None),
        };

        Ok(Batch {
            lengths,
            explicit,
            lm_ids,
            lm_mask,
            pool,
            mask,
            labels,
        })
    }

    fn explicit_inputs(&self, utterances: &[&Utterance], lengths: &[usize], t: usize) -> Result<ExplicitInputs> {
        let b = utterances.len();
        let dev = &self.device;
        let mut token = vec![Vocabulary::PAD_ID; b * t];
        let mut pos = vec![0u32; b * t];
        let mut rel = vec![0u32; b * t];
        let mut dist = vec![0u32; b * t];
        for (i, u) in utterances.iter().enumerate() {
            for (j, tok) in u.tokens.iter().enumerate() {
                let k = i * t + j;
                token[k] = self.vocab.id(&tok.surface);
                pos[k] = tok.pos.index() as u32;
                rel[k] = tok.dep_rel.index() as u32;
                dist[k] = tok.head_distance(j).index() as u32;
            }
        }
        let word_vectors = match (&self.word_vectors, &self.config.bilstm) {
            (Some(table), Some(cfg)) if cfg.use_pretrained_word_embeddings => {
                let d = table.dimension();
                let mut v = vec![0f32; b * t * d];
                for (i, u) in utterances.iter().enumerate() {
                    for (j, tok) in u.tokens.iter().enumerate() {
                        let start = (i * t + j) * d;
                        v[start..start + d].copy_from_slice(table.row(table.row_of(&tok.surface)));
                    }
                }
                Some(Tensor::from_vec(v, (b, t, d), dev)?.to_dtype(self.dtype)?)
            }
            _ => None,
        };
        let ids = |v: Vec<u32>| Tensor::from_vec(v, (b, t), dev);
        Ok(ExplicitInputs {
            token_ids: ids(token)?,
            pos_ids: ids(pos)?,
            rel_ids: ids(rel)?,
            distance_ids: ids(dist)?,
            word_vectors,
            lengths: lengths.to_vec(),
        })
    }

    fn lm_inputs(&self, branch: &LmBranch, utterances: &[&Utterance], t: usize) -> Result<(Tensor, Tensor, Tensor)> {
        let b = utterances.len();
        let mut sequences = Vec::with_capacity(b);
        for u in utterances {
            let subwords = branch.tokenizer.tokenize(&u.tokens);
            let alignment = align_subwords(&u.tokens, &subwords).map_err(|e| Error::InvalidUtterance {
                id: u.id.clone(),
                message: e.to_string(),
            })?;
            let mut ids = Vec::with_capacity(subwords.len() + 2);
            ids.push(branch.tokenizer.cls_id());
            ids.extend(subwords.iter().map(|s| s.id));
            ids.push(branch.tokenizer.sep_id());
            sequences.push((ids, alignment));
        }
        let s = sequences
            .iter()
            .map(|(ids, _)| ids.len())
            .max()
            .expect("non-empty batch");
        let max = branch.encoder.max_positions();
        if s > max {
            return Err(Error::Overlength { len: s, max });
        }
        let mut ids = vec![branch.tokenizer.pad_id(); b * s];
        let mut mask = vec![0f32; b * s];
        let mut pool = Vec::with_capacity(b * t * s);
        for (i, (seq, alignment)) in sequences.iter().enumerate() {
            ids[i * s..i * s + seq.len()].copy_from_slice(seq);
            mask[i * s..i * s + seq.len()].fill(1.0);
            // Column 0 is the sequence-start marker, which no word covers.
            pool.extend(pooling_matrix(alignment, self.config.pooling, 1, t, s));
        }
        let dev = &self.device;
        Ok((
            Tensor::from_vec(ids, (b, s), dev)?,
            Tensor::from_vec(mask, (b, s), dev)?.to_dtype(self.dtype)?,
            Tensor::from_vec(pool, (b, t, s), dev)?.to_dtype(self.dtype)?,
        ))
    }

    /// Classifier input, `(batch, tokens, feature_dim)`.
    pub fn features(&self, batch: &Batch) -> Result<Tensor> {
        let explicit = match (&self.bilstm, &batch.explicit) {
            (Some(encoder), Some(inputs)) => Some(encoder.forward(inputs)?),
            (Some(_), None) => return Err(Error::Shape("batch lacks BiLSTM inputs".into())),
            _ => None,
        };
        let implicit = match (&self.lm, &batch.lm_ids, &batch.lm_mask, &batch.pool) {
            (Some(branch), Some(ids), Some(mask), Some(pool)) => {
                let layers = branch.encoder.forward(ids, mask)?;
                let mixed = branch.mix.forward(&layers)?;
                Some(pool.matmul(&mixed)?)
            }
            (Some(_), ..) => return Err(Error::Shape("batch lacks LM inputs".into())),
            _ => None,
        };
        match (explicit, implicit) {
            (Some(e), Some(i)) => fuse(&e, &i),
            (Some(x), None) | (None, Some(x)) => Ok(x),
            (None, None) => Err(Error::Config("system has no encoder".into())),
        }
    }

    /// Break probabilities, `(batch, tokens)`; padding positions hold
    /// arbitrary values.
    pub fn forward(&self, batch: &Batch) -> Result<Tensor> {
        let mut x = self.features(batch)?;
        if let Some(hidden) = &self.hidden {
            x = hidden.forward(&x)?.tanh()?;
        }
        let logits = self.output.forward(&x)?.squeeze(D::Minus1)?;
        Ok(candle_nn::ops::sigmoid(&logits)?)
    }

    /// Mean cross-entropy over the real tokens of a labeled batch.
    pub fn loss(&self, batch: &Batch) -> Result<Tensor> {
        let labels = batch
            .labels
            .as_ref()
            .ok_or_else(|| Error::Config("loss needs labeled utterances".into()))?;
        masked_bce(&self.forward(batch)?, labels, &batch.mask)
    }

    pub fn predict_batch(&self, utterances: &[&Utterance], threshold: f64) -> Result<Vec<Prediction>> {
        let batch = self.encode_batch(utterances)?;
        let probs: Vec<Vec<f32>> = self.forward(&batch)?.to_dtype(DType::F32)?.to_vec2()?;
        Ok(probs
            .into_iter()
            .zip(&batch.lengths)
            .map(|(mut p, &len)| {
                p.truncate(len);
                Prediction::from_probabilities(p, threshold)
            })
            .collect())
    }

    pub fn predict(&self, utterances: &[Utterance], threshold: f64, batch_size: usize) -> Result<Vec<Prediction>> {
        let refs: Vec<&Utterance> = utterances.iter().collect();
        let mut out = Vec::with_capacity(utterances.len());
        for chunk in refs.chunks(batch_size.max(1)) {
            out.extend(self.predict_batch(chunk, threshold)?);
        }
        Ok(out)
    }
}

/// A trained model or the punctuation rule.
#[derive(Debug)]
pub enum Predictor {
    RuleBased,
    Neural {
        model: Box<PhraseBreakModel>,
        threshold: f64,
    },
}

impl Predictor {
    pub fn system(&self) -> SystemKind {
        match self {
            Predictor::RuleBased => SystemKind::RuleBased,
            Predictor::Neural { model, .. } => model.config().kind,
        }
    }

    pub fn predict(&self, utterances: &[Utterance]) -> Result<Vec<Prediction>> {
        match self {
            Predictor::RuleBased => Ok(utterances.iter().map(|u| rule_based_predict(&u.tokens)).collect()),
            Predictor::Neural { model, threshold } => {
                let empty: Vec<usize> = (0..utterances.len()).filter(|&i| utterances[i].is_empty()).collect();
                if empty.is_empty() {
                    return model.predict(utterances, *threshold, 64);
                }
                // Token-less utterances get empty predictions.
                let kept: Vec<Utterance> = utterances.iter().filter(|u| !u.is_empty()).cloned().collect();
                let mut predicted = model.predict(&kept, *threshold, 64)?.into_iter();
                Ok(utterances
                    .iter()
                    .map(|u| {
                        if u.is_empty() {
                            Prediction::from_probabilities(Vec::new(), *threshold)
                        } else {
                            predicted.next().expect("one prediction per kept utterance")
                        }
                    })
                    .collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexfeat::{DepRel, PosTag};

    fn tok(surface: &str, punct: bool) -> AnnotatedToken {
        let pos = if punct { PosTag::Punct } else { PosTag::Noun };
        AnnotatedToken::new(surface, pos, None, DepRel::Root)
    }

    #[test]
    fn system_names_round_trip() {
        for kind in SystemKind::ALL {
            assert_eq!(kind.name().parse::<SystemKind>().unwrap(), kind);
        }
        let err = "bilstm".parse::<SystemKind>().unwrap_err();
        assert!(err.contains("bilstm-features+lm"));
    }

    #[test]
    fn rule_based_examples() {
        let p = rule_based_predict(&[tok("a", false), tok("、", true), tok("b", false), tok("。", true)]);
        assert_eq!(p.labels, [false, true, false, false]);
        assert!(p.probabilities.iter().all(|&x| x == 0.0 || x == 1.0));
        let p = rule_based_predict(&[tok("a", false), tok("b", false)]);
        assert_eq!(p.labels, [false, false]);
        let p = rule_based_predict(&[tok("、", true), tok("、", true), tok("。", true)]);
        assert_eq!(p.labels, [true, true, false]);
    }

    #[test]
    fn loss_examples() {
        assert!(loss(&[1.0, 0.0, 1.0], &[true, false, true]).unwrap() <= 1e-6);
        let half = loss(&[0.5; 4], &[true, false, false, true]).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(loss(&[0.5], &[]).is_err());
    }

    #[test]
    fn tensor_loss_matches_scalar_loss() {
        let p = [0.9f64, 0.2, 0.6, 0.3];
        let y = [true, false, false, true];
        let dev = Device::Cpu;
        let pt = Tensor::new(&[[p[0], p[1]], [p[2], p[3]]], &dev).unwrap();
        let yt = Tensor::new(&[[1f64, 0.], [0., 1.]], &dev).unwrap();
        let mask = Tensor::ones((2, 2), DType::F64, &dev).unwrap();
        let got: f64 = masked_bce(&pt, &yt, &mask).unwrap().to_scalar().unwrap();
        assert!((got - loss(&p, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn config_pairs_round_trip() {
        let lm = LmEncoderConfig {
            checkpoint_id: "models/bert".into(),
            layer_count: 12,
            hidden_dim: 768,
            finetune: true,
        };
        for kind in SystemKind::ALL {
            let config = SystemConfig::new(kind, Some(lm.clone()));
            config.validate().unwrap();
            let kv: BTreeMap<String, String> = config.to_pairs().into_iter().collect();
            assert_eq!(SystemConfig::from_pairs(&kv).unwrap(), config);
        }
        let fused = SystemConfig::new(SystemKind::BilstmFeaturesPlusLm, Some(lm));
        assert_eq!(fused.feature_dim(), 512 + 768);
    }

    #[test]
    fn vocabulary_text_round_trip() {
        let v = Vocabulary::from_words(["今日".to_string(), "は".to_string()]).unwrap();
        assert_eq!(v.id("今日"), 2);
        assert_eq!(v.id("明日"), Vocabulary::UNK_ID);
        assert_eq!(Vocabulary::parse(&v.to_text()).unwrap(), v);
        assert!(Vocabulary::from_words(["a".to_string(), "a".to_string()]).is_err());
    }
}
