use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use candle::{DType, Device, Tensor, D};
use candle_nn::{Embedding, Init, Module, VarBuilder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lexfeat::WordPiece;
use crate::params::ParamStore;

const CONFIG_FILE: &str = "config.json";
const VOCAB_FILE: &str = "vocab.txt";
const WEIGHTS_FILE: &str = "model.safetensors";

/// The subset of a Hugging Face BERT `config.json` the encoder needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BertConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    #[serde(default = "default_act")]
    pub hidden_act: String,
    pub max_position_embeddings: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
}

fn default_act() -> String {
    "gelu".into()
}

fn default_type_vocab() -> usize {
    2
}

fn default_eps() -> f64 {
    1e-12
}

impl BertConfig {
    /// A small configuration for smoke runs and tests.
    pub fn tiny(vocab_size: usize) -> Self {
        BertConfig {
            vocab_size,
            hidden_size: 16,
            num_hidden_layers: 3,
            num_attention_heads: 2,
            intermediate_size: 32,
            hidden_act: default_act(),
            max_position_embeddings: 128,
            type_vocab_size: 2,
            layer_norm_eps: 1e-12,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_hidden_layers == 0
            || self.num_attention_heads == 0
            || !self.hidden_size.is_multiple_of(self.num_attention_heads)
        {
            return Err(Error::Config(format!(
                "unusable BERT configuration: {} layers, {} heads, hidden size {}",
                self.num_hidden_layers, self.num_attention_heads, self.hidden_size
            )));
        }
        if !matches!(self.hidden_act.as_str(), "gelu" | "gelu_new" | "relu") {
            return Err(Error::Config(format!("unsupported activation {}", self.hidden_act)));
        }
        Ok(())
    }
}

/// How the LM branch is used by a system.
#[derive(Clone, Debug, PartialEq)]
pub struct LmEncoderConfig {
    /// Directory of the pretrained checkpoint (`config.json`, `vocab.txt`,
    /// `model.safetensors`).
    pub checkpoint_id: String,
    pub layer_count: usize,
    pub hidden_dim: usize,
    pub finetune: bool,
}

/// A pretrained checkpoint loaded from its directory.
#[derive(Clone, Debug)]
pub struct LmAssets {
    pub dir: PathBuf,
    pub config: BertConfig,
    pub config_json: String,
    pub tokenizer: WordPiece,
    pub weights: HashMap<String, Tensor>,
}

impl LmAssets {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        Self::load_with_weights(dir.as_ref(), &dir.as_ref().join(WEIGHTS_FILE))
    }

    pub(crate) fn load_with_weights(dir: &Path, weights: &Path) -> Result<Self> {
        let config_path = dir.join(CONFIG_FILE);
        let config_json = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
        let config: BertConfig =
            serde_json::from_str(&config_json).map_err(|e| Error::Config(format!("{}: {e}", config_path.display())))?;
        config.validate()?;
        let tokenizer = WordPiece::read(dir.join(VOCAB_FILE))?;
        if !weights.exists() {
            return Err(Error::Config(format!(
                "{} not found; only safetensors checkpoints are supported",
                weights.display()
            )));
        }
        let raw = candle::safetensors::load(weights, &Device::Cpu)?;
        let weights = raw
            .into_iter()
            .filter_map(|(name, t)| normalize_name(&name).map(|n| (n, t)))
            .collect();
        Ok(LmAssets {
            dir: dir.to_path_buf(),
            config,
            config_json,
            tokenizer,
            weights,
        })
    }

    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.config_json.as_bytes());
        hasher.update(self.tokenizer.fingerprint().as_bytes());
        hex::encode(hasher.finalize())
    }

    pub fn encoder_config(&self, finetune: bool) -> LmEncoderConfig {
        LmEncoderConfig {
            checkpoint_id: self.dir.display().to_string(),
            layer_count: self.config.num_hidden_layers,
            hidden_dim: self.config.hidden_size,
            finetune,
        }
    }

    /// Copies config and vocabulary next to saved weights.
    pub(crate) fn write_metadata(&self, dir: &Path) -> Result<()> {
        let config = dir.join(CONFIG_FILE);
        fs::write(&config, &self.config_json).map_err(|e| Error::io(&config, e))?;
        let vocab = dir.join(VOCAB_FILE);
        fs::write(&vocab, self.tokenizer.to_vocab_text()).map_err(|e| Error::io(&vocab, e))
    }
}

/// Maps checkpoint names onto encoder names: drops the `bert.` prefix and
/// heads that are not part of the encoder, renames old LayerNorm names.
fn normalize_name(name: &str) -> Option<String> {
    let name = name.strip_prefix("bert.").unwrap_or(name);
    if !(name.starts_with("embeddings.") || name.starts_with("encoder.")) {
        return None;
    }
    let name = if let Some(stem) = name.strip_suffix(".gamma") {
        format!("{stem}.weight")
    } else if let Some(stem) = name.strip_suffix(".beta") {
        format!("{stem}.bias")
    } else {
        name.to_string()
    };
    Some(name)
}

/// Writes a randomly initialized checkpoint in the layout [`LmAssets::load`]
/// reads; used for smoke runs and tests where no pretrained model exists.
pub fn create_random_lm(dir: impl AsRef<Path>, config: &BertConfig, tokenizer: &WordPiece, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    if config.vocab_size != tokenizer.len() {
        return Err(Error::Config(format!(
            "vocab_size {} differs from the {} vocabulary entries",
            config.vocab_size,
            tokenizer.len()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let store = ParamStore::new(seed);
    BertEncoder::new(config, store.var_builder(DType::F32, &Device::Cpu))?;
    store.save(&dir.join(WEIGHTS_FILE))?;
    let json = serde_json::to_string_pretty(config).expect("config serializes");
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, json).map_err(|e| Error::io(&config_path, e))?;
    let vocab = dir.join(VOCAB_FILE);
    fs::write(&vocab, tokenizer.to_vocab_text()).map_err(|e| Error::io(&vocab, e))
}

const WEIGHT_INIT: Init = Init::Randn { mean: 0.0, stdev: 0.02 };

#[derive(Clone, Debug)]
struct Dense {
    weight: Tensor,
    bias: Tensor,
}

impl Dense {
    fn new(input: usize, output: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Dense {
            weight: vb.get_with_hints((output, input), "weight", WEIGHT_INIT)?,
            bias: vb.get_with_hints(output, "bias", Init::Const(0.0))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

/// Differentiable layer normalization over the last dimension.
#[derive(Clone, Debug)]
struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    fn new(size: usize, eps: f64, vb: VarBuilder) -> Result<Self> {
        Ok(LayerNorm {
            weight: vb.get_with_hints(size, "weight", Init::Const(1.0))?,
            bias: vb.get_with_hints(size, "bias", Init::Const(0.0))?,
            eps,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

#[derive(Clone, Debug)]
struct Layer {
    query: Dense,
    key: Dense,
    value: Dense,
    attention_output: Dense,
    attention_norm: LayerNorm,
    intermediate: Dense,
    output: Dense,
    output_norm: LayerNorm,
    heads: usize,
    act: String,
}

impl Layer {
    fn new(config: &BertConfig, vb: VarBuilder) -> Result<Self> {
        let h = config.hidden_size;
        let att = vb.pp("attention");
        Ok(Layer {
            query: Dense::new(h, h, att.pp("self").pp("query"))?,
            key: Dense::new(h, h, att.pp("self").pp("key"))?,
            value: Dense::new(h, h, att.pp("self").pp("value"))?,
            attention_output: Dense::new(h, h, att.pp("output").pp("dense"))?,
            attention_norm: LayerNorm::new(h, config.layer_norm_eps, att.pp("output").pp("LayerNorm"))?,
            intermediate: Dense::new(h, config.intermediate_size, vb.pp("intermediate").pp("dense"))?,
            output: Dense::new(config.intermediate_size, h, vb.pp("output").pp("dense"))?,
            output_norm: LayerNorm::new(h, config.layer_norm_eps, vb.pp("output").pp("LayerNorm"))?,
            heads: config.num_attention_heads,
            act: config.hidden_act.clone(),
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, s, h) = x.dims3()?;
        Ok(x.reshape((b, s, self.heads, h / self.heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    fn forward(&self, x: &Tensor, attention_bias: &Tensor) -> Result<Tensor> {
        let (b, s, h) = x.dims3()?;
        let head_dim = h / self.heads;
        let q = self.split_heads(&self.query.forward(x)?)?;
        let k = self.split_heads(&self.key.forward(x)?)?;
        let v = self.split_heads(&self.value.forward(x)?)?;
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (head_dim as f64).sqrt())?;
        let scores = scores.broadcast_add(attention_bias)?;
        let probs = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let context = probs.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, s, h))?;
        let attended = self
            .attention_norm
            .forward(&(self.attention_output.forward(&context)? + x)?)?;
        let inner = self.intermediate.forward(&attended)?;
        let inner = match self.act.as_str() {
            "relu" => inner.relu()?,
            "gelu_new" => inner.gelu()?,
            _ => inner.gelu_erf()?,
        };
        self.output_norm.forward(&(self.output.forward(&inner)? + attended)?)
    }
}

/// BERT encoder that exposes the output of every transformer layer.
#[derive(Clone, Debug)]
pub struct BertEncoder {
    word_embeddings: Embedding,
    position_embeddings: Embedding,
    token_type_embeddings: Embedding,
    embedding_norm: LayerNorm,
    layers: Vec<Layer>,
    max_positions: usize,
    hidden: usize,
}

impl BertEncoder {
    /// Parameter names follow the Hugging Face BERT layout, so pretrained
    /// weights are picked up by name.
    pub fn new(config: &BertConfig, vb: VarBuilder) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_size;
        let emb = vb.pp("embeddings");
        let table = |rows: usize, name: &str| -> Result<Embedding> {
            let weight = emb.pp(name).get_with_hints((rows, h), "weight", WEIGHT_INIT)?;
            Ok(Embedding::new(weight, h))
        };
        let word_embeddings = table(config.vocab_size, "word_embeddings")?;
        let position_embeddings = table(config.max_position_embeddings, "position_embeddings")?;
        let token_type_embeddings = table(config.type_vocab_size, "token_type_embeddings")?;
        let embedding_norm = LayerNorm::new(h, config.layer_norm_eps, emb.pp("LayerNorm"))?;
        let layers = (0..config.num_hidden_layers)
            .map(|i| Layer::new(config, vb.pp("encoder").pp("layer").pp(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(BertEncoder {
            word_embeddings,
            position_embeddings,
            token_type_embeddings,
            embedding_norm,
            layers,
            max_positions: config.max_position_embeddings,
            hidden: h,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn max_positions(&self) -> usize {
        self.max_positions
    }

    /// Runs `(batch, seq)` u32 ids with a `(batch, seq)` 1/0 mask and
    /// returns one `(batch, seq, hidden)` tensor per transformer layer.
    pub fn forward(&self, ids: &Tensor, mask: &Tensor) -> Result<Vec<Tensor>> {
        let (batch, seq) = ids.dims2()?;
        if seq == 0 {
            return Err(Error::Shape("empty subword sequence".into()));
        }
        if seq > self.max_positions {
            return Err(Error::Overlength {
                len: seq,
                max: self.max_positions,
            });
        }
        let device = ids.device();
        let positions = Tensor::arange(0u32, seq as u32, device)?;
        let types = Tensor::zeros((batch, seq), DType::U32, device)?;
        let embedded = self
            .word_embeddings
            .forward(ids)?
            .broadcast_add(&self.position_embeddings.forward(&positions)?)?
            .add(&self.token_type_embeddings.forward(&types)?)?;
        let mut x = self.embedding_norm.forward(&embedded)?;
        let dtype = x.dtype();
        // Padded keys get a large negative score.
        let bias = ((mask.to_dtype(dtype)?.affine(-1.0, 1.0))? * -1e9)?.reshape((batch, 1, 1, seq))?;
        let mut outputs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            x = layer.forward(&x, &bias)?;
            outputs.push(x.clone());
        }
        Ok(outputs)
    }

    /// Single unpadded sequence of ids; one `(len, hidden)` matrix per layer.
    pub fn encode(&self, ids: &[u32], dtype: DType, device: &Device) -> Result<Vec<Tensor>> {
        if ids.is_empty() {
            return Err(Error::Shape("empty subword sequence".into()));
        }
        let t = Tensor::from_slice(ids, (1, ids.len()), device)?;
        let mask = Tensor::ones((1, ids.len()), dtype, device)?;
        self.forward(&t, &mask)?
            .into_iter()
            .map(|layer| Ok(layer.squeeze(0)?))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encoder(layers: usize, seed: u64) -> BertEncoder {
        let mut config = BertConfig::tiny(30);
        config.num_hidden_layers = layers;
        config.max_position_embeddings = 10;
        let store = ParamStore::new(seed);
        BertEncoder::new(&config, store.var_builder(DType::F32, &Device::Cpu)).unwrap()
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f32 {
        (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap()
    }

    #[test]
    fn one_output_per_layer() {
        let enc = encoder(4, 1);
        let out = enc.encode(&[2, 5, 6, 7, 8, 9, 3], DType::F32, &Device::Cpu).unwrap();
        assert_eq!(out.len(), 4);
        for layer in &out {
            assert_eq!(layer.dims(), &[7, 16]);
        }
        let again = enc.encode(&[2, 5, 6, 7, 8, 9, 3], DType::F32, &Device::Cpu).unwrap();
        assert_eq!(max_diff(&out[3], &again[3]), 0.0);
    }

    #[test]
    fn empty_and_overlength_sequences() {
        let enc = encoder(1, 1);
        assert!(enc.encode(&[], DType::F32, &Device::Cpu).is_err());
        let err = enc.encode(&[1; 11], DType::F32, &Device::Cpu).unwrap_err();
        assert!(matches!(err, Error::Overlength { len: 11, max: 10 }));
    }

    #[test]
    fn padding_is_masked() {
        let enc = encoder(2, 3);
        let alone = enc.encode(&[2, 5, 3], DType::F32, &Device::Cpu).unwrap();
        let ids = Tensor::new(&[[2u32, 5, 3, 0, 0], [2, 7, 8, 9, 3]], &Device::Cpu).unwrap();
        let mask = Tensor::new(&[[1f32, 1., 1., 0., 0.], [1., 1., 1., 1., 1.]], &Device::Cpu).unwrap();
        let batched = enc.forward(&ids, &mask).unwrap();
        let part = batched[1].get(0).unwrap().narrow(0, 0, 3).unwrap();
        assert!(max_diff(&alone[1], &part) < 1e-5);
    }

    #[test]
    fn checkpoint_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = WordPiece::char_vocab(["今日は晴れ"]);
        let config = BertConfig::tiny(vocab.len());
        create_random_lm(dir.path(), &config, &vocab, 11).unwrap();
        let assets = LmAssets::load(dir.path()).unwrap();
        assert_eq!(assets.config, config);
        assert_eq!(assets.tokenizer.len(), vocab.len());
        assert!(assets.weights.contains_key("encoder.layer.2.output.LayerNorm.weight"));

        // Loading twice gives identical encoders.
        let build = || {
            let store = ParamStore::with_preloaded(99, assets.weights.clone());
            BertEncoder::new(&assets.config, store.var_builder(DType::F32, &Device::Cpu)).unwrap()
        };
        let a = build().encode(&[2, 6, 7, 3], DType::F32, &Device::Cpu).unwrap();
        let b = build().encode(&[2, 6, 7, 3], DType::F32, &Device::Cpu).unwrap();
        assert_eq!(max_diff(&a[2], &b[2]), 0.0);

        let mut bad = config.clone();
        bad.vocab_size += 1;
        assert!(create_random_lm(dir.path(), &bad, &vocab, 1).is_err());
    }

    #[test]
    fn hugging_face_names() {
        assert_eq!(
            normalize_name("bert.encoder.layer.0.attention.output.LayerNorm.gamma").as_deref(),
            Some("encoder.layer.0.attention.output.LayerNorm.weight")
        );
        assert_eq!(normalize_name("cls.predictions.bias"), None);
        assert_eq!(normalize_name("bert.pooler.dense.weight"), None);
    }
}
