use candle::{Tensor, D};
use candle_nn::rnn::{Direction, LSTMConfig, LSTM, RNN};
use candle_nn::{Embedding, Init, Module, VarBuilder};

use crate::error::{Error, Result};
use crate::lexfeat::{DepRel, HeadDistance, PosTag};

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmEncoderConfig {
    pub layers: usize,
    pub hidden_per_direction: usize,
    pub token_embedding_dim: usize,
    /// Size of each of the POS, relation and head-distance embeddings.
    pub feature_embedding_dim: usize,
    pub use_linguistic_features: bool,
    pub use_pretrained_word_embeddings: bool,
}

impl Default for BiLstmEncoderConfig {
    fn default() -> Self {
        BiLstmEncoderConfig {
            layers: 2,
            hidden_per_direction: 256,
            token_embedding_dim: 256,
            feature_embedding_dim: 32,
            use_linguistic_features: false,
            use_pretrained_word_embeddings: false,
        }
    }
}

impl BiLstmEncoderConfig {
    pub fn with_features() -> Self {
        BiLstmEncoderConfig {
            use_linguistic_features: true,
            use_pretrained_word_embeddings: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0
            || self.hidden_per_direction == 0
            || self.token_embedding_dim == 0
            || self.feature_embedding_dim == 0
        {
            return Err(Error::Config(format!("BiLSTM dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_per_direction
    }
}

/// Batched, padded inputs of the explicit encoder. Index tensors are
/// `(batch, time)` u32; `word_vectors` is `(batch, time, dim)`.
#[derive(Clone, Debug)]
pub struct ExplicitInputs {
    pub token_ids: Tensor,
    pub pos_ids: Tensor,
    pub rel_ids: Tensor,
    pub distance_ids: Tensor,
    pub word_vectors: Option<Tensor>,
    pub lengths: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct BiLstmEncoder {
    config: BiLstmEncoderConfig,
    token_embedding: Embedding,
    features: Option<[Embedding; 3]>,
    pretrained_dim: usize,
    layers: Vec<(LSTM, LSTM)>,
}

impl BiLstmEncoder {
    pub fn new(
        config: &BiLstmEncoderConfig,
        vocab_size: usize,
        pretrained_dim: Option<usize>,
        vb: VarBuilder,
    ) -> Result<Self> {
        config.validate()?;
        let pretrained_dim = match (config.use_pretrained_word_embeddings, pretrained_dim) {
            (true, Some(d)) => d,
            (true, None) => {
                return Err(Error::Config(
                    "pretrained word embeddings enabled but none supplied".into(),
                ))
            }
            (false, _) => 0,
        };
        let token_embedding = candle_nn::embedding(vocab_size, config.token_embedding_dim, vb.pp("token_embedding"))?;
        let features = if config.use_linguistic_features {
            let dim = config.feature_embedding_dim;
            Some([
                candle_nn::embedding(PosTag::count(), dim, vb.pp("pos_embedding"))?,
                candle_nn::embedding(DepRel::count(), dim, vb.pp("rel_embedding"))?,
                candle_nn::embedding(HeadDistance::count(), dim, vb.pp("distance_embedding"))?,
            ])
        } else {
            None
        };
        let hidden = config.hidden_per_direction;
        let bound = 1.0 / (hidden as f64).sqrt();
        let init = Init::Uniform { lo: -bound, up: bound };
        let mut input_dim = config.token_embedding_dim + pretrained_dim;
        if features.is_some() {
            input_dim += 3 * config.feature_embedding_dim;
        }
        let vb = vb.pp("lstm");
        let mut layers = Vec::with_capacity(config.layers);
        for layer_idx in 0..config.layers {
            let cell = |direction| {
                let cfg = LSTMConfig {
                    w_ih_init: init,
                    w_hh_init: init,
                    b_ih_init: Some(init),
                    b_hh_init: Some(init),
                    layer_idx,
                    direction,
                };
                candle_nn::lstm(input_dim, hidden, cfg, vb.clone())
            };
            layers.push((cell(Direction::Forward)?, cell(Direction::Backward)?));
            input_dim = 2 * hidden;
        }
        Ok(BiLstmEncoder {
            config: config.clone(),
            token_embedding,
            features,
            pretrained_dim,
            layers,
        })
    }

    pub fn config(&self) -> &BiLstmEncoderConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    fn embed(&self, inputs: &ExplicitInputs) -> Result<Tensor> {
        let mut parts = vec![self.token_embedding.forward(&inputs.token_ids)?];
        if self.pretrained_dim > 0 {
            let vectors = inputs
                .word_vectors
                .as_ref()
                .ok_or_else(|| Error::Shape("pretrained word vectors missing from the input".into()))?;
            let (b, t, d) = vectors.dims3()?;
            let (eb, et) = inputs.token_ids.dims2()?;
            if (b, t) != (eb, et) || d != self.pretrained_dim {
                return Err(Error::Shape(format!(
                    "word vectors are {b}x{t}x{d}, expected {eb}x{et}x{}",
                    self.pretrained_dim
                )));
            }
            parts.push(vectors.to_dtype(parts[0].dtype())?);
        }
        if let Some([pos, rel, distance]) = &self.features {
            parts.push(pos.forward(&inputs.pos_ids)?);
            parts.push(rel.forward(&inputs.rel_ids)?);
            parts.push(distance.forward(&inputs.distance_ids)?);
        }
        Ok(Tensor::cat(&parts, D::Minus1)?)
    }

    /// `(batch, time, 2 * hidden)`: forward and backward states of the last
    /// layer. Positions past an utterance's length are padding; the backward
    /// direction starts at each utterance's own last token, so padding never
    /// leaks into real positions.
    pub fn forward(&self, inputs: &ExplicitInputs) -> Result<Tensor> {
        let (batch, time) = inputs.token_ids.dims2()?;
        if inputs.lengths.len() != batch || inputs.lengths.iter().any(|&l| l > time) {
            return Err(Error::Shape(format!(
                "lengths {:?} do not fit a {batch}x{time} batch",
                inputs.lengths
            )));
        }
        let mut x = self.embed(inputs)?;
        for (forward, backward) in &self.layers {
            let fwd = run(forward, &x)?;
            let reversed = reverse_padded(&x, &inputs.lengths)?;
            let bwd = reverse_padded(&run(backward, &reversed)?, &inputs.lengths)?;
            x = Tensor::cat(&[fwd, bwd], D::Minus1)?;
        }
        Ok(x)
    }
}

fn run(cell: &LSTM, x: &Tensor) -> Result<Tensor> {
    let states = cell.seq(x)?;
    Ok(cell.states_to_tensor(&states)?)
}

/// Reverses the first `lengths[b]` steps of every sequence in place,
/// leaving padding where it is.
fn reverse_padded(x: &Tensor, lengths: &[usize]) -> Result<Tensor> {
    let (batch, time, dim) = x.dims3()?;
    let mut index = Vec::with_capacity(batch * time);
    for (b, &len) in lengths.iter().enumerate() {
        for t in 0..time {
            let source = if t < len { len - 1 - t } else { t };
            index.push((b * time + source) as u32);
        }
    }
    let index = Tensor::from_vec(index, batch * time, x.device())?;
    Ok(x.reshape((batch * time, dim))?
        .index_select(&index, 0)?
        .reshape((batch, time, dim))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use candle::{DType, Device};

    fn small_config(features: bool) -> BiLstmEncoderConfig {
        BiLstmEncoderConfig {
            layers: 2,
            hidden_per_direction: 6,
            token_embedding_dim: 5,
            feature_embedding_dim: 3,
            use_linguistic_features: features,
            use_pretrained_word_embeddings: false,
        }
    }

    fn inputs(ids: &[Vec<u32>]) -> ExplicitInputs {
        let time = ids.iter().map(Vec::len).max().unwrap();
        let mut flat = Vec::new();
        for row in ids {
            flat.extend(row);
            flat.extend(std::iter::repeat_n(0, time - row.len()));
        }
        let distance: Vec<u32> = flat.iter().map(|i| i % 6).collect();
        let t = Tensor::from_vec(flat, (ids.len(), time), &Device::Cpu).unwrap();
        ExplicitInputs {
            token_ids: t.clone(),
            pos_ids: t.clone(),
            rel_ids: t.clone(),
            distance_ids: Tensor::from_vec(distance, (ids.len(), time), &Device::Cpu).unwrap(),
            word_vectors: None,
            lengths: ids.iter().map(Vec::len).collect(),
        }
    }

    #[test]
    fn reverse_respects_lengths() {
        let x = Tensor::arange(0f32, 8.0, &Device::Cpu)
            .unwrap()
            .reshape((2, 4, 1))
            .unwrap();
        let r = reverse_padded(&x, &[3, 4]).unwrap();
        let v: Vec<f32> = r.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(v, [2.0, 1.0, 0.0, 3.0, 7.0, 6.0, 5.0, 4.0]);
    }

    #[test]
    fn output_shape_and_determinism() {
        let store = ParamStore::new(0);
        let enc = BiLstmEncoder::new(
            &small_config(false),
            10,
            None,
            store.var_builder(DType::F32, &Device::Cpu),
        )
        .unwrap();
        let inp = inputs(&[vec![1, 2, 3, 4, 5]]);
        let a = enc.forward(&inp).unwrap();
        assert_eq!(a.dims(), &[1, 5, 12]);
        let b = enc.forward(&inp).unwrap();
        let diff = (a - b)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn default_width_is_512() {
        assert_eq!(BiLstmEncoderConfig::default().output_dim(), 512);
    }

    #[test]
    fn bidirectional_context() {
        // Changing token 1 must change the representation at position 4
        // (and, through the backward direction, at position 0).
        let store = ParamStore::new(5);
        let enc = BiLstmEncoder::new(
            &small_config(false),
            10,
            None,
            store.var_builder(DType::F32, &Device::Cpu),
        )
        .unwrap();
        let a = enc.forward(&inputs(&[vec![1, 2, 3, 4, 5]])).unwrap();
        let b = enc.forward(&inputs(&[vec![1, 7, 3, 4, 5]])).unwrap();
        let delta = (a - b).unwrap().abs().unwrap().sum(2).unwrap().squeeze(0).unwrap();
        let delta: Vec<f32> = delta.to_vec1().unwrap();
        assert!(delta[4] > 0.0 && delta[0] > 0.0, "{delta:?}");
    }

    #[test]
    fn padding_does_not_leak() {
        let store = ParamStore::new(9);
        let enc = BiLstmEncoder::new(
            &small_config(true),
            10,
            None,
            store.var_builder(DType::F32, &Device::Cpu),
        )
        .unwrap();
        let alone = enc.forward(&inputs(&[vec![3, 1, 4]])).unwrap();
        let batched = enc.forward(&inputs(&[vec![3, 1, 4], vec![1, 5, 9, 2, 6]])).unwrap();
        let part = batched.narrow(0, 0, 1).unwrap().narrow(1, 0, 3).unwrap();
        let diff = (alone - part)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn missing_pretrained_vectors() {
        let mut cfg = small_config(false);
        cfg.use_pretrained_word_embeddings = true;
        let store = ParamStore::new(0);
        let vb = store.var_builder(DType::F32, &Device::Cpu);
        assert!(BiLstmEncoder::new(&cfg, 10, None, vb.clone()).is_err());
        let enc = BiLstmEncoder::new(&cfg, 10, Some(4), vb).unwrap();
        let inp = inputs(&[vec![1, 2]]);
        assert!(enc.forward(&inp).is_err());
        let wrong = Tensor::zeros((1, 2, 3), DType::F32, &Device::Cpu).unwrap();
        assert!(enc
            .forward(&ExplicitInputs {
                word_vectors: Some(wrong),
                ..inp.clone()
            })
            .is_err());
        let right = Tensor::zeros((1, 2, 4), DType::F32, &Device::Cpu).unwrap();
        assert!(enc
            .forward(&ExplicitInputs {
                word_vectors: Some(right),
                ..inp
            })
            .is_ok());
    }
}
