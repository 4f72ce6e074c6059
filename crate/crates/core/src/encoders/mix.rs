use candle::{DType, Device, Tensor};
use candle_nn::{Init, VarBuilder};

use crate::error::{Error, Result};

/// Learned weighted average over encoder layers:
/// `gamma * sum_k softmax(raw_weights)_k * layer_k`.
#[derive(Clone, Debug)]
pub struct ScalarMix {
    raw_weights: Tensor,
    gamma: Tensor,
}

impl ScalarMix {
    /// Starts from uniform weights and unit scale.
    pub fn new(layer_count: usize, vb: VarBuilder) -> Result<Self> {
        if layer_count == 0 {
            return Err(Error::Config("scalar mix needs at least one layer".into()));
        }
        Ok(ScalarMix {
            raw_weights: vb.get_with_hints(layer_count, "raw_weights", Init::Const(0.0))?,
            gamma: vb.get_with_hints(1, "gamma", Init::Const(1.0))?,
        })
    }

    pub fn from_values(raw_weights: &[f64], gamma: f64, dtype: DType, device: &Device) -> Result<Self> {
        if raw_weights.is_empty() {
            return Err(Error::Config("scalar mix needs at least one layer".into()));
        }
        Ok(ScalarMix {
            raw_weights: Tensor::new(raw_weights, device)?.to_dtype(dtype)?,
            gamma: Tensor::new(&[gamma], device)?.to_dtype(dtype)?,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.raw_weights.elem_count()
    }

    pub fn raw_weights(&self) -> &Tensor {
        &self.raw_weights
    }

    pub fn gamma(&self) -> &Tensor {
        &self.gamma
    }

    /// Normalized layer weights.
    pub fn weights(&self) -> Result<Tensor> {
        Ok(candle_nn::ops::softmax(&self.raw_weights, 0)?)
    }

    pub fn forward(&self, layers: &[Tensor]) -> Result<Tensor> {
        if layers.len() != self.layer_count() {
            return Err(Error::Shape(format!(
                "scalar mix over {} layers given {}",
                self.layer_count(),
                layers.len()
            )));
        }
        let shape = layers[0].shape();
        if let Some(other) = layers.iter().find(|l| l.shape() != shape) {
            return Err(Error::Shape(format!(
                "layers disagree in shape: {shape:?} vs {:?}",
                other.shape()
            )));
        }
        let stacked = Tensor::stack(layers, 0)?;
        let mut weight_shape = vec![1usize; stacked.rank()];
        weight_shape[0] = layers.len();
        let weights = self.weights()?.reshape(weight_shape)?;
        let mixed = stacked.broadcast_mul(&weights)?.sum(0)?;
        Ok(mixed.broadcast_mul(&self.gamma)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle::Device;

    fn t(v: &[f32], shape: (usize, usize)) -> Tensor {
        Tensor::from_slice(v, shape, &Device::Cpu).unwrap()
    }

    fn values(x: &Tensor) -> Vec<f32> {
        x.flatten_all().unwrap().to_vec1().unwrap()
    }

    #[test]
    fn equal_weights_average() {
        let a = t(&[1.0, 2.0, 3.0, 4.0], (2, 2));
        let b = t(&[3.0, 2.0, 1.0, 0.0], (2, 2));
        let mix = ScalarMix::from_values(&[0.5, 0.5], 1.0, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(values(&mix.forward(&[a, b]).unwrap()), [2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn saturated_weight_selects_a_layer() {
        let layers: Vec<Tensor> = (0..3).map(|k| t(&[k as f32, 1.0 + k as f32], (1, 2))).collect();
        let mix = ScalarMix::from_values(&[0.0, 1000.0, 0.0], 1.0, DType::F32, &Device::Cpu).unwrap();
        let out = values(&mix.forward(&layers).unwrap());
        assert!((out[0] - 1.0).abs() < 1e-4 && (out[1] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn gamma_scales() {
        let a = t(&[1.0, -1.0], (1, 2));
        let mix = ScalarMix::from_values(&[0.3], 2.5, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(values(&mix.forward(&[a]).unwrap()), [2.5, -2.5]);
    }

    #[test]
    fn shape_mismatch() {
        let mix = ScalarMix::from_values(&[0.0, 0.0], 1.0, DType::F32, &Device::Cpu).unwrap();
        let a = t(&[1.0, 2.0], (1, 2));
        let b = t(&[1.0, 2.0], (2, 1));
        assert!(mix.forward(&[a.clone(), b]).is_err());
        assert!(mix.forward(&[a]).is_err());
        assert!(ScalarMix::from_values(&[], 1.0, DType::F32, &Device::Cpu).is_err());
    }
}
