use std::fmt;
use std::str::FromStr;

use candle::{Tensor, D};

use crate::error::{Error, Result};
use crate::lexfeat::SubwordAlignment;

/// Reduction of a word's subword vectors to one vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Pooling {
    #[default]
    Mean,
    First,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::First => "first",
        })
    }
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "first" => Ok(Pooling::First),
            _ => Err(format!("unknown pooling '{s}' (expected mean or first)")),
        }
    }
}

/// Row-major `rows x columns` matrix that maps subword vectors to word
/// vectors when multiplied from the left. Subword `j` of the alignment sits
/// in column `offset + j`; rows past the alignment stay zero.
pub fn pooling_matrix(
    alignment: &SubwordAlignment,
    pooling: Pooling,
    offset: usize,
    rows: usize,
    columns: usize,
) -> Vec<f32> {
    let mut m = vec![0f32; rows * columns];
    for (i, span) in alignment.spans.iter().enumerate() {
        match pooling {
            Pooling::Mean => {
                let w = 1.0 / span.len() as f32;
                for j in span.clone() {
                    m[i * columns + offset + j] = w;
                }
            }
            Pooling::First => m[i * columns + offset + span.start] = 1.0,
        }
    }
    m
}

/// `(subwords, hidden)` to `(words, hidden)`.
pub fn pool_to_words(subword_vectors: &Tensor, alignment: &SubwordAlignment, pooling: Pooling) -> Result<Tensor> {
    let (subwords, _) = subword_vectors.dims2()?;
    if !alignment.is_partition() || alignment.subword_count() != subwords {
        return Err(Error::Shape(format!(
            "alignment {:?} does not partition {subwords} subword rows",
            alignment.spans
        )));
    }
    let words = alignment.spans.len();
    let m = pooling_matrix(alignment, pooling, 0, words, subwords);
    let m = Tensor::from_vec(m, (words, subwords), subword_vectors.device())?.to_dtype(subword_vectors.dtype())?;
    Ok(m.matmul(subword_vectors)?)
}

/// Concatenates along the feature axis, explicit features first.
pub fn fuse(explicit: &Tensor, implicit: &Tensor) -> Result<Tensor> {
    let (e, i) = (explicit.dims(), implicit.dims());
    if e.len() != i.len() || e[..e.len() - 1] != i[..i.len() - 1] {
        return Err(Error::Shape(format!("cannot fuse {e:?} with {i:?}")));
    }
    if implicit.dim(D::Minus1)? == 0 {
        return Ok(explicit.clone());
    }
    Ok(Tensor::cat(&[explicit, implicit], D::Minus1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle::{DType, Device};

    fn alignment(spans: &[(usize, usize)]) -> SubwordAlignment {
        SubwordAlignment {
            spans: spans.iter().map(|&(a, b)| a..b).collect(),
        }
    }

    #[test]
    fn unit_spans_copy_rows() {
        let x = Tensor::arange(0f32, 6.0, &Device::Cpu)
            .unwrap()
            .reshape((3, 2))
            .unwrap();
        let out = pool_to_words(&x, &alignment(&[(0, 1), (1, 2), (2, 3)]), Pooling::Mean).unwrap();
        assert_eq!(out.to_vec2::<f32>().unwrap(), x.to_vec2::<f32>().unwrap());
    }

    #[test]
    fn duplicate_rows_average_to_themselves() {
        let x = Tensor::new(&[[0.3f32, -1.7], [0.3, -1.7], [5.0, 5.0]], &Device::Cpu).unwrap();
        let out = pool_to_words(&x, &alignment(&[(0, 2), (2, 3)]), Pooling::Mean).unwrap();
        assert_eq!(out.to_vec2::<f32>().unwrap(), [[0.3, -1.7], [5.0, 5.0]]);
    }

    #[test]
    fn first_subword_pooling() {
        let x = Tensor::new(&[[1f32], [2.], [3.]], &Device::Cpu).unwrap();
        let out = pool_to_words(&x, &alignment(&[(0, 2), (2, 3)]), Pooling::First).unwrap();
        assert_eq!(out.to_vec2::<f32>().unwrap(), [[1.0], [3.0]]);
    }

    #[test]
    fn bad_alignment() {
        let x = Tensor::zeros((3, 2), DType::F32, &Device::Cpu).unwrap();
        assert!(pool_to_words(&x, &alignment(&[(0, 2)]), Pooling::Mean).is_err());
        assert!(pool_to_words(&x, &alignment(&[(0, 1), (2, 3)]), Pooling::Mean).is_err());
    }

    #[test]
    fn fusion_shapes() {
        let a = Tensor::zeros((5, 512), DType::F32, &Device::Cpu).unwrap();
        let b = Tensor::ones((5, 768), DType::F32, &Device::Cpu).unwrap();
        let f = fuse(&a, &b).unwrap();
        assert_eq!(f.dims(), &[5, 1280]);
        let empty = Tensor::zeros((5, 0), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(fuse(&a, &empty).unwrap().dims(), &[5, 512]);
        let c = Tensor::ones((4, 768), DType::F32, &Device::Cpu).unwrap();
        assert!(fuse(&a, &c).is_err());
    }

    #[test]
    fn explicit_columns_come_first() {
        let a = Tensor::new(&[[1f32, 2.], [3., 4.]], &Device::Cpu).unwrap();
        let b = Tensor::new(&[[9f32], [8.]], &Device::Cpu).unwrap();
        assert_eq!(
            fuse(&a, &b).unwrap().to_vec2::<f32>().unwrap(),
            [[1.0, 2.0, 9.0], [3.0, 4.0, 8.0]]
        );
    }

    #[test]
    fn parse_pooling() {
        assert_eq!("first".parse::<Pooling>().unwrap(), Pooling::First);
        assert!("max".parse::<Pooling>().is_err());
    }
}
