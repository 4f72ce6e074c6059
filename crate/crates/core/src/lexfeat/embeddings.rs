use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::AnnotatedToken;
use crate::error::{Error, Result};

/// Pretrained word vectors with a reserved all-zero row for unknown words.
///
/// The unknown row is stored last, after the vocabulary rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f32>,
    dimension: usize,
}

impl EmbeddingTable {
    pub fn new(entries: Vec<(String, Vec<f32>)>, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let mut words = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity((entries.len() + 1) * dimension);
        for (word, vector) in entries {
            if vector.len() != dimension {
                return Err(Error::Shape(format!(
                    "vector for '{word}' has {} components, expected {dimension}",
                    vector.len()
                )));
            }
            if index.insert(word.clone(), words.len()).is_some() {
                return Err(Error::Config(format!("duplicate embedding entry '{word}'")));
            }
            words.push(word);
            vectors.extend(vector);
        }
        vectors.extend(std::iter::repeat_n(0.0, dimension));
        Ok(EmbeddingTable {
            words,
            index,
            vectors,
            dimension,
        })
    }

    /// Reads the plain-text word-vector format: a `<count> <dimension>`
    /// header, then one word followed by its components per line.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse(origin, 1, "missing header"))?;
        let mut fields = header.split_whitespace();
        let mut header_field = |what: &str| -> Result<usize> {
            fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::parse(origin, 1, format!("header lacks {what}")))
        };
        let count = header_field("vocabulary size")?;
        let dimension = header_field("dimension")?;
        let mut entries = Vec::with_capacity(count);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let word = fields.next().unwrap_or_default().to_string();
            let vector = fields
                .map(|f| f.parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(origin, i + 1, format!("bad component: {e}")))?;
            if vector.len() != dimension {
                return Err(Error::parse(
                    origin,
                    i + 1,
                    format!("'{word}' has {} components, header says {dimension}", vector.len()),
                ));
            }
            entries.push((word, vector));
        }
        if entries.len() != count {
            return Err(Error::parse(
                origin,
                1,
                format!("header announces {count} words, file has {}", entries.len()),
            ));
        }
        Self::new(entries, dimension).map_err(|e| Error::parse(origin, 1, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.words.len(), self.dimension);
        for (i, word) in self.words.iter().enumerate() {
            out.push_str(word);
            for v in self.row(i) {
                write!(out, " {v}").expect("writing to a string");
            }
            out.push('\n');
        }
        out
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn unknown_row(&self) -> usize {
        self.words.len()
    }

    pub fn row_of(&self, surface: &str) -> usize {
        self.index.get(surface).copied().unwrap_or(self.unknown_row())
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.vectors[row * self.dimension..(row + 1) * self.dimension]
    }

    /// Content hash over words and component bit patterns.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.dimension.to_le_bytes());
        for (i, word) in self.words.iter().enumerate() {
            hasher.update(word.as_bytes());
            hasher.update([0]);
            for v in self.row(i) {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// One row per token; unknown surfaces get the zero row.
pub fn lookup_embeddings<'t>(tokens: &[AnnotatedToken], table: &'t EmbeddingTable) -> Vec<&'t [f32]> {
    tokens.iter().map(|t| table.row(table.row_of(&t.surface))).collect()
}
