//! Trained model directories.
//!
//! ```text
//! config.txt          system configuration, threshold and fingerprints (key=value)
//! vocab.txt           surface vocabulary, one entry per line
//! model.safetensors   parameters outside the LM
//! word_vectors.txt    pretrained word vectors, when the system uses them
//! lm/                 the (fine-tuned) LM in its own checkpoint layout
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use candle::Device;

use crate::encoders::LmAssets;
use crate::error::{Error, Result};
use crate::lexfeat::EmbeddingTable;
use crate::model::{PhraseBreakModel, SystemConfig, Vocabulary};

const CONFIG: &str = "config.txt";
const VOCAB: &str = "vocab.txt";
const WEIGHTS: &str = "model.safetensors";
const WORD_VECTORS: &str = "word_vectors.txt";
const LM_DIR: &str = "lm";

#[derive(Debug)]
pub struct Checkpoint {
    pub model: PhraseBreakModel,
    pub threshold: f64,
    /// Fingerprint of the annotator that produced the training corpus.
    pub annotator: String,
    pub seed: u64,
}

fn checkpoint_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

fn tensor_values(t: &candle::Tensor) -> Result<String> {
    let v: Vec<f64> = t.to_dtype(candle::DType::F64)?.flatten_all()?.to_vec1()?;
    Ok(v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(","))
}

impl Checkpoint {
    pub fn config_pairs(&self) -> Result<Vec<(String, String)>> {
        let mut kv = self.model.config().to_pairs();
        kv.push(("threshold".into(), self.threshold.to_string()));
        kv.push(("seed".into(), self.seed.to_string()));
        kv.push(("annotator".into(), self.annotator.clone()));
        if let Some(table) = self.model.word_vectors() {
            kv.push(("word_vectors.fingerprint".into(), table.fingerprint()));
        }
        if let Some(assets) = self.model.lm_assets() {
            kv.push(("lm.fingerprint".into(), assets.fingerprint()));
        }
        // Informational only; the values live in model.safetensors.
        if let Some(mix) = self.model.scalar_mix() {
            kv.push(("mix.weights".into(), tensor_values(&mix.weights()?)?));
            kv.push(("mix.gamma".into(), tensor_values(mix.gamma())?));
        }
        Ok(kv)
    }

    /// Writes into a temporary sibling directory and renames it into place.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.save_with(dir, &[])
    }

    /// Like [`Checkpoint::save`], adding `extras` as `(file name, contents)`.
    pub fn save_with(&self, dir: impl AsRef<Path>, extras: &[(&str, String)]) -> Result<()> {
        let dir = dir.as_ref();
        let name = dir
            .file_name()
            .ok_or_else(|| checkpoint_error(dir, "not a directory name"))?
            .to_string_lossy()
            .into_owned();
        let parent = dir
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::create_dir(&tmp).map_err(|e| Error::io(&tmp, e))?;

        let mut text = String::new();
        for (k, v) in self.config_pairs()? {
            if v.contains('\n') {
                return Err(checkpoint_error(dir, format!("value of {k} spans lines")));
            }
            text.push_str(&format!("{k}={v}\n"));
        }
        write(tmp.join(CONFIG), text)?;
        write(tmp.join(VOCAB), self.model.vocabulary().to_text())?;
        self.model.store().save(&tmp.join(WEIGHTS))?;
        if let Some(table) = self.model.word_vectors() {
            write(tmp.join(WORD_VECTORS), table.to_text())?;
        }
        if let (Some(assets), Some(store)) = (self.model.lm_assets(), self.model.lm_store()) {
            let lm = tmp.join(LM_DIR);
            fs::create_dir(&lm).map_err(|e| Error::io(&lm, e))?;
            assets.write_metadata(&lm)?;
            store.save(&lm.join(WEIGHTS))?;
        }

        for (name, contents) in extras {
            write(tmp.join(name), contents)?;
        }

        if dir.exists() {
            let old = parent.join(format!(".{name}.old-{}", std::process::id()));
            fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
            fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        } else {
            fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let config_path = dir.join(CONFIG);
        let text = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
        let mut kv = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(config_path.display(), i + 1, "expected key=value"))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |key: &str| {
            kv.get(key)
                .cloned()
                .ok_or_else(|| checkpoint_error(dir, format!("missing {key}")))
        };
        let config = SystemConfig::from_pairs(&kv)?;
        let threshold: f64 = get("threshold")?
            .parse()
            .map_err(|_| checkpoint_error(dir, "bad threshold"))?;
        let seed: u64 = get("seed")?.parse().map_err(|_| checkpoint_error(dir, "bad seed"))?;
        let annotator = get("annotator")?;

        let vocab_path = dir.join(VOCAB);
        let vocab = Vocabulary::parse(&fs::read_to_string(&vocab_path).map_err(|e| Error::io(&vocab_path, e))?)?;

        let word_vectors = if config.bilstm.as_ref().is_some_and(|b| b.use_pretrained_word_embeddings) {
            let table = EmbeddingTable::read(dir.join(WORD_VECTORS))?;
            if table.fingerprint() != get("word_vectors.fingerprint")? {
                return Err(checkpoint_error(dir, "word vector fingerprint mismatch"));
            }
            Some(table)
        } else {
            None
        };

        let lm = if config.lm.is_some() {
            let assets = LmAssets::load(dir.join(LM_DIR))?;
            if assets.fingerprint() != get("lm.fingerprint")? {
                return Err(checkpoint_error(dir, "LM fingerprint mismatch"));
            }
            Some(assets)
        } else {
            None
        };

        let trained = candle::safetensors::load(dir.join(WEIGHTS), &Device::Cpu)?;
        let expected = trained.len();
        let model = PhraseBreakModel::new(config, vocab, word_vectors, lm, trained, seed, candle::DType::F32)?;
        if model.store().named_vars().len() != expected {
            return Err(checkpoint_error(
                dir,
                format!(
                    "saved {expected} parameter tensors but the model has {}",
                    model.store().named_vars().len()
                ),
            ));
        }
        Ok(Checkpoint {
            model,
            threshold,
            annotator,
            seed,
        })
    }

    /// Compares the training annotator with the one in use. A mismatch is
    /// an error when `strict`, otherwise a returned warning.
    pub fn check_annotator(&self, current: &str, strict: bool) -> Result<Option<String>> {
        if self.annotator == current {
            return Ok(None);
        }
        let message = format!(
            "checkpoint was trained with annotator '{}' but '{}' is in use",
            self.annotator, current
        );
        if strict {
            Err(Error::Config(message))
        } else {
            Ok(Some(message))
        }
    }
}
