use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Mode, ModelConfig};
use super::net::EcqgModel;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tokenizer::Vocab;

pub const FORMAT_VERSION: u32 = 1;
pub const TOKENIZER_ID: &str = "word-glue-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub fusion_use_logits: bool,
    pub literal_positive_only: bool,
    pub classifier_fresh_init: bool,
}

/// `manifest.json` of a checkpoint directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub d_model: usize,
    pub base_model: String,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mode: Mode,
    pub flags: Flags,
    pub tokenizer: String,
    pub separator: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub lr_schedule: String,
    /// Free-form provenance: training config, data digests, best epoch.
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// A trained model with its vocabulary, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub model: EcqgModel,
    pub vocab: Vocab,
}

impl Checkpoint {
    pub fn new(model: EcqgModel, vocab: Vocab, base_model: &str, lambda1: f64, lambda2: f64, seed: u64) -> Self {
        let c = &model.config;
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            d_model: c.d_model,
            base_model: base_model.to_string(),
            lambda1,
            lambda2,
            mode: model.mode,
            flags: Flags {
                fusion_use_logits: c.fusion_use_logits,
                literal_positive_only: c.literal_positive_only,
                classifier_fresh_init: c.classifier_fresh_init,
            },
            tokenizer: TOKENIZER_ID.to_string(),
            separator: vocab.separator().to_string(),
            seed,
            model: c.clone(),
            lr_schedule: "linear warmup over the first 5% of steps, then constant".to_string(),
            extra: BTreeMap::new(),
        };
        Self { manifest, model, vocab }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        let meta = HashMap::from([("format".to_string(), "ecqg".to_string())]);
        self.model.params.save(&dir.join("weights.safetensors"), Some(meta))?;
        self.vocab.save(&dir.join("vocab.json"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", manifest.format_version)));
        }
        if manifest.tokenizer != TOKENIZER_ID {
            return Err(Error::Checkpoint(format!("unknown tokenizer {}", manifest.tokenizer)));
        }
        let params = ParamStore::load(&dir.join("weights.safetensors"))?;
        let vocab = Vocab::load(&dir.join("vocab.json"))?;
        if vocab.len() != manifest.model.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} entries, model expects {}",
                vocab.len(),
                manifest.model.vocab_size
            )));
        }
        let reference = super::init::init_params(&manifest.model, 0)?;
        for (name, t) in reference.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::Checkpoint(format!("{name} has shape {:?}, expected {:?}", got.shape(), t.shape())));
            }
        }
        let model = EcqgModel { config: manifest.model.clone(), params, mode: manifest.mode };
        Ok(Self { manifest, model, vocab })
    }
}
