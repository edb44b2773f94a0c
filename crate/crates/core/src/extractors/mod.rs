//! Joint entity-relation extractors behind one interface.
//!
//! Two reference implementations ship with the crate:
//!
//! * [`cascade`]: subject start/end tagging, then per-relation object
//!   start/end tagging conditioned on each subject. Zero-cardinal training
//!   sentences get all-zero tag targets in both stages.
//! * [`pointer`]: a recurrent decoder that points at four entity boundary
//!   positions and classifies a relation per step. Zero-cardinal sentences
//!   have the one-step target sequence `[EOS]`.
//!
//! Other joint models plug in through [`ExtractorRegistry::register_external`].
//! Adapters are expected to wrap an existing implementation, for example:
//!
//! * horns tagging: per-relation head/tail matrices with `HB-TB`, `HB-TE`,
//!   `HE-TE`, `O` tags scored over all token pairs;
//! * bidirectional tagging: subject→object and object→subject tagging with a
//!   final pairwise relation classifier;
//! * relation-first tagging: sentence-level relation prediction, subject and
//!   object tagging, and start-position verification;
//! * potential-relation tagging with a global subject/object correspondence
//!   matrix;
//! * table filling with iterative global feature refinement;
//! * partition filters that split entity and relation features;
//! * handshaking tagging over all token pairs (entity, subject-head and
//!   object-head links).

pub mod cascade;
pub mod pointer;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSetting, RelationSchema, RelationTuple, Sentence, Setting};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::train::{TrainConfig, TrainingLog};

/// A trainable joint extractor.
pub trait Extractor: Send + Sync {
    fn name(&self) -> &str;

    fn train(&mut self, train: &DatasetSetting, validation: &DatasetSetting) -> Result<TrainingLog>;

    fn is_trained(&self) -> bool;

    /// Setting of the training data, once trained.
    fn trained_setting(&self) -> Option<Setting>;

    /// Tuples found in `sentence`; every span is valid and every relation in
    /// the schema.
    fn extract(&self, sentence: &Sentence) -> Result<BTreeSet<RelationTuple>>;

    fn save(&self, _dir: &Path) -> Result<()> {
        Err(Error::Checkpoint(format!("extractor `{}` cannot be saved", self.name())))
    }
}

/// Construction parameters shared by the built-in extractors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    /// Pointer decoder step limit.
    pub max_steps: usize,
    /// Width of the pointer decoder's relation embedding.
    pub relation_dim: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            encoder: EncoderConfig::default(),
            train: TrainConfig::extractor(),
            max_steps: 10,
            relation_dim: 32,
        }
    }
}

/// Manifest written next to a built-in extractor's weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorManifest {
    pub kind: String,
    pub name: String,
    pub schema: RelationSchema,
    pub schema_hash: String,
    pub config: ExtractorConfig,
    pub trained_setting: Setting,
    pub log: TrainingLog,
}

impl ExtractorManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: ExtractorManifest = serde_json::from_str(&text)?;
        if m.schema.hash() != m.schema_hash {
            return Err(Error::Checkpoint(format!("{}: schema hash mismatch", dir.display())));
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))
    }
}

pub(crate) fn check_training_input(train: &DatasetSetting, validation: &DatasetSetting) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    if validation.is_empty() {
        return Err(Error::Contract("empty validation set".into()));
    }
    Ok(())
}

/// Validation F1 (exact match) used for early stopping.
pub(crate) fn validation_f1(
    validation: &DatasetSetting,
    extract: impl Fn(&Sentence) -> BTreeSet<RelationTuple> + Sync,
) -> f64 {
    use rayon::prelude::*;
    let preds: Vec<(String, BTreeSet<RelationTuple>)> = validation
        .sentences
        .par_iter()
        .map(|s| (s.id().to_owned(), extract(&s.sentence)))
        .collect();
    crate::metrics::score(
        preds.iter().map(|(id, t)| (id.as_str(), t)),
        &validation.sentences,
        crate::metrics::MatchMode::Exact,
    )
    .map(|r| r.f1)
    .unwrap_or(0.0)
}

/// Inputs handed to an extractor factory.
#[derive(Debug, Clone)]
pub struct BuildContext {
    pub schema: RelationSchema,
    pub config: ExtractorConfig,
}

pub type ExtractorFactory = Arc<dyn Fn(&BuildContext) -> Result<Box<dyn Extractor>> + Send + Sync>;

pub const BUILTIN_EXTRACTORS: [&str; 2] = ["cascade", "pointer"];

/// Name → extractor lookup used by experiment configurations.
#[derive(Clone, Default)]
pub struct ExtractorRegistry {
    externals: BTreeMap<String, ExtractorFactory>,
}

impl std::fmt::Debug for ExtractorRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExtractorRegistry").field("names", &self.names()).finish()
    }
}

impl ExtractorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_external(&mut self, name: impl Into<String>, factory: ExtractorFactory) -> Result<()> {
        let name = name.into();
        if BUILTIN_EXTRACTORS.contains(&name.as_str()) || self.externals.contains_key(&name) {
            return Err(Error::Registry(format!("extractor `{name}` is already registered")));
        }
        self.externals.insert(name, factory);
        Ok(())
    }

    /// Registers an adapter instance under its own name; each selection gets a clone.
    pub fn register_adapter<A>(&mut self, adapter: A) -> Result<()>
    where
        A: Extractor + Clone + 'static,
    {
        let name = adapter.name().to_owned();
        self.register_external(
            name,
            Arc::new(move |_: &BuildContext| Ok(Box::new(adapter.clone()) as Box<dyn Extractor>)),
        )
    }

    pub fn names(&self) -> Vec<String> {
        BUILTIN_EXTRACTORS
            .iter()
            .map(|s| s.to_string())
            .chain(self.externals.keys().cloned())
            .collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        BUILTIN_EXTRACTORS.contains(&name) || self.externals.contains_key(name)
    }

    /// A fresh, untrained extractor selected by name.
    pub fn create(&self, name: &str, ctx: &BuildContext) -> Result<Box<dyn Extractor>> {
        self.create_with::<f32>(name, ctx)
    }

    pub fn create_with<T: Scalar>(&self, name: &str, ctx: &BuildContext) -> Result<Box<dyn Extractor>> {
        match name {
            "cascade" => Ok(Box::new(cascade::CascadeExtractor::<T>::new(ctx.schema.clone(), ctx.config.clone())?)),
            "pointer" => Ok(Box::new(pointer::PointerExtractor::<T>::new(ctx.schema.clone(), ctx.config.clone())?)),
            other => match self.externals.get(other) {
                Some(factory) => factory(ctx),
                None => Err(Error::Registry(format!("no extractor named `{other}`"))),
            },
        }
    }

    /// Loads a built-in extractor checkpoint.
    pub fn load(&self, dir: &Path) -> Result<Box<dyn Extractor>> {
        let manifest = ExtractorManifest::read(dir)?;
        match manifest.kind.as_str() {
            "cascade" => Ok(Box::new(cascade::CascadeExtractor::<f32>::load(dir)?)),
            "pointer" => Ok(Box::new(pointer::PointerExtractor::<f32>::load(dir)?)),
            other => Err(Error::Checkpoint(format!("cannot load extractor kind `{other}`"))),
        }
    }
}
