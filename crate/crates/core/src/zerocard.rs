//! Zero-cardinality classification: does a sentence hold any relation tuple?
//!
//! A linear head over the encoder's sentinel vector produces either one
//! sigmoid (binary) or one sigmoid per relation (multi-class multi-label,
//! MCML). Zero-cardinal sentences have the all-zero MCML target. Training
//! minimizes binary cross-entropy with AdamW and keeps the checkpoint with
//! the best validation detection F1.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, DatasetSetting, RelationSchema, Sentence, Setting};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::metrics::{Counts, ScoreMode, ScoreReport};
use crate::nn::{sigmoid, Gradients, Graph, ParamKey, ParamStore, Var};
use crate::scalar::Scalar;
use crate::seed::stream_rng;
use crate::train::{fit, TrainingLog};

pub use crate::train::TrainConfig;

const HEAD_GROUP: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierMode {
    Binary,
    Mcml,
}

impl std::str::FromStr for ClassifierMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(ClassifierMode::Binary),
            "mcml" => Ok(ClassifierMode::Mcml),
            _ => Err(Error::Config(format!("unknown classifier mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Probabilities<T> {
    Binary(T),
    Mcml(Vec<T>),
}

impl<T: Scalar> Probabilities<T> {
    /// The probability the decision rule is applied to.
    pub fn score(&self) -> T {
        match self {
            Probabilities::Binary(p) => *p,
            Probabilities::Mcml(ps) => ps.iter().copied().fold(T::zero(), T::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierOutput<T> {
    pub mode: ClassifierMode,
    pub probs: Probabilities<T>,
    /// Has-tuples decision.
    pub decision: bool,
}

/// Binary: `prob ≥ threshold`; MCML: `max(relation_probs) ≥ threshold`.
pub fn decide<T: Scalar>(probs: &Probabilities<T>, threshold: T) -> bool {
    probs.score() >= threshold
}

/// Multi-hot relation target; all zeros for a zero-cardinal sentence.
pub fn mcml_target(schema: &RelationSchema, sentence: &AnnotatedSentence) -> Vec<f64> {
    let mut target = vec![0.0; schema.len()];
    for t in &sentence.tuples {
        if let Some(i) = schema.index_of(&t.relation) {
            target[i] = 1.0;
        }
    }
    target
}

/// Sentence-level detection counts: the positive class is "has ≥ 1 gold tuple".
pub fn detection_report<'a>(pairs: impl IntoIterator<Item = (bool, &'a AnnotatedSentence)>) -> ScoreReport {
    let mut c = Counts::default();
    for (decision, gold) in pairs {
        match (decision, !gold.is_zero_cardinal()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    ScoreReport::from_counts(ScoreMode::Sentence, c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierManifest {
    pub kind: String,
    pub mode: ClassifierMode,
    pub threshold: f64,
    pub schema: RelationSchema,
    pub schema_hash: String,
    pub train_config: TrainConfig,
    pub trained_setting: Setting,
    pub log: TrainingLog,
}

#[derive(Debug, Clone)]
pub struct ZeroCardClassifier<T: Scalar> {
    mode: ClassifierMode,
    schema: RelationSchema,
    encoder: Encoder<T>,
    head: ParamStore<T>,
    w: ParamKey,
    b: ParamKey,
    threshold: T,
    config: TrainConfig,
    log: TrainingLog,
    trained_setting: Option<Setting>,
}

impl<T: Scalar> ZeroCardClassifier<T> {
    /// Untrained classifier with a freshly initialized head.
    pub fn new(mode: ClassifierMode, schema: RelationSchema, encoder: Encoder<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let outputs = match mode {
            ClassifierMode::Binary => 1,
            ClassifierMode::Mcml => {
                if schema.is_empty() {
                    return Err(Error::Config("MCML needs a nonempty relation schema".into()));
                }
                schema.len()
            }
        };
        let mut rng = stream_rng(config.seed, "classifier/head");
        let mut head = ParamStore::new(HEAD_GROUP);
        let w = head.add_glorot("head.weight", encoder.hidden_dim(), outputs, &mut rng);
        let b = head.add_filled("head.bias", 1, outputs, 0.0);
        Ok(ZeroCardClassifier {
            mode,
            schema,
            encoder,
            head,
            w,
            b,
            threshold: T::of(config.threshold),
            config,
            log: TrainingLog::default(),
            trained_setting: None,
        })
    }

    pub fn mode(&self) -> ClassifierMode {
        self.mode
    }

    pub fn schema(&self) -> &RelationSchema {
        &self.schema
    }

    pub fn encoder(&self) -> &Encoder<T> {
        &self.encoder
    }

    pub fn threshold(&self) -> T {
        self.threshold
    }

    pub fn set_threshold(&mut self, threshold: T) {
        self.threshold = threshold;
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn is_trained(&self) -> bool {
        self.trained_setting.is_some()
    }

    pub fn trained_setting(&self) -> Option<Setting> {
        self.trained_setting
    }

    pub fn head_params(&self) -> &ParamStore<T> {
        &self.head
    }

    pub fn head_params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.head
    }

    pub fn encoder_params_mut(&mut self) -> &mut ParamStore<T> {
        self.encoder.params_mut()
    }

    fn logits(&self, g: &mut Graph<'_, T>, sentence: &Sentence) -> Var {
        let input = self.encoder.prepare(sentence);
        let out = self.encoder.forward(g, &input);
        g.linear(out.cls, self.w, self.b)
    }

    fn target(&self, sentence: &AnnotatedSentence) -> Array2<T> {
        match self.mode {
            ClassifierMode::Binary => {
                Array2::from_elem((1, 1), if sentence.is_zero_cardinal() { T::zero() } else { T::one() })
            }
            ClassifierMode::Mcml => {
                let t = mcml_target(&self.schema, sentence);
                Array2::from_shape_fn((1, t.len()), |(_, j)| T::of(t[j]))
            }
        }
    }

    /// Scaled BCE loss of one sentence and its gradients over encoder and head.
    pub fn loss_and_gradients(&self, sentence: &AnnotatedSentence, scale: T) -> (T, Gradients<T>) {
        let mut g = Graph::new(&[self.encoder.params(), &self.head]);
        let logits = self.logits(&mut g, &sentence.sentence);
        let pos_weight = T::of(self.config.pos_weight.unwrap_or(1.0));
        let loss = g.bce_with_logits(logits, self.target(sentence), pos_weight, scale);
        (g.scalar(loss), g.backward(loss))
    }

    pub fn probabilities(&self, sentence: &Sentence) -> Probabilities<T> {
        let mut g = Graph::new(&[self.encoder.params(), &self.head]);
        let logits = self.logits(&mut g, sentence);
        let probs: Vec<T> = g.value(logits).iter().map(|&x| sigmoid(x)).collect();
        match self.mode {
            ClassifierMode::Binary => Probabilities::Binary(probs[0]),
            ClassifierMode::Mcml => Probabilities::Mcml(probs),
        }
    }

    pub fn classify(&self, sentence: &Sentence) -> ClassifierOutput<T> {
        let probs = self.probabilities(sentence);
        ClassifierOutput {
            mode: self.mode,
            decision: decide(&probs, self.threshold),
            probs,
        }
    }

    /// Sentence-level detection scores on a (WZ) test set.
    pub fn evaluate(&self, testset: &DatasetSetting) -> ScoreReport {
        use rayon::prelude::*;
        let decisions: Vec<bool> = testset
            .sentences
            .par_iter()
            .map(|s| self.classify(&s.sentence).decision)
            .collect();
        detection_report(decisions.into_iter().zip(&testset.sentences))
    }

    /// Label-level micro scores of an MCML head (auxiliary number).
    pub fn evaluate_labels(&self, testset: &DatasetSetting) -> ScoreReport {
        let mut c = Counts::default();
        for s in &testset.sentences {
            let gold = mcml_target(&self.schema, s);
            let predicted: Vec<bool> = match self.probabilities(&s.sentence) {
                Probabilities::Binary(p) => vec![p >= self.threshold],
                Probabilities::Mcml(ps) => ps.iter().map(|&p| p >= self.threshold).collect(),
            };
            let gold: Vec<bool> = match self.mode {
                ClassifierMode::Binary => vec![!s.is_zero_cardinal()],
                ClassifierMode::Mcml => gold.iter().map(|&g| g > 0.5).collect(),
            };
            for (p, g) in predicted.into_iter().zip(gold) {
                match (p, g) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    _ => {}
                }
            }
        }
        ScoreReport::from_counts(ScoreMode::Label, c)
    }

    pub fn manifest(&self) -> Result<ClassifierManifest> {
        Ok(ClassifierManifest {
            kind: "classifier".into(),
            mode: self.mode,
            threshold: self.threshold.as_f64(),
            schema: self.schema.clone(),
            schema_hash: self.schema.hash(),
            train_config: self.config.clone(),
            trained_setting: self
                .trained_setting
                .ok_or_else(|| Error::Untrained("classifier".into()))?,
            log: self.log.clone(),
        })
    }

    /// Checkpoint directory: `encoder/`, `head.bin`, `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let manifest = self.manifest()?;
        self.encoder.save(&dir.join("encoder"))?;
        self.head.save(&dir.join("head.bin"))?;
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: ClassifierManifest = serde_json::from_str(&text)?;
        if m.kind != "classifier" {
            return Err(Error::Checkpoint(format!("{} is not a classifier checkpoint", dir.display())));
        }
        if m.schema.hash() != m.schema_hash {
            return Err(Error::Checkpoint("schema hash mismatch".into()));
        }
        let encoder = Encoder::load(&dir.join("encoder"))?;
        let mut clf = Self::new(m.mode, m.schema, encoder, m.train_config)?;
        let head = ParamStore::load(&dir.join("head.bin"), HEAD_GROUP)?;
        clf.head.check_layout(&head)?;
        clf.head = head;
        clf.threshold = T::of(m.threshold);
        clf.log = m.log;
        clf.trained_setting = Some(m.trained_setting);
        Ok(clf)
    }
}

/// Trains a zero-cardinality classifier on a WZ training setting.
pub fn train_classifier<T: Scalar>(
    train: &DatasetSetting,
    validation: &DatasetSetting,
    mode: ClassifierMode,
    schema: &RelationSchema,
    encoder_config: EncoderConfig,
    config: TrainConfig,
) -> Result<ZeroCardClassifier<T>> {
    if train.setting != Setting::WZ {
        return Err(Error::Contract(
            "the classifier must be trained on a WZ setting; NZ has no zero-cardinal examples".into(),
        ));
    }
    if train.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    let encoder = Encoder::for_training(encoder_config, train.sentences.iter().map(|s| &s.sentence))?;
    let mut model = ZeroCardClassifier::new(mode, schema.clone(), encoder, config.clone())?;
    let log = fit(
        &mut model,
        &train.sentences,
        &config,
        "classifier/shuffle",
        |m: &ZeroCardClassifier<T>, s, scale| m.loss_and_gradients(s, scale),
        |m| {
            let frozen = m.encoder.is_frozen();
            let ZeroCardClassifier { encoder, head, .. } = m;
            if frozen {
                vec![head]
            } else {
                vec![encoder.params_mut(), head]
            }
        },
        |m| m.evaluate(validation).f1,
    );
    model.log = log;
    model.trained_setting = Some(train.setting);
    Ok(model)
}
