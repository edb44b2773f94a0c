//! Cascade binary tagging.
//!
//! Stage 1 tags subject start and end positions over the token vectors.
//! Stage 2 adds the mean vector of one subject span to every token vector and
//! tags object start/end positions separately for each relation. Decoding
//! pairs every start with the nearest end at or after it.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;

use super::{check_training_input, validation_f1, Extractor, ExtractorConfig, ExtractorManifest};
use crate::corpus::{AnnotatedSentence, DatasetSetting, RelationSchema, RelationTuple, Sentence, Setting};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Gradients, Graph, ParamKey, ParamStore, Var};
use crate::scalar::Scalar;
use crate::seed::stream_rng;
use crate::train::{fit, TrainingLog};

const HEAD_GROUP: u16 = 1;

/// Tag targets of one training sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeTargets {
    /// `n × 2`: subject start, subject end.
    pub subject: Array2<f64>,
    /// One entry per conditioning subject span: `n × 2c` object targets,
    /// columns `2r` and `2r + 1` for relation `r`.
    pub objects: Vec<((usize, usize), Array2<f64>)>,
}

/// Builds stage-1 and stage-2 targets over the first `n_tokens` words.
///
/// Tuples reaching past `n_tokens` (truncated input) are skipped. A sentence
/// without usable tuples gets all-zero subject targets and one pseudo-subject
/// `(0, 0)` whose object targets are all zero, so zero-cardinal sentences
/// still teach the object tagger to stay silent.
pub fn cascade_targets(sentence: &AnnotatedSentence, schema: &RelationSchema, n_tokens: usize) -> CascadeTargets {
    let c = schema.len();
    let mut subject = Array2::zeros((n_tokens, 2));
    let mut objects: Vec<((usize, usize), Array2<f64>)> = Vec::new();
    for t in &sentence.tuples {
        let Some(r) = schema.index_of(&t.relation) else { continue };
        if t.subject.end >= n_tokens || t.object.end >= n_tokens {
            continue;
        }
        subject[[t.subject.start, 0]] = 1.0;
        subject[[t.subject.end, 1]] = 1.0;
        let span = (t.subject.start, t.subject.end);
        let idx = match objects.iter().position(|(s, _)| *s == span) {
            Some(i) => i,
            None => {
                objects.push((span, Array2::zeros((n_tokens, 2 * c))));
                objects.len() - 1
            }
        };
        objects[idx].1[[t.object.start, 2 * r]] = 1.0;
        objects[idx].1[[t.object.end, 2 * r + 1]] = 1.0;
    }
    if objects.is_empty() && n_tokens > 0 {
        objects.push(((0, 0), Array2::zeros((n_tokens, 2 * c))));
    }
    CascadeTargets { subject, objects }
}

/// Pairs each start with the nearest end at or after it; starts without such
/// an end are dropped.
pub fn pair_spans(starts: &[usize], ends: &[usize]) -> Vec<(usize, usize)> {
    let mut ends = ends.to_vec();
    ends.sort_unstable();
    let mut starts = starts.to_vec();
    starts.sort_unstable();
    starts.dedup();
    starts
        .into_iter()
        .filter_map(|s| {
            let i = ends.partition_point(|&e| e < s);
            ends.get(i).map(|&e| (s, e))
        })
        .collect()
}

/// Positions whose probability reaches `threshold`, per column.
fn tagged(probs: &Array2<f64>, col: usize, threshold: f64) -> Vec<usize> {
    probs
        .column(col)
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone)]
pub struct CascadeExtractor<T: Scalar> {
    schema: RelationSchema,
    config: ExtractorConfig,
    encoder: Option<Encoder<T>>,
    head: ParamStore<T>,
    sub_w: ParamKey,
    sub_b: ParamKey,
    obj_w: ParamKey,
    obj_b: ParamKey,
    threshold: f64,
    probability_cap: Option<f64>,
    log: TrainingLog,
    trained_setting: Option<Setting>,
}

impl<T: Scalar> CascadeExtractor<T> {
    /// Untrained extractor; the encoder is built from the training data.
    pub fn new(schema: RelationSchema, config: ExtractorConfig) -> Result<Self> {
        if schema.is_empty() {
            return Err(Error::Config("cascade tagging needs a nonempty relation schema".into()));
        }
        config.encoder.validate()?;
        config.train.validate()?;
        let h = config.encoder.hidden_dim;
        let c = schema.len();
        let mut rng = stream_rng(config.train.seed, "cascade/head");
        let mut head = ParamStore::new(HEAD_GROUP);
        let sub_w = head.add_glorot("subject.weight", h, 2, &mut rng);
        let sub_b = head.add_filled("subject.bias", 1, 2, 0.0);
        let obj_w = head.add_glorot("object.weight", h, 2 * c, &mut rng);
        let obj_b = head.add_filled("object.bias", 1, 2 * c, 0.0);
        Ok(CascadeExtractor {
            threshold: config.train.threshold,
            schema,
            config,
            encoder: None,
            head,
            sub_w,
            sub_b,
            obj_w,
            obj_b,
            probability_cap: None,
            log: TrainingLog::default(),
            trained_setting: None,
        })
    }

    /// Attaches an encoder without training, e.g. for inspection or tests.
    pub fn with_encoder(mut self, encoder: Encoder<T>) -> Result<Self> {
        if encoder.hidden_dim() != self.config.encoder.hidden_dim {
            return Err(Error::Config("encoder width differs from the extractor config".into()));
        }
        self.encoder = Some(encoder);
        Ok(self)
    }

    pub fn schema(&self) -> &RelationSchema {
        &self.schema
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, threshold: f64) {
        self.threshold = threshold;
    }

    /// Caps every tag probability at `cap` before thresholding.
    pub fn set_probability_cap(&mut self, cap: Option<f64>) {
        self.probability_cap = cap;
    }

    pub fn head_params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.head
    }

    pub fn encoder_params_mut(&mut self) -> Result<&mut ParamStore<T>> {
        self.encoder
            .as_mut()
            .map(Encoder::params_mut)
            .ok_or_else(|| Error::Untrained("cascade".into()))
    }

    fn encoder(&self) -> Result<&Encoder<T>> {
        self.encoder.as_ref().ok_or_else(|| Error::Untrained("cascade".into()))
    }

    fn object_logits(&self, g: &mut Graph<'_, T>, tokens: Var, span: (usize, usize)) -> Var {
        let rows = g.slice_rows(tokens, span.0, span.1 - span.0 + 1);
        let subject = g.mean_rows(rows);
        let conditioned = g.add_row(tokens, subject);
        g.linear(conditioned, self.obj_w, self.obj_b)
    }

    /// Scaled BCE over both tagging stages and its gradients.
    pub fn loss_and_gradients(&self, sentence: &AnnotatedSentence, scale: T) -> Result<(T, Gradients<T>)> {
        let encoder = self.encoder()?;
        let mut g = Graph::new(&[encoder.params(), &self.head]);
        let input = encoder.prepare(&sentence.sentence);
        let out = encoder.forward(&mut g, &input);
        let n = out.n_tokens;
        if n == 0 {
            return Ok((T::zero(), Gradients::default()));
        }
        let targets = cascade_targets(sentence, &self.schema, n);
        let pw = T::of(self.config.train.pos_weight.unwrap_or(1.0));
        let per_token = scale / T::of(n as f64);
        let sub_logits = g.linear(out.tokens, self.sub_w, self.sub_b);
        let mut terms = vec![g.bce_with_logits(sub_logits, cast(&targets.subject), pw, per_token)];
        let per_subject = per_token / T::of(targets.objects.len() as f64);
        for (span, target) in &targets.objects {
            let logits = self.object_logits(&mut g, out.tokens, *span);
            terms.push(g.bce_with_logits(logits, cast(target), pw, per_subject));
        }
        let stacked = g.concat_rows(&terms);
        let loss = g.sum_all(stacked);
        Ok((g.scalar(loss), g.backward(loss)))
    }

    fn probs(&self, g: &Graph<'_, T>, v: Var) -> Array2<f64> {
        let cap = self.probability_cap.unwrap_or(1.0);
        g.value(v).mapv(|x| sigmoid(x).as_f64().min(cap))
    }

    fn decode(&self, sentence: &Sentence) -> Result<BTreeSet<RelationTuple>> {
        let encoder = self.encoder()?;
        let mut g = Graph::new(&[encoder.params(), &self.head]);
        let input = encoder.prepare(sentence);
        let out = encoder.forward(&mut g, &input);
        let mut tuples = BTreeSet::new();
        if out.n_tokens == 0 {
            return Ok(tuples);
        }
        let sub_logits = g.linear(out.tokens, self.sub_w, self.sub_b);
        let sub = self.probs(&g, sub_logits);
        let subjects = pair_spans(&tagged(&sub, 0, self.threshold), &tagged(&sub, 1, self.threshold));
        for span in subjects {
            let logits = self.object_logits(&mut g, out.tokens, span);
            let obj = self.probs(&g, logits);
            for r in 0..self.schema.len() {
                let objects = pair_spans(
                    &tagged(&obj, 2 * r, self.threshold),
                    &tagged(&obj, 2 * r + 1, self.threshold),
                );
                for o in objects {
                    tuples.insert(RelationTuple {
                        subject: sentence.mention(span.0, span.1)?,
                        object: sentence.mention(o.0, o.1)?,
                        relation: self.schema.labels()[r].clone(),
                    });
                }
            }
        }
        Ok(tuples)
    }

    fn manifest(&self) -> Result<ExtractorManifest> {
        Ok(ExtractorManifest {
            kind: "cascade".into(),
            name: "cascade".into(),
            schema: self.schema.clone(),
            schema_hash: self.schema.hash(),
            config: ExtractorConfig {
                train: crate::train::TrainConfig {
                    threshold: self.threshold,
                    ..self.config.train.clone()
                },
                ..self.config.clone()
            },
            trained_setting: self.trained_setting.ok_or_else(|| Error::Untrained("cascade".into()))?,
            log: self.log.clone(),
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m = ExtractorManifest::read(dir)?;
        if m.kind != "cascade" {
            return Err(Error::Checkpoint(format!("{} is not a cascade checkpoint", dir.display())));
        }
        let encoder = Encoder::load(&dir.join("encoder"))?;
        let mut ex = Self::new(m.schema, m.config)?.with_encoder(encoder)?;
        let head = ParamStore::load(&dir.join("head.bin"), HEAD_GROUP)?;
        ex.head.check_layout(&head)?;
        ex.head = head;
        ex.log = m.log;
        ex.trained_setting = Some(m.trained_setting);
        Ok(ex)
    }
}

fn cast<T: Scalar>(a: &Array2<f64>) -> Array2<T> {
    a.mapv(T::of)
}

impl<T: Scalar> Extractor for CascadeExtractor<T> {
    fn name(&self) -> &str {
        "cascade"
    }

    fn train(&mut self, train: &DatasetSetting, validation: &DatasetSetting) -> Result<TrainingLog> {
        check_training_input(train, validation)?;
        let encoder = Encoder::for_training(self.config.encoder.clone(), train.sentences.iter().map(|s| &s.sentence))?;
        let mut model = Self::new(self.schema.clone(), self.config.clone())?.with_encoder(encoder)?;
        let config = self.config.train.clone();
        let log = fit(
            &mut model,
            &train.sentences,
            &config,
            "cascade/shuffle",
            |m: &Self, s, scale| m.loss_and_gradients(s, scale).expect("encoder attached"),
            |m| {
                let Self { encoder, head, .. } = m;
                let encoder = encoder.as_mut().expect("encoder attached");
                if encoder.is_frozen() {
                    vec![head]
                } else {
                    vec![encoder.params_mut(), head]
                }
            },
            |m| validation_f1(validation, |s| m.decode(s).unwrap_or_default()),
        );
        model.log = log.clone();
        model.trained_setting = Some(train.setting);
        model.probability_cap = self.probability_cap;
        *self = model;
        Ok(log)
    }

    fn is_trained(&self) -> bool {
        self.trained_setting.is_some()
    }

    fn trained_setting(&self) -> Option<Setting> {
        self.trained_setting
    }

    fn extract(&self, sentence: &Sentence) -> Result<BTreeSet<RelationTuple>> {
        if !self.is_trained() && self.encoder.is_none() {
            return Err(Error::Untrained("cascade".into()));
        }
        self.decode(sentence)
    }

    /// Checkpoint directory: `encoder/`, `head.bin`, `manifest.json`.
    fn save(&self, dir: &Path) -> Result<()> {
        let manifest = self.manifest()?;
        self.encoder()?.save(&dir.join("encoder"))?;
        self.head.save(&dir.join("head.bin"))?;
        manifest.write(dir)
    }
}
