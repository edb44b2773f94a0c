//! Pointer-network decoding.
//!
//! An LSTM decoder starts from the encoder's sentinel vector. Each step
//! attends over the token vectors, points at four boundary positions
//! (subject start/end, object start/end) and classifies the relation over the
//! schema plus an end-of-sequence label. The next step's input is the mean
//! vector of both decoded spans and the relation embedding. A zero-cardinal
//! sentence is the one-step sequence `[EOS]`.

use std::collections::BTreeSet;
use std::path::Path;

use super::{check_training_input, validation_f1, Extractor, ExtractorConfig, ExtractorManifest};
use crate::corpus::{AnnotatedSentence, DatasetSetting, RelationSchema, RelationTuple, Sentence, Setting};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::nn::{Gradients, Graph, ParamKey, ParamStore, Var};
use crate::scalar::Scalar;
use crate::seed::stream_rng;
use crate::train::{fit, TrainingLog};

const HEAD_GROUP: u16 = 1;

/// Relation slot of a decode step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StepLabel {
    Relation(usize),
    Eos,
}

/// One decoder step: four token indices and a relation or end of sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DecodeStep {
    pub s_start: usize,
    pub s_end: usize,
    pub o_start: usize,
    pub o_end: usize,
    pub label: StepLabel,
}

impl DecodeStep {
    pub const EOS: DecodeStep = DecodeStep {
        s_start: 0,
        s_end: 0,
        o_start: 0,
        o_end: 0,
        label: StepLabel::Eos,
    };

    pub fn is_eos(&self) -> bool {
        self.label == StepLabel::Eos
    }

    /// Ordered, in-range spans that differ from each other.
    pub fn is_valid(&self, n_tokens: usize) -> bool {
        self.s_start <= self.s_end
            && self.o_start <= self.o_end
            && self.s_end < n_tokens
            && self.o_end < n_tokens
            && (self.s_start, self.s_end) != (self.o_start, self.o_end)
    }
}

/// Teacher-forcing target: gold tuples sorted by (subject start, object
/// start, relation index), then `EOS`. Tuples past `n_tokens` are skipped.
pub fn gold_decode_sequence(sentence: &AnnotatedSentence, schema: &RelationSchema, n_tokens: usize) -> Vec<DecodeStep> {
    let mut steps: Vec<DecodeStep> = sentence
        .tuples
        .iter()
        .filter_map(|t| {
            let r = schema.index_of(&t.relation)?;
            let step = DecodeStep {
                s_start: t.subject.start,
                s_end: t.subject.end,
                o_start: t.object.start,
                o_end: t.object.end,
                label: StepLabel::Relation(r),
            };
            step.is_valid(n_tokens).then_some(step)
        })
        .collect();
    steps.sort_by_key(|s| (s.s_start, s.o_start, s.label, s.s_end, s.o_end));
    steps.push(DecodeStep::EOS);
    steps
}

/// Keeps valid, non-EOS steps as tuples; stops at the first `EOS`.
pub fn steps_to_tuples(
    steps: &[DecodeStep],
    sentence: &Sentence,
    schema: &RelationSchema,
    n_tokens: usize,
) -> Result<BTreeSet<RelationTuple>> {
    let mut out = BTreeSet::new();
    for step in steps {
        let StepLabel::Relation(r) = step.label else { break };
        if !step.is_valid(n_tokens) || r >= schema.len() {
            continue;
        }
        out.insert(RelationTuple {
            subject: sentence.mention(step.s_start, step.s_end)?,
            object: sentence.mention(step.o_start, step.o_end)?,
            relation: schema.labels()[r].clone(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct Keys {
    init_w: ParamKey,
    init_b: ParamKey,
    start: ParamKey,
    lstm_x: ParamKey,
    lstm_h: ParamKey,
    lstm_b: ParamKey,
    pointers: [ParamKey; 4],
    rel_w: ParamKey,
    rel_b: ParamKey,
    rel_emb: ParamKey,
}

#[derive(Debug, Clone)]
pub struct PointerExtractor<T: Scalar> {
    schema: RelationSchema,
    config: ExtractorConfig,
    encoder: Option<Encoder<T>>,
    head: ParamStore<T>,
    keys: Keys,
    force_eos: bool,
    log: TrainingLog,
    trained_setting: Option<Setting>,
}

struct StepOutput {
    pointers: [Var; 4],
    relation: Var,
}

impl<T: Scalar> PointerExtractor<T> {
    pub fn new(schema: RelationSchema, config: ExtractorConfig) -> Result<Self> {
        if schema.is_empty() {
            return Err(Error::Config("pointer decoding needs a nonempty relation schema".into()));
        }
        if config.max_steps == 0 || config.relation_dim == 0 {
            return Err(Error::Config("max_steps and relation_dim must be positive".into()));
        }
        config.encoder.validate()?;
        config.train.validate()?;
        let h = config.encoder.hidden_dim;
        let c = schema.len();
        let input = 2 * h + config.relation_dim;
        let mut rng = stream_rng(config.train.seed, "pointer/head");
        let mut head = ParamStore::new(HEAD_GROUP);
        let init_w = head.add_glorot("init.weight", h, h, &mut rng);
        let init_b = head.add_filled("init.bias", 1, h, 0.0);
        let start = head.add_uniform("start", 1, input, 0.1, &mut rng);
        let lstm_x = head.add_glorot("lstm.input", input, 4 * h, &mut rng);
        let lstm_h = head.add_glorot("lstm.hidden", h, 4 * h, &mut rng);
        let lstm_b = head.add_filled("lstm.bias", 1, 4 * h, 0.0);
        let pointers = ["s_start", "s_end", "o_start", "o_end"]
            .map(|name| head.add_glorot(format!("pointer.{name}"), 2 * h, h, &mut rng));
        let rel_w = head.add_glorot("relation.weight", 2 * h, c + 1, &mut rng);
        let rel_b = head.add_filled("relation.bias", 1, c + 1, 0.0);
        let rel_emb = head.add_uniform("relation.embedding", c + 1, config.relation_dim, 0.1, &mut rng);
        Ok(PointerExtractor {
            schema,
            config,
            encoder: None,
            head,
            keys: Keys {
                init_w,
                init_b,
                start,
                lstm_x,
                lstm_h,
                lstm_b,
                pointers,
                rel_w,
                rel_b,
                rel_emb,
            },
            force_eos: false,
            log: TrainingLog::default(),
            trained_setting: None,
        })
    }

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

    /// When set, every decode emits `EOS` at its first step.
    pub fn set_force_eos(&mut self, force: bool) {
        self.force_eos = force;
    }

    pub fn head_params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.head
    }

    pub fn encoder_params_mut(&mut self) -> Result<&mut ParamStore<T>> {
        self.encoder
            .as_mut()
            .map(Encoder::params_mut)
            .ok_or_else(|| Error::Untrained("pointer".into()))
    }

    fn encoder(&self) -> Result<&Encoder<T>> {
        self.encoder.as_ref().ok_or_else(|| Error::Untrained("pointer".into()))
    }

    fn eos_index(&self) -> usize {
        self.schema.len()
    }

    fn span_mean(g: &mut Graph<'_, T>, tokens: Var, a: usize, b: usize) -> Var {
        let (lo, hi) = (a.min(b), a.max(b));
        let rows = g.slice_rows(tokens, lo, hi - lo + 1);
        g.mean_rows(rows)
    }

    /// Decoder input that encodes the previous step.
    fn step_input(&self, g: &mut Graph<'_, T>, tokens: Var, prev: Option<&DecodeStep>) -> Var {
        match prev {
            None => g.param(self.keys.start),
            Some(p) => {
                let s = Self::span_mean(g, tokens, p.s_start, p.s_end);
                let o = Self::span_mean(g, tokens, p.o_start, p.o_end);
                let table = g.param(self.keys.rel_emb);
                let idx = match p.label {
                    StepLabel::Relation(r) => r,
                    StepLabel::Eos => self.eos_index(),
                };
                let r = g.gather_rows(table, &[idx]);
                g.concat_cols(&[s, o, r])
            }
        }
    }

    /// One LSTM step followed by attention, pointers and relation logits.
    fn step(&self, g: &mut Graph<'_, T>, tokens: Var, x: Var, state: (Var, Var)) -> ((Var, Var), StepOutput) {
        let h = self.config.encoder.hidden_dim;
        let k = &self.keys;
        let (h_prev, c_prev) = state;
        let wx = g.param(k.lstm_x);
        let wh = g.param(k.lstm_h);
        let zx = g.matmul(x, wx);
        let zh = g.matmul(h_prev, wh);
        let z = g.add(zx, zh);
        let bias = g.param(k.lstm_b);
        let z = g.add(z, bias);
        let gate = |g: &mut Graph<'_, T>, i: usize| g.slice_cols(z, i * h, h);
        let (i, f, o, u) = (gate(g, 0), gate(g, 1), gate(g, 2), gate(g, 3));
        let (i, f, o, u) = (g.sigmoid(i), g.sigmoid(f), g.sigmoid(o), g.tanh(u));
        let keep = g.mul(f, c_prev);
        let write = g.mul(i, u);
        let c = g.add(keep, write);
        let tc = g.tanh(c);
        let h_new = g.mul(o, tc);

        let scores = g.matmul_t(h_new, tokens);
        let attention = g.softmax_rows(scores);
        let context = g.matmul(attention, tokens);
        let query = g.concat_cols(&[h_new, context]);
        let pointers = k.pointers.map(|key| {
            let w = g.param(key);
            let projected = g.matmul(query, w);
            g.matmul_t(projected, tokens)
        });
        let relation = g.linear(query, k.rel_w, k.rel_b);
        ((h_new, c), StepOutput { pointers, relation })
    }

    fn initial_state(&self, g: &mut Graph<'_, T>, cls: Var) -> (Var, Var) {
        let h = self.config.encoder.hidden_dim;
        let pre = g.linear(cls, self.keys.init_w, self.keys.init_b);
        let h0 = g.tanh(pre);
        let c0 = g.input(ndarray::Array2::zeros((1, h)));
        (h0, c0)
    }

    /// Scaled teacher-forced cross-entropy over pointers and relations.
    pub fn loss_and_gradients(&self, sentence: &AnnotatedSentence, scale: T) -> Result<(T, Gradients<T>)> {
        let encoder = self.encoder()?;
        let mut g = Graph::new(&[encoder.params(), &self.head]);
        let input = encoder.prepare(&sentence.sentence);
        let out = encoder.forward(&mut g, &input);
        if out.n_tokens == 0 {
            return Ok((T::zero(), Gradients::default()));
        }
        let gold = gold_decode_sequence(sentence, &self.schema, out.n_tokens);
        let mut state = self.initial_state(&mut g, out.cls);
        let mut terms = Vec::new();
        let mut prev: Option<&DecodeStep> = None;
        for step in &gold {
            let x = self.step_input(&mut g, out.tokens, prev);
            let (next, o) = self.step(&mut g, out.tokens, x, state);
            state = next;
            let label = match step.label {
                StepLabel::Relation(r) => r,
                StepLabel::Eos => self.eos_index(),
            };
            terms.push(g.cross_entropy_rows(o.relation, &[label], scale));
            if !step.is_eos() {
                let targets = [step.s_start, step.s_end, step.o_start, step.o_end];
                for (p, t) in o.pointers.into_iter().zip(targets) {
                    terms.push(g.cross_entropy_rows(p, &[t], scale));
                }
            }
            prev = Some(step);
        }
        let stacked = g.concat_rows(&terms);
        let loss = g.sum_all(stacked);
        Ok((g.scalar(loss), g.backward(loss)))
    }

    /// Greedy decode steps, ending with `EOS` unless `max_steps` ran out.
    pub fn decode_steps(&self, sentence: &Sentence) -> Result<(Vec<DecodeStep>, usize)> {
        let encoder = self.encoder()?;
        let mut g = Graph::new(&[encoder.params(), &self.head]);
        let input = encoder.prepare(sentence);
        let out = encoder.forward(&mut g, &input);
        let n = out.n_tokens;
        if n == 0 || self.force_eos {
            return Ok((vec![DecodeStep::EOS], n));
        }
        let mut state = self.initial_state(&mut g, out.cls);
        let mut steps: Vec<DecodeStep> = Vec::new();
        for _ in 0..self.config.max_steps {
            let x = self.step_input(&mut g, out.tokens, steps.last());
            let (next, o) = self.step(&mut g, out.tokens, x, state);
            state = next;
            let rel = argmax(g.value(o.relation).iter().copied());
            let [a, b, c, d] = o.pointers.map(|p| argmax(g.value(p).iter().copied()));
            let step = DecodeStep {
                s_start: a,
                s_end: b,
                o_start: c,
                o_end: d,
                label: if rel == self.eos_index() { StepLabel::Eos } else { StepLabel::Relation(rel) },
            };
            steps.push(step);
            if step.is_eos() {
                break;
            }
        }
        Ok((steps, n))
    }

    fn decode(&self, sentence: &Sentence) -> Result<BTreeSet<RelationTuple>> {
        let (steps, n) = self.decode_steps(sentence)?;
        steps_to_tuples(&steps, sentence, &self.schema, n)
    }

    fn manifest(&self) -> Result<ExtractorManifest> {
        Ok(ExtractorManifest {
            kind: "pointer".into(),
            name: "pointer".into(),
            schema: self.schema.clone(),
            schema_hash: self.schema.hash(),
            config: self.config.clone(),
            trained_setting: self.trained_setting.ok_or_else(|| Error::Untrained("pointer".into()))?,
            log: self.log.clone(),
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m = ExtractorManifest::read(dir)?;
        if m.kind != "pointer" {
            return Err(Error::Checkpoint(format!("{} is not a pointer checkpoint", dir.display())));
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

/// Index of the first maximum.
fn argmax<T: Scalar>(values: impl Iterator<Item = T>) -> usize {
    let mut best = (0, T::neg_infinity());
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

impl<T: Scalar> Extractor for PointerExtractor<T> {
    fn name(&self) -> &str {
        "pointer"
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
            "pointer/shuffle",
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
        model.force_eos = self.force_eos;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};
    use crate::encoder::EncoderConfig;
    use crate::nn::check::{check_model, GradCheckConfig};

    fn tiny() -> ExtractorConfig {
        ExtractorConfig {
            encoder: EncoderConfig {
                hidden_dim: 8,
                heads: 2,
                ffn_dim: 8,
                layers: 1,
                max_length: 32,
                ..EncoderConfig::default()
            },
            relation_dim: 4,
            ..ExtractorConfig::default()
        }
    }

    fn corpus() -> crate::corpus::SyntheticCorpus {
        generate_synthetic(&SynthConfig {
            relations: 2,
            n_train: 20,
            n_val: 10,
            n_test: 10,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn untrained(c: &crate::corpus::SyntheticCorpus) -> PointerExtractor<f64> {
        let enc = Encoder::for_training(tiny().encoder, c.train.positive.iter().map(|s| &s.sentence)).unwrap();
        PointerExtractor::new(c.schema.clone(), tiny()).unwrap().with_encoder(enc).unwrap()
    }

    fn annotated(text: &str, tuples: &[((usize, usize), (usize, usize), &str)]) -> AnnotatedSentence {
        let s = Sentence::from_text("s", text, true).unwrap();
        let tuples: Vec<_> = tuples
            .iter()
            .map(|&(a, b, r)| RelationTuple {
                subject: s.mention(a.0, a.1).unwrap(),
                object: s.mention(b.0, b.1).unwrap(),
                relation: r.into(),
            })
            .collect();
        AnnotatedSentence::new(s, tuples).unwrap()
    }

    fn schema() -> RelationSchema {
        RelationSchema::new(vec!["r0".into(), "r1".into()]).unwrap()
    }

    #[test]
    fn zero_sentence_sequence_is_eos() {
        let s = annotated("a b c", &[]);
        assert_eq!(gold_decode_sequence(&s, &schema(), 3), vec![DecodeStep::EOS]);
    }

    #[test]
    fn canonical_order_then_eos() {
        let s = annotated("a b c d e f", &[((4, 4), (0, 0), "r0"), ((1, 2), (5, 5), "r1")]);
        let seq = gold_decode_sequence(&s, &schema(), 6);
        assert_eq!(seq.len(), 3);
        assert_eq!((seq[0].s_start, seq[0].label), (1, StepLabel::Relation(1)));
        assert_eq!((seq[1].s_start, seq[1].label), (4, StepLabel::Relation(0)));
        assert!(seq[2].is_eos());
    }

    #[test]
    fn invalid_steps_are_discarded_and_duplicates_collapse() {
        let s = Sentence::from_text("x", "a b c d", true).unwrap();
        let good = DecodeStep {
            s_start: 0,
            s_end: 1,
            o_start: 3,
            o_end: 3,
            label: StepLabel::Relation(0),
        };
        let reversed = DecodeStep { s_start: 2, s_end: 1, ..good };
        let same = DecodeStep { o_start: 0, o_end: 1, ..good };
        let out = steps_to_tuples(&[reversed, good, same, good, DecodeStep::EOS, good], &s, &schema(), 4).unwrap();
        assert_eq!(out.len(), 1);
        assert!(steps_to_tuples(&[DecodeStep::EOS, good], &s, &schema(), 4).unwrap().is_empty());
    }

    #[test]
    fn forced_eos_gives_no_tuples() {
        let c = corpus();
        let mut ex = untrained(&c);
        ex.set_force_eos(true);
        for s in c.test.positive.iter().chain(&c.test.zeros) {
            assert!(ex.extract(&s.sentence).unwrap().is_empty());
        }
    }

    #[test]
    fn decode_respects_max_steps() {
        let c = corpus();
        let mut ex = untrained(&c);
        // relation bias pushes away from EOS
        let k = ex.keys.rel_b;
        ex.head_params_mut().get_mut(k)[[0, 2]] = -100.0;
        let (steps, _) = ex.decode_steps(&c.test.positive[0].sentence).unwrap();
        assert_eq!(steps.len(), ex.config().max_steps);
        assert!(!steps.iter().any(DecodeStep::is_eos));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let c = corpus();
        let mut ex = untrained(&c);
        let a = c.train.positive[0].clone();
        let z = c.train.zeros[0].clone();
        let eval = |m: &PointerExtractor<f64>| {
            let (la, mut ga) = m.loss_and_gradients(&a, 0.5).unwrap();
            let (lz, gz) = m.loss_and_gradients(&z, 0.5).unwrap();
            ga.merge(gz);
            (la + lz, ga)
        };
        let cfg = GradCheckConfig::default();
        let head = check_model(&mut ex, |m| m.head_params_mut(), eval, &cfg);
        assert!(head.max_rel_error <= 1e-3, "{head:?}");
        let enc = check_model(&mut ex, |m| m.encoder_params_mut().unwrap(), eval, &cfg);
        assert!(enc.max_rel_error <= 1e-3, "{enc:?}");
    }
}
