//! Sentence encoder: a bidirectional self-attention stack that prepends a
//! classification sentinel and returns the sentinel vector plus one vector per
//! (kept) input token.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::nn::{Graph, ParamKey, ParamStore, Var};
use crate::scalar::Scalar;
use crate::seed::{hash_strings, stream_rng};

pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
const UNK_ID: usize = 0;
const CLS_ID: usize = 1;

/// Parameter group of encoder weights inside a model's graph.
pub const ENCODER_GROUP: u16 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderVariant {
    /// Weights and a word-piece vocabulary loaded from a checkpoint directory.
    Pretrained,
    /// Randomly initialized, whole-token vocabulary built from training data.
    Scratch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    pub hidden_dim: usize,
    pub cased: bool,
    pub max_length: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Upper bound on the scratch vocabulary, special tokens included.
    pub vocab_size: usize,
    /// Excludes the encoder from gradient updates.
    pub freeze: bool,
    /// Directory of the pretrained checkpoint (pretrained variant only).
    pub pretrained_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            variant: EncoderVariant::Scratch,
            hidden_dim: 128,
            cased: true,
            max_length: 128,
            layers: 2,
            heads: 4,
            ffn_dim: 256,
            vocab_size: 20_000,
            freeze: false,
            pretrained_dir: None,
            seed: 17,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        if self.max_length < 2 {
            return Err(Error::Config("max_length must be at least 2".into()));
        }
        if self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by {} heads",
                self.hidden_dim, self.heads
            )));
        }
        if self.ffn_dim == 0 || self.vocab_size < 3 {
            return Err(Error::Config("ffn_dim > 0 and vocab_size ≥ 3 required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabKind {
    WholeWord,
    WordPiece,
}

/// Token vocabulary. Index 0 is the unknown bucket, index 1 the sentinel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    kind: VocabKind,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(kind: VocabKind, tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[UNK_ID] != UNK || tokens[CLS_ID] != CLS {
            return Err(Error::Config(format!(
                "vocabulary must start with {UNK} and {CLS}"
            )));
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocabulary { kind, tokens, index })
    }

    /// Most frequent words first, ties broken lexicographically.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a Sentence>, max_size: usize, cased: bool) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in sentences {
            for t in &s.tokens {
                *counts.entry(normalize(t, cased)).or_default() += 1;
            }
        }
        let mut ranked: Vec<_> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = [UNK.to_owned(), CLS.to_owned()]
            .into_iter()
            .chain(
                ranked
                    .into_iter()
                    .map(|(t, _)| t)
                    .filter(|t| t != UNK && t != CLS)
                    .take(max_size.saturating_sub(2)),
            )
            .collect();
        Self::from_tokens(VocabKind::WholeWord, tokens).expect("specials in place")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Greedy longest-match word pieces (`##` marks continuations); a word
    /// that cannot be segmented maps to the unknown bucket.
    pub fn word_pieces(&self, word: &str) -> Vec<usize> {
        let chars: Vec<char> = word.chars().collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let mut piece: String = chars[start..end].iter().collect();
                if start > 0 {
                    piece.insert_str(0, "##");
                }
                if let Some(&id) = self.index.get(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => return vec![UNK_ID],
            }
        }
        if pieces.is_empty() {
            pieces.push(UNK_ID);
        }
        pieces
    }

    pub fn hash(&self) -> String {
        hash_strings(self.tokens.iter().map(String::as_str))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, kind: VocabKind) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(kind, text.lines().map(str::to_owned).collect())
    }
}

fn normalize(token: &str, cased: bool) -> String {
    if cased {
        token.to_owned()
    } else {
        token.to_lowercase()
    }
}

/// Values of one encoded sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEncoding<T> {
    pub cls_vector: Vec<T>,
    /// One row per kept input token.
    pub token_vectors: Array2<T>,
}

/// Sentence mapped to vocabulary ids, sentinel first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedInput {
    pub ids: Vec<usize>,
    /// Position in `ids` of the first piece of each kept word.
    pub word_starts: Vec<usize>,
    pub truncated: bool,
}

impl PreparedInput {
    pub fn kept_words(&self) -> usize {
        self.word_starts.len()
    }
}

/// Graph handles of an encoder forward pass.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    pub cls: Var,
    pub tokens: Var,
    pub n_tokens: usize,
}

#[derive(Debug, Clone)]
struct LayerKeys {
    w_qkv: ParamKey,
    b_qkv: ParamKey,
    w_o: ParamKey,
    b_o: ParamKey,
    ln1_g: ParamKey,
    ln1_b: ParamKey,
    w_ff1: ParamKey,
    b_ff1: ParamKey,
    w_ff2: ParamKey,
    b_ff2: ParamKey,
    ln2_g: ParamKey,
    ln2_b: ParamKey,
}

#[derive(Debug, Clone)]
struct EncoderKeys {
    token_emb: ParamKey,
    pos_emb: ParamKey,
    ln0_g: ParamKey,
    ln0_b: ParamKey,
    layers: Vec<LayerKeys>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderManifest {
    pub variant: EncoderVariant,
    pub hidden_dim: usize,
    pub cased: bool,
    pub max_length: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab_kind: VocabKind,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub seed: u64,
}

pub struct Encoder<T: Scalar> {
    config: EncoderConfig,
    vocab: Vocabulary,
    params: ParamStore<T>,
    keys: EncoderKeys,
    truncations: AtomicUsize,
}

impl<T: Scalar> Clone for Encoder<T> {
    fn clone(&self) -> Self {
        Encoder {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.clone(),
            keys: self.keys.clone(),
            truncations: AtomicUsize::new(self.truncations.load(Ordering::Relaxed)),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Encoder<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Encoder")
            .field("config", &self.config)
            .field("vocab_size", &self.vocab.len())
            .field("parameters", &self.params.num_scalars())
            .finish()
    }
}

impl<T: Scalar> Encoder<T> {
    /// Randomly initialized encoder over `vocab`, seeded from `config.seed`.
    pub fn new(config: EncoderConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let mut rng = stream_rng(config.seed, "encoder/init");
        let mut p = ParamStore::new(ENCODER_GROUP);
        let token_emb = p.add_uniform("embeddings.token", vocab.len(), h, 0.1, &mut rng);
        let pos_emb = p.add_uniform("embeddings.position", config.max_length, h, 0.1, &mut rng);
        let ln0_g = p.add_filled("embeddings.norm.gain", 1, h, 1.0);
        let ln0_b = p.add_filled("embeddings.norm.bias", 1, h, 0.0);
        let layers = (0..config.layers)
            .map(|l| LayerKeys {
                w_qkv: p.add_glorot(format!("layer{l}.attention.qkv.weight"), h, 3 * h, &mut rng),
                b_qkv: p.add_filled(format!("layer{l}.attention.qkv.bias"), 1, 3 * h, 0.0),
                w_o: p.add_glorot(format!("layer{l}.attention.out.weight"), h, h, &mut rng),
                b_o: p.add_filled(format!("layer{l}.attention.out.bias"), 1, h, 0.0),
                ln1_g: p.add_filled(format!("layer{l}.attention.norm.gain"), 1, h, 1.0),
                ln1_b: p.add_filled(format!("layer{l}.attention.norm.bias"), 1, h, 0.0),
                w_ff1: p.add_glorot(format!("layer{l}.ffn.in.weight"), h, config.ffn_dim, &mut rng),
                b_ff1: p.add_filled(format!("layer{l}.ffn.in.bias"), 1, config.ffn_dim, 0.0),
                w_ff2: p.add_glorot(format!("layer{l}.ffn.out.weight"), config.ffn_dim, h, &mut rng),
                b_ff2: p.add_filled(format!("layer{l}.ffn.out.bias"), 1, h, 0.0),
                ln2_g: p.add_filled(format!("layer{l}.ffn.norm.gain"), 1, h, 1.0),
                ln2_b: p.add_filled(format!("layer{l}.ffn.norm.bias"), 1, h, 0.0),
            })
            .collect();
        Ok(Encoder {
            keys: EncoderKeys {
                token_emb,
                pos_emb,
                ln0_g,
                ln0_b,
                layers,
            },
            config,
            vocab,
            params: p,
            truncations: AtomicUsize::new(0),
        })
    }

    /// Builds the vocabulary from `sentences` and initializes a scratch encoder,
    /// or loads the pretrained checkpoint named by the configuration.
    pub fn for_training<'a>(config: EncoderConfig, sentences: impl IntoIterator<Item = &'a Sentence>) -> Result<Self> {
        match config.variant {
            EncoderVariant::Scratch => {
                let vocab = Vocabulary::build(sentences, config.vocab_size, config.cased);
                Self::new(config, vocab)
            }
            EncoderVariant::Pretrained => {
                let dir = config
                    .pretrained_dir
                    .clone()
                    .ok_or_else(|| Error::Config("pretrained variant needs pretrained_dir".into()))?;
                let mut enc = Self::load(&dir)?;
                enc.config.variant = EncoderVariant::Pretrained;
                enc.config.freeze = config.freeze;
                enc.config.pretrained_dir = Some(dir);
                Ok(enc)
            }
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn is_frozen(&self) -> bool {
        self.config.freeze
    }

    pub fn set_frozen(&mut self, freeze: bool) {
        self.config.freeze = freeze;
    }

    /// Parameters open to gradient updates; empty when frozen.
    pub fn trainable_parameters(&self) -> Vec<ParamKey> {
        if self.config.freeze {
            Vec::new()
        } else {
            self.params.keys().collect()
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Number of `encode`/`prepare` calls that had to truncate.
    pub fn truncation_count(&self) -> usize {
        self.truncations.load(Ordering::Relaxed)
    }

    /// Maps a sentence to ids: sentinel, then whole words (scratch) or word
    /// pieces (pretrained), truncated to `max_length` positions.
    pub fn prepare(&self, sentence: &Sentence) -> PreparedInput {
        let mut ids = vec![CLS_ID];
        let mut word_starts = Vec::with_capacity(sentence.len());
        let mut truncated = false;
        for token in &sentence.tokens {
            let word = normalize(token, self.config.cased);
            let pieces = match self.vocab.kind {
                VocabKind::WholeWord => vec![self.vocab.id(&word)],
                VocabKind::WordPiece => self.vocab.word_pieces(&word),
            };
            let room = self.config.max_length - ids.len();
            if room == 0 {
                truncated = true;
                break;
            }
            if pieces.len() > room {
                truncated = true;
            }
            word_starts.push(ids.len());
            ids.extend(pieces.into_iter().take(room));
        }
        if truncated {
            self.truncations.fetch_add(1, Ordering::Relaxed);
        }
        PreparedInput {
            ids,
            word_starts,
            truncated,
        }
    }

    /// Records the forward pass on `g`, which must have this encoder's
    /// parameters attached.
    pub fn forward(&self, g: &mut Graph<'_, T>, input: &PreparedInput) -> EncoderOutput {
        let k = &self.keys;
        let n = input.ids.len();
        let h = self.config.hidden_dim;
        let heads = self.config.heads;
        let dh = h / heads;
        let inv_sqrt = T::one() / T::of(dh as f64).sqrt();

        let tok_table = g.param(k.token_emb);
        let tok = g.gather_rows(tok_table, &input.ids);
        let pos_table = g.param(k.pos_emb);
        let pos = g.slice_rows(pos_table, 0, n);
        let x = g.add(tok, pos);
        let (g0, b0) = (g.param(k.ln0_g), g.param(k.ln0_b));
        let mut x = g.layer_norm(x, g0, b0);

        for layer in &k.layers {
            let qkv = g.linear(x, layer.w_qkv, layer.b_qkv);
            let mut contexts = Vec::with_capacity(heads);
            for head in 0..heads {
                let q = g.slice_cols(qkv, head * dh, dh);
                let kk = g.slice_cols(qkv, h + head * dh, dh);
                let v = g.slice_cols(qkv, 2 * h + head * dh, dh);
                let scores = g.matmul_t(q, kk);
                let scores = g.scale(scores, inv_sqrt);
                let att = g.softmax_rows(scores);
                contexts.push(g.matmul(att, v));
            }
            let ctx = if heads == 1 { contexts[0] } else { g.concat_cols(&contexts) };
            let attn = g.linear(ctx, layer.w_o, layer.b_o);
            let res = g.add(x, attn);
            let (lg, lb) = (g.param(layer.ln1_g), g.param(layer.ln1_b));
            x = g.layer_norm(res, lg, lb);
            let ff = g.linear(x, layer.w_ff1, layer.b_ff1);
            let ff = g.gelu(ff);
            let ff = g.linear(ff, layer.w_ff2, layer.b_ff2);
            let res = g.add(x, ff);
            let (lg, lb) = (g.param(layer.ln2_g), g.param(layer.ln2_b));
            x = g.layer_norm(res, lg, lb);
        }

        let cls = g.slice_rows(x, 0, 1);
        let n_tokens = input.word_starts.len();
        let contiguous = input.word_starts.iter().enumerate().all(|(i, &s)| s == i + 1);
        let tokens = if contiguous && n_tokens == n - 1 {
            g.slice_rows(x, 1, n_tokens)
        } else {
            g.gather_rows(x, &input.word_starts)
        };
        EncoderOutput { cls, tokens, n_tokens }
    }

    /// Evaluation-mode encoding; deterministic for fixed parameters.
    pub fn encode(&self, sentence: &Sentence) -> SentenceEncoding<T> {
        let input = self.prepare(sentence);
        let mut g = Graph::new(&[&self.params]);
        let out = self.forward(&mut g, &input);
        SentenceEncoding {
            cls_vector: g.value(out.cls).iter().copied().collect(),
            token_vectors: g.value(out.tokens).clone(),
        }
    }

    pub fn manifest(&self) -> EncoderManifest {
        EncoderManifest {
            variant: self.config.variant,
            hidden_dim: self.config.hidden_dim,
            cased: self.config.cased,
            max_length: self.config.max_length,
            layers: self.config.layers,
            heads: self.config.heads,
            ffn_dim: self.config.ffn_dim,
            vocab_kind: self.vocab.kind,
            vocab_size: self.vocab.len(),
            vocab_hash: self.vocab.hash(),
            seed: self.config.seed,
        }
    }

    /// Writes `encoder.json`, `vocab.txt` and `encoder.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        let path = dir.join("encoder.json");
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
        self.vocab.save(&dir.join("vocab.txt"))?;
        self.params.save(&dir.join("encoder.bin"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("encoder.json");
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: EncoderManifest = serde_json::from_str(&text)?;
        let vocab = Vocabulary::load(&dir.join("vocab.txt"), m.vocab_kind)?;
        if vocab.hash() != m.vocab_hash {
            return Err(Error::Checkpoint(format!(
                "{}: vocabulary hash does not match the manifest",
                dir.display()
            )));
        }
        let config = EncoderConfig {
            variant: m.variant,
            hidden_dim: m.hidden_dim,
            cased: m.cased,
            max_length: m.max_length,
            layers: m.layers,
            heads: m.heads,
            ffn_dim: m.ffn_dim,
            vocab_size: m.vocab_size,
            freeze: false,
            pretrained_dir: None,
            seed: m.seed,
        };
        let mut enc = Self::new(config, vocab)?;
        let params = ParamStore::load(&dir.join("encoder.bin"), ENCODER_GROUP)?;
        enc.params.check_layout(&params)?;
        enc.params = params;
        Ok(enc)
    }
}
