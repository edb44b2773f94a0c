//! Sentences, relation tuples, NZ/WZ dataset settings, JSONL import/export and
//! the synthetic clue-token corpus generator.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{hash_strings, stream_rng};

/// A pre-tokenized sentence. The classification sentinel is never stored here.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub text: String,
    pub cased: bool,
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<String>, cased: bool) -> Result<Self> {
        let id = id.into();
        if tokens.is_empty() {
            return Err(Error::Contract(format!("sentence `{id}` has no tokens")));
        }
        let text = tokens.join(" ");
        Ok(Sentence {
            id,
            tokens,
            text,
            cased,
        })
    }

    /// Whitespace tokenization; the stored text is the normalized single-space join.
    pub fn from_text(id: impl Into<String>, text: &str, cased: bool) -> Result<Self> {
        Self::new(
            id,
            text.split_whitespace().map(str::to_owned).collect(),
            cased,
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Builds a mention over `tokens[start..=end]`, checking bounds.
    pub fn mention(&self, start: usize, end: usize) -> Result<EntityMention> {
        if start > end || end >= self.tokens.len() {
            return Err(Error::InvalidSpan(format!(
                "({start}, {end}) in sentence `{}` of {} tokens",
                self.id,
                self.tokens.len()
            )));
        }
        Ok(EntityMention {
            start,
            end,
            surface: self.tokens[start..=end].join(" "),
        })
    }
}

/// Inclusive token span with its surface string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityMention {
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

impl EntityMention {
    pub fn is_valid_for(&self, sentence: &Sentence) -> bool {
        self.start <= self.end
            && self.end < sentence.len()
            && sentence.tokens[self.start..=self.end].join(" ") == self.surface
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationTuple {
    pub subject: EntityMention,
    pub object: EntityMention,
    pub relation: String,
}

impl RelationTuple {
    pub fn is_valid_for(&self, sentence: &Sentence, schema: &RelationSchema) -> bool {
        self.subject.is_valid_for(sentence)
            && self.object.is_valid_for(sentence)
            && schema.contains(&self.relation)
    }
}

impl fmt::Display for RelationTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ; {} ; {}",
            self.subject.surface, self.object.surface, self.relation
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub sentence: Sentence,
    pub tuples: BTreeSet<RelationTuple>,
}

impl AnnotatedSentence {
    pub fn new(sentence: Sentence, tuples: impl IntoIterator<Item = RelationTuple>) -> Result<Self> {
        let tuples: BTreeSet<_> = tuples.into_iter().collect();
        for t in &tuples {
            if !t.subject.is_valid_for(&sentence) || !t.object.is_valid_for(&sentence) {
                return Err(Error::InvalidSpan(format!(
                    "tuple `{t}` does not align with sentence `{}`",
                    sentence.id
                )));
            }
        }
        Ok(AnnotatedSentence { sentence, tuples })
    }

    pub fn is_zero_cardinal(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn id(&self) -> &str {
        &self.sentence.id
    }
}

/// Ordered relation label set; the order defines multi-label indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSchema {
    relations: Vec<String>,
    index: HashMap<String, usize>,
}

impl RelationSchema {
    pub fn new(relations: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(relations.len());
        for (i, r) in relations.iter().enumerate() {
            if index.insert(r.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate relation label `{r}`")));
            }
        }
        Ok(RelationSchema { relations, index })
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, idx: usize) -> Option<&str> {
        self.relations.get(idx).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.relations
    }

    pub fn hash(&self) -> String {
        hash_strings(self.relations.iter().map(String::as_str))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let labels: Vec<String> = serde_json::from_reader(BufReader::new(file))?;
        Self::new(labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &self.relations)?;
        Ok(())
    }
}

impl Serialize for RelationSchema {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.relations.serialize(s)
    }
}

impl<'de> Deserialize<'de> for RelationSchema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let labels = Vec::<String>::deserialize(d)?;
        RelationSchema::new(labels).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    NZ,
    WZ,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::NZ => "NZ",
            Setting::WZ => "WZ",
        })
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NZ" => Ok(Setting::NZ),
            "WZ" => Ok(Setting::WZ),
            _ => Err(Error::Config(format!("unknown setting `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Validation, Partition::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "validation" | "valid" | "dev" => Ok(Partition::Validation),
            "test" => Ok(Partition::Test),
            _ => Err(Error::Config(format!("unknown partition `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSetting {
    pub setting: Setting,
    pub partition: Partition,
    pub sentences: Vec<AnnotatedSentence>,
}

impl DatasetSetting {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn zero_cardinal_count(&self) -> usize {
        self.sentences.iter().filter(|s| s.is_zero_cardinal()).count()
    }

    pub fn tuple_count(&self) -> usize {
        self.sentences.iter().map(|s| s.tuples.len()).sum()
    }

    /// Loads a materialized setting file, checking the NZ invariant.
    pub fn load(
        path: &Path,
        setting: Setting,
        partition: Partition,
        schema: &RelationSchema,
        cased: bool,
    ) -> Result<Self> {
        let sentences = load_jsonl(path, schema, cased)?;
        if setting == Setting::NZ {
            if let Some(s) = sentences.iter().find(|s| s.is_zero_cardinal()) {
                return Err(Error::Contract(format!(
                    "NZ file {} holds zero-cardinal sentence `{}`",
                    path.display(),
                    s.id()
                )));
            }
        }
        Ok(DatasetSetting {
            setting,
            partition,
            sentences,
        })
    }
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<serde_json::Value>,
    #[serde(rename = "sentText")]
    sent_text: String,
    #[serde(rename = "relationMentions", default)]
    relation_mentions: Vec<RawMention>,
}

#[derive(Serialize, Deserialize)]
struct RawMention {
    #[serde(rename = "em1Text")]
    em1_text: String,
    #[serde(rename = "em2Text")]
    em2_text: String,
    label: String,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    #[serde(rename = "sentText")]
    sent_text: &'a str,
    #[serde(rename = "relationMentions")]
    relation_mentions: Vec<RawMention>,
}

/// Finds the leftmost token-aligned occurrence of `surface`.
pub fn align_entity_spans(sentence: &Sentence, surface: &str) -> Result<EntityMention> {
    let needle: Vec<&str> = surface.split_whitespace().collect();
    let not_found = || Error::EntityNotFound {
        sentence_id: sentence.id.clone(),
        surface: surface.to_owned(),
    };
    if needle.is_empty() || needle.len() > sentence.len() {
        return Err(not_found());
    }
    (0..=sentence.len() - needle.len())
        .find(|&i| {
            needle
                .iter()
                .zip(&sentence.tokens[i..])
                .all(|(a, b)| *a == b.as_str())
        })
        .map(|start| EntityMention {
            start,
            end: start + needle.len() - 1,
            surface: needle.join(" "),
        })
        .ok_or_else(not_found)
}

fn parse_record(
    line_no: usize,
    line: &str,
    schema: &RelationSchema,
    cased: bool,
) -> Result<AnnotatedSentence> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
        line: line_no,
        message: e.to_string(),
    })?;
    let id = match raw.id {
        Some(serde_json::Value::String(s)) => s,
        Some(serde_json::Value::Number(n)) => n.to_string(),
        Some(other) => {
            return Err(Error::MalformedLine {
                line: line_no,
                message: format!("id must be a string or number, got {other}"),
            })
        }
        None => format!("line-{line_no}"),
    };
    let sentence = Sentence::from_text(id, &raw.sent_text, cased).map_err(|_| Error::MalformedLine {
        line: line_no,
        message: "empty sentText".into(),
    })?;
    let mut tuples = BTreeSet::new();
    for m in raw.relation_mentions {
        if !schema.contains(&m.label) {
            return Err(Error::UnknownRelation(m.label));
        }
        tuples.insert(RelationTuple {
            subject: align_entity_spans(&sentence, &m.em1_text)?,
            object: align_entity_spans(&sentence, &m.em2_text)?,
            relation: m.label,
        });
    }
    Ok(AnnotatedSentence { sentence, tuples })
}

/// Parses JSONL content already in memory. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_jsonl(content: &str, schema: &RelationSchema, cased: bool) -> Result<Vec<AnnotatedSentence>> {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_record(i + 1, l, schema, cased))
        .collect()
}

pub fn load_jsonl(path: &Path, schema: &RelationSchema, cased: bool) -> Result<Vec<AnnotatedSentence>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(i + 1, &line, schema, cased)?);
    }
    Ok(out)
}

pub fn to_jsonl_line(sentence: &AnnotatedSentence) -> Result<String> {
    let record = OutRecord {
        id: &sentence.sentence.id,
        sent_text: &sentence.sentence.text,
        relation_mentions: sentence
            .tuples
            .iter()
            .map(|t| RawMention {
                em1_text: t.subject.surface.clone(),
                em2_text: t.object.surface.clone(),
                label: t.relation.clone(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&record)?)
}

pub fn write_jsonl<'a>(
    path: &Path,
    sentences: impl IntoIterator<Item = &'a AnnotatedSentence>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in sentences {
        writeln!(w, "{}", to_jsonl_line(s)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Builds the NZ setting (positives only) and the WZ setting (positives
/// followed by zero-cardinal sentences) for one partition.
pub fn build_settings(
    positive: Vec<AnnotatedSentence>,
    zeros: Vec<AnnotatedSentence>,
    partition: Partition,
) -> Result<(DatasetSetting, DatasetSetting)> {
    if let Some(s) = positive.iter().find(|s| s.is_zero_cardinal()) {
        return Err(Error::Contract(format!(
            "positive sentence `{}` has no tuples",
            s.id()
        )));
    }
    if let Some(s) = zeros.iter().find(|s| !s.is_zero_cardinal()) {
        return Err(Error::Contract(format!(
            "zero-cardinal sentence `{}` carries {} tuples",
            s.id(),
            s.tuples.len()
        )));
    }
    let nz = DatasetSetting {
        setting: Setting::NZ,
        partition,
        sentences: positive.clone(),
    };
    let mut wz_sentences = positive;
    wz_sentences.extend(zeros);
    let wz = DatasetSetting {
        setting: Setting::WZ,
        partition,
        sentences: wz_sentences,
    };
    Ok((nz, wz))
}

/// Expected counts for one (dataset, partition) cell group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub positive: usize,
    pub tuples: usize,
    pub zeros: usize,
}

impl PartitionCounts {
    pub fn of(setting: &DatasetSetting) -> Self {
        let zeros = setting.zero_cardinal_count();
        PartitionCounts {
            positive: setting.len() - zeros,
            tuples: setting.tuple_count(),
            zeros,
        }
    }
}

/// dataset name → partition → counts.
pub type ExpectedStats = BTreeMap<String, BTreeMap<Partition, PartitionCounts>>;

/// Dataset statistics of the NYT24* and NYT29* releases.
pub fn nyt_reference_stats() -> ExpectedStats {
    let cell = |positive, tuples, zeros| PartitionCounts {
        positive,
        tuples,
        zeros,
    };
    let mut stats = ExpectedStats::new();
    stats.insert(
        "NYT24*".into(),
        BTreeMap::from([
            (Partition::Train, cell(56_196, 88_366, 145_767)),
            (Partition::Validation, cell(5_000, 8_489, 4_969)),
            (Partition::Test, cell(5_000, 8_120, 4_969)),
        ]),
    );
    stats.insert(
        "NYT29*".into(),
        BTreeMap::from([
            (Partition::Train, cell(63_306, 78_973, 177_861)),
            (Partition::Validation, cell(7_033, 8_766, 4_940)),
            (Partition::Test, cell(4_006, 5_859, 4_601)),
        ]),
    );
    stats
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsRow {
    pub dataset: String,
    pub partition: Partition,
    pub quantity: String,
    pub expected: usize,
    pub actual: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub rows: Vec<StatsRow>,
}

impl StatsReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,partition,quantity,expected,actual,pass\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.dataset, r.partition, r.quantity, r.expected, r.actual, r.pass
            ));
        }
        out
    }
}

/// Compares actual counts against `expected`, one row per cell. `settings`
/// should be the WZ setting of each (dataset, partition); a missing setting
/// counts as empty.
pub fn validate_statistics(settings: &[(String, DatasetSetting)], expected: &ExpectedStats) -> StatsReport {
    let mut rows = Vec::new();
    for (dataset, partitions) in expected {
        for (partition, want) in partitions {
            let got = settings
                .iter()
                .find(|(name, s)| name == dataset && s.partition == *partition)
                .map(|(_, s)| PartitionCounts::of(s))
                .unwrap_or(PartitionCounts {
                    positive: 0,
                    tuples: 0,
                    zeros: 0,
                });
            for (quantity, e, a) in [
                ("positive_sentences", want.positive, got.positive),
                ("tuples", want.tuples, got.tuples),
                ("zero_sentences", want.zeros, got.zeros),
            ] {
                rows.push(StatsRow {
                    dataset: dataset.clone(),
                    partition: *partition,
                    quantity: quantity.into(),
                    expected: e,
                    actual: a,
                    pass: e == a,
                });
            }
        }
    }
    StatsReport { rows }
}

/// Synthetic clue-token corpus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub relations: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub zero_fraction: f64,
    /// Number of distinct filler words.
    pub vocab_size: usize,
    /// Distinct entity words per argument role.
    pub entity_pool: usize,
    /// Longest entity mention in tokens.
    pub max_entity_len: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            relations: 5,
            n_train: 2000,
            n_val: 500,
            n_test: 500,
            zero_fraction: 0.5,
            vocab_size: 200,
            entity_pool: 40,
            max_entity_len: 1,
            min_len: 8,
            max_len: 14,
            seed: 13,
        }
    }
}

/// One partition of a generated corpus, split as the NZ/WZ builder expects.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPartition {
    pub positive: Vec<AnnotatedSentence>,
    pub zeros: Vec<AnnotatedSentence>,
}

impl SynthPartition {
    pub fn settings(&self, partition: Partition) -> (DatasetSetting, DatasetSetting) {
        build_settings(self.positive.clone(), self.zeros.clone(), partition)
            .expect("generator keeps positives and zeros apart")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub schema: RelationSchema,
    pub train: SynthPartition,
    pub validation: SynthPartition,
    pub test: SynthPartition,
}

impl SyntheticCorpus {
    pub fn partition(&self, p: Partition) -> &SynthPartition {
        match p {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::Test => &self.test,
        }
    }

    /// (NZ, WZ) settings of a partition.
    pub fn settings(&self, p: Partition) -> (DatasetSetting, DatasetSetting) {
        self.partition(p).settings(p)
    }
}

/// Surface word of the clue token signalling relation `r`.
pub fn clue_token(r: usize) -> String {
    format!("clue{r}")
}

pub fn synthetic_relation_label(r: usize) -> String {
    format!("/synthetic/relation_{r}")
}

enum Unit {
    Subject(Vec<String>),
    Object(Vec<String>),
    Clue(String),
    Filler(String),
}

/// Generates a deterministic corpus: positive sentences hold one clue token,
/// a subject mention (drawn from the `Sub*` pool) and an object mention
/// (drawn from the `Obj*` pool) at random positions; zero-cardinal sentences
/// hold both mentions but no clue token.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticCorpus> {
    if config.relations < 1 {
        return Err(Error::Config("relation count must be at least 1".into()));
    }
    if config.n_train < 1 || config.n_val < 1 || config.n_test < 1 {
        return Err(Error::Config("partition sizes must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&config.zero_fraction) {
        return Err(Error::Config(format!(
            "zero_fraction {} outside [0, 1)",
            config.zero_fraction
        )));
    }
    if config.vocab_size < 1 || config.entity_pool < config.max_entity_len || config.max_entity_len < 1 {
        return Err(Error::Config(
            "vocab_size ≥ 1 and entity_pool ≥ max_entity_len ≥ 1 required".into(),
        ));
    }
    if config.min_len < 2 * config.max_entity_len + 1 || config.max_len < config.min_len {
        return Err(Error::Config(format!(
            "sentence length range [{}, {}] cannot hold two entities and a clue",
            config.min_len, config.max_len
        )));
    }
    let schema = RelationSchema::new((0..config.relations).map(synthetic_relation_label).collect())?;
    let make = |partition: Partition, n: usize| -> Result<SynthPartition> {
        let mut rng = stream_rng(config.seed, &format!("synthetic/{partition}"));
        let n_zero = (n as f64 * config.zero_fraction).round() as usize;
        let n_pos = n - n_zero;
        let mut positive = Vec::with_capacity(n_pos);
        for i in 0..n_pos {
            let relation = rng.gen_range(0..config.relations);
            positive.push(synth_sentence(
                config,
                &mut rng,
                format!("{partition}-pos-{i}"),
                Some(relation),
                &schema,
            )?);
        }
        let mut zeros = Vec::with_capacity(n_zero);
        for i in 0..n_zero {
            zeros.push(synth_sentence(
                config,
                &mut rng,
                format!("{partition}-zero-{i}"),
                None,
                &schema,
            )?);
        }
        Ok(SynthPartition { positive, zeros })
    };
    Ok(SyntheticCorpus {
        train: make(Partition::Train, config.n_train)?,
        validation: make(Partition::Validation, config.n_val)?,
        test: make(Partition::Test, config.n_test)?,
        schema,
    })
}

fn entity_words(rng: &mut impl Rng, prefix: &str, pool: usize, max_len: usize) -> Vec<String> {
    let len = rng.gen_range(1..=max_len);
    rand::seq::index::sample(rng, pool, len)
        .into_iter()
        .map(|i| format!("{prefix}{i}"))
        .collect()
}

fn synth_sentence(
    config: &SynthConfig,
    rng: &mut impl Rng,
    id: String,
    relation: Option<usize>,
    schema: &RelationSchema,
) -> Result<AnnotatedSentence> {
    let len = rng.gen_range(config.min_len..=config.max_len);
    let subject = entity_words(rng, "Sub", config.entity_pool, config.max_entity_len);
    let object = entity_words(rng, "Obj", config.entity_pool, config.max_entity_len);
    let mut units = vec![Unit::Subject(subject), Unit::Object(object)];
    if let Some(r) = relation {
        units.push(Unit::Clue(clue_token(r)));
    }
    let used: usize = units
        .iter()
        .map(|u| match u {
            Unit::Subject(w) | Unit::Object(w) => w.len(),
            _ => 1,
        })
        .sum();
    for _ in used..len {
        units.push(Unit::Filler(format!("w{}", rng.gen_range(0..config.vocab_size))));
    }
    units.shuffle(rng);

    let mut tokens = Vec::with_capacity(len);
    let mut subject_span = (0, 0);
    let mut object_span = (0, 0);
    for unit in units {
        match unit {
            Unit::Subject(words) => {
                subject_span = (tokens.len(), tokens.len() + words.len() - 1);
                tokens.extend(words);
            }
            Unit::Object(words) => {
                object_span = (tokens.len(), tokens.len() + words.len() - 1);
                tokens.extend(words);
            }
            Unit::Clue(w) | Unit::Filler(w) => tokens.push(w),
        }
    }
    let sentence = Sentence::new(id, tokens, true)?;
    let tuples = match relation {
        Some(r) => vec![RelationTuple {
            subject: sentence.mention(subject_span.0, subject_span.1)?,
            object: sentence.mention(object_span.0, object_span.1)?,
            relation: schema.label(r).expect("relation index in range").to_owned(),
        }],
        None => Vec::new(),
    };
    AnnotatedSentence::new(sentence, tuples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nyt_schema() -> RelationSchema {
        RelationSchema::new(vec![
            "/business/company/founders".into(),
            "/business/person/company".into(),
            "/people/person/children".into(),
        ])
        .unwrap()
    }

    const ALLEN: &str = "Paul Allen , a co-founder of Microsoft , paid the bills for aircraft designer Burt Rutan to develop SpaceShipOne , the craft that won the $ 10 million Ansari X Prize last year for reaching suborbital space .";

    #[test]
    fn empty_relation_mentions_is_zero_cardinal() {
        let line = r#"{"id":"z1","sentText":"nothing to see here .","relationMentions":[]}"#;
        let out = parse_jsonl(line, &nyt_schema(), true).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].is_zero_cardinal());
    }

    #[test]
    fn clue_sentence_tuple_loads() {
        let line = serde_json::json!({
            "id": "allen",
            "sentText": ALLEN,
            "relationMentions": [
                {"em1Text": "Microsoft", "em2Text": "Paul Allen", "label": "/business/company/founders"}
            ]
        })
        .to_string();
        let out = parse_jsonl(&line, &nyt_schema(), true).unwrap();
        let t = out[0].tuples.iter().next().unwrap();
        assert_eq!(t.subject.surface, "Microsoft");
        assert_eq!((t.object.start, t.object.end), (0, 1));
        assert_eq!(t.relation, "/business/company/founders");
    }

    #[test]
    fn duplicate_tuples_collapse() {
        let m = r#"{"em1Text":"a","em2Text":"c","label":"/people/person/children"}"#;
        let line = format!(r#"{{"id":"d","sentText":"a b c","relationMentions":[{m},{m}]}}"#);
        let out = parse_jsonl(&line, &nyt_schema(), true).unwrap();
        assert_eq!(out[0].tuples.len(), 1);
    }

    #[test]
    fn load_errors_carry_context() {
        let schema = nyt_schema();
        let bad = "{\"sentText\":\"a b\"}\nnot json";
        match parse_jsonl(bad, &schema, true) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let label = r#"{"id":"x","sentText":"a b","relationMentions":[{"em1Text":"a","em2Text":"b","label":"/nope"}]}"#;
        assert!(matches!(parse_jsonl(label, &schema, true), Err(Error::UnknownRelation(l)) if l == "/nope"));
        let missing = r#"{"id":"x","sentText":"a b","relationMentions":[{"em1Text":"a","em2Text":"q","label":"/people/person/children"}]}"#;
        match parse_jsonl(missing, &schema, true) {
            Err(Error::EntityNotFound { sentence_id, surface }) => {
                assert_eq!(sentence_id, "x");
                assert_eq!(surface, "q");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn alignment_is_leftmost_and_token_aligned() {
        let s = Sentence::from_text("s", "a b c b", true).unwrap();
        let m = align_entity_spans(&s, "b").unwrap();
        assert_eq!((m.start, m.end), (1, 1));
        let allen = Sentence::from_text("t2", ALLEN, true).unwrap();
        let m = align_entity_spans(&allen, "Paul Allen").unwrap();
        assert_eq!((m.start, m.end), (0, 1));
        let ab = Sentence::from_text("s", "a b", true).unwrap();
        assert!(matches!(align_entity_spans(&ab, "c"), Err(Error::EntityNotFound { .. })));
        // substring of a token is not a token-aligned match
        let s = Sentence::from_text("s", "abc d", true).unwrap();
        assert!(align_entity_spans(&s, "ab").is_err());
    }

    fn annotated(id: &str, text: &str, with_tuple: bool) -> AnnotatedSentence {
        let s = Sentence::from_text(id, text, true).unwrap();
        let tuples = if with_tuple {
            vec![RelationTuple {
                subject: s.mention(0, 0).unwrap(),
                object: s.mention(1, 1).unwrap(),
                relation: "r".into(),
            }]
        } else {
            vec![]
        };
        AnnotatedSentence::new(s, tuples).unwrap()
    }

    #[test]
    fn settings_concatenate() {
        let pos = vec![annotated("p1", "a b", true), annotated("p2", "c d", true)];
        let zeros = vec![
            annotated("z1", "e f", false),
            annotated("z2", "g h", false),
            annotated("z3", "i j", false),
        ];
        let (nz, wz) = build_settings(pos.clone(), zeros, Partition::Train).unwrap();
        assert_eq!(nz.len(), 2);
        assert_eq!(wz.len(), 5);
        assert_eq!(wz.sentences[..2], pos[..]);
        assert_eq!(nz.setting, Setting::NZ);
        assert_eq!(wz.partition, Partition::Train);

        let (nz, wz) = build_settings(pos, vec![], Partition::Test).unwrap();
        assert_eq!(nz.sentences, wz.sentences);
    }

    #[test]
    fn settings_reject_misplaced_sentences() {
        let pos = vec![annotated("z", "a b", false)];
        assert!(matches!(build_settings(pos, vec![], Partition::Train), Err(Error::Contract(_))));
        let zeros = vec![annotated("p", "a b", true)];
        assert!(matches!(build_settings(vec![], zeros, Partition::Train), Err(Error::Contract(_))));
    }

    #[test]
    fn reference_stats_and_empty_validation() {
        let stats = nyt_reference_stats();
        let t24 = stats["NYT24*"][&Partition::Test];
        assert_eq!((t24.positive, t24.tuples, t24.zeros), (5_000, 8_120, 4_969));
        let t29 = stats["NYT29*"][&Partition::Test];
        assert_eq!((t29.positive, t29.tuples, t29.zeros), (4_006, 5_859, 4_601));
        let train = stats["NYT24*"][&Partition::Train];
        assert_eq!(train.positive + train.zeros, 201_963);

        let zero_expect = ExpectedStats::from([(
            "tiny".to_string(),
            BTreeMap::from([(Partition::Test, PartitionCounts { positive: 0, tuples: 0, zeros: 0 })]),
        )]);
        let report = validate_statistics(&[], &zero_expect);
        assert_eq!(report.rows.len(), 3);
        assert!(report.all_pass());
        assert!(report.to_csv().starts_with("dataset,partition,quantity,expected,actual,pass\n"));
    }

    #[test]
    fn validation_flags_mismatch() {
        let (_, wz) = build_settings(
            vec![annotated("p", "a b", true)],
            vec![annotated("z", "c d", false)],
            Partition::Test,
        )
        .unwrap();
        let expect = ExpectedStats::from([(
            "toy".to_string(),
            BTreeMap::from([(Partition::Test, PartitionCounts { positive: 1, tuples: 2, zeros: 1 })]),
        )]);
        let report = validate_statistics(&[("toy".into(), wz)], &expect);
        let fails: Vec<_> = report.rows.iter().filter(|r| !r.pass).collect();
        assert_eq!(fails.len(), 1);
        assert_eq!(fails[0].quantity, "tuples");
        assert_eq!(fails[0].actual, 1);
    }

    #[test]
    fn synthetic_counts_by_enumeration() {
        let cfg = SynthConfig {
            relations: 5,
            n_train: 2000,
            n_val: 10,
            n_test: 10,
            zero_fraction: 0.5,
            ..SynthConfig::default()
        };
        let corpus = generate_synthetic(&cfg).unwrap();
        let (nz, wz) = corpus.settings(Partition::Train);
        let zeros = wz.sentences.iter().filter(|s| s.tuples.is_empty()).count();
        let positives = wz.sentences.iter().filter(|s| !s.tuples.is_empty()).count();
        assert_eq!((positives, zeros), (1000, 1000));
        assert_eq!(nz.len(), 1000);
    }

    #[test]
    fn synthetic_sentences_follow_construction() {
        let corpus = generate_synthetic(&SynthConfig {
            n_train: 300,
            n_val: 5,
            n_test: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        for s in &corpus.train.positive {
            let clues: Vec<_> = s.sentence.tokens.iter().filter(|t| t.starts_with("clue")).collect();
            assert_eq!(clues.len(), 1);
            assert_eq!(s.tuples.len(), 1);
            let t = s.tuples.iter().next().unwrap();
            let r = corpus.schema.index_of(&t.relation).unwrap();
            assert_eq!(clues[0], &clue_token(r));
            assert!(t.subject.surface.starts_with("Sub"));
            assert!(t.object.surface.starts_with("Obj"));
        }
        for s in &corpus.train.zeros {
            assert!(!s.sentence.tokens.iter().any(|t| t.starts_with("clue")));
        }
    }

    #[test]
    fn synthetic_zero_fraction_zero_gives_identical_settings() {
        let corpus = generate_synthetic(&SynthConfig {
            zero_fraction: 0.0,
            n_train: 20,
            n_val: 5,
            n_test: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        let (nz, wz) = corpus.settings(Partition::Train);
        assert_eq!(nz.sentences, wz.sentences);
    }

    #[test]
    fn synthetic_config_errors() {
        let bad = SynthConfig {
            relations: 0,
            ..SynthConfig::default()
        };
        assert!(matches!(generate_synthetic(&bad), Err(Error::Config(_))));
        let bad = SynthConfig {
            zero_fraction: 1.0,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&bad).is_err());
    }

    #[test]
    fn schema_rejects_duplicates() {
        assert!(RelationSchema::new(vec!["a".into(), "a".into()]).is_err());
        let s = RelationSchema::new(vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(s.index_of("b"), Some(1));
        assert_eq!(s.label(0), Some("a"));
    }
}
