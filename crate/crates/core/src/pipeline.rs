//! End-to-end and two-step inference producing per-sentence prediction maps.
//!
//! End-to-end runs pass every sentence to one extractor. Two-step runs ask a
//! [`SentenceFilter`] first and only extract from sentences it keeps.
//! Sentences are processed in parallel; output order always follows the test
//! set.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, DatasetSetting, EntityMention, RelationTuple};
use crate::error::{Error, Result};
use crate::extractors::Extractor;
use crate::metrics::{improvement_points, score, MatchMode, ScoreReport};
use crate::scalar::Scalar;
use crate::zerocard::ZeroCardClassifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    EndToEnd,
    TwoStep,
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineMode::EndToEnd => "end_to_end",
            PipelineMode::TwoStep => "two_step",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionEntry {
    pub id: String,
    /// Rejected by the sentence filter; the tuple set is then empty.
    pub filtered_out: bool,
    pub tuples: BTreeSet<RelationTuple>,
}

/// Predictions in test-set order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionMap {
    entries: Vec<PredictionEntry>,
}

#[derive(Serialize, Deserialize)]
struct TupleRecord {
    #[serde(rename = "em1Text")]
    em1_text: String,
    #[serde(rename = "em2Text")]
    em2_text: String,
    label: String,
    #[serde(rename = "em1Span")]
    em1_span: (usize, usize),
    #[serde(rename = "em2Span")]
    em2_span: (usize, usize),
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    id: String,
    filtered_out: bool,
    tuples: Vec<TupleRecord>,
}

impl PredictionMap {
    pub fn new(entries: Vec<PredictionEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Contract(format!("duplicate prediction id `{}`", e.id)));
            }
            if e.filtered_out && !e.tuples.is_empty() {
                return Err(Error::Contract(format!("filtered sentence `{}` carries tuples", e.id)));
            }
        }
        Ok(PredictionMap { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PredictionEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&PredictionEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.id.as_str()).collect()
    }

    pub fn filtered_count(&self) -> usize {
        self.entries.iter().filter(|e| e.filtered_out).count()
    }

    pub fn tuple_count(&self) -> usize {
        self.entries.iter().map(|e| e.tuples.len()).sum()
    }

    /// `(id, tuples)` pairs in the shape [`score`] consumes.
    pub fn for_scoring(&self) -> impl Iterator<Item = (&str, &BTreeSet<RelationTuple>)> {
        self.entries.iter().map(|e| (e.id.as_str(), &e.tuples))
    }

    pub fn score(&self, gold: &[AnnotatedSentence], mode: MatchMode) -> Result<ScoreReport> {
        score(self.for_scoring(), gold, mode)
    }

    /// One `{id, filtered_out, tuples}` record per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            let record = EntryRecord {
                id: e.id.clone(),
                filtered_out: e.filtered_out,
                tuples: e
                    .tuples
                    .iter()
                    .map(|t| TupleRecord {
                        em1_text: t.subject.surface.clone(),
                        em2_text: t.object.surface.clone(),
                        label: t.relation.clone(),
                        em1_span: (t.subject.start, t.subject.end),
                        em2_span: (t.object.start, t.object.end),
                    })
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&record)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(content: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: EntryRecord = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })?;
            let mention = |surface: String, (start, end): (usize, usize)| EntityMention { start, end, surface };
            entries.push(PredictionEntry {
                id: record.id,
                filtered_out: record.filtered_out,
                tuples: record
                    .tuples
                    .into_iter()
                    .map(|t| RelationTuple {
                        subject: mention(t.em1_text, t.em1_span),
                        object: mention(t.em2_text, t.em2_span),
                        relation: t.label,
                    })
                    .collect(),
            });
        }
        Self::new(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }
}

/// Has-tuples decision used to filter sentences before extraction.
pub trait SentenceFilter: Sync {
    /// Fails when the filter cannot make decisions yet.
    fn ready(&self) -> Result<()> {
        Ok(())
    }

    fn has_tuples(&self, sentence: &AnnotatedSentence) -> Result<bool>;
}

impl<T: Scalar> SentenceFilter for ZeroCardClassifier<T> {
    fn ready(&self) -> Result<()> {
        if self.is_trained() {
            Ok(())
        } else {
            Err(Error::Untrained("classifier".into()))
        }
    }

    fn has_tuples(&self, sentence: &AnnotatedSentence) -> Result<bool> {
        Ok(self.classify(&sentence.sentence).decision)
    }
}

/// Decides from the gold annotation.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleFilter;

impl SentenceFilter for OracleFilter {
    fn has_tuples(&self, sentence: &AnnotatedSentence) -> Result<bool> {
        Ok(!sentence.is_zero_cardinal())
    }
}

/// Decisions computed once per test set and shared across extractors.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedDecisions {
    pub decisions: BTreeMap<String, bool>,
}

impl CachedDecisions {
    pub fn compute(filter: &dyn SentenceFilter, testset: &DatasetSetting) -> Result<Self> {
        filter.ready()?;
        let decisions: Vec<bool> = testset
            .sentences
            .par_iter()
            .map(|s| filter.has_tuples(s))
            .collect::<Result<_>>()?;
        Ok(CachedDecisions {
            decisions: testset
                .sentences
                .iter()
                .map(|s| s.id().to_owned())
                .zip(decisions)
                .collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl SentenceFilter for CachedDecisions {
    fn has_tuples(&self, sentence: &AnnotatedSentence) -> Result<bool> {
        self.decisions
            .get(sentence.id())
            .copied()
            .ok_or_else(|| Error::Contract(format!("no cached decision for sentence `{}`", sentence.id())))
    }
}

fn require_trained(extractor: &dyn Extractor) -> Result<()> {
    if extractor.is_trained() {
        Ok(())
    } else {
        Err(Error::Untrained(format!("extractor `{}`", extractor.name())))
    }
}

/// Extracts from every sentence; nothing is filtered.
pub fn run_end_to_end(extractor: &dyn Extractor, testset: &DatasetSetting) -> Result<PredictionMap> {
    require_trained(extractor)?;
    let entries = testset
        .sentences
        .par_iter()
        .map(|s| {
            Ok(PredictionEntry {
                id: s.id().to_owned(),
                filtered_out: false,
                tuples: extractor.extract(&s.sentence)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PredictionMap::new(entries)
}

/// Extracts only from sentences the filter keeps; rejected sentences get an
/// empty set and `filtered_out = true`.
pub fn run_two_step(
    filter: &dyn SentenceFilter,
    extractor: &dyn Extractor,
    testset: &DatasetSetting,
) -> Result<PredictionMap> {
    filter.ready()?;
    require_trained(extractor)?;
    let entries = testset
        .sentences
        .par_iter()
        .map(|s| {
            let keep = filter.has_tuples(s)?;
            Ok(PredictionEntry {
                id: s.id().to_owned(),
                filtered_out: !keep,
                tuples: if keep { extractor.extract(&s.sentence)? } else { BTreeSet::new() },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PredictionMap::new(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub two_step: ScoreReport,
    pub end_to_end: ScoreReport,
    /// Two-step F1 minus end-to-end F1, in percentage points.
    pub improvement_points: f64,
}

pub fn compare_runs(
    two_step: &PredictionMap,
    end_to_end: &PredictionMap,
    gold: &[AnnotatedSentence],
    mode: MatchMode,
) -> Result<Comparison> {
    if two_step.ids() != end_to_end.ids() {
        return Err(Error::Contract("prediction maps cover different sentence ids".into()));
    }
    let two_step = two_step.score(gold, mode)?;
    let end_to_end = end_to_end.score(gold, mode)?;
    Ok(Comparison {
        improvement_points: improvement_points(two_step.f1, end_to_end.f1),
        two_step,
        end_to_end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_settings, Partition, Sentence, Setting};
    use crate::train::TrainingLog;

    /// Returns the gold tuples of known sentences, plus one spurious tuple on
    /// sentences without tuples.
    #[derive(Clone)]
    struct Lookup {
        gold: BTreeMap<String, AnnotatedSentence>,
        trained: bool,
    }

    impl Extractor for Lookup {
        fn name(&self) -> &str {
            "lookup"
        }
        fn train(&mut self, _: &DatasetSetting, _: &DatasetSetting) -> Result<TrainingLog> {
            Ok(TrainingLog::default())
        }
        fn is_trained(&self) -> bool {
            self.trained
        }
        fn trained_setting(&self) -> Option<Setting> {
            self.trained.then_some(Setting::NZ)
        }
        fn extract(&self, sentence: &Sentence) -> Result<BTreeSet<RelationTuple>> {
            let gold = &self.gold[&sentence.id];
            if gold.is_zero_cardinal() {
                Ok(BTreeSet::from([RelationTuple {
                    subject: sentence.mention(0, 0)?,
                    object: sentence.mention(1, 1)?,
                    relation: "r".into(),
                }]))
            } else {
                Ok(gold.tuples.clone())
            }
        }
    }

    fn testset() -> DatasetSetting {
        let s = |id: &str, with: bool| {
            let sentence = Sentence::from_text(id, "a b c d", true).unwrap();
            let tuples = with.then(|| RelationTuple {
                subject: sentence.mention(0, 1).unwrap(),
                object: sentence.mention(3, 3).unwrap(),
                relation: "r".into(),
            });
            AnnotatedSentence::new(sentence, tuples).unwrap()
        };
        let (_, wz) = build_settings(vec![s("p1", true), s("p2", true)], vec![s("z1", false)], Partition::Test).unwrap();
        wz
    }

    fn lookup(set: &DatasetSetting) -> Lookup {
        Lookup {
            gold: set.sentences.iter().map(|s| (s.id().to_owned(), s.clone())).collect(),
            trained: true,
        }
    }

    struct RejectAll;
    impl SentenceFilter for RejectAll {
        fn has_tuples(&self, _: &AnnotatedSentence) -> Result<bool> {
            Ok(false)
        }
    }

    #[test]
    fn end_to_end_keeps_order_and_filters_nothing() {
        let set = testset();
        let map = run_end_to_end(&lookup(&set), &set).unwrap();
        let ids: Vec<_> = map.entries().iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, vec!["p1", "p2", "z1"]);
        assert_eq!(map.filtered_count(), 0);
        let r = map.score(&set.sentences, MatchMode::Exact).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (2, 1, 0));
    }

    #[test]
    fn oracle_two_step_has_no_zero_sentence_false_positives() {
        let set = testset();
        let ex = lookup(&set);
        let map = run_two_step(&OracleFilter, &ex, &set).unwrap();
        let z = map.get("z1").unwrap();
        assert!(z.filtered_out && z.tuples.is_empty());
        let r = map.score(&set.sentences, MatchMode::Exact).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (2, 0, 0));
        // kept sentences carry exactly the extractor's raw output
        for e in map.entries().iter().filter(|e| !e.filtered_out) {
            let s = set.sentences.iter().find(|s| s.id() == e.id).unwrap();
            assert_eq!(e.tuples, ex.extract(&s.sentence).unwrap());
        }
    }

    #[test]
    fn rejecting_everything_gives_zero_recall() {
        let set = testset();
        let map = run_two_step(&RejectAll, &lookup(&set), &set).unwrap();
        assert_eq!(map.tuple_count(), 0);
        assert_eq!(map.filtered_count(), 3);
        assert_eq!(map.score(&set.sentences, MatchMode::Exact).unwrap().recall, 0.0);
    }

    #[test]
    fn untrained_extractor_is_rejected() {
        let set = testset();
        let mut ex = lookup(&set);
        ex.trained = false;
        assert!(matches!(run_end_to_end(&ex, &set), Err(Error::Untrained(_))));
        assert!(matches!(run_two_step(&OracleFilter, &ex, &set), Err(Error::Untrained(_))));
    }

    #[test]
    fn cached_decisions_replay_the_filter() {
        let set = testset();
        let cache = CachedDecisions::compute(&OracleFilter, &set).unwrap();
        let a = run_two_step(&OracleFilter, &lookup(&set), &set).unwrap();
        let b = run_two_step(&cache, &lookup(&set), &set).unwrap();
        assert_eq!(a, b);
        let other = Sentence::from_text("new", "a b", true).unwrap();
        assert!(cache.has_tuples(&AnnotatedSentence::new(other, []).unwrap()).is_err());
    }

    #[test]
    fn comparison_and_id_checks() {
        let set = testset();
        let e2e = run_end_to_end(&lookup(&set), &set).unwrap();
        let same = compare_runs(&e2e, &e2e, &set.sentences, MatchMode::Exact).unwrap();
        assert_eq!(same.improvement_points, 0.0);
        let two = run_two_step(&OracleFilter, &lookup(&set), &set).unwrap();
        let c = compare_runs(&two, &e2e, &set.sentences, MatchMode::Exact).unwrap();
        assert!(c.improvement_points > 0.0);
        let empty = run_two_step(&RejectAll, &lookup(&set), &set).unwrap();
        assert!(compare_runs(&empty, &e2e, &set.sentences, MatchMode::Exact).unwrap().improvement_points < 0.0);
        let partial = PredictionMap::new(e2e.entries()[..2].to_vec()).unwrap();
        assert!(compare_runs(&partial, &e2e, &set.sentences, MatchMode::Exact).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let set = testset();
        let map = run_two_step(&OracleFilter, &lookup(&set), &set).unwrap();
        let text = map.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("\"em1Span\":[0,1]"));
        assert_eq!(PredictionMap::from_jsonl(&text).unwrap(), map);
    }

    #[test]
    fn filtered_entries_must_be_empty() {
        let set = testset();
        let mut entries = run_end_to_end(&lookup(&set), &set).unwrap().entries().to_vec();
        entries[2].filtered_out = true;
        assert!(PredictionMap::new(entries.clone()).is_err());
        entries[2].filtered_out = false;
        entries.push(entries[0].clone());
        assert!(PredictionMap::new(entries).is_err());
    }
}
