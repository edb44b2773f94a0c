//! Tuple-level matching and micro-averaged precision / recall / F1.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, RelationTuple};
use crate::error::{Error, Result};

/// How predicted entities are compared against gold entities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Full entity spans must agree.
    Exact,
    /// Only the first token of each entity must agree.
    PartialFirst,
    /// Only the last token of each entity must agree.
    #[default]
    PartialLast,
}

impl MatchMode {
    pub const ALL: [MatchMode; 3] = [MatchMode::Exact, MatchMode::PartialFirst, MatchMode::PartialLast];
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchMode::Exact => "exact",
            MatchMode::PartialFirst => "partial_first",
            MatchMode::PartialLast => "partial_last",
        })
    }
}

impl FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(MatchMode::Exact),
            "partial_first" => Ok(MatchMode::PartialFirst),
            "partial_last" | "partial" => Ok(MatchMode::PartialLast),
            _ => Err(Error::Config(format!("unknown match mode `{s}`"))),
        }
    }
}

/// Inclusive token range compared by a match mode. Partial modes collapse a
/// span to a single token `(i, i)`.
pub type SpanKey = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MatchKey {
    pub subject: SpanKey,
    pub object: SpanKey,
    pub relation: String,
}

pub fn tuple_key(tuple: &RelationTuple, mode: MatchMode) -> MatchKey {
    let span = |m: &crate::corpus::EntityMention| match mode {
        MatchMode::Exact => (m.start, m.end),
        MatchMode::PartialFirst => (m.start, m.start),
        MatchMode::PartialLast => (m.end, m.end),
    };
    MatchKey {
        subject: span(&tuple.subject),
        object: span(&tuple.object),
        relation: tuple.relation.clone(),
    }
}

/// Label recorded on a [`ScoreReport`]: a tuple match mode or sentence-level
/// detection scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Exact,
    PartialFirst,
    PartialLast,
    Sentence,
    Label,
}

impl From<MatchMode> for ScoreMode {
    fn from(m: MatchMode) -> Self {
        match m {
            MatchMode::Exact => ScoreMode::Exact,
            MatchMode::PartialFirst => ScoreMode::PartialFirst,
            MatchMode::PartialLast => ScoreMode::PartialLast,
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMode::Exact => "exact",
            ScoreMode::PartialFirst => "partial_first",
            ScoreMode::PartialLast => "partial_last",
            ScoreMode::Sentence => "sentence",
            ScoreMode::Label => "label",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub mode: ScoreMode,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ScoreReport {
    pub fn from_counts(mode: ScoreMode, counts: Counts) -> Self {
        let Counts { tp, fp, fn_ } = counts;
        let ratio = |num: usize, den: usize| if den > 0 { num as f64 / den as f64 } else { 0.0 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        ScoreReport {
            mode,
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1: f1_from_pr(precision, recall).expect("ratios lie in [0, 1]"),
        }
    }

    pub fn counts(&self) -> Counts {
        Counts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }

    pub const CSV_HEADER: &'static str = "mode,tp,fp,fn,precision,recall,f1";

    /// Scores printed with three decimals.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{:.3},{:.3}",
            self.mode, self.tp, self.fp, self.fn_, self.precision, self.recall, self.f1
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }
}

fn keys(tuples: &BTreeSet<RelationTuple>, mode: MatchMode) -> BTreeSet<MatchKey> {
    tuples.iter().map(|t| tuple_key(t, mode)).collect()
}

/// Counts for one sentence; predictions are deduplicated under the mode's key.
pub fn sentence_counts(
    predicted: &BTreeSet<RelationTuple>,
    gold: &BTreeSet<RelationTuple>,
    mode: MatchMode,
) -> Counts {
    let p = keys(predicted, mode);
    let g = keys(gold, mode);
    let tp = p.intersection(&g).count();
    Counts {
        tp,
        fp: p.len() - tp,
        fn_: g.len() - tp,
    }
}

/// Micro-averaged tuple scoring. Sentences of `gold` without an entry in
/// `predictions` count as empty predictions.
pub fn score<'a, P>(predictions: P, gold: &[AnnotatedSentence], mode: MatchMode) -> Result<ScoreReport>
where
    P: IntoIterator<Item = (&'a str, &'a BTreeSet<RelationTuple>)>,
{
    let by_id: HashMap<&str, &AnnotatedSentence> = gold.iter().map(|s| (s.id(), s)).collect();
    let mut pred_by_id: HashMap<&str, &BTreeSet<RelationTuple>> = HashMap::new();
    for (id, tuples) in predictions {
        let sentence = by_id
            .get(id)
            .ok_or_else(|| Error::Contract(format!("prediction for unknown sentence `{id}`")))?;
        if let Some(bad) = tuples
            .iter()
            .find(|t| !t.subject.is_valid_for(&sentence.sentence) || !t.object.is_valid_for(&sentence.sentence))
        {
            return Err(Error::InvalidSpan(format!(
                "predicted tuple `{bad}` does not align with sentence `{id}`"
            )));
        }
        pred_by_id.insert(id, tuples);
    }
    let empty = BTreeSet::new();
    let mut total = Counts::default();
    for s in gold {
        let pred = pred_by_id.get(s.id()).copied().unwrap_or(&empty);
        total += sentence_counts(pred, &s.tuples, mode);
    }
    Ok(ScoreReport::from_counts(mode.into(), total))
}

fn check_unit<T: Float>(name: &str, x: T) -> Result<()> {
    if x >= T::zero() && x <= T::one() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{name} = {} outside [0, 1]",
            x.to_f64().unwrap_or(f64::NAN)
        )))
    }
}

/// Harmonic mean of precision and recall; zero when both are zero.
pub fn f1_from_pr<T: Float>(p: T, r: T) -> Result<T> {
    check_unit("precision", p)?;
    check_unit("recall", r)?;
    let sum = p + r;
    if sum == T::zero() {
        return Ok(T::zero());
    }
    let two = T::one() + T::one();
    Ok(two * p * r / sum)
}

fn hundred<T: Float>() -> T {
    T::from(100.0).expect("100 is representable")
}

/// F1 drop in percentage points: `100 · (f1_a − f1_b)`.
pub fn drop_points<T: Float>(f1_a: T, f1_b: T) -> T {
    hundred::<T>() * (f1_a - f1_b)
}

/// F1 gain of the two-step pipeline over end-to-end, in percentage points.
pub fn improvement_points<T: Float>(two_step_f1: T, end_to_end_f1: T) -> T {
    hundred::<T>() * (two_step_f1 - end_to_end_f1)
}
