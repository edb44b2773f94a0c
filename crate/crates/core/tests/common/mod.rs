//! Published score tables and an all-pairs matching oracle shared by the
//! integration tests.

#![allow(dead_code)]

use rexzero::corpus::{AnnotatedSentence, RelationTuple, Setting};
use rexzero::metrics::{Counts, MatchMode};

/// (P, R, F1) as printed.
pub type Prf = (f64, f64, f64);

pub struct EndToEndRow {
    pub dataset: &'static str,
    pub train: Setting,
    pub model: &'static str,
    pub nz: Prf,
    pub wz: Prf,
    pub drop: f64,
    /// Bold column, printed on WZ-trained rows only.
    pub bold: Option<f64>,
}

const MODELS: [&str; 9] = ["OneRel", "BiRTE", "TDEER", "PRGC", "GRTE", "PtrNet", "CasRel", "TPLinker", "PFN*"];

type Block = [(Prf, Prf, f64, Option<f64>); 9];

const NYT24_NZ: Block = [
    ((0.926, 0.918, 0.922), (0.678, 0.918, 0.780), 14.2, None),
    ((0.914, 0.920, 0.917), (0.628, 0.920, 0.747), 17.0, None),
    ((0.922, 0.908, 0.915), (0.644, 0.908, 0.754), 16.1, None),
    ((0.918, 0.884, 0.901), (0.670, 0.884, 0.762), 13.9, None),
    ((0.929, 0.924, 0.926), (0.645, 0.924, 0.760), 16.6, None),
    ((0.898, 0.894, 0.896), (0.538, 0.894, 0.671), 22.5, None),
    ((0.894, 0.890, 0.892), (0.612, 0.890, 0.725), 16.7, None),
    ((0.913, 0.917, 0.915), (0.643, 0.917, 0.756), 15.9, None),
    ((0.892, 0.919, 0.905), (0.557, 0.919, 0.694), 21.1, None),
];

const NYT24_WZ: Block = [
    ((0.926, 0.773, 0.843), (0.828, 0.773, 0.800), 4.3, Some(12.2)),
    ((0.898, 0.858, 0.878), (0.786, 0.858, 0.820), 5.8, Some(9.7)),
    ((0.914, 0.905, 0.909), (0.637, 0.905, 0.748), 16.1, Some(16.7)),
    ((0.905, 0.777, 0.836), (0.791, 0.777, 0.784), 5.2, Some(11.7)),
    ((0.920, 0.769, 0.838), (0.824, 0.769, 0.796), 4.2, Some(13.0)),
    ((0.932, 0.697, 0.798), (0.838, 0.697, 0.761), 3.7, Some(13.5)),
    ((0.915, 0.878, 0.896), (0.643, 0.878, 0.742), 15.4, Some(15.0)),
    ((0.923, 0.808, 0.861), (0.823, 0.807, 0.815), 4.6, Some(10.0)),
    ((0.910, 0.732, 0.812), (0.804, 0.732, 0.766), 4.6, Some(13.9)),
];

const NYT29_NZ: Block = [
    ((0.805, 0.726, 0.763), (0.528, 0.726, 0.611), 15.2, None),
    ((0.794, 0.724, 0.757), (0.484, 0.724, 0.580), 17.7, None),
    ((0.813, 0.707, 0.756), (0.530, 0.707, 0.606), 15.0, None),
    ((0.807, 0.701, 0.750), (0.509, 0.701, 0.590), 16.0, None),
    ((0.804, 0.726, 0.763), (0.492, 0.726, 0.587), 17.6, None),
    ((0.790, 0.710, 0.748), (0.394, 0.710, 0.507), 24.1, None),
    ((0.795, 0.712, 0.751), (0.488, 0.712, 0.579), 17.2, None),
    ((0.805, 0.718, 0.759), (0.456, 0.718, 0.558), 20.1, None),
    ((0.777, 0.720, 0.748), (0.474, 0.720, 0.572), 17.6, None),
];

const NYT29_WZ: Block = [
    ((0.841, 0.657, 0.738), (0.755, 0.657, 0.703), 3.5, Some(6.0)),
    ((0.833, 0.663, 0.738), (0.698, 0.663, 0.680), 5.8, Some(7.7)),
    ((0.788, 0.708, 0.746), (0.536, 0.708, 0.611), 13.5, Some(14.5)),
    ((0.842, 0.639, 0.727), (0.755, 0.639, 0.692), 3.5, Some(5.8)),
    ((0.840, 0.624, 0.716), (0.759, 0.623, 0.684), 3.2, Some(7.9)),
    ((0.876, 0.620, 0.726), (0.720, 0.620, 0.666), 6.0, Some(8.2)),
    ((0.807, 0.708, 0.754), (0.541, 0.708, 0.613), 14.1, Some(13.8)),
    ((0.775, 0.636, 0.698), (0.686, 0.636, 0.660), 3.8, Some(9.9)),
    ((0.833, 0.600, 0.697), (0.748, 0.600, 0.666), 3.1, Some(8.2)),
];

/// The end-to-end table: 36 rows, each with an NZ-test and a WZ-test triple.
pub fn end_to_end_rows() -> Vec<EndToEndRow> {
    let blocks = [
        ("NYT24*", Setting::NZ, &NYT24_NZ),
        ("NYT24*", Setting::WZ, &NYT24_WZ),
        ("NYT29*", Setting::NZ, &NYT29_NZ),
        ("NYT29*", Setting::WZ, &NYT29_WZ),
    ];
    let mut rows = Vec::new();
    for (dataset, train, block) in blocks {
        for (model, &(nz, wz, drop, bold)) in MODELS.iter().zip(block.iter()) {
            rows.push(EndToEndRow {
                dataset,
                train,
                model,
                nz,
                wz,
                drop,
                bold,
            });
        }
    }
    rows
}

/// Classifier table: (dataset, mode, P, R, F1).
pub const CLASSIFIER_ROWS: [(&str, &str, f64, f64, f64); 4] = [
    ("NYT24*", "binary", 0.887, 0.867, 0.877),
    ("NYT29*", "binary", 0.801, 0.888, 0.842),
    ("NYT24*", "mcml", 0.881, 0.884, 0.883),
    ("NYT29*", "mcml", 0.823, 0.824, 0.823),
];

/// Two-step table: (dataset, classifier mode, model, P, R, F1, % ↑).
pub const TWO_STEP_ROWS: [(&str, &str, &str, f64, f64, f64, f64); 18] = [
    ("NYT24*", "mcml", "OneRel", 0.832, 0.836, 0.834, 3.43),
    ("NYT24*", "mcml", "BiRTE", 0.819, 0.839, 0.829, 0.85),
    ("NYT24*", "mcml", "TDEER", 0.830, 0.830, 0.830, 8.23),
    ("NYT24*", "mcml", "PRGC", 0.822, 0.811, 0.816, 3.26),
    ("NYT24*", "mcml", "GRTE", 0.835, 0.842, 0.839, 4.30),
    ("NYT24*", "mcml", "PtrNet", 0.806, 0.815, 0.811, 4.95),
    ("NYT24*", "mcml", "CasRel", 0.807, 0.812, 0.810, 6.73),
    ("NYT24*", "mcml", "TPLinker", 0.816, 0.839, 0.828, 1.23),
    ("NYT24*", "mcml", "PFN*", 0.805, 0.833, 0.818, 5.20),
    ("NYT29*", "binary", "OneRel", 0.740, 0.664, 0.700, -0.27),
    ("NYT29*", "binary", "BiRTE", 0.679, 0.663, 0.671, -0.95),
    ("NYT29*", "binary", "TDEER", 0.749, 0.649, 0.696, 8.52),
    ("NYT29*", "binary", "PRGC", 0.744, 0.645, 0.691, -0.14),
    ("NYT29*", "binary", "GRTE", 0.740, 0.661, 0.699, 1.41),
    ("NYT29*", "binary", "PtrNet", 0.677, 0.650, 0.663, -0.33),
    ("NYT29*", "binary", "CasRel", 0.676, 0.653, 0.665, 5.13),
    ("NYT29*", "binary", "TPLinker", 0.681, 0.656, 0.668, 0.81),
    ("NYT29*", "binary", "PFN*", 0.726, 0.658, 0.690, 2.42),
];

type Key = ((usize, usize), (usize, usize), String);

fn oracle_key(t: &RelationTuple, mode: MatchMode) -> Key {
    let (s, o) = (&t.subject, &t.object);
    match mode {
        MatchMode::Exact => ((s.start, s.end), (o.start, o.end), t.relation.clone()),
        MatchMode::PartialFirst => ((s.start, s.start), (o.start, o.start), t.relation.clone()),
        MatchMode::PartialLast => ((s.end, s.end), (o.end, o.end), t.relation.clone()),
    }
}

fn distinct(keys: impl IntoIterator<Item = Key>) -> Vec<Key> {
    let mut out: Vec<Key> = Vec::new();
    for k in keys {
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

/// Compares every predicted key against every gold key.
pub fn oracle_counts<'a>(
    pairs: impl IntoIterator<Item = (&'a [RelationTuple], &'a [RelationTuple])>,
    mode: MatchMode,
) -> Counts {
    let mut c = Counts::default();
    for (pred, gold) in pairs {
        let p = distinct(pred.iter().map(|t| oracle_key(t, mode)));
        let g = distinct(gold.iter().map(|t| oracle_key(t, mode)));
        let mut tp = 0;
        for pk in &p {
            let mut hit = false;
            for gk in &g {
                if pk == gk {
                    hit = true;
                }
            }
            if hit {
                tp += 1;
            }
        }
        let fn_ = g.iter().filter(|gk| !p.iter().any(|pk| pk == *gk)).count();
        c.tp += tp;
        c.fp += p.len() - tp;
        c.fn_ += fn_;
    }
    c
}

/// Random sentence with random gold and predicted tuples (at most 10 each).
/// Spans and labels come from small ranges so that keys collide often.
pub fn random_case(rng: &mut impl rand::Rng, id: usize) -> (AnnotatedSentence, Vec<RelationTuple>) {
    use rand::Rng as _;
    use rexzero::corpus::Sentence;
    let len = rng.gen_range(2..9);
    let words: Vec<String> = (0..len).map(|i| format!("w{i}")).collect();
    let sentence = Sentence::new(format!("s{id}"), words, true).expect("nonempty");
    let tuple = |rng: &mut dyn rand::RngCore| {
        let mut span = || {
            let a = rng.gen_range(0..len);
            let b = rng.gen_range(a..len.min(a + 3));
            sentence.mention(a, b).expect("in range")
        };
        let subject = span();
        let object = span();
        RelationTuple {
            subject,
            object,
            relation: format!("r{}", rng.gen_range(0..3)),
        }
    };
    let n_gold = rng.gen_range(0..=10);
    let gold: Vec<_> = (0..n_gold).map(|_| tuple(rng)).collect();
    let n_pred = rng.gen_range(0..=10);
    let mut pred: Vec<_> = (0..n_pred).map(|_| tuple(rng)).collect();
    // copy some gold tuples so true positives occur
    for g in gold.iter().take(rng.gen_range(0..=n_gold)) {
        if rng.gen_bool(0.5) && pred.len() < 10 {
            pred.push(g.clone());
        }
    }
    (AnnotatedSentence::new(sentence, gold).expect("valid tuples"), pred)
}
