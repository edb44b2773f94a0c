mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rexzero::corpus::{AnnotatedSentence, RelationTuple, Sentence};
use rexzero::metrics::{f1_from_pr, score, sentence_counts, tuple_key, MatchMode};

fn cases(seed: u64, n: usize) -> Vec<(AnnotatedSentence, Vec<RelationTuple>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| common::random_case(&mut rng, i)).collect()
}

fn mode() -> impl Strategy<Value = MatchMode> {
    prop_oneof![Just(MatchMode::Exact), Just(MatchMode::PartialFirst), Just(MatchMode::PartialLast)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counts_equal_the_all_pairs_oracle(seed in any::<u64>(), n in 1usize..40, mode in mode()) {
        let cases = cases(seed, n);
        let gold: Vec<_> = cases.iter().map(|(g, _)| g.clone()).collect();
        let preds: Vec<(String, BTreeSet<RelationTuple>)> =
            cases.iter().map(|(g, p)| (g.id().to_owned(), p.iter().cloned().collect())).collect();
        let report = score(preds.iter().map(|(i, t)| (i.as_str(), t)), &gold, mode).unwrap();
        let gold_lists: Vec<Vec<RelationTuple>> = gold.iter().map(|g| g.tuples.iter().cloned().collect()).collect();
        let oracle = common::oracle_counts(
            cases.iter().zip(&gold_lists).map(|((_, p), g)| (p.as_slice(), g.as_slice())),
            mode,
        );
        prop_assert_eq!(report.counts(), oracle);
        prop_assert!((0.0..=1.0).contains(&report.precision));
        prop_assert!((0.0..=1.0).contains(&report.recall));
        prop_assert!((0.0..=1.0).contains(&report.f1));
        prop_assert!(report.f1 <= report.precision.max(report.recall) + 1e-12);
    }

    #[test]
    fn predicting_gold_is_perfect(seed in any::<u64>(), n in 1usize..20, mode in mode()) {
        let cases = cases(seed, n);
        let gold: Vec<_> = cases.iter().map(|(g, _)| g.clone()).collect();
        let report = score(gold.iter().map(|g| (g.id(), &g.tuples)), &gold, mode).unwrap();
        prop_assert_eq!(report.fp, 0);
        prop_assert_eq!(report.fn_, 0);
        if report.tp > 0 {
            prop_assert_eq!(report.f1, 1.0);
        }
    }

    #[test]
    fn partial_modes_never_count_fewer_matches_per_tuple(seed in any::<u64>()) {
        // a pair of tuples equal under Exact is equal under both partial modes
        let cases = cases(seed, 5);
        for (g, p) in &cases {
            for a in p {
                for b in &g.tuples {
                    if tuple_key(a, MatchMode::Exact) == tuple_key(b, MatchMode::Exact) {
                        prop_assert_eq!(tuple_key(a, MatchMode::PartialFirst), tuple_key(b, MatchMode::PartialFirst));
                        prop_assert_eq!(tuple_key(a, MatchMode::PartialLast), tuple_key(b, MatchMode::PartialLast));
                    }
                }
            }
        }
    }

    #[test]
    fn f1_is_symmetric_and_bounded(p in 0.0f64..=1.0, r in 0.0f64..=1.0) {
        let f = f1_from_pr(p, r).unwrap();
        prop_assert_eq!(f, f1_from_pr(r, p).unwrap());
        prop_assert!(f >= p.min(r) - 1e-12 && f <= p.max(r) + 1e-12);
    }
}

#[test]
fn hand_enumerated_sentence() {
    let s = Sentence::from_text("s", "A B C D E F", true).unwrap();
    let t = |a: usize, b: usize, r: &str| RelationTuple {
        subject: s.mention(a, a).unwrap(),
        object: s.mention(b, b).unwrap(),
        relation: r.into(),
    };
    let gold = AnnotatedSentence::new(s.clone(), [t(0, 1, "r1"), t(2, 3, "r2")]).unwrap();
    let pred: BTreeSet<_> = [t(0, 1, "r1"), t(4, 5, "r1")].into();
    let c = sentence_counts(&pred, &gold.tuples, MatchMode::Exact);
    assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 1));
    let r = score([("s", &pred)], &[gold], MatchMode::Exact).unwrap();
    assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
}

#[test]
fn shared_last_tokens_match_only_partially() {
    let s = Sentence::from_text("s", "a b c d e f g h", true).unwrap();
    let tuple = |sub: (usize, usize), obj: (usize, usize)| RelationTuple {
        subject: s.mention(sub.0, sub.1).unwrap(),
        object: s.mention(obj.0, obj.1).unwrap(),
        relation: "r".into(),
    };
    let a = tuple((0, 1), (5, 7));
    let b = tuple((1, 1), (6, 7));
    assert_eq!(tuple_key(&a, MatchMode::PartialLast), tuple_key(&b, MatchMode::PartialLast));
    assert_ne!(tuple_key(&a, MatchMode::Exact), tuple_key(&b, MatchMode::Exact));
    assert_ne!(tuple_key(&a, MatchMode::PartialFirst), tuple_key(&b, MatchMode::PartialFirst));
}
