mod support;

use crossrag_core::metrics::{bleu, length_ratio, meteor, porter_stem, SynonymTable};
use crossrag_core::retrieve_text::tokenize;
use proptest::prelude::*;
use support::{naive_tokens, oracle_bleu, oracle_meteor, GOLDEN_PAIRS};

#[test]
fn golden_pairs_match_oracles() {
    for (c, r) in GOLDEN_PAIRS {
        let b = bleu(c, r, 4).unwrap();
        let m = meteor(c, r, None).unwrap();
        assert!((b - oracle_bleu(c, r)).abs() < 1e-9, "bleu {c:?} / {r:?}: {b}");
        assert!((m - oracle_meteor(c, r, &[])).abs() < 1e-9, "meteor {c:?} / {r:?}: {m}");
    }
}

#[test]
fn frozen_hand_values() {
    let v = bleu("the cat sat on the mat", "the cat is on the mat", 4).unwrap();
    assert!((v - 0.003343701524882112).abs() < 1e-15);
    assert!((meteor("replace the filter", "replace the filter", None).unwrap() - 0.9814814814814815).abs() < 1e-15);
    assert_eq!(meteor("replacing filters", "replace filter", None).unwrap(), 0.9375);
}

#[test]
fn synonym_stage_matches_oracle() {
    let table = SynonymTable::from_json(r#"{"swap": ["replace"], "tighten": ["torque"]}"#).unwrap();
    let pairs = [
        ("swap the filter", "replace the filter"),
        ("torque bolts then swap seal", "tighten bolts and replace the seal"),
    ];
    let syn = [("swap", "replace"), ("tighten", "torque")];
    for (c, r) in pairs {
        let got = meteor(c, r, Some(&table)).unwrap();
        assert!((got - oracle_meteor(c, r, &syn)).abs() < 1e-9, "{c:?}");
    }
}

#[test]
fn porter_reference_vectors() {
    let text = std::fs::read_to_string(support::fixture("porter_vectors.tsv")).unwrap();
    let mut n = 0;
    for line in text.lines() {
        let (word, stem) = line.split_once('\t').unwrap();
        assert_eq!(porter_stem(word), stem, "{word}");
        n += 1;
    }
    assert!(n > 4000);
}

fn words(max: usize) -> impl Strategy<Value = String> {
    let vocab = prop::sample::select(vec![
        "the",
        "pump",
        "pumps",
        "filter",
        "filters",
        "replace",
        "replacing",
        "valve",
        "Oil",
        "oil",
        "14",
        "F-200",
        "seal",
        "a",
        "is",
        "stock",
        "running",
        "runs",
        "hot",
    ]);
    prop::collection::vec(vocab, 0..max).prop_map(|w| w.join(" "))
}

fn sentence() -> impl Strategy<Value = String> {
    words(14)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn metrics_bounded(c in sentence(), r in sentence()) {
        prop_assume!(!tokenize(&r).is_empty());
        let b = bleu(&c, &r, 4).unwrap();
        let m = meteor(&c, &r, None).unwrap();
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!((0.0..=1.0).contains(&m));
    }

    #[test]
    fn identities(x in sentence()) {
        let m = tokenize(&x).len();
        prop_assume!(m > 0);
        prop_assert_eq!(bleu(&x, &x, 4).unwrap(), 1.0);
        let expected = 1.0 - 0.5 / (m as f64).powi(3);
        prop_assert!((meteor(&x, &x, None).unwrap() - expected).abs() < 1e-12);
        prop_assert_eq!(length_ratio(&x, &x).unwrap(), 100.0);
    }

    #[test]
    fn meteor_matches_brute_force(c in words(6), r in words(6)) {
        prop_assume!(!tokenize(&r).is_empty());
        let got = meteor(&c, &r, None).unwrap();
        prop_assert!((got - oracle_meteor(&c, &r, &[])).abs() < 1e-9);
    }

    #[test]
    fn tokenizer_matches_naive(s in "\\PC{0,40}") {
        prop_assert_eq!(tokenize(&s), naive_tokens(&s));
    }
}
