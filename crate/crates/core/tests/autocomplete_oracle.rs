mod common;

use std::time::Instant;

use healthchat_core::autocomplete::{build_prefix_index, PrefixIndex, DEFAULT_SUGGESTIONS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Checks every entry: normalize both sides, keep prefix matches, sort by
/// (normalized length in chars, id), take five.
fn naive(entries: &[(String, String)], typed: &str) -> Vec<String> {
    let norm = |s: &str| s.split_whitespace().map(|w| w.to_lowercase()).collect::<Vec<_>>().join(" ");
    let prefix = norm(typed);
    if prefix.is_empty() {
        return Vec::new();
    }
    let mut hits: Vec<(usize, &str)> = entries
        .iter()
        .filter(|(_, q)| norm(q).starts_with(&prefix))
        .map(|(id, q)| (norm(q).chars().count(), id.as_str()))
        .collect();
    hits.sort();
    hits.into_iter().take(5).map(|(_, id)| id.to_string()).collect()
}

fn random_prefix(rng: &mut ChaCha8Rng, question: &str) -> String {
    let chars: Vec<char> = question.chars().collect();
    let n = rng.random_range(1..=chars.len().min(30));
    let mut p: String = chars[..n].iter().collect();
    if rng.random_bool(0.3) {
        p = p.to_uppercase();
    }
    if rng.random_bool(0.2) {
        p = format!("  {}", p.replace(' ', "   "));
    }
    p
}

#[test]
fn lookup_index_matches_naive_scan() {
    let lookup = &common::bundle().lookup_qa;
    let index = build_prefix_index(lookup).unwrap();
    assert_eq!(index.len(), 2048);
    let entries: Vec<(String, String)> = lookup.iter().map(|q| (q.id.clone(), q.question.clone())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let q = &lookup[rng.random_range(0..lookup.len())].question;
        let prefix = random_prefix(&mut rng, q);
        let got: Vec<String> = index.suggest(&prefix).into_iter().map(|e| e.doc_id.clone()).collect();
        assert!(got.len() <= DEFAULT_SUGGESTIONS);
        assert!(!got.is_empty(), "prefix of a real question must match: {prefix:?}");
        assert_eq!(got, naive(&entries, &prefix), "prefix {prefix:?}");
    }
}

#[test]
fn p99_latency_on_ten_thousand_entries() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lookup = &common::bundle().lookup_qa;
    let items: Vec<(String, String)> = (0..10_000)
        .map(|i| {
            let base = &lookup[i % lookup.len()].question;
            (format!("e{i:05}"), format!("{base} variant {}", rng.random_range(0..1000)))
        })
        .collect();
    let index = PrefixIndex::build(items.clone()).unwrap();
    let mut samples = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let q = &items[rng.random_range(0..items.len())].1;
        let prefix = random_prefix(&mut rng, q);
        let start = Instant::now();
        let got = index.suggest(&prefix);
        samples.push(start.elapsed().as_secs_f64());
        assert!(got.len() <= 5);
    }
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p99 = samples[989];
    assert!(p99 < 1e-3, "p99 {p99}s");
}

proptest! {
    #[test]
    fn never_more_than_five(words in prop::collection::vec("[a-c]{1,3}( [a-c]{1,3}){0,2}", 1..60), typed in "[a-c ]{0,4}") {
        let items: Vec<(String, String)> = words.iter().enumerate().map(|(i, w)| (format!("{i:03}"), w.clone())).collect();
        let index = PrefixIndex::build(items.clone()).unwrap();
        let got: Vec<String> = index.suggest(&typed).into_iter().map(|e| e.doc_id.clone()).collect();
        prop_assert!(got.len() <= 5);
        prop_assert_eq!(got, naive(&items, &typed));
    }
}
