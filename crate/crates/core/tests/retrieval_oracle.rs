mod common;

use std::time::Instant;

use healthchat_core::embedding::{EmbeddingProvider, HashedTrigramProvider};
use healthchat_core::retrieval::{DocIndex, Document, RetrievalError};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scores every document and sorts by score desc, id asc.
fn brute_force(query: &[f64], docs: &[(String, Vec<f64>)], k: usize) -> Vec<(String, f64)> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let qn = norm(query);
    let mut all: Vec<(String, f64)> = docs
        .iter()
        .map(|(id, v)| {
            let dot: f64 = query.iter().zip(v).map(|(a, b)| a * b).sum();
            (id.clone(), dot / (qn * norm(v)))
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[test]
fn top_k_matches_brute_force_on_fixture_sample() {
    let provider = HashedTrigramProvider::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut pool = common::all_qa();
    pool.shuffle(&mut rng);
    let docs: Vec<Document> = pool[..200].iter().map(Document::from_qa).collect();
    let queries: Vec<String> = (0..50)
        .map(|i| {
            if i % 2 == 0 {
                pool[rng.random_range(0..pool.len())].question.clone()
            } else {
                let a = &pool[rng.random_range(0..pool.len())].question;
                let b = &pool[rng.random_range(0..pool.len())].answer;
                format!("{} {}", &a[..a.len() / 2], &b[b.len() / 2..])
            }
        })
        .collect();

    let start = Instant::now();
    let index = DocIndex::build(docs.clone(), &provider).unwrap();
    let vectors: Vec<(String, Vec<f64>)> = docs
        .iter()
        .map(|d| (d.id.clone(), provider.embed_text(&d.text).unwrap().values().to_vec()))
        .collect();
    for q in &queries {
        let got = index.top_k(q, 10, &provider).unwrap();
        let want = brute_force(provider.embed_text(q).unwrap().values(), &vectors, 10);
        let got_ids: Vec<&str> = got.iter().map(|s| s.doc_id.as_str()).collect();
        let want_ids: Vec<&str> = want.iter().map(|w| w.0.as_str()).collect();
        assert_eq!(got_ids, want_ids, "query {q:?}");
        for (g, w) in got.iter().zip(&want) {
            assert!((g.score - w.1).abs() < 1e-12);
        }
        assert!(got.iter().enumerate().all(|(i, s)| s.rank == i + 1));
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn duplicate_texts_tie_break_by_id() {
    let provider = HashedTrigramProvider::default();
    let docs = vec![
        Document::new("z", "blood in stool"),
        Document::new("a", "blood in stool"),
        Document::new("m", "blood in stool"),
    ];
    let index = DocIndex::build(docs, &provider).unwrap();
    let got: Vec<String> = index.top_k("blood", 3, &provider).unwrap().into_iter().map(|s| s.doc_id).collect();
    assert_eq!(got, ["a", "m", "z"]);
}

#[test]
fn small_corpus_returns_everything() {
    let provider = HashedTrigramProvider::default();
    let index = DocIndex::build(vec![Document::new("a", "polyp"), Document::new("b", "stoma care")], &provider).unwrap();
    assert_eq!(index.top_k("polyp removal", 10, &provider).unwrap().len(), 2);
    assert!(matches!(index.top_k("polyp", 0, &provider), Err(RetrievalError::InvalidK)));
}

#[test]
fn snapshot_round_trip_preserves_results() {
    let provider = HashedTrigramProvider::default();
    let docs: Vec<Document> = common::bundle().base_qa.iter().map(Document::from_qa).collect();
    let index = DocIndex::build(docs, &provider).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("idx.json");
    index.save(&path).unwrap();
    let back = DocIndex::load(&path).unwrap();
    for q in ["colonoscopy prep", "stoma", "what is CEA"] {
        assert_eq!(index.top_k(q, 5, &provider).unwrap(), back.top_k(q, 5, &provider).unwrap());
    }
    let first = std::fs::read(&path).unwrap();
    back.save(&path).unwrap();
    assert_eq!(first, std::fs::read(&path).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn top_k_is_a_prefix_of_top_n(texts in prop::collection::vec("[a-z ]{3,24}", 2..40), query in "[a-z ]{3,24}", k in 1usize..12) {
        let provider = HashedTrigramProvider::default();
        let docs: Vec<Document> = texts
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.trim().is_empty())
            .map(|(i, t)| Document::new(format!("d{i:02}"), t.clone()))
            .collect();
        prop_assume!(!docs.is_empty() && !query.trim().is_empty());
        let index = match DocIndex::build(docs, &provider) {
            Ok(i) => i,
            Err(_) => return Ok(()),
        };
        let all = match index.top_k(&query, index.len(), &provider) {
            Ok(r) => r,
            Err(_) => return Ok(()),
        };
        let some = index.top_k(&query, k, &provider).unwrap();
        prop_assert_eq!(some.len(), k.min(index.len()));
        prop_assert_eq!(&all[..some.len()], &some[..]);
        prop_assert!(some.windows(2).all(|w| w[0].score >= w[1].score));
    }
}
