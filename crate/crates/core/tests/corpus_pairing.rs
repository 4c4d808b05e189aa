mod common;

use healthchat_core::corpus::{self, Conversation, CorpusError, Source, Speaker, Turn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Walks the turns once, tracking whether a patient run is open and
/// emitting a pair each time a doctor run closes it.
fn oracle(turns: &[Turn]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut patient: Vec<&str> = Vec::new();
    let mut doctor: Vec<&str> = Vec::new();
    for t in turns {
        match t.speaker {
            Speaker::Patient => {
                if !doctor.is_empty() {
                    if !patient.is_empty() {
                        out.push((patient.join(" "), doctor.join(" ")));
                    }
                    patient.clear();
                    doctor.clear();
                }
                patient.push(&t.text);
            }
            Speaker::Doctor => doctor.push(&t.text),
        }
    }
    if !patient.is_empty() && !doctor.is_empty() {
        out.push((patient.join(" "), doctor.join(" ")));
    }
    out
}

#[test]
fn pairing_matches_oracle_on_random_conversations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for c in 0..500 {
        let n = rng.random_range(0..12);
        let turns: Vec<Turn> = (0..n)
            .map(|i| Turn {
                speaker: if rng.random_bool(0.5) { Speaker::Patient } else { Speaker::Doctor },
                text: format!("t{i}"),
            })
            .collect();
        let conv = Conversation {
            id: format!("c{c}"),
            turns: turns.clone(),
        };
        let got = corpus::pair_conversation(&conv);
        let want = oracle(&turns);
        assert_eq!(got.len(), want.len(), "conversation {c}");
        for (i, (qa, (q, a))) in got.iter().zip(&want).enumerate() {
            assert_eq!(&qa.question, q);
            assert_eq!(&qa.answer, a);
            assert_eq!(qa.id, format!("c{c}#{i}"));
            assert_eq!(qa.source, Source::Conversation);
        }
    }
}

#[test]
fn spec_shaped_example() {
    let t = |s: Speaker, x: &str| Turn {
        speaker: s,
        text: x.into(),
    };
    let conv = Conversation {
        id: "c".into(),
        turns: vec![
            t(Speaker::Patient, "p1"),
            t(Speaker::Patient, "p2"),
            t(Speaker::Doctor, "d1"),
            t(Speaker::Doctor, "d2"),
            t(Speaker::Patient, "p3"),
        ],
    };
    let pairs = corpus::pair_conversation(&conv);
    assert_eq!(pairs.len(), 1);
    assert_eq!(pairs[0].question, "p1 p2");
    assert_eq!(pairs[0].answer, "d1 d2");
}

#[test]
fn shipped_fixture_cardinalities() {
    let b = common::bundle();
    assert_eq!(b.base_qa.len(), 24);
    assert_eq!(b.lookup_qa.len(), 2048);
    assert_eq!(b.conversation_qa.len(), 893);
    assert_eq!(b.posts.len(), 60);
    assert!(b.base_qa.iter().all(|q| q.source == Source::Base));
    assert!(b.lookup_qa.iter().all(|q| q.source == Source::DiseaseLookup && !q.disease_tags.is_empty()));
}

#[test]
fn malformed_inputs_are_rejected_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("qa.jsonl");
    let good = r#"{"id":"a","question":"q","answer":"x","source":"base"}"#;

    std::fs::write(&path, format!("{good}\n{{not json\n")).unwrap();
    assert!(matches!(
        corpus::load_qa_corpus(&path, Source::Base),
        Err(CorpusError::Malformed { line: 2, .. })
    ));

    std::fs::write(&path, format!("{good}\n{good}\n")).unwrap();
    assert!(matches!(corpus::load_qa_corpus(&path, Source::Base), Err(CorpusError::DuplicateId { .. })));

    std::fs::write(&path, r#"{"id":"a","question":"  ","answer":"x","source":"base"}"#).unwrap();
    assert!(matches!(corpus::load_qa_corpus(&path, Source::Base), Err(CorpusError::EmptyField { .. })));

    std::fs::write(&path, good).unwrap();
    assert!(matches!(
        corpus::load_qa_corpus(&path, Source::DiseaseLookup),
        Err(CorpusError::SourceMismatch { .. })
    ));

    std::fs::write(&path, "\n\n").unwrap();
    assert!(matches!(corpus::load_qa_corpus(&path, Source::Base), Err(CorpusError::Empty { .. })));

    let posts = dir.path().join("posts.jsonl");
    std::fs::write(
        &posts,
        r#"{"id":"p","title":"t","body":"b","likes":-1,"comments":0,"shares":0,"collections":0,"created_at":0}"#,
    )
    .unwrap();
    assert!(matches!(corpus::load_posts(&posts), Err(CorpusError::NegativeCounter { .. })));

    assert!(corpus::load_posts(&dir.path().join("missing.jsonl")).unwrap_err().is_io());
}
