//! Property tests for state transitions, retrieval, selection and the run loop.

use std::collections::HashSet;

use proptest::prelude::*;

use biasguard_core::detector::LexiconDetector;
use biasguard_core::{
    annotate, cosine, expand_query, select_few_shot, select_zero_shot, BiasAssessment, BiasDetector,
    BiasLabel, CorpusRecord, Document, EmbeddingProvider, Engine, Error, HashEmbedder, Index, Mode,
    PipelineState, RunSettings, SelectionOutcome, SelectionPolicy,
};

fn label(gamma: bool) -> BiasLabel {
    if gamma {
        BiasLabel::Biased
    } else {
        BiasLabel::Unbiased
    }
}

prop_compose! {
    fn candidate(i: usize)(gamma in any::<bool>(), beta in 0.5f64..=1.0, rho in -1.0f64..=1.0) -> Document {
        Document::new(format!("d{i:02}"), format!("text {i}"), rho)
            .with_bias(BiasAssessment::new(label(gamma), beta).unwrap())
    }
}

fn candidates() -> impl Strategy<Value = Vec<Document>> {
    (1usize..=8).prop_flat_map(|n| (0..n).map(candidate).collect::<Vec<_>>())
}

/// Reference argmax by relevance with ties to the smallest id.
fn oracle_best<'a>(docs: impl Iterator<Item = &'a Document>) -> Option<&'a Document> {
    let mut best: Option<&Document> = None;
    for d in docs {
        best = match best {
            Some(b) if b.relevance > d.relevance || (b.relevance == d.relevance && b.id < d.id) => Some(b),
            _ => Some(d),
        };
    }
    best
}

fn beta(d: &Document) -> f64 {
    d.bias_confidence().unwrap()
}

fn biased(d: &Document) -> bool {
    d.bias_label() == Some(BiasLabel::Biased)
}

fn oracle_zero_shot(docs: &[Document], beta_min: f64) -> Option<String> {
    oracle_best(docs.iter().filter(|d| !biased(d) && beta(d) >= beta_min)).map(|d| d.id.clone())
}

fn oracle_relaxed(docs: &[Document]) -> String {
    if let Some(d) = oracle_best(docs.iter().filter(|d| !biased(d))) {
        return d.id.clone();
    }
    let min_beta = docs.iter().map(beta).fold(f64::INFINITY, f64::min);
    oracle_best(docs.iter().filter(|d| beta(d) == min_beta)).unwrap().id.clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn zero_shot_matches_filter_then_argmax(docs in candidates(), beta_min in 0.5f64..=1.0) {
        let policy = SelectionPolicy { beta_min, ..Default::default() };
        let got = select_zero_shot(&docs, 0, 2, &policy).unwrap();
        match oracle_zero_shot(&docs, beta_min) {
            Some(id) => prop_assert_eq!(got.selected_id(), Some(id.as_str())),
            None => {
                let is_all_biased = matches!(
                    &got,
                    SelectionOutcome::Rejected { reason } if reason.to_string().starts_with("ALL_BIASED")
                );
                prop_assert!(is_all_biased, "{:?}", got);
            }
        }
    }

    #[test]
    fn final_attempt_never_rejects(docs in candidates(), max_retries in 1u32..5) {
        let policy = SelectionPolicy::default();
        let z = select_zero_shot(&docs, max_retries, max_retries, &policy).unwrap();
        let expected = oracle_relaxed(&docs);
        prop_assert_eq!(z.selected_id(), Some(expected.as_str()));
        let f = select_few_shot(&docs, max_retries, max_retries, &policy, None).unwrap();
        prop_assert!(f.selected_id().is_some());
    }

    #[test]
    fn zero_shot_is_invariant_to_relevance_scaling(docs in candidates(), c in 0.01f64..=1.0) {
        let policy = SelectionPolicy::default();
        let scaled: Vec<Document> = docs
            .iter()
            .map(|d| Document { relevance: d.relevance * c, ..d.clone() })
            .collect();
        // scaling can merge nearly equal relevances into ties; skip those
        let distinct: HashSet<u64> = scaled.iter().map(|d| d.relevance.to_bits()).collect();
        prop_assume!(distinct.len() == docs.len());
        for attempt in [0, 2] {
            prop_assert_eq!(
                select_zero_shot(&docs, attempt, 2, &policy).unwrap(),
                select_zero_shot(&scaled, attempt, 2, &policy).unwrap()
            );
        }
    }

    #[test]
    fn few_shot_agrees_with_zero_shot_on_confident_unbiased_sets(
        raw in prop::collection::vec((0.7f64..=1.0, 0.0f64..=1.0), 1..8),
        lambda in 0.0f64..3.0,
    ) {
        let docs: Vec<Document> = raw
            .iter()
            .enumerate()
            .map(|(i, &(b, rho))| {
                Document::new(format!("d{i}"), "x", rho)
                    .with_bias(BiasAssessment::new(BiasLabel::Unbiased, b).unwrap())
            })
            .collect();
        let policy = SelectionPolicy { lambda_penalty: lambda, ..Default::default() };
        prop_assert_eq!(
            select_few_shot(&docs, 0, 2, &policy, None).unwrap(),
            select_zero_shot(&docs, 0, 2, &policy).unwrap()
        );
    }

    #[test]
    fn state_transitions_respect_retry_budget(
        max_retries in 1u32..6,
        ops in prop::collection::vec(any::<bool>(), 0..12),
    ) {
        let docs = vec![Document::new("a", "alpha", 0.5), Document::new("b", "beta", 0.4)];
        let mut state = PipelineState::new("q", max_retries).unwrap();
        for reject in ops {
            state = state.with_candidates(docs.clone()).unwrap();
            if reject {
                match state.clone().record_rejection("ALL_BIASED: x") {
                    Ok(next) => {
                        prop_assert!(next.rejection_reason().is_some());
                        prop_assert!(next.candidates().is_empty());
                        state = next;
                    }
                    Err(e) => {
                        prop_assert_eq!(e, Error::RetriesExhausted { max_retries });
                        prop_assert_eq!(state.retry_count(), max_retries);
                    }
                }
            } else {
                state = state.record_selection("b").unwrap();
                prop_assert!(state.rejection_reason().is_none());
                prop_assert_eq!(state.selected().map(|d| d.id.as_str()), Some("b"));
            }
            prop_assert!(state.retry_count() <= state.max_retries());
            prop_assert_eq!(state.is_final_attempt(), state.retry_count() == max_retries);
        }
    }

    #[test]
    fn expansion_never_returns_the_query(
        query in "[a-z0-9\"' ]{1,40}",
        kind in prop::sample::select(vec!["ALL_BIASED", "LOW_RELEVANCE", "EMPTY_RETRIEVAL", "OTHER"]),
    ) {
        prop_assume!(!query.trim().is_empty());
        let out = expand_query(&query, &format!("{kind}: detail"), None);
        prop_assert_ne!(&out, &query);
        prop_assert!(!out.trim().is_empty());
    }

    #[test]
    fn lexicon_confidence_is_bounded(words in prop::collection::vec("[a-z]{1,8}|rigged|vile|propaganda", 1..40)) {
        let a = LexiconDetector::default().classify(&words.join(" ")).unwrap();
        prop_assert!((0.5..=0.99).contains(&a.confidence), "{}", a.confidence);
    }
}

fn word_corpus() -> impl Strategy<Value = Vec<String>> {
    let vocab = prop::sample::select(vec![
        "council", "budget", "vote", "river", "bridge", "harbor", "ferry", "school", "rigged", "outrageous",
        "vile", "monday", "report", "funding", "storm", "corrupt",
    ]);
    prop::collection::vec(prop::collection::vec(vocab, 2..10).prop_map(|w| w.join(" ")), 1..50)
}

fn build_index(texts: &[String]) -> Index {
    let records: Vec<CorpusRecord> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| CorpusRecord::new(format!("doc{i:03}"), t.clone(), None))
        .collect();
    Index::ingest(&records, &HashEmbedder::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn top_k_matches_brute_force(texts in word_corpus(), query in "[a-z ]{3,30}", k in 1usize..10) {
        let index = build_index(&texts);
        let e = HashEmbedder::default();
        let q = e.embed(&query).unwrap();
        let got = index.top_k(&q, k).unwrap();

        let mut all: Vec<(f64, String)> = index
            .entries()
            .iter()
            .map(|en| (cosine(&q, &en.embedding).unwrap(), en.id.clone()))
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        all.truncate(k);
        prop_assert_eq!(got.len(), all.len());
        for (d, (rho, id)) in got.iter().zip(&all) {
            prop_assert_eq!(&d.id, id);
            prop_assert!((d.relevance - rho).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&d.relevance));
        }
        // a smaller k is a prefix of a larger one
        let longer = index.top_k(&q, k + 3).unwrap();
        prop_assert_eq!(&longer[..got.len()], &got[..]);
    }

    #[test]
    fn annotate_is_idempotent(texts in word_corpus(), query in "[a-z ]{3,30}") {
        prop_assume!(!query.trim().is_empty());
        let index = build_index(&texts);
        let q = HashEmbedder::default().embed(&query).unwrap();
        let det = LexiconDetector::default();
        let state = PipelineState::new(&query, 2)
            .unwrap()
            .with_candidates(index.top_k(&q, 5).unwrap())
            .unwrap();
        let once = annotate(&det, state, Mode::ZeroShot).unwrap();
        let twice = annotate(&det, once.clone(), Mode::ZeroShot).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.candidates().iter().all(Document::annotated));
    }

    #[test]
    fn runs_are_deterministic_and_well_formed(
        texts in word_corpus(),
        query in "[a-z ]{3,30}",
        k in 1usize..7,
        max_retries in 1u32..4,
        mode in prop::sample::select(vec![Mode::NoSourceSelection, Mode::ZeroShot, Mode::FewShot]),
    ) {
        prop_assume!(!query.trim().is_empty());
        let engine = Engine::new(
            build_index(&texts),
            Box::new(HashEmbedder::default()),
            Box::new(LexiconDetector::default()),
            None,
            RunSettings { k, max_retries, ..Default::default() },
        )
        .unwrap();
        let a = engine.run(&query, mode).unwrap();
        let b = engine.run(&query, mode).unwrap();
        prop_assert_eq!(a.without_timing(), b.without_timing());

        let names: Vec<&str> = a.trace.iter().map(|e| e.step.name()).collect();
        prop_assert_eq!(names.first().copied(), Some("QueryReceived"));
        prop_assert_eq!(names.last().copied(), Some("AnswerProduced"));
        prop_assert!(a.retries_used <= max_retries);
        prop_assert!(a.count("SelectionAttempt") as u32 <= max_retries + 1);
        prop_assert_eq!(a.count("Rejected") as u32, a.retries_used);
        prop_assert_eq!(a.count("QueryExpanded") as u32, a.retries_used);
        if mode == Mode::NoSourceSelection {
            for step in ["SelectionAttempt", "Rejected", "QueryExpanded", "Selected"] {
                prop_assert_eq!(a.count(step), 0);
            }
        } else {
            prop_assert_eq!(a.count("Selected"), 1);
        }
        prop_assert_eq!(&a.answer.source_id, &a.selected.id);
        let times: Vec<f64> = a.trace.iter().map(|e| e.elapsed_secs).collect();
        prop_assert!(times.windows(2).all(|w| w[0] <= w[1]));
    }
}
