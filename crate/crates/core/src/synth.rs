//! Seeded synthetic news-like corpora with planted bias.
//!
//! Each topic gets three invented topic words and a query mentioning them.
//! Its five documents are, by decreasing overlap with the query:
//!
//! | id          | topic words         | loaded terms | gold label |
//! |-------------|---------------------|--------------|------------|
//! | `{t}-lead`  | all three, twice    | 3 (if planted) | 1 / 0    |
//! | `{t}-plain` | all three, once     | 0            | 0          |
//! | `{t}-slant` | two of them, once   | 3            | 1          |
//! | `{t}-brief` | one of them         | 0            | 0          |
//! | `{t}-misc`  | one of them         | 3 on odd topics | 1 / 0   |
//!
//! so with planting enabled for every topic the corpus is half biased, the
//! most relevant document is biased, and a confidently unbiased on-topic
//! document sits right behind it.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detector::LexiconDetector;
use crate::eval::QueryRecord;
use crate::index::CorpusRecord;
use crate::knowledge::NEUTRALITY_TERMS;
use crate::state::BiasLabel;
use crate::text;

const FILLER: &[&str] = &[
    "officials", "announced", "statement", "meeting", "residents", "agency", "committee", "review",
    "program", "local", "national", "regional", "data", "figures", "monday", "tuesday", "thursday",
    "morning", "evening", "spokesperson", "plans", "schedule", "budget", "funding", "estimate",
    "survey", "analysts", "department", "council", "district", "community", "project", "service",
    "update", "details", "process", "timeline", "proposal", "measures", "results", "period",
    "season", "quarter", "increase", "decrease", "shared", "noted", "confirmed", "described",
    "observed", "visitors", "workers", "students", "members", "network", "station", "center",
];

const SYLLABLES: &[&str] = &[
    "ba", "ke", "lo", "mi", "nu", "pa", "ra", "si", "to", "vu", "zo", "qe", "da", "fi", "go",
    "hu", "ja", "ly", "wo", "xe",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub topics: usize,
    /// Fraction of topics whose most relevant document carries loaded terms.
    pub planted_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            topics: 40,
            planted_fraction: 1.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub corpus: Vec<CorpusRecord>,
    pub queries: Vec<QueryRecord>,
}

fn invent_word(rng: &mut ChaCha8Rng, taken: &mut HashSet<String>, lexicon: &LexiconDetector) -> String {
    loop {
        let n = rng.random_range(3..=4);
        let word: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
        if !lexicon.contains(&word) && !text::is_stopword(&word) && taken.insert(word.clone()) {
            return word;
        }
    }
}

fn sentence(words: Vec<String>) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get(0..1) {
        s.replace_range(0..1, &first.to_uppercase());
    }
    s.push('.');
    s
}

pub fn generate(spec: &SyntheticSpec) -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lexicon = LexiconDetector::default();
    let mut loaded: Vec<&str> = lexicon.terms().collect();
    loaded.sort_unstable();
    let reserved: HashSet<String> = text::tokens(NEUTRALITY_TERMS).into_iter().chain(["latest".into()]).collect();
    let filler: Vec<&str> = FILLER.iter().copied().filter(|w| !reserved.contains(*w)).collect();
    let mut taken: HashSet<String> = FILLER.iter().map(|w| w.to_string()).chain(reserved).collect();

    let planted_topics = (spec.planted_fraction.clamp(0.0, 1.0) * spec.topics as f64).round() as usize;
    let mut corpus = Vec::with_capacity(spec.topics * 5);
    let mut queries = Vec::with_capacity(spec.topics);

    for t in 0..spec.topics {
        let topic: Vec<String> = (0..3).map(|_| invent_word(&mut rng, &mut taken, &lexicon)).collect();
        let pick = |n: usize, rng: &mut ChaCha8Rng| -> Vec<String> {
            (0..n).map(|_| filler.choose(rng).expect("non-empty").to_string()).collect()
        };
        let loaded_terms = |n: usize, rng: &mut ChaCha8Rng| -> Vec<String> {
            (0..n).map(|_| loaded.choose(rng).expect("non-empty").to_string()).collect()
        };

        let planted = t < planted_topics;
        let mut lead: Vec<String> = topic.iter().chain(topic.iter()).cloned().collect();
        if planted {
            lead.extend(loaded_terms(3, &mut rng));
        } else {
            lead.extend(pick(3, &mut rng));
        }
        lead.extend(pick(4, &mut rng));

        let mut plain = topic.clone();
        plain.extend(pick(8, &mut rng));

        let mut slant = topic[..2].to_vec();
        slant.extend(loaded_terms(3, &mut rng));
        slant.extend(pick(6, &mut rng));

        let mut brief = vec![topic[0].clone()];
        brief.extend(pick(6, &mut rng));

        let misc_biased = t % 2 == 1;
        let mut misc = vec![topic[2].clone()];
        if misc_biased {
            misc.extend(loaded_terms(3, &mut rng));
        }
        misc.extend(pick(7, &mut rng));

        let docs = [
            ("lead", lead, planted),
            ("plain", plain, false),
            ("slant", slant, true),
            ("brief", brief, false),
            ("misc", misc, misc_biased),
        ];
        for (suffix, mut words, biased) in docs {
            // keep topic words up front, shuffle the rest for variety
            let head = words.len().min(if suffix == "lead" { 6 } else { 1 });
            let tail = &mut words[head..];
            for i in (1..tail.len()).rev() {
                let j = rng.random_range(0..=i);
                tail.swap(i, j);
            }
            let label = if biased { BiasLabel::Biased } else { BiasLabel::Unbiased };
            corpus.push(CorpusRecord::new(format!("t{t:03}-{suffix}"), sentence(words), Some(label)));
        }
        queries.push(QueryRecord {
            id: format!("q{t:03}"),
            query: format!("what is the latest on {}", topic.join(" ")),
        });
    }
    SyntheticDataset { corpus, queries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::BiasDetector;

    #[test]
    fn default_corpus_is_half_biased() {
        let ds = generate(&SyntheticSpec::default());
        assert_eq!(ds.corpus.len(), 200);
        assert_eq!(ds.queries.len(), 40);
        let biased = ds.corpus.iter().filter(|r| r.label == Some(BiasLabel::Biased)).count();
        assert_eq!(biased, 100);
    }

    #[test]
    fn gold_labels_agree_with_lexicon_detector() {
        let det = LexiconDetector::default();
        for rec in generate(&SyntheticSpec { planted_fraction: 0.5, ..Default::default() }).corpus {
            let got = det.classify(&rec.text).unwrap();
            assert_eq!(Some(got.label), rec.label, "{}: {}", rec.id, rec.text);
            assert!(got.confidence >= 0.7, "{}", rec.id);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate(&SyntheticSpec::default());
        assert_eq!(a, generate(&SyntheticSpec::default()));
        assert_ne!(a, generate(&SyntheticSpec { seed: 8, ..Default::default() }));
    }
}
