//! Demo-retrieval baseline: Okapi BM25 over a labeled training corpus, plus
//! the abstract embedding-retriever contract (no bundled embedding model).

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Demo, DemoKind};
use crate::toolcall;

/// Conventional defaults; the retrieval baseline description does not fix
/// hyperparameters.
pub const BM25_K1: f64 = 1.5;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("corpus io at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus line {line}: {detail}")]
    BadEntry { line: usize, detail: String },
    #[error("snapshot index inconsistent with entries: {0}")]
    InconsistentSnapshot(String),
    #[error("embedding failure: {0}")]
    Embedding(String),
}

/// One labeled training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: u64,
    pub question: String,
    pub answer: String,
}

impl CorpusEntry {
    /// Renders the entry as a few-shot demo of the given kind.
    pub fn to_demo(&self, kind: DemoKind) -> Demo {
        let parsed_calls = match kind {
            DemoKind::Tool => {
                let outcome = toolcall::parse_call_list(&self.answer);
                (!outcome.calls.is_empty()).then_some(outcome.calls)
            }
            DemoKind::Math => None,
        };
        Demo {
            kind,
            query: self.question.clone(),
            answer_text: self.answer.clone(),
            parsed_calls,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub entry: usize,
    pub term_freq: u32,
}

/// Lowercases and splits on non-alphanumeric runs. No stemming, no stop
/// words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// An indexed corpus. Questions only are indexed; retrieval keys on the
/// query. Immutable after build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
    index: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
}

/// Top-k retrieval result; `short` flags a corpus smaller than k.
#[derive(Debug, Clone)]
pub struct Retrieved<'a> {
    pub hits: Vec<(&'a CorpusEntry, f64)>,
    pub short: bool,
}

impl Corpus {
    pub fn build(entries: Vec<CorpusEntry>) -> Self {
        let mut index: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(entries.len());
        for (entry_idx, entry) in entries.iter().enumerate() {
            let tokens = tokenize(&entry.question);
            doc_lengths.push(tokens.len() as u32);
            let mut freqs: BTreeMap<&str, u32> = BTreeMap::new();
            for token in &tokens {
                *freqs.entry(token).or_insert(0) += 1;
            }
            for (token, term_freq) in freqs {
                index
                    .entry(token.to_string())
                    .or_default()
                    .push(Posting { entry: entry_idx, term_freq });
            }
        }
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64
        };
        Corpus { entries, index, doc_lengths, avg_doc_length }
    }

    /// JSON-Lines `{id, question, answer}` corpus file.
    pub fn load_jsonl(path: &Path) -> Result<Self, RetrievalError> {
        let file = std::fs::File::open(path).map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| RetrievalError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CorpusEntry = serde_json::from_str(&line)
                .map_err(|e| RetrievalError::BadEntry { line: i + 1, detail: e.to_string() })?;
            entries.push(entry);
        }
        Ok(Corpus::build(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    /// Okapi BM25 score of one document against the query tokens. Repeated
    /// query terms contribute once per occurrence.
    pub fn bm25_score(&self, query_tokens: &[String], entry: usize) -> f64 {
        let n = self.entries.len() as f64;
        let dl = self.doc_lengths[entry] as f64;
        let mut score = 0.0;
        for token in query_tokens {
            let Some(postings) = self.index.get(token) else { continue };
            let df = postings.len() as f64;
            let Some(posting) = postings.iter().find(|p| p.entry == entry) else { continue };
            let tf = posting.term_freq as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            let norm = tf * (BM25_K1 + 1.0)
                / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / self.avg_doc_length));
            score += idf * norm;
        }
        score
    }

    /// All entries ranked by (score descending, id ascending), truncated to
    /// k. Deterministic; a corpus smaller than k returns everything, flagged.
    pub fn retrieve_top_k(&self, query: &str, k: usize) -> Retrieved<'_> {
        let query_tokens = tokenize(query);
        let mut scored: Vec<(usize, f64)> = (0..self.entries.len())
            .map(|i| (i, self.bm25_score(&query_tokens, i)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| self.entries[a.0].id.cmp(&self.entries[b.0].id))
        });
        let short = self.entries.len() < k;
        scored.truncate(k);
        Retrieved {
            hits: scored
                .into_iter()
                .map(|(i, score)| (&self.entries[i], score))
                .collect(),
            short,
        }
    }

    /// Serializes the whole index as a JSON snapshot for reload.
    pub fn to_snapshot_json(&self) -> String {
        serde_json::to_string(self).expect("corpus serializes")
    }

    /// Loads a snapshot and checks the index against a rebuild from the
    /// entries.
    pub fn from_snapshot_json(json: &str) -> Result<Self, RetrievalError> {
        let corpus: Corpus = serde_json::from_str(json)
            .map_err(|e| RetrievalError::InconsistentSnapshot(e.to_string()))?;
        let rebuilt = Corpus::build(corpus.entries.clone());
        if rebuilt.index != corpus.index || rebuilt.doc_lengths != corpus.doc_lengths {
            return Err(RetrievalError::InconsistentSnapshot(
                "index does not match a rebuild from the entries".into(),
            ));
        }
        if (rebuilt.avg_doc_length - corpus.avg_doc_length).abs() > 1e-9 {
            return Err(RetrievalError::InconsistentSnapshot(
                "avg_doc_length does not match the document lengths".into(),
            ));
        }
        Ok(corpus)
    }
}

// ---------------------------------------------------------------------------
// dense retrieval contract (interface only; embedding comes from outside)

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError>;
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Cosine ranking over pre-embedded questions.
pub struct DenseRetriever<E> {
    entries: Vec<CorpusEntry>,
    vectors: Vec<Vec<f64>>,
    embedder: E,
}

impl<E: Embedder> DenseRetriever<E> {
    pub fn build(entries: Vec<CorpusEntry>, embedder: E) -> Result<Self, RetrievalError> {
        let vectors = entries
            .iter()
            .map(|e| embedder.embed(&e.question))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DenseRetriever { entries, vectors, embedder })
    }

    pub fn retrieve_top_k(&self, query: &str, k: usize) -> Result<Retrieved<'_>, RetrievalError> {
        let query_vec = self.embedder.embed(query)?;
        let mut scored: Vec<(usize, f64)> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (i, cosine_similarity(&query_vec, v)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| self.entries[a.0].id.cmp(&self.entries[b.0].id))
        });
        let short = self.entries.len() < k;
        scored.truncate(k);
        Ok(Retrieved {
            hits: scored
                .into_iter()
                .map(|(i, score)| (&self.entries[i], score))
                .collect(),
            short,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: u64, question: &str) -> CorpusEntry {
        CorpusEntry { id, question: question.into(), answer: format!("answer {id}") }
    }

    fn toy_corpus() -> Corpus {
        Corpus::build(vec![
            entry(0, "How far is Beijing from Shanghai?"),
            entry(1, "Plan a route from Big Ben to Tower Bridge"),
            entry(2, "How many shops are near Times Square?"),
        ])
    }

    #[test]
    fn tokenize_splits_on_non_alphanumerics() {
        assert_eq!(tokenize("How far is Beijing?"), vec!["how", "far", "is", "beijing"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("3km"), vec!["3km"]);
    }

    #[test]
    fn absent_term_contributes_zero() {
        let corpus = toy_corpus();
        assert_eq!(corpus.bm25_score(&tokenize("zeppelin"), 0), 0.0);
    }

    #[test]
    fn single_term_score_matches_hand_computation() {
        let corpus = toy_corpus();
        // "beijing": df=1, tf=1 in doc 0; dl=6, avgdl=(6+8+8)/3
        let n = 3.0;
        let df = 1.0;
        let dl = 6.0;
        let avgdl = (6.0 + 8.0 + 8.0) / 3.0;
        let idf = ((n - df + 0.5) / (df + 0.5) + 1.0_f64).ln();
        let tf_part = (BM25_K1 + 1.0) / (1.0 + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl));
        let want = idf * tf_part;
        let got = corpus.bm25_score(&tokenize("Beijing"), 0);
        assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
    }

    #[test]
    fn repeated_query_terms_count_per_occurrence() {
        let corpus = toy_corpus();
        let once = corpus.bm25_score(&tokenize("beijing"), 0);
        let twice = corpus.bm25_score(&tokenize("beijing beijing"), 0);
        assert!((twice - 2.0 * once).abs() < 1e-12);
    }

    #[test]
    fn exact_document_query_ranks_that_document_first() {
        let corpus = toy_corpus();
        let got = corpus.retrieve_top_k("Plan a route from Big Ben to Tower Bridge", 3);
        assert_eq!(got.hits[0].0.id, 1);
        assert!(!got.short);
    }

    #[test]
    fn small_corpus_returns_all_with_flag() {
        let corpus = toy_corpus();
        let got = corpus.retrieve_top_k("route", 5);
        assert_eq!(got.hits.len(), 3);
        assert!(got.short);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let corpus = Corpus::build(vec![
            entry(7, "same words here"),
            entry(3, "same words here"),
        ]);
        let got = corpus.retrieve_top_k("same words", 2);
        assert_eq!(got.hits[0].0.id, 3);
        assert_eq!(got.hits[1].0.id, 7);
    }

    #[test]
    fn snapshot_round_trips_and_rejects_tampering() {
        let corpus = toy_corpus();
        let json = corpus.to_snapshot_json();
        let back = Corpus::from_snapshot_json(&json).unwrap();
        assert_eq!(corpus, back);

        let mut raw: serde_json::Value = serde_json::from_str(&json).unwrap();
        raw["entries"][0]["question"] = serde_json::Value::String("tampered".into());
        let err = Corpus::from_snapshot_json(&raw.to_string()).unwrap_err();
        assert!(matches!(err, RetrievalError::InconsistentSnapshot(_)));
    }

    #[test]
    fn dense_contract_ranks_by_cosine() {
        struct LetterEmbedder;
        impl Embedder for LetterEmbedder {
            fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
                let mut v = vec![0.0; 26];
                for c in text.to_lowercase().chars() {
                    if c.is_ascii_lowercase() {
                        v[(c as u8 - b'a') as usize] += 1.0;
                    }
                }
                Ok(v)
            }
        }
        let retriever = DenseRetriever::build(
            vec![entry(0, "aaa bbb"), entry(1, "zzz yyy")],
            LetterEmbedder,
        )
        .unwrap();
        let got = retriever.retrieve_top_k("aaa", 1).unwrap();
        assert_eq!(got.hits[0].0.id, 0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        /// Index-free reference: recomputes tf and df by scanning documents.
        pub(crate) fn naive_bm25(entries: &[CorpusEntry], query_tokens: &[String], doc: usize) -> f64 {
            let docs: Vec<Vec<String>> =
                entries.iter().map(|e| tokenize(&e.question)).collect();
            let n = docs.len() as f64;
            let avgdl = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n.max(1.0);
            let dl = docs[doc].len() as f64;
            let mut score = 0.0;
            for token in query_tokens {
                let tf = docs[doc].iter().filter(|t| *t == token).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = docs
                    .iter()
                    .filter(|d| d.iter().any(|t| t == token))
                    .count() as f64;
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                score += idf * tf * (BM25_K1 + 1.0)
                    / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl));
            }
            score
        }

        fn arb_doc() -> impl Strategy<Value = String> {
            proptest::collection::vec("[a-e]{1,3}", 1..8).prop_map(|words| words.join(" "))
        }

        proptest! {
            #[test]
            fn indexed_scores_match_the_naive_reference(
                docs in proptest::collection::vec(arb_doc(), 1..20),
                query in arb_doc(),
            ) {
                let entries: Vec<CorpusEntry> = docs
                    .iter()
                    .enumerate()
                    .map(|(i, q)| CorpusEntry {
                        id: i as u64,
                        question: q.clone(),
                        answer: String::new(),
                    })
                    .collect();
                let corpus = Corpus::build(entries.clone());
                let query_tokens = tokenize(&query);
                for i in 0..entries.len() {
                    let indexed = corpus.bm25_score(&query_tokens, i);
                    let naive = naive_bm25(&entries, &query_tokens, i);
                    prop_assert!((indexed - naive).abs() < 1e-9);
                }

                let ranked = corpus.retrieve_top_k(&query, 5);
                let mut reference: Vec<(usize, f64)> = (0..entries.len())
                    .map(|i| (i, naive_bm25(&entries, &query_tokens, i)))
                    .collect();
                reference.sort_by(|a, b| {
                    b.1.partial_cmp(&a.1)
                        .unwrap()
                        .then_with(|| entries[a.0].id.cmp(&entries[b.0].id))
                });
                for (hit, (ref_idx, _)) in ranked.hits.iter().zip(&reference) {
                    prop_assert_eq!(hit.0.id, entries[*ref_idx].id);
                }
            }
        }
    }
}
