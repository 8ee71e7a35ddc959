//! Labeled documents with their base embeddings.
//!
//! Records are read from line-delimited JSON, one document per line:
//!
//! ```text
//! {"doc_id":"d1","author_id":"a","genre":"news","word_count":512,"embedding":[0.1,0.2]}
//! ```
//!
//! `text` is accepted and carried along but never interpreted.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Default training filter: documents must have strictly more words than this.
pub const DEFAULT_MIN_WORDS: u64 = 350;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub author_id: String,
    pub genre: String,
    pub word_count: u64,
    #[serde(rename = "embedding")]
    pub base_embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        author_id: impl Into<String>,
        genre: impl Into<String>,
        word_count: u64,
        base_embedding: Vec<f64>,
    ) -> Self {
        Self {
            doc_id: doc_id.into(),
            author_id: author_id.into(),
            genre: genre.into(),
            word_count,
            base_embedding,
            text: None,
        }
    }
}

/// An immutable, ordered collection of documents indexed by author.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    author_index: IndexMap<String, Vec<usize>>,
    doc_index: HashMap<String, usize>,
    dimension: Option<usize>,
}

impl Corpus {
    /// Build a corpus, validating dimensions and doc_id uniqueness. Errors
    /// carry 1-based positions as line numbers.
    pub fn from_documents(documents: Vec<Document>) -> Result<Self> {
        let mut corpus = Corpus::default();
        for (i, doc) in documents.into_iter().enumerate() {
            corpus.push(doc, i + 1)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, doc: Document, line: usize) -> Result<()> {
        let dim = doc.base_embedding.len();
        match self.dimension {
            None => self.dimension = Some(dim),
            Some(expected) if expected != dim => {
                return Err(Error::DimensionMismatchAtLine {
                    line,
                    expected,
                    found: dim,
                })
            }
            Some(_) => {}
        }
        if self.doc_index.contains_key(&doc.doc_id) {
            return Err(Error::DuplicateDocId {
                line,
                doc_id: doc.doc_id,
            });
        }
        let pos = self.documents.len();
        self.doc_index.insert(doc.doc_id.clone(), pos);
        self.author_index
            .entry(doc.author_id.clone())
            .or_default()
            .push(pos);
        self.documents.push(doc);
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_reader(BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::Io {
                path: path.to_owned(),
                source,
            },
            other => other,
        })
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut corpus = Corpus::default();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|source| Error::Io {
                path: Default::default(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document =
                serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                    line: line_no,
                    message: e.to_string(),
                })?;
            corpus.push(doc, line_no)?;
        }
        Ok(corpus)
    }

    pub fn write_to(&self, mut writer: impl Write) -> std::io::Result<()> {
        for doc in &self.documents {
            serde_json::to_writer(&mut writer, doc)?;
            writer.write_all(b"\n")?;
        }
        writer.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| Error::Io {
            path: path.to_owned(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        self.write_to(BufWriter::new(file)).map_err(io_err)
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Embedding dimension, unset for an empty corpus.
    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    /// Author id to document positions, in first-appearance order.
    pub fn author_index(&self) -> &IndexMap<String, Vec<usize>> {
        &self.author_index
    }

    pub fn num_authors(&self) -> usize {
        self.author_index.len()
    }

    pub fn authors(&self) -> impl Iterator<Item = &str> {
        self.author_index.keys().map(String::as_str)
    }

    pub fn author_documents(&self, author_id: &str) -> Vec<&Document> {
        self.author_index
            .get(author_id)
            .map(|positions| positions.iter().map(|&p| &self.documents[p]).collect())
            .unwrap_or_default()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.doc_index.get(doc_id).map(|&p| &self.documents[p])
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.doc_index.get(doc_id).copied()
    }

    /// Keep documents satisfying `keep`, preserving order and rebuilding the
    /// indexes. Authors left without documents disappear.
    pub fn retain(&self, mut keep: impl FnMut(&Document) -> bool) -> Corpus {
        let mut out = Corpus {
            dimension: self.dimension,
            ..Corpus::default()
        };
        for doc in self.documents.iter().filter(|d| keep(d)) {
            // dimensions and ids were validated on the way in
            let pos = out.documents.len();
            out.doc_index.insert(doc.doc_id.clone(), pos);
            out.author_index
                .entry(doc.author_id.clone())
                .or_default()
                .push(pos);
            out.documents.push(doc.clone());
        }
        out
    }

    /// Documents with strictly more than `min_words` words.
    pub fn filter_min_words(&self, min_words: u64) -> Corpus {
        self.retain(|d| d.word_count > min_words)
    }

    /// Partition authors into two disjoint corpora: `holdout` authors (chosen
    /// by a seeded shuffle) go to the second corpus.
    pub fn split_authors(&self, holdout: usize, seed: u64) -> (Corpus, Corpus) {
        let mut authors: Vec<&str> = self.authors().collect();
        authors.shuffle(&mut rng::rng_for(seed, "split-authors"));
        let held: std::collections::HashSet<&str> =
            authors.into_iter().take(holdout).collect();
        let rest = self.retain(|d| !held.contains(d.author_id.as_str()));
        let out = self.retain(|d| held.contains(d.author_id.as_str()));
        (rest, out)
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    Corpus::load(path)
}

pub fn filter_min_words(corpus: &Corpus, min_words: u64) -> Corpus {
    corpus.filter_min_words(min_words)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(id: &str, author: &str, words: u64, emb: Vec<f64>) -> Document {
        Document::new(id, author, "g", words, emb)
    }

    fn parse(s: &str) -> Result<Corpus> {
        Corpus::from_reader(s.as_bytes())
    }

    #[test]
    fn empty_input() {
        let c = parse("").unwrap();
        assert!(c.is_empty());
        assert_eq!(c.dimension(), None);
    }

    #[test]
    fn author_index_follows_file_order() {
        let src = r#"{"doc_id":"d1","author_id":"a","genre":"x","word_count":400,"embedding":[1,0]}
{"doc_id":"d2","author_id":"a","genre":"x","word_count":400,"embedding":[0,1]}
{"doc_id":"d3","author_id":"b","genre":"y","word_count":400,"embedding":[1,1],"text":"hi"}
"#;
        let c = parse(src).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.dimension(), Some(2));
        let idx: Vec<(&str, Vec<usize>)> = c
            .author_index()
            .iter()
            .map(|(k, v)| (k.as_str(), v.clone()))
            .collect();
        assert_eq!(idx, vec![("a", vec![0, 1]), ("b", vec![2])]);
        assert_eq!(c.get("d3").unwrap().text.as_deref(), Some("hi"));
    }

    #[test]
    fn dimension_mismatch_names_line() {
        let src = r#"{"doc_id":"d1","author_id":"a","genre":"x","word_count":1,"embedding":[1,0,0,0]}
{"doc_id":"d2","author_id":"a","genre":"x","word_count":1,"embedding":[1,0,0]}"#;
        match parse(src) {
            Err(Error::DimensionMismatchAtLine {
                line: 2,
                expected: 4,
                found: 3,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_duplicate_records() {
        let bad = "{\"doc_id\":\"d1\"}\n";
        assert!(matches!(
            parse(bad),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
        let neg = r#"{"doc_id":"d1","author_id":"a","genre":"x","word_count":-3,"embedding":[1]}"#;
        assert!(matches!(
            parse(neg),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
        let dup = r#"{"doc_id":"d1","author_id":"a","genre":"x","word_count":1,"embedding":[1]}

{"doc_id":"d1","author_id":"b","genre":"x","word_count":1,"embedding":[2]}"#;
        assert!(matches!(
            parse(dup),
            Err(Error::DuplicateDocId { line: 3, .. })
        ));
    }

    #[test]
    fn unreadable_file() {
        assert!(matches!(
            load_corpus("/nonexistent/corpus.jsonl"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn filter_boundary_is_strict() {
        let c = Corpus::from_documents(vec![
            doc("a1", "a", 350, vec![1.0]),
            doc("a2", "a", 351, vec![1.0]),
            doc("b1", "b", 340, vec![1.0]),
            doc("c1", "c", 1000, vec![1.0]),
        ])
        .unwrap();
        let f = filter_min_words(&c, DEFAULT_MIN_WORDS);
        let ids: Vec<&str> = f.documents().iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["a2", "c1"]);
        // b lost every document and is gone from the index
        assert_eq!(f.authors().collect::<Vec<_>>(), ["a", "c"]);
        assert_eq!(f.author_index()["a"], vec![0]);
        assert!(filter_min_words(&Corpus::default(), 350).is_empty());
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let docs = (0..20)
            .map(|i| doc(&format!("d{i}"), &format!("a{}", i / 2), 400, vec![1.0]))
            .collect();
        let c = Corpus::from_documents(docs).unwrap();
        let (rest, held) = c.split_authors(3, 7);
        assert_eq!(held.num_authors(), 3);
        assert_eq!(rest.num_authors(), 7);
        assert!(held.authors().all(|a| rest.author_documents(a).is_empty()));
        assert_eq!(c.split_authors(3, 7), (rest, held));
    }

    fn arb_corpus() -> impl Strategy<Value = Corpus> {
        (1usize..4).prop_flat_map(|dim| {
            prop::collection::vec(
                (
                    0u8..5,
                    0u64..800,
                    prop::collection::vec(-1e6f64..1e6, dim),
                    "[a-z]{1,6}",
                ),
                0..25,
            )
            .prop_map(|rows| {
                let docs = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (a, w, e, g))| {
                        Document::new(format!("doc-{i}"), format!("author-{a}"), g, w, e)
                    })
                    .collect();
                Corpus::from_documents(docs).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn write_then_load_is_identity(c in arb_corpus()) {
            let mut buf = Vec::new();
            c.write_to(&mut buf).unwrap();
            let back = Corpus::from_reader(buf.as_slice()).unwrap();
            prop_assert_eq!(back.documents(), c.documents());
        }

        #[test]
        fn filter_is_idempotent_and_leaves_no_empty_author(c in arb_corpus(), min in 0u64..800) {
            let once = c.filter_min_words(min);
            let twice = once.filter_min_words(min);
            prop_assert_eq!(&once, &twice);
            for positions in once.author_index().values() {
                prop_assert!(!positions.is_empty());
            }
            prop_assert!(once.documents().iter().all(|d| d.word_count > min));
        }
    }
}
