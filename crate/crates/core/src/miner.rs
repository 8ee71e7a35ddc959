//! Training pair selection: one same-author pair per author.
//!
//! Hard mode picks each author's least similar pair by base-embedding cosine
//! and drops the author when even that pair is above the similarity ceiling.
//! Random mode picks a seeded uniform pair and never drops anyone.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::geometry::cosine;
use crate::rng;

pub const DEFAULT_CEILING: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinerMode {
    Hard,
    Random,
}

impl std::str::FromStr for MinerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Self::Hard),
            "random" => Ok(Self::Random),
            other => Err(Error::InvalidConfig(format!("unknown miner mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for MinerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Hard => "hard",
            Self::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinerConfig {
    pub mode: MinerMode,
    pub ceiling: f64,
    pub seed: u64,
}

impl Default for MinerConfig {
    fn default() -> Self {
        Self {
            mode: MinerMode::Hard,
            ceiling: DEFAULT_CEILING,
            seed: 0,
        }
    }
}

impl MinerConfig {
    pub fn hard(ceiling: f64) -> Self {
        Self {
            mode: MinerMode::Hard,
            ceiling,
            seed: 0,
        }
    }

    pub fn random(seed: u64) -> Self {
        Self {
            mode: MinerMode::Random,
            ceiling: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == MinerMode::Hard && !(self.ceiling > 0.0 && self.ceiling <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "ceiling must lie in (0, 1], got {}",
                self.ceiling
            )));
        }
        Ok(())
    }
}

/// One author's selected pair, `doc_a < doc_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub author_id: String,
    pub doc_a: String,
    pub doc_b: String,
    pub base_similarity: f64,
}

impl TrainingPair {
    pub fn doc_ids(&self) -> [&str; 2] {
        [&self.doc_a, &self.doc_b]
    }
}

fn canonical<'a>(x: &'a Document, y: &'a Document) -> (&'a str, &'a str) {
    if x.doc_id <= y.doc_id {
        (&x.doc_id, &y.doc_id)
    } else {
        (&y.doc_id, &x.doc_id)
    }
}

/// The least similar unordered pair; ties go to the lexicographically
/// smallest `(doc_a, doc_b)`.
pub fn min_similarity_pair(docs: &[&Document]) -> Result<(String, String, f64)> {
    if docs.len() < 2 {
        return Err(Error::TooFewDocuments(docs.len()));
    }
    let mut best: Option<(&str, &str, f64)> = None;
    for i in 0..docs.len() {
        for j in i + 1..docs.len() {
            let sim = cosine(&docs[i].base_embedding, &docs[j].base_embedding)?;
            let (a, b) = canonical(docs[i], docs[j]);
            let better = match best {
                None => true,
                Some((ba, bb, bs)) => sim < bs || (sim == bs && (a, b) < (ba, bb)),
            };
            if better {
                best = Some((a, b, sim));
            }
        }
    }
    let (a, b, s) = best.expect("at least one pair");
    Ok((a.to_owned(), b.to_owned(), s))
}

fn random_pair(author_id: &str, docs: &[&Document], seed: u64) -> Result<(String, String, f64)> {
    let mut rng = rng::rng_for(seed, author_id);
    let i = rng.random_range(0..docs.len());
    let mut j = rng.random_range(0..docs.len() - 1);
    if j >= i {
        j += 1;
    }
    let sim = cosine(&docs[i].base_embedding, &docs[j].base_embedding)?;
    let (a, b) = canonical(docs[i], docs[j]);
    Ok((a.to_owned(), b.to_owned(), sim))
}

/// One pair per author with at least two documents, sorted by author id.
pub fn select_training_pairs(corpus: &Corpus, config: &MinerConfig) -> Result<Vec<TrainingPair>> {
    config.validate()?;
    let mut authors: Vec<&str> = corpus.authors().collect();
    authors.sort_unstable();
    let mut pairs = Vec::new();
    for author in authors {
        let docs = corpus.author_documents(author);
        if docs.len() < 2 {
            continue;
        }
        let (doc_a, doc_b, base_similarity) = match config.mode {
            MinerMode::Hard => {
                let picked = min_similarity_pair(&docs)?;
                if picked.2 > config.ceiling {
                    continue;
                }
                picked
            }
            MinerMode::Random => random_pair(author, &docs, config.seed)?,
        };
        pairs.push(TrainingPair {
            author_id: author.to_owned(),
            doc_a,
            doc_b,
            base_similarity,
        });
    }
    Ok(pairs)
}

/// Each author's minimum pair similarity, sorted by author id. Used to place
/// the ceiling at a chosen quantile.
pub fn min_pair_similarities(corpus: &Corpus) -> Result<Vec<(String, f64)>> {
    let mut authors: Vec<&str> = corpus.authors().collect();
    authors.sort_unstable();
    authors
        .into_iter()
        .filter_map(|a| {
            let docs = corpus.author_documents(a);
            (docs.len() >= 2).then(|| min_similarity_pair(&docs).map(|p| (a.to_owned(), p.2)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, author: &str, emb: &[f64]) -> Document {
        Document::new(id, author, "g", 400, emb.to_vec())
    }

    /// Unit vectors at the given angles (radians) give cosines cos(Δθ).
    fn angled(author: &str, ids_angles: &[(&str, f64)]) -> Vec<Document> {
        ids_angles
            .iter()
            .map(|(id, t)| doc(id, author, &[t.cos(), t.sin()]))
            .collect()
    }

    #[test]
    fn two_docs_is_the_only_candidate() {
        let docs = angled("x", &[("b", 0.0), ("a", 0.1)]);
        let refs: Vec<&Document> = docs.iter().collect();
        let (a, b, s) = min_similarity_pair(&refs).unwrap();
        assert_eq!((a.as_str(), b.as_str()), ("a", "b"));
        assert!((s - 0.1f64.cos()).abs() < 1e-12);
        assert!(matches!(min_similarity_pair(&refs[..1]), Err(Error::TooFewDocuments(1))));
    }

    #[test]
    fn three_docs_picks_lowest_pair() {
        // 3-d embeddings with exact pairwise sims ab=0.9, ac=0.1, bc=0.5
        // a = e1, b = (0.9, sqrt(1-0.81), 0), c = (0.1, y, z)
        let by = (1.0f64 - 0.81).sqrt();
        let cy = (0.5 - 0.09) / by;
        let cz = (1.0 - 0.01 - cy * cy).sqrt();
        let docs = vec![
            doc("a", "x", &[1.0, 0.0, 0.0]),
            doc("b", "x", &[0.9, by, 0.0]),
            doc("c", "x", &[0.1, cy, cz]),
        ];
        let refs: Vec<&Document> = docs.iter().collect();
        let (a, b, s) = min_similarity_pair(&refs).unwrap();
        assert_eq!((a.as_str(), b.as_str()), ("a", "c"));
        assert!((s - 0.1).abs() < 1e-12);
    }

    #[test]
    fn equal_sims_take_first_pair() {
        let docs = vec![
            doc("d", "x", &[1.0, 0.0]),
            doc("c", "x", &[1.0, 0.0]),
            doc("b", "x", &[1.0, 0.0]),
            doc("a", "x", &[1.0, 0.0]),
        ];
        let refs: Vec<&Document> = docs.iter().collect();
        let (a, b, _) = min_similarity_pair(&refs).unwrap();
        assert_eq!((a.as_str(), b.as_str()), ("a", "b"));
    }

    fn fixture() -> Corpus {
        let mut docs = angled("far", &[("f1", 0.0), ("f2", 1.5), ("f3", 0.5)]);
        // min pair cos(1.2) ~ 0.362
        docs.extend(angled("mid", &[("m1", 0.0), ("m2", 1.2)]));
        docs.extend(angled("solo", &[("s1", 0.0)]));
        Corpus::from_documents(docs).unwrap()
    }

    #[test]
    fn ceiling_excludes_similar_authors() {
        let c = fixture();
        let pairs = select_training_pairs(&c, &MinerConfig::hard(0.2)).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].author_id, "far");
        assert_eq!((pairs[0].doc_a.as_str(), pairs[0].doc_b.as_str()), ("f1", "f2"));

        let all = select_training_pairs(&c, &MinerConfig::hard(1.0)).unwrap();
        let authors: Vec<&str> = all.iter().map(|p| p.author_id.as_str()).collect();
        assert_eq!(authors, ["far", "mid"]);
    }

    #[test]
    fn ceiling_is_inclusive() {
        let c = fixture();
        let mid = min_similarity_pair(&c.author_documents("mid")).unwrap().2;
        let pairs = select_training_pairs(&c, &MinerConfig::hard(mid)).unwrap();
        assert!(pairs.iter().any(|p| p.author_id == "mid"));
    }

    #[test]
    fn random_mode_is_seeded_and_keeps_everyone() {
        let c = fixture();
        let cfg = MinerConfig::random(42);
        let first = select_training_pairs(&c, &cfg).unwrap();
        assert_eq!(first.len(), 2);
        assert_eq!(first, select_training_pairs(&c, &cfg).unwrap());
        let far = &first[0];
        assert!(far.doc_a < far.doc_b);
        let valid = [("f1", "f2"), ("f1", "f3"), ("f2", "f3")];
        assert!(valid.contains(&(far.doc_a.as_str(), far.doc_b.as_str())));

        // over many seeds every pair shows up
        let mut seen = std::collections::HashSet::new();
        for seed in 0..64 {
            let p = &select_training_pairs(&c, &MinerConfig::random(seed)).unwrap()[0];
            seen.insert((p.doc_a.clone(), p.doc_b.clone()));
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn rejects_bad_ceiling() {
        assert!(select_training_pairs(&fixture(), &MinerConfig::hard(0.0)).is_err());
        assert!(select_training_pairs(&fixture(), &MinerConfig::hard(1.5)).is_err());
    }
}
