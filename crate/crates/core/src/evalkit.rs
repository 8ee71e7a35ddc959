//! Ranked-retrieval evaluation.
//!
//! A task holds one query per eligible author: a set of that author's
//! documents searched against a shared haystack. Targets are the author's
//! other documents, restricted to the query genre (`per_genre`) or to every
//! other genre (`cross_genre`).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::geometry::{cosine, l2_normalize};
use crate::rng;
use crate::trainer::Encoder;

pub const DEFAULT_K: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    PerGenre,
    CrossGenre,
}

impl TaskMode {
    pub const ALL: [TaskMode; 2] = [TaskMode::PerGenre, TaskMode::CrossGenre];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::PerGenre => "per_genre",
            Self::CrossGenre => "cross_genre",
        }
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_genre" | "per" => Ok(Self::PerGenre),
            "cross_genre" | "cross" => Ok(Self::CrossGenre),
            other => Err(Error::InvalidConfig(format!("unknown task mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub author_id: String,
    /// Genre of the query documents.
    pub genre: String,
    pub doc_ids: Vec<String>,
    pub targets: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalTask {
    pub mode: TaskMode,
    pub queries: Vec<Query>,
    pub haystack: Vec<String>,
}

fn by_genre<'a>(docs: &[&'a Document]) -> BTreeMap<&'a str, Vec<&'a str>> {
    let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for d in docs {
        out.entry(d.genre.as_str()).or_default().push(d.doc_id.as_str());
    }
    for ids in out.values_mut() {
        ids.sort_unstable();
    }
    out
}

/// One query per eligible author, split with a per-author seeded draw.
///
/// `per_genre` picks a genre with at least `min_query_docs + 1` documents,
/// uses `min_query_docs` of them as the query and the rest of that genre as
/// targets. `cross_genre` picks a genre with at least `min_query_docs`
/// documents as the query and every document of the author's other genres as
/// targets. The haystack is every document not used in a query.
pub fn build_task(corpus: &Corpus, mode: TaskMode, seed: u64, min_query_docs: usize) -> Result<RetrievalTask> {
    let q = min_query_docs.max(1);
    let mut authors: Vec<&str> = corpus.authors().collect();
    authors.sort_unstable();
    let mut queries = Vec::new();
    for author in authors {
        let docs = corpus.author_documents(author);
        let genres = by_genre(&docs);
        let mut rng = rng::rng_for(seed, &format!("task/{mode}/{author}"));
        let query = match mode {
            TaskMode::PerGenre => {
                let eligible: Vec<&str> = genres
                    .iter()
                    .filter(|(_, ids)| ids.len() > q)
                    .map(|(&g, _)| g)
                    .collect();
                let Some(&genre) = eligible.choose(&mut rng) else {
                    continue;
                };
                let mut ids = genres[genre].clone();
                ids.shuffle(&mut rng);
                let (query_ids, target_ids) = ids.split_at(q);
                let mut doc_ids: Vec<String> = query_ids.iter().map(|s| s.to_string()).collect();
                doc_ids.sort();
                Query {
                    query_id: author.to_owned(),
                    author_id: author.to_owned(),
                    genre: genre.to_owned(),
                    doc_ids,
                    targets: target_ids.iter().map(|s| s.to_string()).collect(),
                }
            }
            TaskMode::CrossGenre => {
                if genres.len() < 2 {
                    continue;
                }
                let eligible: Vec<&str> = genres
                    .iter()
                    .filter(|(_, ids)| ids.len() >= q)
                    .map(|(&g, _)| g)
                    .collect();
                let Some(&genre) = eligible.choose(&mut rng) else {
                    continue;
                };
                Query {
                    query_id: author.to_owned(),
                    author_id: author.to_owned(),
                    genre: genre.to_owned(),
                    doc_ids: genres[genre].iter().map(|s| s.to_string()).collect(),
                    targets: genres
                        .iter()
                        .filter(|(&g, _)| g != genre)
                        .flat_map(|(_, ids)| ids.iter().map(|s| s.to_string()))
                        .collect(),
                }
            }
        };
        queries.push(query);
    }
    if queries.is_empty() {
        return Err(Error::NoEligibleAuthors(mode.as_str()));
    }
    let used: HashSet<&str> = queries.iter().flat_map(|q| q.doc_ids.iter().map(String::as_str)).collect();
    let haystack = corpus
        .documents()
        .iter()
        .map(|d| d.doc_id.as_str())
        .filter(|id| !used.contains(id))
        .map(str::to_owned)
        .collect();
    Ok(RetrievalTask {
        mode,
        queries,
        haystack,
    })
}

impl RetrievalTask {
    /// Check the task's structural invariants against `corpus`.
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidConfig(m));
        let haystack: HashSet<&str> = self.haystack.iter().map(String::as_str).collect();
        for id in &self.haystack {
            corpus.get(id).ok_or_else(|| Error::UnknownDocument(id.clone()))?;
        }
        for q in &self.queries {
            if q.doc_ids.is_empty() || q.targets.is_empty() {
                return invalid(format!("query {} has no query documents or no targets", q.query_id));
            }
            let mut query_genres = HashSet::new();
            for id in &q.doc_ids {
                let d = corpus.get(id).ok_or_else(|| Error::UnknownDocument(id.clone()))?;
                if haystack.contains(id.as_str()) {
                    return invalid(format!("query document {id} is in the haystack"));
                }
                query_genres.insert(d.genre.as_str());
            }
            for id in &q.targets {
                let d = corpus.get(id).ok_or_else(|| Error::UnknownDocument(id.clone()))?;
                if !haystack.contains(id.as_str()) {
                    return invalid(format!("target {id} is not in the haystack"));
                }
                if d.author_id != q.author_id {
                    return invalid(format!("target {id} is not by {}", q.author_id));
                }
                let shares = query_genres.contains(d.genre.as_str());
                let ok = match self.mode {
                    TaskMode::PerGenre => shares && query_genres.len() == 1,
                    TaskMode::CrossGenre => !shares,
                };
                if !ok {
                    return invalid(format!("target {id} violates the {} genre rule", self.mode));
                }
            }
        }
        Ok(())
    }

    /// Stable digest of the queries, targets and haystack.
    pub fn fingerprint(&self) -> u64 {
        let mut s = String::from(self.mode.as_str());
        for q in &self.queries {
            s.push('|');
            s.push_str(&q.query_id);
            for id in q.doc_ids.iter().chain(&q.targets) {
                s.push(',');
                s.push_str(id);
            }
        }
        s.push('#');
        s.push_str(&self.haystack.len().to_string());
        for id in &self.haystack {
            s.push(',');
            s.push_str(id);
        }
        rng::derive_seed(0, &s)
    }
}

fn encode_unit(encoder: &dyn Encoder, corpus: &Corpus, id: &str) -> Result<Vec<f64>> {
    let doc = corpus.get(id).ok_or_else(|| Error::MissingVector(id.to_owned()))?;
    l2_normalize(&encoder.encode(&doc.base_embedding)?)
}

/// Mean of the normalized query vectors, normalized again.
pub fn query_vector(encoder: &dyn Encoder, corpus: &Corpus, query_docs: &[String]) -> Result<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    for id in query_docs {
        let v = encode_unit(encoder, corpus, id)?;
        match acc.as_mut() {
            None => acc = Some(v),
            Some(a) => a.iter_mut().zip(&v).for_each(|(x, y)| *x += y),
        }
    }
    let acc = acc.ok_or(Error::EmptyInput)?;
    let n = query_docs.len() as f64;
    l2_normalize(&acc.into_iter().map(|x| x / n).collect::<Vec<_>>())
}

struct EncodedHaystack<'a> {
    ids: &'a [String],
    vectors: Vec<Vec<f64>>,
}

impl<'a> EncodedHaystack<'a> {
    fn new(encoder: &dyn Encoder, corpus: &Corpus, ids: &'a [String]) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyHaystack);
        }
        let vectors = ids
            .par_iter()
            .map(|id| encode_unit(encoder, corpus, id))
            .collect::<Result<_>>()?;
        Ok(Self { ids, vectors })
    }

    fn rank(&self, query: &[f64]) -> Result<Vec<&'a str>> {
        let mut scored = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| cosine(query, v).map(|s| (i, s)))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then_with(|| self.ids[a.0].cmp(&self.ids[b.0])));
        Ok(scored.into_iter().map(|(i, _)| self.ids[i].as_str()).collect())
    }
}

/// Haystack ids by descending cosine to the query, ties by ascending id.
pub fn rank_haystack(
    encoder: &dyn Encoder,
    corpus: &Corpus,
    query_docs: &[String],
    haystack: &[String],
) -> Result<Vec<String>> {
    let encoded = EncodedHaystack::new(encoder, corpus, haystack)?;
    let q = query_vector(encoder, corpus, query_docs)?;
    Ok(encoded.rank(&q)?.into_iter().map(str::to_owned).collect())
}

/// 1 when a target appears among the first `k` ranks.
pub fn success_at_k<S: AsRef<str>>(ranking: &[S], targets: &BTreeSet<String>, k: usize) -> f64 {
    let hit = ranking.iter().take(k).any(|id| targets.contains(id.as_ref()));
    if hit {
        1.0
    } else {
        0.0
    }
}

fn first_target_rank<S: AsRef<str>>(ranking: &[S], targets: &BTreeSet<String>) -> Option<usize> {
    ranking.iter().position(|id| targets.contains(id.as_ref())).map(|p| p + 1)
}

/// Reciprocal rank of the best-ranked target, 0 when none is ranked.
pub fn mrr<S: AsRef<str>>(ranking: &[S], targets: &BTreeSet<String>) -> f64 {
    first_target_rank(ranking, targets).map_or(0.0, |r| 1.0 / r as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub author_id: String,
    pub genre: String,
    /// 1-based; absent in averaged reports.
    pub first_target_rank: Option<usize>,
    pub success_at_8: f64,
    pub reciprocal_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: TaskMode,
    pub success_at_8: f64,
    pub mrr: f64,
    pub num_queries: usize,
    pub task_fingerprint: u64,
    pub per_query: Vec<QueryOutcome>,
}

/// Success@8 and MRR grouped by query genre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenreRow {
    pub genre: String,
    pub success_at_8: f64,
    pub mrr: f64,
    pub num_queries: usize,
}

impl MetricsReport {
    pub fn by_genre(&self) -> Vec<GenreRow> {
        let mut groups: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
        for q in &self.per_query {
            let e = groups.entry(q.genre.as_str()).or_default();
            e.0 += q.success_at_8;
            e.1 += q.reciprocal_rank;
            e.2 += 1;
        }
        groups
            .into_iter()
            .map(|(g, (s, r, n))| GenreRow {
                genre: g.to_owned(),
                success_at_8: s / n as f64,
                mrr: r / n as f64,
                num_queries: n,
            })
            .collect()
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Score every query of `task` and average over queries.
pub fn evaluate(encoder: &dyn Encoder, corpus: &Corpus, task: &RetrievalTask) -> Result<MetricsReport> {
    task.validate(corpus)?;
    let haystack = EncodedHaystack::new(encoder, corpus, &task.haystack)?;
    let per_query = task
        .queries
        .par_iter()
        .map(|q| {
            let ranking = haystack.rank(&query_vector(encoder, corpus, &q.doc_ids)?)?;
            Ok(QueryOutcome {
                query_id: q.query_id.clone(),
                author_id: q.author_id.clone(),
                genre: q.genre.clone(),
                first_target_rank: first_target_rank(&ranking, &q.targets),
                success_at_8: success_at_k(&ranking, &q.targets, DEFAULT_K),
                reciprocal_rank: mrr(&ranking, &q.targets),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        mode: task.mode,
        success_at_8: mean(per_query.iter().map(|q| q.success_at_8)),
        mrr: mean(per_query.iter().map(|q| q.reciprocal_rank)),
        num_queries: per_query.len(),
        task_fingerprint: task.fingerprint(),
        per_query,
    })
}

/// Field-wise mean of reports over the same task. Per-query entries hold the
/// mean outcome across runs.
pub fn average_runs(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports.first().ok_or(Error::EmptyInput)?;
    if reports.iter().any(|r| {
        r.task_fingerprint != first.task_fingerprint
            || r.mode != first.mode
            || r.per_query.len() != first.per_query.len()
    }) {
        return Err(Error::MismatchedTasks);
    }
    let n = reports.len() as f64;
    let per_query = (0..first.per_query.len())
        .map(|i| QueryOutcome {
            first_target_rank: if reports.len() == 1 { first.per_query[i].first_target_rank } else { None },
            success_at_8: reports.iter().map(|r| r.per_query[i].success_at_8).sum::<f64>() / n,
            reciprocal_rank: reports.iter().map(|r| r.per_query[i].reciprocal_rank).sum::<f64>() / n,
            ..first.per_query[i].clone()
        })
        .collect();
    Ok(MetricsReport {
        mode: first.mode,
        success_at_8: reports.iter().map(|r| r.success_at_8).sum::<f64>() / n,
        mrr: reports.iter().map(|r| r.mrr).sum::<f64>() / n,
        num_queries: first.num_queries,
        task_fingerprint: first.task_fingerprint,
        per_query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Identity;

    fn ids(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn success_examples() {
        let ranking: Vec<String> = (1..=60).map(|i| format!("d{i}")).collect();
        assert_eq!(success_at_k(&ranking, &set(&["d1"]), 8), 1.0);
        assert_eq!(success_at_k(&ranking, &set(&["d9"]), 8), 0.0);
        assert_eq!(success_at_k(&ranking, &set(&["d2", "d50", "d51"]), 8), 1.0);
        assert_eq!(success_at_k(&ranking[..3], &set(&["d2"]), 8), 1.0);
    }

    #[test]
    fn mrr_examples() {
        let ranking = ids(&["a", "b", "c", "d", "e"]);
        assert_eq!(mrr(&ranking, &set(&["c"])), 1.0 / 3.0);
        assert_eq!(mrr(&ranking, &set(&["z"])), 0.0);
        assert_eq!(mrr(&ranking, &set(&["d", "b"])), 0.5);
    }

    fn doc(id: &str, author: &str, genre: &str, emb: &[f64]) -> Document {
        Document::new(id, author, genre, 400, emb.to_vec())
    }

    #[test]
    fn cross_genre_needs_two_genres() {
        let c = Corpus::from_documents(vec![
            doc("a1", "a", "g1", &[1.0, 0.0]),
            doc("a2", "a", "g1", &[0.0, 1.0]),
        ])
        .unwrap();
        assert!(matches!(
            build_task(&c, TaskMode::CrossGenre, 1, 1),
            Err(Error::NoEligibleAuthors("cross_genre"))
        ));
        let t = build_task(&c, TaskMode::PerGenre, 1, 1).unwrap();
        assert_eq!(t.queries.len(), 1);
        assert_eq!(t.queries[0].doc_ids.len(), 1);
        assert_eq!(t.queries[0].targets.len(), 1);
        assert_eq!(t.haystack.len(), 1);
        t.validate(&c).unwrap();
    }

    #[test]
    fn cross_genre_split_enumeration() {
        let c = Corpus::from_documents(vec![
            doc("a", "x", "g1", &[1.0, 0.0]),
            doc("b", "x", "g1", &[0.0, 1.0]),
            doc("c", "x", "g2", &[1.0, 1.0]),
        ])
        .unwrap();
        let mut seen = BTreeSet::new();
        for seed in 0..32 {
            let t = build_task(&c, TaskMode::CrossGenre, seed, 1).unwrap();
            t.validate(&c).unwrap();
            let q = &t.queries[0];
            seen.insert((q.doc_ids.clone(), q.targets.iter().cloned().collect::<Vec<_>>()));
        }
        let expected: BTreeSet<_> = [
            (ids(&["c"]), ids(&["a", "b"])),
            (ids(&["a", "b"]), ids(&["c"])),
        ]
        .into_iter()
        .collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn duplicate_of_query_ranks_first() {
        let c = Corpus::from_documents(vec![
            doc("q", "x", "g", &[0.3, 0.7]),
            doc("dup", "x", "g", &[0.6, 1.4]),
            doc("o1", "y", "g", &[1.0, 0.0]),
            doc("o2", "y", "g", &[0.5, 0.6]),
        ])
        .unwrap();
        let r = rank_haystack(&Identity(2), &c, &ids(&["q"]), &ids(&["o1", "o2", "dup"])).unwrap();
        assert_eq!(r[0], "dup");
        assert!(matches!(
            rank_haystack(&Identity(2), &c, &ids(&["q"]), &[]),
            Err(Error::EmptyHaystack)
        ));
        assert!(matches!(
            rank_haystack(&Identity(2), &c, &ids(&["nope"]), &ids(&["o1"])),
            Err(Error::MissingVector(_))
        ));
    }

    #[test]
    fn multi_doc_query_is_mean_direction() {
        let c = Corpus::from_documents(vec![
            doc("q1", "x", "g", &[1.0, 0.0]),
            doc("q2", "x", "g", &[0.0, 5.0]),
        ])
        .unwrap();
        let v = query_vector(&Identity(2), &c, &ids(&["q1", "q2"])).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v[0] - h).abs() < 1e-12 && (v[1] - h).abs() < 1e-12);
    }

    #[test]
    fn averaging() {
        let base = MetricsReport {
            mode: TaskMode::PerGenre,
            success_at_8: 0.6,
            mrr: 0.2,
            num_queries: 0,
            task_fingerprint: 7,
            per_query: vec![],
        };
        let other = MetricsReport { success_at_8: 0.4, mrr: 0.4, ..base.clone() };
        let avg = average_runs(&[base.clone(), other]).unwrap();
        assert!((avg.success_at_8 - 0.5).abs() < 1e-15);
        assert!((avg.mrr - 0.3).abs() < 1e-15);
        assert_eq!(average_runs(std::slice::from_ref(&base)).unwrap(), base);
        let three: Vec<MetricsReport> = [0.3, 0.3, 0.9]
            .iter()
            .map(|&s| MetricsReport { success_at_8: s, ..base.clone() })
            .collect();
        assert!((average_runs(&three).unwrap().success_at_8 - 0.5).abs() < 1e-12);
        let stranger = MetricsReport { task_fingerprint: 8, ..base.clone() };
        assert!(matches!(average_runs(&[base, stranger]), Err(Error::MismatchedTasks)));
        assert!(matches!(average_runs(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn evaluate_two_queries() {
        // x's query sits next to its target; y's query points at x's docs
        let c = Corpus::from_documents(vec![
            doc("x1", "x", "g", &[1.0, 0.0]),
            doc("x2", "x", "g", &[0.99, 0.1]),
            doc("y1", "y", "g", &[0.98, 0.05]),
            doc("y2", "y", "g", &[-1.0, 0.0]),
        ])
        .unwrap();
        let task = RetrievalTask {
            mode: TaskMode::PerGenre,
            queries: vec![
                Query {
                    query_id: "qx".into(),
                    author_id: "x".into(),
                    genre: "g".into(),
                    doc_ids: ids(&["x1"]),
                    targets: set(&["x2"]),
                },
                Query {
                    query_id: "qy".into(),
                    author_id: "y".into(),
                    genre: "g".into(),
                    doc_ids: ids(&["y1"]),
                    targets: set(&["y2"]),
                },
            ],
            haystack: ids(&["x2", "y2"]),
        };
        // with k = 8 both succeed; the rank detail tells them apart
        let r = evaluate(&Identity(2), &c, &task).unwrap();
        assert_eq!(r.success_at_8, 1.0);
        assert_eq!(r.per_query[1].first_target_rank, Some(2));
        assert!((r.mrr - 0.75).abs() < 1e-15);
        assert_eq!(r, evaluate(&Identity(2), &c, &task).unwrap());

        let mut broken = task.clone();
        broken.queries[0].targets.clear();
        assert!(evaluate(&Identity(2), &c, &broken).is_err());
    }
}
