//! Hard-negative batch planning.
//!
//! Authors are grouped into "dandelion" clusters: k-means centroids over the
//! epoch's document vectors claim authors round-robin, one nearest unclaimed
//! document at a time, so each member contributes one document near the
//! centre while its partner document (chosen to be dissimilar) sits further
//! out. Clusters are then grouped into batches by running the same growth
//! procedure over the cluster centroids.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cosine, kmeans_with, topk_indices, VectorMatrix};
use crate::miner::TrainingPair;
use crate::rng;

pub const DEFAULT_BATCH_SIZE: usize = 74;
pub const DEFAULT_CLUSTERS_PER_BATCH: usize = 5;
pub const DEFAULT_NEIGHBOR_CAP: usize = 2024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchingMode {
    /// Dandelion clusters of similar documents.
    Hard,
    /// Seeded shuffle of authors.
    Random,
}

impl FromStr for BatchingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Self::Hard),
            "random" => Ok(Self::Random),
            other => Err(Error::InvalidConfig(format!("unknown batching mode {other:?}"))),
        }
    }
}

impl fmt::Display for BatchingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Hard => "hard",
            Self::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub batch_size: usize,
    pub clusters_per_batch: usize,
    pub neighbor_cap: usize,
    pub seed: u64,
    pub mode: BatchingMode,
    pub kmeans_max_iters: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            clusters_per_batch: DEFAULT_CLUSTERS_PER_BATCH,
            neighbor_cap: DEFAULT_NEIGHBOR_CAP,
            seed: 0,
            mode: BatchingMode::Hard,
            kmeans_max_iters: crate::geometry::DEFAULT_KMEANS_MAX_ITERS,
        }
    }
}

impl BatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters_per_batch == 0 || self.batch_size < self.clusters_per_batch {
            return Err(Error::InvalidConfig(format!(
                "need batch_size >= clusters_per_batch >= 1, got {} and {}",
                self.batch_size, self.clusters_per_batch
            )));
        }
        if self.neighbor_cap == 0 {
            return Err(Error::InvalidConfig("neighbor_cap must be >= 1".into()));
        }
        Ok(())
    }

    /// Maximum authors per cluster, chosen so that C clusters fill a batch.
    pub fn cluster_capacity(&self) -> usize {
        self.batch_size.div_ceil(self.clusters_per_batch)
    }
}

/// Which vectors a plan was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VectorSource {
    /// The untrained projection, used for the first epoch.
    UntrainedProjection,
    /// The model as it stood after the given epoch.
    ModelAfterEpoch(u32),
}

impl VectorSource {
    pub fn for_epoch(epoch: u32) -> Self {
        if epoch <= 1 {
            Self::UntrainedProjection
        } else {
            Self::ModelAfterEpoch(epoch - 1)
        }
    }
}

impl fmt::Display for VectorSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UntrainedProjection => f.write_str("untrained"),
            Self::ModelAfterEpoch(e) => write!(f, "epoch-{e}"),
        }
    }
}

impl FromStr for VectorSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "untrained" {
            return Ok(Self::UntrainedProjection);
        }
        s.strip_prefix("epoch-")
            .and_then(|e| e.parse().ok())
            .map(Self::ModelAfterEpoch)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown vector source {s:?}")))
    }
}

/// Document vectors for paired authors: rows `2i` and `2i + 1` belong to
/// author `i`.
#[derive(Debug, Clone)]
pub struct PairedVectors {
    matrix: VectorMatrix,
    authors: Vec<String>,
}

impl PairedVectors {
    pub fn new(pairs: &[TrainingPair], vectors: &VectorMatrix) -> Result<Self> {
        let lookup: HashMap<&str, usize> = vectors
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut rows = Vec::with_capacity(pairs.len() * 2);
        for pair in pairs {
            for id in pair.doc_ids() {
                let &i = lookup
                    .get(id)
                    .ok_or_else(|| Error::MissingVector(id.to_owned()))?;
                rows.push((id.to_owned(), vectors.row(i).to_vec()));
            }
        }
        let matrix = if rows.is_empty() {
            VectorMatrix::new(vectors.dim())
        } else {
            VectorMatrix::from_rows(rows)?
        };
        Ok(Self {
            matrix,
            authors: pairs.iter().map(|p| p.author_id.clone()).collect(),
        })
    }

    pub fn num_authors(&self) -> usize {
        self.authors.len()
    }

    pub fn matrix(&self) -> &VectorMatrix {
        &self.matrix
    }

    pub fn author_of_row(&self, row: usize) -> usize {
        row / 2
    }

    pub fn author_id(&self, author: usize) -> &str {
        &self.authors[author]
    }

    fn author_rows(author: usize) -> [usize; 2] {
        [2 * author, 2 * author + 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Centroid {
    pub vector: Vec<f64>,
    /// Author owning the document nearest to the centroid.
    pub anchor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub centroid: Vec<f64>,
    /// Author indices into the [`PairedVectors`], in claim order.
    pub members: Vec<usize>,
    /// Row of the document that brought each member in, parallel to `members`.
    pub center_rows: Vec<usize>,
    pub capacity: usize,
}

impl ClusterSpec {
    fn new(centroid: Vec<f64>, capacity: usize) -> Self {
        Self {
            centroid,
            members: Vec::new(),
            center_rows: Vec::new(),
            capacity,
        }
    }

    pub fn has_space(&self) -> bool {
        self.members.len() < self.capacity
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub authors: Vec<String>,
    /// Per author, the document placed near its cluster centre.
    pub center_docs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub epoch: u32,
    pub source: VectorSource,
    pub config_seed: u64,
    pub batch_size: usize,
    pub clusters_per_batch: usize,
    pub neighbor_cap: usize,
    pub mode: BatchingMode,
    pub batches: Vec<Batch>,
}

/// `(num_batches, num_centroids)` for `num_authors` authors.
pub fn plan_dimensions(num_authors: usize, config: &BatchConfig) -> (usize, usize) {
    let num_batches = num_authors.div_ceil(config.batch_size);
    (num_batches, num_batches * config.clusters_per_batch)
}

fn nearest_row(query: &[f64], matrix: &VectorMatrix) -> Result<usize> {
    Ok(topk_indices(query, matrix, 1)?[0].0)
}

/// K-means centroids over every paired document, each anchored to the author
/// of its nearest document, with shared anchors resolved.
pub fn seed_centroids(
    docs: &PairedVectors,
    num_centroids: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Vec<Centroid>> {
    if num_centroids > docs.num_authors() {
        return Err(Error::TooFewAuthors {
            authors: docs.num_authors(),
            centroids: num_centroids,
        });
    }
    let unit = docs.matrix().normalized()?;
    let km = kmeans_with(&unit, num_centroids, seed, max_iters)?;
    let centroids = km
        .centroids
        .into_par_iter()
        .map(|vector| {
            let row = nearest_row(&vector, docs.matrix())?;
            Ok(Centroid {
                anchor: docs.author_of_row(row),
                vector,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    dedupe_centroids(centroids, docs)
}

/// Give every centroid a distinct anchor author. A centroid whose anchor is
/// already taken by an earlier one moves onto the nearest document of an
/// author that no other centroid is anchored to.
pub fn dedupe_centroids(mut centroids: Vec<Centroid>, docs: &PairedVectors) -> Result<Vec<Centroid>> {
    for i in 0..centroids.len() {
        if !centroids[..i].iter().any(|c| c.anchor == centroids[i].anchor) {
            continue;
        }
        let taken: HashSet<usize> = centroids
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, c)| c.anchor)
            .collect();
        let ranked = topk_indices(&centroids[i].vector, docs.matrix(), docs.matrix().len())?;
        let row = ranked
            .into_iter()
            .map(|(r, _)| r)
            .find(|&r| !taken.contains(&docs.author_of_row(r)))
            .ok_or(Error::TooFewAuthors {
                authors: docs.num_authors(),
                centroids: centroids.len(),
            })?;
        centroids[i] = Centroid {
            vector: docs.matrix().row(row).to_vec(),
            anchor: docs.author_of_row(row),
        };
    }
    Ok(centroids)
}

/// Generic round-robin growth: `lists[c]` ranks candidate items for seed `c`;
/// `owner` maps a candidate to the unit being claimed. Returns the claims per
/// seed as `(unit, candidate)`.
fn round_robin(
    lists: &[Vec<usize>],
    owner: impl Fn(usize) -> usize,
    num_units: usize,
    capacity: usize,
) -> (Vec<Vec<(usize, usize)>>, Vec<bool>) {
    let mut claimed = vec![false; num_units];
    let mut claims: Vec<Vec<(usize, usize)>> = vec![Vec::new(); lists.len()];
    let mut cursor = vec![0usize; lists.len()];
    loop {
        let mut added = false;
        for (c, list) in lists.iter().enumerate() {
            if claims[c].len() >= capacity {
                continue;
            }
            while cursor[c] < list.len() && claimed[owner(list[cursor[c]])] {
                cursor[c] += 1;
            }
            let Some(&item) = list.get(cursor[c]) else {
                continue;
            };
            let unit = owner(item);
            claimed[unit] = true;
            claims[c].push((unit, item));
            cursor[c] += 1;
            added = true;
        }
        if !added {
            break;
        }
    }
    (claims, claimed)
}

/// Round-robin cluster growth from capped nearest-document lists. Returns the
/// clusters and the authors no centroid reached.
pub fn grow_clusters(
    centroids: &[Centroid],
    docs: &PairedVectors,
    config: &BatchConfig,
) -> Result<(Vec<ClusterSpec>, Vec<usize>)> {
    let capacity = config.cluster_capacity();
    let lists = centroids
        .par_iter()
        .map(|c| {
            Ok(topk_indices(&c.vector, docs.matrix(), config.neighbor_cap)?
                .into_iter()
                .map(|(r, _)| r)
                .collect())
        })
        .collect::<Result<Vec<Vec<usize>>>>()?;
    let (claims, claimed) = round_robin(&lists, |r| docs.author_of_row(r), docs.num_authors(), capacity);
    let clusters = centroids
        .iter()
        .zip(claims)
        .map(|(c, claims)| {
            let mut spec = ClusterSpec::new(c.vector.clone(), capacity);
            for (author, row) in claims {
                spec.members.push(author);
                spec.center_rows.push(row);
            }
            spec
        })
        .collect();
    let leftovers = (0..docs.num_authors()).filter(|&a| !claimed[a]).collect();
    Ok((clusters, leftovers))
}

/// Place each leftover author in the spare-capacity cluster whose centroid is
/// closest to either of the author's documents. When every cluster is full,
/// capacities are raised by one, cluster by cluster in round-robin order.
pub fn assign_leftovers(
    mut clusters: Vec<ClusterSpec>,
    leftovers: &[usize],
    docs: &PairedVectors,
) -> Result<Vec<ClusterSpec>> {
    if clusters.is_empty() {
        return Ok(clusters);
    }
    let mut relax = 0;
    for &author in leftovers {
        if !clusters.iter().any(ClusterSpec::has_space) {
            clusters[relax].capacity += 1;
            relax = (relax + 1) % clusters.len();
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for (c, cluster) in clusters.iter().enumerate() {
            if !cluster.has_space() {
                continue;
            }
            for row in PairedVectors::author_rows(author) {
                let sim = cosine(&cluster.centroid, docs.matrix().row(row))?;
                if best.is_none_or(|(_, _, s)| sim > s) {
                    best = Some((c, row, sim));
                }
            }
        }
        let (c, row, _) = best.expect("some cluster has space");
        clusters[c].members.push(author);
        clusters[c].center_rows.push(row);
    }
    Ok(clusters)
}

/// Group clusters into batches by growing `num_batches` super-centroids over
/// the cluster centroids (C clusters each), then shift authors between
/// neighbouring batches so every batch but the last holds exactly
/// `batch_size` authors.
pub fn group_into_batches(
    clusters: &[ClusterSpec],
    docs: &PairedVectors,
    config: &BatchConfig,
    seed: u64,
) -> Result<Vec<Batch>> {
    let total: usize = clusters.iter().map(|c| c.members.len()).sum();
    let (num_batches, _) = plan_dimensions(total, config);
    let groups: Vec<Vec<usize>> = if num_batches <= 1 || clusters.len() <= 1 {
        vec![(0..clusters.len()).collect()]
    } else {
        let centres = VectorMatrix::from_rows(
            clusters
                .iter()
                .enumerate()
                .map(|(i, c)| (format!("{i:08}"), c.centroid.clone())),
        )?
        .normalized()?;
        let k = num_batches.min(clusters.len());
        let km = kmeans_with(&centres, k, seed, config.kmeans_max_iters)?;
        let lists = km
            .centroids
            .par_iter()
            .map(|sc| {
                Ok(topk_indices(sc, &centres, centres.len())?
                    .into_iter()
                    .map(|(r, _)| r)
                    .collect())
            })
            .collect::<Result<Vec<Vec<usize>>>>()?;
        let (claims, claimed) = round_robin(&lists, |r| r, clusters.len(), config.clusters_per_batch);
        let mut groups: Vec<Vec<usize>> = claims
            .into_iter()
            .map(|g| g.into_iter().map(|(c, _)| c).collect())
            .collect();
        // Clusters no super-centroid reached join the nearest group with room.
        let mut caps = vec![config.clusters_per_batch; groups.len()];
        let mut relax = 0;
        for c in (0..clusters.len()).filter(|&c| !claimed[c]) {
            if groups.iter().zip(&caps).all(|(g, &cap)| g.len() >= cap) {
                caps[relax] += 1;
                relax = (relax + 1) % groups.len();
            }
            let mut best: Option<(usize, f64)> = None;
            for (g, sc) in km.centroids.iter().enumerate() {
                if groups[g].len() >= caps[g] {
                    continue;
                }
                let sim = cosine(sc, centres.row(c))?;
                if best.is_none_or(|(_, s)| sim > s) {
                    best = Some((g, sim));
                }
            }
            groups[best.expect("a group has room").0].push(c);
        }
        groups
    };

    let flat: Vec<(usize, usize)> = groups
        .iter()
        .flatten()
        .flat_map(|&c| clusters[c].members.iter().copied().zip(clusters[c].center_rows.iter().copied()))
        .collect();
    Ok(chunk_members(&flat, docs, config.batch_size))
}

fn chunk_members(flat: &[(usize, usize)], docs: &PairedVectors, batch_size: usize) -> Vec<Batch> {
    flat.chunks(batch_size)
        .map(|chunk| Batch {
            authors: chunk.iter().map(|&(a, _)| docs.author_id(a).to_owned()).collect(),
            center_docs: chunk.iter().map(|&(_, r)| docs.matrix().id(r).to_owned()).collect(),
        })
        .collect()
}

fn random_batches(docs: &PairedVectors, config: &BatchConfig, seed: u64) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..docs.num_authors()).collect();
    order.shuffle(&mut rng::rng_for(seed, "random-batches"));
    let flat: Vec<(usize, usize)> = order.into_iter().map(|a| (a, 2 * a)).collect();
    chunk_members(&flat, docs, config.batch_size)
}

/// Seed that drives clustering and grouping in `epoch`.
pub fn epoch_seed(config_seed: u64, epoch: u32) -> u64 {
    rng::derive_seed(config_seed, &format!("epoch-{epoch}"))
}

/// Full planning pipeline for one epoch over the given document vectors
/// (the previous epoch's model outputs, or the untrained model at epoch 1).
pub fn build_epoch_plan(
    pairs: &[TrainingPair],
    vectors_for_epoch: &VectorMatrix,
    config: &BatchConfig,
    epoch: u32,
) -> Result<BatchPlan> {
    config.validate()?;
    if epoch == 0 {
        return Err(Error::InvalidConfig("epochs are numbered from 1".into()));
    }
    let docs = PairedVectors::new(pairs, vectors_for_epoch)?;
    let seed = epoch_seed(config.seed, epoch);
    let batches = match config.mode {
        _ if docs.num_authors() == 0 => Vec::new(),
        BatchingMode::Random => random_batches(&docs, config, seed),
        BatchingMode::Hard => {
            let (_, wanted) = plan_dimensions(docs.num_authors(), config);
            let num_centroids = wanted.min(docs.num_authors());
            let centroids = seed_centroids(&docs, num_centroids, seed, config.kmeans_max_iters)?;
            let (clusters, leftovers) = grow_clusters(&centroids, &docs, config)?;
            let clusters = assign_leftovers(clusters, &leftovers, &docs)?;
            group_into_batches(&clusters, &docs, config, rng::derive_seed(seed, "group"))?
        }
    };
    Ok(BatchPlan {
        epoch,
        source: VectorSource::for_epoch(epoch),
        config_seed: config.seed,
        batch_size: config.batch_size,
        clusters_per_batch: config.clusters_per_batch,
        neighbor_cap: config.neighbor_cap,
        mode: config.mode,
        batches,
    })
}

impl BatchPlan {
    pub fn num_authors(&self) -> usize {
        self.batches.iter().map(|b| b.authors.len()).sum()
    }

    /// Header line followed by one line of space-separated author ids per
    /// batch.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "# epoch={} seed={} batch_size={} clusters_per_batch={} neighbor_cap={} mode={} source={}",
            self.epoch,
            self.config_seed,
            self.batch_size,
            self.clusters_per_batch,
            self.neighbor_cap,
            self.mode,
            self.source
        )?;
        for batch in &self.batches {
            writeln!(w, "{}", batch.authors.join(" "))?;
        }
        w.flush()
    }

    /// Parse the text form. Centre documents are not part of it and come back
    /// empty.
    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let bad = |line: usize, message: String| Error::MalformedRecord { line, message };
        let header = match lines.next() {
            Some((_, Ok(h))) => h,
            _ => return Err(bad(1, "missing header".into())),
        };
        let fields: HashMap<&str, &str> = header
            .strip_prefix('#')
            .ok_or_else(|| bad(1, "header must start with '#'".into()))?
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let get = |key: &str| {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| bad(1, format!("header lacks {key}")))
        };
        let num = |key: &str| -> Result<u64> {
            get(key)?
                .parse()
                .map_err(|_| bad(1, format!("{key} is not an integer")))
        };
        let mut plan = BatchPlan {
            epoch: num("epoch")? as u32,
            config_seed: num("seed")?,
            batch_size: num("batch_size")? as usize,
            clusters_per_batch: num("clusters_per_batch")? as usize,
            neighbor_cap: num("neighbor_cap")? as usize,
            mode: get("mode")?.parse()?,
            source: get("source")?.parse()?,
            batches: Vec::new(),
        };
        for (i, line) in lines {
            let line = line.map_err(|e| bad(i + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            plan.batches.push(Batch {
                authors: line.split_whitespace().map(str::to_owned).collect(),
                center_docs: Vec::new(),
            });
        }
        Ok(plan)
    }
}
