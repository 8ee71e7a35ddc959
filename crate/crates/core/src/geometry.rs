//! Vector math shared by every stage: cosine similarity, normalization,
//! seeded Lloyd's k-means and exact top-k cosine search.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_KMEANS_MAX_ITERS: usize = 100;

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

fn squared_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn check_dims(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    Ok(())
}

/// Cosine similarity clamped to [-1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    let denom = norm(u) * norm(v);
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(u, v) / denom).clamp(-1.0, 1.0))
}

pub fn l2_normalize(u: &[f64]) -> Result<Vec<f64>> {
    let n = norm(u);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(u.iter().map(|x| x / n).collect())
}

/// Row-major matrix of equal-length vectors, each tagged with a unique id.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorMatrix {
    dim: usize,
    data: Vec<f64>,
    ids: Vec<String>,
}

impl VectorMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            ids: Vec::new(),
        }
    }

    pub fn from_rows<I, S>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut rows = rows.into_iter().peekable();
        let dim = rows.peek().map(|(_, v)| v.len()).unwrap_or(0);
        let mut m = Self::new(dim);
        let mut seen = HashSet::new();
        for (id, v) in rows {
            let id = id.into();
            if !seen.insert(id.clone()) {
                return Err(Error::InvalidConfig(format!("duplicate row id {id:?}")));
            }
            m.push_unchecked(id, &v)?;
        }
        Ok(m)
    }

    fn push_unchecked(&mut self, id: String, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        self.data.extend_from_slice(v);
        self.ids.push(id);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.len())
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Copy with every row scaled to unit length.
    pub fn normalized(&self) -> Result<Self> {
        let mut out = Self::new(self.dim);
        for (i, row) in self.rows().enumerate() {
            out.push_unchecked(self.ids[i].clone(), &l2_normalize(row)?)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia after every assignment step, starting with the initial one.
    pub inertia_history: Vec<f64>,
}

pub fn kmeans(points: &VectorMatrix, k: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_with(points, k, seed, DEFAULT_KMEANS_MAX_ITERS)
}

/// Lloyd's algorithm (squared Euclidean) from a seeded farthest-point start.
///
/// The first centre is a seeded random point; each further centre is the point
/// farthest from its nearest chosen centre (lowest index on ties). Iteration
/// stops once the assignment stops changing or after `max_iters` updates.
pub fn kmeans_with(
    points: &VectorMatrix,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansResult> {
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let mut centroids = farthest_point_init(points, k, seed);
    let (mut assignment, mut dists) = assign(points, &centroids);
    let mut inertia_history = vec![dists.iter().sum::<f64>()];
    let mut iterations_run = 0;

    while iterations_run < max_iters {
        update_centroids(points, &assignment, &dists, &mut centroids);
        let (next, next_dists) = assign(points, &centroids);
        iterations_run += 1;
        inertia_history.push(next_dists.iter().sum());
        let converged = next == assignment;
        assignment = next;
        dists = next_dists;
        if converged {
            break;
        }
    }

    Ok(KMeansResult {
        centroids,
        assignment,
        inertia: *inertia_history.last().unwrap(),
        iterations_run,
        inertia_history,
    })
}

fn farthest_point_init(points: &VectorMatrix, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = points.len();
    let first = rng::rng_for(seed, "kmeans-init").random_range(0..n);
    let mut centroids = vec![points.row(first).to_vec()];
    let mut min_dist: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| squared_distance(points.row(i), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let mut best = 0;
        for i in 1..n {
            if min_dist[i] > min_dist[best] {
                best = i;
            }
        }
        let c = points.row(best).to_vec();
        min_dist.par_iter_mut().enumerate().for_each(|(i, d)| {
            let nd = squared_distance(points.row(i), &c);
            if nd < *d {
                *d = nd;
            }
        });
        centroids.push(c);
    }
    centroids
}

/// Nearest centroid per point (lowest index on ties) and its squared distance.
fn assign(points: &VectorMatrix, centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let row = points.row(i);
            let mut best = (0, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = squared_distance(row, centroid);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

fn update_centroids(
    points: &VectorMatrix,
    assignment: &[usize],
    dists: &[f64],
    centroids: &mut [Vec<f64>],
) {
    let dim = points.dim();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (i, &c) in assignment.iter().enumerate() {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    let mut empties = Vec::new();
    for (c, (sum, &count)) in sums.into_iter().zip(&counts).enumerate() {
        if count == 0 {
            empties.push(c);
        } else {
            centroids[c] = sum.into_iter().map(|s| s / count as f64).collect();
        }
    }
    if empties.is_empty() {
        return;
    }
    // Reseed each empty centroid on one of the points worst served by its
    // current centroid.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
    for (c, p) in empties.into_iter().zip(order) {
        centroids[c] = points.row(p).to_vec();
    }
}

fn rank_order(a: &(usize, f64), b: &(usize, f64), ids: &[String]) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0]))
}

/// Exact top-k by cosine, returned as row positions. Descending similarity,
/// ties broken by ascending row id.
pub fn topk_indices(query: &[f64], matrix: &VectorMatrix, k: usize) -> Result<Vec<(usize, f64)>> {
    if matrix.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_dims(query, matrix.row(0))?;
    let mut scored = (0..matrix.len())
        .map(|i| cosine(query, matrix.row(i)).map(|s| (i, s)))
        .collect::<Result<Vec<_>>>()?;
    let k = k.min(scored.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    let ids = matrix.ids();
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, |a, b| rank_order(a, b, ids));
        scored.truncate(k);
    }
    scored.sort_unstable_by(|a, b| rank_order(a, b, ids));
    Ok(scored)
}

pub fn topk_by_cosine(
    query: &[f64],
    matrix: &VectorMatrix,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    Ok(topk_indices(query, matrix, k)?
        .into_iter()
        .map(|(i, s)| (matrix.id(i).to_owned(), s))
        .collect())
}
