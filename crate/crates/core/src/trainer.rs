//! Projection encoder and supervised contrastive training.
//!
//! The trainable part is a bias-free linear map from the base embedding to
//! half its width. Each step computes the loss and gradient of several shards
//! (batches) independently and applies their sum in one update.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batcher::{build_epoch_plan, BatchConfig, BatchPlan, VectorSource};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, RetrievalTask};
use crate::geometry::{dot, norm, VectorMatrix};
use crate::miner::TrainingPair;
use crate::rng;

pub const DEFAULT_TEMPERATURE: f64 = 0.07;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_EPOCHS: u32 = 4;
pub const DEFAULT_SHARDS_PER_STEP: usize = 4;
pub const RUN_SEEDS: [u64; 2] = [42, 1234];

/// Anything that maps a base embedding to a retrieval vector.
pub trait Encoder: Sync {
    fn input_dim(&self) -> usize;
    fn encode(&self, base: &[f64]) -> Result<Vec<f64>>;
}

/// Uses base embeddings unchanged.
#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl Encoder for Identity {
    fn input_dim(&self) -> usize {
        self.0
    }

    fn encode(&self, base: &[f64]) -> Result<Vec<f64>> {
        if base.len() != self.0 {
            return Err(Error::DimensionMismatch {
                expected: self.0,
                found: base.len(),
            });
        }
        Ok(base.to_vec())
    }
}

/// Linear map `D -> floor(D / 2)`, weights row-major `(D/2) x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    input_dim: usize,
    output_dim: usize,
    weight: Vec<f64>,
}

impl ProjectionModel {
    pub fn from_weights(input_dim: usize, weight: Vec<f64>) -> Result<Self> {
        let output_dim = input_dim / 2;
        if output_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "input dimension {input_dim} is too small to halve"
            )));
        }
        if weight.len() != input_dim * output_dim {
            return Err(Error::DimensionMismatch {
                expected: input_dim * output_dim,
                found: weight.len(),
            });
        }
        if weight.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig("non-finite weight".into()));
        }
        Ok(Self {
            input_dim,
            output_dim,
            weight,
        })
    }

    /// Seeded uniform weights in `[-1/sqrt(D), 1/sqrt(D)]`.
    pub fn init(input_dim: usize, seed: u64) -> Result<Self> {
        let bound = 1.0 / (input_dim as f64).sqrt();
        let mut rng = rng::rng_for(seed, "projection-init");
        let n = input_dim * (input_dim / 2);
        let weight = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Self::from_weights(input_dim, weight)
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn project(&self, base: &[f64]) -> Result<Vec<f64>> {
        if base.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: base.len(),
            });
        }
        Ok(self
            .weight
            .chunks_exact(self.input_dim)
            .map(|row| dot(row, base))
            .collect())
    }

    fn apply_gradient(&mut self, grad: &[f64], learning_rate: f64) {
        for (w, g) in self.weight.iter_mut().zip(grad) {
            *w -= learning_rate * g;
        }
    }
}

impl Encoder for ProjectionModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn encode(&self, base: &[f64]) -> Result<Vec<f64>> {
        self.project(base)
    }
}

pub fn project(model: &ProjectionModel, base: &[f64]) -> Result<Vec<f64>> {
    model.project(base)
}

/// Positive partner of every row. Labels must each occur exactly twice.
fn partners<L: AsRef<str>>(labels: &[L]) -> Result<Vec<usize>> {
    let mut seen: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, l) in labels.iter().enumerate() {
        seen.entry(l.as_ref()).or_default().push(i);
    }
    let mut partner = vec![0; labels.len()];
    for (label, rows) in seen {
        if rows.len() != 2 {
            return Err(Error::UnpairedLabel {
                label: label.to_owned(),
                count: rows.len(),
            });
        }
        partner[rows[0]] = rows[1];
        partner[rows[1]] = rows[0];
    }
    Ok(partner)
}

fn check_inputs<L: AsRef<str>>(projected: &[Vec<f64>], labels: &[L], temperature: f64) -> Result<Vec<usize>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if projected.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: projected.len(),
        });
    }
    if projected.is_empty() {
        return Err(Error::EmptyInput);
    }
    partners(labels)
}

struct Normalized {
    unit: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

fn normalize_rows(projected: &[Vec<f64>]) -> Result<Normalized> {
    let mut unit = Vec::with_capacity(projected.len());
    let mut norms = Vec::with_capacity(projected.len());
    for z in projected {
        let n = norm(z);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroNorm);
        }
        unit.push(z.iter().map(|x| x / n).collect());
        norms.push(n);
    }
    Ok(Normalized { unit, norms })
}

/// Per anchor: similarity logits to every other row and their log-sum-exp.
fn anchor_logits(unit: &[Vec<f64>], i: usize, temperature: f64) -> (Vec<f64>, f64) {
    let logits: Vec<f64> = unit.iter().map(|u| dot(&unit[i], u) / temperature).collect();
    let max = logits
        .iter()
        .enumerate()
        .filter(|&(a, _)| a != i)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(a, _)| a != i)
        .map(|(_, &s)| (s - max).exp())
        .sum();
    (logits, max + sum.ln())
}

/// Supervised contrastive loss over L2-normalized rows, averaged over anchors.
/// Each label must appear exactly twice, so every anchor has one positive.
pub fn supcon_loss<L: AsRef<str>>(projected: &[Vec<f64>], labels: &[L], temperature: f64) -> Result<f64> {
    let partner = check_inputs(projected, labels, temperature)?;
    let Normalized { unit, .. } = normalize_rows(projected)?;
    let total: f64 = (0..unit.len())
        .map(|i| {
            let (logits, lse) = anchor_logits(&unit, i, temperature);
            lse - logits[partner[i]]
        })
        .sum();
    Ok(total / unit.len() as f64)
}

/// Loss and its gradient with respect to the unnormalized rows.
pub fn supcon_loss_and_grad<L: AsRef<str>>(
    projected: &[Vec<f64>],
    labels: &[L],
    temperature: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let partner = check_inputs(projected, labels, temperature)?;
    let Normalized { unit, norms } = normalize_rows(projected)?;
    let n = unit.len();
    let dim = unit[0].len();
    let scale = 1.0 / n as f64;

    // coeff[i][a] = dL/ds_ia, with s_ia the tempered similarity
    let mut loss = 0.0;
    let mut coeff = vec![vec![0.0; n]; n];
    for i in 0..n {
        let (logits, lse) = anchor_logits(&unit, i, temperature);
        loss += lse - logits[partner[i]];
        for a in (0..n).filter(|&a| a != i) {
            coeff[i][a] = (logits[a] - lse).exp() * scale;
        }
        coeff[i][partner[i]] -= scale;
    }

    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        // gradient with respect to the unit vector
        let mut g = vec![0.0; dim];
        for j in (0..n).filter(|&j| j != i) {
            let w = (coeff[i][j] + coeff[j][i]) / temperature;
            for (gd, u) in g.iter_mut().zip(&unit[j]) {
                *gd += w * u;
            }
        }
        // project onto the tangent space of the sphere and undo the scaling
        let radial = dot(&g, &unit[i]);
        grads.push(
            g.iter()
                .zip(&unit[i])
                .map(|(gd, u)| (gd - radial * u) / norms[i])
                .collect(),
        );
    }
    Ok((loss * scale, grads))
}

pub fn supcon_grad<L: AsRef<str>>(projected: &[Vec<f64>], labels: &[L], temperature: f64) -> Result<Vec<Vec<f64>>> {
    supcon_loss_and_grad(projected, labels, temperature).map(|(_, g)| g)
}

/// Loss and weight gradient for a batch of base vectors.
pub fn weight_loss_and_grad<L: AsRef<str>>(
    model: &ProjectionModel,
    inputs: &[Vec<f64>],
    labels: &[L],
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    let projected = inputs
        .iter()
        .map(|x| model.project(x))
        .collect::<Result<Vec<_>>>()?;
    let (loss, dz) = supcon_loss_and_grad(&projected, labels, temperature)?;
    let d = model.input_dim;
    let mut grad = vec![0.0; model.weight.len()];
    for (x, g) in inputs.iter().zip(&dz) {
        for (o, go) in g.iter().enumerate() {
            for (w, xi) in grad[o * d..(o + 1) * d].iter_mut().zip(x) {
                *w += go * xi;
            }
        }
    }
    Ok((loss, grad))
}

/// One batch: base vectors with author labels, two rows per author.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    Concurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub shards_per_step: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            shards_per_step: DEFAULT_SHARDS_PER_STEP,
            temperature: DEFAULT_TEMPERATURE,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: RUN_SEEDS[0],
            execution: Execution::Concurrent,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.shards_per_step == 0 {
            return Err(Error::InvalidConfig("epochs and shards_per_step must be >= 1".into()));
        }
        if !(self.temperature > 0.0) || !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(
                "temperature must be positive and learning_rate non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Compute every shard's loss and gradient independently, sum the gradients
/// in shard order and take one descent step. Returns the new model and the
/// summed shard loss.
pub fn train_step(
    model: &ProjectionModel,
    shards: &[Shard],
    config: &TrainConfig,
) -> Result<(ProjectionModel, f64)> {
    if shards.is_empty() || shards.len() > config.shards_per_step {
        return Err(Error::InvalidConfig(format!(
            "a step takes 1..={} shards, got {}",
            config.shards_per_step,
            shards.len()
        )));
    }
    let run = |s: &Shard| weight_loss_and_grad(model, &s.inputs, &s.labels, config.temperature);
    let results: Vec<(f64, Vec<f64>)> = match config.execution {
        Execution::Sequential => shards.iter().map(run).collect::<Result<_>>()?,
        Execution::Concurrent => shards.par_iter().map(run).collect::<Result<_>>()?,
    };
    let mut grad = vec![0.0; model.weight.len()];
    let mut loss = 0.0;
    for (l, g) in &results {
        loss += l;
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc += x;
        }
    }
    let mut next = model.clone();
    next.apply_gradient(&grad, config.learning_rate);
    Ok((next, loss))
}

/// A validation corpus and the retrieval task built on it.
#[derive(Debug, Clone)]
pub struct Validation<'a> {
    pub corpus: &'a Corpus,
    pub task: &'a RetrievalTask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochState {
    pub epoch: u32,
    pub model: ProjectionModel,
    pub validation_score: f64,
    pub mean_train_loss: f64,
    pub plan_source: VectorSource,
}

/// One line of the training history file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub epoch: u32,
    pub mean_train_loss: f64,
    pub validation_success_at_8: f64,
}

impl From<&EpochState> for HistoryRecord {
    fn from(s: &EpochState) -> Self {
        Self {
            epoch: s.epoch,
            mean_train_loss: s.mean_train_loss,
            validation_success_at_8: s.validation_score,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub best: EpochState,
    pub history: Vec<EpochState>,
    /// Mean shard loss of every step, in order.
    pub step_losses: Vec<f64>,
    pub plans: Vec<BatchPlan>,
}

/// Project every paired document with `model`.
pub fn epoch_vectors(model: &ProjectionModel, corpus: &Corpus, pairs: &[TrainingPair]) -> Result<VectorMatrix> {
    let rows = pairs
        .iter()
        .flat_map(|p| p.doc_ids())
        .map(|id| {
            let doc = corpus.get(id).ok_or_else(|| Error::UnknownDocument(id.to_owned()))?;
            Ok((id.to_owned(), model.project(&doc.base_embedding)?))
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Ok(VectorMatrix::new(model.output_dim));
    }
    VectorMatrix::from_rows(rows)
}

fn plan_shards(plan: &BatchPlan, corpus: &Corpus, pairs: &[TrainingPair]) -> Result<Vec<Shard>> {
    let by_author: HashMap<&str, &TrainingPair> = pairs.iter().map(|p| (p.author_id.as_str(), p)).collect();
    plan.batches
        .iter()
        .map(|batch| {
            let mut shard = Shard {
                inputs: Vec::with_capacity(batch.authors.len() * 2),
                labels: Vec::with_capacity(batch.authors.len() * 2),
            };
            for author in &batch.authors {
                let pair = by_author
                    .get(author.as_str())
                    .ok_or_else(|| Error::InvalidConfig(format!("plan names unknown author {author:?}")))?;
                for id in pair.doc_ids() {
                    let doc = corpus.get(id).ok_or_else(|| Error::UnknownDocument(id.to_owned()))?;
                    shard.inputs.push(doc.base_embedding.clone());
                    shard.labels.push(author.clone());
                }
            }
            Ok(shard)
        })
        .collect()
}

/// Train for `config.epochs` epochs, re-planning batches each epoch from the
/// previous epoch's model, and keep the epoch with the best validation
/// Success@8 (earliest on ties).
pub fn run_training(
    corpus: &Corpus,
    pairs: &[TrainingPair],
    batch_config: &BatchConfig,
    config: &TrainConfig,
    validation: &Validation<'_>,
) -> Result<TrainingOutcome> {
    config.validate()?;
    batch_config.validate()?;
    let training_authors: HashSet<&str> = pairs.iter().map(|p| p.author_id.as_str()).collect();
    if let Some(q) = validation
        .task
        .queries
        .iter()
        .find(|q| training_authors.contains(q.author_id.as_str()))
    {
        return Err(Error::ValidationOverlap(q.author_id.clone()));
    }
    let dim = corpus.dimension().ok_or(Error::EmptyInput)?;
    let mut model = ProjectionModel::init(dim, config.seed)?;

    let mut history: Vec<EpochState> = Vec::new();
    let mut step_losses = Vec::new();
    let mut plans = Vec::new();
    for epoch in 1..=config.epochs {
        let vectors = epoch_vectors(&model, corpus, pairs)?;
        let plan = build_epoch_plan(pairs, &vectors, batch_config, epoch)?;
        let shards = plan_shards(&plan, corpus, pairs)?;
        let mut loss_sum = 0.0;
        for step in shards.chunks(config.shards_per_step) {
            let (next, loss) = train_step(&model, step, config)?;
            model = next;
            loss_sum += loss;
            step_losses.push(loss / step.len() as f64);
        }
        let report = evaluate(&model, validation.corpus, validation.task)?;
        history.push(EpochState {
            epoch,
            model: model.clone(),
            validation_score: report.success_at_8,
            mean_train_loss: if shards.is_empty() { 0.0 } else { loss_sum / shards.len() as f64 },
            plan_source: plan.source,
        });
        plans.push(plan);
    }
    let best = history
        .iter()
        .fold(None::<&EpochState>, |best, s| match best {
            Some(b) if b.validation_score >= s.validation_score => Some(b),
            _ => Some(s),
        })
        .expect("at least one epoch")
        .clone();
    Ok(TrainingOutcome {
        best,
        history,
        step_losses,
        plans,
    })
}

/// A model with the settings that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ProjectionModel,
    pub epoch: u64,
    pub seed: u64,
    pub temperature: f64,
    pub learning_rate: f64,
}

impl Checkpoint {
    /// Header `(D, D/2, epoch, seed)` as little-endian u64 and `(tau, lr)` as
    /// little-endian f64, followed by the row-major weights as f64.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for v in [
            self.model.input_dim as u64,
            self.model.output_dim as u64,
            self.epoch,
            self.seed,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.temperature.to_le_bytes())?;
        w.write_all(&self.learning_rate.to_le_bytes())?;
        for x in &self.model.weight {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::BadCheckpoint(e.to_string()))?;
        if bytes.len() < 48 || bytes.len() % 8 != 0 {
            return Err(Error::BadCheckpoint(format!("{} bytes", bytes.len())));
        }
        let words: Vec<[u8; 8]> = bytes.chunks_exact(8).map(|c| c.try_into().unwrap()).collect();
        let int = |i: usize| u64::from_le_bytes(words[i]);
        let real = |i: usize| f64::from_le_bytes(words[i]);
        let (input_dim, output_dim) = (int(0) as usize, int(1) as usize);
        if output_dim != input_dim / 2 {
            return Err(Error::BadCheckpoint(format!(
                "output width {output_dim} is not half of {input_dim}"
            )));
        }
        let weight: Vec<f64> = (6..words.len()).map(real).collect();
        let model = ProjectionModel::from_weights(input_dim, weight)
            .map_err(|e| Error::BadCheckpoint(e.to_string()))?;
        Ok(Self {
            model,
            epoch: int(2),
            seed: int(3),
            temperature: real(4),
            learning_rate: real(5),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |source| Error::Io {
            path: path.to_owned(),
            source,
        };
        self.write_to(BufWriter::new(File::create(path).map_err(io)?))
            .map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::read_from(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labels(authors: usize) -> Vec<String> {
        (0..authors).flat_map(|a| [format!("a{a}"), format!("a{a}")]).collect()
    }

    #[test]
    fn project_examples() {
        let m = ProjectionModel::from_weights(4, vec![1., 0., 0., 0., 0., 1., 0., 0.]).unwrap();
        assert_eq!(m.project(&[3., 5., 7., 9.]).unwrap(), vec![3., 5.]);
        let zero = ProjectionModel::from_weights(4, vec![0.0; 8]).unwrap();
        assert_eq!(zero.project(&[3., 5., 7., 9.]).unwrap(), vec![0., 0.]);
        let r = ProjectionModel::init(6, 1).unwrap();
        let x = [0.3, -1.0, 2.0, 0.5, 0.0, 1.5];
        let y: Vec<f64> = x.iter().map(|v| v * 2.5).collect();
        let (px, py) = (r.project(&x).unwrap(), r.project(&y).unwrap());
        assert!(px.iter().zip(&py).all(|(a, b)| (a * 2.5 - b).abs() < 1e-12));
        assert!(matches!(m.project(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let m = ProjectionModel::init(9, 42).unwrap();
        assert_eq!(m.output_dim(), 4);
        assert!(m.weight().iter().all(|w| w.abs() <= 1.0 / 3.0));
        assert_eq!(m, ProjectionModel::init(9, 42).unwrap());
        assert_ne!(m, ProjectionModel::init(9, 1234).unwrap());
        assert!(ProjectionModel::init(1, 0).is_err());
    }

    #[test]
    fn identical_vectors_give_log_2n_minus_1() {
        for authors in [2, 3, 8] {
            let z = vec![vec![0.3, -0.4, 1.0]; 2 * authors];
            for tau in [0.07, 1.0, 5.0] {
                let l = supcon_loss(&z, &labels(authors), tau).unwrap();
                assert!((l - ((2 * authors - 1) as f64).ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn orthogonal_pairs_at_unit_temperature() {
        let z = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let l = supcon_loss(&z, &labels(2), 1.0).unwrap();
        let expected = (1.0 + 2.0 / std::f64::consts::E).ln();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.5514).abs() < 1e-4);
    }

    #[test]
    fn loss_input_errors() {
        let z = vec![vec![1.0, 0.0]; 3];
        assert!(matches!(
            supcon_loss(&z, &["a", "a", "b"], 1.0),
            Err(Error::UnpairedLabel { count: 1, .. })
        ));
        let z4 = vec![vec![1.0, 0.0]; 4];
        assert!(matches!(
            supcon_loss(&z4, &["a", "a", "a", "b"], 1.0),
            Err(Error::UnpairedLabel { .. })
        ));
        assert!(supcon_loss(&z4, &labels(2), 0.0).is_err());
        assert!(supcon_loss(&z4, &labels(2), -1.0).is_err());
    }

    #[test]
    fn identical_vectors_have_zero_gradient() {
        let z = vec![vec![0.3, -0.4, 1.0]; 6];
        let g = supcon_grad(&z, &labels(3), 0.07).unwrap();
        assert!(g.iter().flatten().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn gradient_is_orthogonal_to_each_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z: Vec<Vec<f64>> = (0..8).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let g = supcon_grad(&z, &labels(4), 0.07).unwrap();
        for (zi, gi) in z.iter().zip(&g) {
            assert!(dot(zi, gi).abs() < 1e-10);
        }
        let scaled: Vec<Vec<f64>> = z.iter().map(|r| r.iter().map(|x| x * 3.0).collect()).collect();
        let a = supcon_loss(&z, &labels(4), 0.07).unwrap();
        let b = supcon_loss(&scaled, &labels(4), 0.07).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    fn random_shard(rng: &mut ChaCha8Rng, authors: usize, dim: usize) -> Shard {
        Shard {
            inputs: (0..2 * authors).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            labels: labels(authors),
        }
    }

    #[test]
    fn step_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = ProjectionModel::init(6, 5).unwrap();
        let shard = random_shard(&mut rng, 3, 6);
        let cfg = TrainConfig { learning_rate: 0.1, ..TrainConfig::default() };
        let (next, loss) = train_step(&model, std::slice::from_ref(&shard), &cfg).unwrap();
        let (l, g) = weight_loss_and_grad(&model, &shard.inputs, &shard.labels, cfg.temperature).unwrap();
        assert_eq!(loss, l);
        let manual: Vec<f64> = model.weight().iter().zip(&g).map(|(w, g)| w - 0.1 * g).collect();
        assert_eq!(next.weight(), manual.as_slice());

        let frozen = TrainConfig { learning_rate: 0.0, ..cfg };
        let (same, loss0) = train_step(&model, std::slice::from_ref(&shard), &frozen).unwrap();
        assert_eq!(same, model);
        assert_eq!(loss0, l);

        assert!(train_step(&model, &[], &cfg).is_err());
        let five = vec![shard.clone(); 5];
        assert!(train_step(&model, &five, &cfg).is_err());
        let mut odd = shard;
        odd.labels[0] = "stray".into();
        assert!(matches!(train_step(&model, &[odd], &cfg), Err(Error::UnpairedLabel { .. })));
    }

    #[test]
    fn checkpoint_round_trip_and_layout() {
        let ck = Checkpoint {
            model: ProjectionModel::init(4, 2).unwrap(),
            epoch: 3,
            seed: 1234,
            temperature: 0.07,
            learning_rate: 0.5,
        };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 6 * 8 + 8 * 8);
        assert_eq!(&buf[..8], &4u64.to_le_bytes());
        assert_eq!(&buf[8..16], &2u64.to_le_bytes());
        assert_eq!(&buf[32..40], &0.07f64.to_le_bytes());
        assert_eq!(&buf[48..56], &ck.model.weight()[0].to_le_bytes());
        assert_eq!(Checkpoint::read_from(buf.as_slice()).unwrap(), ck);
        assert!(Checkpoint::read_from(&buf[..40]).is_err());
        assert!(Checkpoint::read_from(&buf[..buf.len() - 8]).is_err());
    }
}
