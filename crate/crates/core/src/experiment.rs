//! End-to-end runs: mine pairs, train one model per seed, evaluate the
//! selected models on held-out tasks and average over seeds.

use serde::{Deserialize, Serialize};

use crate::batcher::{BatchConfig, BatchingMode};
use crate::corpus::{Corpus, DEFAULT_MIN_WORDS};
use crate::error::{Error, Result};
use crate::evalkit::{average_runs, build_task, evaluate, MetricsReport, RetrievalTask, TaskMode};
use crate::miner::{min_pair_similarities, select_training_pairs, MinerConfig, MinerMode};
use crate::synth::{generate, SynthConfig};
use crate::trainer::{run_training, HistoryRecord, ProjectionModel, TrainConfig, Validation, RUN_SEEDS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub miner: MinerConfig,
    pub batch: BatchConfig,
    pub train: TrainConfig,
    /// Task modes evaluated on the test corpus.
    pub modes: Vec<TaskMode>,
    /// Mode of the validation task used for epoch selection.
    pub validation_mode: TaskMode,
    /// One trained model per seed; reports are averaged over them.
    pub seeds: Vec<u64>,
    pub min_words: u64,
    /// Seed for the query/target splits of the validation and test tasks.
    pub task_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            miner: MinerConfig::default(),
            batch: BatchConfig::default(),
            train: TrainConfig::default(),
            modes: TaskMode::ALL.to_vec(),
            validation_mode: TaskMode::CrossGenre,
            seeds: RUN_SEEDS.to_vec(),
            min_words: DEFAULT_MIN_WORDS,
            task_seed: 7,
        }
    }
}

/// Training, validation and test corpora with disjoint authors.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Corpus,
    pub validation: Corpus,
    pub test: Corpus,
}

impl Splits {
    /// Generate one synthetic world and cut its authors into three groups, so
    /// all splits share the same topics.
    pub fn synthetic(config: &SynthConfig, validation_authors: usize, test_authors: usize) -> Result<Self> {
        let all = generate(config)?;
        let (rest, test) = all.split_authors(test_authors, config.seed ^ 0x7e57);
        let (train, validation) = rest.split_authors(validation_authors, config.seed ^ 0x7a11);
        Ok(Self { train, validation, test })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub best_epoch: u32,
    pub history: Vec<HistoryRecord>,
    pub step_losses: Vec<f64>,
    pub model: ProjectionModel,
    pub reports: Vec<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub num_training_authors: usize,
    pub runs: Vec<SeedRun>,
    /// One seed-averaged report per configured mode.
    pub averaged: Vec<MetricsReport>,
}

impl ExperimentResult {
    pub fn report(&self, mode: TaskMode) -> Option<&MetricsReport> {
        self.averaged.iter().find(|r| r.mode == mode)
    }
}

pub fn build_tasks(corpus: &Corpus, modes: &[TaskMode], seed: u64) -> Result<Vec<RetrievalTask>> {
    modes.iter().map(|&m| build_task(corpus, m, seed, 1)).collect()
}

pub fn run_experiment(splits: &Splits, config: &ExperimentConfig) -> Result<ExperimentResult> {
    if config.seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    let train = splits.train.filter_min_words(config.min_words);
    let validation_task = build_task(&splits.validation, config.validation_mode, config.task_seed, 1)?;
    let test_tasks = build_tasks(&splits.test, &config.modes, config.task_seed)?;
    let validation = Validation {
        corpus: &splits.validation,
        task: &validation_task,
    };

    let mut runs = Vec::new();
    let mut num_training_authors = 0;
    for &seed in &config.seeds {
        let miner = MinerConfig { seed, ..config.miner };
        let pairs = select_training_pairs(&train, &miner)?;
        num_training_authors = pairs.len();
        if pairs.is_empty() {
            return Err(Error::InvalidConfig("no training pairs survived mining".into()));
        }
        let batch = BatchConfig { seed, ..config.batch };
        let train_cfg = TrainConfig { seed, ..config.train };
        let outcome = run_training(&train, &pairs, &batch, &train_cfg, &validation)?;
        let reports = test_tasks
            .iter()
            .map(|t| evaluate(&outcome.best.model, &splits.test, t))
            .collect::<Result<Vec<_>>>()?;
        runs.push(SeedRun {
            seed,
            best_epoch: outcome.best.epoch,
            history: outcome.history.iter().map(HistoryRecord::from).collect(),
            step_losses: outcome.step_losses,
            model: outcome.best.model,
            reports,
        });
    }
    let averaged = (0..config.modes.len())
        .map(|m| average_runs(&runs.iter().map(|r| r.reports[m].clone()).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        num_training_authors,
        runs,
        averaged,
    })
}

/// Ceiling placed at the `q`-quantile (nearest rank) of the per-author
/// minimum pair similarities.
pub fn ceiling_at_quantile(corpus: &Corpus, q: f64) -> Result<f64> {
    let mut sims: Vec<f64> = min_pair_similarities(corpus)?.into_iter().map(|(_, s)| s).collect();
    if sims.is_empty() {
        return Err(Error::NoEligibleAuthors("mining"));
    }
    sims.sort_by(f64::total_cmp);
    let rank = ((q.clamp(0.0, 1.0) * sims.len() as f64).ceil() as usize).clamp(1, sims.len());
    Ok(sims[rank - 1])
}

/// One cell of an ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub miner: MinerConfig,
    pub batching: BatchingMode,
    pub clusters_per_batch: Option<usize>,
}

impl Variant {
    pub fn new(miner: MinerConfig, batching: BatchingMode) -> Self {
        let label = match miner.mode {
            MinerMode::Hard => format!("hard<={}/{batching}", miner.ceiling),
            MinerMode::Random => format!("random/{batching}"),
        };
        Self {
            label,
            miner,
            batching,
            clusters_per_batch: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub miner_mode: MinerMode,
    pub ceiling: Option<f64>,
    pub batching: BatchingMode,
    pub clusters_per_batch: usize,
    pub num_training_authors: usize,
    pub reports: Vec<AblationMetric>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationMetric {
    pub mode: TaskMode,
    pub success_at_8: f64,
    pub mrr: f64,
}

impl AblationRow {
    pub fn success_at_8(&self, mode: TaskMode) -> Option<f64> {
        self.reports.iter().find(|r| r.mode == mode).map(|r| r.success_at_8)
    }

    pub fn mean_success_at_8(&self) -> f64 {
        self.reports.iter().map(|r| r.success_at_8).sum::<f64>() / self.reports.len().max(1) as f64
    }
}

pub fn run_variant(splits: &Splits, base: &ExperimentConfig, variant: &Variant) -> Result<AblationRow> {
    let mut config = base.clone();
    config.miner = variant.miner;
    config.batch.mode = variant.batching;
    if let Some(c) = variant.clusters_per_batch {
        config.batch.clusters_per_batch = c;
    }
    let result = run_experiment(splits, &config)?;
    Ok(AblationRow {
        label: variant.label.clone(),
        miner_mode: variant.miner.mode,
        ceiling: (variant.miner.mode == MinerMode::Hard).then_some(variant.miner.ceiling),
        batching: variant.batching,
        clusters_per_batch: config.batch.clusters_per_batch,
        num_training_authors: result.num_training_authors,
        reports: result
            .averaged
            .iter()
            .map(|r| AblationMetric {
                mode: r.mode,
                success_at_8: r.success_at_8,
                mrr: r.mrr,
            })
            .collect(),
    })
}

pub fn ablate(splits: &Splits, base: &ExperimentConfig, variants: &[Variant]) -> Result<Vec<AblationRow>> {
    variants.iter().map(|v| run_variant(splits, base, v)).collect()
}

/// The miner x batching grid: {hard, random} x {hard, random}.
pub fn two_by_two(ceiling: f64) -> Vec<Variant> {
    let mut out = Vec::new();
    for miner in [MinerConfig::hard(ceiling), MinerConfig::random(0)] {
        for batching in [BatchingMode::Hard, BatchingMode::Random] {
            out.push(Variant::new(miner, batching));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_ceiling_nearest_rank() {
        let c = generate(&SynthConfig { num_authors: 40, ..SynthConfig::default() }).unwrap();
        let mut sims: Vec<f64> = min_pair_similarities(&c).unwrap().into_iter().map(|x| x.1).collect();
        sims.sort_by(f64::total_cmp);
        assert_eq!(ceiling_at_quantile(&c, 0.25).unwrap(), sims[9]);
        assert_eq!(ceiling_at_quantile(&c, 1.0).unwrap(), sims[39]);
        assert_eq!(ceiling_at_quantile(&c, 0.0).unwrap(), sims[0]);
        let kept = select_training_pairs(&c, &MinerConfig::hard(sims[9])).unwrap();
        assert!(kept.len() >= 10);
    }

    #[test]
    fn grid_has_four_cells() {
        let g = two_by_two(0.3);
        assert_eq!(g.len(), 4);
        assert_eq!(g[0].label, "hard<=0.3/hard");
        assert_eq!(g[3].label, "random/random");
    }

    #[test]
    fn splits_are_disjoint() {
        let s = Splits::synthetic(&SynthConfig { num_authors: 30, ..SynthConfig::default() }, 5, 7).unwrap();
        assert_eq!(s.validation.num_authors(), 5);
        assert_eq!(s.test.num_authors(), 7);
        assert_eq!(s.train.num_authors(), 18);
        for a in s.test.authors() {
            assert!(s.train.author_documents(a).is_empty());
            assert!(s.validation.author_documents(a).is_empty());
        }
    }
}
