use dandelion::batcher::{BatchConfig, VectorSource};
use dandelion::evalkit::{average_runs, build_task, evaluate, TaskMode};
use dandelion::miner::{select_training_pairs, MinerConfig};
use dandelion::synth::{generate, SynthConfig};
use dandelion::trainer::{run_training, supcon_grad, supcon_loss, TrainConfig, Validation};
use dandelion::Corpus;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn separable(seed: u64) -> Corpus {
    generate(&SynthConfig {
        num_authors: 400,
        style_weight: 0.8,
        noise_sigma: 0.05,
        dim: 16,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn train_on(corpus: &Corpus, epochs: u32, seed: u64) -> (dandelion::trainer::TrainingOutcome, Corpus) {
    let (train, held) = corpus.split_authors(60, 9);
    let pairs = select_training_pairs(&train, &MinerConfig::hard(1.0)).unwrap();
    let task = build_task(&held, TaskMode::CrossGenre, 7, 1).unwrap();
    let outcome = run_training(
        &train,
        &pairs,
        &BatchConfig { seed, ..BatchConfig::default() },
        &TrainConfig { epochs, learning_rate: 0.05, seed, ..TrainConfig::default() },
        &Validation { corpus: &held, task: &task },
    )
    .unwrap();
    (outcome, held)
}

#[test]
fn finite_difference_check_on_six_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let labels = ["x", "x", "y", "y", "z", "z"];
    let z: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let g = supcon_grad(&z, &labels, 0.07).unwrap();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let scale = g.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    for i in 0..6 {
        for k in 0..5 {
            let (mut up, mut down) = (z.clone(), z.clone());
            up[i][k] += h;
            down[i][k] -= h;
            let fd = (supcon_loss(&up, &labels, 0.07).unwrap() - supcon_loss(&down, &labels, 0.07).unwrap()) / (2.0 * h);
            worst = worst.max((fd - g[i][k]).abs() / scale);
        }
    }
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn loss_halves_on_a_separable_corpus() {
    let (outcome, _) = train_on(&separable(1), 6, 42);
    let first = outcome.step_losses[0];
    let last = *outcome.step_losses.last().unwrap();
    assert!(last <= 0.5 * first, "first {first}, last {last}");
    let h = &outcome.history;
    assert!(h.last().unwrap().mean_train_loss < h[0].mean_train_loss);
}

#[test]
fn one_epoch_gives_one_plan_and_is_best() {
    let (outcome, _) = train_on(&separable(2), 1, 42);
    assert_eq!(outcome.plans.len(), 1);
    assert_eq!(outcome.history.len(), 1);
    assert_eq!(outcome.best.epoch, 1);
    assert_eq!(outcome.plans[0].source, VectorSource::UntrainedProjection);
}

#[test]
fn later_plans_come_from_the_previous_epoch() {
    let (outcome, _) = train_on(&separable(3), 3, 42);
    let sources: Vec<VectorSource> = outcome.plans.iter().map(|p| p.source).collect();
    assert_eq!(
        sources,
        [VectorSource::UntrainedProjection, VectorSource::ModelAfterEpoch(1), VectorSource::ModelAfterEpoch(2)]
    );
}

#[test]
fn two_seeds_give_two_models_averaged_downstream() {
    let corpus = separable(4);
    let (a, held) = train_on(&corpus, 2, 42);
    let (b, _) = train_on(&corpus, 2, 1234);
    assert_ne!(a.best.model, b.best.model);
    let task = build_task(&held, TaskMode::PerGenre, 3, 1).unwrap();
    let ra = evaluate(&a.best.model, &held, &task).unwrap();
    let rb = evaluate(&b.best.model, &held, &task).unwrap();
    let avg = average_runs(&[ra.clone(), rb.clone()]).unwrap();
    assert!((avg.success_at_8 - (ra.success_at_8 + rb.success_at_8) / 2.0).abs() < 1e-12);
    assert!((avg.mrr - (ra.mrr + rb.mrr) / 2.0).abs() < 1e-12);
}
