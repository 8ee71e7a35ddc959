use dandelion::batcher::{build_epoch_plan, BatchConfig, BatchPlan};
use dandelion::miner::{select_training_pairs, MinerConfig};
use dandelion::synth::{generate, SynthConfig};
use dandelion::trainer::{epoch_vectors, Checkpoint, ProjectionModel};
use dandelion::{Corpus, Error};

#[test]
fn corpus_survives_a_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    let corpus = generate(&SynthConfig { num_authors: 25, ..SynthConfig::default() }).unwrap();
    corpus.save(&path).unwrap();
    assert_eq!(Corpus::load(&path).unwrap(), corpus);
    assert!(matches!(Corpus::load(dir.path().join("missing.jsonl")), Err(Error::Io { .. })));
}

#[test]
fn checkpoint_survives_a_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    let ck = Checkpoint {
        model: ProjectionModel::init(10, 42).unwrap(),
        epoch: 2,
        seed: 42,
        temperature: 0.07,
        learning_rate: 1e-3,
    };
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    std::fs::write(&path, b"short").unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn plan_survives_a_write_and_read() {
    let corpus = generate(&SynthConfig { num_authors: 160, ..SynthConfig::default() }).unwrap();
    let pairs = select_training_pairs(&corpus, &MinerConfig::hard(1.0)).unwrap();
    let vectors = epoch_vectors(&ProjectionModel::init(32, 1).unwrap(), &corpus, &pairs).unwrap();
    let plan = build_epoch_plan(&pairs, &vectors, &BatchConfig::default(), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.txt");
    plan.write_to(std::fs::File::create(&path).unwrap()).unwrap();
    let back = BatchPlan::read_from(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(back.batches.iter().map(|b| &b.authors).collect::<Vec<_>>(), plan.batches.iter().map(|b| &b.authors).collect::<Vec<_>>());
    assert_eq!((back.epoch, back.source, back.mode), (plan.epoch, plan.source, plan.mode));
}
