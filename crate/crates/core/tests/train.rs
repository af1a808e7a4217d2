use searchtrace::astar::SearchMode;
use searchtrace::dataset::{build_dataset, DatasetConfig, Split, Variant};
use searchtrace::grid::TaskKind;
use searchtrace::model::ModelConfig;
use searchtrace::tokens::Vocabulary;
use searchtrace::train::{initial_checkpoint, pairs_from_examples, train, train_from, Checkpoint, Control, TrainConfig, TrainOutput};
use searchtrace::model::SeqPair;

fn data() -> (Vec<SeqPair>, Vocabulary) {
    let ds = build_dataset(&DatasetConfig {
        kind: TaskKind::Maze,
        size: 4,
        mode: SearchMode::Deterministic,
        n_train: 8,
        n_test: 1,
        max_tokens: 1000,
        seed: 5,
    })
    .unwrap();
    let pairs = pairs_from_examples(&ds.examples(Split::Train, Variant::SearchAugmented), &ds.vocab).unwrap();
    (pairs, ds.vocab)
}

fn cfg(total_steps: u64) -> TrainConfig {
    TrainConfig {
        warmup_steps: 5,
        total_steps,
        batch_size: 4,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn checkpoint_bytes_survive_load_and_save() {
    let (pairs, vocab) = data();
    let out = train(&pairs, &vocab, &ModelConfig::tiny(vocab.len()), &cfg(6), &TrainOutput::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.bin");
    out.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_bytes(), out.checkpoint.to_bytes());
    assert_eq!(loaded.step, 6);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (pairs, vocab) = data();
    let mc = ModelConfig::tiny(vocab.len());
    let full = train(&pairs, &vocab, &mc, &cfg(12), &TrainOutput::default()).unwrap();

    let start = initial_checkpoint(&mc, &vocab, &cfg(12)).unwrap();
    let half = train_from(start, &pairs, &cfg(12), &TrainOutput::default(), |_, r| {
        if r.step == 5 { Control::Stop } else { Control::Continue }
    })
    .unwrap();
    assert!(half.stopped_early);
    let bytes = half.checkpoint.to_bytes();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.bin");
    std::fs::write(&path, bytes).unwrap();
    let resumed = train_from(Checkpoint::load(&path).unwrap(), &pairs, &cfg(12), &TrainOutput::default(), |_, _| Control::Continue).unwrap();
    assert_eq!(resumed.checkpoint.to_bytes(), full.checkpoint.to_bytes());
    let losses: Vec<f64> = half.log.iter().chain(&resumed.log).map(|r| r.loss).collect();
    let reference: Vec<f64> = full.log.iter().map(|r| r.loss).collect();
    assert_eq!(losses, reference);
}

#[test]
fn repeated_training_is_deterministic_and_loss_falls() {
    let (pairs, vocab) = data();
    let mc = ModelConfig::tiny(vocab.len());
    let config = TrainConfig { total_steps: 150, warmup_steps: 20, ..cfg(150) };
    let a = train(&pairs, &vocab, &mc, &config, &TrainOutput::default()).unwrap();
    let b = train(&pairs, &vocab, &mc, &config, &TrainOutput::default()).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    let first: f64 = a.log[..10].iter().map(|r| r.loss).sum::<f64>() / 10.0;
    let last: f64 = a.log[140..].iter().map(|r| r.loss).sum::<f64>() / 10.0;
    assert!(last < 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn interval_checkpoints_and_metrics_are_written() {
    let (pairs, vocab) = data();
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig { checkpoint_interval: 2, warmup_steps: 1, ..cfg(4) };
    train(&pairs, &vocab, &ModelConfig::tiny(vocab.len()), &config, &TrainOutput { dir: Some(dir.path().into()) }).unwrap();
    for name in ["checkpoint-00000002.bin", "checkpoint-00000004.bin", "checkpoint.bin", "metrics.jsonl"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let lines = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 4);
}
