//! Shared fixtures for the benchmarks.

use searchtrace::astar::SearchMode;
use searchtrace::dataset::{build_dataset, Dataset, DatasetConfig, Split, Variant};
use searchtrace::grid::{generate_maze, generate_sokoban, Task, TaskKind};
use searchtrace::model::SeqPair;
use searchtrace::train::pairs_from_examples;

pub fn mazes(n: u64, side: i32) -> Vec<Task> {
    (0..n).map(|i| Task::Maze(generate_maze(side, side, i).expect("maze generation"))).collect()
}

pub fn sokoban_levels(n: u64) -> Vec<Task> {
    (0..n).map(|i| Task::Sokoban(generate_sokoban(i).expect("level generation"))).collect()
}

pub fn small_dataset(size: i32, n_train: usize) -> Dataset {
    build_dataset(&DatasetConfig {
        kind: TaskKind::Maze,
        size,
        mode: SearchMode::Deterministic,
        n_train,
        n_test: 1,
        max_tokens: 10_000,
        seed: 1,
    })
    .expect("dataset generation")
}

pub fn training_pairs(dataset: &Dataset, n: usize) -> Vec<SeqPair> {
    let mut ex = dataset.examples(Split::Train, Variant::SearchAugmented);
    ex.truncate(n);
    pairs_from_examples(&ex, &dataset.vocab).expect("in-vocabulary examples")
}
