//! Train/test corpora of solution-only and search-augmented sequences.
//!
//! On-disk layout of a dataset directory:
//!
//! - `manifest.json`: [`DatasetManifest`]
//! - `vocab.txt`: one symbol per line, line number = token id
//! - `train.jsonl`, `test.jsonl`: a header line `{"format_version":1,...}`
//!   followed by one [`SequenceExample`] per line, ordered by generation
//!   index, with the solution-only record of a task before its
//!   search-augmented record.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::astar::{run_astar, SearchMode};
use crate::error::{Error, Result};
use crate::grid::{derive_seed, generate_maze, generate_sokoban, Task, TaskKind, RESAMPLE_BUDGET};
use crate::tokens::{
    build_vocabulary, decode_prompt, join_symbols, prompt_tokens, response_tokens, trace_token_count, Token,
    Vocabulary,
};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_MAX_TOKENS: usize = 10_000;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOCAB_FILE: &str = "vocab.txt";

const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    SolutionOnly,
    SearchAugmented,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Test => "test.jsonl",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "solution_only" => Ok(Variant::SolutionOnly),
            "search_augmented" => Ok(Variant::SearchAugmented),
            _ => Err(format!("unknown variant {s:?}; expected solution-only or search-augmented")),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}; expected train or test")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceExample {
    pub task_id: String,
    pub variant: Variant,
    pub seed: u64,
    pub optimal_cost: u32,
    pub trace_len: usize,
    pub plan_len: usize,
    pub prompt: Vec<Token>,
    pub response: Vec<Token>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub kind: TaskKind,
    /// Grid side; Sokoban levels are always 7.
    pub size: i32,
    pub mode: SearchMode,
    pub n_train: usize,
    pub n_test: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: TaskKind::Maze,
            size: 5,
            mode: SearchMode::Deterministic,
            n_train: 1000,
            n_test: 100,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub kind: TaskKind,
    pub size: i32,
    pub mode: SearchMode,
    pub n_train: usize,
    pub n_test: usize,
    pub vocabulary: String,
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub max_response_len: usize,
    pub seed: u64,
    /// Generation indices consumed, including rejected tasks.
    pub tasks_drawn: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub vocab: Vocabulary,
    pub train: Vec<SequenceExample>,
    pub test: Vec<SequenceExample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[SequenceExample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn examples(&self, split: Split, variant: Variant) -> Vec<SequenceExample> {
        self.split(split)
            .iter()
            .filter(|e| e.variant == variant)
            .cloned()
            .collect()
    }

    /// Reconstructs the task an example was generated from.
    pub fn task(&self, example: &SequenceExample) -> Result<Task> {
        decode_prompt(&example.prompt, self.manifest.kind, self.manifest.size, self.manifest.size)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        for split in [Split::Train, Split::Test] {
            write_split(&dir.join(split.file_name()), split, self.split(split))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::format(
                &manifest_path,
                format!("unsupported format version {}", manifest.format_version),
            ));
        }
        let vocab = Vocabulary::load(&dir.join(&manifest.vocabulary))?;
        let train = read_split(&dir.join(Split::Train.file_name()))?;
        let test = read_split(&dir.join(Split::Test.file_name()))?;
        Ok(Dataset {
            manifest,
            vocab,
            train,
            test,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SplitHeader {
    format_version: u32,
    split: Split,
    records: usize,
}

fn write_split(path: &Path, split: Split, examples: &[SequenceExample]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = SplitHeader {
        format_version: FORMAT_VERSION,
        split,
        records: examples.len(),
    };
    let mut write = |line: String| -> Result<()> {
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    };
    write(serde_json::to_string(&header).expect("header serializes"))?;
    for ex in examples {
        write(serde_json::to_string(ex).expect("record serializes"))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_split(path: &Path) -> Result<Vec<SequenceExample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::format(path, "missing header line"))?
        .map_err(|e| Error::io(path, e))?;
    let header: SplitHeader =
        serde_json::from_str(&header_line).map_err(|e| Error::format(path, format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported format version {}", header.format_version)));
    }
    let mut out = Vec::with_capacity(header.records);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let ex = serde_json::from_str(&line).map_err(|e| Error::format(path, format!("record {}: {e}", i + 1)))?;
        out.push(ex);
    }
    if out.len() != header.records {
        return Err(Error::format(
            path,
            format!("header announces {} records, found {}", header.records, out.len()),
        ));
    }
    Ok(out)
}

/// First 16 hex digits of the SHA-256 of the space-joined prompt symbols.
pub fn task_id(prompt: &[Token]) -> String {
    let digest = Sha256::digest(join_symbols(prompt).as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Position of a task id in `[0, 1)`; tasks below the test fraction go to
/// the test split.
fn hash_band(task_id: &str) -> f64 {
    let v = u64::from_str_radix(task_id, 16).expect("task ids are hex");
    (v >> 11) as f64 / (1u64 << 53) as f64
}

struct Generated {
    prompt: Vec<Token>,
    solution: Vec<Token>,
    augmented: Vec<Token>,
    trace_len: usize,
    plan_len: usize,
    optimal_cost: u32,
    seed: u64,
}

fn generate_one(config: &DatasetConfig, index: u64) -> Result<Generated> {
    let seed = derive_seed(config.seed, index);
    let task: Task = match config.kind {
        TaskKind::Maze => generate_maze(config.size, config.size, seed)?.into(),
        TaskKind::Sokoban => generate_sokoban(seed)?.into(),
    };
    let result = run_astar(&task, config.mode, derive_seed(seed, u64::MAX))?;
    Ok(Generated {
        prompt: prompt_tokens(&task),
        solution: response_tokens(None, &result.plan, &task),
        augmented: response_tokens(Some(&result.trace), &result.plan, &task),
        trace_len: trace_token_count(&result.trace, &task),
        plan_len: 3 * result.plan.len(),
        optimal_cost: result.optimal_cost,
        seed,
    })
}

fn max_cost_token(tokens: &[Token]) -> u32 {
    tokens
        .iter()
        .filter_map(|t| match t {
            Token::Cost(c) => Some(*c),
            _ => None,
        })
        .max()
        .unwrap_or(0)
}

/// Generates, solves, tokenizes, deduplicates and splits tasks. Output
/// depends only on `config`, never on the number of worker threads.
pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset> {
    if config.n_train == 0 || config.n_test == 0 {
        return Err(Error::Precondition("n_train and n_test must be at least 1".into()));
    }
    if config.kind == TaskKind::Sokoban && config.size != crate::grid::SOKOBAN_SIDE {
        return Err(Error::Precondition(format!(
            "sokoban levels are {0}x{0}, got size {1}",
            crate::grid::SOKOBAN_SIDE,
            config.size
        )));
    }
    let total = config.n_train + config.n_test;
    let test_fraction = config.n_test as f64 / total as f64;
    let budget = RESAMPLE_BUDGET + 20 * total;

    let mut seen: HashSet<Vec<Token>> = HashSet::new();
    let mut train = Vec::with_capacity(2 * config.n_train);
    let mut test = Vec::with_capacity(2 * config.n_test);
    let mut next = 0usize;

    while train.len() < 2 * config.n_train || test.len() < 2 * config.n_test {
        if next >= budget {
            return Err(Error::GenerationFailed {
                attempts: next,
                reason: format!(
                    "only {} train / {} test unique tasks found",
                    train.len() / 2,
                    test.len() / 2
                ),
            });
        }
        let chunk: Vec<Result<Generated>> = (next..next + CHUNK)
            .into_par_iter()
            .map(|i| generate_one(config, i as u64))
            .collect();
        for g in chunk {
            next += 1;
            let g = g?;
            if g.augmented.len() > config.max_tokens || seen.contains(&g.prompt) {
                continue;
            }
            let id = task_id(&g.prompt);
            let (dest, quota) = if hash_band(&id) < test_fraction {
                (&mut test, config.n_test)
            } else {
                (&mut train, config.n_train)
            };
            if dest.len() >= 2 * quota {
                continue;
            }
            seen.insert(g.prompt.clone());
            dest.push(SequenceExample {
                task_id: id.clone(),
                variant: Variant::SolutionOnly,
                seed: g.seed,
                optimal_cost: g.optimal_cost,
                trace_len: 0,
                plan_len: g.plan_len,
                prompt: g.prompt.clone(),
                response: g.solution,
            });
            dest.push(SequenceExample {
                task_id: id,
                variant: Variant::SearchAugmented,
                seed: g.seed,
                optimal_cost: g.optimal_cost,
                trace_len: g.trace_len,
                plan_len: g.plan_len,
                prompt: g.prompt,
                response: g.augmented,
            });
            if train.len() >= 2 * config.n_train && test.len() >= 2 * config.n_test {
                break;
            }
        }
    }

    let all = train.iter().chain(&test);
    let max_cost = all.clone().map(|e| max_cost_token(&e.response)).max().unwrap_or(0);
    let max_response_len = all.map(|e| e.response.len()).max().unwrap_or(0);
    let vocab = build_vocabulary(config.kind, config.size as u16, max_cost);
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        kind: config.kind,
        size: config.size,
        mode: config.mode,
        n_train: config.n_train,
        n_test: config.n_test,
        vocabulary: VOCAB_FILE.into(),
        vocab_size: vocab.len(),
        max_tokens: config.max_tokens,
        max_response_len,
        seed: config.seed,
        tasks_drawn: next,
    };
    Ok(Dataset {
        manifest,
        vocab,
        train,
        test,
    })
}

/// Deterministic prefix of `n` examples after a stable sort by task id.
pub fn slice_dataset(examples: &[SequenceExample], n: usize) -> Result<Vec<SequenceExample>> {
    if n == 0 {
        return Err(Error::Precondition("cannot slice an empty training set".into()));
    }
    if n > examples.len() {
        return Err(Error::Precondition(format!(
            "slice of {n} requested from {} examples",
            examples.len()
        )));
    }
    let mut sorted = examples.to_vec();
    sorted.sort_by(|a, b| a.task_id.cmp(&b.task_id).then(a.variant.cmp(&b.variant)));
    sorted.truncate(n);
    Ok(sorted)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub count: usize,
    pub min: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub max: f64,
    pub mean: f64,
}

impl LengthSummary {
    /// Quantiles interpolate linearly between order statistics.
    pub fn of(values: &[usize]) -> LengthSummary {
        if values.is_empty() {
            return LengthSummary {
                count: 0,
                min: 0.0,
                p25: 0.0,
                p50: 0.0,
                p75: 0.0,
                max: 0.0,
                mean: 0.0,
            };
        }
        let mut v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        LengthSummary {
            count: v.len(),
            min: v[0],
            p25: quantile(&v, 0.25),
            p50: quantile(&v, 0.50),
            p75: quantile(&v, 0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        }
    }
}

/// `sorted` must be ascending and nonempty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantStats {
    pub split: Split,
    pub variant: Variant,
    pub trace_len: LengthSummary,
    pub plan_len: LengthSummary,
    pub response_len: LengthSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub kind: TaskKind,
    pub size: i32,
    pub mode: SearchMode,
    pub groups: Vec<VariantStats>,
}

impl DatasetStats {
    pub fn group(&self, split: Split, variant: Variant) -> Option<&VariantStats> {
        self.groups.iter().find(|g| g.split == split && g.variant == variant)
    }
}

pub fn dataset_stats(dataset: &Dataset) -> DatasetStats {
    let mut groups = Vec::new();
    for split in [Split::Train, Split::Test] {
        for variant in [Variant::SolutionOnly, Variant::SearchAugmented] {
            let ex: Vec<&SequenceExample> =
                dataset.split(split).iter().filter(|e| e.variant == variant).collect();
            let trace: Vec<usize> = ex.iter().map(|e| e.trace_len).collect();
            let plan: Vec<usize> = ex.iter().map(|e| e.plan_len).collect();
            let resp: Vec<usize> = ex.iter().map(|e| e.response.len()).collect();
            groups.push(VariantStats {
                split,
                variant,
                trace_len: LengthSummary::of(&trace),
                plan_len: LengthSummary::of(&plan),
                response_len: LengthSummary::of(&resp),
            });
        }
    }
    DatasetStats {
        kind: dataset.manifest.kind,
        size: dataset.manifest.size,
        mode: dataset.manifest.mode,
        groups,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> DatasetConfig {
        DatasetConfig {
            kind: TaskKind::Maze,
            size: 4,
            mode: SearchMode::Deterministic,
            n_train: 40,
            n_test: 10,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed,
        }
    }

    #[test]
    fn counts_pairing_and_disjointness() {
        let d = build_dataset(&small(1)).unwrap();
        assert_eq!(d.train.len(), 80);
        assert_eq!(d.test.len(), 20);
        let train_ids: HashSet<_> = d.train.iter().map(|e| &e.task_id).collect();
        let test_ids: HashSet<_> = d.test.iter().map(|e| &e.task_id).collect();
        assert_eq!(train_ids.len(), 40);
        assert!(train_ids.is_disjoint(&test_ids));
        for pair in d.train.chunks(2) {
            assert_eq!(pair[0].task_id, pair[1].task_id);
            assert_eq!(pair[0].variant, Variant::SolutionOnly);
            assert_eq!(pair[1].variant, Variant::SearchAugmented);
            assert_eq!(pair[0].trace_len, 0);
            assert_eq!(pair[0].response.len(), pair[0].plan_len + 2);
            assert_eq!(pair[1].response.len(), pair[1].trace_len + pair[1].plan_len + 2);
        }
        for e in d.train.iter().chain(&d.test) {
            d.vocab.ids(&e.prompt).unwrap();
            d.vocab.ids(&e.response).unwrap();
            let task = d.task(e).unwrap();
            assert_eq!(crate::tokens::prompt_tokens(&task), e.prompt);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let d = build_dataset(&small(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), d);
        let first = fs::read_to_string(dir.path().join("train.jsonl")).unwrap();
        assert!(first.starts_with("{\"format_version\":1,"));
    }

    #[test]
    fn exhausting_unique_tasks_fails() {
        let cfg = DatasetConfig {
            size: 3,
            n_train: 2000,
            n_test: 10,
            ..small(0)
        };
        assert!(matches!(build_dataset(&cfg), Err(Error::GenerationFailed { .. })));
    }

    #[test]
    fn zero_counts_rejected() {
        let cfg = DatasetConfig { n_test: 0, ..small(0) };
        assert!(matches!(build_dataset(&cfg), Err(Error::Precondition(_))));
    }

    #[test]
    fn length_cap_replaces_tasks() {
        let cfg = DatasetConfig {
            max_tokens: 100,
            ..small(3)
        };
        let d = build_dataset(&cfg).unwrap();
        assert!(d.train.iter().chain(&d.test).all(|e| e.response.len() <= 100));
        assert_eq!(d.train.len(), 80);
        assert!(d.manifest.tasks_drawn > 50);
    }

    #[test]
    fn slicing() {
        let d = build_dataset(&small(4)).unwrap();
        let ex = d.examples(Split::Train, Variant::SearchAugmented);
        let full = slice_dataset(&ex, ex.len()).unwrap();
        let mut sorted = ex.clone();
        sorted.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        assert_eq!(full, sorted);
        assert!(slice_dataset(&ex, 0).is_err());
        assert!(slice_dataset(&ex, ex.len() + 1).is_err());
        let a = slice_dataset(&ex, 7).unwrap();
        let b = slice_dataset(&ex, 20).unwrap();
        assert_eq!(a[..], b[..7]);
    }

    #[test]
    fn quantiles() {
        let s = LengthSummary::of(&[5, 5, 5, 5]);
        assert_eq!((s.min, s.p25, s.p50, s.p75, s.max), (5.0, 5.0, 5.0, 5.0, 5.0));
        let s = LengthSummary::of(&[1, 2, 3, 4, 5]);
        assert_eq!((s.p25, s.p50, s.p75, s.mean), (2.0, 3.0, 4.0, 3.0));
        let s = LengthSummary::of(&[10, 20]);
        assert_eq!(s.p50, 15.0);
    }

    #[test]
    fn three_by_three_plan_lengths() {
        let cfg = DatasetConfig {
            size: 3,
            n_train: 20,
            n_test: 5,
            ..small(5)
        };
        let d = build_dataset(&cfg).unwrap();
        let stats = dataset_stats(&d);
        let g = stats.group(Split::Train, Variant::SolutionOnly).unwrap();
        // every stored plan has 3 tokens per step
        assert!(d.train.iter().all(|e| e.plan_len == 3 * (e.optimal_cost as usize + 1)));
        assert_eq!(g.response_len.p50, g.plan_len.p50 + 2.0);
        assert_eq!(g.trace_len.max, 0.0);
    }
}
