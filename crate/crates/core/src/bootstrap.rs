//! Search dynamics bootstrapping: sample a trained model on the training
//! tasks, keep optimal responses that are shorter than the stored ones, and
//! fine-tune on the result.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::astar::SearchMode;
use crate::dataset::{Dataset, SequenceExample, Variant};
use crate::error::{Error, Result};
use crate::eval::{evaluate, judge, EvalConfig, EvalSummary, ResponseModel, TransformerSampler};
use crate::grid::{derive_seed, TaskKind};
use crate::tokens::{decode_prompt, decode_response, Vocabulary};
use crate::train::{pairs_from_examples, train_from, Checkpoint, Control, TrainConfig, TrainOutput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub samples: usize,
    pub finetune_steps: u64,
    pub iterations: usize,
    pub seed: u64,
    /// Optimizer settings for each fine-tune; `total_steps` is replaced by
    /// `finetune_steps`.
    pub train: TrainConfig,
    /// Held-out evaluation after each round.
    pub eval: EvalConfig,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            samples: 32,
            finetune_steps: 10_000,
            iterations: 3,
            seed: 0,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("bootstrap samples must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("bootstrap iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Model,
    Original,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRecord {
    pub task_id: String,
    pub origin: Origin,
    pub old_len: usize,
    pub new_len: usize,
    /// Index of the adopted sample.
    pub sample: Option<usize>,
}

/// The training side of a dataset: all that shortening may look at.
#[derive(Clone, Copy, Debug)]
pub struct TrainSplit<'a> {
    pub kind: TaskKind,
    pub size: i32,
    pub mode: SearchMode,
    pub vocab: &'a Vocabulary,
    pub examples: &'a [SequenceExample],
}

impl<'a> TrainSplit<'a> {
    pub fn of(dataset: &'a Dataset) -> Self {
        TrainSplit {
            kind: dataset.manifest.kind,
            size: dataset.manifest.size,
            mode: dataset.manifest.mode,
            vocab: &dataset.vocab,
            examples: &dataset.train,
        }
    }
}

pub struct ShortDataset {
    /// Search-augmented training examples, one per task.
    pub examples: Vec<SequenceExample>,
    pub records: Vec<BootstrapRecord>,
}

impl ShortDataset {
    pub fn adopted(&self) -> usize {
        self.records.iter().filter(|r| r.origin == Origin::Model).count()
    }

    /// `dataset` with its training split replaced; the test split is kept.
    pub fn into_dataset(self, dataset: &Dataset) -> Dataset {
        let mut out = dataset.clone();
        out.train = self.examples;
        out.manifest.max_response_len = out.train.iter().chain(&out.test).map(|e| e.response.len()).max().unwrap_or(0);
        out
    }
}

/// For every search-augmented training task, samples `config.samples`
/// responses with seed `derive_seed(seed, i)` for the `i`-th task and adopts
/// the shortest optimal one (first by sample index on ties) if it is
/// strictly shorter than the stored response.
pub fn build_short_dataset(
    model: &dyn ResponseModel,
    model_vocab: &Vocabulary,
    train: TrainSplit<'_>,
    samples: usize,
    seed: u64,
) -> Result<ShortDataset> {
    if model_vocab != train.vocab {
        return Err(Error::VocabularyMismatch("model and dataset vocabularies differ".into()));
    }
    if train.mode != SearchMode::NonDeterministic {
        return Err(Error::Precondition(
            "bootstrapping needs a dataset built with non-deterministic traces".into(),
        ));
    }
    if samples == 0 {
        return Err(Error::Config("bootstrap samples must be at least 1".into()));
    }
    let examples: Vec<&SequenceExample> = train.examples.iter().filter(|e| e.variant == Variant::SearchAugmented).collect();
    if examples.is_empty() {
        return Err(Error::Precondition("training split has no search-augmented examples".into()));
    }
    let results: Vec<(SequenceExample, BootstrapRecord)> = examples
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let task = decode_prompt(&e.prompt, train.kind, train.size, train.size)?;
            let old_len = e.response.len();
            // anything of the stored length or longer cannot be adopted
            let generated = model.sample(&e.prompt, samples, derive_seed(seed, i as u64), old_len - 1)?;
            let verdicts = judge(&task, e.optimal_cost, &generated);
            let best = verdicts
                .iter()
                .enumerate()
                .filter(|(_, v)| v.verdict.is_optimal())
                .min_by_key(|(j, v)| (v.response_len, *j))
                .map(|(j, _)| j)
                .filter(|&j| generated[j].tokens.len() < old_len);
            Ok(match best {
                Some(j) => {
                    let tokens = generated[j].tokens.clone();
                    let parsed = decode_response(&tokens, train.kind)?;
                    let record = BootstrapRecord {
                        task_id: e.task_id.clone(),
                        origin: Origin::Model,
                        old_len,
                        new_len: tokens.len(),
                        sample: Some(j),
                    };
                    let example = SequenceExample {
                        trace_len: parsed.trace_len,
                        plan_len: parsed.plan.len(),
                        response: tokens,
                        ..(*e).clone()
                    };
                    (example, record)
                }
                None => (
                    (*e).clone(),
                    BootstrapRecord {
                        task_id: e.task_id.clone(),
                        origin: Origin::Original,
                        old_len,
                        new_len: old_len,
                        sample: None,
                    },
                ),
            })
        })
        .collect::<Result<_>>()?;
    let (examples, records) = results.into_iter().unzip();
    Ok(ShortDataset { examples, records })
}

/// Continues optimizing `checkpoint` on the search-augmented training
/// examples of `dataset` for `steps` updates with fresh AdamW moments and a
/// restarted warmup+cosine schedule. The returned checkpoint counts steps
/// from the start of this fine-tune.
pub fn finetune(checkpoint: &Checkpoint, dataset: &Dataset, steps: u64, train: &TrainConfig, output: &TrainOutput) -> Result<Checkpoint> {
    if checkpoint.vocab != dataset.vocab {
        return Err(Error::VocabularyMismatch("checkpoint and dataset vocabularies differ".into()));
    }
    let config = TrainConfig {
        total_steps: steps,
        warmup_steps: train.warmup_steps.min(steps.saturating_sub(1)),
        ..train.clone()
    };
    if steps == 0 {
        let mut out = checkpoint.clone();
        out.train = Some(config);
        return Ok(out);
    }
    let examples = dataset.examples(crate::dataset::Split::Train, Variant::SearchAugmented);
    let data = pairs_from_examples(&examples, &dataset.vocab)?;
    let start = Checkpoint {
        model: checkpoint.model.clone(),
        vocab: checkpoint.vocab.clone(),
        step: 0,
        train: Some(config.clone()),
        optimizer: None,
    };
    Ok(train_from(start, &data, &config, output, |_, _| Control::Continue)?.checkpoint)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    /// 0 is the model before any bootstrapping.
    pub iteration: usize,
    pub tasks: usize,
    pub adopted: usize,
    pub adoption_rate: f64,
    pub mean_old_len: f64,
    pub mean_new_len: f64,
    pub eval: EvalSummary,
}

pub struct BootstrapOutcome {
    /// Checkpoint after each round.
    pub checkpoints: Vec<Checkpoint>,
    /// Round 0 evaluates the initial checkpoint.
    pub reports: Vec<IterationReport>,
    /// Training split stored after each round.
    pub datasets: Vec<Dataset>,
}

fn mean(v: impl Iterator<Item = usize>) -> f64 {
    let (s, n) = v.fold((0usize, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s as f64 / n as f64
    }
}

fn eval_summary(checkpoint: &Checkpoint, dataset: &Dataset, config: &EvalConfig, name: &str) -> Result<crate::eval::EvalReport> {
    let sampler = TransformerSampler::new(&checkpoint.model, &checkpoint.vocab)?;
    let test = dataset.examples(crate::dataset::Split::Test, Variant::SearchAugmented);
    evaluate(name, &sampler, dataset, &test, config)
}

/// Alternates `build_short_dataset` and `finetune` for
/// `config.iterations` rounds, evaluating on the test split before the
/// first round and after each one. With `out_dir`, round `r` is archived
/// under `iteration-{r}/` next to an `iteration-{r}.json` report.
pub fn bootstrap_loop(initial: &Checkpoint, dataset: &Dataset, config: &BootstrapConfig, out_dir: Option<&Path>) -> Result<BootstrapOutcome> {
    config.validate()?;
    let mut current = initial.clone();
    let mut data = dataset.clone();
    let stored = |d: &Dataset| d.train.iter().filter(|e| e.variant == Variant::SearchAugmented).map(|e| e.response.len()).collect::<Vec<_>>();
    let base = eval_summary(&current, &data, &config.eval, "iteration-0")?;
    let lens = stored(&data);
    let mut reports = vec![IterationReport {
        iteration: 0,
        tasks: lens.len(),
        adopted: 0,
        adoption_rate: 0.0,
        mean_old_len: mean(lens.iter().copied()),
        mean_new_len: mean(lens.iter().copied()),
        eval: base.summary.clone(),
    }];
    if let Some(dir) = out_dir {
        archive(dir, 0, &reports[0], None, None, &base)?;
    }
    let mut checkpoints = Vec::new();
    let mut datasets = Vec::new();
    for round in 1..=config.iterations {
        let sampler = TransformerSampler::new(&current.model, &current.vocab)?;
        let short = build_short_dataset(&sampler, &current.vocab, TrainSplit::of(&data), config.samples, derive_seed(config.seed, round as u64))?;
        let adopted = short.adopted();
        let tasks = short.records.len();
        let mean_old_len = mean(short.records.iter().map(|r| r.old_len));
        let mean_new_len = mean(short.records.iter().map(|r| r.new_len));
        let records = short.records.clone();
        data = short.into_dataset(&data);
        let train_out = TrainOutput {
            dir: out_dir.map(|d| d.join(format!("iteration-{round}")).join("train")),
        };
        current = finetune(&current, &data, config.finetune_steps, &config.train, &train_out)?;
        let report = eval_summary(&current, &data, &config.eval, &format!("iteration-{round}"))?;
        let it = IterationReport {
            iteration: round,
            tasks,
            adopted,
            adoption_rate: if tasks == 0 { 0.0 } else { adopted as f64 / tasks as f64 },
            mean_old_len,
            mean_new_len,
            eval: report.summary.clone(),
        };
        if let Some(dir) = out_dir {
            archive(dir, round, &it, Some(&data), Some(&records), &report)?;
            current.save(&dir.join(format!("iteration-{round}")).join("checkpoint.bin"))?;
        }
        reports.push(it);
        checkpoints.push(current.clone());
        datasets.push(data.clone());
    }
    Ok(BootstrapOutcome {
        checkpoints,
        reports,
        datasets,
    })
}

pub const RECORDS_FILE: &str = "bootstrap_records.jsonl";

fn archive(
    dir: &Path,
    round: usize,
    report: &IterationReport,
    data: Option<&Dataset>,
    records: Option<&[BootstrapRecord]>,
    eval: &crate::eval::EvalReport,
) -> Result<()> {
    let sub = dir.join(format!("iteration-{round}"));
    fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    let path = dir.join(format!("iteration-{round}.json"));
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    eval.save(&sub.join("eval"))?;
    if let Some(d) = data {
        d.save(&sub.join("dataset"))?;
    }
    if let Some(records) = records {
        let path = sub.join(RECORDS_FILE);
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r).expect("record serializes"));
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
