//! Autoregressive sampling and evaluation metrics.
//!
//! Per task, `n` responses are sampled with seeds `derive_seed(seed, j)`;
//! each is parsed and its plan validated against the oracle cost. The
//! summary then reports:
//!
//! - solved / optimal: percentage of tasks with at least one feasible /
//!   optimal sample (optimal over 64 samples is "any-optimal-64");
//! - SWC: `(1/n) Σ c_i · l*_i / max(l_i, l*_i)` with `l_i` the cheapest
//!   solving plan;
//! - ILR: `(1/|I|) Σ_{i∈I} t*_i / t_i` over included tasks `I` (solved or
//!   optimal), with `t_i` the shortest trace of an included sample and
//!   `t*_i` the mean trace length of as many non-deterministic A* runs as
//!   there are samples;
//! - average-on-optimal: per task, the mean trace length of optimal samples.
//!
//! Trace length counts the tokens between `bos` and the first plan token.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::astar::{run_astar, SearchMode};
use crate::dataset::{quantile, Dataset, SequenceExample};
use crate::error::{Error, Result};
use crate::grid::{derive_seed, PlanVerdict, Task, TaskKind};
use crate::model::{Model, StreamState};
use crate::tokens::{decode_prompt, decode_response, response_tokens, trace_token_count, Token, Vocabulary, BOS_ID, EOS_ID};

pub const DEFAULT_SAMPLES: usize = 64;

/// One generated response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generated {
    pub tokens: Vec<Token>,
    /// `max_len` was reached before `eos`.
    pub truncated: bool,
}

/// Anything that maps a prompt to responses.
pub trait ResponseModel: Sync {
    /// `n` samples; sample `j` must depend only on `(prompt, seed, j)`.
    fn sample(&self, prompt: &[Token], n: usize, seed: u64, max_len: usize) -> Result<Vec<Generated>>;

    /// Most likely response under greedy decoding.
    fn greedy(&self, prompt: &[Token], max_len: usize) -> Result<Generated>;
}

/// Samples from a trained Transformer.
pub struct TransformerSampler<'a> {
    pub model: &'a Model<f32>,
    pub vocab: &'a Vocabulary,
    pub temperature: f64,
}

impl<'a> TransformerSampler<'a> {
    pub fn new(model: &'a Model<f32>, vocab: &'a Vocabulary) -> Result<Self> {
        if model.vocab_size() != vocab.len() {
            return Err(Error::VocabularyMismatch(format!(
                "model vocab_size {} vs vocabulary of {}",
                model.vocab_size(),
                vocab.len()
            )));
        }
        Ok(TransformerSampler {
            model,
            vocab,
            temperature: 1.0,
        })
    }

    /// Runs `n` lockstep streams; `pick(j, logits)` chooses stream `j`'s
    /// next token.
    fn run(&self, prompt: &[Token], n: usize, max_len: usize, mut pick: impl FnMut(usize, &[f32]) -> u32) -> Result<Vec<Generated>> {
        let ids = self.vocab.ids(prompt)?;
        let enc = self.model.encode(&ids)?;
        let cross = self.model.cross_cache(&enc);
        let v = self.model.vocab_size();
        let limit = max_len.min(self.model.config.max_seq_len);
        let mut out: Vec<Vec<u32>> = vec![vec![BOS_ID]; n];
        let mut active: Vec<usize> = if limit > 1 { (0..n).collect() } else { Vec::new() };
        let mut streams: Vec<StreamState<f32>> = active.iter().map(|_| self.model.new_stream()).collect();
        while !active.is_empty() {
            let tokens: Vec<u32> = active.iter().map(|&j| *out[j].last().unwrap()).collect();
            let logits = self.model.step(&cross, &mut streams, &tokens)?;
            let mut keep = Vec::with_capacity(active.len());
            for (r, &j) in active.iter().enumerate() {
                let next = pick(j, &logits[r * v..(r + 1) * v]);
                out[j].push(next);
                keep.push(next != EOS_ID && out[j].len() < limit);
            }
            let mut it = keep.iter();
            active.retain(|_| *it.next().unwrap());
            let mut it = keep.iter();
            streams.retain(|_| *it.next().unwrap());
        }
        out.into_iter()
            .map(|ids| {
                let truncated = ids.last() != Some(&EOS_ID);
                let tokens = ids.iter().map(|&i| self.vocab.token(i).expect("sampled ids are in range")).collect();
                Ok(Generated { tokens, truncated })
            })
            .collect()
    }
}

fn sample_logits(logits: &[f32], temperature: f64, rng: &mut ChaCha8Rng) -> u32 {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let weights: Vec<f64> = logits.iter().map(|&z| ((z as f64 - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i as u32;
        }
        u -= w;
    }
    (weights.len() - 1) as u32
}

fn argmax(logits: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = i;
        }
    }
    best as u32
}

impl ResponseModel for TransformerSampler<'_> {
    fn sample(&self, prompt: &[Token], n: usize, seed: u64, max_len: usize) -> Result<Vec<Generated>> {
        let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|j| ChaCha8Rng::seed_from_u64(derive_seed(seed, j as u64))).collect();
        let t = self.temperature;
        self.run(prompt, n, max_len, |j, z| sample_logits(z, t, &mut rngs[j]))
    }

    fn greedy(&self, prompt: &[Token], max_len: usize) -> Result<Generated> {
        Ok(self.run(prompt, 1, max_len, |_, z| argmax(z))?.remove(0))
    }
}

/// Temperature-1 sample of one response.
pub fn sample_response(model: &Model<f32>, vocab: &Vocabulary, prompt: &[Token], seed: u64, max_len: usize) -> Result<Generated> {
    Ok(TransformerSampler::new(model, vocab)?.sample(prompt, 1, seed, max_len)?.remove(0))
}

/// Replays stored responses; unknown prompts get `bos eos`.
pub struct LookupModel {
    table: HashMap<Vec<Token>, Vec<Token>>,
}

impl LookupModel {
    pub fn new(examples: &[SequenceExample]) -> Self {
        LookupModel {
            table: examples.iter().map(|e| (e.prompt.clone(), e.response.clone())).collect(),
        }
    }

    fn answer(&self, prompt: &[Token], max_len: usize) -> Generated {
        let mut tokens = self.table.get(prompt).cloned().unwrap_or_else(|| vec![Token::Bos, Token::Eos]);
        let truncated = tokens.len() > max_len;
        tokens.truncate(max_len);
        Generated { tokens, truncated }
    }
}

impl ResponseModel for LookupModel {
    fn sample(&self, prompt: &[Token], n: usize, _seed: u64, max_len: usize) -> Result<Vec<Generated>> {
        Ok(vec![self.answer(prompt, max_len); n])
    }

    fn greedy(&self, prompt: &[Token], max_len: usize) -> Result<Generated> {
        Ok(self.answer(prompt, max_len))
    }
}

/// Answers by running A* on the decoded prompt. Greedy replays the
/// deterministic search; in non-deterministic mode sample `j` replays a
/// search seeded with `derive_seed(seed, j)`.
pub struct OracleReplay {
    pub kind: TaskKind,
    pub size: i32,
    pub mode: SearchMode,
    /// Emit plans without traces.
    pub solution_only: bool,
}

impl OracleReplay {
    fn answer(&self, prompt: &[Token], mode: SearchMode, seed: u64, max_len: usize) -> Result<Generated> {
        let task = decode_prompt(prompt, self.kind, self.size, self.size)?;
        let r = run_astar(&task, mode, seed)?;
        let trace = (!self.solution_only).then_some(&r.trace);
        let mut tokens = response_tokens(trace, &r.plan, &task);
        let truncated = tokens.len() > max_len;
        tokens.truncate(max_len);
        Ok(Generated { tokens, truncated })
    }
}

impl ResponseModel for OracleReplay {
    fn sample(&self, prompt: &[Token], n: usize, seed: u64, max_len: usize) -> Result<Vec<Generated>> {
        (0..n)
            .map(|j| self.answer(prompt, self.mode, derive_seed(seed, j as u64), max_len))
            .collect()
    }

    fn greedy(&self, prompt: &[Token], max_len: usize) -> Result<Generated> {
        self.answer(prompt, SearchMode::Deterministic, 0, max_len)
    }
}

/// Fraction of examples whose greedy response equals the stored response
/// token for token.
pub fn exact_match_eval(model: &dyn ResponseModel, examples: &[SequenceExample], max_len: usize) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let hits: Vec<bool> = examples
        .par_iter()
        .map(|e| Ok(model.greedy(&e.prompt, max_len)?.tokens == e.response))
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / examples.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub verdict: PlanVerdict,
    pub parsed: bool,
    pub truncated: bool,
    pub trace_len: usize,
    pub response_len: usize,
}

/// One task's samples, judged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub task_id: String,
    pub optimal_cost: u32,
    pub samples: Vec<SampleResult>,
    #[serde(skip)]
    pub responses: Vec<Vec<Token>>,
}

/// Parses and validates each generated response against `task`.
pub fn judge(task: &Task, optimal_cost: u32, generated: &[Generated]) -> Vec<SampleResult> {
    generated
        .iter()
        .map(|g| match (g.truncated, decode_response(&g.tokens, task.kind())) {
            (false, Ok(p)) => SampleResult {
                verdict: task.validate_plan(&p.plan, optimal_cost),
                parsed: true,
                truncated: false,
                trace_len: p.trace_len,
                response_len: g.tokens.len(),
            },
            _ => SampleResult {
                verdict: PlanVerdict::Invalid,
                parsed: false,
                truncated: g.truncated,
                trace_len: 0,
                response_len: g.tokens.len(),
            },
        })
        .collect()
}

/// Mean trace token length of `runs` non-deterministic A* searches.
pub fn reference_trace_len(task: &Task, runs: usize, seed: u64) -> Result<f64> {
    let mut total = 0usize;
    for j in 0..runs {
        let r = run_astar(task, SearchMode::NonDeterministic, derive_seed(seed, j as u64))?;
        total += trace_token_count(&r.trace, task);
    }
    Ok(total as f64 / runs.max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: String,
    pub optimal_cost: u32,
    pub n_solved: usize,
    pub n_optimal: usize,
    pub solved: bool,
    pub optimal: bool,
    /// Cheapest solving plan.
    pub best_cost: Option<u32>,
    pub shortest_trace_solved: Option<usize>,
    pub shortest_trace_optimal: Option<usize>,
    /// Mean trace length over optimal samples.
    pub mean_trace_optimal: Option<f64>,
    pub reference_trace: f64,
}

impl TaskRow {
    pub fn from_samples(set: &SampleSet, reference_trace: f64) -> TaskRow {
        let solved: Vec<&SampleResult> = set.samples.iter().filter(|s| s.verdict.is_solved()).collect();
        let optimal: Vec<&SampleResult> = set.samples.iter().filter(|s| s.verdict.is_optimal()).collect();
        TaskRow {
            task_id: set.task_id.clone(),
            optimal_cost: set.optimal_cost,
            n_solved: solved.len(),
            n_optimal: optimal.len(),
            solved: !solved.is_empty(),
            optimal: !optimal.is_empty(),
            best_cost: solved.iter().filter_map(|s| s.verdict.cost()).min(),
            shortest_trace_solved: solved.iter().map(|s| s.trace_len).min(),
            shortest_trace_optimal: optimal.iter().map(|s| s.trace_len).min(),
            mean_trace_optimal: average_on_optimal(&set.samples),
            reference_trace,
        }
    }
}

/// `(1/n) Σ c_i · l*_i / max(l_i, l*_i)` over `(l_i, l*_i, c_i)`.
pub fn swc(items: &[(u32, u32, bool)]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let sum: f64 = items
        .iter()
        .filter(|i| i.2)
        .map(|&(l, star, _)| {
            let denom = l.max(star);
            if denom == 0 {
                1.0
            } else {
                star as f64 / denom as f64
            }
        })
        .fold(0.0, |a, x| a + x);
    sum / items.len() as f64
}

/// `Σ c_i · t*_i / t_i` over `(t_i, t*_i, c_i)`, divided by the number of
/// included tasks; 0 when nothing is included.
pub fn ilr(items: &[(f64, f64, bool)]) -> f64 {
    let included: Vec<_> = items.iter().filter(|i| i.2).collect();
    if included.is_empty() {
        return 0.0;
    }
    included.iter().map(|&&(t, star, _)| star / t).sum::<f64>() / included.len() as f64
}

/// Mean trace length over the optimal samples, if any.
pub fn average_on_optimal(samples: &[SampleResult]) -> Option<f64> {
    let opt: Vec<usize> = samples.iter().filter(|s| s.verdict.is_optimal()).map(|s| s.trace_len).collect();
    if opt.is_empty() {
        None
    } else {
        Some(opt.iter().sum::<usize>() as f64 / opt.len() as f64)
    }
}

/// Fixed-width histogram as `(bin start, count)` pairs, bins anchored at 0.
pub fn histogram(values: &[f64], bin_width: f64) -> Vec<(f64, usize)> {
    if values.is_empty() {
        return Vec::new();
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    let bins = (max / bin_width).floor() as usize + 1;
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[(v / bin_width).floor() as usize] += 1;
    }
    counts.into_iter().enumerate().map(|(i, c)| (i as f64 * bin_width, c)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub max_len: usize,
    /// Non-deterministic A* runs averaged for each reference trace length;
    /// defaults to `n_samples`.
    pub reference_runs: Option<usize>,
    pub exact_match: bool,
    pub histogram_bin: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_samples: DEFAULT_SAMPLES,
            seed: 0,
            max_len: 2048,
            reference_runs: None,
            exact_match: false,
            histogram_bin: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_tasks: usize,
    pub n_samples: usize,
    pub solved_pct: f64,
    pub optimal_pct: f64,
    pub swc: f64,
    pub ilr_on_solved: f64,
    pub ilr_on_optimal: f64,
    pub exact_match: Option<f64>,
    pub avg_on_optimal_p25: Option<f64>,
    pub avg_on_optimal_p50: Option<f64>,
    pub avg_on_optimal_p75: Option<f64>,
}

impl EvalSummary {
    /// Any-optimal-n as a fraction.
    pub fn any_optimal(&self) -> f64 {
        self.optimal_pct / 100.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub summary: EvalSummary,
    pub rows: Vec<TaskRow>,
    pub avg_on_optimal_histogram: Vec<(f64, usize)>,
}

pub const SUMMARY_FILE: &str = "eval_summary.json";
pub const TASKS_FILE: &str = "eval_tasks.jsonl";
pub const HISTOGRAM_FILE: &str = "avg_on_optimal_hist.csv";

impl EvalReport {
    pub fn from_rows(name: &str, rows: Vec<TaskRow>, n_samples: usize, exact_match: Option<f64>, bin: f64) -> EvalReport {
        let n = rows.len();
        let pct = |f: &dyn Fn(&TaskRow) -> bool| {
            if n == 0 {
                0.0
            } else {
                100.0 * rows.iter().filter(|r| f(r)).count() as f64 / n as f64
            }
        };
        let swc_items: Vec<_> = rows
            .iter()
            .map(|r| (r.best_cost.unwrap_or(0), r.optimal_cost, r.solved))
            .collect();
        let ilr_items = |f: &dyn Fn(&TaskRow) -> Option<usize>| -> Vec<(f64, f64, bool)> {
            rows.iter()
                .map(|r| match f(r) {
                    Some(t) if t > 0 => (t as f64, r.reference_trace, true),
                    _ => (1.0, r.reference_trace, false),
                })
                .collect()
        };
        let mut avgs: Vec<f64> = rows.iter().filter_map(|r| r.mean_trace_optimal).collect();
        avgs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| (!avgs.is_empty()).then(|| quantile(&avgs, p));
        let summary = EvalSummary {
            n_tasks: n,
            n_samples,
            solved_pct: pct(&|r| r.solved),
            optimal_pct: pct(&|r| r.optimal),
            swc: swc(&swc_items),
            ilr_on_solved: ilr(&ilr_items(&|r| r.shortest_trace_solved)),
            ilr_on_optimal: ilr(&ilr_items(&|r| r.shortest_trace_optimal)),
            exact_match,
            avg_on_optimal_p25: q(0.25),
            avg_on_optimal_p50: q(0.50),
            avg_on_optimal_p75: q(0.75),
        };
        EvalReport {
            name: name.to_string(),
            avg_on_optimal_histogram: histogram(&avgs, bin),
            summary,
            rows,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(SUMMARY_FILE);
        let mut s = serde_json::to_string_pretty(&serde_json::json!({
            "name": self.name,
            "summary": self.summary,
        }))
        .expect("summary serializes");
        s.push('\n');
        fs::write(&p, s).map_err(|e| Error::io(&p, e))?;
        let p = dir.join(TASKS_FILE);
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&serde_json::to_string(r).expect("row serializes"));
            s.push('\n');
        }
        fs::write(&p, s).map_err(|e| Error::io(&p, e))?;
        let p = dir.join(HISTOGRAM_FILE);
        let mut s = String::from("bin_start,count\n");
        for (b, c) in &self.avg_on_optimal_histogram {
            s.push_str(&format!("{b},{c}\n"));
        }
        fs::write(&p, s).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<EvalReport> {
        #[derive(Deserialize)]
        struct Head {
            name: String,
            summary: EvalSummary,
        }
        let p = dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let head: Head = serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))?;
        let p = dir.join(TASKS_FILE);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let rows = text
            .lines()
            .map(|l| serde_json::from_str(l).map_err(|e| Error::format(&p, e.to_string())))
            .collect::<Result<Vec<TaskRow>>>()?;
        let p = dir.join(HISTOGRAM_FILE);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let hist = text
            .lines()
            .skip(1)
            .map(|l| {
                let (b, c) = l.split_once(',').ok_or_else(|| Error::format(&p, "bad histogram line"))?;
                Ok((
                    b.parse().map_err(|_| Error::format(&p, "bad bin"))?,
                    c.parse().map_err(|_| Error::format(&p, "bad count"))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalReport {
            name: head.name,
            summary: head.summary,
            rows,
            avg_on_optimal_histogram: hist,
        })
    }
}

/// Samples and judges every example's task. Task `i` uses sample seed
/// `derive_seed(config.seed, i)`.
pub fn sample_tasks(
    model: &dyn ResponseModel,
    dataset: &Dataset,
    examples: &[SequenceExample],
    config: &EvalConfig,
) -> Result<Vec<SampleSet>> {
    examples
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let task = dataset.task(e)?;
            let generated = model.sample(&e.prompt, config.n_samples, derive_seed(config.seed, i as u64), config.max_len)?;
            Ok(SampleSet {
                task_id: e.task_id.clone(),
                optimal_cost: e.optimal_cost,
                samples: judge(&task, e.optimal_cost, &generated),
                responses: generated.into_iter().map(|g| g.tokens).collect(),
            })
        })
        .collect()
}

/// Full evaluation of `model` on `examples` (one per task).
pub fn evaluate(
    name: &str,
    model: &dyn ResponseModel,
    dataset: &Dataset,
    examples: &[SequenceExample],
    config: &EvalConfig,
) -> Result<EvalReport> {
    let sets = sample_tasks(model, dataset, examples, config)?;
    let runs = config.reference_runs.unwrap_or(config.n_samples);
    let rows: Vec<TaskRow> = sets
        .par_iter()
        .zip(examples.par_iter())
        .enumerate()
        .map(|(i, (set, e))| {
            let task = dataset.task(e)?;
            let reference = reference_trace_len(&task, runs, derive_seed(config.seed ^ REFERENCE_STREAM, i as u64))?;
            Ok(TaskRow::from_samples(set, reference))
        })
        .collect::<Result<_>>()?;
    let exact = if config.exact_match {
        Some(exact_match_eval(model, examples, config.max_len)?)
    } else {
        None
    };
    Ok(EvalReport::from_rows(name, rows, config.n_samples, exact, config.histogram_bin))
}

/// Keeps reference A* seeds disjoint from sampling seeds.
const REFERENCE_STREAM: u64 = 0x5eed_0f_a57a;

/// Any-optimal-`n` fraction.
pub fn any_optimal_n_eval(
    model: &dyn ResponseModel,
    dataset: &Dataset,
    examples: &[SequenceExample],
    n: usize,
    seed: u64,
    max_len: usize,
) -> Result<f64> {
    let config = EvalConfig {
        n_samples: n,
        seed,
        max_len,
        ..EvalConfig::default()
    };
    let sets = sample_tasks(model, dataset, examples, &config)?;
    if sets.is_empty() {
        return Ok(0.0);
    }
    Ok(sets.iter().filter(|s| s.samples.iter().any(|r| r.verdict.is_optimal())).count() as f64 / sets.len() as f64)
}
