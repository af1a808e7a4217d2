//! Teacher-forced training: reweighted cross-entropy, AdamW, linear warmup
//! followed by cosine decay, checkpoints and exact resumption.
//!
//! Checkpoint file layout:
//!
//! 1. the line `searchtrace-checkpoint 1`;
//! 2. one JSON line: [`CheckpointHeader`];
//! 3. `param_count` little-endian `f32` parameters in [`ParamLayout`] order;
//! 4. when `has_optimizer`, the AdamW first and then second moments, each
//!    `param_count` little-endian `f32`.
//!
//! [`ParamLayout`]: crate::model::ParamLayout

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SequenceExample;
use crate::error::{Error, Result};
use crate::grid::derive_seed;
use crate::model::{Model, ModelConfig, Real, SeqPair};
use crate::tokens::{Token, Vocabulary};

pub const CHECKPOINT_MAGIC: &str = "searchtrace-checkpoint 1";
pub const DIVERGENCE_FACTOR: f64 = 10.0;
pub const DIVERGENCE_PATIENCE: u64 = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Steps between checkpoints written to the output directory; 0 keeps
    /// only the final one.
    pub checkpoint_interval: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 1e-3,
            warmup_steps: 200,
            total_steps: 5000,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.01,
            seed: 0,
            checkpoint_interval: 0,
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.total_steps > 0 && self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr >= 0.0) {
            return Err(Error::Config(format!("peak_lr {} must be finite and non-negative", self.peak_lr)));
        }
        Ok(())
    }
}

/// Linear ramp from 0 to `peak_lr` over the warmup, then half a cosine
/// down to 0 at `total_steps`.
pub fn lr_schedule(step: u64, config: &TrainConfig) -> f64 {
    let peak = config.peak_lr;
    let (warm, total) = (config.warmup_steps, config.total_steps);
    if step < warm {
        return peak * step as f64 / warm as f64;
    }
    if total <= warm {
        return peak;
    }
    let progress = ((step - warm) as f64 / (total - warm) as f64).min(1.0);
    peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Adam moments with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> AdamW<T> {
    pub fn new(n: usize) -> Self {
        AdamW {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }

    /// One update with learning rate `lr`: `p ← p·(1 − lr·λ)`, then
    /// `p ← p − lr·m̂/(√v̂ + ε)` with bias-corrected moments.
    pub fn update(&mut self, params: &mut [T], grads: &[T], lr: f64, config: &TrainConfig) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(config.beta1), T::of(config.beta2));
        let (c1, c2) = (1.0 - config.beta1.powi(t), 1.0 - config.beta2.powi(t));
        let step_size = T::of(lr / c1);
        let c2_sqrt = T::of(c2.sqrt());
        let eps = T::of(config.eps);
        let decay = T::of(1.0 - lr * config.weight_decay);
        let one = T::one();
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            params[i] *= decay;
            let denom = self.v[i].sqrt() / c2_sqrt + eps;
            params[i] -= step_size * self.m[i] / denom;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    /// Vocabulary symbols in id order.
    pub vocabulary: Vec<Token>,
    pub step: u64,
    pub train: Option<TrainConfig>,
    pub param_count: usize,
    pub has_optimizer: bool,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub vocab: Vocabulary,
    pub step: u64,
    pub train: Option<TrainConfig>,
    pub optimizer: Option<AdamW<f32>>,
}

fn write_f32s(w: &mut impl Write, xs: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_f32s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            model: self.model.config.clone(),
            vocabulary: self.vocab.symbols().to_vec(),
            step: self.step,
            train: self.train.clone(),
            param_count: self.model.params.len(),
            has_optimizer: self.optimizer.is_some(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(serde_json::to_string(&self.header()).expect("header serializes").as_bytes());
        out.push(b'\n');
        write_f32s(&mut out, &self.model.params).expect("vec write");
        if let Some(opt) = &self.optimizer {
            write_f32s(&mut out, &opt.m).expect("vec write");
            write_f32s(&mut out, &opt.v).expect("vec write");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut line = String::new();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if line.trim_end() != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "not a checkpoint file"));
        }
        line.clear();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        let header: CheckpointHeader =
            serde_json::from_str(line.trim_end()).map_err(|e| Error::format(path, format!("header: {e}")))?;
        let vocab = Vocabulary::from_symbols(header.vocabulary.clone()).map_err(|e| Error::format(path, e.to_string()))?;
        let n = header.param_count;
        let params = read_f32s(&mut r, n).map_err(|e| Error::io(path, e))?;
        let optimizer = if header.has_optimizer {
            let m = read_f32s(&mut r, n).map_err(|e| Error::io(path, e))?;
            let v = read_f32s(&mut r, n).map_err(|e| Error::io(path, e))?;
            Some(AdamW { m, v, step: header.step })
        } else {
            None
        };
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
        if !rest.is_empty() {
            return Err(Error::format(path, format!("{} trailing bytes", rest.len())));
        }
        let model = Model::from_params(header.model, params).map_err(|e| Error::format(path, e.to_string()))?;
        Ok(Checkpoint {
            model,
            vocab,
            step: header.step,
            train: header.train,
            optimizer,
        })
    }
}

/// Converts stored examples to token ids, checking the vocabulary.
pub fn pairs_from_examples(examples: &[SequenceExample], vocab: &Vocabulary) -> Result<Vec<SeqPair>> {
    examples
        .iter()
        .map(|e| {
            Ok(SeqPair {
                prompt: vocab.ids(&e.prompt)?,
                response: vocab.ids(&e.response)?,
            })
        })
        .collect()
}

/// Example indices of a batch: a stream over per-epoch permutations, so
/// batch `k` is a pure function of `(seed, k)`.
#[derive(Clone, Debug)]
pub struct BatchOrder {
    n: usize,
    seed: u64,
    epoch: Option<(u64, Vec<usize>)>,
}

impl BatchOrder {
    pub fn new(n: usize, seed: u64) -> Self {
        BatchOrder { n, seed, epoch: None }
    }

    fn index(&mut self, pos: u64) -> usize {
        let epoch = pos / self.n as u64;
        if self.epoch.as_ref().map(|e| e.0) != Some(epoch) {
            let mut perm: Vec<usize> = (0..self.n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, epoch)));
            self.epoch = Some((epoch, perm));
        }
        self.epoch.as_ref().unwrap().1[(pos % self.n as u64) as usize]
    }

    /// Indices used by update `step` (0-based).
    pub fn batch(&mut self, step: u64, size: usize) -> Vec<usize> {
        (0..size as u64).map(|j| self.index(step * size as u64 + j)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub wall_time: f64,
}

pub enum Control {
    Continue,
    Stop,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepRecord>,
    /// True when the step callback ended training early.
    pub stopped_early: bool,
}

/// Where `train` writes its artifacts; `None` keeps everything in memory.
#[derive(Clone, Debug, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint.bin";

/// Fresh model and optimizer for `model_config`, seeded by the train seed.
pub fn initial_checkpoint(model_config: &ModelConfig, vocab: &Vocabulary, config: &TrainConfig) -> Result<Checkpoint> {
    if model_config.vocab_size != vocab.len() {
        return Err(Error::VocabularyMismatch(format!(
            "model vocab_size {} vs vocabulary of {}",
            model_config.vocab_size,
            vocab.len()
        )));
    }
    let model = Model::<f32>::init(model_config, config.seed)?;
    let n = model.params.len();
    Ok(Checkpoint {
        model,
        vocab: vocab.clone(),
        step: 0,
        train: Some(config.clone()),
        optimizer: Some(AdamW::new(n)),
    })
}

/// Runs updates `start.step + 1 ..= config.total_steps` on `data`.
/// `on_step` sees the model after every update and may stop training.
pub fn train_from(
    mut start: Checkpoint,
    data: &[SeqPair],
    config: &TrainConfig,
    output: &TrainOutput,
    mut on_step: impl FnMut(&Model<f32>, &StepRecord) -> Control,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Precondition("training set is empty".into()));
    }
    let n_params = start.model.params.len();
    let mut opt = start.optimizer.take().unwrap_or_else(|| AdamW::new(n_params));
    opt.step = start.step;
    let mut order = BatchOrder::new(data.len(), config.seed);
    let mut metrics = match &output.dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(METRICS_FILE);
            let file = fs::OpenOptions::new()
                .create(true)
                .append(start.step > 0)
                .write(true)
                .truncate(start.step == 0)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            Some((path, BufWriter::new(file)))
        }
        None => None,
    };
    let clock = Instant::now();
    let mut log = Vec::new();
    let mut initial_loss: Option<f64> = None;
    let mut above = 0u64;
    let mut stopped_early = false;
    let mut step = start.step;
    let model = &mut start.model;

    while step < config.total_steps {
        let idx = order.batch(step, config.batch_size);
        let batch: Vec<SeqPair> = idx.iter().map(|&i| data[i].clone()).collect();
        step += 1;
        let (loss, mut grad) = model.loss_and_grad(&batch, step as usize)?;
        let mut norm = grad.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
        if let Some(max) = config.max_grad_norm {
            if norm > max {
                let s = (max / norm) as f32;
                grad.iter_mut().for_each(|g| *g *= s);
                norm = max;
            }
        }
        let lr = lr_schedule(step, config);
        opt.update(&mut model.params, &grad, lr, config)?;

        let init = *initial_loss.get_or_insert(loss);
        above = if loss > DIVERGENCE_FACTOR * init { above + 1 } else { 0 };
        let record = StepRecord {
            step,
            loss,
            lr,
            grad_norm: norm,
            wall_time: clock.elapsed().as_secs_f64(),
        };
        if let Some((path, w)) = metrics.as_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(&*path, e))?;
        }
        let control = on_step(model, &record);
        log.push(record);
        if above >= DIVERGENCE_PATIENCE {
            return Err(Error::Diverged {
                step,
                loss,
                initial: init,
            });
        }
        if let (Some(dir), true) = (&output.dir, config.checkpoint_interval > 0) {
            if step % config.checkpoint_interval == 0 {
                snapshot(model, &start.vocab, step, config, &opt).save(&dir.join(format!("checkpoint-{step:08}.bin")))?;
            }
        }
        if let Control::Stop = control {
            stopped_early = true;
            break;
        }
    }
    if let Some((path, mut w)) = metrics {
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let checkpoint = Checkpoint {
        model: start.model,
        vocab: start.vocab,
        step,
        train: Some(config.clone()),
        optimizer: Some(opt),
    };
    if let Some(dir) = &output.dir {
        checkpoint.save(&dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(TrainOutcome {
        checkpoint,
        log,
        stopped_early,
    })
}

fn snapshot(model: &Model<f32>, vocab: &Vocabulary, step: u64, config: &TrainConfig, opt: &AdamW<f32>) -> Checkpoint {
    Checkpoint {
        model: model.clone(),
        vocab: vocab.clone(),
        step,
        train: Some(config.clone()),
        optimizer: Some(opt.clone()),
    }
}

/// Trains a fresh model on `data` for `config.total_steps` updates.
pub fn train(
    data: &[SeqPair],
    vocab: &Vocabulary,
    model_config: &ModelConfig,
    config: &TrainConfig,
    output: &TrainOutput,
) -> Result<TrainOutcome> {
    let start = initial_checkpoint(model_config, vocab, config)?;
    train_from(start, data, config, output, |_, _| Control::Continue)
}
