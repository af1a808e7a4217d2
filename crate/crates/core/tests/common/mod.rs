#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use searchtrace::model::{Model, ModelConfig, SeqPair};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random prompt/response pair with `bos = 0`, `eos = 1` framing.
pub fn random_pair(rng: &mut ChaCha8Rng, vocab: u32, prompt_len: usize, response_len: usize) -> SeqPair {
    assert!(response_len >= 2);
    let mut prompt: Vec<u32> = (0..prompt_len).map(|_| rng.gen_range(2..vocab)).collect();
    prompt[0] = 0;
    let mut response = vec![0];
    response.extend((0..response_len - 2).map(|_| rng.gen_range(2..vocab)));
    response.push(1);
    SeqPair { prompt, response }
}

pub fn random_batch(rng: &mut ChaCha8Rng, vocab: u32, n: usize) -> Vec<SeqPair> {
    (0..n)
        .map(|_| {
            let p = rng.gen_range(2..9);
            let r = rng.gen_range(2..9);
            random_pair(rng, vocab, p, r)
        })
        .collect()
}

/// Random model with gains perturbed away from one so that every
/// parameter group is exercised.
pub fn random_model(config: &ModelConfig, seed: u64) -> Model<f64> {
    let mut m = Model::<f64>::init(config, seed).unwrap();
    let mut r = rng(seed ^ 0xfeed);
    for p in m.params.iter_mut() {
        *p += r.gen_range(-0.05..0.05);
    }
    m
}

pub fn batch_loss(model: &Model<f64>, batch: &[SeqPair]) -> f64 {
    batch.iter().map(|p| model.example_loss(p).unwrap()).sum::<f64>() / batch.len() as f64
}

pub struct Probe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn rel_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

/// Central finite differences at `n` random parameter indices.
pub fn gradient_probes(model: &Model<f64>, batch: &[SeqPair], n: usize, seed: u64, eps: f64) -> Vec<Probe> {
    let (_, grad) = model.loss_and_grad(batch, 0).unwrap();
    let mut r = rng(seed);
    let mut m = model.clone();
    (0..n)
        .map(|_| {
            let i = r.gen_range(0..m.params.len());
            let orig = m.params[i];
            m.params[i] = orig + eps;
            let up = batch_loss(&m, batch);
            m.params[i] = orig - eps;
            let down = batch_loss(&m, batch);
            m.params[i] = orig;
            Probe {
                index: i,
                analytic: grad[i],
                numeric: (up - down) / (2.0 * eps),
            }
        })
        .collect()
}

/// Loss recomputed from step-by-step decoding logits with a direct
/// log-sum-exp per position.
pub fn naive_loss(model: &Model<f64>, batch: &[SeqPair]) -> f64 {
    let v = model.vocab_size();
    let mut total = 0.0;
    for pair in batch {
        let enc = model.encode(&pair.prompt).unwrap();
        let cross = model.cross_cache(&enc);
        let mut stream = vec![model.new_stream()];
        let m = pair.response.len();
        let mut sum = 0.0;
        for i in 0..m - 1 {
            let logits = model.step(&cross, &mut stream, &[pair.response[i]]).unwrap();
            let z = &logits[..v];
            let lse = z.iter().map(|x| x.exp()).sum::<f64>().ln();
            sum += lse - z[pair.response[i + 1] as usize];
        }
        total += sum / (m - 1) as f64;
    }
    total / batch.len() as f64
}
