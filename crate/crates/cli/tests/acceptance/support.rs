use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use searchtrace::model::{Model, ModelConfig, SeqPair};

/// Process CPU time (user + system, all threads) from procfs; falls back
/// to zero where procfs is unavailable.
pub fn cpu_seconds() -> f64 {
    let Ok(stat) = fs::read_to_string("/proc/self/stat") else {
        return 0.0;
    };
    // fields after the parenthesised command name; utime and stime are the
    // 14th and 15th fields overall
    let rest = stat.rsplit_once(')').map(|(_, r)| r).unwrap_or("");
    let f: Vec<&str> = rest.split_whitespace().collect();
    let ticks = |i: usize| f.get(i).and_then(|s| s.parse::<f64>().ok()).unwrap_or(0.0);
    (ticks(11) + ticks(12)) / 100.0
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}
pub(crate) use ensure;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_pair(rng: &mut ChaCha8Rng, vocab: u32) -> SeqPair {
    let (p, r) = (rng.gen_range(2..9), rng.gen_range(2..9));
    let mut prompt: Vec<u32> = (0..p).map(|_| rng.gen_range(2..vocab)).collect();
    prompt[0] = 0;
    let mut response = vec![0];
    response.extend((0..r - 2).map(|_| rng.gen_range(2..vocab)));
    response.push(1);
    SeqPair { prompt, response }
}

pub fn random_batch(rng: &mut ChaCha8Rng, vocab: u32, n: usize) -> Vec<SeqPair> {
    (0..n).map(|_| random_pair(rng, vocab)).collect()
}

/// Initialised model with every parameter perturbed, so gains differ from one.
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

/// Mean over examples of the per-position NLL average, recomputed from
/// step-by-step decoding logits with a direct log-sum-exp.
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
            let z = model.step(&cross, &mut stream, &[pair.response[i]]).unwrap();
            let max = z[..v].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z[..v].iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            sum += lse - z[pair.response[i + 1] as usize];
        }
        total += sum / (m - 1) as f64;
    }
    total / batch.len() as f64
}

/// Every file under `dir`, keyed by relative path. Metric logs carry a
/// wall-clock column that is dropped before comparison.
pub fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let mut bytes = fs::read(&p).unwrap();
            if p.file_name().is_some_and(|n| n == "metrics.jsonl") {
                let text = String::from_utf8(bytes).unwrap();
                let stripped: Vec<String> = text
                    .lines()
                    .map(|l| {
                        let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                        v.as_object_mut().unwrap().remove("wall_time");
                        v.to_string()
                    })
                    .collect();
                bytes = stripped.join("\n").into_bytes();
            }
            out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), bytes);
        }
    }
    out
}

pub fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["searchtrace"];
    argv.extend_from_slice(args);
    searchtrace_cli::run(argv)
}
