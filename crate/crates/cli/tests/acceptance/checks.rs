use std::collections::HashMap;
use std::path::Path;

use searchtrace::astar::{oracle_shortest_cost, run_astar, EventKind, SearchMode, TraceEvent};
use searchtrace::bootstrap::{build_short_dataset, finetune, Origin, TrainSplit};
use searchtrace::dataset::{build_dataset, Dataset, DatasetConfig, Split, Variant};
use searchtrace::eval::{evaluate, exact_match_eval, ilr, swc, EvalConfig, OracleReplay, TransformerSampler};
use searchtrace::grid::{generate_maze, generate_sokoban, GridCoord, MazeTask, PlanVerdict, Task, TaskKind};
use searchtrace::model::ModelConfig;
use searchtrace::tokens::{
    build_vocabulary, decode_prompt, decode_response_ids, encode_prompt, encode_response, prompt_tokens, trace_token_count, ParsedEvent,
};
use searchtrace::train::{initial_checkpoint, pairs_from_examples, train, train_from, Checkpoint, Control, TrainConfig, TrainOutput};

use crate::support::{batch_loss, cli, cpu_seconds, ensure, naive_loss, random_batch, random_model, rng, tree};
use crate::Outcome;

fn check_plan(task: &Task, mode: SearchMode, seed: u64, oracle: u32) -> Outcome {
    let r = run_astar(task, mode, seed).map_err(|e| e.to_string())?;
    ensure!(r.plan.cost() == oracle && r.optimal_cost == oracle, "cost {} vs oracle {oracle} ({mode:?}, seed {seed})", r.plan.cost());
    ensure!(task.validate_plan(&r.plan, oracle).is_optimal(), "plan does not validate ({mode:?}, seed {seed})");
    Ok(String::new())
}

pub fn astar_optimality() -> Outcome {
    let start = cpu_seconds();
    let mut runs = 0;
    for i in 0..1000u64 {
        let side = 5 + (i % 6) as i32;
        let task = Task::Maze(generate_maze(side, side, i).map_err(|e| e.to_string())?);
        let oracle = oracle_shortest_cost(&task).map_err(|e| e.to_string())?;
        check_plan(&task, SearchMode::Deterministic, 0, oracle)?;
        for s in 0..8 {
            check_plan(&task, SearchMode::NonDeterministic, s, oracle)?;
        }
        runs += 9;
    }
    for i in 0..100u64 {
        let task = Task::Sokoban(generate_sokoban(i).map_err(|e| e.to_string())?);
        let oracle = oracle_shortest_cost(&task).map_err(|e| e.to_string())?;
        check_plan(&task, SearchMode::Deterministic, 0, oracle)?;
        for s in 0..8 {
            check_plan(&task, SearchMode::NonDeterministic, s, oracle)?;
        }
        runs += 9;
    }
    let cpu = cpu_seconds() - start;
    ensure!(cpu < 120.0, "took {cpu:.1}s cpu, limit 120s");
    Ok(format!("{runs} searches optimal on 1000 mazes and 100 levels"))
}

pub fn reference_trace() -> Outcome {
    use EventKind::*;
    let c = GridCoord::new;
    let maze = MazeTask::new(3, 3, [c(1, 2), c(2, 0)], c(0, 2), c(1, 0)).map_err(|e| e.to_string())?;
    let r = run_astar(&maze, SearchMode::Deterministic, 0).map_err(|e| e.to_string())?;
    let plan: Vec<(i32, i32)> = r.plan.steps.iter().map(|p| (p.x, p.y)).collect();
    ensure!(plan == [(0, 2), (0, 1), (0, 0), (1, 0)], "plan {plan:?}");
    let ev = |kind, x, y, cost, heuristic| TraceEvent { kind, state: c(x, y), cost, heuristic };
    let expected = vec![
        ev(Create, 0, 2, 0, 3),
        ev(Close, 0, 2, 0, 3),
        ev(Create, 0, 1, 1, 2),
        ev(Close, 0, 1, 1, 2),
        ev(Create, 0, 0, 2, 1),
        ev(Create, 1, 1, 2, 1),
        ev(Close, 0, 0, 2, 1),
        ev(Create, 1, 0, 3, 0),
        ev(Close, 1, 0, 3, 0),
    ];
    let key = |e: &TraceEvent<GridCoord>| (e.kind == Close, e.state.x, e.state.y, e.cost, e.heuristic);
    let mut got: Vec<_> = r.trace.events.iter().map(key).collect();
    let mut want: Vec<_> = expected.iter().map(key).collect();
    let in_order = got == want;
    got.sort();
    want.sort();
    ensure!(got == want, "event multiset differs: {:?}", r.trace.events);
    ensure!(in_order, "event order differs from the (f, h, insertion) rule: {:?}", r.trace.events);
    Ok("9 events and 4-step plan match".into())
}

fn round_trip(task: &Task, mode: SearchMode, seed: u64) -> Result<usize, String> {
    let kind = task.kind();
    let side = task.side();
    let vocab = build_vocabulary(kind, side as u16, 2000);
    let prompt = encode_prompt(task, &vocab).map_err(|e| e.to_string())?;
    let ids = vocab.ids(&prompt.tokens).map_err(|e| e.to_string())?;
    let back = vocab.tokens(&ids).map_err(|e| e.to_string())?;
    let decoded = decode_prompt(&back, kind, side, side).map_err(|e| e.to_string())?;
    ensure!(&decoded == task && prompt_tokens(&decoded) == prompt.tokens, "prompt round trip failed");
    let r = run_astar(task, mode, seed).map_err(|e| e.to_string())?;
    for with_trace in [false, true] {
        let trace = with_trace.then_some(&r.trace);
        let resp = encode_response(trace, &r.plan, task, &vocab).map_err(|e| e.to_string())?;
        let ids = vocab.ids(&resp.tokens).map_err(|e| e.to_string())?;
        let parsed = decode_response_ids(&ids, &vocab, kind).map_err(|e| e.to_string())?;
        ensure!(parsed.plan == r.plan, "plan round trip failed");
        let events: Vec<ParsedEvent> = match trace {
            Some(t) => t.events.iter().map(|e| ParsedEvent::project(e, task)).collect(),
            None => Vec::new(),
        };
        ensure!(parsed.events == events, "trace round trip failed");
        let expected_len = if with_trace { trace_token_count(&r.trace, task) } else { 0 };
        ensure!(parsed.trace_len == expected_len, "trace length {} vs {expected_len}", parsed.trace_len);
    }
    Ok(2)
}

pub fn tokenizer_round_trip() -> Outcome {
    let mut examples = 0;
    for i in 0..2500u64 {
        let side = 5 + (i % 6) as i32;
        let task = Task::Maze(generate_maze(side, side, 10_000 + i).map_err(|e| e.to_string())?);
        let mode = if i % 2 == 0 { SearchMode::Deterministic } else { SearchMode::NonDeterministic };
        examples += round_trip(&task, mode, i)?;
    }
    for i in 0..2500u64 {
        let task = Task::Sokoban(generate_sokoban(10_000 + i).map_err(|e| e.to_string())?);
        let mode = if i % 2 == 0 { SearchMode::Deterministic } else { SearchMode::NonDeterministic };
        examples += round_trip(&task, mode, i)?;
    }
    ensure!(examples == 10_000, "covered {examples} examples");
    Ok(format!("{examples} examples, zero failures"))
}

pub fn gradient_check() -> Outcome {
    let start = cpu_seconds();
    let config = ModelConfig::new(2, 2, 8, 12);
    let model = random_model(&config, 3);
    let batch = random_batch(&mut rng(4), 12, 3);
    let (_, grad) = model.loss_and_grad(&batch, 0).map_err(|e| e.to_string())?;
    let mut r = rng(5);
    let mut m = model.clone();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let i = rand::Rng::gen_range(&mut r, 0..m.params.len());
        let orig = m.params[i];
        m.params[i] = orig + eps;
        let up = batch_loss(&m, &batch);
        m.params[i] = orig - eps;
        let down = batch_loss(&m, &batch);
        m.params[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let scale = grad[i].abs().max(numeric.abs());
        let rel = if scale == 0.0 { 0.0 } else { (grad[i] - numeric).abs() / scale };
        ensure!(rel <= 1e-4, "parameter {i}: analytic {} numeric {numeric} relative error {rel:.2e}", grad[i]);
        worst = worst.max(rel);
    }
    let cpu = cpu_seconds() - start;
    ensure!(cpu < 300.0, "took {cpu:.1}s cpu, limit 300s");
    Ok(format!("200 probes, worst relative error {worst:.2e}"))
}

pub fn loss_law() -> Outcome {
    let config = ModelConfig::new(2, 2, 8, 12);
    let mut worst: f64 = 0.0;
    for b in 0..100u64 {
        let model = random_model(&config, 100 + b);
        let batch = random_batch(&mut rng(200 + b), 12, 1 + (b % 4) as usize);
        let (loss, _) = model.loss_and_grad(&batch, b as usize).map_err(|e| e.to_string())?;
        let naive = naive_loss(&model, &batch);
        let rel = (loss - naive).abs() / naive.abs();
        ensure!(rel <= 1e-10, "batch {b}: trainer {loss} naive {naive}");
        worst = worst.max(rel);
    }
    let mut model = random_model(&config, 7);
    let (out, w, v) = (model.layout.out, model.width(), model.vocab_size());
    model.params[out..out + w * v].iter_mut().for_each(|p| *p = 0.0);
    let batch = random_batch(&mut rng(8), 12, 4);
    let (loss, _) = model.loss_and_grad(&batch, 0).map_err(|e| e.to_string())?;
    let gap = (loss - (v as f64).ln()).abs();
    ensure!(gap <= 1e-6, "uniform logits give {loss}, ln V = {}", (v as f64).ln());
    Ok(format!("100 batches, worst relative gap {worst:.1e}; uniform loss off by {gap:.1e}"))
}

pub fn overfit() -> Outcome {
    let start = cpu_seconds();
    let ds = build_dataset(&DatasetConfig {
        kind: TaskKind::Maze,
        size: 4,
        mode: SearchMode::Deterministic,
        n_train: 50,
        n_test: 1,
        max_tokens: 10_000,
        seed: 7,
    })
    .map_err(|e| e.to_string())?;
    let examples = ds.examples(Split::Train, Variant::SearchAugmented);
    ensure!(examples.len() == 50, "{} training sequences", examples.len());
    let data = pairs_from_examples(&examples, &ds.vocab).map_err(|e| e.to_string())?;
    let max_len = examples.iter().map(|e| e.response.len()).max().unwrap() + 16;
    let mut reached = Vec::new();
    for seed in 0..3 {
        let cfg = TrainConfig {
            warmup_steps: 100,
            total_steps: 3000,
            seed,
            ..TrainConfig::default()
        };
        let start_ckpt = initial_checkpoint(&ModelConfig::tiny(ds.vocab.len()), &ds.vocab, &cfg).map_err(|e| e.to_string())?;
        let mut hit = None;
        train_from(start_ckpt, &data, &cfg, &TrainOutput::default(), |m, r| {
            if r.step % 100 == 0 {
                let s = TransformerSampler::new(m, &ds.vocab).unwrap();
                if exact_match_eval(&s, &examples, max_len).unwrap() == 1.0 {
                    hit = Some(r.step);
                    return Control::Stop;
                }
            }
            Control::Continue
        })
        .map_err(|e| e.to_string())?;
        ensure!(hit.is_some(), "seed {seed} did not reach 100% exact match in 3000 steps");
        reached.push(hit.unwrap());
    }
    let cpu = cpu_seconds() - start;
    ensure!(cpu < 600.0, "took {cpu:.1}s cpu, limit 600s");
    Ok(format!("100% exact match at steps {reached:?}"))
}

/// Shared optimizer settings for the desk-scale comparison.
const COMPARISON_STEPS: u64 = 15_000;
const COMPARISON_LR: f64 = 3e-3;

pub fn variant_comparison() -> Outcome {
    let start = cpu_seconds();
    let mut rows = Vec::new();
    for seed in 0..3u64 {
        let ds = build_dataset(&DatasetConfig {
            kind: TaskKind::Maze,
            size: 5,
            mode: SearchMode::Deterministic,
            n_train: 5000,
            n_test: 200,
            max_tokens: 10_000,
            seed: 100 + seed,
        })
        .map_err(|e| e.to_string())?;
        let model = ModelConfig::tiny(ds.vocab.len());
        let cfg = TrainConfig {
            peak_lr: COMPARISON_LR,
            warmup_steps: 100,
            total_steps: COMPARISON_STEPS,
            batch_size: 16,
            seed,
            ..TrainConfig::default()
        };
        let eval_cfg = EvalConfig {
            n_samples: 64,
            seed,
            max_len: 1000,
            ..EvalConfig::default()
        };
        let mut score = HashMap::new();
        for variant in [Variant::SolutionOnly, Variant::SearchAugmented] {
            let data = pairs_from_examples(&ds.examples(Split::Train, variant), &ds.vocab).map_err(|e| e.to_string())?;
            let out = train(&data, &ds.vocab, &model, &cfg, &TrainOutput::default()).map_err(|e| e.to_string())?;
            let sampler = TransformerSampler::new(&out.checkpoint.model, &ds.vocab).map_err(|e| e.to_string())?;
            let test = ds.examples(Split::Test, variant);
            let report = evaluate("cmp", &sampler, &ds, &test, &eval_cfg).map_err(|e| e.to_string())?;
            score.insert(variant, report.summary.any_optimal());
        }
        rows.push((seed, score[&Variant::SearchAugmented], score[&Variant::SolutionOnly]));
    }
    let detail: Vec<String> = rows.iter().map(|(s, sa, so)| format!("seed {s}: {sa:.3} vs {so:.3}")).collect();
    let cpu = cpu_seconds() - start;
    ensure!(rows.iter().all(|(_, sa, so)| sa >= so), "search-augmented below solution-only: {}", detail.join("; "));
    ensure!(cpu < 7200.0, "took {cpu:.0}s cpu, target 7200s; {}", detail.join("; "));
    Ok(detail.join("; "))
}

fn ilr_on_optimal(ckpt: &Checkpoint, ds: &Dataset, cfg: &EvalConfig) -> Result<(f64, f64), String> {
    let sampler = TransformerSampler::new(&ckpt.model, &ckpt.vocab).map_err(|e| e.to_string())?;
    let test = ds.examples(Split::Test, Variant::SearchAugmented);
    let r = evaluate("boot", &sampler, ds, &test, cfg).map_err(|e| e.to_string())?;
    Ok((r.summary.ilr_on_optimal, r.summary.optimal_pct))
}

const BOOTSTRAP_PRETRAIN: u64 = 4000;
const BOOTSTRAP_FINETUNE: u64 = 2000;

pub fn bootstrap() -> Outcome {
    let mut rows = Vec::new();
    for seed in 0..3u64 {
        let ds = build_dataset(&DatasetConfig {
            kind: TaskKind::Maze,
            size: 4,
            mode: SearchMode::NonDeterministic,
            n_train: 1000,
            n_test: 100,
            max_tokens: 10_000,
            seed: 200 + seed,
        })
        .map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            peak_lr: COMPARISON_LR,
            warmup_steps: 200,
            total_steps: BOOTSTRAP_PRETRAIN,
            seed,
            ..TrainConfig::default()
        };
        let data = pairs_from_examples(&ds.examples(Split::Train, Variant::SearchAugmented), &ds.vocab).map_err(|e| e.to_string())?;
        let base = train(&data, &ds.vocab, &ModelConfig::tiny(ds.vocab.len()), &cfg, &TrainOutput::default())
            .map_err(|e| e.to_string())?
            .checkpoint;
        let eval_cfg = EvalConfig {
            n_samples: 64,
            seed,
            max_len: 2 * ds.manifest.max_response_len,
            ..EvalConfig::default()
        };
        let (before, opt_before) = ilr_on_optimal(&base, &ds, &eval_cfg)?;

        let sampler = TransformerSampler::new(&base.model, &base.vocab).map_err(|e| e.to_string())?;
        let short = build_short_dataset(&sampler, &base.vocab, TrainSplit::of(&ds), 32, seed).map_err(|e| e.to_string())?;
        let originals = ds.examples(Split::Train, Variant::SearchAugmented);
        for ((e, r), o) in short.examples.iter().zip(&short.records).zip(&originals) {
            ensure!(e.task_id == o.task_id && e.response.len() <= o.response.len(), "task {} grew", e.task_id);
            if r.origin == Origin::Model {
                let plan = searchtrace::tokens::decode_response(&e.response, TaskKind::Maze).map_err(|e| e.to_string())?.plan;
                let task = ds.task(e).map_err(|e| e.to_string())?;
                ensure!(
                    matches!(task.validate_plan(&plan, e.optimal_cost), PlanVerdict::Optimal(_)),
                    "adopted response for {} is not optimal",
                    e.task_id
                );
            }
        }
        let adopted = short.adopted();
        let shortened = short.into_dataset(&ds);
        ensure!(shortened.test == ds.test, "test split changed");

        let tuned = finetune(&base, &shortened, BOOTSTRAP_FINETUNE, &cfg, &TrainOutput::default()).map_err(|e| e.to_string())?;
        let (after, opt_after) = ilr_on_optimal(&tuned, &shortened, &eval_cfg)?;
        rows.push((seed, adopted, before, after, opt_before, opt_after));
    }
    let detail: Vec<String> = rows
        .iter()
        .map(|(s, a, b, f, ob, oa)| format!("seed {s}: adopted {a}/1000, ILR {b:.3} -> {f:.3} (optimal {ob:.0}% -> {oa:.0}%)"))
        .collect();
    ensure!(rows.iter().all(|r| r.3 >= r.2), "ILR-on-optimal decreased: {}", detail.join("; "));
    Ok(detail.join("; "))
}

pub fn metrics() -> Outcome {
    let s = swc(&[(4, 4, true), (8, 4, true)]);
    ensure!(s == 0.75, "SWC fixture gives {s}");
    let i = ilr(&[(10.0, 10.0, true), (10.0, 20.0, true)]);
    ensure!(i == 1.5, "ILR fixture gives {i}");
    let ds = build_dataset(&DatasetConfig {
        kind: TaskKind::Maze,
        size: 10,
        mode: SearchMode::NonDeterministic,
        n_train: 1,
        n_test: 50,
        max_tokens: 10_000,
        seed: 9,
    })
    .map_err(|e| e.to_string())?;
    let oracle = OracleReplay {
        kind: TaskKind::Maze,
        size: 10,
        mode: SearchMode::NonDeterministic,
        solution_only: false,
    };
    let test = ds.examples(Split::Test, Variant::SearchAugmented);
    ensure!(test.len() == 50, "{} test tasks", test.len());
    let r = evaluate("oracle", &oracle, &ds, &test, &EvalConfig { n_samples: 64, seed: 1, max_len: 100_000, ..EvalConfig::default() })
        .map_err(|e| e.to_string())?;
    let m = &r.summary;
    let detail = format!("fixtures 0.75/1.5; oracle any-optimal-64 {}, SWC {}, ILR-on-optimal {:.4}", m.any_optimal(), m.swc, m.ilr_on_optimal);
    ensure!(m.any_optimal() == 1.0 && m.swc == 1.0, "{detail}");
    ensure!((0.95..=1.05).contains(&m.ilr_on_optimal), "ILR-on-optimal outside [0.95, 1.05]: {detail}");
    Ok(detail)
}

fn stage_twice(name: &str, root: &Path, args: &dyn Fn(&Path) -> Vec<String>) -> Result<(), String> {
    let (a, b) = (root.join("run-a").join(name), root.join("run-b").join(name));
    for out in [&a, &b] {
        let owned = args(out);
        let argv: Vec<&str> = owned.iter().map(String::as_str).collect();
        let code = cli(&argv);
        ensure!(code == 0, "{name} exited with {code}");
    }
    let (ta, tb) = (tree(&a), tree(&b));
    ensure!(!ta.is_empty(), "{name} wrote nothing");
    for (path, bytes) in &ta {
        ensure!(tb.get(path) == Some(bytes), "{name}: {} differs between reruns", path.display());
    }
    ensure!(ta.len() == tb.len(), "{name}: file sets differ");
    Ok(())
}

pub fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let out = |o: &Path| o.to_string_lossy().into_owned();
    let v = |xs: &[&str], o: &Path| {
        let mut a: Vec<String> = xs.iter().map(|s| s.to_string()).collect();
        a.push("--out".into());
        a.push(out(o));
        a
    };
    stage_twice("data", root, &|o| v(&["gen-dataset", "--size", "4", "--mode", "nondet", "--train", "40", "--test", "8", "--seed", "3"], o))?;
    let data = p("run-a/data");
    stage_twice("stats", root, &|o| v(&["stats", "--dataset", &data], o))?;
    stage_twice("train", root, &|o| {
        v(&["train", "--dataset", &data, "--steps", "30", "--batch-size", "4", "--seed", "1", "--set", "train.warmup_steps=5", "--set", "train.checkpoint_interval=10"], o)
    })?;
    let ckpt = format!("{}/checkpoint.bin", p("run-a/train"));
    stage_twice("eval", root, &|o| {
        v(&["eval", "--checkpoint", &ckpt, "--dataset", &data, "--n-samples", "4", "--max-len", "200", "--seed", "2", "--metric", "solved,optimal,exact-match"], o)
    })?;
    stage_twice("bootstrap", root, &|o| {
        v(
            &[
                "bootstrap", "--checkpoint", &ckpt, "--dataset", &data, "--iterations", "2", "--samples", "3", "--steps", "10", "--seed", "4",
                "--set", "bootstrap.eval.n_samples=3", "--set", "bootstrap.eval.max_len=200", "--set", "bootstrap.train.batch_size=4",
                "--set", "bootstrap.train.warmup_steps=2",
            ],
            o,
        )
    })?;
    let (ev, boot) = (p("run-a/eval"), p("run-a/bootstrap"));
    stage_twice("report", root, &|o| v(&["report", "-i", &ev, "-i", &boot], o))?;
    // training determinism must not depend on the worker count
    let threads = root.join("one-worker").join("train");
    let owned = v(&["train", "--dataset", &data, "--steps", "30", "--batch-size", "4", "--seed", "1", "--set", "train.warmup_steps=5", "--set", "train.checkpoint_interval=10", "--workers", "1"], &threads);
    let argv: Vec<&str> = owned.iter().map(String::as_str).collect();
    ensure!(cli(&argv) == 0, "single-worker training failed");
    ensure!(
        std::fs::read(threads.join("checkpoint.bin")).ok() == std::fs::read(root.join("run-a/train/checkpoint.bin")).ok(),
        "checkpoint depends on the worker count"
    );
    Ok("gen-dataset, stats, train, eval, bootstrap and report reruns identical".into())
}

