//! CSV tables for `stats` and `report`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use searchtrace::bootstrap::IterationReport;
use searchtrace::dataset::{DatasetStats, Split, Variant};
use searchtrace::eval::{histogram, EvalReport, SUMMARY_FILE};

pub const RESULTS_HEADER: &str = "name,solved_pct,optimal_pct,swc,ilr_on_solved,ilr_on_optimal";
pub const HISTOGRAM_HEADER: &str = "name,bin_start,count";
pub const SCATTER_HEADER: &str = "name,task_id,optimal_cost,reference_trace,model_trace";
pub const ITERATION_HEADER: &str = "run,iteration,tasks,adopted,adoption_rate,mean_old_len,mean_new_len,solved_pct,optimal_pct,swc,ilr_on_solved,ilr_on_optimal";
pub const STATS_HEADER: &str = "split,variant,field,count,min,p25,p50,p75,max,mean";

pub const RESULTS_FILE: &str = "results.csv";
pub const HISTOGRAM_FILE: &str = "avg_on_optimal_hist.csv";
pub const SCATTER_FILE: &str = "trace_scatter.csv";
pub const ITERATION_FILE: &str = "ilr_by_iteration.csv";

/// Settings of the `report` subcommand.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportRun {
    pub inputs: Vec<PathBuf>,
    pub histogram_bin: f64,
}

impl Default for ReportRun {
    fn default() -> Self {
        ReportRun {
            inputs: Vec::new(),
            histogram_bin: 10.0,
        }
    }
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Test => "test",
    }
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::SolutionOnly => "solution_only",
        Variant::SearchAugmented => "search_augmented",
    }
}

fn csv_writer(path: &Path, header: &str) -> Result<csv::Writer<fs::File>> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header.split(','))?;
    Ok(w)
}

pub fn write_stats(out: &Path, stats: &DatasetStats) -> Result<()> {
    fs::create_dir_all(out)?;
    let path = out.join("stats.json");
    let mut text = serde_json::to_string_pretty(stats)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    let mut w = csv_writer(&out.join("stats.csv"), STATS_HEADER)?;
    for g in &stats.groups {
        for (field, s) in [("trace_len", &g.trace_len), ("plan_len", &g.plan_len), ("response_len", &g.response_len)] {
            w.write_record([
                split_name(g.split).to_string(),
                variant_name(g.variant).to_string(),
                field.to_string(),
                s.count.to_string(),
                s.min.to_string(),
                s.p25.to_string(),
                s.p50.to_string(),
                s.p75.to_string(),
                s.max.to_string(),
                s.mean.to_string(),
            ])?;
            println!(
                "{:5} {:16} {:12} n={} min={} median={} max={} mean={:.1}",
                split_name(g.split),
                variant_name(g.variant),
                field,
                s.count,
                s.min,
                s.p50,
                s.max,
                s.mean
            );
        }
    }
    w.flush()?;
    Ok(())
}

/// An input directory: one evaluation report, or a bootstrap run with one
/// report per iteration.
enum Input {
    Eval(EvalReport),
    Bootstrap { name: String, rounds: Vec<(IterationReport, EvalReport)> },
}

fn load_input(dir: &Path) -> Result<Input> {
    if dir.join(SUMMARY_FILE).is_file() {
        return Ok(Input::Eval(EvalReport::load(dir)?));
    }
    let mut rounds = Vec::new();
    for r in 0.. {
        let path = dir.join(format!("iteration-{r}.json"));
        if !path.is_file() {
            break;
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let it: IterationReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let eval = EvalReport::load(&dir.join(format!("iteration-{r}")).join("eval"))?;
        rounds.push((it, eval));
    }
    if rounds.is_empty() {
        anyhow::bail!("{} holds neither an evaluation report nor bootstrap iterations", dir.display());
    }
    let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Input::Bootstrap { name, rounds })
}

pub fn write_report(run: &ReportRun, out: &Path) -> Result<()> {
    let inputs = run.inputs.iter().map(|p| load_input(p)).collect::<Result<Vec<_>>>()?;
    let mut evals: Vec<(String, &EvalReport)> = Vec::new();
    let mut iterations: Vec<(&str, &IterationReport)> = Vec::new();
    for input in &inputs {
        match input {
            Input::Eval(r) => evals.push((r.name.clone(), r)),
            Input::Bootstrap { name, rounds } => {
                for (it, r) in rounds {
                    evals.push((format!("{name}/iteration-{}", it.iteration), r));
                    iterations.push((name, it));
                }
            }
        }
    }
    fs::create_dir_all(out)?;
    let mut results = csv_writer(&out.join(RESULTS_FILE), RESULTS_HEADER)?;
    let mut hist = csv_writer(&out.join(HISTOGRAM_FILE), HISTOGRAM_HEADER)?;
    let mut scatter = csv_writer(&out.join(SCATTER_FILE), SCATTER_HEADER)?;
    for (name, r) in &evals {
        let s = &r.summary;
        results.write_record([
            name.clone(),
            s.solved_pct.to_string(),
            s.optimal_pct.to_string(),
            s.swc.to_string(),
            s.ilr_on_solved.to_string(),
            s.ilr_on_optimal.to_string(),
        ])?;
        println!(
            "{name}: solved {:.1}% optimal {:.1}% swc {:.3} ilr {:.3}/{:.3}",
            s.solved_pct, s.optimal_pct, s.swc, s.ilr_on_solved, s.ilr_on_optimal
        );
        let avgs: Vec<f64> = r.rows.iter().filter_map(|t| t.mean_trace_optimal).collect();
        for (b, c) in histogram(&avgs, run.histogram_bin) {
            hist.write_record([name.clone(), b.to_string(), c.to_string()])?;
        }
        for t in &r.rows {
            if let Some(m) = t.shortest_trace_optimal {
                scatter.write_record([name.clone(), t.task_id.clone(), t.optimal_cost.to_string(), t.reference_trace.to_string(), m.to_string()])?;
            }
        }
    }
    results.flush()?;
    hist.flush()?;
    scatter.flush()?;
    if !iterations.is_empty() {
        let mut w = csv_writer(&out.join(ITERATION_FILE), ITERATION_HEADER)?;
        for (name, it) in &iterations {
            let s = &it.eval;
            w.write_record([
                name.to_string(),
                it.iteration.to_string(),
                it.tasks.to_string(),
                it.adopted.to_string(),
                it.adoption_rate.to_string(),
                it.mean_old_len.to_string(),
                it.mean_new_len.to_string(),
                s.solved_pct.to_string(),
                s.optimal_pct.to_string(),
                s.swc.to_string(),
                s.ilr_on_solved.to_string(),
                s.ilr_on_optimal.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}
