//! `searchtrace` command line: dataset generation, statistics, training,
//! evaluation, bootstrapping and report tables.
//!
//! Every subcommand resolves its settings from built-in defaults, an
//! optional `--config` TOML file, dedicated flags and `--set key=value`
//! overrides (in that order), then writes the result to
//! `<out>/resolved_config.toml`. Passing that file back with `--config`
//! reruns the same job.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use searchtrace::astar::SearchMode;
use searchtrace::bootstrap::{bootstrap_loop, BootstrapConfig};
use searchtrace::dataset::{build_dataset, dataset_stats, slice_dataset, Dataset, DatasetConfig, Split, Variant};
use searchtrace::eval::{evaluate, EvalConfig, EvalReport, OracleReplay, ResponseModel, TransformerSampler};
use searchtrace::grid::TaskKind;
use searchtrace::model::ModelConfig;
use searchtrace::train::{initial_checkpoint, pairs_from_examples, train_from, Checkpoint, Control, TrainConfig, TrainOutput};

mod report;

pub use report::{ReportRun, RESULTS_HEADER};

pub const SEED_ENV: &str = "SEARCHTRACE_SEED";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Parser, Debug)]
#[command(name = "searchtrace", version, about = "Search-trace datasets, Transformer training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML file with settings for this subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a setting, e.g. `--set train.peak_lr=3e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory, created if absent.
    #[arg(long, short, global = true, default_value = "out")]
    out: PathBuf,
    /// Global seed; falls back to SEARCHTRACE_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a task dataset with A* traces.
    GenDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kind: Option<TaskKind>,
        #[arg(long)]
        size: Option<i32>,
        /// `det` or `nondet`.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<SearchMode>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        #[arg(long)]
        max_tokens: Option<usize>,
    },
    /// Length statistics of a dataset.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train (or resume) a model on one dataset variant.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
        /// First N training tasks after sorting by task id.
        #[arg(long)]
        train_tasks: Option<usize>,
        /// `tiny`, `15M`, `46M`, `175M` or `747M`.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample a model on a dataset split and score the plans.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        n_samples: Option<usize>,
        /// Comma-separated subset of solved,optimal,swc,ilr,avg-optimal,exact-match.
        #[arg(long, value_delimiter = ',')]
        metric: Vec<Metric>,
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        max_len: Option<usize>,
        /// `transformer` or `astar` (replays A* instead of a model).
        #[arg(long)]
        sampler: Option<SamplerKind>,
        /// Evaluate only the first N tasks.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        name: Option<String>,
    },
    /// Iterated trace shortening and fine-tuning.
    Bootstrap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Merge evaluation outputs into CSV tables.
    Report {
        #[command(flatten)]
        common: Common,
        /// Evaluation or bootstrap output directories.
        #[arg(long = "input", short)]
        inputs: Vec<PathBuf>,
    },
}

fn parse_mode(s: &str) -> std::result::Result<SearchMode, String> {
    match s {
        "det" | "deterministic" => Ok(SearchMode::Deterministic),
        "nondet" | "non_deterministic" | "nondeterministic" => Ok(SearchMode::NonDeterministic),
        _ => Err(format!("unknown mode {s:?}; expected det or nondet")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Transformer,
    Astar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Solved,
    Optimal,
    Swc,
    Ilr,
    AvgOptimal,
    ExactMatch,
}

/// Marks errors that should exit with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Settings of the `stats` subcommand.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsRun {
    pub dataset: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub preset: String,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub head_dim: Option<usize>,
    pub rope_base: Option<f64>,
    pub max_seq_len: Option<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            preset: "tiny".into(),
            layers: None,
            heads: None,
            head_dim: None,
            rope_base: None,
            max_seq_len: None,
        }
    }
}

impl ModelSpec {
    pub fn resolve(&self, vocab_size: usize) -> searchtrace::Result<ModelConfig> {
        let mut c = ModelConfig::preset(&self.preset, vocab_size)?;
        c.layers = self.layers.unwrap_or(c.layers);
        c.heads = self.heads.unwrap_or(c.heads);
        c.head_dim = self.head_dim.unwrap_or(c.head_dim);
        c.rope_base = self.rope_base.unwrap_or(c.rope_base);
        c.max_seq_len = self.max_seq_len.unwrap_or(c.max_seq_len);
        c.validate()?;
        Ok(c)
    }
}

/// Settings of the `train` subcommand.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRun {
    pub dataset: PathBuf,
    pub variant: Variant,
    pub train_tasks: Option<usize>,
    pub resume: Option<PathBuf>,
    pub model: ModelSpec,
    pub train: TrainConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        TrainRun {
            dataset: PathBuf::new(),
            variant: Variant::SearchAugmented,
            train_tasks: None,
            resume: None,
            model: ModelSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Settings of the `eval` subcommand.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalRun {
    pub checkpoint: Option<PathBuf>,
    pub dataset: PathBuf,
    pub split: Split,
    pub variant: Variant,
    pub sampler: SamplerKind,
    pub limit: Option<usize>,
    pub name: Option<String>,
    pub metrics: Vec<Metric>,
    pub eval: EvalConfig,
}

impl Default for EvalRun {
    fn default() -> Self {
        EvalRun {
            checkpoint: None,
            dataset: PathBuf::new(),
            split: Split::Test,
            variant: Variant::SearchAugmented,
            sampler: SamplerKind::Transformer,
            limit: None,
            name: None,
            metrics: vec![Metric::Solved, Metric::Optimal, Metric::Swc, Metric::Ilr, Metric::AvgOptimal],
            eval: EvalConfig::default(),
        }
    }
}

/// Settings of the `bootstrap` subcommand.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapRun {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub bootstrap: BootstrapConfig,
}

/// Layered settings: defaults, config file, flags, `--set`.
struct Layers {
    table: toml::Table,
    file_keys: toml::Table,
}

impl Layers {
    fn new<T: Serialize + Default>(file: Option<&Path>) -> Result<Layers> {
        let table = toml::Table::try_from(T::default()).context("serializing defaults")?;
        let file_keys = match file {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .map_err(|e| usage(format!("config {}: {}", p.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        let mut layers = Layers { table, file_keys: toml::Table::new() };
        merge(&mut layers.table, file_keys.clone());
        layers.file_keys = file_keys;
        Ok(layers)
    }

    fn set(&mut self, key: &str, value: toml::Value) {
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().expect("split yields one part");
        let mut t = &mut self.table;
        for p in parts {
            t = t
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .expect("intermediate keys are tables");
        }
        t.insert(last.to_string(), value);
    }

    fn in_file(&self, key: &str) -> bool {
        let mut t = &self.file_keys;
        let mut parts = key.split('.').peekable();
        while let Some(p) = parts.next() {
            match t.get(p) {
                Some(toml::Value::Table(inner)) if parts.peek().is_some() => t = inner,
                Some(_) if parts.peek().is_none() => return true,
                _ => return false,
            }
        }
        false
    }

    fn flag<V: Into<toml::Value>>(&mut self, key: &str, value: Option<V>) {
        if let Some(v) = value {
            self.set(key, v.into());
        }
    }

    fn overrides(&mut self, sets: &[String]) -> Result<()> {
        for s in sets {
            let (k, v) = s.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
            if k.is_empty() || k.split('.').any(str::is_empty) {
                return Err(usage(format!("--set has an empty key in {s:?}")));
            }
            let value = format!("v = {v}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(v.to_string()));
            self.set(k, value);
        }
        Ok(())
    }

    /// `--seed` wins; SEARCHTRACE_SEED only fills a seed the config file
    /// leaves unset.
    fn seed(&mut self, key: &str, flag: Option<u64>) -> Result<()> {
        let s = match flag {
            Some(s) => s,
            None if self.in_file(key) => return Ok(()),
            None => match std::env::var(SEED_ENV) {
                Ok(v) => v.trim().parse().map_err(|_| usage(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?,
                Err(_) => return Ok(()),
            },
        };
        let v = i64::try_from(s).map_err(|_| usage(format!("seed {s} does not fit a 63-bit integer")))?;
        self.set(key, toml::Value::Integer(v));
        Ok(())
    }

    fn finish<T: DeserializeOwned>(self) -> Result<T> {
        T::deserialize(self.table).map_err(|e| usage(format!("invalid settings: {}", e.message().trim())))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn write_snapshot<T: Serialize>(out: &Path, resolved: &T) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let text = toml::to_string(resolved).context("serializing resolved config")?;
    let path = out.join(RESOLVED_CONFIG);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(usage(format!("missing --{what}")));
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status: 0 on success, 1 on a pipeline error, 2 on a usage
/// error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            let line = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {line}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::GenDataset { common, .. }
        | Command::Stats { common, .. }
        | Command::Train { common, .. }
        | Command::Eval { common, .. }
        | Command::Bootstrap { common, .. }
        | Command::Report { common, .. } => common,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let c = common(&cli.command).clone();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = c.workers {
        if n == 0 {
            return Err(usage("--workers must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("starting worker pool")?;
    pool.install(|| execute(cli.command, &c))
}

fn execute(command: Command, c: &Common) -> Result<()> {
    match command {
        Command::GenDataset {
            kind,
            size,
            mode,
            train,
            test,
            max_tokens,
            ..
        } => {
            let mut l = Layers::new::<DatasetConfig>(c.config.as_deref())?;
            l.flag("kind", kind.map(|k| k.to_string()));
            l.flag("size", size.map(i64::from));
            l.flag("mode", mode.map(mode_name));
            l.flag("n_train", train.map(|v| v as i64));
            l.flag("n_test", test.map(|v| v as i64));
            l.flag("max_tokens", max_tokens.map(|v| v as i64));
            l.seed("seed", c.seed)?;
            l.overrides(&c.overrides)?;
            let cfg: DatasetConfig = l.finish()?;
            write_snapshot(&c.out, &cfg)?;
            let ds = build_dataset(&cfg)?;
            ds.save(&c.out)?;
            println!(
                "wrote {} train / {} test examples ({} tasks drawn) to {}",
                ds.train.len(),
                ds.test.len(),
                ds.manifest.tasks_drawn,
                c.out.display()
            );
            Ok(())
        }
        Command::Stats { dataset, .. } => {
            let mut l = Layers::new::<StatsRun>(c.config.as_deref())?;
            l.flag("dataset", dataset.map(path_value));
            l.overrides(&c.overrides)?;
            let run: StatsRun = l.finish()?;
            require(&run.dataset, "dataset")?;
            write_snapshot(&c.out, &run)?;
            let ds = Dataset::load(&run.dataset)?;
            report::write_stats(&c.out, &dataset_stats(&ds))
        }
        Command::Train {
            dataset,
            variant,
            train_tasks,
            preset,
            steps,
            lr,
            batch_size,
            resume,
            ..
        } => {
            let mut l = Layers::new::<TrainRun>(c.config.as_deref())?;
            l.flag("dataset", dataset.map(path_value));
            l.flag("variant", variant.map(variant_name));
            l.flag("train_tasks", train_tasks.map(|v| v as i64));
            l.flag("resume", resume.map(path_value));
            l.flag("model.preset", preset);
            l.flag("train.total_steps", steps.map(|v| v as i64));
            l.flag("train.peak_lr", lr);
            l.flag("train.batch_size", batch_size.map(|v| v as i64));
            l.seed("train.seed", c.seed)?;
            l.overrides(&c.overrides)?;
            let run: TrainRun = l.finish()?;
            require(&run.dataset, "dataset")?;
            write_snapshot(&c.out, &run)?;
            run_train(&run, &c.out)
        }
        Command::Eval {
            checkpoint,
            dataset,
            n_samples,
            metric,
            split,
            variant,
            max_len,
            sampler,
            limit,
            name,
            ..
        } => {
            let mut l = Layers::new::<EvalRun>(c.config.as_deref())?;
            l.flag("checkpoint", checkpoint.map(path_value));
            l.flag("dataset", dataset.map(path_value));
            l.flag("eval.n_samples", n_samples.map(|v| v as i64));
            if !metric.is_empty() {
                let names: Vec<toml::Value> = metric.iter().map(|m| metric_name(*m).into()).collect();
                l.set("metrics", toml::Value::Array(names));
                l.set("eval.exact_match", metric.contains(&Metric::ExactMatch).into());
            }
            l.flag("split", split.map(|s| if s == Split::Train { "train" } else { "test" }));
            l.flag("variant", variant.map(variant_name));
            l.flag("eval.max_len", max_len.map(|v| v as i64));
            l.flag("sampler", sampler.map(|s| if s == SamplerKind::Astar { "astar" } else { "transformer" }));
            l.flag("limit", limit.map(|v| v as i64));
            l.flag("name", name);
            l.seed("eval.seed", c.seed)?;
            l.overrides(&c.overrides)?;
            let run: EvalRun = l.finish()?;
            require(&run.dataset, "dataset")?;
            write_snapshot(&c.out, &run)?;
            run_eval(&run, &c.out)
        }
        Command::Bootstrap {
            checkpoint,
            dataset,
            iterations,
            samples,
            steps,
            ..
        } => {
            let mut l = Layers::new::<BootstrapRun>(c.config.as_deref())?;
            l.flag("checkpoint", checkpoint.map(path_value));
            l.flag("dataset", dataset.map(path_value));
            l.flag("bootstrap.iterations", iterations.map(|v| v as i64));
            l.flag("bootstrap.samples", samples.map(|v| v as i64));
            l.flag("bootstrap.finetune_steps", steps.map(|v| v as i64));
            l.seed("bootstrap.seed", c.seed)?;
            l.overrides(&c.overrides)?;
            let run: BootstrapRun = l.finish()?;
            require(&run.checkpoint, "checkpoint")?;
            require(&run.dataset, "dataset")?;
            write_snapshot(&c.out, &run)?;
            let ckpt = Checkpoint::load(&run.checkpoint)?;
            let ds = Dataset::load(&run.dataset)?;
            let out = bootstrap_loop(&ckpt, &ds, &run.bootstrap, Some(&c.out))?;
            for r in &out.reports {
                println!(
                    "iteration {}: adopted {}/{} mean length {:.1} -> {:.1} optimal {:.1}% ilr(optimal) {:.3}",
                    r.iteration, r.adopted, r.tasks, r.mean_old_len, r.mean_new_len, r.eval.optimal_pct, r.eval.ilr_on_optimal
                );
            }
            Ok(())
        }
        Command::Report { inputs, .. } => {
            let mut l = Layers::new::<ReportRun>(c.config.as_deref())?;
            if !inputs.is_empty() {
                l.set("inputs", toml::Value::Array(inputs.into_iter().map(path_value).collect()));
            }
            l.overrides(&c.overrides)?;
            let run: ReportRun = l.finish()?;
            if run.inputs.is_empty() {
                bail!(usage("report needs at least one --input"));
            }
            write_snapshot(&c.out, &run)?;
            report::write_report(&run, &c.out)
        }
    }
}

fn path_value(p: PathBuf) -> toml::Value {
    toml::Value::String(p.to_string_lossy().into_owned())
}

fn mode_name(m: SearchMode) -> &'static str {
    match m {
        SearchMode::Deterministic => "deterministic",
        SearchMode::NonDeterministic => "non_deterministic",
    }
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::SolutionOnly => "solution_only",
        Variant::SearchAugmented => "search_augmented",
    }
}

fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::Solved => "solved",
        Metric::Optimal => "optimal",
        Metric::Swc => "swc",
        Metric::Ilr => "ilr",
        Metric::AvgOptimal => "avg-optimal",
        Metric::ExactMatch => "exact-match",
    }
}

fn run_train(run: &TrainRun, out: &Path) -> Result<()> {
    let ds = Dataset::load(&run.dataset)?;
    let mut examples = ds.examples(Split::Train, run.variant);
    if let Some(n) = run.train_tasks {
        examples = slice_dataset(&examples, n)?;
    }
    let data = pairs_from_examples(&examples, &ds.vocab)?;
    let start = match &run.resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            if ckpt.vocab != ds.vocab {
                bail!("checkpoint {} was trained with a different vocabulary", p.display());
            }
            ckpt
        }
        None => initial_checkpoint(&run.model.resolve(ds.vocab.len())?, &ds.vocab, &run.train)?,
    };
    let from = start.step;
    let output = TrainOutput { dir: Some(out.to_path_buf()) };
    let outcome = train_from(start, &data, &run.train, &output, |_, _| Control::Continue)?;
    match outcome.log.last() {
        Some(r) => println!("trained steps {}..={} on {} examples; final loss {:.5}", from + 1, r.step, data.len(), r.loss),
        None => println!("checkpoint already at step {from}; nothing to do"),
    }
    Ok(())
}

fn run_eval(run: &EvalRun, out: &Path) -> Result<()> {
    let ds = Dataset::load(&run.dataset)?;
    let mut examples = ds.examples(run.split, run.variant);
    if let Some(n) = run.limit {
        examples.truncate(n);
    }
    let name = run.name.clone().unwrap_or_else(|| out.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    let ckpt;
    let report: EvalReport = match run.sampler {
        SamplerKind::Transformer => {
            let path = run.checkpoint.as_ref().ok_or_else(|| usage("missing --checkpoint"))?;
            ckpt = Checkpoint::load(path)?;
            let sampler = TransformerSampler::new(&ckpt.model, &ckpt.vocab)?;
            if ckpt.vocab != ds.vocab {
                bail!("checkpoint and dataset vocabularies differ");
            }
            evaluate(&name, &sampler as &dyn ResponseModel, &ds, &examples, &run.eval)?
        }
        SamplerKind::Astar => {
            let oracle = OracleReplay {
                kind: ds.manifest.kind,
                size: ds.manifest.size,
                mode: SearchMode::NonDeterministic,
                solution_only: run.variant == Variant::SolutionOnly,
            };
            evaluate(&name, &oracle, &ds, &examples, &run.eval)?
        }
    };
    report.save(out)?;
    let s = &report.summary;
    let mut parts = vec![format!("{} tasks x {} samples", s.n_tasks, s.n_samples)];
    for m in &run.metrics {
        parts.push(match m {
            Metric::Solved => format!("solved {:.1}%", s.solved_pct),
            Metric::Optimal => format!("optimal {:.1}%", s.optimal_pct),
            Metric::Swc => format!("swc {:.4}", s.swc),
            Metric::Ilr => format!("ilr(solved) {:.4} ilr(optimal) {:.4}", s.ilr_on_solved, s.ilr_on_optimal),
            Metric::AvgOptimal => match s.avg_on_optimal_p50 {
                Some(m) => format!("avg-on-optimal median {m:.1}"),
                None => "avg-on-optimal n/a".into(),
            },
            Metric::ExactMatch => format!("exact-match {:.4}", s.exact_match.unwrap_or(0.0)),
        });
    }
    println!("{}", parts.join(", "));
    Ok(())
}
