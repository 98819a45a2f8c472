mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use ss4rec::audit::{run_suite, AuditOptions, Suite};
use ss4rec::data::{parse_interactions, write_interactions, Dataset, IdMap, InteractionLog, Split, ToyConfig};
use ss4rec::evaluator::{evaluate, evaluate_by_length, MetricsReport};
use ss4rec::model::{load_checkpoint, load_checkpoint_for, save_checkpoint};
use ss4rec::trainer::{train, write_history};
use ss4rec::{Error, Model, Result};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_AUDIT: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "ss4rec", version, about = "Continuous-time sequential recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic time-determined dataset.
    GenToy(GenToyArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out targets.
    Eval(EvalArgs),
    /// Run the numeric self-checks.
    Audit(AuditArgs),
}

#[derive(Args)]
struct GenToyArgs {
    #[arg(long)]
    out: PathBuf,
    /// Required; there is no default seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    users: u32,
    #[arg(long, default_value_t = 100)]
    items: u32,
    #[arg(long, default_value_t = 100)]
    seq_len: u32,
    #[arg(long, default_value_t = 10_000)]
    t_max: u64,
}

#[derive(Args)]
struct Overrides {
    /// Any config key, e.g. `--set model.embed_dim=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    drop_prob: Option<f64>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Defaults to `config.txt` beside the checkpoint, if present.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    filter_history: bool,
    /// Comma-separated upper edges of history-length buckets.
    #[arg(long, value_name = "EDGES")]
    by_length: Option<String>,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct AuditArgs {
    /// `scan`, `zoh`, `grad` or `all`.
    #[arg(long, default_value = "all")]
    suite: String,
    /// Break the implementation side of one suite.
    #[arg(long)]
    inject_fault: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random cases for the scan and ZOH suites.
    #[arg(long, default_value_t = 1000)]
    cases: usize,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownKey(_) => EXIT_USAGE,
        Error::AuditFailure(_) => EXIT_AUDIT,
        Error::Divergence { .. } => EXIT_DIVERGED,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let res = match cli.command {
        Command::GenToy(a) => gen_toy(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Audit(a) => cmd_audit(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_owned(),
        source,
    }
}

fn gen_toy(a: GenToyArgs) -> Result<()> {
    let seed = a
        .seed
        .ok_or_else(|| Error::Config("--seed is required for gen-toy".into()))?;
    let toy = ToyConfig {
        n_users: a.users,
        n_items: a.items,
        seq_len: a.seq_len,
        t_max: a.t_max,
    }
    .generate(seed)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    write_interactions(&a.out, toy.raw_rows())?;
    eprintln!("wrote {} interactions to {}", toy.records.len(), a.out.display());
    Ok(())
}

fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = file {
        cfg.apply_file(p)?;
    }
    cfg.apply_env(|k| std::env::var(k).ok())?;
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

fn load_data(cfg: &RunConfig) -> Result<(InteractionLog, Dataset)> {
    let path = cfg
        .data_path
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset given (use --data or data.path)".into()))?;
    let log = parse_interactions(path, &cfg.columns)?;
    if log.skipped > 0 {
        eprintln!("skipped {} malformed lines", log.skipped);
    }
    let dataset = Dataset::from_log(&log, cfg.interval_scale, cfg.interval_clamp_max)?;
    Ok((log, dataset))
}

fn write_report(report: &MetricsReport, path: &Path) -> Result<()> {
    let text = format!("{}record={}\n", report.to_kv(), report.to_tsv());
    fs::write(path, text).map_err(io_err(path))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = resolve(a.config.as_deref(), &a.overrides)?;
    if let Some(d) = a.data {
        cfg.data_path = Some(d);
    }
    if let Some(o) = a.out {
        cfg.output_dir = Some(o);
    }
    if let Some(v) = a.ablation {
        cfg.set("model.ablation", &v)?;
    }
    if let Some(v) = a.drop_prob {
        cfg.train.drop_probability = v;
    }
    if let Some(v) = a.blocks {
        cfg.model.n_blocks = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.max_epochs = v;
    }
    cfg.train.validate()?;
    let dir = cfg
        .output_dir
        .clone()
        .ok_or_else(|| Error::Config("no run directory given (use --out or output.dir)".into()))?;

    let (log, dataset) = load_data(&cfg)?;
    cfg.interval_scale = Some(dataset.scaling.scale);
    let mut model_cfg = cfg.model.clone();
    model_cfg.n_items = dataset.n_items;
    let model = Model::new(model_cfg, cfg.train.seed)?;

    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let config_path = dir.join("config.txt");
    fs::write(&config_path, cfg.to_kv()).map_err(io_err(&config_path))?;
    log.items.write(&dir.join("items.tsv"))?;
    log.users.write(&dir.join("users.tsv"))?;

    eprintln!(
        "training {} on {} users, {} items, {} interactions",
        cfg.model.ablation,
        dataset.users.len(),
        dataset.n_items,
        dataset.n_interactions()
    );
    let outcome = match train(model, &dataset, &cfg.train, |r| {
        eprintln!(
            "epoch {}\tloss {:.5}\tvalid hr {:.4}\tndcg {:.4}\tmrr {:.4}",
            r.epoch, r.train_loss, r.valid.hr, r.valid.ndcg, r.valid.mrr
        )
    }) {
        Ok(o) => o,
        Err(e @ Error::Divergence { .. }) => {
            let p = dir.join("divergence.txt");
            let _ = fs::write(&p, format!("{e}\n{}", cfg.to_kv()));
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    write_history(&dir.join("history.tsv"), &outcome.history)?;
    save_checkpoint(&outcome.model, &dir.join("best.ckpt"))?;
    let report = evaluate(&outcome.model, &dataset, Split::Test, cfg.eval)?;
    write_report(&report, &dir.join("test_metrics.txt"))?;
    eprintln!("best epoch {}", outcome.best_epoch);
    print!("{}", report.to_kv());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let beside = a.checkpoint.parent().map(|d| d.join("config.txt"));
    let config_file = a.config.clone().or(beside.filter(|p| p.exists()));
    let mut cfg = resolve(config_file.as_deref(), &a.overrides)?;
    if let Some(d) = a.data {
        cfg.data_path = Some(d);
    }
    if let Some(k) = a.k {
        cfg.eval.k = k;
    }
    if a.filter_history {
        cfg.eval.filter_history = true;
    }
    let split = match a.split.as_str() {
        "test" => Split::Test,
        "valid" => Split::Valid,
        other => return Err(Error::Config(format!("unknown split `{other}`"))),
    };
    if !a.checkpoint.exists() {
        return Err(Error::Io {
            path: a.checkpoint.clone(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        });
    }
    let (log, dataset) = load_data(&cfg)?;
    if let Some(map_path) = a.checkpoint.parent().map(|d| d.join("items.tsv")).filter(|p| p.exists()) {
        let stored = IdMap::read(&map_path, 1)?;
        if stored != log.items {
            return Err(Error::VocabularyMismatch(format!(
                "item ids in {} differ from the dataset's",
                map_path.display()
            )));
        }
    }
    let model = if config_file.is_some() {
        let mut expected = cfg.model.clone();
        expected.n_items = dataset.n_items;
        load_checkpoint_for(&a.checkpoint, &expected)?
    } else {
        load_checkpoint(&a.checkpoint)?
    };
    let report = match &a.by_length {
        Some(edges) => {
            let edges = edges
                .split(',')
                .map(|e| e.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Config(format!("invalid bucket edges `{edges}`")))?;
            evaluate_by_length(&model, &dataset, split, &edges, cfg.eval)?
        }
        None => evaluate(&model, &dataset, split, cfg.eval)?,
    };
    print!("{}", report.to_kv());
    println!("record={}", report.to_tsv());
    if let Some(p) = &a.out {
        write_report(&report, p)?;
    }
    Ok(())
}

fn cmd_audit(a: AuditArgs) -> Result<()> {
    let suites: Vec<Suite> = if a.suite == "all" {
        Suite::ALL.to_vec()
    } else {
        a.suite
            .split(',')
            .map(|s| s.trim().parse().map_err(Error::Config))
            .collect::<Result<_>>()?
    };
    let inject_fault = a
        .inject_fault
        .as_deref()
        .map(|s| s.parse::<Suite>().map_err(Error::Config))
        .transpose()?;
    let opts = AuditOptions {
        seed: a.seed,
        scan_cases: a.cases,
        zoh_cases: a.cases,
        inject_fault,
    };
    let mut failed = Vec::new();
    for suite in suites {
        let r = run_suite(suite, &opts)?;
        println!("{}", r.summary());
        if !r.passed() {
            failed.push(suite.name().to_owned());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::AuditFailure(failed))
    }
}
