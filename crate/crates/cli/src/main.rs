use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use natlab::corpus::{generate_corpus, CorpusConfig};
use natlab::kv::{write_atomic, KeyValues};
use natlab::losses::Loss;
use natlab::manifest::RunManifest;
use natlab::model::ModelConfig;
use natlab::oracle::{all_equivalence_suites, all_gradient_suites, suites_csv, Fault, SuiteConfig, SuiteResult};
use natlab::report::{plot_csv, summarize, tables};
use natlab::sweep::{read_results, run_sweep, Grid, SweepEvent, RESULTS_FILE};
use natlab::trainer::{evaluate, train, TrainConfig, CHECKPOINT_FILE, MODEL_CONFIG_FILE, TRAIN_LOG_FILE};
use natlab::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "natlab", version, about = "Synthetic multi-modality corpora and NAT loss experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic parallel corpus.
    GenData(GenDataArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Score a trained model on a corpus split.
    Eval(EvalArgs),
    /// Train and evaluate every cell of a grid file.
    Sweep(SweepArgs),
    /// Summarize sweep results into per-group tables.
    Report(ReportArgs),
    /// Compare the loss implementations with brute-force enumeration.
    OracleCheck(OracleArgs),
    /// Compare analytic loss gradients with finite differences.
    GradCheck(GradArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// key=value file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    valid: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    #[arg(long)]
    p_lo: Option<f64>,
    #[arg(long)]
    p_so1: Option<f64>,
    #[arg(long)]
    p_so2: Option<f64>,
    #[arg(long)]
    p_op: Option<f64>,
    /// Divide the open-class vocabulary ranges by this factor.
    #[arg(long)]
    vocab_scale: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for checkpoint and logs.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    phase1_updates: Option<usize>,
    #[arg(long)]
    phase2_updates: Option<usize>,
    #[arg(long)]
    tokens_per_batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    valid_limit: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    enc_layers: Option<usize>,
    #[arg(long)]
    dec_layers: Option<usize>,
    #[arg(long)]
    d_ffn: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Training output directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Per-sentence CSV; defaults to `<checkpoint>/eval_<split>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Sweep results CSV or sweep directory; repeatable.
    #[arg(long, required = true)]
    results: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 2022)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    /// Also write the CSV report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, default_value_t = 2022)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Negate the CTC gradient before checking.
    #[arg(long, hide = true)]
    inject_ctc_sign_error: bool,
}

enum Failure {
    Usage(String),
    Verify(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) | Error::Budget(m) => Failure::Usage(m),
            other => Failure::Run(other),
        }
    }
}

type CliResult = Result<(), Failure>;

fn threads() -> usize {
    std::env::var("NATLAB_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}

fn load_config(path: &Option<PathBuf>) -> Result<KeyValues, Failure> {
    match path {
        Some(p) => KeyValues::read(p).map_err(|e| Failure::Usage(e.to_string())),
        None => Ok(KeyValues::new("flags")),
    }
}

fn set_opt<T: std::fmt::Display>(kv: &mut KeyValues, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        kv.set(key, v);
    }
}

fn require_path(kv: &KeyValues, key: &str) -> Result<PathBuf, Failure> {
    kv.get(key).map(PathBuf::from).ok_or_else(|| Failure::Usage(format!("missing --{key}")))
}

fn gen_data(a: GenDataArgs) -> CliResult {
    let started = Instant::now();
    let mut kv = load_config(&a.config)?;
    set_opt(&mut kv, "out", &a.out.as_ref().map(|p| p.display()));
    set_opt(&mut kv, "n_train", &a.train);
    set_opt(&mut kv, "n_valid", &a.valid);
    set_opt(&mut kv, "n_test", &a.test);
    set_opt(&mut kv, "p_lo", &a.p_lo);
    set_opt(&mut kv, "p_so1", &a.p_so1);
    set_opt(&mut kv, "p_so2", &a.p_so2);
    set_opt(&mut kv, "p_op", &a.p_op);
    set_opt(&mut kv, "vocab_scale", &a.vocab_scale);
    set_opt(&mut kv, "seed", &a.seed);
    let out = require_path(&kv, "out")?;
    let cfg = CorpusConfig::from_kv(&kv).map_err(|e| Failure::Usage(e.to_string()))?;
    let summary = generate_corpus(&cfg, &out)?;
    let mut resolved = cfg.to_kv();
    resolved.set("out", out.display());
    let mut m = RunManifest::new("gen-data", resolved, cfg.seed);
    for f in &summary.files {
        m.add_output(f)?;
    }
    m.wall_time = started.elapsed();
    m.write(&out)?;
    println!("wrote {} train / {} valid / {} test pairs to {}", cfg.n_train, cfg.n_valid, cfg.n_test, out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let started = Instant::now();
    let mut kv = load_config(&a.config)?;
    set_opt(&mut kv, "data", &a.data.as_ref().map(|p| p.display()));
    set_opt(&mut kv, "out", &a.out.as_ref().map(|p| p.display()));
    set_opt(&mut kv, "train.loss", &a.loss);
    set_opt(&mut kv, "train.lambda", &a.lambda);
    set_opt(&mut kv, "train.phase1_updates", &a.phase1_updates);
    set_opt(&mut kv, "train.phase2_updates", &a.phase2_updates);
    set_opt(&mut kv, "train.tokens_per_batch", &a.tokens_per_batch);
    set_opt(&mut kv, "train.lr", &a.lr);
    set_opt(&mut kv, "train.warmup", &a.warmup);
    set_opt(&mut kv, "train.seed", &a.seed);
    set_opt(&mut kv, "train.eval_interval", &a.eval_interval);
    set_opt(&mut kv, "train.valid_limit", &a.valid_limit);
    set_opt(&mut kv, "model.d_model", &a.d_model);
    set_opt(&mut kv, "model.n_heads", &a.heads);
    set_opt(&mut kv, "model.n_enc_layers", &a.enc_layers);
    set_opt(&mut kv, "model.n_dec_layers", &a.dec_layers);
    set_opt(&mut kv, "model.d_ffn", &a.d_ffn);
    set_opt(&mut kv, "model.dropout", &a.dropout);
    let data = require_path(&kv, "data")?;
    let out = require_path(&kv, "out")?;
    let usage = |e: Error| Failure::Usage(e.to_string());
    let mut cfg = TrainConfig::default().merge_kv(&kv).map_err(usage)?;
    cfg.threads = threads();
    let model = ModelConfig::small(0, 0).merge_kv(&kv).map_err(usage)?;
    let outcome = train(&cfg, &model, &data, &out, &mut |r| {
        eprintln!(
            "update {} phase {} loss {:.4} valid_accuracy {:.4}",
            r.update, r.phase, r.loss_value, r.valid_accuracy
        )
    })?;
    let mut resolved = KeyValues::new("train");
    resolved.set("data", data.display());
    resolved.set("out", out.display());
    cfg.write_kv(&mut resolved);
    outcome.model.config().write_kv(&mut resolved);
    let mut m = RunManifest::new("train", resolved, cfg.seed);
    m.add_input(&data.join("train.src"))?;
    m.add_input(&data.join("train.tgt"))?;
    for f in [CHECKPOINT_FILE, MODEL_CONFIG_FILE, TRAIN_LOG_FILE] {
        m.add_output(&out.join(f))?;
    }
    m.wall_time = started.elapsed();
    m.write(&out)?;
    if outcome.skipped > 0 {
        eprintln!("skipped {} training pairs with no valid {} alignment", outcome.skipped, cfg.loss.name());
    }
    println!(
        "final loss {:.6} valid accuracy {:.4} ({} updates, phase 1 {})",
        outcome.final_loss(),
        outcome.final_accuracy(),
        cfg.total_updates(),
        cfg.phase1_loss().name()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let started = Instant::now();
    let report = evaluate(&a.checkpoint, &a.data, &a.split)?;
    let out = a.out.unwrap_or_else(|| a.checkpoint.join(format!("eval_{}.csv", a.split)));
    write_atomic(&out, report.to_csv().as_bytes())?;
    let mut resolved = KeyValues::new("eval");
    resolved.set("checkpoint", a.checkpoint.display());
    resolved.set("data", a.data.display());
    resolved.set("split", &a.split);
    let mut m = RunManifest::new("eval", resolved, 0);
    m.add_input(&a.checkpoint.join(CHECKPOINT_FILE))?;
    m.add_output(&out)?;
    m.wall_time = started.elapsed();
    m.write_at(&RunManifest::path_for(&out))?;
    println!(
        "accuracy {:.6} length_ratio {:.4} repeat_rate {:.4} sentences {}",
        report.corpus_accuracy,
        report.length_ratio,
        report.repeat_rate,
        report.sentences.len()
    );
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> CliResult {
    let started = Instant::now();
    let grid = Grid::read(&a.grid).map_err(|e| Failure::Usage(e.to_string()))?;
    eprintln!("{} settings, {} cells", grid.settings.len(), grid.cells());
    let rows = run_sweep(&grid, &a.out, &mut |ev| match ev {
        SweepEvent::Skipped { setting, loss, seed } => eprintln!("skip {setting}/{loss}/seed{seed} (done)"),
        SweepEvent::Started { setting, loss, seed } => eprintln!("run {setting}/{loss}/seed{seed}"),
        SweepEvent::Progress(r) => eprintln!("  update {} loss {:.4} valid {:.4}", r.update, r.loss_value, r.valid_accuracy),
        SweepEvent::Finished(r) => eprintln!("  test accuracy {:.4}", r.accuracy),
    })?;
    let mut resolved = KeyValues::new("sweep");
    resolved.set("grid", a.grid.display());
    resolved.set("out", a.out.display());
    let mut m = RunManifest::new("sweep", resolved, 0);
    m.add_input(&a.grid)?;
    m.add_output(&a.out.join(RESULTS_FILE))?;
    m.wall_time = started.elapsed();
    m.write(&a.out)?;
    println!("{} result rows in {}", rows.len(), a.out.join(RESULTS_FILE).display());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> CliResult {
    let started = Instant::now();
    let mut rows = Vec::new();
    let mut inputs = Vec::new();
    for p in &a.results {
        let path = if p.is_dir() { p.join(RESULTS_FILE) } else { p.clone() };
        rows.extend(read_results(&path)?);
        inputs.push(path);
    }
    let cells = summarize(&rows)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let text = tables(&cells);
    let (tables_path, csv_path) = (a.out.join("tables.md"), a.out.join("summary.csv"));
    write_atomic(&tables_path, text.as_bytes())?;
    write_atomic(&csv_path, plot_csv(&cells).as_bytes())?;
    let mut resolved = KeyValues::new("report");
    resolved.set("out", a.out.display());
    let mut m = RunManifest::new("report", resolved, 0);
    for p in &inputs {
        m.add_input(p)?;
    }
    m.add_output(&tables_path)?;
    m.add_output(&csv_path)?;
    m.wall_time = started.elapsed();
    m.write(&a.out)?;
    print!("{text}");
    Ok(())
}

fn finish_suites(name: &str, results: &[SuiteResult], out: &Option<PathBuf>, seed: u64, started: Instant) -> CliResult {
    let csv = suites_csv(results);
    print!("{csv}");
    if let Some(path) = out {
        write_atomic(path, csv.as_bytes())?;
        let mut resolved = KeyValues::new(name);
        resolved.set("seed", seed);
        let mut m = RunManifest::new(name, resolved, seed);
        m.add_output(path)?;
        m.wall_time = started.elapsed();
        m.write_at(&RunManifest::path_for(path))?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.suite.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verify(format!("failed suites: {}", failed.join(", "))))
    }
}

fn cmd_oracle(a: OracleArgs) -> CliResult {
    let started = Instant::now();
    let cfg = SuiteConfig { seed: a.seed, instances: a.instances, ..Default::default() };
    let results = all_equivalence_suites(&cfg)?;
    finish_suites("oracle-check", &results, &a.out, a.seed, started)
}

fn cmd_grad(a: GradArgs) -> CliResult {
    let started = Instant::now();
    if a.step.is_nan() || a.step <= 0.0 {
        return Err(Failure::Usage(format!("--step {} must be positive", a.step)));
    }
    let cfg = SuiteConfig { seed: a.seed, max_vocab: 5, ..Default::default() };
    let fault = a.inject_ctc_sign_error.then_some(Fault::CtcSign);
    let results = all_gradient_suites(&cfg, a.points, a.step, a.tolerance, fault)?;
    finish_suites("grad-check", &results, &a.out, a.seed, started)
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => {
            if let Some(name) = &a.loss {
                name.parse::<Loss>().map_err(|e| Failure::Usage(e.to_string()))?;
            }
            cmd_train(a)
        }
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
        Command::OracleCheck(a) => cmd_oracle(a),
        Command::GradCheck(a) => cmd_grad(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("natlab: usage error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Verify(m)) => {
            eprintln!("natlab: verification failed: {m}");
            ExitCode::from(EXIT_VERIFY)
        }
        Err(Failure::Run(e)) => {
            eprintln!("natlab: {e}");
            ExitCode::from(EXIT_IO)
        }
    }
}
