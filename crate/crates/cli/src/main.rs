use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use yygnn::checks::{run_suite, Suite};
use yygnn::config::RunConfig;
use yygnn::eval::{evaluate, evaluate_heuristic, format_results, HeuristicKind, Protocol};
use yygnn::model::{predict_topk, train, EncoderKind, Model, Scorer, TrainOutcome};
use yygnn::negsample::sample_negative_set;
use yygnn::nn::Features;
use yygnn::propagation::{format_diagnostics, EnergyOperators};
use yygnn::{EdgeSplit, Error};

#[derive(Parser)]
#[command(name = "yygnn", version, about = "Link prediction with positive/negative-edge energy propagation")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (`section.key = value` lines).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config key, e.g. `--set prop.T=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Split the edge list and sample evaluation pools.
    Split {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a model; writes checkpoint, epoch log and config snapshot.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also write per-layer `t, energy, Q, sigma(Q)` for the trained model.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Evaluate a checkpoint on the configured split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Defaults to `<output.dir>/model.yyg`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Split manifest; defaults to `<output.dir>/split.txt`.
        #[arg(long)]
        split: Option<PathBuf>,
        /// Comma-separated heuristic rows to add: cn, aa, ra.
        #[arg(long, value_delimiter = ',')]
        baselines: Vec<String>,
        /// Evaluate even if the data fingerprint differs from the checkpoint.
        #[arg(long)]
        allow_mismatch: bool,
        #[arg(long)]
        diagnostics: bool,
    },
    /// Rank the top-k link candidates for source nodes.
    Predict {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated source node ids (may be empty).
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        src: Vec<String>,
        /// File with one source node id per line.
        #[arg(long)]
        src_file: Option<PathBuf>,
        #[arg(long, short, default_value_t = 10)]
        k: usize,
        /// mlp, dot or pruned_dot.
        #[arg(long, default_value = "mlp")]
        scorer: String,
        /// Skip candidates already linked in the training graph.
        #[arg(long)]
        exclude_known: bool,
        /// Write predictions here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long)]
        allow_mismatch: bool,
    },
    /// Run property batteries: gradients, descent, convexity, isomorphism,
    /// metrics-oracle, or all.
    Check {
        #[arg(default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Lib(Error),
    Checks(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) => 2,
        Error::Divergence { .. } | Error::NonFinite(_) => 4,
        Error::Parse { .. }
        | Error::Io { .. }
        | Error::NodeOutOfBounds { .. }
        | Error::DimensionMismatch { .. }
        | Error::Fingerprint(_)
        | Error::Checkpoint(_)
        | Error::Sampling(_) => 3,
        _ => 1,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(io_err(path))
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Error> {
    let (cfg, defaulted) = RunConfig::load_with(&args.config, &args.overrides)?;
    for d in defaulted {
        eprintln!("default: {d}");
    }
    Ok(cfg)
}

fn prepare_output(cfg: &RunConfig) -> Result<(), Error> {
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let snap = cfg.output_dir.join("config.snapshot.cfg");
    write(&snap, &cfg.to_text())
}

fn split_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("split.txt")
}

fn cmd_split(cfg: &RunConfig) -> Result<EdgeSplit, Error> {
    let (g, _) = cfg.load_data()?;
    let split = cfg.make_split(&g)?;
    prepare_output(cfg)?;
    split.save(split_path(cfg))?;
    eprintln!(
        "split: {} nodes, train/valid/test = {}/{}/{} edges, pools of {}",
        split.num_nodes,
        split.train_edges.len(),
        split.valid_edges.len(),
        split.test_edges.len(),
        split.test_negatives.len()
    );
    Ok(split)
}

fn epoch_log(outcome: &TrainOutcome) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6e}"));
    let mut out = String::from("epoch\tloss\tval_hits\tenergy_first\tenergy_last\tq_last\n");
    for h in &outcome.history {
        let _ = writeln!(
            out,
            "{}\t{:.6e}\t{}\t{}\t{}\t{}",
            h.epoch,
            h.loss,
            h.val_hits.map_or("-".to_string(), |v| format!("{v:.6}")),
            opt(h.energy_first),
            opt(h.energy_last),
            opt(h.q_last)
        );
    }
    out
}

/// Per-layer energy trace of `model` on the training graph.
fn diagnostics(model: &Model, split: &EdgeSplit, features: &Features, seed: u64) -> Result<String, Error> {
    if model.config.encoder != EncoderKind::YinYang {
        return Ok("t, energy, Q, sigma(Q)\n".into());
    }
    let g = split.train_graph();
    let negset = sample_negative_set(&g, model.num_neg_graphs(), model.config.sampler, seed)?;
    let ops = EnergyOperators::new(&g, &negset)?;
    let fx = model.base.forward_features(features)?;
    let (_, diags) = ops.forward_with_diagnostics(&fx, &model.propagation_config())?;
    Ok(format_diagnostics(&diags))
}

fn cmd_train(cfg: &RunConfig, diag: bool) -> Result<(), Error> {
    let (g, x) = cfg.load_data()?;
    let split = cfg.make_split(&g)?;
    prepare_output(cfg)?;
    split.save(split_path(cfg))?;
    let start = Instant::now();
    let outcome = train(&split, &x, cfg.model.clone(), &cfg.train)?;
    let ckpt = cfg.output_dir.join("model.yyg");
    outcome.model.save(&ckpt)?;
    write(&cfg.output_dir.join("train_log.tsv"), &epoch_log(&outcome))?;
    if diag {
        let features = Features::auto(x.data().clone());
        let text = diagnostics(&outcome.model, &split, &features, cfg.eval.seeds[0])?;
        write(&cfg.output_dir.join("diagnostics.txt"), &text)?;
        eprint!("{text}");
    }
    eprintln!(
        "trained {} epochs in {:.1}s; best epoch {} (val HR@{} {}); checkpoint {}",
        outcome.history.len(),
        start.elapsed().as_secs_f64(),
        outcome.best_epoch,
        cfg.train.eval_k,
        outcome.best_val.map_or("n/a".into(), |v| format!("{v:.4}")),
        ckpt.display()
    );
    Ok(())
}

fn load_model(cfg: &RunConfig, checkpoint: &Option<PathBuf>) -> Result<Model, Error> {
    Model::load(checkpoint.clone().unwrap_or_else(|| cfg.output_dir.join("model.yyg")))
}

fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Option<PathBuf>,
    split: &Option<PathBuf>,
    baselines: &[String],
    allow_mismatch: bool,
    diag: bool,
) -> Result<(), Error> {
    let kinds: Vec<HeuristicKind> = baselines.iter().filter(|b| !b.is_empty()).map(|b| b.parse()).collect::<Result<_, _>>()?;
    let model = load_model(cfg, checkpoint)?;
    let split = EdgeSplit::load(split.clone().unwrap_or_else(|| split_path(cfg)))?;
    let (_, x) = cfg.load_data()?;
    let g_train = split.train_graph();
    if allow_mismatch {
        if let Err(e) = model.check_fingerprint(&g_train, &x) {
            eprintln!("warning: {e}");
        }
    } else {
        model.check_fingerprint(&g_train, &x)?;
    }
    let features = Features::auto(x.data().clone());
    let protocol = Protocol {
        k: cfg.eval.k,
        split: cfg.eval.split,
    };
    let name = if cfg.data.name.is_empty() {
        model.config.encoder.to_string()
    } else {
        format!("{}/{}", cfg.data.name, model.config.encoder)
    };
    let mut results = evaluate(&model, &name, &split, &features, &protocol, &cfg.eval.seeds)?;
    for kind in kinds {
        results.extend(evaluate_heuristic(&split, kind, &protocol)?);
    }
    let table = format_results(&results);
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    write(&cfg.output_dir.join("results.tsv"), &table)?;
    if diag {
        eprint!("{}", diagnostics(&model, &split, &features, cfg.eval.seeds[0])?);
    }
    if let Some(r) = results.first() {
        eprintln!("protocol: {}", r.protocol);
    }
    print!("{table}");
    Ok(())
}

fn parse_sources(list: &[String], file: &Option<PathBuf>) -> Result<Vec<usize>, Error> {
    let mut tokens: Vec<String> = list.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if let Some(p) = file {
        let text = fs::read_to_string(p).map_err(io_err(p))?;
        tokens.extend(text.split_whitespace().map(str::to_string));
    }
    tokens
        .iter()
        .map(|t| t.parse().map_err(|_| Error::InvalidArgument(format!("bad source node id `{t}`"))))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    cfg: &RunConfig,
    checkpoint: &Option<PathBuf>,
    src: &[String],
    src_file: &Option<PathBuf>,
    k: usize,
    scorer: &str,
    exclude_known: bool,
    output: &Option<PathBuf>,
    allow_mismatch: bool,
) -> Result<(), Error> {
    let scorer: Scorer = scorer.parse()?;
    let sources = parse_sources(src, src_file)?;
    let model = load_model(cfg, checkpoint)?;
    let mut text = String::new();
    if !sources.is_empty() {
        let (g, x) = cfg.load_data()?;
        let manifest = split_path(cfg);
        let split = if manifest.is_file() { EdgeSplit::load(manifest)? } else { cfg.make_split(&g)? };
        let g_train = split.train_graph();
        let y = model.encode_checked(&g_train, &x, cfg.eval.seeds[0], allow_mismatch)?.y;
        let start = Instant::now();
        let ranked = predict_topk(&y, &model.decoder, &sources, k, scorer, exclude_known.then_some(&g_train))?;
        let secs = start.elapsed().as_secs_f64();
        for r in &ranked {
            for (dst, score) in r.nodes.iter().zip(&r.scores) {
                let _ = writeln!(text, "{}\t{}\t{}", r.source, dst, score);
            }
        }
        eprintln!(
            "decode nodes/sec: {:.1} ({} sources, scorer {scorer})",
            sources.len() as f64 / secs.max(1e-9),
            sources.len()
        );
    } else {
        eprintln!("decode nodes/sec: 0 (no sources)");
    }
    match output {
        Some(p) => write(p, &text)?,
        None => std::io::stdout().write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))?,
    }
    Ok(())
}

fn cmd_check(suite: &str, seed: u64) -> Result<usize, Error> {
    let suites: Vec<Suite> = if suite == "all" { Suite::ALL.to_vec() } else { vec![suite.parse()?] };
    let mut failures = 0;
    for s in suites {
        let start = Instant::now();
        let report = run_suite(s, seed)?;
        println!("{report} ({:.1}s)", start.elapsed().as_secs_f64());
        failures += report.failures() + usize::from(report.lines.is_empty());
    }
    Ok(failures)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Split { cfg } => {
            cmd_split(&load_config(&cfg)?)?;
        }
        Command::Train { cfg, diagnostics } => cmd_train(&load_config(&cfg)?, diagnostics)?,
        Command::Eval {
            cfg,
            checkpoint,
            split,
            baselines,
            allow_mismatch,
            diagnostics,
        } => cmd_eval(&load_config(&cfg)?, &checkpoint, &split, &baselines, allow_mismatch, diagnostics)?,
        Command::Predict {
            cfg,
            checkpoint,
            src,
            src_file,
            k,
            scorer,
            exclude_known,
            output,
            allow_mismatch,
        } => cmd_predict(
            &load_config(&cfg)?,
            &checkpoint,
            &src,
            &src_file,
            k,
            &scorer,
            exclude_known,
            &output,
            allow_mismatch,
        )?,
        Command::Check { suite, seed } => {
            let failed = cmd_check(&suite, seed)?;
            if failed > 0 {
                return Err(Failure::Checks(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Checks(n)) => {
            eprintln!("{n} check(s) failed");
            ExitCode::from(5)
        }
    }
}
