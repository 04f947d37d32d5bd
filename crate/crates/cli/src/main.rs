//! `symscale`: data generation, training, evaluation and scaling fits.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use symscale_core::pipeline::{self, PipelineConfig, PipelineError};

#[derive(Debug, Parser)]
#[command(name = "symscale", version, about = "Scaling experiments for transformer symbolic regression")]
struct Cli {
    /// Pipeline config (TOML). Defaults to the built-in settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, global = true, env = "SYMSCALE_SEED")]
    seed: Option<u64>,
    /// Base output directory; overrides `out_dir` in the config.
    #[arg(long, global = true)]
    out_root: Option<PathBuf>,
    /// Accept inputs whose manifest hash does not match the config.
    #[arg(long, global = true)]
    force: bool,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Enumerate the base expression set.
    GenerateExpressions {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Sample expression-dataset pairs into train/val/test shards.
    SampleData {
        #[arg(long)]
        expressions_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train one model.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Print the token/FLOP budget and step count, then exit.
        #[arg(long)]
        dry_run: bool,
        /// Continue from `checkpoint.bin` in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Best-of-n evaluation of a trained model on the test split.
    Evaluate {
        #[arg(long)]
        corpus_dir: Option<PathBuf>,
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        candidates: Option<usize>,
    },
    /// Pareto front and power-law fits over runs or a results CSV.
    FitScaling {
        /// Run directories (searched two levels deep) or CSV files.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Train a grid of (size, batch, lr) runs and fit optimal hyperparameters.
    Sweep {
        #[arg(long)]
        corpus_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        batch_sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        lrs: Vec<f64>,
        /// Independent runs to train at once.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Fits on the bundled published results table.
    ReproducePaperFits {
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    corpus_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Preset size label (6.5M, 13.5M, 24M, 45.5M, 93M).
    #[arg(long)]
    model_size: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Output tokens per feed-forward parameter.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    max_steps: Option<u64>,
}

const EXTRAPOLATION_FLOPS: f64 = 3.8e21;

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(root) = &cli.out_root {
        cfg.out_dir = root.clone();
    }
    Ok(cfg)
}

fn or_default(dir: &Option<PathBuf>, cfg: &PipelineConfig, name: &str) -> PathBuf {
    dir.clone().unwrap_or_else(|| cfg.out_dir.join(name))
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = load_config(&cli)?;
    let force = cli.force;
    match &cli.command {
        Command::GenerateExpressions { out_dir } => {
            let dir = or_default(out_dir, &cfg, "expressions");
            let set = pipeline::generate_expressions(&cfg, &dir)?;
            println!("{} expressions written to {}", set.len(), dir.join("expressions.jsonl").display());
        }
        Command::SampleData { expressions_dir, out_dir } => {
            let src = or_default(expressions_dir, &cfg, "expressions");
            let dir = or_default(out_dir, &cfg, "corpus");
            let s = pipeline::sample_data(&cfg, &src, &dir, force)?;
            println!(
                "corpus in {}: train {} pairs ({} shards), val {}, test {}",
                dir.display(),
                s.train.emitted,
                s.train_shards.len(),
                s.val.emitted,
                s.test.emitted
            );
        }
        Command::Train { run, dry_run, resume } => {
            if let Some(size) = &run.model_size {
                cfg.model = pipeline::ModelSection { size: Some(size.clone()), dim: None, layers: None, heads: None, dropout: cfg.model.dropout };
            }
            if let Some(b) = run.batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(lr) = run.lr {
                cfg.train.peak_lr = lr;
            }
            if let Some(r) = run.ratio {
                cfg.train.token_ratio = r;
                cfg.train.total_tokens = None;
            }
            if let Some(s) = run.max_steps {
                cfg.train.max_steps = Some(s);
            }
            cfg.validate()?;
            let corpus = or_default(&run.corpus_dir, &cfg, "corpus");
            if *dry_run {
                print_json(&pipeline::dry_run(&cfg, &corpus, force)?);
                return Ok(());
            }
            let dir = or_default(&run.out_dir, &cfg, "train");
            let record = pipeline::train_run(&cfg, &corpus, &dir, *resume, force)?;
            let last = record.series.last();
            println!(
                "trained {} steps: final val loss {:.5}, D_out {}, {:.3e} FLOPs; outputs in {}",
                last.map_or(0, |p| p.step),
                record.final_val_loss,
                last.map_or(0, |p| p.tokens_out),
                last.map_or(0.0, |p| p.flops),
                dir.display()
            );
        }
        Command::Evaluate { corpus_dir, run_dir, out_dir, candidates } => {
            if let Some(n) = candidates {
                cfg.eval.n_candidates = *n;
            }
            cfg.validate()?;
            let corpus = or_default(corpus_dir, &cfg, "corpus");
            let run = or_default(run_dir, &cfg, "train");
            let out = out_dir.clone().unwrap_or_else(|| run.join("eval"));
            let report = pipeline::evaluate_run(&cfg, &corpus, &run, &out, force)?;
            print!("{}", report.summary_csv());
        }
        Command::FitScaling { inputs, out_dir, bins } => {
            let points = pipeline::load_points(inputs)?;
            let out = or_default(out_dir, &cfg, "scaling");
            let a = pipeline::fit_scaling(&points, bins.unwrap_or(cfg.analysis.bins), &out)?;
            println!("{} runs, {} on the Pareto front", points.len(), a.front.len());
            println!("loss = {:.4e} * C^{:.4} (log RMSE {:.4})", a.loss.a, a.loss.b, a.loss.rmse);
            if let Some(f) = &a.acc_solved {
                println!("Acc_solved = 1 - {:.4e} * C^{:.4} (log RMSE {:.4})", f.a, f.b, f.rmse);
            }
            if let Some(t) = &a.tradeoff {
                println!("N_opt ~ C^{:.3}, D_opt ~ C^{:.3}, D/N at max compute {:.2}", t.n_opt.b, t.d_opt.b, t.ratio.last().map_or(f64::NAN, |r| r.1));
            }
            println!("fits written to {}", out.display());
        }
        Command::Sweep { corpus_dir, out_dir, sizes, batch_sizes, lrs, parallel } => {
            let corpus = or_default(corpus_dir, &cfg, "corpus");
            let out = or_default(out_dir, &cfg, "sweep");
            let s = pipeline::sweep(&cfg, &corpus, &out, sizes, batch_sizes, lrs, *parallel, force)?;
            for r in &s.runs {
                println!("{} B={} lr={:e}: val loss {:.5}", r.size, r.batch_size, r.peak_lr, r.final_val_loss);
            }
            match (&s.hparams, &s.hparams_error) {
                (Some(h), _) => {
                    for o in &h.optima {
                        println!("N={:.3e}: B*={:.1} lr*={:.3e} loss {:.5}", o.n_params, o.batch_size, o.learning_rate, o.loss);
                    }
                }
                (None, Some(e)) => println!("no hyperparameter fit: {e}"),
                (None, None) => {}
            }
        }
        Command::ReproducePaperFits { out_dir, bins } => {
            let bins = bins.unwrap_or(cfg.analysis.bins);
            let a = pipeline::reproduce_paper_fits(bins, out_dir.as_deref())?;
            report_paper_fits(&a, out_dir.as_deref());
        }
    }
    Ok(())
}

fn report_paper_fits(a: &symscale_core::scaling::ScalingAnalysis, out: Option<&Path>) {
    println!("Pareto front: {} of 25 runs", a.front.len());
    if let Some(f) = &a.acc_solved {
        println!(
            "Acc_solved = 1 - {:.4} * C^{:.5} (log RMSE {:.4}); predicted Acc_solved at {EXTRAPOLATION_FLOPS:.1e} FLOPs: {:.4}",
            f.a,
            f.b,
            f.rmse,
            f.predict(EXTRAPOLATION_FLOPS)
        );
    }
    if let Some(f) = &a.acc_solved_direct {
        println!(
            "direct form Acc_solved = {:.4e} * C^{:.5} (log RMSE {:.4}) gives {:.4} at {EXTRAPOLATION_FLOPS:.1e} FLOPs",
            f.a,
            f.b,
            f.rmse,
            f.predict(EXTRAPOLATION_FLOPS)
        );
    }
    println!("validation loss = {:.4} * C^{:.5}; predicted loss at 1.47e19 FLOPs: {:.4}", a.loss.a, a.loss.b, a.loss.predict(1.47e19));
    if let Some(dir) = out {
        println!("fits written to {}", dir.display());
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
