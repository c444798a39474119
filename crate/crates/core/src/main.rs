use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use trnews::config::RunConfig;
use trnews::evaluation::MetricsReport;
use trnews::pipeline;
use trnews::Error;

#[derive(Parser, Debug)]
#[command(name = "trnews", version, about = "Cross-domain news recommendation with a learned translator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; also the corpus directory unless data.dir is set.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Root seed; overrides the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Ablation variant or group to run (ablate only).
    #[arg(long, global = true)]
    variant: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate a synthetic two-domain corpus.
    Synth,
    /// Build the vocabulary and user split.
    Prepare,
    /// Train and write the checkpoint and log.
    Train,
    /// Cold-start evaluation of test users.
    Evaluate,
    /// Train and evaluate every ablation variant.
    Ablate,
    /// Finite-difference checks of every loss.
    GradCheck,
    /// Attention weights for sampled test users.
    CaseStudy,
}

fn print_report(label: &str, r: &MetricsReport) {
    println!("{label}\t{}", r.row());
}

fn run(cli: &Cli) -> trnews::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.variant.is_some() && !matches!(cli.command, Command::Ablate) {
        return Err(Error::config("--variant", "only valid with ablate"));
    }
    cfg.resolve_seed(cli.seed);
    let out: &Path = &cli.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    match cli.command {
        Command::Synth => {
            let s = pipeline::run_synth(&cfg, out)?;
            println!("{} articles, {} events", s.news.len(), s.events.len());
        }
        Command::Prepare => {
            let p = pipeline::run_prepare(&cfg, out)?;
            println!(
                "{} words, {} train users, {} test users",
                p.corpus.vocab().word_count(),
                p.split.train.len(),
                p.split.test.len()
            );
        }
        Command::Train => {
            let f = pipeline::run_train(&cfg, out)?;
            println!("best iteration {} of {}\t{}", f.best_iteration, f.stopped_at, f.best_hash);
        }
        Command::Evaluate => {
            let e = pipeline::run_evaluate(&cfg, out)?;
            println!("model\t{}", MetricsReport::header());
            print_report("trnews", &e.model);
            print_report("zero", &e.baseline);
        }
        Command::Ablate => {
            println!("variant\t{}", MetricsReport::header());
            for (name, r) in pipeline::run_ablate(&cfg, out, cli.variant.as_deref())? {
                print_report(&name, &r);
            }
        }
        Command::GradCheck => {
            let entries = pipeline::run_grad_check(&cfg, out)?;
            print!("{}", pipeline::format_grad_check(&entries));
            if entries.iter().any(|e| !e.passed()) {
                return Err(Error::Precondition("gradient check failed".into()));
            }
        }
        Command::CaseStudy => print!("{}", pipeline::run_case_study(&cfg, out)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
