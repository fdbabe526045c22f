use std::path::PathBuf;
use std::process::ExitCode;

use amtl_cli::commands::{self, TrainOptions};
use amtl_cli::config::{parse_alphas, parse_modes};
use amtl_cli::{CliError, Result, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "amtl", version, about = "Adversarial speaker- and age-invariant acoustic model training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides both the corpus and the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Replace results already in the output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic labelled corpus as feature archives.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Extract MFCC features from labelled 16-bit mono WAV files.
    Mfcc {
        #[command(flatten)]
        common: Common,
        /// Directory the `wav` paths in the label file are relative to
        #[arg(long)]
        wav_dir: PathBuf,
        /// JSON file listing id, wav, split, speaker, age_group and senone labels.
        #[arg(long)]
        labels: PathBuf,
    },
    /// Train one run per mode (and per α under a sweep).
    Train {
        #[command(flatten)]
        common: Common,
        /// `all` or a comma-separated list of BASELINE, AGE, SPK, AGE_SPK.
        #[arg(long)]
        mode: Option<String>,
        /// Comma-separated α_max values for AGE_SPK.
        #[arg(long)]
        alpha_sweep: Option<String>,
        /// Feature archive, or a directory written by `synth` or `mfcc`.
        /// Without it the synthetic corpus is generated in memory.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue each run from its last checkpoint.
        #[arg(long, conflicts_with = "force")]
        resume: bool,
    },
    /// Summarize finished run directories side by side.
    Report {
        /// Also write report.txt and report.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => {
            let cfg = load_config(&common)?;
            let stats = commands::synth(&cfg, &common.out, common.force)?;
            for s in &stats.splits {
                println!(
                    "{:<5} {:>4} speakers {:>6} utterances {:>8} frames",
                    s.split,
                    s.speakers.len(),
                    s.utterances,
                    s.frames
                );
            }
            Ok(())
        }
        Command::Mfcc { common, wav_dir, labels } => {
            let cfg = load_config(&common)?;
            let summary = commands::extract_mfcc(&cfg, &wav_dir, &labels, &common.out, common.force)?;
            for (id, reason) in &summary.failures {
                eprintln!("skipped {id}: {reason}");
            }
            println!("wrote {} utterances", summary.written);
            if summary.failures.is_empty() {
                Ok(())
            } else {
                Err(CliError::Partial {
                    failed: summary.failures.len(),
                    total: summary.failures.len() + summary.written,
                })
            }
        }
        Command::Train {
            common,
            mode,
            alpha_sweep,
            data,
            resume,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(m) = mode {
                cfg.modes = parse_modes(&m)?;
            }
            if let Some(a) = alpha_sweep {
                cfg.alpha_sweep = parse_alphas(&a)?;
                if !cfg.modes.contains(&amtl::model::Mode::AgeSpk) {
                    cfg.modes.push(amtl::model::Mode::AgeSpk);
                }
            }
            if let Some(d) = data {
                cfg.archives = commands::data_archives(&d)?;
            }
            let opts = TrainOptions {
                out: common.out.clone(),
                force: common.force,
                resume,
            };
            let summary = commands::train(&cfg, &opts)?;
            for run in &summary.runs {
                match run.best() {
                    Some(b) => println!(
                        "{:<22} best repeat {:>3}  dev {:.2}%  test {:.2}%",
                        run.plan.name,
                        b.repeat,
                        100.0 * b.dev.overall_fer,
                        100.0 * b.test.overall_fer
                    ),
                    None => println!("{:<22} no completed repeats", run.plan.name),
                }
            }
            if let Some(c) = &summary.comparison {
                print!("\n{}", c.to_table());
            }
            if let Some(s) = &summary.sweep_table {
                print!("\n{s}");
            }
            match summary.runs.into_iter().find_map(|r| r.failure.map(|e| (r.plan.name, e))) {
                Some((name, e)) => {
                    eprintln!("run {name} stopped early");
                    Err(e.into())
                }
                None => Ok(()),
            }
        }
        Command::Report { out, run_dirs } => {
            print!("{}", commands::report(&run_dirs, out.as_deref())?);
            Ok(())
        }
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
