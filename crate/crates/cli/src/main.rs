use std::path::PathBuf;
use std::process::ExitCode;

use caopd_cli::commands::check_report_file;
use caopd_cli::{ablate_k, continual, eval_transcripts, train, verify_propositions, CliError, Common, Outcome};
use caopd_core::infotheory::Expectation;
use caopd_core::EvalMode;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "caopd", version, about = "Calibration experiments on exactly enumerable self-distillation worlds")]
struct Cli {
    /// Output directory (defaults to the manifest's `out`, then $CAOPD_OUT_DIR/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the seed in the manifest or world spec.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Also write SVG charts.
    #[arg(long, global = true)]
    svg: bool,
    /// Equal-width ECE bins.
    #[arg(long, global = true, default_value_t = 10)]
    bins: usize,
    /// Replaces the bundled acceptance thresholds.
    #[arg(long, global = true)]
    threshold_file: Option<PathBuf>,
    /// Exit 1 when a directional check of train, ablate-k or continual fails.
    #[arg(long, global = true)]
    strict: bool,
    /// Run independent regimes or K values in parallel.
    #[arg(long, global = true)]
    parallel: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Mcq,
    Tool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Expect {
    Informative,
    Null,
}

#[derive(Subcommand)]
enum Command {
    /// Check the entropy, projection and optimism identities on randomized worlds.
    VerifyPropositions {
        #[arg(long, required_unless_present = "check_report")]
        world: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Only run the checker on a stored report.
        #[arg(long)]
        check_report: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Expect::Informative)]
        expect: Expect,
    },
    /// Train every config of a manifest on its world.
    Train {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Rerun target replacement for several rollout counts.
    AblateK {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
        k_list: Vec<usize>,
    },
    /// Train on world A, then continue on world B.
    Continual {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Score a JSONL file of transcripts.
    EvalTranscripts {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Mcq)]
        mode: Mode,
        /// Exit 1 when the fraction of transcripts without a confidence exceeds this.
        #[arg(long)]
        max_format_failure: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    if cli.bins == 0 {
        return Err(CliError::Input("--bins must be at least 1".into()));
    }
    let common = Common {
        out: cli.out,
        seed: cli.seed,
        svg: cli.svg,
        bins: cli.bins,
        threshold_file: cli.threshold_file,
        strict: cli.strict,
        parallel: cli.parallel,
    };
    match cli.command {
        Command::VerifyPropositions { world, trials, check_report, expect } => match check_report {
            Some(path) => check_report_file(
                &path,
                match expect {
                    Expect::Informative => Expectation::Informative,
                    Expect::Null => Expectation::Null,
                },
            ),
            None => verify_propositions(&world.expect("clap enforces --world"), trials, &common),
        },
        Command::Train { manifest } => train(&manifest, &common),
        Command::AblateK { manifest, k_list } => ablate_k(&manifest, &k_list, &common),
        Command::Continual { manifest } => continual(&manifest, &common),
        Command::EvalTranscripts { input, mode, max_format_failure } => {
            let mode = match mode {
                Mode::Mcq => EvalMode::Mcq,
                Mode::Tool => EvalMode::Tool,
            };
            eval_transcripts(&input, mode, max_format_failure, &common)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for c in &outcome.checks {
                println!("[{}] {}{}", if c.passed { "pass" } else { "FAIL" }, c.name, if c.detail.is_empty() { String::new() } else { format!(": {}", c.detail) });
            }
            println!("output: {}", outcome.out_dir.display());
            ExitCode::from(outcome.exit_code())
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
