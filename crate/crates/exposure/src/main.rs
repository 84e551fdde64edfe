//! Command-line front end for the exposure-estimation pipeline.
//!
//! Every subcommand takes the same TOML experiment description and runs the
//! stage pipeline up to a chosen point, reusing cached artifacts where the
//! inputs are unchanged. Exit codes: 0 success, 2 configuration error,
//! 3 data error, 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use exposure::error::{Error, Result};
use exposure::estimators::Method;
use exposure::eval::{cell_name, estimate_single, render_markdown, write_report};
use exposure::matrices::write_matrix_csv;
use exposure::pipeline::{
    load_experiment_data, run_pipeline, run_stages, score_pipeline, Artifacts, CorpusSource,
    PipelineConfig, Stage, StageReport,
};

#[derive(Parser)]
#[command(
    name = "exposure",
    version,
    about = "Estimate topic exposure for low-activity social media users"
)]
struct Cli {
    /// Random seed; overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Print extra detail (artifact locations, the rendered report).
    #[arg(long, global = true)]
    verbose: bool,

    /// Treat recoverable corpus defects (e.g. tweets from unknown users)
    /// as errors instead of skipping them.
    #[arg(long, global = true)]
    strict: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic-corpus generation.
    Synth {
        #[command(subcommand)]
        cmd: SynthCmd,
    },
    /// Corpus operations: participation roles and mock engagers.
    Corpus {
        #[command(subcommand)]
        cmd: CorpusCmd,
    },
    /// Topic vocabulary extraction.
    Topics {
        #[command(subcommand)]
        cmd: TopicsCmd,
    },
    /// Feature-matrix assembly.
    Matrices {
        #[command(subcommand)]
        cmd: MatricesCmd,
    },
    /// Estimate one estimator/profile combination over all mock engagers.
    Estimate(EstimateArgs),
    /// Scoring and report rendering.
    Eval {
        #[command(subcommand)]
        cmd: EvalCmd,
    },
    /// Run every stage end to end and render the report.
    Pipeline(RunArgs),
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Generate users.jsonl, tweets.jsonl and the exposure ground truth.
    Generate(RunArgs),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Classify every user as lurker, engager or contributor.
    Classify(RunArgs),
    /// Thin contributors into mock engagers with known ground truth.
    Mock(RunArgs),
}

#[derive(Subcommand)]
enum TopicsCmd {
    /// Extract the topic vocabulary from the corpus.
    Build(RunArgs),
}

#[derive(Subcommand)]
enum MatricesCmd {
    /// Build activity, profile and feature matrices for all posting users.
    Build(RunArgs),
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Score the estimate grid on the test fold and write the report.
    Run(EvalRunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment description (TOML).
    #[arg(long)]
    config: PathBuf,

    /// Working directory for artifacts; overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    run: RunArgs,

    /// Estimator to run.
    #[arg(long, value_enum)]
    method: MethodArg,

    /// Append profile columns to the feature rows.
    #[arg(long)]
    profile: bool,
}

#[derive(Args)]
struct EvalRunArgs {
    /// Experiment description (TOML).
    #[arg(long)]
    config: PathBuf,

    /// Where report.csv, report.md and per_user/ land; defaults to
    /// `<out_dir>/report`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Nn,
    Cnn,
    Pf,
    Encdec,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Nn => Method::Nn,
            MethodArg::Cnn => Method::Cnn,
            MethodArg::Pf => Method::Pf,
            MethodArg::Encdec => Method::Encdec,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth {
            cmd: SynthCmd::Generate(args),
        } => {
            let (config, out) = load(args, &cli)?;
            if !matches!(config.source, CorpusSource::Synth(_)) {
                return Err(Error::Config(
                    "synth generate needs a [synth] section in the config".into(),
                ));
            }
            run_to(&config, &out, Stage::Corpus, cli.verbose)
        }
        Command::Corpus {
            cmd: CorpusCmd::Classify(args),
        } => {
            let (config, out) = load(args, &cli)?;
            run_to(&config, &out, Stage::Classify, cli.verbose)
        }
        Command::Corpus {
            cmd: CorpusCmd::Mock(args),
        } => {
            let (config, out) = load(args, &cli)?;
            run_to(&config, &out, Stage::Mock, cli.verbose)
        }
        Command::Topics {
            cmd: TopicsCmd::Build(args),
        } => {
            let (config, out) = load(args, &cli)?;
            run_to(&config, &out, Stage::Topics, cli.verbose)
        }
        Command::Matrices {
            cmd: MatricesCmd::Build(args),
        } => {
            let (config, out) = load(args, &cli)?;
            run_to(&config, &out, Stage::Matrices, cli.verbose)
        }
        Command::Estimate(args) => {
            let (config, out) = load(&args.run, &cli)?;
            let method = Method::from(args.method);
            // reject the undefined combination before any stage runs
            if method == Method::Pf && args.profile {
                return Err(Error::Config(
                    "the pf estimator has no profile-aware variant".into(),
                ));
            }
            let (stages, _) = run_stages(&config, &out, Stage::Matrices)?;
            print_stages(&stages);
            let art = Artifacts::resolve(&config, &out);
            let data = load_experiment_data(&art)?;
            let estimates = estimate_single(&data, &config.experiment, method, args.profile)?;
            std::fs::create_dir_all(&art.estimates_dir)
                .map_err(|e| Error::io(&art.estimates_dir, e))?;
            let path = art.estimate(&cell_name(method, args.profile));
            write_matrix_csv(&path, &estimates)?;
            println!("estimates: {}", path.display());
            Ok(())
        }
        Command::Eval {
            cmd: EvalCmd::Run(args),
        } => {
            let mut config = PipelineConfig::load(&args.config, cli.seed)?;
            config.strict |= cli.strict;
            let out = config.resolve_out_dir(None)?;
            let (stages, _) = run_stages(&config, &out, Stage::Estimate)?;
            print_stages(&stages);
            let report = score_pipeline(&config, &out)?;
            let report_dir = args.out.clone().unwrap_or_else(|| out.join("report"));
            write_report(&report, &report_dir)?;
            if cli.verbose {
                print!("{}", render_markdown(&report));
            }
            println!("report: {}", report_dir.join("report.md").display());
            Ok(())
        }
        Command::Pipeline(args) => {
            let (config, out) = load(args, &cli)?;
            let (stages, report) = run_pipeline(&config, &out)?;
            print_stages(&stages);
            if cli.verbose {
                print!("{}", render_markdown(&report));
            }
            println!("report: {}", out.join("report/report.md").display());
            Ok(())
        }
    }
}

fn load(args: &RunArgs, cli: &Cli) -> Result<(PipelineConfig, PathBuf)> {
    let mut config = PipelineConfig::load(&args.config, cli.seed)?;
    config.strict |= cli.strict;
    let out = config.resolve_out_dir(args.out.clone())?;
    Ok((config, out))
}

fn run_to(config: &PipelineConfig, out: &Path, upto: Stage, verbose: bool) -> Result<()> {
    let (stages, _) = run_stages(config, out, upto)?;
    print_stages(&stages);
    if verbose {
        println!("artifacts in {}", out.display());
    }
    Ok(())
}

fn print_stages(stages: &[StageReport]) {
    for s in stages {
        println!("stage {}: {}", s.name, s.outcome);
    }
}
