use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfsurrogate::modelstore::PayloadFormat;
use mfsurrogate::surrogate::ModelKind;
use mfsurrogate::synthbench::SamplerKind;
use mfsurrogate::Error;
use mfsurrogate_cli::commands::{self, BenchRequest, SynthRequest};
use mfsurrogate_cli::config::{DataSection, FidelitySection};
use mfsurrogate_cli::{CmdResult, Context, RunConfig, RunDir, StageError};

/// Multi-fidelity surrogate modeling: ingest, tune, train, evaluate and
/// predict from tensor-text or CSV data.
///
/// Exit codes: 0 success, 2 input or configuration error, 3 numerical failure.
#[derive(Parser, Debug)]
#[command(name = "mfsurrogate", version, about, long_about)]
struct Cli {
    /// Run configuration file (TOML). Command-line flags override its keys.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for splitting, hyperparameter restarts, network initialization and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory for all artifacts. For `predict`, the prediction CSV file.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Log more detail (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Input tensor (tensor-text, or CSV with a header row).
    #[arg(long, value_name = "FILE", requires = "output")]
    input: Option<PathBuf>,

    /// Output tensor matching --input row for row.
    #[arg(long, value_name = "FILE", requires = "input")]
    output: Option<PathBuf>,

    /// Fidelity label recorded with the data.
    #[arg(long)]
    fidelity: Option<String>,
}

#[derive(Args, Debug, Default)]
struct SplitArgs {
    /// Fraction of samples used for training.
    #[arg(long)]
    train_frac: Option<f64>,

    /// Fraction of samples held out for testing.
    #[arg(long)]
    test_frac: Option<f64>,

    /// Fraction of samples used for model selection and early stopping.
    #[arg(long)]
    val_frac: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// Model family to tune: gpr or mlp.
    #[arg(long, value_parser = parse_model_kind)]
    model: Option<ModelKind>,

    /// Bundle name; bundles are saved as <project>_v<k>.
    #[arg(long)]
    project: Option<String>,

    /// Bundle payload format: text or binary.
    #[arg(long, value_parser = parse_payload)]
    payload: Option<PayloadFormat>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a dataset, split it and write a summary plus tensor-text copies.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Tune over the configured grid, save the winner and evaluate it on the test bin.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        split: SplitArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Train a multi-fidelity chain and evaluate it on the high-fidelity test bin.
    MfTrain {
        /// Low-fidelity inputs.
        #[arg(long, value_name = "FILE", requires_all = ["lf_output", "hf_input", "hf_output"])]
        lf_input: Option<PathBuf>,
        /// Low-fidelity outputs.
        #[arg(long, value_name = "FILE", requires = "lf_input")]
        lf_output: Option<PathBuf>,
        /// High-fidelity inputs.
        #[arg(long, value_name = "FILE", requires = "lf_input")]
        hf_input: Option<PathBuf>,
        /// High-fidelity outputs.
        #[arg(long, value_name = "FILE", requires = "lf_input")]
        hf_output: Option<PathBuf>,
        #[command(flatten)]
        split: SplitArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Sweep the configured grid and write every candidate's validation score.
    Tune {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        split: SplitArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Predict at new design sites with a saved bundle.
    Predict {
        /// Bundle directory written by train or mf-train.
        #[arg(long, value_name = "DIR")]
        model_dir: PathBuf,
        /// Design sites (CSV with a header row, or tensor-text).
        #[arg(long, value_name = "FILE")]
        sites: PathBuf,
        /// Also write GPR predictive standard deviations.
        #[arg(long)]
        with_std: bool,
    },
    /// Evaluate a saved bundle on every row of a dataset.
    Evaluate {
        /// Bundle directory written by train or mf-train.
        #[arg(long, value_name = "DIR")]
        model_dir: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Learning curve of the tuned model over nested training subsets.
    Convergence {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        split: SplitArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Training subset sizes, e.g. 8,16,32.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Generate a synthetic low/high-fidelity dataset pair.
    Synth {
        /// Analytic pair: forrester, linear or trig4.
        #[arg(long, default_value = "forrester")]
        pair: String,
        /// Low-fidelity sample count.
        #[arg(long, default_value_t = 50)]
        n_lf: usize,
        /// High-fidelity sample count.
        #[arg(long, default_value_t = 8)]
        n_hf: usize,
        /// Test sites evaluated on the high-fidelity function (0 to skip).
        #[arg(long, default_value_t = 200)]
        n_test: usize,
        /// Design: lhs, grid or random.
        #[arg(long, default_value = "lhs", value_parser = parse_sampler)]
        sampler: SamplerKind,
    },
    /// Measure single-site prediction rate.
    Bench {
        /// Bundle to time; without it a synthetic GPR is built.
        #[arg(long, value_name = "DIR")]
        model_dir: Option<PathBuf>,
        /// Number of distinct query sites.
        #[arg(long, default_value_t = 200)]
        sites: usize,
        /// Passes over the query sites.
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Training points of the synthetic GPR.
        #[arg(long, default_value_t = 400)]
        n_train: usize,
        /// Outputs of the synthetic GPR.
        #[arg(long, default_value_t = 128)]
        outputs: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Train { .. } => "train",
            Command::MfTrain { .. } => "mf-train",
            Command::Tune { .. } => "tune",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Convergence { .. } => "convergence",
            Command::Synth { .. } => "synth",
            Command::Bench { .. } => "bench",
        }
    }
}

fn parse_model_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_sampler(s: &str) -> Result<SamplerKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_payload(s: &str) -> Result<PayloadFormat, String> {
    match s {
        "text" => Ok(PayloadFormat::Text),
        "binary" | "bin" => Ok(PayloadFormat::Binary),
        other => Err(format!("unknown payload format `{other}`, expected text or binary")),
    }
}

fn apply_data(cfg: &mut RunConfig, d: &DataArgs) {
    if let (Some(input), Some(output)) = (&d.input, &d.output) {
        cfg.data = Some(DataSection {
            input: input.clone(),
            output: output.clone(),
            fidelity: d.fidelity.clone().unwrap_or_else(|| "HF".into()),
        });
    } else if let (Some(f), Some(data)) = (&d.fidelity, &mut cfg.data) {
        data.fidelity = f.clone();
    }
}

fn apply_split(cfg: &mut RunConfig, s: &SplitArgs) {
    if let Some(v) = s.train_frac {
        cfg.split.train_frac = v;
    }
    if let Some(v) = s.test_frac {
        cfg.split.test_frac = v;
    }
    if let Some(v) = s.val_frac {
        cfg.split.val_frac = v;
    }
}

fn apply_model(cfg: &mut RunConfig, m: &ModelArgs) {
    if let Some(k) = m.model {
        cfg.model = k;
    }
    if let Some(p) = &m.project {
        cfg.project = p.clone();
    }
    if let Some(p) = m.payload {
        cfg.payload = p;
    }
}

fn build_config(cli: &Cli) -> CmdResult<RunConfig> {
    let tag = |error| StageError { stage: "config", error };
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(tag)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    match &cli.command {
        Command::Ingest { data, split } => {
            apply_data(&mut cfg, data);
            apply_split(&mut cfg, split);
        }
        Command::Train { data, split, model } | Command::Tune { data, split, model } => {
            apply_data(&mut cfg, data);
            apply_split(&mut cfg, split);
            apply_model(&mut cfg, model);
        }
        Command::MfTrain {
            lf_input,
            lf_output,
            hf_input,
            hf_output,
            split,
            model,
        } => {
            if let (Some(li), Some(lo), Some(hi), Some(ho)) = (lf_input, lf_output, hf_input, hf_output) {
                cfg.fidelity = vec![
                    FidelitySection {
                        name: "LF".into(),
                        input: li.clone(),
                        output: lo.clone(),
                        model: None,
                    },
                    FidelitySection {
                        name: "HF".into(),
                        input: hi.clone(),
                        output: ho.clone(),
                        model: None,
                    },
                ];
            }
            apply_split(&mut cfg, split);
            apply_model(&mut cfg, model);
        }
        Command::Evaluate { data, .. } => apply_data(&mut cfg, data),
        Command::Convergence {
            data,
            split,
            model,
            sizes,
        } => {
            apply_data(&mut cfg, data);
            apply_split(&mut cfg, split);
            apply_model(&mut cfg, model);
            if let Some(s) = sizes {
                cfg.convergence.sizes = s.clone();
            }
        }
        Command::Predict { .. } | Command::Synth { .. } | Command::Bench { .. } => {}
    }
    cfg.validate().map_err(tag)?;
    Ok(cfg)
}

/// Log lines go to stderr and, when a run directory exists, to `run.log`.
struct Tee(Option<File>);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        std::io::stderr().write_all(buf)?;
        if let Some(f) = &mut self.0 {
            f.write_all(buf)?;
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        std::io::stderr().flush()?;
        if let Some(f) = &mut self.0 {
            f.flush()?;
        }
        Ok(())
    }
}

fn init_logging(verbose: u8, log_file: Option<PathBuf>) {
    let level = match verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let file = log_file.and_then(|p| File::create(p).ok());
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .write_style(env_logger::WriteStyle::Never)
        .format_timestamp_secs()
        .target(env_logger::Target::Pipe(Box::new(Tee(file))))
        .init();
}

fn run(cli: Cli) -> CmdResult<()> {
    let config = build_config(&cli)?;

    if let Command::Predict {
        model_dir,
        sites,
        with_std,
    } = &cli.command
    {
        init_logging(cli.verbose, None);
        let out = config.out.clone().unwrap_or_else(|| PathBuf::from("predictions.csv"));
        let rows = commands::cmd_predict(model_dir, sites, &out, *with_std)?;
        println!("wrote {rows} predictions to {}", out.display());
        return Ok(());
    }

    let run = RunDir::create(config.out.as_deref(), cli.command.name())
        .map_err(|error| StageError { stage: "setup", error })?;
    init_logging(cli.verbose, Some(run.file("run.log")));
    log::info!("{} run in {}", cli.command.name(), run.path.display());
    let ctx = Context::new(config, run)?;

    match &cli.command {
        Command::Ingest { .. } => {
            let summary = commands::cmd_ingest(&ctx)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("plain json"));
        }
        Command::Train { .. } => {
            let out = commands::cmd_train(&ctx)?;
            println!("{}", out.report);
            println!("bundle: {}", out.bundle.display());
        }
        Command::MfTrain { .. } => {
            let out = commands::cmd_mf_train(&ctx)?;
            println!("{}", out.report);
            println!("bundle: {}", out.bundle.display());
        }
        Command::Tune { .. } => {
            let sweep = commands::cmd_tune(&ctx)?;
            print!("{}", sweep.to_csv());
            println!("selected: {}", sweep.winner().label);
        }
        Command::Evaluate { model_dir, .. } => {
            let report = commands::cmd_evaluate(&ctx, model_dir)?;
            println!("{report}");
        }
        Command::Convergence { .. } => {
            let curve = commands::cmd_convergence(&ctx)?;
            print!("{}", curve.to_csv());
        }
        Command::Synth {
            pair,
            n_lf,
            n_hf,
            n_test,
            sampler,
        } => {
            let req = SynthRequest {
                pair: pair.clone(),
                n_lf: *n_lf,
                n_hf: *n_hf,
                n_test: *n_test,
                sampler: *sampler,
            };
            for p in commands::cmd_synth(&ctx, &req)? {
                println!("{}", p.display());
            }
        }
        Command::Bench {
            model_dir,
            sites,
            repeats,
            n_train,
            outputs,
        } => {
            let req = BenchRequest {
                model_dir: model_dir.clone(),
                sites: *sites,
                repeats: *repeats,
                n_train: *n_train,
                outputs: *outputs,
            };
            let t = commands::cmd_bench(&ctx, &req)?;
            println!(
                "{} predictions in {:.3} s: {:.0} predictions/s",
                t.predictions, t.seconds, t.per_second
            );
        }
        Command::Predict { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
