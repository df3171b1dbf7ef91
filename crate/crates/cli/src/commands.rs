//! One function per subcommand. Each writes its artifacts into the run
//! directory and returns a summary for the caller to print.

use std::fmt;
use std::path::{Path, PathBuf};

use mfsurrogate::dataset::{
    export_tensor, flatten, write_text, DataTensor, FidelityDataset, FlatMatrix, TensorFormat,
};
use mfsurrogate::metrics::{evaluate, one_to_one_export, throughput_benchmark, uq_report, EvalReport, Throughput};
use mfsurrogate::modelstore::{load_model, save_model, SaveOptions, StoredModel, TrainingMetadata};
use mfsurrogate::multifid::{train_chain, write_site_csv, Level, TrainedChain};
use mfsurrogate::preprocess::{preprocess_data_pipeline, Bin, PreparedData};
use mfsurrogate::surrogate::{Layout, RawPredictor, ScaledModel, Surrogate};
use mfsurrogate::synthbench::{generate_pair_dataset, sample, AnalyticPair, Sampler, SamplerKind};
use mfsurrogate::tuner::{convergence_study, tune, ConvergenceCurve, SweepResult};
use mfsurrogate::{Error, ErrorClass};
use serde_json::json;

use crate::config::{DataSection, RunConfig};

/// An error tagged with the pipeline stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self.error.class() {
            ErrorClass::Input => 2,
            ErrorClass::Numeric => 3,
        }
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub type CmdResult<T> = std::result::Result<T, StageError>;

trait Tag<T> {
    fn stage(self, stage: &'static str) -> CmdResult<T>;
}

impl<T> Tag<T> for mfsurrogate::Result<T> {
    fn stage(self, stage: &'static str) -> CmdResult<T> {
        self.map_err(|error| StageError { stage, error })
    }
}

/// Directory that receives every artifact of one invocation.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// `out` if given, else the first free `runs/<command>_<k>`.
    pub fn create(out: Option<&Path>, command: &str) -> mfsurrogate::Result<Self> {
        let path = match out {
            Some(p) => p.to_path_buf(),
            None => (1..)
                .map(|k| PathBuf::from("runs").join(format!("{command}_{k}")))
                .find(|p| !p.exists())
                .expect("unbounded search"),
        };
        std::fs::create_dir_all(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        Ok(Self { path })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, text: impl AsRef<[u8]>) -> mfsurrogate::Result<PathBuf> {
        let p = self.file(name);
        write_text(&p, text)?;
        Ok(p)
    }
}

pub struct Context {
    pub config: RunConfig,
    pub run: RunDir,
}

impl Context {
    /// Copies the effective configuration into the run directory.
    pub fn new(config: RunConfig, run: RunDir) -> CmdResult<Self> {
        run.write("config.toml", config.to_toml()).stage("setup")?;
        Ok(Self { config, run })
    }

    fn save_options(&self, fidelity: &str, training: TrainingMetadata) -> SaveOptions {
        SaveOptions {
            fidelity: fidelity.to_string(),
            payload: self.config.payload,
            training,
        }
    }
}

fn data_section(cfg: &RunConfig) -> CmdResult<&DataSection> {
    cfg.data.as_ref().ok_or_else(|| StageError {
        stage: "config",
        error: Error::config("data", "no dataset given; set [data] or pass --input and --output"),
    })
}

fn load_dataset(d: &DataSection) -> CmdResult<FidelityDataset> {
    FidelityDataset::load(&d.fidelity, &d.input, &d.output).stage("ingest")
}

fn shape_metadata(prepared: &PreparedData) -> TrainingMetadata {
    let mut t = TrainingMetadata::default();
    t.seed = Some(prepared.seed);
    for (name, bin) in [("train", Bin::Train), ("val", Bin::Val), ("test", Bin::Test)] {
        t.shapes.insert(format!("x_{name}"), vec![prepared.x(bin).rows(), prepared.x(bin).cols()]);
        t.shapes.insert(format!("y_{name}"), vec![prepared.y(bin).rows(), prepared.y(bin).cols()]);
    }
    t
}

fn sweep_metadata(sweep: &SweepResult) -> serde_json::Value {
    let w = sweep.winner();
    json!({
        "winner": w.label,
        "val_rmse": w.val_rmse,
        "val_r2": w.val_r2,
        "candidates": sweep.candidates.len(),
    })
}

/// Report, JSON report and one-to-one CSV for `model` on the rows of `x`/`y`.
fn write_reports(run: &RunDir, model: &dyn RawPredictor, x: &FlatMatrix, y: &FlatMatrix) -> CmdResult<EvalReport> {
    let report = evaluate(model, x.matrix(), y).stage("evaluate")?;
    run.write("report.txt", report.to_string()).stage("evaluate")?;
    run.write("report.json", report.to_json()).stage("evaluate")?;
    let pred = model.predict_raw(x.matrix()).stage("evaluate")?;
    one_to_one_export(y, &pred, &run.file("one_to_one.csv")).stage("evaluate")?;
    Ok(report)
}

fn model_extras(run: &RunDir, model: &ScaledModel, prepared: &PreparedData, bin: Bin) -> CmdResult<()> {
    match &model.model {
        Surrogate::Mlp(net) => {
            run.write("history.csv", mfsurrogate::mlp::history_csv(net.history()))
                .stage("report")?;
        }
        Surrogate::Gpr(_) => {
            let x = prepared.raw_x(bin);
            let uq = uq_report(model, x.matrix()).stage("report")?;
            let corr = uq.error_std_correlation(prepared.raw_y(bin).matrix()).stage("report")?;
            log::info!("uq: |error| vs std correlation {corr:?}");
            run.write("uq.csv", uq.to_csv(&Layout::of(&x).column_names(), &model.outputs.column_names()))
                .stage("report")?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: PathBuf,
    pub report: EvalReport,
}

/// Load, split and scale a dataset, then write a summary and tensor-text
/// copies of the data.
pub fn cmd_ingest(ctx: &Context) -> CmdResult<serde_json::Value> {
    let d = data_section(&ctx.config)?;
    let data = load_dataset(d)?;
    let prepared = preprocess_data_pipeline(&data, &ctx.config.split_spec()).stage("preprocess")?;
    export_tensor(&data.inputs, &ctx.run.file("inputs.txt"), TensorFormat::TensorText).stage("ingest")?;
    export_tensor(&data.outputs, &ctx.run.file("outputs.txt"), TensorFormat::TensorText).stage("ingest")?;
    let summary = json!({
        "fidelity": data.fidelity,
        "samples": data.len(),
        "inputs": { "shape": data.inputs.shape(), "names": data.inputs.scalar_names() },
        "outputs": { "shape": data.outputs.shape(), "names": data.outputs.scalar_names() },
        "split": {
            "train": prepared.split.train.len(),
            "val": prepared.split.val.len(),
            "test": prepared.split.test.len(),
            "seed": prepared.seed,
        },
        "x_scaler": prepared.x_scaler,
        "y_scaler": prepared.y_scaler,
    });
    ctx.run
        .write("dataset.json", serde_json::to_string_pretty(&summary).expect("plain json"))
        .stage("ingest")?;
    Ok(summary)
}

/// Sweep the configured grid and report every candidate.
pub fn cmd_tune(ctx: &Context) -> CmdResult<SweepResult> {
    let data = load_dataset(data_section(&ctx.config)?)?;
    let prepared = preprocess_data_pipeline(&data, &ctx.config.split_spec()).stage("preprocess")?;
    let grid = ctx.config.grid(ctx.config.model).stage("config")?;
    let tuned = tune(&prepared, &grid).stage("tune")?;
    ctx.run.write("sweep.csv", tuned.result.to_csv()).stage("tune")?;
    ctx.run
        .write("sweep.json", serde_json::to_string_pretty(&tuned.result).expect("plain json"))
        .stage("tune")?;
    Ok(tuned.result)
}

/// Full single-fidelity pipeline: tune, keep the winner, save, evaluate.
pub fn cmd_train(ctx: &Context) -> CmdResult<TrainOutcome> {
    let d = data_section(&ctx.config)?;
    let data = load_dataset(d)?;
    let prepared = preprocess_data_pipeline(&data, &ctx.config.split_spec()).stage("preprocess")?;
    let grid = ctx.config.grid(ctx.config.model).stage("config")?;
    let tuned = tune(&prepared, &grid).stage("tune")?;
    log::info!("selected {}", tuned.result.winner().label);
    ctx.run.write("sweep.csv", tuned.result.to_csv()).stage("tune")?;

    let mut training = shape_metadata(&prepared);
    training.extra = sweep_metadata(&tuned.result);
    let stored = StoredModel::Single(tuned.model);
    let bundle = save_model(
        &stored,
        &ctx.run.file("models"),
        &ctx.config.project,
        &ctx.save_options(&data.fidelity, training),
    )
    .stage("save")?;

    let bin = Bin::Test;
    let model = stored.as_single().expect("single model");
    let report = write_reports(&ctx.run, model, &prepared.raw_x(bin), &prepared.raw_y(bin))?;
    model_extras(&ctx.run, model, &prepared, bin)?;
    Ok(TrainOutcome { bundle, report })
}

/// Multi-fidelity chain over the configured `[[fidelity]]` levels.
pub fn cmd_mf_train(ctx: &Context) -> CmdResult<TrainOutcome> {
    let cfg = &ctx.config;
    if cfg.fidelity.len() < 2 {
        return Err(StageError {
            stage: "config",
            error: Error::config(
                "fidelity",
                "mf-train needs at least two [[fidelity]] levels or the --lf-*/--hf-* flags",
            ),
        });
    }
    let levels = cfg
        .fidelity
        .iter()
        .map(|f| {
            let data = load_dataset(&DataSection {
                input: f.input.clone(),
                output: f.output.clone(),
                fidelity: f.name.clone(),
            })?;
            let grid = cfg.grid(f.model.unwrap_or(cfg.model)).stage("config")?;
            Ok(Level { data, grid })
        })
        .collect::<CmdResult<Vec<_>>>()?;
    let chain: TrainedChain = train_chain(&levels, &cfg.split_spec()).stage("mf-train")?;

    let mut sweeps = serde_json::Map::new();
    for level in &chain.levels {
        let name = level.fidelity.replace(|c: char| !c.is_ascii_alphanumeric(), "_");
        ctx.run.write(&format!("sweep_{name}.csv"), level.sweep.to_csv()).stage("tune")?;
        sweeps.insert(level.fidelity.clone(), sweep_metadata(&level.sweep));
    }
    let top = chain.top();
    let mut training = shape_metadata(&top.prepared);
    training.extra = json!({ "levels": sweeps });
    let top_name = top.fidelity.clone();
    let bin = Bin::Test;
    let rows = top.prepared.split.get(bin).to_vec();

    let stored = StoredModel::Composite(chain.composite);
    let bundle = save_model(
        &stored,
        &ctx.run.file("models"),
        &cfg.project,
        &ctx.save_options(&top_name, training),
    )
    .stage("save")?;

    let hf = &levels.last().expect("two levels").data;
    let x = flatten(&hf.inputs).select_rows(&rows);
    let y = flatten(&hf.outputs).select_rows(&rows);
    let report = write_reports(&ctx.run, &stored, &x, &y)?;
    Ok(TrainOutcome { bundle, report })
}

fn read_sites(path: &Path) -> CmdResult<DataTensor> {
    mfsurrogate::dataset::import_tensor(path, TensorFormat::from_path(path)).stage("predict")
}

/// Predictions (and GPR standard deviations if asked) at new design sites.
/// Returns the number of rows written.
pub fn cmd_predict(model_dir: &Path, sites: &Path, out: &Path, with_std: bool) -> CmdResult<usize> {
    let bundle = load_model(model_dir).stage("load")?;
    let sites = read_sites(sites)?;
    let x = flatten(&sites);
    if x.cols() != bundle.model.input_dim() {
        return Err(StageError {
            stage: "predict",
            error: Error::Dimension {
                context: "design-site columns",
                expected: bundle.model.input_dim(),
                actual: x.cols(),
            },
        });
    }
    if with_std {
        let single = bundle.model.as_single().ok_or_else(|| StageError {
            stage: "predict",
            error: Error::Unsupported("--with-std needs a single GPR bundle".into()),
        })?;
        let uq = uq_report(single, x.matrix()).stage("predict")?;
        let text = uq.to_csv(&Layout::of(&x).column_names(), &single.outputs.column_names());
        write_text(out, text).stage("predict")?;
    } else {
        let pred = bundle.model.predict_raw(x.matrix()).stage("predict")?;
        write_site_csv(&x, bundle.model.output_layout(), &pred, out).stage("predict")?;
    }
    Ok(x.rows())
}

/// Metrics of a saved bundle on every row of a dataset.
pub fn cmd_evaluate(ctx: &Context, model_dir: &Path) -> CmdResult<EvalReport> {
    let bundle = load_model(model_dir).stage("load")?;
    let data = load_dataset(data_section(&ctx.config)?)?;
    write_reports(&ctx.run, &bundle.model, &flatten(&data.inputs), &flatten(&data.outputs))
}

/// Learning curve for the tuned winner over nested training subsets.
pub fn cmd_convergence(ctx: &Context) -> CmdResult<ConvergenceCurve> {
    let cfg = &ctx.config;
    if cfg.convergence.sizes.is_empty() {
        return Err(StageError {
            stage: "config",
            error: Error::config("convergence.sizes", "no subset sizes given; set them or pass --sizes"),
        });
    }
    let data = load_dataset(data_section(cfg)?)?;
    let prepared = preprocess_data_pipeline(&data, &cfg.split_spec()).stage("preprocess")?;
    let tuned = tune(&prepared, &cfg.grid(cfg.model).stage("config")?).stage("tune")?;
    let spec = tuned.result.winner().spec.clone();
    log::info!("convergence study for {}", spec.label());
    let curve = convergence_study(&data, &cfg.split_spec(), &spec, &cfg.convergence.sizes).stage("convergence")?;
    ctx.run.write("convergence.csv", curve.to_csv()).stage("convergence")?;
    Ok(curve)
}

#[derive(Debug, Clone)]
pub struct SynthRequest {
    pub pair: String,
    pub n_lf: usize,
    pub n_hf: usize,
    pub n_test: usize,
    pub sampler: SamplerKind,
}

/// Writes `{lf,hf,test}_{inputs,outputs}.txt` and a ready-to-run
/// `mf.toml` chain config into the run directory.
pub fn cmd_synth(ctx: &Context, req: &SynthRequest) -> CmdResult<Vec<PathBuf>> {
    let pair = AnalyticPair::by_name(&req.pair).stage("synth")?;
    let seed = ctx.config.seed;
    let sampler = Sampler { kind: req.sampler, seed };
    let (lf, hf) = generate_pair_dataset(&pair, req.n_lf, req.n_hf, &sampler).stage("synth")?;
    let mut written = Vec::new();
    for (prefix, data) in [("lf", &lf), ("hf", &hf)] {
        for (part, tensor) in [("inputs", &data.inputs), ("outputs", &data.outputs)] {
            let p = ctx.run.file(&format!("{prefix}_{part}.txt"));
            export_tensor(tensor, &p, TensorFormat::TensorText).stage("synth")?;
            written.push(p);
        }
    }
    if req.n_test > 0 {
        let d = pair.dim();
        let grid_ok = (req.n_test as f64).powf(1.0 / d as f64).round().powi(d as i32) as usize == req.n_test;
        let test_sampler = if grid_ok { Sampler::grid() } else { Sampler::random(seed ^ 0x7e57) };
        let x = sample(&test_sampler, &pair.bounds, req.n_test).stage("synth")?;
        let y = pair.truth_evaluate(&x).stage("synth")?;
        let xt = DataTensor::from_table(&x)
            .and_then(|t| t.with_scalar_names(pair.input_names.iter().cloned()))
            .stage("synth")?;
        let yt = DataTensor::from_table(&y)
            .and_then(|t| t.with_scalar_names(pair.output_names.iter().cloned()))
            .stage("synth")?;
        for (part, t) in [("inputs", &xt), ("outputs", &yt)] {
            let p = ctx.run.file(&format!("test_{part}.txt"));
            export_tensor(t, &p, TensorFormat::TensorText).stage("synth")?;
            written.push(p);
        }
    }
    let mf = format!(
        "seed = {seed}\nproject = \"{name}\"\n\n[[fidelity]]\nname = \"LF\"\ninput = \"lf_inputs.txt\"\noutput = \"lf_outputs.txt\"\n\n[[fidelity]]\nname = \"HF\"\ninput = \"hf_inputs.txt\"\noutput = \"hf_outputs.txt\"\n",
        name = pair.name
    );
    written.push(ctx.run.write("mf.toml", mf).stage("synth")?);
    Ok(written)
}

#[derive(Debug, Clone)]
pub struct BenchRequest {
    pub model_dir: Option<PathBuf>,
    pub sites: usize,
    pub repeats: usize,
    pub n_train: usize,
    pub outputs: usize,
}

/// Single-site prediction rate of a saved bundle, or of a synthetic GPR
/// with `n_train` points and `outputs` outputs when no bundle is given.
pub fn cmd_bench(ctx: &Context, req: &BenchRequest) -> CmdResult<Throughput> {
    let seed = ctx.config.seed;
    let (model, label): (Box<dyn RawPredictor>, String) = match &req.model_dir {
        Some(dir) => {
            let b = load_model(dir).stage("load")?;
            let label = b.model.describe();
            (Box::new(b.model), label)
        }
        None => {
            let m = mfsurrogate::synthbench::throughput_gpr(req.n_train, req.outputs, seed).stage("bench")?;
            let label = format!("synthetic gpr n={} q={}", req.n_train, req.outputs);
            (Box::new(m), label)
        }
    };
    let bounds = vec![(0.0, 1.0); model.input_dim()];
    let x = sample(&Sampler::random(seed.wrapping_add(1)), &bounds, req.sites.max(1)).stage("bench")?;
    let t = throughput_benchmark(model.as_ref(), &x, req.repeats).stage("bench")?;
    let out = json!({
        "model": label,
        "predictions": t.predictions,
        "seconds": t.seconds,
        "per_second": t.per_second,
    });
    ctx.run
        .write("bench.json", serde_json::to_string_pretty(&out).expect("plain json"))
        .stage("bench")?;
    Ok(t)
}
