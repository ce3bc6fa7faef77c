use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use qcnet_core::data::{load_records_path, write_records_path, FactorSchema, FactorValues};
use qcnet_core::doe::{
    check_lot, compute_limits, evaluate_plan, CheckMode, PlanSpec, DEFAULT_GRID,
};
use qcnet_core::eval::{evaluate, prediction_rows_csv};
use qcnet_core::net::Mlp;
use qcnet_core::pipeline::{self, prepare, prepare_for_model, PipelineConfig};
use qcnet_core::prune::prune;
use qcnet_core::synth::{bayes_rates, generate, SyntheticProcessSpec};
use qcnet_core::train::train;
use qcnet_core::Error;

use crate::service::{self, AppState, ServiceSettings};

#[derive(Debug, Parser)]
#[command(
    name = "qcnet",
    version,
    about = "Defect-risk models for batch production lines"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic production CSV (and its schema) from a generator spec.
    Synth(SynthArgs),
    /// Train a network on a CSV and write the model file and training report.
    Train(TrainArgs),
    /// Prune a trained model against the validation part of a CSV.
    Prune(PruneArgs),
    /// Non-detection and false-positive rates of a model on a CSV.
    Eval(EvalArgs),
    /// Evaluate a full factorial plan on a model.
    Plan(PlanArgs),
    /// Control limits of the controllable factors in a given context.
    Limits(LimitsArgs),
    /// Decide whether a proposed lot may run.
    Check(CheckArgs),
    /// Train, prune and evaluate in one go.
    Run(RunArgs),
    /// Serve a model over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator spec JSON (default spec when omitted).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 2270)]
    pub rows: usize,
    /// CSV output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the schema JSON.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub schema: PathBuf,
    /// Production CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Pipeline config JSON (defaults when omitted).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Overrides the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Report output path (default: next to the model, `.report.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// With a config, only its validation partition is evaluated; otherwise every row.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// JSON report path; the text report always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-row predictions CSV path.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Plan spec JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset for the statistics fixed-value policy.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output directory for the surface, marginals and plots.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LimitsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// JSON object of context factor values.
    #[arg(long)]
    pub context: PathBuf,
    #[arg(long, default_value_t = qcnet_core::eval::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// JSON object with a value for every factor.
    #[arg(long)]
    pub lot: PathBuf,
    #[arg(long, default_value = "limitation")]
    pub mode: String,
    #[arg(long, default_value_t = qcnet_core::eval::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output directory for `model.json` and `report.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = qcnet_core::eval::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value = "limitation")]
    pub mode: String,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    pub grid: usize,
}

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Server(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    /// One-line JSON description: `{"error": kind, "field": ..., "message": ...}`.
    pub fn to_json_line(&self) -> String {
        match self {
            CliError::Core(e) => {
                let mut v = json!({"error": e.kind(), "message": e.to_string()});
                if let Some(f) = e.field() {
                    v["field"] = json!(f);
                }
                v.to_string()
            }
            CliError::Server(m) => json!({"error": "server", "message": m}).to_string(),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| {
        CliError::Core(Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        )))
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write(p, text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load_schema(path: &Path) -> Result<FactorSchema, CliError> {
    Ok(FactorSchema::from_json(&read(path)?)?)
}

fn load_model(path: &Path, schema: &FactorSchema) -> Result<Mlp, CliError> {
    let m = Mlp::from_json(&read(path)?)?;
    m.check_schema(schema)?;
    Ok(m)
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    match path {
        Some(p) => Ok(PipelineConfig::from_json(&read(p)?)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn load_values(path: &Path) -> Result<FactorValues, CliError> {
    Ok(serde_json::from_str(&read(path)?).map_err(Error::Json)?)
}

fn report_path(model_out: &Path, explicit: Option<&PathBuf>) -> PathBuf {
    explicit
        .cloned()
        .unwrap_or_else(|| model_out.with_extension("report.json"))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Prune(a) => prune_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Plan(a) => plan_cmd(a),
        Command::Limits(a) => limits_cmd(a),
        Command::Check(a) => check_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let mut spec = match &a.config {
        Some(p) => SyntheticProcessSpec::from_json(&read(p)?)?,
        None => SyntheticProcessSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let records = generate(&spec, a.rows)?;
    write(&a.out, "")?;
    write_records_path(&a.out, &spec.schema, &records)?;
    if let Some(p) = &a.schema {
        write(p, &spec.schema.to_json())?;
    }
    let positives = records
        .iter()
        .filter(|r| {
            r.defect_flags
                .get(&spec.defect_name)
                .copied()
                .unwrap_or(false)
        })
        .count();
    let bayes = bayes_rates(
        &spec,
        qcnet_core::eval::DEFAULT_THRESHOLD,
        100_000,
        spec.seed,
    )?;
    println!(
        "{}",
        json!({
            "rows": records.len(),
            "positives": positives,
            "defect": spec.defect_name,
            "bayes": bayes,
        })
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    let schema = load_schema(&a.data.schema)?;
    let mut config = load_config(a.data.config.as_deref())?;
    if let Some(s) = a.seed {
        config.train.master_seed = s;
    }
    let records = load_records_path(&a.data.data, &schema)?;
    let p = prepare(&records, &schema, &config, None)?;
    let (model, report) = train(&p.ident, &p.valid, &config.train)?;
    write(&a.out, &model.to_json())?;
    let rp = report_path(&a.out, a.report.as_ref());
    write(&rp, &report.to_json())?;
    eprint!("{}", report.to_table());
    Ok(())
}

fn prune_cmd(a: PruneArgs) -> Result<(), CliError> {
    let schema = load_schema(&a.data.schema)?;
    let mut config = load_config(a.data.config.as_deref())?;
    if let Some(s) = a.seed {
        config.train.master_seed = s;
    }
    let model = load_model(&a.model, &schema)?;
    let records = load_records_path(&a.data.data, &schema)?;
    let p = prepare_for_model(&model, &records, &schema, &config)?;
    let pc = config.prune.unwrap_or_default();
    let (pruned, report) = prune(&model, &p.ident, &p.valid, &pc, &config.train)?;
    write(&a.out, &pruned.to_json())?;
    write(&report_path(&a.out, a.report.as_ref()), &report.to_json())?;
    eprint!("{}", report.to_table());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<(), CliError> {
    let schema = load_schema(&a.schema)?;
    let model = load_model(&a.model, &schema)?;
    let mut config = load_config(a.config.as_deref())?;
    if let Some(t) = a.threshold {
        config.threshold = t;
        config.validate()?;
    }
    let records = load_records_path(&a.data, &schema)?;
    let enc = model
        .encoding()
        .ok_or_else(|| Error::Model("model has no input encoding".into()))?;
    let data = if a.config.is_some() {
        prepare_for_model(&model, &records, &schema, &config)?.valid
    } else {
        qcnet_core::data::encode(
            &records,
            &schema,
            model.defect_name(),
            qcnet_core::data::NormSource::Params(&enc.norm_params),
        )?
    };
    let report = evaluate(&model, &data, config.threshold, config.fp_mode)?;
    print!("{}", report.to_text());
    if let Some(p) = &a.out {
        write(p, &report.to_json())?;
    }
    if let Some(p) = &a.predictions {
        write(p, &prediction_rows_csv(&model, &data, config.threshold)?)?;
    }
    Ok(())
}

fn plan_cmd(a: PlanArgs) -> Result<(), CliError> {
    let schema = load_schema(&a.schema)?;
    let model = load_model(&a.model, &schema)?;
    let mut spec: PlanSpec = PlanSpec::from_json(&read(&a.config)?)?;
    if let Some(t) = a.threshold {
        spec.threshold = t;
    }
    let records = match &a.data {
        Some(p) => Some(load_records_path(p, &schema)?),
        None => None,
    };
    let plan = spec.build(&schema, records.as_deref())?;
    let surface = evaluate_plan(&model, &plan)?;
    fs::create_dir_all(&a.out)?;
    write(&a.out.join("surface.csv"), &surface.grid_csv())?;
    write(&a.out.join("marginals.csv"), &surface.marginals_csv())?;
    for (factor, svg) in surface.marginal_plots() {
        write(&a.out.join(format!("marginal_{factor}.svg")), &svg)?;
    }
    println!(
        "{}",
        json!({"rows": surface.rows.len(), "factors": surface.factors, "out": a.out})
    );
    Ok(())
}

fn limits_cmd(a: LimitsArgs) -> Result<(), CliError> {
    let schema = load_schema(&a.schema)?;
    let model = load_model(&a.model, &schema)?;
    let ctx = load_values(&a.context)?;
    let limits = compute_limits(&model, &schema, &ctx, a.threshold, a.grid)?;
    emit(a.out.as_deref(), &limits.to_json())
}

fn check_cmd(a: CheckArgs) -> Result<(), CliError> {
    let schema = load_schema(&a.schema)?;
    let model = load_model(&a.model, &schema)?;
    let lot = load_values(&a.lot)?;
    let mode: CheckMode = a.mode.parse()?;
    let decision = check_lot(&model, &schema, &lot, mode, a.threshold, a.grid)?;
    emit(a.out.as_deref(), &decision.to_json())
}

fn run_cmd(a: RunArgs) -> Result<(), CliError> {
    let schema = load_schema(&a.data.schema)?;
    let mut config = load_config(a.data.config.as_deref())?;
    if let Some(s) = a.seed {
        config.train.master_seed = s;
    }
    if let Some(t) = a.threshold {
        config.threshold = t;
    }
    let records = load_records_path(&a.data.data, &schema)?;
    let out = pipeline::run(&records, &schema, &config)?;
    fs::create_dir_all(&a.out)?;
    write(&a.out.join("model.json"), &out.model.to_json())?;
    write(&a.out.join("report.json"), &out.report.to_json())?;
    print!("{}", out.report.validation_eval.to_text());
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<(), CliError> {
    let schema = load_schema(&a.schema)?;
    let model = load_model(&a.model, &schema)?;
    let mode: CheckMode = a.mode.parse()?;
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(Error::Config("threshold must be in (0, 1)".into()).into());
    }
    if a.grid < 2 {
        return Err(Error::Config("grid resolution must be >= 2".into()).into());
    }
    let settings = ServiceSettings {
        threshold: a.threshold,
        mode,
        grid_resolution: a.grid,
    };
    let state = Arc::new(AppState::new(schema, model, Some(a.model), settings)?);
    let addr = format!("{}:{}", a.host, a.port);
    let rt = tokio::runtime::Runtime::new()?;
    eprintln!("serving on http://{addr}");
    rt.block_on(service::serve(state, &addr))
        .map_err(|e| CliError::Server(e.to_string()))
}
