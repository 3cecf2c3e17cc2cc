//! `widthforge`: file-based pipeline for projecting, optimizing, and transferring CNN widths.
//!
//! Exit codes: 0 success, 2 validation, 3 evaluator, 4 extrapolation. Errors go to
//! stderr as one JSON object per line: `{"code", "message", "path"}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use widthforge_core::analysis::{emit_report, expand_to_layers, similarity_matrix, ReportFormat, RunRecord};
use widthforge_core::archspec::{apply_width, build_preset, flops, Overrides, PRESETS};
use widthforge_core::digest::json_digest;
use widthforge_core::extrapolation::{transfer, Stacking, TransferPlan};
use widthforge_core::optimizers::{
    optimize, Algorithm, AuditLog, BridgeEvaluator, Evaluator, EvaluatorBudget, OptimizerConfig,
    SyntheticEvaluator,
};
use widthforge_core::projection::{
    config_overhead, idealized_savings, project_arch, project_dataset, savings, DatasetSpec,
    OverheadReport, ProjectionConfig, Savings, DEFAULT_BACKWARD_FACTOR, DEFAULT_SEARCH_EPOCHS,
};
use widthforge_core::{ArchSpec, Error, Rational64, Scalar, Widths};

#[derive(Parser)]
#[command(name = "widthforge", version, about = "Width projection, optimization, and transfer for CNN specs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a built-in architecture as canonical JSON.
    Preset {
        id: String,
        /// Override knob, `key=json-value` (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a balanced dataset descriptor.
    Dataset {
        #[arg(long)]
        name: String,
        #[arg(long)]
        classes: u64,
        #[arg(long)]
        per_class: u64,
        #[arg(long)]
        resolution: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forward MACs of an architecture, optionally after applying a width file.
    Flops {
        arch: String,
        #[arg(long)]
        resolution: Option<u32>,
        #[arg(long)]
        width: Option<PathBuf>,
    },
    /// Project an architecture and dataset to a cheaper configuration.
    Project(ProjectArgs),
    /// Run a width optimizer.
    Optimize(OptimizeArgs),
    /// Extrapolate an optimized width to a deeper or wider architecture.
    Transfer(TransferArgs),
    /// Compare the optimization overhead of two configurations.
    Overhead(OverheadArgs),
    /// Aggregate run records found under a directory.
    Report {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Pairwise cosine similarity of width files.
    Similarity {
        #[arg(required = true)]
        widths: Vec<PathBuf>,
        /// Expand unit multipliers to per-layer vectors of this architecture first.
        #[arg(long)]
        arch: Option<String>,
        #[arg(long, value_enum, default_value_t = GridFormat::Text)]
        format: GridFormat,
    },
}

#[derive(Args)]
struct ProjectArgs {
    arch: String,
    /// Dataset descriptor; defaults to 1000 samples per class at the arch resolution.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "1")]
    width: String,
    #[arg(long, default_value = "1")]
    depth: String,
    #[arg(long)]
    resolution: Option<u32>,
    #[arg(long, default_value = "1")]
    fraction: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    arch: String,
    dataset: PathBuf,
    #[arg(long, default_value = "greedy")]
    algo: String,
    #[arg(long, value_enum, default_value_t = EvaluatorKind::Synthetic)]
    evaluator: EvaluatorKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.5)]
    grow: f64,
    #[arg(long, default_value_t = 8)]
    prune_group: u64,
    #[arg(long, default_value_t = DEFAULT_SEARCH_EPOCHS)]
    epochs: u32,
    #[arg(long, default_value_t = 10_000)]
    max_evals: usize,
    /// Evaluate greedy candidates concurrently when the evaluator allows it.
    #[arg(long)]
    parallel: bool,
    /// Dataset id forwarded to the bridge; defaults to the descriptor name.
    #[arg(long)]
    dataset_id: Option<String>,
    /// Projection tuple this run was optimized at, recorded in record.json.
    #[arg(long)]
    source_config: Option<String>,
    /// Configuration the result is meant for, recorded in record.json.
    #[arg(long)]
    target_config: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TransferArgs {
    width: PathBuf,
    src: String,
    dst: String,
    #[arg(long, default_value = "stack-average-block")]
    stacking: String,
    #[arg(long)]
    resolution: Option<u32>,
    #[arg(long, default_value_t = 0.005)]
    tolerance: f64,
    #[arg(long, default_value_t = 1)]
    divisor: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OverheadArgs {
    /// `width,depth,resolution,fraction` or a ProjectionConfig JSON file.
    source: String,
    target: String,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Idealized)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, default_value_t = DEFAULT_SEARCH_EPOCHS)]
    epochs: u32,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvaluatorKind {
    Synthetic,
    Bridge,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Idealized,
    Measured,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridFormat {
    Text,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

struct Failure {
    exit: u8,
    code: &'static str,
    message: String,
    path: Option<String>,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Failure {
            exit: 2,
            code: "validation",
            message: message.into(),
            path: None,
        }
    }

    fn at(mut self, path: &Path) -> Self {
        self.path.get_or_insert_with(|| path.display().to_string());
        self
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (exit, code) = match e {
            Error::Evaluator(_) | Error::PluginUnavailable(_) => (3, "evaluator"),
            Error::Bracket { .. } | Error::Incompatible(_) => (4, "extrapolation"),
            Error::Io(_) => (2, "io"),
            _ => (2, "validation"),
        };
        Failure {
            exit,
            code,
            message: e.to_string(),
            path: None,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            exit: 2,
            code: "io",
            message: e.to_string(),
            path: None,
        }
    }
}

type CliResult<T> = Result<T, Failure>;

#[derive(Serialize)]
struct RunManifest {
    command: String,
    inputs: BTreeMap<String, String>,
    config_digest: String,
    tool_version: String,
    seed: u64,
}

fn manifest(command: &str, inputs: BTreeMap<String, String>, config: &Value, seed: u64) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        inputs,
        config_digest: json_digest(config),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::from(e).at(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Failure::validation(e.to_string()).at(path))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Failure::from(e).at(path))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn resolved(path: &Path) -> String {
    fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf()).display().to_string()
}

/// An arch argument is a JSON file, or a preset id when no such file exists.
fn load_arch(arg: &str) -> CliResult<(ArchSpec, String)> {
    let path = Path::new(arg);
    if path.exists() {
        let text = read_text(path)?;
        let arch = ArchSpec::from_json(&text).map_err(|e| Failure::from(e).at(path))?;
        return Ok((arch, resolved(path)));
    }
    if PRESETS.contains(&arg) {
        return Ok((build_preset(arg, None)?, format!("preset:{arg}")));
    }
    Err(Failure::validation(format!("no architecture file or preset named `{arg}`")).at(path))
}

fn load_width(path: &Path) -> CliResult<Widths> {
    read_json(path)
}

fn parse_scalar<T: Scalar>(name: &str, text: &str) -> CliResult<T> {
    T::parse_decimal(text).ok_or_else(|| Failure::validation(format!("--{name}: `{text}` is not a number")))
}

fn parse_config<T: Scalar>(arg: &str) -> CliResult<ProjectionConfig<T>> {
    let path = Path::new(arg);
    if path.is_file() {
        let cfg: ProjectionConfig<T> = read_json(path)?;
        cfg.validate().map_err(|e| Failure::from(e).at(path))?;
        return Ok(cfg);
    }
    Ok(ProjectionConfig::parse_tuple(arg)?)
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::from(e).at(dir))
}

fn cmd_preset(id: &str, sets: &[String], out: Option<&Path>) -> CliResult<()> {
    let mut overrides = Overrides::new();
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Failure::validation(format!("--set expects KEY=VALUE, got `{s}`")))?;
        let value: Value = serde_json::from_str(v).map_err(|e| Failure::validation(format!("--set {k}: {e}")))?;
        overrides.insert(k.to_string(), value);
    }
    let arch = build_preset(id, Some(&overrides))?;
    emit(out, &arch.to_canonical_json())
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_flops(arch: &str, resolution: Option<u32>, width: Option<&Path>) -> CliResult<()> {
    let (mut arch, _) = load_arch(arch)?;
    let res = resolution.unwrap_or(arch.default_resolution);
    if let Some(path) = width {
        arch = apply_width(&arch, &load_width(path)?).map_err(|e| Failure::from(e).at(path))?.arch;
    }
    let report = flops(&arch, res)?;
    print!("{}", pretty(&report));
    Ok(())
}

fn default_dataset(arch: &ArchSpec) -> DatasetSpec {
    DatasetSpec::balanced(&arch.name, arch.num_classes, 1000, arch.default_resolution)
}

fn cmd_project(a: &ProjectArgs) -> CliResult<()> {
    let (arch, arch_src) = load_arch(&a.arch)?;
    let ds = match &a.dataset {
        Some(p) => read_json::<DatasetSpec>(p)?,
        None => default_dataset(&arch),
    };
    ds.validate()?;
    let width: f64 = parse_scalar("width", &a.width)?;
    let depth: f64 = parse_scalar("depth", &a.depth)?;
    let fraction: f64 = parse_scalar("fraction", &a.fraction)?;
    let resolution = a.resolution.unwrap_or(arch.default_resolution);
    let cfg = ProjectionConfig::new(width, depth, resolution, fraction)?;

    let mut projected = project_arch(&arch, width, depth)?;
    projected.default_resolution = resolution;
    let pd = project_dataset(&ds, resolution, fraction)?;
    for w in &pd.warnings {
        eprintln!("{}", json!({ "code": "warning", "message": w, "path": Value::Null }));
    }

    ensure_dir(&a.out)?;
    write_file(&a.out.join("arch.json"), &projected.to_canonical_json())?;
    write_file(&a.out.join("dataset.json"), &pretty(&pd.dataset))?;
    let mut inputs = BTreeMap::from([("arch".to_string(), arch_src)]);
    if let Some(p) = &a.dataset {
        inputs.insert("dataset".into(), resolved(p));
    }
    let config = json!({ "arch": arch, "dataset": ds, "projection": cfg });
    write_file(&a.out.join("manifest.json"), &pretty(&manifest("project", inputs, &config, 0)))
}

fn cmd_optimize(a: &OptimizeArgs) -> CliResult<()> {
    let (arch, arch_src) = load_arch(&a.arch)?;
    let ds: DatasetSpec = read_json(&a.dataset)?;
    ds.validate().map_err(|e| Failure::from(e).at(&a.dataset))?;
    let algorithm: Algorithm = a.algo.parse()?;
    let cfg = OptimizerConfig {
        algorithm,
        grow_factor: a.grow,
        prune_group: a.prune_group,
        seed: a.seed,
        plugin_lambda: 1.0,
        parallel: a.parallel,
    };
    cfg.validate()?;
    let budget = EvaluatorBudget {
        epochs: a.epochs,
        max_evaluations: a.max_evals,
    };
    budget.validate()?;
    let source: ProjectionConfig<f64> = match &a.source_config {
        Some(s) => parse_config(s)?,
        None => ProjectionConfig::identity(ds.resolution),
    };
    let target: ProjectionConfig<f64> = match &a.target_config {
        Some(s) => parse_config(s)?,
        None => source,
    };

    let evaluator: Box<dyn Evaluator> = match a.evaluator {
        EvaluatorKind::Synthetic => Box::new(SyntheticEvaluator::new(a.seed)),
        EvaluatorKind::Bridge => Box::new(BridgeEvaluator::from_env(
            a.dataset_id.clone().unwrap_or_else(|| ds.name.clone()),
            a.seed,
        )?),
    };

    ensure_dir(&a.out)?;
    let mut log = AuditLog::default();
    let outcome = optimize::<f64>(&arch, &ds, evaluator.as_ref(), &cfg, &budget, &mut log);
    write_file(&a.out.join("audit.json"), &pretty(&log))?;
    let run = outcome?;

    let accuracy = match run.accuracy_proxy {
        Some(acc) => acc,
        None => {
            let applied = apply_width(&arch, &run.width)?.arch;
            evaluator.evaluate(&applied, &ds, &budget)?.accuracy_proxy
        }
    };
    let overhead = OverheadReport {
        opt_flops: log.total_cost_flops(),
        forward_macs: flops(&arch, ds.resolution)?.total,
        images: ds.total(),
        epochs: budget.epochs,
        components: BTreeMap::from([
            ("backward_factor".to_string(), DEFAULT_BACKWARD_FACTOR as f64),
            ("evaluations".to_string(), log.len() as f64),
        ]),
    };
    let record = RunRecord {
        source_config: source,
        target_config: target,
        algorithm: algorithm.to_string(),
        width: run.width.clone(),
        accuracy_proxy: accuracy,
        overhead: overhead.clone(),
        target_overhead: None,
        seed: a.seed,
    };

    write_file(&a.out.join("width.json"), &run.width.to_canonical_json())?;
    write_file(&a.out.join("overhead.json"), &pretty(&overhead))?;
    write_file(&a.out.join("record.json"), &pretty(&record))?;
    if run.budget_exhausted {
        eprintln!(
            "{}",
            json!({ "code": "warning", "message": "evaluation budget exhausted before the FLOPs constraint was met", "path": Value::Null })
        );
    }
    let inputs = BTreeMap::from([("arch".to_string(), arch_src), ("dataset".to_string(), resolved(&a.dataset))]);
    let mut run_cfg = serde_json::to_value(&cfg).expect("config serializes");
    run_cfg["parallel"] = Value::Null;
    let config = json!({ "arch": arch, "dataset": ds, "optimizer": run_cfg, "budget": budget });
    write_file(&a.out.join("manifest.json"), &pretty(&manifest("optimize", inputs, &config, a.seed)))
}

fn cmd_transfer(a: &TransferArgs) -> CliResult<()> {
    let w = load_width(&a.width)?;
    let (src, src_path) = load_arch(&a.src)?;
    let (dst, dst_path) = load_arch(&a.dst)?;
    let stacking: Stacking = a.stacking.parse()?;
    let plan = TransferPlan {
        stacking,
        flops_tolerance: a.tolerance,
        bisection_bounds: TransferPlan::default().bisection_bounds,
        divisor: a.divisor,
    };
    let resolution = a.resolution.unwrap_or(dst.default_resolution);
    let out = transfer(&w, &src, &dst, resolution, &plan)?;
    ensure_dir(&a.out)?;
    write_file(&a.out.join("width.json"), &out.width.to_canonical_json())?;
    write_file(&a.out.join("audit.json"), &pretty(&out.audit(&src, &dst, resolution)))?;
    if out.granularity_failure {
        eprintln!(
            "{}",
            json!({ "code": "warning", "message": format!("FLOPs tolerance not reachable; relative error {}", out.rel_error), "path": Value::Null })
        );
    }
    let inputs = BTreeMap::from([
        ("width".to_string(), resolved(&a.width)),
        ("src".to_string(), src_path),
        ("dst".to_string(), dst_path),
    ]);
    let config = json!({ "width": w, "src": src, "dst": dst, "plan": plan, "resolution": resolution });
    write_file(&a.out.join("manifest.json"), &pretty(&manifest("transfer", inputs, &config, 0)))
}

#[derive(Serialize)]
struct OverheadRow {
    mode: &'static str,
    source: String,
    target: String,
    saved_fraction: f64,
    reduction_factor: f64,
    /// Exact reduction as a fraction, idealized mode only.
    #[serde(skip_serializing_if = "Option::is_none")]
    exact_reduction: Option<String>,
}

fn cmd_overhead(a: &OverheadArgs) -> CliResult<()> {
    let src: ProjectionConfig<Rational64> = parse_config(&a.source)?;
    let tgt: ProjectionConfig<Rational64> = parse_config(&a.target)?;
    let exact = idealized_savings(&src, &tgt)?;
    let ideal = Savings::from_reduction(exact.as_f64());
    let mut rows = vec![OverheadRow {
        mode: "idealized",
        source: src.label(),
        target: tgt.label(),
        saved_fraction: ideal.saved_fraction,
        reduction_factor: ideal.reduction_factor,
        exact_reduction: Some(exact.to_decimal()),
    }];

    if a.mode == Mode::Measured && a.arch.is_none() {
        return Err(Failure::validation("--mode measured requires --arch"));
    }
    if let Some(arch_arg) = &a.arch {
        let (arch, _) = load_arch(arch_arg)?;
        let base_ds = match &a.dataset {
            Some(p) => read_json::<DatasetSpec>(p)?,
            None => default_dataset(&arch),
        };
        let one = Rational64::from_integer(1);
        let backward = Rational64::from_integer(DEFAULT_BACKWARD_FACTOR as i64);
        let s = config_overhead(&arch, &base_ds, &src, a.epochs, one, backward)?;
        let t = config_overhead(&arch, &base_ds, &tgt, a.epochs, one, backward)?;
        let m = savings(&s, &t)?;
        rows.push(OverheadRow {
            mode: "measured",
            source: src.label(),
            target: tgt.label(),
            saved_fraction: m.saved_fraction,
            reduction_factor: m.reduction_factor,
            exact_reduction: None,
        });
    }

    match a.format {
        Format::Json => print!("{}", pretty(&rows)),
        Format::Csv => {
            println!("mode,source,target,saved_fraction,reduction_factor");
            for r in &rows {
                println!(
                    "{},\"{}\",\"{}\",{},{}",
                    r.mode, r.source, r.target, r.saved_fraction, r.reduction_factor
                );
            }
        }
    }
    Ok(())
}

fn collect_records(dir: &Path, found: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::from(e).at(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_records(&p, found)?;
        } else if p
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n == "record.json" || n.ends_with(".record.json"))
        {
            found.push(p);
        }
    }
    Ok(())
}

fn cmd_report(dir: &Path, format: Format) -> CliResult<()> {
    let mut paths = Vec::new();
    collect_records(dir, &mut paths)?;
    if paths.is_empty() {
        return Err(Failure::from(Error::NoRecords).at(dir));
    }
    let records = paths
        .iter()
        .map(|p| read_json::<RunRecord<f64>>(p))
        .collect::<CliResult<Vec<_>>>()?;
    print!("{}", emit_report(&records, format.into())?);
    Ok(())
}

fn cmd_similarity(paths: &[PathBuf], arch: Option<&str>, format: GridFormat) -> CliResult<()> {
    let arch = arch.map(load_arch).transpose()?.map(|(a, _)| a);
    let mut vectors = Vec::with_capacity(paths.len());
    for p in paths {
        let w = load_width(p)?;
        let w = match &arch {
            Some(a) => Widths::new(expand_to_layers(a, &w).map_err(|e| Failure::from(e).at(p))?)?,
            None => w,
        };
        vectors.push(w);
    }
    let labels: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    let m = similarity_matrix(&vectors, &labels)?;
    match format {
        GridFormat::Text => print!("{}", m.to_text_grid()),
        GridFormat::Json => print!("{}", pretty(&m)),
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Preset { id, overrides, out } => cmd_preset(&id, &overrides, out.as_deref()),
        Command::Dataset {
            name,
            classes,
            per_class,
            resolution,
            out,
        } => {
            let ds = DatasetSpec::balanced(&name, classes, per_class, resolution);
            ds.validate()?;
            emit(out.as_deref(), &pretty(&ds))
        }
        Command::Flops { arch, resolution, width } => cmd_flops(&arch, resolution, width.as_deref()),
        Command::Project(a) => cmd_project(&a),
        Command::Optimize(a) => cmd_optimize(&a),
        Command::Transfer(a) => cmd_transfer(&a),
        Command::Overhead(a) => cmd_overhead(&a),
        Command::Report { dir, format } => cmd_report(&dir, format),
        Command::Similarity { widths, arch, format } => cmd_similarity(&widths, arch.as_deref(), format),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", json!({ "code": "usage", "message": first, "path": Value::Null }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "code": f.code, "message": f.message, "path": f.path }));
            ExitCode::from(f.exit)
        }
    }
}
