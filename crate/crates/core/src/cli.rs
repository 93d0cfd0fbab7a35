//! Command-line front end.
//!
//! Exit codes: 0 success, 1 gradient audit failure, 2 invalid input
//! (bad box, unknown loss, malformed config), 3 output not writable.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Box;
use crate::gradcheck::{self, AuditReport};
use crate::losses::Grad4;
use crate::objective::Objective;
use crate::report::{self, RunManifest, TensorShape};
use crate::sim::{self, CenterLayout, FocalWeighting, OutputMode, Setup, SimConfig, UpdateSign};
use crate::stats;

/// Environment variable supplying the default for `simulate --out`.
pub const OUT_ENV: &str = "BBREG_OUT";
const DEFAULT_OUT: &str = "bbreg-out";

#[derive(Debug, Parser)]
#[command(
    name = "bbreg",
    version,
    about = "Bounding-box regression losses and convergence simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate one loss and its gradient on a box pair.
    Loss(LossArgs),
    /// Compare analytic gradients with central differences on random pairs.
    Gradcheck(GradcheckArgs),
    /// Run the convergence simulation for one or more loss variants.
    Simulate(SimulateArgs),
    /// Recompute box-plot statistics from a stored IOU tensor or raw values.
    Stats(StatsArgs),
    /// Redraw the comparison chart from existing errors.csv files.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long)]
    pub kind: String,
    /// Predicted box, `cx,cy,w,h` (or `x1,y1,x2,y2` with --corners).
    #[arg(long, allow_hyphen_values = true)]
    pub pred: String,
    #[arg(long, allow_hyphen_values = true)]
    pub target: String,
    #[arg(long)]
    pub corners: bool,
    /// SmoothL1 threshold or FocalL1 β.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Focal-EIOU γ.
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Comma-separated loss names; defaults to every variant.
    #[arg(long, value_delimiter = ',')]
    pub kinds: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = gradcheck::DEFAULT_STEP)]
    pub step: f64,
    /// Differentiate the full value, including factors the analytic
    /// gradient treats as constants (CIOU α, Focal-EIOU weights).
    #[arg(long)]
    pub no_freeze: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SignArg {
    Descent,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CentersArg {
    Random,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    Batch,
    Pair,
}

#[derive(Debug, Args, Default)]
pub struct SimulateArgs {
    /// Flat `key = value` file with the same keys as the long flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Re-run the single configuration echoed in a manifest.json.
    #[arg(long, conflicts_with = "config")]
    pub from_manifest: Option<PathBuf>,
    #[arg(long)]
    pub setup: Option<String>,
    /// Comma-separated loss names.
    #[arg(long, value_delimiter = ',')]
    pub losses: Option<Vec<String>>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// FocalL1 β for focal-l1 and focal-eiou-v1.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub smooth_beta: Option<f64>,
    #[arg(long, value_enum)]
    pub update_sign: Option<SignArg>,
    #[arg(long, value_enum)]
    pub centers: Option<CentersArg>,
    #[arg(long, value_enum)]
    pub focal_weighting: Option<WeightingArg>,
    /// Keep the full IOU tensor and write it to iou.bin.
    #[arg(long)]
    pub full: bool,
    #[arg(long)]
    pub memory_budget: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Run directory holding manifest.json and iou.bin.
    #[arg(long, conflicts_with = "values", required_unless_present = "values")]
    pub run: Option<PathBuf>,
    /// Text file of IOU values separated by commas or whitespace.
    #[arg(long)]
    pub values: Option<PathBuf>,
    /// Iteration index recorded for --values.
    #[arg(long, default_value_t = 0)]
    pub t: usize,
    /// Output CSV; standard output if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub variants: Vec<String>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Output { .. } => 3,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Loss(a) => cmd_loss(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Stats(a) => cmd_stats(&a),
        Command::Plot(a) => cmd_plot(&a),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Parses `a,b,c,d` into a box, in center or corner form.
pub fn parse_box(text: &str, corners: bool) -> Result<Box> {
    let fields: Vec<&str> = text.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(Error::Config(format!(
            "box `{text}` must have four comma-separated numbers"
        )));
    }
    let names = if corners {
        ["x1", "y1", "x2", "y2"]
    } else {
        ["cx", "cy", "w", "h"]
    };
    let mut v = [0.0; 4];
    for i in 0..4 {
        v[i] = fields[i].parse().map_err(|_| {
            Error::Config(format!(
                "box field {} = `{}` is not a number",
                names[i], fields[i]
            ))
        })?;
    }
    if corners {
        if v[2] <= v[0] {
            return Err(Error::InvalidBox {
                field: "x2",
                value: v[2],
            });
        }
        if v[3] <= v[1] {
            return Err(Error::InvalidBox {
                field: "y2",
                value: v[3],
            });
        }
        Box::from_corners(v[0], v[1], v[2], v[3])
    } else {
        Box::new(v[0], v[1], v[2], v[3])
    }
}

#[derive(Debug, Serialize)]
struct LossRecord {
    loss: Objective,
    value: f64,
    grad: Grad4,
}

fn cmd_loss(a: &LossArgs) -> Result<ExitCode> {
    let objective = Objective::from_parts(&a.kind, a.beta, a.gamma)?;
    let pred = parse_box(&a.pred, a.corners)?;
    let target = parse_box(&a.target, a.corners)?;
    let e = objective.eval(&pred, &target);
    let record = LossRecord {
        loss: objective,
        value: e.value,
        grad: e.grad,
    };
    println!("{}", serde_json::to_string(&record)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<ExitCode> {
    let names: Vec<String> = if a.kinds.is_empty() {
        Objective::NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        a.kinds.clone()
    };
    let objectives = names
        .iter()
        .map(|n| n.parse::<Objective>())
        .collect::<Result<Vec<_>>>()?;
    let reports = objectives
        .iter()
        .map(|o| gradcheck::audit(o, a.samples, a.seed, a.step, !a.no_freeze))
        .collect::<Result<Vec<AuditReport>>>()?;
    for r in &reports {
        eprintln!(
            "{:16} max_rel={:.3e} mean_rel={:.3e} {}",
            r.loss,
            r.max_rel_err,
            r.mean_rel_err,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    println!("{}", serde_json::to_string_pretty(&reports)?);
    Ok(if reports.iter().all(|r| r.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

/// Reads a flat `key = value` document. `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        map.insert(k.trim().replace('_', "-"), v.trim().to_owned());
    }
    Ok(map)
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value for {key}: `{v}`")))
}

fn file_value<T: std::str::FromStr>(
    file: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>> {
    file.get(key).map(|v| parse_value(key, v)).transpose()
}

/// Fills unset flags from the config file.
fn merge_config(args: &SimulateArgs, file: &BTreeMap<String, String>) -> Result<SimulateArgs> {
    const KNOWN: [&str; 15] = [
        "setup",
        "losses",
        "iterations",
        "points",
        "seed",
        "gamma",
        "beta",
        "smooth-beta",
        "update-sign",
        "centers",
        "focal-weighting",
        "full",
        "memory-budget",
        "out",
        "mode",
    ];
    if let Some(k) = file.keys().find(|k| !KNOWN.contains(&k.as_str())) {
        return Err(Error::Config(format!("unknown config key `{k}`")));
    }
    let get = |k: &str| file.get(k).map(String::as_str);
    let enum_of = |k: &str| get(k).map(str::to_ascii_lowercase);
    let sign = match enum_of("update-sign").as_deref() {
        None => None,
        Some("descent") => Some(SignArg::Descent),
        Some("literal") => Some(SignArg::Literal),
        Some(v) => {
            return Err(Error::Config(format!(
                "invalid value for update-sign: `{v}`"
            )))
        }
    };
    let centers = match enum_of("centers").as_deref() {
        None => None,
        Some("random") => Some(CentersArg::Random),
        Some("grid") => Some(CentersArg::Grid),
        Some(v) => return Err(Error::Config(format!("invalid value for centers: `{v}`"))),
    };
    let weighting = match enum_of("focal-weighting").as_deref() {
        None => None,
        Some("batch") => Some(WeightingArg::Batch),
        Some("pair") => Some(WeightingArg::Pair),
        Some(v) => {
            return Err(Error::Config(format!(
                "invalid value for focal-weighting: `{v}`"
            )))
        }
    };
    let file_full = match (get("full"), get("mode")) {
        (Some(v), _) => parse_value::<bool>("full", v)?,
        (None, Some("full")) => true,
        (None, Some("streaming")) | (None, None) => false,
        (None, Some(v)) => return Err(Error::Config(format!("invalid value for mode: `{v}`"))),
    };
    Ok(SimulateArgs {
        config: None,
        from_manifest: None,
        setup: args
            .setup
            .clone()
            .or_else(|| get("setup").map(str::to_owned)),
        losses: args
            .losses
            .clone()
            .or_else(|| get("losses").map(|v| v.split(',').map(|s| s.trim().to_owned()).collect())),
        iterations: args.iterations.or(file_value(file, "iterations")?),
        points: args.points.or(file_value(file, "points")?),
        seed: args.seed.or(file_value(file, "seed")?),
        gamma: args.gamma.or(file_value(file, "gamma")?),
        beta: args.beta.or(file_value(file, "beta")?),
        smooth_beta: args.smooth_beta.or(file_value(file, "smooth-beta")?),
        update_sign: args.update_sign.or(sign),
        centers: args.centers.or(centers),
        focal_weighting: args.focal_weighting.or(weighting),
        full: args.full || file_full,
        memory_budget: args.memory_budget.or(file_value(file, "memory-budget")?),
        out: args.out.clone().or_else(|| get("out").map(PathBuf::from)),
    })
}

/// Builds one configuration per requested loss variant.
pub fn build_configs(a: &SimulateArgs) -> Result<Vec<SimConfig>> {
    let setup: Setup = a.setup.as_deref().unwrap_or("1").parse()?;
    let names: Vec<String> = match &a.losses {
        Some(v) if !v.is_empty() => v.clone(),
        _ => Objective::comparison_set()
            .iter()
            .map(|o| o.name().to_owned())
            .collect(),
    };
    names
        .iter()
        .map(|name| {
            let lower = name.to_ascii_lowercase();
            let beta = if lower.starts_with("smooth") {
                a.smooth_beta
            } else {
                a.beta
            };
            let loss = Objective::from_parts(name, beta, a.gamma)?;
            let mut cfg = SimConfig::new(setup, loss, a.seed.unwrap_or(0));
            if let Some(t) = a.iterations {
                cfg.iterations = t;
            }
            if let Some(n) = a.points {
                cfg.points = n;
            }
            cfg.update_sign = match a.update_sign {
                Some(SignArg::Literal) => UpdateSign::Literal,
                _ => UpdateSign::Descent,
            };
            cfg.centers = match a.centers {
                Some(CentersArg::Grid) => CenterLayout::Grid,
                _ => CenterLayout::Random,
            };
            cfg.focal_weighting = match a.focal_weighting {
                Some(WeightingArg::Pair) => FocalWeighting::Pair,
                _ => FocalWeighting::Batch,
            };
            cfg.mode = if a.full {
                OutputMode::Full
            } else {
                OutputMode::Streaming
            };
            if let Some(b) = a.memory_budget {
                cfg.memory_budget = b;
            }
            cfg.validate()?;
            Ok(cfg)
        })
        .collect()
}

/// Default output directory: `--out`, then `$BBREG_OUT`, then `bbreg-out`.
fn output_root(a: &SimulateArgs) -> PathBuf {
    a.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

struct Finished {
    dir_name: String,
    cfg: SimConfig,
    result: sim::SimResult,
    secs: f64,
}

/// Runs every configuration and writes `<root>/<loss>/…` plus `compare.svg`.
pub fn simulate_to_dir(configs: &[SimConfig], root: &Path) -> Result<Vec<String>> {
    report::create_dir(root)?;
    let probe = root.join(".write-probe");
    fs::write(&probe, b"").map_err(|source| Error::Output {
        path: root.to_owned(),
        source,
    })?;
    let _ = fs::remove_file(&probe);

    let mut finished = Vec::with_capacity(configs.len());
    for cfg in configs {
        let started = Instant::now();
        let result = sim::run_simulation(cfg)?;
        let secs = started.elapsed().as_secs_f64();
        eprintln!(
            "{:16} final E = {:.6e}  mean IOU = {:.4}  ({secs:.1}s)",
            cfg.loss.name(),
            result.final_error(),
            result.final_mean_iou()
        );
        finished.push(Finished {
            dir_name: cfg.loss.name().to_owned(),
            cfg: cfg.clone(),
            result,
            secs,
        });
    }

    let mut names = Vec::with_capacity(finished.len());
    for f in &finished {
        let dir = root.join(&f.dir_name);
        let mut manifest = RunManifest::new(f.cfg.clone(), f.secs, f.result.clamp_events);
        if let Some(tensor) = &f.result.iou {
            manifest.iou_tensor = Some(TensorShape {
                iterations: tensor.iterations,
                points: tensor.points,
                shapes: tensor.shapes,
                targets: tensor.targets,
            });
        }
        report::write_variant(&dir, &f.result.errors, &f.result.iou_stats, &manifest)?;
        if let Some(tensor) = &f.result.iou {
            report::write_iou_tensor(&dir.join(report::IOU_TENSOR_BIN), tensor)?;
        }
        names.push(f.dir_name.clone());
    }
    report::write_comparison_svg(root, &names)?;
    Ok(names)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<ExitCode> {
    let root = output_root(a);
    let configs = if let Some(path) = &a.from_manifest {
        let manifest = report::read_manifest(path)?;
        manifest.config.validate()?;
        vec![manifest.config]
    } else if let Some(path) = &a.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let merged = merge_config(a, &parse_config_text(&text)?)?;
        let root = output_root(&merged);
        let configs = build_configs(&merged)?;
        simulate_to_dir(&configs, &root)?;
        return Ok(ExitCode::SUCCESS);
    } else {
        build_configs(a)?
    };
    simulate_to_dir(&configs, &root)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_stats(a: &StatsArgs) -> Result<ExitCode> {
    let rows = if let Some(dir) = &a.run {
        let manifest = report::read_manifest(&dir.join(report::MANIFEST_JSON))?;
        let shape = manifest.iou_tensor.ok_or_else(|| {
            Error::Config(format!(
                "{} has no stored IOU tensor (run with --full)",
                dir.display()
            ))
        })?;
        let tensor = report::read_iou_tensor(&dir.join(report::IOU_TENSOR_BIN), &shape)?;
        (1..=tensor.iterations)
            .map(|t| stats::box_plot_stats(tensor.slice(t), t))
            .collect::<Result<Vec<_>>>()?
    } else {
        let path = a.values.as_ref().expect("clap enforces --run or --values");
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let values = text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| parse_value::<f64>("value", s))
            .collect::<Result<Vec<_>>>()?;
        vec![stats::box_plot_stats(&values, a.t)?]
    };
    let csv = report::iou_stats_csv(&rows);
    match &a.out {
        Some(path) => fs::write(path, csv).map_err(|source| Error::Output {
            path: path.clone(),
            source,
        })?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_plot(a: &PlotArgs) -> Result<ExitCode> {
    report::write_comparison_svg(&a.dir, &a.variants)?;
    Ok(ExitCode::SUCCESS)
}
