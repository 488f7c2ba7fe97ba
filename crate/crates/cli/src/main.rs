//! Command-line front end: check models, apply verified updates, run
//! experiments.
//!
//! Exit codes: 0 success, 1 domain failure (invalid model, failed update or
//! validation, safety violation), 2 I/O or configuration failure.

mod params;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mulearn::dsl::{parse_formula, parse_model, DslError, Model};
use mulearn::experiment::{run_experiment, write_outcome, RunConfig};
use mulearn::par::Execution;
use mulearn::semantics::FlowConfig;
use mulearn::vpmu::{learn_linear_dynamics, validate_update, ModelUpdate, TrajectoryData, ValidationConfig, Verdict};

#[derive(Parser)]
#[command(
    name = "mulearn",
    version,
    about = "Verified model updates and safe model-based learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a model and check its structure.
    Check { file: PathBuf },
    /// Apply one update, write the result and a validation report.
    Update {
        file: PathBuf,
        #[arg(long)]
        op: String,
        /// `key=value`; repeatable.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
        #[arg(short, long)]
        out: PathBuf,
        /// Trajectory data (JSON) for the data-driven updates.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Where to write the report; `<out>.report.json` by default.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Safety checks per control cycle during validation.
        #[arg(long)]
        points: Option<usize>,
        /// Fixed RK4 step for validation instead of the automatic choice.
        #[arg(long)]
        flow_step: Option<f64>,
    },
    /// Run an experiment config.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config.
        #[arg(long, env = "MULEARN_OUT")]
        out: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
}

enum Failure {
    Domain(String),
    Setup(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Domain(_) => 1,
            Failure::Setup(_) => 2,
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Setup(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Setup(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Setup(format!("cannot write {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Model, Failure> {
    let text = read(path)?;
    parse_model(&text).map_err(|e| match e {
        DslError::Syntax(e) => Failure::Domain(format!("{}: syntax error at {e}", path.display())),
        DslError::Structure(e) => Failure::Domain(format!("{}: {e}", path.display())),
    })
}

fn check(file: &Path) -> Result<(), Failure> {
    let m = load_model(file)?;
    let vars: Vec<String> = m.state_vars().into_iter().collect();
    let name = if m.name.is_empty() { "(unnamed)" } else { &m.name };
    println!("ok: {name}: state {}", vars.join(", "));
    if let Some(c) = &m.clock {
        println!("time-triggered with clock `{c}`");
    }
    Ok(())
}

fn load_data(data: Option<&Path>, op: &str) -> Result<TrajectoryData, Failure> {
    let path = data.ok_or_else(|| Failure::Setup(format!("{op} needs --data")))?;
    serde_json::from_str(&read(path)?).map_err(|e| Failure::Setup(format!("{}: {e}", path.display())))
}

struct UpdateArgs<'a> {
    op: &'a str,
    params: &'a [String],
    data: Option<&'a Path>,
}

/// Applies the update and returns the new model plus the input grid, if
/// any, that validation should use.
fn apply(m: &Model, args: &UpdateArgs) -> Result<(Model, mulearn::semantics::Discretization), Failure> {
    let setup = |e: params::ParamError| Failure::Setup(e.to_string());
    let p = params::split(args.params).map_err(setup)?;
    let grid = params::grids(&p).map_err(setup)?;
    let failed = |e: mulearn::vpmu::VpmuError| Failure::Domain(format!("{} failed: {e}", args.op));
    let update = match args.op {
        "learn_linear_dynamics" => {
            let data = load_data(args.data, args.op)?;
            let safe = match p.get("safe") {
                Some(s) => parse_formula(s).map_err(|e| Failure::Setup(format!("parameter `safe`: {e}")))?,
                None => m.safe.clone(),
            };
            let horizon = params::number(
                "horizon",
                p.get("horizon")
                    .ok_or(params::ParamError::Missing("horizon".into()))
                    .map_err(setup)?,
            )
            .map_err(setup)?;
            if grid.grids.is_empty() {
                return Err(Failure::Setup(
                    "learn_linear_dynamics needs input grids, e.g. --param grid.u=-1,0,1".into(),
                ));
            }
            let (mut out, fit) = learn_linear_dynamics(&data, &safe, &grid, horizon).map_err(failed)?;
            log::info!("fitted {fit:?}");
            out.name = m.name.clone();
            return Ok((out, grid));
        }
        "instantiate_parameter" => {
            let bindings = p
                .iter()
                .filter(|(k, _)| !k.starts_with("grid."))
                .map(|(k, v)| Ok((k.clone(), params::number(k, v)?)))
                .collect::<Result<_, params::ParamError>>()
                .map_err(setup)?;
            ModelUpdate::InstantiateParameter { bindings }
        }
        "auto_instantiate" => ModelUpdate::AutoInstantiate {
            data: load_data(args.data, args.op)?,
        },
        op => {
            let mut obj = params::to_object(&p);
            obj.retain(|k, _| !k.starts_with("grid."));
            obj.insert("op".into(), op.into());
            serde_json::from_value(obj.into()).map_err(|e| Failure::Setup(format!("update `{op}`: {e}")))?
        }
    };
    let mut out = update.apply(m).map_err(failed)?;
    out.name = m.name.clone();
    Ok((out, grid))
}

#[allow(clippy::too_many_arguments)]
fn update(
    file: &Path,
    args: UpdateArgs,
    out: &Path,
    report: Option<&Path>,
    samples: usize,
    seed: u64,
    points: Option<usize>,
    flow_step: Option<f64>,
) -> Result<(), Failure> {
    let m = load_model(file)?;
    let (updated, grid) = apply(&m, &args)?;
    write(out, &format!("{updated}\n"))?;
    println!("wrote {}", out.display());

    let mut cfg = ValidationConfig {
        discretization: grid,
        ..ValidationConfig::default()
    };
    if let Some(n) = points {
        cfg.points = n;
    }
    if let Some(h) = flow_step {
        cfg.flow = FlowConfig::rk4(h);
    }
    let r = validate_update(&updated, samples, seed, &cfg)
        .map_err(|e| Failure::Domain(format!("validation could not run: {e}")))?;
    let report_path = report.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".report.json");
        out.with_file_name(name)
    });
    write(
        &report_path,
        &serde_json::to_string_pretty(&r).expect("report serializes"),
    )?;
    println!(
        "{:?}: {} samples, {} transitions, {} safety violations, {} blocked; report {}",
        r.verdict,
        r.samples,
        r.transitions,
        r.safety_violations,
        r.blocked,
        report_path.display()
    );
    match r.verdict {
        Verdict::Pass => Ok(()),
        Verdict::Fail => Err(Failure::Domain(format!(
            "validation failed; counterexample start {:?}",
            r.counterexample
        ))),
    }
}

fn run(config: &Path, out: Option<&Path>, sequential: bool) -> Result<(), Failure> {
    let classify = |e: mulearn::experiment::ExperimentError| {
        if e.is_setup() {
            Failure::Setup(e.to_string())
        } else {
            Failure::Domain(e.to_string())
        }
    };
    let mut cfg = RunConfig::load(config).map_err(classify)?;
    if let Some(o) = out {
        cfg.output = Some(o.to_path_buf());
    }
    if sequential {
        cfg.execution = Some(Execution::Sequential);
    }
    let dir = cfg.output_dir();
    let exec = cfg.execution();
    let outcome = run_experiment(cfg.clone()).map_err(classify)?;
    write_outcome(&outcome, &dir, exec).map_err(classify)?;
    let t = &outcome.manifest.totals;
    println!(
        "{}: {} episodes, {} violations in {} episodes, {} halted without a safe action; results in {}",
        cfg.name,
        t.episodes,
        t.violations,
        t.episodes_with_violations,
        t.halted_no_safe_action,
        dir.display()
    );
    if outcome.meets_expectation(&cfg) {
        Ok(())
    } else {
        Err(Failure::Domain(
            "safety violated although an accurate model was declared".into(),
        ))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Check { file } => check(file),
        Command::Update {
            file,
            op,
            params,
            out,
            data,
            report,
            samples,
            seed,
            points,
            flow_step,
        } => update(
            file,
            UpdateArgs {
                op,
                params,
                data: data.as_deref(),
            },
            out,
            report.as_deref(),
            *samples,
            *seed,
            *points,
            *flow_step,
        ),
        Command::Run {
            config,
            out,
            sequential,
        } => run(config, out.as_deref(), *sequential),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Domain(msg) | Failure::Setup(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
