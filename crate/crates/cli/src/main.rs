mod config;
mod report;

use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use sbm_synth::cases::{torque_profile, Leg};
use sbm_synth::equilibrium::NewtonOptions;
use sbm_synth::grid::DesignVector;
use sbm_synth::mechanism::{binarize, build_linkage, MechanismGraph};
use sbm_synth::screw::analyze;
use sbm_synth::sensitivity::fd_oracle;
use sbm_synth::synthesis::{evaluate_design, synthesize_with, IterationRecord};

use config::{resolve, ConfigError, Overrides, Resolved, RunConfig};
use report::{DesignFile, Summary};

#[derive(Parser)]
#[command(name = "sbm-synth", version, about = "Spherical linkage synthesis on a spring-connected block model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Default)]
struct Common {
    /// Built-in case study (1, 2 or 3).
    #[arg(long)]
    case: Option<u32>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a design and write the full artifact set.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Screw analysis of a mechanism file over a case trajectory.
    Analyze {
        mechanism: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Binarize a design file into a mechanism.
    Extract {
        design: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences.
    CheckGrad {
        #[command(flatten)]
        common: Common,
        /// Design file; all variables at 0.5 when omitted.
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-6)]
        fd_step: f64,
    },
    /// Assistance torque over the gait cycle.
    Profile {
        #[arg(long, default_value_t = 0.0)]
        start: f64,
        #[arg(long, default_value_t = 100.0)]
        end: f64,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Solver(String),
    Infeasible,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Infeasible => 4,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn solver(e: sbm_synth::Error) -> Failure {
    Failure::Solver(e.to_string())
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Config(format!("{}: {e}", path.display()))
}

fn load(common: &Common, budget: Option<usize>, threshold: Option<f64>) -> Result<Resolved, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if common.case.is_some() {
        cfg.inline_case = None;
    }
    let ov = Overrides { case: common.case, out: common.out.clone(), budget, threshold };
    Ok(resolve(cfg, &ov)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(io(path))
}

/// Writes to `dir/name` when a directory is given, else to stdout.
fn emit(dir: Option<&Path>, name: &str, contents: &str) -> Result<(), Failure> {
    match dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(io(d))?;
            write(&d.join(name), contents)
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn synth(common: &Common, budget: Option<usize>, threshold: Option<f64>) -> Result<(), Failure> {
    let r = load(common, budget, threshold)?;
    let out = r.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    std::fs::create_dir_all(&out).map_err(io(&out))?;

    let start = Instant::now();
    let history: RefCell<Vec<IterationRecord>> = RefCell::new(Vec::new());
    let result = synthesize_with(&r.grid, &r.params, &r.case, &r.synthesis, |rec| history.borrow_mut().push(*rec));
    let history = history.into_inner();
    write(&out.join("history.csv"), &report::history_csv(&history))?;
    let mut summary = Summary::new(r.case_id, &history);

    let result = match result {
        Ok(res) => res,
        Err(e) => {
            summary.fail("solver-failure", &e, start.elapsed());
            write(&out.join("summary.json"), &summary.to_json())?;
            return Err(solver(e));
        }
    };
    let design = DesignFile { grid: r.grid_config, params: r.params, xi: result.design.xi.clone() };
    write(&out.join("design.json"), &design.to_json())?;
    summary.record_result(&result);

    let extracted = binarize(result.design.xi_k(), r.threshold)
        .and_then(|b| build_linkage(&r.grid, &result.design, &r.params, &b.present));
    let graph = match extracted {
        Ok(g) => g,
        Err(e) => {
            summary.fail("extraction-failed", &e, start.elapsed());
            write(&out.join("summary.json"), &summary.to_json())?;
            return Err(solver(e));
        }
    };
    write(&out.join("mechanism.json"), &report::to_json(&graph))?;
    summary.record_mechanism(&graph);

    match analyze(&graph, &r.case, &r.params, &r.synthesis.newton) {
        Ok(a) => {
            write(&out.join("analysis.csv"), &report::analysis_csv(&a))?;
            summary.record_analysis(&a);
        }
        Err(e) if result.feasible => {
            summary.fail("analysis-failed", &e, start.elapsed());
            write(&out.join("summary.json"), &summary.to_json())?;
            return Err(solver(e));
        }
        // a locked extraction of an infeasible design is expected
        Err(e) => summary.error = Some(format!("analysis skipped: {e}")),
    }
    summary.finish(start.elapsed());
    write(&out.join("summary.json"), &summary.to_json())?;
    if result.feasible {
        Ok(())
    } else {
        Err(Failure::Infeasible)
    }
}

fn analyze_cmd(mechanism: &Path, common: &Common) -> Result<(), Failure> {
    let graph: MechanismGraph = read_json(mechanism)?;
    let r = load(common, None, None)?;
    let a = analyze(&graph, &r.case, &r.params, &NewtonOptions::default()).map_err(solver)?;
    emit(r.out.as_deref(), "analysis.csv", &report::analysis_csv(&a))
}

fn extract_cmd(design: &Path, threshold: Option<f64>, out: Option<&Path>) -> Result<(), Failure> {
    let file: DesignFile = read_json(design)?;
    let grid = file.grid.build().map_err(|e| Failure::Config(e.to_string()))?;
    let d = DesignVector::from_vec(&grid, file.xi).map_err(|e| Failure::Config(e.to_string()))?;
    let threshold = threshold.unwrap_or(0.5);
    let b = binarize(d.xi_k(), threshold).map_err(|e| Failure::Config(e.to_string()))?;
    for w in &b.warnings {
        eprintln!("warning: {w}");
    }
    let graph = build_linkage(&grid, &d, &file.params, &b.present).map_err(solver)?;
    emit(out, "mechanism.json", &report::to_json(&graph))
}

fn check_grad(common: &Common, design: Option<&Path>, fd_step: f64) -> Result<(), Failure> {
    if fd_step.is_nan() || fd_step <= 0.0 {
        return Err(Failure::Config(format!("--fd-step must be positive, got {fd_step}")));
    }
    let r = load(common, None, None)?;
    let (grid, params, d) = match design {
        Some(p) => {
            let file: DesignFile = read_json(p)?;
            let grid = file.grid.build().map_err(|e| Failure::Config(e.to_string()))?;
            let d = DesignVector::from_vec(&grid, file.xi).map_err(|e| Failure::Config(e.to_string()))?;
            (grid, file.params, d)
        }
        None => (r.grid.clone(), r.params, DesignVector::uniform(&r.grid, 0.5)),
    };
    let newton = r.synthesis.newton;
    let sens = r.synthesis.sensitivity;
    let ev = evaluate_design(&grid, &d, &params, &r.case, &newton, &sens).map_err(solver)?;
    let fd = fd_oracle(
        |x| {
            let d = DesignVector::from_vec(&grid, x.to_vec())?;
            let rep = evaluate_design(&grid, &d, &params, &r.case, &newton, &sens)?.evaluation.report;
            let mut v = vec![rep.zeta_bar];
            v.extend(rep.psi_flat());
            Ok(v)
        },
        &d.xi,
        fd_step,
    )
    .map_err(solver)?;
    emit(r.out.as_deref(), "check_grad.csv", &report::gradient_csv(&ev.gradients, &fd))
}

fn profile(start: f64, end: f64, step: f64, out: Option<&Path>) -> Result<(), Failure> {
    if step.is_nan() || step <= 0.0 || !start.is_finite() || !end.is_finite() || end < start {
        return Err(Failure::Config("profile needs start <= end and step > 0".into()));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    let rows: Vec<(f64, f64, f64)> = (0..=n)
        .map(|i| {
            let x = start + i as f64 * step;
            (x, torque_profile(Leg::Right, x), torque_profile(Leg::Left, x))
        })
        .collect();
    emit(out, "profile.csv", &report::profile_csv(&rows))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Synth { common, budget, threshold } => synth(common, *budget, *threshold),
        Command::Analyze { mechanism, common } => analyze_cmd(mechanism, common),
        Command::Extract { design, threshold, out } => extract_cmd(design, *threshold, out.as_deref()),
        Command::CheckGrad { common, design, fd_step } => check_grad(common, design.as_deref(), *fd_step),
        Command::Profile { start, end, step, out } => profile(*start, *end, *step, out.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("config error: {m}"),
                Failure::Solver(m) => eprintln!("solver failure: {m}"),
                Failure::Infeasible => eprintln!("design is infeasible at the iteration budget"),
            }
            ExitCode::from(f.code())
        }
    }
}
