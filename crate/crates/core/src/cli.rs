//! Command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid configuration, 3 `X ⊖ R(1)`
//! empty, 4 no certifiable horizon, 5 infeasible initial state.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::Scenario;
use crate::contraction::ContractionCertificate;
use crate::controller::Formulation;
use crate::error::Error;
use crate::plants::PlantConfig;
use crate::sim::{run_batch, summarize, BatchReport};
use crate::terminal::{verify_robust_invariance, Region};
use crate::tightening::max_feasible_horizon;
use crate::sets::Ellipsoid;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID_CONFIG: i32 = 2;
pub const EXIT_DISTURBANCE_TOO_LARGE: i32 = 3;
pub const EXIT_NO_HORIZON: i32 = 4;
pub const EXIT_INFEASIBLE_X0: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "cmpc", version, about = "Robust contraction-based MPC toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Built-in scenario: nonholonomic, quadruple_tank or deadbeat.
    #[arg(long, global = true, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Scenario JSON file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the experiment and grid seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for artifacts.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Replace the disturbance bound of the plant (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    pub dist_bound: Option<Vec<f64>>,
    /// Reduced grid for quick runs.
    #[arg(long, global = true)]
    pub smoke: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the F/R tightening table as CSV.
    Tighten {
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 4)]
        decimals: usize,
    },
    /// Build and save the contraction certificate.
    Certify,
    /// Verify terminal ingredients and bisect β.
    Terminal {
        /// Also check robust invariance of the terminal set.
        #[arg(long)]
        invariance: bool,
    },
    /// Closed-loop Monte-Carlo batch.
    Run {
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        /// Certificate produced by `certify`; computed when absent.
        #[arg(long)]
        certificate: Option<PathBuf>,
        #[arg(long, value_parser = parse_formulation)]
        formulation: Option<Formulation>,
        /// Simulate without disturbances.
        #[arg(long)]
        nominal: bool,
    },
    /// Summarize a saved batch report.
    Report {
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn parse_formulation(s: &str) -> Result<Formulation, String> {
    match s {
        "two_stage" | "two-stage" => Ok(Formulation::TwoStage),
        "enumerated" => Ok(Formulation::Enumerated),
        other => Err(format!("unknown formulation `{other}`")),
    }
}

/// Map a library error to an exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Dimension { .. }
        | Error::InvalidModel(_)
        | Error::NotSpd(_)
        | Error::Singular(_)
        | Error::InvalidConfig(_)
        | Error::UnknownPreset(_)
        | Error::Json(_) => EXIT_INVALID_CONFIG,
        Error::DisturbanceTooLarge => EXIT_DISTURBANCE_TOO_LARGE,
        Error::CertificateUnavailable { .. } => EXIT_NO_HORIZON,
        Error::ControllerFault(_) => EXIT_INFEASIBLE_X0,
        Error::Rcis(_) | Error::NoTerminalRegion(_) | Error::Io(_) => EXIT_FAILURE,
    }
}

struct Ctx<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn kv(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.out, "{key}={value}");
    }
}

fn scenario(g: &GlobalOpts) -> Result<Scenario, Error> {
    let mut s = match (&g.preset, &g.config) {
        (_, Some(path)) => Scenario::load(path)?,
        (Some(name), None) => Scenario::preset(name)?,
        (None, None) => return Err(Error::InvalidConfig("pass --preset or --config".into())),
    };
    if let Some(seed) = g.seed {
        s.experiment.seed = seed;
        s.grid.seed = seed;
        s.certify.seed = seed;
    }
    if let Some(w) = &g.dist_bound {
        s.plant = match s.plant {
            PlantConfig::Builtin { builtin, .. } => PlantConfig::Builtin {
                builtin,
                dist_bound: Some(w.clone()),
            },
            PlantConfig::Linear(mut cfg) => {
                cfg.dist_box = crate::model::BoxSet::symmetric(w);
                PlantConfig::Linear(cfg)
            }
        };
    }
    if g.smoke {
        s = s.smoke();
    }
    Ok(s)
}

fn out_file(g: &GlobalOpts, name: &str) -> Result<Option<PathBuf>, Error> {
    match &g.out_dir {
        None => Ok(None),
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Ok(Some(dir.join(name)))
        }
    }
}

/// Parse `args` and execute; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID_CONFIG } else { EXIT_OK };
            if code == EXIT_OK {
                let _ = write!(out, "{e}");
            } else {
                let _ = write!(err, "{e}");
            }
            return code;
        }
    };
    let mut ctx = Ctx { out, err };
    if let Some(t) = cli.global.threads {
        // the global pool can be configured once per process
        if rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global().is_err() {
            log::warn!("thread pool already initialized; --threads ignored");
        }
    }
    let result = dispatch(&cli, &mut ctx);
    match result {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            let _ = writeln!(ctx.err, "error: {e}");
            ctx.kv("status", "error");
            ctx.kv("exit_code", code);
            code
        }
    }
}

fn dispatch(cli: &Cli, ctx: &mut Ctx) -> Result<i32, Error> {
    let g = &cli.global;
    match &cli.command {
        Command::Tighten { horizon, decimals } => {
            let s = scenario(g)?;
            let model = s.plant()?;
            let seq = crate::tightening::compute_tightening(&model, horizon.unwrap_or(s.n_max));
            let limit = max_feasible_horizon(&model, &seq)?;
            match out_file(g, "tightening.csv")? {
                Some(path) => {
                    seq.write_csv(fs::File::create(&path)?, *decimals)?;
                    ctx.kv("tightening_csv", path.display());
                    ctx.kv("max_feasible_horizon", limit);
                }
                None => seq.write_csv(&mut *ctx.out, *decimals)?,
            }
            Ok(EXIT_OK)
        }
        Command::Certify => {
            let s = scenario(g)?;
            let model = s.plant()?;
            let cert = s.certify(&model)?;
            print_certificate(ctx, &cert);
            if let Some(path) = out_file(g, "certificate.json")? {
                fs::write(&path, serde_json::to_string_pretty(&cert)?)?;
                ctx.kv("certificate", path.display());
            }
            Ok(EXIT_OK)
        }
        Command::Terminal { invariance } => {
            let s = scenario(g)?;
            let model = s.plant()?;
            let rep = s
                .terminal_report(&model)?
                .ok_or_else(|| Error::InvalidConfig("scenario has no terminal section".into()))?;
            ctx.kv("lmi_min_eig", format!("{:.6e}", rep.lmi.schur_min_eig));
            ctx.kv("pre_schur_max_eig", format!("{:.6e}", rep.lmi.pre_schur_max_eig));
            ctx.kv("lmi_holds", rep.lmi.holds());
            ctx.kv("beta", rep.ingredients.beta);
            if let Some(b) = &rep.beta {
                ctx.kv("beta_input_limit", b.input_limit);
                ctx.kv("beta_state_limit", b.state_limit);
                ctx.kv("beta_error_bound_at_limit", b.error_bound_at_limit);
            }
            ctx.kv("gamma_shape", "P");
            ctx.kv("rcis", format!("V_f <= {}", rep.ingredients.beta));
            if *invariance {
                let e = Ellipsoid::new(rep.ingredients.p.clone(), model.x_ref.as_slice().to_vec(), rep.ingredients.beta)?;
                let samples = s.terminal.as_ref().map_or(10_000, |t| t.samples);
                let inv = verify_robust_invariance(&model, &Region::Ellipsoid(e), samples, s.certify.seed)?;
                ctx.kv("invariance_samples", inv.samples);
                ctx.kv("invariance_failures", inv.failures);
                ctx.kv("invariance_worst_residual", format!("{:.3e}", inv.worst_residual));
            }
            if let Some(path) = out_file(g, "terminal.json")? {
                fs::write(&path, serde_json::to_string_pretty(&rep)?)?;
                ctx.kv("terminal_report", path.display());
            }
            Ok(EXIT_OK)
        }
        Command::Run {
            runs,
            steps,
            certificate,
            formulation,
            nominal,
        } => cmd_run(g, ctx, *runs, *steps, certificate.as_deref(), *formulation, *nominal),
        Command::Report { report } => {
            let path = match (report, &g.out_dir) {
                (Some(p), _) => p.clone(),
                (None, Some(d)) => d.join("report.json"),
                (None, None) => return Err(Error::InvalidConfig("pass --report or --out-dir".into())),
            };
            let rep: BatchReport = serde_json::from_str(&fs::read_to_string(&path)?)?;
            print_report(ctx, &rep);
            Ok(EXIT_OK)
        }
    }
}

fn print_certificate(ctx: &mut Ctx, cert: &ContractionCertificate) {
    ctx.kv("omega", cert.omega);
    ctx.kv("omega_computed", cert.omega_computed);
    ctx.kv("gamma_max", cert.gamma_max);
    ctx.kv("omega_bound", cert.omega_bound);
    for e in &cert.gamma_table {
        ctx.kv(&format!("gamma[{}]", e.horizon), e.gamma);
    }
    ctx.kv("n_p", cert.n_p);
    ctx.kv("gamma", cert.gamma);
    let _ = writeln!(
        ctx.err,
        "certified N_p = {} with γ = {:.4} (bound {:.4})",
        cert.n_p, cert.gamma, cert.omega_bound
    );
}

fn print_report(ctx: &mut Ctx, rep: &BatchReport) {
    ctx.kv("plant", &rep.plant);
    ctx.kv("runs", rep.runs);
    ctx.kv("steps", rep.steps);
    ctx.kv("n_p", rep.n_p);
    ctx.kv("violations", rep.violations);
    ctx.kv("faults", rep.faults);
    ctx.kv(
        "mean_steps_to_sublevel",
        rep.mean_steps_to_sublevel.map_or("none".to_string(), |v| v.to_string()),
    );
    ctx.kv("final_within_omega", rep.final_within_omega);
    let close = rep.final_ref_distance.iter().filter(|d| **d <= 0.1).count();
    ctx.kv("final_within_0.1", close);
    let _ = writeln!(
        ctx.err,
        "{} runs of {} steps: {} violations, {} faults",
        rep.runs, rep.steps, rep.violations, rep.faults
    );
}

fn cmd_run(
    g: &GlobalOpts,
    ctx: &mut Ctx,
    runs: Option<usize>,
    steps: Option<usize>,
    certificate: Option<&Path>,
    formulation: Option<Formulation>,
    nominal: bool,
) -> Result<i32, Error> {
    let mut s = scenario(g)?;
    if let Some(f) = formulation {
        s.controller.formulation = f;
    }
    let model = s.plant()?;
    let x0 = s.experiment.x0.clone();
    crate::error::check_len("x0", x0.len(), model.n())?;
    if !model.state_box.contains(&x0, 0.0) {
        let _ = writeln!(ctx.err, "error: x0 lies outside the state constraints");
        ctx.kv("status", "infeasible_x0");
        return Ok(EXIT_INFEASIBLE_X0);
    }
    let stored = certificate
        .map(Path::to_path_buf)
        .or_else(|| g.out_dir.as_ref().map(|d| d.join("certificate.json")).filter(|p| p.exists()));
    let cert: ContractionCertificate = match stored {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => s.certify(&model)?,
    };
    let cfg = s.controller_config(&model, cert)?;
    let plant = if nominal {
        model.with_dist_bound(&vec![0.0; model.r()])?
    } else {
        model.clone()
    };
    let runs = runs.unwrap_or(s.experiment.runs);
    let steps = steps.unwrap_or(s.experiment.steps);
    let (report, traces) = if runs == 0 {
        (summarize(&plant, &cfg, steps, s.experiment.seed, &[]), Vec::new())
    } else {
        run_batch(&plant, &cfg, &x0, steps, runs, s.experiment.seed)?
    };
    if !traces.is_empty() && traces.iter().all(|t| t.steps.is_empty() && t.fault.is_some()) {
        let _ = writeln!(ctx.err, "error: {}", traces[0].fault.as_deref().unwrap_or_default());
        ctx.kv("status", "infeasible_x0");
        return Ok(EXIT_INFEASIBLE_X0);
    }
    if let Some(dir) = &g.out_dir {
        let tdir = dir.join("traces");
        fs::create_dir_all(&tdir)?;
        for t in &traces {
            t.write_csv(fs::File::create(tdir.join(format!("run_{:03}.csv", t.run_id)))?)?;
        }
        let path = dir.join("report.json");
        fs::write(&path, report.to_json()?)?;
        ctx.kv("report", path.display());
    }
    print_report(ctx, &report);
    Ok(EXIT_OK)
}
