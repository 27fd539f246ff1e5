//! Command-line front end. Exit codes: 0 ok, 2 configuration or input error,
//! 3 solver error or failed verification, 4 terminal tolerance not reached.

use crate::assembly::{allocate_budget, assemble_solution, decompose_initial, select_modes, ModeSpectrum};
use crate::control::{v1_norm_unchecked, ControlTrajectory};
use crate::error::{NsmtError, Result};
use crate::grid::{norm_h, Grid, GridFunction};
use crate::io::{self, ArrayFormat, ModeOutcome, RunConfig, RunManifest, TimeUnit};
use crate::optimizer::{check_smallness_condition, solve_mode, OptimalModePair, SmallnessForm};
use crate::state::{reconstruct_u_mode, solve_state_homogenized};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "nsmt", version, about = "Mode-by-mode quasi-minimal-time boundary control of linearized channel flow")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    /// Overrides the configured penalty schedule, e.g. `1e-1,1e-2`.
    #[arg(long, value_delimiter = ',')]
    pub eps_schedule: Option<Vec<f64>>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum FormatArg {
    Csv,
    Bin,
}

impl From<FormatArg> for ArrayFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ArrayFormat::Csv,
            FormatArg::Bin => ArrayFormat::Bin,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Field samples to mode coefficients and budgets.
    Decompose {
        #[command(flatten)]
        common: Common,
        /// CSV with columns `i, j, x, y, u, v`.
        #[arg(long)]
        field: PathBuf,
    },
    /// Forward solve of one mode for a given horizon and control.
    SolveMode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        spectrum: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        k: i32,
        /// Physical horizon.
        #[arg(long)]
        t: f64,
        /// Control CSV on the rescaled or physical mesh; zero when absent.
        #[arg(long)]
        control: Option<PathBuf>,
    },
    /// Per-mode optimal horizon and control.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        spectrum: PathBuf,
        #[arg(long, allow_hyphen_values = true, conflicts_with = "all_modes", required_unless_present = "all_modes")]
        k: Option<i32>,
        #[arg(long)]
        all_modes: bool,
        /// Budgets `k, rho_k`; allocated from the config when absent.
        #[arg(long)]
        budget: Option<PathBuf>,
    },
    /// Combines stored mode bundles into one wall control.
    Assemble {
        #[command(flatten)]
        common: Common,
        /// Directory holding `mode_*` bundles.
        #[arg(long)]
        pairs: PathBuf,
        /// Initial mode data, enabling the re-simulation check.
        #[arg(long)]
        spectrum: Option<PathBuf>,
    },
    /// Re-checks the invariants of stored artifacts.
    Verify {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Table of per-mode results.
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

pub fn exit_code(e: &NsmtError) -> i32 {
    match e {
        NsmtError::NotReached { .. } => 4,
        NsmtError::Config(_)
        | NsmtError::GridTooCoarse(_)
        | NsmtError::Aliasing { .. }
        | NsmtError::EpsilonTooSmall(_)
        | NsmtError::Io(_)
        | NsmtError::Format(_)
        | NsmtError::MeshMismatch(_)
        | NsmtError::LengthMismatch { .. } => 2,
        _ => 3,
    }
}

pub fn error_kind(e: &NsmtError) -> &'static str {
    match e {
        NsmtError::Domain { .. } => "domain",
        NsmtError::InvalidMode => "invalid_mode",
        NsmtError::GridTooCoarse(_) => "grid_too_coarse",
        NsmtError::LengthMismatch { .. } => "length_mismatch",
        NsmtError::ConstraintViolation(_) => "constraint_violation",
        NsmtError::ShiftTooSmall(_) => "shift_too_small",
        NsmtError::Singular(_) => "singular",
        NsmtError::Instability(_) => "instability",
        NsmtError::InvalidInitialDatum(_) => "invalid_initial_datum",
        NsmtError::EpsilonTooSmall(_) => "epsilon_too_small",
        NsmtError::Degenerate(_) => "degenerate_input",
        NsmtError::NotReached { .. } => "not_reached",
        NsmtError::NothingToControl => "nothing_to_control",
        NsmtError::Aliasing { .. } => "aliasing",
        NsmtError::EmptyModeSet => "empty_mode_set",
        NsmtError::MeshMismatch(_) => "mesh_mismatch",
        NsmtError::Config(_) => "config",
        NsmtError::Io(_) => "io",
        NsmtError::Format(_) => "format",
    }
}

/// One-line JSON error record.
pub fn error_record(e: &NsmtError) -> String {
    serde_json::json!({ "error": error_kind(e), "exit_code": exit_code(e), "message": e.to_string() }).to_string()
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            exit_code(&e)
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = io::parse_config(&common.config)?;
    if let Some(e) = &common.eps_schedule {
        cfg.file.optimizer.eps_schedule = e.clone();
    }
    if let Some(w) = common.workers {
        cfg.file.optimizer.workers = Some(w);
    }
    RunConfig::from_file(cfg.file)
}

fn manifest(command: &str, argv: &[String], cfg: &RunConfig, started: u64) -> RunManifest {
    RunManifest {
        format_version: io::FORMAT_VERSION.into(),
        command: command.into(),
        args: argv.to_vec(),
        started_unix: started,
        finished_unix: 0,
        config: cfg.snapshot(),
        outcomes: vec![],
        artifacts: vec![],
    }
}

fn finish(mut m: RunManifest, out: &Path, files: Vec<PathBuf>) -> Result<()> {
    m.finished_unix = io::unix_now();
    m.artifacts = files.iter().map(|p| p.strip_prefix(out).unwrap_or(p).display().to_string()).collect();
    m.write(out)?;
    Ok(())
}

fn dispatch(cmd: Command, argv: Vec<String>) -> Result<i32> {
    let started = io::unix_now();
    match cmd {
        Command::Decompose { common, field } => {
            let cfg = load_config(&common)?;
            let grid = cfg.grid()?;
            let f = io::read_field_csv(&field)?;
            if f.nx != cfg.nx {
                return Err(NsmtError::MeshMismatch(format!("field has Nx = {}, config says {}", f.nx, cfg.nx)));
            }
            let mut spec = decompose_initial(&f, cfg.channel.kmax, &grid)?;
            if spec.discarded_mean > 0.0 {
                eprintln!("warning: dropped a nonzero mean component of size {:e}", spec.discarded_mean);
            }
            spec.rho_alloc = allocate_budget(cfg.channel.rho, &spec, cfg.budget, &grid)?;
            let sp = common.out.join("spectrum.csv");
            let bp = common.out.join("budget.csv");
            io::write_spectrum_csv(&sp, &spec, &grid)?;
            io::write_budget_csv(&bp, &spec.rho_alloc)?;
            finish(manifest("decompose", &argv, &cfg, started), &common.out, vec![sp, bp])?;
            Ok(0)
        }
        Command::SolveMode { common, spectrum, k, t, control } => {
            let cfg = load_config(&common)?;
            let grid = cfg.grid()?;
            let spec = io::read_spectrum_csv(&spectrum)?;
            let v0 = mode_datum(&spec, k)?;
            let w = match control {
                Some(p) => {
                    let (w, unit) = io::read_control_csv(&p)?;
                    if let TimeUnit::Physical(h) = unit {
                        if (h - t).abs() > 1e-12 * t.abs() {
                            return Err(NsmtError::MeshMismatch(format!("control horizon {h} differs from --t {t}")));
                        }
                    }
                    w
                }
                None => ControlTrajectory::zeros(cfg.channel.nt),
            };
            let v = solve_state_homogenized(k, t, &w, &v0, &cfg.channel, &grid)?;
            let u = reconstruct_u_mode(k, &v, &grid)?;
            let times: Vec<f64> = w.times().iter().map(|s| s * t).collect();
            let fmt: ArrayFormat = common.format.into();
            let vp = common.out.join(format!("v_mode_{k}.{}", fmt.extension()));
            let up = common.out.join(format!("u_mode_{k}.{}", fmt.extension()));
            io::write_states(&vp, &times, &v.states, fmt)?;
            io::write_states(&up, &times, &u.states, fmt)?;
            let mut m = manifest("solve-mode", &argv, &cfg, started);
            m.outcomes.push(ModeOutcome {
                k,
                status: "ok".into(),
                converged: None,
                t_star: Some(t),
                terminal_residual: Some(norm_h(v.terminal(), &grid)?),
                collinearity: None,
                message: None,
            });
            finish(m, &common.out, vec![vp, up])?;
            Ok(0)
        }
        Command::Optimize { common, spectrum, k, all_modes, budget } => optimize(common, spectrum, k, all_modes, budget, argv, started),
        Command::Assemble { common, pairs, spectrum } => {
            let cfg = load_config(&common)?;
            let grid = cfg.grid()?;
            let all = io::read_pairs(&pairs)?;
            if all.is_empty() {
                return Err(NsmtError::EmptyModeSet);
            }
            let t_guess = all.values().map(|p| p.t_star).fold(0.0, f64::max);
            let mut kept = all.clone();
            let mut dropped_fraction = 0.0;
            if let Some(sp) = &spectrum {
                let spec = io::read_spectrum_csv(sp)?;
                let sel = select_modes(&spec, t_guess, &cfg.channel, &grid)?;
                kept.retain(|k, _| sel.modes.contains(k));
                dropped_fraction = sel.discarded_energy_fraction;
                if sel.indeterminate {
                    eprintln!("warning: no controllability bound given; mode selection indeterminate, all modes kept");
                }
            }
            let keys: Vec<i32> = kept.keys().copied().collect();
            kept.retain(|k, _| keys.contains(&-k));
            if kept.is_empty() {
                eprintln!("warning: no mode passes the selection test");
                return Err(NsmtError::EmptyModeSet);
            }
            let sol = assemble_solution(&kept, cfg.nx, &grid, &cfg.channel)?;
            let mut files = io::write_solution(&common.out, &sol, &grid)?;
            if let Some(sp) = &spectrum {
                let spec = io::read_spectrum_csv(sp)?;
                let init: BTreeMap<i32, GridFunction<f64>> = spec.entries.iter().map(|(k, (_, v))| (*k, v.clone())).collect();
                let mism = sol.resimulation_mismatch(&init, &cfg.channel, &grid)?;
                let p = common.out.join("resimulation.toml");
                std::fs::write(
                    &p,
                    format!("max_terminal_residual_change = {mism:e}\ndiscarded_energy_fraction = {dropped_fraction:e}\n"),
                )?;
                files.push(p);
            }
            let mut m = manifest("assemble", &argv, &cfg, started);
            m.outcomes = sol
                .modes
                .values()
                .map(|md| ModeOutcome {
                    k: md.k,
                    status: "assembled".into(),
                    converged: all.get(&md.k).map(|p| p.converged),
                    t_star: Some(md.t_k),
                    terminal_residual: Some(md.terminal_residual),
                    collinearity: all.get(&md.k).map(|p| p.collinearity),
                    message: None,
                })
                .collect();
            finish(m, &common.out, files)?;
            println!("T* = {:.6e} (mode {}), {} modes", sol.t_star, sol.argmax, sol.modes.len());
            Ok(0)
        }
        Command::Verify { dir, config } => verify(&dir, config.as_deref()),
        Command::Report { dir, config } => report(&dir, config.as_deref()),
    }
}

fn mode_datum(spec: &ModeSpectrum<f64>, k: i32) -> Result<GridFunction<f64>> {
    spec.entries
        .get(&k)
        .map(|(_, v)| v.clone())
        .ok_or_else(|| NsmtError::Config(format!("mode {k} is not in the spectrum")))
}

fn optimize(
    common: Common,
    spectrum: PathBuf,
    k: Option<i32>,
    all_modes: bool,
    budget: Option<PathBuf>,
    argv: Vec<String>,
    started: u64,
) -> Result<i32> {
    let cfg = load_config(&common)?;
    let grid = cfg.grid()?;
    let spec = io::read_spectrum_csv(&spectrum)?;
    let rho = match budget {
        Some(p) => io::read_budget_csv(&p)?,
        None => allocate_budget(cfg.channel.rho, &spec, cfg.budget, &grid)?,
    };
    let energies = spec.energies(&grid)?;
    let modes: Vec<i32> = match k {
        Some(k) => vec![k],
        None if all_modes => spec.entries.keys().copied().filter(|k| energies[k] > 0.0).collect(),
        None => return Err(NsmtError::Config("give --k or --all-modes".into())),
    };
    let jobs: Vec<(i32, GridFunction<f64>, f64)> = modes
        .iter()
        .map(|k| Ok((*k, mode_datum(&spec, *k)?, *rho.get(k).ok_or_else(|| NsmtError::Config(format!("no budget for mode {k}")))?)))
        .collect::<Result<_>>()?;
    let solve = |(k, v0, r): &(i32, GridFunction<f64>, f64)| (*k, solve_mode(*k, &cfg.params_for(*r), v0, &cfg.channel, &grid));
    let results: Vec<(i32, Result<OptimalModePair<f64>>)> = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| NsmtError::Config(e.to_string()))?
            .install(|| jobs.par_iter().map(solve).collect()),
        None => jobs.par_iter().map(solve).collect(),
    };
    let fmt: ArrayFormat = common.format.into();
    let mut m = manifest("optimize", &argv, &cfg, started);
    let mut files = Vec::new();
    let mut code = 0;
    let single = k.is_some();
    for (k, r) in results {
        match r {
            Ok(pair) => {
                files.extend(io::write_pair(&io::mode_dir(&common.out, k), &pair, &grid, fmt)?);
                m.outcomes.push(ModeOutcome {
                    k,
                    status: "ok".into(),
                    converged: Some(pair.converged),
                    t_star: Some(pair.t_star),
                    terminal_residual: Some(pair.terminal_residual(&grid)),
                    collinearity: Some(pair.collinearity),
                    message: None,
                });
            }
            Err(e) => {
                if single {
                    finish(m, &common.out, files)?;
                    return Err(e);
                }
                eprintln!("{}", error_record(&e));
                let c = exit_code(&e);
                code = if code == 0 { c } else { code.min(c) };
                m.outcomes.push(ModeOutcome {
                    k,
                    status: error_kind(&e).into(),
                    converged: None,
                    t_star: None,
                    terminal_residual: None,
                    collinearity: None,
                    message: Some(e.to_string()),
                });
            }
        }
    }
    finish(m, &common.out, files)?;
    Ok(code)
}

struct Checks {
    failed: usize,
}

impl Checks {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed += 1;
        }
    }
}

fn verify(dir: &Path, config: Option<&Path>) -> Result<i32> {
    let cfg = config.map(io::parse_config).transpose()?;
    let mut c = Checks { failed: 0 };
    let mut seen = false;
    let spec_path = dir.join("spectrum.csv");
    if spec_path.exists() {
        seen = true;
        let spec = io::read_spectrum_csv(&spec_path)?;
        let s = spec.symmetry_residual();
        c.check("spectrum conjugate symmetry", s <= 1e-10, format!("{s:e}"));
        let bp = dir.join("budget.csv");
        if bp.exists() {
            let b = io::read_budget_csv(&bp)?;
            let sum: f64 = b.values().map(|r| r * r).sum();
            if let Some(cfg) = &cfg {
                let rho2 = cfg.channel.rho * cfg.channel.rho;
                c.check("budget within rho^2", sum <= rho2 * (1.0 + 1e-12), format!("{sum:e} vs {rho2:e}"));
            }
            c.check("budget positive", b.values().all(|r| *r >= 0.0), format!("{} modes", b.len()));
        }
    }
    let pairs = io::read_pairs(dir)?;
    for (k, p) in &pairs {
        seen = true;
        let grid = Grid::new(p.v_star.states[0].len() - 1, cfg.as_ref().map_or(1.0, |c| c.channel.l))?;
        let w0 = p.w_star.samples[0].norm();
        c.check(&format!("mode {k} control starts at zero"), w0 <= 1e-12, format!("{w0:e}"));
        let wn = v1_norm_unchecked(&p.w_star);
        let r = p.rho_k * p.t_star.sqrt();
        c.check(&format!("mode {k} budget"), wn <= r * (1.0 + 1e-8), format!("{wn:e} <= {r:e}"));
        let res = p.terminal_residual(&grid);
        c.check(&format!("mode {k} terminal residual"), res <= p.tol_terminal, format!("{res:e} <= {:e}", p.tol_terminal));
        let fin = p.alpha_star.is_finite() && p.collinearity.is_finite() && p.t_star > 0.0;
        c.check(&format!("mode {k} finite results"), fin, format!("alpha {:e}, collinearity {:e}", p.alpha_star, p.collinearity));
        if let Some(cfg) = &cfg {
            let again = solve_state_homogenized(*k, p.t_star, &p.w_star, &p.v_star.states[0], &cfg.channel, &grid)?;
            let d = p.v_star.max_diff(&again);
            let scale = p.v_star.states.iter().fold(0.0f64, |a, s| a.max(s.max_abs())).max(1.0);
            c.check(&format!("mode {k} state reproduces"), d <= 1e-8 * scale, format!("{d:e}"));
        }
    }
    let sp = dir.join("summary.toml");
    if sp.exists() {
        seen = true;
        let s = io::read_summary(&sp)?;
        let tmax = s.modes.iter().map(|m| m.t_k).fold(0.0, f64::max);
        let hit = s.modes.iter().any(|m| m.k == s.argmax && m.t_k == s.t_star);
        c.check("T* is the largest mode horizon", s.t_star == tmax && hit, format!("{:e}, mode {}", s.t_star, s.argmax));
        c.check("Parseval", s.parseval_residual <= 1e-8, format!("{:e}", s.parseval_residual));
        c.check("divergence", s.divergence_residual <= 1e-8, format!("{:e}", s.divergence_residual));
        c.check("realness", s.realness_residual <= 1e-8, format!("{:e}", s.realness_residual));
    }
    if !seen {
        return Err(NsmtError::Io(format!("{}: no artifacts to verify", dir.display())));
    }
    Ok(if c.failed == 0 { 0 } else { 3 })
}

fn report(dir: &Path, config: Option<&Path>) -> Result<i32> {
    let cfg = config.map(io::parse_config).transpose()?;
    let pairs = io::read_pairs(dir)?;
    if pairs.is_empty() {
        return Err(NsmtError::Io(format!("{}: no mode bundles", dir.display())));
    }
    println!(
        "{:>4} {:>13} {:>13} {:>13} {:>11} {:>13} {:>5} {:>13}",
        "k", "T_k*", "residual", "tolerance", "collinear", "alpha", "conv", "smallness"
    );
    for (k, p) in &pairs {
        let grid = Grid::new(p.v_star.states[0].len() - 1, cfg.as_ref().map_or(1.0, |c| c.channel.l))?;
        let small = match &cfg {
            Some(c) => {
                let v0n = norm_h(&p.v_star.states[0], &grid)?;
                format!("{:?}", check_smallness_condition(*k, p.t_star, p.rho_k, v0n, &c.channel, SmallnessForm::Original))
            }
            None => "-".into(),
        };
        println!(
            "{:>4} {:>13.6e} {:>13.6e} {:>13.6e} {:>11.3e} {:>13.6e} {:>5} {:>13}",
            k,
            p.t_star,
            p.terminal_residual(&grid),
            p.tol_terminal,
            p.collinearity,
            p.alpha_star,
            p.converged,
            small
        );
    }
    let sp = dir.join("summary.toml");
    if sp.exists() {
        let s = io::read_summary(&sp)?;
        println!("T* = {:.6e} attained by mode {}", s.t_star, s.argmax);
    }
    Ok(0)
}
