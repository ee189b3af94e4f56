//! Command-line driver: kinetic and hydrodynamic simulations, the scaling
//! sweep, the fixed-point solver, and the verification suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use cellflow_core::config::{parse_config_with_env, RunConfig};
use cellflow_core::hydro::{HydroSolver, HydroState};
use cellflow_core::io::{format_value, write_text, write_timeseries, Field, FieldContainer};
use cellflow_core::kinetic::{picard_iterate, Monitor, PicardOptions, Stepper};
use cellflow_core::moments::compute_moments;
use cellflow_core::sweep::{epsilon_sweep, ConvergenceReport};
use cellflow_core::verify::run_verification;

#[derive(Parser)]
#[command(
    name = "cellflow",
    about = "Multiscale cell-migration solvers: kinetic phase-space runs, the hydrodynamic limit, and verification harnesses"
)]
struct Cli {
    /// Configuration file (sectioned key=value text); defaults apply if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides [output] dir).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker thread count (default: all cores). Results are byte-identical
    /// for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed override for randomized checks and seeded profiles.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the coupled kinetic system and write snapshots + time series.
    SimulateKinetic,
    /// Run the limiting hydrodynamic system.
    SimulateHydro,
    /// Sweep the scaling parameter and verify the approach to the limit.
    LimitSweep,
    /// Run the fixed-point iteration and report its contraction history.
    Picard,
    /// Run the full invariant suite; nonzero exit on any failure.
    Verify,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => String::new(),
    };
    let mut cfg = parse_config_with_env(&text)?;
    if let Some(dir) = &cli.output {
        cfg.output.dir = dir.display().to_string();
    }
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    Ok(cfg)
}

fn ensure_dir(dir: &str) -> Result<PathBuf> {
    let path = PathBuf::from(dir);
    std::fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(path)
}

fn kinetic_snapshot(
    state: &cellflow_core::kinetic::KineticState,
    grid: &cellflow_core::grid::PhaseGrid,
    params: &cellflow_core::params::ModelParams,
) -> FieldContainer {
    let mut c = FieldContainer::default();
    let (nx, nv, ny) = (grid.space.total_cells(), grid.vel.len(), grid.act.len());
    c.push(Field::new("t", vec![1], vec![state.t]));
    c.push(Field::new(
        "f",
        vec![nx as u64, nv as u64, ny as u64],
        state.f.iter().cloned().collect(),
    ));
    c.push(Field::new(
        "q",
        vec![nx as u64, grid.theta.len() as u64],
        state.q.iter().cloned().collect(),
    ));
    c.push(Field::new("l", vec![nx as u64], state.l.to_vec()));
    let m = compute_moments(state.f.view(), grid, params, None);
    c.push(Field::new("rho", vec![nx as u64], m.rho.clone()));
    let mut mom = Vec::with_capacity(nx * 2);
    for p in &m.momentum {
        mom.push(p[0]);
        mom.push(p[1]);
    }
    c.push(Field::new("rho_u", vec![nx as u64, 2], mom));
    let mut w = Vec::with_capacity(nx * 2);
    for p in &m.w {
        w.push(p[0]);
        w.push(p[1]);
    }
    c.push(Field::new("w", vec![nx as u64, 2], w));
    c
}

fn run_kinetic(cfg: &RunConfig, out_dir: &Path, quiet: bool) -> Result<()> {
    let grid = cfg.build_grid()?;
    let params = cfg.model_params()?;
    let kernels = cfg.build_kernels(&grid)?;
    let mut state = cfg.initial_state(&grid, &kernels)?;
    let mut stepper = Stepper::new(grid.clone(), kernels.clone(), params.clone());
    let mut monitor = Monitor::new(&state, &grid, &params);
    monitor.record(&state, &grid, &kernels, &params);

    let dt = if cfg.run.dt > 0.0 { Some(cfg.run.dt) } else { None };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let every = cfg.run.series_every.max(1);
    let snap_every = cfg.run.snapshot_every;
    let mut step_idx = 0usize;
    {
        let row0 = monitor.rows().last().unwrap().clone();
        rows.push(diag_to_row(&row0));
    }
    let grid_for_snap = grid.clone();
    let params_for_snap = params.clone();
    let mut snapshot_err: Option<anyhow::Error> = None;
    stepper.advance(&mut state, cfg.run.t_final, dt, |s| {
        step_idx += 1;
        if step_idx % every == 0 {
            let row = monitor.record(s, &grid, &kernels, &params);
            rows.push(diag_to_row(&row));
        }
        if snap_every > 0 && step_idx % snap_every == 0 && snapshot_err.is_none() {
            let snap = kinetic_snapshot(s, &grid_for_snap, &params_for_snap);
            let path = out_dir.join(format!("kinetic_step{step_idx:06}.kcm"));
            if let Err(e) = snap.write_to(&path) {
                snapshot_err = Some(e.into());
            }
        }
    })?;
    if let Some(e) = snapshot_err {
        return Err(e);
    }
    let columns = [
        "t",
        "mass",
        "f_min",
        "f_linf",
        "q_l1",
        "q_min",
        "l_l1",
        "l_min",
        "grad_l_l1",
        "compound_fiber",
        "compound_chemo",
        "fiber_bound_margin_l1",
        "growth_flag",
    ];
    let text = write_timeseries(&columns, &rows)?;
    write_text(&out_dir.join("kinetic_series.tsv"), &text)?;
    kinetic_snapshot(&state, &grid, &params).write_to(&out_dir.join("kinetic_final.kcm"))?;
    if !quiet {
        println!(
            "kinetic run complete: t = {}, mass = {}",
            format_value(state.t),
            format_value(state.total_mass(&grid))
        );
    }
    Ok(())
}

fn diag_to_row(row: &cellflow_core::kinetic::DiagRow) -> Vec<f64> {
    vec![
        row.t,
        row.mass,
        row.f_min,
        row.f_linf,
        row.q_l1,
        row.q_min,
        row.l_l1,
        row.l_min,
        row.grad_l_l1,
        row.compound_fiber,
        row.compound_chemo,
        row.fiber_bound_margin_l1,
        if row.growth_flag { 1.0 } else { 0.0 },
    ]
}

fn run_hydro(cfg: &RunConfig, out_dir: &Path, quiet: bool) -> Result<()> {
    let grid = cfg.build_grid()?;
    let params = cfg.model_params()?;
    let kernels = cfg.build_kernels(&grid)?;
    let solver = HydroSolver::new(grid.clone(), kernels, params.clone());
    let mut state = HydroState::new(&grid);
    // Same initial macroscopic data as the kinetic run.
    let kstate = cfg.initial_state(&grid, &solver.kernels)?;
    let m = compute_moments(kstate.f.view(), &grid, &params, None);
    state.rho = m.rho.clone();
    state.mom = m.momentum.clone();
    state.q = kstate.q.clone();
    state.l = kstate.l.clone();
    state.refresh_closure(&grid, &params);

    let dt = if cfg.run.dt > 0.0 { Some(cfg.run.dt) } else { None };
    let injected = solver.advance(&mut state, cfg.run.t_final, dt)?;

    let nx = grid.space.total_cells();
    let mut c = FieldContainer::default();
    c.push(Field::new("t", vec![1], vec![state.t]));
    c.push(Field::new("rho", vec![nx as u64], state.rho.clone()));
    let mut mom = Vec::with_capacity(nx * 2);
    for p in &state.mom {
        mom.push(p[0]);
        mom.push(p[1]);
    }
    c.push(Field::new("rho_u", vec![nx as u64, 2], mom));
    let mut w = Vec::with_capacity(nx * 2);
    for p in &state.w {
        w.push(p[0]);
        w.push(p[1]);
    }
    c.push(Field::new("w", vec![nx as u64, 2], w));
    c.push(Field::new(
        "q",
        vec![nx as u64, grid.theta.len() as u64],
        state.q.iter().cloned().collect(),
    ));
    c.push(Field::new("l", vec![nx as u64], state.l.to_vec()));
    c.write_to(&out_dir.join("hydro_final.kcm"))?;
    let rows = vec![vec![
        state.t,
        state.total_mass(&grid),
        state.total_momentum(&grid)[0],
        injected[0],
    ]];
    let text = write_timeseries(&["t", "mass", "momentum_x", "injected_momentum_x"], &rows)?;
    write_text(&out_dir.join("hydro_series.tsv"), &text)?;
    if !quiet {
        println!("hydro run complete: t = {}", format_value(state.t));
    }
    Ok(())
}

fn sweep_report_text(report: &ConvergenceReport) -> String {
    let mut rows = Vec::new();
    for e in &report.entries {
        rows.push(vec![e.eps, e.rho_l1_diff, e.closure_residual, e.kinetic_eq_distance]);
    }
    let mut text = write_timeseries(
        &["epsilon", "rho_l1_diff", "closure_residual", "kinetic_eq_distance"],
        &rows,
    )
    .expect("rectangular by construction");
    text.push_str(&format!(
        "# slope_equilibrium = {}\n",
        format_value(report.slope_equilibrium)
    ));
    text.push_str(&format!("# slope_closure = {}\n", format_value(report.slope_closure)));
    text.push_str(&format!("# monotone_rho = {}\n", report.monotone_rho));
    text.push_str(&format!("# monotone_closure = {}\n", report.monotone_closure));
    text.push_str(&format!("# monotone_equilibrium = {}\n", report.monotone_equilibrium));
    text
}

fn run_sweep(cfg: &RunConfig, out_dir: &Path, quiet: bool) -> Result<bool> {
    let grid = cfg.build_grid()?;
    let params = cfg.model_params()?;
    let kernels = cfg.build_kernels(&grid)?;
    let report = epsilon_sweep(&grid, &kernels, &params, &cfg.sweep_config())?;
    let text = sweep_report_text(&report);
    write_text(&out_dir.join("limit_sweep.tsv"), &text)?;
    if !quiet {
        print!("{text}");
        if !report.verified() {
            eprintln!("limit verification FAILED: distances are not monotone in epsilon");
        }
    }
    Ok(report.verified())
}

fn run_picard(cfg: &RunConfig, out_dir: &Path, quiet: bool) -> Result<bool> {
    let grid = cfg.build_grid()?;
    let kernels = cfg.build_kernels(&grid)?;
    let params = cfg.model_params()?;
    let state = cfg.initial_state(&grid, &kernels)?;
    let mut stepper = Stepper::new(grid.clone(), kernels, params);
    let opts = PicardOptions {
        t_final: cfg.picard.t0,
        dt: if cfg.run.dt > 0.0 { Some(cfg.run.dt) } else { None },
        tol: cfg.picard.tol,
        max_iter: cfg.picard.max_iter,
    };
    let outcome = picard_iterate(&mut stepper, &state.f, &state.q, &opts)?;
    let mut rows = Vec::new();
    for (i, r) in outcome.residuals.iter().enumerate() {
        let ratio = if i == 0 { f64::NAN } else { r / outcome.residuals[i - 1] };
        rows.push(vec![(i + 1) as f64, *r, ratio]);
    }
    let text = write_timeseries(&["iteration", "residual", "ratio"], &rows)?;
    write_text(&out_dir.join("picard_residuals.tsv"), &text)?;
    if !quiet {
        print!("{text}");
        println!(
            "picard: {} after {} iterations",
            if outcome.converged { "converged" } else { "NOT CONVERGED (shorten t0)" },
            outcome.iterations
        );
    }
    Ok(outcome.converged)
}

fn run_verify(cfg: &RunConfig, out_dir: &Path, quiet: bool) -> Result<bool> {
    let report = run_verification(cfg)?;
    let text = report.to_text();
    write_text(&out_dir.join("verify_report.txt"), &text)?;
    if !quiet {
        print!("{text}");
    }
    Ok(report.all_pass())
}

fn dispatch(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    let out_dir = ensure_dir(&cfg.output.dir)?;
    match cli.command {
        Command::SimulateKinetic => run_kinetic(&cfg, &out_dir, cli.quiet).map(|_| true),
        Command::SimulateHydro => run_hydro(&cfg, &out_dir, cli.quiet).map(|_| true),
        Command::LimitSweep => run_sweep(&cfg, &out_dir, cli.quiet),
        Command::Picard => run_picard(&cfg, &out_dir, cli.quiet),
        Command::Verify => run_verify(&cfg, &out_dir, cli.quiet),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> Result<bool> {
        match cli.threads {
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .context("building thread pool")?;
                pool.install(|| dispatch(&cli))
            }
            None => dispatch(&cli),
        }
    };
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn sweep_report_has_footer() {
        let report = ConvergenceReport {
            entries: vec![],
            slope_equilibrium: 1.0,
            slope_closure: 0.5,
            monotone_rho: true,
            monotone_closure: true,
            monotone_equilibrium: true,
        };
        let text = sweep_report_text(&report);
        assert!(text.contains("# slope_closure"));
        assert!(text.starts_with("epsilon\t"));
    }
}
