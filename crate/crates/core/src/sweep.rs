//! High-field limit verification: run the kinetic solver across a descending
//! list of scaling parameters ε, compare against the limit solver, and
//! measure the convergence orders.

use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::grid::PhaseGrid;
use crate::hydro::{HydroSolver, HydroState};
use crate::kernels::KernelSet;
use crate::kinetic::{KineticState, Stepper};
use crate::moments::{compute_moments, equilibrium_field, reaction_matrix};
use crate::params::ModelParams;

/// Least-squares slope of log(error) against log(ε).
pub fn estimate_rate(errors: &[f64], epsilons: &[f64]) -> Result<f64> {
    if errors.len() != epsilons.len() || errors.len() < 3 {
        return Err(CoreError::InvalidInput(format!(
            "rate estimation needs equal lengths >= 3, got {} and {}",
            errors.len(),
            epsilons.len()
        )));
    }
    if errors.iter().chain(epsilons).any(|&v| v <= 0.0 || !v.is_finite()) {
        return Err(CoreError::InvalidInput(
            "rate estimation requires strictly positive finite values".into(),
        ));
    }
    let xs: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        num += (x - xm) * (y - ym);
        den += (x - xm) * (x - xm);
    }
    Ok(num / den)
}

/// One row of the convergence report.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub eps: f64,
    /// L¹ distance between the kinetic and limit densities at the final time.
    pub rho_l1_diff: f64,
    /// ρ-weighted L¹ norm of the closure residual (A W - b) ρ.
    pub closure_residual: f64,
    /// L¹ distance of the velocity structure of f from the local equilibrium
    /// (activity marginals compared; see the module README note).
    pub kinetic_eq_distance: f64,
}

/// Full report of one sweep.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub entries: Vec<SweepEntry>,
    pub slope_equilibrium: f64,
    pub slope_closure: f64,
    pub monotone_rho: bool,
    pub monotone_closure: bool,
    pub monotone_equilibrium: bool,
}

impl ConvergenceReport {
    /// All limit-verification trends hold.
    pub fn verified(&self) -> bool {
        self.monotone_rho && self.monotone_closure && self.monotone_equilibrium
    }
}

/// Sweep configuration: initial profiles are sinusoidal in the density and
/// fiber fields, the chemoattractant starts at zero, and the kinetic initial
/// condition is the well-prepared local equilibrium M_{ρ0, U0}.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub eps_list: Vec<f64>,
    pub t_final: f64,
    pub rho_base: f64,
    pub rho_amp: f64,
    pub u0: f64,
    pub qbar_base: f64,
    pub qbar_amp: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            eps_list: vec![0.2, 0.1, 0.05, 0.025],
            t_final: 0.5,
            rho_base: 1.0,
            rho_amp: 0.25,
            u0: 0.05,
            qbar_base: 0.8,
            qbar_amp: 0.3,
        }
    }
}

fn initial_profiles(
    cfg: &SweepConfig,
    grid: &PhaseGrid,
) -> (Vec<f64>, Vec<[f64; 2]>, Array2<f64>) {
    let nx = grid.space.total_cells();
    let len = grid.space.length;
    let mut rho = Vec::with_capacity(nx);
    let mut u = Vec::with_capacity(nx);
    let mut q = Array2::zeros((nx, grid.theta.len()));
    for ixf in 0..nx {
        let (ix, _) = grid.space.unflatten(ixf);
        let x = grid.space.center(ix);
        let phase = 2.0 * std::f64::consts::PI * x / len;
        rho.push(cfg.rho_base + cfg.rho_amp * phase.sin());
        u.push([cfg.u0, 0.0]);
        let qbar = cfg.qbar_base + cfg.qbar_amp * phase.cos();
        for it in 0..grid.theta.len() {
            q[[ixf, it]] = qbar / grid.theta.measure;
        }
    }
    (rho, u, q)
}

/// Distance of the velocity structure of f from the equilibrium shape built
/// on f's own moments: the activity variable is integrated out of both sides
/// before taking the L¹ norm.
fn equilibrium_distance(
    state: &KineticState,
    grid: &PhaseGrid,
    kernels: &KernelSet,
    params: &ModelParams,
) -> f64 {
    let m = compute_moments(state.f.view(), grid, params, None);
    let vol = grid.space.cell_volume();
    let mut total = 0.0;
    for ix in 0..grid.space.total_cells() {
        for iv in 0..grid.vel.len() {
            let mut marginal = 0.0;
            for iy in 0..grid.act.len() {
                marginal += state.f[[ix, iv, iy]] * grid.act.cells[iy].area;
            }
            let v = grid.vel.nodes[iv];
            let eq = m.rho[ix] / grid.vel.measure
                * (1.0 + kernels.ratio * (v[0] * m.u[ix][0] + v[1] * m.u[ix][1]));
            total += grid.vel.weights[iv] * (marginal - eq).abs();
        }
    }
    total * vol
}

/// ρ-weighted L¹ norm of the closure residual (A(Q̄, L) W - b) ρ.
fn closure_residual(state: &KineticState, grid: &PhaseGrid, params: &ModelParams) -> f64 {
    let m = compute_moments(state.f.view(), grid, params, None);
    let qbar = state.qbar(grid);
    let vol = grid.space.cell_volume();
    let mut total = 0.0;
    for ix in 0..grid.space.total_cells() {
        let sys = reaction_matrix(qbar[ix], state.l[ix], params);
        let r = sys.residual(m.w[ix]);
        total += (r[0].abs() + r[1].abs()) * m.rho[ix];
    }
    total * vol
}

/// Run the sweep: one limit solve plus one kinetic solve per ε, then slopes
/// and monotonicity of the three recorded distances.
pub fn epsilon_sweep(
    grid: &PhaseGrid,
    kernels: &KernelSet,
    base_params: &ModelParams,
    cfg: &SweepConfig,
) -> Result<ConvergenceReport> {
    if cfg.eps_list.len() < 3 {
        return Err(CoreError::InvalidInput("sweep needs at least 3 epsilon values".into()));
    }
    for pair in cfg.eps_list.windows(2) {
        if pair[1] >= pair[0] {
            return Err(CoreError::InvalidInput("epsilon list must be strictly descending".into()));
        }
    }

    let (rho0, u0, q0) = initial_profiles(cfg, grid);

    // Limit solve (independent of ε).
    let hydro = HydroSolver::new(grid.clone(), kernels.clone(), base_params.clone());
    let mut hstate = HydroState::new(grid);
    hstate.rho = rho0.clone();
    for ix in 0..rho0.len() {
        hstate.mom[ix] = [rho0[ix] * u0[ix][0], rho0[ix] * u0[ix][1]];
    }
    hstate.q = q0.clone();
    hstate.refresh_closure(grid, base_params);
    hydro.advance(&mut hstate, cfg.t_final, None)?;

    let mut entries = Vec::with_capacity(cfg.eps_list.len());
    for &eps in &cfg.eps_list {
        let mut params = base_params.clone();
        params.eps = eps;
        let mut stepper = Stepper::new(grid.clone(), kernels.clone(), params.clone());
        let mut state = KineticState::zeros(grid);
        state.f = equilibrium_field(&rho0, &u0, grid, kernels)?;
        state.q = q0.clone();
        stepper.advance(&mut state, cfg.t_final, None, |_| {})?;

        let m = compute_moments(state.f.view(), grid, &params, None);
        let vol = grid.space.cell_volume();
        let rho_l1_diff = m
            .rho
            .iter()
            .zip(&hstate.rho)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * vol;
        entries.push(SweepEntry {
            eps,
            rho_l1_diff,
            closure_residual: closure_residual(&state, grid, &params),
            kinetic_eq_distance: equilibrium_distance(&state, grid, kernels, &params),
        });
    }

    let eps: Vec<f64> = entries.iter().map(|e| e.eps).collect();
    let eq_err: Vec<f64> = entries.iter().map(|e| e.kinetic_eq_distance).collect();
    let cl_err: Vec<f64> = entries.iter().map(|e| e.closure_residual).collect();
    let rho_err: Vec<f64> = entries.iter().map(|e| e.rho_l1_diff).collect();
    // Slopes are meaningless at rounding level (exact-equilibrium data).
    let slope_of = |errs: &[f64]| -> Result<f64> {
        if errs.iter().all(|&v| v > 1e-13) {
            estimate_rate(errs, &eps)
        } else {
            Ok(f64::NAN)
        }
    };
    let monotone = |vals: &[f64]| vals.windows(2).all(|w| w[1] < w[0]);
    Ok(ConvergenceReport {
        slope_equilibrium: slope_of(&eq_err)?,
        slope_closure: slope_of(&cl_err)?,
        monotone_rho: monotone(&rho_err),
        monotone_closure: monotone(&cl_err),
        monotone_equilibrium: monotone(&eq_err),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{
        build_activity_grid, build_theta_grid, build_velocity_quadrature, SpaceGrid,
    };

    #[test]
    fn rate_estimation_exact_powers() {
        let eps = [0.2, 0.1, 0.05, 0.025];
        let lin: Vec<f64> = eps.to_vec();
        assert!((estimate_rate(&lin, &eps).unwrap() - 1.0).abs() < 1e-12);
        let quad: Vec<f64> = eps.iter().map(|e| e * e).collect();
        assert!((estimate_rate(&quad, &eps).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rate_estimation_with_noise() {
        let eps: [f64; 5] = [0.2, 0.1, 0.05, 0.025, 0.0125];
        // c ε^{1/2} with ±5% alternating perturbation.
        let errs: Vec<f64> = eps
            .iter()
            .enumerate()
            .map(|(i, e)| 3.0 * e.sqrt() * if i % 2 == 0 { 1.05 } else { 0.95 })
            .collect();
        let slope = estimate_rate(&errs, &eps).unwrap();
        assert!((0.4..=0.6).contains(&slope), "slope {slope}");
    }

    #[test]
    fn rate_estimation_rejects_bad_input() {
        assert!(estimate_rate(&[1.0, 0.5], &[0.2, 0.1]).is_err());
        assert!(estimate_rate(&[1.0, 0.5, -0.1], &[0.2, 0.1, 0.05]).is_err());
    }

    #[test]
    fn trivial_sweep_all_zero_distances() {
        // Equilibrium data with zero chemicals and no reactions: the kinetic
        // state is stationary at every ε, so all distances are at rounding.
        let space = SpaceGrid::new(1, 8, 2.0).unwrap();
        let vel = build_velocity_quadrature(1, 0.5, 4, 2).unwrap();
        let theta = build_theta_grid(1, 2).unwrap();
        let act = build_activity_grid(2).unwrap();
        let mut params = ModelParams::default_for(1, 0.5);
        params.kappa = 0.0;
        params.r_l = 0.0;
        // All binding rates off: the reaction system is identically zero, so
        // the closure residual vanishes along with every other distance.
        params.k1 = 0.0;
        params.km1 = 0.0;
        params.k2 = 0.0;
        params.km2 = 0.0;
        let kernels = KernelSet::build(&params, &vel, &theta).unwrap();
        let grid = PhaseGrid::new(space, vel, theta, act).unwrap();
        let cfg = SweepConfig {
            eps_list: vec![0.4, 0.2, 0.1],
            t_final: 0.02,
            rho_base: 1.0,
            rho_amp: 0.0,
            u0: 0.0,
            qbar_base: 0.0,
            qbar_amp: 0.0,
        };
        let report = epsilon_sweep(&grid, &kernels, &params, &cfg).unwrap_or_else(|e| {
            panic!("sweep failed: {e}");
        });
        for e in &report.entries {
            assert!(e.rho_l1_diff < 1e-10, "rho diff {}", e.rho_l1_diff);
            assert!(e.kinetic_eq_distance < 1e-10);
            assert!(e.closure_residual < 1e-10);
        }
    }
}
