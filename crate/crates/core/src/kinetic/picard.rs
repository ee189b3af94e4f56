//! Fixed-point construction for the coupled system: iterate the uncoupled
//! linear solves with the coupling fields frozen to the previous iterate,
//! starting from the zero triple, and measure the contraction in the natural
//! product norm.

use ndarray::{Array2, Array3};

use crate::error::Result;
use crate::grid::PhaseGrid;

use super::ops::{grad_field, ChemMoments};
use super::state::KineticState;
use super::step::{StageCoeffs, StepRecord, Stepper};

/// Options for the fixed-point run.
#[derive(Debug, Clone)]
pub struct PicardOptions {
    /// Time horizon T0; the contraction constant grows with it.
    pub t_final: f64,
    /// Uniform step; automatic CFL choice when None.
    pub dt: Option<f64>,
    /// Convergence threshold on the successive-iterate distance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions { t_final: 0.05, dt: None, tol: 1e-6, max_iter: 25 }
    }
}

/// States at every step boundary plus the per-step coupling records.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<KineticState>,
    pub records: Vec<StepRecord>,
}

/// Result of the iteration.
#[derive(Debug)]
pub struct PicardOutcome {
    pub converged: bool,
    pub iterations: usize,
    /// Successive-iterate distances, one per completed iterate.
    pub residuals: Vec<f64>,
    /// The final iterate.
    pub trajectory: Trajectory,
    pub dt: f64,
    pub n_steps: usize,
}

impl PicardOutcome {
    /// Ratios of successive residuals (the measured contraction factors).
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.residuals.windows(2).map(|w| w[1] / w[0].max(1e-300)).collect()
    }
}

/// Product norm distance between two states: L1 + sup norms of all three
/// fields plus the L1 norm of the chemoattractant gradient.
fn state_distance(a: &KineticState, b: &KineticState, grid: &PhaseGrid) -> f64 {
    let vol = grid.space.cell_volume();
    let mut f_l1 = 0.0;
    let mut f_linf = 0.0f64;
    for ix in 0..grid.space.total_cells() {
        for iv in 0..grid.vel.len() {
            let wv = grid.vel.weights[iv];
            for iy in 0..grid.act.len() {
                let d = (a.f[[ix, iv, iy]] - b.f[[ix, iv, iy]]).abs();
                f_l1 += d * wv * grid.act.cells[iy].area;
                f_linf = f_linf.max(d);
            }
        }
    }
    f_l1 *= vol;
    let mut q_l1 = 0.0;
    let mut q_linf = 0.0f64;
    for ix in 0..grid.space.total_cells() {
        for it in 0..grid.theta.len() {
            let d = (a.q[[ix, it]] - b.q[[ix, it]]).abs();
            q_l1 += d * grid.theta.weights[it];
            q_linf = q_linf.max(d);
        }
    }
    q_l1 *= vol;
    let mut l_l1 = 0.0;
    let mut l_linf = 0.0f64;
    let dl: Vec<f64> = a.l.iter().zip(b.l.iter()).map(|(x, y)| x - y).collect();
    for &d in &dl {
        l_l1 += d.abs();
        l_linf = l_linf.max(d.abs());
    }
    l_l1 *= vol;
    let grad = grad_field(&dl, &grid.space);
    let grad_l1: f64 = grad.iter().map(|g| (g[0] * g[0] + g[1] * g[1]).sqrt()).sum::<f64>() * vol;
    f_l1 + f_linf + q_l1 + q_linf + l_l1 + l_linf + grad_l1
}

/// Distance between two trajectories: the sup over step boundaries.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory, grid: &PhaseGrid) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| state_distance(x, y, grid))
        .fold(0.0, f64::max)
}

fn zero_records(grid: &PhaseGrid, n_steps: usize) -> Vec<StepRecord> {
    let zero_stage = || StageCoeffs {
        q: Array2::zeros((grid.space.total_cells(), grid.theta.len())),
        l: ndarray::Array1::zeros(grid.space.total_cells()),
        moments: ChemMoments::zeros(grid),
    };
    (0..n_steps)
        .map(|_| StepRecord {
            stage_a1: zero_stage(),
            stage_a2: zero_stage(),
            stage_b1: zero_stage(),
            stage_b2: zero_stage(),
        })
        .collect()
}

fn zero_trajectory(grid: &PhaseGrid, n_steps: usize, dt: f64) -> Trajectory {
    let mut states = Vec::with_capacity(n_steps + 1);
    for k in 0..=n_steps {
        let mut s = KineticState::zeros(grid);
        s.t = k as f64 * dt;
        states.push(s);
    }
    Trajectory { states, records: zero_records(grid, n_steps) }
}

/// Solve the uncoupled linear system against a frozen trajectory.
fn solve_frozen(
    stepper: &mut Stepper,
    f0: &Array3<f64>,
    q0: &Array2<f64>,
    n_steps: usize,
    dt: f64,
    prev: &Trajectory,
) -> Result<Trajectory> {
    let mut state = KineticState::zeros(&stepper.grid);
    state.f = f0.clone();
    state.q = q0.clone();
    // The chemoattractant starts at zero in the fixed-point construction.
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut records = Vec::with_capacity(n_steps);
    states.push(state.clone());
    for k in 0..n_steps {
        let rec = stepper.step(&mut state, dt, Some(&prev.records[k]))?;
        records.push(rec);
        states.push(state.clone());
    }
    Ok(Trajectory { states, records })
}

/// Run the direct coupled solve on the same schedule (the comparison target
/// for the fixed point).
pub fn coupled_trajectory(
    stepper: &mut Stepper,
    f0: &Array3<f64>,
    q0: &Array2<f64>,
    n_steps: usize,
    dt: f64,
) -> Result<Trajectory> {
    let mut state = KineticState::zeros(&stepper.grid);
    state.f = f0.clone();
    state.q = q0.clone();
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut records = Vec::with_capacity(n_steps);
    states.push(state.clone());
    for _ in 0..n_steps {
        let rec = stepper.step(&mut state, dt, None)?;
        records.push(rec);
        states.push(state.clone());
    }
    Ok(Trajectory { states, records })
}

/// Iterate the uncoupled solves from the zero triple until the successive
/// distance drops below tolerance.
pub fn picard_iterate(
    stepper: &mut Stepper,
    f0: &Array3<f64>,
    q0: &Array2<f64>,
    opts: &PicardOptions,
) -> Result<PicardOutcome> {
    let mut probe = KineticState::zeros(&stepper.grid);
    probe.f = f0.clone();
    probe.q = q0.clone();
    let dt_req = match opts.dt {
        Some(v) => v,
        None => stepper.auto_dt(&probe)?,
    };
    let n_steps = (opts.t_final / dt_req).ceil().max(1.0) as usize;
    let dt = opts.t_final / n_steps as f64;

    let grid = stepper.grid.clone();
    let mut prev = zero_trajectory(&grid, n_steps, dt);
    let mut residuals = Vec::new();
    for iteration in 1..=opts.max_iter {
        let traj = solve_frozen(stepper, f0, q0, n_steps, dt, &prev)?;
        let res = trajectory_distance(&traj, &prev, &grid);
        residuals.push(res);
        prev = traj;
        if res < opts.tol {
            return Ok(PicardOutcome {
                converged: true,
                iterations: iteration,
                residuals,
                trajectory: prev,
                dt,
                n_steps,
            });
        }
    }
    Ok(PicardOutcome {
        converged: false,
        iterations: opts.max_iter,
        residuals,
        trajectory: prev,
        dt,
        n_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{
        build_activity_grid, build_theta_grid, build_velocity_quadrature, PhaseGrid, SpaceGrid,
    };
    use crate::kernels::KernelSet;
    use crate::kinetic::state::{profile_value, InitialProfile};
    use crate::moments::equilibrium_field;
    use crate::params::ModelParams;

    fn make_stepper(nx: usize) -> Stepper {
        let space = SpaceGrid::new(1, nx, 2.0).unwrap();
        let vel = build_velocity_quadrature(1, 0.5, 4, 2).unwrap();
        let theta = build_theta_grid(1, 2).unwrap();
        let act = build_activity_grid(3).unwrap();
        let params = ModelParams::default_for(1, 0.5);
        let kernels = KernelSet::build(&params, &vel, &theta).unwrap();
        let grid = PhaseGrid::new(space, vel, theta, act).unwrap();
        Stepper::new(grid, kernels, params)
    }

    #[test]
    fn zero_data_converges_in_one_iteration() {
        let mut stepper = make_stepper(8);
        let grid = stepper.grid.clone();
        let f0 = Array3::zeros((8, grid.vel.len(), grid.act.len()));
        let q0 = Array2::zeros((8, grid.theta.len()));
        let opts = PicardOptions { t_final: 0.02, dt: Some(0.002), tol: 1e-12, max_iter: 5 };
        let out = picard_iterate(&mut stepper, &f0, &q0, &opts).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        assert!(out.residuals[0] < 1e-12);
    }

    #[test]
    fn smooth_data_contracts_and_matches_coupled_solve() {
        let mut stepper = make_stepper(16);
        let grid = stepper.grid.clone();
        let nx = grid.space.total_cells();
        let rho: Vec<f64> = (0..nx)
            .map(|i| {
                profile_value(
                    InitialProfile::SineWave,
                    0.5,
                    0.1,
                    grid.space.center(i),
                    grid.space.length,
                )
            })
            .collect();
        let f0 =
            equilibrium_field(&rho, &vec![[0.0, 0.0]; nx], &grid, &stepper.kernels).unwrap();
        let mut q0 = Array2::zeros((nx, grid.theta.len()));
        q0.fill(0.4);
        let opts = PicardOptions { t_final: 0.05, dt: None, tol: 1e-9, max_iter: 30 };
        let out = picard_iterate(&mut stepper, &f0, &q0, &opts).unwrap();
        assert!(out.converged, "residuals: {:?}", out.residuals);
        // Ratios below one once the iteration is past the first step.
        for r in out.contraction_ratios().iter().skip(1) {
            assert!(*r < 1.0, "ratios {:?}", out.contraction_ratios());
        }
        // The fixed point reproduces the direct coupled solve.
        let coupled =
            coupled_trajectory(&mut stepper, &f0, &q0, out.n_steps, out.dt).unwrap();
        let gap = trajectory_distance(&out.trajectory, &coupled, &grid);
        assert!(gap < 5.0 * opts.tol, "fixed point vs coupled gap {gap}");
    }
}
