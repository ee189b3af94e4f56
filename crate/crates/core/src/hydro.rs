//! Finite-volume solver for the limiting macroscopic system: linear-pressure
//! hyperbolic transport of (ρ, ρU) with local Lax-Friedrichs fluxes, the
//! haptotaxis/chemotaxis momentum sources in their surviving regimes, and the
//! limit equations for the fiber and chemoattractant fields.

use ndarray::{Array1, Array2};

use crate::error::{CoreError, Result};
use crate::grid::PhaseGrid;
use crate::kernels::KernelSet;
use crate::kinetic::ops::{grad_field, laplacian};
use crate::moments::{closure_w, macro_sources, pressure_coefficient};
use crate::params::ModelParams;

/// State of the limit system on the periodic box.
#[derive(Debug, Clone)]
pub struct HydroState {
    pub rho: Vec<f64>,
    /// Momentum ρU per cell.
    pub mom: Vec<[f64; 2]>,
    /// Limit activity fractions, refreshed from the closure every step.
    pub w: Vec<[f64; 2]>,
    /// Fiber density per (x, θ).
    pub q: Array2<f64>,
    /// Chemoattractant per x.
    pub l: Array1<f64>,
    pub t: f64,
}

impl HydroState {
    pub fn new(grid: &PhaseGrid) -> Self {
        let nx = grid.space.total_cells();
        HydroState {
            rho: vec![0.0; nx],
            mom: vec![[0.0; 2]; nx],
            w: vec![[0.0; 2]; nx],
            q: Array2::zeros((nx, grid.theta.len())),
            l: Array1::zeros(nx),
            t: 0.0,
        }
    }

    pub fn velocity(&self, ix: usize) -> [f64; 2] {
        let r = self.rho[ix];
        if r > crate::moments::RHO_FLOOR {
            [self.mom[ix][0] / r, self.mom[ix][1] / r]
        } else {
            [0.0, 0.0]
        }
    }

    pub fn total_mass(&self, grid: &PhaseGrid) -> f64 {
        self.rho.iter().sum::<f64>() * grid.space.cell_volume()
    }

    pub fn total_momentum(&self, grid: &PhaseGrid) -> [f64; 2] {
        let vol = grid.space.cell_volume();
        let mut m = [0.0; 2];
        for mm in &self.mom {
            m[0] += mm[0];
            m[1] += mm[1];
        }
        [m[0] * vol, m[1] * vol]
    }

    pub fn qbar(&self, grid: &PhaseGrid) -> Vec<f64> {
        let nx = grid.space.total_cells();
        let mut out = Vec::with_capacity(nx);
        for ix in 0..nx {
            let mut total = 0.0;
            for it in 0..grid.theta.len() {
                total += self.q[[ix, it]] * grid.theta.weights[it];
            }
            out.push(total);
        }
        out
    }

    /// Refresh W from the closure (vacuum cells fall back to zero fractions).
    pub fn refresh_closure(&mut self, grid: &PhaseGrid, params: &ModelParams) {
        let qbar = self.qbar(grid);
        for ix in 0..self.rho.len() {
            self.w[ix] = closure_w(qbar[ix], self.l[ix], params).unwrap_or([0.0, 0.0]);
        }
    }
}

/// Degradation weight g(θ) = ∫_V (1 - |θ·v/|v||) dv on the discrete quadrature.
pub fn g_theta(grid: &PhaseGrid) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.theta.len());
    for it in 0..grid.theta.len() {
        let mut total = 0.0;
        for iv in 0..grid.vel.len() {
            total += grid.degradation_factor(it, iv) * grid.vel.weights[iv];
        }
        out.push(total);
    }
    out
}

/// Limit-system integrator.
pub struct HydroSolver {
    pub grid: PhaseGrid,
    pub kernels: KernelSet,
    pub params: ModelParams,
    /// Pressure coefficient c² of the linear-pressure flux.
    pub c2: f64,
    g: Vec<f64>,
}

/// Rates of the limit chemical equations at frozen (ρ, U).
fn chemical_rates(
    solver: &HydroSolver,
    rho: &[f64],
    q: &Array2<f64>,
    l: &Array1<f64>,
    dq: &mut Array2<f64>,
    dl: &mut Array1<f64>,
) {
    let grid = &solver.grid;
    let p = &solver.params;
    let nx = grid.space.total_cells();
    let nt = grid.theta.len();
    let sphere = grid.theta.measure;
    let vol_v = grid.vel.measure;
    let lap = laplacian(l.as_slice().unwrap(), &grid.space);
    for ix in 0..nx {
        let mut qbar = 0.0;
        for it in 0..nt {
            qbar += q[[ix, it]] * grid.theta.weights[it];
        }
        // Relaxation rate k1 k_{-1} k_{-2} ρ / D toward the isotropic state.
        let d = p.k1 * p.km2 * qbar + p.km1 * p.k2 * l[ix] + p.km1 * p.km2;
        let relax = if d > 0.0 { p.k1 * p.km1 * p.km2 * rho[ix] / d } else { 0.0 };
        let mut degraded = 0.0;
        for it in 0..nt {
            let decay = -p.kappa * rho[ix] / vol_v * solver.g[it] * q[[ix, it]];
            let iso = relax * (qbar / sphere - q[[ix, it]]);
            dq[[ix, it]] = decay + iso;
            degraded += solver.g[it] * q[[ix, it]] * grid.theta.weights[it];
        }
        dl[ix] = p.kappa * rho[ix] / vol_v * degraded - p.r_l * l[ix] + p.d_l * lap[ix];
    }
}

impl HydroSolver {
    pub fn new(grid: PhaseGrid, kernels: KernelSet, params: ModelParams) -> Self {
        let c2 = pressure_coefficient(grid.space.dim, grid.vel.s);
        let g = g_theta(&grid);
        HydroSolver { grid, kernels, params, c2, g }
    }

    /// Acoustic speed √c² of the source-free system.
    pub fn acoustic_speed(&self) -> f64 {
        self.c2.sqrt()
    }

    /// Stability limit 0.5 Δx / max(|U| + c).
    pub fn auto_dt(&self, state: &HydroState) -> f64 {
        let c = self.acoustic_speed();
        let mut speed = c;
        for ix in 0..state.rho.len() {
            let u = state.velocity(ix);
            speed = speed.max((u[0] * u[0] + u[1] * u[1]).sqrt() + c);
        }
        // Chemical stiffness can bind before acoustics at coarse Δx.
        let p = &self.params;
        let dx = self.grid.space.dx;
        let l_rate =
            4.0 * self.grid.space.dim as f64 * p.d_l / (dx * dx) + p.r_l + p.kappa + 1.0;
        (0.5 * dx / speed).min(0.5 / l_rate)
    }

    /// Advance the limit fields (Q, L) only; exposed for the relaxation and
    /// degradation oracles.
    pub fn limit_chemicals(
        &self,
        rho: &[f64],
        q: &mut Array2<f64>,
        l: &mut Array1<f64>,
        dt: f64,
    ) {
        let mut k1q = Array2::zeros(q.raw_dim());
        let mut k1l = Array1::zeros(l.raw_dim());
        chemical_rates(self, rho, q, l, &mut k1q, &mut k1l);
        let qp = &*q + &(dt * &k1q);
        let lp = &*l + &(dt * &k1l);
        let mut k2q = Array2::zeros(q.raw_dim());
        let mut k2l = Array1::zeros(l.raw_dim());
        chemical_rates(self, rho, &qp, &lp, &mut k2q, &mut k2l);
        q.scaled_add(0.5 * dt, &k1q);
        q.scaled_add(0.5 * dt, &k2q);
        l.scaled_add(0.5 * dt, &k1l);
        l.scaled_add(0.5 * dt, &k2l);
    }

    /// Momentum sources δ_{b,1} H + δ_{d,1} C per cell.
    fn momentum_sources(&self, state: &HydroState) -> Vec<[f64; 2]> {
        let nx = state.rho.len();
        let mut out = vec![[0.0; 2]; nx];
        let use_h = self.params.hapto_source_active();
        let use_c = self.params.chemo_source_active();
        if !use_h && !use_c {
            return out;
        }
        let grad = grad_field(state.l.as_slice().unwrap(), &self.grid.space);
        for ix in 0..nx {
            let u = state.velocity(ix);
            let q_row: Vec<f64> =
                (0..self.grid.theta.len()).map(|it| state.q[[ix, it]]).collect();
            let (h, c) =
                macro_sources(state.rho[ix], u, &q_row, grad[ix], &self.kernels, &self.grid);
            if use_h {
                out[ix][0] += h[0];
                out[ix][1] += h[1];
            }
            if use_c {
                out[ix][0] += c[0];
                out[ix][1] += c[1];
            }
        }
        out
    }

    /// Source + chemical half-substep (ρ frozen): coupled Heun over (m, Q, L).
    /// Returns the momentum actually injected (for the balance diagnostic).
    fn source_half(&self, state: &mut HydroState, dt: f64) -> [f64; 2] {
        let s1 = self.momentum_sources(state);
        let mut k1q = Array2::zeros(state.q.raw_dim());
        let mut k1l = Array1::zeros(state.l.raw_dim());
        chemical_rates(self, &state.rho, &state.q, &state.l, &mut k1q, &mut k1l);

        let mut pred = state.clone();
        for ix in 0..state.rho.len() {
            pred.mom[ix][0] += dt * s1[ix][0];
            pred.mom[ix][1] += dt * s1[ix][1];
        }
        pred.q.scaled_add(dt, &k1q);
        pred.l.scaled_add(dt, &k1l);

        let s2 = self.momentum_sources(&pred);
        let mut k2q = Array2::zeros(state.q.raw_dim());
        let mut k2l = Array1::zeros(state.l.raw_dim());
        chemical_rates(self, &pred.rho, &pred.q, &pred.l, &mut k2q, &mut k2l);

        let mut injected = [0.0; 2];
        for ix in 0..state.rho.len() {
            let add = [
                0.5 * dt * (s1[ix][0] + s2[ix][0]),
                0.5 * dt * (s1[ix][1] + s2[ix][1]),
            ];
            state.mom[ix][0] += add[0];
            state.mom[ix][1] += add[1];
            injected[0] += add[0];
            injected[1] += add[1];
        }
        state.q.scaled_add(0.5 * dt, &k1q);
        state.q.scaled_add(0.5 * dt, &k2q);
        state.l.scaled_add(0.5 * dt, &k1l);
        state.l.scaled_add(0.5 * dt, &k2l);
        let vol = self.grid.space.cell_volume();
        [injected[0] * vol, injected[1] * vol]
    }

    /// Conservative local Lax-Friedrichs update of (ρ, m) over dt.
    fn flux_step(&self, state: &mut HydroState, dt: f64) {
        let n = self.grid.space.cells_per_axis;
        let dim = self.grid.space.dim;
        let dx = self.grid.space.dx;
        let c = self.acoustic_speed();
        let c2 = self.c2;
        let rho_old = state.rho.clone();
        let mom_old = state.mom.clone();
        let speed = |ix: usize| -> f64 {
            let r = rho_old[ix];
            let u = if r > crate::moments::RHO_FLOOR {
                [mom_old[ix][0] / r, mom_old[ix][1] / r]
            } else {
                [0.0, 0.0]
            };
            (u[0] * u[0] + u[1] * u[1]).sqrt() + c
        };
        // Face flux along axis `ax` between flattened cells i (left) and j (right).
        let face = |i: usize, j: usize, ax: usize| -> [f64; 3] {
            let a = speed(i).max(speed(j));
            let fl = [mom_old[i][ax], if ax == 0 { c2 * rho_old[i] } else { 0.0 }, if ax == 1 {
                c2 * rho_old[i]
            } else {
                0.0
            }];
            let fr = [mom_old[j][ax], if ax == 0 { c2 * rho_old[j] } else { 0.0 }, if ax == 1 {
                c2 * rho_old[j]
            } else {
                0.0
            }];
            [
                0.5 * (fl[0] + fr[0]) - 0.5 * a * (rho_old[j] - rho_old[i]),
                0.5 * (fl[1] + fr[1]) - 0.5 * a * (mom_old[j][0] - mom_old[i][0]),
                0.5 * (fl[2] + fr[2]) - 0.5 * a * (mom_old[j][1] - mom_old[i][1]),
            ]
        };
        let lam = dt / dx;
        match dim {
            1 => {
                for i in 0..n {
                    let l = (i + n - 1) % n;
                    let r = (i + 1) % n;
                    let f_minus = face(l, i, 0);
                    let f_plus = face(i, r, 0);
                    state.rho[i] = rho_old[i] - lam * (f_plus[0] - f_minus[0]);
                    state.mom[i][0] = mom_old[i][0] - lam * (f_plus[1] - f_minus[1]);
                }
            }
            2 => {
                let space = &self.grid.space;
                for iy in 0..n {
                    for ix in 0..n {
                        let here = space.flatten(ix, iy);
                        let xl = space.flatten((ix + n - 1) % n, iy);
                        let xr = space.flatten((ix + 1) % n, iy);
                        let yl = space.flatten(ix, (iy + n - 1) % n);
                        let yr = space.flatten(ix, (iy + 1) % n);
                        let fxm = face(xl, here, 0);
                        let fxp = face(here, xr, 0);
                        let fym = face(yl, here, 1);
                        let fyp = face(here, yr, 1);
                        state.rho[here] = rho_old[here]
                            - lam * (fxp[0] - fxm[0])
                            - lam * (fyp[0] - fym[0]);
                        state.mom[here][0] = mom_old[here][0]
                            - lam * (fxp[1] - fxm[1])
                            - lam * (fyp[1] - fym[1]);
                        state.mom[here][1] = mom_old[here][1]
                            - lam * (fxp[2] - fxm[2])
                            - lam * (fyp[2] - fym[2]);
                    }
                }
            }
            _ => unreachable!(),
        }
    }

    /// One Strang step; returns the momentum injected by the sources.
    pub fn step(&self, state: &mut HydroState, dt: f64) -> Result<[f64; 2]> {
        let limit = self.auto_dt(state) * 2.0;
        if dt > limit * (1.0 + 1e-12) {
            return Err(CoreError::CflViolation {
                dt,
                limit,
                reason: "hydro acoustic/chemical limit".into(),
            });
        }
        let inj1 = self.source_half(state, 0.5 * dt);
        self.flux_step(state, dt);
        let inj2 = self.source_half(state, 0.5 * dt);
        state.refresh_closure(&self.grid, &self.params);
        state.t += dt;
        Ok([inj1[0] + inj2[0], inj1[1] + inj2[1]])
    }

    /// Run to `t_final` with a uniform automatic step; returns the total
    /// momentum injected by sources (the momentum-balance diagnostic).
    pub fn advance(&self, state: &mut HydroState, t_final: f64, dt: Option<f64>) -> Result<[f64; 2]> {
        if t_final <= state.t {
            return Ok([0.0; 2]);
        }
        let span = t_final - state.t;
        let dt_req = match dt {
            Some(v) if v > 0.0 => v,
            Some(v) => return Err(CoreError::Config(format!("dt must be positive, got {v}"))),
            None => self.auto_dt(state),
        };
        let n_steps = (span / dt_req).ceil().max(1.0) as usize;
        let dt_eff = span / n_steps as f64;
        let mut injected = [0.0; 2];
        for _ in 0..n_steps {
            let inj = self.step(state, dt_eff)?;
            injected[0] += inj[0];
            injected[1] += inj[1];
        }
        Ok(injected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{
        build_activity_grid, build_theta_grid, build_velocity_quadrature, PhaseGrid, SpaceGrid,
    };

    fn solver(nx: usize, n: usize, s: f64) -> HydroSolver {
        let space = SpaceGrid::new(n, nx, 2.0).unwrap();
        let (vr, va) = if n == 1 { (8, 2) } else { (8, 16) };
        let vel = build_velocity_quadrature(n, s, vr, va).unwrap();
        let theta = build_theta_grid(n, if n == 1 { 2 } else { 16 }).unwrap();
        let act = build_activity_grid(3).unwrap();
        let params = ModelParams::default_for(n, s);
        let kernels = KernelSet::build(&params, &vel, &theta).unwrap();
        let grid = PhaseGrid::new(space, vel, theta, act).unwrap();
        HydroSolver::new(grid, kernels, params)
    }

    #[test]
    fn g_theta_vanishes_in_one_dimension() {
        let s = solver(4, 1, 0.5);
        for g in g_theta(&s.grid) {
            assert!(g.abs() < 1e-14);
        }
    }

    #[test]
    fn g_theta_matches_polar_integral_n2() {
        // ((1 - s²)/2)(2π - 4) at s = 0.5, independent of θ.
        let space = SpaceGrid::new(2, 4, 2.0).unwrap();
        let vel = build_velocity_quadrature(2, 0.5, 16, 64).unwrap();
        let theta = build_theta_grid(2, 64).unwrap();
        let act = build_activity_grid(2).unwrap();
        let params = ModelParams::default_for(2, 0.5);
        let kernels = KernelSet::build(&params, &vel, &theta).unwrap();
        let grid = PhaseGrid::new(space, vel, theta, act).unwrap();
        let solver = HydroSolver::new(grid, kernels, params);
        let exact = 0.375 * (2.0 * std::f64::consts::PI - 4.0);
        let g = g_theta(&solver.grid);
        for (i, gv) in g.iter().enumerate() {
            assert!((gv - exact).abs() / exact < 5e-3, "node {i}: {gv} vs {exact}");
            // Mirror symmetry g(θ) = g(-θ): mirror nodes are adjacent pairs.
            if i % 2 == 0 {
                assert!((g[i] - g[i + 1]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn uniform_state_is_stationary() {
        let mut s = solver(16, 1, 0.5);
        s.params.b = 2.0;
        s.params.d = 2.0;
        s.params.kappa = 0.0;
        s.params.r_l = 0.0;
        let mut state = HydroState::new(&s.grid);
        state.rho = vec![1.0; 16];
        let dt = s.auto_dt(&state);
        for _ in 0..10 {
            s.step(&mut state, dt).unwrap();
        }
        for ix in 0..16 {
            assert!((state.rho[ix] - 1.0).abs() < 1e-13);
            assert!(state.mom[ix][0].abs() < 1e-13);
        }
    }

    #[test]
    fn mass_conserved_and_momentum_balance() {
        let mut s = solver(32, 1, 0.5);
        s.params.b = 1.0;
        s.params.d = 1.0;
        let mut state = HydroState::new(&s.grid);
        for i in 0..32 {
            let x = s.grid.space.center(i);
            state.rho[i] = 1.0 + 0.3 * (std::f64::consts::PI * x).sin();
        }
        state.q.fill(0.5);
        state.l.assign(&Array1::linspace(0.1, 0.3, 32));
        state.refresh_closure(&s.grid, &s.params);
        let m0 = state.total_mass(&s.grid);
        let p0 = state.total_momentum(&s.grid);
        let dt = s.auto_dt(&state);
        let mut injected = [0.0; 2];
        for _ in 0..50 {
            let inj = s.step(&mut state, dt).unwrap();
            injected[0] += inj[0];
        }
        let m1 = state.total_mass(&s.grid);
        assert!(((m1 - m0) / m0).abs() < 1e-12, "mass drift");
        let p1 = state.total_momentum(&s.grid);
        let balance = (p1[0] - p0[0]) - injected[0];
        assert!(balance.abs() < 1e-10, "momentum balance residual {balance}");
    }

    #[test]
    fn isotropic_fiber_field_has_no_relaxation() {
        let s = solver(8, 1, 0.5);
        let mut q = Array2::zeros((8, 2));
        q.fill(0.7); // isotropic: Q = Q̄ / |S^0|
        let mut l = Array1::zeros(8);
        let q_before = q.clone();
        // κ = 0 in this check: but default κ > 0 is fine since g ≡ 0 for n=1.
        s.limit_chemicals(&vec![1.0; 8], &mut q, &mut l, 0.01);
        for (a, b) in q.iter().zip(q_before.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn anisotropic_fiber_relaxes_at_predicted_rate() {
        // κ = 0, constant ρ, Q̄ and L: scalar linear decay of the anisotropy
        // at rate k1 k_{-1} k_{-2} ρ / D.
        let mut s = solver(4, 1, 0.5);
        s.params.kappa = 0.0;
        s.params.r_l = 0.0;
        s.params.d_l = 0.0;
        let rho = vec![1.3; 4];
        let mut q = Array2::zeros((4, 2));
        for ix in 0..4 {
            q[[ix, 0]] = 0.6;
            q[[ix, 1]] = 0.4;
        }
        let mut l = Array1::from_elem(4, 0.8);
        let qbar = 1.0 * 1.0 + 0.0 + (0.6f64 + 0.4) - 1.0; // = 1.0
        let d = s.params.k1 * s.params.km2 * qbar
            + s.params.km1 * s.params.k2 * 0.8
            + s.params.km1 * s.params.km2;
        let rate = s.params.k1 * s.params.km1 * s.params.km2 * 1.3 / d;
        let aniso0: f64 = q[[0, 0]] - 0.5;
        let t = 0.5;
        let steps = 2000;
        for _ in 0..steps {
            s.limit_chemicals(&rho, &mut q, &mut l, t / steps as f64);
        }
        let aniso1: f64 = q[[0, 0]] - q.row(0).iter().sum::<f64>() / 2.0 * 1.0;
        let measured = -(aniso1 / aniso0).ln() / t;
        assert!(
            (measured - rate).abs() / rate < 0.02,
            "measured {measured}, predicted {rate}"
        );
    }

    #[test]
    fn relaxation_theta_integral_vanishes() {
        let s = solver(4, 1, 0.5);
        let mut q = Array2::zeros((4, 2));
        for ix in 0..4 {
            q[[ix, 0]] = 0.9;
            q[[ix, 1]] = 0.2;
        }
        let l = Array1::from_elem(4, 0.5);
        let mut dq = Array2::zeros((4, 2));
        let mut dl = Array1::zeros(4);
        chemical_rates(&s, &[1.0; 4], &q, &l, &mut dq, &mut dl);
        // n = 1: g ≡ 0 so the rate is pure relaxation; its θ-integral is 0.
        for ix in 0..4 {
            let total = dq[[ix, 0]] * s.grid.theta.weights[0] + dq[[ix, 1]] * s.grid.theta.weights[1];
            assert!(total.abs() < 1e-14);
        }
    }

    #[test]
    fn acoustic_speed_value() {
        let s = solver(8, 1, 0.5);
        // √(7/12) for the corrected linear-pressure coefficient.
        assert!((s.acoustic_speed() - (7.0f64 / 12.0).sqrt()).abs() < 1e-12);
    }
}
