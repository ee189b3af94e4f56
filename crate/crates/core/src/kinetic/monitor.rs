//! Per-step diagnostic records and the a priori bound monitors.
//!
//! Observational only: the monitors record the norms appearing in the
//! existence estimates and flag states that are qualitatively incompatible
//! with them (super-exponential growth of f, or a fiber norm exceeding its
//! initial value plus the accumulated density integral).

use crate::grid::PhaseGrid;
use crate::kernels::KernelSet;
use crate::moments::compute_moments;
use crate::params::ModelParams;

use super::ops::grad_field;
use super::state::KineticState;

/// One diagnostic row.
#[derive(Debug, Clone)]
pub struct DiagRow {
    pub t: f64,
    pub f_l1: f64,
    pub f_linf: f64,
    pub f_min: f64,
    pub q_l1: f64,
    pub q_linf: f64,
    pub q_min: f64,
    pub l_l1: f64,
    pub l_linf: f64,
    pub l_min: f64,
    pub grad_l_l1: f64,
    pub mass: f64,
    pub compound_fiber: f64,
    pub compound_chemo: f64,
    /// Slack in ‖Q(t)‖_1 <= ‖Q0‖_1 + C ∫‖ρ‖_1 dτ (negative means violated).
    pub fiber_bound_margin_l1: f64,
    /// Same slack in the sup norm.
    pub fiber_bound_margin_linf: f64,
    /// True if ‖f‖_∞ exceeds the exponential growth envelope.
    pub growth_flag: bool,
}

/// Running monitor with the accumulators the bounds need.
pub struct Monitor {
    rows: Vec<DiagRow>,
    q0_l1: f64,
    q0_linf: f64,
    f0_linf: f64,
    /// ∫₀ᵗ ‖ρ(τ)‖_1 dτ and ∫₀ᵗ ‖ρ(τ)‖_∞ dτ by the trapezoid rule.
    rho_l1_integral: f64,
    rho_linf_integral: f64,
    last_rho_l1: f64,
    last_rho_linf: f64,
    last_t: f64,
    /// Envelope rate for the qualitative growth check.
    growth_rate: f64,
    started: bool,
}

fn norms_f(state: &KineticState, grid: &PhaseGrid) -> (f64, f64, f64) {
    let vol = grid.space.cell_volume();
    let mut l1 = 0.0;
    let mut linf = 0.0f64;
    let mut min = f64::INFINITY;
    for ix in 0..grid.space.total_cells() {
        for iv in 0..grid.vel.len() {
            let wv = grid.vel.weights[iv];
            for iy in 0..grid.act.len() {
                let v = state.f[[ix, iv, iy]];
                l1 += v.abs() * wv * grid.act.cells[iy].area;
                linf = linf.max(v.abs());
                min = min.min(v);
            }
        }
    }
    (l1 * vol, linf, min)
}

impl Monitor {
    /// The growth envelope constant follows the structure of the linear
    /// estimates: it scales with the interaction rates and the chemical sup
    /// norms of the initial data.
    pub fn new(state: &KineticState, grid: &PhaseGrid, params: &ModelParams) -> Self {
        let vol = grid.space.cell_volume();
        let mut q_l1 = 0.0;
        let mut q_linf = 0.0f64;
        for ix in 0..grid.space.total_cells() {
            for it in 0..grid.theta.len() {
                q_l1 += state.q[[ix, it]].abs() * grid.theta.weights[it];
                q_linf = q_linf.max(state.q[[ix, it]].abs());
            }
        }
        let l_linf = state.l.iter().cloned().fold(0.0f64, f64::max);
        let (_, f0_linf, _) = norms_f(state, grid);
        let qbar_max = q_linf * grid.theta.measure;
        let growth_rate = 4.0
            * (1.0
                + params.hapto_weight() * qbar_max
                + params.chemo_weight() * params.alpha2
                + params.activity_weight()
                    * (params.k1 * qbar_max + params.km1 + params.k2 * l_linf + params.km2));
        Monitor {
            rows: Vec::new(),
            q0_l1: q_l1 * vol,
            q0_linf: q_linf,
            f0_linf,
            rho_l1_integral: 0.0,
            rho_linf_integral: 0.0,
            last_rho_l1: 0.0,
            last_rho_linf: 0.0,
            last_t: state.t,
            growth_rate,
            started: false,
        }
    }

    /// Record the current state; call once per accepted step (and once on the
    /// initial state).
    pub fn record(
        &mut self,
        state: &KineticState,
        grid: &PhaseGrid,
        kernels: &KernelSet,
        params: &ModelParams,
    ) -> DiagRow {
        let _ = kernels;
        let vol = grid.space.cell_volume();
        let (f_l1, f_linf, f_min) = norms_f(state, grid);

        let mut q_l1 = 0.0;
        let mut q_linf = 0.0f64;
        let mut q_min = f64::INFINITY;
        for ix in 0..grid.space.total_cells() {
            for it in 0..grid.theta.len() {
                let v = state.q[[ix, it]];
                q_l1 += v.abs() * grid.theta.weights[it];
                q_linf = q_linf.max(v.abs());
                q_min = q_min.min(v);
            }
        }
        let q_l1 = q_l1 * vol;

        let mut l_l1 = 0.0;
        let mut l_linf = 0.0f64;
        let mut l_min = f64::INFINITY;
        for &v in state.l.iter() {
            l_l1 += v.abs();
            l_linf = l_linf.max(v.abs());
            l_min = l_min.min(v);
        }
        let l_l1 = l_l1 * vol;
        let grad = grad_field(state.l.as_slice().unwrap(), &grid.space);
        let grad_l_l1: f64 =
            grad.iter().map(|g| (g[0] * g[0] + g[1] * g[1]).sqrt()).sum::<f64>() * vol;

        let moments = compute_moments(state.f.view(), grid, params, None);
        let rho_l1: f64 = moments.rho.iter().map(|r| r.abs()).sum::<f64>() * vol;
        let rho_linf = moments.rho.iter().cloned().fold(0.0f64, f64::max);

        // Trapezoid accumulation of ∫‖ρ‖ dτ.
        if self.started {
            let dt = state.t - self.last_t;
            self.rho_l1_integral += 0.5 * dt * (self.last_rho_l1 + rho_l1);
            self.rho_linf_integral += 0.5 * dt * (self.last_rho_linf + rho_linf);
        }
        self.started = true;
        self.last_rho_l1 = rho_l1;
        self.last_rho_linf = rho_linf;
        self.last_t = state.t;

        // Fiber bound with C = k_{-1} R0 / |S^{n-1}| (R0 = 1 scaled).
        let c_bound = params.km1 / grid.theta.measure;
        let fiber_bound_margin_l1 = self.q0_l1 + c_bound * self.rho_l1_integral - q_l1;
        let fiber_bound_margin_linf =
            self.q0_linf + c_bound * self.rho_linf_integral - q_linf;

        let t = state.t;
        let envelope = self.f0_linf
            * (1.0 + self.growth_rate * t * (self.growth_rate * t).exp())
            + 1e-12;
        let growth_flag = f_linf > envelope;

        let (compound_fiber, compound_chemo) = state.compound_totals(grid);
        let row = DiagRow {
            t,
            f_l1,
            f_linf,
            f_min,
            q_l1,
            q_linf,
            q_min,
            l_l1,
            l_linf,
            l_min,
            grad_l_l1,
            mass: f_l1, // f >= 0 in admissible runs; recorded separately anyway
            compound_fiber,
            compound_chemo,
            fiber_bound_margin_l1,
            fiber_bound_margin_linf,
            growth_flag,
        };
        self.rows.push(row.clone());
        row
    }

    pub fn rows(&self) -> &[DiagRow] {
        &self.rows
    }
}
