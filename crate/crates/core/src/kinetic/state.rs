//! Kinetic state: cell distribution, fiber field, chemoattractant.

use ndarray::{Array1, Array2, Array3};

use crate::grid::PhaseGrid;

/// Full state of the coupled system at one time.
#[derive(Debug, Clone)]
pub struct KineticState {
    /// Cell distribution on (x-cell, v-node, y-cell).
    pub f: Array3<f64>,
    /// Fiber density on (x-cell, θ-node).
    pub q: Array2<f64>,
    /// Chemoattractant concentration per x-cell.
    pub l: Array1<f64>,
    /// Scaled time.
    pub t: f64,
}

impl KineticState {
    pub fn zeros(grid: &PhaseGrid) -> Self {
        let nx = grid.space.total_cells();
        KineticState {
            f: Array3::zeros((nx, grid.vel.len(), grid.act.len())),
            q: Array2::zeros((nx, grid.theta.len())),
            l: Array1::zeros(nx),
            t: 0.0,
        }
    }

    /// Fiber density integrated over directions, Q̄(x).
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

    /// Total cell mass ∫∫∫ f dx dv dy on the discrete measure.
    pub fn total_mass(&self, grid: &PhaseGrid) -> f64 {
        let vol = grid.space.cell_volume();
        let mut total = 0.0;
        for ix in 0..grid.space.total_cells() {
            for iv in 0..grid.vel.len() {
                let wv = grid.vel.weights[iv];
                for iy in 0..grid.act.len() {
                    total += self.f[[ix, iv, iy]] * wv * grid.act.cells[iy].area;
                }
            }
        }
        total * vol
    }

    /// Conserved compounds when κ = r_L = 0 at ε = 1:
    /// (∫(Q̄ + ρW1) dx, ∫(L + ρW2) dx).
    pub fn compound_totals(&self, grid: &PhaseGrid) -> (f64, f64) {
        let vol = grid.space.cell_volume();
        let mut c1 = 0.0;
        let mut c2 = 0.0;
        for ix in 0..grid.space.total_cells() {
            let mut qbar = 0.0;
            for it in 0..grid.theta.len() {
                qbar += self.q[[ix, it]] * grid.theta.weights[it];
            }
            let mut w1 = 0.0;
            let mut w2 = 0.0;
            for iv in 0..grid.vel.len() {
                let wv = grid.vel.weights[iv];
                for iy in 0..grid.act.len() {
                    let val = self.f[[ix, iv, iy]] * wv * grid.act.cells[iy].area;
                    w1 += grid.act.cells[iy].centroid[0] * val;
                    w2 += grid.act.cells[iy].centroid[1] * val;
                }
            }
            c1 += (qbar + w1) * vol;
            c2 += (self.l[ix] + w2) * vol;
        }
        (c1, c2)
    }
}

/// Built-in initial density profiles on the periodic box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialProfile {
    Uniform,
    GaussianBump,
    TwoBumps,
    SineWave,
}

/// Periodic Gaussian bump centered at `center` with width `w` (sum over the
/// three nearest images keeps it smooth across the boundary).
fn periodic_bump(x: f64, center: f64, w: f64, length: f64) -> f64 {
    let mut total = 0.0;
    for k in [-1.0, 0.0, 1.0] {
        let d = x - center + k * length;
        total += (-(d / w) * (d / w)).exp();
    }
    total
}

/// Evaluate a density profile at position x along one axis.
pub fn profile_value(profile: InitialProfile, base: f64, amp: f64, x: f64, length: f64) -> f64 {
    match profile {
        InitialProfile::Uniform => base,
        InitialProfile::GaussianBump => base + amp * periodic_bump(x, 0.5 * length, 0.15 * length, length),
        InitialProfile::TwoBumps => {
            base + amp
                * (periodic_bump(x, 0.3 * length, 0.08 * length, length)
                    + periodic_bump(x, 0.7 * length, 0.08 * length, length))
        }
        InitialProfile::SineWave => {
            base + amp * (2.0 * std::f64::consts::PI * x / length).sin()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_is_periodic() {
        for p in [
            InitialProfile::Uniform,
            InitialProfile::GaussianBump,
            InitialProfile::TwoBumps,
            InitialProfile::SineWave,
        ] {
            let a = profile_value(p, 1.0, 0.4, 0.0, 2.0);
            let b = profile_value(p, 1.0, 0.4, 2.0, 2.0);
            assert!((a - b).abs() < 1e-12, "{p:?}");
        }
    }
}
