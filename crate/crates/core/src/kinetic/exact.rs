//! Closed-form solution of the linear fiber equation with frozen cell field,
//! used as the oracle for the fiber integrator.

use ndarray::{Array2, ArrayView2};

use crate::grid::PhaseGrid;
use crate::params::ModelParams;

use super::ops::ChemMoments;

/// (e^{z} - 1)/z with a series guard near zero.
fn phi(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 + z * (0.5 + z / 6.0)
    } else {
        z.exp_m1() / z
    }
}

/// Q(t) for the linear fiber equation with time-independent coefficients:
///
///   Q(t) = e^{J t} Q0 + (S + h) t φ(J t),
///
/// where J = -κ D*(x, θ) - k1 B*(x) and S = k_{-1}/|S^{n-1}| Y1*(x) come from
/// the frozen moments, h is the optional extra source, and φ(z) = (e^z - 1)/z.
pub fn exact_q_solution(
    frozen: &ChemMoments,
    q0: ArrayView2<'_, f64>,
    h: Option<ArrayView2<'_, f64>>,
    t: f64,
    grid: &PhaseGrid,
    params: &ModelParams,
) -> Array2<f64> {
    let nx = grid.space.total_cells();
    let nt = grid.theta.len();
    let sphere = grid.theta.measure;
    let mut out = Array2::zeros((nx, nt));
    for ix in 0..nx {
        let source_base = params.km1 / sphere * frozen.y1[ix];
        for it in 0..nt {
            let j = -params.kappa * frozen.degrade[[ix, it]] - params.k1 * frozen.free[ix];
            let mut source = source_base;
            if let Some(hv) = h {
                source += hv[[ix, it]];
            }
            out[[ix, it]] = (j * t).exp() * q0[[ix, it]] + source * t * phi(j * t);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{
        build_activity_grid, build_theta_grid, build_velocity_quadrature, PhaseGrid, SpaceGrid,
    };

    fn grid() -> PhaseGrid {
        let space = SpaceGrid::new(1, 4, 2.0).unwrap();
        let vel = build_velocity_quadrature(1, 0.5, 4, 2).unwrap();
        let theta = build_theta_grid(1, 2).unwrap();
        let act = build_activity_grid(3).unwrap();
        PhaseGrid::new(space, vel, theta, act).unwrap()
    }

    #[test]
    fn no_cells_no_source_is_constant() {
        let grid = grid();
        let params = ModelParams::default_for(1, 0.5);
        let frozen = ChemMoments::zeros(&grid);
        let mut q0 = Array2::zeros((4, 2));
        q0.fill(0.8);
        let q = exact_q_solution(&frozen, q0.view(), None, 3.0, &grid, &params);
        for v in q.iter() {
            assert!((v - 0.8).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_source_grows_linearly() {
        let grid = grid();
        let params = ModelParams::default_for(1, 0.5);
        let frozen = ChemMoments::zeros(&grid);
        let q0 = Array2::zeros((4, 2));
        let mut h = Array2::zeros((4, 2));
        h.fill(0.25);
        let q = exact_q_solution(&frozen, q0.view(), Some(h.view()), 2.0, &grid, &params);
        for v in q.iter() {
            assert!((v - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn phi_matches_series_near_zero() {
        assert!((phi(0.0) - 1.0).abs() < 1e-15);
        assert!((phi(1e-10) - 1.0).abs() < 1e-9);
        assert!((phi(1.0) - (1.0f64.exp() - 1.0)).abs() < 1e-15);
    }
}
