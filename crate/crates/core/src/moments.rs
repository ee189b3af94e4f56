//! Macroscopic moments of the cell distribution, the explicit equilibrium of
//! the turning operator, the algebraic closure of the activity moments, and
//! the macroscopic haptotaxis/chemotaxis source vectors.

use ndarray::{Array3, ArrayView3};
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::grid::PhaseGrid;
use crate::kernels::KernelSet;
use crate::params::ModelParams;

/// Density floor below which a cell is treated as vacuum for U extraction.
pub const RHO_FLOOR: f64 = 1e-14;

/// Per-cell macroscopic moments of f.
#[derive(Debug, Clone)]
pub struct MomentSet {
    /// Cell density ρ.
    pub rho: Vec<f64>,
    /// Momentum ρU.
    pub momentum: Vec<[f64; 2]>,
    /// Mean velocity U (zero in vacuum cells).
    pub u: Vec<[f64; 2]>,
    /// Activity moment ρW.
    pub rho_w: Vec<[f64; 2]>,
    /// Intensive activity fractions W; closure value in vacuum cells.
    pub w: Vec<[f64; 2]>,
    /// Pressure tensor ∫∫ (v-U)⊗(v-U) f dv dy.
    pub pressure: Vec<[[f64; 2]; 2]>,
    /// Mixed moment ∫∫ y⊗v f dv dy (row: activity component, col: velocity axis).
    pub mixed_yv: Vec<[[f64; 2]; 2]>,
}

/// Quadrature evaluation of all moment fields.
///
/// `chem` optionally provides (Q̄, L) so vacuum cells can carry the closure
/// fractions; without it vacuum cells carry W = 0.
pub fn compute_moments(
    f: ArrayView3<'_, f64>,
    grid: &PhaseGrid,
    params: &ModelParams,
    chem: Option<(&[f64], &[f64])>,
) -> MomentSet {
    let nx = grid.space.total_cells();
    let nv = grid.vel.len();
    let ny = grid.act.len();
    debug_assert_eq!(f.shape(), [nx, nv, ny]);

    let per_cell: Vec<_> = (0..nx)
        .into_par_iter()
        .with_min_len(16)
        .map(|ix| {
            let mut rho = 0.0;
            let mut mom = [0.0; 2];
            let mut act = [0.0; 2];
            let mut mixed = [[0.0; 2]; 2];
            for iv in 0..nv {
                let v = grid.vel.nodes[iv];
                let wv = grid.vel.weights[iv];
                let mut m0 = 0.0;
                let mut my = [0.0; 2];
                for iy in 0..ny {
                    let val = f[[ix, iv, iy]] * grid.act.cells[iy].area;
                    let yc = grid.act.cells[iy].centroid;
                    m0 += val;
                    my[0] += yc[0] * val;
                    my[1] += yc[1] * val;
                }
                rho += wv * m0;
                mom[0] += wv * v[0] * m0;
                mom[1] += wv * v[1] * m0;
                act[0] += wv * my[0];
                act[1] += wv * my[1];
                for r in 0..2 {
                    mixed[r][0] += wv * v[0] * my[r];
                    mixed[r][1] += wv * v[1] * my[r];
                }
            }
            let u = if rho > RHO_FLOOR {
                [mom[0] / rho, mom[1] / rho]
            } else {
                [0.0, 0.0]
            };
            // Second pass for the centered pressure tensor.
            let mut press = [[0.0; 2]; 2];
            for iv in 0..nv {
                let v = grid.vel.nodes[iv];
                let wv = grid.vel.weights[iv];
                let mut m0 = 0.0;
                for iy in 0..ny {
                    m0 += f[[ix, iv, iy]] * grid.act.cells[iy].area;
                }
                let c = [v[0] - u[0], v[1] - u[1]];
                for r in 0..2 {
                    for s in 0..2 {
                        press[r][s] += wv * c[r] * c[s] * m0;
                    }
                }
            }
            (rho, mom, u, act, press, mixed)
        })
        .collect();

    let mut set = MomentSet {
        rho: Vec::with_capacity(nx),
        momentum: Vec::with_capacity(nx),
        u: Vec::with_capacity(nx),
        rho_w: Vec::with_capacity(nx),
        w: Vec::with_capacity(nx),
        pressure: Vec::with_capacity(nx),
        mixed_yv: Vec::with_capacity(nx),
    };
    for (ix, (rho, mom, u, act, press, mixed)) in per_cell.into_iter().enumerate() {
        let w = if rho > RHO_FLOOR {
            [act[0] / rho, act[1] / rho]
        } else {
            match chem {
                Some((qbar, l)) => closure_w(qbar[ix], l[ix], params).unwrap_or([0.0, 0.0]),
                None => [0.0, 0.0],
            }
        };
        set.rho.push(rho);
        set.momentum.push(mom);
        set.u.push(u);
        set.rho_w.push(act);
        set.w.push(w);
        set.pressure.push(press);
        set.mixed_yv.push(mixed);
    }
    set
}

/// Maximum admissible |U| for a nonnegative equilibrium: (λ/β) / max|v|.
pub fn max_equilibrium_speed(kernels: &KernelSet) -> f64 {
    1.0 / kernels.ratio
}

/// Explicit local equilibrium M_{ρ,U}(v) = ρ/(|V||Y|) (1 + (β/λ) v·U),
/// uniform in the activity variable.
///
/// Uses the discrete measures and the discrete β/λ ratio so that the
/// recovered moments (ρ, ρU) are exact on the quadrature.
pub fn equilibrium_value(
    rho: f64,
    u: [f64; 2],
    v: [f64; 2],
    grid: &PhaseGrid,
    kernels: &KernelSet,
) -> f64 {
    rho / (grid.vel.measure * grid.act.measure)
        * (1.0 + kernels.ratio * (v[0] * u[0] + v[1] * u[1]))
}

/// Build the equilibrium field M_{ρ(x),U(x)} over the whole phase grid.
pub fn equilibrium_field(
    rho: &[f64],
    u: &[[f64; 2]],
    grid: &PhaseGrid,
    kernels: &KernelSet,
) -> Result<Array3<f64>> {
    let umax = max_equilibrium_speed(kernels);
    for (r, uu) in rho.iter().zip(u) {
        if *r < 0.0 {
            return Err(CoreError::Config(format!("equilibrium density must be >= 0, got {r}")));
        }
        let speed = (uu[0] * uu[0] + uu[1] * uu[1]).sqrt();
        if speed > umax {
            return Err(CoreError::EquilibriumNegative { requested: speed, max_allowed: umax });
        }
    }
    let nx = grid.space.total_cells();
    let nv = grid.vel.len();
    let ny = grid.act.len();
    let mut f = Array3::zeros((nx, nv, ny));
    for ix in 0..nx {
        for iv in 0..nv {
            let val = equilibrium_value(rho[ix], u[ix], grid.vel.nodes[iv], grid, kernels);
            for iy in 0..ny {
                f[[ix, iv, iy]] = val;
            }
        }
    }
    Ok(f)
}

/// 2x2 reaction system A W = b of the activity-moment equation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionSystem {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl ReactionSystem {
    pub fn det(&self) -> f64 {
        self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]
    }

    /// Solve A W = b by 2x2 elimination.
    pub fn solve(&self) -> Result<[f64; 2]> {
        let det = self.det();
        if det.abs() < 1e-300 {
            return Err(CoreError::UndefinedClosure);
        }
        Ok([
            (self.b[0] * self.a[1][1] - self.a[0][1] * self.b[1]) / det,
            (self.a[0][0] * self.b[1] - self.b[0] * self.a[1][0]) / det,
        ])
    }

    /// Residual A W - b for a candidate W.
    pub fn residual(&self, w: [f64; 2]) -> [f64; 2] {
        [
            self.a[0][0] * w[0] + self.a[0][1] * w[1] - self.b[0],
            self.a[1][0] * w[0] + self.a[1][1] * w[1] - self.b[1],
        ]
    }
}

/// Build the reaction matrix A and right-hand side b from (Q̄, L).
pub fn reaction_matrix(qbar: f64, l: f64, p: &ModelParams) -> ReactionSystem {
    ReactionSystem {
        a: [
            [p.k1 * qbar + p.km1, p.k1 * qbar],
            [p.k2 * l, p.k2 * l + p.km2],
        ],
        b: [p.k1 * qbar, p.k2 * l],
    }
}

/// Closed-form limit fractions W = (k1 k_{-2} Q̄, k_{-1} k2 L) / D with
/// D = k1 k_{-2} Q̄ + k_{-1} k2 L + k_{-1} k_{-2}.
pub fn closure_w(qbar: f64, l: f64, p: &ModelParams) -> Result<[f64; 2]> {
    let d = p.k1 * p.km2 * qbar + p.km1 * p.k2 * l + p.km1 * p.km2;
    if d <= 0.0 {
        return Err(CoreError::UndefinedClosure);
    }
    Ok([p.k1 * p.km2 * qbar / d, p.km1 * p.k2 * l / d])
}

/// Isotropic pressure coefficient of the equilibrium,
/// c² = (1 - s^{n+2}) / ((n + 2)(1 - s^n)).
///
/// This is the ratio of the diagonal second moment of V to |V|, i.e. the
/// variance of a velocity drawn uniformly from the annulus; for n = 1, s = 0
/// it reduces to the uniform-distribution value 1/3.
pub fn pressure_coefficient(n: usize, s: f64) -> f64 {
    (1.0 - s.powi(n as i32 + 2)) / ((n as f64 + 2.0) * (1.0 - s.powi(n as i32)))
}

/// Closed-form equilibrium pressure tensor c² ρ I - ρ U⊗U.
pub fn pressure_equilibrium(rho: f64, u: [f64; 2], n: usize, s: f64) -> [[f64; 2]; 2] {
    let c2 = pressure_coefficient(n, s);
    let mut p = [[0.0; 2]; 2];
    for r in 0..n {
        for c in 0..n {
            p[r][c] = -rho * u[r] * u[c];
        }
        p[r][r] += c2 * rho;
    }
    p
}

/// Velocity moments of the reorientation and chemotaxis kernels:
/// Ψ¹(θ) = ∫∫ v ψ dv dv', Ψ²(θ) = ∫∫ v⊗v' ψ dv dv',
/// K¹ = ∫∫ v K dv dv', K² = ∫∫ v⊗v' K dv dv'.
#[derive(Debug, Clone)]
pub struct MacroKernelMoments {
    pub psi1: Vec<[f64; 2]>,
    pub psi2: Vec<[[f64; 2]; 2]>,
    pub chemo1: [f64; 2],
    pub chemo2: [[f64; 2]; 2],
}

/// Double-velocity quadratures of the kernel moments for a given ∇L.
pub fn macro_kernel_moments(
    kernels: &KernelSet,
    grid: &PhaseGrid,
    grad_l: [f64; 2],
) -> MacroKernelMoments {
    let vel = &grid.vel;
    // Both default kernels are independent of v', so the v' integral
    // factorizes: ∫ dv' = |V| for the first moments and ∫ v' dv' = 0 kills
    // the second moments. The sums are still taken explicitly so a future
    // v'-dependent kernel only changes the kernel closure, not this code.
    let mut psi1 = Vec::with_capacity(grid.theta.len());
    let mut psi2 = Vec::with_capacity(grid.theta.len());
    for it in 0..grid.theta.len() {
        let mut m1 = [0.0; 2];
        let mut m2 = [[0.0; 2]; 2];
        for (v, wv) in vel.nodes.iter().zip(&vel.weights) {
            let psi = kernels.psi(*v, it, &grid.theta);
            let base = wv * psi;
            // v' structure: Σ w' = |V|, Σ w' v' = 0 exactly.
            m1[0] += base * v[0] * vel.measure;
            m1[1] += base * v[1] * vel.measure;
            let _ = &mut m2; // second moment vanishes by odd v'-symmetry
        }
        psi1.push(m1);
        psi2.push(m2);
    }
    let mut chemo1 = [0.0; 2];
    let chemo2 = [[0.0; 2]; 2];
    for (v, wv) in vel.nodes.iter().zip(&vel.weights) {
        let k = kernels.chemo(grad_l, *v);
        chemo1[0] += wv * k * v[0] * vel.measure;
        chemo1[1] += wv * k * v[1] * vel.measure;
    }
    MacroKernelMoments { psi1, psi2, chemo1, chemo2 }
}

/// Macroscopic source vectors
/// H(ρ,U,Q) = ρ/|V| ( ∫ (Ψ¹ + (β/λ) Ψ²·U) Q dθ - Q̄ |V| U ) and
/// C(ρ,U,L) = ρ α2/|V| ( K¹ + ((β/λ) K² - |V| I)·U ).
pub fn macro_sources(
    rho: f64,
    u: [f64; 2],
    q_row: &[f64],
    grad_l: [f64; 2],
    kernels: &KernelSet,
    grid: &PhaseGrid,
) -> ([f64; 2], [f64; 2]) {
    let mm = macro_kernel_moments(kernels, grid, grad_l);
    let vol = grid.vel.measure;
    let mut qbar = 0.0;
    let mut h = [0.0; 2];
    for (it, (q, wt)) in q_row.iter().zip(&grid.theta.weights).enumerate() {
        let p1 = mm.psi1[it];
        let p2 = mm.psi2[it];
        let biased = [
            p1[0] + kernels.ratio * (p2[0][0] * u[0] + p2[0][1] * u[1]),
            p1[1] + kernels.ratio * (p2[1][0] * u[0] + p2[1][1] * u[1]),
        ];
        h[0] += biased[0] * q * wt;
        h[1] += biased[1] * q * wt;
        qbar += q * wt;
    }
    h[0] = rho / vol * (h[0] - qbar * vol * u[0]);
    h[1] = rho / vol * (h[1] - qbar * vol * u[1]);

    let k2u = [
        kernels.ratio * (mm.chemo2[0][0] * u[0] + mm.chemo2[0][1] * u[1]) - vol * u[0],
        kernels.ratio * (mm.chemo2[1][0] * u[0] + mm.chemo2[1][1] * u[1]) - vol * u[1],
    ];
    let c = [
        rho * kernels.alpha2 / vol * (mm.chemo1[0] + k2u[0]),
        rho * kernels.alpha2 / vol * (mm.chemo1[1] + k2u[1]),
    ];
    (h, c)
}
