//! Discrete operators of the scaled kinetic equation: haptotaxis gain/loss,
//! velocity turning, chemotaxis, spatial transport, and the activity drift.
//!
//! All operators are pure (state in, rate out), parallel over space cells,
//! and conserve their respective collision invariants on the discrete
//! quadrature: the three velocity operators have vanishing v-integrals at
//! every (x, y), the transport divergence telescopes over the periodic box,
//! and the activity transfer conserves mass cell-by-cell in y.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::grid::{PhaseGrid, SpaceGrid};
use crate::kernels::{eval_g, KernelSet};
use crate::params::ModelParams;

/// Haptotaxis operator (gain over ψ against Q minus loss f Q̄).
///
/// The v-integral of the output vanishes at every (x, y) because the discrete
/// normalizer of ψ makes ∫ψ dv = 1 exact.
pub fn apply_haptotaxis(
    f: ArrayView3<'_, f64>,
    q: ArrayView2<'_, f64>,
    grid: &PhaseGrid,
    kernels: &KernelSet,
    out: &mut Array3<f64>,
) {
    let nv = grid.vel.len();
    let ny = grid.act.len();
    let nt = grid.theta.len();
    let fs = f.as_slice().unwrap();
    let row = nv * ny;
    out.as_slice_mut()
        .unwrap()
        .par_chunks_mut(row)
        .enumerate()
        .with_min_len(16)
        .for_each(|(ix, dest)| {
            // Direction-averaged reorientation gain per velocity node.
            let mut aq = vec![0.0; nv];
            let mut qbar = 0.0;
            for it in 0..nt {
                let qv = q[[ix, it]] * grid.theta.weights[it];
                qbar += qv;
                for (iv, a) in aq.iter_mut().enumerate() {
                    *a += qv * kernels.psi(grid.vel.nodes[iv], it, &grid.theta);
                }
            }
            // Velocity marginal per activity cell.
            let mut m0 = vec![0.0; ny];
            for iv in 0..nv {
                let wv = grid.vel.weights[iv];
                let base = ix * row + iv * ny;
                for (iy, m) in m0.iter_mut().enumerate() {
                    *m += wv * fs[base + iy];
                }
            }
            for iv in 0..nv {
                for iy in 0..ny {
                    dest[iv * ny + iy] = aq[iv] * m0[iy] - fs[ix * row + iv * ny + iy] * qbar;
                }
            }
        });
}

/// Turning operator α1 (λ ∫f dv' + β v·∫v' f dv' - λ|V| f) with the
/// operational constants; both solvability conditions hold discretely.
pub fn apply_turning(
    f: ArrayView3<'_, f64>,
    grid: &PhaseGrid,
    kernels: &KernelSet,
    out: &mut Array3<f64>,
) {
    let nv = grid.vel.len();
    let ny = grid.act.len();
    let fs = f.as_slice().unwrap();
    let row = nv * ny;
    let loss = kernels.lambda_op * kernels.v_measure;
    out.as_slice_mut()
        .unwrap()
        .par_chunks_mut(row)
        .enumerate()
        .with_min_len(16)
        .for_each(|(ix, dest)| {
            let mut m0 = vec![0.0; ny];
            let mut m1x = vec![0.0; ny];
            let mut m1y = vec![0.0; ny];
            for iv in 0..nv {
                let wv = grid.vel.weights[iv];
                let v = grid.vel.nodes[iv];
                let base = ix * row + iv * ny;
                for iy in 0..ny {
                    let val = wv * fs[base + iy];
                    m0[iy] += val;
                    m1x[iy] += v[0] * val;
                    m1y[iy] += v[1] * val;
                }
            }
            for iv in 0..nv {
                let v = grid.vel.nodes[iv];
                for iy in 0..ny {
                    let gain = kernels.lambda_op * m0[iy]
                        + kernels.beta_op * (v[0] * m1x[iy] + v[1] * m1y[iy]);
                    dest[iv * ny + iy] =
                        kernels.alpha1 * (gain - loss * fs[ix * row + iv * ny + iy]);
                }
            }
        });
}

/// Chemotaxis operator α2 (∫K[∇L] f dv' - f); ∇L enters per space cell.
pub fn apply_chemotaxis(
    f: ArrayView3<'_, f64>,
    grad_l: &[[f64; 2]],
    grid: &PhaseGrid,
    kernels: &KernelSet,
    out: &mut Array3<f64>,
) {
    let nv = grid.vel.len();
    let ny = grid.act.len();
    let fs = f.as_slice().unwrap();
    let row = nv * ny;
    out.as_slice_mut()
        .unwrap()
        .par_chunks_mut(row)
        .enumerate()
        .with_min_len(16)
        .for_each(|(ix, dest)| {
            let grad = grad_l[ix];
            let kvals: Vec<f64> =
                grid.vel.nodes.iter().map(|v| kernels.chemo(grad, *v)).collect();
            let mut m0 = vec![0.0; ny];
            for iv in 0..nv {
                let wv = grid.vel.weights[iv];
                let base = ix * row + iv * ny;
                for (iy, m) in m0.iter_mut().enumerate() {
                    *m += wv * fs[base + iy];
                }
            }
            for iv in 0..nv {
                for iy in 0..ny {
                    dest[iv * ny + iy] = kernels.alpha2
                        * (kvals[iv] * m0[iy] - fs[ix * row + iv * ny + iy]);
                }
            }
        });
}

/// Centered periodic gradient of the chemoattractant.
pub fn grad_field(l: &[f64], space: &SpaceGrid) -> Vec<[f64; 2]> {
    let n = space.cells_per_axis;
    let inv2dx = 1.0 / (2.0 * space.dx);
    match space.dim {
        1 => (0..n)
            .map(|i| {
                let ip = (i + 1) % n;
                let im = (i + n - 1) % n;
                [(l[ip] - l[im]) * inv2dx, 0.0]
            })
            .collect(),
        2 => {
            let mut out = Vec::with_capacity(n * n);
            for iy in 0..n {
                for ix in 0..n {
                    let xp = space.flatten((ix + 1) % n, iy);
                    let xm = space.flatten((ix + n - 1) % n, iy);
                    let yp = space.flatten(ix, (iy + 1) % n);
                    let ym = space.flatten(ix, (iy + n - 1) % n);
                    out.push([(l[xp] - l[xm]) * inv2dx, (l[yp] - l[ym]) * inv2dx]);
                }
            }
            out
        }
        _ => unreachable!(),
    }
}

/// Periodic Laplacian of a scalar field.
pub fn laplacian(l: &[f64], space: &SpaceGrid) -> Vec<f64> {
    let n = space.cells_per_axis;
    let inv_dx2 = 1.0 / (space.dx * space.dx);
    match space.dim {
        1 => (0..n)
            .map(|i| {
                let ip = (i + 1) % n;
                let im = (i + n - 1) % n;
                (l[ip] - 2.0 * l[i] + l[im]) * inv_dx2
            })
            .collect(),
        2 => {
            let mut out = Vec::with_capacity(n * n);
            for iy in 0..n {
                for ix in 0..n {
                    let c = space.flatten(ix, iy);
                    let xp = space.flatten((ix + 1) % n, iy);
                    let xm = space.flatten((ix + n - 1) % n, iy);
                    let yp = space.flatten(ix, (iy + 1) % n);
                    let ym = space.flatten(ix, (iy + n - 1) % n);
                    out.push((l[xp] + l[xm] + l[yp] + l[ym] - 4.0 * l[c]) * inv_dx2);
                }
            }
            out
        }
        _ => unreachable!(),
    }
}

/// Conservative donor-cell transport rate -v·∇x f on the periodic box.
pub fn apply_transport(f: ArrayView3<'_, f64>, grid: &PhaseGrid, out: &mut Array3<f64>) {
    let nv = grid.vel.len();
    let ny = grid.act.len();
    let n = grid.space.cells_per_axis;
    let dim = grid.space.dim;
    let inv_dx = 1.0 / grid.space.dx;
    let fs = f.as_slice().unwrap();
    let row = nv * ny;
    let space = grid.space.clone();
    out.as_slice_mut()
        .unwrap()
        .par_chunks_mut(row)
        .enumerate()
        .with_min_len(16)
        .for_each(|(ixf, dest)| {
            let (ix, iy_sp) = space.unflatten(ixf);
            let xp = space.flatten((ix + 1) % n, iy_sp);
            let xm = space.flatten((ix + n - 1) % n, iy_sp);
            let (yp, ym) = if dim == 2 {
                (
                    space.flatten(ix, (iy_sp + 1) % n),
                    space.flatten(ix, (iy_sp + n - 1) % n),
                )
            } else {
                (0, 0)
            };
            for iv in 0..nv {
                let v = grid.vel.nodes[iv];
                let here = ixf * row + iv * ny;
                for iy in 0..ny {
                    let fc = fs[here + iy];
                    // Upwind differences per axis; flux form telescopes.
                    let mut rate = if v[0] > 0.0 {
                        -v[0] * (fc - fs[xm * row + iv * ny + iy]) * inv_dx
                    } else {
                        -v[0] * (fs[xp * row + iv * ny + iy] - fc) * inv_dx
                    };
                    if dim == 2 {
                        rate += if v[1] > 0.0 {
                            -v[1] * (fc - fs[ym * row + iv * ny + iy]) * inv_dx
                        } else {
                            -v[1] * (fs[yp * row + iv * ny + iy] - fc) * inv_dx
                        };
                    }
                    dest[iv * ny + iy] = rate;
                }
            }
        });
}

/// Donor-cell transfer coefficients for the activity drift at one space cell.
///
/// For each activity cell the drift G(y_c) is decomposed over displacement
/// vectors toward neighbor cells with nonnegative coefficients,
/// Σ T_i d_i = G(y_c), so the first moment of the transfer equals the
/// cell-centroid quadrature of G f exactly. That exactness is what makes the
/// discrete mass balance between the activity drift and the chemical
/// production terms cancel to rounding.
#[derive(Debug, Clone)]
pub struct ActivityFlux {
    /// Per space cell, per activity cell: outgoing (target, rate) pairs.
    pub rates: Vec<Vec<Vec<(usize, f64)>>>,
    /// Largest drift magnitude that could not be represented in the target
    /// cone (zero in admissible regimes; see `cone_decompose`).
    pub max_clip: f64,
    /// Largest total outflow rate over all cells; enters the CFL bound.
    pub max_outflow: f64,
}

/// Decompose g over the displacement set with nonnegative coefficients.
///
/// Tries target pairs in fixed order and accepts the first exact nonnegative
/// representation. Interior cells carry three displacements summing to zero,
/// so a representation always exists there. Wall-adjacent cells can fail when
/// the drift points into the wall; the drift is then projected onto the cone
/// and the dropped magnitude reported as a clip.
fn cone_decompose(
    g: [f64; 2],
    targets: &[crate::grid::ActivityTarget],
    coeffs: &mut Vec<(usize, f64)>,
) -> f64 {
    coeffs.clear();
    let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
    if gn == 0.0 {
        return 0.0;
    }
    let tol = -1e-13 * gn;
    let m = targets.len();
    // Single-direction exact match (collinear case).
    for (i, t) in targets.iter().enumerate() {
        let d = t.displacement;
        let cross = d[0] * g[1] - d[1] * g[0];
        let dot = d[0] * g[0] + d[1] * g[1];
        if cross.abs() <= 1e-15 * gn * (d[0].abs() + d[1].abs()) && dot > 0.0 {
            let d2 = d[0] * d[0] + d[1] * d[1];
            coeffs.push((i, dot / d2));
            return 0.0;
        }
    }
    for i in 0..m {
        let di = targets[i].displacement;
        for j in (i + 1)..m {
            let dj = targets[j].displacement;
            let det = di[0] * dj[1] - di[1] * dj[0];
            if det.abs() < 1e-300 {
                continue;
            }
            let ti = (g[0] * dj[1] - g[1] * dj[0]) / det;
            let tj = (di[0] * g[1] - di[1] * g[0]) / det;
            if ti >= tol && tj >= tol {
                if ti > 0.0 {
                    coeffs.push((i, ti.max(0.0)));
                }
                if tj > 0.0 {
                    coeffs.push((j, tj.max(0.0)));
                }
                return 0.0;
            }
        }
    }
    // Cone clip: keep the best single-direction projection.
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, t) in targets.iter().enumerate() {
        let d = t.displacement;
        let d2 = d[0] * d[0] + d[1] * d[1];
        let coef = ((d[0] * g[0] + d[1] * g[1]) / d2).max(0.0);
        let rx = g[0] - coef * d[0];
        let ry = g[1] - coef * d[1];
        let res = (rx * rx + ry * ry).sqrt();
        if best.map(|(_, _, r)| res < r).unwrap_or(true) {
            best = Some((i, coef, res));
        }
    }
    match best {
        Some((i, coef, res)) => {
            if coef > 0.0 {
                coeffs.push((i, coef));
            }
            res
        }
        None => gn,
    }
}

/// Build the activity transfer for given chemical fields, checking that the
/// drift points inward on every boundary face.
pub fn build_activity_flux(
    qbar: &[f64],
    l: &[f64],
    grid: &PhaseGrid,
    params: &ModelParams,
) -> Result<ActivityFlux> {
    let act = &grid.act;
    // Outward drift through the triangle boundary cannot happen for
    // admissible (nonnegative) rates and fields; abort loudly if it does.
    for (ix, (&qb, &lv)) in qbar.iter().zip(l).enumerate() {
        let _ = ix;
        for face in &act.boundary_faces {
            let g = eval_g(face.midpoint, qb, lv, params);
            let flux = g[0] * face.outward_normal[0] + g[1] * face.outward_normal[1];
            if flux > 1e-12 {
                return Err(CoreError::OutwardActivityFlux {
                    flux,
                    y1: face.midpoint[0],
                    y2: face.midpoint[1],
                });
            }
        }
    }

    let per_x: Vec<(Vec<Vec<(usize, f64)>>, f64, f64)> = (0..qbar.len())
        .into_par_iter()
        .with_min_len(16)
        .map(|ix| {
            let mut cells = Vec::with_capacity(act.len());
            let mut clip = 0.0f64;
            let mut outflow = 0.0f64;
            let mut coeffs = Vec::new();
            for (ic, cell) in act.cells.iter().enumerate() {
                let g = eval_g(cell.centroid, qbar[ix], l[ix], params);
                let c = cone_decompose(g, &act.targets[ic], &mut coeffs);
                clip = clip.max(c);
                let total: f64 = coeffs.iter().map(|(_, r)| r).sum();
                outflow = outflow.max(total);
                // Map target-list indices to activity-cell indices.
                cells.push(
                    coeffs
                        .iter()
                        .map(|&(i, r)| (act.targets[ic][i].cell, r))
                        .collect(),
                );
            }
            (cells, clip, outflow)
        })
        .collect();

    let mut rates = Vec::with_capacity(per_x.len());
    let mut max_clip = 0.0f64;
    let mut max_outflow = 0.0f64;
    for (cells, clip, outflow) in per_x {
        rates.push(cells);
        max_clip = max_clip.max(clip);
        max_outflow = max_outflow.max(outflow);
    }
    Ok(ActivityFlux { rates, max_clip, max_outflow })
}

/// Apply the activity transfer: out = -∇_y·(G f) in donor-cell form
/// (without the ε^{a-1} weight, which the stepper owns).
pub fn apply_activity_transfer(
    flux: &ActivityFlux,
    f: ArrayView3<'_, f64>,
    grid: &PhaseGrid,
    out: &mut Array3<f64>,
) {
    let nv = grid.vel.len();
    let ny = grid.act.len();
    let fs = f.as_slice().unwrap();
    let row = nv * ny;
    out.as_slice_mut()
        .unwrap()
        .par_chunks_mut(row)
        .enumerate()
        .with_min_len(16)
        .for_each(|(ix, dest)| {
            let cells = &flux.rates[ix];
            for iv in 0..nv {
                let base = ix * row + iv * ny;
                let drow = &mut dest[iv * ny..(iv + 1) * ny];
                drow.fill(0.0);
                for (ic, transfers) in cells.iter().enumerate() {
                    let fc = fs[base + ic];
                    if fc == 0.0 {
                        continue;
                    }
                    for &(target, rate) in transfers {
                        // Equal cell areas: mass rate and value rate coincide.
                        let amount = rate * fc;
                        drow[ic] -= amount;
                        drow[target] += amount;
                    }
                }
            }
        });
}

/// Chemical source moments of f entering the fiber/chemoattractant equations.
#[derive(Debug, Clone, PartialEq)]
pub struct ChemMoments {
    /// ∫∫ (1 - |θ·v/|v||) f dv dy per (x, θ).
    pub degrade: Array2<f64>,
    /// ∫∫ (1 - y1 - y2) f dv dy per x.
    pub free: Vec<f64>,
    /// ∫∫ y1 f dv dy per x.
    pub y1: Vec<f64>,
    /// ∫∫ y2 f dv dy per x.
    pub y2: Vec<f64>,
}

impl ChemMoments {
    pub fn zeros(grid: &PhaseGrid) -> Self {
        let nx = grid.space.total_cells();
        ChemMoments {
            degrade: Array2::zeros((nx, grid.theta.len())),
            free: vec![0.0; nx],
            y1: vec![0.0; nx],
            y2: vec![0.0; nx],
        }
    }
}

/// Evaluate the chemical source moments by quadrature.
pub fn chem_moments(f: ArrayView3<'_, f64>, grid: &PhaseGrid) -> ChemMoments {
    let nx = grid.space.total_cells();
    let nv = grid.vel.len();
    let ny = grid.act.len();
    let nt = grid.theta.len();
    let fs = f.as_slice().unwrap();
    let row = nv * ny;

    let per_x: Vec<(Vec<f64>, f64, f64, f64)> = (0..nx)
        .into_par_iter()
        .with_min_len(16)
        .map(|ix| {
            let mut m0v = vec![0.0; nv]; // velocity marginal Σ_y f a
            let mut free = 0.0;
            let mut y1 = 0.0;
            let mut y2 = 0.0;
            for iv in 0..nv {
                let wv = grid.vel.weights[iv];
                let base = ix * row + iv * ny;
                let mut s0 = 0.0;
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                for iy in 0..ny {
                    let cell = &grid.act.cells[iy];
                    let val = fs[base + iy] * cell.area;
                    s0 += val;
                    s1 += cell.centroid[0] * val;
                    s2 += cell.centroid[1] * val;
                }
                m0v[iv] = s0;
                free += wv * (s0 - s1 - s2);
                y1 += wv * s1;
                y2 += wv * s2;
            }
            let mut deg = vec![0.0; nt];
            for (it, d) in deg.iter_mut().enumerate() {
                let mut total = 0.0;
                for iv in 0..nv {
                    total +=
                        grid.degradation_factor(it, iv) * grid.vel.weights[iv] * m0v[iv];
                }
                *d = total;
            }
            (deg, free, y1, y2)
        })
        .collect();

    let mut out = ChemMoments::zeros(grid);
    for (ix, (deg, free, y1, y2)) in per_x.into_iter().enumerate() {
        for (it, d) in deg.into_iter().enumerate() {
            out.degrade[[ix, it]] = d;
        }
        out.free[ix] = free;
        out.y1[ix] = y1;
        out.y2[ix] = y2;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{
        build_activity_grid, build_theta_grid, build_velocity_quadrature, PhaseGrid, SpaceGrid,
    };
    use crate::moments::equilibrium_field;
    use ndarray::Array3;

    fn grid_1d(nx: usize, y_sub: usize) -> (PhaseGrid, ModelParams, KernelSet) {
        let space = SpaceGrid::new(1, nx, 2.0).unwrap();
        let vel = build_velocity_quadrature(1, 0.5, 8, 2).unwrap();
        let theta = build_theta_grid(1, 2).unwrap();
        let act = build_activity_grid(y_sub).unwrap();
        let params = ModelParams::default_for(1, 0.5);
        let kernels = KernelSet::build(&params, &vel, &theta).unwrap();
        let grid = PhaseGrid::new(space, vel, theta, act).unwrap();
        (grid, params, kernels)
    }

    fn pseudo_random_f(grid: &PhaseGrid, seed: u64) -> Array3<f64> {
        let nx = grid.space.total_cells();
        let mut f = Array3::zeros((nx, grid.vel.len(), grid.act.len()));
        let mut state = seed;
        for v in f.iter_mut() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = (state >> 40) as f64 / (1u64 << 24) as f64 + 0.05;
        }
        f
    }

    fn v_integral_max(out: &Array3<f64>, grid: &PhaseGrid) -> f64 {
        let mut worst = 0.0f64;
        for ix in 0..grid.space.total_cells() {
            for iy in 0..grid.act.len() {
                let mut total = 0.0;
                for iv in 0..grid.vel.len() {
                    total += grid.vel.weights[iv] * out[[ix, iv, iy]];
                }
                worst = worst.max(total.abs());
            }
        }
        worst
    }

    #[test]
    fn haptotaxis_conserves_v_integral() {
        let (grid, _, kernels) = grid_1d(4, 3);
        let f = pseudo_random_f(&grid, 7);
        let mut q = Array2::zeros((4, 2));
        q.fill(0.8);
        let mut out = Array3::zeros(f.raw_dim());
        apply_haptotaxis(f.view(), q.view(), &grid, &kernels, &mut out);
        assert!(v_integral_max(&out, &grid) < 1e-12);
    }

    #[test]
    fn haptotaxis_vanishes_without_fibers() {
        let (grid, _, kernels) = grid_1d(3, 2);
        let f = pseudo_random_f(&grid, 9);
        let q = Array2::zeros((3, 2));
        let mut out = Array3::zeros(f.raw_dim());
        apply_haptotaxis(f.view(), q.view(), &grid, &kernels, &mut out);
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn haptotaxis_matches_hand_sum_on_toy_grid() {
        // 4 velocity nodes, 1 theta pair, 1 activity cell: brute-force sum.
        let space = SpaceGrid::new(1, 2, 2.0).unwrap();
        let vel = build_velocity_quadrature(1, 0.0, 2, 2).unwrap();
        let theta = build_theta_grid(1, 2).unwrap();
        let act = build_activity_grid(1).unwrap();
        let params = ModelParams::default_for(1, 0.0);
        let kernels = KernelSet::build(&params, &vel, &theta).unwrap();
        let grid = PhaseGrid::new(space, vel, theta, act).unwrap();
        let nv = grid.vel.len();
        let mut f = Array3::zeros((2, nv, 1));
        for iv in 0..nv {
            f[[0, iv, 0]] = 1.0 + iv as f64 * 0.5;
        }
        let mut q = Array2::zeros((2, 2));
        q[[0, 0]] = 0.6; // θ = +1
        q[[0, 1]] = 0.2; // θ = -1
        let mut out = Array3::zeros(f.raw_dim());
        apply_haptotaxis(f.view(), q.view(), &grid, &kernels, &mut out);
        // Independent brute-force triple loop.
        for iv in 0..nv {
            let v = grid.vel.nodes[iv];
            let mut gain = 0.0;
            for it in 0..2 {
                for ivp in 0..nv {
                    gain += kernels.psi(v, it, &grid.theta)
                        * f[[0, ivp, 0]]
                        * q[[0, it]]
                        * grid.theta.weights[it]
                        * grid.vel.weights[ivp];
                }
            }
            let qbar = (0.6 + 0.2) * 1.0;
            let expect = gain - f[[0, iv, 0]] * qbar;
            assert!((out[[0, iv, 0]] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn turning_solvability_conditions() {
        let (grid, _, kernels) = grid_1d(5, 3);
        let f = pseudo_random_f(&grid, 11);
        let mut out = Array3::zeros(f.raw_dim());
        apply_turning(f.view(), &grid, &kernels, &mut out);
        assert!(v_integral_max(&out, &grid) < 1e-12);
        // Momentum condition.
        let mut worst = 0.0f64;
        for ix in 0..grid.space.total_cells() {
            for iy in 0..grid.act.len() {
                let mut total = 0.0;
                for iv in 0..grid.vel.len() {
                    total += grid.vel.weights[iv] * grid.vel.nodes[iv][0] * out[[ix, iv, iy]];
                }
                worst = worst.max(total.abs());
            }
        }
        assert!(worst < 1e-12, "momentum residual {worst}");
    }

    #[test]
    fn turning_momentum_breaks_without_compatibility() {
        let (grid, _, kernels) = grid_1d(2, 2);
        let broken = kernels.with_beta_scaled(1.1);
        let f = pseudo_random_f(&grid, 13);
        let mut out = Array3::zeros(f.raw_dim());
        apply_turning(f.view(), &grid, &broken, &mut out);
        let mut worst = 0.0f64;
        for ix in 0..2 {
            for iy in 0..grid.act.len() {
                let mut total = 0.0;
                for iv in 0..grid.vel.len() {
                    total += grid.vel.weights[iv] * grid.vel.nodes[iv][0] * out[[ix, iv, iy]];
                }
                worst = worst.max(total.abs());
            }
        }
        assert!(worst > 1e-4, "perturbed residual too small: {worst}");
    }

    #[test]
    fn turning_annihilates_equilibrium() {
        let (grid, _, kernels) = grid_1d(3, 4);
        let rho = vec![0.5, 1.0, 2.0];
        let u = vec![[0.1, 0.0], [-0.2, 0.0], [0.3, 0.0]];
        let f = equilibrium_field(&rho, &u, &grid, &kernels).unwrap();
        let mut out = Array3::zeros(f.raw_dim());
        apply_turning(f.view(), &grid, &kernels, &mut out);
        let worst = out.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        assert!(worst < 1e-12, "L(M) max {worst}");
    }

    #[test]
    fn chemotaxis_conserves_and_fixes_uniform() {
        let (grid, _, kernels) = grid_1d(4, 3);
        let f = pseudo_random_f(&grid, 17);
        let grad = vec![[0.4, 0.0]; 4];
        let mut out = Array3::zeros(f.raw_dim());
        apply_chemotaxis(f.view(), &grad, &grid, &kernels, &mut out);
        assert!(v_integral_max(&out, &grid) < 1e-12);
        // Constant L and v-uniform f: equilibrium of the uniform kernel.
        let uniform = Array3::from_elem(f.raw_dim(), 0.7);
        let zero_grad = vec![[0.0, 0.0]; 4];
        apply_chemotaxis(uniform.view(), &zero_grad, &grid, &kernels, &mut out);
        let worst = out.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        assert!(worst < 1e-13);
    }

    #[test]
    fn transport_uniform_is_stationary_and_conservative() {
        let (grid, _, _) = grid_1d(8, 2);
        let uniform = Array3::from_elem((8, grid.vel.len(), grid.act.len()), 1.3);
        let mut out = Array3::zeros(uniform.raw_dim());
        apply_transport(uniform.view(), &grid, &mut out);
        assert!(out.iter().all(|&x| x.abs() < 1e-14));

        let f = pseudo_random_f(&grid, 23);
        apply_transport(f.view(), &grid, &mut out);
        // Column sums over x vanish per (v, y): telescoping flux.
        for iv in 0..grid.vel.len() {
            for iy in 0..grid.act.len() {
                let total: f64 = (0..8).map(|ix| out[[ix, iv, iy]]).sum();
                assert!(total.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn activity_transfer_conserves_mass_and_moments() {
        let (grid, params, _) = grid_1d(3, 6);
        let qbar = vec![2.0, 1.5, 1.8];
        let l = vec![2.0, 2.2, 1.9];
        let flux = build_activity_flux(&qbar, &l, &grid, &params).unwrap();
        assert_eq!(flux.max_clip, 0.0, "drift must be representable here");

        let f = pseudo_random_f(&grid, 29);
        let mut out = Array3::zeros(f.raw_dim());
        apply_activity_transfer(&flux, f.view(), &grid, &mut out);

        for ix in 0..3 {
            for iv in 0..grid.vel.len() {
                let mut mass = 0.0;
                let mut mom1 = 0.0;
                let mut mom2 = 0.0;
                let mut target1 = 0.0;
                let mut target2 = 0.0;
                for iy in 0..grid.act.len() {
                    let cell = &grid.act.cells[iy];
                    mass += out[[ix, iv, iy]] * cell.area;
                    mom1 += cell.centroid[0] * out[[ix, iv, iy]] * cell.area;
                    mom2 += cell.centroid[1] * out[[ix, iv, iy]] * cell.area;
                    let g = eval_g(cell.centroid, qbar[ix], l[ix], &params);
                    target1 += g[0] * f[[ix, iv, iy]] * cell.area;
                    target2 += g[1] * f[[ix, iv, iy]] * cell.area;
                }
                assert!(mass.abs() < 1e-13, "mass leak {mass}");
                // First moments equal the centroid quadrature of G f exactly.
                assert!((mom1 - target1).abs() < 1e-12, "y1 moment {mom1} vs {target1}");
                assert!((mom2 - target2).abs() < 1e-12, "y2 moment {mom2} vs {target2}");
            }
        }
    }

    #[test]
    fn activity_transfer_zero_field() {
        let (grid, params, _) = grid_1d(2, 4);
        let flux = build_activity_flux(&[1.0, 1.0], &[1.0, 1.0], &grid, &params).unwrap();
        let f = Array3::zeros((2, grid.vel.len(), grid.act.len()));
        let mut out = Array3::from_elem(f.raw_dim(), 9.9);
        apply_activity_transfer(&flux, f.view(), &grid, &mut out);
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn activity_flux_rejects_outward_drift() {
        let (grid, mut params, _) = grid_1d(2, 4);
        // A negative unbinding rate is invalid; force it to point outward.
        params.km1 = -1.0;
        let res = build_activity_flux(&[0.0, 0.0], &[0.0, 0.0], &grid, &params);
        assert!(matches!(res, Err(CoreError::OutwardActivityFlux { .. })));
    }

    #[test]
    fn gradient_and_laplacian_consistency() {
        let n = 128;
        let space = SpaceGrid::new(1, n, 2.0).unwrap();
        let k = 2.0 * std::f64::consts::PI / 2.0;
        let l: Vec<f64> = (0..n).map(|i| (k * space.center(i)).sin()).collect();
        let grad = grad_field(&l, &space);
        let lap = laplacian(&l, &space);
        for i in 0..n {
            let x = space.center(i);
            assert!((grad[i][0] - k * (k * x).cos()).abs() < 3e-3);
            assert!((lap[i] + k * k * (k * x).sin()).abs() < 1e-2);
        }
        // Second order: halving dx cuts the gradient error by 4.
        let err_at = |n: usize| -> f64 {
            let space = SpaceGrid::new(1, n, 2.0).unwrap();
            let l: Vec<f64> = (0..n).map(|i| (k * space.center(i)).sin()).collect();
            let grad = grad_field(&l, &space);
            (0..n)
                .map(|i| (grad[i][0] - k * (k * space.center(i)).cos()).abs())
                .fold(0.0f64, f64::max)
        };
        assert!(err_at(64) / err_at(128) > 3.9);
    }

    #[test]
    fn chem_moments_match_direct_sum() {
        let (grid, _, _) = grid_1d(2, 4);
        let f = pseudo_random_f(&grid, 31);
        let cm = chem_moments(f.view(), &grid);
        let mut free = 0.0;
        let mut y1 = 0.0;
        for iv in 0..grid.vel.len() {
            for iy in 0..grid.act.len() {
                let c = &grid.act.cells[iy];
                let w = grid.vel.weights[iv] * c.area;
                free += w * (1.0 - c.centroid[0] - c.centroid[1]) * f[[0, iv, iy]];
                y1 += w * c.centroid[0] * f[[0, iv, iy]];
            }
        }
        assert!((cm.free[0] - free).abs() < 1e-13);
        assert!((cm.y1[0] - y1).abs() < 1e-13);
        // n = 1 geometry: degradation factor vanishes identically.
        assert!(cm.degrade.iter().all(|&d| d.abs() < 1e-14));
    }
}
