//! Bundled verification suite: runs the discrete-identity checks of every
//! module on the configured grids and reports measured violations.

use ndarray::{Array2, Array3};

use crate::config::RunConfig;
use crate::error::Result;
use crate::grid::{PhaseGrid, VelocityQuadrature};
use crate::kernels::{validate_kernels, KernelSet};
use crate::kinetic::{
    apply_activity_transfer, apply_haptotaxis, apply_chemotaxis, apply_turning,
    build_activity_flux, Stepper,
};
use crate::moments::{
    closure_w, compute_moments, equilibrium_field, macro_sources, pressure_coefficient,
    reaction_matrix,
};
use crate::params::ModelParams;

/// One named check with its measured value and threshold.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn below(name: &str, measured: f64, threshold: f64) -> Self {
        Check { name: name.into(), measured, threshold, pass: measured <= threshold }
    }
}

/// Full verification report.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Deterministic text rendering (one line per check).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{}\t{}\tmeasured={}\tthreshold={}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                crate::io::format_value(c.measured),
                crate::io::format_value(c.threshold),
            ));
        }
        out.push_str(&format!(
            "result: {}\n",
            if self.all_pass() { "all checks passed" } else { "FAILURES present" }
        ));
        out
    }
}

/// Small deterministic generator for the randomized checks.
struct Lcg(u64);

impl Lcg {
    fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 40) as f64 / (1u64 << 24) as f64
    }

    fn in_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

fn random_field(grid: &PhaseGrid, rng: &mut Lcg) -> Array3<f64> {
    let mut f = Array3::zeros((grid.space.total_cells(), grid.vel.len(), grid.act.len()));
    for v in f.iter_mut() {
        *v = rng.next_f64() + 0.05;
    }
    f
}

/// Run the full suite for a configuration.
pub fn run_verification(cfg: &RunConfig) -> Result<VerifyReport> {
    let grid = cfg.build_grid()?;
    let params = cfg.model_params()?;
    let kernels = cfg.build_kernels(&grid)?;
    let mut rng = Lcg(cfg.run.seed.wrapping_mul(2654435761).wrapping_add(1));
    let mut checks = Vec::new();

    quadrature_checks(&grid, &mut checks);
    kernel_checks(&kernels, &grid, &mut checks);
    operator_checks(&grid, &kernels, &mut rng, &mut checks);
    closure_checks(&params, &mut rng, &mut checks);
    equilibrium_checks(&grid, &kernels, &params, &mut rng, &mut checks);
    source_identity_checks(&grid, &kernels, &params, &mut rng, &mut checks);
    activity_moment_checks(&grid, &params, &mut rng, &mut checks);
    conservation_checks(cfg, &mut checks)?;

    Ok(VerifyReport { checks })
}

fn quadrature_checks(grid: &PhaseGrid, checks: &mut Vec<Check>) {
    let n = grid.space.dim;
    let s = grid.vel.s;
    checks.push(Check::below(
        "velocity_weight_sum",
        (grid.vel.measure - VelocityQuadrature::exact_measure(n, s)).abs(),
        1e-12,
    ));
    let odd = if n == 1 {
        grid.vel.moment(&[1]).abs()
    } else {
        grid.vel.moment(&[1, 0]).abs().max(grid.vel.moment(&[0, 1]).abs())
    };
    checks.push(Check::below("velocity_odd_moment_exact_zero", odd, 0.0));
    let exact2 = VelocityQuadrature::exact_second_moment(n, s);
    let m2 = if n == 1 { grid.vel.moment(&[2]) } else { grid.vel.moment(&[2, 0]) };
    checks.push(Check::below(
        "velocity_second_moment_rel",
        (m2 - exact2).abs() / exact2,
        1e-3,
    ));
    if n == 2 {
        checks.push(Check::below("velocity_cross_moment", grid.vel.moment(&[1, 1]).abs(), 1e-10));
    }
    checks.push(Check::below("activity_area_sum", (grid.act.measure - 0.5).abs(), 1e-12));
    let mut cx = 0.0;
    let mut cy = 0.0;
    for c in &grid.act.cells {
        cx += c.area * c.centroid[0];
        cy += c.area * c.centroid[1];
    }
    let centroid_err = ((cx / grid.act.measure - 1.0 / 3.0).abs())
        .max((cy / grid.act.measure - 1.0 / 3.0).abs());
    checks.push(Check::below("activity_centroid", centroid_err, 1e-12));
    checks.push(Check::below(
        "theta_weight_sum",
        (grid.theta.measure - crate::grid::sphere_measure(n)).abs(),
        1e-12,
    ));
}

fn kernel_checks(kernels: &KernelSet, grid: &PhaseGrid, checks: &mut Vec<Check>) {
    let report = validate_kernels(kernels, &grid.vel, &grid.theta);
    for c in report.checks {
        if c.informational {
            continue;
        }
        checks.push(Check::below(&format!("kernel_{}", c.name), c.violation, c.threshold));
    }
}

fn operator_checks(grid: &PhaseGrid, kernels: &KernelSet, rng: &mut Lcg, checks: &mut Vec<Check>) {
    let nx = grid.space.total_cells();
    let mut worst_l1 = 0.0f64;
    let mut worst_mom = 0.0f64;
    let mut worst_h = 0.0f64;
    let mut worst_c = 0.0f64;
    let mut out = Array3::zeros((nx, grid.vel.len(), grid.act.len()));
    for _ in 0..5 {
        let f = random_field(grid, rng);
        apply_turning(f.view(), grid, kernels, &mut out);
        for ix in 0..nx {
            for iy in 0..grid.act.len() {
                let mut m0 = 0.0;
                let mut m1 = 0.0;
                for iv in 0..grid.vel.len() {
                    let w = grid.vel.weights[iv];
                    m0 += w * out[[ix, iv, iy]];
                    m1 += w * grid.vel.nodes[iv][0] * out[[ix, iv, iy]];
                }
                worst_l1 = worst_l1.max(m0.abs());
                worst_mom = worst_mom.max(m1.abs());
            }
        }
        let mut q = Array2::zeros((nx, grid.theta.len()));
        for v in q.iter_mut() {
            *v = rng.next_f64();
        }
        apply_haptotaxis(f.view(), q.view(), grid, kernels, &mut out);
        for ix in 0..nx {
            for iy in 0..grid.act.len() {
                let mut m0 = 0.0;
                for iv in 0..grid.vel.len() {
                    m0 += grid.vel.weights[iv] * out[[ix, iv, iy]];
                }
                worst_h = worst_h.max(m0.abs());
            }
        }
        let grad: Vec<[f64; 2]> =
            (0..nx).map(|_| [rng.in_range(-1.0, 1.0), 0.0]).collect();
        apply_chemotaxis(f.view(), &grad, grid, kernels, &mut out);
        for ix in 0..nx {
            for iy in 0..grid.act.len() {
                let mut m0 = 0.0;
                for iv in 0..grid.vel.len() {
                    m0 += grid.vel.weights[iv] * out[[ix, iv, iy]];
                }
                worst_c = worst_c.max(m0.abs());
            }
        }
    }
    checks.push(Check::below("turning_v_integral", worst_l1, 1e-12));
    checks.push(Check::below("turning_momentum_integral", worst_mom, 1e-12));
    checks.push(Check::below("haptotaxis_v_integral", worst_h, 1e-12));
    checks.push(Check::below("chemotaxis_v_integral", worst_c, 1e-12));
}

fn closure_checks(params: &ModelParams, rng: &mut Lcg, checks: &mut Vec<Check>) {
    let mut worst_residual = 0.0f64;
    let mut worst_g = 0.0f64;
    for _ in 0..1000 {
        let mut p = params.clone();
        p.k1 = rng.in_range(0.05, 4.0);
        p.km1 = rng.in_range(0.05, 4.0);
        p.k2 = rng.in_range(0.05, 4.0);
        p.km2 = rng.in_range(0.05, 4.0);
        let qbar = rng.in_range(0.0, 10.0);
        let l = rng.in_range(0.0, 10.0);
        let w = closure_w(qbar, l, &p).unwrap();
        let sys = reaction_matrix(qbar, l, &p);
        let r = sys.residual(w);
        let scale = sys.a[0][0].abs() + sys.a[1][1].abs() + 1.0;
        worst_residual = worst_residual.max(r[0].abs().max(r[1].abs()) / scale);
        let g = crate::kernels::eval_g(w, qbar, l, &p);
        let gscale = (p.k1 * qbar + p.km1 + p.k2 * l + p.km2).max(1.0);
        worst_g = worst_g.max(g[0].abs().max(g[1].abs()) / gscale);
    }
    checks.push(Check::below("closure_linear_residual", worst_residual, 1e-14));
    checks.push(Check::below("closure_mass_action_consistency", worst_g, 1e-14));
}

fn equilibrium_checks(
    grid: &PhaseGrid,
    kernels: &KernelSet,
    params: &ModelParams,
    rng: &mut Lcg,
    checks: &mut Vec<Check>,
) {
    let nx = grid.space.total_cells();
    let umax = crate::moments::max_equilibrium_speed(kernels) * 0.9;
    let mut worst_lm = 0.0f64;
    let mut worst_rho = 0.0f64;
    let mut worst_mom = 0.0f64;
    let mut worst_press = 0.0f64;
    let mut out = Array3::zeros((nx, grid.vel.len(), grid.act.len()));
    for _ in 0..20 {
        let rho: Vec<f64> = (0..nx).map(|_| rng.in_range(0.1, 3.0)).collect();
        let u: Vec<[f64; 2]> = (0..nx)
            .map(|_| {
                if grid.space.dim == 1 {
                    [rng.in_range(-umax, umax), 0.0]
                } else {
                    let ang = rng.in_range(0.0, std::f64::consts::TAU);
                    let mag = rng.in_range(0.0, umax);
                    [mag * ang.cos(), mag * ang.sin()]
                }
            })
            .collect();
        let f = equilibrium_field(&rho, &u, grid, kernels).unwrap();
        apply_turning(f.view(), grid, kernels, &mut out);
        worst_lm = worst_lm.max(out.iter().fold(0.0f64, |m, &x| m.max(x.abs())));
        let m = compute_moments(f.view(), grid, params, None);
        for ix in 0..nx {
            worst_rho = worst_rho.max((m.rho[ix] - rho[ix]).abs());
            worst_mom = worst_mom
                .max((m.momentum[ix][0] - rho[ix] * u[ix][0]).abs())
                .max((m.momentum[ix][1] - rho[ix] * u[ix][1]).abs());
            let closed = crate::moments::pressure_equilibrium(
                rho[ix],
                u[ix],
                grid.space.dim,
                grid.vel.s,
            );
            for r in 0..grid.space.dim {
                for c in 0..grid.space.dim {
                    let denom = pressure_coefficient(grid.space.dim, grid.vel.s) * rho[ix];
                    worst_press =
                        worst_press.max((m.pressure[ix][r][c] - closed[r][c]).abs() / denom);
                }
            }
        }
    }
    checks.push(Check::below("equilibrium_annihilated_by_turning", worst_lm, 1e-12));
    checks.push(Check::below("equilibrium_density_recovery", worst_rho, 1e-12));
    checks.push(Check::below("equilibrium_momentum_recovery", worst_mom, 1e-12));
    checks.push(Check::below("equilibrium_pressure_vs_closed_form", worst_press, 1e-3));
}

fn source_identity_checks(
    grid: &PhaseGrid,
    kernels: &KernelSet,
    _params: &ModelParams,
    rng: &mut Lcg,
    checks: &mut Vec<Check>,
) {
    let nx = grid.space.total_cells();
    let nt = grid.theta.len();
    let umax = crate::moments::max_equilibrium_speed(kernels) * 0.9;
    let mut worst = 0.0f64;
    let mut out = Array3::zeros((nx, grid.vel.len(), grid.act.len()));
    for _ in 0..100 {
        let rho: Vec<f64> = (0..nx).map(|_| rng.in_range(0.2, 2.0)).collect();
        let u: Vec<[f64; 2]> = (0..nx).map(|_| [rng.in_range(-umax, umax), 0.0]).collect();
        let mut q = Array2::zeros((nx, nt));
        for v in q.iter_mut() {
            *v = rng.in_range(0.0, 1.5);
        }
        let grad: Vec<[f64; 2]> = (0..nx)
            .map(|_| {
                if grid.space.dim == 1 {
                    [rng.in_range(-2.0, 2.0), 0.0]
                } else {
                    [rng.in_range(-2.0, 2.0), rng.in_range(-2.0, 2.0)]
                }
            })
            .collect();
        let f = equilibrium_field(&rho, &u, grid, kernels).unwrap();

        // Microscopic side: velocity moments of H(M, Q) and C(M, L).
        apply_haptotaxis(f.view(), q.view(), grid, kernels, &mut out);
        let mut micro_h = vec![[0.0f64; 2]; nx];
        for ix in 0..nx {
            for iv in 0..grid.vel.len() {
                let w = grid.vel.weights[iv];
                let v = grid.vel.nodes[iv];
                for iy in 0..grid.act.len() {
                    let val = w * grid.act.cells[iy].area * out[[ix, iv, iy]];
                    micro_h[ix][0] += v[0] * val;
                    micro_h[ix][1] += v[1] * val;
                }
            }
        }
        apply_chemotaxis(f.view(), &grad, grid, kernels, &mut out);
        let mut micro_c = vec![[0.0f64; 2]; nx];
        for ix in 0..nx {
            for iv in 0..grid.vel.len() {
                let w = grid.vel.weights[iv];
                let v = grid.vel.nodes[iv];
                for iy in 0..grid.act.len() {
                    let val = w * grid.act.cells[iy].area * out[[ix, iv, iy]];
                    micro_c[ix][0] += v[0] * val;
                    micro_c[ix][1] += v[1] * val;
                }
            }
        }

        for ix in 0..nx {
            let q_row: Vec<f64> = (0..nt).map(|it| q[[ix, it]]).collect();
            let (h, c) = macro_sources(rho[ix], u[ix], &q_row, grad[ix], kernels, grid);
            worst = worst
                .max((h[0] - micro_h[ix][0]).abs())
                .max((h[1] - micro_h[ix][1]).abs())
                .max((c[0] - micro_c[ix][0]).abs())
                .max((c[1] - micro_c[ix][1]).abs());
        }
    }
    checks.push(Check::below("micro_macro_source_identity", worst, 1e-10));
}

fn activity_moment_checks(
    grid: &PhaseGrid,
    params: &ModelParams,
    rng: &mut Lcg,
    checks: &mut Vec<Check>,
) {
    let nx = grid.space.total_cells();
    let qbar: Vec<f64> = (0..nx).map(|_| rng.in_range(1.2, 2.5)).collect();
    let l: Vec<f64> = (0..nx).map(|_| rng.in_range(1.2, 2.5)).collect();
    let flux = match build_activity_flux(&qbar, &l, grid, params) {
        Ok(f) => f,
        Err(e) => {
            checks.push(Check {
                name: format!("activity_flux_build ({e})"),
                measured: 1.0,
                threshold: 0.0,
                pass: false,
            });
            return;
        }
    };
    checks.push(Check::below("activity_cone_clip", flux.max_clip, 0.0));
    let f = random_field(grid, rng);
    let mut out = Array3::zeros(f.raw_dim());
    apply_activity_transfer(&flux, f.view(), grid, &mut out);
    let mut worst_mass = 0.0f64;
    let mut worst_moment = 0.0f64;
    for ix in 0..nx {
        for iv in 0..grid.vel.len() {
            let mut mass = 0.0;
            let mut m1 = [0.0f64; 2];
            let mut target = [0.0f64; 2];
            for iy in 0..grid.act.len() {
                let cell = &grid.act.cells[iy];
                mass += out[[ix, iv, iy]] * cell.area;
                m1[0] += cell.centroid[0] * out[[ix, iv, iy]] * cell.area;
                m1[1] += cell.centroid[1] * out[[ix, iv, iy]] * cell.area;
                let g = crate::kernels::eval_g(cell.centroid, qbar[ix], l[ix], params);
                target[0] += g[0] * f[[ix, iv, iy]] * cell.area;
                target[1] += g[1] * f[[ix, iv, iy]] * cell.area;
            }
            worst_mass = worst_mass.max(mass.abs());
            worst_moment =
                worst_moment.max((m1[0] - target[0]).abs()).max((m1[1] - target[1]).abs());
        }
    }
    checks.push(Check::below("activity_mass_conservation", worst_mass, 1e-12));
    checks.push(Check::below("activity_first_moment_exactness", worst_moment, 1e-12));
}

fn conservation_checks(cfg: &RunConfig, checks: &mut Vec<Check>) -> Result<()> {
    // Short coupled run at reduced resolution: mass always, compounds at the
    // conservative setting (κ = r_L = D_L = 0, ε = 1).
    let mut cc = cfg.clone();
    cc.grid.x_cells = 16;
    cc.grid.v_radial = 4;
    cc.grid.y_subdivision = 4;
    cc.params.kappa = 0.0;
    cc.params.r_l = 0.0;
    cc.params.d_l = 0.0;
    cc.scaling.eps = 1.0;
    cc.run.qbar0 = 2.0;
    cc.run.qbar_amp = 0.0;
    cc.run.l0 = 2.0;
    let grid = cc.build_grid()?;
    let params = cc.model_params()?;
    let kernels = cc.build_kernels(&grid)?;
    let mut state = cc.initial_state(&grid, &kernels)?;
    let mut stepper = Stepper::new(grid.clone(), kernels, params);
    let mass0 = state.total_mass(&grid);
    let (c1_0, c2_0) = state.compound_totals(&grid);
    let dt = stepper.auto_dt(&state)?;
    for _ in 0..100 {
        stepper.step(&mut state, dt, None)?;
    }
    let mass1 = state.total_mass(&grid);
    let (c1, c2) = state.compound_totals(&grid);
    checks.push(Check::below("mass_conservation_100_steps", ((mass1 - mass0) / mass0).abs(), 1e-10));
    checks.push(Check::below("compound_fiber_conservation", ((c1 - c1_0) / c1_0).abs(), 1e-8));
    checks.push(Check::below("compound_chemo_conservation", ((c2 - c2_0) / c2_0).abs(), 1e-8));
    let fmin = state.f.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.push(Check::below("positivity_min_f", (-fmin).max(0.0), 1e-12));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_configuration_passes() {
        let mut cfg = RunConfig::default();
        // Keep the verify run small.
        cfg.grid.x_cells = 8;
        cfg.grid.v_radial = 6;
        cfg.grid.y_subdivision = 4;
        let report = run_verification(&cfg).unwrap();
        for c in &report.checks {
            assert!(c.pass, "check {} failed: measured {}", c.name, c.measured);
        }
        assert!(report.all_pass());
        // Deterministic rendering.
        let again = run_verification(&cfg).unwrap();
        assert_eq!(report.to_text(), again.to_text());
    }
}
