//! Phase-space discretizations: velocity annulus, activity triangle, fiber
//! directions, and the periodic space grid.
//!
//! The velocity set is the annulus V = [s, 1] × S^{n-1} with the Lebesgue
//! measure (radial Jacobian r^{n-1}), so the moment identities
//!
//!   |V| = |S^{n-1}| (1 - s^n) / n,
//!   ∫_V v dv = 0,
//!   ∫_V v_i v_k dv = δ_ik |S^{n-1}| (1 - s^{n+2}) / (n (n+2)),
//!
//! hold. Nodes are placed so that v → -v maps the node set onto itself with
//! equal weights and mirror nodes are adjacent in storage; summing in storage
//! order then cancels odd moments exactly, not just to rounding.

use crate::error::{CoreError, Result};

/// Velocity quadrature on the scaled annulus V = [s, 1] × S^{n-1}.
#[derive(Debug, Clone)]
pub struct VelocityQuadrature {
    /// Spatial dimension n (1 or 2).
    pub dim: usize,
    /// Speed ratio s = s1/s2 ∈ [0, 1).
    pub s: f64,
    /// Quadrature nodes; for n = 1 only the first component is used.
    pub nodes: Vec<[f64; 2]>,
    /// Positive weights summing to the measure of V.
    pub weights: Vec<f64>,
    /// Discrete measure Σ w (cached; equals |V| up to quadrature error).
    pub measure: f64,
    /// Discrete isotropic second moment: (1/n) Σ w |v|².
    pub second_moment: f64,
}

impl VelocityQuadrature {
    /// Exact measure |V| = |S^{n-1}| (1 - s^n) / n.
    pub fn exact_measure(n: usize, s: f64) -> f64 {
        sphere_measure(n) * (1.0 - s.powi(n as i32)) / n as f64
    }

    /// Exact diagonal second moment |S^{n-1}| (1 - s^{n+2}) / (n (n+2)).
    pub fn exact_second_moment(n: usize, s: f64) -> f64 {
        sphere_measure(n) * (1.0 - s.powi(n as i32 + 2)) / (n as f64 * (n as f64 + 2.0))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Discrete moment ∫_V v1^p1 v2^p2 dv, summed in storage order so odd
    /// moments cancel pairwise to exactly zero.
    pub fn moment(&self, powers: &[u32]) -> f64 {
        let mut total = 0.0;
        for (v, w) in self.nodes.iter().zip(&self.weights) {
            let mut term = *w;
            for (axis, &p) in powers.iter().enumerate() {
                term *= v[axis].powi(p as i32);
            }
            total += term;
        }
        total
    }
}

/// Measure of the unit sphere S^{n-1}: 2 points for n = 1, circle 2π for n = 2.
pub fn sphere_measure(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        _ => panic!("unsupported dimension {n}"),
    }
}

/// Build the velocity quadrature.
///
/// Midpoint rule in radius, uniform angles for n = 2; mirror nodes ±v are
/// stored adjacently with the mirror obtained by literal sign flips.
pub fn build_velocity_quadrature(
    n: usize,
    s: f64,
    radial_count: usize,
    angular_count: usize,
) -> Result<VelocityQuadrature> {
    if n != 1 && n != 2 {
        return Err(CoreError::Config(format!("dimension n must be 1 or 2, got {n}")));
    }
    if !(0.0..1.0).contains(&s) {
        return Err(CoreError::Config(format!("speed ratio s must satisfy 0 <= s < 1, got {s}")));
    }
    if radial_count < 2 {
        return Err(CoreError::Config(format!("radial_count must be >= 2, got {radial_count}")));
    }
    if angular_count < 2 || angular_count % 2 != 0 {
        return Err(CoreError::Config(format!(
            "angular_count must be even and >= 2, got {angular_count}"
        )));
    }
    if n == 1 && angular_count != 2 {
        return Err(CoreError::Config(format!(
            "for n = 1 the direction set S^0 has exactly 2 points; angular_count must be 2, got {angular_count}"
        )));
    }

    let dr = (1.0 - s) / radial_count as f64;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();

    match n {
        1 => {
            for j in 0..radial_count {
                let r = s + (j as f64 + 0.5) * dr;
                nodes.push([r, 0.0]);
                nodes.push([-r, 0.0]);
                weights.push(dr);
                weights.push(dr);
            }
        }
        2 => {
            let half = angular_count / 2;
            let dphi = 2.0 * std::f64::consts::PI / angular_count as f64;
            for j in 0..radial_count {
                let r = s + (j as f64 + 0.5) * dr;
                let w = r * dr * dphi;
                for k in 0..half {
                    let phi = (k as f64 + 0.5) * dphi;
                    let (sin, cos) = phi.sin_cos();
                    let vx = r * cos;
                    let vy = r * sin;
                    nodes.push([vx, vy]);
                    nodes.push([-vx, -vy]);
                    weights.push(w);
                    weights.push(w);
                }
            }
        }
        _ => unreachable!(),
    }

    let measure: f64 = weights.iter().sum();
    let mut second = 0.0;
    for (v, w) in nodes.iter().zip(&weights) {
        second += w * (v[0] * v[0] + v[1] * v[1]);
    }
    let second_moment = second / n as f64;

    Ok(VelocityQuadrature { dim: n, s, nodes, weights, measure, second_moment })
}

/// Direction grid on S^{n-1} for the fiber field.
#[derive(Debug, Clone)]
pub struct ThetaGrid {
    pub dim: usize,
    /// Unit directions; mirror pairs ±θ stored adjacently.
    pub dirs: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    /// Discrete measure Σ w (equals |S^{n-1}| exactly for these rules).
    pub measure: f64,
}

impl ThetaGrid {
    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }
}

/// Build the direction grid: {−1, +1} for n = 1, uniform angles for n = 2.
pub fn build_theta_grid(n: usize, count: usize) -> Result<ThetaGrid> {
    match n {
        1 => Ok(ThetaGrid {
            dim: 1,
            dirs: vec![[1.0, 0.0], [-1.0, 0.0]],
            weights: vec![1.0, 1.0],
            measure: 2.0,
        }),
        2 => {
            if count < 2 || count % 2 != 0 {
                return Err(CoreError::Config(format!(
                    "theta count must be even and >= 2 for n = 2, got {count}"
                )));
            }
            let half = count / 2;
            let dphi = 2.0 * std::f64::consts::PI / count as f64;
            let mut dirs = Vec::with_capacity(count);
            let mut weights = Vec::with_capacity(count);
            for k in 0..half {
                let phi = (k as f64 + 0.5) * dphi;
                let (sin, cos) = phi.sin_cos();
                dirs.push([cos, sin]);
                dirs.push([-cos, -sin]);
                weights.push(dphi);
                weights.push(dphi);
            }
            let measure = weights.iter().sum();
            Ok(ThetaGrid { dim: 2, dirs, weights, measure })
        }
        _ => Err(CoreError::Config(format!("dimension n must be 1 or 2, got {n}"))),
    }
}

/// One triangular cell of the activity grid.
#[derive(Debug, Clone)]
pub struct ActivityCell {
    /// Centroid (y1, y2), strictly inside Y.
    pub centroid: [f64; 2],
    pub area: f64,
}

/// Transfer target for the activity drift: a neighbor cell together with the
/// centroid displacement toward it.
#[derive(Debug, Clone)]
pub struct ActivityTarget {
    pub cell: usize,
    pub displacement: [f64; 2],
}

/// Boundary face of the triangulation with outward normal, used to check that
/// the mass-action drift points inward.
#[derive(Debug, Clone)]
pub struct BoundaryFace {
    pub midpoint: [f64; 2],
    pub outward_normal: [f64; 2],
    pub length: f64,
}

/// Structured triangulation of the activity triangle Y = {y1, y2 > 0, y1 + y2 < 1}.
///
/// Subdivision m yields m² congruent cells of area h²/2 with h = 1/m. Cells
/// store drift targets: edge neighbors for interior cells, extended with
/// vertex neighbors along the boundary so that every admissible inward drift
/// direction lies in the positive hull of the available displacements.
#[derive(Debug, Clone)]
pub struct ActivityGrid {
    pub subdivision: usize,
    pub h: f64,
    pub cells: Vec<ActivityCell>,
    pub targets: Vec<Vec<ActivityTarget>>,
    pub boundary_faces: Vec<BoundaryFace>,
    /// Discrete measure Σ area (equals |Y| = 1/2 up to rounding).
    pub measure: f64,
}

impl ActivityGrid {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Index an "up" triangle (square (i,j), lower-left half) in the cell list.
fn up_index(m: usize, i: usize, j: usize) -> usize {
    // Row j contains (m - j) up cells followed by (m - j - 1) down cells.
    let mut base = 0;
    for row in 0..j {
        base += 2 * (m - row) - 1;
    }
    base + i
}

fn down_index(m: usize, i: usize, j: usize) -> usize {
    up_index(m, 0, j) + (m - j) + i
}

/// Build the uniform triangulation of Y.
pub fn build_activity_grid(subdivision: usize) -> Result<ActivityGrid> {
    if subdivision < 1 {
        return Err(CoreError::Config(format!(
            "activity subdivision must be >= 1, got {subdivision}"
        )));
    }
    let m = subdivision;
    let h = 1.0 / m as f64;
    let area = 0.5 * h * h;

    let mut cells = Vec::with_capacity(m * m);
    for j in 0..m {
        for i in 0..(m - j) {
            // Up triangle: vertices (ih, jh), ((i+1)h, jh), (ih, (j+1)h).
            cells.push(ActivityCell {
                centroid: [(i as f64 + 1.0 / 3.0) * h, (j as f64 + 1.0 / 3.0) * h],
                area,
            });
        }
        for i in 0..(m - j).saturating_sub(1) {
            // Down triangle: vertices ((i+1)h, jh), ((i+1)h, (j+1)h), (ih, (j+1)h).
            cells.push(ActivityCell {
                centroid: [(i as f64 + 2.0 / 3.0) * h, (j as f64 + 2.0 / 3.0) * h],
                area,
            });
        }
    }

    // Edge-neighbor targets. Up(i,j): hypotenuse <-> Down(i,j), bottom <->
    // Down(i,j-1), left <-> Down(i-1,j). Boundary cells additionally get
    // vertex neighbors so the drift cone is as wide as the geometry allows.
    let n_cells = cells.len();
    let mut targets: Vec<Vec<ActivityTarget>> = vec![Vec::new(); n_cells];
    let push = |targets: &mut Vec<Vec<ActivityTarget>>, from: usize, to: usize| {
        let d = [
            cells[to].centroid[0] - cells[from].centroid[0],
            cells[to].centroid[1] - cells[from].centroid[1],
        ];
        targets[from].push(ActivityTarget { cell: to, displacement: d });
    };

    for j in 0..m {
        for i in 0..(m - j) {
            let c = up_index(m, i, j);
            let mut missing_edge = false;
            if i + j + 1 < m {
                push(&mut targets, c, down_index(m, i, j));
            } else {
                missing_edge = true; // hypotenuse of Y
            }
            if j > 0 {
                push(&mut targets, c, down_index(m, i, j - 1));
            } else {
                missing_edge = true; // wall y2 = 0
            }
            if i > 0 {
                push(&mut targets, c, down_index(m, i - 1, j));
            } else {
                missing_edge = true; // wall y1 = 0
            }
            if missing_edge {
                // Vertex neighbors among up cells: axial and diagonal shifts.
                if i + 1 < m - j {
                    push(&mut targets, c, up_index(m, i + 1, j));
                }
                if i > 0 {
                    push(&mut targets, c, up_index(m, i - 1, j));
                }
                if j + 1 < m && i < m - (j + 1) {
                    push(&mut targets, c, up_index(m, i, j + 1));
                }
                if j > 0 {
                    push(&mut targets, c, up_index(m, i, j - 1));
                }
                if j + 1 < m && i > 0 {
                    push(&mut targets, c, up_index(m, i - 1, j + 1));
                }
                if j > 0 && i + 1 < m - (j - 1) {
                    push(&mut targets, c, up_index(m, i + 1, j - 1));
                }
            }
        }
        for i in 0..(m - j).saturating_sub(1) {
            let c = down_index(m, i, j);
            // Down cells always have all three edge neighbors.
            push(&mut targets, c, up_index(m, i, j));
            push(&mut targets, c, up_index(m, i + 1, j));
            push(&mut targets, c, up_index(m, i, j + 1));
        }
    }

    // Boundary faces: legs of up triangles on the two walls, hypotenuses of
    // up triangles on the diagonal row.
    let mut boundary_faces = Vec::new();
    for i in 0..m {
        boundary_faces.push(BoundaryFace {
            midpoint: [(i as f64 + 0.5) * h, 0.0],
            outward_normal: [0.0, -1.0],
            length: h,
        });
        boundary_faces.push(BoundaryFace {
            midpoint: [0.0, (i as f64 + 0.5) * h],
            outward_normal: [-1.0, 0.0],
            length: h,
        });
        let j = m - 1 - i;
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        boundary_faces.push(BoundaryFace {
            midpoint: [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h],
            outward_normal: [inv_sqrt2, inv_sqrt2],
            length: h * std::f64::consts::SQRT_2,
        });
    }

    let measure = cells.iter().map(|c| c.area).sum();
    Ok(ActivityGrid { subdivision: m, h, cells, targets, boundary_faces, measure })
}

/// Periodic space grid (uniform cells, box side `length` per axis).
#[derive(Debug, Clone)]
pub struct SpaceGrid {
    pub dim: usize,
    pub cells_per_axis: usize,
    pub length: f64,
    pub dx: f64,
}

impl SpaceGrid {
    pub fn new(dim: usize, cells_per_axis: usize, length: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(CoreError::Config(format!("dimension n must be 1 or 2, got {dim}")));
        }
        if cells_per_axis < 2 {
            return Err(CoreError::Config(format!(
                "need at least 2 cells per axis, got {cells_per_axis}"
            )));
        }
        if length <= 0.0 {
            return Err(CoreError::Config(format!("box length must be positive, got {length}")));
        }
        Ok(SpaceGrid { dim, cells_per_axis, length, dx: length / cells_per_axis as f64 })
    }

    /// Total number of cells (flattened over axes).
    pub fn total_cells(&self) -> usize {
        match self.dim {
            1 => self.cells_per_axis,
            2 => self.cells_per_axis * self.cells_per_axis,
            _ => unreachable!(),
        }
    }

    /// Cell volume Δx^n.
    pub fn cell_volume(&self) -> f64 {
        self.dx.powi(self.dim as i32)
    }

    /// Cell-center coordinate along one axis.
    pub fn center(&self, idx: usize) -> f64 {
        (idx as f64 + 0.5) * self.dx
    }

    /// Decompose a flattened index into (ix, iy); iy = 0 for n = 1.
    pub fn unflatten(&self, idx: usize) -> (usize, usize) {
        match self.dim {
            1 => (idx, 0),
            2 => (idx % self.cells_per_axis, idx / self.cells_per_axis),
            _ => unreachable!(),
        }
    }

    pub fn flatten(&self, ix: usize, iy: usize) -> usize {
        match self.dim {
            1 => ix,
            2 => iy * self.cells_per_axis + ix,
            _ => unreachable!(),
        }
    }
}

/// All discretizations bundled; immutable after construction and shared
/// read-only across workers.
#[derive(Debug, Clone)]
pub struct PhaseGrid {
    pub space: SpaceGrid,
    pub vel: VelocityQuadrature,
    pub theta: ThetaGrid,
    pub act: ActivityGrid,
    /// Degradation geometry factor 1 - |θ·v/|v|| tabulated per (θ, v).
    pub degradation: Vec<f64>,
}

impl PhaseGrid {
    pub fn new(
        space: SpaceGrid,
        vel: VelocityQuadrature,
        theta: ThetaGrid,
        act: ActivityGrid,
    ) -> Result<Self> {
        if space.dim != vel.dim || vel.dim != theta.dim {
            return Err(CoreError::Config(format!(
                "dimension mismatch: space {}, velocity {}, theta {}",
                space.dim, vel.dim, theta.dim
            )));
        }
        let mut degradation = Vec::with_capacity(theta.len() * vel.len());
        for th in &theta.dirs {
            for v in &vel.nodes {
                let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
                let cosang = (th[0] * v[0] + th[1] * v[1]) / speed;
                degradation.push(1.0 - cosang.abs());
            }
        }
        Ok(PhaseGrid { space, vel, theta, act, degradation })
    }

    /// 1 - |θ·v/|v|| for direction node `it` and velocity node `iv`.
    #[inline]
    pub fn degradation_factor(&self, it: usize, iv: usize) -> f64 {
        self.degradation[it * self.vel.len() + iv]
    }

    /// Whether operator passes over this grid are worth the thread pool.
    pub fn parallel_ops(&self) -> bool {
        self.space.total_cells() * self.vel.len() * self.act.len()
            >= crate::par_util::PARALLEL_THRESHOLD
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn velocity_measure_n1() {
        // |V| = |S^0| (1 - s) = 2 * 0.5 = 1 for s = 0.5.
        let q = build_velocity_quadrature(1, 0.5, 8, 2).unwrap();
        assert!((q.measure - 1.0).abs() < 1e-12);
        assert!((q.measure - VelocityQuadrature::exact_measure(1, 0.5)).abs() < 1e-12);
    }

    #[test]
    fn velocity_odd_moments_vanish_exactly() {
        let q = build_velocity_quadrature(1, 0.5, 8, 2).unwrap();
        assert_eq!(q.moment(&[1]), 0.0);
        let q2 = build_velocity_quadrature(2, 0.3, 6, 12).unwrap();
        assert_eq!(q2.moment(&[1, 0]), 0.0);
        assert_eq!(q2.moment(&[0, 1]), 0.0);
        assert_eq!(q2.moment(&[2, 1]), 0.0);
    }

    #[test]
    fn velocity_second_moment_n1() {
        // 2 ∫_{0.5}^{1} v² dv = 2 (1 - 0.125) / 3 = 0.583333...
        let q = build_velocity_quadrature(1, 0.5, 8, 2).unwrap();
        let exact = 2.0 * (1.0 - 0.125) / 3.0;
        assert!((q.moment(&[2]) - exact).abs() / exact < 1e-3);
        assert!((VelocityQuadrature::exact_second_moment(1, 0.5) - exact).abs() < 1e-15);
    }

    #[test]
    fn velocity_second_moment_n2() {
        // ∫ v1² dv = |S^1| (1 - s^4) / (2·4) = π (1 - 0.0625) / 4 = 0.736310...
        let exact = std::f64::consts::PI * (1.0 - 0.5f64.powi(4)) / 4.0;
        assert!((exact - 0.7363107781851077).abs() < 1e-12);
        // Radial midpoint error (h²/24) ∫ (r³)'' dr ≈ 4.5e-6 at 128 cells.
        let q = build_velocity_quadrature(2, 0.5, 128, 64).unwrap();
        assert!((q.moment(&[2, 0]) - exact).abs() < 2e-5);
        assert!((q.moment(&[0, 2]) - exact).abs() < 2e-5);
        // Off-diagonal entries vanish to rounding.
        assert!(q.moment(&[1, 1]).abs() < 1e-14);
    }

    #[test]
    fn velocity_refinement_fourth_order_ratio() {
        // Midpoint on r³ has zero fourth derivative, so the error ratio under
        // halving is exactly 4.
        let exact = VelocityQuadrature::exact_second_moment(2, 0.5);
        let coarse = build_velocity_quadrature(2, 0.5, 6, 32).unwrap();
        let fine = build_velocity_quadrature(2, 0.5, 12, 32).unwrap();
        let e0 = (coarse.moment(&[2, 0]) - exact).abs();
        let e1 = (fine.moment(&[2, 0]) - exact).abs();
        assert!(e0 / e1 >= 3.999, "ratio {}", e0 / e1);
    }

    #[test]
    fn velocity_rejects_bad_input() {
        assert!(build_velocity_quadrature(3, 0.5, 8, 2).is_err());
        assert!(build_velocity_quadrature(1, 1.0, 8, 2).is_err());
        assert!(build_velocity_quadrature(1, -0.1, 8, 2).is_err());
        assert!(build_velocity_quadrature(2, 0.5, 1, 8).is_err());
        assert!(build_velocity_quadrature(2, 0.5, 8, 7).is_err());
    }

    #[test]
    fn activity_grid_counts_and_areas() {
        let g1 = build_activity_grid(1).unwrap();
        assert_eq!(g1.len(), 1);
        assert!((g1.cells[0].area - 0.5).abs() < 1e-15);

        let g2 = build_activity_grid(2).unwrap();
        assert_eq!(g2.len(), 4);
        for c in &g2.cells {
            assert!((c.area - 0.125).abs() < 1e-15);
        }
        assert!((g2.measure - 0.5).abs() < 1e-12);

        let g6 = build_activity_grid(6).unwrap();
        assert_eq!(g6.len(), 36);
        assert!((g6.measure - 0.5).abs() < 1e-12);
    }

    #[test]
    fn activity_nodes_strictly_inside() {
        let g = build_activity_grid(5).unwrap();
        for c in &g.cells {
            assert!(c.centroid[0] > 0.0 && c.centroid[1] > 0.0);
            assert!(c.centroid[0] + c.centroid[1] < 1.0);
        }
    }

    #[test]
    fn activity_centroid_is_exact() {
        // Area-weighted centroid of the pieces is the centroid of Y.
        for m in [1, 2, 3, 7] {
            let g = build_activity_grid(m).unwrap();
            let mut cx = 0.0;
            let mut cy = 0.0;
            for c in &g.cells {
                cx += c.area * c.centroid[0];
                cy += c.area * c.centroid[1];
            }
            assert!((cx / g.measure - 1.0 / 3.0).abs() < 1e-12);
            assert!((cy / g.measure - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn activity_interior_cells_span_the_plane() {
        // Interior up cells carry three displacements summing to zero, so the
        // positive hull is the whole plane.
        let g = build_activity_grid(4).unwrap();
        for (c, t) in g.targets.iter().enumerate() {
            assert!(!t.is_empty(), "cell {c} has no targets");
        }
    }

    #[test]
    fn activity_rejects_zero_subdivision() {
        assert!(build_activity_grid(0).is_err());
    }

    #[test]
    fn theta_grid_n1_is_two_points() {
        let t = build_theta_grid(1, 2).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dirs[0][0], 1.0);
        assert_eq!(t.dirs[1][0], -1.0);
        assert!((t.measure - 2.0).abs() < 1e-15);
    }

    #[test]
    fn theta_grid_n2_measure() {
        let t = build_theta_grid(2, 16).unwrap();
        assert!((t.measure - 2.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn space_grid_indexing_roundtrip() {
        let g = SpaceGrid::new(2, 8, 2.0).unwrap();
        for idx in 0..g.total_cells() {
            let (ix, iy) = g.unflatten(idx);
            assert_eq!(g.flatten(ix, iy), idx);
        }
    }

    #[test]
    fn degradation_factor_vanishes_for_n1() {
        let space = SpaceGrid::new(1, 4, 2.0).unwrap();
        let vel = build_velocity_quadrature(1, 0.5, 4, 2).unwrap();
        let theta = build_theta_grid(1, 2).unwrap();
        let act = build_activity_grid(2).unwrap();
        let grid = PhaseGrid::new(space, vel, theta, act).unwrap();
        for it in 0..grid.theta.len() {
            for iv in 0..grid.vel.len() {
                assert!(grid.degradation_factor(it, iv).abs() < 1e-15);
            }
        }
    }
}
