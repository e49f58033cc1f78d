//! The thin-film functional I^h on 3-D grid fields, the limit functional I
//! on 2-D fields with explicit jump sets, and desk-scale Γ-convergence
//! experiments comparing the two.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::CellProblemConfig;
use crate::error::{Error, Result};
use crate::grid::{arc_factor, EnergyKernel, Grid, Quadrature};
use crate::integrand::{DensityMode, IntegrandSpec};
use crate::jump::{run_layer, theta, JumpProblemConfig, LayerObjective};
use crate::manifold::{ManifoldSpec, ON_MANIFOLD_TOL};
use crate::optim::LbfgsOptions;
use crate::table::{tabulate_density, BulkDensity, DensityTable, JumpDensity, JumpTable, XiGrid};
use crate::{Mat3, Mat3x2, Vec2, Vec3};

/// Axis-aligned rectangle ω.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub origin: [f64; 2],
    pub size: [f64; 2],
}

impl Rect {
    pub fn unit() -> Self {
        Rect { origin: [0.0, 0.0], size: [1.0, 1.0] }
    }

    pub fn area(&self) -> f64 {
        self.size[0] * self.size[1]
    }

    fn validate(&self) -> Result<()> {
        if !(self.size[0] > 0.0 && self.size[1] > 0.0) || !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid rectangle {self:?}")));
        }
        Ok(())
    }

    fn max(&self) -> [f64; 2] {
        [self.origin[0] + self.size[0], self.origin[1] + self.size[1]]
    }
}

fn check_on_manifold(manifold: &ManifoldSpec, values: &[Vec3]) -> Result<()> {
    for v in values {
        let d = manifold.distance(v);
        if !(d <= ON_MANIFOLD_TOL) {
            return Err(Error::NotOnManifold(d));
        }
    }
    Ok(())
}

/// A nodal field on ω×(−½,½) with values in 𝓜.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThinField3D {
    pub omega: Rect,
    /// Node counts along x₁, x₂, x₃.
    pub n: [usize; 3],
    pub values: Vec<Vec3>,
    pub h: f64,
}

impl ThinField3D {
    pub fn new(omega: Rect, n: [usize; 3], values: Vec<Vec3>, h: f64) -> Result<Self> {
        omega.validate()?;
        if n.iter().any(|&k| k < 2) || values.len() != n[0] * n[1] * n[2] {
            return Err(Error::InvalidInput(format!("field of {} values does not fit a {n:?} grid", values.len())));
        }
        if !(h > 0.0) {
            return Err(Error::InvalidInput(format!("thickness h must be positive, got {h}")));
        }
        Ok(ThinField3D { omega, n, values, h })
    }

    /// Sample `f` at the nodes; x₃ runs over [−½, ½].
    pub fn from_fn(omega: Rect, n: [usize; 3], h: f64, f: impl Fn(&Vec3) -> Vec3) -> Result<Self> {
        let grid = thin_grid(&omega, n)?;
        let values = (0..grid.len()).map(|i| f(&grid.node_coords(i))).collect();
        ThinField3D::new(omega, n, values, h)
    }

    /// The x₃-constant extension of a 2-D field.
    pub fn lift(field: &SbvField2D, n3: usize, h: f64) -> Result<Self> {
        let per_layer = field.values.len();
        let values = (0..n3).flat_map(|_| field.values.iter().copied()).collect::<Vec<_>>();
        debug_assert_eq!(values.len(), per_layer * n3);
        ThinField3D::new(field.omega, [field.n[0], field.n[1], n3], values, h)
    }

    pub fn with_h(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    pub fn grid(&self) -> Result<Grid> {
        thin_grid(&self.omega, self.n)
    }

    /// x₃-average of the nodal values, mapped back to 𝓜.
    pub fn average(&self, manifold: &ManifoldSpec) -> Result<Vec<Vec3>> {
        let layer = self.n[0] * self.n[1];
        (0..layer)
            .map(|i| {
                let mean = (0..self.n[2]).map(|k| self.values[i + k * layer]).sum::<Vec3>() / self.n[2] as f64;
                manifold.nearest_point(&mean)
            })
            .collect()
    }
}

fn thin_grid(omega: &Rect, n: [usize; 3]) -> Result<Grid> {
    Grid::new(n, [omega.size[0], omega.size[1], 1.0], Vec3::new(omega.origin[0], omega.origin[1], -0.5))
}

fn thin_kernel<'a>(
    grid: &'a Grid,
    manifold: &'a ManifoldSpec,
    integrand: &'a IntegrandSpec,
    h: f64,
    quadrature: Quadrature,
) -> EnergyKernel<'a> {
    let mut k = EnergyKernel::new(grid, integrand, DensityMode::Bulk);
    k.transform = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 1.0 / h));
    k.point_map = Mat3::from_diagonal(&Vec3::new(1.0 / h, 1.0 / h, 1.0));
    k.quadrature = quadrature;
    k.manifold = Some(manifold);
    k
}

/// I^h(u) = ∫_{ω×(−½,½)} f(x_α/h, x₃, ∇_h u) dx with per-element constant
/// gradients.
pub fn eval_thin(manifold: &ManifoldSpec, integrand: &IntegrandSpec, field: &ThinField3D, quadrature: Quadrature) -> Result<f64> {
    check_on_manifold(manifold, &field.values)?;
    let grid = field.grid()?;
    Ok(thin_kernel(&grid, manifold, integrand, field.h, quadrature).energy(&field.values, 0.0, None))
}

/// A straight piece of a jump set. `a` is the trace on the side `nu` points to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpSegment {
    pub p0: [f64; 2],
    pub p1: [f64; 2],
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub nu: [f64; 2],
    /// Pieces shared with a neighbouring subdomain are counted there only,
    /// but still excluded from the bulk term here.
    #[serde(default = "yes")]
    pub owned: bool,
}

fn yes() -> bool {
    true
}

impl JumpSegment {
    pub fn new(p0: [f64; 2], p1: [f64; 2], a: Vec3, b: Vec3, nu: Vec2) -> Self {
        JumpSegment { p0, p1, a: a.into(), b: b.into(), nu: nu.into(), owned: true }
    }

    pub fn length(&self) -> f64 {
        (Vec2::from(self.p1) - Vec2::from(self.p0)).norm()
    }

    /// The part inside the closed rectangle [lo, hi].
    fn clip(&self, lo: [f64; 2], hi: [f64; 2]) -> Option<([f64; 2], [f64; 2])> {
        let (p, d) = (Vec2::from(self.p0), Vec2::from(self.p1) - Vec2::from(self.p0));
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for ax in 0..2 {
            if d[ax].abs() < 1e-300 {
                if p[ax] < lo[ax] || p[ax] > hi[ax] {
                    return None;
                }
                continue;
            }
            let (mut a, mut b) = ((lo[ax] - p[ax]) / d[ax], (hi[ax] - p[ax]) / d[ax]);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        let q0 = p + d * t0;
        let q1 = p + d * t1;
        Some(([q0.x, q0.y], [q1.x, q1.y]))
    }

    fn distance_to(&self, q: &Vec2) -> f64 {
        let (p, d) = (Vec2::from(self.p0), Vec2::from(self.p1) - Vec2::from(self.p0));
        let t = if d.norm_squared() > 0.0 { ((q - p).dot(&d) / d.norm_squared()).clamp(0.0, 1.0) } else { 0.0 };
        (p + d * t - q).norm()
    }
}

/// A nodal 2-D field on ω with values in 𝓜 and a declared jump set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbvField2D {
    pub omega: Rect,
    pub n: [usize; 2],
    pub values: Vec<Vec3>,
    pub jumps: Vec<JumpSegment>,
}

impl SbvField2D {
    pub fn new(omega: Rect, n: [usize; 2], values: Vec<Vec3>, jumps: Vec<JumpSegment>) -> Result<Self> {
        omega.validate()?;
        if n.iter().any(|&k| k < 2) || values.len() != n[0] * n[1] {
            return Err(Error::InvalidInput(format!("field of {} values does not fit a {n:?} grid", values.len())));
        }
        let (lo, hi) = (omega.origin, omega.max());
        let tol = 1e-12 * (1.0 + omega.size[0] + omega.size[1]);
        let mut jumps = jumps;
        for s in &mut jumps {
            if (Vec3::from(s.a) - Vec3::from(s.b)).norm() <= 0.0 {
                return Err(Error::InvalidInput("jump segment with equal traces".into()));
            }
            let nu = Vec2::from(s.nu);
            if (nu.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("jump normal {nu:?} is not a unit vector")));
            }
            for p in [s.p0, s.p1] {
                if (0..2).any(|k| p[k] < lo[k] - tol || p[k] > hi[k] + tol) {
                    return Err(Error::InvalidInput(format!("jump segment endpoint {p:?} lies outside ω")));
                }
            }
            s.nu = nu.normalize().into();
        }
        Ok(SbvField2D { omega, n, values, jumps })
    }

    pub fn from_fn(omega: Rect, n: [usize; 2], jumps: Vec<JumpSegment>, f: impl Fn(&Vec2) -> Vec3) -> Result<Self> {
        let sp = spacing(&omega, n);
        let mut values = Vec::with_capacity(n[0] * n[1]);
        for j in 0..n[1] {
            for i in 0..n[0] {
                values.push(f(&Vec2::new(omega.origin[0] + i as f64 * sp[0], omega.origin[1] + j as f64 * sp[1])));
            }
        }
        SbvField2D::new(omega, n, values, jumps)
    }

    pub fn spacing(&self) -> [f64; 2] {
        spacing(&self.omega, self.n)
    }

    pub fn node(&self, i: usize, j: usize) -> Vec3 {
        self.values[i + self.n[0] * j]
    }

    /// Field invariants: values on 𝓜, and every edge whose endpoints are
    /// farther apart than `threshold` lies within one cell of a declared
    /// jump segment.
    pub fn validate(&self, manifold: &ManifoldSpec, threshold: f64) -> Result<()> {
        check_on_manifold(manifold, &self.values)?;
        let cell = self.spacing()[0].max(self.spacing()[1]);
        for line in detect_jumps(manifold, &self.omega, self.n, &self.values, threshold)? {
            for p in &line.points {
                let q = Vec2::from(*p);
                if !self.jumps.iter().any(|s| s.distance_to(&q) <= cell * (1.0 + 1e-9)) {
                    return Err(Error::InvalidInput(format!("undeclared jump near {p:?}")));
                }
            }
        }
        Ok(())
    }

    /// The sub-field on nodes i ∈ [i0, i1], j ∈ [j0, j1], with the jump set
    /// clipped to it. Pieces on an edge shared with a subdomain further along
    /// x₁ or x₂ are not owned.
    pub fn restrict(&self, i: [usize; 2], j: [usize; 2]) -> Result<Self> {
        if !(i[0] < i[1] && i[1] < self.n[0] && j[0] < j[1] && j[1] < self.n[1]) {
            return Err(Error::InvalidInput(format!("invalid node ranges {i:?}, {j:?}")));
        }
        let sp = self.spacing();
        let lo = [self.omega.origin[0] + i[0] as f64 * sp[0], self.omega.origin[1] + j[0] as f64 * sp[1]];
        let hi = [self.omega.origin[0] + i[1] as f64 * sp[0], self.omega.origin[1] + j[1] as f64 * sp[1]];
        let values = (j[0]..=j[1]).flat_map(|jj| (i[0]..=i[1]).map(move |ii| (ii, jj))).map(|(ii, jj)| self.node(ii, jj)).collect();
        let mut jumps = Vec::new();
        for s in &self.jumps {
            if let Some((q0, q1)) = s.clip(lo, hi) {
                let mut piece = s.clone();
                piece.p0 = q0;
                piece.p1 = q1;
                let shared = (0..2).any(|ax| {
                    let interior = [i[1] + 1 < self.n[0], j[1] + 1 < self.n[1]][ax];
                    interior && q0[ax] == hi[ax] && q1[ax] == hi[ax]
                });
                piece.owned = s.owned && !shared;
                jumps.push(piece);
            }
        }
        let omega = Rect { origin: lo, size: [hi[0] - lo[0], hi[1] - lo[1]] };
        Ok(SbvField2D { omega, n: [i[1] - i[0] + 1, j[1] - j[0] + 1], values, jumps })
    }
}

fn spacing(omega: &Rect, n: [usize; 2]) -> [f64; 2] {
    [omega.size[0] / (n[0] - 1) as f64, omega.size[1] / (n[1] - 1) as f64]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub bulk: f64,
    pub jump: f64,
    /// Grid fields carry no Cantor part.
    pub cantor: f64,
    pub total: f64,
    pub excluded_elements: usize,
}

fn box_meets_segment(lo: [f64; 2], hi: [f64; 2], s: &JumpSegment) -> bool {
    s.clip(lo, hi).is_some()
}

/// Element gradient of a 2-D nodal field with arc-corrected differences,
/// and the element value: the mean of its corners mapped to 𝓜.
fn element_gradient(manifold: &ManifoldSpec, field: &SbvField2D, i: usize, j: usize) -> Result<(Vec3, Mat3x2)> {
    let sp = field.spacing();
    let c = [field.node(i, j), field.node(i + 1, j), field.node(i, j + 1), field.node(i + 1, j + 1)];
    let centre = manifold.nearest_point(&((c[0] + c[1] + c[2] + c[3]) * 0.25))?;
    let edge = |p: &Vec3, q: &Vec3| {
        let w = (manifold.gauss_map(q) - manifold.gauss_map(p)).norm();
        (q - p) * arc_factor(0.5 * w).0
    };
    let d1 = (edge(&c[0], &c[1]) + edge(&c[2], &c[3])) * (0.5 / sp[0]);
    let d2 = (edge(&c[0], &c[2]) + edge(&c[1], &c[3])) * (0.5 / sp[1]);
    let xi = Mat3x2::from_columns(&[manifold.tangent_project(&centre, &d1)?, manifold.tangent_project(&centre, &d2)?]);
    Ok((centre, xi))
}

/// I(u) = ∫ Tf⁰_hom(u, ∇_α u) + ∫_{S_u} θ(u⁺, u⁻, ν) dH¹. Elements meeting the
/// jump set are left out of the bulk term.
pub fn eval_limit(manifold: &ManifoldSpec, field: &SbvField2D, bulk: &dyn BulkDensity, jump: &dyn JumpDensity) -> Result<EnergyBreakdown> {
    check_on_manifold(manifold, &field.values)?;
    let sp = field.spacing();
    let area = sp[0] * sp[1];
    let mut out = EnergyBreakdown::default();
    for j in 0..field.n[1] - 1 {
        for i in 0..field.n[0] - 1 {
            let lo = [field.omega.origin[0] + i as f64 * sp[0], field.omega.origin[1] + j as f64 * sp[1]];
            let hi = [lo[0] + sp[0], lo[1] + sp[1]];
            if field.jumps.iter().any(|s| box_meets_segment(lo, hi, s)) {
                out.excluded_elements += 1;
                continue;
            }
            let (centre, xi) = element_gradient(manifold, field, i, j)?;
            out.bulk += bulk.bulk(&centre, &xi)? * area;
        }
    }
    for s in field.jumps.iter().filter(|s| s.owned) {
        let len = s.length();
        if len > 0.0 {
            out.jump += len * jump.jump(&Vec3::from(s.a), &Vec3::from(s.b), &Vec2::from(s.nu))?;
        }
    }
    out.total = out.bulk + out.jump + out.cantor;
    Ok(out)
}

/// A detected jump curve: edge midpoints ordered along the curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub nu: [f64; 2],
    pub length: f64,
    pub edges: usize,
}

impl Polyline {
    pub fn segments(&self) -> Vec<JumpSegment> {
        self.points.windows(2).map(|w| JumpSegment { p0: w[0], p1: w[1], a: self.a, b: self.b, nu: self.nu, owned: true }).collect()
    }
}

/// Grid edges whose endpoints are more than `threshold` apart in geodesic
/// distance, grouped into curves of neighbouring edges.
pub fn detect_jumps(manifold: &ManifoldSpec, omega: &Rect, n: [usize; 2], values: &[Vec3], threshold: f64) -> Result<Vec<Polyline>> {
    let sp = spacing(omega, n);
    let at = |i: usize, j: usize| values[i + n[0] * j];
    // (midpoint, normal, trace ahead, trace behind)
    let mut edges: Vec<(Vec2, Vec2, Vec3, Vec3)> = Vec::new();
    for j in 0..n[1] {
        for i in 0..n[0] {
            let p = Vec2::new(omega.origin[0] + i as f64 * sp[0], omega.origin[1] + j as f64 * sp[1]);
            if i + 1 < n[0] && manifold.geodesic_distance(&at(i, j), &at(i + 1, j))? > threshold {
                edges.push((p + Vec2::new(0.5 * sp[0], 0.0), Vec2::x(), at(i + 1, j), at(i, j)));
            }
            if j + 1 < n[1] && manifold.geodesic_distance(&at(i, j), &at(i, j + 1))? > threshold {
                edges.push((p + Vec2::new(0.0, 0.5 * sp[1]), Vec2::y(), at(i, j + 1), at(i, j)));
            }
        }
    }
    let reach = (sp[0] * sp[0] + sp[1] * sp[1]).sqrt() * (1.0 + 1e-9);
    let mut parent: Vec<usize> = (0..edges.len()).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for a in 0..edges.len() {
        for b in a + 1..edges.len() {
            if (edges[a].0 - edges[b].0).norm() <= reach {
                let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; edges.len()];
    for e in 0..edges.len() {
        let r = root(&mut parent, e);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(e);
    }
    let mut out = Vec::new();
    for g in groups {
        // orient every edge like the first one
        let reference = edges[g[0]].1;
        let mut nu = Vec2::zeros();
        let (mut a, mut b) = (Vec3::zeros(), Vec3::zeros());
        for &e in &g {
            let (_, n_e, ahead, behind) = edges[e];
            let flip = n_e.dot(&reference) < 0.0;
            nu += if flip { -n_e } else { n_e };
            a += if flip { behind } else { ahead };
            b += if flip { ahead } else { behind };
        }
        let nu = if nu.norm() > 0.0 { nu.normalize() } else { reference };
        let tangent = Vec2::new(-nu.y, nu.x);
        let mut pts: Vec<Vec2> = g.iter().map(|&e| edges[e].0).collect();
        pts.sort_by(|p, q| p.dot(&tangent).total_cmp(&q.dot(&tangent)).then(p.dot(&nu).total_cmp(&q.dot(&nu))));
        let length = pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        let k = g.len() as f64;
        out.push(Polyline {
            points: pts.iter().map(|p| [p.x, p.y]).collect(),
            a: manifold.nearest_point(&(a / k))?.into(),
            b: manifold.nearest_point(&(b / k))?.into(),
            nu: nu.into(),
            length,
            edges: g.len(),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// u ≡ s₀.
    Constant,
    /// Two constant phases a | b separated by a vertical wall of unit length.
    SingleWall,
    /// A unit-speed great-circle field u(x) = γ(κx₁), gradient κτ⊗e₁.
    AffineTangent,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Constant => "constant",
            Scenario::SingleWall => "single-wall",
            Scenario::AffineTangent => "affine-tangent",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaConfig {
    pub scenario: Scenario,
    pub h_list: Vec<f64>,
    /// Elements per unit length of ω.
    pub n_xy: usize,
    /// Nodes across the thickness.
    pub n3: usize,
    pub smoothing_eps: Vec<f64>,
    pub lbfgs: LbfgsOptions,
    pub quadrature: Quadrature,
    /// Slope of the affine-tangent scenario.
    pub kappa: f64,
    /// Geodesic edge jump above which a 2-D edge counts as a jump.
    pub jump_threshold: f64,
    /// Relative tolerance of the soft liminf and limsup checks.
    pub tolerance: f64,
    pub cell: CellProblemConfig,
    pub jump: JumpProblemConfig,
}

impl Default for GammaConfig {
    fn default() -> Self {
        GammaConfig {
            scenario: Scenario::SingleWall,
            h_list: vec![1.0, 0.5, 0.25],
            n_xy: 9,
            n3: 8,
            smoothing_eps: vec![1e-1, 1e-2, 1e-3],
            lbfgs: LbfgsOptions { max_iter: 400, tol_rel: 1e-9, ..Default::default() },
            quadrature: Quadrature::Vertex,
            kappa: 1.0,
            jump_threshold: 0.5,
            tolerance: 0.05,
            cell: CellProblemConfig::default(),
            jump: JumpProblemConfig::default(),
        }
    }
}

impl GammaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h_list.is_empty() || self.h_list.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::InvalidInput("h_list must be a nonempty list of positive values".into()));
        }
        if self.n_xy < 1 || self.n3 < 2 {
            return Err(Error::InvalidInput("need n_xy >= 1 and n3 >= 2".into()));
        }
        if self.smoothing_eps.is_empty() || self.smoothing_eps.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::InvalidInput("smoothing_eps must be a nonempty list of positive values".into()));
        }
        if !(self.kappa > 0.0 && self.kappa < std::f64::consts::PI) {
            return Err(Error::InvalidInput("kappa must lie in (0, π)".into()));
        }
        if !(self.jump_threshold > 0.0 && self.tolerance > 0.0) {
            return Err(Error::InvalidInput("jump_threshold and tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// A concrete experiment: the limit field u* on ω and the value I(u*)
/// expected from the exact densities, when known.
#[derive(Clone, Debug)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub limit: SbvField2D,
    pub oracle: Option<f64>,
}

const PHASE: f64 = 0.3;

fn equator(angle: f64) -> Vec3 {
    Vec3::new(angle.cos(), angle.sin(), 0.0)
}

impl ScenarioSpec {
    /// Build the scenario on ω = (0,1)². All scenario values lie on the
    /// equator {x₃ = 0}, so the sphere, the circle and the torus-free
    /// presets containing it can host them.
    pub fn build(manifold: &ManifoldSpec, integrand: &IntegrandSpec, config: &GammaConfig) -> Result<Self> {
        config.validate()?;
        let omega = Rect::unit();
        let n = [config.n_xy + 1, config.n_xy + 1];
        let norm_like = integrand.is_one_homogeneous() && integrand.is_x_homogeneous();
        let (limit, oracle) = match config.scenario {
            Scenario::Constant => {
                let s0 = equator(PHASE);
                (SbvField2D::from_fn(omega, n, vec![], |_| s0)?, Some(0.0))
            }
            Scenario::SingleWall => {
                let (a, b) = (Vec3::x(), Vec3::y());
                // centre of the element column nearest to x₁ = ½
                let k = config.n_xy / 2;
                let wall = (k as f64 + 0.5) / config.n_xy as f64;
                let seg = JumpSegment::new([wall, 0.0], [wall, 1.0], a, b, Vec2::x());
                let field = SbvField2D::from_fn(omega, n, vec![seg], |x| if x.x > wall { a } else { b })?;
                let oracle = norm_like.then(|| manifold.geodesic_distance(&a, &b)).transpose()?;
                (field, oracle)
            }
            Scenario::AffineTangent => {
                let kappa = config.kappa;
                let field = SbvField2D::from_fn(omega, n, vec![], |x| equator(PHASE + kappa * x.x))?;
                (field, norm_like.then_some(kappa * omega.area()))
            }
        };
        check_on_manifold(manifold, &limit.values)?;
        Ok(ScenarioSpec { scenario: config.scenario, limit, oracle })
    }

    /// Density tables covering every (s, ξ_α) and (a, b, ν) that the limit
    /// field u* needs.
    pub fn limit_tables(
        &self,
        manifold: &ManifoldSpec,
        integrand: &IntegrandSpec,
        config: &GammaConfig,
    ) -> Result<(DensityTable, JumpTable)> {
        let field = &self.limit;
        let sp = field.spacing();
        let mut samples: Vec<(Vec3, [f64; 4])> = Vec::new();
        for j in 0..field.n[1] - 1 {
            for i in 0..field.n[0] - 1 {
                let lo = [field.omega.origin[0] + i as f64 * sp[0], field.omega.origin[1] + j as f64 * sp[1]];
                let hi = [lo[0] + sp[0], lo[1] + sp[1]];
                if field.jumps.iter().any(|s| box_meets_segment(lo, hi, s)) {
                    continue;
                }
                let (centre, xi) = element_gradient(manifold, field, i, j)?;
                let frame = manifold.tangent_frame(&centre)?;
                samples.push((centre, crate::cell::coords_from_xi(&frame, &xi)));
            }
        }
        let mut s_points: Vec<Vec3> = Vec::new();
        let mut xi_points: Vec<[f64; 4]> = Vec::new();
        for (s, c) in &samples {
            if !s_points.iter().any(|p| (p - s).norm() <= 1e-12) {
                s_points.push(*s);
            }
            if !xi_points.iter().any(|p| p.iter().zip(c).all(|(x, y)| (x - y).abs() <= 1e-12)) {
                xi_points.push(*c);
            }
        }
        if s_points.is_empty() {
            for s in &field.jumps {
                s_points.push(Vec3::from(s.a));
                s_points.push(Vec3::from(s.b));
            }
            xi_points.push([0.0; 4]);
        }
        let bulk = tabulate_density(manifold, integrand, &s_points, &XiGrid::List { points: xi_points }, &config.cell, false)?;
        let mut jumps = Vec::new();
        for s in &field.jumps {
            let key = (s.a, s.b, s.nu);
            if !jumps.iter().any(|r: &crate::jump::JumpResult| (r.a, r.b, r.nu) == key) {
                jumps.push(theta(manifold, integrand, &Vec3::from(s.a), &Vec3::from(s.b), &Vec2::from(s.nu), &config.jump)?);
            }
        }
        let jump_table = JumpTable::from_results(manifold, integrand, &config.jump, &jumps);
        let radius = if s_points.len() > 1 { bulk.s_radius } else { 1e-9 };
        Ok((bulk.with_s_radius(radius.max(1e-9)), jump_table))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaLevel {
    pub h: f64,
    /// Minimized I^h.
    pub energy: f64,
    /// I^h of the x₃-lifted limit field (recovery sequence).
    pub recovery_energy: f64,
    pub iterations: usize,
    pub converged: bool,
    /// ‖ū_h − u*‖_{L¹(ω)}, ū_h the x₃-average of the minimizer mapped to 𝓜.
    pub l1_to_limit: f64,
    /// I(ū_h), when the tables cover it.
    pub limit_of_average: Option<f64>,
    pub average_note: Option<String>,
    /// energy − I(u*)
    pub gap: f64,
    #[serde(skip)]
    pub minimizer: Option<ThinField3D>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub scenario: Scenario,
    pub manifold: String,
    pub integrand: String,
    pub header: String,
    pub levels: Vec<GammaLevel>,
    /// min over the candidate 2-D fields of I.
    pub limit_value: f64,
    pub limit_breakdown: EnergyBreakdown,
    pub oracle: Option<f64>,
    /// Minimized I^h ≥ I(ū_h) − tol wherever I(ū_h) is available.
    pub liminf_ok: bool,
    /// Recovery energy at the smallest h within tol of I(u*).
    pub limsup_ok: bool,
    /// |gap| nonincreasing as h decreases, within twice the tolerance.
    pub gap_monotone: bool,
    pub converged: bool,
    pub provenance: Option<String>,
}

pub const GAMMA_HEADER: &str = "Minimizers of I^h are compared with the limit functional I. The liminf inequality \
concerns every sequence converging in L1, while only these minimizing sequences are probed, so the checks below \
are necessary consequences of the limit, not a certificate of it.";

impl GammaReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
        w.write_record(["h", "energy", "limit_value", "gap", "recovery_energy", "l1_to_limit", "converged", "provenance"]).map_err(err)?;
        for l in &self.levels {
            w.write_record([
                l.h.to_string(),
                l.energy.to_string(),
                self.limit_value.to_string(),
                l.gap.to_string(),
                l.recovery_energy.to_string(),
                l.l1_to_limit.to_string(),
                l.converged.to_string(),
                self.provenance.clone().unwrap_or_default(),
            ])
            .map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Minimize I^h with lateral Dirichlet data from u* for every h, starting
/// from the x₃-lifted limit field, and compare with I.
pub fn gamma_experiment(
    manifold: &ManifoldSpec,
    integrand: &IntegrandSpec,
    spec: &ScenarioSpec,
    config: &GammaConfig,
    tables: Option<(&DensityTable, &JumpTable)>,
) -> Result<GammaReport> {
    config.validate()?;
    let owned;
    let (bulk_table, jump_table) = match tables {
        Some(t) => t,
        None => {
            owned = spec.limit_tables(manifold, integrand, config)?;
            (&owned.0, &owned.1)
        }
    };
    let bulk = bulk_table.bound(manifold);
    let limit_breakdown = eval_limit(manifold, &spec.limit, &bulk, jump_table)?;

    let field = &spec.limit;
    let levels: Vec<(GammaLevel, Vec<Vec3>)> = config
        .h_list
        .par_iter()
        .map(|&h| {
            let lifted = ThinField3D::lift(field, config.n3, h)?;
            let grid = lifted.grid()?;
            let kernel = thin_kernel(&grid, manifold, integrand, h, config.quadrature);
            let recovery = kernel.energy(&lifted.values, 0.0, None);
            let mut fixed = vec![Vec3::zeros(); grid.len()];
            let mut free = Vec::new();
            for idx in 0..grid.len() {
                if grid.is_lateral_boundary(idx) {
                    fixed[idx] = lifted.values[idx];
                } else {
                    free.push(idx);
                }
            }
            let mut obj = LayerObjective { kernel, manifold, free, fixed, eps: 0.0, scale: 1.0 };
            let (energy, _, _, iterations, _, converged, x) =
                run_layer(&mut obj, &lifted.values, &config.smoothing_eps, 1.0, &config.lbfgs);
            let minimizer = ThinField3D::new(field.omega, lifted.n, obj.field(&x), h)?;
            let avg = minimizer.average(manifold)?;
            let l1 = avg.iter().zip(&field.values).map(|(p, q)| (p - q).norm()).sum::<f64>() / avg.len() as f64 * field.omega.area();
            let level = GammaLevel {
                h,
                energy,
                recovery_energy: recovery,
                iterations,
                converged,
                l1_to_limit: l1,
                limit_of_average: None,
                average_note: None,
                gap: 0.0,
                minimizer: Some(minimizer),
            };
            Ok((level, avg))
        })
        .collect::<Result<_>>()?;

    let mut limit_value = limit_breakdown.total;
    let mut out_levels = Vec::with_capacity(levels.len());
    for (mut level, avg) in levels {
        let candidate = detect_jumps(manifold, &field.omega, field.n, &avg, config.jump_threshold).and_then(|lines| {
            let segs = lines.iter().flat_map(Polyline::segments).collect();
            let f = SbvField2D::new(field.omega, field.n, avg.clone(), segs)?;
            eval_limit(manifold, &f, &bulk, jump_table)
        });
        match candidate {
            Ok(b) => {
                level.limit_of_average = Some(b.total);
                limit_value = limit_value.min(b.total);
            }
            Err(e) => level.average_note = Some(e.to_string()),
        }
        out_levels.push(level);
    }
    let scale = limit_value.abs().max(1.0);
    for l in &mut out_levels {
        l.gap = l.energy - limit_value;
    }
    let liminf_ok = out_levels.iter().all(|l| l.limit_of_average.is_none_or(|v| l.energy >= v - config.tolerance * v.abs().max(1.0)));
    let smallest = out_levels.iter().min_by(|a, b| a.h.total_cmp(&b.h)).expect("nonempty h_list");
    let limsup_ok = (smallest.recovery_energy - limit_value).abs() <= config.tolerance * scale;
    let mut by_h: Vec<&GammaLevel> = out_levels.iter().collect();
    by_h.sort_by(|a, b| b.h.total_cmp(&a.h));
    let gap_monotone = by_h.windows(2).all(|w| w[1].gap.abs() <= w[0].gap.abs() + 2.0 * config.tolerance * scale);
    Ok(GammaReport {
        scenario: spec.scenario,
        manifold: manifold.kind().name(),
        integrand: integrand.tag(),
        header: GAMMA_HEADER.to_string(),
        converged: out_levels.iter().all(|l| l.converged),
        levels: out_levels,
        limit_value,
        limit_breakdown,
        oracle: spec.oracle,
        liminf_ok,
        limsup_ok,
        gap_monotone,
        provenance: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::JumpFn;
    use std::f64::consts::FRAC_PI_2;

    fn norm_bulk(_: &Vec3, xi: &Mat3x2) -> f64 {
        xi.norm()
    }

    #[test]
    fn constant_thin_field_costs_nothing() {
        let m = ManifoldSpec::sphere();
        let f = ThinField3D::from_fn(Rect::unit(), [4, 4, 3], 0.5, |_| Vec3::z()).unwrap();
        assert_eq!(eval_thin(&m, &IntegrandSpec::norm(), &f, Quadrature::Midpoint).unwrap(), 0.0);
    }

    #[test]
    fn vertical_great_circle_scales_with_one_over_h() {
        let m = ManifoldSpec::sphere();
        let c = 0.8;
        for h in [1.0, 0.5, 0.25] {
            let f = ThinField3D::from_fn(Rect::unit(), [3, 3, 5], h, |x| equator(c * x.z)).unwrap();
            for q in [Quadrature::Midpoint, Quadrature::Vertex] {
                let v = eval_thin(&m, &IntegrandSpec::norm(), &f, q).unwrap();
                assert!((v - c / h).abs() < 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn wall_splits_into_jump_energy() {
        let m = ManifoldSpec::sphere();
        let seg = JumpSegment::new([0.5, 0.0], [0.5, 1.0], Vec3::x(), Vec3::y(), Vec2::x());
        let field = SbvField2D::from_fn(Rect::unit(), [6, 5], vec![seg], |x| if x.x > 0.5 { Vec3::x() } else { Vec3::y() }).unwrap();
        field.validate(&m, 0.5).unwrap();
        let jump = JumpFn(|a: &Vec3, b: &Vec3, _: &Vec2| 2.0 * ((a - b).norm() / 2.0).asin());
        let e = eval_limit(&m, &field, &norm_bulk, &jump).unwrap();
        assert_eq!(e.bulk, 0.0);
        assert!((e.jump - FRAC_PI_2).abs() < 1e-12);
        assert_eq!(e.total, e.bulk + e.jump);
    }

    #[test]
    fn undeclared_jumps_are_rejected() {
        let m = ManifoldSpec::sphere();
        let field = SbvField2D::from_fn(Rect::unit(), [6, 5], vec![], |x| if x.x > 0.5 { Vec3::x() } else { Vec3::y() }).unwrap();
        assert!(field.validate(&m, 0.5).is_err());
    }

    #[test]
    fn detector_recovers_a_straight_wall() {
        let m = ManifoldSpec::sphere();
        let n = [8, 6];
        let vals: Vec<Vec3> = (0..n[0] * n[1]).map(|k| if (k % n[0]) as f64 / 7.0 > 0.5 { Vec3::x() } else { Vec3::y() }).collect();
        let lines = detect_jumps(&m, &Rect::unit(), n, &vals, 0.5).unwrap();
        assert_eq!(lines.len(), 1);
        let l = &lines[0];
        assert_eq!(l.edges, 6);
        assert!((l.length - 1.0).abs() < 1e-12);
        assert_eq!(l.nu, [1.0, 0.0]);
        assert!((Vec3::from(l.a) - Vec3::x()).norm() < 1e-12);
        assert!(l.points.iter().all(|p| (p[0] - 0.5).abs() <= 1.0 / 7.0));
        assert!(detect_jumps(&m, &Rect::unit(), n, &vals, 2.0).unwrap().is_empty());
    }

    #[test]
    fn limit_energy_is_additive_over_quadrants() {
        let m = ManifoldSpec::sphere();
        let seg = JumpSegment::new([0.5, 0.0], [0.5, 1.0], Vec3::x(), Vec3::z(), Vec2::x());
        let field = SbvField2D::from_fn(Rect::unit(), [10, 9], vec![seg], |x| {
            if x.x > 0.5 {
                Vec3::x()
            } else {
                Vec3::new(0.3 * x.y, 0.0, 1.0).normalize()
            }
        })
        .unwrap();
        let jump = JumpFn(|a: &Vec3, b: &Vec3, _: &Vec2| (a - b).norm());
        let whole = eval_limit(&m, &field, &norm_bulk, &jump).unwrap();
        let mut sum = 0.0;
        for i in [[0, 4], [4, 9]] {
            for j in [[0, 4], [4, 8]] {
                sum += eval_limit(&m, &field.restrict(i, j).unwrap(), &norm_bulk, &jump).unwrap().total;
            }
        }
        assert!((whole.total - sum).abs() < 1e-10, "{} vs {sum}", whole.total);
    }
}
