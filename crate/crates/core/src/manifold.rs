//! Target manifolds embedded in ℝ³.
//!
//! A [`ManifoldSpec`] bundles the shape, the tubular radius `delta0` on which
//! the nearest-point projection is well defined, and a sample graph used to
//! seed geodesic computations. Everything is immutable after construction.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesic::{self, GeodesicPath, SurfaceGraph};
use crate::{Mat3, Vec3};

/// Distance below which a point counts as lying on the manifold.
pub const ON_MANIFOLD_TOL: f64 = 1e-8;

const PROJECTION_MAX_ITER: usize = 200;

/// Level-set surfaces available as named builtins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum ImplicitSurface {
    /// x²/a² + y²/b² + z²/c² = 1
    Ellipsoid { a: f64, b: f64, c: f64 },
    /// (√(x²+y²) − R)² + z² = r², written as a level set
    Torus { major: f64, minor: f64 },
}

impl ImplicitSurface {
    pub fn level(&self, p: &Vec3) -> f64 {
        match *self {
            ImplicitSurface::Ellipsoid { a, b, c } => (p.x / a).powi(2) + (p.y / b).powi(2) + (p.z / c).powi(2) - 1.0,
            ImplicitSurface::Torus { major, minor } => {
                let q = p.x * p.x + p.y * p.y + p.z * p.z + major * major - minor * minor;
                q * q - 4.0 * major * major * (p.x * p.x + p.y * p.y)
            }
        }
    }

    pub fn gradient(&self, p: &Vec3) -> Vec3 {
        match *self {
            ImplicitSurface::Ellipsoid { a, b, c } => Vec3::new(2.0 * p.x / (a * a), 2.0 * p.y / (b * b), 2.0 * p.z / (c * c)),
            ImplicitSurface::Torus { major, minor } => {
                let q = p.x * p.x + p.y * p.y + p.z * p.z + major * major - minor * minor;
                let r2 = 4.0 * major * major;
                Vec3::new(4.0 * q * p.x - 2.0 * r2 * p.x, 4.0 * q * p.y - 2.0 * r2 * p.y, 4.0 * q * p.z)
            }
        }
    }

    fn reach(&self) -> f64 {
        match *self {
            ImplicitSurface::Ellipsoid { a, b, c } => {
                let lo = a.min(b).min(c);
                let hi = a.max(b).max(c);
                lo * lo / hi
            }
            ImplicitSurface::Torus { major, minor } => minor.min(major - minor),
        }
    }

    /// Axis-aligned box containing the zero level set.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let half = match *self {
            ImplicitSurface::Ellipsoid { a, b, c } => Vec3::new(a, b, c),
            ImplicitSurface::Torus { major, minor } => Vec3::new(major + minor, major + minor, minor),
        };
        let pad = half * 0.1;
        (-(half + pad), half + pad)
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ImplicitSurface::Ellipsoid { a, b, c } => a > 0.0 && b > 0.0 && c > 0.0,
            ImplicitSurface::Torus { major, minor } => minor > 0.0 && major > minor,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("degenerate implicit surface {self:?}")))
        }
    }
}

/// Shape of the target manifold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ManifoldKind {
    /// Unit sphere S².
    Sphere,
    /// Unit circle in the plane x₃ = 0.
    Circle,
    /// Torus of revolution about the x₃ axis.
    Torus { major: f64, minor: f64 },
    /// Zero level set of a builtin function.
    Implicit { surface: ImplicitSurface },
}

impl ManifoldKind {
    pub fn dim(&self) -> usize {
        match self {
            ManifoldKind::Circle => 1,
            _ => 2,
        }
    }

    /// Reach of the embedded manifold (radius of the largest tube with a unique
    /// nearest point).
    pub fn reach(&self) -> f64 {
        match self {
            ManifoldKind::Sphere | ManifoldKind::Circle => 1.0,
            ManifoldKind::Torus { major, minor } => minor.min(major - minor),
            ManifoldKind::Implicit { surface } => surface.reach(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            ManifoldKind::Sphere => "sphere".into(),
            ManifoldKind::Circle => "circle".into(),
            ManifoldKind::Torus { major, minor } => format!("torus({major},{minor})"),
            ManifoldKind::Implicit { surface } => match surface {
                ImplicitSurface::Ellipsoid { a, b, c } => format!("ellipsoid({a},{b},{c})"),
                ImplicitSurface::Torus { major, minor } => {
                    format!("implicit-torus({major},{minor})")
                }
            },
        }
    }
}

/// Orthonormal basis of the tangent space at a point of the manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentFrame {
    pub point: Vec3,
    pub basis: Vec<Vec3>,
}

impl TangentFrame {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Ambient vector with the given frame coordinates.
    pub fn embed(&self, coords: &[f64]) -> Vec3 {
        self.basis.iter().zip(coords).fold(Vec3::zeros(), |acc, (e, c)| acc + e * *c)
    }

    /// Frame coordinates of the tangential part of `v`.
    pub fn coordinates(&self, v: &Vec3) -> Vec<f64> {
        self.basis.iter().map(|e| e.dot(v)).collect()
    }
}

/// Outcome of the sampling checks run on a manifold.
#[derive(Clone, Debug, Serialize)]
pub struct ManifoldValidation {
    pub kind: String,
    pub delta0: f64,
    pub graph_nodes: usize,
    pub components: usize,
    pub uniqueness_samples: usize,
    pub uniqueness_failures: usize,
    pub issues: Vec<String>,
}

impl ManifoldValidation {
    pub fn passed(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Immutable description of the target manifold.
#[derive(Clone, Debug)]
pub struct ManifoldSpec {
    kind: ManifoldKind,
    delta0: f64,
    mesh_nodes: usize,
    graph: Arc<SurfaceGraph>,
}

impl ManifoldSpec {
    pub const DEFAULT_MESH_NODES: usize = 1500;

    /// Build a manifold with the default tube radius (half the reach) and the
    /// default sample graph size.
    pub fn new(kind: ManifoldKind) -> Result<Self> {
        let delta0 = 0.5 * kind.reach();
        Self::with_options(kind, delta0, Self::DEFAULT_MESH_NODES)
    }

    pub fn with_options(kind: ManifoldKind, delta0: f64, mesh_nodes: usize) -> Result<Self> {
        match &kind {
            ManifoldKind::Torus { major, minor } => {
                if !(*minor > 0.0 && *major > *minor) {
                    return Err(Error::InvalidInput(format!("torus needs 0 < minor < major, got ({major}, {minor})")));
                }
            }
            ManifoldKind::Implicit { surface } => surface.validate()?,
            _ => {}
        }
        if !(delta0 > 0.0 && delta0 < kind.reach()) {
            return Err(Error::InvalidInput(format!("delta0 must lie in (0, reach = {}), got {delta0}", kind.reach())));
        }
        if mesh_nodes < 16 {
            return Err(Error::InvalidInput("geodesic mesh needs at least 16 nodes".into()));
        }
        let mut spec = ManifoldSpec { kind, delta0, mesh_nodes, graph: Arc::new(SurfaceGraph::default()) };
        let nodes = spec.graph_samples(mesh_nodes);
        if nodes.is_empty() {
            return Err(Error::InvalidInput("manifold sampling produced no points".into()));
        }
        let k = if spec.dim() == 1 { 2 } else { 10 };
        spec.graph = Arc::new(SurfaceGraph::knn(nodes, k));
        Ok(spec)
    }

    pub fn sphere() -> Self {
        Self::new(ManifoldKind::Sphere).expect("unit sphere is valid")
    }

    pub fn kind(&self) -> &ManifoldKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    pub fn mesh_nodes(&self) -> usize {
        self.mesh_nodes
    }

    pub fn graph(&self) -> &SurfaceGraph {
        &self.graph
    }

    /// Euclidean distance from `s` to the manifold. Total on ℝ³; returns
    /// infinity when an iterative projection cannot resolve a far point.
    pub fn distance(&self, s: &Vec3) -> f64 {
        match &self.kind {
            ManifoldKind::Sphere => (s.norm() - 1.0).abs(),
            ManifoldKind::Circle => {
                let rho = (s.x * s.x + s.y * s.y).sqrt();
                ((rho - 1.0).powi(2) + s.z * s.z).sqrt()
            }
            ManifoldKind::Torus { major, minor } => {
                let rho = (s.x * s.x + s.y * s.y).sqrt();
                (((rho - major).powi(2) + s.z * s.z).sqrt() - minor).abs()
            }
            ManifoldKind::Implicit { surface } => match project_implicit(surface, s) {
                Some(p) => (s - p).norm(),
                None => f64::INFINITY,
            },
        }
    }

    /// Nearest point of the manifold to `s`, defined on the open tube of
    /// radius `delta0`.
    pub fn nearest_point(&self, s: &Vec3) -> Result<Vec3> {
        let p = match &self.kind {
            ManifoldKind::Sphere => {
                let r = s.norm();
                self.check_tube((r - 1.0).abs())?;
                s / r
            }
            ManifoldKind::Circle => {
                let rho = (s.x * s.x + s.y * s.y).sqrt();
                self.check_tube(((rho - 1.0).powi(2) + s.z * s.z).sqrt())?;
                Vec3::new(s.x / rho, s.y / rho, 0.0)
            }
            ManifoldKind::Torus { major, minor } => {
                let rho = (s.x * s.x + s.y * s.y).sqrt();
                let tube = ((rho - major).powi(2) + s.z * s.z).sqrt();
                self.check_tube((tube - minor).abs())?;
                let centre = Vec3::new(major * s.x / rho, major * s.y / rho, 0.0);
                centre + (s - centre) * (minor / tube)
            }
            ManifoldKind::Implicit { surface } => {
                let p = project_implicit(surface, s).ok_or_else(|| Error::NonConvergent {
                    what: "implicit nearest-point projection".into(),
                    iterations: PROJECTION_MAX_ITER,
                })?;
                self.check_tube((s - p).norm())?;
                p
            }
        };
        Ok(p)
    }

    fn check_tube(&self, distance: f64) -> Result<()> {
        if distance < self.delta0 {
            Ok(())
        } else {
            Err(Error::OutsideTube { distance, delta0: self.delta0 })
        }
    }

    /// Defining-function value for implicit kinds, distance for presets.
    pub fn surface_level(&self, s: &Vec3) -> f64 {
        match &self.kind {
            ManifoldKind::Implicit { surface } => surface.level(s),
            _ => self.distance(s),
        }
    }

    pub fn contains(&self, s: &Vec3, tol: f64) -> bool {
        self.distance(s) <= tol
    }

    fn require_on(&self, s: &Vec3) -> Result<()> {
        let d = self.distance(s);
        if d <= ON_MANIFOLD_TOL {
            Ok(())
        } else {
            Err(Error::NotOnManifold(d))
        }
    }

    /// Unit vector field used to measure how fast the manifold bends between
    /// two nearby points: the outward normal on surfaces, the unit tangent on
    /// the circle. Defined on the tube.
    pub fn gauss_map(&self, s: &Vec3) -> Vec3 {
        match &self.kind {
            ManifoldKind::Sphere => s / s.norm(),
            ManifoldKind::Circle => {
                let rho = (s.x * s.x + s.y * s.y).sqrt();
                Vec3::new(-s.y / rho, s.x / rho, 0.0)
            }
            ManifoldKind::Torus { major, .. } => {
                let rho = (s.x * s.x + s.y * s.y).sqrt();
                let centre = Vec3::new(major * s.x / rho, major * s.y / rho, 0.0);
                (s - centre).normalize()
            }
            ManifoldKind::Implicit { surface } => surface.gradient(s).normalize(),
        }
    }

    /// Jacobian of [`Self::gauss_map`]; column j is the derivative along eⱼ.
    pub fn gauss_map_jacobian(&self, s: &Vec3) -> Mat3 {
        match &self.kind {
            ManifoldKind::Sphere => {
                let r = s.norm();
                let n = s / r;
                (Mat3::identity() - n * n.transpose()) / r
            }
            _ => {
                let step = 1e-6;
                let mut jac = Mat3::zeros();
                for j in 0..3 {
                    let mut e = Vec3::zeros();
                    e[j] = step;
                    let d = (self.gauss_map(&(s + e)) - self.gauss_map(&(s - e))) / (2.0 * step);
                    jac.set_column(j, &d);
                }
                jac
            }
        }
    }

    /// Unit normal of a two-dimensional manifold at `s`.
    pub fn normal(&self, s: &Vec3) -> Result<Vec3> {
        if self.dim() != 2 {
            return Err(Error::InvalidInput("normal vector requires a surface".into()));
        }
        self.require_on(s)?;
        Ok(self.gauss_map(s))
    }

    pub fn tangent_frame(&self, s: &Vec3) -> Result<TangentFrame> {
        self.require_on(s)?;
        let basis = if self.dim() == 1 {
            vec![self.gauss_map(s)]
        } else {
            let n = self.gauss_map(s);
            // least-aligned coordinate axis keeps the cross product well conditioned
            let mut axis = Vec3::zeros();
            let i = (0..3).min_by(|&i, &j| n[i].abs().total_cmp(&n[j].abs())).unwrap_or(0);
            axis[i] = 1.0;
            let e1 = (axis - n * n.dot(&axis)).normalize();
            let e2 = n.cross(&e1);
            vec![e1, e2]
        };
        Ok(TangentFrame { point: *s, basis })
    }

    fn project_unchecked(&self, s: &Vec3, v: &Vec3) -> Vec3 {
        if self.dim() == 1 {
            let tau = self.gauss_map(s);
            tau * tau.dot(v)
        } else {
            let n = self.gauss_map(s);
            v - n * n.dot(v)
        }
    }

    /// Orthogonal projection onto the tangent space at `s`.
    pub fn tangent_project(&self, s: &Vec3, v: &Vec3) -> Result<Vec3> {
        self.require_on(s)?;
        Ok(self.project_unchecked(s, v))
    }

    /// Column-wise tangent projection of a 3×3 matrix.
    pub fn matrix_tangent_project(&self, s: &Vec3, xi: &Mat3) -> Result<Mat3> {
        self.require_on(s)?;
        Ok(self.project_matrix_unchecked(s, xi))
    }

    fn project_matrix_unchecked(&self, s: &Vec3, xi: &Mat3) -> Mat3 {
        let mut out = Mat3::zeros();
        for j in 0..3 {
            let col: Vec3 = xi.column(j).into();
            out.set_column(j, &self.project_unchecked(s, &col));
        }
        out
    }

    /// Smooth cut-off in the distance to the manifold: 1 up to `delta0/2`,
    /// 0 from `3 delta0/4`, C² smoothstep in between.
    pub fn cutoff_at_distance(&self, r: f64) -> f64 {
        let u = ((r - 0.5 * self.delta0) / (0.25 * self.delta0)).clamp(0.0, 1.0);
        1.0 - u * u * (3.0 - 2.0 * u)
    }

    pub fn cutoff(&self, s: &Vec3) -> f64 {
        self.cutoff_at_distance(self.distance(s))
    }

    /// χ(s)·P_{Π(s)}(ξ), total on ℝ³ × ℝ^{3×3}.
    pub fn extended_project(&self, s: &Vec3, xi: &Mat3) -> Mat3 {
        let r = self.distance(s);
        let chi = self.cutoff_at_distance(r);
        if chi == 0.0 {
            return Mat3::zeros();
        }
        if r <= ON_MANIFOLD_TOL {
            return self.project_matrix_unchecked(s, xi);
        }
        match self.nearest_point(s) {
            Ok(p) => self.project_matrix_unchecked(&p, xi) * chi,
            Err(_) => Mat3::zeros(),
        }
    }

    /// Intrinsic distance between two points of the manifold.
    pub fn geodesic_distance(&self, a: &Vec3, b: &Vec3) -> Result<f64> {
        self.require_on(a)?;
        self.require_on(b)?;
        match &self.kind {
            ManifoldKind::Sphere | ManifoldKind::Circle => Ok(2.0 * (0.5 * (a - b).norm()).min(1.0).asin()),
            _ => {
                if (a - b).norm() < 1e-14 {
                    return Ok(0.0);
                }
                Ok(self.geodesic_path(a, b, geodesic::DISTANCE_SAMPLES)?.length)
            }
        }
    }

    /// Discrete minimizing geodesic from `b` (t = −½) to `a` (t = ½).
    pub fn geodesic_path(&self, a: &Vec3, b: &Vec3, n_samples: usize) -> Result<GeodesicPath> {
        self.require_on(a)?;
        self.require_on(b)?;
        geodesic::shortest_path(self, a, b, n_samples.max(2))
    }

    /// Random point of the manifold (not area-uniform for every kind).
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        match &self.kind {
            ManifoldKind::Sphere => random_unit(rng),
            ManifoldKind::Circle => {
                let t = rng.gen_range(0.0..2.0 * PI);
                Vec3::new(t.cos(), t.sin(), 0.0)
            }
            ManifoldKind::Torus { major, minor } => {
                let u = rng.gen_range(0.0..2.0 * PI);
                let v = rng.gen_range(0.0..2.0 * PI);
                torus_point(*major, *minor, u, v)
            }
            ManifoldKind::Implicit { .. } => {
                let nodes = &self.graph.nodes;
                let base = nodes[rng.gen_range(0..nodes.len())];
                let jitter = random_unit(rng) * (0.25 * self.delta0 * rng.gen::<f64>());
                self.nearest_point(&(base + jitter)).unwrap_or(base)
            }
        }
    }

    fn graph_samples(&self, n: usize) -> Vec<Vec3> {
        match &self.kind {
            ManifoldKind::Sphere => fibonacci_sphere(n),
            ManifoldKind::Circle => (0..n)
                .map(|i| {
                    let t = 2.0 * PI * i as f64 / n as f64;
                    Vec3::new(t.cos(), t.sin(), 0.0)
                })
                .collect(),
            ManifoldKind::Torus { major, minor } => torus_grid(*major, *minor, n),
            ManifoldKind::Implicit { surface } => implicit_samples(self, surface, n),
        }
    }

    /// Sampling checks: the zero set is nonempty and connected at the graph
    /// resolution, and the nearest point is unique across the tube.
    pub fn validate(&self) -> ManifoldValidation {
        let mut issues = Vec::new();
        let graph = &self.graph;
        let components = graph.components();
        if graph.nodes.is_empty() {
            issues.push("no sample points on the manifold".to_string());
        }
        if components != 1 {
            issues.push(format!("sample graph has {components} components"));
        }
        let mut samples = 0;
        let mut failures = 0;
        if self.dim() == 2 {
            let stride = (graph.nodes.len() / 200).max(1);
            for p in graph.nodes.iter().step_by(stride) {
                let n = self.gauss_map(p);
                for frac in [-0.9, -0.5, 0.5, 0.9] {
                    samples += 1;
                    let s = p + n * (frac * self.delta0);
                    match self.nearest_point(&s) {
                        Ok(q) if (q - p).norm() <= 1e-6 * (1.0 + self.delta0) => {}
                        _ => failures += 1,
                    }
                }
            }
        }
        if failures > 0 {
            issues.push(format!("{failures} of {samples} tube samples have a non-unique or wrong nearest point"));
        }
        ManifoldValidation {
            kind: self.kind.name(),
            delta0: self.delta0,
            graph_nodes: graph.nodes.len(),
            components,
            uniqueness_samples: samples,
            uniqueness_failures: failures,
            issues,
        }
    }
}

/// Alternating projection onto a level set: Newton steps along the gradient
/// to reach φ = 0, then a tangential move towards `s` until `s − p` is normal.
fn project_implicit(surface: &ImplicitSurface, s: &Vec3) -> Option<Vec3> {
    let mut p = *s;
    for _ in 0..PROJECTION_MAX_ITER {
        for _ in 0..50 {
            let g = surface.gradient(&p);
            let g2 = g.norm_squared();
            if g2 < 1e-300 {
                return None;
            }
            let phi = surface.level(&p);
            p -= g * (phi / g2);
            if (surface.level(&p) / surface.gradient(&p).norm()).abs() < 1e-14 {
                break;
            }
        }
        let n = surface.gradient(&p).normalize();
        let r = s - p;
        let tangential = r - n * n.dot(&r);
        if tangential.norm() <= 1e-13 * (1.0 + r.norm()) {
            let residual = (surface.level(&p) / surface.gradient(&p).norm()).abs();
            return (residual < 1e-10 && p.iter().all(|c| c.is_finite())).then_some(p);
        }
        p += tangential;
    }
    None
}

pub(crate) fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            Vec3::new(r * t.cos(), r * t.sin(), z)
        })
        .collect()
}

fn torus_point(major: f64, minor: f64, u: f64, v: f64) -> Vec3 {
    let w = major + minor * v.cos();
    Vec3::new(w * u.cos(), w * u.sin(), minor * v.sin())
}

fn torus_grid(major: f64, minor: f64, n: usize) -> Vec<Vec3> {
    // aspect of the parameter grid follows the ratio of the two circles
    let nv = ((n as f64 * minor / major).sqrt().round() as usize).max(4);
    let nu = (n / nv).max(4);
    let mut out = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let u = 2.0 * PI * i as f64 / nu as f64;
            let v = 2.0 * PI * j as f64 / nv as f64;
            out.push(torus_point(major, minor, u, v));
        }
    }
    out
}

fn implicit_samples(spec: &ManifoldSpec, surface: &ImplicitSurface, n: usize) -> Vec<Vec3> {
    let (lo, hi) = surface.bounding_box();
    let extent = hi - lo;
    // cell size chosen so that the surface area is covered by roughly n cells
    let mut cell = (extent.x * extent.y + extent.y * extent.z + extent.x * extent.z).sqrt() / (n as f64).sqrt();
    cell = cell.max(1e-3);
    let counts = extent.map(|e| (e / cell).ceil() as usize + 1);
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for i in 0..counts.x {
        for j in 0..counts.y {
            for k in 0..counts.z {
                let p = lo + Vec3::new(i as f64 * cell, j as f64 * cell, k as f64 * cell);
                let g = surface.gradient(&p);
                let gn = g.norm();
                if gn < 1e-12 || (surface.level(&p) / gn).abs() > cell {
                    continue;
                }
                let Ok(q) = spec.nearest_point(&p) else { continue };
                let key =
                    (((q.x - lo.x) / cell).floor() as i64, ((q.y - lo.y) / cell).floor() as i64, ((q.z - lo.z) / cell).floor() as i64);
                if seen.insert(key) {
                    out.push(q);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    macro_rules! assert_close {
        ($a:expr, $b:expr, $tol:expr) => {{
            let (a, b) = ($a, $b);
            assert!((a - b).norm() <= $tol, "{a:?} vs {b:?}");
        }};
    }

    fn torus() -> ManifoldSpec {
        ManifoldSpec::new(ManifoldKind::Torus { major: 2.0, minor: 0.5 }).unwrap()
    }

    #[test]
    fn sphere_projection_examples() {
        let m = ManifoldSpec::sphere();
        assert_close!(m.nearest_point(&Vec3::new(0.0, 0.0, 1.4)).unwrap(), Vec3::z(), 1e-15);
        assert_close!(m.nearest_point(&Vec3::z()).unwrap(), Vec3::z(), 0.0);
        assert!(matches!(m.nearest_point(&Vec3::new(0.0, 0.0, 2.0)), Err(Error::OutsideTube { .. })));
    }

    #[test]
    fn sphere_projection_with_wide_tube() {
        let m = ManifoldSpec::with_options(ManifoldKind::Sphere, 0.99, 200).unwrap();
        // (0,0,2) is at distance 1, still outside any admissible tube
        assert!(m.nearest_point(&Vec3::new(0.0, 0.0, 2.0)).is_err());
        assert_close!(m.nearest_point(&Vec3::new(0.0, 0.0, 1.9)).unwrap(), Vec3::z(), 1e-15);
    }

    #[test]
    fn torus_nearest_point_matches_dense_search() {
        let m = torus();
        let s = Vec3::new(2.7, 0.0, 0.0);
        let p = m.nearest_point(&s).unwrap();
        // brute force over a dense parameter grid
        let mut best = (f64::INFINITY, Vec3::zeros());
        let n = 2000;
        for i in 0..n {
            for j in 0..n / 4 {
                let q = torus_point(2.0, 0.5, 2.0 * PI * i as f64 / n as f64, 2.0 * PI * j as f64 / (n / 4) as f64);
                let d = (q - s).norm();
                if d < best.0 {
                    best = (d, q);
                }
            }
        }
        assert_close!(p, best.1, 1e-9);
        assert_close!(p, Vec3::new(2.5, 0.0, 0.0), 1e-14);
    }

    #[test]
    fn implicit_torus_agrees_with_preset() {
        let preset = torus();
        let implicit = ManifoldSpec::new(ManifoldKind::Implicit { surface: ImplicitSurface::Torus { major: 2.0, minor: 0.5 } }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = preset.sample_point(&mut rng);
            let s = p + random_unit(&mut rng) * 0.2;
            let a = preset.nearest_point(&s).unwrap();
            let b = implicit.nearest_point(&s).unwrap();
            assert_close!(a, b, 1e-9);
            assert!(implicit.surface_level(&b).abs() < 1e-10);
        }
    }

    #[test]
    fn tangent_projection_examples() {
        let m = ManifoldSpec::sphere();
        let p = m.tangent_project(&Vec3::z(), &Vec3::new(1.0, 2.0, 3.0)).unwrap();
        assert_close!(p, Vec3::new(1.0, 2.0, 0.0), 0.0);
        let s = Vec3::new(0.6, 0.0, 0.8);
        assert_close!(m.tangent_project(&s, &s).unwrap(), Vec3::zeros(), 1e-15);
        assert!(matches!(m.tangent_project(&Vec3::new(0.0, 0.0, 1.1), &Vec3::x()), Err(Error::NotOnManifold(_))));
    }

    #[test]
    fn torus_projection_matches_finite_difference_normal() {
        let m = torus();
        let surface = ImplicitSurface::Torus { major: 2.0, minor: 0.5 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let s = m.sample_point(&mut rng);
            let v = random_unit(&mut rng) * 3.0;
            let h = 1e-6;
            let mut grad = Vec3::zeros();
            for i in 0..3 {
                let mut e = Vec3::zeros();
                e[i] = h;
                grad[i] = (surface.level(&(s + e)) - surface.level(&(s - e))) / (2.0 * h);
            }
            let n = grad.normalize();
            let expected = v - n * n.dot(&v);
            assert_close!(m.tangent_project(&s, &v).unwrap(), expected, 1e-7);
        }
    }

    #[test]
    fn matrix_projection_examples() {
        let m = ManifoldSpec::sphere();
        let s = Vec3::new(0.0, 0.6, 0.8);
        let n = s;
        let xi = Mat3::from_columns(&[n, n, n]);
        assert_close!(m.matrix_tangent_project(&s, &xi).unwrap(), Mat3::zeros(), 1e-15);
        let f = m.tangent_frame(&s).unwrap();
        let t = Mat3::from_columns(&[f.basis[0], f.basis[1] * 2.0, f.basis[0] - f.basis[1]]);
        assert_close!(m.matrix_tangent_project(&s, &t).unwrap(), t, 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xi = Mat3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let p = m.matrix_tangent_project(&Vec3::z(), &xi).unwrap();
        for j in 0..3 {
            let col: Vec3 = xi.column(j).into();
            let expected = m.tangent_project(&Vec3::z(), &col).unwrap();
            assert_close!(Vec3::from(p.column(j)), expected, 0.0);
            assert_eq!(p[(2, j)], 0.0);
        }
    }

    #[test]
    fn extended_projection_branches() {
        let m = ManifoldSpec::sphere();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xi = Mat3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let s = Vec3::new(0.0, 0.6, 0.8);
        assert_eq!(m.extended_project(&s, &xi), m.matrix_tangent_project(&s, &xi).unwrap());
        let far = s * (1.0 + 0.75 * m.delta0());
        assert_eq!(m.extended_project(&far, &xi), Mat3::zeros());
        // midway through the ramp, r = 5/8 delta0, smoothstep at u = 1/2 is 1/2
        let mid = s * (1.0 + 0.625 * m.delta0());
        let expected = m.matrix_tangent_project(&s, &xi).unwrap() * 0.5;
        assert_close!(m.extended_project(&mid, &xi), expected, 1e-14);
    }

    #[test]
    fn tangent_frames_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in [ManifoldSpec::sphere(), torus(), ManifoldSpec::new(ManifoldKind::Circle).unwrap()] {
            for _ in 0..50 {
                let s = m.sample_point(&mut rng);
                let f = m.tangent_frame(&s).unwrap();
                assert_eq!(f.dim(), m.dim());
                for (i, e) in f.basis.iter().enumerate() {
                    assert!((e.norm() - 1.0).abs() < 1e-10);
                    if m.dim() == 2 {
                        assert!(e.dot(&m.normal(&s).unwrap()).abs() < 1e-10);
                    }
                    for e2 in &f.basis[i + 1..] {
                        assert!(e.dot(e2).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn circle_projection_keeps_in_plane_tangent() {
        let m = ManifoldSpec::new(ManifoldKind::Circle).unwrap();
        let p = m.tangent_project(&Vec3::x(), &Vec3::new(1.0, 2.0, 3.0)).unwrap();
        assert_close!(p, Vec3::new(0.0, 2.0, 0.0), 1e-15);
    }

    #[test]
    fn ellipsoid_validates() {
        let m = ManifoldSpec::new(ManifoldKind::Implicit { surface: ImplicitSurface::Ellipsoid { a: 1.2, b: 1.0, c: 0.8 } }).unwrap();
        let report = m.validate();
        assert!(report.passed(), "{report:?}");
        assert!(report.graph_nodes > 100);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(ManifoldSpec::new(ManifoldKind::Torus { major: 0.5, minor: 1.0 }).is_err());
        assert!(ManifoldSpec::with_options(ManifoldKind::Sphere, 1.5, 100).is_err());
    }
}
