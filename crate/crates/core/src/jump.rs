//! The jump density θ(a, b, ν): optimal manifold-valued transition layers
//! between two traces, in the cell-size form 𝓐_t and the thickness form 𝓑_h.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extrapolate::{extrapolate, Extrapolation};
use crate::geodesic::{GeodesicPath, DISTANCE_SAMPLES};
use crate::grid::{EnergyKernel, Grid, Quadrature};
use crate::integrand::{DensityMode, IntegrandSpec};
use crate::manifold::{ManifoldKind, ManifoldSpec};
use crate::optim::{minimize, LbfgsOptions, Objective};
use crate::{Mat3, Vec2, Vec3};

/// Endpoints closer than this are treated as equal: θ = 0.
pub const DEGENERATE_JUMP: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JumpProblemConfig {
    pub t_list: Vec<f64>,
    pub h_list: Vec<f64>,
    /// Lateral elements per unit length of the 𝓐-form cell; the 𝓑-form
    /// uses n_xy elements per length h.
    pub n_xy: usize,
    pub n_z: usize,
    /// ε-continuation schedule, relative to |a − b|.
    pub smoothing_eps: Vec<f64>,
    pub quadrature: Quadrature,
    pub lbfgs: LbfgsOptions,
    /// Also solve the 𝓑-form and report the discrepancy.
    pub cross_check: bool,
    pub max_nodes: usize,
    /// Relative tolerance used by the structural checks.
    pub tolerance: f64,
}

impl Default for JumpProblemConfig {
    fn default() -> Self {
        JumpProblemConfig {
            t_list: vec![1.0, 2.0, 4.0],
            h_list: vec![1.0, 0.5, 0.25],
            n_xy: 8,
            n_z: 3,
            smoothing_eps: vec![1e-1, 1e-2, 1e-3],
            quadrature: Quadrature::Vertex,
            lbfgs: LbfgsOptions { max_iter: 3000, tol_rel: 1e-8, ..Default::default() },
            cross_check: true,
            max_nodes: 2_000_000,
            tolerance: 1e-2,
        }
    }
}

impl JumpProblemConfig {
    pub fn validate(&self) -> Result<()> {
        crate::cell::validate_sizes(&self.t_list, self.n_xy, self.n_z, self.max_nodes)?;
        let inv: Vec<f64> = self.h_list.iter().map(|h| 1.0 / h).collect();
        if self.h_list.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::InvalidInput("h_list must be positive".into()));
        }
        let mut sorted = inv.clone();
        sorted.sort_by(f64::total_cmp);
        crate::cell::validate_sizes(&sorted, self.n_xy, self.n_z, self.max_nodes)?;
        if self.smoothing_eps.is_empty() || self.smoothing_eps.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::InvalidInput("smoothing_eps must be a nonempty list of positive values".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput("tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JumpForm {
    A,
    B,
}

/// One solved transition problem at fixed t (𝓐-form) or h (𝓑-form).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpSolve {
    pub form: JumpForm,
    /// t for the 𝓐-form, h for the 𝓑-form.
    pub size: f64,
    pub value: f64,
    /// Energy of the initial geodesic profile.
    pub initial_value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub history: Vec<f64>,
    pub grid: [usize; 3],
    /// Node spacing of the reference grid, whose first axis runs along ν.
    pub spacing: [f64; 3],
    #[serde(skip)]
    pub minimizer: Vec<Vec3>,
}

impl JumpSolve {
    fn zero(form: JumpForm, size: f64) -> Self {
        JumpSolve {
            form,
            size,
            value: 0.0,
            initial_value: 0.0,
            iterations: 0,
            grad_norm: 0.0,
            converged: true,
            history: Vec::new(),
            grid: [0; 3],
            spacing: [0.0; 3],
            minimizer: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormResult {
    pub per_size: Vec<JumpSolve>,
    pub extrapolation: Extrapolation,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpResult {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub nu: [f64; 2],
    pub geodesic_distance: f64,
    pub lower_bound: f64,
    /// θ, from the 𝓐-form.
    pub value: f64,
    pub form_a: FormResult,
    pub form_b: Option<FormResult>,
    /// |θ_A − θ_B| / θ_A
    pub ab_discrepancy: Option<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Unit normal, or an error when a genuine jump has no direction.
fn unit_normal(a: &Vec3, b: &Vec3, nu: &Vec2) -> Result<Option<Vec2>> {
    let n = nu.norm();
    let degenerate = (a - b).norm() < DEGENERATE_JUMP;
    if !(n > 1e-12) || !n.is_finite() {
        if degenerate {
            return Ok(None);
        }
        return Err(Error::BoundaryConflict(format!("normal {nu:?} is degenerate for distinct traces")));
    }
    Ok(Some(nu / n))
}

/// Grid-axis to physical-column map for a ν-aligned grid: y₁ = x·ν,
/// y₂ = x·ν⊥, y₃ = x₃ scaled by `z_scale`.
fn rotation(nu: &Vec2, z_scale: f64) -> Mat3 {
    Mat3::new(nu.x, nu.y, 0.0, -nu.y, nu.x, 0.0, 0.0, 0.0, z_scale)
}

pub(crate) struct LayerObjective<'a> {
    pub(crate) kernel: EnergyKernel<'a>,
    pub(crate) manifold: &'a ManifoldSpec,
    pub(crate) free: Vec<usize>,
    pub(crate) fixed: Vec<Vec3>,
    pub(crate) eps: f64,
    pub(crate) scale: f64,
}

impl LayerObjective<'_> {
    pub(crate) fn field(&self, x: &[f64]) -> Vec<Vec3> {
        let mut u = self.fixed.clone();
        for (slot, &node) in self.free.iter().enumerate() {
            u[node] = Vec3::new(x[3 * slot], x[3 * slot + 1], x[3 * slot + 2]);
        }
        u
    }

    fn pack(&self, u: &[Vec3]) -> Vec<f64> {
        self.free.iter().flat_map(|&n| [u[n].x, u[n].y, u[n].z]).collect()
    }

    fn exact(&self, x: &[f64]) -> f64 {
        self.kernel.energy(&self.field(x), 0.0, None)
    }
}

impl Objective for LayerObjective<'_> {
    fn dim(&self) -> usize {
        3 * self.free.len()
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let u = self.field(x);
        let mut gu = vec![Vec3::zeros(); u.len()];
        let v = self.kernel.energy(&u, self.eps, Some(&mut gu));
        for (slot, &node) in self.free.iter().enumerate() {
            grad[3 * slot..3 * slot + 3].copy_from_slice(gu[node].as_slice());
        }
        v
    }

    fn project(&self, x: &[f64], v: &mut [f64]) {
        let curve = self.manifold.dim() == 1;
        for slot in 0..self.free.len() {
            let p = Vec3::new(x[3 * slot], x[3 * slot + 1], x[3 * slot + 2]);
            let w = Vec3::new(v[3 * slot], v[3 * slot + 1], v[3 * slot + 2]);
            let e = self.manifold.gauss_map(&p);
            let r = if curve { e * e.dot(&w) } else { w - e * e.dot(&w) };
            v[3 * slot..3 * slot + 3].copy_from_slice(r.as_slice());
        }
    }

    fn retract(&self, x: &mut [f64]) -> bool {
        for slot in 0..self.free.len() {
            let p = Vec3::new(x[3 * slot], x[3 * slot + 1], x[3 * slot + 2]);
            match self.manifold.nearest_point(&p) {
                Ok(q) => x[3 * slot..3 * slot + 3].copy_from_slice(q.as_slice()),
                Err(_) => return false,
            }
        }
        true
    }

    fn step_scale(&self) -> f64 {
        self.scale
    }
}

pub(crate) fn run_layer(
    obj: &mut LayerObjective,
    init: &[Vec3],
    schedule: &[f64],
    scale: f64,
    lbfgs: &LbfgsOptions,
) -> (f64, f64, Vec<f64>, usize, f64, bool, Vec<f64>) {
    let mut x = obj.pack(init);
    let initial = obj.exact(&x);
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut grad_norm = 0.0;
    let mut converged = true;
    let mut best = (initial, x.clone());
    for &eps in schedule {
        obj.eps = eps * scale;
        let rep = minimize(obj, &mut x, lbfgs);
        iterations += rep.iterations;
        grad_norm = rep.grad_norm;
        converged = rep.converged;
        let e = obj.exact(&x);
        history.push(e);
        if e < best.0 {
            best = (e, x.clone());
        }
    }
    (best.0, initial, history, iterations, grad_norm, converged, best.1)
}

fn check_endpoints(manifold: &ManifoldSpec, a: &Vec3, b: &Vec3) -> Result<()> {
    for p in [a, b] {
        let d = manifold.distance(p);
        if !(d <= crate::manifold::ON_MANIFOLD_TOL) {
            return Err(Error::NotOnManifold(d));
        }
    }
    Ok(())
}

/// 𝓐-form at cell size t: (1/t)∫ f^∞(x, ∇φ) over (tQ_ν)×(−½,½) with φ = a
/// on the lateral boundary where x·ν > 0 and b where x·ν ≤ 0.
pub fn solve_jump_a(
    manifold: &ManifoldSpec,
    integrand: &IntegrandSpec,
    a: &Vec3,
    b: &Vec3,
    nu: &Vec2,
    t: f64,
    config: &JumpProblemConfig,
) -> Result<JumpSolve> {
    check_endpoints(manifold, a, b)?;
    let Some(nu) = unit_normal(a, b, nu)? else {
        return Ok(JumpSolve::zero(JumpForm::A, t));
    };
    if (a - b).norm() < DEGENERATE_JUMP {
        return Ok(JumpSolve::zero(JumpForm::A, t));
    }
    integrand.ensure_mode(DensityMode::Recession)?;
    crate::cell::validate_sizes(&[t], config.n_xy, config.n_z, config.max_nodes)?;
    let path = manifold.geodesic_path(a, b, DISTANCE_SAMPLES)?;
    solve_layer(manifold, integrand, &path, &nu, JumpForm::A, t, config)
}

/// 𝓑-form at thickness h: ∫ f^∞(x_α/h, x₃, ∇_h u) over Q_ν×(−½,½) with
/// lateral trace γ(x·ν/h), γ the computed geodesic from b to a.
pub fn solve_jump_b(
    manifold: &ManifoldSpec,
    integrand: &IntegrandSpec,
    a: &Vec3,
    b: &Vec3,
    nu: &Vec2,
    h: f64,
    config: &JumpProblemConfig,
) -> Result<JumpSolve> {
    check_endpoints(manifold, a, b)?;
    let Some(nu) = unit_normal(a, b, nu)? else {
        return Ok(JumpSolve::zero(JumpForm::B, h));
    };
    if (a - b).norm() < DEGENERATE_JUMP {
        return Ok(JumpSolve::zero(JumpForm::B, h));
    }
    integrand.ensure_mode(DensityMode::Recession)?;
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("h must be positive, got {h}")));
    }
    crate::cell::validate_sizes(&[1.0 / h], config.n_xy, config.n_z, config.max_nodes)?;
    let path = manifold.geodesic_path(a, b, DISTANCE_SAMPLES)?;
    solve_layer(manifold, integrand, &path, &nu, JumpForm::B, h, config)
}

fn solve_layer(
    manifold: &ManifoldSpec,
    integrand: &IntegrandSpec,
    path: &GeodesicPath,
    nu: &Vec2,
    form: JumpForm,
    size: f64,
    config: &JumpProblemConfig,
) -> Result<JumpSolve> {
    let (a, b) = (path.a, path.b);
    let (side, cells, z_scale, weight, point_scale) = match form {
        JumpForm::A => (size, (size * config.n_xy as f64).round() as usize, 1.0, 1.0 / size, 1.0),
        JumpForm::B => (1.0, (config.n_xy as f64 / size).round() as usize, 1.0 / size, 1.0, 1.0 / size),
    };
    let grid = Grid::new([cells + 1, cells + 1, config.n_z], [side, side, 1.0], Vec3::new(-0.5 * side, -0.5 * side, -0.5))?;
    let mut kernel = EnergyKernel::new(&grid, integrand, DensityMode::Recession);
    kernel.transform = rotation(nu, z_scale);
    let rot = rotation(nu, 1.0).transpose();
    kernel.point_map = Mat3::from_diagonal(&Vec3::new(point_scale, point_scale, 1.0)) * rot;
    kernel.weight = weight;
    kernel.quadrature = config.quadrature;
    kernel.manifold = Some(manifold);

    let tol = 1e-12 * side;
    let width = match form {
        JumpForm::A => 0.25 * size,
        JumpForm::B => size,
    };
    let mut fixed = Vec::with_capacity(grid.len());
    let mut init = Vec::with_capacity(grid.len());
    let mut free = Vec::new();
    for idx in 0..grid.len() {
        let y = grid.node_coords(idx);
        let profile = path.eval(manifold, y.x / width);
        if grid.is_lateral_boundary(idx) {
            let v = match form {
                JumpForm::A => {
                    if y.x > tol {
                        a
                    } else {
                        b
                    }
                }
                JumpForm::B => profile,
            };
            fixed.push(v);
            init.push(v);
        } else {
            fixed.push(Vec3::zeros());
            init.push(profile);
            free.push(idx);
        }
    }
    let gap = (a - b).norm();
    let mut obj = LayerObjective { kernel, manifold, free, fixed, eps: 0.0, scale: gap.clamp(1e-3, 1.0) };
    let (value, initial, history, iterations, grad_norm, converged, x) =
        run_layer(&mut obj, &init, &config.smoothing_eps, gap, &config.lbfgs);
    Ok(JumpSolve {
        form,
        size,
        value,
        initial_value: initial,
        iterations,
        grad_norm,
        converged,
        history,
        grid: grid.n,
        spacing: grid.spacing,
        minimizer: obj.field(&x),
    })
}

/// θ(a, b, ν) from the 𝓐-form over `t_list`, optionally cross-checked by
/// the 𝓑-form over `h_list`.
pub fn theta(
    manifold: &ManifoldSpec,
    integrand: &IntegrandSpec,
    a: &Vec3,
    b: &Vec3,
    nu: &Vec2,
    config: &JumpProblemConfig,
) -> Result<JumpResult> {
    config.validate()?;
    check_endpoints(manifold, a, b)?;
    let unit = unit_normal(a, b, nu)?;
    let nu_out = unit.unwrap_or(*nu);
    let mut warnings = Vec::new();
    if unit.is_none() || (a - b).norm() < DEGENERATE_JUMP {
        let zero_form = |form, sizes: &[f64]| {
            let per_size: Vec<JumpSolve> = sizes.iter().map(|&s| JumpSolve::zero(form, s)).collect();
            let pts: Vec<(f64, f64)> = sizes.iter().map(|&s| (s, 0.0)).collect();
            FormResult { per_size, extrapolation: extrapolate(&pts, 0.0), value: 0.0 }
        };
        return Ok(JumpResult {
            a: [a.x, a.y, a.z],
            b: [b.x, b.y, b.z],
            nu: [nu_out.x, nu_out.y],
            geodesic_distance: 0.0,
            lower_bound: 0.0,
            value: 0.0,
            form_a: zero_form(JumpForm::A, &config.t_list),
            form_b: config.cross_check.then(|| zero_form(JumpForm::B, &config.h_list)),
            ab_discrepancy: config.cross_check.then_some(0.0),
            converged: true,
            warnings,
        });
    }
    let nu = nu_out;
    integrand.ensure_mode(DensityMode::Recession)?;
    let path = manifold.geodesic_path(a, b, DISTANCE_SAMPLES)?;
    let distance = manifold.geodesic_distance(a, b)?;
    if matches!(manifold.kind(), ManifoldKind::Sphere | ManifoldKind::Circle) && distance > std::f64::consts::PI - 1e-3 {
        warnings.push("endpoints are nearly antipodal: the boundary geodesic is not unique".to_string());
    }
    let lower_bound = integrand.constants().alpha * distance;

    let per_t: Vec<JumpSolve> =
        config.t_list.par_iter().map(|&t| solve_layer(manifold, integrand, &path, &nu, JumpForm::A, t, config)).collect::<Result<_>>()?;
    let pts: Vec<(f64, f64)> = per_t.iter().map(|s| (s.size, s.value)).collect();
    let ex = extrapolate(&pts, lower_bound);
    let form_a = FormResult { value: ex.value, extrapolation: ex, per_size: per_t };

    let form_b = if config.cross_check {
        let per_h: Vec<JumpSolve> = config
            .h_list
            .par_iter()
            .map(|&h| solve_layer(manifold, integrand, &path, &nu, JumpForm::B, h, config))
            .collect::<Result<_>>()?;
        let pts: Vec<(f64, f64)> = per_h.iter().map(|s| (1.0 / s.size, s.value)).collect();
        let ex = extrapolate(&pts, lower_bound);
        Some(FormResult { value: ex.value, extrapolation: ex, per_size: per_h })
    } else {
        None
    };
    let value = form_a.value;
    let ab_discrepancy = form_b.as_ref().map(|fb| (value - fb.value).abs() / value.max(1e-300));
    let converged = form_a.per_size.iter().chain(form_b.iter().flat_map(|f| f.per_size.iter())).all(|s| s.converged);
    Ok(JumpResult {
        a: [a.x, a.y, a.z],
        b: [b.x, b.y, b.z],
        nu: [nu.x, nu.y],
        geodesic_distance: distance,
        lower_bound,
        value,
        form_a,
        form_b,
        ab_discrepancy,
        converged,
        warnings,
    })
}

/// θ over every (a, b, ν) of endpoint × endpoint × normal grids, computed in
/// parallel and returned in input order (ν slowest, then a, then b).
pub fn theta_grid(
    manifold: &ManifoldSpec,
    integrand: &IntegrandSpec,
    endpoints: &[Vec3],
    normals: &[Vec2],
    config: &JumpProblemConfig,
) -> Result<Vec<JumpResult>> {
    if endpoints.is_empty() || normals.is_empty() {
        return Err(Error::InvalidInput("endpoint and normal grids must be nonempty".into()));
    }
    let mut jobs = Vec::new();
    for nu in normals {
        for a in endpoints {
            for b in endpoints {
                jobs.push((*a, *b, *nu));
            }
        }
    }
    jobs.par_iter().map(|(a, b, nu)| theta(manifold, integrand, a, b, nu, config)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaPropertyReport {
    pub endpoints: usize,
    pub normals: usize,
    pub tolerance: f64,
    /// max |θ(a,b,ν) − θ(b,a,−ν)| / max(θ(a,b,ν), θ(b,a,−ν), 1)
    pub symmetry_residual: f64,
    /// max θ(a,b,ν)/|a − b|
    pub c2: f64,
    /// max |θ(a₁,b₁,ν) − θ(a₂,b₂,ν)| / (|a₁−a₂| + |b₁−b₂|)
    pub c1: f64,
    /// The same quotient on the grid of the first half of the endpoints.
    pub c1_coarse: f64,
    pub min_theta: f64,
    pub diagonal_max: f64,
    pub entries: Vec<JumpResult>,
    pub mirrored: Vec<JumpResult>,
    pub violations: Vec<String>,
}

impl ThetaPropertyReport {
    pub fn ensure_ok(&self) -> Result<()> {
        if self.violations.is_empty() {
            Ok(())
        } else {
            Err(Error::PropertyViolation(self.violations.clone()))
        }
    }
}

fn lipschitz_quotient(entries: &[JumpResult], endpoints: &[Vec3], n_end: usize, used: usize, n_nu: usize) -> f64 {
    let mut c1: f64 = 0.0;
    for k in 0..n_nu {
        let block = &entries[k * n_end * n_end..(k + 1) * n_end * n_end];
        for i1 in 0..used {
            for j1 in 0..used {
                for i2 in 0..used {
                    for j2 in 0..used {
                        let den = (endpoints[i1] - endpoints[i2]).norm() + (endpoints[j1] - endpoints[j2]).norm();
                        if den > 1e-12 {
                            let num = (block[i1 * n_end + j1].value - block[i2 * n_end + j2].value).abs();
                            c1 = c1.max(num / den);
                        }
                    }
                }
            }
        }
    }
    c1
}

/// Symmetry, endpoint-Lipschitz and distance bounds of θ on a grid.
pub fn check_theta_properties(
    manifold: &ManifoldSpec,
    integrand: &IntegrandSpec,
    endpoints: &[Vec3],
    normals: &[Vec2],
    config: &JumpProblemConfig,
) -> Result<ThetaPropertyReport> {
    let entries = theta_grid(manifold, integrand, endpoints, normals, config)?;
    let flipped: Vec<Vec2> = normals.iter().map(|n| -n).collect();
    let mirrored = theta_grid(manifold, integrand, endpoints, &flipped, config)?;
    let n = endpoints.len();
    let mut violations = Vec::new();
    let mut symmetry: f64 = 0.0;
    let mut c2: f64 = 0.0;
    let mut min_theta = f64::INFINITY;
    let mut diagonal: f64 = 0.0;
    for k in 0..normals.len() {
        for i in 0..n {
            for j in 0..n {
                let e = &entries[(k * n + i) * n + j];
                let m = &mirrored[(k * n + j) * n + i];
                let r = (e.value - m.value).abs() / e.value.max(m.value).max(1.0);
                if r > config.tolerance {
                    violations
                        .push(format!("symmetry: theta(a{i},b{j},nu{k}) = {:.6} but theta(b{j},a{i},-nu{k}) = {:.6}", e.value, m.value));
                }
                symmetry = symmetry.max(r);
                min_theta = min_theta.min(e.value);
                let gap = (endpoints[i] - endpoints[j]).norm();
                if gap < DEGENERATE_JUMP {
                    diagonal = diagonal.max(e.value);
                } else {
                    c2 = c2.max(e.value / gap);
                }
                if !e.value.is_finite() || e.value < 0.0 {
                    violations.push(format!("theta(a{i},b{j},nu{k}) = {} is not a finite nonnegative value", e.value));
                }
            }
        }
    }
    if diagonal > 0.0 {
        violations.push(format!("theta(a,a,nu) = {diagonal} is not zero"));
    }
    let c1 = lipschitz_quotient(&entries, endpoints, n, n, normals.len());
    let c1_coarse = lipschitz_quotient(&entries, endpoints, n, n.div_ceil(2), normals.len());
    if !c1.is_finite() || !c2.is_finite() {
        violations.push("endpoint constants are not finite".into());
    }
    if c1_coarse > 0.0 && c1 > 2.0 * c1_coarse {
        violations.push(format!("endpoint Lipschitz quotient unstable under refinement: {c1_coarse:.4} -> {c1:.4}"));
    }
    Ok(ThetaPropertyReport {
        endpoints: n,
        normals: normals.len(),
        tolerance: config.tolerance,
        symmetry_residual: symmetry,
        c2,
        c1,
        c1_coarse,
        min_theta,
        diagonal_max: diagonal,
        entries,
        mirrored,
        violations,
    })
}
