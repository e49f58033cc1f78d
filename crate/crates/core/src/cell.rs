//! The thin-film cell problem: the homogenized bulk density Tf⁰_hom(s, ξ_α)
//! and its recession function.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extrapolate::{extrapolate, Extrapolation};
use crate::grid::{EnergyKernel, Grid, Quadrature};
use crate::integrand::{DensityMode, IntegrandSpec};
use crate::manifold::{ManifoldSpec, TangentFrame};
use crate::optim::{minimize, LbfgsOptions, Objective};
use crate::{Mat3, Mat3x2, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellProblemConfig {
    pub t_list: Vec<f64>,
    /// Lateral elements per unit length.
    pub n_xy: usize,
    /// Nodes across the thickness.
    pub n_z: usize,
    /// ε-continuation schedule, relative to |ξ_α|.
    pub smoothing_eps: Vec<f64>,
    pub quadrature: Quadrature,
    pub lbfgs: LbfgsOptions,
    /// Random restarts in addition to φ = 0.
    pub restarts: usize,
    pub seed: u64,
    /// Upper bound on grid nodes per solve.
    pub max_nodes: usize,
    /// Scales τ of the recession estimate max_τ Tf⁰_hom(s, τξ)/τ.
    pub recession_scales: Vec<f64>,
}

impl Default for CellProblemConfig {
    fn default() -> Self {
        CellProblemConfig {
            t_list: vec![1.0, 2.0, 4.0],
            n_xy: 16,
            n_z: 3,
            smoothing_eps: vec![1e-1, 1e-2, 1e-3],
            quadrature: Quadrature::Vertex,
            lbfgs: LbfgsOptions { max_iter: 600, tol_rel: 1e-8, ..Default::default() },
            restarts: 1,
            seed: 0,
            max_nodes: 2_000_000,
            recession_scales: vec![1e2, 1e3],
        }
    }
}

impl CellProblemConfig {
    pub fn validate(&self) -> Result<()> {
        validate_sizes(&self.t_list, self.n_xy, self.n_z, self.max_nodes)?;
        if self.smoothing_eps.is_empty() || self.smoothing_eps.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::InvalidInput("smoothing_eps must be a nonempty list of positive values".into()));
        }
        if self.recession_scales.is_empty() || self.recession_scales.iter().any(|s| !(*s > 1.0)) {
            return Err(Error::InvalidInput("recession_scales must be > 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn validate_sizes(t_list: &[f64], n_xy: usize, n_z: usize, max_nodes: usize) -> Result<()> {
    if t_list.is_empty() || t_list.iter().any(|t| !(*t > 0.0)) || t_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(format!("t_list must be positive and strictly increasing, got {t_list:?}")));
    }
    if n_xy < 2 || n_z < 2 {
        return Err(Error::InvalidInput("need n_xy >= 2 and n_z >= 2".into()));
    }
    for &t in t_list {
        let cells = t * n_xy as f64;
        if (cells - cells.round()).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("t = {t} times n_xy = {n_xy} is not an integer")));
        }
        let side = cells.round() as usize + 1;
        if side * side * n_z > max_nodes {
            return Err(Error::InvalidInput(format!("grid for t = {t} exceeds the node limit {max_nodes}")));
        }
    }
    Ok(())
}

/// One solved cell problem at a fixed size t.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSolve {
    pub t: f64,
    pub value: f64,
    /// Energy of φ = 0.
    pub upper_bound: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// Final unsmoothed energies of φ = 0 and of each random restart.
    pub start_values: Vec<f64>,
    /// Energy at the end of every ε stage of the winning start.
    pub history: Vec<f64>,
    /// Nodes per axis of the minimizer grid.
    pub grid: [usize; 3],
    #[serde(skip)]
    pub minimizer: Vec<Vec3>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub s: [f64; 3],
    /// Columns ξ₁, ξ₂ of ξ_α.
    pub xi_alpha: [[f64; 3]; 2],
    pub per_t: Vec<CellSolve>,
    pub extrapolation: Extrapolation,
    pub value: f64,
    pub lower_bound: f64,
    pub converged: bool,
}

fn tangency_residual(manifold: &ManifoldSpec, s: &Vec3, xi: &Mat3x2) -> Result<f64> {
    let mut r: f64 = 0.0;
    for j in 0..2 {
        let c: Vec3 = xi.column(j).into();
        r = r.max((c - manifold.tangent_project(s, &c)?).norm());
    }
    Ok(r)
}

pub(crate) fn check_tangent(manifold: &ManifoldSpec, s: &Vec3, xi: &Mat3x2) -> Result<()> {
    let r = tangency_residual(manifold, s, xi)?;
    if r > 1e-8 * (1.0 + xi.norm()) {
        return Err(Error::NonTangentInput(r));
    }
    Ok(())
}

fn cell_grid(t: f64, n_xy: usize, n_z: usize) -> Result<Grid> {
    let side = (t * n_xy as f64).round() as usize + 1;
    Grid::new([side, side, n_z], [t, t, 1.0], Vec3::new(-0.5 * t, -0.5 * t, -0.5))
}

struct CellObjective<'a> {
    kernel: EnergyKernel<'a>,
    frame: &'a TangentFrame,
    free: Vec<usize>,
    n_nodes: usize,
    eps: f64,
    scale: f64,
}

impl CellObjective<'_> {
    fn field(&self, x: &[f64]) -> Vec<Vec3> {
        let d = self.frame.dim();
        let mut u = vec![Vec3::zeros(); self.n_nodes];
        for (slot, &node) in self.free.iter().enumerate() {
            u[node] = self.frame.embed(&x[d * slot..d * slot + d]);
        }
        u
    }

    fn energy_exact(&self, x: &[f64]) -> f64 {
        self.kernel.energy(&self.field(x), 0.0, None)
    }
}

impl Objective for CellObjective<'_> {
    fn dim(&self) -> usize {
        self.free.len() * self.frame.dim()
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let u = self.field(x);
        let mut gu = vec![Vec3::zeros(); self.n_nodes];
        let v = self.kernel.energy(&u, self.eps, Some(&mut gu));
        let d = self.frame.dim();
        for (slot, &node) in self.free.iter().enumerate() {
            for (k, e) in self.frame.basis.iter().enumerate() {
                grad[d * slot + k] = e.dot(&gu[node]);
            }
        }
        v
    }

    fn step_scale(&self) -> f64 {
        self.scale
    }
}

/// Minimize the cell energy at size t. φ = 0 is always a candidate, so the
/// value never exceeds the energy of the unperturbed gradient.
pub fn solve_cell(
    manifold: &ManifoldSpec,
    integrand: &IntegrandSpec,
    s: &Vec3,
    xi_alpha: &Mat3x2,
    t: f64,
    config: &CellProblemConfig,
    seed: u64,
) -> Result<CellSolve> {
    solve_cell_mode(manifold, integrand, DensityMode::Bulk, s, xi_alpha, t, config, seed)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn solve_cell_mode(
    manifold: &ManifoldSpec,
    integrand: &IntegrandSpec,
    mode: DensityMode,
    s: &Vec3,
    xi_alpha: &Mat3x2,
    t: f64,
    config: &CellProblemConfig,
    seed: u64,
) -> Result<CellSolve> {
    validate_sizes(&[t], config.n_xy, config.n_z, config.max_nodes)?;
    integrand.ensure_mode(mode)?;
    let frame = manifold.tangent_frame(s)?;
    check_tangent(manifold, s, xi_alpha)?;

    let grid = cell_grid(t, config.n_xy, config.n_z)?;
    let mut kernel = EnergyKernel::new(&grid, integrand, mode);
    kernel.offset = Mat3::from_columns(&[xi_alpha.column(0).into(), xi_alpha.column(1).into(), Vec3::zeros()]);
    kernel.weight = 1.0 / (t * t);
    kernel.quadrature = config.quadrature;
    let free: Vec<usize> = (0..grid.len()).filter(|&i| !grid.is_lateral_boundary(i)).collect();
    let xi_norm = xi_alpha.norm();
    let eps_scale = xi_norm.max(1e-2);
    let mut obj = CellObjective {
        kernel,
        frame: &frame,
        free,
        n_nodes: grid.len(),
        eps: config.smoothing_eps[0] * eps_scale,
        scale: 0.5 * eps_scale,
    };
    let dim = obj.dim();
    let zero = vec![0.0; dim];
    let upper_bound = obj.energy_exact(&zero);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![zero.clone()];
    for _ in 0..config.restarts {
        starts.push((0..dim).map(|_| rng.gen_range(-0.5..0.5) * 0.2 * eps_scale).collect());
    }

    let mut best: Option<(f64, Vec<f64>, Vec<f64>, usize, f64, bool)> = None;
    let mut start_values = Vec::new();
    for mut x in starts {
        let mut history = Vec::new();
        let mut iterations = 0;
        let mut grad_norm = 0.0;
        let mut converged = true;
        for &eps in &config.smoothing_eps {
            obj.eps = eps * eps_scale;
            let rep = minimize(&obj, &mut x, &config.lbfgs);
            iterations += rep.iterations;
            grad_norm = rep.grad_norm;
            converged = rep.converged;
            history.push(obj.energy_exact(&x));
        }
        let value = *history.last().unwrap_or(&f64::INFINITY);
        start_values.push(value);
        if best.as_ref().is_none_or(|b| value < b.0) {
            best = Some((value, x, history, iterations, grad_norm, converged));
        }
    }
    let (mut value, mut x, history, iterations, grad_norm, converged) = best.expect("at least one start");
    if !(value <= upper_bound) {
        value = upper_bound;
        x = zero;
    }
    Ok(CellSolve { t, value, upper_bound, iterations, grad_norm, converged, start_values, history, grid: grid.n, minimizer: obj.field(&x) })
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.gen()
}

fn xi_columns(xi: &Mat3x2) -> [[f64; 3]; 2] {
    [0, 1].map(|j| [xi[(0, j)], xi[(1, j)], xi[(2, j)]])
}

/// Tf⁰_hom(s, ξ_α): solve over the configured cell sizes and extrapolate.
pub fn hom_density(
    manifold: &ManifoldSpec,
    integrand: &IntegrandSpec,
    s: &Vec3,
    xi_alpha: &Mat3x2,
    config: &CellProblemConfig,
) -> Result<CellResult> {
    hom_density_mode(manifold, integrand, DensityMode::Bulk, s, xi_alpha, config)
}

fn hom_density_mode(
    manifold: &ManifoldSpec,
    integrand: &IntegrandSpec,
    mode: DensityMode,
    s: &Vec3,
    xi_alpha: &Mat3x2,
    config: &CellProblemConfig,
) -> Result<CellResult> {
    config.validate()?;
    let per_t: Vec<CellSolve> = config
        .t_list
        .par_iter()
        .enumerate()
        .map(|(i, &t)| solve_cell_mode(manifold, integrand, mode, s, xi_alpha, t, config, sub_seed(config.seed, i as u64)))
        .collect::<Result<_>>()?;
    let lower_bound = integrand.constants().alpha * xi_alpha.norm();
    let points: Vec<(f64, f64)> = per_t.iter().map(|c| (c.t, c.value)).collect();
    let extrapolation = extrapolate(&points, lower_bound);
    Ok(CellResult {
        s: [s.x, s.y, s.z],
        xi_alpha: xi_columns(xi_alpha),
        value: extrapolation.value,
        converged: per_t.iter().all(|c| c.converged),
        per_t,
        extrapolation,
        lower_bound,
    })
}

/// Tf^{0,∞}_hom(s, ξ_α). For integrands that are 1-homogeneous in ξ the
/// density is itself 1-homogeneous and is returned directly; otherwise the
/// largest of Tf⁰_hom(s, τξ_α)/τ over the configured scales.
pub fn hom_recession(
    manifold: &ManifoldSpec,
    integrand: &IntegrandSpec,
    s: &Vec3,
    xi_alpha: &Mat3x2,
    config: &CellProblemConfig,
) -> Result<f64> {
    if xi_alpha.norm() == 0.0 {
        check_tangent(manifold, s, xi_alpha)?;
        return Ok(0.0);
    }
    if integrand.is_one_homogeneous() {
        return Ok(hom_density(manifold, integrand, s, xi_alpha, config)?.value);
    }
    let mut best = f64::NEG_INFINITY;
    for &tau in &config.recession_scales {
        let r = hom_density(manifold, integrand, s, &(xi_alpha * tau), config)?;
        best = best.max(r.value / tau);
    }
    Ok(best)
}

/// Tangent gradients ξ_α = [Σ_k c_k1 e_k | Σ_k c_k2 e_k] in the frame at s,
/// coordinates ordered (c11, c21, c12, c22). On a curve only c11 and c12
/// are used.
pub fn xi_from_coords(frame: &TangentFrame, c: &[f64; 4]) -> Mat3x2 {
    let d = frame.dim();
    let col1 = frame.embed(&c[0..d]);
    let col2 = frame.embed(&c[2..2 + d]);
    Mat3x2::from_columns(&[col1, col2])
}

pub fn coords_from_xi(frame: &TangentFrame, xi: &Mat3x2) -> [f64; 4] {
    let mut out = [0.0; 4];
    for j in 0..2 {
        let col: Vec3 = xi.column(j).into();
        for (k, v) in frame.coordinates(&col).into_iter().enumerate() {
            out[2 * j + k] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::Builtin;

    fn quick() -> CellProblemConfig {
        CellProblemConfig { t_list: vec![1.0, 2.0], n_xy: 8, ..Default::default() }
    }

    #[test]
    fn zero_gradient_has_zero_density() {
        let m = ManifoldSpec::sphere();
        let f = IntegrandSpec::norm();
        let r = hom_density(&m, &f, &Vec3::z(), &Mat3x2::zeros(), &quick()).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(hom_recession(&m, &f, &Vec3::z(), &Mat3x2::zeros(), &quick()).unwrap(), 0.0);
    }

    #[test]
    fn norm_density_is_the_norm() {
        let m = ManifoldSpec::sphere();
        let f = IntegrandSpec::norm();
        let xi = Mat3x2::new(1.0, 0.3, 0.0, -0.5, 0.0, 0.0);
        let r = hom_density(&m, &f, &Vec3::z(), &xi, &quick()).unwrap();
        assert!((r.value - xi.norm()).abs() < 1e-3 * xi.norm(), "{}", r.value);
        for c in &r.per_t {
            assert!(c.value <= c.upper_bound);
        }
    }

    #[test]
    fn non_tangent_input_is_rejected() {
        let m = ManifoldSpec::sphere();
        let xi = Mat3x2::new(0.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        let e = solve_cell(&m, &IntegrandSpec::norm(), &Vec3::z(), &xi, 1.0, &quick(), 0);
        assert!(matches!(e, Err(Error::NonTangentInput(_))));
    }

    #[test]
    fn two_phase_concentrates() {
        let m = ManifoldSpec::sphere();
        let f = IntegrandSpec::builtin(Builtin::TwoPhase { a1: 2.0, a2: 1.0 }).unwrap();
        let xi = Mat3x2::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let c = quick();
        let v1 = solve_cell(&m, &f, &Vec3::z(), &xi, 2.0, &c, 0).unwrap();
        assert!(v1.value < 1.45 && v1.value >= 1.0, "{}", v1.value);
    }

    #[test]
    fn frame_coordinates_round_trip() {
        let m = ManifoldSpec::sphere();
        let s = Vec3::new(0.0, 0.6, 0.8);
        let frame = m.tangent_frame(&s).unwrap();
        let c = [0.3, -1.0, 2.0, 0.5];
        let xi = xi_from_coords(&frame, &c);
        let back = coords_from_xi(&frame, &xi);
        for k in 0..4 {
            assert!((back[k] - c[k]).abs() < 1e-14);
        }
    }
}
