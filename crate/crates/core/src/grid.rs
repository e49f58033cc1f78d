//! Tensor grids and the discrete energy shared by every solver: trilinear
//! elements, per-element gradients and an integrand evaluated at quadrature
//! points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrand::{DensityMode, IntegrandSpec};
use crate::manifold::ManifoldSpec;
use crate::{Mat3, Vec3};

/// Quadrature of the element energy.
///
/// `Vertex` averages the integrand over the eight corners, each corner using
/// the three element edges that meet there. `Midpoint` evaluates once with the
/// edge-averaged gradient; it is cheaper but does not see checkerboard modes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    #[default]
    Vertex,
    Midpoint,
}

/// Regular node grid on a box, node (i, j, k) at origin + (i·d₀, j·d₁, k·d₂).
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub n: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: Vec3,
}

impl Grid {
    pub fn new(n: [usize; 3], lengths: [f64; 3], origin: Vec3) -> Result<Self> {
        if n.iter().any(|&k| k < 2) || lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidInput(format!("grid needs >= 2 nodes and positive lengths, got {n:?} {lengths:?}")));
        }
        let spacing = [0, 1, 2].map(|a| lengths[a] / (n[a] - 1) as f64);
        Ok(Grid { n, spacing, origin })
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n[0] * (j + self.n[1] * k)
    }

    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.n[0];
        let j = (idx / self.n[0]) % self.n[1];
        [i, j, idx / (self.n[0] * self.n[1])]
    }

    pub fn coords(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64 * self.spacing[0], j as f64 * self.spacing[1], k as f64 * self.spacing[2])
    }

    pub fn node_coords(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.ijk(idx);
        self.coords(i, j, k)
    }

    /// On one of the four faces orthogonal to the first two axes.
    pub fn is_lateral_boundary(&self, idx: usize) -> bool {
        let [i, j, _] = self.ijk(idx);
        i == 0 || j == 0 || i + 1 == self.n[0] || j + 1 == self.n[1]
    }

    pub fn element_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn elements(&self) -> usize {
        (self.n[0] - 1) * (self.n[1] - 1) * (self.n[2] - 1)
    }

    fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.n[0],
            _ => self.n[0] * self.n[1],
        }
    }
}

/// asin(z)/z and its derivative in z.
pub(crate) fn arc_factor(z: f64) -> (f64, f64) {
    if z < 1e-3 {
        let z2 = z * z;
        (1.0 + z2 / 6.0 + 3.0 * z2 * z2 / 40.0, z / 3.0 + 0.3 * z2 * z)
    } else {
        let z = z.min(1.0 - 1e-9);
        let a = z.asin();
        (a / z, 1.0 / (z * (1.0 - z * z).sqrt()) - a / (z * z))
    }
}

/// The discretized energy weight·Σ_elements ∫ f(P·y, G_grid·T + offset) for a
/// nodal field u, with y the grid coordinate.
///
/// With a manifold attached, every edge difference u_j − u_i is stretched
/// by asin(w/2)/(w/2), w = |n(u_j) − n(u_i)| the turn of the Gauss map, so a
/// single edge between two points of a great circle carries their arc length
/// instead of their chord.
#[derive(Clone, Debug)]
pub struct EnergyKernel<'a> {
    pub grid: &'a Grid,
    pub integrand: &'a IntegrandSpec,
    pub mode: DensityMode,
    pub transform: Mat3,
    pub offset: Mat3,
    pub point_map: Mat3,
    pub weight: f64,
    pub quadrature: Quadrature,
    pub manifold: Option<&'a ManifoldSpec>,
}

impl<'a> EnergyKernel<'a> {
    pub fn new(grid: &'a Grid, integrand: &'a IntegrandSpec, mode: DensityMode) -> Self {
        EnergyKernel {
            grid,
            integrand,
            mode,
            transform: Mat3::identity(),
            offset: Mat3::zeros(),
            point_map: Mat3::identity(),
            weight: 1.0,
            quadrature: Quadrature::Vertex,
            manifold: None,
        }
    }

    /// Energy with ε-smoothing (ε = 0 gives the exact density), accumulating
    /// ∂E/∂u into `grad` when requested.
    pub fn energy(&self, u: &[Vec3], eps: f64, mut grad: Option<&mut [Vec3]>) -> f64 {
        let g = self.grid;
        assert_eq!(u.len(), g.len(), "field size does not match grid");
        let n_nodes = g.len();
        let want_grad = grad.is_some();

        let gauss: Option<(Vec<Vec3>, Vec<Mat3>)> = self.manifold.map(|m| {
            let normals: Vec<Vec3> = u.iter().map(|p| m.gauss_map(p)).collect();
            let jac = if want_grad { u.iter().map(|p| m.gauss_map_jacobian(p)).collect() } else { Vec::new() };
            (normals, jac)
        });

        // scaled edge differences, indexed by the lower node
        let mut diff: [Vec<Vec3>; 3] = Default::default();
        let mut stretch: [Vec<(f64, f64)>; 3] = Default::default();
        for a in 0..3 {
            let stride = g.stride(a);
            let inv = 1.0 / g.spacing[a];
            diff[a] = vec![Vec3::zeros(); n_nodes];
            if gauss.is_some() {
                stretch[a] = vec![(1.0, 0.0); n_nodes];
            }
            for idx in 0..n_nodes {
                if g.ijk(idx)[a] + 1 == g.n[a] {
                    continue;
                }
                let d = u[idx + stride] - u[idx];
                let lambda = match &gauss {
                    Some((normals, _)) => {
                        let w = (normals[idx + stride] - normals[idx]).norm();
                        let (l, dl) = arc_factor(0.5 * w);
                        stretch[a][idx] = (l, dl);
                        l
                    }
                    None => 1.0,
                };
                diff[a][idx] = d * (lambda * inv);
            }
        }

        let mut ddiff: Option<[Vec<Vec3>; 3]> =
            want_grad.then(|| [vec![Vec3::zeros(); n_nodes], vec![Vec3::zeros(); n_nodes], vec![Vec3::zeros(); n_nodes]]);

        let t_tr = self.transform.transpose();
        let vol = g.element_volume();
        let mut total = 0.0;
        for k in 0..g.n[2] - 1 {
            for j in 0..g.n[1] - 1 {
                for i in 0..g.n[0] - 1 {
                    let centre = g.coords(i, j, k) + Vec3::new(0.5 * g.spacing[0], 0.5 * g.spacing[1], 0.5 * g.spacing[2]);
                    let x = self.point_map * centre;
                    match self.quadrature {
                        Quadrature::Vertex => {
                            let c = self.weight * vol / 8.0;
                            for corner in 0..8 {
                                let cb = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
                                let mut edges = [0usize; 3];
                                let mut gg = Mat3::zeros();
                                for a in 0..3 {
                                    let mut p = [i + cb[0], j + cb[1], k + cb[2]];
                                    p[a] = [i, j, k][a];
                                    edges[a] = g.index(p[0], p[1], p[2]);
                                    gg.set_column(a, &diff[a][edges[a]]);
                                }
                                let xi = gg * self.transform + self.offset;
                                let (v, dv) = self.integrand.smoothed(self.mode, &x, &xi, eps);
                                total += c * v;
                                if let Some(dd) = ddiff.as_mut() {
                                    let back = dv * t_tr * c;
                                    for a in 0..3 {
                                        dd[a][edges[a]] += back.column(a);
                                    }
                                }
                            }
                        }
                        Quadrature::Midpoint => {
                            let c = self.weight * vol;
                            let mut gg = Mat3::zeros();
                            let mut edges = [[0usize; 4]; 3];
                            for a in 0..3 {
                                let (b1, b2) = ((a + 1) % 3, (a + 2) % 3);
                                let mut col = Vec3::zeros();
                                for (q, e) in edges[a].iter_mut().enumerate() {
                                    let mut p = [i, j, k];
                                    p[b1] += q & 1;
                                    p[b2] += (q >> 1) & 1;
                                    *e = g.index(p[0], p[1], p[2]);
                                    col += diff[a][*e];
                                }
                                gg.set_column(a, &(col * 0.25));
                            }
                            let xi = gg * self.transform + self.offset;
                            let (v, dv) = self.integrand.smoothed(self.mode, &x, &xi, eps);
                            total += c * v;
                            if let Some(dd) = ddiff.as_mut() {
                                let back = dv * t_tr * (0.25 * c);
                                for a in 0..3 {
                                    for &e in &edges[a] {
                                        dd[a][e] += back.column(a);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }

        if let (Some(out), Some(dd)) = (grad.as_deref_mut(), ddiff) {
            for a in 0..3 {
                let stride = g.stride(a);
                let inv = 1.0 / g.spacing[a];
                for idx in 0..n_nodes {
                    if g.ijk(idx)[a] + 1 == g.n[a] {
                        continue;
                    }
                    let up = dd[a][idx];
                    if up == Vec3::zeros() {
                        continue;
                    }
                    let hi = idx + stride;
                    let d = u[hi] - u[idx];
                    match &gauss {
                        Some((normals, jac)) => {
                            let (l, dl) = stretch[a][idx];
                            out[hi] += up * (l * inv);
                            out[idx] -= up * (l * inv);
                            let dn = normals[hi] - normals[idx];
                            let w = dn.norm();
                            if w > 0.0 {
                                // λ depends on z = w/2
                                let coeff = inv * up.dot(&d) * dl * 0.5 / w;
                                out[hi] += jac[hi].transpose() * dn * coeff;
                                out[idx] -= jac[idx].transpose() * dn * coeff;
                            }
                        }
                        None => {
                            out[hi] += up * inv;
                            out[idx] -= up * inv;
                        }
                    }
                }
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::Builtin;
    use std::f64::consts::FRAC_PI_2;

    fn sphere_field(g: &Grid) -> Vec<Vec3> {
        (0..g.len())
            .map(|idx| {
                let p = g.node_coords(idx);
                Vec3::new(1.0 + 0.3 * p.x, 0.2 * p.y - 0.1 * p.z, 0.5 + p.x * p.y).normalize()
            })
            .collect()
    }

    fn check_gradient(kernel: &EnergyKernel, u: &[Vec3], eps: f64) {
        let mut grad = vec![Vec3::zeros(); u.len()];
        kernel.energy(u, eps, Some(&mut grad));
        let h = 1e-6;
        for idx in [0, 3, u.len() / 2, u.len() - 1] {
            for c in 0..3 {
                let mut up = u.to_vec();
                up[idx][c] += h;
                let mut dn = u.to_vec();
                dn[idx][c] -= h;
                let fd = (kernel.energy(&up, eps, None) - kernel.energy(&dn, eps, None)) / (2.0 * h);
                assert!((fd - grad[idx][c]).abs() < 1e-6 * (1.0 + fd.abs()), "node {idx} comp {c}: fd {fd} vs {}", grad[idx][c]);
            }
        }
    }

    #[test]
    fn affine_field_is_exact() {
        let g = Grid::new([4, 5, 3], [1.0, 2.0, 1.0], Vec3::zeros()).unwrap();
        let f = IntegrandSpec::norm();
        let a = Mat3::new(1.0, 2.0, 0.5, -1.0, 0.0, 3.0, 0.2, 0.1, 0.0);
        let u: Vec<Vec3> = (0..g.len()).map(|i| a * g.node_coords(i)).collect();
        for q in [Quadrature::Vertex, Quadrature::Midpoint] {
            let mut k = EnergyKernel::new(&g, &f, DensityMode::Bulk);
            k.quadrature = q;
            assert!((k.energy(&u, 0.0, None) - 2.0 * a.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = Grid::new([4, 3, 3], [1.0, 1.0, 1.0], Vec3::new(0.1, -0.2, -0.5)).unwrap();
        let f = IntegrandSpec::builtin_weighted(Builtin::Oscillatory { c0: 2.0, c1: 0.5 }, [1.0, 1.5, 0.7]).unwrap();
        let u = sphere_field(&g);
        let m = ManifoldSpec::sphere();
        for q in [Quadrature::Vertex, Quadrature::Midpoint] {
            let mut k = EnergyKernel::new(&g, &f, DensityMode::Bulk);
            k.quadrature = q;
            k.transform = Mat3::new(0.6, 0.8, 0.0, -0.8, 0.6, 0.0, 0.0, 0.0, 4.0);
            k.offset = Mat3::from_element(0.1);
            check_gradient(&k, &u, 1e-2);
            k.manifold = Some(&m);
            check_gradient(&k, &u, 1e-2);
        }
    }

    #[test]
    fn torus_correction_gradient() {
        use crate::manifold::ManifoldKind;
        let m = ManifoldSpec::new(ManifoldKind::Torus { major: 2.0, minor: 0.5 }).unwrap();
        let g = Grid::new([3, 3, 2], [1.0, 1.0, 1.0], Vec3::zeros()).unwrap();
        let u: Vec<Vec3> = (0..g.len())
            .map(|i| {
                let p = g.node_coords(i);
                let (a, b) = (0.4 * p.x + 0.1 * p.z, 0.7 * p.y);
                Vec3::new((2.0 + 0.5 * b.cos()) * a.cos(), (2.0 + 0.5 * b.cos()) * a.sin(), 0.5 * b.sin())
            })
            .collect();
        let f = IntegrandSpec::norm();
        let mut k = EnergyKernel::new(&g, &f, DensityMode::Recession);
        k.manifold = Some(&m);
        let mut grad = vec![Vec3::zeros(); u.len()];
        k.energy(&u, 1e-2, Some(&mut grad));
        let h = 1e-5;
        for idx in [0, 4, 17] {
            for c in 0..3 {
                let mut up = u.clone();
                up[idx][c] += h;
                let mut dn = u.clone();
                dn[idx][c] -= h;
                let fd = (k.energy(&up, 1e-2, None) - k.energy(&dn, 1e-2, None)) / (2.0 * h);
                assert!((fd - grad[idx][c]).abs() < 1e-4 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn sharp_step_costs_the_arc() {
        // a field jumping from b to a across one layer of elements
        let g = Grid::new([5, 3, 2], [1.0, 1.0, 1.0], Vec3::zeros()).unwrap();
        let f = IntegrandSpec::norm();
        let m = ManifoldSpec::sphere();
        let u: Vec<Vec3> = (0..g.len()).map(|i| if g.ijk(i)[0] >= 2 { Vec3::x() } else { Vec3::y() }).collect();
        let mut k = EnergyKernel::new(&g, &f, DensityMode::Recession);
        assert!((k.energy(&u, 0.0, None) - 2f64.sqrt()).abs() < 1e-12);
        k.manifold = Some(&m);
        assert!((k.energy(&u, 0.0, None) - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn arc_factor_is_smooth_at_the_switch() {
        let (a, da) = arc_factor(1e-3 - 1e-12);
        let (b, db) = arc_factor(1e-3 + 1e-12);
        assert!((a - b).abs() < 1e-12);
        assert!((da - db).abs() < 1e-9);
    }
}
