//! Tabulated effective densities: Tf⁰_hom and Tf^{0,∞}_hom over (s, ξ_α)
//! grids, θ over (a, b, ν) grids, their lookup rules and the structural
//! checks run on a bulk table.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{coords_from_xi, hom_density, hom_recession, xi_from_coords, CellProblemConfig};
use crate::error::{Error, Result};
use crate::extrapolate::ExtrapolationMethod;
use crate::integrand::IntegrandSpec;
use crate::jump::JumpResult;
use crate::manifold::ManifoldSpec;
use crate::{Mat3x2, Vec2, Vec3};

/// Tangent-coordinate grid for ξ_α, coordinates ordered (c11, c21, c12, c22)
/// as in [`xi_from_coords`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum XiGrid {
    /// Product of four increasing axes; lookups interpolate multilinearly.
    Tensor { axes: [Vec<f64>; 4] },
    /// Scattered points; lookups must hit a point.
    List { points: Vec<[f64; 4]> },
}

impl XiGrid {
    /// Every ξ along `direction` scaled by `magnitudes`.
    pub fn rank_one(direction: [f64; 4], magnitudes: &[f64]) -> Self {
        XiGrid::List { points: magnitudes.iter().map(|m| direction.map(|c| c * m)).collect() }
    }

    pub fn points(&self) -> Vec<[f64; 4]> {
        match self {
            XiGrid::List { points } => points.clone(),
            XiGrid::Tensor { axes } => {
                let mut out = Vec::new();
                for &a in &axes[0] {
                    for &b in &axes[1] {
                        for &c in &axes[2] {
                            for &d in &axes[3] {
                                out.push([a, b, c, d]);
                            }
                        }
                    }
                }
                out
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            XiGrid::List { points } => points.len(),
            XiGrid::Tensor { axes } => axes.iter().map(Vec::len).product(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidInput("xi grid is empty".into()));
        }
        if let XiGrid::Tensor { axes } = self {
            for axis in axes {
                if axis.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidInput("tensor axes must be strictly increasing".into()));
                }
            }
        }
        Ok(())
    }
}

/// A bulk density usable by the limit functional.
pub trait BulkDensity: Sync {
    fn bulk(&self, s: &Vec3, xi_alpha: &Mat3x2) -> Result<f64>;
}

/// A jump density usable by the limit functional; `a` is the trace on the
/// side ν points to.
pub trait JumpDensity: Sync {
    fn jump(&self, a: &Vec3, b: &Vec3, nu: &Vec2) -> Result<f64>;
}

impl<F: Fn(&Vec3, &Mat3x2) -> f64 + Sync> BulkDensity for F {
    fn bulk(&self, s: &Vec3, xi: &Mat3x2) -> Result<f64> {
        Ok(self(s, xi))
    }
}

/// Closure adapter for [`JumpDensity`].
pub struct JumpFn<F>(pub F);

impl<F: Fn(&Vec3, &Vec3, &Vec2) -> f64 + Sync> JumpDensity for JumpFn<F> {
    fn jump(&self, a: &Vec3, b: &Vec3, nu: &Vec2) -> Result<f64> {
        Ok((self.0)(a, b, nu))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityEntry {
    pub s_index: usize,
    pub xi_index: usize,
    pub s: [f64; 3],
    pub coords: [f64; 4],
    pub xi_alpha: [[f64; 3]; 2],
    pub per_t: Vec<f64>,
    pub bulk: f64,
    pub recession: Option<f64>,
    pub lower_bound: f64,
    pub method: Option<ExtrapolationMethod>,
    pub converged: bool,
    pub flags: Vec<String>,
}

impl DensityEntry {
    pub fn ok(&self) -> bool {
        self.bulk.is_finite() && !self.flags.iter().any(|f| f.starts_with("error"))
    }

    fn xi(&self) -> Mat3x2 {
        Mat3x2::from_columns(&[Vec3::from(self.xi_alpha[0]), Vec3::from(self.xi_alpha[1])])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    pub manifold: String,
    pub integrand: String,
    pub one_homogeneous: bool,
    pub s_points: Vec<[f64; 3]>,
    /// Lookups snap to the nearest tabulated s within this distance.
    pub s_radius: f64,
    pub xi_grid: XiGrid,
    pub t_list: Vec<f64>,
    pub entries: Vec<DensityEntry>,
    pub provenance: Option<String>,
}

fn default_s_radius(points: &[Vec3]) -> f64 {
    if points.len() < 2 {
        return 1e-6;
    }
    points
        .iter()
        .enumerate()
        .map(|(i, p)| points.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, q)| (p - q).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
        .max(1e-6)
}

/// Tf⁰_hom (and optionally Tf^{0,∞}_hom) on every (s, ξ_α) of the product
/// grid, computed in parallel and stored in input order. Failed entries are
/// kept with an error flag.
pub fn tabulate_density(
    manifold: &ManifoldSpec,
    integrand: &IntegrandSpec,
    s_points: &[Vec3],
    xi_grid: &XiGrid,
    config: &CellProblemConfig,
    with_recession: bool,
) -> Result<DensityTable> {
    if s_points.is_empty() {
        return Err(Error::InvalidInput("s grid is empty".into()));
    }
    xi_grid.validate()?;
    config.validate()?;
    let xis = xi_grid.points();
    let jobs: Vec<(usize, usize)> = (0..s_points.len()).flat_map(|i| (0..xis.len()).map(move |j| (i, j))).collect();
    let entries: Vec<DensityEntry> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let s = s_points[i];
            let coords = xis[j];
            let mut entry = DensityEntry {
                s_index: i,
                xi_index: j,
                s: [s.x, s.y, s.z],
                coords,
                xi_alpha: [[f64::NAN; 3]; 2],
                per_t: Vec::new(),
                bulk: f64::NAN,
                recession: None,
                lower_bound: 0.0,
                method: None,
                converged: false,
                flags: Vec::new(),
            };
            let frame = match manifold.tangent_frame(&s) {
                Ok(f) => f,
                Err(e) => {
                    entry.flags.push(format!("error: {e}"));
                    return entry;
                }
            };
            let xi = xi_from_coords(&frame, &coords);
            entry.xi_alpha = [0, 1].map(|c| [xi[(0, c)], xi[(1, c)], xi[(2, c)]]);
            match hom_density(manifold, integrand, &s, &xi, config) {
                Ok(r) => {
                    entry.per_t = r.per_t.iter().map(|c| c.value).collect();
                    entry.bulk = r.value;
                    entry.lower_bound = r.lower_bound;
                    entry.method = Some(r.extrapolation.method);
                    entry.converged = r.converged;
                    if !r.converged {
                        entry.flags.push("nonconvergent".into());
                    }
                    if r.extrapolation.method == ExtrapolationMethod::Minimum {
                        entry.flags.push("fit-rejected".into());
                    }
                    if r.extrapolation.clamped {
                        entry.flags.push("clamped".into());
                    }
                }
                Err(e) => {
                    entry.flags.push(format!("error: {e}"));
                    return entry;
                }
            }
            if with_recession {
                match hom_recession(manifold, integrand, &s, &xi, config) {
                    Ok(v) => entry.recession = Some(v),
                    Err(e) => entry.flags.push(format!("error: recession: {e}")),
                }
            }
            entry
        })
        .collect();
    Ok(DensityTable {
        manifold: manifold.kind().name(),
        integrand: integrand.tag(),
        one_homogeneous: integrand.is_one_homogeneous(),
        s_points: s_points.iter().map(|s| [s.x, s.y, s.z]).collect(),
        s_radius: default_s_radius(s_points),
        xi_grid: xi_grid.clone(),
        t_list: config.t_list.clone(),
        entries,
        provenance: None,
    })
}

/// Bracketing index and weight of `v` on an increasing axis.
fn bracket(axis: &[f64], v: f64, tol: f64) -> Option<(usize, f64)> {
    let (first, last) = (axis[0], axis[axis.len() - 1]);
    if v < first - tol || v > last + tol {
        return None;
    }
    if axis.len() == 1 {
        return Some((0, 0.0));
    }
    let v = v.clamp(first, last);
    let i = axis.partition_point(|&a| a <= v).clamp(1, axis.len() - 1) - 1;
    Some((i, (v - axis[i]) / (axis[i + 1] - axis[i])))
}

impl DensityTable {
    pub fn entry(&self, s_index: usize, xi_index: usize) -> &DensityEntry {
        &self.entries[s_index * self.xi_grid.len() + xi_index]
    }

    pub fn with_s_radius(mut self, radius: f64) -> Self {
        self.s_radius = radius;
        self
    }

    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| !e.ok()).count()
    }

    fn locate(&self, s: &Vec3) -> Result<usize> {
        let (k, d) = self
            .s_points
            .iter()
            .enumerate()
            .map(|(k, p)| (k, (Vec3::from(*p) - s).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::TableCoverage("empty table".into()))?;
        if d > self.s_radius {
            return Err(Error::TableCoverage(format!("s = {s:?} is {d:.3e} from the nearest tabulated point")));
        }
        Ok(k)
    }

    fn value_at(&self, k: usize, j: usize, recession: bool) -> Result<f64> {
        let e = self.entry(k, j);
        let v = if recession { e.recession.unwrap_or(f64::NAN) } else { e.bulk };
        if !v.is_finite() {
            return Err(Error::TableCoverage(format!("entry ({k}, {j}) has no value")));
        }
        Ok(v)
    }

    fn lookup(&self, manifold: &ManifoldSpec, s: &Vec3, xi_alpha: &Mat3x2, recession: bool) -> Result<f64> {
        if self.one_homogeneous && xi_alpha.norm() <= 1e-14 {
            return Ok(0.0);
        }
        let k = self.locate(s)?;
        let frame = manifold.tangent_frame(&Vec3::from(self.s_points[k]))?;
        let c = coords_from_xi(&frame, xi_alpha);
        let tol = 1e-9 * (1.0 + xi_alpha.norm());
        match &self.xi_grid {
            XiGrid::List { points } => {
                let j = points
                    .iter()
                    .position(|p| p.iter().zip(&c).all(|(a, b)| (a - b).abs() <= tol))
                    .ok_or_else(|| Error::TableCoverage(format!("xi coordinates {c:?} are not tabulated")))?;
                self.value_at(k, j, recession)
            }
            XiGrid::Tensor { axes } => {
                let mut br = [(0usize, 0.0); 4];
                for a in 0..4 {
                    br[a] = bracket(&axes[a], c[a], tol).ok_or_else(|| {
                        Error::TableCoverage(format!(
                            "xi coordinate {} = {} outside [{}, {}]",
                            a,
                            c[a],
                            axes[a][0],
                            axes[a][axes[a].len() - 1]
                        ))
                    })?;
                }
                let sizes: [usize; 4] = std::array::from_fn(|a| axes[a].len());
                let mut total = 0.0;
                for corner in 0..16 {
                    let mut w = 1.0;
                    let mut idx = 0;
                    for a in 0..4 {
                        let hi = (corner >> a) & 1;
                        let (i, f) = br[a];
                        if hi == 1 && sizes[a] == 1 {
                            w = 0.0;
                            break;
                        }
                        w *= if hi == 1 { f } else { 1.0 - f };
                        idx = idx * sizes[a] + i + hi;
                    }
                    if w != 0.0 {
                        total += w * self.value_at(k, idx, recession)?;
                    }
                }
                Ok(total)
            }
        }
    }

    /// Bulk density at (s, ξ_α): nearest tabulated s, then interpolation in
    /// the tangent coordinates of that point.
    pub fn bulk_at(&self, manifold: &ManifoldSpec, s: &Vec3, xi_alpha: &Mat3x2) -> Result<f64> {
        self.lookup(manifold, s, xi_alpha, false)
    }

    pub fn recession_at(&self, manifold: &ManifoldSpec, s: &Vec3, xi_alpha: &Mat3x2) -> Result<f64> {
        self.lookup(manifold, s, xi_alpha, true)
    }

    /// Bind the manifold needed for lookups.
    pub fn bound<'a>(&'a self, manifold: &'a ManifoldSpec) -> BoundDensityTable<'a> {
        BoundDensityTable { table: self, manifold }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["s1", "s2", "s3", "c11", "c21", "c12", "c22"].iter().map(|s| s.to_string()).collect();
        for c in 1..=2 {
            for r in 1..=3 {
                header.push(format!("xi{r}{c}"));
            }
        }
        header.extend(self.t_list.iter().map(|t| format!("t={t}")));
        header.extend(["bulk", "recession", "method", "flags", "provenance"].iter().map(|s| s.to_string()));
        w.write_record(&header).map_err(csv_err)?;
        for e in &self.entries {
            let mut row: Vec<String> = e.s.iter().chain(&e.coords).map(|v| v.to_string()).collect();
            row.extend(e.xi_alpha.iter().flatten().map(|v| v.to_string()));
            for i in 0..self.t_list.len() {
                row.push(e.per_t.get(i).map(|v| v.to_string()).unwrap_or_default());
            }
            row.push(e.bulk.to_string());
            row.push(e.recession.map(|v| v.to_string()).unwrap_or_default());
            row.push(e.method.map(method_name).unwrap_or_default());
            row.push(e.flags.join(";"));
            row.push(self.provenance.clone().unwrap_or_default());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub struct BoundDensityTable<'a> {
    pub table: &'a DensityTable,
    pub manifold: &'a ManifoldSpec,
}

impl BulkDensity for BoundDensityTable<'_> {
    fn bulk(&self, s: &Vec3, xi_alpha: &Mat3x2) -> Result<f64> {
        self.table.bulk_at(self.manifold, s, xi_alpha)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn method_name(m: ExtrapolationMethod) -> String {
    match m {
        ExtrapolationMethod::Single => "single",
        ExtrapolationMethod::Fit => "fit",
        ExtrapolationMethod::TailFit => "tail-fit",
        ExtrapolationMethod::Minimum => "minimum",
    }
    .to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEntry {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub nu: [f64; 2],
    pub theta: f64,
    pub theta_b: Option<f64>,
    pub per_t: Vec<f64>,
    pub per_h: Vec<f64>,
    pub geodesic_distance: f64,
    pub method: ExtrapolationMethod,
    pub converged: bool,
    pub flags: Vec<String>,
}

impl From<&JumpResult> for JumpEntry {
    fn from(r: &JumpResult) -> Self {
        let mut flags = r.warnings.clone();
        if !r.converged {
            flags.push("nonconvergent".into());
        }
        if r.form_a.extrapolation.method == ExtrapolationMethod::Minimum {
            flags.push("fit-rejected".into());
        }
        if r.form_a.extrapolation.clamped {
            flags.push("clamped".into());
        }
        JumpEntry {
            a: r.a,
            b: r.b,
            nu: r.nu,
            theta: r.value,
            theta_b: r.form_b.as_ref().map(|f| f.value),
            per_t: r.form_a.per_size.iter().map(|s| s.value).collect(),
            per_h: r.form_b.iter().flat_map(|f| f.per_size.iter().map(|s| s.value)).collect(),
            geodesic_distance: r.geodesic_distance,
            method: r.form_a.extrapolation.method,
            converged: r.converged,
            flags,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpTable {
    pub manifold: String,
    pub integrand: String,
    pub t_list: Vec<f64>,
    pub h_list: Vec<f64>,
    /// Endpoints match a tabulated pair within this distance.
    pub endpoint_tol: f64,
    pub entries: Vec<JumpEntry>,
    pub provenance: Option<String>,
}

impl JumpTable {
    pub fn from_results(
        manifold: &ManifoldSpec,
        integrand: &IntegrandSpec,
        config: &crate::jump::JumpProblemConfig,
        results: &[JumpResult],
    ) -> Self {
        JumpTable {
            manifold: manifold.kind().name(),
            integrand: integrand.tag(),
            t_list: config.t_list.clone(),
            h_list: if config.cross_check { config.h_list.clone() } else { Vec::new() },
            endpoint_tol: 1e-6,
            entries: results.iter().map(JumpEntry::from).collect(),
            provenance: None,
        }
    }

    /// θ(a, b, ν). A tabulated (a, b) pair is used as is or through the
    /// symmetry (b, a, −ν); between tabulated normals θ is interpolated
    /// linearly in the angle of ν.
    pub fn theta_at(&self, a: &Vec3, b: &Vec3, nu: &Vec2) -> Result<f64> {
        if (a - b).norm() < crate::jump::DEGENERATE_JUMP {
            return Ok(0.0);
        }
        let near = |p: &[f64; 3], q: &Vec3| (Vec3::from(*p) - q).norm() <= self.endpoint_tol;
        let mut samples: Vec<(f64, f64)> = Vec::new();
        for e in &self.entries {
            if !e.theta.is_finite() {
                continue;
            }
            let n = Vec2::from(e.nu);
            if near(&e.a, a) && near(&e.b, b) {
                samples.push((n.y.atan2(n.x), e.theta));
            } else if near(&e.a, b) && near(&e.b, a) {
                samples.push(((-n.y).atan2(-n.x), e.theta));
            }
        }
        if samples.is_empty() {
            return Err(Error::TableCoverage(format!("no tabulated jump between {a:?} and {b:?}")));
        }
        let phi = nu.y.atan2(nu.x);
        let wrap = |d: f64| (d + PI).rem_euclid(TAU) - PI;
        if let Some(s) = samples.iter().find(|s| wrap(s.0 - phi).abs() <= 1e-9) {
            return Ok(s.1);
        }
        // nearest tabulated normal on each side, gaps below π only
        let below = samples.iter().filter(|s| wrap(phi - s.0) > 0.0).min_by(|x, y| wrap(phi - x.0).total_cmp(&wrap(phi - y.0)));
        let above = samples.iter().filter(|s| wrap(s.0 - phi) > 0.0).min_by(|x, y| wrap(x.0 - phi).total_cmp(&wrap(y.0 - phi)));
        match (below, above) {
            (Some(lo), Some(hi)) => {
                let (dl, dh) = (wrap(phi - lo.0), wrap(hi.0 - phi));
                if dl + dh >= PI {
                    return Err(Error::TableCoverage(format!("normal angle {phi:.4} is not bracketed")));
                }
                Ok((lo.1 * dh + hi.1 * dl) / (dl + dh))
            }
            _ => Err(Error::TableCoverage(format!("normal angle {phi:.4} is not bracketed"))),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> =
            ["a1", "a2", "a3", "b1", "b2", "b3", "nu1", "nu2", "geodesic_distance"].iter().map(|s| s.to_string()).collect();
        header.extend(self.t_list.iter().map(|t| format!("t={t}")));
        header.extend(self.h_list.iter().map(|h| format!("h={h}")));
        header.extend(["theta", "theta_b", "method", "flags", "provenance"].iter().map(|s| s.to_string()));
        w.write_record(&header).map_err(csv_err)?;
        for e in &self.entries {
            let mut row: Vec<String> = e.a.iter().chain(&e.b).chain(&e.nu).map(|v| v.to_string()).collect();
            row.push(e.geodesic_distance.to_string());
            for i in 0..self.t_list.len() {
                row.push(e.per_t.get(i).map(|v| v.to_string()).unwrap_or_default());
            }
            for i in 0..self.h_list.len() {
                row.push(e.per_h.get(i).map(|v| v.to_string()).unwrap_or_default());
            }
            row.push(e.theta.to_string());
            row.push(e.theta_b.map(|v| v.to_string()).unwrap_or_default());
            row.push(method_name(e.method));
            row.push(e.flags.join(";"));
            row.push(self.provenance.clone().unwrap_or_default());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl JumpDensity for JumpTable {
    fn jump(&self, a: &Vec3, b: &Vec3, nu: &Vec2) -> Result<f64> {
        self.theta_at(a, b, nu)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityPropertyOptions {
    /// Rank-one lines sampled for the convexity check.
    pub lines: usize,
    /// Step of the five-point stencil, relative to 1 + |ξ_α|.
    pub line_step: f64,
    /// Absolute tolerance, scaled by 1 + |ξ_α|.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for DensityPropertyOptions {
    fn default() -> Self {
        DensityPropertyOptions { lines: 20, line_step: 0.25, tolerance: 2e-3, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankOneLine {
    pub s: [f64; 3],
    pub xi_alpha: [[f64; 3]; 2],
    pub c: [f64; 3],
    pub m: [f64; 2],
    pub lambdas: Vec<f64>,
    pub values: Vec<f64>,
    pub min_second_difference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityPropertyReport {
    pub entries: usize,
    pub sandwich_violations: usize,
    /// Largest |Tf(s,ξ) − Tf(s,ξ′)|/|ξ − ξ′| over entries sharing s.
    pub lipschitz_quotient: f64,
    pub lipschitz_bound: f64,
    pub lines: Vec<RankOneLine>,
    /// Largest |Tf⁰ − Tf^{0,∞}| / (C(1 + |ξ|^{1−q})).
    pub recession_gap_ratio: Option<f64>,
    pub violations: Vec<String>,
}

impl DensityPropertyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn ensure_ok(&self) -> Result<()> {
        if self.passed() {
            Ok(())
        } else {
            Err(Error::PropertyViolation(self.violations.clone()))
        }
    }
}

/// Growth sandwich, ξ-Lipschitz bound and recession gap on every entry of
/// `table`, and convexity of Tf⁰_hom along sampled tangent rank-one lines
/// through tabulated points.
pub fn check_density_properties(
    manifold: &ManifoldSpec,
    integrand: &IntegrandSpec,
    table: &DensityTable,
    config: &CellProblemConfig,
    opts: &DensityPropertyOptions,
) -> Result<DensityPropertyReport> {
    let c = integrand.constants();
    let mut violations = Vec::new();
    let mut sandwich = 0;
    for e in &table.entries {
        if !e.ok() {
            violations.push(format!("entry ({}, {}) failed: {}", e.s_index, e.xi_index, e.flags.join(";")));
            continue;
        }
        let r = e.xi().norm();
        let tol = opts.tolerance * (1.0 + r);
        if e.bulk < c.alpha * r - tol || e.bulk > c.beta * (1.0 + r) + tol {
            sandwich += 1;
            violations.push(format!(
                "GrowthViolation at entry ({}, {}): {} not in [{}, {}]",
                e.s_index,
                e.xi_index,
                e.bulk,
                c.alpha * r,
                c.beta * (1.0 + r)
            ));
        }
    }

    let mut lip: f64 = 0.0;
    let n_xi = table.xi_grid.len();
    for k in 0..table.s_points.len() {
        for i in 0..n_xi {
            for j in i + 1..n_xi {
                let (p, q) = (table.entry(k, i), table.entry(k, j));
                if !(p.ok() && q.ok()) {
                    continue;
                }
                let d = (p.xi() - q.xi()).norm();
                if d > 1e-12 {
                    lip = lip.max((p.bulk - q.bulk).abs() / d);
                }
            }
        }
    }
    let lip_bound = c.lip_l;
    if lip > lip_bound + opts.tolerance {
        violations.push(format!("LipschitzViolation: quotient {lip:.6} exceeds L = {lip_bound}"));
    }

    let mut gap_ratio: Option<f64> = None;
    if integrand.has_closed_form_recession() {
        for e in table.entries.iter().filter(|e| e.ok()) {
            if let Some(rec) = e.recession {
                let r = e.xi().norm();
                let bound = c.recession_c * (1.0 + r.powf(1.0 - c.recession_q));
                let ratio = (e.bulk - rec).abs() / bound;
                gap_ratio = Some(gap_ratio.map_or(ratio, |g: f64| g.max(ratio)));
                if (e.bulk - rec).abs() > bound + opts.tolerance * (1.0 + r) {
                    violations.push(format!(
                        "RecessionViolation at entry ({}, {}): gap {} exceeds {}",
                        e.s_index,
                        e.xi_index,
                        (e.bulk - rec).abs(),
                        bound
                    ));
                }
            }
        }
    }

    let usable: Vec<&DensityEntry> = table.entries.iter().filter(|e| e.ok()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut specs = Vec::new();
    if !usable.is_empty() {
        for _ in 0..opts.lines {
            let e = usable[rng.gen_range(0..usable.len())];
            let s = Vec3::from(e.s);
            let frame = manifold.tangent_frame(&s)?;
            let coords: Vec<f64> = (0..frame.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let cvec = frame.embed(&coords);
            let cvec = if cvec.norm() > 1e-12 { cvec.normalize() } else { frame.basis[0] };
            let ang: f64 = rng.gen_range(0.0..TAU);
            specs.push((e, s, cvec, Vec2::new(ang.cos(), ang.sin())));
        }
    }
    let lines: Vec<Result<RankOneLine>> = specs
        .par_iter()
        .map(|(e, s, cvec, m)| {
            let xi = e.xi();
            let eta = Mat3x2::from_columns(&[cvec * m.x, cvec * m.y]);
            let step = opts.line_step * (1.0 + xi.norm());
            let lambdas: Vec<f64> = (-2..=2).map(|i| i as f64 * step).collect();
            let values = lambdas
                .iter()
                .map(|l| Ok(hom_density(manifold, integrand, s, &(xi + eta * *l), config)?.value))
                .collect::<Result<Vec<f64>>>()?;
            let min_second = values.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).fold(f64::INFINITY, f64::min);
            Ok(RankOneLine {
                s: e.s,
                xi_alpha: e.xi_alpha,
                c: [cvec.x, cvec.y, cvec.z],
                m: [m.x, m.y],
                lambdas,
                values,
                min_second_difference: min_second,
            })
        })
        .collect();
    let lines = lines.into_iter().collect::<Result<Vec<_>>>()?;
    for (i, l) in lines.iter().enumerate() {
        let scale = 1.0 + l.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if l.min_second_difference < -opts.tolerance * scale {
            violations.push(format!("ConvexityViolation on rank-one line {i}: second difference {:.3e}", l.min_second_difference));
        }
    }

    Ok(DensityPropertyReport {
        entries: table.entries.len(),
        sandwich_violations: sandwich,
        lipschitz_quotient: lip,
        lipschitz_bound: lip_bound,
        lines,
        recession_gap_ratio: gap_ratio,
        violations,
    })
}

/// Tf⁰_hom(s, ξ_α) against the average of Tf⁰_hom(s, ξ_α + ∇ψ) over Q′ for
/// the tangent test field ψ(x) = c·cos²(πx₁)cos²(πx₂)·(m₁ + m₂ sin 2πx₁),
/// sampled at the midpoints of an n×n grid. Returns (left, right).
pub fn quasiconvexity_spot_check(
    manifold: &ManifoldSpec,
    integrand: &IntegrandSpec,
    s: &Vec3,
    xi_alpha: &Mat3x2,
    c: &Vec3,
    m: [f64; 2],
    n: usize,
    config: &CellProblemConfig,
) -> Result<(f64, f64)> {
    let c = manifold.tangent_project(s, c)?;
    let left = hom_density(manifold, integrand, s, xi_alpha, config)?.value;
    let pts: Vec<(f64, f64)> = (0..n * n)
        .map(|q| {
            let (i, j) = (q % n, q / n);
            (-0.5 + (i as f64 + 0.5) / n as f64, -0.5 + (j as f64 + 0.5) / n as f64)
        })
        .collect();
    let values = pts
        .par_iter()
        .map(|&(x1, x2)| {
            let (p1, p2) = (PI * x1, PI * x2);
            let bump = p1.cos().powi(2) * p2.cos().powi(2);
            let d_bump1 = -PI * (2.0 * p1).sin() * p2.cos().powi(2);
            let d_bump2 = -PI * (2.0 * p2).sin() * p1.cos().powi(2);
            let g = m[0] + m[1] * (TAU * x1).sin();
            let dg1 = m[1] * TAU * (TAU * x1).cos();
            let grad = [d_bump1 * g + bump * dg1, d_bump2 * g];
            let xi = xi_alpha + Mat3x2::from_columns(&[c * grad[0], c * grad[1]]);
            Ok(hom_density(manifold, integrand, s, &xi, config)?.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    let right = values.iter().sum::<f64>() / values.len() as f64;
    Ok((left, right))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cell() -> CellProblemConfig {
        CellProblemConfig { t_list: vec![1.0, 2.0], n_xy: 6, ..Default::default() }
    }

    #[test]
    fn tensor_grid_points_are_lexicographic() {
        let g = XiGrid::Tensor { axes: [vec![0.0, 1.0], vec![0.0], vec![2.0, 3.0], vec![0.0]] };
        assert_eq!(g.len(), 4);
        assert_eq!(g.points()[1], [0.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn empty_grids_are_rejected() {
        let m = ManifoldSpec::sphere();
        let f = IntegrandSpec::norm();
        let empty = XiGrid::List { points: vec![] };
        assert!(tabulate_density(&m, &f, &[Vec3::z()], &empty, &quick_cell(), false).is_err());
        let g = XiGrid::rank_one([1.0, 0.0, 0.0, 0.0], &[1.0]);
        assert!(tabulate_density(&m, &f, &[], &g, &quick_cell(), false).is_err());
    }

    #[test]
    fn norm_table_interpolates_and_refuses_to_extrapolate() {
        let m = ManifoldSpec::sphere();
        let f = IntegrandSpec::norm();
        let g = XiGrid::Tensor { axes: [vec![0.5, 1.0], vec![0.0], vec![0.0], vec![0.0]] };
        let t = tabulate_density(&m, &f, &[Vec3::z()], &g, &quick_cell(), true).unwrap();
        assert_eq!(t.failures(), 0);
        let frame = m.tangent_frame(&Vec3::z()).unwrap();
        let xi = xi_from_coords(&frame, &[0.75, 0.0, 0.0, 0.0]);
        assert!((t.bulk_at(&m, &Vec3::z(), &xi).unwrap() - 0.75).abs() < 1e-3);
        assert!((t.recession_at(&m, &Vec3::z(), &xi).unwrap() - 0.75).abs() < 1e-3);
        let far = xi_from_coords(&frame, &[1.5, 0.0, 0.0, 0.0]);
        assert!(matches!(t.bulk_at(&m, &Vec3::z(), &far), Err(Error::TableCoverage(_))));
        let off = xi_from_coords(&frame, &[0.75, 0.1, 0.0, 0.0]);
        assert!(matches!(t.bulk_at(&m, &Vec3::z(), &off), Err(Error::TableCoverage(_))));
        assert!(matches!(t.bulk_at(&m, &Vec3::x(), &Mat3x2::zeros()), Ok(0.0)));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn jump_lookup_uses_symmetry_and_angle_interpolation() {
        let entry = |a: Vec3, b: Vec3, phi: f64, theta: f64| JumpEntry {
            a: a.into(),
            b: b.into(),
            nu: [phi.cos(), phi.sin()],
            theta,
            theta_b: None,
            per_t: vec![],
            per_h: vec![],
            geodesic_distance: 1.0,
            method: ExtrapolationMethod::Fit,
            converged: true,
            flags: vec![],
        };
        let table = JumpTable {
            manifold: "sphere".into(),
            integrand: "norm".into(),
            t_list: vec![],
            h_list: vec![],
            endpoint_tol: 1e-6,
            entries: vec![entry(Vec3::x(), Vec3::y(), 0.0, 1.0), entry(Vec3::x(), Vec3::y(), 0.5, 2.0)],
            provenance: None,
        };
        let v = table.theta_at(&Vec3::x(), &Vec3::y(), &Vec2::new(0.25f64.cos(), 0.25f64.sin())).unwrap();
        assert!((v - 1.5).abs() < 1e-12);
        let w = table.theta_at(&Vec3::y(), &Vec3::x(), &Vec2::new(-1.0, 0.0)).unwrap();
        assert_eq!(w, 1.0);
        assert_eq!(table.theta_at(&Vec3::z(), &Vec3::z(), &Vec2::x()).unwrap(), 0.0);
        assert!(matches!(table.theta_at(&Vec3::x(), &Vec3::z(), &Vec2::x()), Err(Error::TableCoverage(_))));
        assert!(matches!(table.theta_at(&Vec3::x(), &Vec3::y(), &Vec2::new(0.0, -1.0)), Err(Error::TableCoverage(_))));
    }
}
