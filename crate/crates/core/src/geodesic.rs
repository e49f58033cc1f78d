//! Shortest paths on sampled manifolds.
//!
//! A k-nearest-neighbour graph over manifold samples gives the homotopy class
//! of a short path; discrete curve shortening (averaging followed by
//! retraction, coarse to fine) then relaxes it to a constant-speed geodesic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::manifold::ManifoldSpec;
use crate::Vec3;

/// Samples used when only the geodesic distance is needed.
pub const DISTANCE_SAMPLES: usize = 257;

const COARSE_SAMPLES: usize = 9;

/// Graph over points of the manifold with Euclidean edge weights.
#[derive(Clone, Debug, Default)]
pub struct SurfaceGraph {
    pub nodes: Vec<Vec3>,
    pub adjacency: Vec<Vec<(usize, f64)>>,
}

#[derive(Copy, Clone, PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap; ties resolved by the lower node index
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl SurfaceGraph {
    /// Symmetrised k-nearest-neighbour graph (brute force).
    pub fn knn(nodes: Vec<Vec3>, k: usize) -> Self {
        let n = nodes.len();
        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut dists: Vec<(f64, usize)> = Vec::with_capacity(n);
        for i in 0..n {
            dists.clear();
            dists.extend((0..n).filter(|&j| j != i).map(|j| ((nodes[i] - nodes[j]).norm(), j)));
            let kk = k.min(dists.len());
            if kk == 0 {
                continue;
            }
            dists.select_nth_unstable_by(kk - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(d, j) in &dists[..kk] {
                adjacency[i].push((j, d));
                adjacency[j].push((i, d));
            }
        }
        for list in &mut adjacency {
            list.sort_by(|a, b| a.0.cmp(&b.0));
            list.dedup_by(|a, b| a.0 == b.0);
        }
        SurfaceGraph { nodes, adjacency }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nearest_node(&self, p: &Vec3) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, q) in self.nodes.iter().enumerate() {
            let d = (q - p).norm_squared();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Number of connected components.
    pub fn components(&self) -> usize {
        let n = self.nodes.len();
        let mut label = vec![usize::MAX; n];
        let mut count = 0;
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = count;
            while let Some(v) = stack.pop() {
                for &(w, _) in &self.adjacency[v] {
                    if label[w] == usize::MAX {
                        label[w] = count;
                        stack.push(w);
                    }
                }
            }
            count += 1;
        }
        count
    }

    /// Dijkstra shortest path as a node sequence from `from` to `to`.
    pub fn shortest_path(&self, from: usize, to: usize) -> Option<(Vec<usize>, f64)> {
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        dist[from] = 0.0;
        heap.push(Frontier { dist: 0.0, node: from });
        while let Some(Frontier { dist: d, node }) = heap.pop() {
            if node == to {
                break;
            }
            if d > dist[node] {
                continue;
            }
            for &(next, w) in &self.adjacency[node] {
                let nd = d + w;
                if nd < dist[next] {
                    dist[next] = nd;
                    prev[next] = node;
                    heap.push(Frontier { dist: nd, node: next });
                }
            }
        }
        if !dist[to].is_finite() {
            return None;
        }
        let mut path = vec![to];
        let mut cur = to;
        while cur != from {
            cur = prev[cur];
            path.push(cur);
        }
        path.reverse();
        Some((path, dist[to]))
    }
}

/// Sampled geodesic γ with γ(t) = b for t ≤ −½ and γ(t) = a for t ≥ ½.
#[derive(Clone, Debug)]
pub struct GeodesicPath {
    pub a: Vec3,
    pub b: Vec3,
    /// γ(tᵢ) for tᵢ = −½ + i/(n−1), so the first sample is `b`, the last `a`.
    pub samples: Vec<Vec3>,
    pub length: f64,
}

impl GeodesicPath {
    pub fn constant(p: Vec3, n: usize) -> Self {
        GeodesicPath { a: p, b: p, samples: vec![p; n.max(2)], length: 0.0 }
    }

    /// Evaluate γ(t): clamped outside (−½, ½), piecewise-linear between samples
    /// and retracted onto the manifold inside.
    pub fn eval(&self, manifold: &ManifoldSpec, t: f64) -> Vec3 {
        if t >= 0.5 {
            return self.a;
        }
        if t <= -0.5 {
            return self.b;
        }
        let n = self.samples.len();
        let u = (t + 0.5) * (n - 1) as f64;
        let i = (u.floor() as usize).min(n - 2);
        let w = u - i as f64;
        let p = self.samples[i] * (1.0 - w) + self.samples[i + 1] * w;
        if w == 0.0 {
            return self.samples[i];
        }
        manifold.nearest_point(&p).unwrap_or(self.samples[i])
    }
}

fn polyline_length(points: &[Vec3]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

fn retract(manifold: &ManifoldSpec, p: &Vec3) -> Result<Vec3> {
    manifold.nearest_point(p)
}

/// Uniform-in-arclength resampling of a polyline with exact endpoints.
fn resample(manifold: &ManifoldSpec, poly: &[Vec3], m: usize) -> Result<Vec<Vec3>> {
    let mut cumulative = Vec::with_capacity(poly.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for w in poly.windows(2) {
        acc += (w[1] - w[0]).norm();
        cumulative.push(acc);
    }
    let total = acc;
    let mut out = Vec::with_capacity(m);
    out.push(poly[0]);
    let mut seg = 0;
    for k in 1..m - 1 {
        let target = total * k as f64 / (m - 1) as f64;
        while seg + 1 < cumulative.len() - 1 && cumulative[seg + 1] < target {
            seg += 1;
        }
        let span = cumulative[seg + 1] - cumulative[seg];
        let w = if span > 0.0 { (target - cumulative[seg]) / span } else { 0.0 };
        let p = poly[seg] * (1.0 - w) + poly[seg + 1] * w;
        out.push(retract(manifold, &p)?);
    }
    out.push(poly[poly.len() - 1]);
    Ok(out)
}

/// Gauss–Seidel midpoint averaging with retraction. Sweeps stop once no
/// point moves more than `tol`. Running out of sweeps is accepted when the
/// length changed by at most `accept` over the last tenth of them, since
/// points still sliding along a fixed curve do not change it.
fn relax(manifold: &ManifoldSpec, points: &mut [Vec3], tol: f64, accept: f64, max_sweeps: usize) -> Result<usize> {
    let m = points.len();
    let checkpoint = max_sweeps - max_sweeps / 10;
    let mut reference = f64::NAN;
    for sweep in 0..max_sweeps {
        let mut moved: f64 = 0.0;
        for i in 1..m - 1 {
            let mid = (points[i - 1] + points[i + 1]) * 0.5;
            let q = retract(manifold, &mid)?;
            moved = moved.max((q - points[i]).norm());
            points[i] = q;
        }
        if moved <= tol {
            return Ok(sweep + 1);
        }
        if sweep + 1 == checkpoint {
            reference = polyline_length(points);
        }
    }
    if (polyline_length(points) - reference).abs() <= accept {
        return Ok(max_sweeps);
    }
    Err(Error::NonConvergent { what: "geodesic curve shortening".into(), iterations: max_sweeps })
}

/// Midpoint averaging diffuses, so the sweep count grows like the square of
/// the number of points.
fn sweep_budget(points: usize) -> usize {
    (points * points).max(40 * points + 500)
}

fn refine(manifold: &ManifoldSpec, points: &[Vec3]) -> Result<Vec<Vec3>> {
    let mut out = Vec::with_capacity(2 * points.len() - 1);
    for w in points.windows(2) {
        out.push(w[0]);
        out.push(retract(manifold, &((w[0] + w[1]) * 0.5))?);
    }
    out.push(points[points.len() - 1]);
    Ok(out)
}

pub(crate) fn shortest_path(manifold: &ManifoldSpec, a: &Vec3, b: &Vec3, n_samples: usize) -> Result<GeodesicPath> {
    if (a - b).norm() < 1e-14 {
        return Ok(GeodesicPath::constant(*a, n_samples));
    }
    let graph = manifold.graph();
    let from = graph.nearest_node(b);
    let to = graph.nearest_node(a);
    let (nodes, _) = graph
        .shortest_path(from, to)
        .ok_or_else(|| Error::NonConvergent { what: "graph search (disconnected sample graph)".into(), iterations: 0 })?;
    let mut poly = vec![*b];
    for &i in &nodes {
        let p = graph.nodes[i];
        if (p - poly[poly.len() - 1]).norm() > 1e-12 {
            poly.push(p);
        }
    }
    if (a - poly[poly.len() - 1]).norm() > 1e-12 {
        poly.push(*a);
    } else {
        let last = poly.len() - 1;
        poly[last] = *a;
    }

    let scale = polyline_length(&poly).max(1e-12);
    // chords must stay well inside the tubular neighbourhood
    let coarse = COARSE_SAMPLES.min(n_samples.max(3)).max((scale / (0.5 * manifold.delta0())).ceil() as usize + 1);
    let mut points = resample(manifold, &poly, coarse)?;
    relax(manifold, &mut points, 1e-10 * scale, 1e-7 * scale, sweep_budget(coarse).max(20_000))?;
    while points.len() < n_samples {
        points = refine(manifold, &points)?;
        let budget = sweep_budget(points.len());
        relax(manifold, &mut points, 1e-12 * scale, 1e-7 * scale, budget)?;
    }
    let length = polyline_length(&points);
    if points.len() != n_samples {
        points = resample(manifold, &points, n_samples)?;
    }
    Ok(GeodesicPath { a: *a, b: *b, samples: points, length })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{ManifoldKind, ManifoldSpec};
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn sphere_quarter_arc() {
        let m = ManifoldSpec::sphere();
        let path = m.geodesic_path(&Vec3::x(), &Vec3::y(), 65).unwrap();
        assert!((path.length - FRAC_PI_2).abs() < 1e-4, "{}", path.length);
        for p in &path.samples {
            // the minor great circle in the equatorial plane
            assert!(p.z.abs() < 1e-6);
            assert!((p.norm() - 1.0).abs() < 1e-12);
        }
        assert_eq!(path.samples[0], Vec3::y());
        assert_eq!(path.samples[64], Vec3::x());
    }

    #[test]
    fn clamping_and_constant_paths() {
        let m = ManifoldSpec::sphere();
        let path = m.geodesic_path(&Vec3::x(), &Vec3::y(), 33).unwrap();
        assert_eq!(path.eval(&m, 0.7), Vec3::x());
        assert_eq!(path.eval(&m, 0.5), Vec3::x());
        assert_eq!(path.eval(&m, -0.9), Vec3::y());
        let mid = path.eval(&m, 0.0);
        let expected = (Vec3::x() + Vec3::y()).normalize();
        assert!((mid - expected).norm() < 1e-6);

        let c = m.geodesic_path(&Vec3::z(), &Vec3::z(), 10).unwrap();
        assert_eq!(c.length, 0.0);
        assert!(c.samples.iter().all(|p| *p == Vec3::z()));
    }

    #[test]
    fn length_converges_monotonically() {
        let m = ManifoldSpec::new(ManifoldKind::Torus { major: 2.0, minor: 0.5 }).unwrap();
        let a = Vec3::new(2.5, 0.0, 0.0);
        let b = Vec3::new(0.0, 2.5, 0.0);
        let lengths: Vec<f64> = [17, 33, 65, 129].iter().map(|&n| m.geodesic_path(&a, &b, n).unwrap().length).collect();
        for w in lengths.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{lengths:?}");
        }
        let d = m.geodesic_distance(&a, &b).unwrap();
        assert!((d - lengths[3]).abs() < 1e-3);
    }

    #[test]
    fn dijkstra_ties_are_deterministic() {
        let m = ManifoldSpec::sphere();
        let p1 = m.geodesic_path(&Vec3::z(), &-Vec3::z(), 17).unwrap();
        let p2 = m.geodesic_path(&Vec3::z(), &-Vec3::z(), 17).unwrap();
        assert_eq!(p1.samples, p2.samples);
        // inscribed 16-gon of a half great circle
        let chord = 32.0 * (std::f64::consts::PI / 32.0).sin();
        assert!((p1.length - chord).abs() < 5e-3, "{}", p1.length);
    }
}
