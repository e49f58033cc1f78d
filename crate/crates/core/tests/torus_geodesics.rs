//! Torus geodesic distances against Dijkstra on a dense parameter grid.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thinhom::manifold::{ManifoldKind, ManifoldSpec};
use thinhom::Vec3;

const MAJOR: f64 = 2.0;
const MINOR: f64 = 0.5;
const NU: usize = 500;
const NV: usize = 200;

fn embed(i: usize, j: usize) -> Vec3 {
    let (u, v) = (std::f64::consts::TAU * i as f64 / NU as f64, std::f64::consts::TAU * j as f64 / NV as f64);
    Vec3::new((MAJOR + MINOR * v.cos()) * u.cos(), (MAJOR + MINOR * v.cos()) * u.sin(), MINOR * v.sin())
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0)
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Single-source distances over a 32-neighbour stencil with chord weights.
fn dijkstra(source: (usize, usize)) -> Vec<f64> {
    let steps: Vec<(i64, i64)> =
        (-3..=3).flat_map(|a| (-3..=3).map(move |b| (a, b))).filter(|&(a, b)| (a, b) != (0, 0) && gcd(a, b) == 1).collect();
    let points: Vec<Vec3> = (0..NU * NV).map(|k| embed(k / NV, k % NV)).collect();
    let mut dist = vec![f64::INFINITY; NU * NV];
    let start = source.0 * NV + source.1;
    dist[start] = 0.0;
    let mut heap = BinaryHeap::from([Item(0.0, start)]);
    while let Some(Item(d, k)) = heap.pop() {
        if d > dist[k] {
            continue;
        }
        let (i, j) = ((k / NV) as i64, (k % NV) as i64);
        for &(a, b) in &steps {
            let n = (i + a).rem_euclid(NU as i64) as usize * NV + (j + b).rem_euclid(NV as i64) as usize;
            let nd = d + (points[n] - points[k]).norm();
            if nd < dist[n] {
                dist[n] = nd;
                heap.push(Item(nd, n));
            }
        }
    }
    dist
}

#[test]
fn torus_distances_match_a_dense_graph_oracle() {
    assert!(NU * NV >= 100_000);
    let m = ManifoldSpec::new(ManifoldKind::Torus { major: MAJOR, minor: MINOR }).unwrap();
    let source = (0, 0);
    let oracle = dijkstra(source);
    let a = embed(source.0, source.1);
    let targets = [(40, 50), (100, 0), (125, 100), (60, 150), (200, 30), (250, 100)];
    for (i, j) in targets {
        let b = embed(i, j);
        let d = m.geodesic_distance(&a, &b).unwrap();
        let o = oracle[i * NV + j];
        assert!(d >= (a - b).norm() - 1e-9);
        assert!((d - o).abs() <= 1e-2 * o, "target ({i}, {j}): {d} vs oracle {o}");
    }
}
