//! Limited-memory BFGS on embedded constraint sets. Search directions live in
//! the tangent space given by [`Objective::project`], trial points are pulled
//! back by [`Objective::retract`], and curvature pairs are transported by
//! projection.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub trait Objective {
    fn dim(&self) -> usize;

    /// Value and Euclidean gradient at a feasible point.
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn value(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.value_grad(x, &mut g)
    }

    /// Project `v` onto the tangent space at `x`.
    fn project(&self, _x: &[f64], _v: &mut [f64]) {}

    /// Map an ambient point back to the feasible set; `false` rejects it.
    fn retract(&self, _x: &mut [f64]) -> bool {
        true
    }

    /// Typical size of a coordinate, used to size the first step.
    fn step_scale(&self) -> f64 {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the largest projected gradient entry falls below this.
    pub tol_grad: f64,
    /// Stop when ten iterations gain less than this fraction of the value.
    pub tol_rel: f64,
    /// Largest coordinate change of the first step, relative to `step_scale`.
    pub first_step: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions { memory: 10, max_iter: 2000, tol_grad: 1e-9, tol_rel: 1e-9, first_step: 0.1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub converged: bool,
    /// Value every tenth iteration and at the end.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimize from the feasible point `x`, which is overwritten with the best
/// iterate found.
pub fn minimize<O: Objective + ?Sized>(obj: &O, x: &mut [f64], opts: &LbfgsOptions) -> OptimReport {
    let n = obj.dim();
    assert_eq!(x.len(), n);
    let mut grad = vec![0.0; n];
    let mut value = obj.value_grad(x, &mut grad);
    obj.project(x, &mut grad);
    let mut report = OptimReport { value, evaluations: 1, history: vec![value], ..Default::default() };
    if n == 0 {
        report.converged = true;
        return report;
    }

    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut dir = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut recent: VecDeque<f64> = VecDeque::from([value]);
    let mut first = true;

    for iter in 0..opts.max_iter {
        report.iterations = iter;
        report.grad_norm = inf_norm(&grad);
        if report.grad_norm <= opts.tol_grad {
            report.converged = true;
            break;
        }
        if recent.len() > 10 {
            let old = recent.pop_front().unwrap_or(value);
            if old - value <= opts.tol_rel * value.abs().max(1e-12) {
                report.converged = true;
                break;
            }
        }

        // two-loop recursion
        dir.iter_mut().zip(&grad).for_each(|(d, g)| *d = -g);
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &dir);
            dir.iter_mut().zip(y).for_each(|(d, yv)| *d -= a * yv);
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, sv)| *d += (a - b) * sv);
        }
        obj.project(x, &mut dir);
        let mut slope = dot(&dir, &grad);
        if !(slope < 0.0) {
            pairs.clear();
            dir.iter_mut().zip(&grad).for_each(|(d, g)| *d = -g);
            slope = -dot(&grad, &grad);
            first = true;
        }

        let mut step = if first {
            let m = inf_norm(&dir);
            if m > 0.0 {
                opts.first_step * obj.step_scale() / m
            } else {
                1.0
            }
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..60 {
            trial.iter_mut().zip(x.iter().zip(&dir)).for_each(|(t, (xv, d))| *t = xv + step * d);
            if obj.retract(&mut trial) {
                let v = obj.value_grad(&trial, &mut trial_grad);
                report.evaluations += 1;
                if v.is_finite() && v <= value + 1e-4 * step * slope {
                    accepted = Some(v);
                    break;
                }
            }
            step *= 0.5;
        }

        let Some(new_value) = accepted else {
            if pairs.is_empty() {
                // no descent along the gradient at machine resolution
                report.converged = report.grad_norm <= opts.tol_grad.max(1e-6);
                break;
            }
            pairs.clear();
            first = true;
            continue;
        };

        obj.project(&trial, &mut trial_grad);
        let mut s: Vec<f64> = trial.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        obj.project(&trial, &mut s);
        let mut old_grad = grad.clone();
        obj.project(&trial, &mut old_grad);
        let y: Vec<f64> = trial_grad.iter().zip(&old_grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }

        x.copy_from_slice(&trial);
        grad.copy_from_slice(&trial_grad);
        value = new_value;
        first = false;
        recent.push_back(value);
        if (iter + 1) % 10 == 0 {
            report.history.push(value);
        }
    }
    report.value = value;
    report.grad_norm = inf_norm(&grad);
    if report.history.last() != Some(&value) {
        report.history.push(value);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }
        fn value_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        }
    }

    /// Linear function minimized over the unit sphere in ℝ³.
    struct SphereLinear([f64; 3]);

    impl Objective for SphereLinear {
        fn dim(&self) -> usize {
            3
        }
        fn value_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
            g.copy_from_slice(&self.0);
            dot(x, &self.0)
        }
        fn project(&self, x: &[f64], v: &mut [f64]) {
            let d = dot(x, v);
            v.iter_mut().zip(x).for_each(|(vi, xi)| *vi -= d * xi);
        }
        fn retract(&self, x: &mut [f64]) -> bool {
            let n = dot(x, x).sqrt();
            x.iter_mut().for_each(|v| *v /= n);
            n > 0.0
        }
    }

    #[test]
    fn rosenbrock_minimum() {
        let mut x = [-1.2, 1.0];
        let r = minimize(&Rosenbrock, &mut x, &LbfgsOptions { tol_rel: 0.0, ..Default::default() });
        assert!(r.converged);
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn sphere_constrained_minimum() {
        let c = [1.0, -2.0, 2.0];
        let mut x = [1.0, 0.0, 0.0];
        let r = minimize(&SphereLinear(c), &mut x, &LbfgsOptions::default());
        assert!((r.value + 3.0).abs() < 1e-9, "{}", r.value);
        assert!((x[1] - 2.0 / 3.0).abs() < 1e-5);
    }
}
