//! Integrands f(x, ξ) with linear growth, their recession functions and the
//! extension g(y, s, ξ) off the tangent bundle.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::ManifoldSpec;
use crate::{Mat3, Vec3};

/// Scale factors of the numeric recession estimator.
const RECESSION_SCALES: [f64; 3] = [1e3, 1e4, 1e5];

/// Named integrands. All are of the form a(x₁)·ψ(|ξ|_w) with a 1-periodic
/// coefficient and a column-weighted Frobenius norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "kebab-case")]
pub enum Builtin {
    /// |ξ|
    Norm,
    /// √(1 + |ξ|²)
    SmoothLinear,
    /// a(x₁)|ξ| with a = a1 on [0, ½), a2 on [½, 1), extended periodically.
    TwoPhase { a1: f64, a2: f64 },
    /// (c0 + c1 sin 2πx₁)|ξ|
    Oscillatory { c0: f64, c1: f64 },
    /// |ξ|², superlinear; only useful to exercise the hypothesis checker.
    Quadratic,
}

#[derive(Copy, Clone, Debug, PartialEq)]
enum Profile {
    Linear,
    SmoothLinear,
    Quadratic,
}

impl Builtin {
    fn profile(&self) -> Profile {
        match self {
            Builtin::SmoothLinear => Profile::SmoothLinear,
            Builtin::Quadratic => Profile::Quadratic,
            _ => Profile::Linear,
        }
    }

    fn coefficient(&self, x: &Vec3) -> f64 {
        match *self {
            Builtin::TwoPhase { a1, a2 } => {
                let frac = x.x - x.x.floor();
                if frac < 0.5 {
                    a1
                } else {
                    a2
                }
            }
            Builtin::Oscillatory { c0, c1 } => c0 + c1 * (2.0 * std::f64::consts::PI * x.x).sin(),
            _ => 1.0,
        }
    }

    fn coefficient_range(&self) -> (f64, f64) {
        match *self {
            Builtin::TwoPhase { a1, a2 } => (a1.min(a2), a1.max(a2)),
            Builtin::Oscillatory { c0, c1 } => (c0 - c1.abs(), c0 + c1.abs()),
            _ => (1.0, 1.0),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Builtin::Norm => "norm".into(),
            Builtin::SmoothLinear => "smooth-linear".into(),
            Builtin::TwoPhase { a1, a2 } => format!("two-phase({a1},{a2})"),
            Builtin::Oscillatory { c0, c1 } => format!("oscillatory({c0},{c1})"),
            Builtin::Quadratic => "quadratic".into(),
        }
    }
}

/// Declared constants of the growth, Lipschitz and recession hypotheses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub alpha: f64,
    pub beta: f64,
    pub lip_l: f64,
    pub recession_c: f64,
    pub recession_q: f64,
}

impl GrowthConstants {
    pub fn validate(&self) -> Result<()> {
        let c = self;
        if !(c.alpha > 0.0 && c.beta >= c.alpha && c.lip_l > 0.0 && c.recession_c > 0.0) {
            return Err(Error::InvalidInput(format!("need 0 < alpha <= beta, L > 0, C > 0; got {c:?}")));
        }
        if !(c.recession_q > 0.0 && c.recession_q < 1.0) {
            return Err(Error::InvalidInput(format!("q must lie in (0,1), got {}", c.recession_q)));
        }
        Ok(())
    }
}

pub type ScalarFn = Arc<dyn Fn(&Vec3, &Mat3) -> f64 + Send + Sync>;

/// A user-supplied integrand.
#[derive(Clone)]
pub struct CustomIntegrand {
    pub name: String,
    pub eval: ScalarFn,
    /// Closed-form recession function, when known.
    pub recession: Option<ScalarFn>,
    pub one_homogeneous: bool,
}

impl fmt::Debug for CustomIntegrand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomIntegrand")
            .field("name", &self.name)
            .field("closed_form_recession", &self.recession.is_some())
            .field("one_homogeneous", &self.one_homogeneous)
            .finish()
    }
}

#[derive(Clone, Debug)]
pub enum IntegrandKind {
    Builtin(Builtin),
    Custom(CustomIntegrand),
}

/// Which density the discretized energies integrate.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum DensityMode {
    Bulk,
    Recession,
}

/// A periodic Carathéodory integrand together with its declared constants.
#[derive(Clone, Debug)]
pub struct IntegrandSpec {
    kind: IntegrandKind,
    weights: [f64; 3],
    constants: GrowthConstants,
}

impl IntegrandSpec {
    pub fn builtin(builtin: Builtin) -> Result<Self> {
        Self::builtin_weighted(builtin, [1.0; 3])
    }

    /// Builtin with per-column anisotropy weights: |ξ|_w² = Σⱼ wⱼ²|ξⱼ|².
    pub fn builtin_weighted(builtin: Builtin, weights: [f64; 3]) -> Result<Self> {
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidInput(format!("weights must be positive, got {weights:?}")));
        }
        match builtin {
            Builtin::TwoPhase { a1, a2 } if !(a1 > 0.0 && a2 > 0.0) => {
                return Err(Error::InvalidInput("two-phase coefficients must be positive".into()))
            }
            Builtin::Oscillatory { c0, c1 } if !(c0 > c1.abs()) => {
                return Err(Error::InvalidInput("oscillatory coefficient needs c0 > |c1|".into()))
            }
            _ => {}
        }
        let w_min = weights.iter().cloned().fold(f64::INFINITY, f64::min);
        let w_max = weights.iter().cloned().fold(0.0, f64::max);
        let (a_min, a_max) = builtin.coefficient_range();
        let beta = match builtin.profile() {
            Profile::SmoothLinear => (a_max * w_max).max(a_max),
            _ => a_max * w_max,
        };
        let constants = GrowthConstants { alpha: a_min * w_min, beta, lip_l: a_max * w_max, recession_c: a_max, recession_q: 0.5 };
        Ok(IntegrandSpec { kind: IntegrandKind::Builtin(builtin), weights, constants })
    }

    pub fn norm() -> Self {
        Self::builtin(Builtin::Norm).expect("valid builtin")
    }

    pub fn custom(custom: CustomIntegrand, constants: GrowthConstants) -> Result<Self> {
        constants.validate()?;
        Ok(IntegrandSpec { kind: IntegrandKind::Custom(custom), weights: [1.0; 3], constants })
    }

    /// Replace the declared constants (they are only checked, never trusted).
    pub fn with_constants(mut self, constants: GrowthConstants) -> Self {
        self.constants = constants;
        self
    }

    pub fn constants(&self) -> &GrowthConstants {
        &self.constants
    }

    pub fn kind(&self) -> &IntegrandKind {
        &self.kind
    }

    pub fn weights(&self) -> [f64; 3] {
        self.weights
    }

    pub fn tag(&self) -> String {
        match &self.kind {
            IntegrandKind::Builtin(b) => b.name(),
            IntegrandKind::Custom(c) => c.name.clone(),
        }
    }

    /// Positively 1-homogeneous in ξ, so f = f^∞.
    pub fn is_one_homogeneous(&self) -> bool {
        match &self.kind {
            IntegrandKind::Builtin(b) => b.profile() == Profile::Linear,
            IntegrandKind::Custom(c) => c.one_homogeneous,
        }
    }

    /// Independent of x (no periodic coefficient).
    pub fn is_x_homogeneous(&self) -> bool {
        matches!(&self.kind, IntegrandKind::Builtin(Builtin::Norm | Builtin::SmoothLinear | Builtin::Quadratic))
    }

    pub fn has_closed_form_recession(&self) -> bool {
        match &self.kind {
            IntegrandKind::Builtin(b) => b.profile() != Profile::Quadratic,
            IntegrandKind::Custom(c) => c.recession.is_some() || c.one_homogeneous,
        }
    }

    fn weighted_norm_sq(&self, xi: &Mat3) -> f64 {
        (0..3).map(|j| self.weights[j] * self.weights[j] * xi.column(j).norm_squared()).sum()
    }

    pub fn eval_f(&self, x: &Vec3, xi: &Mat3) -> f64 {
        match &self.kind {
            IntegrandKind::Builtin(b) => {
                let r2 = self.weighted_norm_sq(xi);
                let psi = match b.profile() {
                    Profile::Linear => r2.sqrt(),
                    Profile::SmoothLinear => (1.0 + r2).sqrt(),
                    Profile::Quadratic => r2,
                };
                b.coefficient(x) * psi
            }
            IntegrandKind::Custom(c) => (c.eval)(x, xi),
        }
    }

    /// `eval_f` with the declared growth envelope α|ξ| ≤ f ≤ β(1+|ξ|) enforced.
    pub fn eval_f_checked(&self, x: &Vec3, xi: &Mat3) -> Result<f64> {
        let v = self.eval_f(x, xi);
        let n = xi.norm();
        let c = &self.constants;
        let slack = 1e-12 * (1.0 + v.abs());
        if !v.is_finite() || v < c.alpha * n - slack || v > c.beta * (1.0 + n) + slack {
            return Err(Error::GrowthViolation(format!(
                "f = {v:.6e} outside [{:.6e}, {:.6e}] at |xi| = {n:.3e}",
                c.alpha * n,
                c.beta * (1.0 + n)
            )));
        }
        Ok(v)
    }

    /// Recession function f^∞(x, ξ) = limsup f(x, tξ)/t. Closed form when
    /// available, otherwise a Richardson-corrected estimate over three decades
    /// of t evaluated on ξ/|ξ| and rescaled, which makes it exactly
    /// 1-homogeneous. Superlinear builtins return +∞.
    pub fn eval_f_infinity(&self, x: &Vec3, xi: &Mat3) -> f64 {
        let n = xi.norm();
        if n == 0.0 {
            return 0.0;
        }
        match &self.kind {
            IntegrandKind::Builtin(b) => match b.profile() {
                Profile::Quadratic => f64::INFINITY,
                _ => b.coefficient(x) * self.weighted_norm_sq(xi).sqrt(),
            },
            IntegrandKind::Custom(c) => {
                if let Some(rec) = &c.recession {
                    return rec(x, xi);
                }
                if c.one_homogeneous {
                    return (c.eval)(x, xi);
                }
                let unit = xi / n;
                let ratios = RECESSION_SCALES.map(|t| (c.eval)(x, &(unit * t)) / t);
                let corrected = [(10.0 * ratios[1] - ratios[0]) / 9.0, (10.0 * ratios[2] - ratios[1]) / 9.0];
                n * corrected[0].max(corrected[1])
            }
        }
    }

    /// Fail unless the density can be used inside an optimization loop.
    pub fn ensure_mode(&self, mode: DensityMode) -> Result<()> {
        match mode {
            DensityMode::Bulk => Ok(()),
            DensityMode::Recession if self.has_closed_form_recession() => Ok(()),
            DensityMode::Recession => Err(Error::UnsupportedRecession(self.tag())),
        }
    }

    /// ε-smoothed density and its gradient in ξ. Inside the builtins |·| is
    /// replaced by √(ε² + |·|²) − ε; custom integrands are used as given with
    /// a central-difference gradient.
    pub fn smoothed(&self, mode: DensityMode, x: &Vec3, xi: &Mat3, eps: f64) -> (f64, Mat3) {
        match &self.kind {
            IntegrandKind::Builtin(b) => {
                let a = b.coefficient(x);
                let r2 = self.weighted_norm_sq(xi);
                let profile = match mode {
                    DensityMode::Recession => Profile::Linear,
                    DensityMode::Bulk => b.profile(),
                };
                let (value, dpsi_dr2x2) = match profile {
                    Profile::Linear => {
                        let root = (eps * eps + r2).sqrt();
                        let d = if root > 0.0 { 1.0 / root } else { 0.0 };
                        (root - eps, d)
                    }
                    Profile::SmoothLinear => {
                        let root = (1.0 + r2).sqrt();
                        (root, 1.0 / root)
                    }
                    Profile::Quadratic => (r2, 2.0),
                };
                let mut grad = *xi;
                for j in 0..3 {
                    let w2 = self.weights[j] * self.weights[j];
                    grad.column_mut(j).scale_mut(a * w2 * dpsi_dr2x2);
                }
                (a * value, grad)
            }
            IntegrandKind::Custom(c) => {
                let f = |m: &Mat3| match mode {
                    DensityMode::Bulk => (c.eval)(x, m),
                    DensityMode::Recession => self.eval_f_infinity(x, m),
                };
                let value = f(xi);
                let h = 1e-6 * (1.0 + xi.norm());
                let mut grad = Mat3::zeros();
                for i in 0..3 {
                    for j in 0..3 {
                        let mut p = *xi;
                        let mut m = *xi;
                        p[(i, j)] += h;
                        m[(i, j)] -= h;
                        grad[(i, j)] = (f(&p) - f(&m)) / (2.0 * h);
                    }
                }
                (value, grad)
            }
        }
    }
}

/// Normal residuals below this (relative to 1 + |ξ|) count as tangent, so
/// that g and f agree bit for bit on the tangent bundle.
pub const TANGENT_SNAP: f64 = 1e-12;

/// The integrand extended off the tangent bundle,
/// g(y, s, ξ) = f(y, ℙ_s ξ) + |ξ − ℙ_s ξ|.
#[derive(Clone, Debug)]
pub struct ExtendedIntegrand {
    pub base: IntegrandSpec,
    pub manifold: ManifoldSpec,
}

impl ExtendedIntegrand {
    pub fn new(base: IntegrandSpec, manifold: ManifoldSpec) -> Self {
        ExtendedIntegrand { base, manifold }
    }

    pub fn eval_g(&self, y: &Vec3, s: &Vec3, xi: &Mat3) -> f64 {
        let p = self.manifold.extended_project(s, xi);
        let r = (xi - p).norm();
        if r <= TANGENT_SNAP * (1.0 + xi.norm()) {
            return self.base.eval_f(y, xi);
        }
        self.base.eval_f(y, &p) + r
    }

    pub fn eval_g_infinity(&self, y: &Vec3, s: &Vec3, xi: &Mat3) -> f64 {
        let p = self.manifold.extended_project(s, xi);
        let r = (xi - p).norm();
        if r <= TANGENT_SNAP * (1.0 + xi.norm()) {
            return self.base.eval_f_infinity(y, xi);
        }
        self.base.eval_f_infinity(y, &p) + r
    }
}
