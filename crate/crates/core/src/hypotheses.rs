//! Monte-Carlo falsification of the structural hypotheses on f and of the
//! derived bounds on the extended integrand g.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrand::{ExtendedIntegrand, GrowthConstants, IntegrandSpec};
use crate::manifold::{random_unit, ManifoldSpec};
use crate::{Mat3, Vec3};

const CHUNK: usize = 512;
const TANGENT_SAMPLES: usize = 1000;
const REL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HypothesisOptions {
    pub sample_budget: usize,
    pub xi_radius: f64,
    pub seed: u64,
}

impl Default for HypothesisOptions {
    fn default() -> Self {
        HypothesisOptions { sample_budget: 100_000, xi_radius: 1e3, seed: 0 }
    }
}

/// Sampled constants of g, with the bounds implied by the declared constants
/// of f where such a bound is available.
#[derive(Clone, Debug, Serialize)]
pub struct ExtendedReport {
    pub manifold: String,
    pub samples: usize,
    pub tangent_samples: usize,
    /// max |g − f| over tangent configurations on 𝓜
    pub tangent_residual: f64,
    /// max |g^∞ − f^∞| over the same configurations
    pub tangent_recession_residual: f64,
    /// min g/|ξ|
    pub alpha_prime: f64,
    pub alpha_prime_bound: f64,
    /// max g/(1+|ξ|)
    pub beta_prime: f64,
    pub beta_prime_bound: f64,
    /// max |g(s,ξ) − g(s',ξ)| / (|s−s'||ξ|)
    pub s_lipschitz: f64,
    /// max |g(s,ξ) − g(s,ξ')| / |ξ−ξ'|
    pub xi_lipschitz: f64,
    pub xi_lipschitz_bound: f64,
    /// max |g − g^∞| / (1+|ξ|^{1−q})
    pub recession_gap: f64,
    pub recession_gap_bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub integrand: String,
    pub samples: usize,
    pub options: HypothesisOptions,
    pub declared: GrowthConstants,
    /// max |f(x+eᵢ,ξ) − f(x,ξ)| / (1+|f(x,ξ)|)
    pub periodicity_residual: f64,
    pub growth_violations: usize,
    /// min f/|ξ|
    pub alpha_empirical: f64,
    /// max f/(1+|ξ|)
    pub beta_empirical: f64,
    pub lipschitz_quotient: f64,
    /// max |f − f^∞| / (C(1+|ξ|^{1−q}))
    pub recession_gap_ratio: f64,
    /// max relative defect of f^∞(tξ) = t f^∞(ξ)
    pub homogeneity_residual: f64,
    pub extended: Option<ExtendedReport>,
    pub violations: Vec<String>,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn ensure_ok(&self) -> Result<()> {
        if self.passed() {
            Ok(())
        } else {
            Err(Error::HypothesisViolation(self.violations.clone()))
        }
    }
}

/// First offending sample of one kind, keyed by its global sample index so
/// the merge is independent of reduction order.
#[derive(Clone, Debug, Default)]
struct Example(Option<(usize, String)>);

impl Example {
    fn record(&mut self, key: usize, msg: impl FnOnce() -> String) {
        if self.0.as_ref().is_none_or(|(k, _)| key < *k) {
            self.0 = Some((key, msg()));
        }
    }

    fn merge(self, other: Example) -> Example {
        match (self.0, other.0) {
            (Some(a), Some(b)) => Example(Some(if a.0 <= b.0 { a } else { b })),
            (a, b) => Example(a.or(b)),
        }
    }
}

#[derive(Clone, Debug)]
struct Acc {
    periodicity: f64,
    growth_count: usize,
    alpha: f64,
    beta: f64,
    lipschitz: f64,
    recession: f64,
    homogeneity: f64,
    g_tangent: f64,
    g_tangent_rec: f64,
    g_alpha: f64,
    g_beta: f64,
    g_s_lip: f64,
    g_xi_lip: f64,
    g_rec: f64,
    growth_ex: Example,
    periodic_ex: Example,
    lipschitz_ex: Example,
    recession_ex: Example,
    g_ex: Example,
}

impl Default for Acc {
    fn default() -> Self {
        Acc {
            periodicity: 0.0,
            growth_count: 0,
            alpha: f64::INFINITY,
            beta: 0.0,
            lipschitz: 0.0,
            recession: 0.0,
            homogeneity: 0.0,
            g_tangent: 0.0,
            g_tangent_rec: 0.0,
            g_alpha: f64::INFINITY,
            g_beta: 0.0,
            g_s_lip: 0.0,
            g_xi_lip: 0.0,
            g_rec: 0.0,
            growth_ex: Example::default(),
            periodic_ex: Example::default(),
            lipschitz_ex: Example::default(),
            recession_ex: Example::default(),
            g_ex: Example::default(),
        }
    }
}

// NaN must win every max so that broken integrands cannot hide.
fn fmax(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

fn fmin(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.min(b)
    }
}

impl Acc {
    fn merge(self, o: Acc) -> Acc {
        Acc {
            periodicity: fmax(self.periodicity, o.periodicity),
            growth_count: self.growth_count + o.growth_count,
            alpha: fmin(self.alpha, o.alpha),
            beta: fmax(self.beta, o.beta),
            lipschitz: fmax(self.lipschitz, o.lipschitz),
            recession: fmax(self.recession, o.recession),
            homogeneity: fmax(self.homogeneity, o.homogeneity),
            g_tangent: fmax(self.g_tangent, o.g_tangent),
            g_tangent_rec: fmax(self.g_tangent_rec, o.g_tangent_rec),
            g_alpha: fmin(self.g_alpha, o.g_alpha),
            g_beta: fmax(self.g_beta, o.g_beta),
            g_s_lip: fmax(self.g_s_lip, o.g_s_lip),
            g_xi_lip: fmax(self.g_xi_lip, o.g_xi_lip),
            g_rec: fmax(self.g_rec, o.g_rec),
            growth_ex: self.growth_ex.merge(o.growth_ex),
            periodic_ex: self.periodic_ex.merge(o.periodic_ex),
            lipschitz_ex: self.lipschitz_ex.merge(o.lipschitz_ex),
            recession_ex: self.recession_ex.merge(o.recession_ex),
            g_ex: self.g_ex.merge(o.g_ex),
        }
    }
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn random_matrix<R: Rng>(rng: &mut R, radius: f64) -> Mat3 {
    let dir = Mat3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    let n = dir.norm();
    if n == 0.0 {
        return Mat3::zeros();
    }
    dir * (radius / n)
}

fn random_point<R: Rng>(rng: &mut R) -> Vec3 {
    Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-0.5..0.5))
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64 + 1);
    rng
}

fn check_f_sample<R: Rng>(spec: &IntegrandSpec, opts: &HypothesisOptions, key: usize, rng: &mut R, acc: &mut Acc) {
    let c = spec.constants();
    let x = random_point(rng);
    let xi = if rng.gen_bool(0.02) {
        Mat3::zeros()
    } else {
        let radius = log_uniform(rng, 1e-3, opts.xi_radius);
        random_matrix(rng, radius)
    };
    let n = xi.norm();
    let f = spec.eval_f(&x, &xi);

    for e in [Vec3::x(), Vec3::y()] {
        let shifted = spec.eval_f(&(x + e), &xi);
        let r = (shifted - f).abs() / (1.0 + f.abs());
        acc.periodicity = fmax(acc.periodicity, r);
        if !(r <= 1e-12) {
            acc.periodic_ex.record(key, || format!("f(x+e,xi) - f(x,xi) = {:.3e} at x = {x:?}", shifted - f));
        }
    }

    if n > 0.0 {
        acc.alpha = fmin(acc.alpha, f / n);
    }
    acc.beta = fmax(acc.beta, f / (1.0 + n));
    let slack = REL_TOL * (1.0 + f.abs());
    if !f.is_finite() || f < c.alpha * n - slack || f > c.beta * (1.0 + n) + slack {
        acc.growth_count += 1;
        acc.growth_ex.record(key, || format!("f = {f:.6e} outside [{:.6e}, {:.6e}] at |xi| = {n:.3e}", c.alpha * n, c.beta * (1.0 + n)));
    }

    let step = log_uniform(rng, 1e-4 * (1.0 + n), 1.0 + n);
    let eta = xi + random_matrix(rng, step);
    let d = (eta - xi).norm();
    let q = (spec.eval_f(&x, &eta) - f).abs() / d;
    acc.lipschitz = fmax(acc.lipschitz, q);
    if !(q <= c.lip_l * (1.0 + REL_TOL) + REL_TOL) {
        acc.lipschitz_ex.record(key, || format!("Lipschitz quotient {q:.6e} exceeds L = {}", c.lip_l));
    }

    let finf = spec.eval_f_infinity(&x, &xi);
    let envelope = c.recession_c * (1.0 + n.powf(1.0 - c.recession_q));
    let gap = (f - finf).abs() / envelope;
    acc.recession = fmax(acc.recession, if gap.is_nan() { f64::INFINITY } else { gap });
    if !(gap <= 1.0 + REL_TOL) {
        acc.recession_ex.record(key, || format!("|f - f_inf| = {:.6e} exceeds C(1+|xi|^(1-q)) = {envelope:.6e}", (f - finf).abs()));
    }

    let t = log_uniform(rng, 1e-3, 1e3);
    let lhs = spec.eval_f_infinity(&x, &(xi * t));
    let h = if finf.is_finite() && lhs.is_finite() {
        (lhs - t * finf).abs() / (t * finf.abs()).max(1e-300)
    } else if finf == lhs {
        0.0
    } else {
        f64::INFINITY
    };
    if n > 0.0 {
        acc.homogeneity = fmax(acc.homogeneity, h);
    }
}

fn check_g_sample<R: Rng>(ext: &ExtendedIntegrand, opts: &HypothesisOptions, key: usize, rng: &mut R, acc: &mut Acc) {
    let m = &ext.manifold;
    let c = ext.base.constants();
    let d0 = m.delta0();
    let y = random_point(rng);
    let base = m.sample_point(rng);
    let r = match rng.gen_range(0..4) {
        0 => 0.0,
        1 | 2 => rng.gen_range(0.0..d0),
        _ => rng.gen_range(d0..3.0 * d0),
    };
    let s = base + random_unit(rng) * r;
    let radius = log_uniform(rng, 1e-3, opts.xi_radius);
    let xi = random_matrix(rng, radius);
    let n = xi.norm();
    let g = ext.eval_g(&y, &s, &xi);

    let a_bound = c.alpha.min(1.0);
    let b_bound = c.beta + 1.0;
    acc.g_alpha = fmin(acc.g_alpha, g / n);
    acc.g_beta = fmax(acc.g_beta, g / (1.0 + n));
    let slack = REL_TOL * (1.0 + g.abs());
    if !(g >= a_bound * n - slack && g <= b_bound * (1.0 + n) + slack) {
        acc.g_ex.record(key, || format!("g = {g:.6e} outside [{:.6e}, {:.6e}]", a_bound * n, b_bound * (1.0 + n)));
    }

    let ds = random_unit(rng) * (d0 * log_uniform(rng, 1e-4, 0.5));
    let g2 = ext.eval_g(&y, &(s + ds), &xi);
    acc.g_s_lip = fmax(acc.g_s_lip, (g - g2).abs() / (ds.norm() * n));

    let step = log_uniform(rng, 1e-4 * (1.0 + n), 1.0 + n);
    let eta = xi + random_matrix(rng, step);
    let q = (ext.eval_g(&y, &s, &eta) - g).abs() / (eta - xi).norm();
    acc.g_xi_lip = fmax(acc.g_xi_lip, q);
    if !(q <= (c.lip_l + 1.0) * (1.0 + REL_TOL) + REL_TOL) {
        acc.g_ex.record(key, || format!("xi-Lipschitz quotient of g {q:.6e} exceeds L + 1"));
    }

    let ginf = ext.eval_g_infinity(&y, &s, &xi);
    let gap = (g - ginf).abs() / (1.0 + n.powf(1.0 - c.recession_q));
    acc.g_rec = fmax(acc.g_rec, if gap.is_nan() { f64::INFINITY } else { gap });
    if !(gap <= c.recession_c * (1.0 + REL_TOL)) {
        acc.g_ex.record(key, || format!("|g - g_inf| ratio {gap:.6e} exceeds C = {}", c.recession_c));
    }
}

fn check_tangent_sample<R: Rng>(ext: &ExtendedIntegrand, opts: &HypothesisOptions, key: usize, rng: &mut R, acc: &mut Acc) {
    let m = &ext.manifold;
    let y = random_point(rng);
    let s = m.sample_point(rng);
    let Ok(frame) = m.tangent_frame(&s) else {
        acc.g_ex.record(key, || "sampled manifold point has no tangent frame".into());
        return;
    };
    let radius = log_uniform(rng, 1e-3, opts.xi_radius);
    let mut xi = Mat3::zeros();
    for j in 0..3 {
        let coords: Vec<f64> = (0..frame.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        xi.set_column(j, &frame.embed(&coords));
    }
    let n = xi.norm();
    if n > 0.0 {
        xi *= radius / n;
    }
    let f = ext.base.eval_f(&y, &xi);
    let g = ext.eval_g(&y, &s, &xi);
    let r = (g - f).abs() / (1.0 + f.abs());
    acc.g_tangent = fmax(acc.g_tangent, r);
    if !(r <= 1e-12) {
        acc.g_ex.record(key, || format!("g differs from f on tangent data by {:.3e}", (g - f).abs()));
    }
    let finf = ext.base.eval_f_infinity(&y, &xi);
    let ginf = ext.eval_g_infinity(&y, &s, &xi);
    let rr = if finf.is_finite() { (ginf - finf).abs() / (1.0 + finf.abs()) } else { 0.0 };
    acc.g_tangent_rec = fmax(acc.g_tangent_rec, rr);
}

/// Sample (H1)–(H4) for `spec`, and the bounds on g when a manifold is given.
/// Deterministic for a fixed seed regardless of the thread count.
pub fn check_hypotheses(spec: &IntegrandSpec, manifold: Option<&ManifoldSpec>, opts: &HypothesisOptions) -> Result<HypothesisReport> {
    if opts.sample_budget == 0 || !(opts.xi_radius > 1e-3) {
        return Err(Error::InvalidInput("sample_budget must be positive and xi_radius > 1e-3".into()));
    }
    let ext = manifold.map(|m| ExtendedIntegrand::new(spec.clone(), m.clone()));
    let budget = opts.sample_budget;
    let tangent = if ext.is_some() { budget.min(TANGENT_SAMPLES) } else { 0 };
    let n_chunks = budget.div_ceil(CHUNK);
    let acc = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = chunk_rng(opts.seed, chunk);
            let mut acc = Acc::default();
            for i in chunk * CHUNK..((chunk + 1) * CHUNK).min(budget) {
                check_f_sample(spec, opts, i, &mut rng, &mut acc);
                if let Some(ext) = &ext {
                    check_g_sample(ext, opts, i, &mut rng, &mut acc);
                    if i < tangent {
                        check_tangent_sample(ext, opts, i, &mut rng, &mut acc);
                    }
                }
            }
            acc
        })
        .reduce(Acc::default, Acc::merge);

    let mut violations = Vec::new();
    if let Some((_, m)) = &acc.periodic_ex.0 {
        violations.push(format!("PeriodicityViolation: {m}"));
    }
    if let Some((_, m)) = &acc.growth_ex.0 {
        violations.push(format!("GrowthViolation ({} samples): {m}", acc.growth_count));
    }
    if let Some((_, m)) = &acc.lipschitz_ex.0 {
        violations.push(format!("LipschitzViolation: {m}"));
    }
    if let Some((_, m)) = &acc.recession_ex.0 {
        violations.push(format!("RecessionViolation: {m}"));
    }
    if !(acc.homogeneity <= 1e-10) {
        violations.push(format!("RecessionViolation: f_inf not 1-homogeneous (defect {:.3e})", acc.homogeneity));
    }
    if let Some((_, m)) = &acc.g_ex.0 {
        violations.push(format!("ExtensionViolation: {m}"));
    }
    if ext.is_some() && !acc.g_s_lip.is_finite() {
        violations.push("ExtensionViolation: s-Lipschitz quotient of g is not finite".into());
    }

    let c = *spec.constants();
    let extended = manifold.map(|m| ExtendedReport {
        manifold: m.kind().name(),
        samples: budget,
        tangent_samples: tangent,
        tangent_residual: acc.g_tangent,
        tangent_recession_residual: acc.g_tangent_rec,
        alpha_prime: acc.g_alpha,
        alpha_prime_bound: c.alpha.min(1.0),
        beta_prime: acc.g_beta,
        beta_prime_bound: c.beta + 1.0,
        s_lipschitz: acc.g_s_lip,
        xi_lipschitz: acc.g_xi_lip,
        xi_lipschitz_bound: c.lip_l + 1.0,
        recession_gap: acc.g_rec,
        recession_gap_bound: c.recession_c,
    });
    Ok(HypothesisReport {
        integrand: spec.tag(),
        samples: budget,
        options: *opts,
        declared: c,
        periodicity_residual: acc.periodicity,
        growth_violations: acc.growth_count,
        alpha_empirical: acc.alpha,
        beta_empirical: acc.beta,
        lipschitz_quotient: acc.lipschitz,
        recession_gap_ratio: acc.recession,
        homogeneity_residual: acc.homogeneity,
        extended,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::Builtin;

    fn opts(n: usize) -> HypothesisOptions {
        HypothesisOptions { sample_budget: n, ..Default::default() }
    }

    #[test]
    fn norm_passes_with_zero_residuals() {
        let spec = IntegrandSpec::norm();
        let report = check_hypotheses(&spec, None, &opts(5000)).unwrap();
        assert!(report.passed(), "{:?}", report.violations);
        assert_eq!(report.periodicity_residual, 0.0);
        assert!(report.recession_gap_ratio == 0.0);
        assert!(report.lipschitz_quotient <= 1.0 + 1e-9);
    }

    #[test]
    fn two_phase_passes_declared_constants() {
        let spec = IntegrandSpec::builtin(Builtin::TwoPhase { a1: 2.0, a2: 1.0 }).unwrap();
        assert_eq!(spec.constants().alpha, 1.0);
        assert_eq!(spec.constants().beta, 2.0);
        let report = check_hypotheses(&spec, Some(&ManifoldSpec::sphere()), &opts(5000)).unwrap();
        assert!(report.passed(), "{:?}", report.violations);
    }

    #[test]
    fn quadratic_is_rejected() {
        let spec = IntegrandSpec::builtin(Builtin::Quadratic).unwrap();
        let report = check_hypotheses(&spec, None, &opts(2000)).unwrap();
        assert!(report.violations.iter().any(|v| v.starts_with("GrowthViolation")));
        assert!(matches!(report.ensure_ok(), Err(Error::HypothesisViolation(_))));
    }

    #[test]
    fn understated_lipschitz_constant_is_caught() {
        let mut c = *IntegrandSpec::norm().constants();
        c.lip_l = 0.5;
        let spec = IntegrandSpec::norm().with_constants(c);
        let report = check_hypotheses(&spec, None, &opts(2000)).unwrap();
        assert!(report.violations.iter().any(|v| v.starts_with("LipschitzViolation")));
    }

    #[test]
    fn report_is_deterministic() {
        let spec = IntegrandSpec::builtin(Builtin::Oscillatory { c0: 2.0, c1: 0.5 }).unwrap();
        let m = ManifoldSpec::sphere();
        let a = check_hypotheses(&spec, Some(&m), &opts(3000)).unwrap();
        let b = check_hypotheses(&spec, Some(&m), &opts(3000)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.passed(), "{:?}", a.violations);
        assert!(a.periodicity_residual < 1e-12);
    }
}
