//! Extrapolation of cell-size sequences with the model v(t) = v∞ + c/t.

use serde::{Deserialize, Serialize};

/// Relative fit residual (against the spread of the data) above which the
/// model is considered not to describe the sequence.
pub const RESIDUAL_THRESHOLD: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtrapolationMethod {
    /// One sample only.
    Single,
    /// Least-squares fit on every sample.
    Fit,
    /// Fit restricted to the largest sizes of a decreasing sequence, the
    /// smaller ones being outside the asymptotic regime.
    TailFit,
    /// The model does not fit; smallest sample.
    Minimum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub value: f64,
    pub method: ExtrapolationMethod,
    pub v_inf: f64,
    pub slope: f64,
    /// RMS residual of the accepted fit (of the full fit for `Minimum`).
    pub residual: f64,
    pub spread: f64,
    /// Samples used by the accepted fit.
    pub used: usize,
    /// The value was raised to the certified lower bound.
    pub clamped: bool,
}

fn fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| 1.0 / p.0).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(points).map(|(x, p)| (x - mx) * (p.1 - my)).sum();
    let c = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let v = my - c * mx;
    let rms = (xs.iter().zip(points).map(|(x, p)| (v + c * x - p.1).powi(2)).sum::<f64>() / n).sqrt();
    (v, c, rms)
}

/// Extrapolate samples (t, v(t)) to t → ∞, never below `lower_bound`.
pub fn extrapolate(points: &[(f64, f64)], lower_bound: f64) -> Extrapolation {
    assert!(!points.is_empty(), "nothing to extrapolate");
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let min = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let spread = max - min;
    let finish = |value: f64, method, v_inf, slope, residual, used| {
        let clamped = value < lower_bound;
        Extrapolation { value: value.max(lower_bound), method, v_inf, slope, residual, spread, used, clamped }
    };
    if pts.len() == 1 {
        return finish(pts[0].1, ExtrapolationMethod::Single, pts[0].1, 0.0, 0.0, 1);
    }
    if spread <= 1e-12 * (1.0 + max.abs()) {
        return finish(min, ExtrapolationMethod::Fit, min, 0.0, 0.0, pts.len());
    }
    let (v, c, rms) = fit(&pts);
    if rms <= RESIDUAL_THRESHOLD * spread {
        return finish(v, ExtrapolationMethod::Fit, v, c, rms, pts.len());
    }
    let full_rms = rms;
    // a model misfit is only attributed to pre-asymptotic small sizes when the
    // whole sequence decreases
    let decreasing = pts.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12 * (1.0 + w[0].1.abs()));
    for start in 1..pts.len() - 1 {
        let tail = &pts[start..];
        let (tv, tc, trms) = fit(tail);
        let tmax = tail.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let tmin = tail.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let accept = tail.len() == 2 || trms <= RESIDUAL_THRESHOLD * (tmax - tmin);
        if decreasing && accept && tc >= 0.0 {
            return finish(tv, ExtrapolationMethod::TailFit, tv, tc, trms, tail.len());
        }
    }
    finish(min, ExtrapolationMethod::Minimum, v, c, full_rms, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_model_is_recovered() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0].iter().map(|&t| (t, 1.0 + 0.5 / t)).collect();
        let e = extrapolate(&pts, 0.0);
        assert_eq!(e.method, ExtrapolationMethod::Fit);
        assert!((e.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn capped_first_sample_falls_back_to_the_tail() {
        let pts = [(1.0, 1.5), (2.0, 1.375), (4.0, 1.1875)];
        let e = extrapolate(&pts, 1.0);
        assert_eq!(e.method, ExtrapolationMethod::TailFit);
        assert!((e.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oscillating_sequence_uses_the_minimum() {
        let pts = [(1.0, 1.0), (2.0, 1.4), (4.0, 1.1)];
        let e = extrapolate(&pts, 0.0);
        assert_eq!(e.method, ExtrapolationMethod::Minimum);
        assert_eq!(e.value, 1.0);
    }

    #[test]
    fn constant_and_single_sequences() {
        assert_eq!(extrapolate(&[(2.0, 3.0)], 0.0).value, 3.0);
        let e = extrapolate(&[(1.0, 2.0), (2.0, 2.0), (4.0, 2.0)], 0.0);
        assert_eq!(e.value, 2.0);
    }

    #[test]
    fn lower_bound_is_enforced() {
        let pts = [(1.0, 2.0), (2.0, 1.0), (4.0, 0.5)];
        let e = extrapolate(&pts, 0.4);
        assert!(e.clamped);
        assert_eq!(e.value, 0.4);
    }
}
