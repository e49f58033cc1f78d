//! Monte Carlo check of the growth, Lipschitz and recession hypotheses,
//! including the extension off the tangent bundle.

use thinhom::hypotheses::{check_hypotheses, HypothesisOptions};
use thinhom::integrand::{Builtin, IntegrandSpec};
use thinhom::manifold::ManifoldSpec;

fn main() -> thinhom::error::Result<()> {
    let sphere = ManifoldSpec::sphere();
    let opts = HypothesisOptions { sample_budget: 20_000, ..Default::default() };
    for b in [Builtin::Norm, Builtin::SmoothLinear, Builtin::TwoPhase { a1: 2.0, a2: 1.0 }, Builtin::Quadratic] {
        let f = IntegrandSpec::builtin(b)?;
        let r = check_hypotheses(&f, Some(&sphere), &opts)?;
        println!(
            "{:<24} α̂ {:.4}  β̂ {:.4}  Lip {:.4}  rec-gap {:.3}  {}",
            f.tag(),
            r.alpha_empirical,
            r.beta_empirical,
            r.lipschitz_quotient,
            r.recession_gap_ratio,
            if r.passed() { "ok" } else { "VIOLATED" }
        );
        if let Some(e) = &r.extended {
            println!(
                "    g on tangent configurations: max |g − f| = {:.1e}, α' {:.3}, β' {:.3}",
                e.tangent_residual, e.alpha_prime, e.beta_prime
            );
        }
        for v in &r.violations {
            println!("    {v}");
        }
    }
    Ok(())
}
