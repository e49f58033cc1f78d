//! Thin-film energies I^h of recovery sequences against the limit functional.

use thinhom::functional::{gamma_experiment, GammaConfig, Scenario, ScenarioSpec};
use thinhom::integrand::IntegrandSpec;
use thinhom::manifold::ManifoldSpec;

fn main() -> thinhom::error::Result<()> {
    let sphere = ManifoldSpec::sphere();
    let f = IntegrandSpec::norm();
    for scenario in [Scenario::Constant, Scenario::SingleWall, Scenario::AffineTangent] {
        let config = GammaConfig { scenario, ..Default::default() };
        let spec = ScenarioSpec::build(&sphere, &f, &config)?;
        let r = gamma_experiment(&sphere, &f, &spec, &config, None)?;
        println!("{}: I(u*) = {:.6}, oracle {:?}", scenario.name(), r.limit_value, r.oracle);
        for l in &r.levels {
            println!("    h = {:<5} I^h = {:.6}  gap {:+.2e}", l.h, l.energy, l.gap);
        }
        println!("    liminf {} limsup {} monotone gap {}", r.liminf_ok, r.limsup_ok, r.gap_monotone);
    }
    Ok(())
}
