//! Surface energy density θ(a, b, ν) from the layer and thickness forms.

use thinhom::integrand::IntegrandSpec;
use thinhom::jump::{theta, JumpProblemConfig};
use thinhom::manifold::ManifoldSpec;
use thinhom::{Vec2, Vec3};

fn main() -> thinhom::error::Result<()> {
    let sphere = ManifoldSpec::sphere();
    let f = IntegrandSpec::norm();
    let config = JumpProblemConfig::default();
    let a = Vec3::new(1.0, 0.0, 0.0);
    let b = Vec3::new(0.6, 0.8, 0.0);
    for angle in [0.0f64, 0.4, 1.1] {
        let nu = Vec2::new(angle.cos(), angle.sin());
        let r = theta(&sphere, &f, &a, &b, &nu, &config)?;
        let b_form = r.form_b.as_ref().map(|fb| fb.value).unwrap_or(f64::NAN);
        println!(
            "ν angle {angle:.1}: θ = {:.5} (A), {:.5} (B), arccos(a·b) = {:.5}, A/B gap {:.2e}",
            r.value,
            b_form,
            a.dot(&b).acos(),
            r.ab_discrepancy.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
