//! Homogenized bulk density from the cell problem, with extrapolation in t.

use thinhom::cell::{hom_density, xi_from_coords, CellProblemConfig};
use thinhom::integrand::{Builtin, IntegrandSpec};
use thinhom::manifold::ManifoldSpec;
use thinhom::Vec3;

fn main() -> thinhom::error::Result<()> {
    let sphere = ManifoldSpec::sphere();
    let s = Vec3::new(0.0, 0.0, 1.0);
    let frame = sphere.tangent_frame(&s)?;
    let config = CellProblemConfig::default();

    let cases = [
        (Builtin::Norm, [0.6, 0.0, 0.0, 0.8], 1.0),
        (Builtin::SmoothLinear, [1.0, 0.0, 0.0, 0.0], 2f64.sqrt()),
        (Builtin::TwoPhase { a1: 2.0, a2: 1.0 }, [1.0, 0.0, 0.0, 0.0], f64::NAN),
    ];
    for (b, c, expected) in cases {
        let f = IntegrandSpec::builtin(b)?;
        let xi = xi_from_coords(&frame, &c);
        let r = hom_density(&sphere, &f, &s, &xi, &config)?;
        let per_t: Vec<String> = r.per_t.iter().map(|p| format!("t={}: {:.5}", p.t, p.value)).collect();
        println!("{:<20} ξ = {c:?}", f.tag());
        println!("    {}", per_t.join(", "));
        println!(
            "    → {:.5} ({:?}, lower bound {:.3}){}",
            r.value,
            r.extrapolation.method,
            r.lower_bound,
            if expected.is_nan() { String::new() } else { format!(", expected {expected:.5}") }
        );
    }
    Ok(())
}
