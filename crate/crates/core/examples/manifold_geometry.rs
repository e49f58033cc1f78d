//! Distance, projection, tangent frames and geodesics on the builtin manifolds.

use thinhom::manifold::{ManifoldKind, ManifoldSpec};
use thinhom::Vec3;

fn main() -> thinhom::error::Result<()> {
    let sphere = ManifoldSpec::sphere();
    let p = Vec3::new(0.3, -1.2, 0.8);
    let q = sphere.nearest_point(&p)?;
    println!("sphere: dist({p:?}) = {:.6}, Π = {q:?}", sphere.distance(&p));

    let frame = sphere.tangent_frame(&q)?;
    for (k, e) in frame.basis.iter().enumerate() {
        println!("  e{} = {:?}  (e·n = {:.1e})", k + 1, e, e.dot(&sphere.normal(&q)?));
    }

    let a = Vec3::new(1.0, 0.0, 0.0);
    let b = Vec3::new(0.0, 0.0, 1.0);
    let d = sphere.geodesic_distance(&a, &b)?;
    println!("  d(a, b) = {d:.6}, exact {:.6}", std::f64::consts::FRAC_PI_2);
    let path = sphere.geodesic_path(&a, &b, 64)?;
    let mid = path.eval(&sphere, 0.5);
    println!("  midpoint {mid:?}, off-manifold by {:.1e}", sphere.distance(&mid));

    let torus = ManifoldSpec::new(ManifoldKind::Torus { major: 2.0, minor: 0.5 })?;
    let v = torus.validate();
    println!(
        "torus: reach {:.3}, δ₀ {:.3}, {} graph nodes, {} component(s), {} projection failures",
        torus.kind().reach(),
        torus.delta0(),
        v.graph_nodes,
        v.components,
        v.uniqueness_failures
    );
    let (u, w) = (Vec3::new(2.5, 0.0, 0.0), Vec3::new(-2.5, 0.0, 0.0));
    println!(
        "  outer equator antipodes: {:.4}, shorter than the equator arc {:.4}",
        torus.geodesic_distance(&u, &w)?,
        2.5 * std::f64::consts::PI
    );
    Ok(())
}
