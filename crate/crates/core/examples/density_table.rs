//! Tabulate the bulk density over s and ξ grids, query it off-grid and run
//! the structural property suite.

use thinhom::cell::{xi_from_coords, CellProblemConfig};
use thinhom::integrand::{Builtin, IntegrandSpec};
use thinhom::manifold::ManifoldSpec;
use thinhom::table::{check_density_properties, tabulate_density, DensityPropertyOptions, XiGrid};
use thinhom::Vec3;

fn main() -> thinhom::error::Result<()> {
    let sphere = ManifoldSpec::sphere();
    let f = IntegrandSpec::builtin(Builtin::SmoothLinear)?;
    let config = CellProblemConfig { t_list: vec![1.0, 2.0], n_xy: 8, ..Default::default() };
    let s_points = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0)];
    let grid = XiGrid::Tensor { axes: [vec![0.0, 0.5, 1.0], vec![0.0], vec![0.0, 1.0], vec![0.0]] };

    let table = tabulate_density(&sphere, &f, &s_points, &grid, &config, true)?;
    table.write_csv(std::io::stdout())?;
    println!("failures: {}", table.failures());

    let s = Vec3::new(0.0, 0.0, 1.0);
    let xi = xi_from_coords(&sphere.tangent_frame(&s)?, &[0.75, 0.0, 0.5, 0.0]);
    println!(
        "multilinear Tf(s, ξ) = {:.5} on the coarse grid, pointwise value {:.5}",
        table.bulk_at(&sphere, &s, &xi)?,
        (1.0 + xi.norm_squared()).sqrt()
    );

    let opts = DensityPropertyOptions { lines: 4, ..Default::default() };
    let report = check_density_properties(&sphere, &f, &table, &config, &opts)?;
    println!(
        "sandwich violations {}, ξ-Lipschitz {:.4} ≤ {:.4}, recession gap ratio {:?}, passed {}",
        report.sandwich_violations,
        report.lipschitz_quotient,
        report.lipschitz_bound,
        report.recession_gap_ratio,
        report.passed()
    );
    Ok(())
}
