//! Legacy ASCII VTK dumps of nodal fields on structured grids.

use std::io::Write;

use crate::error::Result;
use crate::Vec3;

/// Write `values` on an n₀×n₁×n₂ lattice (first index fastest) as
/// STRUCTURED_POINTS with a vector field `u`.
pub fn write_structured<W: Write>(
    mut out: W,
    title: &str,
    n: [usize; 3],
    origin: [f64; 3],
    spacing: [f64; 3],
    values: &[Vec3],
) -> Result<()> {
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{}", title.replace('\n', " "))?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET STRUCTURED_POINTS")?;
    writeln!(out, "DIMENSIONS {} {} {}", n[0], n[1], n[2])?;
    writeln!(out, "ORIGIN {} {} {}", origin[0], origin[1], origin[2])?;
    writeln!(out, "SPACING {} {} {}", spacing[0], spacing[1], spacing[2])?;
    writeln!(out, "POINT_DATA {}", values.len())?;
    writeln!(out, "VECTORS u double")?;
    for v in values {
        writeln!(out, "{} {} {}", v.x, v.y, v.z)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_one_line_per_node() {
        let mut buf = Vec::new();
        write_structured(&mut buf, "t", [2, 1, 1], [0.0; 3], [1.0; 3], &[Vec3::x(), Vec3::y()]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("DIMENSIONS 2 1 1"));
        assert_eq!(s.lines().count(), 11);
    }
}
