//! ASCII PLY output for point clouds.

use std::io::{self, Write};

use crate::geometry::PointCloud;

pub fn write_ply<W: Write>(mut w: W, cloud: &PointCloud) -> io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "comment frame {:?}", cloud.frame)?;
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    writeln!(w, "end_header")?;
    for p in &cloud.points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}
