//! Mesh, voxel and point-cloud file formats.
//!
//! Voxel files are plain text:
//!
//! ```text
//! voxrle 1
//! resolution <R>
//! bounds <min_x> <min_y> <min_z> <size>
//! runs <r0> <r1> ...
//! ```
//!
//! Runs alternate empty/occupied starting with empty, over cells in x-fastest
//! order; the run lengths sum to `R^3`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{self, Write};

use nalgebra::{Point3, Vector3};

use super::extrude::TriMesh;
use super::pointcloud::PointCloud;
use super::voxel::{CubeBounds, VoxelGrid};

pub fn write_obj<W: Write>(mesh: &TriMesh, mut w: W) -> io::Result<()> {
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

pub fn write_stl<W: Write>(mesh: &TriMesh, mut w: W) -> io::Result<()> {
    let mut header = [0u8; 80];
    let tag = b"binary stl";
    header[..tag.len()].copy_from_slice(tag);
    w.write_all(&header)?;
    w.write_all(&(mesh.triangles.len() as u32).to_le_bytes())?;
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
        let n = (b - a).cross(&(c - a));
        let n = if n.norm() > 0.0 { n.normalize() } else { Vector3::zeros() };
        for v in [n.x, n.y, n.z] {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        for p in [a, b, c] {
            for v in [p.x, p.y, p.z] {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.write_all(&0u16.to_le_bytes())?;
    }
    Ok(())
}

/// Closed mesh of the boundary between occupied and empty voxels.
pub fn voxel_surface_mesh(g: &VoxelGrid) -> TriMesh {
    let r = g.resolution();
    let h = g.voxel_size();
    let min = g.bounds().min;
    let mut index: HashMap<(usize, usize, usize), u32> = HashMap::new();
    let mut mesh = TriMesh::default();
    let mut vertex = |mesh: &mut TriMesh, c: (usize, usize, usize)| -> u32 {
        *index.entry(c).or_insert_with(|| {
            mesh.vertices.push(Point3::new(
                min[0] + c.0 as f64 * h,
                min[1] + c.1 as f64 * h,
                min[2] + c.2 as f64 * h,
            ));
            (mesh.vertices.len() - 1) as u32
        })
    };
    // For each axis and direction: the neighbour offset and the face corners
    // in counterclockwise order seen from outside.
    type Corner = (usize, usize, usize);
    let faces: [((i64, i64, i64), [Corner; 4]); 6] = [
        ((1, 0, 0), [(1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)]),
        ((-1, 0, 0), [(0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)]),
        ((0, 1, 0), [(0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)]),
        ((0, -1, 0), [(0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)]),
        ((0, 0, 1), [(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]),
        ((0, 0, -1), [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)]),
    ];
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                if !g.get(i, j, k) {
                    continue;
                }
                for (d, corners) in &faces {
                    if g.get_signed(i as i64 + d.0, j as i64 + d.1, k as i64 + d.2) {
                        continue;
                    }
                    let q = corners.map(|c| vertex(&mut mesh, (i + c.0, j + c.1, k + c.2)));
                    mesh.triangles.push([q[0], q[1], q[2]]);
                    mesh.triangles.push([q[0], q[2], q[3]]);
                }
            }
        }
    }
    mesh
}

pub fn voxels_to_rle(g: &VoxelGrid) -> String {
    let b = g.bounds();
    let mut out = String::new();
    let _ = writeln!(out, "voxrle 1");
    let _ = writeln!(out, "resolution {}", g.resolution());
    let _ = writeln!(out, "bounds {} {} {} {}", b.min[0], b.min[1], b.min[2], b.size);
    out.push_str("runs");
    let mut current = false;
    let mut run = 0usize;
    for &bit in g.bits() {
        if bit == current {
            run += 1;
        } else {
            let _ = write!(out, " {run}");
            current = bit;
            run = 1;
        }
    }
    let _ = writeln!(out, " {run}");
    out
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("malformed voxel file: {0}")]
pub struct RleError(pub String);

pub fn voxels_from_rle(text: &str) -> Result<VoxelGrid, RleError> {
    let err = |m: &str| RleError(m.to_string());
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("voxrle 1") {
        return Err(err("missing voxrle header"));
    }
    let field = |line: Option<&str>, key: &str| -> Result<Vec<String>, RleError> {
        let line = line.ok_or_else(|| err(key))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(err(key));
        }
        Ok(parts.map(str::to_string).collect())
    };
    let res: usize = field(lines.next(), "resolution")?
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err("resolution"))?;
    let b: Vec<f64> = field(lines.next(), "bounds")?
        .iter()
        .map(|s| s.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| err("bounds"))?;
    if b.len() != 4 {
        return Err(err("bounds"));
    }
    let runs: Vec<usize> = field(lines.next(), "runs")?
        .iter()
        .map(|s| s.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| err("runs"))?;
    let total = res.checked_pow(3).ok_or_else(|| err("resolution"))?;
    if runs.iter().sum::<usize>() != total {
        return Err(err("run lengths do not cover the grid"));
    }
    let mut bits = Vec::with_capacity(total);
    for (i, &n) in runs.iter().enumerate() {
        bits.extend(std::iter::repeat(i % 2 == 1).take(n));
    }
    let bounds = CubeBounds { min: [b[0], b[1], b[2]], size: b[3] };
    VoxelGrid::from_bits(res, bounds, bits).map_err(|e| RleError(e.to_string()))
}

pub fn write_xyz<W: Write>(cloud: &PointCloud, mut w: W) -> io::Result<()> {
    for p in &cloud.points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> VoxelGrid {
        let mut g = VoxelGrid::empty(5, CubeBounds { min: [-1.0, 0.0, 2.0], size: 2.5 }).unwrap();
        for (i, j, k) in [(0, 0, 0), (1, 0, 0), (3, 3, 3), (4, 4, 4), (2, 3, 1)] {
            g.set(i, j, k, true);
        }
        g
    }

    #[test]
    fn rle_round_trip() {
        let g = grid();
        let text = voxels_to_rle(&g);
        assert!(text.starts_with("voxrle 1\nresolution 5\nbounds -1 0 2 2.5\nruns 0 2 "));
        assert_eq!(voxels_from_rle(&text).unwrap(), g);
        assert!(voxels_from_rle("voxrle 1\nresolution 2\nbounds 0 0 0 1\nruns 3\n").is_err());
        assert!(voxels_from_rle("nope").is_err());
    }

    #[test]
    fn voxel_surface_is_closed_with_voxel_volume() {
        let g = grid();
        let mesh = voxel_surface_mesh(&g);
        let h = g.voxel_size();
        assert!(mesh.is_watertight());
        assert!((mesh.volume() - g.count() as f64 * h.powi(3)).abs() < 1e-9);
    }

    #[test]
    fn stl_and_obj_sizes() {
        let mesh = voxel_surface_mesh(&grid());
        let mut stl = Vec::new();
        write_stl(&mesh, &mut stl).unwrap();
        assert_eq!(stl.len(), 84 + 50 * mesh.triangles.len());
        let mut obj = Vec::new();
        write_obj(&mesh, &mut obj).unwrap();
        let text = String::from_utf8(obj).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), mesh.triangles.len());
        let mut xyz = Vec::new();
        write_xyz(&PointCloud::new(vec![Point3::new(0.5, -0.25, 0.0)]), &mut xyz).unwrap();
        assert_eq!(String::from_utf8(xyz).unwrap(), "0.5 -0.25 0\n");
    }
}
