use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::voxel::VoxelGrid;
use super::GeometryError;

pub const DEFAULT_POINT_COUNT: usize = 2000;

/// Points normalized into the cube `[-0.5, 0.5]^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Occupied voxels with at least one empty face neighbour.
pub fn surface_voxels(g: &VoxelGrid) -> Vec<(usize, usize, usize)> {
    const NEIGHBOURS: [(i64, i64, i64); 6] =
        [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
    g.bits()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(idx, _)| g.coords(idx))
        .filter(|&(i, j, k)| {
            NEIGHBOURS.iter().any(|&(di, dj, dk)| {
                !g.get_signed(i as i64 + di, j as i64 + dj, k as i64 + dk)
            })
        })
        .collect()
}

/// Samples `n` points uniformly over surface voxels, jittered inside each
/// voxel, then centers the occupied region's bounding box at the origin and
/// scales its longest side to 1.
pub fn sample_point_cloud(g: &VoxelGrid, n: usize, seed: u64) -> Result<PointCloud, GeometryError> {
    let surface = surface_voxels(g);
    if surface.is_empty() {
        return Err(GeometryError::EmptySolid);
    }
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for &(i, j, k) in &surface {
        for (axis, v) in [i, j, k].into_iter().enumerate() {
            lo[axis] = lo[axis].min(v);
            hi[axis] = hi[axis].max(v + 1);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).max().unwrap_or(1) as f64;
    let mid: Vec<f64> = (0..3).map(|a| (lo[a] + hi[a]) as f64 / 2.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let (i, j, k) = surface[rng.gen_range(0..surface.len())];
            let jitter: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
            Point3::new(
                (i as f64 + jitter[0] - mid[0]) / extent,
                (j as f64 + jitter[1] - mid[1]) / extent,
                (k as f64 + jitter[2] - mid[2]) / extent,
            )
        })
        .collect();
    Ok(PointCloud { points })
}
