use rayon::prelude::*;

use super::{decimate, extract_surface, GeometryError, InsideTester, TriMesh, Vec3};

pub const DEFAULT_GRID_RES: usize = 256;
pub const DEFAULT_TARGET_FACES: usize = 3000;

/// Boolean occupancy grid over `[min_bound, max_bound]`, x-fastest layout.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub res: usize,
    pub min_bound: Vec3,
    pub max_bound: Vec3,
    pub data: Vec<bool>,
}

impl VoxelGrid {
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.res * (j + self.res * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.data[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: bool) {
        let idx = self.index(i, j, k);
        self.data[idx] = v;
    }

    pub fn voxel_size(&self) -> Vec3 {
        (self.max_bound - self.min_bound) / self.res as f64
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let h = self.voxel_size();
        self.min_bound + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5).component_mul(&h)
    }

    pub fn occupied(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.occupied() as f64 / self.data.len() as f64
    }

    fn same_shape(&self, other: &VoxelGrid) -> bool {
        self.res == other.res && self.min_bound == other.min_bound && self.max_bound == other.max_bound
    }

    pub fn union(&self, other: &VoxelGrid) -> Result<VoxelGrid, GeometryError> {
        self.zip(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &VoxelGrid) -> Result<VoxelGrid, GeometryError> {
        self.zip(other, |a, b| a && b)
    }

    fn zip(&self, other: &VoxelGrid, f: impl Fn(bool, bool) -> bool) -> Result<VoxelGrid, GeometryError> {
        if !self.same_shape(other) {
            return Err(GeometryError::GridMismatch);
        }
        let mut out = self.clone();
        for (o, (&a, &b)) in out.data.iter_mut().zip(self.data.iter().zip(&other.data)) {
            *o = f(a, b);
        }
        Ok(out)
    }
}

/// Empty grid over `[-0.5, 0.5]³`.
pub fn empty_grid(res: usize) -> Result<VoxelGrid, GeometryError> {
    if res < 2 {
        return Err(GeometryError::InvalidResolution(res));
    }
    Ok(VoxelGrid {
        res,
        min_bound: Vec3::repeat(-0.5),
        max_bound: Vec3::repeat(0.5),
        data: vec![false; res * res * res],
    })
}

/// Set every voxel whose center lies inside `mesh`.
pub fn add_mesh(grid: &VoxelGrid, mesh: &TriMesh) -> Result<VoxelGrid, GeometryError> {
    paint(grid, mesh, true)
}

/// Clear every voxel whose center lies inside `mesh`.
pub fn sub_mesh(grid: &VoxelGrid, mesh: &TriMesh) -> Result<VoxelGrid, GeometryError> {
    paint(grid, mesh, false)
}

fn paint(grid: &VoxelGrid, mesh: &TriMesh, value: bool) -> Result<VoxelGrid, GeometryError> {
    if mesh.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }
    let open = mesh.open_edge_count();
    if open > 0 {
        return Err(GeometryError::NotWatertight(open));
    }
    let bb = mesh.aabb()?;
    if (0..3).any(|a| bb.min[a] < grid.min_bound[a] || bb.max[a] > grid.max_bound[a]) {
        return Err(GeometryError::OutOfBounds {
            min: [bb.min.x, bb.min.y, bb.min.z],
            max: [bb.max.x, bb.max.y, bb.max.z],
        });
    }
    let tester = InsideTester::new(mesh);
    let res = grid.res;
    let h = grid.voxel_size();
    let min = grid.min_bound;
    let mut out = grid.clone();
    out.data
        .par_chunks_mut(res * res)
        .enumerate()
        .for_each(|(k, slab)| {
            let z = min.z + (k as f64 + 0.5) * h.z;
            if z < bb.min.z || z > bb.max.z {
                return;
            }
            for j in 0..res {
                let y = min.y + (j as f64 + 0.5) * h.y;
                let xs = tester.crossings(y, z);
                if xs.is_empty() {
                    continue;
                }
                // Walk voxel centers left to right; crossings beyond x decide parity.
                let mut next = 0;
                let row = &mut slab[j * res..(j + 1) * res];
                for (i, cell) in row.iter_mut().enumerate() {
                    let x = min.x + (i as f64 + 0.5) * h.x;
                    while next < xs.len() && xs[next] <= x {
                        next += 1;
                    }
                    if (xs.len() - next) % 2 == 1 {
                        *cell = value;
                    }
                }
            }
        });
    Ok(out)
}

/// Split at z = 0 by voxel center: `(up, bottom)` with `up` holding z >= 0.
pub fn cut_grid(grid: &VoxelGrid) -> (VoxelGrid, VoxelGrid) {
    let mut up = grid.clone();
    let mut bottom = grid.clone();
    let res = grid.res;
    let h = grid.voxel_size();
    for k in 0..res {
        let z = grid.min_bound.z + (k as f64 + 0.5) * h.z;
        let slab = k * res * res..(k + 1) * res * res;
        if z < 0.0 {
            up.data[slab].fill(false);
        } else {
            bottom.data[slab].fill(false);
        }
    }
    (up, bottom)
}

/// Iso-surface at 0.5 of the occupancy field, optionally decimated to at most
/// `target_num_faces` faces.
pub fn grid_to_mesh(grid: &VoxelGrid, do_simplify: bool, target_num_faces: usize) -> TriMesh {
    let mesh = extract_surface(grid);
    if do_simplify && mesh.faces.len() > target_num_faces {
        decimate(&mesh, target_num_faces)
    } else {
        mesh
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{get_volume, primitive, translate, PrimitiveKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn ball(r: f64) -> TriMesh {
        primitive(PrimitiveKind::Ball, &[r]).unwrap()
    }

    #[test]
    fn empty_grid_defaults() {
        let g = empty_grid(DEFAULT_GRID_RES).unwrap();
        assert_eq!(g.res, 256);
        assert_eq!(g.occupied(), 0);
        assert_eq!(g.min_bound, Vec3::repeat(-0.5));
        assert_eq!(g.max_bound, Vec3::repeat(0.5));
        let g = empty_grid(64).unwrap();
        assert_eq!((g.res, g.occupied()), (64, 0));
        assert_eq!(empty_grid(1), Err(GeometryError::InvalidResolution(1)));
    }

    #[test]
    fn ball_fraction_and_shell() {
        let g = add_mesh(&empty_grid(64).unwrap(), &ball(0.4)).unwrap();
        let expect = 4.0 / 3.0 * PI * 0.4f64.powi(3);
        assert!((g.occupied_fraction() / expect - 1.0).abs() < 0.02);
        let again = add_mesh(&g, &ball(0.4)).unwrap();
        assert_eq!(again, g);
        let shell = sub_mesh(&g, &ball(0.2)).unwrap();
        let expect = 4.0 / 3.0 * PI * (0.4f64.powi(3) - 0.2f64.powi(3));
        assert!((shell.occupied_fraction() / expect - 1.0).abs() < 0.02);
        let gone = sub_mesh(&g, &ball(0.4)).unwrap();
        assert_eq!(gone.occupied(), 0);
        let empty = empty_grid(32).unwrap();
        assert_eq!(sub_mesh(&empty, &ball(0.3)).unwrap(), empty);
    }

    #[test]
    fn add_to_full_region_is_unchanged() {
        let big = add_mesh(&empty_grid(32).unwrap(), &ball(0.45)).unwrap();
        let more = add_mesh(&big, &ball(0.2)).unwrap();
        assert_eq!(big, more);
    }

    #[test]
    fn out_of_bounds_and_open_meshes_rejected() {
        let g = empty_grid(16).unwrap();
        assert!(matches!(
            add_mesh(&g, &ball(0.6)),
            Err(GeometryError::OutOfBounds { .. })
        ));
        let mut open = ball(0.2);
        open.faces.pop();
        assert!(matches!(sub_mesh(&g, &open), Err(GeometryError::NotWatertight(_))));
    }

    #[test]
    fn cut_full_grid_counts() {
        let mut g = empty_grid(256).unwrap();
        g.data.fill(true);
        let (up, bottom) = cut_grid(&g);
        assert_eq!(bottom.occupied(), 128 * 256 * 256);
        assert_eq!(up.occupied(), 128 * 256 * 256);
        let e = empty_grid(8).unwrap();
        let (u, b) = cut_grid(&e);
        assert_eq!((u.occupied(), b.occupied()), (0, 0));
    }

    #[test]
    fn cut_is_a_partition_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mut g = empty_grid(12).unwrap();
            for v in &mut g.data {
                *v = rng.random_bool(0.4);
            }
            let (up, bottom) = cut_grid(&g);
            assert_eq!(up.union(&bottom).unwrap(), g);
            assert_eq!(up.intersection(&bottom).unwrap().occupied(), 0);
        }
    }

    #[test]
    fn grid_to_mesh_ball_volume() {
        let g = add_mesh(&empty_grid(64).unwrap(), &ball(0.4)).unwrap();
        let raw = grid_to_mesh(&g, false, DEFAULT_TARGET_FACES);
        assert!(raw.is_watertight() && raw.is_consistently_oriented());
        let expect = 4.0 / 3.0 * PI * 0.4f64.powi(3);
        let v = get_volume(&raw).unwrap();
        assert!((v / expect - 1.0).abs() < 0.04, "{v} vs {expect}");
        let simple = grid_to_mesh(&g, true, DEFAULT_TARGET_FACES);
        assert!(simple.faces.len() <= DEFAULT_TARGET_FACES);
        assert!(simple.is_watertight());
        let vs = get_volume(&simple).unwrap();
        assert!((vs / v - 1.0).abs() <= 0.03, "{vs} vs {v}");
        let empty = grid_to_mesh(&empty_grid(16).unwrap(), true, 3000);
        assert_eq!(empty.faces.len(), 0);
    }

    #[test]
    fn offset_box_roundtrip() {
        let b = translate(
            &primitive(PrimitiveKind::Cube, &[0.3, 0.2, 0.25]).unwrap(),
            &Vec3::new(0.1, -0.05, 0.02),
        );
        let g = add_mesh(&empty_grid(64).unwrap(), &b).unwrap();
        let m = grid_to_mesh(&g, false, 0);
        let v = get_volume(&m).unwrap();
        let area = 2.0 * (0.3 * 0.2 + 0.3 * 0.25 + 0.2 * 0.25);
        let tol = (0.02 * 0.015f64).max(3.0 / 64.0 * area);
        assert!((v - 0.015).abs() <= tol, "{v}");
    }
}
