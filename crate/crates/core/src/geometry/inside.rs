//! Point-in-mesh by ray parity along +X.
//!
//! The query ray is symbolically perturbed to `(y + ε, z + ε²)`, and every
//! projected edge is evaluated in a canonical vertex order, so a ray through a
//! shared edge or vertex of a watertight mesh is counted consistently and the
//! parity is exact.

use super::{Aabb, TriMesh, Vec3};

#[derive(Debug, Clone, Copy)]
struct Tri {
    v: [Vec3; 3],
}

/// Preprocessed mesh for repeated inside queries.
#[derive(Debug, Clone)]
pub struct InsideTester {
    tris: Vec<Tri>,
    bounds: Option<Aabb>,
    y0: f64,
    z0: f64,
    cell_y: f64,
    cell_z: f64,
    ny: usize,
    nz: usize,
    bins: Vec<Vec<u32>>,
}

/// Orientation of `(p, a, b)` in the YZ projection under the perturbation.
fn orient(py: f64, pz: f64, a: &Vec3, b: &Vec3) -> f64 {
    let swapped = (b.y, b.z) < (a.y, a.z);
    let (a, b) = if swapped { (b, a) } else { (a, b) };
    let e = (a.y - py) * (b.z - pz) - (a.z - pz) * (b.y - py);
    let s = if e != 0.0 {
        e
    } else if a.z != b.z {
        // ε term; scaled tiny so barycentric weights stay finite.
        (a.z - b.z).signum() * f64::MIN_POSITIVE
    } else if a.y != b.y {
        (b.y - a.y).signum() * f64::MIN_POSITIVE
    } else {
        0.0
    };
    if swapped {
        -s
    } else {
        s
    }
}

/// X coordinate where the perturbed ray through `(y, z)` crosses the triangle.
fn crossing(t: &Tri, py: f64, pz: f64) -> Option<f64> {
    let w0 = orient(py, pz, &t.v[1], &t.v[2]);
    let w1 = orient(py, pz, &t.v[2], &t.v[0]);
    let w2 = orient(py, pz, &t.v[0], &t.v[1]);
    let pos = w0 > 0.0 && w1 > 0.0 && w2 > 0.0;
    let neg = w0 < 0.0 && w1 < 0.0 && w2 < 0.0;
    if !(pos || neg) {
        return None;
    }
    let sum = w0 + w1 + w2;
    let x = (w0 * t.v[0].x + w1 * t.v[1].x + w2 * t.v[2].x) / sum;
    if x.is_finite() {
        Some(x)
    } else {
        // Fully degenerate weights: the ray grazes a sliver; use the centroid.
        Some((t.v[0].x + t.v[1].x + t.v[2].x) / 3.0)
    }
}

impl InsideTester {
    pub fn new(mesh: &TriMesh) -> Self {
        let tris: Vec<Tri> = (0..mesh.faces.len())
            .map(|f| Tri {
                v: mesh.triangle(f),
            })
            .collect();
        let bounds = mesh.aabb().ok();
        let (y0, z0, ey, ez) = match bounds {
            Some(bb) => (bb.min.y, bb.min.z, bb.extents().y, bb.extents().z),
            None => (0.0, 0.0, 0.0, 0.0),
        };
        let side = ((tris.len() as f64).sqrt().ceil() as usize).clamp(1, 256);
        let (ny, nz) = (side, side);
        let cell_y = if ey > 0.0 { ey / ny as f64 } else { 1.0 };
        let cell_z = if ez > 0.0 { ez / nz as f64 } else { 1.0 };
        let mut bins = vec![Vec::new(); ny * nz];
        for (i, t) in tris.iter().enumerate() {
            let (mut ymin, mut ymax, mut zmin, mut zmax) =
                (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for v in &t.v {
                ymin = ymin.min(v.y);
                ymax = ymax.max(v.y);
                zmin = zmin.min(v.z);
                zmax = zmax.max(v.z);
            }
            let iy0 = bin_index(ymin, y0, cell_y, ny);
            let iy1 = bin_index(ymax, y0, cell_y, ny);
            let iz0 = bin_index(zmin, z0, cell_z, nz);
            let iz1 = bin_index(zmax, z0, cell_z, nz);
            for iz in iz0..=iz1 {
                for iy in iy0..=iy1 {
                    bins[iz * ny + iy].push(i as u32);
                }
            }
        }
        InsideTester {
            tris,
            bounds,
            y0,
            z0,
            cell_y,
            cell_z,
            ny,
            nz,
            bins,
        }
    }

    pub fn bounds(&self) -> Option<Aabb> {
        self.bounds
    }

    /// Sorted X coordinates where the line `(·, y, z)` crosses the surface.
    pub fn crossings(&self, y: f64, z: f64) -> Vec<f64> {
        let mut xs = Vec::new();
        self.for_each_crossing(y, z, |x| xs.push(x));
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs
    }

    fn for_each_crossing(&self, y: f64, z: f64, mut f: impl FnMut(f64)) {
        let Some(bb) = self.bounds else { return };
        if y < bb.min.y || y > bb.max.y || z < bb.min.z || z > bb.max.z {
            return;
        }
        let iy = bin_index(y, self.y0, self.cell_y, self.ny);
        let iz = bin_index(z, self.z0, self.cell_z, self.nz);
        for &t in &self.bins[iz * self.ny + iy] {
            if let Some(x) = crossing(&self.tris[t as usize], y, z) {
                f(x);
            }
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        match self.bounds {
            Some(bb) if bb.contains(p) => {}
            _ => return false,
        }
        let mut count = 0usize;
        self.for_each_crossing(p.y, p.z, |x| {
            if x > p.x {
                count += 1;
            }
        });
        count % 2 == 1
    }
}

fn bin_index(v: f64, origin: f64, cell: f64, n: usize) -> usize {
    let i = ((v - origin) / cell).floor();
    if i < 0.0 {
        0
    } else {
        (i as usize).min(n - 1)
    }
}

/// One-off inside query; build an [`InsideTester`] for repeated use.
pub fn point_in_mesh(mesh: &TriMesh, p: &Vec3) -> bool {
    InsideTester::new(mesh).contains(p)
}

/// Distances along `dir` at which the ray from `origin` hits the mesh, sorted.
pub fn ray_hits(mesh: &TriMesh, origin: &Vec3, dir: &Vec3) -> Vec<f64> {
    let mut hits: Vec<f64> = (0..mesh.faces.len())
        .filter_map(|f| {
            let [a, b, c] = mesh.triangle(f);
            ray_triangle(origin, dir, &a, &b, &c)
        })
        .collect();
    hits.sort_by(|a, b| a.partial_cmp(b).unwrap());
    hits
}

/// Möller–Trumbore; returns the ray parameter for `t >= 0`.
pub(crate) fn ray_triangle(o: &Vec3, d: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-18 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t >= 0.0).then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{primitive, PrimitiveKind};

    #[test]
    fn cube_inside_outside() {
        let m = primitive(PrimitiveKind::Cube, &[0.2, 0.2, 0.2]).unwrap();
        let t = InsideTester::new(&m);
        assert!(t.contains(&Vec3::zeros()));
        assert!(t.contains(&Vec3::new(0.09, -0.09, 0.05)));
        assert!(!t.contains(&Vec3::new(0.11, 0.0, 0.0)));
        assert!(!t.contains(&Vec3::new(0.0, 0.3, 0.0)));
    }

    #[test]
    fn rays_through_edges_and_vertices_are_consistent() {
        // The cube's diagonal edges lie on y = z in projection; rays exactly
        // through shared edges and vertices must still give the right parity.
        let m = primitive(PrimitiveKind::Cube, &[0.2, 0.2, 0.2]).unwrap();
        let t = InsideTester::new(&m);
        for &(y, z) in &[(0.0, 0.0), (0.1, 0.1), (-0.1, 0.05), (0.05, -0.05), (0.1, -0.1)] {
            let inside = t.contains(&Vec3::new(0.0, y, z));
            let xs = t.crossings(y, z);
            assert_eq!(xs.len() % 2, 0, "odd crossings at ({y},{z})");
            if y.abs() < 0.1 && z.abs() < 0.1 {
                assert!(inside);
            }
        }
    }

    #[test]
    fn ball_inside_matches_radius() {
        let m = primitive(PrimitiveKind::Ball, &[0.3]).unwrap();
        let t = InsideTester::new(&m);
        assert!(t.contains(&Vec3::new(0.0, 0.0, 0.0)));
        assert!(t.contains(&Vec3::new(0.2, 0.1, -0.1)));
        assert!(!t.contains(&Vec3::new(0.25, 0.2, 0.0)));
    }

    #[test]
    fn ray_hits_cube() {
        let m = primitive(PrimitiveKind::Cube, &[0.2, 0.2, 0.2]).unwrap();
        let hits = ray_hits(&m, &Vec3::new(-1.0, 0.01, 0.02), &Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(hits.len(), 2);
        assert!((hits[0] - 0.9).abs() < 1e-12 && (hits[1] - 1.1).abs() < 1e-12);
    }
}
