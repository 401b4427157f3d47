use std::sync::Arc;

use crate::geometry::{Aabb, GeometryError, InsideTester, Transform, TriMesh, Vec3};

use super::SURFACE_SPACING;

/// Point-in-cavity queries: a point is in the cavity when it is outside the
/// solid but the surface lies on both sides along x and y and below it.
#[derive(Debug, Clone)]
pub struct CavityTester {
    tx: InsideTester,
    ty: InsideTester,
    tz: InsideTester,
}

impl CavityTester {
    pub fn new(mesh: &TriMesh) -> Self {
        // Cyclic axis permutations so each tester's X is the queried axis.
        let perm = |f: fn(&Vec3) -> Vec3| {
            TriMesh::new(mesh.vertices.iter().map(f).collect(), mesh.faces.clone())
        };
        CavityTester {
            tx: InsideTester::new(mesh),
            ty: InsideTester::new(&perm(|v| Vec3::new(v.y, v.z, v.x))),
            tz: InsideTester::new(&perm(|v| Vec3::new(v.z, v.x, v.y))),
        }
    }

    pub fn solid(&self) -> &InsideTester {
        &self.tx
    }

    pub fn contains(&self, q: &Vec3) -> bool {
        if self.tx.contains(q) {
            return false;
        }
        let both = |xs: &[f64], v: f64| xs.iter().any(|&x| x > v) && xs.iter().any(|&x| x < v);
        if !both(&self.tx.crossings(q.y, q.z), q.x) {
            return false;
        }
        if !both(&self.ty.crossings(q.z, q.x), q.y) {
            return false;
        }
        self.tz.crossings(q.x, q.y).iter().any(|&z| z < q.z)
    }
}

/// Shared, pose-independent data for a rigid body.
#[derive(Debug)]
pub struct BodyGeometry {
    pub mesh: TriMesh,
    pub local_aabb: Aabb,
    cavity: CavityTester,
    /// Surface points in the body frame, roughly `SURFACE_SPACING` apart.
    pub samples: Vec<Vec3>,
    grasp_faces: Vec<u32>,
    grasp_cdf: Vec<f64>,
}

impl BodyGeometry {
    pub fn new(mesh: TriMesh, grasp_faces: Option<Vec<u32>>) -> Result<Self, GeometryError> {
        let local_aabb = mesh.aabb()?;
        let mut grasp_faces = grasp_faces.unwrap_or_else(|| (0..mesh.faces.len() as u32).collect());
        grasp_faces.retain(|&f| (f as usize) < mesh.faces.len());
        let mut acc = 0.0;
        let grasp_cdf = grasp_faces
            .iter()
            .map(|&f| {
                acc += mesh.face_area(f as usize);
                acc
            })
            .collect();
        Ok(BodyGeometry {
            cavity: CavityTester::new(&mesh),
            samples: surface_samples(&mesh, SURFACE_SPACING),
            local_aabb,
            grasp_faces,
            grasp_cdf,
            mesh,
        })
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.cavity.solid().contains(p)
    }

    pub fn in_cavity(&self, p: &Vec3) -> bool {
        self.local_aabb.contains(p) && self.cavity.contains(p)
    }

    /// Area-weighted face pick from the grasp region; `u` in [0, 1).
    pub fn pick_grasp_face(&self, u: f64) -> Option<u32> {
        let total = *self.grasp_cdf.last()?;
        if !(total > 0.0) {
            return None;
        }
        let x = u * total;
        let i = self.grasp_cdf.partition_point(|&c| c <= x);
        self.grasp_faces.get(i.min(self.grasp_faces.len() - 1)).copied()
    }

    /// Nearest hit along a ray in the body frame: `(distance, face)`.
    pub fn first_hit(&self, origin: &Vec3, dir: &Vec3, t_min: f64) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for f in 0..self.mesh.faces.len() {
            let [a, b, c] = self.mesh.triangle(f);
            if let Some(t) = crate::geometry::ray_triangle_hit(origin, dir, &a, &b, &c) {
                if t > t_min && best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, f));
                }
            }
        }
        best
    }

    /// Unit outward normal of face `f` in the body frame.
    pub fn normal(&self, f: usize) -> Vec3 {
        self.mesh.face_normal(f).normalize()
    }

    /// Number of lattice points with the given pitch inside the cavity.
    pub fn cavity_capacity(&self, spacing: f64) -> usize {
        self.cavity_lattice(spacing).len()
    }

    /// Body-frame lattice points with the given pitch inside the cavity.
    pub fn cavity_lattice(&self, spacing: f64) -> Vec<Vec3> {
        let bb = self.local_aabb;
        let n = bb.extents().map(|e| (e / spacing).floor() as usize);
        let mut out = Vec::new();
        for k in 0..n.z {
            for j in 0..n.y {
                for i in 0..n.x {
                    let p = bb.min
                        + Vec3::new(
                            (i as f64 + 0.5) * spacing,
                            (j as f64 + 0.5) * spacing,
                            (k as f64 + 0.5) * spacing,
                        );
                    if self.cavity.contains(&p) {
                        out.push(p);
                    }
                }
            }
        }
        out
    }

    /// Thin horizontal-ish axis for blade tools: `(axis, half thickness)` when
    /// the smallest extent is under a fifth of the middle one.
    pub fn blade_axis(&self) -> Option<(usize, f64)> {
        let e = self.local_aabb.extents();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| e[a].partial_cmp(&e[b]).unwrap());
        if e[order[0]] < 0.2 * e[order[1]] {
            Some((order[0], e[order[0]] / 2.0))
        } else {
            None
        }
    }
}

/// Barycentric lattice on every face, including vertices and edges.
pub fn surface_samples(mesh: &TriMesh, spacing: f64) -> Vec<Vec3> {
    let mut out = Vec::new();
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.triangle(f);
        let longest = (b - a).norm().max((c - b).norm()).max((a - c).norm());
        let k = ((longest / spacing).ceil() as usize).max(1);
        for i in 0..=k {
            for j in 0..=(k - i) {
                let u = i as f64 / k as f64;
                let v = j as f64 / k as f64;
                out.push(a + (b - a) * u + (c - a) * v);
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Body {
    pub id: String,
    pub pose: Transform,
    pub movable: bool,
    pub geom: Arc<BodyGeometry>,
}

impl Body {
    pub fn position(&self) -> Vec3 {
        self.pose.translation
    }

    pub fn world_mesh(&self) -> TriMesh {
        self.geom.mesh.transformed(&self.pose)
    }

    /// Conservative world bounds from the transformed local box.
    pub fn world_aabb(&self) -> Aabb {
        let bb = self.geom.local_aabb;
        let corners: Vec<Vec3> = (0..8)
            .map(|i| {
                let p = Vec3::new(
                    if i & 1 == 0 { bb.min.x } else { bb.max.x },
                    if i & 2 == 0 { bb.min.y } else { bb.max.y },
                    if i & 4 == 0 { bb.min.z } else { bb.max.z },
                );
                self.pose.apply(&p)
            })
            .collect();
        Aabb::from_points(&corners).expect("eight corners")
    }

    pub fn contains_world(&self, p: &Vec3) -> bool {
        self.geom.contains(&self.pose.inverse().apply(p))
    }

    pub fn in_cavity_world(&self, p: &Vec3) -> bool {
        self.geom.in_cavity(&self.pose.inverse().apply(p))
    }

    /// Angle in radians between the body's local +z and world +z.
    pub fn tilt(&self) -> f64 {
        let z = self.pose.apply_vector(&Vec3::z());
        z.z.clamp(-1.0, 1.0).acos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::revolve;

    fn cup() -> TriMesh {
        // Outer radius 0.04, wall 0.005, floor 0.005, height 0.08.
        revolve(
            &[(0.0, 0.0), (0.04, 0.0), (0.04, 0.08), (0.035, 0.08), (0.035, 0.005), (0.0, 0.005)],
            32,
        )
    }

    #[test]
    fn cavity_of_cup() {
        let g = BodyGeometry::new(cup(), None).unwrap();
        assert!(g.in_cavity(&Vec3::new(0.0, 0.0, 0.04)));
        assert!(g.in_cavity(&Vec3::new(0.02, 0.01, 0.07)));
        assert!(!g.in_cavity(&Vec3::new(0.0, 0.0, 0.1)));
        assert!(!g.in_cavity(&Vec3::new(0.0375, 0.0, 0.04)), "inside the wall");
        assert!(!g.in_cavity(&Vec3::new(0.06, 0.0, 0.04)));
        let cap = g.cavity_capacity(0.01);
        // Roughly pi * 0.035^2 * 0.075 / 1e-6 = 288 lattice cells.
        assert!((150..350).contains(&cap), "{cap}");
    }

    #[test]
    fn solid_box_has_no_cavity() {
        let m = crate::geometry::primitive(crate::geometry::PrimitiveKind::Cube, &[0.1, 0.1, 0.1]).unwrap();
        let g = BodyGeometry::new(m, None).unwrap();
        assert_eq!(g.cavity_capacity(0.01), 0);
        assert!(g.contains(&Vec3::zeros()));
        assert!(g.blade_axis().is_none());
        let (t, f) = g.first_hit(&Vec3::zeros(), &Vec3::x(), 0.0).unwrap();
        assert!((t - 0.05).abs() < 1e-12);
        assert!((g.normal(f) - Vec3::x()).norm() < 1e-12);
    }

    #[test]
    fn area_weighted_pick() {
        let m = crate::geometry::primitive(crate::geometry::PrimitiveKind::Cube, &[0.1, 0.1, 0.1]).unwrap();
        let g = BodyGeometry::new(m, Some(vec![2, 3])).unwrap();
        assert_eq!(g.pick_grasp_face(0.0), Some(2));
        assert_eq!(g.pick_grasp_face(0.99), Some(3));
        let s = surface_samples(&g.mesh, 0.01);
        assert!(s.len() >= 12 * 66);
    }
}
