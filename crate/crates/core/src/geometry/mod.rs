//! Mesh and voxel kernel: primitives, rigid edits, occupancy-grid booleans,
//! iso-surface extraction and decimation.

mod decimate;
mod inside;
mod marching;
mod obj;
mod primitive;
mod transform;
mod voxel;

use std::collections::HashMap;

use nalgebra::Vector3;
use thiserror::Error;

pub use decimate::decimate;
pub use inside::{point_in_mesh, ray_hits, InsideTester};
pub use marching::extract_surface;
pub use obj::{load_obj, read_obj, save_obj, write_obj, ObjError};
pub use primitive::{extrude_polygon, primitive, revolve, PrimitiveKind, CIRCLE_SEGMENTS};
pub use transform::{rotation_from_euler, Transform};
pub(crate) use inside::ray_triangle as ray_triangle_hit;
pub use voxel::{
    add_mesh, cut_grid, empty_grid, grid_to_mesh, sub_mesh, VoxelGrid, DEFAULT_GRID_RES,
    DEFAULT_TARGET_FACES,
};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("{kind} expects {expected} parameters, got {got}")]
    ArityMismatch {
        kind: String,
        expected: usize,
        got: usize,
    },
    #[error("parameter {index} must be strictly positive, got {value}")]
    NonPositiveParameter { index: usize, value: f64 },
    #[error("degenerate parameters: {0}")]
    DegenerateParameters(String),
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("mesh is not watertight ({0} boundary or non-manifold edges)")]
    NotWatertight(usize),
    #[error("rescale ratio must be positive, got {0}")]
    NonPositiveRatio(f64),
    #[error("concat needs at least one nonempty mesh")]
    EmptyInput,
    #[error("grid resolution must be at least 2, got {0}")]
    InvalidResolution(usize),
    #[error("mesh bounds {min:?}..{max:?} exceed the grid bounds")]
    OutOfBounds { min: [f64; 3], max: [f64; 3] },
    #[error("grids have different resolution or bounds")]
    GridMismatch,
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Aabb> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut bb = Aabb {
            min: first,
            max: first,
        };
        for p in it {
            bb.min = bb.min.inf(p);
            bb.max = bb.max.sup(p);
        }
        Some(bb)
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    /// `(min_x, min_y, min_z, max_x, max_y, max_z)`
    pub fn to_tuple(&self) -> [f64; 6] {
        [
            self.min.x, self.min.y, self.min.z, self.max.x, self.max.y, self.max.z,
        ]
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn expanded(&self, margin: f64) -> Aabb {
        let m = Vec3::repeat(margin);
        Aabb {
            min: self.min - m,
            max: self.max + m,
        }
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }
}

/// Indexed triangle mesh; faces are counter-clockwise when seen from outside.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        TriMesh { vertices, faces }
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty() || self.vertices.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn indices_in_range(&self) -> bool {
        let n = self.vertices.len() as u32;
        self.faces.iter().all(|f| f.iter().all(|&i| i < n))
    }

    /// Number of undirected edges not shared by exactly two faces.
    pub fn open_edge_count(&self) -> usize {
        edge_face_counts(&self.faces)
            .values()
            .filter(|&&c| c != 2)
            .count()
    }

    /// Every edge is shared by exactly two faces.
    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.indices_in_range() && self.open_edge_count() == 0
    }

    /// Every directed edge appears at most once, so adjacent faces agree on winding.
    pub fn is_consistently_oriented(&self) -> bool {
        let mut seen = std::collections::HashSet::with_capacity(self.faces.len() * 3);
        self.faces.iter().all(|f| {
            (0..3).all(|i| {
                let e = (f[i], f[(i + 1) % 3]);
                seen.insert(e)
            })
        })
    }

    pub fn aabb(&self) -> Result<Aabb, GeometryError> {
        Aabb::from_points(&self.vertices).ok_or(GeometryError::EmptyMesh)
    }

    /// Signed divergence-theorem volume without the watertightness check.
    pub fn signed_volume(&self) -> f64 {
        // Accumulate around the bounding-box center for better conditioning.
        let origin = self
            .aabb()
            .map(|bb| bb.center())
            .unwrap_or_else(|_| Vec3::zeros());
        self.faces
            .iter()
            .map(|f| {
                let a = self.vertices[f[0] as usize] - origin;
                let b = self.vertices[f[1] as usize] - origin;
                let c = self.vertices[f[2] as usize] - origin;
                a.dot(&b.cross(&c))
            })
            .sum::<f64>()
            / 6.0
    }

    pub fn transformed(&self, t: &Transform) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| t.apply(v)).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn scaled_nonuniform(&self, s: &Vec3) -> TriMesh {
        let mut m = TriMesh {
            vertices: self.vertices.iter().map(|v| v.component_mul(s)).collect(),
            faces: self.faces.clone(),
        };
        if s.x * s.y * s.z < 0.0 {
            for f in &mut m.faces {
                f.swap(1, 2);
            }
        }
        m
    }

    /// Weld vertices closer than `tol`, drop degenerate faces and unreferenced vertices.
    pub fn repaired(&self, tol: f64) -> TriMesh {
        let key = |v: &Vec3| {
            (
                (v.x / tol).round() as i64,
                (v.y / tol).round() as i64,
                (v.z / tol).round() as i64,
            )
        };
        let mut cells: HashMap<(i64, i64, i64), u32> = HashMap::new();
        let mut remap = Vec::with_capacity(self.vertices.len());
        let mut welded: Vec<Vec3> = Vec::new();
        for v in &self.vertices {
            let (kx, ky, kz) = key(v);
            let mut found = None;
            'search: for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(&i) = cells.get(&(kx + dx, ky + dy, kz + dz)) {
                            if (welded[i as usize] - v).norm() <= tol {
                                found = Some(i);
                                break 'search;
                            }
                        }
                    }
                }
            }
            let idx = found.unwrap_or_else(|| {
                let i = welded.len() as u32;
                welded.push(*v);
                cells.entry((kx, ky, kz)).or_insert(i);
                i
            });
            remap.push(idx);
        }
        let faces: Vec<[u32; 3]> = self
            .faces
            .iter()
            .map(|f| f.map(|i| remap[i as usize]))
            .filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2])
            .collect();
        compact(&welded, &faces)
    }
}

/// Drop unreferenced vertices, preserving first-use order.
pub(crate) fn compact(vertices: &[Vec3], faces: &[[u32; 3]]) -> TriMesh {
    let mut remap = vec![u32::MAX; vertices.len()];
    let mut out_v = Vec::new();
    let mut out_f = Vec::with_capacity(faces.len());
    for f in faces {
        let nf = f.map(|i| {
            let slot = &mut remap[i as usize];
            if *slot == u32::MAX {
                *slot = out_v.len() as u32;
                out_v.push(vertices[i as usize]);
            }
            *slot
        });
        out_f.push(nf);
    }
    TriMesh::new(out_v, out_f)
}

pub(crate) fn edge_face_counts(faces: &[[u32; 3]]) -> HashMap<(u32, u32), u32> {
    let mut counts = HashMap::with_capacity(faces.len() * 2);
    for f in faces {
        for i in 0..3 {
            let (a, b) = (f[i], f[(i + 1) % 3]);
            *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    counts
}

/// Rotate and translate so the bounding box is centered at the origin with
/// extents sorted descending along +X, +Y, +Z. The rotation is a signed
/// axis permutation with determinant +1.
pub fn rotate_to_align(mesh: &TriMesh) -> Result<TriMesh, GeometryError> {
    let bb = mesh.aabb()?;
    let ext = bb.extents();
    let mut order = [0usize, 1, 2];
    // Stable on ties so an already-sorted mesh keeps its axes.
    order.sort_by(|&a, &b| ext[b].partial_cmp(&ext[a]).unwrap_or(std::cmp::Ordering::Equal));
    let parity = permutation_parity(&order);
    let center = bb.center();
    let vertices = mesh
        .vertices
        .iter()
        .map(|v| {
            let c = v - center;
            let mut out = Vec3::new(c[order[0]], c[order[1]], c[order[2]]);
            if parity {
                // Odd permutation: flip the smallest axis to keep a proper rotation.
                out.z = -out.z;
            }
            out
        })
        .collect();
    Ok(TriMesh::new(vertices, mesh.faces.clone()))
}

fn permutation_parity(order: &[usize; 3]) -> bool {
    let mut inversions = 0;
    for i in 0..3 {
        for j in i + 1..3 {
            if order[i] > order[j] {
                inversions += 1;
            }
        }
    }
    inversions % 2 == 1
}

/// Bounding-box center.
pub fn get_position(mesh: &TriMesh) -> Result<Vec3, GeometryError> {
    Ok(mesh.aabb()?.center())
}

pub fn get_axis_aligned_bounding_box(mesh: &TriMesh) -> Result<Aabb, GeometryError> {
    mesh.aabb()
}

pub fn get_volume(mesh: &TriMesh) -> Result<f64, GeometryError> {
    if mesh.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }
    let open = mesh.open_edge_count();
    if open > 0 {
        return Err(GeometryError::NotWatertight(open));
    }
    Ok(mesh.signed_volume())
}

pub fn rescale(mesh: &TriMesh, ratio: f64) -> Result<TriMesh, GeometryError> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(GeometryError::NonPositiveRatio(ratio));
    }
    Ok(TriMesh::new(
        mesh.vertices.iter().map(|v| v * ratio).collect(),
        mesh.faces.clone(),
    ))
}

pub fn translate(mesh: &TriMesh, offset: &Vec3) -> TriMesh {
    TriMesh::new(
        mesh.vertices.iter().map(|v| v + offset).collect(),
        mesh.faces.clone(),
    )
}

pub fn concat(meshes: &[&TriMesh]) -> Result<TriMesh, GeometryError> {
    if meshes.iter().all(|m| m.is_empty()) {
        return Err(GeometryError::EmptyInput);
    }
    let mut out = TriMesh::default();
    for m in meshes {
        let base = out.vertices.len() as u32;
        out.vertices.extend_from_slice(&m.vertices);
        out.faces
            .extend(m.faces.iter().map(|f| f.map(|i| i + base)));
    }
    Ok(out)
}
