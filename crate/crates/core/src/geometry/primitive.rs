use std::f64::consts::PI;
use std::fmt;

use super::{GeometryError, TriMesh, Vec3};

/// Segments per full circle for every curved primitive.
pub const CIRCLE_SEGMENTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    Cube,
    Ball,
    Cylinder,
    Ring,
    Tube,
}

impl PrimitiveKind {
    pub fn arity(self) -> usize {
        match self {
            PrimitiveKind::Cube => 3,
            PrimitiveKind::Ball => 1,
            PrimitiveKind::Cylinder => 2,
            PrimitiveKind::Ring => 2,
            PrimitiveKind::Tube => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Cube => "cube",
            PrimitiveKind::Ball => "ball",
            PrimitiveKind::Cylinder => "cylinder",
            PrimitiveKind::Ring => "ring",
            PrimitiveKind::Tube => "tube",
        }
    }
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Watertight primitive centered at the origin. Cube parameters are full
/// edge lengths; cylinder and tube run along Z; the ring lies in the XY plane
/// with `thickness` as the cross-section diameter.
pub fn primitive(kind: PrimitiveKind, params: &[f64]) -> Result<TriMesh, GeometryError> {
    if params.len() != kind.arity() {
        return Err(GeometryError::ArityMismatch {
            kind: kind.name().to_string(),
            expected: kind.arity(),
            got: params.len(),
        });
    }
    for (index, &value) in params.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(GeometryError::NonPositiveParameter { index, value });
        }
    }
    let mesh = match kind {
        PrimitiveKind::Cube => cuboid(params[0], params[1], params[2]),
        PrimitiveKind::Ball => {
            let r = params[0];
            let bands = CIRCLE_SEGMENTS / 2;
            let profile: Vec<(f64, f64)> = (0..=bands)
                .map(|k| {
                    if k == 0 {
                        (0.0, -r)
                    } else if k == bands {
                        (0.0, r)
                    } else {
                        let phi = -PI / 2.0 + PI * k as f64 / bands as f64;
                        (r * phi.cos(), r * phi.sin())
                    }
                })
                .collect();
            revolve(&profile, CIRCLE_SEGMENTS)
        }
        PrimitiveKind::Cylinder => {
            let (r, h) = (params[0], params[1]);
            revolve(
                &[(0.0, -h / 2.0), (r, -h / 2.0), (r, h / 2.0), (0.0, h / 2.0)],
                CIRCLE_SEGMENTS,
            )
        }
        PrimitiveKind::Tube => {
            let (r, len, t) = (params[0], params[1], params[2]);
            // A wall at least as thick as the radius closes into a cylinder.
            let inner = (r - t).max(0.0);
            revolve(
                &[
                    (inner, -len / 2.0),
                    (r, -len / 2.0),
                    (r, len / 2.0),
                    (inner, len / 2.0),
                ],
                CIRCLE_SEGMENTS,
            )
        }
        PrimitiveKind::Ring => {
            let (major, minor) = (params[0], params[1] / 2.0);
            if minor >= major {
                return Err(GeometryError::DegenerateParameters(format!(
                    "ring thickness {} must be below twice the radius {}",
                    params[1], major
                )));
            }
            let profile: Vec<(f64, f64)> = (0..CIRCLE_SEGMENTS)
                .map(|k| {
                    let th = 2.0 * PI * k as f64 / CIRCLE_SEGMENTS as f64;
                    (major + minor * th.cos(), minor * th.sin())
                })
                .collect();
            revolve(&profile, CIRCLE_SEGMENTS)
        }
    };
    Ok(mesh)
}

fn cuboid(sx: f64, sy: f64, sz: f64) -> TriMesh {
    let (hx, hy, hz) = (sx / 2.0, sy / 2.0, sz / 2.0);
    let vertices = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 == 0 { -hx } else { hx },
                if i & 2 == 0 { -hy } else { hy },
                if i & 4 == 0 { -hz } else { hz },
            )
        })
        .collect();
    let faces = vec![
        [0, 2, 1],
        [1, 2, 3], // -z
        [4, 5, 6],
        [5, 7, 6], // +z
        [0, 1, 4],
        [1, 5, 4], // -y
        [2, 6, 3],
        [3, 6, 7], // +y
        [0, 4, 2],
        [2, 4, 6], // -x
        [1, 3, 5],
        [3, 7, 5], // +x
    ];
    TriMesh::new(vertices, faces)
}

/// Revolve a closed `(radius, z)` profile around the Z axis. Profile points
/// with zero radius become poles; edges lying on the axis are skipped. The
/// result is oriented outward regardless of the profile winding.
pub fn revolve(profile: &[(f64, f64)], segments: usize) -> TriMesh {
    let n = profile.len();
    let mut vertices = Vec::new();
    // Per profile point: either a pole index or the first index of a ring.
    let mut rings: Vec<(bool, u32)> = Vec::with_capacity(n);
    for &(r, z) in profile {
        let start = vertices.len() as u32;
        if r == 0.0 {
            vertices.push(Vec3::new(0.0, 0.0, z));
            rings.push((true, start));
        } else {
            for j in 0..segments {
                let th = 2.0 * PI * j as f64 / segments as f64;
                vertices.push(Vec3::new(r * th.cos(), r * th.sin(), z));
            }
            rings.push((false, start));
        }
    }
    let at = |(pole, start): (bool, u32), j: usize| -> u32 {
        if pole {
            start
        } else {
            start + (j % segments) as u32
        }
    };
    let mut faces = Vec::new();
    for i in 0..n {
        let a = rings[i];
        let b = rings[(i + 1) % n];
        if a.0 && b.0 {
            continue;
        }
        for j in 0..segments {
            let (a0, a1, b0, b1) = (at(a, j), at(a, j + 1), at(b, j), at(b, j + 1));
            if a.0 {
                faces.push([a0, b1, b0]);
            } else if b.0 {
                faces.push([a0, a1, b0]);
            } else {
                faces.push([a0, a1, b1]);
                faces.push([a0, b1, b0]);
            }
        }
    }
    let mut mesh = TriMesh::new(vertices, faces);
    if mesh.signed_volume() < 0.0 {
        for f in &mut mesh.faces {
            f.swap(1, 2);
        }
    }
    mesh
}

/// Extrude a simple polygon in the XY plane along Z, centered on z = 0.
pub fn extrude_polygon(polygon: &[(f64, f64)], height: f64) -> Result<TriMesh, GeometryError> {
    let n = polygon.len();
    if n < 3 || !(height > 0.0) {
        return Err(GeometryError::DegenerateParameters(
            "extrusion needs a polygon with 3+ points and positive height".into(),
        ));
    }
    let area2: f64 = (0..n)
        .map(|i| {
            let (x0, y0) = polygon[i];
            let (x1, y1) = polygon[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum();
    let pts: Vec<(f64, f64)> = if area2 < 0.0 {
        polygon.iter().rev().copied().collect()
    } else {
        polygon.to_vec()
    };
    let cap = ear_clip(&pts).ok_or_else(|| {
        GeometryError::DegenerateParameters("polygon could not be triangulated".into())
    })?;
    let h = height / 2.0;
    let mut vertices: Vec<Vec3> = pts.iter().map(|&(x, y)| Vec3::new(x, y, -h)).collect();
    vertices.extend(pts.iter().map(|&(x, y)| Vec3::new(x, y, h)));
    let top = n as u32;
    let mut faces = Vec::new();
    for t in &cap {
        faces.push([t[0], t[2], t[1]]);
        faces.push([t[0] + top, t[1] + top, t[2] + top]);
    }
    for i in 0..n as u32 {
        let j = (i + 1) % n as u32;
        faces.push([i, j, j + top]);
        faces.push([i, j + top, i + top]);
    }
    Ok(TriMesh::new(vertices, faces))
}

fn ear_clip(pts: &[(f64, f64)]) -> Option<Vec<[u32; 3]>> {
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    let mut tris = Vec::new();
    while idx.len() > 3 {
        let m = idx.len();
        let ear = (0..m).find(|&k| {
            let (ia, ib, ic) = (idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]);
            let (a, b, c) = (pts[ia], pts[ib], pts[ic]);
            if cross(a, b, c) <= 0.0 {
                return false;
            }
            idx.iter().all(|&q| {
                if q == ia || q == ib || q == ic {
                    return true;
                }
                let p = pts[q];
                !(cross(a, b, p) >= 0.0 && cross(b, c, p) >= 0.0 && cross(c, a, p) >= 0.0)
            })
        })?;
        let (ia, ib, ic) = (idx[(ear + m - 1) % m], idx[ear], idx[(ear + 1) % m]);
        tris.push([ia as u32, ib as u32, ic as u32]);
        idx.remove(ear);
    }
    tris.push([idx[0] as u32, idx[1] as u32, idx[2] as u32]);
    Some(tris)
}
