//! Quadric-error edge collapse.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use nalgebra::{Matrix3, Matrix4, Vector4};

use super::{compact, TriMesh, Vec3};

#[derive(Debug)]
struct Candidate {
    cost: f64,
    a: u32,
    b: u32,
    va: u32,
    vb: u32,
    target: Vec3,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    // Min-heap on cost; ties by vertex ids for determinism.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

struct State {
    pos: Vec<Vec3>,
    quad: Vec<Matrix4<f64>>,
    faces: Vec<[u32; 3]>,
    face_alive: Vec<bool>,
    vfaces: Vec<Vec<u32>>,
    version: Vec<u32>,
    removed: Vec<bool>,
    alive_faces: usize,
}

impl State {
    fn neighbors(&self, v: u32) -> Vec<u32> {
        let mut n: Vec<u32> = self.vfaces[v as usize]
            .iter()
            .filter(|&&f| self.face_alive[f as usize])
            .flat_map(|&f| self.faces[f as usize])
            .filter(|&w| w != v)
            .collect();
        n.sort_unstable();
        n.dedup();
        n
    }

    fn candidate(&self, a: u32, b: u32) -> Candidate {
        let (a, b) = (a.min(b), a.max(b));
        let q = self.quad[a as usize] + self.quad[b as usize];
        let pa = self.pos[a as usize];
        let pb = self.pos[b as usize];
        let err = |p: &Vec3| {
            let h = Vector4::new(p.x, p.y, p.z, 1.0);
            (h.transpose() * q * h)[0].max(0.0)
        };
        let m: Matrix3<f64> = q.fixed_view::<3, 3>(0, 0).into();
        let rhs = -Vec3::new(q[(0, 3)], q[(1, 3)], q[(2, 3)]);
        let mut best = (pa + pb) * 0.5;
        let mut cost = err(&best);
        let span = (pa - pb).norm();
        if m.determinant().abs() > 1e-12 {
            if let Some(inv) = m.try_inverse() {
                let p = inv * rhs;
                // Keep the optimum near the edge to avoid spikes from ill-conditioned quadrics.
                if (p - best).norm() <= 2.0 * span {
                    let c = err(&p);
                    if c < cost {
                        best = p;
                        cost = c;
                    }
                }
            }
        }
        for p in [pa, pb] {
            let c = err(&p);
            if c < cost {
                best = p;
                cost = c;
            }
        }
        Candidate {
            cost,
            a,
            b,
            va: self.version[a as usize],
            vb: self.version[b as usize],
            target: best,
        }
    }

    fn legal(&self, a: u32, b: u32, target: &Vec3) -> bool {
        let na = self.neighbors(a);
        let nb = self.neighbors(b);
        let common: Vec<u32> = na.iter().copied().filter(|w| nb.binary_search(w).is_ok()).collect();
        if common.len() != 2 {
            return false;
        }
        if common.iter().any(|&w| self.neighbors(w).len() <= 3) {
            return false;
        }
        if na.len() + nb.len() <= 6 {
            // Collapsing would produce a tetrahedron-sized or smaller component.
            return false;
        }
        for &v in &[a, b] {
            for &f in &self.vfaces[v as usize] {
                if !self.face_alive[f as usize] {
                    continue;
                }
                let tri = self.faces[f as usize];
                if tri.contains(&a) && tri.contains(&b) {
                    continue;
                }
                let old: [Vec3; 3] = tri.map(|i| self.pos[i as usize]);
                let new: [Vec3; 3] = tri.map(|i| if i == a || i == b { *target } else { self.pos[i as usize] });
                let n0 = (old[1] - old[0]).cross(&(old[2] - old[0]));
                let n1 = (new[1] - new[0]).cross(&(new[2] - new[0]));
                let l0 = n0.norm();
                let l1 = n1.norm();
                if l1 <= 1e-14 * (1.0 + l0) {
                    return false;
                }
                if l0 > 0.0 && n0.dot(&n1) < 0.2 * l0 * l1 {
                    return false;
                }
            }
        }
        true
    }

    fn collapse(&mut self, a: u32, b: u32, target: Vec3) {
        self.pos[a as usize] = target;
        let qb = self.quad[b as usize];
        self.quad[a as usize] += qb;
        let bf = std::mem::take(&mut self.vfaces[b as usize]);
        for f in bf {
            if !self.face_alive[f as usize] {
                continue;
            }
            let tri = &mut self.faces[f as usize];
            if tri.contains(&a) {
                self.face_alive[f as usize] = false;
                self.alive_faces -= 1;
            } else {
                for i in tri.iter_mut() {
                    if *i == b {
                        *i = a;
                    }
                }
                self.vfaces[a as usize].push(f);
            }
        }
        let alive = &self.face_alive;
        self.vfaces[a as usize].retain(|&f| alive[f as usize]);
        self.vfaces[a as usize].sort_unstable();
        self.vfaces[a as usize].dedup();
        self.removed[b as usize] = true;
        self.version[a as usize] += 1;
    }
}

fn plane_quadric(p: [Vec3; 3]) -> Matrix4<f64> {
    let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
    let area2 = n.norm();
    if area2 == 0.0 {
        return Matrix4::zeros();
    }
    let n = n / area2;
    let d = -n.dot(&p[0]);
    let h = Vector4::new(n.x, n.y, n.z, d);
    h * h.transpose() * (0.5 * area2)
}

/// Collapse edges in order of quadric error until at most `target_faces`
/// faces remain or no legal collapse is left. Closed manifold input stays
/// closed and manifold.
pub fn decimate(mesh: &TriMesh, target_faces: usize) -> TriMesh {
    let nv = mesh.vertices.len();
    let mut st = State {
        pos: mesh.vertices.clone(),
        quad: vec![Matrix4::zeros(); nv],
        faces: mesh.faces.clone(),
        face_alive: vec![true; mesh.faces.len()],
        vfaces: vec![Vec::new(); nv],
        version: vec![0; nv],
        removed: vec![false; nv],
        alive_faces: mesh.faces.len(),
    };
    let mut edges = HashSet::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        let q = plane_quadric(f.map(|i| mesh.vertices[i as usize]));
        for k in 0..3 {
            st.quad[f[k] as usize] += q;
            st.vfaces[f[k] as usize].push(fi as u32);
            let (a, b) = (f[k], f[(k + 1) % 3]);
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let mut edges: Vec<(u32, u32)> = edges.into_iter().collect();
    edges.sort_unstable();
    let mut heap: BinaryHeap<Candidate> = edges.iter().map(|&(a, b)| st.candidate(a, b)).collect();

    while st.alive_faces > target_faces {
        let Some(c) = heap.pop() else { break };
        if st.removed[c.a as usize]
            || st.removed[c.b as usize]
            || st.version[c.a as usize] != c.va
            || st.version[c.b as usize] != c.vb
        {
            continue;
        }
        if !st.legal(c.a, c.b, &c.target) {
            continue;
        }
        st.collapse(c.a, c.b, c.target);
        for w in st.neighbors(c.a) {
            heap.push(st.candidate(c.a, w));
        }
    }

    let faces: Vec<[u32; 3]> = st
        .faces
        .iter()
        .zip(&st.face_alive)
        .filter(|(_, &alive)| alive)
        .map(|(f, _)| *f)
        .collect();
    compact(&st.pos, &faces)
}
