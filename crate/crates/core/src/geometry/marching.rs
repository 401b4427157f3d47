//! Iso-surface extraction for boolean occupancy grids.
//!
//! Lattice points are voxel centers; the grid is padded with empty samples so
//! the output is closed. Each cube face contributes oriented segments between
//! its edge crossings, chained into loops per cube and triangulated. Neighbor
//! cubes see the same face segments with opposite orientation, which makes the
//! result watertight and outward facing.

use std::collections::HashMap;

use super::{compact, TriMesh, Vec3, VoxelGrid};

/// Corner `c` sits at offset `(c & 1, c >> 1 & 1, c >> 2 & 1)`.
const FACES: [[usize; 4]; 6] = [
    [0, 4, 6, 2],
    [1, 3, 7, 5],
    [0, 1, 5, 4],
    [2, 6, 7, 3],
    [0, 2, 3, 1],
    [4, 5, 7, 6],
];

fn corner_offset(c: usize) -> [i64; 3] {
    [(c & 1) as i64, ((c >> 1) & 1) as i64, ((c >> 2) & 1) as i64]
}

/// Local edge crossing between corners `a` and `b`, in half-cell units.
fn edge_local(a: usize, b: usize) -> [u8; 3] {
    let (oa, ob) = (corner_offset(a), corner_offset(b));
    [
        (oa[0] + ob[0]) as u8,
        (oa[1] + ob[1]) as u8,
        (oa[2] + ob[2]) as u8,
    ]
}

struct Builder<'a> {
    grid: &'a VoxelGrid,
    h: Vec3,
    verts: Vec<Vec3>,
    keys: HashMap<u64, u32>,
    faces: Vec<[u32; 3]>,
}

impl Builder<'_> {
    fn lattice(&self, p: [i64; 3]) -> Vec3 {
        self.grid.min_bound
            + Vec3::new(p[0] as f64 + 0.5, p[1] as f64 + 0.5, p[2] as f64 + 0.5).component_mul(&self.h)
    }

    /// Shared vertex on the lattice edge from `base` along `base + local`.
    fn edge_vertex(&mut self, cell: [i64; 3], local: [u8; 3]) -> u32 {
        let mut lo = cell;
        let mut axis = 0u64;
        for a in 0..3 {
            match local[a] {
                2 => lo[a] += 1,
                1 => axis = a as u64,
                _ => {}
            }
        }
        // Offsets by one so the padding layer at -1 maps to non-negative keys.
        let key = ((lo[0] + 1) as u64)
            | (((lo[1] + 1) as u64) << 20)
            | (((lo[2] + 1) as u64) << 40)
            | (axis << 60);
        if let Some(&v) = self.keys.get(&key) {
            return v;
        }
        let mut p = self.lattice(lo);
        p[axis as usize] += 0.5 * self.h[axis as usize];
        let id = self.verts.len() as u32;
        self.verts.push(p);
        self.keys.insert(key, id);
        id
    }

    fn cell(&mut self, cell: [i64; 3], inside: [bool; 8]) {
        // Oriented (start, end) segments in local half-cell coordinates.
        let mut segs: Vec<([u8; 3], [u8; 3])> = Vec::with_capacity(6);
        for face in &FACES {
            let s: [bool; 4] = [inside[face[0]], inside[face[1]], inside[face[2]], inside[face[3]]];
            for j in 0..4 {
                let jn = (j + 1) % 4;
                if s[j] || !s[jn] {
                    continue;
                }
                // Out -> in crossing on edge j; pair with the next in -> out.
                for step in 1..4 {
                    let e = (j + step) % 4;
                    let en = (e + 1) % 4;
                    if s[e] && !s[en] {
                        segs.push((
                            edge_local(face[j], face[jn]),
                            edge_local(face[e], face[en]),
                        ));
                        break;
                    }
                }
            }
        }
        let mut used = vec![false; segs.len()];
        for start in 0..segs.len() {
            if used[start] {
                continue;
            }
            let mut ring = Vec::new();
            let mut cur = start;
            loop {
                used[cur] = true;
                ring.push(segs[cur].0);
                let end = segs[cur].1;
                if end == segs[start].0 {
                    break;
                }
                match (0..segs.len()).find(|&k| !used[k] && segs[k].0 == end) {
                    Some(k) => cur = k,
                    None => break,
                }
            }
            self.emit(cell, &ring);
        }
    }

    fn emit(&mut self, cell: [i64; 3], ring: &[[u8; 3]]) {
        if ring.len() < 3 {
            return;
        }
        let ids: Vec<u32> = ring.iter().map(|&l| self.edge_vertex(cell, l)).collect();
        match ring.len() {
            3 => self.faces.push([ids[0], ids[1], ids[2]]),
            4 => {
                let share02 = shares_face(&ring[0], &ring[2]);
                let share13 = shares_face(&ring[1], &ring[3]);
                let d02 = (self.verts[ids[0] as usize] - self.verts[ids[2] as usize]).norm_squared();
                let d13 = (self.verts[ids[1] as usize] - self.verts[ids[3] as usize]).norm_squared();
                if !share02 && (share13 || d02 <= d13) {
                    self.faces.push([ids[0], ids[1], ids[2]]);
                    self.faces.push([ids[0], ids[2], ids[3]]);
                } else if !share13 {
                    self.faces.push([ids[1], ids[2], ids[3]]);
                    self.faces.push([ids[1], ids[3], ids[0]]);
                } else {
                    self.fan(&ids);
                }
            }
            _ => self.fan(&ids),
        }
    }

    fn fan(&mut self, ids: &[u32]) {
        let c = ids.iter().map(|&i| self.verts[i as usize]).sum::<Vec3>() / ids.len() as f64;
        let ci = self.verts.len() as u32;
        self.verts.push(c);
        for k in 0..ids.len() {
            self.faces.push([ids[k], ids[(k + 1) % ids.len()], ci]);
        }
    }
}

fn shares_face(a: &[u8; 3], b: &[u8; 3]) -> bool {
    (0..3).any(|k| a[k] == b[k] && a[k] != 1)
}

/// Closed, outward-oriented surface of the occupied region of `grid`.
pub fn extract_surface(grid: &VoxelGrid) -> TriMesh {
    let res = grid.res as i64;
    let sample = |p: [i64; 3]| -> bool {
        if p.iter().any(|&c| c < 0 || c >= res) {
            false
        } else {
            grid.get(p[0] as usize, p[1] as usize, p[2] as usize)
        }
    };
    let mut b = Builder {
        grid,
        h: grid.voxel_size(),
        verts: Vec::new(),
        keys: HashMap::new(),
        faces: Vec::new(),
    };
    for z in -1..res {
        for y in -1..res {
            for x in -1..res {
                let mut inside = [false; 8];
                let mut any = false;
                let mut all = true;
                for (c, slot) in inside.iter_mut().enumerate() {
                    let o = corner_offset(c);
                    *slot = sample([x + o[0], y + o[1], z + o[2]]);
                    any |= *slot;
                    all &= *slot;
                }
                if any && !all {
                    b.cell([x, y, z], inside);
                }
            }
        }
    }
    compact(&b.verts, &b.faces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::empty_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_voxel_is_closed_octahedron() {
        let mut g = empty_grid(4).unwrap();
        g.set(1, 2, 1, true);
        let m = extract_surface(&g);
        assert_eq!(m.faces.len(), 8);
        assert!(m.is_watertight() && m.is_consistently_oriented());
        assert!(m.signed_volume() > 0.0);
    }

    #[test]
    fn random_fields_are_watertight_and_outward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for round in 0..40 {
            let mut g = empty_grid(6).unwrap();
            for v in &mut g.data {
                *v = rng.random_bool(0.5);
            }
            let m = extract_surface(&g);
            if m.is_empty() {
                continue;
            }
            assert_eq!(m.open_edge_count(), 0, "round {round}");
            assert!(m.is_consistently_oriented(), "round {round}");
            assert!(m.signed_volume() > 0.0, "round {round}");
        }
    }

    #[test]
    fn diagonal_voxels_stay_separate() {
        let mut g = empty_grid(4).unwrap();
        g.set(1, 1, 1, true);
        g.set(2, 2, 1, true);
        let m = extract_surface(&g);
        assert_eq!(m.faces.len(), 16);
        assert!(m.is_watertight());
    }
}
