use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toolforge::geometry::*;

/// Primitives whose bounding sphere stays under 0.35, so any rotation plus a
/// 0.1 offset keeps them inside (-0.45, 0.45)³.
fn small_primitive() -> impl Strategy<Value = TriMesh> {
    prop_oneof![
        prop::collection::vec(0.01f64..0.4, 3).prop_map(|p| (PrimitiveKind::Cube, p)),
        (0.01f64..0.2).prop_map(|r| (PrimitiveKind::Ball, vec![r])),
        (0.01f64..0.2, 0.01f64..0.4).prop_map(|(r, h)| (PrimitiveKind::Cylinder, vec![r, h])),
        (0.03f64..0.1, 0.05f64..0.95).prop_map(|(r, f)| (PrimitiveKind::Ring, vec![r, 2.0 * r * f])),
        (0.02f64..0.2, 0.01f64..0.4, 0.05f64..1.0).prop_map(|(r, l, f)| (PrimitiveKind::Tube, vec![r, l, r * f])),
    ]
    .prop_map(|(kind, p)| primitive(kind, &p).unwrap())
}

fn pose() -> impl Strategy<Value = Transform> {
    (prop::array::uniform3(-0.1f64..0.1), prop::array::uniform3(-3.2f64..3.2))
        .prop_map(|(t, e)| Transform::from_pos_euler(Vec3::from(t), Vec3::from(e)))
}

fn placed() -> impl Strategy<Value = TriMesh> {
    (small_primitive(), pose()).prop_map(|(m, t)| m.transformed(&t))
}

fn random_grid(res: usize, seed: u64) -> VoxelGrid {
    let mut g = empty_grid(res).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let density: f64 = rng.random();
    for cell in g.data.iter_mut() {
        *cell = rng.random::<f64>() < density;
    }
    g
}

fn volume_or_zero(m: &TriMesh) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        get_volume(m).unwrap()
    }
}

#[test]
fn obj_text_round_trip() {
    let m = primitive(PrimitiveKind::Tube, &[0.1, 0.3, 0.02]).unwrap();
    let back = read_obj(&write_obj(&m)).unwrap();
    assert_eq!(back.faces, m.faces);
    for (a, b) in back.vertices.iter().zip(&m.vertices) {
        assert!((a - b).norm() < 1e-9);
    }
    assert!(read_obj("v 0 0 0\nf 1 2 3\n").is_err());
}

#[test]
fn grid_ops_reject_out_of_bounds() {
    let big = primitive(PrimitiveKind::Cube, &[1.2, 0.1, 0.1]).unwrap();
    assert!(add_mesh(&empty_grid(16).unwrap(), &big).is_err());
    let a = empty_grid(16).unwrap();
    let b = empty_grid(32).unwrap();
    assert!(matches!(a.union(&b), Err(GeometryError::GridMismatch)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rotate_to_align_is_idempotent(m in placed()) {
        let once = rotate_to_align(&m).unwrap();
        let twice = rotate_to_align(&once).unwrap();
        for (a, b) in once.vertices.iter().zip(&twice.vertices) {
            prop_assert!((a - b).norm() < 1e-9);
        }
        let e = once.aabb().unwrap().extents();
        prop_assert!(e.x >= e.y && e.y >= e.z);
        // A proper rotation keeps orientation, so the volume sign survives.
        prop_assert!((once.signed_volume() - m.signed_volume()).abs() < 1e-12);
    }

    #[test]
    fn add_and_sub_of_one_mesh_cancel(m in placed(), seed in any::<u64>()) {
        let g = random_grid(16, seed);
        let added = add_mesh(&g, &m).unwrap();
        let removed = sub_mesh(&g, &m).unwrap();
        prop_assert_eq!(&sub_mesh(&added, &m).unwrap(), &removed);
        prop_assert_eq!(&add_mesh(&removed, &m).unwrap(), &added);
        // Painting is idempotent and monotone.
        prop_assert_eq!(&add_mesh(&added, &m).unwrap(), &added);
        prop_assert!(added.occupied() >= g.occupied() && removed.occupied() <= g.occupied());
        // On an empty grid, adding then removing restores the empty grid exactly.
        let empty = empty_grid(16).unwrap();
        prop_assert_eq!(sub_mesh(&add_mesh(&empty, &m).unwrap(), &m).unwrap(), empty);
    }

    #[test]
    fn voxel_round_trip_keeps_volume(m in placed()) {
        let grid = add_mesh(&empty_grid(64).unwrap(), &m).unwrap();
        let out = grid_to_mesh(&grid, true, DEFAULT_TARGET_FACES);
        prop_assert!(out.is_empty() || out.is_watertight());
        let v = get_volume(&m).unwrap();
        let got = volume_or_zero(&out);
        let h = 1.0 / 64.0;
        let tol = (0.02 * v).max(3.0 * h * m.surface_area());
        prop_assert!((got - v).abs() <= tol, "{got} vs {v} (tol {tol})");
    }

    #[test]
    fn concat_adds_volumes_of_disjoint_parts(parts in prop::collection::vec(small_primitive(), 1..5)) {
        let mut x = 0.0;
        let mut placed = Vec::new();
        for p in &parts {
            let e = p.aabb().unwrap().extents();
            placed.push(translate(p, &Vec3::new(x + e.x / 2.0, 0.0, 0.0)));
            x += e.x + 0.01;
        }
        let refs: Vec<&TriMesh> = placed.iter().collect();
        let total: f64 = parts.iter().map(|p| get_volume(p).unwrap()).sum();
        let joined = concat(&refs).unwrap();
        prop_assert!((get_volume(&joined).unwrap() - total).abs() < 1e-12);
        prop_assert_eq!(joined.faces.len(), parts.iter().map(|p| p.faces.len()).sum::<usize>());
    }
}
