use rand::Rng;

use crate::geometry::{rotation_from_euler, Transform, Vec3};
use crate::seed::rng_for;

use super::{
    SceneError, SimState, CLOSING_AXIS_TOLERANCE_DEG, FRICTION_CONE_DEG, GRASP_SAMPLES,
    LIFT_CHECK_HEIGHT, TABLE_Z,
};

#[derive(Debug, Clone, PartialEq)]
pub struct GraspPose {
    pub target: String,
    /// Gripper frame: origin midway between the contacts, rotation from the
    /// requested euler angles.
    pub tcp: Transform,
    /// World contact points at grasp time.
    pub contacts: [Vec3; 2],
    /// World outward normals at the contacts.
    pub normals: [Vec3; 2],
    pub width: f64,
}

fn key(target: &str, euler: &Vec3) -> (String, [u64; 3]) {
    (
        target.to_string(),
        [euler.x.to_bits(), euler.y.to_bits(), euler.z.to_bits()],
    )
}

/// Antipodal grasp search on `target` for a gripper held at `euler`.
///
/// Each sample picks an area-weighted point on the body's grasp region and
/// casts inward along the surface normal to the far side, giving the
/// farthest opposing contact along that line. A pair is accepted when its
/// axis is within the closing-axis tolerance of the gripper's y axis, it fits
/// the opening, the far normal lies in the friction cone, and the lift check
/// passes. Results are cached per `(target, euler)`.
pub fn sample_grasp(
    state: &mut SimState,
    target: &str,
    euler: Vec3,
    seed: u64,
) -> Result<GraspPose, SceneError> {
    let k = key(target, &euler);
    if let Some(p) = state.grasp_cache.get(&k) {
        return Ok(p.clone());
    }
    let bi = state
        .body_index(target)
        .ok_or_else(|| SceneError::UnknownBody(target.to_string()))?;
    if !state.bodies[bi].movable {
        return Err(SceneError::NotMovable(target.to_string()));
    }
    let body = state.bodies[bi].clone();
    let geom = &body.geom;
    let rot = rotation_from_euler(&euler);
    let closing = rot * Vec3::y();
    let cos_axis = CLOSING_AXIS_TOLERANCE_DEG.to_radians().cos();
    let cos_cone = FRICTION_CONE_DEG.to_radians().cos();
    let max_open = state.gripper.max_opening;
    let mut rng = rng_for(seed, &format!("grasp:{target}"));
    for _ in 0..GRASP_SAMPLES {
        state.grasp_samples_drawn += 1;
        let (u, r1, r2): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let Some(f) = geom.pick_grasp_face(u) else {
            break;
        };
        let [a, b, c] = geom.mesh.triangle(f as usize);
        let s = r1.sqrt();
        let pa = a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2);
        let na = geom.normal(f as usize);
        if !na.iter().all(|v| v.is_finite()) {
            continue;
        }
        let inward = -na;
        let Some((t, fb)) = geom.first_hit(&(pa + inward * 1e-9), &inward, 1e-9) else {
            continue;
        };
        let width = t + 1e-9;
        if width > max_open || width < 1e-4 {
            continue;
        }
        let nb = geom.normal(fb);
        if nb.dot(&inward) < cos_cone {
            continue;
        }
        let axis_w = body.pose.apply_vector(&inward);
        if axis_w.dot(&closing).abs() < cos_axis {
            continue;
        }
        let pb = pa + inward * width;
        let ca = body.pose.apply(&pa);
        let cb = body.pose.apply(&pb);
        let mid = (ca + cb) / 2.0;
        let tcp = Transform {
            rotation: rot,
            translation: mid,
        };
        if !lift_check(state, bi, &tcp, width) {
            continue;
        }
        let pose = GraspPose {
            target: target.to_string(),
            tcp,
            contacts: [ca, cb],
            normals: [body.pose.apply_vector(&na), body.pose.apply_vector(&nb)],
            width,
        };
        state.grasp_cache.insert(k, pose.clone());
        return Ok(pose);
    }
    Err(SceneError::GraspNotFound {
        target: target.to_string(),
        samples: GRASP_SAMPLES,
    })
}

/// The fingers stay above the table at the grasp, and lifting the body by
/// `LIFT_CHECK_HEIGHT` does not run it into another body.
fn lift_check(state: &SimState, bi: usize, tcp: &Transform, width: f64) -> bool {
    let g = &state.gripper;
    let half = width / 2.0 + 0.01;
    for &(y, z) in &[(-half, 0.0), (half, 0.0), (-half, g.finger_length), (half, g.finger_length)] {
        if tcp.apply(&Vec3::new(0.0, y, z)).z < TABLE_Z - 1e-9 {
            return false;
        }
    }
    let body = &state.bodies[bi];
    let lift = Vec3::new(0.0, 0.0, LIFT_CHECK_HEIGHT);
    for (j, other) in state.bodies.iter().enumerate() {
        if j == bi {
            continue;
        }
        let bb = other.world_aabb();
        for v in &body.geom.mesh.vertices {
            let p = body.pose.apply(v) + lift;
            if bb.contains(&p) && other.contains_world(&p) {
                return false;
            }
        }
    }
    true
}
