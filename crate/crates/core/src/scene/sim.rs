use std::sync::Arc;

use crate::geometry::{primitive, PrimitiveKind, Transform, Vec3};

use super::body::{surface_samples, Body};
use super::trajectory::{Action, Trajectory};
use super::{
    sample_grasp, GripperSpec, Held, Material, SceneError, SimState, ANGLE_STEP, CARRY_GAP,
    MOVE_STEP, POUR_TILT_DEG, SURFACE_SPACING, TABLE_Z,
};

/// Apply `traj` to a copy of `state`.
pub fn execute(state: &SimState, traj: &Trajectory) -> Result<SimState, SceneError> {
    traj.check_sequence()?;
    let mut s = state.clone();
    for action in &traj.actions {
        match action {
            Action::Grasp { target, euler } => s.grasp(target, *euler)?,
            Action::Move { pos, euler } => s.move_to(*pos, *euler)?,
            Action::Release => s.release(),
        }
    }
    Ok(s)
}

/// Surface points of the two finger pads in the gripper frame. Fingers run
/// from the TCP up to the palm along +z and sit just outside `±width / 2`.
pub(crate) fn finger_samples(spec: &GripperSpec, width: f64) -> Vec<Vec3> {
    let pad = primitive(PrimitiveKind::Cube, &[0.02, 0.01, spec.finger_length])
        .expect("positive finger dimensions");
    let local = surface_samples(&pad, SURFACE_SPACING);
    let mut out = Vec::with_capacity(2 * local.len());
    for side in [-1.0, 1.0] {
        let c = Vec3::new(0.0, side * (width / 2.0 + 0.005), spec.finger_length / 2.0);
        out.extend(local.iter().map(|p| p + c));
    }
    out
}

struct Pusher {
    prev: Vec3,
    next: Vec3,
}

/// Horizontal push on `body` from points that entered it during this step.
/// A point counts only when it crossed a side face, so a tool lowered onto
/// a body from above does not drag it.
fn push_displacement(body: &Body, pushers: &[Pusher]) -> Option<Vec3> {
    let bb = body.world_aabb();
    let inv = body.pose.inverse();
    let mut best: Option<(f64, Vec3)> = None;
    for p in pushers {
        if !bb.contains(&p.next) {
            continue;
        }
        let nl = inv.apply(&p.next);
        if !body.geom.contains(&nl) || body.geom.contains(&inv.apply(&p.prev)) {
            continue;
        }
        let m = p.next - p.prev;
        let h = Vec3::new(m.x, m.y, 0.0);
        let hn = h.norm();
        if hn < 1e-12 {
            continue;
        }
        let h = h / hn;
        let back = inv.apply_vector(&(-h));
        if let Some((depth, _)) = body.geom.first_hit(&nl, &back, 0.0) {
            if depth <= hn + 1e-9 && best.is_none_or(|(d, _)| depth > d) {
                best = Some((depth, h));
            }
        }
    }
    best.map(|(d, h)| h * (d + 1e-7))
}

impl SimState {
    fn grasp(&mut self, target: &str, euler: Vec3) -> Result<(), SceneError> {
        if self.held.is_some() {
            return Err(SceneError::InvalidSequence(
                super::TrajectoryError::InvalidSequence {
                    index: 0,
                    msg: "grasp while already holding".into(),
                },
            ));
        }
        let bi = self
            .body_index(target)
            .ok_or_else(|| SceneError::UnknownBody(target.to_string()))?;
        self.workspace.check(&self.bodies[bi].position())?;
        let pose = sample_grasp(self, target, euler, self.seed)?;
        // The approach itself is not simulated; the gripper appears at the grasp.
        self.gripper_pose = pose.tcp;
        self.set_width(pose.width);
        for k in 0..2 {
            let flag = self.classify_contact(bi, &pose.contacts[k], &pose.normals[k]);
            self.contacts.insert(flag);
        }
        let body = &self.bodies[bi];
        let inv = body.pose.inverse();
        let mut water = Vec::new();
        for (si, set) in self.particles.iter().enumerate() {
            if set.material != Material::Water {
                continue;
            }
            for (pi, p) in set.positions.iter().enumerate() {
                if body.in_cavity_world(p) {
                    water.push((si, pi, inv.apply(p)));
                }
            }
        }
        self.held = Some(Held {
            body: bi,
            offset: pose.tcp.inverse().compose(&body.pose),
            water,
        });
        Ok(())
    }

    fn release(&mut self) {
        self.held = None;
        self.set_width(self.gripper.max_opening);
    }

    fn set_width(&mut self, width: f64) {
        self.gripper_width = width;
        self.fingers = Arc::new(finger_samples(&self.gripper, width));
    }

    fn move_to(&mut self, pos: Vec3, euler: Vec3) -> Result<(), SceneError> {
        self.workspace.check(&pos)?;
        let start = self.gripper_pose;
        let goal = Transform::from_pos_euler(pos, euler);
        let dist = (goal.translation - start.translation).norm();
        let angle = start.angle_to(&goal);
        let n = ((dist / MOVE_STEP).ceil().max((angle / ANGLE_STEP).ceil()) as usize).max(1);
        for k in 1..=n {
            let t = k as f64 / n as f64;
            self.step_to(start.interpolate(&goal, t));
        }
        Ok(())
    }

    fn step_to(&mut self, new: Transform) {
        let old = self.gripper_pose;
        let held = self.held.as_ref().map(|h| (h.body, h.offset));
        let mut pushers: Vec<Pusher> = self
            .fingers
            .iter()
            .map(|p| Pusher {
                prev: old.apply(p),
                next: new.apply(p),
            })
            .collect();
        let mut carried = Vec::new();
        if let Some((hb, offset)) = held {
            let old_body = self.bodies[hb].pose;
            let new_body = new.compose(&offset);
            let tool = &self.bodies[hb];
            pushers.extend(tool.geom.samples.iter().map(|p| Pusher {
                prev: old_body.apply(p),
                next: new_body.apply(p),
            }));
            let rising = new_body.translation.z > old_body.translation.z;
            for j in 0..self.bodies.len() {
                if j != hb && self.bodies[j].movable && self.supported_by(j, hb, rising) {
                    carried.push(j);
                }
            }
            let delta = new_body.compose(&old_body.inverse());
            self.bodies[hb].pose = new_body;
            for &j in &carried {
                self.bodies[j].pose = delta.compose(&self.bodies[j].pose);
            }
            if let Some(h) = &self.held {
                for &(si, pi, local) in &h.water {
                    self.particles[si].positions[pi] = new_body.apply(&local);
                }
            }
        }
        self.gripper_pose = new;

        for j in 0..self.bodies.len() {
            if !self.bodies[j].movable || Some(j) == held.map(|h| h.0) || carried.contains(&j) {
                continue;
            }
            if let Some(d) = push_displacement(&self.bodies[j], &pushers) {
                self.bodies[j].pose.translation += d;
            }
        }

        if let Some((hb, _)) = held {
            self.shape_dough(hb);
            let pour_tilt = POUR_TILT_DEG.to_radians();
            if self.bodies[hb].tilt() > pour_tilt && self.held.as_ref().is_some_and(|h| !h.water.is_empty()) {
                self.pour(hb);
            }
        }
        self.record_finger_contacts(held.map(|h| h.0));
    }

    /// The lowest surface points of body `j` rest on or within `CARRY_GAP`
    /// above the held body. Support only carries while rising or once lifted off the table.
    fn supported_by(&self, j: usize, hb: usize, rising: bool) -> bool {
        let body = &self.bodies[j];
        let tool = &self.bodies[hb];
        if !body.world_aabb().intersects(&tool.world_aabb().expanded(CARRY_GAP)) {
            return false;
        }
        let verts: Vec<Vec3> = body.geom.samples.iter().map(|v| body.pose.apply(v)).collect();
        let min_z = verts.iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
        if !rising && min_z <= TABLE_Z + CARRY_GAP {
            return false;
        }
        let inv = tool.pose.inverse();
        let down = inv.apply_vector(&-Vec3::z());
        verts.iter().filter(|v| v.z <= min_z + 1e-4).any(|v| {
            let vl = inv.apply(v);
            tool.geom.contains(&vl)
                || tool
                    .geom
                    .first_hit(&vl, &down, 0.0)
                    .is_some_and(|(t, _)| t <= CARRY_GAP)
        })
    }

    /// Press for flat tools, cut for blades whose thin axis is horizontal.
    fn shape_dough(&mut self, hb: usize) {
        let tool = self.bodies[hb].clone();
        let bb = tool.world_aabb();
        let inv = tool.pose.inverse();
        let blade = tool.geom.blade_axis().and_then(|(axis, half)| {
            let mut e = Vec3::zeros();
            e[axis] = 1.0;
            let n = tool.pose.apply_vector(&e);
            (n.z.abs() < 0.5).then_some((axis, half, n))
        });
        let center = tool.geom.local_aabb.center();
        let down = inv.apply_vector(&-Vec3::z());
        for set in self.particles.iter_mut().filter(|s| s.material == Material::Dough) {
            for p in set.positions.iter_mut() {
                if !bb.contains(p) {
                    continue;
                }
                let pl = inv.apply(p);
                if !tool.geom.contains(&pl) {
                    continue;
                }
                match blade {
                    Some((axis, half, n)) => {
                        let s = pl[axis] - center[axis];
                        let target = if s >= 0.0 { half + 1e-6 } else { -(half + 1e-6) };
                        let mut d = n * (target - s);
                        d.z = 0.0;
                        *p += d;
                    }
                    None => {
                        if let Some((t, _)) = tool.geom.first_hit(&pl, &down, 0.0) {
                            p.z = (p.z - t - 1e-6).max(TABLE_Z);
                        }
                    }
                }
            }
        }
    }

    /// Contained water leaves from the lowest rim point and settles into the
    /// first cavity below it, filling cavity lattice slots from the bottom;
    /// anything left over lands on the table.
    fn pour(&mut self, hb: usize) {
        let water = match self.held.as_mut() {
            Some(h) => std::mem::take(&mut h.water),
            None => return,
        };
        let cup = &self.bodies[hb];
        let top = cup.geom.local_aabb.max.z;
        let tol = 1e-3_f64.max(1e-3 * cup.geom.local_aabb.extents().z);
        let rim = cup
            .geom
            .mesh
            .vertices
            .iter()
            .filter(|v| v.z >= top - tol)
            .map(|v| cup.pose.apply(v))
            .min_by(|a, b| a.z.partial_cmp(&b.z).unwrap().then(a.x.partial_cmp(&b.x).unwrap()))
            .unwrap_or(cup.position());
        let spacing = water
            .first()
            .map(|&(si, _, _)| self.particles[si].spacing)
            .unwrap_or(0.01);

        let mut container = None;
        let mut z = rim.z - spacing / 2.0;
        'descend: while z > TABLE_Z {
            let q = Vec3::new(rim.x, rim.y, z);
            for (j, b) in self.bodies.iter().enumerate() {
                if j != hb && b.in_cavity_world(&q) {
                    container = Some(j);
                    break 'descend;
                }
            }
            z -= spacing / 2.0;
        }

        let mut slots: Vec<Vec3> = Vec::new();
        if let Some(j) = container {
            let b = &self.bodies[j];
            let mut free: Vec<Vec3> = b
                .geom
                .cavity_lattice(spacing)
                .iter()
                .map(|p| b.pose.apply(p))
                .collect();
            let occupied: Vec<Vec3> = self
                .particles
                .iter()
                .filter(|s| s.material == Material::Water)
                .flat_map(|s| s.positions.iter().copied())
                .filter(|p| b.in_cavity_world(p))
                .collect();
            free.retain(|s| occupied.iter().all(|o| (o - s).norm() > spacing / 2.0));
            free.sort_by(|a, b| {
                (a.z, a.x, a.y)
                    .partial_cmp(&(b.z, b.x, b.y))
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            slots = free;
        }
        let mut slots = slots.into_iter();
        let mut spilled = 0usize;
        for &(si, pi, _) in &water {
            let p = match slots.next() {
                Some(s) => s,
                None => {
                    let k = spilled;
                    spilled += 1;
                    let cell = k % 25;
                    let layer = (k / 25) as f64;
                    Vec3::new(
                        rim.x + ((cell % 5) as f64 - 2.0) * spacing,
                        rim.y + ((cell / 5) as f64 - 2.0) * spacing,
                        TABLE_Z + spacing / 2.0 + layer * spacing,
                    )
                }
            };
            self.particles[si].positions[pi] = p;
        }
    }

    fn record_finger_contacts(&mut self, held: Option<usize>) {
        let mut flags = Vec::new();
        for (j, body) in self.bodies.iter().enumerate() {
            if Some(j) == held {
                continue;
            }
            let bb = body.world_aabb();
            let inv = body.pose.inverse();
            for p in self.fingers.iter() {
                let w = self.gripper_pose.apply(p);
                if !bb.contains(&w) {
                    continue;
                }
                let pl = inv.apply(&w);
                if !body.geom.contains(&pl) {
                    continue;
                }
                let nearest = [Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y(), Vec3::z(), -Vec3::z()]
                    .iter()
                    .filter_map(|d| body.geom.first_hit(&pl, d, 0.0).map(|(t, f)| (t, f, *d)))
                    .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                if let Some((t, f, d)) = nearest {
                    let surface = body.pose.apply(&(pl + d * t));
                    let normal = body.pose.apply_vector(&body.geom.normal(f));
                    flags.push(self.classify_contact(j, &surface, &normal));
                }
                break;
            }
        }
        self.contacts.extend(flags);
    }

    /// `<id>.inner` when the contact faces the body's cavity, else `<id>.outer`.
    fn classify_contact(&self, bi: usize, point: &Vec3, normal: &Vec3) -> String {
        let b = &self.bodies[bi];
        let side = if b.in_cavity_world(&(point + normal * 0.01)) {
            "inner"
        } else {
            "outer"
        };
        format!("{}.{side}", b.id)
    }
}
