//! Tabletop scene: rigid bodies and particle sets on a table at z = 0, a
//! parallel gripper, and quasi-static interaction rules.

mod body;
mod grasp;
mod sim;
mod trajectory;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

pub use body::{Body, BodyGeometry, CavityTester};
pub use grasp::{sample_grasp, GraspPose};
pub use sim::execute;
pub use body::surface_samples;
pub use trajectory::{
    trajectory_parameters, Action, Trajectory, TrajectoryError, MOVE_EULER_RANGE, MOVE_POS_RANGE,
};

use crate::geometry::{self, GeometryError, ObjError, Transform, TriMesh, Vec3};
use crate::metrics::{TaskKind, TaskParams};
use crate::toolspec::GeomKind;

pub const TABLE_Z: f64 = 0.0;
/// Interpolation step for Move, meters.
pub const MOVE_STEP: f64 = 0.005;
/// Interpolation step for Move orientation, radians.
pub const ANGLE_STEP: f64 = 0.05;
pub const GRASP_SAMPLES: usize = 512;
pub const CLOSING_AXIS_TOLERANCE_DEG: f64 = 20.0;
pub const FRICTION_CONE_DEG: f64 = 30.0;
pub const CARRY_GAP: f64 = 0.005;
pub const POUR_TILT_DEG: f64 = 60.0;
pub const LIFT_CHECK_HEIGHT: f64 = 0.05;
/// Surface sampling pitch for pusher points.
pub const SURFACE_SPACING: f64 = 0.005;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene file: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("body {id}: {source}")]
    Mesh { id: String, source: ObjError },
    #[error("body {id}: {source}")]
    Geometry { id: String, source: GeometryError },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("scene has no bodies")]
    EmptyScene,
    #[error("unknown body {0:?}")]
    UnknownBody(String),
    #[error("body {0:?} is fixed and cannot be grasped")]
    NotMovable(String),
    #[error("no grasp found on {target:?} after {samples} samples")]
    GraspNotFound { target: String, samples: usize },
    #[error("target {pos:?} is outside the workspace (distance {distance:.4} > radius {radius})")]
    OutOfWorkspace {
        pos: [f64; 3],
        distance: f64,
        radius: f64,
    },
    #[error("invalid action sequence: {0}")]
    InvalidSequence(#[from] TrajectoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Material {
    Dough,
    Water,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParticleShape {
    #[default]
    Box,
    /// Vertical cylinder; `size[0]` is the diameter.
    Cylinder,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Workspace {
    pub center: Vec3,
    pub radius: f64,
}

impl Workspace {
    pub fn check(&self, pos: &Vec3) -> Result<(), SceneError> {
        let distance = (pos - self.center).norm();
        if distance > self.radius {
            return Err(SceneError::OutOfWorkspace {
                pos: [pos.x, pos.y, pos.z],
                distance,
                radius: self.radius,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperSpec {
    #[serde(default = "default_opening")]
    pub max_opening: f64,
    #[serde(default = "default_finger")]
    pub finger_length: f64,
}

fn default_opening() -> f64 {
    0.08
}
fn default_finger() -> f64 {
    0.05
}
fn default_spacing() -> f64 {
    0.01
}
fn default_true() -> bool {
    true
}

impl Default for GripperSpec {
    fn default() -> Self {
        GripperSpec {
            max_opening: default_opening(),
            finger_length: default_finger(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskKind,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub params: TaskParams,
}

#[derive(Debug, Clone)]
pub struct BodySpec {
    pub id: String,
    pub mesh: TriMesh,
    pub pose: Transform,
    pub movable: bool,
    /// Faces eligible for grasp contacts; all faces when `None`.
    pub grasp_faces: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSpec {
    pub id: String,
    pub material: Material,
    pub center: Vec3,
    pub size: Vec3,
    pub spacing: f64,
    pub shape: ParticleShape,
}

impl ParticleSpec {
    /// Cell-centered lattice points filling the region.
    pub fn sample(&self) -> Vec<Vec3> {
        let n = self.size.map(|s| ((s / self.spacing).round() as usize).max(1));
        let mut out = Vec::with_capacity(n.x * n.y * n.z);
        let lo = self.center - self.size / 2.0;
        for k in 0..n.z {
            for j in 0..n.y {
                for i in 0..n.x {
                    let p = lo
                        + Vec3::new(
                            (i as f64 + 0.5) * self.size.x / n.x as f64,
                            (j as f64 + 0.5) * self.size.y / n.y as f64,
                            (k as f64 + 0.5) * self.size.z / n.z as f64,
                        );
                    if self.shape == ParticleShape::Cylinder {
                        let d = Vec3::new(p.x - self.center.x, p.y - self.center.y, 0.0);
                        if d.norm() > self.size.x / 2.0 {
                            continue;
                        }
                    }
                    out.push(p);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub workspace: Workspace,
    pub gripper: GripperSpec,
    pub bodies: Vec<BodySpec>,
    pub particles: Vec<ParticleSpec>,
    pub task: Option<TaskSection>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    format: String,
    #[serde(default)]
    task: Option<TaskSection>,
    workspace: WorkspaceFile,
    #[serde(default)]
    gripper: GripperSpec,
    #[serde(default)]
    bodies: Vec<BodyFile>,
    #[serde(default)]
    particles: Vec<ParticleFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkspaceFile {
    #[serde(default)]
    center: [f64; 3],
    radius: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PrimitiveFile {
    geom: String,
    parameters: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BodyFile {
    id: String,
    #[serde(default)]
    mesh: Option<String>,
    #[serde(default)]
    primitive: Option<PrimitiveFile>,
    #[serde(default)]
    pos: [f64; 3],
    #[serde(default)]
    euler: [f64; 3],
    #[serde(default = "default_true")]
    movable: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParticleFile {
    id: String,
    material: Material,
    center: [f64; 3],
    size: [f64; 3],
    #[serde(default = "default_spacing")]
    spacing: f64,
    #[serde(default)]
    shape: ParticleShape,
}

pub const SCENE_FORMAT: &str = "scene/1";

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl SceneConfig {
    /// Parse a scene document; mesh paths resolve against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<SceneConfig, SceneError> {
        let file: SceneFile =
            serde_json::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
        if file.format != SCENE_FORMAT {
            return Err(SceneError::Parse(format!(
                "format must be {SCENE_FORMAT:?}, got {:?}",
                file.format
            )));
        }
        if !(file.workspace.radius > 0.0) {
            return Err(SceneError::Parse("workspace radius must be positive".into()));
        }
        let g = file.gripper;
        if !(g.max_opening > 0.0 && g.finger_length > 0.0) {
            return Err(SceneError::Parse("gripper dimensions must be positive".into()));
        }
        let mut bodies = Vec::new();
        for b in file.bodies {
            let mesh = match (&b.mesh, &b.primitive) {
                (Some(rel), None) => {
                    geometry::load_obj(&base_dir.join(rel)).map_err(|source| SceneError::Mesh {
                        id: b.id.clone(),
                        source,
                    })?
                }
                (None, Some(p)) => {
                    let kind = GeomKind::from_name(&p.geom)
                        .and_then(|k| k.primitive_kind())
                        .ok_or_else(|| {
                            SceneError::Parse(format!("body {}: unknown primitive {:?}", b.id, p.geom))
                        })?;
                    geometry::primitive(kind, &p.parameters).map_err(|source| SceneError::Geometry {
                        id: b.id.clone(),
                        source,
                    })?
                }
                _ => {
                    return Err(SceneError::Parse(format!(
                        "body {}: exactly one of mesh or primitive is required",
                        b.id
                    )))
                }
            };
            bodies.push(BodySpec {
                id: b.id,
                mesh,
                pose: Transform::from_pos_euler(v3(b.pos), v3(b.euler)),
                movable: b.movable,
                grasp_faces: None,
            });
        }
        let mut particles = Vec::new();
        for p in file.particles {
            if !(p.spacing > 0.0) || p.size.iter().any(|s| !(*s > 0.0)) {
                return Err(SceneError::Parse(format!(
                    "particles {}: size and spacing must be positive",
                    p.id
                )));
            }
            particles.push(ParticleSpec {
                id: p.id,
                material: p.material,
                center: v3(p.center),
                size: v3(p.size),
                spacing: p.spacing,
                shape: p.shape,
            });
        }
        Ok(SceneConfig {
            workspace: Workspace {
                center: v3(file.workspace.center),
                radius: file.workspace.radius,
            },
            gripper: g,
            bodies,
            particles,
            task: file.task,
        })
    }

    pub fn load(path: &Path) -> Result<SceneConfig, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub id: String,
    pub material: Material,
    pub spacing: f64,
    pub positions: Vec<Vec3>,
}

#[derive(Debug, Clone)]
pub struct Held {
    pub body: usize,
    /// Body pose in the gripper frame.
    pub offset: Transform,
    /// Water particles riding in the body's cavity: (set, index, body-frame position).
    pub water: Vec<(usize, usize, Vec3)>,
}

/// Immutable snapshot of the starting configuration, used by metrics.
#[derive(Debug, Clone)]
pub struct InitialState {
    pub body_poses: Vec<Transform>,
    pub particle_tops: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub bodies: Vec<Body>,
    pub particles: Vec<ParticleSet>,
    pub workspace: Workspace,
    pub gripper: GripperSpec,
    pub gripper_pose: Transform,
    pub gripper_width: f64,
    pub held: Option<Held>,
    pub contacts: BTreeSet<String>,
    pub seed: u64,
    /// Total candidate pairs drawn by the grasp sampler.
    pub grasp_samples_drawn: usize,
    pub task: Option<TaskSection>,
    pub initial: Arc<InitialState>,
    pub(crate) grasp_cache: BTreeMap<(String, [u64; 3]), GraspPose>,
    /// Finger pad sample points in the gripper frame.
    pub(crate) fingers: Arc<Vec<Vec3>>,
}

/// Build the simulation state; the gripper starts open above the workspace center.
pub fn load_scene(config: &SceneConfig) -> Result<SimState, SceneError> {
    if config.bodies.is_empty() {
        return Err(SceneError::EmptyScene);
    }
    let mut seen = BTreeSet::new();
    for id in config
        .bodies
        .iter()
        .map(|b| &b.id)
        .chain(config.particles.iter().map(|p| &p.id))
    {
        if !seen.insert(id.clone()) {
            return Err(SceneError::DuplicateId(id.clone()));
        }
    }
    let bodies = config
        .bodies
        .iter()
        .map(|b| {
            let geom = BodyGeometry::new(b.mesh.clone(), b.grasp_faces.clone()).map_err(|source| {
                SceneError::Geometry {
                    id: b.id.clone(),
                    source,
                }
            })?;
            Ok(Body {
                id: b.id.clone(),
                pose: b.pose,
                movable: b.movable,
                geom: Arc::new(geom),
            })
        })
        .collect::<Result<Vec<_>, SceneError>>()?;
    let particles: Vec<ParticleSet> = config
        .particles
        .iter()
        .map(|p| ParticleSet {
            id: p.id.clone(),
            material: p.material,
            spacing: p.spacing,
            positions: p.sample(),
        })
        .collect();
    let initial = InitialState {
        body_poses: bodies.iter().map(|b| b.pose).collect(),
        particle_tops: particles.iter().map(|p| top_z(&p.positions)).collect(),
    };
    let ws = config.workspace;
    Ok(SimState {
        bodies,
        particles,
        workspace: ws,
        gripper: config.gripper,
        gripper_pose: Transform::from_pos_euler(
            ws.center + Vec3::new(0.0, 0.0, 0.5 * ws.radius),
            Vec3::zeros(),
        ),
        gripper_width: config.gripper.max_opening,
        held: None,
        contacts: BTreeSet::new(),
        seed: 0,
        grasp_samples_drawn: 0,
        task: config.task.clone(),
        initial: Arc::new(initial),
        grasp_cache: BTreeMap::new(),
        fingers: Arc::new(sim::finger_samples(&config.gripper, config.gripper.max_opening)),
    })
}

/// Highest z among `ps`; negative infinity when empty.
pub fn top_z(ps: &[Vec3]) -> f64 {
    ps.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max)
}

impl SimState {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn body_index(&self, id: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.id == id)
    }

    pub fn body(&self, id: &str) -> Option<&Body> {
        self.bodies.iter().find(|b| b.id == id)
    }

    pub fn particle_set(&self, id: &str) -> Option<&ParticleSet> {
        self.particles.iter().find(|p| p.id == id)
    }

    pub fn initial_pose(&self, id: &str) -> Option<Transform> {
        self.body_index(id).map(|i| self.initial.body_poses[i])
    }

    pub fn initial_particle_top(&self, id: &str) -> Option<f64> {
        self.particles
            .iter()
            .position(|p| p.id == id)
            .map(|i| self.initial.particle_tops[i])
    }

    /// Add a body after loading, e.g. the assembled tool.
    pub fn add_body(&mut self, spec: BodySpec) -> Result<(), SceneError> {
        if self.body_index(&spec.id).is_some() || self.particle_set(&spec.id).is_some() {
            return Err(SceneError::DuplicateId(spec.id));
        }
        let geom = BodyGeometry::new(spec.mesh, spec.grasp_faces).map_err(|source| {
            SceneError::Geometry {
                id: spec.id.clone(),
                source,
            }
        })?;
        self.bodies.push(Body {
            id: spec.id,
            pose: spec.pose,
            movable: spec.movable,
            geom: Arc::new(geom),
        });
        let mut init = (*self.initial).clone();
        init.body_poses.push(spec.pose);
        self.initial = Arc::new(init);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENE: &str = r#"{
      "format": "scene/1",
      "task": {"kind": "reach", "description": "pull the cube", "params": {"target": [0.4, 0, 0.025]}},
      "workspace": {"center": [0, 0, 0], "radius": 0.7},
      "bodies": [
        {"id": "cube", "primitive": {"geom": "cube", "parameters": [0.05, 0.05, 0.05]}, "pos": [0.8, 0, 0.025]},
        {"id": "wall", "primitive": {"geom": "cube", "parameters": [0.02, 0.4, 0.1]}, "pos": [1.0, 0, 0.05], "movable": false}
      ],
      "particles": [{"id": "dough", "material": "dough", "center": [0, 0.3, 0.02], "size": [0.1, 0.1, 0.04]}]
    }"#;

    #[test]
    fn load_and_initial_pose() {
        let cfg = SceneConfig::from_json(SCENE, Path::new(".")).unwrap();
        assert_eq!(cfg.gripper, GripperSpec::default());
        let s = load_scene(&cfg).unwrap();
        assert_eq!(s.bodies.len(), 2);
        assert_eq!(s.particles[0].positions.len(), 10 * 10 * 4);
        assert!((s.gripper_pose.translation - Vec3::new(0.0, 0.0, 0.35)).norm() < 1e-12);
        assert!((s.initial_particle_top("dough").unwrap() - 0.035).abs() < 1e-12);
        assert_eq!(s.task.as_ref().unwrap().kind, TaskKind::Reach);
    }

    #[test]
    fn rejects_bad_documents() {
        let bad = SCENE.replace("scene/1", "scene/2");
        assert!(matches!(SceneConfig::from_json(&bad, Path::new(".")), Err(SceneError::Parse(_))));
        let bad = SCENE.replace("\"movable\": false", "\"moveable\": false");
        assert!(matches!(SceneConfig::from_json(&bad, Path::new(".")), Err(SceneError::Parse(_))));
        let dup = SCENE.replace("\"wall\"", "\"cube\"");
        let cfg = SceneConfig::from_json(&dup, Path::new(".")).unwrap();
        assert!(matches!(load_scene(&cfg), Err(SceneError::DuplicateId(_))));
    }

    #[test]
    fn cylinder_particles_stay_in_radius() {
        let p = ParticleSpec {
            id: "w".into(),
            material: Material::Water,
            center: Vec3::new(0.0, 0.0, 0.05),
            size: Vec3::new(0.06, 0.06, 0.04),
            spacing: 0.01,
            shape: ParticleShape::Cylinder,
        };
        let pts = p.sample();
        assert!(!pts.is_empty() && pts.len() < 6 * 6 * 4);
        assert!(pts.iter().all(|q| (q.xy() - p.center.xy()).norm() <= 0.03));
    }
}
