//! Task metrics normalized to [0, 1], trial aggregation and 2-means.

mod kmeans;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kmeans::{kmeans2, wcss, KMeansResult};

use crate::geometry::Vec3;
use crate::scene::{SimState, TABLE_Z};

/// A trial counts as a success when its score is strictly above this.
pub const SUCCESS_THRESHOLD: f64 = 0.8;
/// Trials per experiment.
pub const TRIALS: usize = 8;
pub const KMEANS_ITERATIONS: usize = 50;
pub const FLATTEN_HEIGHT: f64 = 0.03;
pub const CUT_SEPARATION: f64 = 0.2;
pub const BOWL_HEIGHT: f64 = 0.1;
pub const PIGGY_HEIGHT: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Reach,
    FlattenDough,
    CutDough,
    HoldPhone,
    LiftBowl,
    LiftPiggy,
    TransportWater,
    FillBottle,
    DoughCalabash,
}

impl TaskKind {
    pub const ALL: [TaskKind; 9] = [
        TaskKind::Reach,
        TaskKind::FlattenDough,
        TaskKind::CutDough,
        TaskKind::HoldPhone,
        TaskKind::LiftBowl,
        TaskKind::LiftPiggy,
        TaskKind::TransportWater,
        TaskKind::FillBottle,
        TaskKind::DoughCalabash,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Reach => "reach",
            TaskKind::FlattenDough => "flatten_dough",
            TaskKind::CutDough => "cut_dough",
            TaskKind::HoldPhone => "hold_phone",
            TaskKind::LiftBowl => "lift_bowl",
            TaskKind::LiftPiggy => "lift_piggy",
            TaskKind::TransportWater => "transport_water",
            TaskKind::FillBottle => "fill_bottle",
            TaskKind::DoughCalabash => "dough_calabash",
        }
    }

    pub fn from_name(s: &str) -> Option<TaskKind> {
        Self::ALL.iter().copied().find(|k| k.name() == s)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Entity ids and targets a metric reads. Unset ids fall back to the
/// task's conventional names (`cube`, `dough`, `phone`, `bowl`, ...).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub container: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("required entity {0:?} is missing from the scene")]
    MissingEntity(String),
    #[error("task parameter {0:?} is required")]
    MissingParameter(&'static str),
    #[error("no calabash scorer is configured")]
    ScorerUnavailable,
    #[error("scorer failed: {0}")]
    Scorer(String),
    #[error("all points are identical")]
    DegenerateInput,
    #[error("no trials to aggregate")]
    EmptyTrials,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Score {
    pub p: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

impl Score {
    /// Score with `p` clamped to [0, 1] and no diagnostics.
    pub fn new(p: f64) -> Self {
        Score {
            p: clamp01(p),
            diagnostics: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, v: f64) -> Self {
        self.diagnostics.insert(key.to_string(), v);
        self
    }
}

fn clamp01(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialAggregate {
    pub p_best: f64,
    pub success_rate: f64,
    pub trials: Vec<Score>,
}

pub fn aggregate(trials: &[Score]) -> Result<TrialAggregate, MetricError> {
    if trials.is_empty() {
        return Err(MetricError::EmptyTrials);
    }
    let p_best = trials.iter().map(|s| s.p).fold(f64::NEG_INFINITY, f64::max);
    let wins = trials.iter().filter(|s| s.p > SUCCESS_THRESHOLD).count();
    Ok(TrialAggregate {
        p_best,
        success_rate: wins as f64 / trials.len() as f64,
        trials: trials.to_vec(),
    })
}

/// Scores a rendered image of the final scene; returns a value in [0, 1].
pub trait CalabashScorer: Send + Sync {
    fn score(&self, image: &crate::render::Image) -> Result<f64, MetricError>;
}

/// Always 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubScorer;

impl CalabashScorer for StubScorer {
    fn score(&self, _image: &crate::render::Image) -> Result<f64, MetricError> {
        Ok(0.0)
    }
}

/// Runs an executable with the path of a PPM image as its last argument and
/// reads a single float from its standard output.
#[derive(Debug, Clone)]
pub struct CommandScorer {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl CalabashScorer for CommandScorer {
    fn score(&self, image: &crate::render::Image) -> Result<f64, MetricError> {
        let dir = tempfile_dir().map_err(|e| MetricError::Scorer(e.to_string()))?;
        let path = dir.join("view.ppm");
        std::fs::write(&path, image.to_ppm()).map_err(|e| MetricError::Scorer(e.to_string()))?;
        let out = std::process::Command::new(&self.program)
            .args(&self.args)
            .arg(&path)
            .output();
        let _ = std::fs::remove_dir_all(&dir);
        let out = out.map_err(|e| MetricError::Scorer(format!("{}: {e}", self.program.display())))?;
        if !out.status.success() {
            return Err(MetricError::Scorer(format!(
                "{} exited with {}",
                self.program.display(),
                out.status
            )));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let v: f64 = text
            .trim()
            .parse()
            .map_err(|_| MetricError::Scorer(format!("expected a number, got {:?}", text.trim())))?;
        Ok(clamp01(v))
    }
}

fn tempfile_dir() -> std::io::Result<PathBuf> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let dir = std::env::temp_dir().join(format!("toolforge-scorer-{}-{n}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Everything a metric may read besides the state.
#[derive(Clone, Default)]
pub struct MetricContext {
    pub scorer: Option<Arc<dyn CalabashScorer>>,
    /// Seed for the 2-means initialization.
    pub seed: u64,
}

impl fmt::Debug for MetricContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricContext")
            .field("scorer", &self.scorer.is_some())
            .field("seed", &self.seed)
            .finish()
    }
}

pub trait TaskMetric: Send + Sync {
    fn kind(&self) -> TaskKind;
    fn score(&self, state: &SimState, params: &TaskParams, ctx: &MetricContext) -> Result<Score, MetricError>;
}

fn subject<'a>(params: &'a TaskParams, default: &'a str) -> &'a str {
    params.subject.as_deref().unwrap_or(default)
}

fn body_pos(state: &SimState, id: &str) -> Result<Vec3, MetricError> {
    state
        .body(id)
        .map(|b| b.position())
        .ok_or_else(|| MetricError::MissingEntity(id.to_string()))
}

fn particles<'a>(state: &'a SimState, id: &str) -> Result<&'a crate::scene::ParticleSet, MetricError> {
    state
        .particle_set(id)
        .ok_or_else(|| MetricError::MissingEntity(id.to_string()))
}

struct Reach;
impl TaskMetric for Reach {
    fn kind(&self) -> TaskKind {
        TaskKind::Reach
    }
    fn score(&self, state: &SimState, params: &TaskParams, _: &MetricContext) -> Result<Score, MetricError> {
        let id = subject(params, "cube");
        let pos = body_pos(state, id)?;
        let pos0 = state
            .initial_pose(id)
            .ok_or_else(|| MetricError::MissingEntity(id.to_string()))?
            .translation;
        let t = params.target.ok_or(MetricError::MissingParameter("target"))?;
        let target = Vec3::new(t[0], t[1], t[2]);
        Ok(reach_score((pos - target).norm(), (pos0 - target).norm()))
    }
}

pub fn reach_score(d: f64, d0: f64) -> Score {
    let ratio = if d0 > 0.0 { d / d0 } else if d > 0.0 { 1.0 } else { 0.0 };
    Score::new(1.0 - ratio.clamp(0.0, 1.0))
        .with("distance", d)
        .with("initial_distance", d0)
}

struct Flatten;
impl TaskMetric for Flatten {
    fn kind(&self) -> TaskKind {
        TaskKind::FlattenDough
    }
    fn score(&self, state: &SimState, params: &TaskParams, _: &MetricContext) -> Result<Score, MetricError> {
        let id = params.particles.as_deref().unwrap_or("dough");
        let set = particles(state, id)?;
        let h = crate::scene::top_z(&set.positions) - TABLE_Z;
        let h0 = state.initial_particle_top(id).unwrap_or(h) - TABLE_Z;
        Ok(flatten_score(h, h0))
    }
}

pub fn flatten_score(h: f64, h0: f64) -> Score {
    let denom = h0 - FLATTEN_HEIGHT;
    let excess = if denom > 0.0 {
        ((h - FLATTEN_HEIGHT) / denom).max(0.0)
    } else if h <= FLATTEN_HEIGHT {
        0.0
    } else {
        1.0
    };
    Score::new(1.0 - excess).with("height", h).with("initial_height", h0)
}

struct Cut;
impl TaskMetric for Cut {
    fn kind(&self) -> TaskKind {
        TaskKind::CutDough
    }
    fn score(&self, state: &SimState, params: &TaskParams, ctx: &MetricContext) -> Result<Score, MetricError> {
        let id = params.particles.as_deref().unwrap_or("dough");
        let set = particles(state, id)?;
        let km = kmeans2(&set.positions, ctx.seed)?;
        Ok(cut_score((km.centers[0] - km.centers[1]).norm()))
    }
}

pub fn cut_score(separation: f64) -> Score {
    Score::new(1.0 - ((CUT_SEPARATION - separation) / CUT_SEPARATION).max(0.0))
        .with("separation", separation)
}

struct HoldPhone;
impl TaskMetric for HoldPhone {
    fn kind(&self) -> TaskKind {
        TaskKind::HoldPhone
    }
    fn score(&self, state: &SimState, params: &TaskParams, _: &MetricContext) -> Result<Score, MetricError> {
        let id = subject(params, "phone");
        let b = state.body(id).ok_or_else(|| MetricError::MissingEntity(id.to_string()))?;
        let n = b.pose.apply_vector(&Vec3::z());
        Ok(hold_phone_score(n.z.clamp(-1.0, 1.0).asin().to_degrees()))
    }
}

/// `elevation` is the face normal's angle above the horizontal, degrees.
pub fn hold_phone_score(elevation: f64) -> Score {
    Score::new(1.0 - (90.0 - elevation) / 90.0).with("elevation_deg", elevation)
}

struct LiftBowl;
impl TaskMetric for LiftBowl {
    fn kind(&self) -> TaskKind {
        TaskKind::LiftBowl
    }
    fn score(&self, state: &SimState, params: &TaskParams, _: &MetricContext) -> Result<Score, MetricError> {
        let id = subject(params, "bowl");
        let z = body_pos(state, id)?.z;
        let inner = state.contacts.contains(&format!("{id}.inner"));
        Ok(lift_bowl_score(z, inner))
    }
}

pub fn lift_bowl_score(z: f64, inner_contact: bool) -> Score {
    let height = 1.0 - ((BOWL_HEIGHT - z) / BOWL_HEIGHT).max(0.0);
    let gate = if inner_contact { 0.0 } else { 1.0 };
    Score::new(height * gate).with("z", z).with("inner_contact", 1.0 - gate)
}

struct LiftPiggy;
impl TaskMetric for LiftPiggy {
    fn kind(&self) -> TaskKind {
        TaskKind::LiftPiggy
    }
    fn score(&self, state: &SimState, params: &TaskParams, _: &MetricContext) -> Result<Score, MetricError> {
        let id = subject(params, "piggy");
        Ok(lift_piggy_score(body_pos(state, id)?.z))
    }
}

pub fn lift_piggy_score(z: f64) -> Score {
    Score::new(1.0 - ((PIGGY_HEIGHT - z) / PIGGY_HEIGHT).max(0.0)).with("z", z)
}

fn water_in(state: &SimState, set_id: &str, container: &str) -> Result<(usize, usize, usize), MetricError> {
    let set = particles(state, set_id)?;
    let b = state
        .body(container)
        .ok_or_else(|| MetricError::MissingEntity(container.to_string()))?;
    let inside = set.positions.iter().filter(|p| b.in_cavity_world(p)).count();
    let capacity = b.geom.cavity_capacity(set.spacing);
    Ok((inside, capacity, set.positions.len()))
}

struct Transport;
impl TaskMetric for Transport {
    fn kind(&self) -> TaskKind {
        TaskKind::TransportWater
    }
    fn score(&self, state: &SimState, params: &TaskParams, _: &MetricContext) -> Result<Score, MetricError> {
        let set = params.particles.as_deref().unwrap_or("water");
        let cup = params.container.as_deref().unwrap_or("cup");
        let (inside, capacity, _) = water_in(state, set, cup)?;
        Ok(fraction_score(inside, capacity).with("capacity", capacity as f64))
    }
}

struct Fill;
impl TaskMetric for Fill {
    fn kind(&self) -> TaskKind {
        TaskKind::FillBottle
    }
    fn score(&self, state: &SimState, params: &TaskParams, _: &MetricContext) -> Result<Score, MetricError> {
        let set = params.particles.as_deref().unwrap_or("water");
        let bottle = params.container.as_deref().unwrap_or("bottle");
        let (inside, _, total) = water_in(state, set, bottle)?;
        Ok(fraction_score(inside, total).with("total", total as f64))
    }
}

pub fn fraction_score(count: usize, of: usize) -> Score {
    let p = if of == 0 { 0.0 } else { count as f64 / of as f64 };
    Score::new(p).with("contained", count as f64)
}

struct Calabash;
impl TaskMetric for Calabash {
    fn kind(&self) -> TaskKind {
        TaskKind::DoughCalabash
    }
    fn score(&self, state: &SimState, _: &TaskParams, ctx: &MetricContext) -> Result<Score, MetricError> {
        let scorer = ctx.scorer.as_ref().ok_or(MetricError::ScorerUnavailable)?;
        let views = crate::render::render_state(state, &crate::render::RenderOptions::default());
        let s = scorer.score(&views[0])?;
        Ok(calabash_score(s))
    }
}

pub fn calabash_score(s: f64) -> Score {
    Score::new((2.0 * s).min(1.0)).with("scorer", s)
}

/// One metric per task kind, looked up by kind or name.
pub struct MetricRegistry {
    metrics: BTreeMap<TaskKind, Box<dyn TaskMetric>>,
}

impl MetricRegistry {
    pub fn builtin() -> Self {
        let all: Vec<Box<dyn TaskMetric>> = vec![
            Box::new(Reach),
            Box::new(Flatten),
            Box::new(Cut),
            Box::new(HoldPhone),
            Box::new(LiftBowl),
            Box::new(LiftPiggy),
            Box::new(Transport),
            Box::new(Fill),
            Box::new(Calabash),
        ];
        MetricRegistry {
            metrics: all.into_iter().map(|m| (m.kind(), m)).collect(),
        }
    }

    pub fn register(&mut self, metric: Box<dyn TaskMetric>) {
        self.metrics.insert(metric.kind(), metric);
    }

    pub fn get(&self, kind: TaskKind) -> Option<&dyn TaskMetric> {
        self.metrics.get(&kind).map(|m| m.as_ref())
    }

    pub fn by_name(&self, name: &str) -> Option<&dyn TaskMetric> {
        TaskKind::from_name(name).and_then(|k| self.get(k))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.metrics.keys().map(|k| k.name()).collect()
    }
}

pub fn score(kind: TaskKind, state: &SimState, params: &TaskParams) -> Result<Score, MetricError> {
    score_with(kind, state, params, &MetricContext::default())
}

pub fn score_with(
    kind: TaskKind,
    state: &SimState,
    params: &TaskParams,
    ctx: &MetricContext,
) -> Result<Score, MetricError> {
    let reg = MetricRegistry::builtin();
    let m = reg.get(kind).expect("every kind has a builtin metric");
    m.score(state, params, ctx)
}
