//! End-to-end runs: design, plan, joint optimization and scoring over seeds,
//! with artifacts and a machine-readable report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    build_backend, plan_tool_use, run_design_loop, AgentError, BackendConfig, DesignContext, SessionStatus,
    DEFAULT_MAX_ITERATIONS, DEFAULT_PRINCIPLES,
};
use crate::assembly::{execute_tagged, AssemblyError, ExecOptions};
use crate::geometry::{write_obj, TriMesh, Vec3};
use crate::metrics::{aggregate, score_with, MetricContext, MetricError, Score, TaskKind, TaskParams};
use crate::optimizer::{history_csv, optimize, CmaesConfig, OptimizerError, ParamSelection};
use crate::provider::{build_provider, MeshProvider, ProviderConfig, ProviderError};
use crate::render::{render_state, RenderOptions, DEFAULT_RESOLUTION};
use crate::scene::{execute, load_scene, BodySpec, SceneConfig, SceneError, SimState, Trajectory};
use crate::seed::derive_seed;
use crate::toolspec::{serialize, ToolSpec, ValidationOptions};

pub const RUN_FORMAT: &str = "run/1";
pub const REPORT_FORMAT: &str = "report/1";
pub const TOOL_ID: &str = "tool";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    /// Primitive parts only; mesh parts fail validation.
    pub no_text_to_3d: bool,
    /// Evaluate the planned trajectory as is.
    pub no_trajectory_opt: bool,
    /// Keep the designed geometry; only Move parameters are searched.
    pub no_tool_opt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    pub lambda: usize,
    pub iterations: usize,
    pub sigma0: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        let c = CmaesConfig::default();
        OptimizerSettings {
            lambda: c.lambda,
            iterations: c.iterations,
            sigma0: c.sigma0,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

fn default_max_iterations() -> usize {
    DEFAULT_MAX_ITERATIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format: String,
    /// Overrides the scene's task kind.
    #[serde(default)]
    pub task: Option<String>,
    pub scene: PathBuf,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    #[serde(default)]
    pub ablations: Ablations,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub principles: Option<String>,
    /// Seeds evaluated concurrently; 0 uses the default pool.
    #[serde(default)]
    pub workers: usize,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, PipelineError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        if cfg.format != RUN_FORMAT {
            return Err(PipelineError::Config(format!(
                "format must be {RUN_FORMAT:?}, got {:?}",
                cfg.format
            )));
        }
        Ok(cfg)
    }

    /// Load a config and make its relative paths absolute against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<RunConfig, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.scene);
        fix(&mut self.out);
        if let Some(s) = self.backend.script.as_mut() {
            fix(s);
        }
        if let Some(r) = self.provider.root.as_mut() {
            fix(r);
        }
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        if self.seeds.is_empty() {
            return Err(PipelineError::Config("seeds must not be empty".into()));
        }
        self.cmaes(0).check()?;
        Ok(())
    }

    pub fn cmaes(&self, seed: u64) -> CmaesConfig {
        CmaesConfig {
            lambda: self.optimizer.lambda,
            iterations: self.optimizer.iterations,
            sigma0: self.optimizer.sigma0,
            seed: derive_seed(seed, "optimizer"),
        }
    }
}

/// A tool mesh in its own frame, with the faces the gripper may hold.
#[derive(Debug, Clone)]
pub struct AssembledTool {
    pub mesh: TriMesh,
    pub grasp_faces: Option<Vec<u32>>,
}

/// Run the assembly program and apply the placement scale.
pub fn assemble_tool(
    spec: &ToolSpec,
    provider: &dyn MeshProvider,
    opts: &ExecOptions,
) -> Result<AssembledTool, PipelineError> {
    let out = execute_tagged(&spec.assembly, &spec.parts, provider, opts)?
        .into_iter()
        .next()
        .ok_or_else(|| PipelineError::Config("assembly exports nothing".into()))?;
    let s = spec.placement.scale;
    let mesh = TriMesh::new(
        out.mesh.vertices.iter().map(|v| v.component_mul(&s)).collect(),
        out.mesh.faces.clone(),
    );
    let grasp_faces = spec.graspable_part().map(|p| out.faces_of_part(p));
    Ok(AssembledTool { mesh, grasp_faces })
}

/// Builds scene copies with a tool added and scores trajectories in them.
pub struct Evaluator {
    pub base: SimState,
    pub kind: TaskKind,
    pub params: TaskParams,
    pub provider: Arc<dyn MeshProvider>,
    pub exec: ExecOptions,
    pub metric: MetricContext,
}

impl Evaluator {
    pub fn with_tool(&self, spec: &ToolSpec, seed: u64) -> Result<SimState, PipelineError> {
        let tool = assemble_tool(spec, self.provider.as_ref(), &self.exec)?;
        let mut state = self.base.clone().with_seed(seed);
        state.add_body(BodySpec {
            id: TOOL_ID.into(),
            mesh: tool.mesh,
            pose: spec.placement.transform(),
            movable: true,
            grasp_faces: tool.grasp_faces,
        })?;
        Ok(state)
    }

    pub fn run(&self, spec: &ToolSpec, traj: &Trajectory, seed: u64) -> Result<(Score, SimState), PipelineError> {
        let state = self.with_tool(spec, seed)?;
        let end = execute(&state, traj)?;
        let ctx = MetricContext {
            scorer: self.metric.scorer.clone(),
            seed: derive_seed(seed, "metric"),
        };
        let score = score_with(self.kind, &end, &self.params, &ctx)?;
        Ok((score, end))
    }

    /// Score in [0, 1]; any failure scores 0.
    pub fn score_or_zero(&self, spec: &ToolSpec, traj: &Trajectory, seed: u64) -> f64 {
        match self.run(spec, traj, seed) {
            Ok((s, _)) => s.p,
            Err(e) => {
                log::debug!("candidate failed: {e}");
                0.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedArtifacts {
    pub tool_obj: String,
    pub trajectory: String,
    pub history_csv: String,
    pub renders: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedReport {
    pub seed: u64,
    pub p: f64,
    pub initial_p: f64,
    pub evaluations: usize,
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub artifacts: Option<SeedArtifacts>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateReport {
    pub p_best: f64,
    pub p_mean: f64,
    pub success_rate: f64,
    pub initial_p_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignReport {
    pub status: String,
    pub iterations: usize,
    pub critic_calls: usize,
    pub tool_spec: String,
    pub initial_plan: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub format: String,
    pub task: String,
    pub ablations: Ablations,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignReport>,
    pub seeds: Vec<SeedReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<AggregateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("task: {}\n", self.task);
        if let Some(d) = &self.design {
            let _ = writeln!(s, "design: {} after {} iteration(s)", d.status, d.iterations);
        }
        for r in &self.seeds {
            let _ = write!(s, "seed {}: P = {:.4} (initial {:.4}, {} evaluations)", r.seed, r.p, r.initial_p, r.evaluations);
            if let Some(e) = &r.error {
                let _ = write!(s, " error: {e}");
            }
            s.push('\n');
        }
        if let Some(a) = &self.aggregate {
            let _ = writeln!(
                s,
                "P_best = {:.4}, mean P = {:.4}, SR = {:.1}%",
                a.p_best,
                a.p_mean,
                100.0 * a.success_rate
            );
        }
        if let Some(e) = &self.error {
            let _ = writeln!(s, "error: {e}");
        }
        s
    }
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, data).map_err(io_err(path))
}

/// Scene text, parsed config, task kind and parameters.
pub fn load_task(scene: &Path, task: Option<&str>) -> Result<(String, SceneConfig, TaskKind, TaskParams, String), PipelineError> {
    let text = std::fs::read_to_string(scene).map_err(io_err(scene))?;
    let config = SceneConfig::from_json(&text, scene.parent().unwrap_or(Path::new(".")))?;
    let section = config.task.clone();
    let kind = match (task, &section) {
        (Some(name), _) => TaskKind::from_name(name).ok_or_else(|| PipelineError::Config(format!("unknown task {name:?}")))?,
        (None, Some(t)) => t.kind,
        (None, None) => return Err(PipelineError::Config("no task given and the scene has none".into())),
    };
    let params = section.as_ref().map(|t| t.params.clone()).unwrap_or_default();
    let description = section
        .map(|t| t.description)
        .filter(|d| !d.trim().is_empty())
        .unwrap_or_else(|| kind.name().replace('_', " "));
    Ok((text, config, kind, params, description))
}

struct Shared<'a> {
    cfg: &'a RunConfig,
    eval: Evaluator,
    spec: ToolSpec,
    plan: Trajectory,
}

fn run_seed(sh: &Shared, seed: u64) -> SeedReport {
    let mut report = SeedReport {
        seed,
        p: 0.0,
        initial_p: 0.0,
        evaluations: 0,
        diagnostics: BTreeMap::new(),
        error: None,
        artifacts: None,
    };
    if let Err(e) = seed_body(sh, seed, &mut report) {
        report.error = Some(e.to_string());
    }
    report
}

fn seed_body(sh: &Shared, seed: u64, report: &mut SeedReport) -> Result<(), PipelineError> {
    let cfg = sh.cfg;
    let initial = sh.eval.score_or_zero(&sh.spec, &sh.plan, seed);
    report.initial_p = initial;
    let (spec, traj, history) = if cfg.ablations.no_trajectory_opt {
        (sh.spec.clone(), sh.plan.clone(), Vec::new())
    } else {
        let selection = ParamSelection {
            shape: !cfg.ablations.no_tool_opt,
            trajectory: true,
        };
        let res = optimize(
            &sh.spec,
            &sh.plan,
            |s, t| sh.eval.score_or_zero(s, t, seed),
            &cfg.cmaes(seed),
            selection,
        )?;
        report.evaluations = res.evaluations;
        if res.best_score > initial {
            (res.spec, res.trajectory, res.history)
        } else {
            (sh.spec.clone(), sh.plan.clone(), res.history)
        }
    };

    let dir_name = format!("seed_{seed}");
    let dir = cfg.out.join(&dir_name);
    let tool = assemble_tool(&spec, sh.eval.provider.as_ref(), &sh.eval.exec)?;
    write(&dir.join("tool.obj"), write_obj(&tool.mesh))?;
    write(&dir.join("tool.json"), serialize(&spec))?;
    write(&dir.join("trajectory.txt"), traj.to_string())?;
    write(&dir.join("history.csv"), history_csv(&history))?;
    let mut artifacts = SeedArtifacts {
        tool_obj: format!("{dir_name}/tool.obj"),
        trajectory: format!("{dir_name}/trajectory.txt"),
        history_csv: format!("{dir_name}/history.csv"),
        renders: Vec::new(),
    };

    let (score, end) = sh.eval.run(&spec, &traj, seed)?;
    report.p = score.p;
    report.diagnostics = score.diagnostics;
    let opts = RenderOptions {
        resolution: cfg.resolution,
        ..Default::default()
    };
    for (i, img) in render_state(&end, &opts).iter().enumerate() {
        let name = format!("{dir_name}/final_view{i}.ppm");
        write(&cfg.out.join(&name), img.to_ppm())?;
        artifacts.renders.push(name);
    }
    report.artifacts = Some(artifacts);
    Ok(())
}

/// Design a tool, plan its use, then optimize and score once per seed. Stage
/// failures are recorded in the report rather than returned; only an
/// unusable config is an `Err`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport, PipelineError> {
    cfg.check()?;
    std::fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let mut report = RunReport {
        format: REPORT_FORMAT.into(),
        task: cfg.task.clone().unwrap_or_default(),
        ablations: cfg.ablations,
        design: None,
        seeds: Vec::new(),
        aggregate: None,
        error: None,
    };
    if let Err(e) = run_stages(cfg, &mut report) {
        report.error = Some(e.to_string());
    }
    write(&cfg.out.join("report.json"), report.to_json())?;
    write(&cfg.out.join("report.txt"), report.to_text())?;
    Ok(report)
}

fn run_stages(cfg: &RunConfig, report: &mut RunReport) -> Result<(), PipelineError> {
    let (scene_text, scene_cfg, kind, params, description) = load_task(&cfg.scene, cfg.task.as_deref())?;
    report.task = kind.name().into();
    let base = load_scene(&scene_cfg)?;
    let provider = build_provider(&cfg.provider, Path::new("."))?;
    let backend = build_backend(&cfg.backend, Path::new("."))?;
    let exec = ExecOptions {
        allow_generate: !cfg.ablations.no_text_to_3d,
        ..Default::default()
    };
    let ctx = DesignContext {
        provider: provider.as_ref(),
        validation: ValidationOptions {
            allow_mesh_parts: !cfg.ablations.no_text_to_3d,
        },
        exec: exec.clone(),
        render: RenderOptions {
            resolution: cfg.resolution,
            ..Default::default()
        },
        principles: cfg.principles.clone().unwrap_or_else(|| DEFAULT_PRINCIPLES.to_string()),
    };
    let design = run_design_loop(&description, scene_text.trim(), backend.as_ref(), &ctx, cfg.max_iterations)?;
    design
        .session
        .transcript
        .write_dir(&cfg.out.join("design"))
        .map_err(io_err(&cfg.out.join("design")))?;
    let (plan, plan_transcript) = plan_tool_use(&description, scene_text.trim(), &design.spec, backend.as_ref())?;
    plan_transcript
        .write_dir(&cfg.out.join("plan"))
        .map_err(io_err(&cfg.out.join("plan")))?;
    write(&cfg.out.join("tool.json"), serialize(&design.spec))?;
    write(&cfg.out.join("initial_plan.txt"), plan.to_string())?;
    report.design = Some(DesignReport {
        status: match design.session.status {
            SessionStatus::Done => "done",
            SessionStatus::Exhausted => "exhausted",
            SessionStatus::Failed => "failed",
            SessionStatus::Running => "running",
        }
        .into(),
        iterations: design.session.iteration,
        critic_calls: design.session.critic_calls,
        tool_spec: "tool.json".into(),
        initial_plan: "initial_plan.txt".into(),
    });

    let shared = Shared {
        cfg,
        eval: Evaluator {
            base,
            kind,
            params,
            provider,
            exec,
            metric: MetricContext::default(),
        },
        spec: design.spec,
        plan,
    };
    let run_all = || cfg.seeds.par_iter().map(|&s| run_seed(&shared, s)).collect::<Vec<_>>();
    report.seeds = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?
            .install(run_all)
    } else {
        run_all()
    };
    let scores: Vec<Score> = report.seeds.iter().map(|r| Score::new(r.p)).collect();
    let agg = aggregate(&scores)?;
    let n = report.seeds.len() as f64;
    report.aggregate = Some(AggregateReport {
        p_best: agg.p_best,
        p_mean: report.seeds.iter().map(|r| r.p).sum::<f64>() / n,
        success_rate: agg.success_rate,
        initial_p_mean: report.seeds.iter().map(|r| r.initial_p).sum::<f64>() / n,
    });
    Ok(())
}

/// World-frame position helper for reports and tests.
pub fn body_position(state: &SimState, id: &str) -> Option<Vec3> {
    state.body(id).map(|b| b.position())
}
