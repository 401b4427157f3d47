//! `toolforge` command line.
//!
//! Exit codes: 0 success, 1 spec violations, 2 input file missing, 3 parse
//! error, 4 assembly failed, 5 scene or simulation failed, 6 agent backend
//! failed, 7 scoring failed, 8 pipeline finished with errors, 9 bad usage,
//! 10 could not write output.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use toolforge::agents::{build_backend, plan_tool_use, AgentError, BackendConfig};
use toolforge::assembly::ExecOptions;
use toolforge::geometry::{load_obj, write_obj, TriMesh};
use toolforge::metrics::{MetricContext, TaskParams};
use toolforge::pipeline::{assemble_tool, load_task, run_pipeline, Evaluator, PipelineError, RunConfig};
use toolforge::provider::{build_provider, MeshProvider, ProviderConfig};
use toolforge::render::render_views;
use toolforge::scene::{load_scene, Trajectory};
use toolforge::toolspec::{parse_tool_spec, validate_with, ToolSpec, ValidationOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    Violations = 1,
    Missing = 2,
    Parse = 3,
    Assembly = 4,
    Scene = 5,
    Agent = 6,
    Metric = 7,
    PipelineErrors = 8,
    Usage = 9,
    Output = 10,
}

struct Failure {
    code: Exit,
    msg: String,
}

impl Failure {
    fn new(code: Exit, msg: impl ToString) -> Self {
        Failure {
            code,
            msg: msg.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::Config(_) => Exit::Parse,
            PipelineError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => Exit::Missing,
            PipelineError::Io { .. } => Exit::Output,
            PipelineError::Agent(_) => Exit::Agent,
            PipelineError::Scene(_) => Exit::Scene,
            PipelineError::Assembly(_) | PipelineError::Provider(_) => Exit::Assembly,
            PipelineError::Metric(_) => Exit::Metric,
            PipelineError::Optimizer(_) => Exit::Usage,
        };
        Failure::new(code, e)
    }
}

impl From<AgentError> for Failure {
    fn from(e: AgentError) -> Self {
        Failure::new(Exit::Agent, e)
    }
}

#[derive(Parser)]
#[command(name = "toolforge", version, about = "Design, plan and optimize manipulation tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a tool spec; prints one violation per line.
    Validate {
        spec: PathBuf,
        /// Reject mesh parts as the primitives-only ablation does.
        #[arg(long)]
        no_text_to_3d: bool,
    },
    /// Assemble a tool spec into an OBJ.
    Assemble {
        spec: PathBuf,
        #[command(flatten)]
        provider: ProviderArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Render an OBJ or tool spec from four sides as PPM files.
    Render {
        input: PathBuf,
        #[command(flatten)]
        provider: ProviderArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = toolforge::render::DEFAULT_RESOLUTION)]
        resolution: usize,
    },
    /// Ask the tool-user agent for a trajectory.
    Plan {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        tool: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Score a scene, optionally after running a tool and trajectory in it.
    Evaluate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        task: Option<String>,
        #[arg(long, requires = "trajectory")]
        tool: Option<PathBuf>,
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Design, plan, optimize and score over seeds.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct ProviderArgs {
    /// Asset library directory for mesh parts.
    #[arg(long)]
    assets: Option<PathBuf>,
}

impl ProviderArgs {
    fn build(&self) -> Result<Arc<dyn MeshProvider>, Failure> {
        let cfg = match &self.assets {
            Some(root) => ProviderConfig {
                kind: "library".into(),
                root: Some(root.clone()),
                ..Default::default()
            },
            None => ProviderConfig {
                kind: "none".into(),
                ..Default::default()
            },
        };
        build_provider(&cfg, Path::new(".")).map_err(|e| Failure::new(Exit::Assembly, e))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Scripted,
    Remote,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Reply list for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
}

impl BackendArgs {
    fn apply(&self, cfg: &mut BackendConfig) {
        if let Some(k) = self.backend {
            cfg.kind = match k {
                BackendKind::Scripted => "scripted",
                BackendKind::Remote => "remote",
            }
            .into();
        }
        if let Some(s) = &self.script {
            cfg.script = Some(s.clone());
        }
        if let Some(u) = &self.base_url {
            cfg.base_url = Some(u.clone());
        }
        if let Some(m) = &self.model {
            cfg.model = Some(m.clone());
        }
    }
}

#[derive(Args)]
struct PipelineArgs {
    /// Run config (`run/1`); flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_text_to_3d: bool,
    #[arg(long)]
    no_trajectory_opt: bool,
    #[arg(long)]
    no_tool_opt: bool,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    provider: ProviderArgs,
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| {
        let code = if e.kind() == std::io::ErrorKind::NotFound {
            Exit::Missing
        } else {
            Exit::Parse
        };
        Failure::new(code, format!("{}: {e}", path.display()))
    })
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> CmdResult {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Failure::new(Exit::Output, format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, data).map_err(|e| Failure::new(Exit::Output, format!("{}: {e}", path.display())))
}

fn load_spec(path: &Path) -> Result<ToolSpec, Failure> {
    parse_tool_spec(&read(path)?).map_err(|e| Failure::new(Exit::Parse, format!("{}: {e}", path.display())))
}

fn assemble(spec: &ToolSpec, provider: &ProviderArgs) -> Result<TriMesh, Failure> {
    let p = provider.build()?;
    Ok(assemble_tool(spec, p.as_ref(), &ExecOptions::default())?.mesh)
}

fn cmd_validate(spec: &Path, no_text_to_3d: bool) -> CmdResult {
    let spec = load_spec(spec)?;
    let violations = validate_with(
        &spec,
        ValidationOptions {
            allow_mesh_parts: !no_text_to_3d,
        },
    );
    for v in &violations {
        println!("{v}");
    }
    if violations.is_empty() {
        println!("ok");
        Ok(())
    } else {
        Err(Failure::new(Exit::Violations, format!("{} violation(s)", violations.len())))
    }
}

fn cmd_assemble(spec: &Path, provider: &ProviderArgs, out: &Path) -> CmdResult {
    let mesh = assemble(&load_spec(spec)?, provider)?;
    let path = out.join("tool.obj");
    write(&path, write_obj(&mesh))?;
    let bb = mesh.aabb().map_err(|e| Failure::new(Exit::Assembly, e))?;
    let e = bb.extents();
    println!("{} ({} faces, extents {:.4} x {:.4} x {:.4})", path.display(), mesh.faces.len(), e.x, e.y, e.z);
    Ok(())
}

fn cmd_render(input: &Path, provider: &ProviderArgs, out: &Path, resolution: usize) -> CmdResult {
    let mesh = if input.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj")) {
        if !input.exists() {
            return Err(Failure::new(Exit::Missing, format!("{}: not found", input.display())));
        }
        load_obj(input).map_err(|e| Failure::new(Exit::Parse, e))?
    } else {
        assemble(&load_spec(input)?, provider)?
    };
    let views = render_views(&mesh, 4, resolution).map_err(|e| Failure::new(Exit::Assembly, e))?;
    for (i, img) in views.iter().enumerate() {
        let path = out.join(format!("view{i}.ppm"));
        write(&path, img.to_ppm())?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_plan(scene: &Path, tool: &Path, backend: &BackendArgs, out: &Path) -> CmdResult {
    let spec = load_spec(tool)?;
    let (text, _, _, _, description) = load_task(scene, None)?;
    let mut cfg = BackendConfig::default();
    backend.apply(&mut cfg);
    let chat = build_backend(&cfg, Path::new("."))?;
    let (traj, transcript) = plan_tool_use(&description, text.trim(), &spec, chat.as_ref())?;
    transcript
        .write_dir(&out.join("plan"))
        .map_err(|e| Failure::new(Exit::Output, e))?;
    let path = out.join("trajectory.txt");
    write(&path, traj.to_string())?;
    print!("{traj}");
    Ok(())
}

fn cmd_evaluate(
    scene: &Path,
    task: Option<&str>,
    tool: Option<&Path>,
    trajectory: Option<&Path>,
    seeds: &[u64],
    provider: &ProviderArgs,
) -> CmdResult {
    let (_, cfg, kind, params, _) = load_task(scene, task)?;
    let base = load_scene(&cfg).map_err(|e| Failure::new(Exit::Scene, e))?;
    let traj = match trajectory {
        Some(p) => Some(Trajectory::parse(&read(p)?).map_err(|e| Failure::new(Exit::Parse, e))?),
        None => None,
    };
    let eval = Evaluator {
        base,
        kind,
        params: params.clone(),
        provider: provider.build()?,
        exec: ExecOptions::default(),
        metric: MetricContext::default(),
    };
    for &seed in seeds {
        let score = match (tool, &traj) {
            (Some(t), Some(traj)) => eval.run(&load_spec(t)?, traj, seed)?.0,
            (None, Some(traj)) => {
                let end = toolforge::scene::execute(&eval.base.clone().with_seed(seed), traj)
                    .map_err(|e| Failure::new(Exit::Scene, e))?;
                score_state(&eval, &end, &params, seed)?
            }
            _ => score_state(&eval, &eval.base, &params, seed)?,
        };
        println!("seed {seed}: P = {}", score.p);
    }
    Ok(())
}

fn score_state(
    eval: &Evaluator,
    state: &toolforge::scene::SimState,
    params: &TaskParams,
    seed: u64,
) -> Result<toolforge::metrics::Score, Failure> {
    let ctx = MetricContext {
        scorer: None,
        seed: toolforge::seed::derive_seed(seed, "metric"),
    };
    toolforge::metrics::score_with(eval.kind, state, params, &ctx).map_err(|e| Failure::new(Exit::Metric, e))
}

fn cmd_pipeline(a: &PipelineArgs) -> CmdResult {
    let mut cfg = match &a.config {
        Some(p) => {
            if !p.exists() {
                return Err(Failure::new(Exit::Missing, format!("{}: not found", p.display())));
            }
            RunConfig::load(p)?
        }
        None => {
            let scene = a
                .scene
                .clone()
                .ok_or_else(|| Failure::new(Exit::Usage, "either --config or --scene is required"))?;
            RunConfig {
                format: toolforge::pipeline::RUN_FORMAT.into(),
                task: None,
                scene,
                backend: BackendConfig::default(),
                provider: ProviderConfig::default(),
                optimizer: Default::default(),
                ablations: Default::default(),
                seeds: vec![0],
                out: PathBuf::from("out"),
                resolution: toolforge::render::DEFAULT_RESOLUTION,
                max_iterations: toolforge::agents::DEFAULT_MAX_ITERATIONS,
                principles: None,
                workers: 0,
            }
        }
    };
    if let Some(t) = &a.task {
        cfg.task = Some(t.clone());
    }
    if let Some(s) = &a.scene {
        cfg.scene = s.clone();
    }
    if let Some(s) = &a.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(o) = &a.out {
        cfg.out = o.clone();
    }
    if let Some(r) = a.resolution {
        cfg.resolution = r;
    }
    if let Some(i) = a.iterations {
        cfg.optimizer.iterations = i;
    }
    if let Some(root) = &a.provider.assets {
        cfg.provider = ProviderConfig {
            kind: "library".into(),
            root: Some(root.clone()),
            ..Default::default()
        };
    }
    cfg.ablations.no_text_to_3d |= a.no_text_to_3d;
    cfg.ablations.no_trajectory_opt |= a.no_trajectory_opt;
    cfg.ablations.no_tool_opt |= a.no_tool_opt;
    a.backend.apply(&mut cfg.backend);
    if !cfg.scene.exists() {
        return Err(Failure::new(Exit::Missing, format!("{}: not found", cfg.scene.display())));
    }
    let report = run_pipeline(&cfg)?;
    print!("{}", report.to_text());
    println!("report: {}", cfg.out.join("report.json").display());
    let failed = report.error.is_some() || report.seeds.iter().any(|s| s.error.is_some());
    if failed {
        Err(Failure::new(Exit::PipelineErrors, "pipeline finished with errors"))
    } else {
        Ok(())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { Exit::Usage as u8 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Validate { spec, no_text_to_3d } => cmd_validate(spec, *no_text_to_3d),
        Command::Assemble { spec, provider, out } => cmd_assemble(spec, provider, out),
        Command::Render {
            input,
            provider,
            out,
            resolution,
        } => cmd_render(input, provider, out, *resolution),
        Command::Plan {
            scene,
            tool,
            backend,
            out,
        } => cmd_plan(scene, tool, backend, out),
        Command::Evaluate {
            scene,
            task,
            tool,
            trajectory,
            seeds,
            provider,
        } => cmd_evaluate(scene, task.as_deref(), tool.as_deref(), trajectory.as_deref(), seeds, provider),
        Command::Pipeline(a) => cmd_pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code as u8)
        }
    }
}
