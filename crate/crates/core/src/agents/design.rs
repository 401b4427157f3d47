use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::assembly::{execute_tagged, ExecOptions};
use crate::geometry::TriMesh;
use crate::provider::MeshProvider;
use crate::render::{render_mesh, Image, RenderOptions};
use crate::scene::Trajectory;
use crate::toolspec::{parse_tool_spec, serialize, validate_with, ToolSpec, ValidationOptions};

use super::templates::{render_prompt, TemplateId};
use super::{AgentError, ChatBackend, ChatMessage, ImageAttachment};

pub const DEFAULT_MAX_ITERATIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionStatus {
    Running,
    Done,
    Exhausted,
    Failed,
}

/// Every message exchanged, in order, tagged with the agent it belongs to.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub entries: Vec<(String, ChatMessage)>,
}

impl Transcript {
    pub fn push(&mut self, agent: &str, msg: ChatMessage) {
        self.entries.push((agent.to_string(), msg));
    }

    pub fn agent(&self, agent: &str) -> Vec<&ChatMessage> {
        self.entries.iter().filter(|(a, _)| a == agent).map(|(_, m)| m).collect()
    }

    /// One text file per message (`007_critic_user.txt`) plus its images.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, (agent, m)) in self.entries.iter().enumerate() {
            let stem = format!("{i:03}_{agent}_{}", m.role);
            std::fs::write(dir.join(format!("{stem}.txt")), &m.text)?;
            for img in &m.images {
                std::fs::write(dir.join(format!("{stem}_{}", img.name)), img.data.as_slice())?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DesignSession {
    pub task: String,
    pub scene: String,
    pub transcript: Transcript,
    pub iteration: usize,
    pub max_iterations: usize,
    pub critic_calls: usize,
    pub spec: Option<ToolSpec>,
    pub status: SessionStatus,
}

#[derive(Debug, Clone)]
pub struct DesignOutcome {
    pub spec: ToolSpec,
    pub rationale: String,
    pub session: DesignSession,
}

/// What the loop needs besides the backend.
pub struct DesignContext<'a> {
    pub provider: &'a dyn MeshProvider,
    pub validation: ValidationOptions,
    pub exec: ExecOptions,
    pub render: RenderOptions,
    pub principles: String,
}

/// Case-insensitive whole-word match of `done`.
pub fn contains_done(text: &str) -> bool {
    text.split(|c: char| !c.is_alphanumeric() && c != '_')
        .any(|w| w.eq_ignore_ascii_case("done"))
}

/// First fenced block that looks like a JSON object, with the surrounding
/// prose as the rationale. Unfenced replies that are a bare object also count.
pub fn extract_spec_block(text: &str) -> Option<(String, String)> {
    let mut search = 0;
    while let Some(open) = text[search..].find("```").map(|i| i + search) {
        let body_start = text[open + 3..].find('\n').map(|i| open + 3 + i + 1)?;
        let close = text[body_start..].find("```").map(|i| i + body_start)?;
        let body = &text[body_start..close];
        if body.trim_start().starts_with('{') {
            let rationale = format!("{}{}", &text[..open], &text[close + 3..]);
            return Some((body.trim().to_string(), rationale.trim().to_string()));
        }
        search = close + 3;
    }
    let t = text.trim();
    (t.starts_with('{') && t.ends_with('}')).then(|| (t.to_string(), String::new()))
}

struct Candidate {
    spec: ToolSpec,
    rationale: String,
    mesh: TriMesh,
}

fn check_candidate(text: &str, ctx: &DesignContext) -> Result<Candidate, String> {
    let (doc, rationale) =
        extract_spec_block(text).ok_or_else(|| "No tool spec found. Put the JSON document in a ```json block.".to_string())?;
    let spec = parse_tool_spec(&doc).map_err(|e| format!("The document does not parse: {e}"))?;
    let violations = validate_with(&spec, ctx.validation);
    if !violations.is_empty() {
        let mut msg = String::from("The document has problems:\n");
        for v in &violations {
            msg.push_str(&format!("- {v}\n"));
        }
        return Err(msg);
    }
    let mesh = execute_tagged(&spec.assembly, &spec.parts, ctx.provider, &ctx.exec)
        .map_err(|e| format!("The assembly failed: {e}"))?
        .into_iter()
        .next()
        .map(|a| a.mesh)
        .ok_or_else(|| "The assembly exports nothing.".to_string())?;
    Ok(Candidate { spec, rationale, mesh })
}

pub(crate) fn attachments(images: &[Image]) -> Vec<ImageAttachment> {
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            #[cfg(feature = "png")]
            let (ext, mime, data) = ("png", "image/png", img.to_png());
            #[cfg(not(feature = "png"))]
            let (ext, mime, data) = ("ppm", "image/x-portable-pixmap", img.to_ppm());
            ImageAttachment {
                name: format!("view{i}.{ext}"),
                mime,
                data: Arc::new(data),
            }
        })
        .collect()
}

fn bindings(task: &str, scene: &str, principles: &str) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("TASK_DESCRIPTION".to_string(), task.to_string()),
        ("3D_CONFIGURATION".to_string(), scene.to_string()),
        ("USER_PROVIDED_PRINCIPLES".to_string(), principles.to_string()),
    ])
}

/// Propose, validate, render and critique until the critic approves or the
/// iteration budget runs out. Each iteration allows one repair round for a
/// reply that does not parse, validate or assemble; the critic only sees
/// candidates that pass.
pub fn run_design_loop(
    task: &str,
    scene: &str,
    backend: &dyn ChatBackend,
    ctx: &DesignContext,
    max_iterations: usize,
) -> Result<DesignOutcome, AgentError> {
    let mut session = DesignSession {
        task: task.to_string(),
        scene: scene.to_string(),
        transcript: Transcript::default(),
        iteration: 0,
        max_iterations,
        critic_calls: 0,
        spec: None,
        status: SessionStatus::Running,
    };
    let vars = bindings(task, scene, &ctx.principles);
    let mut proposer = vec![ChatMessage::user(render_prompt(TemplateId::Proposer, &vars)?)];
    session.transcript.push("proposer", proposer[0].clone());
    let mut critic: Vec<ChatMessage> = Vec::new();
    let mut best: Option<(ToolSpec, String)> = None;

    while session.iteration < max_iterations {
        session.iteration += 1;
        let mut candidate = None;
        for attempt in 0..2 {
            let reply = backend.complete(&proposer)?;
            session.transcript.push("proposer", reply.clone());
            let checked = check_candidate(&reply.text, ctx);
            proposer.push(reply);
            match checked {
                Ok(c) => {
                    candidate = Some(c);
                    break;
                }
                Err(problems) => {
                    log::info!("design iteration {} attempt {attempt}: {problems}", session.iteration);
                    let msg = ChatMessage::user(problems);
                    session.transcript.push("proposer", msg.clone());
                    proposer.push(msg);
                }
            }
        }
        let Some(c) = candidate else { continue };
        best = Some((c.spec.clone(), c.rationale.clone()));
        session.spec = Some(c.spec.clone());

        let images = attachments(&render_mesh(&c.mesh, &ctx.render));
        let text = if critic.is_empty() {
            let mut v = vars.clone();
            v.insert("RATIONALE".into(), c.rationale.clone());
            render_prompt(TemplateId::Critic, &v)?
        } else {
            format!("Revised design. The designer's notes:\n{}", c.rationale)
        };
        let msg = ChatMessage::user(text).with_images(images);
        session.transcript.push("critic", msg.clone());
        critic.push(msg);
        let verdict = backend.complete(&critic)?;
        session.critic_calls += 1;
        session.transcript.push("critic", verdict.clone());
        critic.push(verdict.clone());
        if contains_done(&verdict.text) {
            session.status = SessionStatus::Done;
            return Ok(DesignOutcome {
                spec: c.spec,
                rationale: c.rationale,
                session,
            });
        }
        let fb = ChatMessage::user(format!(
            "Reviewer feedback:\n{}\n\nSend the complete revised document.",
            verdict.text
        ));
        session.transcript.push("proposer", fb.clone());
        proposer.push(fb);
    }
    match best {
        Some((spec, rationale)) => {
            session.status = SessionStatus::Exhausted;
            Ok(DesignOutcome {
                spec,
                rationale,
                session,
            })
        }
        None => {
            session.status = SessionStatus::Failed;
            Err(AgentError::NoValidSpec {
                iterations: session.iteration,
            })
        }
    }
}

fn parse_plan(text: &str) -> Result<Trajectory, String> {
    let t = Trajectory::parse(text).map_err(|e| e.to_string())?;
    t.check_sequence().map_err(|e| e.to_string())?;
    Ok(t)
}

/// Ask the tool user for a program; one re-prompt with the parse error.
pub fn plan_tool_use(
    task: &str,
    scene: &str,
    spec: &ToolSpec,
    backend: &dyn ChatBackend,
) -> Result<(Trajectory, Transcript), AgentError> {
    let mut vars = bindings(task, scene, "");
    vars.insert("TOOL_SPEC".into(), serialize(spec).trim_end().to_string());
    let mut msgs = vec![ChatMessage::user(render_prompt(TemplateId::ToolUser, &vars)?)];
    let mut transcript = Transcript::default();
    transcript.push("tool_user", msgs[0].clone());
    let mut last_err = String::new();
    for _ in 0..2 {
        let reply = backend.complete(&msgs)?;
        transcript.push("tool_user", reply.clone());
        match parse_plan(&reply.text) {
            Ok(t) => return Ok((t, transcript)),
            Err(e) => {
                msgs.push(reply);
                let fix = ChatMessage::user(format!("That program is invalid: {e}\nSend the corrected program."));
                transcript.push("tool_user", fix.clone());
                msgs.push(fix);
                last_err = e;
            }
        }
    }
    Err(AgentError::PlanParseError(last_err))
}
