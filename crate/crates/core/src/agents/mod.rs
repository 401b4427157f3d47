//! Proposer, critic and tool-user agents driven through a pluggable chat
//! backend.

mod backend;
mod design;
mod templates;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use backend::{
    backend_registry, build_backend, BackendConfig, ChatBackend, RemoteBackend, ScriptedBackend, CHAT_API_KEY_ENV,
    SCRIPT_FORMAT,
};
pub use design::{
    contains_done, extract_spec_block, plan_tool_use, run_design_loop, DesignContext, DesignOutcome, DesignSession,
    SessionStatus, Transcript, DEFAULT_MAX_ITERATIONS,
};
pub use templates::{render_prompt, render_text, TemplateId, DEFAULT_PRINCIPLES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("template placeholder ${0}$ has no binding")]
    UnboundPlaceholder(String),
    #[error("chat backend: {0}")]
    BackendError(String),
    #[error("unknown chat backend {0:?}")]
    UnknownBackend(String),
    #[error("no valid tool spec after {iterations} iterations")]
    NoValidSpec { iterations: usize },
    #[error("could not parse the plan: {0}")]
    PlanParseError(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Encoded image attached to a message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageAttachment {
    pub name: String,
    pub mime: &'static str,
    pub data: Arc<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    pub images: Vec<ImageAttachment>,
}

impl ChatMessage {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        ChatMessage {
            role,
            text: text.into(),
            images: Vec::new(),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::new(Role::User, text)
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self::new(Role::Assistant, text)
    }

    pub fn with_images(mut self, images: Vec<ImageAttachment>) -> Self {
        self.images = images;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty() && self.images.is_empty()
    }
}
