use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AgentError, ChatMessage, Role};

pub const SCRIPT_FORMAT: &str = "script/1";
pub const CHAT_API_KEY_ENV: &str = "TOOLFORGE_CHAT_API_KEY";

pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<ChatMessage, AgentError>;
}

/// Replays a fixed list of replies in order, whatever the prompt.
#[derive(Debug)]
pub struct ScriptedBackend {
    responses: Vec<String>,
    cursor: Mutex<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    format: String,
    responses: Vec<String>,
}

impl ScriptedBackend {
    pub fn new(responses: Vec<String>) -> Self {
        ScriptedBackend {
            responses,
            cursor: Mutex::new(0),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        let f: ScriptFile =
            serde_json::from_str(text).map_err(|e| AgentError::BackendError(format!("bad script: {e}")))?;
        if f.format != SCRIPT_FORMAT {
            return Err(AgentError::BackendError(format!(
                "script format {:?}, expected {SCRIPT_FORMAT:?}",
                f.format
            )));
        }
        Ok(Self::new(f.responses))
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AgentError::BackendError(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn consumed(&self) -> usize {
        *self.cursor.lock().unwrap()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, _messages: &[ChatMessage]) -> Result<ChatMessage, AgentError> {
        let mut i = self.cursor.lock().unwrap();
        let reply = self
            .responses
            .get(*i)
            .ok_or_else(|| AgentError::BackendError(format!("script exhausted after {} replies", self.responses.len())))?;
        *i += 1;
        Ok(ChatMessage::assistant(reply.clone()))
    }
}

/// Chat-completions client. Images go inline as base64 data URLs.
#[derive(Debug)]
pub struct RemoteBackend {
    pub base_url: String,
    pub model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>) -> Self {
        RemoteBackend {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(300))
                .build()
                .expect("http client"),
        }
    }

    pub fn request_body(&self, messages: &[ChatMessage]) -> Value {
        let msgs: Vec<Value> = messages
            .iter()
            .map(|m| {
                if m.images.is_empty() {
                    return json!({ "role": m.role.name(), "content": m.text });
                }
                let mut content = vec![json!({ "type": "text", "text": m.text })];
                for img in &m.images {
                    let b64 = base64::engine::general_purpose::STANDARD.encode(img.data.as_slice());
                    content.push(json!({
                        "type": "image_url",
                        "image_url": { "url": format!("data:{};base64,{b64}", img.mime) }
                    }));
                }
                json!({ "role": m.role.name(), "content": content })
            })
            .collect();
        json!({ "model": self.model, "messages": msgs })
    }
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<ChatMessage, AgentError> {
        let err = |e: String| AgentError::BackendError(e);
        let mut req = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .header("content-type", "application/json")
            .body(self.request_body(messages).to_string());
        if let Some(k) = &self.api_key {
            req = req.bearer_auth(k);
        }
        let resp = req.send().map_err(|e| err(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| err(e.to_string()))?;
        if !status.is_success() {
            return Err(err(format!("HTTP {status}: {body}")));
        }
        let v: Value = serde_json::from_str(&body).map_err(|e| err(format!("bad JSON: {e}")))?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| err("response has no choices[0].message.content".into()))?;
        Ok(ChatMessage::new(Role::Assistant, text))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: String,
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: "scripted".into(),
            script: None,
            base_url: None,
            model: None,
            api_key_env: None,
        }
    }
}

type BackendFactory = fn(&BackendConfig, &Path) -> Result<Arc<dyn ChatBackend>, AgentError>;

/// Named backend constructors; `base` resolves relative paths.
pub fn backend_registry() -> Vec<(&'static str, BackendFactory)> {
    vec![
        ("scripted", |cfg, base| {
            let path = cfg
                .script
                .as_ref()
                .ok_or_else(|| AgentError::BackendError("backend.script is not set".into()))?;
            Ok(Arc::new(ScriptedBackend::load(&base.join(path))?))
        }),
        ("remote", |cfg, _| {
            let url = cfg
                .base_url
                .as_deref()
                .ok_or_else(|| AgentError::BackendError("backend.base_url is not set".into()))?;
            let key_var = cfg.api_key_env.as_deref().unwrap_or(CHAT_API_KEY_ENV);
            Ok(Arc::new(RemoteBackend::new(
                url,
                cfg.model.as_deref().unwrap_or("default"),
                std::env::var(key_var).ok(),
            )))
        }),
    ]
}

pub fn build_backend(cfg: &BackendConfig, base: &Path) -> Result<Arc<dyn ChatBackend>, AgentError> {
    let (_, make) = backend_registry()
        .into_iter()
        .find(|(name, _)| *name == cfg.kind)
        .ok_or_else(|| AgentError::UnknownBackend(cfg.kind.clone()))?;
    make(cfg, base)
}
