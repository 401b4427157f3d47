//! Mesh sources for `GENERATE3D` parts.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::geometry::{load_obj, read_obj, TriMesh};

pub const WELD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("no asset matches prompt {0:?}")]
    ProviderMiss(String),
    #[error("remote provider: {0}")]
    RemoteError(String),
    #[error("mesh could not be repaired: {0}")]
    RepairFailed(String),
    #[error("asset manifest {path}, line {line}: {msg}")]
    Manifest {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("unknown provider kind {0:?}")]
    UnknownKind(String),
}

pub trait MeshProvider: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<TriMesh, ProviderError>;
}

/// Always misses; for programs without mesh parts.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoProvider;

impl MeshProvider for NoProvider {
    fn generate(&self, prompt: &str) -> Result<TriMesh, ProviderError> {
        if prompt.trim().is_empty() {
            return Err(ProviderError::EmptyPrompt);
        }
        Err(ProviderError::ProviderMiss(prompt.to_string()))
    }
}

/// Weld near-duplicate vertices, prune unreferenced ones and require a closed result.
pub fn repair(mesh: &TriMesh) -> Result<TriMesh, ProviderError> {
    let fixed = mesh.repaired(WELD_TOLERANCE);
    if fixed.is_empty() {
        return Err(ProviderError::RepairFailed("mesh has no faces".into()));
    }
    let open = fixed.open_edge_count();
    if open > 0 {
        return Err(ProviderError::RepairFailed(format!(
            "{open} boundary or non-manifold edges remain"
        )));
    }
    Ok(fixed)
}

pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone)]
pub struct AssetEntry {
    pub key: String,
    pub path: PathBuf,
    pub keywords: BTreeSet<String>,
    mesh: TriMesh,
}

/// Keyword-matched local assets.
///
/// Manifest lines are `key relative/path.obj keyword keyword ...`; the key
/// itself counts as a keyword and `#` starts a comment.
#[derive(Debug, Clone)]
pub struct AssetLibrary {
    pub root: PathBuf,
    entries: Vec<AssetEntry>,
}

impl AssetLibrary {
    pub const MANIFEST: &'static str = "manifest.txt";

    pub fn load(root: &Path) -> Result<Self, ProviderError> {
        let manifest = root.join(Self::MANIFEST);
        let text = std::fs::read_to_string(&manifest).map_err(|e| ProviderError::Manifest {
            path: manifest.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        let mut entries: Vec<AssetEntry> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let err = |msg: String| ProviderError::Manifest {
                path: manifest.display().to_string(),
                line: n + 1,
                msg,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tok = line.split_whitespace();
            let key = tok.next().unwrap().to_string();
            let rel = tok.next().ok_or_else(|| err("missing asset path".into()))?;
            if entries.iter().any(|e| e.key == key) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            let mut keywords = tokenize(&key);
            for t in tok {
                keywords.extend(tokenize(t));
            }
            let path = root.join(rel);
            let mesh = load_obj(&path).map_err(|e| err(e.to_string()))?;
            let mesh = repair(&mesh).map_err(|e| err(e.to_string()))?;
            entries.push(AssetEntry {
                key,
                path,
                keywords,
                mesh,
            });
        }
        entries.sort_by(|a, b| a.key.cmp(&b.key));
        Ok(AssetLibrary {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn entries(&self) -> &[AssetEntry] {
        &self.entries
    }

    /// Entry with the largest keyword overlap; ties go to the smallest key.
    pub fn select(&self, prompt: &str) -> Result<&AssetEntry, ProviderError> {
        if prompt.trim().is_empty() {
            return Err(ProviderError::EmptyPrompt);
        }
        let words = tokenize(prompt);
        let mut best: Option<(&AssetEntry, usize)> = None;
        // Entries are sorted by key, so a strict improvement keeps the smallest key on ties.
        for e in &self.entries {
            let overlap = e.keywords.intersection(&words).count();
            if overlap > 0 && best.is_none_or(|(_, o)| overlap > o) {
                best = Some((e, overlap));
            }
        }
        best.map(|(e, _)| e)
            .ok_or_else(|| ProviderError::ProviderMiss(prompt.to_string()))
    }
}

impl MeshProvider for AssetLibrary {
    fn generate(&self, prompt: &str) -> Result<TriMesh, ProviderError> {
        self.select(prompt).map(|e| e.mesh.clone())
    }
}

/// Counting semaphore for the in-flight limit.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut n = self.free.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Job-style text-to-3D client.
///
/// `POST {base}/jobs {"prompt"}` returns `{"id"}`; `GET {base}/jobs/{id}` returns
/// `{"status": "pending" | "running" | "done" | "failed"}`; once done,
/// `GET {base}/jobs/{id}/mesh` returns OBJ text.
#[derive(Debug)]
pub struct RemoteProvider {
    pub base_url: String,
    pub api_key: Option<String>,
    pub poll_interval: Duration,
    pub max_polls: usize,
    client: reqwest::blocking::Client,
    slots: Slots,
}

pub const REMOTE_MAX_IN_FLIGHT: usize = 2;
pub const API_KEY_ENV: &str = "TOOLFORGE_MESH_API_KEY";

impl RemoteProvider {
    pub fn new(base_url: &str, api_key: Option<String>, poll_interval: Duration) -> Self {
        RemoteProvider {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            poll_interval,
            max_polls: 600,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(60))
                .build()
                .expect("http client"),
            slots: Slots {
                free: Mutex::new(REMOTE_MAX_IN_FLIGHT),
                cv: Condvar::new(),
            },
        }
    }

    fn request(&self, req: reqwest::blocking::RequestBuilder) -> Result<String, ProviderError> {
        let req = match &self.api_key {
            Some(k) => req.bearer_auth(k),
            None => req,
        };
        let resp = req
            .send()
            .map_err(|e| ProviderError::RemoteError(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| ProviderError::RemoteError(e.to_string()))?;
        if !status.is_success() {
            return Err(ProviderError::RemoteError(format!("HTTP {status}: {body}")));
        }
        Ok(body)
    }

    fn json(body: &str) -> Result<serde_json::Value, ProviderError> {
        serde_json::from_str(body).map_err(|e| ProviderError::RemoteError(format!("bad JSON: {e}")))
    }
}

impl MeshProvider for RemoteProvider {
    fn generate(&self, prompt: &str) -> Result<TriMesh, ProviderError> {
        if prompt.trim().is_empty() {
            return Err(ProviderError::EmptyPrompt);
        }
        let _slot = self.slots.acquire();
        let body = serde_json::json!({ "prompt": prompt }).to_string();
        let submitted = self.request(
            self.client
                .post(format!("{}/jobs", self.base_url))
                .header("content-type", "application/json")
                .body(body),
        )?;
        let id = Self::json(&submitted)?
            .get("id")
            .and_then(|v| v.as_str().map(str::to_string))
            .ok_or_else(|| ProviderError::RemoteError("submit response has no id".into()))?;
        let mut done = false;
        for _ in 0..self.max_polls {
            let polled = self.request(self.client.get(format!("{}/jobs/{id}", self.base_url)))?;
            let status = Self::json(&polled)?
                .get("status")
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            match status.as_str() {
                "done" => {
                    done = true;
                    break;
                }
                "failed" => return Err(ProviderError::RemoteError(format!("job {id} failed"))),
                _ => std::thread::sleep(self.poll_interval),
            }
        }
        if !done {
            return Err(ProviderError::RemoteError(format!("job {id} timed out")));
        }
        let obj = self.request(self.client.get(format!("{}/jobs/{id}/mesh", self.base_url)))?;
        let mesh = read_obj(&obj).map_err(|e| ProviderError::RepairFailed(e.to_string()))?;
        repair(&mesh)
    }
}

/// Memoizes another provider by prompt.
pub struct CachedProvider {
    inner: Arc<dyn MeshProvider>,
    cache: Mutex<HashMap<String, TriMesh>>,
}

impl CachedProvider {
    pub fn new(inner: Arc<dyn MeshProvider>) -> Self {
        CachedProvider {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl MeshProvider for CachedProvider {
    fn generate(&self, prompt: &str) -> Result<TriMesh, ProviderError> {
        if let Some(m) = self.cache.lock().unwrap().get(prompt) {
            return Ok(m.clone());
        }
        let m = self.inner.generate(prompt)?;
        self.cache
            .lock()
            .unwrap()
            .insert(prompt.to_string(), m.clone());
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: String,
    #[serde(default)]
    pub root: Option<PathBuf>,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default = "default_poll_ms")]
    pub poll_interval_ms: u64,
}

fn default_poll_ms() -> u64 {
    1000
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: "library".into(),
            root: None,
            base_url: None,
            poll_interval_ms: default_poll_ms(),
        }
    }
}

type ProviderFactory = fn(&ProviderConfig, &Path) -> Result<Arc<dyn MeshProvider>, ProviderError>;

/// Named provider constructors; `base` resolves relative paths.
pub fn provider_registry() -> Vec<(&'static str, ProviderFactory)> {
    vec![
        ("library", |cfg, base| {
            let root = cfg.root.clone().unwrap_or_else(|| PathBuf::from("assets"));
            Ok(Arc::new(AssetLibrary::load(&base.join(root))?))
        }),
        ("remote", |cfg, _| {
            let url = cfg
                .base_url
                .clone()
                .ok_or_else(|| ProviderError::RemoteError("provider.base_url is not set".into()))?;
            Ok(Arc::new(RemoteProvider::new(
                &url,
                std::env::var(API_KEY_ENV).ok(),
                Duration::from_millis(cfg.poll_interval_ms),
            )))
        }),
        ("none", |_, _| Ok(Arc::new(NoProvider))),
    ]
}

/// Build the configured provider, wrapped in a prompt cache.
pub fn build_provider(cfg: &ProviderConfig, base: &Path) -> Result<Arc<dyn MeshProvider>, ProviderError> {
    let (_, make) = provider_registry()
        .into_iter()
        .find(|(name, _)| *name == cfg.kind)
        .ok_or_else(|| ProviderError::UnknownKind(cfg.kind.clone()))?;
    Ok(Arc::new(CachedProvider::new(make(cfg, base)?)))
}
