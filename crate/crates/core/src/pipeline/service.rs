//! JSON-over-HTTP annotator services.
//!
//! ```text
//! POST /link    {doc_id, tokens[], characters[]}      -> {clusters: {name: [[s,e],...]}}
//! POST /judge   {prompt, doc_id, character, mention, decoding} -> {answer: "Yes"|"No"}
//! POST /expand  {doc_id, offset, tokens[], seeds: {name: [[s,e],...]}} -> {clusters: {...}}
//! ```
//!
//! Spans are 0-based and end-inclusive; `/expand` spans are local to the
//! posted tokens. Fields beyond `prompt` in `/judge` and beyond
//! `tokens`/`seeds` in `/expand` are context a service may ignore.
//!
//! Every request goes through a [`Transport`]. [`CachedTransport`] keys
//! responses by a SHA-256 of path and body, so recorded runs replay
//! bit-exactly without the services.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::components::{ComponentResult, ExpandRequest, Expander, Judge, JudgeQuery, Linker};
use crate::error::ComponentError;
use crate::model::{ClusterKey, ClusterSet, Document, Mention, Stage};

pub const LINK_PATH: &str = "/link";
pub const JUDGE_PATH: &str = "/judge";
pub const EXPAND_PATH: &str = "/expand";

pub trait Transport: Send + Sync {
    fn post(&self, path: &str, body: &Value) -> ComponentResult<Value>;
}

pub struct HttpTransport {
    base_url: String,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> ComponentResult<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ComponentError::Transport(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            client,
        })
    }
}

impl Transport for HttpTransport {
    fn post(&self, path: &str, body: &Value) -> ComponentResult<Value> {
        let url = format!("{}{}", self.base_url, path);
        log::debug!("POST {url}");
        let resp = self
            .client
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| ComponentError::Transport(format!("{url}: {e}")))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(ComponentError::Transport(format!("{url}: HTTP {status}")));
        }
        if !status.is_success() {
            return Err(ComponentError::BadResponse(format!("{url}: HTTP {status}")));
        }
        resp.json::<Value>()
            .map_err(|e| ComponentError::BadResponse(format!("{url}: {e}")))
    }
}

pub fn request_hash(path: &str, body: &Value) -> String {
    let mut h = Sha256::new();
    h.update(path.as_bytes());
    h.update(b"\n");
    h.update(body.to_string().as_bytes());
    hex::encode(h.finalize())
}

/// Response cache in memory and, optionally, one JSON file per request in
/// a directory. Without an inner transport it only replays.
pub struct CachedTransport {
    inner: Option<Arc<dyn Transport>>,
    dir: Option<PathBuf>,
    mem: Mutex<HashMap<String, Value>>,
}

impl CachedTransport {
    pub fn new(inner: Arc<dyn Transport>, dir: Option<PathBuf>) -> Self {
        Self {
            inner: Some(inner),
            dir,
            mem: Mutex::new(HashMap::new()),
        }
    }

    pub fn replay(dir: impl Into<PathBuf>) -> Self {
        Self {
            inner: None,
            dir: Some(dir.into()),
            mem: Mutex::new(HashMap::new()),
        }
    }

    fn file(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    fn load(path: &Path) -> Option<Value> {
        let text = fs::read_to_string(path).ok()?;
        let v: Value = serde_json::from_str(&text).ok()?;
        v.get("response").cloned()
    }
}

impl Transport for CachedTransport {
    fn post(&self, path: &str, body: &Value) -> ComponentResult<Value> {
        let key = request_hash(path, body);
        if let Some(v) = self.mem.lock().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        if let Some(v) = self.file(&key).and_then(|f| Self::load(&f)) {
            self.mem.lock().expect("cache lock").insert(key, v.clone());
            return Ok(v);
        }
        let inner = self
            .inner
            .as_ref()
            .ok_or_else(|| ComponentError::CacheMiss(key.clone()))?;
        let v = inner.post(path, body)?;
        if let Some(f) = self.file(&key) {
            let record = json!({"path": path, "request": body, "response": v});
            if let Some(parent) = f.parent() {
                let _ = fs::create_dir_all(parent);
            }
            // A failed write only costs a future cache miss.
            if let Err(e) = fs::write(&f, record.to_string()) {
                log::warn!("could not write cache entry {}: {e}", f.display());
            }
        }
        self.mem.lock().expect("cache lock").insert(key, v.clone());
        Ok(v)
    }
}

/// Serves the wire protocol from in-process components, for tests and for
/// recording caches from local implementations.
pub struct LocalTransport {
    pub linker: Arc<dyn Linker>,
    pub judge: Arc<dyn Judge>,
    pub expander: Arc<dyn Expander>,
}

impl Transport for LocalTransport {
    fn post(&self, path: &str, body: &Value) -> ComponentResult<Value> {
        let bad = |m: &str| ComponentError::BadResponse(format!("{path}: {m}"));
        match path {
            LINK_PATH => {
                let doc = Document::new(
                    str_field(body, "doc_id").ok_or_else(|| bad("doc_id"))?,
                    strings(body.get("tokens")).ok_or_else(|| bad("tokens"))?,
                    strings(body.get("characters")).ok_or_else(|| bad("characters"))?,
                );
                let cs = self.linker.link(&doc)?;
                Ok(json!({"clusters": clusters_to_json(&cs)}))
            }
            JUDGE_PATH => {
                let mention = body
                    .get("mention")
                    .and_then(|v| serde_json::from_value::<Mention>(v.clone()).ok())
                    .ok_or_else(|| bad("mention"))?;
                let doc_id = str_field(body, "doc_id").unwrap_or_default();
                let character = str_field(body, "character").unwrap_or_default();
                let q = JudgeQuery {
                    doc_id: &doc_id,
                    mention,
                    character: &character,
                    prompt: str_field(body, "prompt").ok_or_else(|| bad("prompt"))?,
                };
                let yes = self.judge.judge(&q)?;
                Ok(json!({"answer": if yes { "Yes" } else { "No" }}))
            }
            EXPAND_PATH => {
                let doc_id = str_field(body, "doc_id").unwrap_or_default();
                let tokens = strings(body.get("tokens")).ok_or_else(|| bad("tokens"))?;
                let seeds =
                    clusters_from_json(body.get("seeds").ok_or_else(|| bad("seeds"))?, &doc_id, Stage::Refined)?;
                let req = ExpandRequest {
                    doc_id: &doc_id,
                    offset: body.get("offset").and_then(Value::as_u64).unwrap_or(0) as usize,
                    tokens: &tokens,
                    seeds: &seeds,
                };
                let cs = self.expander.expand(&req)?;
                Ok(json!({"clusters": clusters_to_json(&cs)}))
            }
            _ => Err(bad("unknown endpoint")),
        }
    }
}

fn str_field(v: &Value, key: &str) -> Option<String> {
    v.get(key).and_then(Value::as_str).map(String::from)
}

fn strings(v: Option<&Value>) -> Option<Vec<String>> {
    v?.as_array()?.iter().map(|x| x.as_str().map(String::from)).collect()
}

/// `{name: [[s,e],...]}`; anonymous keys are written as their integer id.
pub fn clusters_to_json(cs: &ClusterSet) -> Value {
    let mut m = Map::new();
    for (k, ms) in cs.iter() {
        let spans: Vec<Value> = ms.iter().map(|m| json!([m.start, m.end])).collect();
        m.insert(k.to_string(), Value::Array(spans));
    }
    Value::Object(m)
}

pub fn clusters_from_json(v: &Value, doc_id: &str, stage: Stage) -> ComponentResult<ClusterSet> {
    let obj = v
        .as_object()
        .ok_or_else(|| ComponentError::BadResponse("clusters must be an object".into()))?;
    let mut parsed = Vec::with_capacity(obj.len());
    for (name, spans) in obj {
        let spans: Vec<Mention> = serde_json::from_value(spans.clone())
            .map_err(|e| ComponentError::BadResponse(format!("cluster {name:?}: {e}")))?;
        parsed.push((ClusterKey::name(name), spans));
    }
    Ok(ClusterSet::from_raw(doc_id, stage, parsed))
}

pub struct ServiceLinker(pub Arc<dyn Transport>);

impl Linker for ServiceLinker {
    fn name(&self) -> String {
        "service".into()
    }

    fn link(&self, doc: &Document) -> ComponentResult<ClusterSet> {
        let body = json!({"doc_id": doc.doc_id, "tokens": doc.tokens, "characters": doc.characters});
        let resp = self.0.post(LINK_PATH, &body)?;
        let clusters = resp
            .get("clusters")
            .ok_or_else(|| ComponentError::BadResponse("/link response lacks clusters".into()))?;
        clusters_from_json(clusters, &doc.doc_id, Stage::Initialized)
    }
}

pub struct ServiceJudge {
    pub transport: Arc<dyn Transport>,
    /// Sent with every request so the service decodes deterministically.
    pub decoding: Value,
}

impl ServiceJudge {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self {
            transport,
            decoding: default_decoding(),
        }
    }
}

pub fn default_decoding() -> Value {
    json!({"do_sample": false, "temperature": 0.0, "max_new_tokens": 1})
}

pub fn parse_answer(answer: &str) -> Option<bool> {
    let a = answer.trim().trim_end_matches(['.', '!']).to_ascii_lowercase();
    match a.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

impl Judge for ServiceJudge {
    fn name(&self) -> String {
        "service".into()
    }

    fn judge(&self, q: &JudgeQuery<'_>) -> ComponentResult<bool> {
        let body = json!({
            "prompt": q.prompt,
            "doc_id": q.doc_id,
            "character": q.character,
            "mention": [q.mention.start, q.mention.end],
            "decoding": self.decoding,
        });
        let resp = self.transport.post(JUDGE_PATH, &body)?;
        let answer = resp
            .get("answer")
            .and_then(Value::as_str)
            .ok_or_else(|| ComponentError::BadResponse("/judge response lacks answer".into()))?;
        parse_answer(answer)
            .ok_or_else(|| ComponentError::BadResponse(format!("/judge answered {answer:?}, expected Yes or No")))
    }
}

pub struct ServiceExpander(pub Arc<dyn Transport>);

impl Expander for ServiceExpander {
    fn name(&self) -> String {
        "service".into()
    }

    fn expand(&self, req: &ExpandRequest<'_>) -> ComponentResult<ClusterSet> {
        let body = json!({
            "doc_id": req.doc_id,
            "offset": req.offset,
            "tokens": req.tokens,
            "seeds": clusters_to_json(req.seeds),
        });
        let resp = self.0.post(EXPAND_PATH, &body)?;
        let clusters = resp
            .get("clusters")
            .ok_or_else(|| ComponentError::BadResponse("/expand response lacks clusters".into()))?;
        clusters_from_json(clusters, req.doc_id, req.seeds.stage)
    }
}
