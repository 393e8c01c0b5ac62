//! Alignment-label generation: hint-carrying prompts, a bounded-concurrency
//! chat-completion client, label validation and hint-free stage-1 samples.

use std::collections::{BTreeMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine as _;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo_model::{normalize_lossy, AddressLabel, Level};
use crate::qa_forge::{Message, Role, SampleMeta, SampleRecord, Stage, IMAGE_TOKEN};
use crate::raster;
use crate::seed::sha256_hex;

pub const HINT_OPEN: &str = "[[HINT]]";
pub const HINT_CLOSE: &str = "[[/HINT]]";

pub const ALIGNMENT_TASK: &str = "The image is a satellite map annotated with street names. \
The small photo in its upper-right corner is a street-view image taken somewhere on this map. \
Identify the street on the annotated map where the street-view image was taken, and explain \
why the street-view image matches that street.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentPrompt {
    pub task: String,
    pub hint: String,
}

impl AlignmentPrompt {
    /// Full prompt sent to the labelling endpoint.
    pub fn text(&self) -> String {
        format!("{} {HINT_OPEN} {} {HINT_CLOSE}", self.task, self.hint)
    }

    /// Question stored in the training sample.
    pub fn question(&self) -> &str {
        &self.task
    }
}

pub fn hint_clause(label: &AddressLabel) -> String {
    format!(
        "Standard answer: the street-view image was taken on {} in {}.",
        label.street, label.district
    )
}

/// Inverse of [`hint_clause`].
pub fn parse_hint(hint: &str) -> Option<AddressLabel> {
    let rest = hint
        .trim()
        .strip_prefix("Standard answer: the street-view image was taken on ")?
        .strip_suffix('.')?;
    let (street, district) = rest.rsplit_once(" in ")?;
    Some(AddressLabel {
        street: street.to_string(),
        district: district.to_string(),
    })
}

/// Prompt for one grafted image.
pub fn build_alignment_prompt(image: &Path, label: &AddressLabel) -> Result<AlignmentPrompt> {
    if !image.is_file() {
        return Err(Error::File {
            path: image.to_path_buf(),
            msg: "grafted image not found".into(),
        });
    }
    if label.street.trim().is_empty() || label.district.trim().is_empty() {
        return Err(Error::invalid("alignment label needs a street and a district"));
    }
    Ok(AlignmentPrompt {
        task: ALIGNMENT_TASK.to_string(),
        hint: hint_clause(label),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_in_flight: usize,
    /// Retries after the first attempt.
    pub retry_budget: u32,
    pub timeout_secs: u64,
    /// First backoff delay; doubles per retry.
    pub backoff_ms: u64,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "gpt-4o".into(),
            temperature: 0.2,
            max_tokens: 512,
            max_in_flight: 8,
            retry_budget: 3,
            timeout_secs: 60,
            backoff_ms: 500,
            api_key: None,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_in_flight < 1 {
            return Err(Error::OutOfRange("max_in_flight must be at least 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::OutOfRange(format!("temperature {} not in [0, 2]", self.temperature)));
        }
        if self.base_url.is_empty() {
            return Err(Error::invalid("endpoint base_url is empty"));
        }
        Ok(())
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

pub fn request_body(config: &EndpointConfig, prompt: &str, jpeg: &[u8]) -> Value {
    let data = base64::engine::general_purpose::STANDARD.encode(jpeg);
    json!({
        "model": config.model,
        "messages": [{
            "role": "user",
            "content": [
                {"type": "text", "text": prompt},
                {"type": "image_url", "image_url": {"url": format!("data:image/jpeg;base64,{data}")}}
            ]
        }],
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
    })
}

pub fn client(config: &EndpointConfig) -> Result<reqwest::Client> {
    reqwest::Client::builder()
        .timeout(Duration::from_secs(config.timeout_secs))
        .build()
        .map_err(|e| Error::Http(e.to_string()))
}

async fn attempt(client: &reqwest::Client, config: &EndpointConfig, body: &Value) -> std::result::Result<String, String> {
    let mut req = client.post(config.url()).json(body);
    if let Some(key) = &config.api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().await.map_err(|e| e.to_string())?;
    let status = resp.status();
    if !status.is_success() {
        return Err(format!("HTTP {status}"));
    }
    let v: Value = resp.json().await.map_err(|e| e.to_string())?;
    v["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| "response has no choices[0].message.content".to_string())
}

/// Sends one request, retrying transport and HTTP failures with exponential
/// backoff up to `retry_budget` times.
pub async fn request_label(
    client: &reqwest::Client,
    config: &EndpointConfig,
    prompt: &str,
    jpeg: &[u8],
) -> Result<String> {
    let body = request_body(config, prompt, jpeg);
    let mut last = String::new();
    for i in 0..=config.retry_budget {
        if i > 0 {
            let wait = config.backoff_ms.saturating_mul(1 << (i - 1).min(16));
            tokio::time::sleep(Duration::from_millis(wait)).await;
        }
        match attempt(client, config, &body).await {
            Ok(text) => return Ok(text),
            Err(e) => {
                log::debug!("label request attempt {} failed: {e}", i + 1);
                last = e;
            }
        }
    }
    Err(Error::Http(format!(
        "gave up after {} attempts: {last}",
        config.retry_budget + 1
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentLabel {
    pub sample_id: String,
    pub text: String,
    pub target: AddressLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    MissingStreet,
    HintLeak,
    Empty,
}

/// Removes an echoed hint clause, then accepts the text iff it still names the
/// target street (normalized, whole tokens) and carries no hint marker.
pub fn validate_and_strip(
    raw: &str,
    label: &AddressLabel,
    prompt: &AlignmentPrompt,
    sample_id: &str,
) -> std::result::Result<AlignmentLabel, Rejection> {
    let mut text = raw.replace(&format!("{HINT_OPEN} {} {HINT_CLOSE}", prompt.hint), " ");
    text = text.replace(&prompt.hint, " ");
    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if text.is_empty() {
        return Err(Rejection::Empty);
    }
    if text.contains(HINT_OPEN) || text.contains(HINT_CLOSE) {
        return Err(Rejection::HintLeak);
    }
    let hay = format!(" {} ", normalize_lossy(&text, Level::Street));
    let needle = format!(" {} ", normalize_lossy(&label.street, Level::Street));
    if !hay.contains(&needle) {
        return Err(Rejection::MissingStreet);
    }
    Ok(AlignmentLabel {
        sample_id: sample_id.to_string(),
        text,
        target: label.clone(),
    })
}

/// One grafted image awaiting a label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentItem {
    pub id: String,
    pub image: PathBuf,
    pub label: AddressLabel,
    pub city: String,
    pub location_id: String,
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accepted,
    Rejected,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub sample_id: String,
    pub request_hash: String,
    pub raw_response: Option<String>,
    pub verdict: Verdict,
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchReport {
    /// Sorted by sample id, including labels recovered on resume.
    pub accepted: Vec<AlignmentLabel>,
    pub dropped: usize,
    pub failed: usize,
    pub resumed: usize,
    pub regenerated: usize,
}

impl BatchReport {
    pub fn acceptance_rate(&self) -> f64 {
        let n = self.accepted.len() + self.dropped + self.failed;
        if n == 0 {
            0.0
        } else {
            self.accepted.len() as f64 / n as f64
        }
    }
}

struct Audit {
    path: PathBuf,
    file: Mutex<std::fs::File>,
}

impl Audit {
    fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Audit {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    fn append(&self, entry: &AuditEntry) -> Result<()> {
        let mut line = serde_json::to_string(entry)?;
        line.push('\n');
        let mut f = self.file.lock().expect("audit lock poisoned");
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))
    }
}

enum Outcome {
    Accepted(AlignmentLabel, bool),
    Dropped,
    Failed,
}

async fn label_one(
    client: &reqwest::Client,
    config: &EndpointConfig,
    item: &AlignmentItem,
    audit: &Audit,
) -> Result<Outcome> {
    let prompt = build_alignment_prompt(&item.image, &item.label)?;
    let jpeg = raster::encode_jpeg(&raster::load_rgb(&item.image)?)?;
    let text = prompt.text();
    let hash = sha256_hex(serde_json::to_string(&request_body(config, &text, &jpeg))?.as_bytes());
    for attempt in 1..=2u32 {
        let entry = |raw: Option<String>, verdict, error| AuditEntry {
            sample_id: item.id.clone(),
            request_hash: hash.clone(),
            raw_response: raw,
            verdict,
            attempt,
            error,
        };
        let raw = match request_label(client, config, &text, &jpeg).await {
            Ok(raw) => raw,
            Err(e) => {
                audit.append(&entry(None, Verdict::Failed, Some(e.to_string())))?;
                return Ok(Outcome::Failed);
            }
        };
        match validate_and_strip(&raw, &item.label, &prompt, &item.id) {
            Ok(label) => {
                audit.append(&entry(Some(raw), Verdict::Accepted, None))?;
                return Ok(Outcome::Accepted(label, attempt > 1));
            }
            Err(why) => {
                audit.append(&entry(Some(raw), Verdict::Rejected, Some(format!("{why:?}"))))?;
            }
        }
    }
    Ok(Outcome::Dropped)
}

/// Accepted labels recorded in an audit log, by sample id.
pub fn read_accepted(audit_path: &Path, items: &[AlignmentItem]) -> Result<BTreeMap<String, AlignmentLabel>> {
    let mut out = BTreeMap::new();
    if !audit_path.exists() {
        return Ok(out);
    }
    let by_id: BTreeMap<&str, &AlignmentItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    for e in crate::jsonl::read::<AuditEntry>(audit_path)? {
        if e.verdict != Verdict::Accepted {
            continue;
        }
        let (Some(item), Some(raw)) = (by_id.get(e.sample_id.as_str()), &e.raw_response) else {
            continue;
        };
        let prompt = AlignmentPrompt {
            task: ALIGNMENT_TASK.to_string(),
            hint: hint_clause(&item.label),
        };
        if let Ok(label) = validate_and_strip(raw, &item.label, &prompt, &item.id) {
            out.insert(item.id.clone(), label);
        }
    }
    Ok(out)
}

/// Labels every item with at most `max_in_flight` requests outstanding.
/// Rejected labels get one regeneration; items already accepted in the audit
/// log are not requested again.
pub async fn run_batch(config: &EndpointConfig, items: &[AlignmentItem], audit_path: &Path) -> Result<BatchReport> {
    config.validate()?;
    let mut ids = HashSet::new();
    for it in items {
        if !ids.insert(it.id.as_str()) {
            return Err(Error::invalid(format!("duplicate alignment item {}", it.id)));
        }
    }
    let done = read_accepted(audit_path, items)?;
    let audit = Audit::open(audit_path)?;
    let client = client(config)?;
    let todo: Vec<&AlignmentItem> = items.iter().filter(|i| !done.contains_key(&i.id)).collect();
    let mut report = BatchReport {
        resumed: done.len(),
        ..Default::default()
    };
    let results: Vec<Result<Outcome>> = stream::iter(todo)
        .map(|item| label_one(&client, config, item, &audit))
        .buffer_unordered(config.max_in_flight)
        .collect()
        .await;
    let mut accepted: Vec<AlignmentLabel> = done.into_values().collect();
    for r in results {
        match r? {
            Outcome::Accepted(label, regenerated) => {
                report.regenerated += regenerated as usize;
                accepted.push(label);
            }
            Outcome::Dropped => report.dropped += 1,
            Outcome::Failed => report.failed += 1,
        }
    }
    accepted.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    report.accepted = accepted;
    Ok(report)
}

/// Stage-1 training sample: the grafted image, the hint-free task and the
/// accepted reasoning.
pub fn stage1_sample(item: &AlignmentItem, label: &AlignmentLabel) -> SampleRecord {
    SampleRecord {
        id: item.id.clone(),
        image: Some(item.image.to_string_lossy().into_owned()),
        images: None,
        conversations: vec![
            Message {
                from: Role::Human,
                value: format!("{IMAGE_TOKEN}{ALIGNMENT_TASK}"),
            },
            Message {
                from: Role::Assistant,
                value: label.text.clone(),
            },
        ],
        meta: Some(SampleMeta {
            city: item.city.clone(),
            location_id: item.location_id.clone(),
            heading: item.heading,
            stage: Stage::Alignment,
            truth: item.label.clone(),
            turns: Vec::new(),
        }),
    }
}

/// Stage-1 samples for every accepted label, in label order.
pub fn stage1_samples(items: &[AlignmentItem], labels: &[AlignmentLabel]) -> Vec<SampleRecord> {
    let by_id: BTreeMap<&str, &AlignmentItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    labels
        .iter()
        .filter_map(|l| by_id.get(l.sample_id.as_str()).map(|it| stage1_sample(it, l)))
        .collect()
}
