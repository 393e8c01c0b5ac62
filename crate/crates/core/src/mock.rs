//! Seeded oracle answerer with per-category error injection, and a stub
//! chat-completion endpoint for exercising the label client.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::oneshot;

use crate::error::{Error, Result};
use crate::eval::{Gazetteers, PredictionRecord};
use crate::geo_model::{AddressLabel, Level, SUFFIX_TABLE};
use crate::labelgen::{HINT_CLOSE, HINT_OPEN};
use crate::qa_forge::{QType, QaLevel, SampleRecord, Stage, TurnMeta, YesNo, OPTION_LETTERS};
use crate::seed::rng_for;

/// Error rate per `"{level}.{qtype}"` key, e.g. `"street.judgment"` or
/// `"combined.generation"`; keys not listed use `default_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    #[serde(default)]
    pub default_rate: f64,
    #[serde(default)]
    pub rates: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
}

pub fn category_key(level: QaLevel, qtype: QType) -> String {
    format!("{level}.{qtype}")
}

impl ErrorModel {
    pub fn uniform(rate: f64, seed: u64) -> Self {
        ErrorModel {
            default_rate: rate,
            rates: BTreeMap::new(),
            seed,
        }
    }

    pub fn with_rate(mut self, level: QaLevel, qtype: QType, rate: f64) -> Self {
        self.rates.insert(category_key(level, qtype), rate);
        self
    }

    pub fn rate(&self, level: QaLevel, qtype: QType) -> f64 {
        self.rates
            .get(&category_key(level, qtype))
            .copied()
            .unwrap_or(self.default_rate)
    }

    pub fn validate(&self) -> Result<()> {
        let valid_keys: Vec<String> = [
            (QaLevel::District, QType::Generation),
            (QaLevel::District, QType::Judgment),
            (QaLevel::District, QType::MultipleChoice),
            (QaLevel::Street, QType::Generation),
            (QaLevel::Street, QType::Judgment),
            (QaLevel::Street, QType::MultipleChoice),
            (QaLevel::Combined, QType::Generation),
        ]
        .iter()
        .map(|(l, q)| category_key(*l, *q))
        .collect();
        for (k, r) in std::iter::once(("default", &self.default_rate)).chain(self.rates.iter().map(|(k, r)| (k.as_str(), r))) {
            if !(0.0..=1.0).contains(r) {
                return Err(Error::OutOfRange(format!("error rate {k} = {r} not in [0, 1]")));
            }
            if k != "default" && !valid_keys.iter().any(|v| v == k) {
                return Err(Error::invalid(format!("unknown error-model category {k:?}")));
            }
        }
        Ok(())
    }
}

/// Wrong-answer pools per level.
#[derive(Debug, Clone, Default)]
pub struct AnswerPools {
    pub streets: Vec<String>,
    pub districts: Vec<String>,
}

impl AnswerPools {
    pub fn from_gazetteers(g: &Gazetteers) -> Self {
        AnswerPools {
            streets: g.streets.names().map(str::to_string).collect(),
            districts: g.districts.names().map(str::to_string).collect(),
        }
    }

    fn wrong<R: Rng>(&self, level: Level, truth: &str, rng: &mut R) -> Result<String> {
        let pool = match level {
            Level::Street => &self.streets,
            Level::District => &self.districts,
        };
        let key = crate::geo_model::normalize_lossy(truth, level);
        let others: Vec<&String> = pool
            .iter()
            .filter(|c| crate::geo_model::normalize_lossy(c, level) != key)
            .collect();
        others
            .choose(rng)
            .map(|s| s.to_string())
            .ok_or_else(|| Error::invalid(format!("no wrong {level} answers available")))
    }

    fn has_wrong(&self, level: Level, truth: &str) -> bool {
        let pool = match level {
            Level::Street => &self.streets,
            Level::District => &self.districts,
        };
        let key = crate::geo_model::normalize_lossy(truth, level);
        pool.iter()
            .any(|c| crate::geo_model::normalize_lossy(c, level) != key)
    }
}

/// Replaces a full street suffix by its abbreviation.
pub fn abbreviate(name: &str) -> String {
    let mut words: Vec<String> = name.split_whitespace().map(str::to_string).collect();
    if let Some(last) = words.last_mut() {
        if let Some((abbr, _)) = SUFFIX_TABLE.iter().find(|(_, full)| last.eq_ignore_ascii_case(full)) {
            let mut a = abbr.to_string();
            a[..1].make_ascii_uppercase();
            *last = a;
        }
    }
    words.join(" ")
}

fn name_form<R: Rng>(name: &str, level: Level, rng: &mut R) -> String {
    match rng.gen_range(0..3) {
        0 => name.to_string(),
        1 => match level {
            Level::Street => abbreviate(name),
            Level::District => name.to_lowercase(),
        },
        _ => match level {
            Level::Street => format!("The photo was taken on {name}."),
            Level::District => format!("This image is from {name}."),
        },
    }
}

fn yes_no_form<R: Rng>(v: YesNo, rng: &mut R) -> String {
    let forms: [&str; 3] = match v {
        YesNo::Yes => ["Yes", "Yes.", "yes, it matches."],
        YesNo::No => ["No", "No.", "no, it is not."],
    };
    forms.choose(rng).unwrap().to_string()
}

fn letter_form<R: Rng>(l: char, rng: &mut R) -> String {
    match rng.gen_range(0..4) {
        0 => l.to_string(),
        1 => format!("({l})"),
        2 => format!("Answer: {l}"),
        _ => format!("The answer is ({l})."),
    }
}

/// Answer for one turn. Correct with probability `1 − rate`, otherwise a
/// uniformly drawn wrong answer of the same shape. Deterministic in
/// `(model.seed, sample_id, turn)`.
pub fn respond(
    meta: &TurnMeta,
    truth: &AddressLabel,
    pools: &AnswerPools,
    model: &ErrorModel,
    sample_id: &str,
    turn: usize,
) -> Result<String> {
    let rate = model.rate(meta.level, meta.qtype);
    let mut rng = rng_for(model.seed, &["mock", sample_id, &turn.to_string()]);
    let wrong = rng.gen_bool(rate);
    match (meta.level.single(), meta.qtype) {
        (None, _) => {
            if rate > 0.0
                && !(pools.has_wrong(Level::Street, &truth.street)
                    && pools.has_wrong(Level::District, &truth.district))
            {
                return Err(Error::invalid("combined errors need wrong street and district answers"));
            }
            let (mut street, mut district) = (truth.street.clone(), truth.district.clone());
            if wrong {
                let which = rng.gen_range(0..3);
                if which != 1 {
                    street = pools.wrong(Level::Street, &truth.street, &mut rng)?;
                }
                if which != 0 {
                    district = pools.wrong(Level::District, &truth.district, &mut rng)?;
                }
            }
            Ok(match rng.gen_range(0..3) {
                0 => format!("{street}, {district}"),
                1 => format!("{}, {district}", abbreviate(&street)),
                _ => format!("This photo was taken on {street} in {district}."),
            })
        }
        (Some(level), QType::Generation) => {
            let t = truth.get(level);
            if rate > 0.0 && !pools.has_wrong(level, t) {
                return Err(Error::invalid(format!("no wrong {level} answers available")));
            }
            let name = if wrong {
                pools.wrong(level, t, &mut rng)?
            } else {
                t.to_string()
            };
            Ok(name_form(&name, level, &mut rng))
        }
        (Some(_), QType::Judgment) => {
            let planted = meta
                .judgment_truth
                .ok_or_else(|| Error::invalid("judgment turn without planted truth"))?;
            let v = if wrong { planted.flip() } else { planted };
            Ok(yes_no_form(v, &mut rng))
        }
        (Some(_), QType::MultipleChoice) => {
            let correct = meta
                .correct_option
                .ok_or_else(|| Error::invalid("choice turn without correct option"))?;
            let l = if wrong {
                let others: Vec<char> = OPTION_LETTERS.iter().copied().filter(|l| *l != correct).collect();
                *others.choose(&mut rng).unwrap()
            } else {
                correct
            };
            Ok(letter_form(l, &mut rng))
        }
    }
}

/// Predictions for every localization turn of `gt`, ordered by `(id, turn)`.
pub fn predict(gt: &[SampleRecord], pools: &AnswerPools, model: &ErrorModel) -> Result<Vec<PredictionRecord>> {
    model.validate()?;
    let mut out: Vec<PredictionRecord> = gt
        .par_iter()
        .filter_map(|s| s.meta.as_ref().map(|m| (s, m)))
        .filter(|(_, m)| m.stage == Stage::Localization)
        .map(|(s, m)| {
            m.turns
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    Ok(PredictionRecord {
                        id: s.id.clone(),
                        turn: i,
                        answer: respond(t, &m.truth, pools, model, &s.id, i)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    out.sort_by(|a, b| (&a.id, a.turn).cmp(&(&b.id, b.turn)));
    Ok(out)
}

/// A parsed chat-completion request as seen by a stub handler.
#[derive(Debug, Clone)]
pub struct StubRequest {
    /// Concatenated text parts of all messages.
    pub text: String,
    pub images: usize,
    pub body: Value,
    /// 0-based arrival index across the server lifetime.
    pub seq: usize,
}

#[derive(Debug, Clone)]
pub enum StubReply {
    Text(String),
    Status(u16),
}

pub type StubHandler = Arc<dyn Fn(&StubRequest) -> StubReply + Send + Sync>;

#[derive(Clone)]
struct StubState {
    handler: StubHandler,
    delay: Duration,
    in_flight: Arc<AtomicUsize>,
    max_in_flight: Arc<AtomicUsize>,
    requests: Arc<AtomicUsize>,
}

/// Running stub endpoint. Dropping it shuts the server down.
pub struct StubServer {
    pub addr: SocketAddr,
    max_in_flight: Arc<AtomicUsize>,
    requests: Arc<AtomicUsize>,
    shutdown: Option<oneshot::Sender<()>>,
}

impl StubServer {
    /// Serves `POST /chat/completions` and `POST /v1/chat/completions` on an
    /// ephemeral localhost port. Each request sleeps `delay` before replying.
    pub async fn start(handler: StubHandler, delay: Duration) -> Result<Self> {
        Self::bind("127.0.0.1:0", handler, delay).await
    }

    pub async fn bind(addr: &str, handler: StubHandler, delay: Duration) -> Result<Self> {
        let state = StubState {
            handler,
            delay,
            in_flight: Arc::default(),
            max_in_flight: Arc::default(),
            requests: Arc::default(),
        };
        let (max_in_flight, requests) = (state.max_in_flight.clone(), state.requests.clone());
        let app = Router::new()
            .route("/chat/completions", post(chat))
            .route("/v1/chat/completions", post(chat))
            .with_state(state);
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::Http(format!("bind {addr}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Error::Http(e.to_string()))?;
        let (tx, rx) = oneshot::channel::<()>();
        tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(StubServer {
            addr,
            max_in_flight,
            requests,
            shutdown: Some(tx),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Highest number of requests observed in progress at once.
    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

async fn chat(State(st): State<StubState>, Json(body): Json<Value>) -> Response {
    let now = st.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    st.max_in_flight.fetch_max(now, Ordering::SeqCst);
    let seq = st.requests.fetch_add(1, Ordering::SeqCst);
    if !st.delay.is_zero() {
        tokio::time::sleep(st.delay).await;
    }
    let mut text = String::new();
    let mut images = 0;
    for m in body["messages"].as_array().into_iter().flatten() {
        match &m["content"] {
            Value::String(s) => text.push_str(s),
            Value::Array(parts) => {
                for p in parts {
                    match p["type"].as_str() {
                        Some("text") => text.push_str(p["text"].as_str().unwrap_or_default()),
                        Some("image_url") => images += 1,
                        _ => {}
                    }
                }
            }
            _ => {}
        }
    }
    let req = StubRequest {
        text,
        images,
        body,
        seq,
    };
    let reply = (st.handler)(&req);
    st.in_flight.fetch_sub(1, Ordering::SeqCst);
    match reply {
        StubReply::Text(t) => Json(json!({
            "id": format!("stub-{seq}"),
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": t}, "finish_reason": "stop"}]
        }))
        .into_response(),
        StubReply::Status(code) => {
            let code = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (code, "stub failure").into_response()
        }
    }
}

/// The hint clause of a prompt, without markers.
pub fn extract_hint(prompt: &str) -> Option<&str> {
    let start = prompt.find(HINT_OPEN)? + HINT_OPEN.len();
    let end = start + prompt[start..].find(HINT_CLOSE)?;
    Some(prompt[start..end].trim())
}

/// Reasoning text naming the hinted street and district, or `None` without
/// a hint.
pub fn hint_reasoning(prompt: &str) -> Option<String> {
    let label = crate::labelgen::parse_hint(extract_hint(prompt)?)?;
    Some(format!(
        "The street-view photo shows a straight multi-lane road lined with buildings. \
         On the annotated map, {} runs through {} at the matching position, and its \
         layout and orientation agree with the view.",
        label.street, label.district
    ))
}

/// Handler answering every request with [`hint_reasoning`].
pub fn hint_reasoning_handler() -> StubHandler {
    Arc::new(|req: &StubRequest| match hint_reasoning(&req.text) {
        Some(t) => StubReply::Text(t),
        None => StubReply::Text("I cannot tell where this photo was taken.".into()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pools() -> AnswerPools {
        AnswerPools {
            streets: vec!["Grant Street".into(), "Fifth Avenue".into(), "Penn Avenue".into()],
            districts: vec!["Downtown".into(), "Oakland".into()],
        }
    }

    fn truth() -> AddressLabel {
        AddressLabel {
            street: "Grant Street".into(),
            district: "Downtown".into(),
        }
    }

    fn gen(level: QaLevel) -> TurnMeta {
        TurnMeta {
            qtype: QType::Generation,
            level,
            candidate: None,
            judgment_truth: None,
            options: None,
            correct_option: None,
        }
    }

    #[test]
    fn abbreviation() {
        assert_eq!(abbreviate("Grant Street"), "Grant St");
        assert_eq!(abbreviate("Fort Pitt Boulevard"), "Fort Pitt Blvd");
        assert_eq!(abbreviate("Boulevard of the Allies"), "Boulevard of the Allies");
    }

    #[test]
    fn deterministic_per_id_and_turn() {
        let m = ErrorModel::uniform(0.5, 3);
        let a = respond(&gen(QaLevel::Street), &truth(), &pools(), &m, "x", 1).unwrap();
        let b = respond(&gen(QaLevel::Street), &truth(), &pools(), &m, "x", 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_pool_with_errors_fails() {
        let p = AnswerPools {
            streets: vec!["Grant Street".into()],
            districts: vec![],
        };
        let m = ErrorModel::uniform(0.1, 0);
        assert!(respond(&gen(QaLevel::Street), &truth(), &p, &m, "x", 0).is_err());
        let m = ErrorModel::uniform(0.0, 0);
        assert!(respond(&gen(QaLevel::Street), &truth(), &p, &m, "x", 0).is_ok());
    }

    #[test]
    fn rate_validation() {
        assert!(ErrorModel::uniform(1.5, 0).validate().is_err());
        let m = ErrorModel::uniform(0.0, 0).with_rate(QaLevel::Street, QType::Judgment, 1.0);
        assert!(m.validate().is_ok());
        let mut bad = ErrorModel::uniform(0.0, 0);
        bad.rates.insert("street.essay".into(), 0.1);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hint_extraction() {
        let p = format!("task {HINT_OPEN} Grant Street in Downtown {HINT_CLOSE} end");
        assert_eq!(extract_hint(&p), Some("Grant Street in Downtown"));
        assert!(hint_reasoning("no hint").is_none());
        let label = AddressLabel { street: "Grant Street".into(), district: "Downtown".into() };
        let p = format!("task {HINT_OPEN} {} {HINT_CLOSE}", crate::labelgen::hint_clause(&label));
        assert!(hint_reasoning(&p).unwrap().contains("Grant Street runs through Downtown"));
    }
}
