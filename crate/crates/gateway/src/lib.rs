//! HTTP surface over a running engine.
//!
//! [`GatewayCore`] owns the engine and maps `(method, target, body)` to a JSON
//! response without any I/O, so every endpoint can be exercised directly.
//! [`spawn`] moves a core onto its own task and [`router`] exposes it through
//! axum. Every request, read or write, is a message on one queue, so the
//! engine sees a single total order of mutations.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/telemetry` | one wire message per body line |
//! | GET | `/alarms?after=<seq>` | alarms with seq > cursor, at most 500 |
//! | POST | `/alarms/{id}/feedback` | `{"d":"rejected"}` or a bare disposition |
//! | GET | `/models` | model instance metadata |
//! | GET | `/stats/{op}` | per-sensor summaries of one operation |
//! | GET | `/status` | current operation, open alarms, active models |

use std::future::Future;
use std::io::Write;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

use cncguard::adaptation::Phase;
use cncguard::stats::Summary;
use cncguard::{
    parse_message, Alarm, Disposition, Engine, Error, Event, LogRecord, OperatorFeedback, SensorKind, Signature,
    StateId,
};

pub const MAX_PAGE: usize = 500;
const DURATION_BIN_SECONDS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub status: u16,
    pub body: Value,
}

impl Response {
    fn ok(body: Value) -> Self {
        Response { status: 200, body }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        Response {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn from_engine_error(e: &Error) -> Self {
        let status = match e {
            Error::UnknownAlarm(_) | Error::UnknownModel(_) => 404,
            Error::AlarmClosed(_) => 409,
            _ => 400,
        };
        Response::error(status, e.to_string())
    }
}

/// One alarm in the polling feed. `seq` is gap-free from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmFeedEntry {
    pub seq: u64,
    #[serde(flatten)]
    pub alarm: Alarm,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelView {
    pub model_id: String,
    pub phase: Phase,
    pub created_ts: i64,
    pub last_matched_ts: i64,
    pub training_deadline_ts: Option<i64>,
    pub origin: Option<Signature>,
    pub observations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationStats {
    pub model_id: String,
    pub sensors: std::collections::BTreeMap<SensorKind, Summary>,
    pub duration: Option<Summary>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackBody {
    d: Disposition,
    #[serde(default)]
    ts: Option<i64>,
    #[serde(default)]
    machine: Option<String>,
}

pub struct GatewayCore {
    engine: Engine,
    log: Option<Box<dyn Write + Send>>,
}

impl GatewayCore {
    pub fn new(engine: Engine) -> Self {
        GatewayCore { engine, log: None }
    }

    /// Appends every log record the engine emits to `sink`, one per line.
    pub fn with_log(mut self, sink: impl Write + Send + 'static) -> Self {
        self.log = Some(Box::new(sink));
        self
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn into_engine(self) -> Engine {
        self.engine
    }

    pub fn route_request(&mut self, method: &str, target: &str, body: &[u8]) -> Response {
        let (path, query) = target.split_once('?').unwrap_or((target, ""));
        let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
        match (method, segments.as_slice()) {
            ("POST", ["telemetry"]) => self.post_telemetry(body),
            ("GET", ["alarms"]) => self.get_alarms(query),
            ("POST", ["alarms", id, "feedback"]) => self.post_feedback(id, body),
            ("GET", ["models"]) => self.get_models(),
            ("GET", ["stats", op]) => self.get_stats(op),
            ("GET", ["status"]) => Response::ok(json!(self.engine.current_status())),
            (_, ["telemetry" | "alarms" | "models" | "status"] | ["alarms", _, "feedback"] | ["stats", _]) => {
                Response::error(405, format!("{method} not allowed on {path}"))
            }
            _ => Response::error(404, format!("no route for {path}")),
        }
    }

    fn apply(&mut self, event: Event) -> Result<Vec<LogRecord>, Error> {
        let records = self.engine.handle_event(event)?;
        if let Some(sink) = self.log.as_mut() {
            let mut text = String::new();
            for r in &records {
                text.push_str(&r.to_line());
                text.push('\n');
            }
            let written = sink.write_all(text.as_bytes()).and_then(|_| sink.flush());
            if let Err(e) = written {
                tracing::warn!("alarm log write failed: {e}");
            }
        }
        Ok(records)
    }

    /// The whole body is parsed before anything is applied, so a malformed
    /// line leaves the engine untouched. Lines the engine refuses stop the
    /// batch; earlier lines stay applied and are counted in `accepted`.
    fn post_telemetry(&mut self, body: &[u8]) -> Response {
        let mut messages = Vec::new();
        for (i, line) in body.split(|&b| b == b'\n').enumerate() {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            match parse_message(line) {
                Ok(m) => messages.push(m),
                Err(e) => return Response::error(400, format!("line {}: {e}", i + 1)),
            }
        }
        let total = messages.len();
        let mut raised = Vec::new();
        for (n, m) in messages.into_iter().enumerate() {
            match self.apply(Event::from(m)) {
                Ok(records) => raised.extend(records.into_iter().filter_map(|r| match r {
                    LogRecord::Alarm(a) => Some(a.alarm_id),
                    _ => None,
                })),
                Err(e) => {
                    let mut r = Response::from_engine_error(&e);
                    r.body["accepted"] = json!(n);
                    r.body["alarms"] = json!(raised);
                    return r;
                }
            }
        }
        Response::ok(json!({ "accepted": total, "alarms": raised }))
    }

    fn get_alarms(&self, query: &str) -> Response {
        let mut after = 0u64;
        let mut limit = MAX_PAGE;
        for pair in query.split('&').filter(|p| !p.is_empty()) {
            let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
            match k {
                "after" => match v.parse() {
                    Ok(n) => after = n,
                    Err(_) => return Response::error(400, format!("bad cursor `{v}`")),
                },
                "limit" => match v.parse::<usize>() {
                    Ok(n) if n > 0 => limit = n.min(MAX_PAGE),
                    _ => return Response::error(400, format!("bad limit `{v}`")),
                },
                _ => {}
            }
        }
        let alarms = self.engine.alarms();
        let start = usize::try_from(after).unwrap_or(usize::MAX).min(alarms.len());
        let entries: Vec<AlarmFeedEntry> = alarms[start..]
            .iter()
            .take(limit)
            .enumerate()
            .map(|(i, a)| AlarmFeedEntry {
                seq: (start + i + 1) as u64,
                alarm: a.clone(),
                message: a.message(),
            })
            .collect();
        let next = entries.last().map_or(after, |e| e.seq);
        Response::ok(json!({
            "entries": entries,
            "next": next,
            "more": (next as usize) < alarms.len(),
        }))
    }

    fn post_feedback(&mut self, alarm_id: &str, body: &[u8]) -> Response {
        let Some(alarm) = self.engine.alarm(alarm_id) else {
            return Response::error(404, format!("unknown alarm `{alarm_id}`"));
        };
        let alarm_ts = alarm.ts;
        let parsed = match serde_json::from_slice::<FeedbackBody>(body) {
            Ok(b) => Ok(b),
            Err(_) => match serde_json::from_slice::<Disposition>(body) {
                Ok(d) => Ok(FeedbackBody { d, ts: None, machine: None }),
                Err(_) => std::str::from_utf8(body)
                    .map_err(|e| e.to_string())
                    .and_then(|s| s.parse::<Disposition>().map_err(|e| e.to_string()))
                    .map(|d| FeedbackBody { d, ts: None, machine: None }),
            },
        };
        let fb = match parsed {
            Ok(b) => OperatorFeedback {
                ts: b.ts.unwrap_or_else(|| self.engine.clock().unwrap_or(alarm_ts)),
                alarm_id: alarm_id.to_string(),
                disposition: b.d,
                machine_id: b.machine,
            },
            Err(e) => return Response::error(400, format!("bad feedback body: {e}")),
        };
        match self.apply(Event::Feedback(fb)) {
            Ok(records) => {
                let reward_delta = records.iter().find_map(|r| match r {
                    LogRecord::Disposition { reward_delta, .. } => Some(*reward_delta),
                    _ => None,
                });
                let models: Vec<&LogRecord> = records.iter().filter(|r| matches!(r, LogRecord::Model(_))).collect();
                Response::ok(json!({
                    "alarm": self.engine.alarm(alarm_id),
                    "reward_delta": reward_delta,
                    "model_events": models,
                }))
            }
            Err(e) => Response::from_engine_error(&e),
        }
    }

    fn get_models(&self) -> Response {
        let models: Vec<ModelView> = self
            .engine
            .models()
            .instances()
            .iter()
            .map(|m| ModelView {
                model_id: m.model_id.clone(),
                phase: m.phase,
                created_ts: m.created_ts,
                last_matched_ts: m.last_matched_ts,
                training_deadline_ts: m.training_deadline_ts,
                origin: m.origin,
                observations: m.observations,
            })
            .collect();
        Response::ok(json!({ "models": models }))
    }

    fn get_stats(&self, op: &str) -> Response {
        let op: StateId = match op.parse() {
            Ok(s) => s,
            Err(e) => return Response::error(400, format!("{e}")),
        };
        let config = self.engine.config();
        let models: Vec<OperationStats> = self
            .engine
            .models()
            .active()
            .map(|m| OperationStats {
                model_id: m.model_id.clone(),
                sensors: SensorKind::ALL
                    .iter()
                    .filter_map(|&s| Some((s, m.profile.summarize(op, s, config.bin_width(s)).ok()?)))
                    .collect(),
                duration: m.profile.summarize_duration(op, DURATION_BIN_SECONDS).ok(),
            })
            .collect();
        Response::ok(json!({ "op": op, "models": models }))
    }
}

struct Request {
    method: String,
    target: String,
    body: Vec<u8>,
    reply: oneshot::Sender<Response>,
}

/// Cheap cloneable sender into the task that owns the engine.
#[derive(Clone)]
pub struct GatewayHandle {
    tx: mpsc::Sender<Request>,
}

impl GatewayHandle {
    pub async fn call(&self, method: &str, target: &str, body: impl Into<Vec<u8>>) -> Response {
        let (reply, rx) = oneshot::channel();
        let req = Request {
            method: method.to_string(),
            target: target.to_string(),
            body: body.into(),
            reply,
        };
        if self.tx.send(req).await.is_err() {
            return Response::error(503, "engine stopped");
        }
        rx.await.unwrap_or_else(|_| Response::error(503, "engine stopped"))
    }
}

/// Runs `core` on its own task until every handle is dropped, then returns it.
pub fn spawn(mut core: GatewayCore) -> (GatewayHandle, JoinHandle<GatewayCore>) {
    let (tx, mut rx) = mpsc::channel::<Request>(1024);
    let task = tokio::spawn(async move {
        while let Some(req) = rx.recv().await {
            let resp = core.route_request(&req.method, &req.target, &req.body);
            let _ = req.reply.send(resp);
        }
        core
    });
    (GatewayHandle { tx }, task)
}

async fn forward(State(handle): State<GatewayHandle>, method: Method, uri: Uri, body: Bytes) -> HttpResponse {
    let target = uri.path_and_query().map_or(uri.path(), |pq| pq.as_str());
    let resp = handle.call(method.as_str(), target, body.to_vec()).await;
    let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, axum::Json(resp.body)).into_response()
}

pub fn router(handle: GatewayHandle) -> Router {
    Router::new().fallback(forward).with_state(handle)
}

/// Serves `core` on `listener` until `shutdown` resolves and hands the core
/// back once in-flight requests have drained.
pub async fn serve(
    listener: TcpListener,
    core: GatewayCore,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<GatewayCore> {
    let (handle, task) = spawn(core);
    axum::serve(listener, router(handle))
        .with_graceful_shutdown(shutdown)
        .await?;
    task.await.map_err(std::io::Error::other)
}
