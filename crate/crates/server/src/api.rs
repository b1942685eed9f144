//! HTTP API over a shared [`Snapshot`].
//!
//! Handlers are plain functions from a snapshot and request data to a status
//! and a stable JSON body; the axum layer only moves bytes.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};

use knobs_core::concept_map::MappingKind;
use knobs_core::nested;
use knobs_core::report;
use knobs_core::steering::{self, SteeringDirective};
use knobs_core::Error;

use crate::error::{CliError, CliResult};
use crate::snapshot::Snapshot;

/// Tags listed per neuron by `/knobs`.
pub const KNOB_TOP_TAGS: usize = 5;
/// Default cap on `/items` matches.
pub const ITEMS_LIMIT: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request".into(),
            message: message.into(),
        }
    }

    pub fn unprocessable(code: &str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn body(&self) -> String {
        report::to_stable_json(&serde_json::json!({
            "error": {"code": self.code, "message": self.message}
        }))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Config(_) => StatusCode::BAD_REQUEST,
            Error::Dimension(_) | Error::DegenerateProfile | Error::NoSegment => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let cli = CliError::from(e);
        Self {
            status,
            code: cli.code.into(),
            message: cli.message,
        }
    }
}

pub type ApiResult = Result<String, ApiError>;

fn ok<T: Serialize>(value: &T) -> ApiResult {
    Ok(report::to_stable_json(value))
}

#[derive(Debug, Serialize)]
struct Health<'a> {
    status: &'a str,
    model: &'a str,
    d_sparse: usize,
    config_hash: &'a str,
}

pub fn health(s: &Snapshot) -> ApiResult {
    ok(&Health {
        status: "ok",
        model: s.cfae.name(),
        d_sparse: s.d_sparse(),
        config_hash: &s.config_hash,
    })
}

#[derive(Debug, Serialize)]
struct TagScore<'a> {
    tag: &'a str,
    score: f64,
}

#[derive(Debug, Serialize)]
struct Knob<'a> {
    neuron: u32,
    distinctive_tag: Option<&'a str>,
    top_tags: Vec<TagScore<'a>>,
}

/// Live neurons in id order with their best tags, at most `limit` of them.
pub fn knobs(s: &Snapshot, limit: Option<usize>) -> ApiResult {
    let map = &s.map;
    let out: Vec<Knob<'_>> = map
        .live_neurons
        .iter()
        .take(limit.unwrap_or(usize::MAX))
        .map(|&n| Knob {
            neuron: n,
            distinctive_tag: map.maps.distinctive_tag_for_neuron[n as usize].map(|t| map.tags[t as usize].as_str()),
            top_tags: map
                .top_tags(n, KNOB_TOP_TAGS)
                .into_iter()
                .map(|(t, score)| TagScore {
                    tag: &map.tags[t as usize],
                    score,
                })
                .collect(),
        })
        .collect();
    ok(&out)
}

#[derive(Debug, Serialize)]
struct TagHit<'a> {
    tag: &'a str,
    unique_neuron: Option<u32>,
    representative_neuron: Option<u32>,
}

/// Tags containing `query`, case-insensitively, in tag index order.
pub fn tags(s: &Snapshot, query: &str) -> ApiResult {
    let q = query.to_lowercase();
    let out: Vec<TagHit<'_>> = s
        .map
        .tags
        .iter()
        .enumerate()
        .filter(|(_, t)| t.to_lowercase().contains(&q))
        .map(|(t, tag)| TagHit {
            tag,
            unique_neuron: s.map.neuron_for_tag(t as u32, MappingKind::Unique),
            representative_neuron: s.map.neuron_for_tag(t as u32, MappingKind::Representative),
        })
        .collect();
    ok(&out)
}

#[derive(Debug, Serialize)]
struct ItemHit<'a> {
    item: u32,
    title: &'a str,
}

pub fn items(s: &Snapshot, query: &str, limit: Option<usize>) -> ApiResult {
    let q = query.to_lowercase();
    let out: Vec<ItemHit<'_>> = s
        .titles
        .iter()
        .enumerate()
        .filter(|(_, t)| t.to_lowercase().contains(&q))
        .take(limit.unwrap_or(ITEMS_LIMIT))
        .map(|(i, title)| ItemHit { item: i as u32, title })
        .collect();
    ok(&out)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Boost {
    #[serde(default)]
    pub neuron: Option<u32>,
    #[serde(default)]
    pub tag: Option<String>,
    pub weight: f64,
}

fn default_n() -> usize {
    20
}

fn default_true() -> bool {
    true
}

fn default_mapping() -> MappingKind {
    MappingKind::Representative
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendRequest {
    pub history: Vec<u32>,
    #[serde(default)]
    pub boosts: Vec<Boost>,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_true")]
    pub mask_seen: bool,
    #[serde(default = "default_mapping")]
    pub mapping: MappingKind,
    #[serde(default)]
    pub include_baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedItem {
    pub item: u32,
    pub title: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecommendResponse {
    pub items: Vec<RankedItem>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Vec<RankedItem>>,
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

/// Checks the request shape and resolves boosts to a directive. Empty boosts
/// and `alpha = 0` both mean "no steering".
pub fn resolve_directive(s: &Snapshot, req: &RecommendRequest) -> Result<Option<SteeringDirective>, ApiError> {
    if !(0.0..=1.0).contains(&req.alpha) {
        return Err(ApiError::bad_request(format!("alpha must lie in [0, 1], got {}", req.alpha)));
    }
    if req.n == 0 {
        return Err(ApiError::bad_request("n must be positive"));
    }
    if req.boosts.is_empty() {
        return Ok(None);
    }
    let mut resolved = Vec::with_capacity(req.boosts.len());
    for b in &req.boosts {
        if !(b.weight >= 0.0 && b.weight.is_finite()) {
            return Err(ApiError::bad_request("boost weights must be finite and non-negative"));
        }
        let neuron = match (b.neuron, &b.tag) {
            (Some(j), None) => {
                if j as usize >= s.d_sparse() {
                    return Err(ApiError::unprocessable(
                        "dimension_mismatch",
                        format!("neuron {j} out of range for width {}", s.d_sparse()),
                    ));
                }
                j
            }
            (None, Some(tag)) => {
                let t = s
                    .map
                    .tag_index(tag)
                    .ok_or_else(|| ApiError::unprocessable("unknown_tag", format!("unknown tag `{tag}`")))?;
                s.map.neuron_for_tag(t, req.mapping).ok_or_else(|| {
                    ApiError::unprocessable(
                        "unmapped_tag",
                        format!("tag `{tag}` has no {} neuron", req.mapping.name()),
                    )
                })?
            }
            _ => return Err(ApiError::bad_request("each boost needs exactly one of `neuron` or `tag`")),
        };
        resolved.push((neuron, b.weight));
    }
    let sum: f64 = resolved.iter().map(|b| b.1).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(ApiError::bad_request(format!("boost weights must sum to 1, got {sum}")));
    }
    if req.alpha == 0.0 {
        return Ok(None);
    }
    // Two tags may resolve to one neuron; merge without rescaling.
    let mut merged: std::collections::BTreeMap<u32, f64> = Default::default();
    for (j, w) in resolved {
        *merged.entry(j).or_default() += w;
    }
    Ok(Some(SteeringDirective::new(merged.into_iter().collect(), req.alpha)?))
}

fn ranked(s: &Snapshot, list: Vec<(u32, f64)>) -> Vec<RankedItem> {
    list.into_iter()
        .map(|(item, score)| RankedItem {
            item,
            title: s.titles[item as usize].clone(),
            score,
        })
        .collect()
}

pub fn recommend_request(s: &Snapshot, req: &RecommendRequest) -> Result<RecommendResponse, ApiError> {
    let directive = resolve_directive(s, req)?;
    s.cfae.check_items(&req.history)?;
    let list = steering::recommend(&s.cfae, Some(&s.sae), &req.history, directive.as_ref(), req.n, req.mask_seen)?;
    let baseline = if req.include_baseline {
        let base = steering::recommend(&s.cfae, Some(&s.sae), &req.history, None, req.n, req.mask_seen)?;
        Some(ranked(s, base))
    } else {
        None
    };
    Ok(RecommendResponse {
        items: ranked(s, list),
        baseline,
    })
}

pub fn recommend(s: &Snapshot, body: &[u8]) -> ApiResult {
    let req: RecommendRequest = parse(body)?;
    ok(&recommend_request(s, &req)?)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncodeRequest {
    history: Vec<u32>,
}

#[derive(Debug, Serialize)]
struct Activation {
    neuron: u32,
    activation: f64,
}

pub fn encode(s: &Snapshot, body: &[u8]) -> ApiResult {
    let req: EncodeRequest = parse(body)?;
    s.cfae.check_items(&req.history)?;
    let code = nested::user_code(&s.cfae, &s.sae, &req.history);
    let code: Vec<Activation> = code
        .entries()
        .iter()
        .map(|&(neuron, activation)| Activation { neuron, activation })
        .collect();
    ok(&serde_json::json!({ "code": code }))
}

fn reply(result: ApiResult) -> Response {
    let (status, body) = match result {
        Ok(body) => (StatusCode::OK, body),
        Err(e) => (e.status, e.body()),
    };
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

#[derive(Debug, Default, Deserialize)]
struct SearchParams {
    #[serde(default)]
    query: String,
    #[serde(default)]
    limit: Option<usize>,
}

type Shared = State<Arc<Snapshot>>;

async fn get_health(State(s): Shared) -> Response {
    reply(health(&s))
}

async fn get_knobs(State(s): Shared, Query(p): Query<SearchParams>) -> Response {
    reply(knobs(&s, p.limit))
}

async fn get_tags(State(s): Shared, Query(p): Query<SearchParams>) -> Response {
    reply(tags(&s, &p.query))
}

async fn get_items(State(s): Shared, Query(p): Query<SearchParams>) -> Response {
    reply(items(&s, &p.query, p.limit))
}

async fn post_recommend(State(s): Shared, body: Bytes) -> Response {
    reply(recommend(&s, &body))
}

async fn post_encode(State(s): Shared, body: Bytes) -> Response {
    reply(encode(&s, &body))
}

async fn fallback() -> Response {
    reply(Err(ApiError {
        status: StatusCode::NOT_FOUND,
        code: "not_found".into(),
        message: "no such route".into(),
    }))
}

pub fn router(snapshot: Arc<Snapshot>) -> Router {
    Router::new()
        .route("/health", get(get_health))
        .route("/knobs", get(get_knobs))
        .route("/tags", get(get_tags))
        .route("/items", get(get_items))
        .route("/recommend", post(post_recommend))
        .route("/encode", post(post_encode))
        .fallback(fallback)
        .with_state(snapshot)
}

/// Binds `addr` and serves until interrupted.
pub fn serve(snapshot: Snapshot, addr: &str) -> CliResult<()> {
    let addr: SocketAddr = addr
        .parse()
        .map_err(|e| CliError::config(format!("invalid bind address `{addr}`: {e}")))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::other(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::startup(format!("cannot bind {addr}: {e}")))?;
        log::info!("serving on {addr}");
        axum::serve(listener, router(Arc::new(snapshot)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::other(e.to_string()))
    })
}
