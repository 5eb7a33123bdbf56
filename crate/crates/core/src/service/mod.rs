//! REST facade over parsing, translation, corpus classes and annotation
//! sessions.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{group_by_tagsequence, lexicon_tagger, split_utterances, ClassStore, Edit, SplitConfig};
use crate::ebl::{specialize, CutCriteria};
use crate::lattice::{linear_lattice, Lattice};
use crate::pipeline::{treebank_derivations, treebank_id, ResourcePaths, Resources};
use crate::pruner::train;
use crate::store::{Op, StoreError, Workbench};
use crate::treebanker::{ResolveMode, Verdict};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    pub resources: ResourcePaths,
    /// Utterances (one per line) for the corpus class store.
    pub corpus: Option<PathBuf>,
    pub time_limit_ms: u64,
    /// Install the synthetic 154-analysis sentence.
    pub fixture: bool,
    /// Journal records between snapshots; 0 disables snapshots.
    pub snapshot_every: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("slt-data"),
            resources: ResourcePaths::default(),
            corpus: None,
            time_limit_ms: 2000,
            fixture: true,
            snapshot_every: 100,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(self.time_limit_ms > 0, "time_limit_ms must be positive");
        std::fs::create_dir_all(&self.data_dir).with_context(|| format!("creating {}", self.data_dir.display()))?;
        let probe = self.data_dir.join(".write-test");
        std::fs::write(&probe, b"ok").with_context(|| format!("{} is not writable", self.data_dir.display()))?;
        std::fs::remove_file(&probe)?;
        Ok(())
    }
}

#[derive(Clone)]
pub struct AppState {
    res: Arc<Resources>,
    wb: Arc<Mutex<Workbench>>,
    cfg: Arc<ServiceConfig>,
}

impl AppState {
    pub fn new(res: Resources, wb: Workbench, cfg: ServiceConfig) -> Self {
        AppState {
            res: Arc::new(res),
            wb: Arc::new(Mutex::new(wb)),
            cfg: Arc::new(cfg),
        }
    }

    /// Loads resources and recovers the workbench from the data directory.
    pub fn load(cfg: ServiceConfig) -> anyhow::Result<Self> {
        cfg.validate()?;
        let res = Resources::load(&cfg.resources)?;
        let classes = match &cfg.corpus {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let lines: Vec<String> = text.lines().map(String::from).collect();
                let tagger = lexicon_tagger(&res.grammar);
                group_by_tagsequence(split_utterances(&lines, &SplitConfig::default(), &tagger))
            }
            None => group_by_tagsequence(Vec::new()),
        };
        let wb = Workbench::open(
            &cfg.data_dir,
            Arc::new(res.grammar.clone()),
            classes,
            cfg.fixture,
            cfg.snapshot_every,
        )?;
        Ok(AppState::new(res, wb, cfg))
    }

    fn wb(&self) -> MutexGuard<'_, Workbench> {
        self.wb.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    detail: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            detail: Value::Null,
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"code": self.code, "message": self.message, "detail": self.detail});
        (self.status, Json(body)).into_response()
    }
}

fn store_error(e: StoreError, wb: &Workbench, sentence: Option<u64>) -> ApiError {
    let current = sentence.and_then(|id| wb.sentence(id)).map(|s| s.discriminants());
    match e {
        StoreError::UnknownSentence(_) => ApiError::not_found(e.to_string()),
        e if e.is_conflict() => ApiError::new(StatusCode::CONFLICT, "conflict", e.to_string())
            .with_detail(current.unwrap_or(Value::Null)),
        e @ (StoreError::Io(_) | StoreError::Corrupt { .. } | StoreError::Version(_)) => ApiError::internal(e),
        e => ApiError::invalid(e.to_string()),
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

/// Parses a JSON body; an empty body reads as `{}`.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    let slice: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { bytes };
    serde_json::from_slice(slice).map_err(|e| ApiError::invalid(format!("bad request body: {e}")))
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Deserialize)]
struct InputBody {
    text: Option<String>,
    lattice: Option<Lattice>,
    /// Milliseconds.
    time_limit: Option<u64>,
}

impl InputBody {
    fn lattice(&self) -> Result<Lattice, ApiError> {
        match (&self.text, &self.lattice) {
            (Some(t), None) => linear_lattice(t, 0.0).map_err(|e| ApiError::invalid(e.to_string())),
            (None, Some(l)) => Ok(l.clone()),
            _ => Err(ApiError::invalid("give exactly one of `text` or `lattice`")),
        }
    }
}

async fn blocking<F>(f: F) -> ApiResult
where
    F: FnOnce() -> ApiResult + Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

async fn health(State(st): State<AppState>) -> Json<Value> {
    Json(json!({"status": "ok", "grammar": st.res.grammar.id()}))
}

async fn parse(State(st): State<AppState>, raw: Bytes) -> ApiResult {
    let input: InputBody = body(&raw)?;
    let lattice = input.lattice()?;
    blocking(move || {
        let out = st.res.parse(&lattice).map_err(|e| ApiError::invalid(e.to_string()))?;
        Ok(Json(serde_json::to_value(out).map_err(ApiError::internal)?))
    })
    .await
}

async fn translate(State(st): State<AppState>, raw: Bytes) -> ApiResult {
    let input: InputBody = body(&raw)?;
    let lattice = input.lattice()?;
    let ms = input.time_limit.unwrap_or(st.cfg.time_limit_ms);
    if ms == 0 {
        return Err(ApiError::invalid("time_limit must be positive"));
    }
    blocking(move || {
        let it = st
            .res
            .translate(&lattice, Duration::from_millis(ms))
            .map_err(|e| ApiError::invalid(e.to_string()))?;
        Ok(Json(json!({"iterations": it})))
    })
    .await
}

#[derive(Deserialize)]
struct StatusQuery {
    status: Option<String>,
}

async fn list_sentences(State(st): State<AppState>, Query(q): Query<StatusQuery>) -> ApiResult {
    let filter = match q.status.as_deref() {
        None => None,
        Some(s) => Some(Workbench::status_filter(s).ok_or_else(|| ApiError::invalid(format!("unknown status `{s}`")))?),
    };
    let wb = st.wb();
    let rows: Vec<Value> = wb
        .sentences()
        .filter(|s| filter.as_ref().is_none_or(|f| f.contains(&s.session.status())))
        .map(|s| s.summary())
        .collect();
    Ok(Json(json!({"sentences": rows})))
}

#[derive(Deserialize)]
struct AddSentenceBody {
    text: String,
    id: Option<u64>,
    request_id: Option<String>,
}

async fn add_sentence(State(st): State<AppState>, raw: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let b: AddSentenceBody = body(&raw)?;
    let r = tokio::task::spawn_blocking(move || {
        let mut wb = st.wb();
        let id = b.id.unwrap_or_else(|| wb.next_sentence_id());
        wb.execute(Some(id), Op::AddSentence { id, text: b.text }, b.request_id, now_ms(), None)
            .map_err(|e| store_error(e, &wb, None))
    })
    .await
    .map_err(ApiError::internal)??;
    Ok((StatusCode::CREATED, Json(r)))
}

async fn get_sentence(State(st): State<AppState>, Path(id): Path<u64>) -> ApiResult {
    let wb = st.wb();
    let s = wb.sentence(id).ok_or_else(|| ApiError::not_found(format!("unknown sentence {id}")))?;
    let mut v = s.summary();
    v["state"] = serde_json::to_value(s.state()).map_err(ApiError::internal)?;
    Ok(Json(v))
}

async fn discriminants(State(st): State<AppState>, Path(id): Path<u64>) -> ApiResult {
    let wb = st.wb();
    let s = wb.sentence(id).ok_or_else(|| ApiError::not_found(format!("unknown sentence {id}")))?;
    Ok(Json(s.discriminants()))
}

#[derive(Deserialize)]
struct MutationMeta {
    request_id: Option<String>,
    expected_version: Option<u64>,
    timestamp: Option<u64>,
}

#[derive(Deserialize)]
struct JudgmentBody {
    discriminant: String,
    verdict: Verdict,
    #[serde(flatten)]
    meta: MutationMeta,
}

fn mutate(st: &AppState, id: u64, op: Op, meta: MutationMeta) -> ApiResult {
    let mut wb = st.wb();
    wb.execute(
        Some(id),
        op,
        meta.request_id,
        meta.timestamp.unwrap_or_else(now_ms),
        meta.expected_version,
    )
    .map(Json)
    .map_err(|e| store_error(e, &wb, Some(id)))
}

async fn judge(State(st): State<AppState>, Path(id): Path<u64>, raw: Bytes) -> ApiResult {
    let b: JudgmentBody = body(&raw)?;
    let op = Op::Judge {
        discriminant: b.discriminant,
        verdict: b.verdict,
    };
    blocking(move || mutate(&st, id, op, b.meta)).await
}

async fn undo(State(st): State<AppState>, Path(id): Path<u64>, raw: Bytes) -> ApiResult {
    let meta: MutationMeta = body(&raw)?;
    blocking(move || mutate(&st, id, Op::Undo, meta)).await
}

#[derive(Deserialize)]
struct ResolveBody {
    mode: ResolveMode,
    #[serde(flatten)]
    meta: MutationMeta,
}

async fn resolve(State(st): State<AppState>, Path(id): Path<u64>, raw: Bytes) -> ApiResult {
    let b: ResolveBody = body(&raw)?;
    blocking(move || mutate(&st, id, Op::Resolve { mode: b.mode }, b.meta)).await
}

fn class_view(classes: &ClassStore) -> Value {
    let rows: Vec<Value> = classes
        .classes
        .iter()
        .map(|c| {
            let members: Vec<Value> = c
                .members
                .iter()
                .map(|m| json!({"ref": m, "text": classes.segment_text(*m)}))
                .collect();
            json!({
                "id": c.id,
                "tag_sequence": c.tag_sequence,
                "size": c.members.len(),
                "representative": c.representative,
                "default_representative": classes.default_representative(c),
                "provenance": c.provenance,
                "members": members,
            })
        })
        .collect();
    json!({"segments": classes.segment_count(), "classes": rows})
}

async fn get_classes(State(st): State<AppState>) -> ApiResult {
    Ok(Json(class_view(st.wb().classes())))
}

#[derive(Deserialize)]
struct EditsBody {
    edits: Vec<Edit>,
    request_id: Option<String>,
}

async fn class_edits(State(st): State<AppState>, raw: Bytes) -> ApiResult {
    let b: EditsBody = body(&raw)?;
    blocking(move || {
        let mut wb = st.wb();
        wb.execute(None, Op::ClassEdits { edits: b.edits }, b.request_id, now_ms(), None)
            .map_err(|e| store_error(e, &wb, None))?;
        Ok(Json(class_view(wb.classes())))
    })
    .await
}

#[derive(Deserialize)]
struct ReportQuery {
    format: Option<String>,
}

async fn report(State(st): State<AppState>, Query(q): Query<ReportQuery>) -> Result<Response, ApiError> {
    let r = st.wb().classes().report();
    match q.format.as_deref() {
        Some("tsv") => Ok(([(header::CONTENT_TYPE, "text/tab-separated-values")], r.to_tsv()).into_response()),
        None | Some("json") => Ok(Json(r).into_response()),
        Some(f) => Err(ApiError::invalid(format!("unknown format `{f}`"))),
    }
}

/// Every session and the class store, as replayed from the journal.
async fn full_state(State(st): State<AppState>) -> ApiResult {
    Ok(Json(st.wb().dump()))
}

async fn export(State(st): State<AppState>) -> ApiResult {
    Ok(Json(json!({"entries": st.wb().export()})))
}

#[derive(Deserialize)]
struct TrainPruneBody {
    alpha: Option<f64>,
    corpus: Option<String>,
}

async fn train_prune(State(st): State<AppState>, raw: Bytes) -> ApiResult {
    let b: TrainPruneBody = body(&raw)?;
    let alpha = b.alpha.unwrap_or(1.0);
    if !(alpha > 0.0) {
        return Err(ApiError::invalid("alpha must be positive"));
    }
    blocking(move || {
        let entries = st.wb().export();
        if entries.is_empty() {
            return Err(ApiError::invalid("no resolved sentences to train on"));
        }
        let corpus = b.corpus.unwrap_or_else(|| treebank_id(&entries));
        let (model, report) = train(&entries, &st.res.grammar, &corpus, alpha);
        let path = st.cfg.data_dir.join("prune_model.jsonl");
        std::fs::write(&path, model.to_jsonl()).map_err(ApiError::internal)?;
        Ok(Json(json!({
            "path": path,
            "discriminants": model.stats.len(),
            "report": report,
        })))
    })
    .await
}

#[derive(Deserialize)]
struct SpecializeBody {
    cuts: Option<Vec<String>>,
    min_freq: Option<u32>,
    lexical_frontier: Option<bool>,
}

async fn train_specialize(State(st): State<AppState>, raw: Bytes) -> ApiResult {
    let b: SpecializeBody = body(&raw)?;
    blocking(move || {
        let entries = st.wb().export();
        let (derivs, skipped) = treebank_derivations(&entries, &st.res.grammar, &st.res.parse.unknown_tag);
        if derivs.is_empty() {
            return Err(ApiError::invalid("no approved derivations to specialize from").with_detail(json!(skipped)));
        }
        let mut crit = CutCriteria::default();
        if let Some(c) = b.cuts {
            crit.cut_categories = c.into_iter().collect();
        }
        crit.min_freq = b.min_freq.unwrap_or(1);
        crit.include_lexical_frontier = b.lexical_frontier.unwrap_or(false);
        let spec = specialize(&derivs, &st.res.grammar, &treebank_id(&entries), &crit)
            .map_err(|e| ApiError::invalid(e.to_string()))?;
        let path = st.cfg.data_dir.join("specialized.slt");
        std::fs::write(&path, spec.serialize(&st.res.grammar)).map_err(ApiError::internal)?;
        Ok(Json(json!({
            "path": path,
            "macros": spec.macros.len(),
            "derivations": derivs.len(),
            "skipped": skipped,
        })))
    })
    .await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/parse", post(parse))
        .route("/translate", post(translate))
        .route("/sentences", get(list_sentences).post(add_sentence))
        .route("/sentences/{id}", get(get_sentence))
        .route("/sentences/{id}/discriminants", get(discriminants))
        .route("/sentences/{id}/judgments", post(judge))
        .route("/sentences/{id}/undo", post(undo))
        .route("/sentences/{id}/resolve", post(resolve))
        .route("/classes", get(get_classes))
        .route("/classes/edits", post(class_edits))
        .route("/subcorpus/report", get(report))
        .route("/treebank/export", get(export))
        .route("/state", get(full_state))
        .route("/train/prune", post(train_prune))
        .route("/train/specialize", post(train_specialize))
        .with_state(state)
}

/// Binds, prints `listening on <addr>` and serves until ctrl-c.
pub async fn serve(cfg: ServiceConfig) -> anyhow::Result<()> {
    let listen = cfg.listen.clone();
    let state = tokio::task::spawn_blocking(move || AppState::load(cfg)).await??;
    let listener = tokio::net::TcpListener::bind(&listen)
        .await
        .with_context(|| format!("binding {listen}"))?;
    let addr: SocketAddr = listener.local_addr()?;
    println!("listening on {addr}");
    log::info!("serving on {addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
