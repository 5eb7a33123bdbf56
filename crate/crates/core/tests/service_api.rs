mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use slt_core::pipeline::ResourcePaths;
use slt_core::service::{router, AppState, ServiceConfig};
use slt_core::treebanker::{FIXTURE_FIRST, FIXTURE_SECOND};

struct Api {
    app: axum::Router,
    _dir: tempfile::TempDir,
    data: std::path::PathBuf,
}

impl Api {
    fn new() -> Api {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ServiceConfig {
            data_dir: dir.path().to_path_buf(),
            resources: ResourcePaths {
                grammar: common::fixture("atis.slt"),
                lexicon: Some(common::fixture("bilingual.lex")),
                prefs: Some(common::fixture("prefs.jsonl")),
                ..ResourcePaths::default()
            },
            corpus: Some(common::fixture("corpus.txt")),
            snapshot_every: 3,
            ..ServiceConfig::default()
        };
        let state = AppState::load(cfg).unwrap();
        Api {
            app: router(state),
            data: dir.path().to_path_buf(),
            _dir: dir,
        }
    }

    async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.raw(method, uri, body).await;
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    async fn raw(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call("GET", uri, None).await
    }

    async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.call("POST", uri, Some(body)).await
    }
}

#[tokio::test]
async fn health_reports_grammar() {
    let api = Api::new();
    let (s, v) = api.get("/health").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["grammar"], common::grammar().id());
}

#[tokio::test]
async fn parse_returns_analyses_and_fragments() {
    let api = Api::new();
    let (s, v) = api.post("/parse", json!({"text": "show me the flights to boston"})).await;
    assert_eq!(s, StatusCode::OK);
    assert!(!v["analyses"].as_array().unwrap().is_empty());
    let last = v["stages"].as_array().unwrap().last().unwrap().clone();
    assert_eq!(last["fragments"][0]["words"], "show me the flights to boston");

    let (s, v) = api.post("/parse", json!({})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "validation");
}

#[tokio::test]
async fn parse_accepts_a_lattice() {
    let api = Api::new();
    let lattice = json!({"vertices": 3, "edges": [
        {"from": 0, "to": 1, "word": "cheap", "acoustic": -0.1},
        {"from": 1, "to": 2, "word": "flights", "acoustic": -0.2},
        {"from": 1, "to": 2, "word": "flight", "acoustic": -0.9}
    ]});
    let (s, v) = api.post("/parse", json!({"lattice": lattice})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["stages"][0]["stage"], "raw");
    let last = v["stages"].as_array().unwrap().last().unwrap().clone();
    assert_eq!(last["fragments"][0]["words"], "cheap flights");
}

#[tokio::test]
async fn translate_streams_iterations() {
    let api = Api::new();
    let (s, v) = api
        .post("/translate", json!({"text": "show me the cheap flights", "time_limit": 5000}))
        .await;
    assert_eq!(s, StatusCode::OK);
    let it = v["iterations"].as_array().unwrap();
    assert_eq!(it[0]["stage"], "raw");
    assert_eq!(it.last().unwrap()["text"], "montrez moi le vols economique");

    let (s, _) = api.post("/translate", json!({"text": "cheap flights", "time_limit": 0})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn judgment_example_and_conflicts() {
    let api = Api::new();
    let (s, v) = api.get("/sentences/42/discriminants").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["analyses"], 154);
    assert!(v["discriminants"].as_array().unwrap().iter().any(|d| d["key"] == FIXTURE_FIRST));

    let (s, v) = api
        .post("/sentences/42/judgments", json!({"discriminant": FIXTURE_FIRST, "verdict": "correct"}))
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["remaining"], 20);
    assert!(v["propagated"].is_array());

    // judging it again conflicts and carries the current view
    let (s, v) = api
        .post("/sentences/42/judgments", json!({"discriminant": FIXTURE_FIRST, "verdict": "correct"}))
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "conflict");
    assert_eq!(v["detail"]["remaining"], 20);

    let (s, _) = api
        .post(
            "/sentences/42/judgments",
            json!({"discriminant": FIXTURE_SECOND, "verdict": "correct", "expected_version": 0}),
        )
        .await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (s, _) = api
        .post("/sentences/42/judgments", json!({"discriminant": "NP:no such thing", "verdict": "correct"}))
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, v) = api.post("/sentences/42/undo", json!({})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["remaining"], 154);
}

#[tokio::test]
async fn request_ids_replay_the_first_response() {
    let api = Api::new();
    let body = json!({"discriminant": FIXTURE_FIRST, "verdict": "correct", "request_id": "abc"});
    let (_, a) = api.post("/sentences/42/judgments", body.clone()).await;
    let (s, b) = api.post("/sentences/42/judgments", body).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(a, b);
    let (_, v) = api.get("/sentences/42").await;
    assert_eq!(v["version"], 1);
}

#[tokio::test]
async fn resolve_as_set_records_two() {
    let api = Api::new();
    api.post("/sentences/42/judgments", json!({"discriminant": FIXTURE_FIRST, "verdict": "correct"}))
        .await;
    let (_, v) = api
        .post("/sentences/42/judgments", json!({"discriminant": FIXTURE_SECOND, "verdict": "correct"}))
        .await;
    assert_eq!(v["remaining"], 2);
    assert_eq!(v["status"], "resolved-set");

    let (s, _) = api.post("/sentences/42/resolve", json!({"mode": "unique-required"})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, v) = api.post("/sentences/42/resolve", json!({"mode": "accept-set"})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["approved"].as_array().unwrap().len(), 2);

    let (s, _) = api.post("/sentences/42/undo", json!({})).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (_, v) = api.get("/sentences?status=resolved").await;
    assert_eq!(v["sentences"][0]["id"], 42);
    let (_, v) = api.get("/sentences?status=open").await;
    assert!(v["sentences"].as_array().unwrap().is_empty());
    let (s, _) = api.get("/sentences?status=bogus").await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn sentences_lifecycle_and_training() {
    let api = Api::new();
    let (s, _) = api.get("/sentences/7").await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let mut ids = Vec::new();
    for text in ["show me the flights to boston on monday", "list the cheap fares from denver"] {
        let (s, v) = api.post("/sentences", json!({"text": text})).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        ids.push(v["id"].as_u64().unwrap());
    }
    let (s, _) = api.post("/sentences", json!({"text": "again", "id": ids[0]})).await;
    assert_eq!(s, StatusCode::CONFLICT);

    // annotate both by accepting whatever is presented first
    for id in &ids {
        loop {
            let (_, v) = api.get(&format!("/sentences/{id}/discriminants")).await;
            if v["status"] != "open" {
                break;
            }
            let d = v["discriminants"]
                .as_array()
                .unwrap()
                .iter()
                .find(|d| d["verdict"].is_null())
                .unwrap()["key"]
                .clone();
            let (s, _) = api
                .post(&format!("/sentences/{id}/judgments"), json!({"discriminant": d, "verdict": "correct"}))
                .await;
            assert_eq!(s, StatusCode::OK);
        }
        let (s, v) = api.post(&format!("/sentences/{id}/resolve"), json!({"mode": "accept-set"})).await;
        assert_eq!(s, StatusCode::OK, "{v}");
    }
    let (_, v) = api.get(&format!("/sentences/{}", ids[0])).await;
    assert_eq!(v["state"]["approved"].as_array().unwrap().len(), 1);

    let (s, v) = api.get("/treebank/export").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["entries"].as_array().unwrap().len(), 2);

    let (s, v) = api.post("/train/prune", json!({"alpha": 0.5, "corpus": "svc"})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["report"]["used"], 2);
    assert!(api.data.join("prune_model.jsonl").exists());
    let (s, _) = api.post("/train/prune", json!({"alpha": -1.0})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, v) = api.post("/train/specialize", json!({"cuts": ["NP"], "min_freq": 1})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["derivations"], 2);
    let spec = std::fs::read_to_string(api.data.join("specialized.slt")).unwrap();
    assert!(spec.contains("macro m"));

    let (s, v) = api.get("/state").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["sentences"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn classes_edits_and_report() {
    let api = Api::new();
    let (s, v) = api.get("/classes").await;
    assert_eq!(s, StatusCode::OK);
    let classes = v["classes"].as_array().unwrap().clone();
    let segments = v["segments"].as_u64().unwrap();
    assert!(segments > 500);
    let big = classes.iter().max_by_key(|c| c["size"].as_u64()).unwrap();
    let id = big["id"].clone();
    let member = big["members"][1]["ref"].clone();

    let (s, v) = api
        .post("/classes/edits", json!({"edits": [{"op": "designate", "class": id, "member": member}]}))
        .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let c = v["classes"].as_array().unwrap().iter().find(|c| c["id"] == id).unwrap().clone();
    assert_eq!(c["representative"], member);

    let (s, v) = api
        .post("/classes/edits", json!({"edits": [{"op": "split", "class": id, "members": [member]}]}))
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["classes"].as_array().unwrap().len(), classes.len() + 1);
    let total: u64 = v["classes"].as_array().unwrap().iter().map(|c| c["size"].as_u64().unwrap()).sum();
    assert_eq!(total, segments);

    // a failing batch leaves the partition untouched
    let (s, _) = api
        .post(
            "/classes/edits",
            json!({"edits": [{"op": "merge", "classes": [id]}, {"op": "move", "member": member, "to": "c999999"}]}),
        )
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, after) = api.get("/classes").await;
    assert_eq!(after["classes"].as_array().unwrap().len(), classes.len() + 1);

    let (s, v) = api.get("/subcorpus/report").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["segments"], segments);
    let (s, tsv) = api.raw("GET", "/subcorpus/report?format=tsv", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(String::from_utf8(tsv).unwrap().lines().count() > 2);
    let (s, _) = api.get("/subcorpus/report?format=xml").await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}
