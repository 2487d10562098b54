use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use riskxai::{
    generate_synthetic_cohort, save_model, train_forest, CardConfig, CohortSchema, Dataset, GeneratorConfig,
    Hyperparams, RandomForest,
};
use riskxai_cli::{router, App, ServiceConfig, Snapshot};

struct Fixture {
    _dir: tempfile::TempDir,
    data_path: PathBuf,
    model_a: PathBuf,
    model_b: PathBuf,
    data: Dataset,
    a: RandomForest,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let schema = Arc::new(CohortSchema::default_surgical());
        let data = generate_synthetic_cohort(schema, &GeneratorConfig::default_surgical(), 11, 1500)
            .unwrap()
            .dataset;
        let hp = Hyperparams {
            n_trees: 20,
            max_depth: 8,
            ..Default::default()
        };
        let a: RandomForest = train_forest(&data, &hp, 1).unwrap();
        let b: RandomForest = train_forest(&data, &hp, 2).unwrap();
        let data_path = dir.path().join("cohort.csv");
        let model_a = dir.path().join("a.json");
        let model_b = dir.path().join("b.json");
        data.save_csv(&data_path).unwrap();
        save_model(&a, &model_a).unwrap();
        save_model(&b, &model_b).unwrap();
        Fixture {
            _dir: dir,
            data_path,
            model_a,
            model_b,
            data,
            a,
        }
    })
}

fn config() -> ServiceConfig {
    let mut card = CardConfig::default();
    card.importance.sample_size = 200;
    card.generated_at = Some("2026-01-01T00:00:00Z".into());
    ServiceConfig { workers: 2, card }
}

fn app() -> Arc<App> {
    let f = fixture();
    let snap = Snapshot::new(f.a.clone(), Some(f.data.clone()), config().card).unwrap();
    App::new(snap, config())
}

async fn call(app: &Arc<App>, method: &str, path: &str, body: Option<Value>) -> (StatusCode, Option<String>, Value) {
    let req = Request::builder().method(method).uri(path);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(app.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let fp = resp
        .headers()
        .get("x-model-fingerprint")
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, fp, v)
}

/// Record `i` as an inline `{feature: value}` object.
fn inline(i: usize) -> Value {
    let f = fixture();
    Value::Object(f.data.records[i].to_json(&f.a.schema))
}

fn id(i: usize) -> String {
    fixture().data.records[i].id.clone()
}

/// First record whose `prolonged_mv` risk is at least `t`.
fn high_risk(t: f64) -> String {
    let f = fixture();
    f.data
        .records
        .iter()
        .find(|r| f.a.predict_proba(r).unwrap().get("prolonged_mv").unwrap() >= t)
        .expect("a high-risk record")
        .id
        .clone()
}

#[tokio::test]
async fn schema_carries_fingerprint_in_header_and_body() {
    let app = app();
    let (status, fp, v) = call(&app, "GET", "/schema", None).await;
    assert_eq!(status, StatusCode::OK);
    let expected = fixture().a.fingerprint();
    assert_eq!(fp.as_deref(), Some(expected.as_str()));
    assert_eq!(v["model_fingerprint"], json!(expected));
    assert!(v["result"]["features"].as_array().unwrap().len() > 10);
}

#[tokio::test]
async fn predict_by_id_matches_library() {
    let app = app();
    let (status, _, v) = call(&app, "POST", "/predict", Some(json!({ "record": id(3) }))).await;
    assert_eq!(status, StatusCode::OK);
    let p = fixture().a.predict_proba(&fixture().data.records[3]).unwrap();
    let got: Vec<f64> = serde_json::from_value(v["result"]["probabilities"].clone()).unwrap();
    assert_eq!(got, p.probabilities);
}

#[tokio::test]
async fn predict_inline_record_with_missing_values() {
    let app = app();
    let mut record = inline(4);
    record["glucose"] = Value::Null;
    record["age"] = json!(70);
    let (status, _, v) = call(&app, "POST", "/predict", Some(json!({ "record": record.clone() }))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["result"]["probabilities"].as_array().unwrap().len(), 10);

    let (_, _, by_id) = call(&app, "POST", "/predict", Some(json!({ "record": id(4) }))).await;
    let (_, _, same) = call(&app, "POST", "/predict", Some(json!({ "record": inline(4) }))).await;
    assert_eq!(by_id["result"], same["result"]);

    record.as_object_mut().unwrap().remove("race");
    let (status, _, v) = call(&app, "POST", "/predict", Some(json!({ "record": record }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["field"], "record.race");
}

#[tokio::test]
async fn errors_use_the_envelope() {
    let app = app();
    let (status, fp, v) = call(&app, "POST", "/predict", Some(json!({ "record": "nobody" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(fp.is_some());
    assert_eq!(v["error"]["code"], "unknown_record");
    assert!(v["error"]["message"].as_str().unwrap().contains("nobody"));
    assert!(v["model_fingerprint"].is_string());

    let mut record = inline(0);
    record["age"] = json!(500);
    let (status, _, v) = call(&app, "POST", "/predict", Some(json!({ "record": record }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["field"], "record.age");

    let (status, _, v) = call(&app, "POST", "/explain/shap", Some(json!({ "record": id(0), "outcome": "gout" }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "unknown_outcome");

    let (status, _, v) = call(&app, "POST", "/whatif", Some(json!("not an object"))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "parse_error");
}

#[tokio::test]
async fn shap_is_additive() {
    let app = app();
    let body = json!({ "record": id(5), "outcome": "aki" });
    let (status, _, v) = call(&app, "POST", "/explain/shap", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let r = &v["result"];
    let sum: f64 = r["contributions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["value"].as_f64().unwrap())
        .sum();
    let total = r["base_value"].as_f64().unwrap() + sum;
    assert!((total - r["prediction"].as_f64().unwrap()).abs() < 1e-9);
}

#[tokio::test]
async fn lime_is_reproducible_and_seedable() {
    let app = app();
    let body = json!({ "record": id(8), "outcome": "prolonged_mv", "config": { "n_samples": 800 } });
    let (s1, _, a) = call(&app, "POST", "/explain/lime", Some(body.clone())).await;
    let (_, _, b) = call(&app, "POST", "/explain/lime", Some(body.clone())).await;
    assert_eq!(s1, StatusCode::OK, "{a}");
    assert_eq!(a, b);

    let mut seeded = body.clone();
    seeded["seed"] = json!(99);
    let (_, _, c) = call(&app, "POST", "/explain/lime", Some(seeded.clone())).await;
    let (_, _, d) = call(&app, "POST", "/explain/lime", Some(seeded)).await;
    assert_eq!(c, d);
    assert_ne!(a["result"], c["result"]);
}

#[tokio::test]
async fn counterfactual_results_rescore() {
    let f = fixture();
    let app = app();
    let rid = high_risk(0.5);
    let body = json!({
        "record": rid,
        "outcome": "prolonged_mv",
        "constraints": { "threshold": 0.5 },
        "budget": 3000,
    });
    let (status, _, v) = call(&app, "POST", "/counterfactual", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let r = &v["result"];
    assert_eq!(r["direction"], "decrease");
    let record = f.data.records.iter().find(|x| x.id == rid).unwrap();
    let schema = &f.a.schema;
    for res in r["results"].as_array().unwrap() {
        let mut changed = record.clone();
        for c in res["changes"].as_array().unwrap() {
            let i = schema.feature_index(c["feature"].as_str().unwrap()).unwrap();
            changed.values[i] = riskxai::Value::Number(c["new_value"].as_f64().unwrap());
        }
        let p = f.a.predict_proba(&changed).unwrap().get("prolonged_mv").unwrap();
        assert_eq!(p, res["new_risk"].as_f64().unwrap());
        assert!(p < 0.5);
    }
}

#[tokio::test]
async fn counterfactual_on_wrong_side_is_a_conflict() {
    let app = app();
    let rid = high_risk(0.5);
    let body = json!({
        "record": rid,
        "outcome": "prolonged_mv",
        "constraints": { "threshold": 0.5, "direction": "increase" },
        "budget": 100,
    });
    let (status, _, v) = call(&app, "POST", "/counterfactual", Some(body)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"]["code"], "precondition_failed");
}

#[tokio::test]
async fn whatif_echoes_overrides() {
    let app = app();
    let body = json!({ "record": id(2), "overrides": { "glucose": 300, "age": 80 } });
    let (status, _, v) = call(&app, "POST", "/whatif", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let r = &v["result"];
    assert_eq!(r["record_id"], json!(id(2)));
    assert_eq!(r["overrides"].as_array().unwrap().len(), 2);
    let (_, _, p) = call(&app, "POST", "/predict", Some(json!({ "record": id(2) }))).await;
    assert_eq!(r["original"], p["result"]);

    let body = json!({ "record": id(2), "overrides": { "glucose": "high" } });
    let (status, _, v) = call(&app, "POST", "/whatif", Some(body)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["field"], "overrides.glucose");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn whatif_storm_matches_serial_replay() {
    let app = app();
    let bodies: Vec<Value> = (0..200)
        .map(|i| {
            json!({
                "record": id(i % 50),
                "overrides": { "glucose": 80 + (i * 7) % 300, "hemoglobin": 8.0 + (i % 9) as f64 },
            })
        })
        .collect();
    let mut handles = Vec::new();
    for b in bodies.clone() {
        let app = app.clone();
        handles.push(tokio::spawn(async move { call(&app, "POST", "/whatif", Some(b)).await.2 }));
    }
    let mut concurrent = Vec::new();
    for h in handles {
        concurrent.push(h.await.unwrap());
    }
    for (b, got) in bodies.into_iter().zip(concurrent) {
        let (_, _, serial) = call(&app, "POST", "/whatif", Some(b)).await;
        assert_eq!(got, serial);
    }
}

#[tokio::test]
async fn similar_summary() {
    let app = app();
    let (status, _, v) = call(&app, "POST", "/similar", Some(json!({ "record": id(1) }))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let r = &v["result"];
    let ids = r["matched_ids"].as_array().unwrap();
    assert_eq!(r["matched"].as_u64().unwrap() as usize, ids.len());
    assert!(!ids.contains(&json!(id(1))));
}

#[tokio::test]
async fn model_card_json_and_html() {
    let app = app();
    let (status, _, v) = call(&app, "GET", "/model-card", None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["result"]["provenance"]["model_fingerprint"], v["model_fingerprint"]);
    let (status, fp, html) = call(&app, "GET", "/model-card.html", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(fp.is_some());
    let html = html.as_str().unwrap();
    assert!(html.contains("<svg"));
    assert!(html.contains("model-card-data"));
}

#[tokio::test]
async fn missing_reference_is_a_precondition() {
    let snap = Snapshot::new(fixture().a.clone(), None, config().card).unwrap();
    let app = App::new(snap, config());
    let body = json!({ "record": inline(0), "outcome": "aki" });
    let (status, _, v) = call(&app, "POST", "/explain/lime", Some(body)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"]["code"], "precondition_failed");
    let (status, _, _) = call(&app, "POST", "/predict", Some(json!({ "record": inline(0) }))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _, v) = call(&app, "POST", "/predict", Some(json!({ "record": id(0) }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND, "{v}");
}

#[tokio::test]
async fn reload_swaps_the_model() {
    let f = fixture();
    let app = app();
    let (_, fp_a, _) = call(&app, "GET", "/schema", None).await;
    let body = json!({ "model_path": f.model_b, "dataset_path": f.data_path });
    let (status, fp, v) = call(&app, "POST", "/admin/reload", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_ne!(fp, fp_a);
    assert_eq!(v["result"]["model_fingerprint"], json!(fp.clone().unwrap()));
    assert_eq!(v["result"]["dataset_fingerprint"], json!(f.data.fingerprint()));
    let (_, after, _) = call(&app, "POST", "/predict", Some(json!({ "record": id(0) }))).await;
    assert_eq!(after, fp);

    let body = json!({ "model_path": f.model_a.with_extension("missing") });
    let (status, fp_err, v) = call(&app, "POST", "/admin/reload", Some(body)).await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(v["error"]["code"], "io_error");
    assert_eq!(fp_err, fp);
}
