use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use fsa_distill::llm_client::{
    generate_batch, BatchConfig, EndpointConfig, GenRequest, GenStatus, HttpBackend, ResponseCache,
    RetryPolicy, TeacherTag,
};
use serde_json::{json, Value};

type Calls = Arc<Mutex<HashMap<String, usize>>>;

async fn serve() -> (String, Calls) {
    let calls: Calls = Arc::default();
    let seen = calls.clone();
    let app = axum::Router::new().route(
        "/v1/chat/completions",
        axum::routing::post(move |headers: HeaderMap, Json(body): Json<Value>| {
            let seen = seen.clone();
            async move {
                let prompt = body["messages"][0]["content"].as_str().unwrap_or("").to_string();
                let n = {
                    let mut m = seen.lock().unwrap();
                    let c = m.entry(prompt.clone()).or_default();
                    *c += 1;
                    *c
                };
                let ok = |text: String| -> Response {
                    Json(json!({"choices": [{"message": {"role": "assistant", "content": text}}]})).into_response()
                };
                match prompt.as_str() {
                    "flaky" if n <= 2 => StatusCode::SERVICE_UNAVAILABLE.into_response(),
                    "limited" if n == 1 => StatusCode::TOO_MANY_REQUESTS.into_response(),
                    "rejected" => (StatusCode::BAD_REQUEST, "bad model").into_response(),
                    "malformed" => Json(json!({"id": 1})).into_response(),
                    "auth" => ok(headers
                        .get("authorization")
                        .and_then(|v| v.to_str().ok())
                        .unwrap_or("none")
                        .to_string()),
                    p => ok(format!("reply to {p} #{n}")),
                }
            }
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1"), calls)
}

fn req(id: &str, prompt: &str) -> GenRequest {
    GenRequest {
        request_id: id.to_string(),
        prompt: prompt.to_string(),
        model: "m".into(),
        max_new_tokens: 32,
        temperature: 0.0,
        teacher_tag: TeacherTag::Gpt35,
        review_id: None,
        prompt_kind: None,
        instance: None,
    }
}

fn fast_retry() -> BatchConfig {
    BatchConfig {
        max_in_flight: 3,
        retry: RetryPolicy {
            max_attempts: 4,
            base_backoff: Duration::from_millis(5),
        },
        budget: None,
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn retry_classes_and_auth() {
    let (url, calls) = serve().await;
    let backend = HttpBackend::new(&EndpointConfig {
        url,
        api_key: Some("k".into()),
        timeout_secs: 10,
    })
    .unwrap();
    let requests = vec![
        req("a", "flaky"),
        req("b", "limited"),
        req("c", "rejected"),
        req("d", "malformed"),
        req("e", "auth"),
    ];
    let results = generate_batch(&backend, &requests, &fast_retry(), None, |_| {}).await.unwrap();
    let by_id: HashMap<_, _> = results.iter().map(|r| (r.request_id.as_str(), r)).collect();
    assert_eq!(by_id["a"].status, GenStatus::Ok);
    assert_eq!(by_id["a"].attempts, 3);
    assert_eq!(by_id["b"].attempts, 2);
    assert_eq!(by_id["c"].status, GenStatus::FailedAfterRetries);
    assert_eq!(by_id["c"].attempts, 1);
    assert!(by_id["c"].error.as_deref().unwrap().contains("400"));
    assert_eq!(by_id["d"].attempts, 1);
    assert!(by_id["d"].error.as_deref().unwrap().contains("malformed"));
    assert_eq!(by_id["e"].text.as_deref(), Some("Bearer k"));
    assert_eq!(calls.lock().unwrap()["rejected"], 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn budget_stop_then_resume_from_cache() {
    let (url, calls) = serve().await;
    let backend = HttpBackend::new(&EndpointConfig {
        url,
        api_key: None,
        timeout_secs: 10,
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let requests: Vec<GenRequest> = (0..6).map(|i| req(&format!("r{i}"), &format!("p{i}"))).collect();

    let cache = ResponseCache::open(dir.path()).unwrap();
    let capped = BatchConfig {
        budget: Some(4),
        ..fast_retry()
    };
    let first = generate_batch(&backend, &requests, &capped, Some(&cache), |_| {}).await.unwrap();
    assert_eq!(first.iter().filter(|r| r.status == GenStatus::Ok).count(), 4);
    assert_eq!(first.iter().filter(|r| r.status == GenStatus::OverBudget).count(), 2);
    drop(cache);

    // A fresh process reopens the cache and only pays for the rest.
    let cache = ResponseCache::open(dir.path()).unwrap();
    assert_eq!(cache.len(), 4);
    let second = generate_batch(&backend, &requests, &fast_retry(), Some(&cache), |_| {}).await.unwrap();
    assert!(second.iter().all(|r| r.status == GenStatus::Ok));
    assert_eq!(second.iter().filter(|r| r.cached).count(), 4);
    let total: usize = calls.lock().unwrap().values().sum();
    assert_eq!(total, 6);
    // Cached text is exactly what the first run received.
    for (a, b) in first.iter().zip(&second) {
        if a.status == GenStatus::Ok {
            let b = second.iter().find(|r| r.request_id == a.request_id).unwrap_or(b);
            assert_eq!(a.text, b.text);
        }
    }
}
