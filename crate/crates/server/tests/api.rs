mod common;

use std::sync::Arc;

use common::{spawn, MOBILE};
use convey_core::dsl::parse_script_with;
use convey_core::dsl::ParseOptions;
use convey_core::engine::{replay, start_session, submit_answer, MessageRun, Selection, Timestamp};
use convey_core::flow::Status;
use convey_core::store::{FileStore, MemoryStore};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

async fn create(client: &Client, base: &str, id: &str, script: &str) -> reqwest::Response {
    client
        .post(format!("{base}/surveys?id={id}&title=Mobile"))
        .header("content-type", "text/plain")
        .body(script.to_owned())
        .send()
        .await
        .unwrap()
}

async fn post(client: &Client, url: String, body: Value) -> (StatusCode, Value) {
    let r = client.post(url).json(&body).send().await.unwrap();
    let status = r.status();
    (status, r.json().await.unwrap_or(Value::Null))
}

async fn published_mobile(client: &Client, base: &str) {
    assert_eq!(
        create(client, base, "mb", MOBILE).await.status(),
        StatusCode::CREATED
    );
    let r = client
        .post(format!("{base}/surveys/mb/publish"))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);
}

fn answers() -> Vec<Selection> {
    let mut a = vec![Selection::Option("n5".into())];
    a.extend([2, 3, 5, 4, 1, 3, 5].map(Selection::Value));
    a
}

#[tokio::test]
async fn survey_lifecycle_errors() {
    let (base, _h) = spawn(Arc::new(MemoryStore::new())).await;
    let client = Client::new();

    let r = create(&client, &base, "bad", "{answer} x\n").await;
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let body: Value = r.json().await.unwrap();
    assert_eq!(body["code"], "parse_error");
    assert_eq!(body["details"][0]["line"], 1);
    assert_eq!(body["details"][0]["kind"], "binding");

    published_mobile(&client, &base).await;
    let (status, body) = post(&client, format!("{base}/surveys/mb/publish"), json!({})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "already_published");
    assert_eq!(
        create(&client, &base, "mb", MOBILE).await.status(),
        StatusCode::CONFLICT
    );

    let r = client
        .get(format!("{base}/surveys/nope"))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
    let (status, _) = post(
        &client,
        format!("{base}/sessions/nope/answers"),
        json!({"value": 1}),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    create(&client, &base, "draft", MOBILE).await;
    let (status, body) = post(&client, format!("{base}/surveys/draft/sessions"), json!({})).await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::CONFLICT, Some("survey_not_published"))
    );

    let graph: Value = client
        .get(format!("{base}/surveys/mb"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(graph["title"], "Mobile");
    assert_eq!(graph["status"], "published");
}

#[tokio::test]
async fn accepts_graph_json() {
    let (base, _h) = spawn(Arc::new(MemoryStore::new())).await;
    let client = Client::new();
    let opts = ParseOptions {
        id: "from-json".into(),
        ..ParseOptions::default()
    };
    let g = parse_script_with(MOBILE, &opts).unwrap();
    let r = client
        .post(format!("{base}/surveys"))
        .json(&g)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::CREATED);
    let back: Value = client
        .get(format!("{base}/surveys/from-json"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(back, serde_json::to_value(&g).unwrap());
}

#[tokio::test]
async fn http_session_matches_the_engine() {
    let (base, _h) = spawn(Arc::new(MemoryStore::new())).await;
    let client = Client::new();
    published_mobile(&client, &base).await;
    let mut g = parse_script_with(
        MOBILE,
        &ParseOptions {
            id: "mb".into(),
            title: "Mobile".into(),
            ..ParseOptions::default()
        },
    )
    .unwrap();
    g.status = Status::Published;

    let (status, created) = post(&client, format!("{base}/surveys/mb/sessions"), json!({})).await;
    assert_eq!(status, StatusCode::CREATED);
    let sid = created["session_id"].as_str().unwrap().to_owned();
    assert_eq!(uuid_version(&sid), Some('4'));
    let (mut direct, run) = start_session(&g, "direct", Timestamp(0)).unwrap();
    assert_eq!(
        serde_json::from_value::<MessageRun>(created["run"].clone()).unwrap(),
        run
    );

    for (i, sel) in answers().iter().enumerate() {
        let (status, body) = post(
            &client,
            format!("{base}/sessions/{sid}/answers"),
            serde_json::to_value(sel).unwrap(),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let expected = submit_answer(&mut direct, &g, sel, Timestamp(i as i64 + 1)).unwrap();
        assert_eq!(
            serde_json::from_value::<MessageRun>(body).unwrap(),
            expected
        );
    }

    let t: Value = client
        .get(format!("{base}/sessions/{sid}/transcript"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let (_, engine) = replay(&g, "x", &answers()).unwrap();
    assert_eq!(t["text"], engine.to_string());
    assert_eq!(t["finished"], true);

    let (status, body) = post(
        &client,
        format!("{base}/sessions/{sid}/answers"),
        json!({"value": 3}),
    )
    .await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::CONFLICT, Some("session_finished"))
    );

    let csv = client
        .get(format!("{base}/surveys/mb/export.csv"))
        .send()
        .await
        .unwrap();
    assert!(csv.headers()["content-type"]
        .to_str()
        .unwrap()
        .starts_with("text/csv"));
    let text = csv.text().await.unwrap();
    assert_eq!(text.lines().count(), 1 + 8);
    assert!(text
        .lines()
        .all(|l| l.starts_with("session_id") || l.starts_with(&sid)));
}

fn uuid_version(id: &str) -> Option<char> {
    (id.len() == 36).then(|| id.chars().nth(14)).flatten()
}

#[tokio::test]
async fn rejects_bad_answers() {
    let (base, _h) = spawn(Arc::new(MemoryStore::new())).await;
    let client = Client::new();
    published_mobile(&client, &base).await;
    let (_, created) = post(&client, format!("{base}/surveys/mb/sessions"), json!({})).await;
    let url = format!(
        "{base}/sessions/{}/answers",
        created["session_id"].as_str().unwrap()
    );

    let (status, body) = post(&client, url.clone(), json!({"value": 3})).await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_selection"))
    );
    let (status, _) = post(&client, url.clone(), json!({"text": "hello"})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, body) = post(&client, url.clone(), json!({"colour": "red"})).await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("bad_request"))
    );
    let (status, _) = post(&client, url.clone(), json!({"option": "n5"})).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = post(&client, url, json!({"value": 9})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn one_answer_at_a_time_per_session() {
    let (base, _h) = spawn(Arc::new(MemoryStore::new())).await;
    let client = Client::new();
    published_mobile(&client, &base).await;
    let (_, created) = post(&client, format!("{base}/surveys/mb/sessions"), json!({})).await;
    let url = format!(
        "{base}/sessions/{}/answers",
        created["session_id"].as_str().unwrap()
    );

    let attempts: Vec<_> = (0..16)
        .map(|_| {
            let (client, url) = (client.clone(), url.clone());
            tokio::spawn(async move { post(&client, url, json!({"option": "n5"})).await.0 })
        })
        .collect();
    let mut ok = 0;
    for a in attempts {
        match a.await.unwrap() {
            StatusCode::OK => ok += 1,
            StatusCode::CONFLICT | StatusCode::UNPROCESSABLE_ENTITY => {}
            other => panic!("unexpected {other}"),
        }
    }
    assert_eq!(ok, 1);
    let csv = client
        .get(format!("{base}/surveys/mb/export.csv"))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let client = Client::new();
    let sid;
    {
        let (base, h) = spawn(Arc::new(FileStore::open(dir.path()).unwrap())).await;
        published_mobile(&client, &base).await;
        let (_, created) = post(&client, format!("{base}/surveys/mb/sessions"), json!({})).await;
        sid = created["session_id"].as_str().unwrap().to_owned();
        for sel in &answers()[..3] {
            let (status, _) = post(
                &client,
                format!("{base}/sessions/{sid}/answers"),
                serde_json::to_value(sel).unwrap(),
            )
            .await;
            assert_eq!(status, StatusCode::OK);
        }
        h.abort();
        let _ = h.await;
    }
    let (base, _h) = spawn(Arc::new(FileStore::open(dir.path()).unwrap())).await;
    let session: Value = client
        .get(format!("{base}/sessions/{sid}"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(session["answers"].as_array().unwrap().len(), 3);
    for sel in &answers()[3..] {
        let (status, _) = post(
            &client,
            format!("{base}/sessions/{sid}/answers"),
            serde_json::to_value(sel).unwrap(),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
    }
    let stats: Value = client
        .get(format!("{base}/surveys/mb/stats"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(
        (stats["started"].as_u64(), stats["completed"].as_u64()),
        (Some(1), Some(1))
    );
    assert_eq!(stats["per_latent_mean"]["Usage intention"], 5.0);
}

#[tokio::test]
async fn stats_formats_and_cors() {
    let (base, _h) = spawn(Arc::new(MemoryStore::new())).await;
    let client = Client::new();
    published_mobile(&client, &base).await;
    let r = client
        .get(format!("{base}/surveys/mb/stats?format=text"))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert!(r.text().await.unwrap().contains("started    0"));
    let r = client
        .get(format!("{base}/surveys/mb/stats?metric=cubic"))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);

    let r = client
        .get(format!("{base}/surveys/mb"))
        .header("origin", "http://localhost:5173")
        .send()
        .await
        .unwrap();
    assert_eq!(r.headers()["access-control-allow-origin"], "*");
}
