#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{DateTime, TimeZone, Utc};
use http_body_util::BodyExt;
use mammocolor::mrmc::{build_plan, Reader, StudyPlan, Tier};
use mammocolor_study::{router, AppState, ManualClock, ServiceConfig};
use serde_json::Value;
use tower::ServiceExt;

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 3, 2, 9, 0, 0).unwrap()
}

pub fn plan(readers: usize, cases: usize) -> StudyPlan {
    let tiers = [Tier::Junior, Tier::Intermediate, Tier::Senior];
    let readers: Vec<Reader> =
        (0..readers).map(|i| Reader { reader_id: format!("R{i}"), tier: tiers[i % 3] }).collect();
    let cases: Vec<String> = (0..cases).map(|i| format!("C{i:03}")).collect();
    build_plan(&readers, &cases, 11, 28).unwrap()
}

pub struct Harness {
    pub dir: tempfile::TempDir,
    pub clock: Arc<ManualClock>,
    pub app: Router,
    pub config: ServiceConfig,
}

impl Harness {
    pub fn new(config: impl FnOnce(&Path) -> ServiceConfig) -> Harness {
        let dir = tempfile::tempdir().unwrap();
        let config = config(dir.path());
        let clock = Arc::new(ManualClock::new(t0()));
        let app = router(AppState::load(config.clone(), clock.clone()).unwrap());
        Harness { dir, clock, app, config }
    }

    pub fn plain() -> Harness {
        Harness::new(|d| ServiceConfig { data_dir: d.join("data"), ..Default::default() })
    }

    /// Simulates a restart: reload everything from disk.
    pub fn restart(&mut self) {
        self.app = router(AppState::load(self.config.clone(), self.clock.clone()).unwrap());
    }

    pub async fn send(&self, method: &str, uri: &str, body: Option<Value>, token: Option<&str>) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(v) => req.header("content-type", "application/json").body(Body::from(v.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes)
    }

    pub async fn json(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (s, b) = self.send(method, uri, body, None).await;
        let v = if b.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&b).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&b).into_owned()))
        };
        (s, v)
    }

    pub async fn create(&self, plan: &StudyPlan) -> String {
        let (s, v) = self.json("POST", "/studies", Some(serde_json::json!({"study_id": "s1", "plan": plan}))).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["study_id"].as_str().unwrap().to_string()
    }

    pub fn session_uri(reader: &str, k: u32) -> String {
        format!("/studies/s1/readers/{reader}/sessions/{k}")
    }

    pub async fn rate(&self, reader: &str, k: u32, case: &str, call: &str, birads: Value) -> (StatusCode, Value) {
        let uri = format!("{}/cases/{case}/rating", Self::session_uri(reader, k));
        self.json("POST", &uri, Some(serde_json::json!({"binary_call": call, "birads": birads}))).await
    }

    /// Opens a session and rates every case in served order.
    pub async fn complete_session(&self, reader: &str, k: u32) -> Vec<String> {
        let (s, mut v) = self.json("POST", &format!("{}/open", Self::session_uri(reader, k)), None).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        let mut served = Vec::new();
        while let Some(case) = v["case"]["case_id"].as_str().map(String::from) {
            self.clock.advance(chrono::Duration::seconds(7));
            let (s, next) = self.rate(reader, k, &case, "non-suspicious", Value::from(2)).await;
            assert_eq!(s, StatusCode::OK, "{next}");
            served.push(case);
            v = next;
        }
        assert_eq!(v["status"], "complete");
        served
    }
}

/// Every object key anywhere in a JSON document.
pub fn keys(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                out.push(k.clone());
                keys(x, out);
            }
        }
        Value::Array(a) => a.iter().for_each(|x| keys(x, out)),
        _ => {}
    }
}
