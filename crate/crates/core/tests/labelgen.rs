use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use addrforge::geo_model::AddressLabel;
use addrforge::labelgen::{
    self, build_alignment_prompt, request_label, run_batch, validate_and_strip, AlignmentItem, EndpointConfig,
    Rejection, HINT_CLOSE, HINT_OPEN,
};
use addrforge::mock::{hint_reasoning_handler, StubHandler, StubReply, StubRequest, StubServer};
use image::{Rgb, RgbImage};

fn label() -> AddressLabel {
    AddressLabel { street: "Grant Street".into(), district: "Downtown".into() }
}

fn items(dir: &Path, n: usize) -> Vec<AlignmentItem> {
    let img = dir.join("g.jpg");
    RgbImage::from_pixel(16, 16, Rgb([1, 2, 3])).save(&img).unwrap();
    (0..n)
        .map(|i| AlignmentItem {
            id: format!("c/L{i:03}_h0"),
            image: img.clone(),
            label: label(),
            city: "c".into(),
            location_id: format!("L{i:03}"),
            heading: 0.0,
        })
        .collect()
}

fn config(server: &StubServer) -> EndpointConfig {
    EndpointConfig { base_url: server.base_url(), backoff_ms: 1, ..Default::default() }
}

fn failing_first(n: usize) -> StubHandler {
    let calls = Arc::new(AtomicUsize::new(0));
    Arc::new(move |_req: &StubRequest| {
        if calls.fetch_add(1, Ordering::SeqCst) < n {
            StubReply::Status(503)
        } else {
            StubReply::Text("ok".into())
        }
    })
}

#[test]
fn hint_is_stripped_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.jpg");
    RgbImage::new(4, 4).save(&img).unwrap();
    let prompt = build_alignment_prompt(&img, &label()).unwrap();
    assert!(prompt.text().contains(HINT_OPEN) && prompt.text().contains(HINT_CLOSE));
    assert!(!prompt.question().contains(HINT_OPEN));

    let echoed = format!("{} The road is Grant Street.", prompt.hint);
    let ok = validate_and_strip(&echoed, &label(), &prompt, "x").unwrap();
    assert_eq!(ok.text, "The road is Grant Street.");
    let only_hint = format!("{HINT_OPEN} {} {HINT_CLOSE}", prompt.hint);
    assert_eq!(validate_and_strip(&only_hint, &label(), &prompt, "x"), Err(Rejection::Empty));
    let leak = format!("Grant Street {HINT_OPEN}");
    assert_eq!(validate_and_strip(&leak, &label(), &prompt, "x"), Err(Rejection::HintLeak));
    assert_eq!(validate_and_strip("Somewhere in Downtown", &label(), &prompt, "x"), Err(Rejection::MissingStreet));
    // abbreviations count, partial tokens do not
    assert!(validate_and_strip("on grant st", &label(), &prompt, "x").is_ok());
    assert!(validate_and_strip("on Grant Streets", &label(), &prompt, "x").is_err());
    assert!(build_alignment_prompt(&dir.path().join("missing.jpg"), &label()).is_err());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stub_echoes_hint_reasoning() {
    let server = StubServer::start(hint_reasoning_handler(), Duration::ZERO).await.unwrap();
    let cfg = config(&server);
    let prompt = labelgen::AlignmentPrompt { task: "Describe.".into(), hint: labelgen::hint_clause(&label()) };
    let text = request_label(&labelgen::client(&cfg).unwrap(), &cfg, &prompt.text(), b"jpeg").await.unwrap();
    assert!(text.contains("Grant Street runs through Downtown"));
    assert!(!text.contains(HINT_OPEN));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn retries_within_budget() {
    let server = StubServer::start(failing_first(2), Duration::ZERO).await.unwrap();
    let cfg = EndpointConfig { retry_budget: 3, ..config(&server) };
    let text = request_label(&labelgen::client(&cfg).unwrap(), &cfg, "p", b"").await.unwrap();
    assert_eq!(text, "ok");
    assert_eq!(server.requests(), 3);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn exhausted_budget_is_an_error() {
    let server = StubServer::start(failing_first(usize::MAX), Duration::ZERO).await.unwrap();
    let cfg = EndpointConfig { retry_budget: 2, ..config(&server) };
    assert!(request_label(&labelgen::client(&cfg).unwrap(), &cfg, "p", b"").await.is_err());
    assert_eq!(server.requests(), 3);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn in_flight_bound_holds() {
    let dir = tempfile::tempdir().unwrap();
    let server = StubServer::start(hint_reasoning_handler(), Duration::from_millis(20)).await.unwrap();
    for bound in [1, 3, 8] {
        let cfg = EndpointConfig { max_in_flight: bound, ..config(&server) };
        let audit = dir.path().join(format!("audit{bound}.jsonl"));
        let report = run_batch(&cfg, &items(dir.path(), 100), &audit).await.unwrap();
        assert_eq!(report.accepted.len(), 100);
        assert!(server.max_in_flight() <= 8);
        if bound == 1 {
            assert_eq!(server.max_in_flight(), 1);
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn resume_skips_accepted_items() {
    let dir = tempfile::tempdir().unwrap();
    let server = StubServer::start(hint_reasoning_handler(), Duration::ZERO).await.unwrap();
    let cfg = config(&server);
    let its = items(dir.path(), 30);
    let audit = dir.path().join("audit.jsonl");
    let first = run_batch(&cfg, &its[..20], &audit).await.unwrap();
    assert_eq!((first.accepted.len(), server.requests()), (20, 20));
    let second = run_batch(&cfg, &its, &audit).await.unwrap();
    assert_eq!((second.resumed, second.accepted.len(), server.requests()), (20, 30, 30));
    let third = run_batch(&cfg, &its, &audit).await.unwrap();
    assert_eq!(server.requests(), 30);
    assert_eq!(third.accepted, second.accepted);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn rejected_labels_get_one_regeneration() {
    let dir = tempfile::tempdir().unwrap();
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let base = hint_reasoning_handler();
    // every first answer misses the street; the retry is fine
    let handler: StubHandler = Arc::new(move |req: &StubRequest| {
        if c.fetch_add(1, Ordering::SeqCst).is_multiple_of(2) {
            StubReply::Text("A road in Downtown.".into())
        } else {
            (*base)(req)
        }
    });
    let server = StubServer::start(handler, Duration::ZERO).await.unwrap();
    let cfg = EndpointConfig { max_in_flight: 1, ..config(&server) };
    let report = run_batch(&cfg, &items(dir.path(), 5), &dir.path().join("a.jsonl")).await.unwrap();
    assert_eq!((report.accepted.len(), report.regenerated, server.requests()), (5, 5, 10));
    let stage1 = labelgen::stage1_samples(&items(dir.path(), 5), &report.accepted);
    for s in &stage1 {
        s.validate().unwrap();
        let text = serde_json::to_string(s).unwrap();
        assert!(!text.contains(HINT_OPEN) && !text.contains("Standard answer"));
    }
}
