use std::io::{Read, Write};
use std::net::SocketAddr;
use std::path::Path;

use lowconf_client::{Client, ClientError};
use lowconf_core::api::{GenRequest, ScoreRequest, SubsetRequest};
use lowconf_core::pipeline::{CHECKPOINT_FILE, MANIFEST_FILE};
use lowconf_core::synthetic::SyntheticSpec;
use lowconf_core::{ErrorClass, PipelineConfig, SelectionManifest, TransferConfig};

async fn spawn() -> (Client, SocketAddr) {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(lowconf_server::serve(listener, std::future::pending()));
    (Client::new(format!("http://{addr}")), addr)
}

fn spec(n: usize, d: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        k_true: 3,
        n,
        d,
        separation: 1.0,
        noise: 0.6,
        outlier_fraction: 0.1,
        seed,
    }
}

fn small_run(cache: &Path, out_dir: &Path) -> PipelineConfig {
    PipelineConfig {
        cache: cache.to_path_buf(),
        out_dir: out_dir.to_path_buf(),
        k: 3,
        hidden: 32,
        ..PipelineConfig::default()
    }
}

#[tokio::test]
async fn full_workflow_over_http() {
    let (client, _) = spawn().await;
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(client.health().await.unwrap()["status"], "ok");

    let cache = dir.path().join("data").join("pool.ofac");
    let gen = client
        .gen(&GenRequest {
            spec: spec(300, 8, 1),
            out: cache.clone(),
        })
        .await
        .unwrap();
    assert_eq!((gen.n, gen.d, gen.outliers), (300, 8, 30));

    let run_dir = dir.path().join("run");
    let report = client.run(&small_run(&cache, &run_dir)).await.unwrap();
    assert_eq!(report.n, 300);
    let manifest = SelectionManifest::read(&report.manifest_path).unwrap();
    assert_eq!(manifest.selected_count(), report.selected);

    let other = dir.path().join("other.ofac");
    client
        .gen(&GenRequest {
            spec: spec(200, 8, 2),
            out: other.clone(),
        })
        .await
        .unwrap();
    let ckpt = run_dir.join(CHECKPOINT_FILE);
    let before = std::fs::read(&ckpt).unwrap();
    let transfer = client
        .transfer(&TransferConfig {
            checkpoint: ckpt.clone(),
            cache: other.clone(),
            out_dir: dir.path().join("transfer"),
            ..TransferConfig::default()
        })
        .await
        .unwrap();
    assert_eq!(transfer.n, 200);
    assert_eq!(std::fs::read(&ckpt).unwrap(), before);

    let scores = client
        .score(&ScoreRequest {
            checkpoint: ckpt.clone(),
            cache: other.clone(),
            out: None,
            prenormalize: false,
        })
        .await
        .unwrap();
    assert_eq!(scores.entries.len(), 200);
    assert!(scores
        .entries
        .iter()
        .all(|e| e.confidence >= 1.0 / 3.0 && e.confidence <= 1.0));

    let records: Vec<serde_json::Value> = (0..300)
        .map(|i| serde_json::json!({ "id": format!("syn-{i}"), "conversations": [] }))
        .collect();
    let dataset = dir.path().join("dataset.json");
    std::fs::write(&dataset, serde_json::to_string(&records).unwrap()).unwrap();
    let subset = client
        .subset(&SubsetRequest {
            manifest: run_dir.join(MANIFEST_FILE),
            dataset,
            out: dir.path().join("subset").join("filtered.json"),
        })
        .await
        .unwrap();
    assert_eq!(subset.selected, report.selected);
    let filtered: Vec<serde_json::Value> =
        serde_json::from_slice(&std::fs::read(&subset.out).unwrap()).unwrap();
    assert_eq!(filtered.len(), report.selected);
}

#[tokio::test]
async fn errors_carry_class_and_exit_code() {
    let (client, _) = spawn().await;
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("pool.ofac");
    client
        .gen(&GenRequest {
            spec: spec(100, 4, 3),
            out: cache.clone(),
        })
        .await
        .unwrap();

    let mut bad = small_run(&cache, &dir.path().join("out"));
    bad.selection.rho = 1.5;
    match client.run(&bad).await {
        Err(ClientError::Api(body)) => {
            assert_eq!(
                (body.kind.as_str(), body.class, body.exit_code),
                ("bad_ratio", ErrorClass::Config, 2)
            );
        }
        other => panic!("unexpected {other:?}"),
    }

    let missing = small_run(&dir.path().join("absent.ofac"), &dir.path().join("out"));
    let err = client.run(&missing).await.unwrap_err();
    assert_eq!(err.exit_code(), 3);

    let zero = dir.path().join("zero.ofac");
    lowconf_core::write_cache(
        &[
            lowconf_core::SampleRecord::new("a", vec![1.0, 0.0], vec![0.0, 1.0]),
            lowconf_core::SampleRecord::new("b", vec![0.0, 0.0], vec![0.0, 0.0]),
        ],
        &zero,
    )
    .unwrap();
    let err = client
        .run(&small_run(&zero, &dir.path().join("z")))
        .await
        .unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
}

#[tokio::test]
async fn malformed_body_is_a_config_error() {
    let (_, addr) = spawn().await;
    let response = tokio::task::spawn_blocking(move || {
        let mut stream = std::net::TcpStream::connect(addr).unwrap();
        let body = "{\"cache\": 7";
        write!(
            stream,
            "POST /v1/run HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        let mut out = String::new();
        stream.read_to_string(&mut out).unwrap();
        out
    })
    .await
    .unwrap();
    assert!(response.starts_with("HTTP/1.1 400"), "{response}");
    let body = &response[response.find("\r\n\r\n").unwrap() + 4..];
    let parsed: lowconf_core::api::ErrorBody = serde_json::from_str(body).unwrap();
    assert_eq!((parsed.kind.as_str(), parsed.exit_code), ("bad_request", 2));
}
