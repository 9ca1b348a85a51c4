use std::sync::Arc;

use gridfield_client::{Client, ClientError};
use gridfield_core::api::{QueryRequest, QueryResponse, QuerySource, ReloadRequest};
use gridfield_core::field::TrainedField;
use gridfield_core::ingest::{generate_synthetic_scene, SyntheticSceneSpec};
use gridfield_core::query::{QueryEngine, QueryInput, ViewSpec};
use gridfield_core::scene::{MatchParams, QueryConfig, TrainConfig};
use gridfield_core::splat::RenderConfig;
use gridfield_service::AppState;
use tokio::net::TcpListener;

#[tokio::test]
async fn client_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate_synthetic_scene(&SyntheticSceneSpec {
        objects: 3,
        views: 3,
        width: 40,
        height: 40,
        seed: 1,
        ..SyntheticSceneSpec::default()
    })
    .unwrap();
    let train = TrainConfig {
        iterations: 40,
        ..TrainConfig::default()
    };
    let (f, _) =
        TrainedField::build(&s.dataset, &s.cloud, &MatchParams::default(), &train, &RenderConfig::default()).unwrap();
    let (fp, mp) = (dir.path().join("f.bin"), dir.path().join("m.json"));
    f.save(&fp, &mp).unwrap();

    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let state = Arc::new(AppState::new(None, None));
    tokio::spawn(gridfield_service::serve(listener, state, std::future::pending()));

    let c = Client::new(format!("http://{addr}/"));
    assert!(!c.health().await.unwrap().loaded);
    assert_eq!(c.scene().await.unwrap_err().status(), Some(409));

    let req = ReloadRequest {
        field: Some(fp.display().to_string()),
        mapping: Some(mp.display().to_string()),
    };
    assert_eq!(c.reload(&req).await.unwrap().k, 3);
    assert!(c.health().await.unwrap().loaded);

    c.register("obj", s.truth.prototypes[1].clone()).await.unwrap();
    assert_eq!(c.queries().await.unwrap(), vec!["obj".to_string()]);
    let png = c.render(2).await.unwrap();
    assert_eq!(&png[1..4], b"PNG");

    let r = c
        .query(&QueryRequest {
            view: 2,
            source: QuerySource::Name { name: "obj".into() },
            top_n: None,
            tau_ac: None,
            aggregation: None,
            relevancy_floor: None,
        })
        .await
        .unwrap();
    let local = QueryEngine::new(Arc::new(TrainedField::load(&fp, &mp).unwrap()))
        .query(&QueryInput {
            embedding: s.truth.prototypes[1].clone(),
            view: ViewSpec::Id(2),
            config: QueryConfig::default(),
        })
        .unwrap();
    assert_eq!(r.without_timings(), QueryResponse::from_result(&local).without_timings());

    match c.render(11).await {
        Err(ClientError::Status { status, message }) => {
            assert_eq!(status, 404);
            assert!(message.contains("unknown view"));
        }
        other => panic!("expected 404, got {other:?}"),
    }
}
