#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;

use amrule_core::catalog::SynthConfig;
use amrule_core::learner::TrainConfig;
use amrule_core::orchestrator::{Ablation, AnnotatorConfig, DataConfig, RunConfig};

pub fn small_config(dir: &Path) -> RunConfig {
    let mut synth = SynthConfig::planted_benchmark(3);
    synth.n_anchor_products = 160;
    synth.n_rec_products = 160;
    synth.pair_count = 600;
    synth.low_count_records = 300;
    RunConfig {
        run_dir: dir.to_path_buf(),
        seed: 11,
        data: DataConfig::Synth { synth },
        iterations: 2,
        budget: 4,
        top_n: 200,
        repeats: 3,
        cap: 50,
        ablation: Ablation::Full,
        learning_rates: vec![1e-3],
        train: TrainConfig {
            epochs: 40,
            hidden: vec![16, 8],
            ..TrainConfig::default()
        },
        annotator: AnnotatorConfig::Interactive,
        ..RunConfig::default()
    }
}

/// Serves `app` on an ephemeral port from a background runtime.
pub fn spawn(app: axum::Router) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

/// An agent that hands back 4xx/5xx responses instead of failing.
pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

pub fn get(agent: &ureq::Agent, url: &str) -> (u16, serde_json::Value) {
    let mut r = agent.get(url).call().unwrap();
    let code = r.status().as_u16();
    (code, r.body_mut().read_json().unwrap())
}

pub fn post(agent: &ureq::Agent, url: &str, body: &serde_json::Value) -> (u16, serde_json::Value) {
    let mut r = agent.post(url).send_json(body).unwrap();
    let code = r.status().as_u16();
    (code, r.body_mut().read_json().unwrap())
}
