#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use base64::Engine;
use serde_json::{json, Value};

use terrainnav::costmap::CostMap;
use terrainnav::featnet::{build_network, encode_checkpoint, Network, NetworkSpec};
use terrainnav::patch::TerrainClass;
use terrainnav::planner::PlanRequest;
use terrainnav::synth::{backyard_scene, Scene, SceneConfig};
use terrainnav_service::api::{router, AppState, ServiceConfig};
use terrainnav_service::persist::sha256_hex;
use terrainnav_service::session::SessionConfig;

/// Randomly initialized extractor with the default architecture.
pub fn random_network(seed: u64) -> Network {
    build_network(NetworkSpec::with_classes(10), seed).expect("default spec is valid")
}

/// A smaller scene so service tests stay quick.
pub fn small_scene(seed: u64) -> Scene {
    let config = SceneConfig {
        width: 160,
        height: 160,
        border: 34,
        boxes: vec![(50, 50, 20), (92, 96, 20)],
        path_cols: (76, 90),
        ..SceneConfig::default()
    };
    backyard_scene(&config, seed)
}

pub fn scene_defaults() -> SessionConfig {
    SessionConfig {
        point_height_threshold: 0.02,
        ..SessionConfig::default()
    }
}

pub struct TestServer {
    pub base: String,
    pub app: Arc<AppState>,
    pub handle: tokio::task::JoinHandle<()>,
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.handle.abort();
    }
}

impl TestServer {
    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }
}

/// Serves a fresh app on an ephemeral port. Call from inside a runtime.
pub async fn start(network: Network, data_dir: Option<PathBuf>, defaults: SessionConfig) -> TestServer {
    let bytes = encode_checkpoint(&network);
    let checkpoint = match &data_dir {
        Some(dir) => terrainnav_service::persist::store_checkpoint(dir, &bytes).unwrap(),
        None => sha256_hex(&bytes),
    };
    let app = Arc::new(AppState::new(
        network,
        checkpoint,
        ServiceConfig {
            data_dir,
            session_defaults: defaults,
        },
    ));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    let service = router(app.clone());
    let handle = tokio::spawn(async move {
        axum::serve(listener, service).await.unwrap();
    });
    TestServer {
        base: format!("http://{addr}"),
        app,
        handle,
    }
}

pub fn frame_body(scene: &Scene) -> Value {
    json!({
        "image": base64::engine::general_purpose::STANDARD.encode(scene.image.encode_png().unwrap()),
        "cloud": scene.cloud.to_csv(),
    })
}

pub async fn create_session(client: &reqwest::Client, server: &TestServer) -> String {
    let r = client.post(server.url("/session")).send().await.unwrap();
    assert_eq!(r.status(), 201);
    let v: Value = r.json().await.unwrap();
    v["id"].as_str().unwrap().to_string()
}

pub async fn post_json(client: &reqwest::Client, url: String, body: &Value) -> (u16, Value) {
    let r = client.post(url).json(body).send().await.unwrap();
    let status = r.status().as_u16();
    (status, r.json().await.unwrap_or(Value::Null))
}

pub async fn get_json(client: &reqwest::Client, url: String) -> (u16, Value) {
    let r = client.get(url).send().await.unwrap();
    let status = r.status().as_u16();
    (status, r.json().await.unwrap_or(Value::Null))
}

/// Uniform-cost search by repeated linear scans for the cheapest open cell,
/// with distances to obstacles computed by brute force.
pub fn ucs_oracle(map: &CostMap, start: [usize; 2], goal: [usize; 2], req: &PlanRequest) -> Option<f64> {
    let (nx, ny, res) = (map.nx(), map.ny(), map.resolution());
    let blocked = |ix: usize, iy: usize| map.cell(ix, iy).fused == Some(TerrainClass::Obstacle);
    let obstacles: Vec<(usize, usize)> =
        (0..nx * ny).map(|i| (i % nx, i / nx)).filter(|&(x, y)| blocked(x, y)).collect();
    let clearance: Vec<f64> = (0..nx * ny)
        .map(|i| {
            let (x, y) = (i % nx, i / nx);
            obstacles
                .iter()
                .map(|&(ox, oy)| ((x as f64 - ox as f64).powi(2) + (y as f64 - oy as f64).powi(2)).sqrt() * res)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    if blocked(start[0], start[1]) || blocked(goal[0], goal[1]) {
        return None;
    }
    let mut cost = vec![f64::INFINITY; nx * ny];
    let mut done = vec![false; nx * ny];
    cost[start[1] * nx + start[0]] = 0.0;
    loop {
        let mut best: Option<usize> = None;
        for i in 0..nx * ny {
            if !done[i] && cost[i].is_finite() && best.is_none_or(|b| cost[i] < cost[b]) {
                best = Some(i);
            }
        }
        let u = best?;
        if u == goal[1] * nx + goal[0] {
            return Some(cost[u]);
        }
        done[u] = true;
        let (ux, uy) = ((u % nx) as i64, (u / nx) as i64);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (vx, vy) = (ux + dx, uy + dy);
                if (dx == 0 && dy == 0) || vx < 0 || vy < 0 || vx >= nx as i64 || vy >= ny as i64 {
                    continue;
                }
                let (vx, vy) = (vx as usize, vy as usize);
                if blocked(vx, vy) {
                    continue;
                }
                // Diagonal moves may not squeeze past an obstacle corner.
                if dx != 0 && dy != 0 && (blocked(ux as usize, vy) || blocked(vx, uy as usize)) {
                    continue;
                }
                let step = if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 } * res;
                let v = vy * nx + vx;
                let mut edge = step * (1.0 + req.proximity_weight * (-clearance[v] / req.proximity_scale).exp());
                if map.cell(vx, vy).fused.is_none() {
                    edge *= req.unknown_penalty;
                }
                if cost[u] + edge < cost[v] {
                    cost[v] = cost[u] + edge;
                }
            }
        }
    }
}
