#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use axum::Router;
use preseg::synthetic::SceneParams;
use preseg_cli::commands::{ingest_synthetic, SEQUENCE_FILE};

pub const FRAMES: usize = 20;

pub const FAST_CONFIG: &str = r#"
manifest = "seq/sequence.json"
output = "out"
seed = 7

[aggregation]
half_width = 2
keyframe_translation = 4.0

[rig]
width = 320
height = 240
focal = 160.0
t = 2.0
pitch_deg = -15.0
optimize = false
"#;

/// Writes a 20-frame synthetic sequence and a fast config into `dir`;
/// returns the config path.
pub fn fixture(dir: &Path) -> PathBuf {
    let params = SceneParams {
        frames: FRAMES,
        ..SceneParams::default()
    };
    ingest_synthetic(&params, &dir.join("seq")).unwrap();
    assert!(dir.join("seq").join(SEQUENCE_FILE).exists());
    let cfg = dir.join("preseg.toml");
    std::fs::write(&cfg, FAST_CONFIG).unwrap();
    cfg
}

/// Serves `app` on an ephemeral port from its own runtime thread.
pub fn serve(app: Router) -> SocketAddr {
    let (tx, rx) = mpsc::channel();
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

pub fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let dst = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &dst);
        } else {
            std::fs::copy(e.path(), dst).unwrap();
        }
    }
}
