#![allow(dead_code)]

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;

use serde_json::Value;
use stainscope_core::prompt::ScriptedChatClient;
use stainscope_core::{make_toy_backend, ChatClientConfig, ImageBuffer, ToySpec, VisionLanguageBackend};
use stainscope_service::{SessionStore, Workbench};

pub const QUERY: &str = "this is a pdl-1 stained slide of brain tissue, give me the full details";

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn toy(seed: u64) -> Arc<dyn VisionLanguageBackend> {
    Arc::new(make_toy_backend(ToySpec::new(seed)))
}

pub fn workbench_with(root: &Path, script: &str, backend: Arc<dyn VisionLanguageBackend>) -> Workbench {
    let store = SessionStore::open(root).unwrap();
    let chat = Arc::new(ScriptedChatClient::from_file(fixture(script)).unwrap());
    Workbench::new(store, backend, chat, ChatClientConfig::default())
}

pub fn workbench(root: &Path) -> Workbench {
    workbench_with(root, "llm_script.json", toy(42))
}

pub fn png(img: &ImageBuffer) -> Vec<u8> {
    img.to_png_bytes().unwrap()
}

/// session.json with id and timestamps removed.
pub fn without_volatile(session_json: &[u8]) -> Value {
    let mut v: Value = serde_json::from_slice(session_json).unwrap();
    let obj = v.as_object_mut().unwrap();
    for key in ["id", "created_at", "updated_at"] {
        obj.remove(key);
    }
    for e in obj["explanations"].as_array_mut().unwrap() {
        e.as_object_mut().unwrap().remove("created_at");
    }
    v
}

/// Serves `router` on an ephemeral localhost port from a background thread.
pub fn serve(router: axum::Router) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    url
}
