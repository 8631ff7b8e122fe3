//! `stainscope` launcher.
//!
//! `stainscope serve` runs the workbench API; `stainscope adapter` exposes a
//! backend over the remote protocol so another workbench can drive it.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use stainscope_core::backend::remote::RemoteBackend;
use stainscope_core::prompt::{ChatClient, HttpChatClient, ScriptedChatClient};
use stainscope_core::{make_toy_backend, ChatClientConfig, ToySpec, VisionLanguageBackend};
use stainscope_service::{adapter_router, router, SessionStore, Workbench};
use tracing::info;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "stainscope", version, about = "Explainable IHC slide analysis workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the workbench HTTP API.
    Serve(ServeArgs),
    /// Serve a backend over the remote backend protocol.
    Adapter(AdapterArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Toy,
    External,
}

#[derive(Debug, Args)]
struct Listen {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8750)]
    port: u16,
}

#[derive(Debug, Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Toy)]
    backend: BackendKind,
    #[arg(long, default_value_t = 42)]
    toy_seed: u64,
    /// Base URL of a remote backend adapter, for `--backend external`.
    #[arg(long)]
    backend_url: Option<String>,
    /// Seconds allowed per backend call.
    #[arg(long, default_value_t = 300)]
    backend_timeout: u64,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    listen: Listen,
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    llm_url: Option<String>,
    #[arg(long)]
    llm_model: Option<String>,
    #[arg(long)]
    llm_temperature: Option<f64>,
    /// Dot path to the completion text in the chat reply.
    #[arg(long)]
    llm_response_path: Option<String>,
    #[arg(long)]
    llm_timeout: Option<u64>,
    #[arg(long)]
    llm_retries: Option<u32>,
    /// Replay chat replies from a JSON script instead of calling a server.
    #[arg(long)]
    llm_script: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AdapterArgs {
    #[command(flatten)]
    listen: Listen,
    #[command(flatten)]
    backend: BackendArgs,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    match Cli::parse().command {
        Command::Serve(args) => serve(args),
        Command::Adapter(args) => adapter(args),
    }
}

/// Blocking HTTP clients are built here, before any async runtime exists.
fn build_backend(args: &BackendArgs) -> Result<Arc<dyn VisionLanguageBackend>> {
    match args.backend {
        BackendKind::Toy => Ok(Arc::new(make_toy_backend(ToySpec::new(args.toy_seed)))),
        BackendKind::External => {
            let Some(url) = &args.backend_url else {
                bail!("--backend external needs --backend-url");
            };
            let remote = RemoteBackend::connect(url, Duration::from_secs(args.backend_timeout))
                .with_context(|| format!("connecting to backend adapter at {url}"))?;
            Ok(Arc::new(remote))
        }
    }
}

fn chat_config(args: &ServeArgs) -> Result<ChatClientConfig> {
    let mut config = ChatClientConfig::default();
    if let Some(url) = &args.llm_url {
        config.endpoint_url = url.clone();
    }
    if let Some(model) = &args.llm_model {
        config.model_name = model.clone();
    }
    if let Some(t) = args.llm_temperature {
        config.temperature = t;
    }
    if let Some(path) = &args.llm_response_path {
        config.response_path = path.clone();
    }
    if let Some(secs) = args.llm_timeout {
        config.timeout = Duration::from_secs(secs);
    }
    if let Some(n) = args.llm_retries {
        config.max_repair_retries = n;
    }
    config.validate()?;
    Ok(config)
}

fn bind_addr(listen: &Listen) -> Result<SocketAddr> {
    format!("{}:{}", listen.host, listen.port)
        .parse()
        .with_context(|| format!("invalid listen address {}:{}", listen.host, listen.port))
}

fn run(addr: SocketAddr, app: axum::Router) -> Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn serve(args: ServeArgs) -> Result<()> {
    let config = chat_config(&args)?;
    let chat: Arc<dyn ChatClient> = match &args.llm_script {
        Some(path) => Arc::new(
            ScriptedChatClient::from_file(path).with_context(|| format!("loading chat script {}", path.display()))?,
        ),
        None => Arc::new(HttpChatClient::new()?),
    };
    let backend = build_backend(&args.backend)?;
    let store = SessionStore::open(&args.data_dir)
        .with_context(|| format!("opening data directory {}", args.data_dir.display()))?;
    let workbench = Workbench::new(store, backend, chat, config);
    info!(backend = workbench.backend_name(), data_dir = %args.data_dir.display(), "workbench ready");
    run(bind_addr(&args.listen)?, router(Arc::new(workbench)))
}

fn adapter(args: AdapterArgs) -> Result<()> {
    let backend = build_backend(&args.backend)?;
    info!(backend = backend.descriptor().name, "adapter ready");
    run(bind_addr(&args.listen)?, adapter_router(backend))
}
