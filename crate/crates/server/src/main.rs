use clap::Parser;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "lowconf-server",
    version,
    about = "Selection engine HTTP service"
)]
struct Args {
    /// Address to listen on.
    #[arg(long, env = "LOWCONF_ADDR", default_value = "127.0.0.1:7878")]
    addr: String,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .init();
    let args = Args::parse();
    let listener = tokio::net::TcpListener::bind(&args.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    lowconf_server::serve(listener, async {
        let _ = tokio::signal::ctrl_c().await;
        tracing::info!("shutting down");
    })
    .await
}
