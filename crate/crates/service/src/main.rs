//! `citymove-service`: serves scenario sessions over HTTP.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use citymove_service::{router, Config, Service, DEFAULT_JOB_THRESHOLD};

#[derive(Parser)]
#[command(name = "citymove-service", version, about = "HTTP service for scenario what-if exploration")]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Scenarios with more agents run as background jobs.
    #[arg(long, default_value_t = DEFAULT_JOB_THRESHOLD)]
    job_threshold: usize,
    /// Also write session states here, in the CLI's state format.
    #[arg(long)]
    state_dir: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let svc = Service::new(Config {
        job_threshold: args.job_threshold,
        state_dir: args.state_dir,
    });
    let listener = match tokio::net::TcpListener::bind(args.addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {}: {e}", args.addr);
            return ExitCode::from(1);
        }
    };
    eprintln!("listening on {}", args.addr);
    if let Err(e) = axum::serve(listener, router(svc)).await {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
