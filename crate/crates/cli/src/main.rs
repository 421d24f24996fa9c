use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use dashlab::session::{data_dir_from_env, SessionService};
use dashlab_cli::commands::{self, Common};
use dashlab_cli::server::router;

#[derive(Debug, Parser)]
#[command(name = "dashlab", version, about = "Auction dashboard experiments: simulation, inference and the session service")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a synthetic experiment and write its trial log.
    Simulate(commands::SimulateArgs),
    /// Fit BR, QR and QR+CRRA cost models to a trial log.
    Infer(commands::InferArgs),
    /// Baseline, benchmark, calibrated and behavioral scores per condition.
    Benchmark(commands::BenchmarkArgs),
    /// Write dashboard payloads for the stimuli.
    ExportDashboard(commands::ExportArgs),
    /// Condition summaries with bootstrap intervals.
    Report(commands::ReportArgs),
    /// Start the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Debug, clap::Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Directory of static files (the browser demo) served under `/`.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
}

fn serve(common: &Common, args: &ServeArgs) -> dashlab::Result<()> {
    let (_, ctx) = common.context()?;
    let dir = common.out.clone().unwrap_or_else(|| data_dir_from_env("data"));
    std::fs::create_dir_all(&dir)?;
    let service = SessionService::open(&dir, Arc::new(ctx), common.seed.unwrap_or(0))?;
    let n = service.session_ids().len();
    let app = router(Arc::new(service), args.static_dir.as_deref());
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.addr).await?;
        eprintln!("listening on http://{} ({n} sessions restored from {})", listener.local_addr()?, dir.display());
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = &cli.common;
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate_cmd(c, a),
        Command::Infer(a) => commands::infer_cmd(c, a),
        Command::Benchmark(a) => commands::benchmark_cmd(c, a),
        Command::ExportDashboard(a) => commands::export_dashboard_cmd(c, a),
        Command::Report(a) => commands::report_cmd(c, a),
        Command::Serve(a) => serve(c, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
