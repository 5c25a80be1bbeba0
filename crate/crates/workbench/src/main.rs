use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use oro_workbench::commands::{self, CommandError};
use oro_workbench::config::SweepManifest;
use oro_workbench::service::{self, ServiceConfig};

#[derive(Parser)]
#[command(name = "oro", version, about = "Reservoir operation optimization workbench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one solver from a JSON config.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// Run store directory; defaults to the config's output_dir, then ./oro-store.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Replay the stored policy of a run and check it against its trajectory.
    Simulate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a weight sweep and keep the non-dominated results.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Manifest of weight vectors; overrides the one in the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Write summary and CSV tables for a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic data set with a matching config.
    GenSynthetic {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 25)]
        years: usize,
        #[arg(long)]
        out: PathBuf,
        /// Eight-week toy problem instead of a synthetic series.
        #[arg(long)]
        toy: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value = "oro-store")]
        store: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 16)]
        queue: usize,
        /// Require this bearer token on every request.
        #[arg(long, env = "ORO_TOKEN")]
        token: Option<String>,
    },
}

fn store_for(store: Option<PathBuf>, cfg: &oro_workbench::config::RunConfig) -> PathBuf {
    store
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("oro-store"))
}

fn run(cmd: Cmd) -> Result<(), CommandError> {
    match cmd {
        Cmd::Optimize { config, store } => {
            let cfg = commands::read_config(&config)?;
            let store = store_for(store, &cfg);
            let (rec, dir) = commands::run_config(cfg, &store)?;
            println!("{} done: {}", rec.id, dir.display());
        }
        Cmd::Sweep {
            config,
            manifest,
            store,
        } => {
            let mut cfg = commands::read_config(&config)?;
            if let Some(m) = manifest {
                let text = std::fs::read_to_string(&m).map_err(anyhow::Error::from)?;
                let m: SweepManifest = serde_json::from_str(&text).map_err(anyhow::Error::from)?;
                cfg.sweep = Some(m);
                cfg.sweep_path = None;
            }
            cfg.solver = oro_workbench::config::RunSolver::Moss;
            let store = store_for(store, &cfg);
            let (rec, dir) = commands::run_config(cfg, &store)?;
            let front = rec.summary.and_then(|s| s.front).unwrap_or_default();
            println!(
                "{} done: {} entries, front {:?}: {}",
                rec.id,
                rec.children.len(),
                front,
                dir.display()
            );
        }
        Cmd::Simulate { run, out } => {
            let gap = commands::simulate(&run, out.as_deref())?;
            println!("replayed trajectory matches, largest difference {gap:.3e}");
        }
        Cmd::Report { run, out } => {
            let out = out.unwrap_or_else(|| run.join("report"));
            print!("{}", commands::report(&run, &out)?);
        }
        Cmd::GenSynthetic { seed, years, out, toy } => {
            commands::gen_synthetic(seed, years, &out, toy)?;
            println!("wrote {}", out.display());
        }
        Cmd::Serve {
            addr,
            store,
            data,
            workers,
            queue,
            token,
        } => {
            let reg = commands::open_store(&store)?;
            let cfg = ServiceConfig {
                workers,
                queue_depth: queue,
                data_dir: data,
                token,
            };
            let rt = tokio::runtime::Runtime::new().map_err(anyhow::Error::from)?;
            rt.block_on(async move {
                let app = service::start(reg, cfg);
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                log::info!("listening on {addr}");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                Ok::<_, anyhow::Error>(())
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
