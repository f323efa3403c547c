use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use amrule_cli::lm::{stub_router, HttpLm};
use amrule_cli::server::{prepare, router, AppState, Service, SharedLm};
use amrule_core::catalog::{synth_generate, write_copurchase, SynthConfig};
use amrule_core::orchestrator::{Ablation, AnnotatorConfig, Run, RunConfig, Stage};
use amrule_core::prompt_rules::{RetryingClient, StubLm};
use amrule_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "amrule", version, about = "Adaptive rule discovery for compatible-product prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct LmArgs {
    /// Base URL of a fill-mask/embedding server; the in-process stub is used
    /// when absent.
    #[arg(long)]
    lm_url: Option<String>,
    /// Attempts per language-model call.
    #[arg(long, default_value_t = 3)]
    lm_attempts: usize,
    #[arg(long, default_value_t = 30)]
    lm_timeout_secs: u64,
}

impl LmArgs {
    fn client(&self) -> SharedLm {
        match &self.lm_url {
            Some(url) => Box::new(RetryingClient::new(
                HttpLm::new(url, Duration::from_secs(self.lm_timeout_secs)),
                self.lm_attempts,
                Duration::from_millis(250),
            )),
            None => Box::new(StubLm::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the loop headless (scripted or replayed decisions), or prepare an
    /// interactive run for `serve`.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replay this decisions file instead of the configured annotator.
        #[arg(long)]
        decisions: Option<PathBuf>,
        #[arg(long)]
        ablation: Option<Ablation>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the run directory of the config.
        #[arg(long)]
        run: Option<PathBuf>,
        #[command(flatten)]
        lm: LmArgs,
    },
    /// Generate a synthetic planted-rule dataset.
    Synth {
        /// Synthetic config (JSON); the planted lighting benchmark when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Accuracy of the run's final predictor on a split.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Serve the annotation API for a run.
    Serve {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[command(flatten)]
        lm: LmArgs,
    },
    /// Serve the stub language model over HTTP.
    StubLm {
        #[arg(long, default_value = "127.0.0.1:8090")]
        bind: String,
    },
    /// Print the default run config.
    DefaultConfig,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            decisions,
            ablation,
            seed,
            run,
            lm,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(p) = decisions {
                cfg.annotator = AnnotatorConfig::Decisions { path: p };
            }
            if let Some(a) = ablation {
                cfg.ablation = a;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(dir) = run {
                cfg.run_dir = dir;
            }
            let client = lm.client();
            let mut run = Run::open_or_create(cfg.clone())?;
            if cfg.annotator == AnnotatorConfig::Interactive {
                if run.state.stage == Stage::Training {
                    run.begin_iteration(&client)?;
                }
                log::info!(
                    "iteration {} is waiting for annotation; start `amrule serve --run {}`",
                    run.state.iteration,
                    run.dir.display()
                );
                return Ok(());
            }
            // the command line's annotator wins over the stored one on resume
            run.config.annotator = cfg.annotator.clone();
            let mut annotator = run.annotator()?;
            let metrics = run.run_headless(&client, annotator.as_mut())?;
            print_json(&metrics)
        }
        Command::Synth { config, out, seed } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::file(&p, e))?;
                    serde_json::from_str(&text)?
                }
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let data = synth_generate(&cfg)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::file(&out, e))?;
            data.anchors.write_jsonl(out.join("anchors.jsonl"))?;
            data.recs.write_jsonl(out.join("recs.jsonl"))?;
            write_copurchase(out.join("copurchase.csv"), &data.copurchase)?;
            let truth = serde_json::to_string_pretty(&data.truth_rules)?;
            std::fs::write(out.join("rules_truth.json"), truth).map_err(|e| Error::file(out.join("rules_truth.json"), e))?;
            log::info!(
                "wrote {} anchors, {} recommendations, {} co-purchase records to {}",
                data.anchors.len(),
                data.recs.len(),
                data.copurchase.len(),
                out.display()
            );
            Ok(())
        }
        Command::Eval { run, split } => {
            let run = Run::open(&run)?;
            let accuracy = run.evaluate(&split)?;
            print_json(&serde_json::json!({
                "split": split,
                "accuracy": accuracy,
                "iterations": run.state.metrics.len(),
            }))
        }
        Command::Serve { run, bind, lm } => {
            let mut svc = Service {
                run: Run::open(&run)?,
                lm: lm.client(),
            };
            prepare(&mut svc)?;
            let app = router(AppState::new(svc));
            serve(&bind, app)
        }
        Command::StubLm { bind } => serve(&bind, stub_router(StubLm::default())),
        Command::DefaultConfig => print_json(&RunConfig::default()),
    }
}

fn serve(bind: &str, app: axum::Router) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|e| Error::Config(format!("cannot bind {bind}: {e}")))?;
        log::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
