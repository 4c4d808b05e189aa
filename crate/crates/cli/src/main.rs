//! `healthchat`: build snapshots from the corpus, serve the API and compare
//! follow-up methods.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 I/O failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use healthchat_core::artifacts::{self, ArtifactError, DataLayout, EngineSettings};
use healthchat_core::chat::{Role, StepClock};
use healthchat_core::embedding::ProviderSettings;
use healthchat_core::followup::FollowupMethod;
use healthchat_core::llm::GatewaySettings;
use healthchat_core::{peer_examples, topics};
use healthchat_server::{ServerConfig, ServerError};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "healthchat", version, about = "Community-grounded health QA chat engine")]
struct Cli {
    /// Root of the data directory (corpus/, config/, artifacts/, sessions/).
    #[arg(long, global = true, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate the corpus files and print record counts.
    Ingest,
    /// Embed the corpora and write the retrieval index snapshots.
    BuildIndex(ProviderArgs),
    /// Fit both topic backends over the conversation index.
    FitTopics {
        #[arg(long, default_value_t = topics::DEFAULT_TOPIC_COUNT)]
        k: usize,
        #[arg(long, default_value_t = topics::DEFAULT_SEED)]
        seed: u64,
        /// Cosine below which a question is an outlier (centroid_outlier backend).
        #[arg(long, default_value_t = topics::DEFAULT_OUTLIER_THRESHOLD)]
        threshold: f64,
    },
    /// Categorize, score and filter community posts.
    CuratePosts {
        #[arg(long, default_value_t = peer_examples::DEFAULT_PER_CATEGORY_CAP)]
        cap: usize,
        #[command(flatten)]
        provider: ProviderArgs,
        #[command(flatten)]
        llm: LlmArgs,
    },
    /// Start the HTTP API.
    Serve {
        /// Server configuration JSON; defaults apply when omitted.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Overrides the configured bind address.
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
    },
    /// Run every follow-up method over each base QA pair and write JSON Lines.
    EvalFollowups {
        /// Output file; defaults to artifacts/eval_followups.jsonl.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        #[command(flatten)]
        provider: ProviderArgs,
        #[command(flatten)]
        llm: LlmArgs,
    },
}

#[derive(Debug, Args)]
struct ProviderArgs {
    /// Embedding provider settings JSON; overrides --dim and --embed-seed.
    #[arg(long, value_name = "FILE")]
    provider: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 42)]
    embed_seed: u64,
}

#[derive(Debug, Args)]
struct LlmArgs {
    /// LLM gateway settings JSON; the offline canned gateway when omitted.
    #[arg(long, value_name = "FILE")]
    llm: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Server(#[from] ServerError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        let io = match self {
            CliError::Invalid(_) => false,
            CliError::Io { .. } => true,
            CliError::Artifact(e) => e.is_io(),
            CliError::Server(e) => e.is_io(),
        };
        if io {
            2
        } else {
            1
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

impl ProviderArgs {
    fn settings(&self) -> Result<ProviderSettings, CliError> {
        match &self.provider {
            Some(path) => read_json(path),
            None if self.dim == 0 => Err(CliError::Invalid("--dim must be positive".into())),
            None => Ok(ProviderSettings::HashedTrigram {
                dim: self.dim,
                seed: self.embed_seed,
            }),
        }
    }
}

impl LlmArgs {
    fn settings(&self) -> Result<GatewaySettings, CliError> {
        match &self.llm {
            Some(path) => read_json(path),
            None => Ok(GatewaySettings::Offline),
        }
    }
}

#[derive(Debug, Serialize)]
struct EvalRow<'a> {
    qa_id: &'a str,
    question: &'a str,
    method: FollowupMethod,
    followups: Vec<String>,
    context_doc_ids: Vec<String>,
    error: Option<String>,
}

fn eval_followups(layout: &DataLayout, out: &Path, provider: ProviderSettings, llm: GatewaySettings) -> Result<usize, CliError> {
    let settings = EngineSettings {
        provider,
        ..EngineSettings::default()
    };
    let loaded = artifacts::load_engine(layout, &settings, llm.build(), Arc::new(StepClock::new(0)))?;
    let engine = &loaded.engine;
    let mut rows = Vec::new();
    for qa in engine.base_qa.iter() {
        let mut session = engine.start_session(qa.id.clone());
        session.push(Role::User, qa.question.clone(), 1);
        session.push(Role::Agent, qa.answer.clone(), 2);
        for method in FollowupMethod::ALL {
            let row = match engine.followups.suggest(&session, method, &*engine.llm) {
                Ok(set) => EvalRow {
                    qa_id: &qa.id,
                    question: &qa.question,
                    method,
                    followups: set.questions,
                    context_doc_ids: set.context_doc_ids,
                    error: None,
                },
                Err(e) => EvalRow {
                    qa_id: &qa.id,
                    question: &qa.question,
                    method,
                    followups: Vec::new(),
                    context_doc_ids: Vec::new(),
                    error: Some(e.to_string()),
                },
            };
            rows.push(row);
        }
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    healthchat_core::jsonl::write_jsonl(out, &rows).map_err(|source| CliError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    Ok(rows.len())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let data_dir = cli.data_dir.clone().unwrap_or_else(|| PathBuf::from("data"));
    let layout = DataLayout::new(&data_dir);
    match cli.command {
        Command::Ingest => {
            let (_, summary) = artifacts::ingest(&layout)?;
            println!("{summary}");
        }
        Command::BuildIndex(provider) => {
            let provider = provider.settings()?.build();
            let s = artifacts::build_indexes(&layout, &*provider)?;
            println!(
                "qa_docs={} conv_docs={} lookup_docs={} provider={}",
                s.qa_docs, s.conv_docs, s.lookup_docs, s.provider
            );
        }
        Command::FitTopics { k, seed, threshold } => {
            if k == 0 {
                return Err(CliError::Invalid("--k must be positive".into()));
            }
            for s in artifacts::fit_topic_models(&layout, k, seed, threshold)? {
                println!(
                    "backend={} k={} iterations={} outliers={} sizes={:?}",
                    serde_json::to_value(s.backend).map_err(|e| CliError::Invalid(e.to_string()))?.as_str().unwrap_or_default(),
                    s.k,
                    s.iterations,
                    s.outliers,
                    s.topic_sizes
                );
            }
        }
        Command::CuratePosts { cap, provider, llm } => {
            let provider = provider.settings()?.build();
            let llm = llm.settings()?.build();
            let report = artifacts::curate_posts(&layout, &*provider, &*llm, cap)?;
            println!(
                "selected={} excluded={}",
                report.selected_ids.values().map(Vec::len).sum::<usize>(),
                report.exclusions.len()
            );
        }
        Command::Serve { config, bind } => {
            let mut config = match config {
                Some(path) => ServerConfig::load(&path)?,
                None => ServerConfig::default(),
            };
            if let Some(dir) = cli.data_dir {
                config.data_dir = dir;
            }
            if let Some(bind) = bind {
                config.bind = bind;
            }
            tracing_subscriber::fmt()
                .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
                .init();
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|source| CliError::Io {
                    path: PathBuf::from("<runtime>"),
                    source,
                })?;
            runtime.block_on(healthchat_server::serve(config))?;
        }
        Command::EvalFollowups { out, provider, llm } => {
            let out = out.unwrap_or_else(|| layout.artifacts_dir().join("eval_followups.jsonl"));
            let rows = eval_followups(&layout, &out, provider.settings()?, llm.settings()?)?;
            println!("rows={rows} out={}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
