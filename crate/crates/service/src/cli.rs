//! `docqa` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use docqa_core::conversion::{convert, FormatHint, IdentityOcr};
use docqa_core::qa::{Answer, AnswerStatus, QaError};

use crate::app::App;
use crate::config::Config;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_REFUSED: i32 = 2;
pub const EXIT_NOT_FOUND: i32 = 3;
pub const EXIT_INPUT: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "docqa", version, about = "Question answering over converted documents")]
pub struct Cli {
    /// Library directory (overrides DOCQA_LIBRARY).
    #[arg(long, global = true)]
    pub library: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert and index a document, printing its doc_id.
    Ingest {
        file: PathBuf,
        /// pages_json or plain_text; detected from content when omitted.
        #[arg(long)]
        format: Option<String>,
    },
    /// Ask a question about an ingested document.
    Ask {
        doc_id: String,
        question: String,
        #[arg(short, long)]
        k: Option<usize>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
}

pub fn ingest(app: &App, file: &Path, format: Option<&str>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let raw = match std::fs::read(file) {
        Ok(raw) => raw,
        Err(e) => {
            let _ = writeln!(err, "cannot read {}: {e}", file.display());
            return EXIT_INPUT;
        }
    };
    let format = match format {
        Some(name) => match FormatHint::parse(name) {
            Some(f) => f,
            None => {
                let _ = writeln!(err, "unknown format {name:?}; expected pages_json or plain_text");
                return EXIT_INPUT;
            }
        },
        None => FormatHint::sniff(&raw),
    };
    let document = match convert(&raw, format, &IdentityOcr) {
        Ok(d) => d,
        Err(e) => {
            let _ = writeln!(err, "conversion failed: {e}");
            return EXIT_INPUT;
        }
    };
    match app.library.ingest(&document) {
        Ok(entry) => {
            let _ = writeln!(out, "{}", entry.doc_id);
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "ingest failed: {e}");
            EXIT_FAILURE
        }
    }
}

pub fn exit_code(result: &Result<Answer, QaError>) -> i32 {
    match result {
        Ok(a) if a.status == AnswerStatus::Ok => EXIT_OK,
        Ok(_) => EXIT_REFUSED,
        Err(QaError::UnknownDocument(_)) => EXIT_NOT_FOUND,
        Err(QaError::EmptyText | QaError::Config(_)) => EXIT_INPUT,
        Err(_) => EXIT_FAILURE,
    }
}

pub fn ask(app: &App, doc_id: &str, question: &str, k: Option<usize>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = if k == Some(0) {
        Err(QaError::Config("k must be positive".into()))
    } else {
        app.qa.answer_in(&app.library, doc_id, question, k)
    };
    match &result {
        Ok(answer) if answer.status == AnswerStatus::Ok => {
            let _ = writeln!(out, "{}", answer.text);
            let _ = writeln!(out, "\nsources (grounding {:.2}):", answer.grounding_score);
            for s in &answer.sources {
                let _ = writeln!(out, "  [{}] {:.3} {}", s.block_id, s.score, s.text);
            }
        }
        Ok(answer) => {
            let reason = if answer.moderation_flags.is_empty() {
                format!("grounding score {:.2}", answer.grounding_score)
            } else {
                format!("moderation flags: {}", answer.moderation_flags.join(", "))
            };
            let _ = writeln!(out, "no answer ({:?}): {reason}", answer.status);
        }
        Err(e) => {
            let _ = writeln!(err, "{e}");
        }
    }
    exit_code(&result)
}

pub fn run(cli: Cli) -> i32 {
    let mut config = match Config::from_env() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return EXIT_INPUT;
        }
    };
    if let Some(library) = cli.library {
        config.library = library;
    }

    if let Command::Serve { port } = cli.command {
        if let Some(port) = port {
            config.port = port;
        }
        return serve_blocking(config);
    }

    let app = match App::new(&config) {
        Ok(app) => app,
        Err(e) => {
            eprintln!("startup failed: {e:#}");
            return EXIT_FAILURE;
        }
    };
    let (mut out, mut err) = (std::io::stdout(), std::io::stderr());
    match cli.command {
        Command::Ingest { file, format } => ingest(&app, &file, format.as_deref(), &mut out, &mut err),
        Command::Ask { doc_id, question, k } => ask(&app, &doc_id, &question, k, &mut out, &mut err),
        Command::Serve { .. } => unreachable!("handled above"),
    }
}

fn serve_blocking(config: Config) -> i32 {
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("cannot start runtime: {e}");
            return EXIT_FAILURE;
        }
    };
    let result = runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", config.port)).await?;
        crate::serve(config, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("server error: {e:#}");
            EXIT_FAILURE
        }
    }
}
