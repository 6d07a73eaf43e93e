//! `convey` command line.
//!
//! Exit codes: 0 success, 1 validation or parse failure (or nothing to
//! report), 2 I/O error, 3 bad arguments.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use convey_core::dsl::parse_script_bytes;
use convey_core::dsl::ParseOptions;
use convey_core::engine::{replay, Cursor, EngineError, Selection};
use convey_core::flow::{NodeId, Status, SurveyGraph};
use convey_core::stats::{descriptive_summary, Bootstrap, Metric, Orientation, SurveyView};
use convey_core::store::{export_csv, read_csv, FileStore, StoreError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_USAGE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "convey",
    version,
    about = "Conversational surveys: validate, preview, serve and analyse"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a survey script and report every error.
    Validate { file: PathBuf },
    /// Run a script with a fixed answer list and print the transcript.
    ///
    /// Answers are comma separated, one per question: a code (`3`), several
    /// codes for multi-choice questions (`1+4`), an option by position
    /// (`#2`), an option label, or free text.
    Simulate {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        answers: Vec<String>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "CONVEY_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "CONVEY_DATA_DIR", default_value = "convey-data")]
        data_dir: PathBuf,
    },
    /// Summarise an exported CSV.
    Stats {
        csv: PathBuf,
        #[arg(long, default_value = "interval")]
        metric: Metric,
        #[arg(long, default_value = "respondents")]
        orientation: Orientation,
        /// Bootstrap replicates for a p-value on Krippendorff's alpha.
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long, default_value_t = Bootstrap::default().seed)]
        seed: u64,
        /// Emit JSON instead of a text table.
        #[arg(long)]
        json: bool,
    },
    /// Write a survey's responses as CSV to stdout.
    Export {
        survey_id: String,
        #[arg(long, env = "CONVEY_DATA_DIR", default_value = "convey-data")]
        data_dir: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run(
    args: impl IntoIterator<Item = impl Into<OsString> + Clone>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Validate { file } => validate(&file, out),
        Command::Simulate { file, answers } => simulate(&file, &answers, out),
        Command::Serve { port, data_dir } => serve(port, &data_dir),
        Command::Stats {
            csv,
            metric,
            orientation,
            bootstrap,
            seed,
            json,
        } => {
            let boot = bootstrap.map(|replicates| Bootstrap { replicates, seed });
            stats(&csv, metric, orientation, boot, json, out)
        }
        Command::Export {
            survey_id,
            data_dir,
        } => export(&survey_id, &data_dir, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "{}", f.message);
            f.code
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| fail(EXIT_IO, format!("{}: {e}", path.display())))
}

fn load_script(path: &Path) -> Result<SurveyGraph, Failure> {
    let bytes = read_file(path)?;
    let id = path
        .file_stem()
        .map_or("survey".into(), |s| s.to_string_lossy().into_owned());
    let opts = ParseOptions {
        id,
        ..ParseOptions::default()
    };
    parse_script_bytes(&bytes, &opts).map_err(|errors| {
        let lines: Vec<String> = errors
            .iter()
            .map(|e| format!("{}:{e}", path.display()))
            .collect();
        fail(EXIT_INVALID, lines.join("\n"))
    })
}

fn io_out(e: std::io::Error) -> Failure {
    fail(EXIT_IO, format!("stdout: {e}"))
}

fn validate(path: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let g = load_script(path)?;
    let questions = g.nodes.iter().filter(|n| n.is_question()).count();
    writeln!(
        out,
        "{}: ok ({} nodes, {} questions)",
        path.display(),
        g.nodes.len(),
        questions
    )
    .map_err(io_out)
}

fn simulate(path: &Path, answers: &[String], out: &mut dyn Write) -> Result<(), Failure> {
    let mut g = load_script(path)?;
    g.status = Status::Published;
    let selections = selections_for(&g, answers)?;
    let (_, t) = replay(&g, "preview", &selections).map_err(|e| fail(EXIT_USAGE, e.to_string()))?;
    write!(out, "{t}").map_err(io_out)
}

/// Turns answer tokens into selections by walking the conversation, so each
/// token is read against the question it answers.
fn selections_for(g: &SurveyGraph, answers: &[String]) -> Result<Vec<Selection>, Failure> {
    let mut selections: Vec<Selection> = Vec::new();
    loop {
        let (session, _) = replay(g, "preview", &selections).map_err(|e| match e {
            EngineError::InvalidSelection { .. } | EngineError::ShapeMismatch { .. } => {
                fail(EXIT_USAGE, format!("answer {}: {e}", selections.len()))
            }
            other => fail(EXIT_INVALID, other.to_string()),
        })?;
        let Cursor::At(qid) = &session.cursor else {
            if selections.len() < answers.len() {
                return Err(fail(
                    EXIT_USAGE,
                    format!(
                        "too many answers: the survey ended after {}",
                        selections.len()
                    ),
                ));
            }
            return Ok(selections);
        };
        let Some(token) = answers.get(selections.len()) else {
            return Err(fail(
                EXIT_USAGE,
                format!(
                    "too few answers: {} given, question {qid} still needs one",
                    answers.len()
                ),
            ));
        };
        selections.push(selection_for(g, qid, token.trim())?);
    }
}

fn selection_for(g: &SurveyGraph, qid: &NodeId, token: &str) -> Result<Selection, Failure> {
    let q = g.node(qid).expect("cursor names a node");
    if q.is_free_text() {
        return Ok(Selection::Text(token.to_owned()));
    }
    let index = g.index();
    let options = index.options(qid);
    if q.multi {
        let codes: Result<Vec<i64>, _> =
            token.split('+').map(|c| c.trim().parse::<i64>()).collect();
        return codes.map(Selection::Values).map_err(|_| {
            fail(
                EXIT_USAGE,
                format!("question {qid} takes codes joined by '+', got `{token}`"),
            )
        });
    }
    if let Ok(v) = token.parse::<i64>() {
        return Ok(Selection::Value(v));
    }
    if let Some(k) = token
        .strip_prefix('#')
        .and_then(|k| k.parse::<usize>().ok())
    {
        return options
            .get(k.wrapping_sub(1))
            .map(|o| Selection::Option(o.id.clone()))
            .ok_or_else(|| fail(EXIT_USAGE, format!("question {qid} has no option {token}")));
    }
    if let Some(o) = options
        .iter()
        .find(|o| o.content.eq_ignore_ascii_case(token))
    {
        return Ok(Selection::Option(o.id.clone()));
    }
    match options.as_slice() {
        [only] => Ok(Selection::Option(only.id.clone())),
        _ => Err(fail(
            EXIT_USAGE,
            format!("`{token}` is not an answer to question {qid}"),
        )),
    }
}

fn serve(port: u16, data_dir: &Path) -> Result<(), Failure> {
    let store = FileStore::open(data_dir).map_err(|e| fail(EXIT_IO, e.to_string()))?;
    let state = crate::AppState::new(Arc::new(store));
    let rt = tokio::runtime::Runtime::new().map_err(|e| fail(EXIT_IO, e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port))
            .await
            .map_err(|e| fail(EXIT_IO, format!("port {port}: {e}")))?;
        tracing::info!(
            "listening on {}",
            listener
                .local_addr()
                .map_err(|e| fail(EXIT_IO, e.to_string()))?
        );
        axum::serve(listener, crate::app(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| fail(EXIT_IO, e.to_string()))
    })
}

fn stats(
    path: &Path,
    metric: Metric,
    orientation: Orientation,
    bootstrap: Option<Bootstrap>,
    json: bool,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let bytes = read_file(path)?;
    let rows = read_csv(bytes.as_slice())
        .map_err(|e| fail(EXIT_INVALID, format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(fail(
            EXIT_INVALID,
            format!("{}: no records", path.display()),
        ));
    }
    if bootstrap.is_some_and(|b| b.replicates == 0) {
        return Err(fail(EXIT_USAGE, "--bootstrap needs at least one replicate"));
    }
    let id = path
        .file_stem()
        .map_or("survey".into(), |s| s.to_string_lossy().into_owned());
    let view = SurveyView::from_csv(&id, &rows, Default::default());
    let mut report = descriptive_summary(&view);
    report.tests = crate::reliability_tests(&view.matrix(true), metric, orientation, bootstrap);
    if json {
        let text =
            serde_json::to_string_pretty(&report).map_err(|e| fail(EXIT_IO, e.to_string()))?;
        writeln!(out, "{text}").map_err(io_out)
    } else {
        write!(out, "{report}").map_err(io_out)
    }
}

fn export(survey_id: &str, data_dir: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    if !data_dir.is_dir() {
        return Err(fail(
            EXIT_IO,
            format!("{}: no such data directory", data_dir.display()),
        ));
    }
    let store = FileStore::open(data_dir).map_err(|e| fail(EXIT_IO, e.to_string()))?;
    let csv = export_csv(&store, survey_id).map_err(|e| match e {
        StoreError::Io { .. } | StoreError::Corrupt { .. } => fail(EXIT_IO, e.to_string()),
        other => fail(EXIT_INVALID, other.to_string()),
    })?;
    out.write_all(csv.as_bytes()).map_err(io_out)
}
