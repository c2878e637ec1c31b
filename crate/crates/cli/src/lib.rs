//! Reproducible experiments and figure-data exports for effective-dimension
//! analysis. Every output embeds the resolved configuration and seed list and
//! contains no timestamps, so identical flags give byte-identical files.

pub mod args;
mod commands;

use std::fmt;
use std::path::Path;

use effdim_core::Error;
use serde::Serialize;

pub use args::{Args, Command, Format, Kind, Seeds, SweepParam};

/// Failure classes, each with its own process exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, files or JSON.
    Input(String),
    /// The DARE fixed-point iteration did not converge.
    NoConvergence(String),
    /// Any other numerical failure.
    Compute(String),
}

impl CliError {
    pub const INPUT_EXIT: i32 = 2;
    pub const NO_CONVERGENCE_EXIT: i32 = 3;
    pub const COMPUTE_EXIT: i32 = 4;

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) => Self::INPUT_EXIT,
            Self::NoConvergence(_) => Self::NO_CONVERGENCE_EXIT,
            Self::Compute(_) => Self::COMPUTE_EXIT,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Input(m) => write!(f, "input error: {m}"),
            Self::NoConvergence(m) => write!(f, "{m}"),
            Self::Compute(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NoConvergence { .. } => Self::NoConvergence(e.to_string()),
            Error::Input(m) => Self::Input(m),
            Error::Dimension(_)
            | Error::InvalidProblem(_)
            | Error::NotSymmetric(_)
            | Error::Domain(_)
            | Error::EmptyGrid => Self::Input(e.to_string()),
            _ => Self::Compute(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Rendered command output: the main document and an optional JSON summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub body: String,
    pub summary: Option<String>,
}

/// The full resolved configuration embedded in every output.
#[derive(Debug, Serialize)]
pub(crate) struct Provenance<'a> {
    pub command: &'static str,
    pub config: &'a Args,
}

pub(crate) fn json_document<T: Serialize>(args: &Args, result: &T) -> String {
    #[derive(Serialize)]
    struct Doc<'a, T> {
        #[serde(flatten)]
        provenance: Provenance<'a>,
        result: &'a T,
    }
    let doc = Doc { provenance: provenance(args), result };
    let mut text = serde_json::to_string_pretty(&doc).expect("output serializes");
    text.push('\n');
    text
}

pub(crate) fn provenance(args: &Args) -> Provenance<'_> {
    Provenance { command: args.command.name(), config: args }
}

/// CSV with a `#` comment header carrying the resolved configuration.
pub(crate) fn csv_document(args: &Args, extra: &[(&str, String)], rows: &str) -> String {
    let config = serde_json::to_string(&provenance(args)).expect("config serializes");
    let mut out = format!("# effdim {}\n# config: {config}\n", args.command.name());
    for (key, value) in extra {
        out.push_str(&format!("# {key}: {value}\n"));
    }
    out.push_str(rows);
    out
}

/// Apply `EFFDIM_THREADS` to the global thread pool, if set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("EFFDIM_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| CliError::Input(format!("EFFDIM_THREADS must be a positive integer, got `{value}`")))?;
    if n == 0 {
        return Err(CliError::Input("EFFDIM_THREADS must be positive".into()));
    }
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(args: &Args) -> CliResult<Output> {
    commands::dispatch(args)
}

/// Write to `args.out` (summary beside it as `<out>.summary.json`) or stdout.
pub fn emit(args: &Args, output: &Output) -> CliResult<()> {
    match &args.out {
        Some(path) => {
            write_file(path, &output.body)?;
            if let Some(summary) = &output.summary {
                let mut name = path.as_os_str().to_owned();
                name.push(".summary.json");
                write_file(Path::new(&name), summary)?;
            }
        }
        None => print!("{}", output.body),
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
