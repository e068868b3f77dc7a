use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, malformed input, violated preconditions: exit 1.
    Validation(String),
    /// Unreadable or unwritable files: exit 2.
    Io(String),
}

impl CliError {
    pub fn invalid(e: impl Display) -> Self {
        CliError::Validation(e.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<pooljudge_core::corpus::CorpusError> for CliError {
    fn from(e: pooljudge_core::corpus::CorpusError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<pooljudge_core::analysis::AnalysisError> for CliError {
    fn from(e: pooljudge_core::analysis::AnalysisError) -> Self {
        match e {
            pooljudge_core::analysis::AnalysisError::Corpus(c) => c.into(),
            other => CliError::invalid(other),
        }
    }
}

impl From<pooljudge_service::ServiceError> for CliError {
    fn from(e: pooljudge_service::ServiceError) -> Self {
        match e {
            pooljudge_service::ServiceError::Log { .. } => CliError::Io(e.to_string()),
            pooljudge_service::ServiceError::Corpus(c) => c.into(),
            other => CliError::invalid(other),
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::invalid(e)
            }
        }
    )*};
}

validation_from!(
    pooljudge_core::metrics::MetricError,
    pooljudge_core::pooling::PoolingError,
    pooljudge_core::agreement::AgreementError,
    pooljudge_core::stats::StatsError,
    pooljudge_core::textsim::TextSimError
);

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Table,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Rendering of the report on standard output
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Report file prefix; writes <PREFIX>.csv and <PREFIX>.json
    /// [default: <input stem>.<report> next to the first input]
    #[arg(long, value_name = "PREFIX")]
    pub out: Option<PathBuf>,
    /// Print only; write no report files
    #[arg(long)]
    pub no_files: bool,
}

/// `<dir>/<stem>.<report>` for an input file.
pub fn default_prefix(input: &Path, report: &str) -> PathBuf {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    input.with_file_name(format!("{stem}.{report}"))
}

pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports always serialize");
    s.push('\n');
    s
}

/// A rendered report: CSV and JSON go to files, one of the three renderings
/// to standard output.
pub struct Report {
    pub csv: String,
    pub json: String,
    pub table: String,
}

impl Report {
    pub fn new<T: Serialize + ?Sized>(csv: String, json: &T, table: String) -> Self {
        Self {
            csv,
            json: to_json(json),
            table,
        }
    }
}

/// Writes the report files (unless disabled) and prints the chosen format.
pub fn emit(out: &OutputArgs, prefix: PathBuf, report: &Report) -> Result<(), CliError> {
    if !out.no_files {
        let prefix = out.out.clone().unwrap_or(prefix);
        write(&with_suffix(&prefix, ".csv"), &report.csv)?;
        write(&with_suffix(&prefix, ".json"), &report.json)?;
        log::info!("wrote {}.{{csv,json}}", prefix.display());
    }
    let text = match out.format {
        Format::Csv => &report.csv,
        Format::Json => &report.json,
        Format::Table => &report.table,
    };
    print!("{text}");
    Ok(())
}

/// Joins CSV documents that share a header.
pub fn concat_csv(parts: &[String]) -> String {
    let mut out = String::new();
    for (n, part) in parts.iter().enumerate() {
        let body = if n == 0 {
            part.as_str()
        } else {
            part.split_once('\n').map_or("", |(_, rest)| rest)
        };
        out.push_str(body);
    }
    out
}
