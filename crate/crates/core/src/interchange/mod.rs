//! File formats: the MGT1 tensor container (capture dumps and model
//! checkpoints), the versioned report JSON and CSV plot data.

pub mod capture;
pub mod container;
pub mod report;

use thiserror::Error;

pub use capture::{captures_from_container, captures_to_container};
pub use container::{read_index, Dtype, DumpContainer, DumpHeader, IndexEntry, Tensor, TensorData};
pub use report::{
    histogram, parse_json, read_report, read_report_file, write_plot_csv, write_report, write_report_file,
    ComparisonFile, ReportFile,
};

#[derive(Debug, Error)]
pub enum InterchangeError {
    #[error("not an MGT1 file (bad magic)")]
    BadMagic,
    #[error("unsupported MGT1 format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated container: {0}")]
    Truncated(String),
    #[error("section {section}: shape/length mismatch: {detail}")]
    ShapeMismatch { section: String, detail: String },
    #[error("section {section}: unsupported dtype code {code}")]
    UnsupportedDtype { section: String, code: u8 },
    #[error("invalid container header: {0}")]
    Header(#[source] serde_json::Error),
    #[error("missing section {0}")]
    MissingSection(String),
    #[error("malformed data: {0}")]
    Malformed(String),
    #[error("JSON parse error at byte {offset}: {message}")]
    Json { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
}

/// Reads and decodes a container from disk.
pub fn read_dump_file(path: &std::path::Path) -> Result<DumpContainer, InterchangeError> {
    DumpContainer::from_bytes(&std::fs::read(path)?)
}

pub fn write_dump_file(path: &std::path::Path, c: &DumpContainer) -> Result<(), InterchangeError> {
    std::fs::write(path, c.to_bytes()?)?;
    Ok(())
}
