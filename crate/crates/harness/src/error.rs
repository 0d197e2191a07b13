use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("workload file not found: {}", .0.display())]
    MissingWorkload(PathBuf),
    #[error("declared CSV not found: {} (run the manifest first)", .0.display())]
    MissingCsv(PathBuf),
    #[error("refusing undeclared file {}", .0.display())]
    Undeclared(PathBuf),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {detail}", .path.display())]
    Parse { path: PathBuf, detail: String },
    #[error("run {run_id} failed: {detail}")]
    Run { run_id: String, detail: String },
    #[error("export: {0}")]
    Export(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

pub(crate) fn write(path: &std::path::Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
    }
    std::fs::write(path, contents).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}
