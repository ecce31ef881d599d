//! Library side of the `sma` command-line tool: configuration, dataset CSV,
//! fit artifacts, plot emission and the subcommand bodies.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod persist;
pub mod plots;

use std::io::Write;
use std::path::Path;

use sma_core::{Result, SmaError};

/// Writes to a sibling temporary file, then renames over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| SmaError::Io(e.error))?;
    Ok(())
}

/// 2 usage, 3 data, 4 numerical.
pub fn exit_code(e: &SmaError) -> i32 {
    match e {
        SmaError::Usage(_) | SmaError::Config(_) => 2,
        SmaError::Numerical(_) | SmaError::Degenerate(_) => 4,
        SmaError::Data(_)
        | SmaError::Parse { .. }
        | SmaError::Dimension { .. }
        | SmaError::Empty(_)
        | SmaError::Version { .. }
        | SmaError::ArtifactKind { .. }
        | SmaError::Io(_) => 3,
    }
}
