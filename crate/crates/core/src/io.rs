//! File access shared by every persistent format in the crate.
//!
//! All reads go through [`open_read`], which records the path in a process-wide
//! trace when tracing is on. Tests use the trace to show that stage 2 never
//! opens a dataset file.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::{H2sError, Result};

static READ_TRACE: Mutex<Option<Vec<PathBuf>>> = Mutex::new(None);

/// Starts (or restarts) recording every path opened for reading.
pub fn start_read_trace() {
    *READ_TRACE.lock().unwrap_or_else(|e| e.into_inner()) = Some(Vec::new());
}

/// Stops recording and returns the paths read since [`start_read_trace`].
pub fn take_read_trace() -> Vec<PathBuf> {
    READ_TRACE
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .take()
        .unwrap_or_default()
}

pub fn open_read(path: &Path) -> Result<File> {
    if let Some(trace) = READ_TRACE
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .as_mut()
    {
        trace.push(path.to_path_buf());
    }
    File::open(path).map_err(|e| H2sError::io(format!("opening {}", path.display()), e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    std::io::Read::read_to_string(&mut open_read(path)?, &mut s)
        .map_err(|e| H2sError::io(format!("reading {}", path.display()), e))?;
    Ok(s)
}

pub fn create_dir_all(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| H2sError::io(format!("creating directory {}", dir.display()), e))
}

/// Writes `path` through a temporary file in the same directory followed by
/// a rename, so readers never observe a partially written file.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    create_dir_all(&dir)?;
    let ctx = |e| H2sError::io(format!("writing {}", path.display()), e);
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(ctx)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        write(&mut buf).map_err(ctx)?;
        buf.flush().map_err(ctx)?;
    }
    tmp.persist(path).map_err(|e| ctx(e.error))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::other)?;
        w.write_all(b"\n")
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| H2sError::input(format!("{}: invalid JSON: {e}", path.display())))
}
