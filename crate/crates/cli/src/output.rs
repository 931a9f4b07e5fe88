//! Output directory plumbing: a lockfile against concurrent writers, the
//! provenance line embedded in every artifact, and small write helpers.

use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

/// Exclusive claim on an output directory, backed by a `.lock` file that is
/// created atomically and removed on drop. A second writer fails fast
/// instead of interleaving artifacts.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(CliError::Data(format!(
                "{} is in use by another run (delete {} if that run is dead)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::Data(format!("cannot lock {}: {e}", dir.display()))),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// The provenance string: which config bytes and master seed produced an
/// artifact. Text outputs carry it as a leading `# ` comment; JSON outputs
/// embed it as a `meta` object.
pub fn meta_line(fingerprint: &str, master_seed: u64) -> String {
    format!("config={fingerprint} master_seed={master_seed}")
}

pub fn meta_value(fingerprint: &str, master_seed: u64) -> serde_json::Value {
    serde_json::json!({ "config": fingerprint, "master_seed": master_seed })
}

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, content)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Pretty JSON plus a trailing newline; field order is fixed by the struct
/// definitions, so output is byte-stable.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&raw)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_excludes_second_writer_and_releases_on_drop() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        let second = DirLock::acquire(dir.path());
        assert!(matches!(second, Err(CliError::Data(_))));
        drop(lock);
        DirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn meta_line_format() {
        assert_eq!(meta_line("00ff", 7), "config=00ff master_seed=7");
    }
}
