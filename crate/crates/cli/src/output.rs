//! Run directories and file emission. Nothing here overwrites an existing file.

use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Creates `<base>/<command>-<UTC timestamp>[-k]`, picking the first free name.
pub fn create_run_dir(base: &Path, command: &str) -> Result<PathBuf> {
    fs::create_dir_all(base).with_context(|| format!("creating {}", base.display()))?;
    let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    for k in 0.. {
        let name = if k == 0 {
            format!("{command}-{stamp}")
        } else {
            format!("{command}-{stamp}-{k}")
        };
        let dir = base.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!("unbounded search for a free directory name")
}

/// Writes `contents` to a path that must not exist yet.
pub fn write_new(path: &Path, contents: &[u8]) -> Result<()> {
    let mut f = OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .with_context(|| format!("creating {} (existing files are never overwritten)", path.display()))?;
    f.write_all(contents)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_new(path, text.as_bytes())
}

/// Writes to `path` when given, else to stdout.
pub fn emit(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => write_new(p, contents.as_bytes()),
        None => {
            std::io::stdout().write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dirs_never_collide() {
        let tmp = tempfile::tempdir().unwrap();
        let a = create_run_dir(tmp.path(), "simulate").unwrap();
        let b = create_run_dir(tmp.path(), "simulate").unwrap();
        assert_ne!(a, b);
        write_new(&a.join("x.txt"), b"1").unwrap();
        assert!(write_new(&a.join("x.txt"), b"2").is_err());
        assert_eq!(fs::read(a.join("x.txt")).unwrap(), b"1");
    }
}
