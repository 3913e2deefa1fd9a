//! Advisory lock next to a snapshot: `<snapshot>.lock` holding the owner's pid.

use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct SnapshotLock {
    path: PathBuf,
}

#[derive(Debug)]
pub enum LockError {
    Held { path: PathBuf, pid: u32 },
    Io(std::io::Error),
}

impl std::fmt::Display for LockError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LockError::Held { path, pid } => {
                write!(f, "snapshot is locked by running process {pid} ({})", path.display())
            }
            LockError::Io(e) => write!(f, "lock file: {e}"),
        }
    }
}

impl std::error::Error for LockError {}

fn process_alive(pid: u32) -> bool {
    if cfg!(target_os = "linux") {
        Path::new(&format!("/proc/{pid}")).exists()
    } else {
        true
    }
}

pub fn lock_path(snapshot: &Path) -> PathBuf {
    let mut name = snapshot.file_name().unwrap_or_default().to_os_string();
    name.push(".lock");
    snapshot.with_file_name(name)
}

impl SnapshotLock {
    /// Take the lock, replacing a lock left behind by a dead process.
    pub fn acquire(snapshot: &Path) -> Result<Self, LockError> {
        let path = lock_path(snapshot);
        let me = std::process::id();
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    writeln!(f, "{me}").map_err(LockError::Io)?;
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                    let owner = fs::read_to_string(&path)
                        .ok()
                        .and_then(|s| s.trim().parse::<u32>().ok());
                    match owner {
                        Some(pid) if pid != me && process_alive(pid) => {
                            return Err(LockError::Held { path, pid });
                        }
                        _ => {
                            log::warn!("removing stale lock {}", path.display());
                            fs::remove_file(&path).map_err(LockError::Io)?;
                        }
                    }
                }
                Err(e) => return Err(LockError::Io(e)),
            }
        }
        Err(LockError::Io(std::io::Error::new(
            ErrorKind::WouldBlock,
            "lock file keeps reappearing",
        )))
    }
}

impl Drop for SnapshotLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
