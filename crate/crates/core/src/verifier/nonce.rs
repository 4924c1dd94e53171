//! Issued-challenge bookkeeping.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::pox::Challenge;

/// Remembers challenges that were already accepted and rejects reuse.
///
/// The file-backed store holds one hex challenge per line and takes an
/// exclusive lock for each check-and-insert, so separate processes sharing
/// the file serialize correctly.
#[derive(Debug)]
pub enum NonceStore {
    Memory(Mutex<HashSet<Challenge>>),
    File(PathBuf),
}

impl NonceStore {
    pub fn in_memory() -> NonceStore {
        NonceStore::Memory(Mutex::new(HashSet::new()))
    }

    pub fn file(path: impl AsRef<Path>) -> NonceStore {
        NonceStore::File(path.as_ref().to_path_buf())
    }

    /// Records `challenge`; returns false if it was seen before.
    pub fn check_and_insert(&self, challenge: &Challenge) -> io::Result<bool> {
        match self {
            NonceStore::Memory(set) => Ok(set.lock().expect("nonce set poisoned").insert(*challenge)),
            NonceStore::File(path) => {
                let mut f = OpenOptions::new().read(true).append(true).create(true).open(path)?;
                f.lock()?;
                let fresh = Self::check_and_append(&mut f, challenge);
                f.unlock()?;
                fresh
            }
        }
    }

    fn check_and_append(f: &mut File, challenge: &Challenge) -> io::Result<bool> {
        let needle = hex::encode(challenge);
        f.seek(SeekFrom::Start(0))?;
        for line in BufReader::new(&*f).lines() {
            if line?.trim() == needle {
                return Ok(false);
            }
        }
        writeln!(f, "{needle}")?;
        f.sync_data()?;
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_store_rejects_reuse() {
        let s = NonceStore::in_memory();
        assert!(s.check_and_insert(&[1; 16]).unwrap());
        assert!(!s.check_and_insert(&[1; 16]).unwrap());
        assert!(s.check_and_insert(&[2; 16]).unwrap());
    }

    #[test]
    fn file_store_persists() {
        let dir = std::env::temp_dir().join(format!("nonce-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("nonces");
        let _ = std::fs::remove_file(&path);
        assert!(NonceStore::file(&path).check_and_insert(&[3; 16]).unwrap());
        assert!(!NonceStore::file(&path).check_and_insert(&[3; 16]).unwrap());
        assert!(NonceStore::file(&path).check_and_insert(&[4; 16]).unwrap());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
