//! Write-once response cache: one JSON file per key, named by the SHA-256
//! of model, sample reference and prompt.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::AttribError;

#[derive(Serialize, Deserialize)]
struct Entry {
    model: String,
    sample: String,
    prompt: String,
    response: String,
}

pub struct ResponseCache {
    dir: PathBuf,
    hits: AtomicUsize,
    misses: AtomicUsize,
    tmp_counter: AtomicUsize,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> Result<Self, AttribError> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            tmp_counter: AtomicUsize::new(0),
        })
    }

    pub fn key(model: &str, sample: &str, prompt: &str) -> String {
        let mut h = Sha256::new();
        for part in [model, sample, prompt] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        format!("{:x}", h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, model: &str, sample: &str, prompt: &str) -> Option<String> {
        let text = fs::read_to_string(self.path(&Self::key(model, sample, prompt))).ok();
        match text.and_then(|t| serde_json::from_str::<Entry>(&t).ok()) {
            Some(e) => {
                self.hits.fetch_add(1, Ordering::SeqCst);
                Some(e.response)
            }
            None => {
                self.misses.fetch_add(1, Ordering::SeqCst);
                None
            }
        }
    }

    /// Stores a response unless the key already exists. Concurrent writers
    /// race on a hard link, so exactly one file wins and is never rewritten.
    pub fn put(&self, model: &str, sample: &str, prompt: &str, response: &str) -> Result<(), AttribError> {
        let key = Self::key(model, sample, prompt);
        let target = self.path(&key);
        if target.exists() {
            return Ok(());
        }
        let entry = Entry {
            model: model.into(),
            sample: sample.into(),
            prompt: prompt.into(),
            response: response.into(),
        };
        let n = self.tmp_counter.fetch_add(1, Ordering::SeqCst);
        let tmp = self.dir.join(format!(".{key}.{}.{n}.tmp", std::process::id()));
        {
            let mut f = fs::OpenOptions::new().write(true).create_new(true).open(&tmp)?;
            f.write_all(serde_json::to_string_pretty(&entry).expect("entry serializes").as_bytes())?;
            f.sync_all()?;
        }
        let linked = fs::hard_link(&tmp, &target);
        fs::remove_file(&tmp)?;
        match linked {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }
}
