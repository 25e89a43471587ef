//! On-disk session store.
//!
//! ```text
//! <root>/sessions/<id>.json          write-once session file
//! <root>/sessions/<id>.log.jsonl     append-only intervention log
//! ```
//!
//! Session ids are derived from the session content, so storing the same
//! session twice yields the same id and file.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use cf_engine::GenerationSession;
use sha2::{Digest, Sha256};

use crate::ops::InterventionRecord;

pub struct SessionStore {
    dir: PathBuf,
    writers: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

pub fn session_id(session: &GenerationSession) -> Result<String> {
    let digest = Sha256::digest(session.to_json()?.as_bytes());
    Ok(hex::encode(&digest[..8]))
}

fn valid_id(id: &str) -> bool {
    id.len() == 16 && id.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

impl SessionStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let dir = root.as_ref().join("sessions");
        fs::create_dir_all(&dir).with_context(|| format!("creating store {}", dir.display()))?;
        Ok(Self {
            dir,
            writers: Mutex::new(HashMap::new()),
        })
    }

    fn session_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.log.jsonl"))
    }

    /// Stores the session unless it is already there, and returns its id.
    pub fn insert(&self, session: &GenerationSession) -> Result<String> {
        let id = session_id(session)?;
        let path = self.session_path(&id);
        if path.exists() {
            return Ok(id);
        }
        let tmp = self.dir.join(format!(".{id}.{}.tmp", std::process::id()));
        session.save(&tmp)?;
        fs::rename(&tmp, &path)?;
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Result<Option<GenerationSession>> {
        if !valid_id(id) {
            return Ok(None);
        }
        match GenerationSession::load(self.session_path(id)) {
            Ok(s) => Ok(Some(s)),
            Err(cf_engine::Error::Io(e)) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Sorted ids of all stored sessions.
    pub fn ids(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".json")) else {
                continue;
            };
            if valid_id(id) {
                ids.push(id.to_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Appends `record` to the session's log, numbering it. Appends to the
    /// same session are serialized.
    pub fn append(&self, id: &str, mut record: InterventionRecord) -> Result<InterventionRecord> {
        if !valid_id(id) || !self.session_path(id).exists() {
            bail!("unknown session {id}");
        }
        let writer = self.writers.lock().unwrap().entry(id.to_owned()).or_default().clone();
        let _guard = writer.lock().unwrap();
        record.index = self.log(id)?.len();
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(self.log_path(id))?;
        f.write_all(line.as_bytes())?;
        Ok(record)
    }

    /// The session's intervention log in append order.
    pub fn log(&self, id: &str) -> Result<Vec<InterventionRecord>> {
        let f = match fs::File::open(self.log_path(id)) {
            Ok(f) => f,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).context("corrupt intervention log")?);
        }
        Ok(out)
    }
}
