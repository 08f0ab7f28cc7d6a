use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use dashmap::DashMap;
use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendKind, Entailer, EntailmentError, EntailmentJudgment, EntailmentLabel};

type Key = (String, String, BackendKind);

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    a_hash: String,
    b_hash: String,
    backend: BackendKind,
    label: EntailmentLabel,
}

pub fn text_hash(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

/// Append-only JSONL journal of judgments keyed on (premise, hypothesis,
/// backend). The journal is compacted to one line per key when opened.
pub struct EntailmentCache {
    map: DashMap<Key, EntailmentLabel>,
    journal: Option<Mutex<BufWriter<File>>>,
    path: Option<PathBuf>,
    rebuilt: bool,
}

impl EntailmentCache {
    pub fn in_memory() -> Self {
        Self {
            map: DashMap::new(),
            journal: None,
            path: None,
            rebuilt: false,
        }
    }

    /// Loads and compacts the journal at `path`. A corrupt journal is
    /// discarded and rebuilt from empty.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, EntailmentError> {
        let path = path.as_ref().to_path_buf();
        let map = DashMap::new();
        let mut rebuilt = false;
        if path.exists() {
            match load(&path) {
                Ok(entries) => {
                    for e in entries {
                        map.insert((e.a_hash, e.b_hash, e.backend), e.label);
                    }
                }
                Err(err) => {
                    warn!("{err}; rebuilding entailment cache {} from empty", path.display());
                    rebuilt = true;
                }
            }
        }
        {
            let mut w = BufWriter::new(File::create(&path)?);
            let mut entries: Vec<_> = map.iter().map(|kv| (kv.key().clone(), *kv.value())).collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            for ((a_hash, b_hash, backend), label) in entries {
                write_entry(&mut w, &Entry { a_hash, b_hash, backend, label })?;
            }
            w.flush()?;
        }
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(Self {
            map,
            journal: Some(Mutex::new(BufWriter::new(file))),
            path: Some(path),
            rebuilt,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// True when `open` found a corrupt journal and started over.
    pub fn was_rebuilt(&self) -> bool {
        self.rebuilt
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, a: &str, b: &str, backend: BackendKind) -> Option<EntailmentJudgment> {
        self.map
            .get(&(text_hash(a), text_hash(b), backend))
            .map(|label| EntailmentJudgment {
                label: *label,
                source: backend,
                cached: true,
            })
    }

    pub fn put(
        &self,
        a: &str,
        b: &str,
        backend: BackendKind,
        label: EntailmentLabel,
    ) -> Result<(), EntailmentError> {
        let entry = Entry {
            a_hash: text_hash(a),
            b_hash: text_hash(b),
            backend,
            label,
        };
        if let Some(j) = &self.journal {
            let mut w = j.lock().expect("cache writer poisoned");
            write_entry(&mut *w, &entry)?;
            w.flush()?;
        }
        self.map.insert((entry.a_hash, entry.b_hash, backend), label);
        Ok(())
    }
}

fn write_entry(w: &mut impl Write, e: &Entry) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, e)?;
    w.write_all(b"\n")
}

fn load(path: &Path) -> Result<Vec<Entry>, EntailmentError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Entry = serde_json::from_str(&line)
            .map_err(|e| EntailmentError::CacheCorrupt(format!("line {}: {e}", i + 1)))?;
        out.push(e);
    }
    Ok(out)
}

/// Consults the cache before delegating; misses are recorded.
pub struct CachedEntailer<E> {
    inner: E,
    cache: EntailmentCache,
}

impl<E: Entailer> CachedEntailer<E> {
    pub fn new(inner: E, cache: EntailmentCache) -> Self {
        Self { inner, cache }
    }

    pub fn cache(&self) -> &EntailmentCache {
        &self.cache
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: Entailer> Entailer for CachedEntailer<E> {
    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }

    fn judge(&self, a: &str, b: &str) -> Result<EntailmentJudgment, EntailmentError> {
        let kind = self.inner.kind();
        if let Some(hit) = self.cache.get(a, b, kind) {
            return Ok(hit);
        }
        let j = self.inner.judge(a, b)?;
        self.cache.put(a, b, kind, j.label)?;
        Ok(j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entailment::testing::PairJudge;
    use crate::entailment::bidirectional_equivalent;
    use std::sync::atomic::Ordering;

    #[test]
    fn put_get_and_direction() {
        let c = EntailmentCache::in_memory();
        assert!(c.get("a", "b", BackendKind::Lexical).is_none());
        c.put("a", "b", BackendKind::Lexical, EntailmentLabel::Entailment).unwrap();
        let hit = c.get("a", "b", BackendKind::Lexical).unwrap();
        assert_eq!(hit.label, EntailmentLabel::Entailment);
        assert!(hit.cached);
        assert!(c.get("b", "a", BackendKind::Lexical).is_none());
        assert!(c.get("a", "b", BackendKind::NliHttp).is_none());
    }

    #[test]
    fn persists_and_compacts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let c = EntailmentCache::open(&path).unwrap();
            c.put("a", "b", BackendKind::LlmJudge, EntailmentLabel::Neutral).unwrap();
            c.put("a", "b", BackendKind::LlmJudge, EntailmentLabel::Contradiction).unwrap();
        }
        let raw = std::fs::read_to_string(&path).unwrap();
        assert_eq!(raw.lines().count(), 2);
        let c = EntailmentCache::open(&path).unwrap();
        assert_eq!(
            c.get("a", "b", BackendKind::LlmJudge).unwrap().label,
            EntailmentLabel::Contradiction
        );
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
        let line: serde_json::Value =
            serde_json::from_str(std::fs::read_to_string(&path).unwrap().lines().next().unwrap())
                .unwrap();
        assert_eq!(line["backend"], "llm_judge");
        assert_eq!(line["a_hash"], text_hash("a"));
    }

    #[test]
    fn corrupt_journal_rebuilt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        std::fs::write(&path, "garbage\n").unwrap();
        let c = EntailmentCache::open(&path).unwrap();
        assert!(c.was_rebuilt());
        assert!(c.is_empty());
    }

    #[test]
    fn one_remote_call_per_ordered_pair() {
        let judge = PairJudge::new(&[("x", "y"), ("y", "x")]);
        let cached = CachedEntailer::new(&judge, EntailmentCache::in_memory());
        for _ in 0..5 {
            assert!(bidirectional_equivalent(&cached, "x", "y").unwrap());
            assert!(bidirectional_equivalent(&cached, "y", "x").unwrap());
        }
        assert_eq!(judge.calls.load(Ordering::SeqCst), 2);
    }
}
