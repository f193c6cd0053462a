//! On-disk run directory: append-only stage files, the request cache and
//! per-sample outcomes.
//!
//! Layout:
//!
//! ```text
//! run/
//!   candidates.jsonl scores.jsonl selection.jsonl paths.jsonl verdict.jsonl
//!   outcomes.jsonl        one SampleOutcome per line, last line per id wins
//!   bare_verdict.jsonl    verdict model answering alone (optional)
//!   cache.jsonl           {"key": ..., "value": ...}
//!   meta.json             timestamps and timings, the only non-deterministic file
//!   summary.json summary.txt
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use tracing::warn;

use crate::client::ResponseCache;
use crate::pipeline::{BareVerdict, SampleOutcome, Stage, StageSink};

pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const CACHE_FILE: &str = "cache.jsonl";
pub const BARE_FILE: &str = "bare_verdict.jsonl";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{file} line {line} is corrupt: {reason}")]
    Corrupt { file: String, line: usize, reason: String },
    #[error("write failed earlier: {0}")]
    Poisoned(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Read a JSONL file. A torn final line (no trailing newline, invalid JSON)
/// is dropped and trimmed from disk; any other bad line is fatal.
fn read_jsonl(path: &Path) -> Result<Vec<Value>, StoreError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut values = Vec::new();
    let mut good_len = 0;
    let mut offset = 0;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, line) in lines.iter().enumerate() {
        offset += line.len();
        let body = line.trim();
        if body.is_empty() {
            good_len = offset;
            continue;
        }
        match serde_json::from_str::<Value>(body) {
            Ok(v) => {
                values.push(v);
                good_len = offset;
            }
            Err(e) if i + 1 == lines.len() && !line.ends_with('\n') => {
                warn!(file = %path.display(), "dropping torn final line: {e}");
                let file = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
                file.set_len(good_len as u64).map_err(io_err(path))?;
            }
            Err(e) => {
                return Err(StoreError::Corrupt {
                    file: path.display().to_string(),
                    line: i + 1,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(values)
}

fn decode<T: DeserializeOwned>(path: &Path, line: usize, v: Value) -> Result<T, StoreError> {
    serde_json::from_value(v).map_err(|e| StoreError::Corrupt {
        file: path.display().to_string(),
        line,
        reason: e.to_string(),
    })
}

fn record_id(v: &Value) -> Option<&str> {
    v.get("id").or_else(|| v.get("sample_id")).and_then(Value::as_str)
}

fn write_atomically(path: &Path, contents: &str) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

struct Inner {
    stage_ids: HashMap<Stage, HashSet<String>>,
    cache: HashMap<String, Value>,
    outcomes: HashMap<String, SampleOutcome>,
    /// Outcome ids in first-seen order.
    outcome_order: Vec<String>,
    bare: HashMap<String, BareVerdict>,
    files: HashMap<&'static str, File>,
    poisoned: Option<String>,
}

pub struct RunStore {
    dir: PathBuf,
    inner: Mutex<Inner>,
}

impl RunStore {
    /// Open a run directory. Without `resume` any previous run files are removed.
    pub fn open(dir: &Path, resume: bool) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let managed: Vec<&str> = Stage::ALL
            .iter()
            .map(|s| s.file_name())
            .chain([OUTCOMES_FILE, CACHE_FILE, BARE_FILE])
            .collect();
        if !resume {
            for name in &managed {
                let path = dir.join(name);
                if path.exists() {
                    std::fs::remove_file(&path).map_err(io_err(&path))?;
                }
            }
        }

        let mut stage_ids = HashMap::new();
        for stage in Stage::ALL {
            let ids = read_jsonl(&dir.join(stage.file_name()))?
                .iter()
                .filter_map(|v| record_id(v).map(str::to_owned))
                .collect();
            stage_ids.insert(stage, ids);
        }

        let cache_path = dir.join(CACHE_FILE);
        let mut cache = HashMap::new();
        for (i, v) in read_jsonl(&cache_path)?.into_iter().enumerate() {
            let (Some(key), Some(value)) = (v.get("key").and_then(Value::as_str), v.get("value")) else {
                return Err(StoreError::Corrupt {
                    file: cache_path.display().to_string(),
                    line: i + 1,
                    reason: "expected {key, value}".into(),
                });
            };
            cache.insert(key.to_owned(), value.clone());
        }

        let out_path = dir.join(OUTCOMES_FILE);
        let mut outcomes = HashMap::new();
        let mut outcome_order = Vec::new();
        for (i, v) in read_jsonl(&out_path)?.into_iter().enumerate() {
            let o: SampleOutcome = decode(&out_path, i + 1, v)?;
            if !outcomes.contains_key(&o.sample_id) {
                outcome_order.push(o.sample_id.clone());
            }
            outcomes.insert(o.sample_id.clone(), o);
        }

        let bare_path = dir.join(BARE_FILE);
        let mut bare = HashMap::new();
        for (i, v) in read_jsonl(&bare_path)?.into_iter().enumerate() {
            let b: BareVerdict = decode(&bare_path, i + 1, v)?;
            bare.insert(b.id.clone(), b);
        }

        Ok(Self {
            dir: dir.to_path_buf(),
            inner: Mutex::new(Inner {
                stage_ids,
                cache,
                outcomes,
                outcome_order,
                bare,
                files: HashMap::new(),
                poisoned: None,
            }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().expect("run store lock poisoned")
    }

    fn append(&self, inner: &mut Inner, name: &'static str, line: &Value) {
        let path = self.dir.join(name);
        let result = (|| {
            if !inner.files.contains_key(name) {
                let f = OpenOptions::new().create(true).append(true).open(&path)?;
                inner.files.insert(name, f);
            }
            let f = inner.files.get_mut(name).expect("just inserted");
            let mut bytes = line.to_string().into_bytes();
            bytes.push(b'\n');
            f.write_all(&bytes)?;
            f.flush()
        })();
        if let Err(e) = result {
            warn!(file = %path.display(), "append failed: {e}");
            inner.poisoned.get_or_insert(format!("{}: {e}", path.display()));
        }
    }

    /// Surface any append failure that happened inside a sink callback.
    pub fn check(&self) -> Result<(), StoreError> {
        match &self.lock().poisoned {
            Some(msg) => Err(StoreError::Poisoned(msg.clone())),
            None => Ok(()),
        }
    }

    pub fn has_stage(&self, sample_id: &str, stage: Stage) -> bool {
        self.lock().stage_ids[&stage].contains(sample_id)
    }

    /// Ids whose stored outcome finished without error.
    pub fn completed(&self) -> HashSet<String> {
        self.lock()
            .outcomes
            .values()
            .filter(|o| !o.is_failed())
            .map(|o| o.sample_id.clone())
            .collect()
    }

    pub fn outcome(&self, id: &str) -> Option<SampleOutcome> {
        self.lock().outcomes.get(id).cloned()
    }

    /// Stored outcomes in the given id order; ids without an outcome are skipped.
    pub fn outcomes_in(&self, order: &[String]) -> Vec<SampleOutcome> {
        let inner = self.lock();
        order.iter().filter_map(|id| inner.outcomes.get(id).cloned()).collect()
    }

    /// Every stored outcome, in the order samples were first recorded.
    pub fn outcomes(&self) -> Vec<SampleOutcome> {
        let inner = self.lock();
        inner
            .outcome_order
            .iter()
            .map(|id| inner.outcomes[id].clone())
            .collect()
    }

    pub fn save_outcome(&self, outcome: &SampleOutcome) {
        let mut inner = self.lock();
        let line = serde_json::to_value(outcome).expect("outcome serializes");
        self.append(&mut inner, OUTCOMES_FILE, &line);
        if !inner.outcomes.contains_key(&outcome.sample_id) {
            inner.outcome_order.push(outcome.sample_id.clone());
        }
        inner.outcomes.insert(outcome.sample_id.clone(), outcome.clone());
    }

    pub fn bare_verdict(&self, id: &str) -> Option<BareVerdict> {
        self.lock().bare.get(id).cloned()
    }

    pub fn bare_verdicts(&self) -> BTreeMap<String, BareVerdict> {
        self.lock().bare.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn save_bare_verdict(&self, bare: &BareVerdict) {
        let mut inner = self.lock();
        if inner.bare.contains_key(&bare.id) {
            return;
        }
        let line = serde_json::to_value(bare).expect("bare verdict serializes");
        self.append(&mut inner, BARE_FILE, &line);
        inner.bare.insert(bare.id.clone(), bare.clone());
    }

    pub fn cache_len(&self) -> usize {
        self.lock().cache.len()
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), StoreError> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        write_atomically(&self.dir.join(name), &text)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), StoreError> {
        write_atomically(&self.dir.join(name), text)
    }

    /// Rewrite every file in `order` (unknown ids last, by id), keeping one
    /// outcome per sample, so concurrent runs leave identical bytes behind.
    pub fn compact(&self, order: &[String]) -> Result<(), StoreError> {
        self.check()?;
        let mut inner = self.lock();
        inner.files.clear();
        let rank: HashMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let sort_key = |id: &str| (rank.get(id).copied().unwrap_or(usize::MAX), id.to_owned());

        let mut names: Vec<&'static str> = Stage::ALL.iter().map(|s| s.file_name()).collect();
        names.extend([OUTCOMES_FILE, BARE_FILE]);
        for name in names {
            let path = self.dir.join(name);
            if !path.exists() {
                continue;
            }
            let mut rows = read_jsonl(&path)?;
            if name == OUTCOMES_FILE || name == BARE_FILE {
                // keep the newest line per id
                let mut last: HashMap<String, Value> = HashMap::new();
                for v in rows {
                    if let Some(id) = record_id(&v) {
                        last.insert(id.to_owned(), v);
                    }
                }
                rows = last.into_values().collect();
            }
            rows.sort_by_cached_key(|v| sort_key(record_id(v).unwrap_or_default()));
            let text: String = rows.iter().map(|v| format!("{v}\n")).collect();
            write_atomically(&path, &text)?;
        }

        let mut keys: Vec<&String> = inner.cache.keys().collect();
        keys.sort();
        let text: String = keys
            .into_iter()
            .map(|k| format!("{}\n", json!({"key": k, "value": inner.cache[k]})))
            .collect();
        write_atomically(&self.dir.join(CACHE_FILE), &text)
    }
}

impl StageSink for RunStore {
    fn record(&self, sample_id: &str, stage: Stage, payload: Value) {
        let mut inner = self.lock();
        if !inner
            .stage_ids
            .get_mut(&stage)
            .expect("all stages present")
            .insert(sample_id.to_owned())
        {
            return;
        }
        self.append(&mut inner, stage.file_name(), &payload);
    }
}

impl ResponseCache for RunStore {
    fn get(&self, key: &str) -> Option<Value> {
        self.lock().cache.get(key).cloned()
    }

    fn put(&self, key: &str, value: Value) {
        let mut inner = self.lock();
        if inner.cache.contains_key(key) {
            return;
        }
        let line = json!({"key": key, "value": value});
        self.append(&mut inner, CACHE_FILE, &line);
        inner.cache.insert(key.to_owned(), value);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = RunStore::open(dir.path(), false).unwrap();
            store.put("k1", json!({"a": 1}));
            store.put("k1", json!({"a": 2}));
        }
        let store = RunStore::open(dir.path(), true).unwrap();
        assert_eq!(store.get("k1"), Some(json!({"a": 1})));
        assert_eq!(store.cache_len(), 1);
        let fresh = RunStore::open(dir.path(), false).unwrap();
        assert_eq!(fresh.cache_len(), 0);
    }

    #[test]
    fn stage_records_are_written_once() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path(), false).unwrap();
        store.record("a", Stage::Candidates, json!({"id": "a", "v": 1}));
        store.record("a", Stage::Candidates, json!({"id": "a", "v": 2}));
        let text = std::fs::read_to_string(dir.path().join("candidates.jsonl")).unwrap();
        assert_eq!(text, "{\"id\":\"a\",\"v\":1}\n");
        assert!(store.has_stage("a", Stage::Candidates));
        assert!(!store.has_stage("a", Stage::Verdict));
    }

    #[test]
    fn torn_tail_is_dropped_but_middle_corruption_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CACHE_FILE);
        std::fs::write(&path, "{\"key\":\"a\",\"value\":1}\n{\"key\":\"b\",\"val").unwrap();
        let store = RunStore::open(dir.path(), true).unwrap();
        assert_eq!(store.cache_len(), 1);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "{\"key\":\"a\",\"value\":1}\n");
        drop(store);

        std::fs::write(&path, "garbage\n{\"key\":\"a\",\"value\":1}\n").unwrap();
        assert!(matches!(
            RunStore::open(dir.path(), true),
            Err(StoreError::Corrupt { line: 1, .. })
        ));
    }

    #[test]
    fn compaction_orders_by_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path(), false).unwrap();
        for id in ["c", "a", "b"] {
            store.record(id, Stage::Scores, json!({"id": id}));
        }
        store.put("z", json!(1));
        store.put("y", json!(2));
        store.compact(&["a".into(), "b".into(), "c".into()]).unwrap();
        let text = std::fs::read_to_string(dir.path().join("scores.jsonl")).unwrap();
        assert_eq!(text, "{\"id\":\"a\"}\n{\"id\":\"b\"}\n{\"id\":\"c\"}\n");
        let cache = std::fs::read_to_string(dir.path().join(CACHE_FILE)).unwrap();
        assert!(cache.starts_with("{\"key\":\"y\""));
        // appends keep working after compaction
        store.record("d", Stage::Scores, json!({"id": "d"}));
        let text = std::fs::read_to_string(dir.path().join("scores.jsonl")).unwrap();
        assert!(text.ends_with("{\"id\":\"d\"}\n"));
    }
}
