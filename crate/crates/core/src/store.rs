//! Embedded single-file store with an append-only journal.
//!
//! Every write appends one JSON line and syncs it before the in-memory view
//! changes, so a crash loses at most the write in flight. On open the journal is
//! replayed; a torn final line is cut off, anything else malformed is an error.
//! [`Store::compact`] rewrites the journal as a snapshot via temp file + rename.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{FeedbackInstance, RubricAnnotation};
use crate::pack::ValidatedPack;
use crate::rubric::GroupSelector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Pack,
    Problem,
    Program,
    Session,
    Feedback,
    Annotation,
    Generation,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Pack => "pack",
            EntityKind::Problem => "problem",
            EntityKind::Program => "program",
            EntityKind::Session => "session",
            EntityKind::Feedback => "feedback",
            EntityKind::Annotation => "annotation",
            EntityKind::Generation => "generation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub kind: EntityKind,
    pub id: String,
    pub payload: serde_json::Value,
    pub created_at: u64,
    pub updated_at: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum JournalEntry {
    Put { record: StoreRecord },
    Delete { kind: EntityKind, id: String },
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{kind} {id} not found", kind = .0.as_str(), id = .1)]
    NotFound(EntityKind, String),
    #[error("journal {path} is corrupt at line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("payload of {kind} {id} does not match its type: {message}", kind = .kind.as_str())]
    Payload { kind: EntityKind, id: String, message: String },
    #[error("feedback {feedback} references unknown problem/program {problem}/{program}")]
    DanglingReference { feedback: String, problem: String, program: String },
    #[error("store i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

type Key = (EntityKind, String);

#[derive(Debug)]
pub struct Store {
    records: RwLock<BTreeMap<Key, StoreRecord>>,
    journal: Mutex<Option<File>>,
    path: Option<PathBuf>,
}

impl Store {
    pub fn in_memory() -> Self {
        Store { records: RwLock::new(BTreeMap::new()), journal: Mutex::new(None), path: None }
    }

    /// Opens (creating if needed) the journal at `path` and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        let mut records = BTreeMap::new();
        let mut good_len = 0u64;
        let mut torn = false;
        {
            let mut reader = BufReader::new(&mut file);
            reader.seek(SeekFrom::Start(0))?;
            let mut line = String::new();
            let mut line_no = 0;
            loop {
                line.clear();
                let n = reader.read_line(&mut line)?;
                if n == 0 {
                    break;
                }
                line_no += 1;
                if !line.ends_with('\n') {
                    torn = true;
                    break;
                }
                match serde_json::from_str::<JournalEntry>(line.trim_end()) {
                    Ok(entry) => apply(&mut records, entry),
                    Err(e) => {
                        let mut rest = String::new();
                        if reader.read_line(&mut rest)? == 0 {
                            torn = true;
                            break;
                        }
                        return Err(StoreError::Corrupt { path, line: line_no, message: e.to_string() });
                    }
                }
                good_len += n as u64;
            }
        }
        if torn {
            log::warn!("dropping torn tail of journal {}", path.display());
            file.set_len(good_len)?;
            file.sync_all()?;
        }
        Ok(Store { records: RwLock::new(records), journal: Mutex::new(Some(file)), path: Some(path) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn commit(&self, entry: JournalEntry) -> Result<(), StoreError> {
        let mut journal = self.journal.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(file) = journal.as_mut() {
            let mut line = serde_json::to_vec(&entry).expect("journal entries serialize");
            line.push(b'\n');
            file.write_all(&line)?;
            file.sync_data()?;
        }
        apply(&mut self.records.write().unwrap_or_else(|e| e.into_inner()), entry);
        Ok(())
    }

    pub fn put<T: Serialize>(&self, kind: EntityKind, id: &str, value: &T) -> Result<StoreRecord, StoreError> {
        let payload = serde_json::to_value(value).map_err(|e| StoreError::Payload {
            kind,
            id: id.to_string(),
            message: e.to_string(),
        })?;
        let now = unix_now();
        let created_at = self.get_record(kind, id).map_or(now, |r| r.created_at);
        let record = StoreRecord { kind, id: id.to_string(), payload, created_at, updated_at: now };
        self.commit(JournalEntry::Put { record: record.clone() })?;
        Ok(record)
    }

    pub fn delete(&self, kind: EntityKind, id: &str) -> Result<(), StoreError> {
        if self.get_record(kind, id).is_none() {
            return Err(StoreError::NotFound(kind, id.to_string()));
        }
        self.commit(JournalEntry::Delete { kind, id: id.to_string() })
    }

    pub fn get_record(&self, kind: EntityKind, id: &str) -> Option<StoreRecord> {
        self.records
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(&(kind, id.to_string()))
            .cloned()
    }

    pub fn contains(&self, kind: EntityKind, id: &str) -> bool {
        self.records.read().unwrap_or_else(|e| e.into_inner()).contains_key(&(kind, id.to_string()))
    }

    pub fn get<T: DeserializeOwned>(&self, kind: EntityKind, id: &str) -> Result<T, StoreError> {
        let record = self.get_record(kind, id).ok_or_else(|| StoreError::NotFound(kind, id.to_string()))?;
        decode(record)
    }

    /// Records of one kind in id order.
    pub fn list_records(&self, kind: EntityKind) -> Vec<StoreRecord> {
        self.records
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .range((kind, String::new())..)
            .take_while(|((k, _), _)| *k == kind)
            .map(|(_, r)| r.clone())
            .collect()
    }

    pub fn list<T: DeserializeOwned>(&self, kind: EntityKind) -> Result<Vec<T>, StoreError> {
        self.list_records(kind).into_iter().map(decode).collect()
    }

    /// Rewrites the journal as one put per live record.
    pub fn compact(&self) -> Result<(), StoreError> {
        let Some(path) = &self.path else { return Ok(()) };
        let mut journal = self.journal.lock().unwrap_or_else(|e| e.into_inner());
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        for record in self.records.read().unwrap_or_else(|e| e.into_inner()).values() {
            serde_json::to_writer(&mut tmp, &JournalEntry::Put { record: record.clone() })
                .expect("journal entries serialize");
            tmp.write_all(b"\n")?;
        }
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| StoreError::Io(e.error))?;
        *journal = Some(OpenOptions::new().append(true).open(path)?);
        Ok(())
    }

    /// Stores a pack together with its problem and program records.
    pub fn put_pack(&self, pack: &ValidatedPack) -> Result<(), StoreError> {
        for p in &pack.problems {
            self.put(EntityKind::Problem, p.id.as_str(), p)?;
        }
        for b in &pack.programs {
            self.put(EntityKind::Program, b.id.as_str(), b)?;
        }
        self.put(EntityKind::Pack, pack.id.as_str(), pack)?;
        Ok(())
    }

    /// The single ingested pack, if any. With several, the last by id wins.
    pub fn current_pack(&self) -> Result<Option<ValidatedPack>, StoreError> {
        Ok(self.list::<ValidatedPack>(EntityKind::Pack)?.pop())
    }

    /// Writes a feedback instance after checking it points at a real task of `pack`.
    pub fn put_feedback(&self, pack: &ValidatedPack, feedback: &FeedbackInstance) -> Result<(), StoreError> {
        if !pack.contains(feedback.problem_id.as_str(), feedback.buggy_program_id.as_str()) {
            return Err(StoreError::DanglingReference {
                feedback: feedback.id.clone(),
                problem: feedback.problem_id.to_string(),
                program: feedback.buggy_program_id.to_string(),
            });
        }
        self.put(EntityKind::Feedback, &feedback.id, feedback)?;
        Ok(())
    }

    pub fn query_feedback(&self, selector: &GroupSelector) -> Result<Vec<FeedbackInstance>, StoreError> {
        Ok(self
            .list::<FeedbackInstance>(EntityKind::Feedback)?
            .into_iter()
            .filter(|f| selector.matches(f))
            .collect())
    }

    pub fn annotations(&self) -> Result<Vec<RubricAnnotation>, StoreError> {
        self.list(EntityKind::Annotation)
    }

    pub fn annotations_by(&self, annotator_id: &str) -> Result<Vec<RubricAnnotation>, StoreError> {
        Ok(self.annotations()?.into_iter().filter(|a| a.annotator_id == annotator_id).collect())
    }
}

pub fn annotation_key(feedback_id: &str, annotator_id: &str) -> String {
    format!("{feedback_id}/{annotator_id}")
}

fn apply(records: &mut BTreeMap<Key, StoreRecord>, entry: JournalEntry) {
    match entry {
        JournalEntry::Put { record } => {
            records.insert((record.kind, record.id.clone()), record);
        }
        JournalEntry::Delete { kind, id } => {
            records.remove(&(kind, id));
        }
    }
}

fn decode<T: DeserializeOwned>(record: StoreRecord) -> Result<T, StoreError> {
    serde_json::from_value(record.payload).map_err(|e| StoreError::Payload {
        kind: record.kind,
        id: record.id,
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Slug, Source};

    fn feedback(id: &str, understanding: Option<bool>, source: Source) -> FeedbackInstance {
        FeedbackInstance {
            id: id.into(),
            problem_id: Slug::new("p1").unwrap(),
            buggy_program_id: Slug::new("b1").unwrap(),
            source,
            session_id: Some("s".into()),
            model_name: None,
            strategy: None,
            text: "hello".into(),
            understanding,
        }
    }

    #[test]
    fn put_then_get_round_trips() {
        let store = Store::in_memory();
        let f = feedback("f1", Some(true), Source::Student);
        store.put(EntityKind::Feedback, "f1", &f).unwrap();
        assert_eq!(store.get::<FeedbackInstance>(EntityKind::Feedback, "f1").unwrap(), f);
    }

    #[test]
    fn unknown_id_is_not_found() {
        let store = Store::in_memory();
        assert!(matches!(
            store.get::<FeedbackInstance>(EntityKind::Feedback, "nope"),
            Err(StoreError::NotFound(EntityKind::Feedback, _))
        ));
    }

    #[test]
    fn query_filters_by_source_and_understanding() {
        let store = Store::in_memory();
        for (id, u, s) in [
            ("a", Some(true), Source::Student),
            ("b", Some(false), Source::Student),
            ("c", None, Source::Model),
            ("d", Some(true), Source::Student),
        ] {
            store.put(EntityKind::Feedback, id, &feedback(id, u, s)).unwrap();
        }
        let sel = GroupSelector { source: Some(Source::Student), understanding: Some(true), ..Default::default() };
        let ids: Vec<String> = store.query_feedback(&sel).unwrap().into_iter().map(|f| f.id).collect();
        assert_eq!(ids, vec!["a", "d"]);
    }

    #[test]
    fn list_is_in_id_order_and_kind_scoped() {
        let store = Store::in_memory();
        for id in ["b", "a", "c"] {
            store.put(EntityKind::Session, id, &id).unwrap();
        }
        store.put(EntityKind::Feedback, "a", &"x").unwrap();
        let ids: Vec<String> = store.list_records(EntityKind::Session).into_iter().map(|r| r.id).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn journal_replays_and_survives_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.journal");
        {
            let store = Store::open(&path).unwrap();
            store.put(EntityKind::Session, "s1", &1).unwrap();
            store.put(EntityKind::Session, "s2", &2).unwrap();
            store.put(EntityKind::Session, "s1", &3).unwrap();
            store.delete(EntityKind::Session, "s2").unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"op\":\"put\",\"record\":{\"kind\":\"sess").unwrap();
        drop(f);

        let store = Store::open(&path).unwrap();
        assert_eq!(store.get::<i32>(EntityKind::Session, "s1").unwrap(), 3);
        assert!(!store.contains(EntityKind::Session, "s2"));
        store.put(EntityKind::Session, "s3", &4).unwrap();
        drop(store);
        let store = Store::open(&path).unwrap();
        assert_eq!(store.get::<i32>(EntityKind::Session, "s3").unwrap(), 4);
    }

    #[test]
    fn corruption_in_the_middle_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j");
        fs::write(&path, "garbage\n{\"op\":\"delete\",\"kind\":\"session\",\"id\":\"x\"}\n").unwrap();
        assert!(matches!(Store::open(&path), Err(StoreError::Corrupt { line: 1, .. })));
    }

    #[test]
    fn compaction_keeps_live_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j");
        let store = Store::open(&path).unwrap();
        for i in 0..10 {
            store.put(EntityKind::Session, "s", &i).unwrap();
        }
        store.compact().unwrap();
        store.put(EntityKind::Session, "t", &1).unwrap();
        drop(store);
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 2);
        let store = Store::open(&path).unwrap();
        assert_eq!(store.get::<i32>(EntityKind::Session, "s").unwrap(), 9);
    }

    #[test]
    fn created_at_survives_overwrite() {
        let store = Store::in_memory();
        let first = store.put(EntityKind::Session, "s", &1).unwrap();
        let second = store.put(EntityKind::Session, "s", &2).unwrap();
        assert_eq!(first.created_at, second.created_at);
    }
}
