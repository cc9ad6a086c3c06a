//! Append-only JSON-lines log with an in-memory index of the latest value
//! per entity. Opening a store replays the log; a torn final line from an
//! interrupted write is dropped.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::gateway::{Collection, ShortMessage};
use crate::labeling::{LabelTask, ResolvedLabel};
use crate::learn::ClassifierSchema;

const LOG_FILE: &str = "entities.log";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Collection,
    Schema,
    Message,
    Task,
    Label,
    Classification,
    Learner,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(kind_name(*self))
    }
}

/// Something the store can hold.
pub trait Entity: Serialize + DeserializeOwned {
    const KIND: Kind;
    fn key(&self) -> String;
    fn check(&self) -> Result<()> {
        Ok(())
    }
}

#[derive(Serialize)]
struct RecordOut<'a, T> {
    kind: Kind,
    key: &'a str,
    value: &'a T,
}

#[derive(Deserialize)]
struct RecordIn {
    kind: Kind,
    key: String,
    value: Box<RawValue>,
}

struct Log {
    path: PathBuf,
    writer: BufWriter<File>,
    lines: u64,
}

pub struct Store {
    log: Option<Mutex<Log>>,
    index: RwLock<HashMap<Kind, BTreeMap<String, Box<RawValue>>>>,
    fsync: bool,
}

impl fmt::Debug for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Store")
            .field("durable", &self.log.is_some())
            .finish()
    }
}

impl Store {
    /// Volatile store for tests and throwaway runs.
    pub fn in_memory() -> Self {
        Store {
            log: None,
            index: RwLock::new(HashMap::new()),
            fsync: false,
        }
    }

    /// Opens (or creates) the log under `dir` and replays it. `fsync`
    /// additionally syncs every write to disk rather than only flushing it
    /// to the OS.
    pub fn open(dir: &Path, fsync: bool) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOG_FILE);
        let mut index: HashMap<Kind, BTreeMap<String, Box<RawValue>>> = HashMap::new();
        let mut lines = 0u64;
        let mut valid_len = 0u64;
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            let mut pending_error = None;
            for line in reader.split(b'\n') {
                let line = line?;
                if let Some(e) = pending_error.take() {
                    // A bad line followed by more data is corruption, not a torn tail.
                    return Err(e);
                }
                if line.is_empty() {
                    valid_len += 1;
                    continue;
                }
                match serde_json::from_slice::<RecordIn>(&line) {
                    Ok(rec) => {
                        index
                            .entry(rec.kind)
                            .or_default()
                            .insert(rec.key, rec.value);
                        lines += 1;
                        valid_len += line.len() as u64 + 1;
                    }
                    Err(e) => {
                        pending_error = Some(Error::Corrupt(format!(
                            "{}: bad record after {lines} lines: {e}",
                            path.display()
                        )));
                    }
                }
            }
            if pending_error.is_some() {
                tracing::warn!(path = %path.display(), "dropping torn final log record");
                let f = OpenOptions::new().write(true).open(&path)?;
                f.set_len(valid_len)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let store = Store {
            log: Some(Mutex::new(Log {
                path,
                writer: BufWriter::new(file),
                lines,
            })),
            index: RwLock::new(index),
            fsync,
        };
        let live = store.live_records();
        if lines > 1024 && lines > 2 * live as u64 {
            store.compact()?;
        }
        Ok(store)
    }

    fn live_records(&self) -> usize {
        self.index.read().values().map(BTreeMap::len).sum()
    }

    /// Durably records `entity`, replacing any earlier value with its key.
    /// Returns once the record has reached the OS.
    pub fn persist<E: Entity>(&self, entity: &E) -> Result<()> {
        entity.check()?;
        let key = entity.key();
        let value = serde_json::value::to_raw_value(entity)?;
        let Some(log) = &self.log else {
            self.index
                .write()
                .entry(E::KIND)
                .or_default()
                .insert(key, value);
            return Ok(());
        };
        let mut line = serde_json::to_vec(&RecordOut {
            kind: E::KIND,
            key: &key,
            value: &value,
        })?;
        line.push(b'\n');
        // Index update happens under the log lock so both see one write order.
        let mut log = log.lock();
        log.writer.write_all(&line)?;
        log.writer.flush()?;
        if self.fsync {
            log.writer.get_ref().sync_data()?;
        }
        log.lines += 1;
        self.index
            .write()
            .entry(E::KIND)
            .or_default()
            .insert(key, value);
        Ok(())
    }

    pub fn load<E: Entity>(&self, key: &str) -> Result<E> {
        let index = self.index.read();
        let raw = index
            .get(&E::KIND)
            .and_then(|m| m.get(key))
            .ok_or_else(|| Error::NotFound {
                kind: kind_name(E::KIND),
                id: key.to_string(),
            })?;
        Ok(serde_json::from_str(raw.get())?)
    }

    /// Every stored entity of one kind, in key order.
    pub fn load_all<E: Entity>(&self) -> Result<Vec<E>> {
        let index = self.index.read();
        index
            .get(&E::KIND)
            .map(|m| {
                m.values()
                    .map(|raw| serde_json::from_str(raw.get()).map_err(Error::from))
                    .collect()
            })
            .unwrap_or_else(|| Ok(Vec::new()))
    }

    pub fn count(&self, kind: Kind) -> usize {
        self.index.read().get(&kind).map_or(0, BTreeMap::len)
    }

    /// Rewrites the log so it holds only the latest value of each entity.
    pub fn compact(&self) -> Result<()> {
        let Some(log) = &self.log else {
            return Ok(());
        };
        let mut log = log.lock();
        let index = self.index.read();
        let tmp = log.path.with_extension("compact");
        let mut lines = 0;
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            let mut kinds: Vec<_> = index.keys().copied().collect();
            kinds.sort();
            for kind in kinds {
                for (key, value) in &index[&kind] {
                    serde_json::to_writer(&mut w, &RecordOut { kind, key, value })?;
                    w.write_all(b"\n")?;
                    lines += 1;
                }
            }
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        fs::rename(&tmp, &log.path)?;
        let file = OpenOptions::new().append(true).open(&log.path)?;
        log.writer = BufWriter::new(file);
        log.lines = lines;
        Ok(())
    }
}

fn kind_name(kind: Kind) -> &'static str {
    match kind {
        Kind::Collection => "collection",
        Kind::Schema => "schema",
        Kind::Message => "message",
        Kind::Task => "task",
        Kind::Label => "label",
        Kind::Classification => "classification",
        Kind::Learner => "learner",
    }
}

impl Entity for Collection {
    const KIND: Kind = Kind::Collection;
    fn key(&self) -> String {
        self.id.clone()
    }
    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl Entity for ShortMessage {
    const KIND: Kind = Kind::Message;
    fn key(&self) -> String {
        self.id.clone()
    }
    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl Entity for ClassifierSchema {
    const KIND: Kind = Kind::Schema;
    fn key(&self) -> String {
        self.id.clone()
    }
    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl Entity for LabelTask {
    const KIND: Kind = Kind::Task;
    fn key(&self) -> String {
        self.id.clone()
    }
    fn check(&self) -> Result<()> {
        if self.votes.len() > crate::labeling::MAX_VOTES {
            return Err(Error::Validation(format!(
                "task {} has too many votes",
                self.id
            )));
        }
        Ok(())
    }
}

impl Entity for ResolvedLabel {
    const KIND: Kind = Kind::Label;
    fn key(&self) -> String {
        format!("{}/{}", self.schema_id, self.message_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CollectionStatus, Counters};
    use chrono::{DateTime, Utc};

    fn message(id: &str) -> ShortMessage {
        ShortMessage {
            id: id.into(),
            seq: 1,
            collection_id: "c".into(),
            text: "Where does HIV come frm?".into(),
            sender_ref: "s".into(),
            received_at: DateTime::<Utc>::UNIX_EPOCH,
            source_meta: [("gw".to_string(), "x".to_string())].into(),
        }
    }

    #[test]
    fn survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = Store::open(dir.path(), false).unwrap();
            s.persist(&message("m1")).unwrap();
        }
        let s = Store::open(dir.path(), false).unwrap();
        assert_eq!(s.load::<ShortMessage>("m1").unwrap(), message("m1"));
    }

    #[test]
    fn unknown_id_is_not_found() {
        let s = Store::in_memory();
        assert!(matches!(
            s.load::<ShortMessage>("zz"),
            Err(Error::NotFound { .. })
        ));
    }

    #[test]
    fn invalid_entity_rejected() {
        let s = Store::in_memory();
        let mut m = message("m1");
        m.text = "   ".into();
        assert!(matches!(s.persist(&m), Err(Error::Validation(_))));
        assert_eq!(s.count(Kind::Message), 0);
    }

    #[test]
    fn latest_value_wins_and_compaction_keeps_it() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path(), true).unwrap();
        let mut c = Collection {
            id: "c1".into(),
            name: "zambia-health".into(),
            endpoint_path: "abcdefghijklmnopqrstuvwx".into(),
            created_at: DateTime::<Utc>::UNIX_EPOCH,
            status: CollectionStatus::Running,
            char_limit: 140,
            counters: Counters::default(),
        };
        s.persist(&c).unwrap();
        c.status = CollectionStatus::Paused;
        s.persist(&c).unwrap();
        s.compact().unwrap();
        drop(s);
        let text = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert_eq!(text.lines().count(), 1);
        let s = Store::open(dir.path(), false).unwrap();
        assert_eq!(
            s.load::<Collection>("c1").unwrap().status,
            CollectionStatus::Paused
        );
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = Store::open(dir.path(), false).unwrap();
            s.persist(&message("m1")).unwrap();
            s.persist(&message("m2")).unwrap();
        }
        let path = dir.path().join(LOG_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes.extend_from_slice(br#"{"kind":"message","key":"m3","val"#);
        fs::write(&path, bytes).unwrap();
        let s = Store::open(dir.path(), false).unwrap();
        assert_eq!(s.count(Kind::Message), 2);
        s.persist(&message("m4")).unwrap();
        drop(s);
        let s = Store::open(dir.path(), false).unwrap();
        assert_eq!(s.count(Kind::Message), 3);
    }

    #[test]
    fn corruption_mid_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LOG_FILE);
        fs::write(&path, "garbage\n{}\n").unwrap();
        assert!(matches!(
            Store::open(dir.path(), false),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn concurrent_writers() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = Store::open(dir.path(), false).unwrap();
            std::thread::scope(|scope| {
                for t in 0..4 {
                    let s = &s;
                    scope.spawn(move || {
                        for i in 0..250 {
                            s.persist(&message(&format!("m{t}-{i}"))).unwrap();
                        }
                    });
                }
            });
        }
        let s = Store::open(dir.path(), false).unwrap();
        assert_eq!(s.count(Kind::Message), 1000);
        assert!(s.load::<ShortMessage>("m3-249").is_ok());
    }
}
