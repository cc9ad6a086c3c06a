//! The classification service: collections, ingest, the classify-and-enqueue
//! pipeline, labeling, retraining with atomic model swap, and exports.
//!
//! Every entity lives in one `RwLock<State>`; published models sit behind a
//! separate lock so classification never waits on training. In
//! [`ExecutionMode::Manual`] the caller drives the pipeline with
//! [`Engine::process_pending`] and retraining runs inside the vote call. In
//! [`ExecutionMode::Background`] [`Engine::start`] spawns a pipeline worker
//! and a trainer thread.

mod records;

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration as StdDuration, Instant};

use chrono::{DateTime, Duration, Utc};
use parking_lot::{Condvar, Mutex, RwLock};
use rand::distr::Alphanumeric;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracing::{debug, info, warn};

pub use records::{
    CategoryShare, Classification, CollectionStats, LabeledItem, LabeledPage, LearnerState,
    ModelMetrics, RetrainOutcome, TaskView, VoteReceipt,
};

use crate::clock::{Clock, SystemClock};
use crate::error::{Error, Result};
use crate::export::{self, ExportOptions, ExportRow};
use crate::gateway::{
    check_text, Ack, Collection, CollectionStatus, Counters, PushPayload, ShortMessage,
    DEFAULT_CHAR_LIMIT, ENDPOINT_TOKEN_LEN,
};
use crate::labeling::{
    priority_for, Enqueued, LabelQueue, LabelTask, ResolvedLabel, TaskStatus, DEFAULT_LEASE_SECS,
};
use crate::learn::{
    train_model, ClassifierSchema, LabeledText, Prediction, SchemaSpec, SelectionPolicy,
    TrainedModel,
};
use crate::seed::unit_draw;
use crate::store::Store;
use crate::text::normalize;

pub const DEFAULT_PAGE_SIZE: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecutionMode {
    /// Pipeline and training run on the caller's thread.
    Manual,
    /// Pipeline and training run on worker threads started by [`Engine::start`].
    Background,
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    /// `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub default_char_limit: usize,
    pub lease: Duration,
    /// `None` blocks a discarded text from re-entering the queue forever.
    pub discard_cooldown: Option<Duration>,
    pub fsync: bool,
    pub mode: ExecutionMode,
    /// Seeds endpoint tokens for reproducible runs; `None` draws from the OS.
    pub token_seed: Option<u64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            data_dir: None,
            default_char_limit: DEFAULT_CHAR_LIMIT,
            lease: Duration::seconds(DEFAULT_LEASE_SECS),
            discard_cooldown: None,
            fsync: false,
            mode: ExecutionMode::Manual,
            token_seed: None,
        }
    }
}

/// Unclassified messages waiting for a schema's first model, in arrival order.
type Backlog = BTreeSet<(DateTime<Utc>, u64, String)>;

struct State {
    collections: HashMap<String, Collection>,
    endpoints: HashMap<String, String>,
    schemas: HashMap<String, ClassifierSchema>,
    messages: HashMap<String, ShortMessage>,
    /// Keyed by (schema id, message id).
    classifications: HashMap<(String, String), Classification>,
    /// Message id -> number of schemas that classified it.
    classified_by: HashMap<String, usize>,
    /// Keyed by (schema id, message id).
    labels: HashMap<(String, String), ResolvedLabel>,
    /// Message id -> number of live labels on it.
    labeled_by: HashMap<String, usize>,
    backlog: HashMap<String, Backlog>,
    queue: LabelQueue,
    learners: HashMap<String, LearnerState>,
    next_message_seq: u64,
    next_task_seq: u64,
    next_label_seq: u64,
}

impl State {
    fn schemas_of(&self, collection_id: &str) -> Vec<String> {
        let mut ids: Vec<String> = self
            .schemas
            .values()
            .filter(|s| s.collection_id == collection_id)
            .map(|s| s.id.clone())
            .collect();
        ids.sort();
        ids
    }

    fn schema(&self, id: &str) -> Result<&ClassifierSchema> {
        self.schemas
            .get(id)
            .ok_or_else(|| Error::not_found("schema", id))
    }

    fn collection_mut(&mut self, id: &str) -> Result<&mut Collection> {
        self.collections
            .get_mut(id)
            .ok_or_else(|| Error::not_found("collection", id))
    }

    /// Live labels resolved since the last published training.
    fn labels_since_training(&self, schema_id: &str) -> usize {
        let through = self
            .learners
            .get(schema_id)
            .map_or(0, |l| l.trained_through_seq);
        self.labels
            .values()
            .filter(|l| l.schema_id == schema_id && !l.deleted && l.seq > through)
            .count()
    }
}

pub struct Engine {
    config: EngineConfig,
    clock: Arc<dyn Clock>,
    store: Store,
    state: RwLock<State>,
    models: RwLock<HashMap<String, Arc<TrainedModel>>>,
    pending: Mutex<VecDeque<String>>,
    pending_ready: Condvar,
    /// Pipeline items and training requests not yet finished.
    in_flight: AtomicUsize,
    training_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    trainer_tx: Mutex<Sender<String>>,
    trainer_rx: Mutex<Option<Receiver<String>>>,
    token_rng: Mutex<ChaCha8Rng>,
    shutdown: AtomicBool,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("data_dir", &self.config.data_dir)
            .field("mode", &self.config.mode)
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn in_memory() -> Self {
        Self::open(EngineConfig::default(), Arc::new(SystemClock)).expect("in-memory engine")
    }

    /// Opens (or creates) an engine, replaying any stored state and loading
    /// the latest model for each schema.
    pub fn open(config: EngineConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        if config.default_char_limit == 0 {
            return Err(Error::Validation(
                "default charLimit must be at least 1".into(),
            ));
        }
        let store = match &config.data_dir {
            Some(dir) => Store::open(dir, config.fsync)?,
            None => Store::in_memory(),
        };
        let token_rng = match config.token_seed {
            Some(seed) => ChaCha8Rng::seed_from_u64(seed),
            None => ChaCha8Rng::from_os_rng(),
        };
        let (tx, rx) = mpsc::channel();
        let state = State {
            collections: HashMap::new(),
            endpoints: HashMap::new(),
            schemas: HashMap::new(),
            messages: HashMap::new(),
            classifications: HashMap::new(),
            classified_by: HashMap::new(),
            labels: HashMap::new(),
            labeled_by: HashMap::new(),
            backlog: HashMap::new(),
            queue: LabelQueue::new(config.lease, config.discard_cooldown),
            learners: HashMap::new(),
            next_message_seq: 1,
            next_task_seq: 1,
            next_label_seq: 1,
        };
        let engine = Engine {
            config,
            clock,
            store,
            state: RwLock::new(state),
            models: RwLock::new(HashMap::new()),
            pending: Mutex::new(VecDeque::new()),
            pending_ready: Condvar::new(),
            in_flight: AtomicUsize::new(0),
            training_locks: Mutex::new(HashMap::new()),
            trainer_tx: Mutex::new(tx),
            trainer_rx: Mutex::new(Some(rx)),
            token_rng: Mutex::new(token_rng),
            shutdown: AtomicBool::new(false),
        };
        engine.recover()?;
        Ok(engine)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    fn models_dir(&self, schema_id: &str) -> Option<PathBuf> {
        self.config
            .data_dir
            .as_ref()
            .map(|d| d.join("models").join(schema_id))
    }

    fn recover(&self) -> Result<()> {
        let collections: Vec<Collection> = self.store.load_all()?;
        let schemas: Vec<ClassifierSchema> = self.store.load_all()?;
        let mut messages: Vec<ShortMessage> = self.store.load_all()?;
        let tasks: Vec<LabelTask> = self.store.load_all()?;
        let labels: Vec<ResolvedLabel> = self.store.load_all()?;
        let classifications: Vec<Classification> = self.store.load_all()?;
        let learners: Vec<LearnerState> = self.store.load_all()?;
        if collections.is_empty() && messages.is_empty() {
            return Ok(());
        }
        info!(
            collections = collections.len(),
            messages = messages.len(),
            tasks = tasks.len(),
            labels = labels.len(),
            "recovering stored state"
        );
        messages.sort_by_key(|m| m.seq);

        let mut models = HashMap::new();
        for learner in &learners {
            if learner.model_version == 0 {
                continue;
            }
            let Some(dir) = self.models_dir(&learner.schema_id) else {
                continue;
            };
            let path = dir.join(TrainedModel::snapshot_file_name(learner.model_version));
            let model = TrainedModel::load(&path)?;
            models.insert(learner.schema_id.clone(), Arc::new(model));
        }

        {
            let mut st = self.state.write();
            for mut c in collections {
                c.counters = Counters::default();
                st.endpoints.insert(c.endpoint_path.clone(), c.id.clone());
                st.collections.insert(c.id.clone(), c);
            }
            for s in schemas {
                st.schemas.insert(s.id.clone(), s);
            }
            for l in learners {
                st.learners.insert(l.schema_id.clone(), l);
            }
            for m in &messages {
                st.next_message_seq = st.next_message_seq.max(m.seq + 1);
                if let Some(c) = st.collections.get_mut(&m.collection_id) {
                    c.counters.received += 1;
                }
                st.messages.insert(m.id.clone(), m.clone());
            }
            for t in tasks {
                st.next_task_seq = st.next_task_seq.max(t.seq + 1);
                st.queue.restore(t);
            }
            for c in classifications {
                bump(&mut st, ClassCounter::Classified, &c.message_id.clone(), 1);
                st.classifications
                    .insert((c.schema_id.clone(), c.message_id.clone()), c);
            }
            for l in labels {
                st.next_label_seq = st.next_label_seq.max(l.seq + 1);
                if !l.deleted {
                    bump(&mut st, ClassCounter::Labeled, &l.message_id.clone(), 1);
                }
                st.labels
                    .insert((l.schema_id.clone(), l.message_id.clone()), l);
            }
        }
        *self.models.write() = models;

        // Re-run the pipeline for anything an interrupted run left unfinished.
        // Candidate creation is idempotent thanks to dedup, and existing
        // classifications are kept.
        let now = self.clock.now();
        let mut redo = Vec::new();
        {
            let st = self.state.read();
            for m in &messages {
                let key = normalize(&m.text);
                for schema_id in st.schemas_of(&m.collection_id) {
                    let classified = st
                        .classifications
                        .contains_key(&(schema_id.clone(), m.id.clone()));
                    let queued = st.queue.blocking_task(&schema_id, &key, now).is_some();
                    if !classified || !queued {
                        redo.push((m.id.clone(), schema_id));
                    }
                }
            }
        }
        for (message_id, schema_id) in redo {
            self.run_pipeline(&message_id, &schema_id)?;
        }
        let schema_ids: Vec<String> = self.models.read().keys().cloned().collect();
        for schema_id in schema_ids {
            self.reprioritize(&schema_id);
        }
        Ok(())
    }

    // ---- collections ----

    pub fn create_collection(&self, name: &str, char_limit: Option<usize>) -> Result<Collection> {
        let name = name.trim();
        let mut st = self.state.write();
        if st.collections.values().any(|c| c.name == name) {
            return Err(Error::NameConflict(name.to_string()));
        }
        let endpoint_path = loop {
            let token: String = {
                let mut rng = self.token_rng.lock();
                (0..ENDPOINT_TOKEN_LEN)
                    .map(|_| rng.sample(Alphanumeric) as char)
                    .collect()
            };
            if !st.endpoints.contains_key(&token) {
                break token;
            }
        };
        let collection = Collection {
            id: format!("col-{:04}", st.collections.len() + 1),
            name: name.to_string(),
            endpoint_path,
            created_at: self.clock.now(),
            status: CollectionStatus::Running,
            char_limit: char_limit.unwrap_or(self.config.default_char_limit),
            counters: Counters::default(),
        };
        collection.validate()?;
        self.store.persist(&collection)?;
        st.endpoints
            .insert(collection.endpoint_path.clone(), collection.id.clone());
        st.collections
            .insert(collection.id.clone(), collection.clone());
        info!(id = %collection.id, name, "collection created");
        Ok(collection)
    }

    pub fn collection(&self, id: &str) -> Result<Collection> {
        let st = self.state.read();
        st.collections
            .get(id)
            .cloned()
            .ok_or_else(|| Error::not_found("collection", id))
    }

    pub fn collections(&self) -> Vec<Collection> {
        let st = self.state.read();
        let mut all: Vec<Collection> = st.collections.values().cloned().collect();
        all.sort_by(|a, b| a.id.cmp(&b.id));
        all
    }

    pub fn pause(&self, id: &str) -> Result<Collection> {
        self.set_status(id, CollectionStatus::Paused)
    }

    pub fn resume(&self, id: &str) -> Result<Collection> {
        self.set_status(id, CollectionStatus::Running)
    }

    fn set_status(&self, id: &str, status: CollectionStatus) -> Result<Collection> {
        let mut st = self.state.write();
        let c = st.collection_mut(id)?;
        if c.status != status {
            let mut updated = c.clone();
            updated.status = status;
            self.store.persist(&updated)?;
            c.status = status;
        }
        Ok(c.clone())
    }

    // ---- ingest and pipeline ----

    /// Accepts a push on a collection's endpoint. The message is stored
    /// before this returns; classification and queueing happen in the
    /// pipeline.
    pub fn ingest(&self, endpoint_path: &str, payload: PushPayload) -> Result<Ack> {
        let mut st = self.state.write();
        let collection_id = st
            .endpoints
            .get(endpoint_path)
            .cloned()
            .ok_or_else(|| Error::not_found("endpoint", endpoint_path))?;
        let c = &st.collections[&collection_id];
        if c.status == CollectionStatus::Paused {
            return Err(Error::Paused(collection_id));
        }
        check_text(&payload.text, c.char_limit)?;
        let seq = st.next_message_seq;
        let message = ShortMessage {
            id: format!("msg-{seq:08}"),
            seq,
            collection_id: collection_id.clone(),
            text: payload.text,
            sender_ref: payload.sender_ref.unwrap_or_default(),
            received_at: self.clock.now(),
            source_meta: payload.source_meta,
        };
        self.store.persist(&message)?;
        st.next_message_seq += 1;
        st.collection_mut(&collection_id)?.counters.received += 1;
        let id = message.id.clone();
        st.messages.insert(id.clone(), message);
        drop(st);

        self.in_flight.fetch_add(1, Ordering::SeqCst);
        self.pending.lock().push_back(id.clone());
        self.pending_ready.notify_one();
        Ok(Ack { message_id: id })
    }

    /// Runs the pipeline for every queued message on the calling thread.
    /// Returns how many messages were processed.
    pub fn process_pending(&self) -> Result<usize> {
        let mut n = 0;
        loop {
            let Some(id) = self.pending.lock().pop_front() else {
                return Ok(n);
            };
            let result = self.process_message(&id);
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            result?;
            n += 1;
        }
    }

    fn process_message(&self, message_id: &str) -> Result<()> {
        let schemas = {
            let st = self.state.read();
            let Some(m) = st.messages.get(message_id) else {
                return Err(Error::not_found("message", message_id));
            };
            st.schemas_of(&m.collection_id)
        };
        for schema_id in schemas {
            self.run_pipeline(message_id, &schema_id)?;
        }
        Ok(())
    }

    /// Classifies one message under one schema (or parks it in the backlog
    /// when no model exists yet) and offers it as a labeling candidate.
    fn run_pipeline(&self, message_id: &str, schema_id: &str) -> Result<()> {
        let text = {
            let st = self.state.read();
            match st.messages.get(message_id) {
                Some(m) => m.text.clone(),
                None => return Err(Error::not_found("message", message_id)),
            }
        };
        let mut model = self.models.read().get(schema_id).cloned();
        loop {
            let prediction = model.as_ref().map(|m| m.classify_text(&text));
            let mut st = self.state.write();
            if prediction.is_none() {
                // A model may have been published since we looked.
                if let Some(m) = self.models.read().get(schema_id).cloned() {
                    model = Some(m);
                    continue;
                }
                let msg = &st.messages[message_id];
                let entry = (msg.received_at, msg.seq, msg.id.clone());
                st.backlog
                    .entry(schema_id.to_string())
                    .or_default()
                    .insert(entry);
            }
            if let Some(p) = &prediction {
                self.record_classification(&mut st, message_id, schema_id, p)?;
            }
            self.offer_candidate(&mut st, message_id, schema_id, prediction.as_ref())?;
            return Ok(());
        }
    }

    fn record_classification(
        &self,
        st: &mut State,
        message_id: &str,
        schema_id: &str,
        p: &Prediction,
    ) -> Result<()> {
        let key = (schema_id.to_string(), message_id.to_string());
        if st.classifications.contains_key(&key) {
            return Ok(());
        }
        let c = Classification {
            message_id: message_id.to_string(),
            schema_id: schema_id.to_string(),
            category: p.category.clone(),
            confidence: p.confidence,
            model_version: p.model_version,
            scores: p.scores.clone(),
            classified_at: self.clock.now(),
        };
        self.store.persist(&c)?;
        st.classifications.insert(key, c);
        bump(st, ClassCounter::Classified, message_id, 1);
        Ok(())
    }

    fn offer_candidate(
        &self,
        st: &mut State,
        message_id: &str,
        schema_id: &str,
        prediction: Option<&Prediction>,
    ) -> Result<()> {
        let schema = st.schema(schema_id)?;
        let msg = &st.messages[message_id];
        let priority = priority_for(
            prediction.map(|p| p.confidence),
            schema.active_threshold,
            schema.selection,
            unit_draw(schema.seed, msg.seq),
        );
        let seq = st.next_task_seq;
        let task = LabelTask {
            id: format!("task-{seq:08}"),
            seq,
            message_id: message_id.to_string(),
            schema_id: schema_id.to_string(),
            status: TaskStatus::Open,
            priority,
            votes: Vec::new(),
            resolved_category: None,
            dedup_key: normalize(&msg.text),
            received_at: msg.received_at,
            closed_at: None,
            lease: None,
        };
        let now = self.clock.now();
        if let Some(existing) = st.queue.blocking_task(schema_id, &task.dedup_key, now) {
            debug!(message_id, existing, "duplicate candidate skipped");
            return Ok(());
        }
        self.store.persist(&task)?;
        st.next_task_seq += 1;
        match st.queue.enqueue(task, now) {
            Enqueued::Created(_) => Ok(()),
            Enqueued::Duplicate { .. } => unreachable!("checked under the same lock"),
        }
    }

    // ---- schemas ----

    /// Creates a classifier schema on a collection. Messages already in the
    /// collection become labeling candidates immediately.
    pub fn create_schema(&self, collection_id: &str, spec: SchemaSpec) -> Result<ClassifierSchema> {
        let schema = {
            let mut st = self.state.write();
            if !st.collections.contains_key(collection_id) {
                return Err(Error::not_found("collection", collection_id));
            }
            if st
                .schemas
                .values()
                .any(|s| s.collection_id == collection_id && s.name == spec.name)
            {
                return Err(Error::NameConflict(spec.name));
            }
            let id = format!("clf-{:04}", st.schemas.len() + 1);
            let schema = spec.into_schema(id, collection_id.to_string())?;
            let learner = LearnerState {
                schema_id: schema.id.clone(),
                ..Default::default()
            };
            self.store.persist(&schema)?;
            self.store.persist(&learner)?;
            st.learners.insert(schema.id.clone(), learner);
            st.schemas.insert(schema.id.clone(), schema.clone());
            schema
        };
        let existing: Vec<String> = {
            let st = self.state.read();
            let mut ms: Vec<&ShortMessage> = st
                .messages
                .values()
                .filter(|m| m.collection_id == collection_id)
                .collect();
            ms.sort_by_key(|m| m.seq);
            ms.into_iter().map(|m| m.id.clone()).collect()
        };
        for id in existing {
            self.run_pipeline(&id, &schema.id)?;
        }
        info!(id = %schema.id, collection_id, "classifier schema created");
        Ok(schema)
    }

    pub fn schema(&self, id: &str) -> Result<ClassifierSchema> {
        self.state.read().schema(id).cloned()
    }

    pub fn model(&self, schema_id: &str) -> Option<Arc<TrainedModel>> {
        self.models.read().get(schema_id).cloned()
    }

    pub fn message(&self, id: &str) -> Result<ShortMessage> {
        let st = self.state.read();
        st.messages
            .get(id)
            .cloned()
            .ok_or_else(|| Error::not_found("message", id))
    }

    pub fn classification(&self, schema_id: &str, message_id: &str) -> Option<Classification> {
        let st = self.state.read();
        st.classifications
            .get(&(schema_id.to_string(), message_id.to_string()))
            .cloned()
    }

    /// Messages still waiting for the schema's first model.
    pub fn backlog_len(&self, schema_id: &str) -> usize {
        self.state
            .read()
            .backlog
            .get(schema_id)
            .map_or(0, |b| b.len())
    }

    pub fn open_task_count(&self, schema_id: &str) -> usize {
        let st = self.state.read();
        st.queue
            .open_tasks()
            .filter(|t| t.schema_id == schema_id)
            .count()
    }

    pub fn task(&self, id: &str) -> Result<LabelTask> {
        let st = self.state.read();
        st.queue
            .get(id)
            .cloned()
            .ok_or_else(|| Error::not_found("task", id))
    }

    // ---- labeling ----

    /// Leases the highest-priority open task the labeler has not voted on.
    pub fn next_task(&self, labeler: &str, schema_id: Option<&str>) -> Result<Option<TaskView>> {
        if labeler.trim().is_empty() {
            return Err(Error::Validation("labeler id must be non-empty".into()));
        }
        let mut st = self.state.write();
        if let Some(s) = schema_id {
            st.schema(s)?;
        }
        let now = self.clock.now();
        let Some(task) = st.queue.lease_next(labeler, schema_id, now).cloned() else {
            return Ok(None);
        };
        let schema = st.schema(&task.schema_id)?;
        let text = st.messages[&task.message_id].text.clone();
        Ok(Some(TaskView {
            task_id: task.id.clone(),
            message_id: task.message_id.clone(),
            schema_id: task.schema_id.clone(),
            text,
            categories: schema.categories.clone(),
            votes_cast: task.votes.len(),
            priority: task.priority,
            lease_until: task.lease.as_ref().map_or(now, |l| l.until),
        }))
    }

    pub fn submit_vote(&self, task_id: &str, labeler: &str, category: &str) -> Result<VoteReceipt> {
        if labeler.trim().is_empty() {
            return Err(Error::Validation("labeler id must be non-empty".into()));
        }
        let (task, schema_id) = {
            let mut st = self.state.write();
            let schema_id = st
                .queue
                .get(task_id)
                .ok_or_else(|| Error::not_found("task", task_id))?
                .schema_id
                .clone();
            if st.schema(&schema_id)?.category_index(category).is_none() {
                return Err(Error::Validation(format!(
                    "{category:?} is not a category of schema {schema_id}"
                )));
            }
            let now = self.clock.now();
            let task = st.queue.vote(task_id, labeler, category, now)?.clone();
            self.store.persist(&task)?;
            if let (TaskStatus::Resolved, Some(cat)) = (task.status, &task.resolved_category) {
                let seq = st.next_label_seq;
                let label = ResolvedLabel {
                    message_id: task.message_id.clone(),
                    schema_id: schema_id.clone(),
                    category: cat.clone(),
                    resolved_at: now,
                    seq,
                    vote_count: task.votes.len(),
                    deleted: false,
                };
                self.store.persist(&label)?;
                st.next_label_seq += 1;
                let key = (schema_id.clone(), task.message_id.clone());
                let replaced = st.labels.insert(key, label);
                if replaced.is_none_or(|l| l.deleted) {
                    bump(&mut st, ClassCounter::Labeled, &task.message_id, 1);
                }
            }
            (task, schema_id)
        };
        let mut receipt = VoteReceipt {
            task_id: task.id.clone(),
            status: task.status,
            resolved_category: task.resolved_category.clone(),
            retrain: None,
        };
        if task.status == TaskStatus::Resolved {
            match self.config.mode {
                ExecutionMode::Manual => receipt.retrain = Some(self.retrain_if_due(&schema_id)?),
                ExecutionMode::Background => self.request_training(&schema_id),
            }
        }
        Ok(receipt)
    }

    /// Soft-deletes a resolved label. Deleting twice is a no-op.
    pub fn delete_label(&self, schema_id: &str, message_id: &str) -> Result<()> {
        let mut st = self.state.write();
        let key = (schema_id.to_string(), message_id.to_string());
        let label = st
            .labels
            .get(&key)
            .ok_or_else(|| Error::not_found("label", format!("{schema_id}/{message_id}")))?;
        if label.deleted {
            return Ok(());
        }
        let mut updated = label.clone();
        updated.deleted = true;
        self.store.persist(&updated)?;
        st.labels.insert(key, updated);
        bump(&mut st, ClassCounter::Labeled, message_id, -1);
        Ok(())
    }

    /// Live labels of a schema, newest first, 1-based pages.
    pub fn list_labeled(
        &self,
        schema_id: &str,
        page: usize,
        page_size: usize,
    ) -> Result<LabeledPage> {
        if page == 0 || page_size == 0 {
            return Err(Error::Validation("page and page size start at 1".into()));
        }
        let st = self.state.read();
        st.schema(schema_id)?;
        let mut live: Vec<&ResolvedLabel> = st
            .labels
            .values()
            .filter(|l| l.schema_id == schema_id && !l.deleted)
            .collect();
        live.sort_by_key(|l| std::cmp::Reverse(l.seq));
        let items = live
            .iter()
            .skip((page - 1).saturating_mul(page_size))
            .take(page_size)
            .map(|l| LabeledItem {
                message_id: l.message_id.clone(),
                text: st.messages[&l.message_id].text.clone(),
                category: l.category.clone(),
                resolved_at: l.resolved_at,
                vote_count: l.vote_count,
            })
            .collect();
        Ok(LabeledPage {
            schema_id: schema_id.to_string(),
            page,
            page_size,
            total: live.len(),
            items,
        })
    }

    // ---- training ----

    fn training_lock(&self, schema_id: &str) -> Arc<Mutex<()>> {
        self.training_locks
            .lock()
            .entry(schema_id.to_string())
            .or_default()
            .clone()
    }

    fn request_training(&self, schema_id: &str) {
        self.in_flight.fetch_add(1, Ordering::SeqCst);
        if self.trainer_tx.lock().send(schema_id.to_string()).is_err() {
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
        }
    }

    /// Retrains the schema if enough labels arrived since the last published
    /// model. A failed training leaves the counter untouched, so the retrain
    /// stays pending.
    pub fn retrain_if_due(&self, schema_id: &str) -> Result<RetrainOutcome> {
        let lock = self.training_lock(schema_id);
        let _guard = lock.lock();
        let (schema, learner, labeled, through) = {
            let st = self.state.read();
            let schema = st.schema(schema_id)?.clone();
            let learner = st.learners.get(schema_id).cloned().unwrap_or_default();
            if st.labels_since_training(schema_id) < schema.retrain_every {
                return Ok(RetrainOutcome {
                    schema_id: schema_id.to_string(),
                    retrained: false,
                    model_version: None,
                    warning: None,
                });
            }
            let mut live: Vec<&ResolvedLabel> = st
                .labels
                .values()
                .filter(|l| l.schema_id == schema_id && !l.deleted)
                .collect();
            live.sort_by_key(|l| l.seq);
            let through = live.last().map_or(0, |l| l.seq);
            let labeled: Vec<LabeledText> = live
                .iter()
                .map(|l| LabeledText {
                    message_id: l.message_id.clone(),
                    text: st.messages[&l.message_id].text.clone(),
                    category: l.category.clone(),
                })
                .collect();
            (schema, learner, labeled, through)
        };
        let version = learner.model_version + 1;
        let started = Instant::now();
        let model = match train_model(&schema, &labeled, version, self.clock.now()) {
            Ok(m) => m,
            Err(e @ (Error::CannotTrain(_) | Error::InsufficientData(_))) => {
                warn!(schema_id, error = %e, "training skipped");
                let warning = e.to_string();
                let mut st = self.state.write();
                if let Some(l) = st.learners.get_mut(schema_id) {
                    l.last_warning = Some(warning.clone());
                    self.store.persist(&*l)?;
                }
                return Ok(RetrainOutcome {
                    schema_id: schema_id.to_string(),
                    retrained: false,
                    model_version: None,
                    warning: Some(warning),
                });
            }
            Err(e) => return Err(e),
        };
        if let Some(dir) = self.models_dir(schema_id) {
            model.save(&dir)?;
        }
        info!(
            schema_id,
            version,
            labels = labeled.len(),
            macro_auc = ?model.metrics.macro_auc,
            elapsed_ms = started.elapsed().as_millis() as u64,
            "model trained"
        );
        self.publish(schema_id, Arc::new(model), through)?;
        Ok(RetrainOutcome {
            schema_id: schema_id.to_string(),
            retrained: true,
            model_version: Some(version),
            warning: None,
        })
    }

    /// Atomically swaps in a new model, then classifies the cold-start
    /// backlog and re-scores open tasks with it.
    fn publish(&self, schema_id: &str, model: Arc<TrainedModel>, through: u64) -> Result<()> {
        let version = model.version;
        let backlog = {
            let mut st = self.state.write();
            let mut learner = st.learners.get(schema_id).cloned().unwrap_or_default();
            learner.schema_id = schema_id.to_string();
            learner.model_version = version;
            learner.trained_through_seq = through;
            learner.trainings += 1;
            learner.last_warning = None;
            self.store.persist(&learner)?;
            st.learners.insert(schema_id.to_string(), learner);
            self.models
                .write()
                .insert(schema_id.to_string(), model.clone());
            st.backlog.remove(schema_id).unwrap_or_default()
        };
        if !backlog.is_empty() {
            debug!(schema_id, n = backlog.len(), "classifying backlog");
        }
        for (_, _, message_id) in backlog {
            let text = self.state.read().messages[&message_id].text.clone();
            let p = model.classify_text(&text);
            let mut st = self.state.write();
            self.record_classification(&mut st, &message_id, schema_id, &p)?;
        }
        self.reprioritize(schema_id);
        Ok(())
    }

    /// Recomputes open-task priorities from the current model. Priorities
    /// are derived state, so they are not persisted.
    fn reprioritize(&self, schema_id: &str) {
        let Some(model) = self.model(schema_id) else {
            return;
        };
        let (schema, open) = {
            let st = self.state.read();
            let Ok(schema) = st.schema(schema_id).cloned() else {
                return;
            };
            let open: Vec<(String, String, u64)> = st
                .queue
                .open_tasks()
                .filter(|t| t.schema_id == schema_id)
                .map(|t| {
                    let m = &st.messages[&t.message_id];
                    (t.id.clone(), m.text.clone(), m.seq)
                })
                .collect();
            (schema, open)
        };
        if schema.selection == SelectionPolicy::Random {
            return;
        }
        let updates: Vec<(String, f64)> = open
            .into_iter()
            .map(|(id, text, seq)| {
                let p = model.classify_text(&text);
                let priority = priority_for(
                    Some(p.confidence),
                    schema.active_threshold,
                    schema.selection,
                    unit_draw(schema.seed, seq),
                );
                (id, priority)
            })
            .collect();
        let mut st = self.state.write();
        for (id, p) in updates {
            st.queue.set_priority(&id, p);
        }
    }

    pub fn metrics(&self, schema_id: &str) -> Result<ModelMetrics> {
        let st = self.state.read();
        let schema = st.schema(schema_id)?;
        let learner = st.learners.get(schema_id).cloned().unwrap_or_default();
        let model = self.models.read().get(schema_id).cloned();
        let labeled_total = st
            .labels
            .values()
            .filter(|l| l.schema_id == schema_id && !l.deleted)
            .count();
        Ok(ModelMetrics {
            schema_id: schema_id.to_string(),
            version: model.as_ref().map_or(0, |m| m.version),
            macro_auc: model.as_ref().and_then(|m| m.metrics.macro_auc),
            per_category_auc: model
                .as_ref()
                .map(|m| m.metrics.per_category.clone())
                .unwrap_or_default(),
            train_size: model.as_ref().map_or(0, |m| m.train_size),
            holdout_size: model.as_ref().map_or(0, |m| m.holdout_size),
            labeled_total,
            labels_since_training: st.labels_since_training(schema_id),
            retrain_every: schema.retrain_every,
            trainings: learner.trainings,
            trained_at: model.as_ref().map(|m| m.trained_at),
            last_warning: learner.last_warning,
        })
    }

    // ---- exports ----

    fn export_rows(
        &self,
        collection_id: &str,
        schema_id: &str,
        category: &str,
        include_sender: bool,
    ) -> Result<Vec<ExportRow>> {
        let st = self.state.read();
        let schema = schema_in(&st, collection_id, schema_id)?;
        if schema.category_index(category).is_none() {
            return Err(Error::Validation(format!(
                "{category:?} is not a category of schema {schema_id}"
            )));
        }
        let mut rows: Vec<ExportRow> = st
            .classifications
            .values()
            .filter(|c| c.schema_id == schema_id && c.category == category)
            .map(|c| {
                let m = &st.messages[&c.message_id];
                ExportRow {
                    message_id: c.message_id.clone(),
                    text: m.text.clone(),
                    category: c.category.clone(),
                    confidence: c.confidence,
                    model_version: c.model_version,
                    received_at: m.received_at,
                    sender_ref: include_sender.then(|| m.sender_ref.clone()),
                }
            })
            .collect();
        rows.sort_by(export::rank_order);
        Ok(rows)
    }

    /// Writes every message the model assigned to `category`, most confident
    /// first. Rows come from one consistent snapshot.
    pub fn export_category<W: Write>(
        &self,
        collection_id: &str,
        schema_id: &str,
        category: &str,
        options: impl Into<ExportOptions>,
        out: W,
    ) -> Result<usize> {
        let options = options.into();
        let rows = self.export_rows(collection_id, schema_id, category, options.include_sender)?;
        export::write_rows(&rows, options, out)?;
        Ok(rows.len())
    }

    pub fn stats(&self, collection_id: &str, schema_id: &str) -> Result<CollectionStats> {
        let st = self.state.read();
        let schema = schema_in(&st, collection_id, schema_id)?;
        let names: Vec<String> = schema.category_names().map(str::to_string).collect();
        let mut counts = vec![0u64; names.len()];
        for c in st
            .classifications
            .values()
            .filter(|c| c.schema_id == schema_id)
        {
            if let Some(i) = schema.category_index(&c.category) {
                counts[i] += 1;
            }
        }
        let proportions = export::proportions(&names, &counts)
            .into_iter()
            .map(|(category, proportion)| CategoryShare {
                category,
                proportion,
            })
            .collect();
        Ok(CollectionStats {
            collection_id: collection_id.to_string(),
            schema_id: schema_id.to_string(),
            counters: st.collections[collection_id].counters,
            classified_by_schema: counts.iter().sum(),
            open_tasks: st
                .queue
                .open_tasks()
                .filter(|t| t.schema_id == schema_id)
                .count(),
            model_version: self.models.read().get(schema_id).map_or(0, |m| m.version),
            proportions,
        })
    }

    pub fn schemas_of(&self, collection_id: &str) -> Result<Vec<ClassifierSchema>> {
        let st = self.state.read();
        if !st.collections.contains_key(collection_id) {
            return Err(Error::not_found("collection", collection_id));
        }
        Ok(st
            .schemas_of(collection_id)
            .iter()
            .map(|id| st.schemas[id].clone())
            .collect())
    }

    /// Rewrites the entity log without superseded records.
    pub fn compact(&self) -> Result<()> {
        let _st = self.state.write();
        self.store.compact()
    }

    // ---- background execution ----

    /// Spawns the pipeline worker and, in background mode, the trainer.
    /// A single pipeline worker keeps per-collection processing in arrival
    /// order.
    pub fn start(self: &Arc<Self>) -> Workers {
        let mut handles = Vec::new();
        let engine = Arc::clone(self);
        handles.push(
            std::thread::Builder::new()
                .name("pipeline".into())
                .spawn(move || engine.pipeline_loop())
                .expect("spawn pipeline worker"),
        );
        if self.config.mode == ExecutionMode::Background {
            if let Some(rx) = self.trainer_rx.lock().take() {
                let engine = Arc::clone(self);
                handles.push(
                    std::thread::Builder::new()
                        .name("trainer".into())
                        .spawn(move || engine.trainer_loop(rx))
                        .expect("spawn trainer"),
                );
            }
        }
        Workers {
            engine: Arc::clone(self),
            handles,
        }
    }

    fn pipeline_loop(&self) {
        loop {
            let id = {
                let mut q = self.pending.lock();
                loop {
                    if self.shutdown.load(Ordering::SeqCst) {
                        return;
                    }
                    if let Some(id) = q.pop_front() {
                        break id;
                    }
                    self.pending_ready
                        .wait_for(&mut q, StdDuration::from_millis(100));
                }
            };
            if let Err(e) = self.process_message(&id) {
                warn!(message_id = %id, error = %e, "pipeline failed");
            }
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
        }
    }

    fn trainer_loop(&self, rx: Receiver<String>) {
        while !self.shutdown.load(Ordering::SeqCst) {
            let first = match rx.recv_timeout(StdDuration::from_millis(100)) {
                Ok(s) => s,
                Err(mpsc::RecvTimeoutError::Timeout) => continue,
                Err(mpsc::RecvTimeoutError::Disconnected) => return,
            };
            // Coalesce a burst of requests into one check per schema.
            let mut batch = vec![first];
            batch.extend(rx.try_iter());
            let n = batch.len();
            let unique: BTreeSet<String> = batch.into_iter().collect();
            for schema_id in unique {
                if let Err(e) = self.retrain_if_due(&schema_id) {
                    warn!(schema_id, error = %e, "training failed");
                }
            }
            self.in_flight.fetch_sub(n, Ordering::SeqCst);
        }
    }

    /// Waits until queued pipeline work and training requests are done.
    pub fn wait_idle(&self, timeout: StdDuration) -> bool {
        let deadline = Instant::now() + timeout;
        while self.in_flight.load(Ordering::SeqCst) > 0 {
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(StdDuration::from_millis(2));
        }
        true
    }
}

/// Handles for the threads started by [`Engine::start`]; stops them on drop.
pub struct Workers {
    engine: Arc<Engine>,
    handles: Vec<JoinHandle<()>>,
}

impl Workers {
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.engine.shutdown.store(true, Ordering::SeqCst);
        self.engine.pending_ready.notify_all();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for Workers {
    fn drop(&mut self) {
        self.stop();
    }
}

#[derive(Clone, Copy)]
enum ClassCounter {
    Classified,
    Labeled,
}

/// Tracks per-message reference counts so collection counters count each
/// message once, however many schemas touch it.
fn bump(st: &mut State, which: ClassCounter, message_id: &str, delta: i64) {
    let Some(collection_id) = st.messages.get(message_id).map(|m| m.collection_id.clone()) else {
        return;
    };
    let refs = match which {
        ClassCounter::Classified => &mut st.classified_by,
        ClassCounter::Labeled => &mut st.labeled_by,
    };
    let n = refs.entry(message_id.to_string()).or_default();
    let before = *n;
    *n = (*n as i64 + delta).max(0) as usize;
    let after = *n;
    let Some(c) = st.collections.get_mut(&collection_id) else {
        return;
    };
    let counter = match which {
        ClassCounter::Classified => &mut c.counters.classified,
        ClassCounter::Labeled => &mut c.counters.labeled,
    };
    if before == 0 && after > 0 {
        *counter += 1;
    } else if before > 0 && after == 0 {
        *counter -= 1;
    }
}

fn schema_in<'a>(
    st: &'a State,
    collection_id: &str,
    schema_id: &str,
) -> Result<&'a ClassifierSchema> {
    if !st.collections.contains_key(collection_id) {
        return Err(Error::not_found("collection", collection_id));
    }
    let schema = st.schema(schema_id)?;
    if schema.collection_id != collection_id {
        return Err(Error::not_found(
            "schema",
            format!("{collection_id}/{schema_id}"),
        ));
    }
    Ok(schema)
}

#[cfg(test)]
mod tests;
