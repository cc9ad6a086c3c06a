use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use chrono::{DateTime, Duration, Utc};

use super::task::{aggregate, LabelTask, LabelVote, Lease, TaskOutcome, TaskStatus, MAX_VOTES};
use crate::error::{Error, Result};

pub const DEFAULT_LEASE_SECS: i64 = 120;

#[derive(Clone, Copy, Debug)]
struct Priority(f64);

impl PartialEq for Priority {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Priority {}
impl PartialOrd for Priority {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Priority {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Service order: priority, then arrival time, then task sequence.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct QueueKey {
    priority: Priority,
    received_at: DateTime<Utc>,
    seq: u64,
    id: String,
}

impl QueueKey {
    fn of(t: &LabelTask) -> Self {
        QueueKey {
            priority: Priority(t.priority),
            received_at: t.received_at,
            seq: t.seq,
            id: t.id.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Enqueued {
    Created(String),
    Duplicate { existing: String },
}

/// Open-task queue across all schemas.
#[derive(Debug)]
pub struct LabelQueue {
    tasks: HashMap<String, LabelTask>,
    open: BTreeSet<QueueKey>,
    /// (schema id, dedup key) -> newest task with that key.
    dedup: HashMap<(String, String), String>,
    lease: Duration,
    discard_cooldown: Option<Duration>,
}

impl LabelQueue {
    /// `discard_cooldown = None` keeps discarded texts out of the queue forever.
    pub fn new(lease: Duration, discard_cooldown: Option<Duration>) -> Self {
        LabelQueue {
            tasks: HashMap::new(),
            open: BTreeSet::new(),
            dedup: HashMap::new(),
            lease,
            discard_cooldown,
        }
    }

    pub fn get(&self, id: &str) -> Option<&LabelTask> {
        self.tasks.get(id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &LabelTask> {
        self.tasks.values()
    }

    pub fn open_len(&self) -> usize {
        self.open.len()
    }

    /// Open tasks in service order.
    pub fn open_tasks(&self) -> impl Iterator<Item = &LabelTask> {
        self.open.iter().map(|k| &self.tasks[&k.id])
    }

    /// Whether a task for `dedup_key` would be rejected as a duplicate at `now`.
    pub fn blocking_task(
        &self,
        schema_id: &str,
        dedup_key: &str,
        now: DateTime<Utc>,
    ) -> Option<&str> {
        let id = self
            .dedup
            .get(&(schema_id.to_string(), dedup_key.to_string()))?;
        let task = &self.tasks[id];
        if task.status == TaskStatus::Discarded {
            if let (Some(cooldown), Some(closed)) = (self.discard_cooldown, task.closed_at) {
                if now >= closed + cooldown {
                    return None;
                }
            }
        }
        Some(id)
    }

    pub fn enqueue(&mut self, task: LabelTask, now: DateTime<Utc>) -> Enqueued {
        if let Some(existing) = self.blocking_task(&task.schema_id, &task.dedup_key, now) {
            return Enqueued::Duplicate {
                existing: existing.to_string(),
            };
        }
        let id = task.id.clone();
        self.insert(task);
        Enqueued::Created(id)
    }

    /// Reinserts a stored task as-is.
    pub fn restore(&mut self, task: LabelTask) {
        self.insert(task);
    }

    fn insert(&mut self, task: LabelTask) {
        let key = (task.schema_id.clone(), task.dedup_key.clone());
        let newer = match self.dedup.get(&key) {
            Some(existing) => self.tasks[existing].seq < task.seq,
            None => true,
        };
        if newer {
            self.dedup.insert(key, task.id.clone());
        }
        if task.is_open() {
            self.open.insert(QueueKey::of(&task));
        }
        self.tasks.insert(task.id.clone(), task);
    }

    /// Leases the first open task in service order that `labeler` has not
    /// voted on and nobody else holds an unexpired lease on.
    pub fn lease_next(
        &mut self,
        labeler: &str,
        schema: Option<&str>,
        now: DateTime<Utc>,
    ) -> Option<&LabelTask> {
        let id = self
            .open
            .iter()
            .map(|k| &self.tasks[&k.id])
            .find(|t| {
                schema.is_none_or(|s| t.schema_id == s)
                    && !t.has_voted(labeler)
                    && t.lease
                        .as_ref()
                        .is_none_or(|l| l.labeler == labeler || l.until <= now)
            })?
            .id
            .clone();
        let task = self.tasks.get_mut(&id).expect("open key points at a task");
        task.lease = Some(Lease {
            labeler: labeler.to_string(),
            until: now + self.lease,
        });
        Some(task)
    }

    /// Records a vote and applies the 2-of-3 rule. The caller validates the
    /// category against the schema.
    pub fn vote(
        &mut self,
        task_id: &str,
        labeler: &str,
        category: &str,
        now: DateTime<Utc>,
    ) -> Result<&LabelTask> {
        let task = self
            .tasks
            .get_mut(task_id)
            .ok_or_else(|| Error::not_found("task", task_id))?;
        if !task.is_open() {
            return Err(Error::TaskClosed(task_id.to_string()));
        }
        if task.has_voted(labeler) {
            return Err(Error::DuplicateVote {
                task: task_id.to_string(),
                labeler: labeler.to_string(),
            });
        }
        debug_assert!(task.votes.len() < MAX_VOTES);
        task.votes.push(LabelVote {
            task_id: task_id.to_string(),
            labeler_id: labeler.to_string(),
            category: category.to_string(),
            voted_at: now,
        });
        if task.lease.as_ref().is_some_and(|l| l.labeler == labeler) {
            task.lease = None;
        }
        let cats: Vec<&str> = task.votes.iter().map(|v| v.category.as_str()).collect();
        match aggregate(&cats) {
            TaskOutcome::Open => {}
            outcome => {
                let key = QueueKey::of(task);
                self.open.remove(&key);
                task.closed_at = Some(now);
                task.lease = None;
                if let TaskOutcome::Resolved(c) = outcome {
                    task.status = TaskStatus::Resolved;
                    task.resolved_category = Some(c);
                } else {
                    task.status = TaskStatus::Discarded;
                }
            }
        }
        Ok(task)
    }

    pub fn set_priority(&mut self, task_id: &str, priority: f64) {
        let Some(task) = self.tasks.get_mut(task_id) else {
            return;
        };
        if !task.is_open() || task.priority.total_cmp(&priority).is_eq() {
            return;
        }
        self.open.remove(&QueueKey::of(task));
        task.priority = priority;
        self.open.insert(QueueKey::of(task));
    }
}
