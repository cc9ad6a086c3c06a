//! Labeling tasks: de-duplication, prioritized serving with leases, and
//! 2-of-3 vote aggregation.

mod queue;
mod task;

pub use queue::{Enqueued, LabelQueue, DEFAULT_LEASE_SECS};
pub use task::{
    aggregate, priority_for, LabelTask, LabelVote, Lease, ResolvedLabel, TaskOutcome, TaskStatus,
    COLD_START_PRIORITY, MAX_VOTES,
};
