use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::gateway::{Ack, PushPayload};

use super::synth::CorpusLine;

const MAX_ATTEMPTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Rate {
    PerSecond(f64),
    Max,
}

impl FromStr for Rate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("max") {
            return Ok(Rate::Max);
        }
        match s.parse::<f64>() {
            Ok(r) if r > 0.0 && r.is_finite() => Ok(Rate::PerSecond(r)),
            _ => Err(Error::Validation(format!(
                "rate must be a positive number or \"max\", got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rate::PerSecond(r) => write!(f, "{r}"),
            Rate::Max => f.write_str("max"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReplayPlan {
    pub source_file: PathBuf,
    pub rate: Rate,
    pub shuffle_seed: Option<u64>,
    pub limit: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PushError {
    /// The gateway refused this payload; retrying will not help.
    Rejected(String),
    /// Worth retrying: connection trouble, a paused collection, a 5xx.
    Transient(String),
    /// The target itself is wrong; stop the run.
    Fatal(String),
}

impl fmt::Display for PushError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PushError::Rejected(m) => write!(f, "rejected: {m}"),
            PushError::Transient(m) => write!(f, "transient: {m}"),
            PushError::Fatal(m) => write!(f, "fatal: {m}"),
        }
    }
}

/// Where replayed messages go.
pub trait PushTarget {
    fn push(&self, payload: &PushPayload) -> Result<Ack, PushError>;
}

/// Pushes straight into an in-process engine through one collection's
/// endpoint token.
impl PushTarget for (&Engine, &str) {
    fn push(&self, payload: &PushPayload) -> Result<Ack, PushError> {
        let (engine, endpoint) = *self;
        engine
            .ingest(endpoint, payload.clone())
            .map_err(|e| match e {
                Error::Rejected(m) => PushError::Rejected(m),
                Error::Paused(_) | Error::Io(_) => PushError::Transient(e.to_string()),
                other => PushError::Fatal(other.to_string()),
            })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReplayReport {
    pub lines_read: usize,
    pub sent: usize,
    /// Malformed lines plus payloads the gateway refused.
    pub rejected: usize,
    pub skipped_by_limit: usize,
    pub elapsed_secs: f64,
    pub achieved_rate: f64,
    /// Set when the run stopped early; totals cover what happened before.
    pub aborted: Option<String>,
}

/// Reads the plan's file and replays it.
pub fn replay<P: PushTarget + ?Sized>(plan: &ReplayPlan, target: &P) -> Result<ReplayReport> {
    let file = File::open(&plan.source_file)?;
    let lines = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<String>>>()?;
    replay_lines(lines, plan, target)
}

/// Replays already-read lines. Blank lines are ignored; malformed lines are
/// skipped and counted as rejected.
pub fn replay_lines<P: PushTarget + ?Sized>(
    mut lines: Vec<String>,
    plan: &ReplayPlan,
    target: &P,
) -> Result<ReplayReport> {
    lines.retain(|l| !l.trim().is_empty());
    if let Some(limit) = plan.limit {
        if limit > lines.len() {
            return Err(Error::Validation(format!(
                "limit {limit} exceeds the {} lines in the file",
                lines.len()
            )));
        }
    }
    if let Rate::PerSecond(r) = plan.rate {
        if r.is_nan() || r <= 0.0 {
            return Err(Error::Validation("rate must be positive".into()));
        }
    }
    if let Some(seed) = plan.shuffle_seed {
        lines.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let take = plan.limit.unwrap_or(lines.len());
    let mut report = ReplayReport {
        lines_read: lines.len(),
        skipped_by_limit: lines.len() - take,
        ..Default::default()
    };
    let start = Instant::now();
    let mut pushed = 0usize;
    for line in lines.into_iter().take(take) {
        let Ok(parsed) = serde_json::from_str::<CorpusLine>(&line) else {
            report.rejected += 1;
            continue;
        };
        if let Rate::PerSecond(r) = plan.rate {
            let due = start + Duration::from_secs_f64(pushed as f64 / r);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        pushed += 1;
        let payload = PushPayload {
            text: parsed.text,
            sender_ref: parsed.sender_ref,
            ..Default::default()
        };
        match push_with_retry(target, &payload) {
            Ok(_) => report.sent += 1,
            Err(PushError::Rejected(_)) => report.rejected += 1,
            Err(e) => {
                warn!(error = %e, "replay aborted");
                report.aborted = Some(e.to_string());
                // Lines never attempted count as skipped so totals still
                // reconcile with lines read.
                report.skipped_by_limit = report.lines_read - report.sent - report.rejected;
                break;
            }
        }
    }
    report.elapsed_secs = start.elapsed().as_secs_f64();
    report.achieved_rate = if report.elapsed_secs > 0.0 {
        report.sent as f64 / report.elapsed_secs
    } else {
        0.0
    };
    Ok(report)
}

fn push_with_retry<P: PushTarget + ?Sized>(
    target: &P,
    payload: &PushPayload,
) -> Result<Ack, PushError> {
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        match target.push(payload) {
            Err(PushError::Transient(m)) => {
                last = Some(m);
                if attempt + 1 < MAX_ATTEMPTS {
                    thread::sleep(Duration::from_millis(20 << attempt));
                }
            }
            other => return other,
        }
    }
    Err(PushError::Transient(format!(
        "gave up after {MAX_ATTEMPTS} attempts: {}",
        last.unwrap_or_default()
    )))
}
