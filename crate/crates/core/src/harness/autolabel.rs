use std::collections::HashMap;
use std::thread;
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, TaskView, VoteReceipt};
use crate::error::{Error, Result};
use crate::labeling::TaskStatus;
use crate::text::normalize;

use super::synth::CorpusLine;

/// The labeling half of the service, as seen by a labeler.
pub trait LabelingBackend {
    fn next_task(&self, labeler: &str) -> Result<Option<TaskView>>;
    fn submit_vote(&self, task_id: &str, labeler: &str, category: &str) -> Result<VoteReceipt>;
}

impl LabelingBackend for Engine {
    fn next_task(&self, labeler: &str) -> Result<Option<TaskView>> {
        Engine::next_task(self, labeler, None)
    }

    fn submit_vote(&self, task_id: &str, labeler: &str, category: &str) -> Result<VoteReceipt> {
        Engine::submit_vote(self, task_id, labeler, category)
    }
}

/// True category per normalized message text.
#[derive(Clone, Debug, Default)]
pub struct TruthTable(HashMap<String, String>);

impl TruthTable {
    pub fn from_corpus(lines: &[CorpusLine]) -> Self {
        TruthTable(
            lines
                .iter()
                .filter_map(|l| Some((normalize(&l.text), l.true_category.clone()?)))
                .collect(),
        )
    }

    pub fn get(&self, text: &str) -> Option<&str> {
        self.0.get(&normalize(text)).map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AutoLabelConfig {
    pub labelers: usize,
    /// Chance each vote is the true category; otherwise a uniformly chosen
    /// wrong one.
    pub accuracy: f64,
    pub seed: u64,
    /// Stop after this many resolved labels.
    pub max_resolved: Option<usize>,
    /// Empty polling rounds tolerated before stopping.
    pub idle_rounds: usize,
    pub poll_interval_ms: u64,
}

impl Default for AutoLabelConfig {
    fn default() -> Self {
        AutoLabelConfig {
            labelers: 3,
            accuracy: 1.0,
            seed: 0,
            max_resolved: None,
            idle_rounds: 0,
            poll_interval_ms: 50,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AutoLabelReport {
    pub votes: usize,
    pub resolved: usize,
    pub discarded: usize,
    /// Resolved with a category other than the true one.
    pub resolved_wrong: usize,
    /// Tasks whose text was not in the truth table; voted at random.
    pub unknown_texts: usize,
    /// Votes lost to another labeler closing the task first.
    pub conflicts: usize,
}

/// Runs scripted labelers against `backend` until the queue stays empty or
/// `max_resolved` labels exist. Labelers take turns, one task each per
/// round. `on_vote` sees every accepted vote and can stop the run by
/// returning `false`.
pub fn auto_label<B, F>(
    backend: &B,
    truth: &TruthTable,
    config: &AutoLabelConfig,
    mut on_vote: F,
) -> Result<AutoLabelReport>
where
    B: LabelingBackend + ?Sized,
    F: FnMut(&VoteReceipt) -> bool,
{
    if config.labelers == 0 {
        return Err(Error::Validation("at least one labeler is needed".into()));
    }
    if !(0.0..=1.0).contains(&config.accuracy) {
        return Err(Error::Validation("accuracy must be in [0, 1]".into()));
    }
    let names: Vec<String> = (1..=config.labelers)
        .map(|i| format!("labeler-{i}"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = AutoLabelReport::default();
    let mut idle = 0;
    loop {
        let mut served = false;
        for name in &names {
            if config.max_resolved.is_some_and(|m| report.resolved >= m) {
                return Ok(report);
            }
            let Some(task) = backend.next_task(name)? else {
                continue;
            };
            served = true;
            let category = match truth.get(&task.text) {
                Some(t) => choose_vote(&mut rng, &task, t, config.accuracy),
                None => {
                    report.unknown_texts += 1;
                    task.categories
                        .choose(&mut rng)
                        .map(|c| c.name.clone())
                        .unwrap_or_default()
                }
            };
            let receipt = match backend.submit_vote(&task.task_id, name, &category) {
                Ok(r) => r,
                Err(Error::TaskClosed(_) | Error::DuplicateVote { .. }) => {
                    report.conflicts += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            report.votes += 1;
            match receipt.status {
                TaskStatus::Resolved => {
                    report.resolved += 1;
                    let correct = truth.get(&task.text);
                    if correct.is_some_and(|c| Some(c) != receipt.resolved_category.as_deref()) {
                        report.resolved_wrong += 1;
                    }
                }
                TaskStatus::Discarded => report.discarded += 1,
                TaskStatus::Open => {}
            }
            if !on_vote(&receipt) {
                return Ok(report);
            }
        }
        if served {
            idle = 0;
        } else {
            idle += 1;
            if idle > config.idle_rounds {
                return Ok(report);
            }
            thread::sleep(Duration::from_millis(config.poll_interval_ms));
        }
    }
}

fn choose_vote(rng: &mut ChaCha8Rng, task: &TaskView, truth: &str, accuracy: f64) -> String {
    if rng.random_bool(accuracy) {
        return truth.to_string();
    }
    let wrong: Vec<&str> = task
        .categories
        .iter()
        .map(|c| c.name.as_str())
        .filter(|c| *c != truth)
        .collect();
    wrong
        .choose(rng)
        .map(|c| c.to_string())
        .unwrap_or_else(|| truth.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::engine::EngineConfig;
    use crate::gateway::PushPayload;
    use crate::harness::synth::{generate, SyntheticSpec};
    use crate::learn::{ClassifierSchema, SchemaSpec};
    use std::sync::Arc;

    /// Service with a cold-start health schema holding `n` unique messages.
    fn service(n: usize, seed: u64) -> (Engine, TruthTable) {
        let e = Engine::open(EngineConfig::default(), Arc::new(ManualClock::ticking())).unwrap();
        let c = e.create_collection("pilot", None).unwrap();
        let mut spec = SchemaSpec::new("health", ClassifierSchema::health_categories());
        // Keep training out of the way.
        spec.retrain_every = Some(1_000_000);
        e.create_schema(&c.id, spec).unwrap();
        let corpus = generate(&SyntheticSpec::health(n, seed)).unwrap();
        for line in &corpus {
            e.ingest(&c.endpoint_path, PushPayload::text(line.text.clone()))
                .unwrap();
        }
        e.process_pending().unwrap();
        (e, TruthTable::from_corpus(&corpus))
    }

    /// Outcome probabilities for one task, enumerated over every vote
    /// sequence: (resolved correctly, resolved wrongly, discarded).
    fn outcome_oracle(accuracy: f64, k: usize) -> (f64, f64, f64) {
        let p = |v: usize| {
            if v == 0 {
                accuracy
            } else {
                (1.0 - accuracy) / (k - 1) as f64
            }
        };
        let (mut right, mut wrong, mut discard) = (0.0, 0.0, 0.0);
        for a in 0..k {
            for b in 0..k {
                if a == b {
                    let pr = p(a) * p(b);
                    if a == 0 {
                        right += pr
                    } else {
                        wrong += pr
                    }
                    continue;
                }
                for c in 0..k {
                    let pr = p(a) * p(b) * p(c);
                    if c == a || c == b {
                        if c == 0 {
                            right += pr
                        } else {
                            wrong += pr
                        }
                    } else {
                        discard += pr;
                    }
                }
            }
        }
        (right, wrong, discard)
    }

    #[test]
    fn oracle_sums_to_one() {
        for (a, k) in [(0.9, 8), (0.0, 3), (1.0, 4), (0.5, 2)] {
            let (r, w, d) = outcome_oracle(a, k);
            assert!((r + w + d - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_pair_resolves_every_task_in_two_votes() {
        let (e, truth) = service(300, 1);
        let config = AutoLabelConfig {
            labelers: 2,
            ..Default::default()
        };
        let r = auto_label(&e, &truth, &config, |_| true).unwrap();
        assert!(r.resolved > 250);
        assert_eq!(r.votes, 2 * r.resolved);
        assert_eq!((r.discarded, r.resolved_wrong, r.unknown_texts), (0, 0, 0));
    }

    #[test]
    fn hopeless_labelers_mostly_discard() {
        let (e, truth) = service(2000, 2);
        let config = AutoLabelConfig {
            labelers: 3,
            accuracy: 0.0,
            seed: 5,
            ..Default::default()
        };
        let r = auto_label(&e, &truth, &config, |_| true).unwrap();
        let closed = (r.resolved + r.discarded) as f64;
        let (_, _, discard) = outcome_oracle(0.0, 8);
        let observed = r.discarded as f64 / closed;
        // Binomial standard error is below 0.011 at this size.
        assert!((observed - discard).abs() < 0.04, "{observed} vs {discard}");
        assert_eq!(r.resolved, r.resolved_wrong);
    }

    #[test]
    fn resolved_error_rate_matches_vote_pattern_oracle() {
        let (e, truth) = service(4000, 3);
        let config = AutoLabelConfig {
            labelers: 3,
            accuracy: 0.9,
            seed: 8,
            ..Default::default()
        };
        let r = auto_label(&e, &truth, &config, |_| true).unwrap();
        let (right, wrong, _) = outcome_oracle(0.9, 8);
        let expected = wrong / (right + wrong);
        let observed = r.resolved_wrong as f64 / r.resolved as f64;
        assert!(
            (observed - expected).abs() < 0.004,
            "{observed} vs {expected}"
        );
    }

    #[test]
    fn seeded_runs_repeat() {
        let run = || {
            let (e, truth) = service(300, 4);
            let config = AutoLabelConfig {
                accuracy: 0.7,
                seed: 9,
                ..Default::default()
            };
            auto_label(&e, &truth, &config, |_| true).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn stops_at_max_resolved() {
        let (e, truth) = service(300, 4);
        let config = AutoLabelConfig {
            max_resolved: Some(17),
            ..Default::default()
        };
        let r = auto_label(&e, &truth, &config, |_| true).unwrap();
        assert_eq!(r.resolved, 17);
    }
}
