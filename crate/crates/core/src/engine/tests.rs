use super::*;
use crate::clock::ManualClock;
use crate::export::ExportFormat;
use crate::learn::Category;

const WORDS: [(&str, [&str; 4]); 3] = [
    ("hiv", ["virus", "test", "positive", "arv"]),
    ("family", ["pill", "condom", "pregnant", "period"]),
    ("other", ["school", "money", "football", "weather"]),
];

fn engine() -> Engine {
    Engine::open(
        EngineConfig {
            token_seed: Some(7),
            ..Default::default()
        },
        Arc::new(ManualClock::ticking()),
    )
    .unwrap()
}

fn spec(retrain_every: usize) -> SchemaSpec {
    SchemaSpec {
        retrain_every: Some(retrain_every),
        num_trees: Some(20),
        ..SchemaSpec::new(
            "topic",
            WORDS
                .iter()
                .map(|(c, _)| Category::new(*c, format!("{c} questions")))
                .collect(),
        )
    }
}

/// Message `i` belongs to category `i % 3` and is unique by its number word.
fn text(i: usize) -> String {
    let (_, words) = WORDS[i % 3];
    format!("{} {} please help n{i}", words[i % 4], words[(i / 3) % 4])
}

fn truth(text: &str) -> &'static str {
    WORDS
        .iter()
        .find(|(_, ws)| ws.iter().any(|w| text.starts_with(w)))
        .map(|(c, _)| *c)
        .unwrap()
}

fn setup(n: usize, retrain_every: usize) -> (Engine, Collection, ClassifierSchema) {
    let e = engine();
    let c = e.create_collection("pilot", None).unwrap();
    let s = e.create_schema(&c.id, spec(retrain_every)).unwrap();
    for i in 0..n {
        e.ingest(&c.endpoint_path, PushPayload::text(text(i)))
            .unwrap();
    }
    e.process_pending().unwrap();
    (e, c, s)
}

/// Two agreeing labelers resolve the next task with its true category.
fn resolve_next(e: &Engine, schema: &str) -> Option<VoteReceipt> {
    let t = e.next_task("ann", Some(schema)).unwrap()?;
    let cat = truth(&t.text);
    e.submit_vote(&t.task_id, "ann", cat).unwrap();
    Some(e.submit_vote(&t.task_id, "ben", cat).unwrap())
}

#[test]
fn ingest_counts_and_rejects_over_limit() {
    let e = engine();
    let c = e.create_collection("pilot", Some(140)).unwrap();
    assert_eq!(c.endpoint_path.len(), ENDPOINT_TOKEN_LEN);
    e.ingest(&c.endpoint_path, PushPayload::text("a".repeat(140)))
        .unwrap();
    let err = e
        .ingest(&c.endpoint_path, PushPayload::text("a".repeat(141)))
        .unwrap_err();
    assert!(matches!(err, Error::Rejected(_)));
    assert!(matches!(
        e.ingest(&c.endpoint_path, PushPayload::text("  ")),
        Err(Error::Rejected(_))
    ));
    assert!(matches!(
        e.ingest("nope", PushPayload::text("hi")),
        Err(Error::NotFound { .. })
    ));
    assert_eq!(e.collection(&c.id).unwrap().counters.received, 1);
    assert!(matches!(
        e.create_collection("pilot", None),
        Err(Error::NameConflict(_))
    ));
}

#[test]
fn paused_collection_refuses_pushes() {
    let e = engine();
    let c = e.create_collection("pilot", None).unwrap();
    e.pause(&c.id).unwrap();
    assert!(matches!(
        e.ingest(&c.endpoint_path, PushPayload::text("hello")),
        Err(Error::Paused(_))
    ));
    e.resume(&c.id).unwrap();
    e.ingest(&c.endpoint_path, PushPayload::text("hello"))
        .unwrap();
    assert_eq!(e.collection(&c.id).unwrap().counters.received, 1);
}

#[test]
fn cold_start_backlog_is_classified_by_first_model() {
    let (e, c, s) = setup(60, 12);
    assert_eq!(e.backlog_len(&s.id), 60);
    assert_eq!(e.collection(&c.id).unwrap().counters.classified, 0);
    let mut first = None;
    for _ in 0..12 {
        first = resolve_next(&e, &s.id);
    }
    let retrain = first.unwrap().retrain.unwrap();
    assert!(retrain.retrained, "{retrain:?}");
    assert_eq!(retrain.model_version, Some(1));
    assert_eq!(e.backlog_len(&s.id), 0);
    let counters = e.collection(&c.id).unwrap().counters;
    assert_eq!(counters.classified, 60);
    assert_eq!(counters.labeled, 12);
    assert!(counters.classified <= counters.received);
    assert!(counters.labeled <= counters.received);

    // Later models never restamp existing classifications.
    for _ in 0..12 {
        resolve_next(&e, &s.id);
    }
    assert_eq!(e.model(&s.id).unwrap().version, 2);
    assert_eq!(
        e.classification(&s.id, "msg-00000001")
            .unwrap()
            .model_version,
        1
    );
    e.ingest(&c.endpoint_path, PushPayload::text(text(999)))
        .unwrap();
    e.process_pending().unwrap();
    assert_eq!(
        e.classification(&s.id, "msg-00000061")
            .unwrap()
            .model_version,
        2
    );
}

#[test]
fn retrain_every_label_once_trainable() {
    let (e, _, s) = setup(30, 1);
    let mut versions = Vec::new();
    for i in 0..10 {
        let r = resolve_next(&e, &s.id).unwrap().retrain.unwrap();
        if i < 4 {
            // Fewer than 5 labels cannot be split.
            assert!(!r.retrained);
            assert!(r.warning.is_some());
        } else {
            assert!(r.retrained, "label {i}: {r:?}");
            versions.push(r.model_version.unwrap());
        }
    }
    assert_eq!(versions, vec![1, 2, 3, 4, 5, 6]);
    let m = e.metrics(&s.id).unwrap();
    assert_eq!(m.trainings, 6);
    assert_eq!(m.labels_since_training, 0);
    assert_eq!(m.labeled_total, 10);
    assert_eq!(m.train_size + m.holdout_size, 10);
}

#[test]
fn deleting_a_pending_label_defers_retrain() {
    let (e, c, s) = setup(60, 50);
    let mut last = None;
    for _ in 0..49 {
        last = resolve_next(&e, &s.id);
    }
    assert!(!last.unwrap().retrain.unwrap().retrained);
    assert_eq!(e.metrics(&s.id).unwrap().labels_since_training, 49);
    let victim = e.list_labeled(&s.id, 1, 1).unwrap().items[0]
        .message_id
        .clone();
    e.delete_label(&s.id, &victim).unwrap();
    e.delete_label(&s.id, &victim).unwrap();
    assert_eq!(e.metrics(&s.id).unwrap().labels_since_training, 48);
    assert_eq!(e.collection(&c.id).unwrap().counters.labeled, 48);
    assert!(!resolve_next(&e, &s.id).unwrap().retrain.unwrap().retrained);
    assert!(resolve_next(&e, &s.id).unwrap().retrain.unwrap().retrained);
    assert_eq!(e.model(&s.id).unwrap().labeled_total(), 50);
    assert!(matches!(
        e.delete_label(&s.id, "msg-99999999"),
        Err(Error::NotFound { .. })
    ));
}

#[test]
fn labeled_list_pages_newest_first() {
    let (e, _, s) = setup(130, 1000);
    for _ in 0..120 {
        resolve_next(&e, &s.id).unwrap();
    }
    let sizes: Vec<usize> = (1..=4)
        .map(|p| {
            e.list_labeled(&s.id, p, DEFAULT_PAGE_SIZE)
                .unwrap()
                .items
                .len()
        })
        .collect();
    assert_eq!(sizes, vec![50, 50, 20, 0]);
    let page = e.list_labeled(&s.id, 1, DEFAULT_PAGE_SIZE).unwrap();
    assert_eq!(page.total, 120);
    assert!(page
        .items
        .windows(2)
        .all(|w| w[0].resolved_at > w[1].resolved_at));
    let json = serde_json::to_string(&page).unwrap();
    assert!(!json.contains("ann") && !json.contains("ben"));
    assert!(e.list_labeled(&s.id, 0, 50).is_err());
}

#[test]
fn votes_follow_two_of_three() {
    let (e, _, s) = setup(3, 50);
    let t = e.next_task("ann", None).unwrap().unwrap();
    assert_eq!(t.categories.len(), 3);
    assert!(matches!(
        e.submit_vote(&t.task_id, "ann", "nonsense"),
        Err(Error::Validation(_))
    ));
    let r = e.submit_vote(&t.task_id, "ann", "hiv").unwrap();
    assert_eq!(r.status, TaskStatus::Open);
    assert!(matches!(
        e.submit_vote(&t.task_id, "ann", "hiv"),
        Err(Error::DuplicateVote { .. })
    ));
    e.submit_vote(&t.task_id, "ben", "family").unwrap();
    let r = e.submit_vote(&t.task_id, "cal", "other").unwrap();
    assert_eq!(r.status, TaskStatus::Discarded);
    assert!(matches!(
        e.submit_vote(&t.task_id, "dee", "hiv"),
        Err(Error::TaskClosed(_))
    ));
    assert_eq!(e.metrics(&s.id).unwrap().labeled_total, 0);
    assert!(matches!(e.next_task("", None), Err(Error::Validation(_))));
}

#[test]
fn duplicates_are_queued_once_per_schema() {
    let e = engine();
    let c = e.create_collection("pilot", None).unwrap();
    let a = e.create_schema(&c.id, spec(50)).unwrap();
    e.ingest(
        &c.endpoint_path,
        PushPayload::text("Where does HIV come frm?"),
    )
    .unwrap();
    e.ingest(
        &c.endpoint_path,
        PushPayload::text("where does hiv come frm"),
    )
    .unwrap();
    e.process_pending().unwrap();
    let mut other = spec(50);
    other.name = "second".into();
    let b = e.create_schema(&c.id, other).unwrap();
    assert_eq!(e.open_task_count(&a.id), 1);
    assert_eq!(e.open_task_count(&b.id), 1);
    assert_eq!(e.collection(&c.id).unwrap().counters.received, 2);
}

#[test]
fn served_tasks_follow_uncertainty_after_first_model() {
    let (e, _, s) = setup(90, 30);
    for _ in 0..30 {
        resolve_next(&e, &s.id);
    }
    assert!(e.model(&s.id).is_some());
    let st = e.state.read();
    let priorities: Vec<f64> = st.queue.open_tasks().map(|t| t.priority).collect();
    assert!(priorities.windows(2).all(|w| w[0] <= w[1]));
    assert!(priorities
        .iter()
        .all(|&p| p != crate::labeling::COLD_START_PRIORITY));
}

#[test]
fn export_and_stats_agree() {
    let (e, c, s) = setup(60, 20);
    for _ in 0..20 {
        resolve_next(&e, &s.id);
    }
    let stats = e.stats(&c.id, &s.id).unwrap();
    assert_eq!(stats.classified_by_schema, 60);
    let total: f64 = stats.proportions.iter().map(|p| p.proportion).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let mut exported = 0;
    for cat in ["hiv", "family", "other"] {
        let mut buf = Vec::new();
        let n = e
            .export_category(&c.id, &s.id, cat, ExportFormat::Csv, &mut buf)
            .unwrap();
        let body = String::from_utf8(buf).unwrap();
        assert_eq!(body.lines().count(), n + 1);
        exported += n;
    }
    assert_eq!(exported, 60);
    assert!(matches!(
        e.export_category(&c.id, &s.id, "nope", ExportFormat::Csv, Vec::new()),
        Err(Error::Validation(_))
    ));
}

#[test]
fn restart_restores_state_and_model() {
    let dir = tempfile::tempdir().unwrap();
    let config = EngineConfig {
        data_dir: Some(dir.path().to_path_buf()),
        token_seed: Some(3),
        ..Default::default()
    };
    let (cid, sid, endpoint, before) = {
        let e = Engine::open(config.clone(), Arc::new(ManualClock::ticking())).unwrap();
        let c = e.create_collection("pilot", None).unwrap();
        let s = e.create_schema(&c.id, spec(15)).unwrap();
        for i in 0..40 {
            e.ingest(&c.endpoint_path, PushPayload::text(text(i)))
                .unwrap();
        }
        e.process_pending().unwrap();
        for _ in 0..15 {
            resolve_next(&e, &s.id);
        }
        // Leave one task mid-vote with a live lease.
        let t = e.next_task("ann", Some(&s.id)).unwrap().unwrap();
        e.submit_vote(&t.task_id, "ann", "hiv").unwrap();
        e.next_task("zed", Some(&s.id)).unwrap().unwrap();
        // An ingested but never processed message.
        e.ingest(&c.endpoint_path, PushPayload::text(text(500)))
            .unwrap();
        let stats = e.stats(&c.id, &s.id).unwrap();
        let metrics = e.metrics(&s.id).unwrap();
        (c.id, s.id, c.endpoint_path, (stats, metrics, t.task_id))
    };
    let e = Engine::open(config, Arc::new(ManualClock::ticking())).unwrap();
    let (stats, metrics, half_voted) = before;
    let after = e.stats(&cid, &sid).unwrap();
    assert_eq!(after.counters.received, stats.counters.received);
    assert_eq!(after.counters.labeled, stats.counters.labeled);
    assert_eq!(after.counters.classified, stats.counters.classified + 1);
    let m = e.metrics(&sid).unwrap();
    assert_eq!(m.version, metrics.version);
    assert_eq!(m.macro_auc, metrics.macro_auc);
    assert_eq!(e.task(&half_voted).unwrap().votes.len(), 1);
    assert!(e.task(&half_voted).unwrap().lease.is_none());
    assert_eq!(e.collection(&cid).unwrap().endpoint_path, endpoint);
    // Processing continues with fresh ids.
    let ack = e.ingest(&endpoint, PushPayload::text(text(501))).unwrap();
    assert_eq!(ack.message_id, "msg-00000042");
}
