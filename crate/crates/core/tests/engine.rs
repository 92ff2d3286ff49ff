use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use gdm_core::bus::Observer;
use gdm_core::domain::{AgreementKind, InvolvedUser};
use gdm_core::engine::{read_collaborations, Engine, EngineConfig};
use gdm_core::events::{Event, EventBody};
use gdm_core::lifecycle::LifecycleState;
use gdm_core::log::{read_log, snapshot_path, LogPayload};
use gdm_core::policy::PolicyOverrides;
use gdm_core::request::{ProposalDraft, Request};
use gdm_core::time::SteppedClock;
use gdm_core::{CollaborationId, Fraction, ProposalId, Timestamp, UserId};

fn clock() -> Arc<SteppedClock> {
    Arc::new(SteppedClock::new(Timestamp::from_millis(1_700_000_000_000), 1_000))
}

fn config(snapshot_every: Option<u64>) -> EngineConfig {
    EngineConfig {
        snapshot_every,
        durable: false,
        ..EngineConfig::default()
    }
}

fn people() -> Vec<InvolvedUser> {
    vec![
        InvolvedUser::new("mod", Fraction::ONE).moderator(),
        InvolvedUser::new("a", Fraction::ONE),
        InvolvedUser::new("b", Fraction::ONE),
        InvolvedUser::new("c", Fraction::ONE),
    ]
}

fn exec(engine: &Engine, id: &CollaborationId, actor: &str, req: Request) -> gdm_core::engine::Outcome {
    engine
        .execute(Some(id), &UserId::from(actor), &req)
        .unwrap_or_else(|e| panic!("{actor} {req:?}: {e}"))
}

/// Creates a collaboration and brings it to an open evaluation round with
/// one proposal. Returns both identifiers.
fn open_round(engine: &Engine, policy: &str) -> (CollaborationId, ProposalId) {
    let created = engine
        .execute(
            None,
            &"mod".into(),
            &Request::CreateCollaboration {
                intent: "pick a mapping".into(),
                deadline: None,
                involved_users: people(),
            },
        )
        .unwrap();
    let id = CollaborationId::from(created.created.unwrap());
    exec(engine, &id, "mod", Request::DefineSituation { intent: "pick a mapping".into(), deadline: None });
    exec(
        engine,
        &id,
        "mod",
        Request::ChooseMethod {
            policy: policy.into(),
            overrides: PolicyOverrides::default(),
            threshold_override: None,
        },
    );
    exec(engine, &id, "mod", Request::NotifyActors {});
    let p = exec(
        engine,
        &id,
        "a",
        Request::AddProposal(ProposalDraft {
            body: Some("Similarity[BP:DataObject <-> SD:Entity]".into()),
            ..ProposalDraft::default()
        }),
    );
    let p = ProposalId::from(p.created.unwrap());
    exec(engine, &id, "mod", Request::OpenEvaluation {});
    (id, p)
}

fn approve(engine: &Engine, id: &CollaborationId, p: &ProposalId, actors: &[&str]) {
    for actor in actors {
        exec(
            engine,
            id,
            actor,
            Request::SubmitDecision {
                proposal_id: p.clone(),
                kind: Some(AgreementKind::Approval),
                rating: None,
                comment: None,
                alternative_id: None,
            },
        );
    }
}

fn assert_contiguous(events: &[Event]) {
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e.seq, i as u64 + 1, "gap before {e:?}");
    }
}

#[test]
fn majority_flow_closes_and_fills_mailboxes() {
    let engine = Engine::in_memory(clock(), config(None));
    let (id, p) = open_round(&engine, "MajorityDeciding");
    approve(&engine, &id, &p, &["a", "b", "c"]);
    let closed = exec(&engine, &id, "mod", Request::CloseRound {});
    assert_eq!(closed.collaboration.state, LifecycleState::Closed);
    assert!(engine.summary(&id).unwrap().converged());

    let events = engine.events_since(&id, 1).unwrap();
    assert_contiguous(&events);
    assert!(events.iter().any(|e| matches!(e.body, EventBody::CollaborationClosed { .. })));

    let inbox = engine.bus().mailbox("b");
    assert!(!inbox.is_empty());
    assert!(inbox.windows(2).all(|w| w[0].seq < w[1].seq), "mailbox out of order");
    assert!(inbox.iter().any(|e| matches!(e.body, EventBody::DecisionRecorded { .. })));
}

#[test]
fn closed_collaboration_rejects_commands() {
    let engine = Engine::in_memory(clock(), config(None));
    let (id, p) = open_round(&engine, "MajorityDeciding");
    approve(&engine, &id, &p, &["a", "b", "c"]);
    exec(&engine, &id, "mod", Request::CloseRound {});
    let before = engine.collaboration(&id).unwrap();
    let err = engine
        .execute(Some(&id), &"mod".into(), &Request::OpenEvaluation {})
        .unwrap_err();
    assert_eq!(err.code(), "WrongState");
    assert_eq!(engine.collaboration(&id).unwrap(), before);
}

#[test]
fn reopen_resumes_from_snapshot_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gdm.log");
    let (id, p) = {
        let engine = Engine::open(&path, clock(), config(Some(3))).unwrap();
        open_round(&engine, "MajorityDeciding")
    };
    assert!(snapshot_path(&path).exists(), "no snapshot written");

    let engine = Engine::open(&path, clock(), config(Some(3))).unwrap();
    assert!(engine.recovered_corruption().is_none());
    assert_eq!(engine.collaboration(&id).unwrap().state, LifecycleState::EvaluationOpen);
    approve(&engine, &id, &p, &["a", "b", "c"]);
    exec(&engine, &id, "mod", Request::CloseRound {});
    let live = engine.collaboration(&id).unwrap();
    let live_events = engine.events_since(&id, 1).unwrap();
    assert_contiguous(&live_events);
    drop(engine);

    // A rebuild without the snapshot lands in the same place.
    std::fs::remove_file(snapshot_path(&path)).unwrap();
    let engine = Engine::open(&path, clock(), config(None)).unwrap();
    assert_eq!(engine.collaboration(&id).unwrap(), live);
    assert_eq!(engine.events_since(&id, 1).unwrap(), live_events);
}

#[test]
fn torn_tail_is_cut_on_open() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gdm.log");
    let (id, before) = {
        let engine = Engine::open(&path, clock(), config(None)).unwrap();
        let (id, _) = open_round(&engine, "MajorityDeciding");
        let c = engine.collaboration(&id).unwrap();
        (id, c)
    };
    let good_len = std::fs::metadata(&path).unwrap().len();
    let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
    f.write_all(&[40, 0, 0, 0, 1, 2, 3, 4, b'{']).unwrap();
    drop(f);

    let engine = Engine::open(&path, clock(), config(None)).unwrap();
    assert!(engine.recovered_corruption().is_some());
    assert_eq!(engine.collaboration(&id).unwrap(), before);
    assert_eq!(std::fs::metadata(&path).unwrap().len(), good_len);
}

#[test]
fn read_only_replay_leaves_the_file_alone() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gdm.log");
    let id = {
        let engine = Engine::open(&path, clock(), config(None)).unwrap();
        open_round(&engine, "ConsentingTogether").0
    };
    let bytes = std::fs::read(&path).unwrap();
    let (collabs, corruption) = read_collaborations(&path).unwrap();
    assert!(corruption.is_none());
    assert_eq!(collabs[&id].state, LifecycleState::EvaluationOpen);
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}

#[test]
fn collaborations_progress_concurrently() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gdm.log");
    let engine = Arc::new(Engine::open(&path, clock(), config(None)).unwrap());
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let engine = engine.clone();
            std::thread::spawn(move || {
                let (id, p) = open_round(&engine, "MajorityDeciding");
                approve(&engine, &id, &p, &["a", "b", "c"]);
                exec(&engine, &id, "mod", Request::CloseRound {});
                id
            })
        })
        .collect();
    let ids: Vec<CollaborationId> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    for id in &ids {
        assert_eq!(engine.collaboration(id).unwrap().state, LifecycleState::Closed);
        assert_contiguous(&engine.events_since(id, 1).unwrap());
    }

    // Interleaved records still replay per collaboration.
    let (replayed, corruption) = read_collaborations(&path).unwrap();
    assert!(corruption.is_none());
    for id in &ids {
        assert_eq!(replayed[id], engine.collaboration(id).unwrap());
    }
    let scan = read_log(&path).unwrap();
    for id in &ids {
        let seqs: Vec<u64> = scan
            .records
            .iter()
            .filter(|r| r.collaboration_id == *id)
            .map(|r| r.seq)
            .collect();
        assert_eq!(seqs, (1..=seqs.len() as u64).collect::<Vec<_>>());
    }
}

struct Broken;

impl Observer for Broken {
    fn observer_id(&self) -> &str {
        "b"
    }

    fn update(&self, _: &Event) -> Result<(), String> {
        Err("inbox full".into())
    }
}

fn audits(path: &Path) -> Vec<(String, String)> {
    read_log(path)
        .unwrap()
        .records
        .into_iter()
        .filter_map(|r| match r.payload {
            LogPayload::Audit { audit } => Some((audit.observer_id, audit.reason)),
            _ => None,
        })
        .collect()
}

#[test]
fn failing_observer_is_dropped_and_audited() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gdm.log");
    let id = {
        let engine = Engine::open(&path, clock(), config(None)).unwrap();
        let (id, p) = open_round(&engine, "MajorityDeciding");
        engine.bus().attach(Arc::new(Broken));
        approve(&engine, &id, &p, &["a"]);
        id
    };
    assert_eq!(audits(&path), vec![("b".to_string(), "inbox full".to_string())]);

    // Audit records take part in the record sequence and survive replay.
    let engine = Engine::open(&path, clock(), config(None)).unwrap();
    assert!(engine.recovered_corruption().is_none());
    assert_eq!(engine.collaboration(&id).unwrap().state, LifecycleState::EvaluationOpen);
}
