//! In-process observer bus.
//!
//! Observers subscribe to a collaboration or to a single proposal. Events of
//! one collaboration reach observers strictly in `seq` order, whichever thread
//! published them, and callbacks never run while the bus lock is held.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::domain::Collaboration;
use crate::error::{GdmError, Result};
use crate::events::Event;
use crate::ids::{CollaborationId, UserId};
use crate::time::Timestamp;

/// Attempts made per delivery before an observer is dropped.
pub const MAX_DELIVERY_ATTEMPTS: usize = 3;

pub trait Observer: Send + Sync {
    fn observer_id(&self) -> &str;
    fn update(&self, event: &Event) -> std::result::Result<(), String>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AuditRecord {
    pub observer_id: String,
    pub collaboration_id: CollaborationId,
    pub seq: u64,
    pub reason: String,
}

pub trait AuditSink: Send + Sync {
    fn record(&self, audit: AuditRecord);
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Subscription {
    pub observer_id: String,
    pub subject_id: String,
    pub created_at: Timestamp,
}

/// Default observer of every user: keeps what it receives.
#[derive(Debug, Default)]
pub struct Mailbox {
    id: String,
    events: Mutex<Vec<Event>>,
}

impl Mailbox {
    pub fn new(id: impl Into<String>) -> Self {
        Mailbox {
            id: id.into(),
            events: Mutex::new(Vec::new()),
        }
    }

    pub fn events(&self) -> Vec<Event> {
        self.events.lock().clone()
    }
}

impl Observer for Mailbox {
    fn observer_id(&self) -> &str {
        &self.id
    }

    fn update(&self, event: &Event) -> std::result::Result<(), String> {
        let mut events = self.events.lock();
        // At-least-once upstream: drop repeats of the same (collaboration, seq).
        if !events
            .iter()
            .any(|e| e.seq == event.seq && e.collaboration_id == event.collaboration_id)
        {
            events.push(event.clone());
        }
        Ok(())
    }
}

#[derive(Default)]
struct Stream {
    next_seq: u64,
    pending: BTreeMap<u64, Event>,
    draining: bool,
}

#[derive(Default)]
struct State {
    observers: HashMap<String, Arc<dyn Observer>>,
    mailboxes: HashMap<String, Arc<Mailbox>>,
    /// subject id -> owning collaboration
    subjects: HashMap<String, CollaborationId>,
    /// subject id -> observer id -> subscription
    subscriptions: HashMap<String, BTreeMap<String, Subscription>>,
    streams: HashMap<CollaborationId, Stream>,
}

impl State {
    fn ensure_mailbox(&mut self, id: &str) {
        if !self.observers.contains_key(id) {
            let mailbox = Arc::new(Mailbox::new(id));
            self.mailboxes.insert(id.to_string(), mailbox.clone());
            self.observers.insert(id.to_string(), mailbox);
        }
    }

    fn subscribe(&mut self, observer_id: &str, subject_id: &str, at: Timestamp) -> Subscription {
        self.subscriptions
            .entry(subject_id.to_string())
            .or_default()
            .entry(observer_id.to_string())
            .or_insert_with(|| Subscription {
                observer_id: observer_id.to_string(),
                subject_id: subject_id.to_string(),
                created_at: at,
            })
            .clone()
    }

    fn recipients(&self, event: &Event) -> Vec<Arc<dyn Observer>> {
        let mut ids: BTreeSet<&str> = BTreeSet::new();
        let mut subjects = vec![event.collaboration_id.as_str()];
        if let Some(p) = event.body.proposal_id() {
            subjects.push(p.as_str());
        }
        for s in subjects {
            if let Some(subs) = self.subscriptions.get(s) {
                ids.extend(subs.keys().map(String::as_str));
            }
        }
        if let Some(user) = event.body.addressee() {
            ids.insert(user.as_str());
        }
        ids.into_iter()
            .filter_map(|id| self.observers.get(id).cloned())
            .collect()
    }

    fn drop_observer(&mut self, id: &str) {
        self.observers.remove(id);
        self.mailboxes.remove(id);
        for subs in self.subscriptions.values_mut() {
            subs.remove(id);
        }
    }
}

#[derive(Default)]
pub struct NotificationBus {
    state: Mutex<State>,
    audit: Option<Arc<dyn AuditSink>>,
}

impl NotificationBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_audit(audit: Arc<dyn AuditSink>) -> Self {
        NotificationBus {
            state: Mutex::default(),
            audit: Some(audit),
        }
    }

    /// Makes a collaboration a valid subject. Idempotent.
    pub fn add_collaboration(&self, id: &CollaborationId) {
        let mut s = self.state.lock();
        s.subjects.insert(id.to_string(), id.clone());
        s.streams.entry(id.clone()).or_insert_with(|| Stream {
            next_seq: 1,
            ..Stream::default()
        });
    }

    /// Continues delivery at `next_seq`, skipping events already delivered
    /// before a restart.
    pub fn resume(&self, id: &CollaborationId, next_seq: u64) {
        let mut s = self.state.lock();
        s.subjects.insert(id.to_string(), id.clone());
        let stream = s.streams.entry(id.clone()).or_default();
        stream.next_seq = next_seq;
        stream.pending.retain(|seq, _| *seq >= next_seq);
    }

    /// Installs or replaces an observer.
    pub fn attach(&self, observer: Arc<dyn Observer>) {
        let mut s = self.state.lock();
        let id = observer.observer_id().to_string();
        s.mailboxes.remove(&id);
        s.observers.insert(id, observer);
    }

    /// Gives `id` a mailbox unless some observer is already attached under it.
    pub fn ensure_observer(&self, id: &str) {
        self.state.lock().ensure_mailbox(id);
    }

    pub fn detach(&self, observer_id: &str) {
        self.state.lock().drop_observer(observer_id);
    }

    pub fn register(&self, observer_id: &str, subject_id: &str, at: Timestamp) -> Result<Subscription> {
        let mut s = self.state.lock();
        if !s.subjects.contains_key(subject_id) {
            return Err(GdmError::UnknownSubject(subject_id.to_string()));
        }
        s.ensure_mailbox(observer_id);
        Ok(s.subscribe(observer_id, subject_id, at))
    }

    pub fn unregister(&self, observer_id: &str, subject_id: &str) -> Result<()> {
        let mut s = self.state.lock();
        if !s.subjects.contains_key(subject_id) {
            return Err(GdmError::UnknownSubject(subject_id.to_string()));
        }
        if let Some(subs) = s.subscriptions.get_mut(subject_id) {
            subs.remove(observer_id);
        }
        Ok(())
    }

    pub fn subscriptions(&self, subject_id: &str) -> Vec<Subscription> {
        self.state
            .lock()
            .subscriptions
            .get(subject_id)
            .map(|m| m.values().cloned().collect())
            .unwrap_or_default()
    }

    /// Subscribes every eligible decision maker, and every advisor, to every
    /// proposal they may evaluate. Safe to call repeatedly.
    pub fn auto_register_eligible(&self, collab: &Collaboration, at: Timestamp) -> Vec<Subscription> {
        use crate::lifecycle::LifecycleState::*;
        if matches!(collab.state, Draft | Configured | MethodChosen) {
            return Vec::new();
        }
        let mut users: BTreeSet<UserId> = collab.eligible_dms.clone();
        users.extend(collab.advisors());
        let mut s = self.state.lock();
        let mut out = Vec::new();
        for p in collab.proposals.evaluable() {
            s.subjects
                .insert(p.proposal_id.to_string(), collab.collaboration_id.clone());
            for u in &users {
                s.ensure_mailbox(u.as_str());
                out.push(s.subscribe(u.as_str(), p.proposal_id.as_str(), at));
            }
        }
        out
    }

    pub fn mailbox(&self, user: &str) -> Vec<Event> {
        self.state
            .lock()
            .mailboxes
            .get(user)
            .map(|m| m.events())
            .unwrap_or_default()
    }

    /// Queues events and delivers every contiguous one. Events below the
    /// stream's next seq and duplicates are ignored.
    pub fn publish(&self, events: Vec<Event>) {
        let mut touched = BTreeSet::new();
        {
            let mut s = self.state.lock();
            for e in events {
                if let Some(p) = e.body.proposal_id() {
                    s.subjects
                        .entry(p.to_string())
                        .or_insert_with(|| e.collaboration_id.clone());
                }
                let stream = s.streams.entry(e.collaboration_id.clone()).or_insert_with(|| Stream {
                    next_seq: 1,
                    ..Stream::default()
                });
                if e.seq >= stream.next_seq {
                    touched.insert(e.collaboration_id.clone());
                    stream.pending.entry(e.seq).or_insert(e);
                }
            }
        }
        for id in touched {
            self.drain(&id);
        }
    }

    fn drain(&self, id: &CollaborationId) {
        {
            let mut s = self.state.lock();
            let stream = s.streams.get_mut(id).expect("stream exists");
            if stream.draining {
                return;
            }
            stream.draining = true;
        }
        loop {
            let (event, recipients) = {
                let mut s = self.state.lock();
                let stream = s.streams.get_mut(id).expect("stream exists");
                let next = stream.next_seq;
                match stream.pending.remove(&next) {
                    Some(e) => {
                        stream.next_seq += 1;
                        let r = s.recipients(&e);
                        (e, r)
                    }
                    None => {
                        stream.draining = false;
                        return;
                    }
                }
            };
            for observer in recipients {
                self.deliver(observer.as_ref(), &event);
            }
        }
    }

    fn deliver(&self, observer: &dyn Observer, event: &Event) {
        let mut last_error = String::new();
        for _ in 0..MAX_DELIVERY_ATTEMPTS {
            match observer.update(event) {
                Ok(()) => return,
                Err(e) => last_error = e,
            }
        }
        self.state.lock().drop_observer(observer.observer_id());
        if let Some(audit) = &self.audit {
            audit.record(AuditRecord {
                observer_id: observer.observer_id().to_string(),
                collaboration_id: event.collaboration_id.clone(),
                seq: event.seq,
                reason: last_error,
            });
        }
    }
}
