//! The embedded engine: resolves requests, applies them under a
//! per-collaboration lock, writes the log ahead of any visible change, and
//! publishes the resulting events.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::aggregation::ThresholdValues;
use crate::bus::{AuditRecord, AuditSink, NotificationBus};
use crate::domain::Collaboration;
use crate::error::{GdmError, Result};
use crate::events::{Event, EventBody};
use crate::ids::{CollaborationId, IdGenerator, UserId};
use crate::lifecycle::{apply, create, CommandEnvelope};
use crate::log::{read_log_from, read_snapshot, snapshot_path, write_snapshot, LogPayload, LogRecord, LogWriter};
use crate::notation::{RelationshipDef, RelationshipRegistry};
use crate::policy::{PolicyRepository, DEFAULT_MAX_ROUNDS};
use crate::request::{resolve, Request, ResolveContext};
use crate::summary::Summary;
use crate::time::{Clock, SystemClock, Timestamp};

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub thresholds: ThresholdValues,
    /// Round budget given to the built-in iterative policies.
    pub default_max_rounds: u32,
    /// Write a snapshot after this many commands; `None` disables snapshots.
    pub snapshot_every: Option<u64>,
    /// `fsync` after every append.
    pub durable: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            thresholds: ThresholdValues::default(),
            default_max_rounds: DEFAULT_MAX_ROUNDS,
            snapshot_every: Some(256),
            durable: true,
        }
    }
}

/// Result of one accepted request.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub collaboration: Collaboration,
    pub events: Vec<Event>,
    /// Identifier of the collaboration or proposal the request created.
    pub created: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Slot {
    collab: Collaboration,
    events: Vec<Event>,
    next_record_seq: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Snapshot {
    log_len: u64,
    slots: Vec<Slot>,
}

struct Store {
    slots: RwLock<BTreeMap<CollaborationId, Arc<Mutex<Slot>>>>,
    log: Mutex<LogWriter>,
}

impl Store {
    fn slot(&self, id: &CollaborationId) -> Result<Arc<Mutex<Slot>>> {
        self.slots
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| GdmError::UnknownCollaboration(id.clone()))
    }

    fn append(&self, slot: &mut Slot, payloads: Vec<LogPayload>) -> Result<()> {
        let first = slot.next_record_seq;
        let records: Vec<LogRecord> = payloads
            .into_iter()
            .enumerate()
            .map(|(i, payload)| LogRecord {
                seq: first + i as u64,
                collaboration_id: slot.collab.collaboration_id.clone(),
                payload,
            })
            .collect();
        self.log.lock().append(&records)?;
        slot.next_record_seq += records.len() as u64;
        Ok(())
    }
}

struct LogAudit(Weak<Store>);

impl AuditSink for LogAudit {
    fn record(&self, audit: AuditRecord) {
        let Some(store) = self.0.upgrade() else { return };
        let Ok(slot) = store.slot(&audit.collaboration_id) else { return };
        let mut slot = slot.lock();
        // Delivery is best effort; a failed audit write must not poison the bus.
        let _ = store.append(&mut slot, vec![LogPayload::Audit { audit }]);
    }
}

pub struct Engine {
    clock: Arc<dyn Clock>,
    ids: IdGenerator,
    policies: PolicyRepository,
    registry: RwLock<RelationshipRegistry>,
    config: EngineConfig,
    bus: Arc<NotificationBus>,
    store: Arc<Store>,
    commands_since_snapshot: AtomicU64,
    recovered: Option<GdmError>,
}

impl Engine {
    /// An engine whose log lives in memory.
    pub fn in_memory(clock: Arc<dyn Clock>, config: EngineConfig) -> Self {
        Self::build(clock, config, LogWriter::in_memory())
    }

    pub fn with_system_clock(config: EngineConfig) -> Self {
        Self::in_memory(Arc::new(SystemClock), config)
    }

    fn build(clock: Arc<dyn Clock>, config: EngineConfig, log: LogWriter) -> Self {
        let store = Arc::new(Store {
            slots: RwLock::new(BTreeMap::new()),
            log: Mutex::new(log),
        });
        let bus = Arc::new(NotificationBus::with_audit(Arc::new(LogAudit(Arc::downgrade(&store)))));
        let policies = PolicyRepository::empty();
        for mut p in crate::policy::builtin_policies() {
            if p.is_iterative() {
                p.max_rounds = config.default_max_rounds;
            }
            policies.register(p).expect("builtin policies are valid");
        }
        Engine {
            clock,
            ids: IdGenerator::default(),
            policies,
            registry: RwLock::new(RelationshipRegistry::default()),
            config,
            bus,
            store,
            commands_since_snapshot: AtomicU64::new(0),
            recovered: None,
        }
    }

    /// Opens or creates the log at `path` and rebuilds every collaboration
    /// from it. A torn or corrupt tail is cut off and reported through
    /// [`Engine::recovered_corruption`]; events lost with it are regenerated.
    pub fn open(path: &Path, clock: Arc<dyn Clock>, config: EngineConfig) -> Result<Self> {
        let snap_path = snapshot_path(path);
        let file_len = std::fs::metadata(path).map(|m| m.len()).unwrap_or(0);
        let snapshot = read_snapshot::<Snapshot>(&snap_path).filter(|s| s.log_len <= file_len);
        let (start, slots) = match snapshot {
            Some(s) => (s.log_len, s.slots),
            None => (0, Vec::new()),
        };
        let mut scan = read_log_from(path, start)?;
        let (slots, scan) = match replay(slots, &scan.records) {
            Ok(r) => (r, scan),
            Err(_) if start > 0 => {
                // The snapshot does not line up with the log; rebuild from scratch.
                scan = read_log_from(path, 0)?;
                (replay(Vec::new(), &scan.records)?, scan)
            }
            Err(e) => return Err(e),
        };
        let mut writer = LogWriter::open(path, scan.valid_len)?;
        writer.set_durable(config.durable);
        let mut engine = Self::build(clock, config, writer);
        engine.recovered = scan.corruption;
        for (mut slot, missing) in slots {
            if !missing.is_empty() {
                let payloads = missing.into_iter().map(|event| LogPayload::Event { event }).collect();
                engine.store.append(&mut slot, payloads)?;
            }
            engine.install(slot);
        }
        Ok(engine)
    }

    fn install(&self, slot: Slot) {
        let c = &slot.collab;
        self.ids.observe(c.collaboration_id.as_str());
        for p in c.proposals.ids() {
            self.ids.observe(p.as_str());
        }
        self.bus
            .resume(&c.collaboration_id, slot.events.len() as u64 + 1);
        for u in &c.involved_users {
            self.bus.ensure_observer(u.user_id.as_str());
        }
        self.bus.auto_register_eligible(c, c.created_at);
        self.store
            .slots
            .write()
            .insert(c.collaboration_id.clone(), Arc::new(Mutex::new(slot)));
    }

    pub fn recovered_corruption(&self) -> Option<&GdmError> {
        self.recovered.as_ref()
    }

    pub fn bus(&self) -> &Arc<NotificationBus> {
        &self.bus
    }

    pub fn policies(&self) -> &PolicyRepository {
        &self.policies
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn register_relationship(&self, def: RelationshipDef) -> Result<()> {
        self.registry.write().register(def).map_err(GdmError::from)
    }

    pub fn registry(&self) -> RelationshipRegistry {
        self.registry.read().clone()
    }

    pub fn collaboration_ids(&self) -> Vec<CollaborationId> {
        self.store.slots.read().keys().cloned().collect()
    }

    pub fn collaboration(&self, id: &CollaborationId) -> Result<Collaboration> {
        Ok(self.store.slot(id)?.lock().collab.clone())
    }

    /// Events with `seq >= from`, in order.
    pub fn events_since(&self, id: &CollaborationId, from: u64) -> Result<Vec<Event>> {
        let slot = self.store.slot(id)?;
        let slot = slot.lock();
        Ok(slot.events.iter().filter(|e| e.seq >= from).cloned().collect())
    }

    pub fn summary(&self, id: &CollaborationId) -> Result<Summary> {
        Ok(Summary::of(&self.collaboration(id)?))
    }

    /// Finds the collaboration that owns a proposal.
    pub fn collaboration_of_proposal(&self, proposal: &str) -> Result<CollaborationId> {
        for (id, slot) in self.store.slots.read().iter() {
            if slot.lock().collab.proposals.contains(&proposal.into()) {
                return Ok(id.clone());
            }
        }
        Err(GdmError::UnknownProposal(proposal.into()))
    }

    /// Executes one request. `target` is ignored for `createCollaboration`
    /// and required otherwise.
    pub fn execute(&self, target: Option<&CollaborationId>, actor: &UserId, req: &Request) -> Result<Outcome> {
        let at = self.clock.now();
        let registry = self.registry.read().clone();
        let ctx = ResolveContext {
            actor,
            at,
            ids: &self.ids,
            policies: &self.policies,
            registry: &registry,
            thresholds: self.config.thresholds,
        };
        let outcome = if req.is_create() {
            let (command, _) = resolve(req, None, &ctx)?;
            let id = CollaborationId::new(self.ids.next(at));
            let env = CommandEnvelope {
                collaboration_id: id.clone(),
                actor: actor.clone(),
                at,
                command,
            };
            let (collab, bodies) = create(&env)?;
            let mut slot = Slot {
                collab,
                events: Vec::new(),
                next_record_seq: 1,
            };
            let mut slots = self.store.slots.write();
            let events = self.commit(&mut slot, env, bodies)?;
            let collab = slot.collab.clone();
            slots.insert(id.clone(), Arc::new(Mutex::new(slot)));
            drop(slots);
            self.bus.add_collaboration(&id);
            Outcome {
                collaboration: collab,
                events,
                created: Some(id.to_string()),
            }
        } else {
            let id = target.ok_or_else(|| GdmError::InvalidCommand("a collaboration id is required".into()))?;
            let slot = self.store.slot(id)?;
            let mut slot = slot.lock();
            let (command, created) = resolve(req, Some(&slot.collab), &ctx)?;
            let env = CommandEnvelope {
                collaboration_id: id.clone(),
                actor: actor.clone(),
                at,
                command,
            };
            let (next, bodies) = apply(&slot.collab, &env)?;
            let previous = std::mem::replace(&mut slot.collab, next);
            match self.commit(&mut slot, env, bodies) {
                Ok(events) => Outcome {
                    collaboration: slot.collab.clone(),
                    events,
                    created,
                },
                Err(e) => {
                    slot.collab = previous;
                    return Err(e);
                }
            }
        };
        for u in &outcome.collaboration.involved_users {
            self.bus.ensure_observer(u.user_id.as_str());
        }
        self.bus.auto_register_eligible(&outcome.collaboration, at);
        self.bus.publish(outcome.events.clone());
        self.maybe_snapshot()?;
        Ok(outcome)
    }

    /// Appends the command and its events, then records the events in the slot.
    fn commit(&self, slot: &mut Slot, env: CommandEnvelope, bodies: Vec<EventBody>) -> Result<Vec<Event>> {
        let events = number_events(slot, &env, bodies);
        let mut payloads = vec![LogPayload::Command { envelope: env }];
        payloads.extend(events.iter().cloned().map(|event| LogPayload::Event { event }));
        self.store.append(slot, payloads)?;
        slot.events.extend(events.iter().cloned());
        Ok(events)
    }

    fn maybe_snapshot(&self) -> Result<()> {
        let Some(every) = self.config.snapshot_every else { return Ok(()) };
        let n = self.commands_since_snapshot.fetch_add(1, Ordering::SeqCst) + 1;
        if n < every {
            return Ok(());
        }
        self.commands_since_snapshot.store(0, Ordering::SeqCst);
        self.snapshot()
    }

    /// Writes a consistent snapshot next to a file-backed log.
    pub fn snapshot(&self) -> Result<()> {
        let slots = self.store.slots.read();
        let guards: Vec<_> = slots.values().map(|s| s.lock()).collect();
        let log = self.store.log.lock();
        let Some(path) = log.path() else { return Ok(()) };
        let snap = Snapshot {
            log_len: log.len(),
            slots: guards.iter().map(|g| (**g).clone()).collect(),
        };
        write_snapshot(&snapshot_path(path), &snap)
    }

    /// Raw bytes of an in-memory log, for tests and tooling.
    pub fn log_bytes(&self) -> Option<Vec<u8>> {
        self.store.log.lock().memory_bytes().map(<[u8]>::to_vec)
    }
}

fn number_events(slot: &Slot, env: &CommandEnvelope, bodies: Vec<EventBody>) -> Vec<Event> {
    let first = slot.events.len() as u64 + 1;
    bodies
        .into_iter()
        .enumerate()
        .map(|(i, body)| Event {
            seq: first + i as u64,
            collaboration_id: env.collaboration_id.clone(),
            at: env.at,
            body,
        })
        .collect()
}

/// Replays log records on top of `slots`. Returns each slot with the events
/// its last command produced but the log no longer holds.
fn replay(slots: Vec<Slot>, records: &[LogRecord]) -> Result<Vec<(Slot, Vec<Event>)>> {
    let diverged = |r: &LogRecord, why: &str| {
        GdmError::Storage(format!(
            "replay diverged at record {} of collaboration {}: {why}",
            r.seq, r.collaboration_id
        ))
    };
    let mut map: BTreeMap<CollaborationId, (Slot, VecDeque<Event>)> = slots
        .into_iter()
        .map(|s| (s.collab.collaboration_id.clone(), (s, VecDeque::new())))
        .collect();
    for r in records {
        match &r.payload {
            LogPayload::Command { envelope } => {
                let entry = map.get_mut(&r.collaboration_id);
                let (next, bodies, mut slot) = match entry {
                    Some((slot, pending)) => {
                        if !pending.is_empty() {
                            return Err(diverged(r, "events of the previous command are missing"));
                        }
                        let (next, bodies) = apply(&slot.collab, envelope).map_err(|e| diverged(r, &e.to_string()))?;
                        (next, bodies, slot.clone())
                    }
                    None => {
                        let (collab, bodies) = create(envelope).map_err(|e| diverged(r, &e.to_string()))?;
                        let slot = Slot {
                            collab: collab.clone(),
                            events: Vec::new(),
                            next_record_seq: 1,
                        };
                        (collab, bodies, slot)
                    }
                };
                if r.seq != slot.next_record_seq {
                    return Err(diverged(r, "record sequence gap"));
                }
                slot.collab = next;
                let events = number_events(&slot, envelope, bodies);
                slot.events.extend(events.iter().cloned());
                slot.next_record_seq += 1;
                map.insert(r.collaboration_id.clone(), (slot, events.into()));
            }
            LogPayload::Event { event } => {
                let (slot, pending) = map
                    .get_mut(&r.collaboration_id)
                    .ok_or_else(|| diverged(r, "event before creation"))?;
                if r.seq != slot.next_record_seq {
                    return Err(diverged(r, "record sequence gap"));
                }
                if pending.pop_front().as_ref() != Some(event) {
                    return Err(diverged(r, "logged event differs from the regenerated one"));
                }
                slot.next_record_seq += 1;
            }
            LogPayload::Audit { .. } => {
                let (slot, _) = map
                    .get_mut(&r.collaboration_id)
                    .ok_or_else(|| diverged(r, "audit before creation"))?;
                if r.seq != slot.next_record_seq {
                    return Err(diverged(r, "record sequence gap"));
                }
                slot.next_record_seq += 1;
            }
        }
    }
    Ok(map
        .into_values()
        .map(|(slot, pending)| (slot, pending.into_iter().collect()))
        .collect())
}

/// Rebuilds every collaboration recorded in the log at `path` without
/// modifying the file. Also returns the corruption that ended the scan, if any.
pub fn read_collaborations(path: &Path) -> Result<(BTreeMap<CollaborationId, Collaboration>, Option<GdmError>)> {
    let scan = crate::log::read_log(path)?;
    let slots = replay(Vec::new(), &scan.records)?;
    let collabs = slots
        .into_iter()
        .map(|(slot, _)| (slot.collab.collaboration_id.clone(), slot.collab))
        .collect();
    Ok((collabs, scan.corruption))
}
