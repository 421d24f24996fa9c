//! Live bidding sessions for human participants.
//!
//! Each session is persisted as an append-only JSONL event file in the data
//! directory. An event is written and flushed before it is applied in
//! memory, and opening a service replays every file, so a restart loses no
//! acknowledged trial.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, SecondsFormat, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auction::PayoffMode;
use crate::dashboard::{default_payload, DashboardPayload};
use crate::experiment::{
    session_for, Condition, ExperimentKind, Feedback, SessionConfig, StimulusContext, TrialRecord, TrialSlot,
    TRIALS_PER_BLOCK, TRIALS_PER_SESSION,
};
use crate::inference::best_response::RangeSide;
use crate::{Error, Result, SCHEMA_VERSION};

/// Environment variable overriding the data directory.
pub const DATA_DIR_ENV: &str = "DASHLAB_DATA_DIR";

/// Longest accepted rationale, in characters.
pub const MAX_RATIONALE_CHARS: usize = 10_000;

/// `$DASHLAB_DATA_DIR` if set and non-empty, else `default`.
pub fn data_dir_from_env(default: impl Into<PathBuf>) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => default.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Tutorial,
    Bidding,
    Rationale,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Rationale {
    pub block_index: u32,
    pub text: String,
    pub empty: bool,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Event {
    #[serde(rename_all = "camelCase")]
    Created {
        schema_version: u32,
        session_id: String,
        assignment_seed: u64,
        assignment_index: u64,
        config: SessionConfig,
        timestamp: String,
    },
    Started {
        timestamp: String,
    },
    Bid {
        record: Box<TrialRecord>,
    },
    Rationale {
        rationale: Rationale,
    },
}

#[derive(Debug, Clone)]
pub struct LiveSession {
    pub id: String,
    pub config: SessionConfig,
    pub phase: Phase,
    /// 0-based index of the next trial.
    pub cursor: usize,
    pub records: Vec<TrialRecord>,
    pub rationales: Vec<Rationale>,
    pub created_at: String,
    assignment_seed: u64,
    assignment_index: u64,
}

impl LiveSession {
    fn from_created(event: &Event) -> Result<Self> {
        match event {
            Event::Created { schema_version, session_id, assignment_seed, assignment_index, config, timestamp } => {
                if *schema_version != SCHEMA_VERSION {
                    return Err(Error::Validation(format!("session schema version {schema_version}")));
                }
                config.validate()?;
                Ok(LiveSession {
                    id: session_id.clone(),
                    config: config.clone(),
                    phase: Phase::Tutorial,
                    cursor: 0,
                    records: Vec::new(),
                    rationales: Vec::new(),
                    created_at: timestamp.clone(),
                    assignment_seed: *assignment_seed,
                    assignment_index: *assignment_index,
                })
            }
            _ => Err(Error::Validation("session log must start with a created event".into())),
        }
    }

    /// Slot of the next trial; only meaningful while trials remain.
    pub fn slot(&self) -> TrialSlot {
        TrialSlot::from_cursor(self.cursor)
    }

    fn check_apply(&self, event: &Event) -> Result<()> {
        match (self.phase, event) {
            (Phase::Done, _) => Err(Error::Gone(format!("session {} is finished", self.id))),
            (Phase::Tutorial, Event::Started { .. }) => Ok(()),
            (Phase::Bidding, Event::Bid { record }) => {
                if record.trialnum != self.slot().trialnum {
                    return Err(Error::Conflict(format!(
                        "bid for trial {} but the current trial is {}",
                        record.trialnum,
                        self.slot().trialnum
                    )));
                }
                Ok(())
            }
            (Phase::Rationale, Event::Rationale { .. }) => Ok(()),
            (phase, Event::Bid { record }) => Err(Error::Conflict(format!(
                "bid for trial {} not accepted in phase {phase:?}",
                record.trialnum
            ))),
            (phase, _) => Err(Error::Conflict(format!("operation not accepted in phase {phase:?}"))),
        }
    }

    fn apply(&mut self, event: Event) -> Result<()> {
        self.check_apply(&event)?;
        match event {
            Event::Created { .. } => unreachable!("rejected by check_apply"),
            Event::Started { .. } => self.phase = Phase::Bidding,
            Event::Bid { record } => {
                let end = self.slot().is_block_end();
                self.records.push(*record);
                self.cursor += 1;
                self.phase = if end { Phase::Rationale } else { Phase::Bidding };
            }
            Event::Rationale { rationale } => {
                self.rationales.push(rationale);
                self.phase = if self.cursor == TRIALS_PER_SESSION { Phase::Done } else { Phase::Bidding };
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionCreated {
    pub schema_version: u32,
    pub session_id: String,
    pub experiment: ExperimentKind,
    pub condition: Condition,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub block_order: Option<crate::experiment::BlockOrder>,
    pub phase: Phase,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialView {
    pub schema_version: u32,
    pub session_id: String,
    pub phase: Phase,
    pub trialnum: u32,
    pub block_index: u32,
    pub trial_in_block: u32,
    pub trials_total: u32,
    pub payoff_mode: PayoffMode,
    pub feedback: Feedback,
    pub shows_inferred_cost: bool,
    pub endowed_cost: f64,
    pub payload: DashboardPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BidFeedback {
    pub schema_version: u32,
    pub trialnum: u32,
    pub payoff_mode: PayoffMode,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub won: Option<bool>,
    pub payoff: f64,
    /// Present only in the payoff + inferred-cost feedback block.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub inferred_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub inferred_cost_out_of_range: Option<RangeSide>,
    pub endowed_cost: f64,
    pub next_phase: Phase,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RationaleAck {
    pub schema_version: u32,
    pub block_index: u32,
    pub empty: bool,
    pub next_phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionExport {
    pub schema_version: u32,
    pub session_id: String,
    pub config: SessionConfig,
    pub phase: Phase,
    pub records: Vec<TrialRecord>,
    pub rationales: Vec<Rationale>,
    pub created_at: String,
    pub exported_at: String,
}

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

fn timestamp(clock: &Clock) -> String {
    clock().to_rfc3339_opts(SecondsFormat::Millis, true)
}

struct Handle {
    session: LiveSession,
    file: File,
}

impl Handle {
    fn append(&mut self, event: Event) -> Result<()> {
        self.session.check_apply(&event)?;
        let mut line = serde_json::to_vec(&event)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        self.file.sync_data()?;
        self.session.apply(event)
    }
}

/// Concurrent session store. Operations on one session are serialized by
/// its mutex; the session map is only write-locked to insert.
pub struct SessionService {
    dir: PathBuf,
    ctx: Arc<StimulusContext>,
    default_seed: u64,
    sessions: RwLock<HashMap<String, Arc<Mutex<Handle>>>>,
    counters: Mutex<BTreeMap<(ExperimentKind, u64), u64>>,
    clock: Clock,
}

impl std::fmt::Debug for SessionService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionService").field("dir", &self.dir).finish_non_exhaustive()
    }
}

const STREAM_PARTICIPANT: u64 = 1 << 40;

fn experiment_index(e: ExperimentKind) -> u64 {
    match e {
        ExperimentKind::Exp1 => 0,
        ExperimentKind::Exp2 => 1,
    }
}

/// Condition for the `index`-th session under `seed`: a fresh random
/// permutation of the three conditions for every cycle of three sessions.
pub fn assigned_condition(experiment: ExperimentKind, seed: u64, index: u64) -> Condition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((experiment_index(experiment) << 48) | (index / 3));
    let mut conditions = experiment.conditions();
    conditions.shuffle(&mut rng);
    conditions[(index % 3) as usize]
}

impl SessionService {
    /// Open (or create) a data directory and replay the sessions in it.
    pub fn open(dir: impl AsRef<Path>, ctx: Arc<StimulusContext>, default_seed: u64) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        let mut counters: BTreeMap<(ExperimentKind, u64), u64> = BTreeMap::new();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let session = replay(&path)?;
            let key = (session.config.experiment, session.assignment_seed);
            let next = counters.entry(key).or_insert(0);
            *next = (*next).max(session.assignment_index + 1);
            let file = OpenOptions::new().append(true).open(&path)?;
            sessions.insert(session.id.clone(), Arc::new(Mutex::new(Handle { session, file })));
        }
        Ok(SessionService {
            dir,
            ctx,
            default_seed,
            sessions: RwLock::new(sessions),
            counters: Mutex::new(counters),
            clock: Arc::new(Utc::now),
        })
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn data_dir(&self) -> &Path {
        &self.dir
    }

    pub fn context(&self) -> &StimulusContext {
        &self.ctx
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session map poisoned").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<Handle>>> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("no session {id:?}")))
    }

    fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut Handle) -> Result<T>) -> Result<T> {
        let handle = self.handle(id)?;
        let mut guard = handle.lock().expect("session poisoned");
        f(&mut guard)
    }

    pub fn create_session(&self, experiment_id: &str, assignment_seed: Option<u64>) -> Result<SessionCreated> {
        let experiment: ExperimentKind = experiment_id.parse()?;
        let seed = assignment_seed.unwrap_or(self.default_seed);
        let index = {
            let mut counters = self.counters.lock().expect("counter poisoned");
            let next = counters.entry((experiment, seed)).or_insert(0);
            let index = *next;
            *next += 1;
            index
        };
        let condition = assigned_condition(experiment, seed, index);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_PARTICIPANT | (experiment_index(experiment) << 36) | index);
        let token: u32 = rng.random();
        let id = format!("{}-{seed:x}-{index:06}-{token:08x}", experiment.as_str());
        let config = session_for(experiment, condition, id.clone(), &mut rng, None);
        let created_at = timestamp(&self.clock);
        let event = Event::Created {
            schema_version: SCHEMA_VERSION,
            session_id: id.clone(),
            assignment_seed: seed,
            assignment_index: index,
            config: config.clone(),
            timestamp: created_at.clone(),
        };
        let session = LiveSession::from_created(&event)?;
        let path = self.dir.join(format!("{id}.jsonl"));
        let mut file = OpenOptions::new().create_new(true).append(true).open(&path)?;
        let mut line = serde_json::to_vec(&event)?;
        line.push(b'\n');
        file.write_all(&line)?;
        file.sync_data()?;
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id.clone(), Arc::new(Mutex::new(Handle { session, file })));
        Ok(SessionCreated {
            schema_version: SCHEMA_VERSION,
            session_id: id,
            experiment,
            condition,
            block_order: config.block_order,
            phase: Phase::Tutorial,
            created_at,
        })
    }

    /// Current trial and its dashboard. The first call ends the tutorial.
    /// Repeated calls return the same view until a bid is submitted.
    pub fn get_trial(&self, id: &str) -> Result<TrialView> {
        self.with_session(id, |h| {
            match h.session.phase {
                Phase::Done => return Err(Error::Gone(format!("session {id} is finished"))),
                Phase::Rationale => {
                    return Err(Error::Conflict("a rationale is due before the next trial".into()))
                }
                Phase::Tutorial => h.append(Event::Started { timestamp: timestamp(&self.clock) })?,
                Phase::Bidding => {}
            }
            let s = &h.session;
            let slot = s.slot();
            let rule_id = s.config.rule_id(slot);
            let block = s.config.block(slot);
            Ok(TrialView {
                schema_version: SCHEMA_VERSION,
                session_id: s.id.clone(),
                phase: s.phase,
                trialnum: slot.trialnum,
                block_index: slot.block_index,
                trial_in_block: slot.trial_in_block,
                trials_total: TRIALS_PER_SESSION as u32,
                payoff_mode: block.payoff_mode,
                feedback: block.feedback,
                shows_inferred_cost: block.feedback.shows_inferred_cost(),
                endowed_cost: self.ctx.cost().value(),
                payload: default_payload(s.config.variant(slot), rule_id, self.ctx.rule(rule_id)?)?,
            })
        })
    }

    pub fn submit_bid(&self, id: &str, trialnum: u32, bid: f64) -> Result<BidFeedback> {
        self.with_session(id, |h| {
            let s = &h.session;
            if s.phase == Phase::Done {
                return Err(Error::Gone(format!("session {id} is finished")));
            }
            if s.phase != Phase::Bidding || trialnum != s.slot().trialnum {
                return Err(Error::Conflict(format!(
                    "bid for trial {trialnum} not accepted (phase {:?}, current trial {})",
                    s.phase,
                    s.slot().trialnum
                )));
            }
            let mut record = self.ctx.resolve_trial(&s.config, s.slot(), bid)?;
            let ts = timestamp(&self.clock);
            record.timestamp = Some(ts.clone());
            let feedback = BidFeedback {
                schema_version: SCHEMA_VERSION,
                trialnum,
                payoff_mode: record.payoff_mode,
                won: record.outcome.won,
                payoff: record.outcome.payoff,
                inferred_cost: record.inferred_cost_br,
                inferred_cost_out_of_range: record.inferred_cost_out_of_range,
                endowed_cost: record.cost,
                next_phase: Phase::Bidding,
                timestamp: ts,
            };
            h.append(Event::Bid { record: Box::new(record) })?;
            Ok(BidFeedback { next_phase: h.session.phase, ..feedback })
        })
    }

    pub fn submit_rationale(&self, id: &str, text: &str) -> Result<RationaleAck> {
        if text.chars().count() > MAX_RATIONALE_CHARS {
            return Err(Error::Validation(format!("rationale longer than {MAX_RATIONALE_CHARS} characters")));
        }
        self.with_session(id, |h| {
            let block_index = (h.session.cursor / TRIALS_PER_BLOCK).max(1) as u32;
            let empty = text.trim().is_empty();
            h.append(Event::Rationale {
                rationale: Rationale { block_index, text: text.to_string(), empty, timestamp: timestamp(&self.clock) },
            })?;
            Ok(RationaleAck { schema_version: SCHEMA_VERSION, block_index, empty, next_phase: h.session.phase })
        })
    }

    pub fn export(&self, id: &str) -> Result<SessionExport> {
        self.with_session(id, |h| {
            let s = &h.session;
            Ok(SessionExport {
                schema_version: SCHEMA_VERSION,
                session_id: s.id.clone(),
                config: s.config.clone(),
                phase: s.phase,
                records: s.records.clone(),
                rationales: s.rationales.clone(),
                created_at: s.created_at.clone(),
                exported_at: timestamp(&self.clock),
            })
        })
    }

    pub fn phase(&self, id: &str) -> Result<Phase> {
        self.with_session(id, |h| Ok(h.session.phase))
    }
}

/// Rebuild a session from its event file. A torn final line (a crash during
/// the write) is cut off; corruption anywhere else is an error.
fn replay(path: &Path) -> Result<LiveSession> {
    let text = std::fs::read_to_string(path)?;
    let mut session: Option<LiveSession> = None;
    let mut valid = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let complete = line.ends_with('\n');
        if line.trim().is_empty() {
            valid += line.len();
            continue;
        }
        let event: Event = match serde_json::from_str(line) {
            Ok(e) if complete => e,
            Ok(_) => break,
            Err(_) if !complete => break,
            Err(e) => return Err(Error::Validation(format!("{}: line {}: {e}", path.display(), i + 1))),
        };
        match session.as_mut() {
            None => session = Some(LiveSession::from_created(&event)?),
            Some(s) => s
                .apply(event)
                .map_err(|e| Error::Validation(format!("{}: line {}: {e}", path.display(), i + 1)))?,
        }
        valid += line.len();
    }
    if valid < text.len() {
        OpenOptions::new().write(true).open(path)?.set_len(valid as u64)?;
    }
    session.ok_or_else(|| Error::Validation(format!("{}: empty session log", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimuli::StimulusSet;
    use chrono::TimeZone;

    fn service(dir: &Path) -> SessionService {
        let ctx = Arc::new(StimulusContext::new(StimulusSet::canonical()).unwrap());
        let fixed = Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap();
        SessionService::open(dir, ctx, 1).unwrap().with_clock(Arc::new(move || fixed))
    }

    #[test]
    fn balanced_assignment() {
        let mut counts = BTreeMap::new();
        for i in 0..704 {
            *counts.entry(assigned_condition(ExperimentKind::Exp1, 3, i)).or_insert(0i64) += 1;
        }
        assert_eq!(counts.len(), 3);
        assert!(counts.values().all(|&c| (c - 704 / 3).abs() <= 1), "{counts:?}");
        assert_ne!(assigned_condition(ExperimentKind::Exp1, 3, 0), assigned_condition(ExperimentKind::Exp1, 3, 1));
    }

    #[test]
    fn full_session_walkthrough() {
        let dir = tempfile::tempdir().unwrap();
        let svc = service(dir.path());
        let created = svc.create_session("exp1", None).unwrap();
        let id = created.session_id;
        assert_eq!(svc.phase(&id).unwrap(), Phase::Tutorial);
        assert!(matches!(svc.submit_bid(&id, 1, 100.0), Err(Error::Conflict(_))));
        for t in 1..=20u32 {
            let a = svc.get_trial(&id).unwrap();
            assert_eq!(a, svc.get_trial(&id).unwrap());
            assert_eq!(a.trialnum, t);
            let fb = svc.submit_bid(&id, t, 100.0).unwrap();
            assert_eq!(fb.inferred_cost.is_some(), a.shows_inferred_cost);
            assert!(matches!(svc.submit_bid(&id, t, 100.0), Err(Error::Conflict(_))));
            if t % 10 == 0 {
                assert!(matches!(svc.get_trial(&id), Err(Error::Conflict(_))));
                let ack = svc.submit_rationale(&id, if t == 10 { "" } else { "aimed high" }).unwrap();
                assert_eq!(ack.block_index, t / 10);
                assert_eq!(ack.empty, t == 10);
            } else {
                assert!(matches!(svc.submit_rationale(&id, "x"), Err(Error::Conflict(_))));
            }
        }
        assert!(matches!(svc.get_trial(&id), Err(Error::Gone(_))));
        assert!(matches!(svc.submit_bid(&id, 21, 1.0), Err(Error::Gone(_))));
        let export = svc.export(&id).unwrap();
        assert_eq!(export.records.len(), 20);
        assert_eq!(export.rationales[1].text, "aimed high");
        assert_eq!(export.rationales[1].block_index, 2);
        assert!(export.exported_at.ends_with('Z'));
        assert!(matches!(svc.export("nope"), Err(Error::NotFound(_))));
        assert!(matches!(svc.create_session("exp9", None), Err(Error::NotFound(_))));
    }

    #[test]
    fn restart_replays_sessions() {
        let dir = tempfile::tempdir().unwrap();
        let id = {
            let svc = service(dir.path());
            let id = svc.create_session("exp2", Some(5)).unwrap().session_id;
            svc.get_trial(&id).unwrap();
            svc.submit_bid(&id, 1, 97.0).unwrap();
            svc.submit_bid(&id, 2, 99.5).unwrap();
            id
        };
        let before = std::fs::read_to_string(dir.path().join(format!("{id}.jsonl"))).unwrap();
        let svc = service(dir.path());
        let export = svc.export(&id).unwrap();
        assert_eq!(export.records.len(), 2);
        assert_eq!(svc.get_trial(&id).unwrap().trialnum, 3);
        // The counter resumes after the replayed session.
        let next = svc.create_session("exp2", Some(5)).unwrap();
        assert!(next.session_id.contains("-000001-"));
        assert!(std::fs::read_to_string(dir.path().join(format!("{id}.jsonl"))).unwrap().starts_with(&before));
    }

    #[test]
    fn torn_tail_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let id = {
            let svc = service(dir.path());
            let id = svc.create_session("exp1", None).unwrap().session_id;
            svc.get_trial(&id).unwrap();
            svc.submit_bid(&id, 1, 97.0).unwrap();
            id
        };
        let path = dir.path().join(format!("{id}.jsonl"));
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"type\":\"bid\",\"rec").unwrap();
        let svc = service(dir.path());
        assert_eq!(svc.export(&id).unwrap().records.len(), 1);
        svc.submit_bid(&id, 2, 98.0).unwrap();
        drop(svc);
        assert_eq!(service(dir.path()).export(&id).unwrap().records.len(), 2);
    }

    #[test]
    fn data_dir_override() {
        assert_eq!(data_dir_from_env("fallback"), match std::env::var_os(DATA_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from("fallback"),
        });
    }
}
