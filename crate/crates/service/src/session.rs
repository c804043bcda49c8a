//! Audit sessions stored as an append-only, hash-chained JSONL journal.
//!
//! Each journal line records one operator action together with the content
//! hash of the audit after that action. Loading replays every action through
//! a fresh engine and checks those hashes, so stored conclusions are never
//! taken on trust.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use r2audit_core::{
    AuditConfig, AuditState, AuditStatus, ContestRecord, RiskReport, RoundObservation, RoundRecord,
    RoundSchedule, StoppingEvaluation, TailRatio,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, ServiceError};

pub const SCHEMA_VERSION: u32 = 1;

const GENESIS: &str = "0000000000000000000000000000000000000000000000000000000000000000";

/// Round to 12 significant digits.
pub fn sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

pub fn round_evaluation(ev: &StoppingEvaluation) -> StoppingEvaluation {
    StoppingEvaluation {
        ratio_at_k: match ev.ratio_at_k {
            TailRatio::Value(v) => TailRatio::Value(sig12(v)),
            other => other,
        },
        sigma_at_k: sig12(ev.sigma_at_k),
        p_value_analog: sig12(ev.p_value_analog),
        stop_prob: sig12(ev.stop_prob),
        risk: sig12(ev.risk),
        ..ev.clone()
    }
}

fn round_report(mut r: RiskReport) -> RiskReport {
    for row in &mut r.rounds {
        row.stop_prob = sig12(row.stop_prob);
        row.risk = sig12(row.risk);
        row.risk_over_stop = row.risk_over_stop.map(sig12);
    }
    r.cum_risk = sig12(r.cum_risk);
    r.cum_stop = sig12(r.cum_stop);
    r
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Create {
        contest: ContestRecord,
        config: AuditConfig,
        schedule: RoundSchedule,
    },
    Round {
        observation: RoundObservation,
        /// Amend the schedule when the observed total differs from it.
        #[serde(default)]
        amend: bool,
    },
    AmendSchedule {
        sizes: Vec<u64>,
        reason: String,
    },
    Escalate {
        #[serde(default)]
        reason: Option<String>,
    },
}

impl Action {
    fn name(&self) -> &'static str {
        match self {
            Action::Create { .. } => "create",
            Action::Round { .. } => "round",
            Action::AmendSchedule { .. } => "amend_schedule",
            Action::Escalate { .. } => "escalate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryBody {
    pub schema_version: u32,
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub action: Action,
    /// Content hash of the audit after this action.
    pub state_hash: String,
    pub prev_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    #[serde(flatten)]
    pub body: EntryBody,
    /// SHA-256 of the body's JSON.
    pub hash: String,
}

impl JournalEntry {
    fn seal(body: EntryBody) -> Result<Self> {
        let hash = sha256_hex(&serde_json::to_vec(&body)?);
        Ok(JournalEntry { body, hash })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub action: String,
    pub summary: String,
}

/// Fields that determine the audit's conclusions; the content hash covers exactly these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub contest: ContestRecord,
    pub config: AuditConfig,
    pub schedule: RoundSchedule,
    pub status: AuditStatus,
    pub rounds: Vec<RoundRecord>,
    pub cum_risk: f64,
    pub cum_stop: f64,
    pub relevant_total: u64,
    pub winner_total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDocument {
    pub schema_version: u32,
    pub id: String,
    /// Number of journal entries; bumps on every mutation.
    pub version: u64,
    #[serde(flatten)]
    pub decision: DecisionRecord,
    /// `alpha - cum_risk`.
    pub risk_budget_remaining: f64,
    pub next_scheduled: Option<u64>,
    pub risk_report: RiskReport,
    pub log: Vec<LogEntry>,
    pub content_hash: String,
}

fn decision_record(contest: &ContestRecord, state: &AuditState) -> DecisionRecord {
    DecisionRecord {
        contest: contest.clone(),
        config: state.config,
        schedule: state.schedule.clone(),
        status: state.status,
        rounds: state
            .rounds
            .iter()
            .map(|r| RoundRecord {
                evaluation: round_evaluation(&r.evaluation),
                ..r.clone()
            })
            .collect(),
        cum_risk: sig12(state.cum_risk),
        cum_stop: sig12(state.cum_stop),
        relevant_total: state.relevant_total,
        winner_total: state.winner_total,
    }
}

fn content_hash(record: &DecisionRecord) -> Result<String> {
    let mut bytes = serde_json::to_vec(&SCHEMA_VERSION)?;
    bytes.extend(serde_json::to_vec(record)?);
    Ok(sha256_hex(&bytes))
}

fn summarize(action: &Action, outcome: &AuditState) -> String {
    match action {
        Action::Create {
            config, schedule, ..
        } => format!(
            "created {} audit, alpha {}, schedule {:?}",
            config.rule, config.alpha, schedule.sizes
        ),
        Action::Round { .. } => match outcome.rounds.last() {
            Some(r) => format!(
                "round {}: n {}, k {}, kmin {}, {:?}",
                r.evaluation.round,
                r.evaluation.n,
                r.evaluation.k,
                r.evaluation.kmin,
                r.evaluation.decision
            ),
            None => "round".into(),
        },
        Action::AmendSchedule { sizes, reason } => {
            format!("schedule amended to {sizes:?}: {reason}")
        }
        Action::Escalate { reason } => match reason {
            Some(r) => format!("escalated to a full hand count: {r}"),
            None => "escalated to a full hand count".into(),
        },
    }
}

/// What a round action produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub evaluation: StoppingEvaluation,
    pub amended: bool,
}

/// Apply one action to an engine state.
fn apply(state: &mut AuditState, action: &Action) -> Result<Option<RoundOutcome>> {
    match action {
        Action::Create { .. } => Err(ServiceError::Usage("audit already created".into())),
        Action::Round { observation, amend } => {
            let (evaluation, amended) = if *amend {
                state.execute_round_amending(observation.clone())?
            } else {
                (state.execute_round(observation.clone())?, false)
            };
            Ok(Some(RoundOutcome {
                evaluation,
                amended,
            }))
        }
        Action::AmendSchedule { sizes, reason } => {
            state.amend_schedule(sizes.clone(), reason.clone())?;
            Ok(None)
        }
        Action::Escalate { .. } => {
            state.escalate()?;
            Ok(None)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    contest: ContestRecord,
    state: AuditState,
    entries: Vec<JournalEntry>,
    log: Vec<LogEntry>,
    journal: Option<PathBuf>,
}

fn log_entry(e: &EntryBody, after: &AuditState) -> LogEntry {
    LogEntry {
        seq: e.seq,
        at: e.at,
        action: e.action.name().to_string(),
        summary: summarize(&e.action, after),
    }
}

impl Session {
    /// Start an audit; with a journal path the file must not exist yet.
    pub fn create(
        id: impl Into<String>,
        contest: ContestRecord,
        config: AuditConfig,
        schedule: RoundSchedule,
        journal: Option<PathBuf>,
    ) -> Result<Self> {
        contest.validate()?;
        let state = AuditState::new(config, schedule.clone())?;
        if let Some(path) = &journal {
            if path.exists() {
                return Err(ServiceError::Usage(format!(
                    "{} already exists",
                    path.display()
                )));
            }
        }
        let mut session = Session {
            id: id.into(),
            contest: contest.clone(),
            state,
            entries: Vec::new(),
            log: Vec::new(),
            journal,
        };
        let action = Action::Create {
            contest,
            config,
            schedule,
        };
        let state = session.state.clone();
        session.commit(action, state)?;
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn contest(&self) -> &ContestRecord {
        &self.contest
    }

    pub fn state(&self) -> &AuditState {
        &self.state
    }

    pub fn entries(&self) -> &[JournalEntry] {
        &self.entries
    }

    /// Sequence number of the last journal entry; 0 right after creation.
    pub fn version(&self) -> u64 {
        self.entries.len() as u64 - 1
    }

    pub fn journal_path(&self) -> Option<&Path> {
        self.journal.as_deref()
    }

    pub fn record_round(
        &mut self,
        observation: RoundObservation,
        amend: bool,
    ) -> Result<RoundOutcome> {
        let action = Action::Round { observation, amend };
        let mut next = self.state.clone();
        let outcome = apply(&mut next, &action)?.expect("round actions produce an outcome");
        self.commit(action, next)?;
        Ok(outcome)
    }

    pub fn amend_schedule(&mut self, sizes: Vec<u64>, reason: impl Into<String>) -> Result<()> {
        self.mutate(Action::AmendSchedule {
            sizes,
            reason: reason.into(),
        })
    }

    pub fn escalate(&mut self, reason: Option<String>) -> Result<()> {
        self.mutate(Action::Escalate { reason })
    }

    fn mutate(&mut self, action: Action) -> Result<()> {
        let mut next = self.state.clone();
        apply(&mut next, &action)?;
        self.commit(action, next)
    }

    /// Journal the action, then adopt the new state. Nothing changes if the write fails.
    fn commit(&mut self, action: Action, next: AuditState) -> Result<()> {
        let state_hash = content_hash(&decision_record(&self.contest, &next))?;
        let prev_hash = self
            .entries
            .last()
            .map_or(GENESIS.to_string(), |e| e.hash.clone());
        let entry = JournalEntry::seal(EntryBody {
            schema_version: SCHEMA_VERSION,
            seq: self.entries.len() as u64,
            at: Utc::now(),
            action,
            state_hash,
            prev_hash,
        })?;
        if let Some(path) = &self.journal {
            let mut line = serde_json::to_vec(&entry)?;
            line.push(b'\n');
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            f.write_all(&line)?;
            f.sync_data()?;
        }
        log::info!(
            "audit {} entry {}: {}",
            self.id,
            entry.body.seq,
            entry.body.action.name()
        );
        self.log.push(log_entry(&entry.body, &next));
        self.entries.push(entry);
        self.state = next;
        Ok(())
    }

    pub fn document(&self) -> SessionDocument {
        let decision = decision_record(&self.contest, &self.state);
        let content_hash = self
            .entries
            .last()
            .map(|e| e.body.state_hash.clone())
            .unwrap_or_default();
        SessionDocument {
            schema_version: SCHEMA_VERSION,
            id: self.id.clone(),
            version: self.version(),
            risk_budget_remaining: sig12(self.state.config.alpha - self.state.cum_risk),
            next_scheduled: self
                .state
                .status
                .accepts_rounds()
                .then(|| self.state.next_scheduled())
                .flatten(),
            risk_report: round_report(self.state.risk_report()),
            decision,
            log: self.log.clone(),
            content_hash,
        }
    }

    /// Rebuild a session from journal entries, verifying the hash chain and
    /// replaying every action.
    pub fn from_entries(
        id: impl Into<String>,
        entries: Vec<JournalEntry>,
        journal: Option<PathBuf>,
    ) -> Result<Self> {
        let tampered = |seq: u64, reason: String| ServiceError::Tampered { seq, reason };
        let first = entries
            .first()
            .ok_or_else(|| tampered(0, "journal is empty".into()))?;
        let Action::Create {
            contest,
            config,
            schedule,
        } = &first.body.action
        else {
            return Err(tampered(0, "first entry must create the audit".into()));
        };
        let mut state = AuditState::new(*config, schedule.clone())?;
        let contest = contest.clone();
        contest.validate()?;
        let mut prev = GENESIS.to_string();
        let mut log = Vec::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            let seq = i as u64;
            if e.body.schema_version != SCHEMA_VERSION {
                return Err(tampered(
                    seq,
                    format!("unsupported schema version {}", e.body.schema_version),
                ));
            }
            if e.body.seq != seq {
                return Err(tampered(
                    seq,
                    format!("sequence number {} out of order", e.body.seq),
                ));
            }
            if e.body.prev_hash != prev {
                return Err(tampered(seq, "broken hash chain".into()));
            }
            let recomputed = sha256_hex(&serde_json::to_vec(&e.body)?);
            if recomputed != e.hash {
                return Err(tampered(
                    seq,
                    "entry hash does not match its contents".into(),
                ));
            }
            if i > 0 {
                apply(&mut state, &e.body.action)
                    .map_err(|err| tampered(seq, format!("replay failed: {err}")))?;
            }
            let state_hash = content_hash(&decision_record(&contest, &state))?;
            if state_hash != e.body.state_hash {
                return Err(tampered(
                    seq,
                    "replayed state differs from the recorded state".into(),
                ));
            }
            log.push(log_entry(&e.body, &state));
            prev = e.hash.clone();
        }
        Ok(Session {
            id: id.into(),
            contest,
            state,
            entries,
            log,
            journal,
        })
    }

    /// Load and verify a journal file; later actions append to it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path)?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: JournalEntry =
                serde_json::from_str(&line).map_err(|e| ServiceError::Tampered {
                    seq: i as u64,
                    reason: format!("unreadable entry: {e}"),
                })?;
            entries.push(entry);
        }
        let id = path
            .file_stem()
            .map_or_else(|| "audit".to_string(), |s| s.to_string_lossy().into_owned());
        Session::from_entries(id, entries, Some(path.to_path_buf()))
    }
}
