//! Session state, startup (restore + forgetfulness), persistence and the
//! session log.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentModel, InteractionKind, Polarity};
use crate::prob::RngStream;
use crate::scheduler::reuse_probability;
use crate::stats::InteractionStats;

pub const STATE_FILE: &str = "session_state.json";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown interaction `{0}`")]
    UnknownInteraction(String),
    #[error("session store {path} is corrupt ({message}); move or delete it to start fresh")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("log timestamps must not decrease: {at} after {last}")]
    NonMonotone { at: f64, last: f64 },
    #[error("log line {line}: {message}")]
    LogParse { line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SessionError + '_ {
    move |source| SessionError::Io {
        path: path.to_owned(),
        source,
    }
}

/// An answer the user gave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserFact {
    /// Predefined response label, absent for free text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarity: Option<Polarity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub number: Option<f64>,
    /// Unix seconds.
    pub at: f64,
}

impl UserFact {
    pub fn display_label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.text)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Usage {
    pub used: bool,
    pub answered: bool,
    /// Unix seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_used_at: Option<f64>,
}

/// Everything that survives between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionState {
    pub seed: u64,
    /// Unix seconds.
    pub session_started_at: f64,
    #[serde(default)]
    pub user_facts: BTreeMap<String, UserFact>,
    #[serde(default)]
    pub variables: BTreeMap<String, f64>,
    #[serde(default)]
    pub usage: BTreeMap<String, Usage>,
    /// Update triggers that fired in this session.
    #[serde(default)]
    pub fired_triggers: BTreeSet<String>,
    /// Observation sets each evaluate trigger already fired on.
    #[serde(default)]
    pub met_fired: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    pub stats: InteractionStats,
}

impl SessionState {
    pub fn fresh(_model: &AgentModel, seed: u64, now_unix: f64) -> Self {
        SessionState {
            seed,
            session_started_at: now_unix,
            user_facts: BTreeMap::new(),
            variables: BTreeMap::new(),
            usage: BTreeMap::new(),
            fired_triggers: BTreeSet::new(),
            met_fired: BTreeMap::new(),
            stats: InteractionStats::new(),
        }
    }

    pub fn is_used(&self, id: &str) -> bool {
        self.usage.get(id).is_some_and(|u| u.used)
    }

    pub fn usage(&self, id: &str) -> Usage {
        self.usage.get(id).copied().unwrap_or_default()
    }

    /// Current value of a variable: the session's, else the model's initial
    /// value, else `None`.
    pub fn variable(&self, model: &AgentModel, name: &str) -> Option<f64> {
        self.variables
            .get(name)
            .copied()
            .or_else(|| model.variable(name).and_then(|v| v.current))
    }

    /// Marks an interaction as executed.
    pub fn mark_used(&mut self, model: &AgentModel, id: &str, answered: bool, at_unix: f64) -> Result<(), SessionError> {
        if model.interaction(id).is_none() {
            return Err(SessionError::UnknownInteraction(id.to_owned()));
        }
        let usage = self.usage.entry(id.to_owned()).or_default();
        usage.used = true;
        usage.answered = answered;
        usage.last_used_at = Some(usage.last_used_at.map_or(at_unix, |old| old.max(at_unix)));
        Ok(())
    }
}

/// What [`startup`] did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StartupReport {
    pub restored_facts: usize,
    pub restored_used: usize,
    /// Interactions made available again, in the order they were drawn.
    pub forgotten: Vec<String>,
    /// Stored ids the model no longer knows.
    pub dropped: Vec<String>,
}

/// Builds the state for a new session: restores what the store had, drops
/// ids the model no longer declares, resets per-session trigger bookkeeping
/// and applies the forgetfulness policy.
pub fn startup(
    model: &AgentModel,
    stored: Option<SessionState>,
    seed: u64,
    now_unix: f64,
    rng: &mut RngStream,
) -> (SessionState, StartupReport) {
    let mut report = StartupReport::default();
    let Some(mut state) = stored else {
        return (SessionState::fresh(model, seed, now_unix), report);
    };
    state.seed = seed;
    state.session_started_at = now_unix;
    state.fired_triggers.clear();
    state.met_fired.clear();

    let known = |id: &String| model.interaction(id).is_some();
    for id in state.user_facts.keys().chain(state.usage.keys()) {
        if !known(id) && !report.dropped.contains(id) {
            report.dropped.push(id.clone());
        }
    }
    state.user_facts.retain(|id, _| known(id));
    state.usage.retain(|id, _| known(id));
    state.variables.retain(|name, _| model.variable(name).is_some());
    report.restored_facts = state.user_facts.len();
    report.restored_used = state.usage.values().filter(|u| u.used).count();

    report.forgotten = apply_forgetfulness(model, &mut state, now_unix, model.scheduler().forget_tau_s, rng);
    (state, report)
}

/// Resets used non-repeatable interactions with probability
/// `reuse_probability(now - last_used_at, tau)`. Uncertain-fact questions
/// are always repeatable and never take part. One draw is made per
/// candidate, in id order.
pub fn apply_forgetfulness(
    model: &AgentModel,
    state: &mut SessionState,
    now_unix: f64,
    tau: f64,
    rng: &mut RngStream,
) -> Vec<String> {
    let mut forgotten = Vec::new();
    for (id, usage) in state.usage.iter_mut() {
        let Some(it) = model.interaction(id) else { continue };
        if !usage.used || it.is_repeatable() || it.kind == InteractionKind::UncertainFactQuestion {
            continue;
        }
        let elapsed = usage.last_used_at.map_or(0.0, |t| (now_unix - t).max(0.0));
        let u: f64 = rng.random();
        if u < reuse_probability(elapsed, tau) {
            usage.used = false;
            usage.answered = false;
            forgotten.push(id.clone());
        }
    }
    forgotten
}

/// A directory holding `session_state.json` and the session logs.
#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        SessionStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn state_path(&self) -> PathBuf {
        self.dir.join(STATE_FILE)
    }

    pub fn log_path(&self, started_unix: f64) -> PathBuf {
        self.dir.join(format!("session_{}.log", started_unix as u64))
    }

    /// `None` when the store has no state yet.
    pub fn load(&self) -> Result<Option<SessionState>, SessionError> {
        let path = self.state_path();
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path)(e)),
        };
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| SessionError::Corrupt {
                path,
                message: e.to_string(),
            })
    }

    /// Writes the state atomically (temp file, then rename).
    pub fn persist(&self, state: &SessionState) -> Result<(), SessionError> {
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let path = self.state_path();
        let tmp = self.dir.join(format!("{STATE_FILE}.tmp"));
        let text = serde_json::to_string_pretty(state).expect("session state serializes");
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    Histogram,
    QueueSnapshot,
    Utterance,
    Response,
    TriggerFired,
    Depletion,
    VariableChange,
    NonverbalCue,
    Timeout,
    Unparsed,
    Notice,
    Forecast,
}

impl LogKind {
    pub const ALL: [LogKind; 12] = [
        LogKind::Histogram,
        LogKind::QueueSnapshot,
        LogKind::Utterance,
        LogKind::Response,
        LogKind::TriggerFired,
        LogKind::Depletion,
        LogKind::VariableChange,
        LogKind::NonverbalCue,
        LogKind::Timeout,
        LogKind::Unparsed,
        LogKind::Notice,
        LogKind::Forecast,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LogKind::Histogram => "histogram",
            LogKind::QueueSnapshot => "queue_snapshot",
            LogKind::Utterance => "utterance",
            LogKind::Response => "response",
            LogKind::TriggerFired => "trigger_fired",
            LogKind::Depletion => "depletion",
            LogKind::VariableChange => "variable_change",
            LogKind::NonverbalCue => "nonverbal_cue",
            LogKind::Timeout => "timeout",
            LogKind::Unparsed => "unparsed",
            LogKind::Notice => "notice",
            LogKind::Forecast => "forecast",
        }
    }

    fn multiline(self) -> bool {
        matches!(self, LogKind::Histogram | LogKind::QueueSnapshot)
    }
}

impl fmt::Display for LogKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LogKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LogKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown event kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub seq: u64,
    /// Seconds since the session started.
    pub at: f64,
    pub kind: LogKind,
    pub payload: String,
}

impl LogEvent {
    /// Text form: `[12.345] kind payload`, or the payload on the following
    /// lines for block events.
    pub fn render(&self) -> String {
        if self.kind.multiline() {
            format!("[{:.3}] {}\n{}", self.at, self.kind, self.payload)
        } else {
            format!("[{:.3}] {} {}", self.at, self.kind, self.payload)
        }
    }
}

/// Opening line of a histogram block.
pub const REGENERATION_BANNER: &str = "***** BEGIN Regenerating interactions *****";

/// Payload of a histogram event.
pub fn histogram_block(histogram: &str) -> String {
    format!("{REGENERATION_BANNER}\nHistogram:\n{histogram}")
}

/// Payload of a variable change event.
pub fn variable_change_line(name: &str, old: Option<f64>, new: f64) -> String {
    let old = old.map_or_else(|| "unset".to_owned(), |v| v.to_string());
    format!("{name}: {old} -> {new}")
}

/// Append-only event log. Events can be kept in memory, streamed to a file,
/// or both.
pub struct SessionLog {
    header: String,
    events: Vec<LogEvent>,
    retain: bool,
    next_seq: u64,
    last_at: f64,
    sink: Option<BufWriter<File>>,
}

impl fmt::Debug for SessionLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionLog")
            .field("header", &self.header)
            .field("events", &self.events.len())
            .finish()
    }
}

impl SessionLog {
    /// In-memory log. `started` is free text for the header.
    pub fn new(seed: u64, started: &str) -> Self {
        SessionLog {
            header: format!("# korra session log | seed={seed} | started={started}"),
            events: Vec::new(),
            retain: true,
            next_seq: 0,
            last_at: 0.0,
            sink: None,
        }
    }

    /// Streams every event to `path`. With `retain == false` nothing is
    /// kept in memory.
    pub fn with_file(mut self, path: &Path, retain: bool) -> Result<Self, SessionError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        let mut sink = BufWriter::new(file);
        writeln!(sink, "{}", self.header).map_err(io_err(path))?;
        sink.flush().map_err(io_err(path))?;
        self.sink = Some(sink);
        self.retain = retain;
        Ok(self)
    }

    pub fn header(&self) -> &str {
        &self.header
    }

    pub fn events(&self) -> &[LogEvent] {
        &self.events
    }

    pub fn len(&self) -> u64 {
        self.next_seq
    }

    pub fn is_empty(&self) -> bool {
        self.next_seq == 0
    }

    pub fn last_at(&self) -> f64 {
        self.last_at
    }

    /// Appends an event. Single-line payloads have newlines folded into
    /// spaces.
    pub fn log_event(&mut self, at: f64, kind: LogKind, payload: impl Into<String>) -> Result<LogEvent, SessionError> {
        if at < self.last_at {
            return Err(SessionError::NonMonotone { at, last: self.last_at });
        }
        let mut payload = payload.into();
        if !kind.multiline() && payload.contains('\n') {
            payload = payload.replace('\n', " ");
        }
        let event = LogEvent {
            seq: self.next_seq,
            at,
            kind,
            payload,
        };
        self.next_seq += 1;
        self.last_at = at;
        if let Some(sink) = &mut self.sink {
            // A full disk must not stop the agent; the in-memory copy and
            // the state file still carry the session.
            let _ = writeln!(sink, "{}", event.render()).and_then(|_| sink.flush());
        }
        if self.retain {
            self.events.push(event.clone());
        }
        Ok(event)
    }

    /// Events only, without the header.
    pub fn body_text(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.render());
            out.push('\n');
        }
        out
    }

    /// Header plus events.
    pub fn text(&self) -> String {
        format!("{}\n{}", self.header, self.body_text())
    }
}

fn parse_event_line(line: &str) -> Option<(f64, LogKind, Option<&str>)> {
    let rest = line.strip_prefix('[')?;
    let (at, rest) = rest.split_once("] ")?;
    let at: f64 = at.parse().ok()?;
    let (kind, payload) = match rest.split_once(' ') {
        Some((k, p)) => (k, Some(p)),
        None => (rest, None),
    };
    let kind: LogKind = kind.parse().ok()?;
    Some((at, kind, payload))
}

/// Parses a log written by [`SessionLog`]. Lines starting with `#` are
/// header lines and skipped.
pub fn parse_log(text: &str) -> Result<Vec<LogEvent>, SessionError> {
    let mut events: Vec<LogEvent> = Vec::new();
    let mut block_open = false;
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') && !block_open {
            continue;
        }
        if let Some((at, kind, payload)) = parse_event_line(line) {
            let seq = events.len() as u64;
            block_open = kind.multiline();
            events.push(LogEvent {
                seq,
                at,
                kind,
                payload: payload.unwrap_or_default().to_owned(),
            });
            continue;
        }
        match events.last_mut() {
            Some(last) if block_open => {
                if !last.payload.is_empty() {
                    last.payload.push('\n');
                }
                last.payload.push_str(line);
            }
            _ if line.trim().is_empty() => {}
            _ => {
                return Err(SessionError::LogParse {
                    line: i + 1,
                    message: "expected `[seconds] kind payload`".into(),
                })
            }
        }
    }
    Ok(events)
}
