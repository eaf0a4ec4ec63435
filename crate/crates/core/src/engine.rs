//! The interaction loop: sample, tune, execute, time, trigger, resample.
//!
//! The engine owns every piece of mutable state. Time comes from a
//! [`Clock`]; answers come from a [`ResponseSource`]. A simulated user and a
//! virtual clock make whole sessions reproducible from a seed.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{map_response, reaction_for, strip_ssml, AgentModel, Interaction, InteractionKind, Polarity};
use crate::prob::RngStream;
use crate::scheduler::{
    apply_tuning, effective_distribution, fill_placeholder, generate_queue, CategoryWeights, InjectedInteraction,
    InteractionsQueue, QueueItem, SelectionState, TuningCommand,
};
use crate::session::{
    histogram_block, parse_log, variable_change_line, LogEvent, LogKind, SessionError, SessionLog, SessionState,
    UserFact,
};
use crate::stats::{batch_fit, suggest_weights, InteractionStats};
use crate::timing::{gate, sample_interval, GateKind, IntervalKind};
use crate::triggers::{on_response, on_tick, EvaluateEffect, FacialCue, TriggerEffect, TriggerFiring, UpdateEffect};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("invalid simulation setting: {0}")]
    Config(String),
    #[error("script line {line}: {message}")]
    Script { line: usize, message: String },
}

/// Source of time. `now` is seconds since the session started.
pub trait Clock {
    fn now(&self) -> f64;
    /// Blocks (or pretends to) until `t`.
    fn wait_until(&mut self, t: f64);
}

/// Simulated time. With a finite `speed` the clock also sleeps so that one
/// real second covers `speed` virtual seconds.
#[derive(Debug, Clone)]
pub struct VirtualClock {
    now: f64,
    pacing: Option<(Instant, f64)>,
}

impl VirtualClock {
    pub fn new() -> Self {
        VirtualClock { now: 0.0, pacing: None }
    }

    pub fn paced(speed: f64) -> Self {
        VirtualClock {
            now: 0.0,
            pacing: speed.is_finite().then(|| (Instant::now(), speed)),
        }
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> f64 {
        self.now
    }

    fn wait_until(&mut self, t: f64) {
        if t <= self.now {
            return;
        }
        self.now = t;
        if let Some((start, speed)) = self.pacing {
            // Sleep against an absolute schedule so rounding never piles up.
            let target = start + Duration::from_secs_f64(t / speed);
            let now = Instant::now();
            if target > now {
                std::thread::sleep(target - now);
            }
        }
    }
}

/// Real time, for live sessions.
#[derive(Debug, Clone)]
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        WallClock { start: Instant::now() }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn wait_until(&mut self, t: f64) {
        let now = self.now();
        if t > now {
            std::thread::sleep(Duration::from_secs_f64(t - now));
        }
    }
}

/// A user's answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserReply {
    Label(String),
    FreeText(String),
}

/// A question waiting for an answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub seq: u64,
    pub interaction_id: String,
    pub question: String,
    pub options: Vec<String>,
    pub free_text: bool,
    pub timeout_s: f64,
    /// Seconds since session start when the question times out.
    pub deadline: f64,
}

/// Where answers come from.
pub trait ResponseSource {
    fn begin(&mut self, prompt: &Prompt, at: f64);
    /// Waits until a reply arrives or the clock reaches `until`. A reply is
    /// returned with the time it arrived, which must not exceed `until`.
    fn poll_until(&mut self, until: f64, clock: &mut dyn Clock) -> Option<(f64, UserReply)>;
    fn end(&mut self);
}

/// One step of a scripted user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptStep {
    Label(String),
    FreeText(String),
    Silent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserPolicy {
    /// Answers in order; silent once the script runs out.
    Scripted(Vec<ScriptStep>),
    AlwaysPositive,
    UniformRandom,
    Silent,
}

impl UserPolicy {
    /// `always_positive`, `uniform_random`, `silent`.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "always_positive" => Some(UserPolicy::AlwaysPositive),
            "uniform_random" => Some(UserPolicy::UniformRandom),
            "silent" => Some(UserPolicy::Silent),
            _ => None,
        }
    }
}

/// Parses a script: one step per line, `label:<text>`, `text:<text>` or
/// `silent`. Blank lines and `#` comments are skipped.
///
/// ```
/// use korra_core::engine::{parse_script, ScriptStep};
///
/// let steps = parse_script("label:Great\n# the name\ntext:Alex\nsilent\n").unwrap();
/// assert_eq!(steps, vec![
///     ScriptStep::Label("Great".into()),
///     ScriptStep::FreeText("Alex".into()),
///     ScriptStep::Silent,
/// ]);
/// ```
pub fn parse_script(text: &str) -> Result<Vec<ScriptStep>, EngineError> {
    let mut steps = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let step = if line == "silent" {
            ScriptStep::Silent
        } else if let Some(l) = line.strip_prefix("label:") {
            ScriptStep::Label(l.to_owned())
        } else if let Some(t) = line.strip_prefix("text:") {
            ScriptStep::FreeText(t.to_owned())
        } else {
            return Err(EngineError::Script {
                line: i + 1,
                message: format!("expected `label:`, `text:` or `silent`, got `{line}`"),
            });
        };
        steps.push(step);
    }
    Ok(steps)
}

pub fn render_script(steps: &[ScriptStep]) -> String {
    steps
        .iter()
        .map(|s| match s {
            ScriptStep::Label(l) => format!("label:{l}\n"),
            ScriptStep::FreeText(t) => format!("text:{t}\n"),
            ScriptStep::Silent => "silent\n".to_owned(),
        })
        .collect()
}

/// Name the simulated user gives to free-text questions.
pub const SIMULATED_NAME: &str = "Alex";

/// Emulated user. Every prompt draws a reply delay of 1 to 6 seconds from
/// the `user` stream whether or not the policy answers.
#[derive(Debug, Clone)]
pub struct SimulatedUser {
    policy: UserPolicy,
    position: usize,
    delay_rng: RngStream,
    choice_rng: RngStream,
    pending: Option<(f64, UserReply)>,
}

impl SimulatedUser {
    pub fn new(policy: UserPolicy, seed: u64) -> Self {
        SimulatedUser {
            policy,
            position: 0,
            delay_rng: RngStream::new(seed, "user"),
            choice_rng: RngStream::new(seed, "user-choice"),
            pending: None,
        }
    }

    fn choose(&mut self, prompt: &Prompt) -> Option<UserReply> {
        match &self.policy {
            UserPolicy::Scripted(steps) => {
                let step = steps.get(self.position).cloned().unwrap_or(ScriptStep::Silent);
                self.position += 1;
                match step {
                    ScriptStep::Label(l) => Some(UserReply::Label(l)),
                    ScriptStep::FreeText(t) => Some(UserReply::FreeText(t)),
                    ScriptStep::Silent => None,
                }
            }
            UserPolicy::Silent => None,
            _ if prompt.options.is_empty() => Some(UserReply::FreeText(SIMULATED_NAME.to_owned())),
            UserPolicy::AlwaysPositive => Some(UserReply::Label(prompt.options[0].clone())),
            UserPolicy::UniformRandom => {
                let i = self.choice_rng.index(prompt.options.len());
                Some(UserReply::Label(prompt.options[i].clone()))
            }
        }
    }
}

impl ResponseSource for SimulatedUser {
    fn begin(&mut self, prompt: &Prompt, at: f64) {
        let delay = 1.0 + 5.0 * self.delay_rng.random::<f64>();
        self.pending = self.choose(prompt).map(|reply| (at + delay, reply));
    }

    fn poll_until(&mut self, until: f64, clock: &mut dyn Clock) -> Option<(f64, UserReply)> {
        match &self.pending {
            Some((at, _)) if *at <= until => {
                clock.wait_until(*at);
                self.pending.take()
            }
            _ => {
                clock.wait_until(until);
                None
            }
        }
    }

    fn end(&mut self) {
        self.pending = None;
    }
}

/// Options offered for a question; for always-positive users the positive
/// ones come first.
fn prompt_options(it: &Interaction) -> Vec<String> {
    let mut options: Vec<&crate::model::PredefinedResponse> = it.responses.iter().collect();
    options.sort_by_key(|r| r.polarity != Polarity::Positive);
    options.into_iter().map(|r| r.label.clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cue {
    Smile,
    GazeAway,
    GazeReturn,
    SurpriseFace,
}

impl Cue {
    pub fn as_str(self) -> &'static str {
        match self {
            Cue::Smile => "smile",
            Cue::GazeAway => "gaze_away",
            Cue::GazeReturn => "gaze_return",
            Cue::SurpriseFace => "surprise_face",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    Utterance {
        interaction_id: String,
        category: Option<String>,
        /// Display text, SSML removed.
        text: String,
        ssml: String,
    },
    AwaitingResponse(Prompt),
    Response {
        seq: u64,
        interaction_id: String,
        label: Option<String>,
        text: String,
        value: Option<f64>,
    },
    Timeout {
        seq: u64,
        interaction_id: String,
    },
    Nonverbal {
        cue: Cue,
    },
    TriggerFired {
        trigger: String,
        cause: String,
    },
    QueueRegenerated {
        queue: Vec<String>,
    },
    SessionEnd {
        reason: String,
    },
}

/// An event as streamed to clients: `{at, kind, payload}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineEvent {
    pub at: f64,
    pub kind: EventKind,
}

impl EngineEvent {
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            EventKind::Utterance { .. } => "utterance",
            EventKind::AwaitingResponse(_) => "awaiting_response",
            EventKind::Response { .. } => "response",
            EventKind::Timeout { .. } => "timeout",
            EventKind::Nonverbal { .. } => "nonverbal",
            EventKind::TriggerFired { .. } => "trigger_fired",
            EventKind::QueueRegenerated { .. } => "queue_regenerated",
            EventKind::SessionEnd { .. } => "session_end",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(&self.kind).expect("events serialize");
        let obj = value.as_object_mut().expect("adjacently tagged");
        obj.insert("at".into(), serde_json::json!(self.at));
        obj.entry("payload").or_insert(serde_json::Value::Null);
        value
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, serde_json::Error> {
        let at = value
            .get("at")
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| serde::de::Error::missing_field("at"))?;
        let mut body = value.clone();
        if let Some(obj) = body.as_object_mut() {
            obj.remove("at");
            if obj.get("payload").is_some_and(serde_json::Value::is_null) {
                obj.remove("payload");
            }
        }
        Ok(EngineEvent {
            at,
            kind: serde_json::from_value(body)?,
        })
    }
}

impl Serialize for EngineEvent {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EngineEvent {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        EngineEvent::from_json(&value).map_err(serde::de::Error::custom)
    }
}

/// Read-only view of the engine at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub at: f64,
    pub main_distribution: BTreeMap<String, f64>,
    pub histogram_text: String,
    /// Pending queue items, display text with SSML.
    pub queue: Vec<String>,
    pub variables: BTreeMap<String, Option<f64>>,
    pub stats: InteractionStats,
    pub pending_question: Option<Prompt>,
    /// Advisory weights derived from desired time shares, when configured.
    pub suggested_weights: Option<BTreeMap<String, f64>>,
    pub finished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineOptions {
    /// Emit smiles and gaze shifts.
    pub nonverbal: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions { nonverbal: true }
    }
}

type Observer = Box<dyn FnMut(&EngineEvent) + Send>;
type SnapshotSink = Box<dyn FnMut(StateSnapshot) + Send>;

struct Streams {
    content: RngStream,
    timing: RngStream,
    gates: RngStream,
    phrasing: RngStream,
}

/// Counters kept while running, reported by [`simulate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCounters {
    pub executed: u64,
    pub per_category: BTreeMap<String, u64>,
    pub questions: u64,
    pub answered: u64,
    pub timeouts: u64,
    pub depletions: u64,
    pub trigger_firings: u64,
    pub regenerations: u64,
    pub peak_queue_len: usize,
    /// Longest wait between a question timing out and the next utterance.
    pub max_gap_after_timeout: f64,
}

pub struct Engine {
    model: Arc<AgentModel>,
    session: SessionState,
    weights: CategoryWeights,
    selection: SelectionState,
    queue: InteractionsQueue,
    log: SessionLog,
    streams: Streams,
    options: EngineOptions,
    now: f64,
    next_tick: f64,
    next_smile: f64,
    next_gaze: f64,
    gaze_away: bool,
    prompt_seq: u64,
    pending: Option<Prompt>,
    last_timeout_at: Option<f64>,
    finished: bool,
    counters: RunCounters,
    observers: Vec<Observer>,
    snapshot_sink: Option<SnapshotSink>,
    step_events: Vec<EngineEvent>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("now", &self.now)
            .field("queue", &self.queue)
            .field("finished", &self.finished)
            .finish_non_exhaustive()
    }
}

impl Engine {
    /// Starts a session on an already restored state. Generates the first
    /// batch and prepends a greeting.
    pub fn new(model: Arc<AgentModel>, session: SessionState, log: SessionLog) -> Result<Self, EngineError> {
        Self::with_options(model, session, log, EngineOptions::default())
    }

    pub fn with_options(
        model: Arc<AgentModel>,
        session: SessionState,
        log: SessionLog,
        options: EngineOptions,
    ) -> Result<Self, EngineError> {
        let seed = session.seed;
        let mut engine = Engine {
            weights: CategoryWeights::from_model(&model),
            model,
            session,
            selection: SelectionState::default(),
            queue: InteractionsQueue::new(),
            log,
            streams: Streams {
                content: RngStream::new(seed, "content"),
                timing: RngStream::new(seed, "timing"),
                gates: RngStream::new(seed, "gates"),
                phrasing: RngStream::new(seed, "phrasing"),
            },
            options,
            now: 0.0,
            next_tick: 1.0,
            next_smile: f64::INFINITY,
            next_gaze: f64::INFINITY,
            gaze_away: false,
            prompt_seq: 0,
            pending: None,
            last_timeout_at: None,
            finished: false,
            counters: RunCounters::default(),
            observers: Vec::new(),
            snapshot_sink: None,
            step_events: Vec::new(),
        };
        if engine.options.nonverbal {
            let timing = engine.model.timing().clone();
            engine.next_smile = sample_interval(IntervalKind::Smile, &timing, &mut engine.streams.timing);
            engine.next_gaze = sample_interval(IntervalKind::GazeHold, &timing, &mut engine.streams.timing);
        }
        let greetings = engine.model.tuning().greetings.clone();
        let greeting = match greetings.len() {
            0 => None,
            1 => Some(greetings[0].clone()),
            n => Some(greetings[engine.streams.phrasing.index(n)].clone()),
        };
        let batch = engine.model.scheduler().queue_batch;
        let n = batch.saturating_sub(usize::from(greeting.is_some())).max(1);
        engine.regenerate(n, greeting)?;
        Ok(engine)
    }

    pub fn add_observer(&mut self, observer: impl FnMut(&EngineEvent) + Send + 'static) {
        self.observers.push(Box::new(observer));
    }

    /// Receives a fresh snapshot after every event.
    pub fn set_snapshot_sink(&mut self, sink: impl FnMut(StateSnapshot) + Send + 'static) {
        self.snapshot_sink = Some(Box::new(sink));
        self.publish_snapshot();
    }

    pub fn model(&self) -> &AgentModel {
        &self.model
    }

    pub fn session(&self) -> &SessionState {
        &self.session
    }

    pub fn queue(&self) -> &InteractionsQueue {
        &self.queue
    }

    pub fn weights(&self) -> &CategoryWeights {
        &self.weights
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn into_log(self) -> SessionLog {
        self.log
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn counters(&self) -> &RunCounters {
        &self.counters
    }

    pub fn snapshot(&self) -> StateSnapshot {
        let (main_distribution, histogram_text) = match effective_distribution(&self.weights, &self.selection.known_depleted) {
            Ok((d, _)) => (d.as_map(), d.histogram_text()),
            Err(_) => (BTreeMap::new(), String::new()),
        };
        let variables = self
            .model
            .variables()
            .iter()
            .map(|v| (v.name.clone(), self.session.variable(&self.model, &v.name)))
            .collect();
        let desired = &self.model.document().desired_time_shares;
        let suggested_weights = (!desired.is_empty())
            .then(|| suggest_weights(desired, &self.session.stats, self.model.timing().pause_new.mean).ok())
            .flatten();
        StateSnapshot {
            at: self.now,
            main_distribution,
            histogram_text,
            queue: self.queue.pending().iter().map(|i| i.display_text(&self.model)).collect(),
            variables,
            stats: self.session.stats.clone(),
            pending_question: self.pending.clone(),
            suggested_weights,
            finished: self.finished,
        }
    }

    fn publish_snapshot(&mut self) {
        if self.snapshot_sink.is_some() {
            let snap = self.snapshot();
            if let Some(sink) = &mut self.snapshot_sink {
                sink(snap);
            }
        }
    }

    fn emit(&mut self, kind: EventKind) {
        let event = EngineEvent { at: self.now, kind };
        for observer in &mut self.observers {
            observer(&event);
        }
        self.step_events.push(event);
        self.publish_snapshot();
    }

    fn record(&mut self, kind: LogKind, payload: impl Into<String>) -> Result<LogEvent, EngineError> {
        Ok(self.log.log_event(self.now, kind, payload)?)
    }

    fn unix_now(&self) -> f64 {
        self.session.session_started_at + self.now
    }

    /// Samples `n` items onto the end of the queue, optionally putting a
    /// greeting first, applies grouping rules and logs the result.
    fn regenerate(&mut self, n: usize, greeting: Option<String>) -> Result<(), EngineError> {
        self.queue.compact();
        let batch = generate_queue(
            &self.model,
            &mut self.session,
            &mut self.selection,
            &self.weights,
            n,
            &mut self.streams.content,
        );
        if let Some(dist) = &batch.distribution {
            self.record(LogKind::Histogram, histogram_block(&dist.histogram_text()))?;
        }
        for category in &batch.depletions {
            self.counters.depletions += 1;
            self.record(LogKind::Depletion, category.clone())?;
        }
        for warning in &batch.warnings {
            self.record(LogKind::Notice, warning.clone())?;
        }
        if let Some(notice) = &batch.notice {
            self.record(LogKind::Notice, notice.clone())?;
        }

        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for item in &batch.items {
            if let Some(c) = item.category() {
                *counts.entry(c.to_owned()).or_default() += 1;
            }
        }
        self.queue.extend(batch.items);
        let mut commands = Vec::new();
        if let Some(text) = greeting {
            commands.push(TuningCommand::Prepend(QueueItem::Injected(InjectedInteraction {
                id: "greeting".into(),
                category: None,
                text,
            })));
        }
        commands.extend(self.model.tuning().groups.iter().cloned().map(TuningCommand::Group));
        apply_tuning(&mut self.queue, &commands).expect("tuning only touches pending items");

        let timing = self.model.timing();
        let fit = batch_fit(
            &self.session.stats,
            &counts,
            timing.pause_new.mean,
            self.model.scheduler().default_duration_s,
        );
        let batch_len: u64 = counts.values().sum();
        self.record(LogKind::Forecast, format!("fit={fit:.1}s items={batch_len}"))?;
        self.record(LogKind::QueueSnapshot, self.queue.snapshot_text(&self.model))?;
        self.counters.regenerations += 1;
        self.counters.peak_queue_len = self.counters.peak_queue_len.max(self.queue.len());
        let queue = self.queue.pending().iter().map(|i| i.display_text(&self.model)).collect();
        self.emit(EventKind::QueueRegenerated { queue });
        Ok(())
    }

    fn top_up(&mut self) -> Result<(), EngineError> {
        let params = self.model.scheduler().clone();
        if self.queue.pending().len() >= params.queue_low_water {
            return Ok(());
        }
        self.queue.compact();
        let room = params.queue_max.saturating_sub(self.queue.len());
        let n = params.queue_batch.min(room);
        if n > 0 {
            self.regenerate(n, None)?;
        }
        Ok(())
    }

    fn resample(&mut self) -> Result<(), EngineError> {
        let removed = self.queue.discard_suffix();
        self.selection.release(&removed);
        self.queue.compact();
        let params = self.model.scheduler().clone();
        let room = params.queue_max.saturating_sub(self.queue.len());
        let n = params.queue_batch.min(room).max(1);
        self.regenerate(n, None)
    }

    fn next_timed(&self) -> f64 {
        self.next_tick.min(self.next_smile).min(self.next_gaze)
    }

    /// Moves time forward to `t`, handling ticks and nonverbal events on
    /// the way.
    fn advance_to(&mut self, t: f64, clock: &mut dyn Clock) -> Result<(), EngineError> {
        loop {
            let next = self.next_timed();
            if next > t {
                break;
            }
            clock.wait_until(next);
            self.now = self.now.max(next);
            if next == self.next_tick {
                self.next_tick += 1.0;
                let firings = on_tick(&self.model, &mut self.session, self.now);
                self.apply_firings(firings)?;
            } else if next == self.next_smile {
                let timing = self.model.timing().clone();
                self.next_smile = self.now + sample_interval(IntervalKind::Smile, &timing, &mut self.streams.timing);
                self.cue(Cue::Smile)?;
            } else {
                let timing = self.model.timing().clone();
                if self.gaze_away {
                    self.gaze_away = false;
                    self.next_gaze = self.now + sample_interval(IntervalKind::GazeHold, &timing, &mut self.streams.timing);
                    self.cue(Cue::GazeReturn)?;
                } else {
                    self.gaze_away = true;
                    self.next_gaze = self.now + timing.gaze_return_s.max(timing.floor);
                    self.cue(Cue::GazeAway)?;
                }
            }
        }
        clock.wait_until(t);
        self.now = self.now.max(t);
        Ok(())
    }

    fn cue(&mut self, cue: Cue) -> Result<(), EngineError> {
        self.record(LogKind::NonverbalCue, cue.as_str())?;
        self.emit(EventKind::Nonverbal { cue });
        Ok(())
    }

    fn apply_firings(&mut self, firings: Vec<TriggerFiring>) -> Result<(), EngineError> {
        let mut resample = false;
        for firing in firings {
            self.counters.trigger_firings += 1;
            self.record(LogKind::TriggerFired, firing.log_payload())?;
            self.emit(EventKind::TriggerFired {
                trigger: firing.trigger.clone(),
                cause: firing.cause.clone(),
            });
            for effect in firing.effects {
                match effect {
                    TriggerEffect::Update(UpdateEffect::DistributionEdit(edit)) => {
                        // Edits were validated against the model at load.
                        let _ = self.weights.apply(&edit);
                    }
                    TriggerEffect::Update(UpdateEffect::ResampleRequest) => resample = true,
                    TriggerEffect::Evaluate(EvaluateEffect::InjectInteraction(inj)) => {
                        self.queue.insert_at_cursor(QueueItem::Injected(inj));
                    }
                    TriggerEffect::Evaluate(EvaluateEffect::FacialCue(FacialCue::Surprise)) => {
                        self.cue(Cue::SurpriseFace)?;
                    }
                }
            }
        }
        if resample {
            self.resample()?;
        }
        Ok(())
    }

    fn user_name(&self) -> Option<String> {
        let fact = self.model.document().user_name_fact.as_ref()?;
        self.session.user_facts.get(fact).map(|f| f.text.clone())
    }

    /// Applies phrasing variants and the address-by-name gate.
    fn render(&mut self, it: &Interaction) -> String {
        let mut text = if it.variants.is_empty() {
            it.text.clone()
        } else {
            let k = self.streams.phrasing.index(it.variants.len() + 1);
            if k == 0 { it.text.clone() } else { it.variants[k - 1].clone() }
        };
        let addressed = gate(GateKind::AddressByName, self.model.gates(), &mut self.streams.gates);
        let name = self.user_name().filter(|_| addressed && Some(&it.id) != self.model.document().user_name_fact.as_ref());
        text = address_by_name(&text, name.as_deref());
        text
    }

    fn speak(
        &mut self,
        id: &str,
        category: Option<&str>,
        ssml: &str,
        clock: &mut dyn Clock,
    ) -> Result<(), EngineError> {
        if let Some(t) = self.last_timeout_at.take() {
            self.counters.max_gap_after_timeout = self.counters.max_gap_after_timeout.max(self.now - t);
        }
        let display = strip_ssml(ssml);
        self.record(LogKind::Utterance,
            format!("{}/{} {}", category.unwrap_or("-"), id, ssml),
        )?;
        self.emit(EventKind::Utterance {
            interaction_id: id.to_owned(),
            category: category.map(str::to_owned),
            text: display.clone(),
            ssml: ssml.to_owned(),
        });
        let words = display.split_whitespace().count() as f64;
        let speech = words / self.model.timing().words_per_second;
        self.advance_to(self.now + speech, clock)
    }

    /// Asks and waits for an answer, re-asking once on an unparsed reply.
    fn ask(
        &mut self,
        it: &Interaction,
        category: &str,
        ssml: &str,
        clock: &mut dyn Clock,
        source: &mut dyn ResponseSource,
    ) -> Result<(), EngineError> {
        for attempt in 1..=2 {
            if attempt > 1 {
                self.speak(&it.id, Some(category), ssml, clock)?;
            }
            let timeout = sample_interval(IntervalKind::ResponseTimeout, self.model.timing(), &mut self.streams.timing);
            self.prompt_seq += 1;
            let prompt = Prompt {
                seq: self.prompt_seq,
                interaction_id: it.id.clone(),
                question: strip_ssml(ssml),
                options: prompt_options(it),
                free_text: it.free_text || !it.responses.is_empty(),
                timeout_s: timeout,
                deadline: self.now + timeout,
            };
            self.counters.questions += 1;
            self.pending = Some(prompt.clone());
            self.emit(EventKind::AwaitingResponse(prompt.clone()));
            source.begin(&prompt, self.now);
            let reply = self.wait_for_reply(prompt.deadline, clock, source)?;
            source.end();
            self.pending = None;

            let Some(reply) = reply else {
                self.counters.timeouts += 1;
                self.record(LogKind::Timeout, format!("{} after={:.3}", it.id, timeout))?;
                self.emit(EventKind::Timeout {
                    seq: prompt.seq,
                    interaction_id: it.id.clone(),
                });
                self.last_timeout_at = Some(self.now);
                self.session.mark_used(&self.model, &it.id, false, self.unix_now())?;
                return Ok(());
            };

            let response = match &reply {
                UserReply::Label(l) => it.response(l),
                UserReply::FreeText(t) => it.match_free_text(t),
            };
            let accepted_free = matches!(&reply, UserReply::FreeText(_)) && it.free_text && response.is_none();
            if response.is_none() && !accepted_free {
                let (label, text) = match &reply {
                    UserReply::Label(l) => ("label", l),
                    UserReply::FreeText(t) => ("text", t),
                };
                self.record(LogKind::Unparsed,
                    format!("{} {label}={} attempt={attempt}", it.id, json_str(text)),
                )?;
                continue;
            }

            self.counters.answered += 1;
            let text = match &reply {
                UserReply::Label(l) | UserReply::FreeText(l) => l.clone(),
            };
            let fact = UserFact {
                label: response.map(|r| r.label.clone()),
                text: response.map_or(text.clone(), |r| r.label.clone()),
                polarity: response.map(|r| r.polarity),
                number: response.and_then(|r| r.number),
                at: self.unix_now(),
            };
            let mut value = None;
            if let (Some(var_name), Some(resp)) = (&it.variable, response) {
                let var = crate::model::UncertainVariable {
                    current: self.session.variable(&self.model, var_name),
                    ..self.model.variable(var_name).expect("validated").clone()
                };
                if let Ok(next) = map_response(&var, resp) {
                    let new = next.current.expect("mapping sets a value");
                    value = Some(new);
                    self.record(LogKind::VariableChange, variable_change_line(var_name, var.current, new))?;
                    self.session.variables.insert(var_name.clone(), new);
                }
            }
            let payload = match (response, value) {
                (Some(r), Some(v)) => format!("{} label={} p={v}", it.id, json_str(&r.label)),
                (Some(r), None) => format!("{} label={}", it.id, json_str(&r.label)),
                (None, _) => format!("{} text={}", it.id, json_str(&text)),
            };
            self.record(LogKind::Response, payload)?;
            self.emit(EventKind::Response {
                seq: prompt.seq,
                interaction_id: it.id.clone(),
                label: fact.label.clone(),
                text: fact.text.clone(),
                value,
            });
            self.session.user_facts.insert(it.id.clone(), fact);
            self.session.mark_used(&self.model, &it.id, true, self.unix_now())?;

            let firings = on_response(&self.model, &mut self.session, &it.id);
            self.apply_firings(firings)?;

            if let Some(reaction) = response.and_then(|r| reaction_for(it, r)) {
                let pause = sample_interval(IntervalKind::PauseReact, self.model.timing(), &mut self.streams.timing);
                self.advance_to(self.now + pause, clock)?;
                let reaction = reaction.to_owned();
                self.speak(&format!("{}:reaction", it.id), Some(category), &reaction, clock)?;
            }
            return Ok(());
        }
        // Two unusable answers: give up on the question.
        self.record(LogKind::Notice, format!("{} abandoned after unparsed answers", it.id))?;
        self.session.mark_used(&self.model, &it.id, false, self.unix_now())?;
        Ok(())
    }

    fn wait_for_reply(
        &mut self,
        deadline: f64,
        clock: &mut dyn Clock,
        source: &mut dyn ResponseSource,
    ) -> Result<Option<UserReply>, EngineError> {
        loop {
            let until = self.next_timed().min(deadline);
            if let Some((at, reply)) = source.poll_until(until, clock) {
                self.now = self.now.max(at.min(until));
                return Ok(Some(reply));
            }
            self.advance_to(until, clock)?;
            if self.now >= deadline {
                return Ok(None);
            }
        }
    }

    /// Runs one interaction from the queue and returns the events it
    /// produced.
    pub fn run_step(
        &mut self,
        clock: &mut dyn Clock,
        source: &mut dyn ResponseSource,
    ) -> Result<Vec<EngineEvent>, EngineError> {
        self.step_events.clear();
        if self.finished {
            return Ok(Vec::new());
        }
        self.queue.compact();
        self.top_up()?;
        let pause = sample_interval(IntervalKind::PauseNew, self.model.timing(), &mut self.streams.timing);
        self.advance_to(self.now + pause, clock)?;
        self.top_up()?;
        let Some(item) = self.queue.take_next() else {
            self.finish("content exhausted")?;
            return Ok(std::mem::take(&mut self.step_events));
        };
        let started = self.now;
        let model = Arc::clone(&self.model);
        match &item {
            QueueItem::Injected(inj) => {
                self.speak(&inj.id, inj.category.as_deref(), &inj.text, clock)?;
                if let Some(cat) = &inj.category {
                    self.session.stats.record_execution(cat, self.now - started);
                    self.count(cat);
                }
            }
            QueueItem::Interaction { id, category } => {
                let it = model.interaction(id).expect("queued ids come from the model");
                self.execute(it, category, clock, source)?;
                self.session.stats.record_execution(category, self.now - started);
                self.count(category);
            }
            QueueItem::Placeholder { category, variable } => {
                let chosen = fill_placeholder(&model, &self.session, category, variable, &mut self.streams.phrasing);
                if let Some(it) = chosen {
                    self.execute(it, category, clock, source)?;
                    self.session.stats.record_execution(category, self.now - started);
                    self.count(category);
                }
            }
        }
        self.queue.compact();
        self.counters.peak_queue_len = self.counters.peak_queue_len.max(self.queue.len());
        Ok(std::mem::take(&mut self.step_events))
    }

    fn count(&mut self, category: &str) {
        self.counters.executed += 1;
        *self.counters.per_category.entry(category.to_owned()).or_default() += 1;
    }

    fn execute(
        &mut self,
        it: &Interaction,
        category: &str,
        clock: &mut dyn Clock,
        source: &mut dyn ResponseSource,
    ) -> Result<(), EngineError> {
        let ssml = self.render(it);
        self.speak(&it.id, Some(category), &ssml, clock)?;
        if it.is_question() {
            self.ask(it, category, &ssml, clock, source)?;
        } else {
            self.session.mark_used(&self.model, &it.id, false, self.unix_now())?;
        }
        if it.kind == InteractionKind::Joke && gate(GateKind::JokeClarify, self.model.gates(), &mut self.streams.gates) {
            let phrases = &self.model.gates().joke_clarifications;
            if !phrases.is_empty() {
                let phrase = phrases[self.streams.phrasing.index(phrases.len())].clone();
                self.speak(&format!("{}:clarify", it.id), Some(category), &phrase, clock)?;
            }
        }
        Ok(())
    }

    /// Ends the session.
    pub fn finish(&mut self, reason: &str) -> Result<(), EngineError> {
        if self.finished {
            return Ok(());
        }
        self.finished = true;
        self.record(LogKind::Notice, format!("session end: {reason}"))?;
        self.emit(EventKind::SessionEnd {
            reason: reason.to_owned(),
        });
        Ok(())
    }
}

/// Resolves the `{user_name}` slot, or prefixes the name when the text has
/// no slot. Without a name the slot and its comma are dropped.
pub fn address_by_name(text: &str, name: Option<&str>) -> String {
    const SLOT: &str = "{user_name}";
    match (text.contains(SLOT), name) {
        (true, Some(n)) => text.replace(SLOT, n),
        (true, None) => text
            .replace(&format!("{SLOT}, "), "")
            .replace(&format!(", {SLOT}"), "")
            .replace(SLOT, "")
            .trim()
            .to_owned(),
        (false, Some(n)) => {
            let mut chars = text.chars();
            let lowered = match (chars.next(), chars.clone().next()) {
                (Some(first), Some(second)) if first.is_uppercase() && second.is_lowercase() => {
                    format!("{}{}", first.to_lowercase(), chars.as_str())
                }
                _ => text.to_owned(),
            };
            format!("{n}, {lowered}")
        }
        (false, None) => text.to_owned(),
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

/// Summary of a simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub duration_s: f64,
    pub ended_at: f64,
    pub counters: RunCounters,
    pub queue_max: usize,
    pub finished_early: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub duration_s: f64,
    pub seed: u64,
    /// Virtual seconds per real second; infinite means no pacing.
    pub speed: f64,
    pub options: EngineOptions,
}

impl SimConfig {
    pub fn new(duration_s: f64, seed: u64) -> Self {
        SimConfig {
            duration_s,
            seed,
            speed: f64::INFINITY,
            options: EngineOptions::default(),
        }
    }

    pub fn with_speed(mut self, speed: f64) -> Self {
        self.speed = speed;
        self
    }
}

/// Unix time stamped on simulated sessions, so runs never depend on the
/// wall clock.
pub const SIMULATION_EPOCH: f64 = 1_700_000_000.0;

/// Runs a headless session from a fresh state.
pub fn simulate(model: Arc<AgentModel>, policy: UserPolicy, config: SimConfig) -> Result<(SessionLog, SimReport), EngineError> {
    if !(config.speed >= 1.0) {
        return Err(EngineError::Config(format!("speed must be at least 1, got {}", config.speed)));
    }
    if !(config.duration_s > 0.0) {
        return Err(EngineError::Config("duration must be positive".into()));
    }
    let session = SessionState::fresh(&model, config.seed, SIMULATION_EPOCH);
    let log = SessionLog::new(config.seed, &wall_clock_stamp());
    let queue_max = model.scheduler().queue_max;
    let mut engine = Engine::with_options(model, session, log, config.options)?;
    let mut clock = VirtualClock::paced(config.speed);
    let mut user = SimulatedUser::new(policy, config.seed);
    while !engine.is_finished() && engine.now() < config.duration_s {
        engine.run_step(&mut clock, &mut user)?;
    }
    let finished_early = engine.is_finished();
    engine.finish("duration reached")?;
    let report = SimReport {
        seed: config.seed,
        duration_s: config.duration_s,
        ended_at: engine.now(),
        counters: engine.counters().clone(),
        queue_max,
        finished_early,
    };
    Ok((engine.into_log(), report))
}

/// Unix seconds as text, for log headers.
pub fn wall_clock_stamp() -> String {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_else(|_| "0".into())
}

/// The user's side of a logged session, in prompt order.
pub fn replay_script(events: &[LogEvent]) -> Vec<ScriptStep> {
    let quoted = |payload: &str, key: &str| -> Option<String> {
        let start = payload.find(&format!("{key}=\""))? + key.len() + 1;
        let mut de = serde_json::Deserializer::from_str(&payload[start..]).into_iter::<String>();
        de.next()?.ok()
    };
    events
        .iter()
        .filter_map(|e| match e.kind {
            LogKind::Timeout => Some(ScriptStep::Silent),
            LogKind::Response | LogKind::Unparsed => {
                if let Some(l) = quoted(&e.payload, "label") {
                    Some(ScriptStep::Label(l))
                } else {
                    quoted(&e.payload, "text").map(ScriptStep::FreeText)
                }
            }
            _ => None,
        })
        .collect()
}

/// Parses a log and extracts its replay script.
pub fn replay_script_from_text(text: &str) -> Result<Vec<ScriptStep>, EngineError> {
    Ok(replay_script(&parse_log(text)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> Arc<AgentModel> {
        Arc::new(AgentModel::demo())
    }

    #[test]
    fn address_by_name_variants() {
        assert_eq!(address_by_name("How are you today?", Some("Alex")), "Alex, how are you today?");
        assert_eq!(address_by_name("I am 30 years old.", Some("Alex")), "Alex, I am 30 years old.");
        assert_eq!(address_by_name("{user_name}, look!", None), "look!");
        assert_eq!(address_by_name("Look, {user_name}!", Some("Alex")), "Look, Alex!");
        assert_eq!(address_by_name("Plain.", None), "Plain.");
    }

    #[test]
    fn first_queue_starts_with_greeting() {
        let model = demo();
        let session = SessionState::fresh(&model, 5, SIMULATION_EPOCH);
        let engine = Engine::new(model.clone(), session, SessionLog::new(5, "t")).unwrap();
        let pending = engine.queue().pending();
        assert_eq!(pending.len(), model.scheduler().queue_batch);
        assert_eq!(pending[0].display_text(&model), "Hi");
        let log = engine.log().body_text();
        assert!(log.contains("***** BEGIN Regenerating interactions *****\nHistogram:\n"));
        assert!(log.contains("Interactions queue:\n1. Hi\n2. "));
    }

    #[test]
    fn silent_user_never_blocks() {
        let (_, report) = simulate(demo(), UserPolicy::Silent, SimConfig::new(1800.0, 3)).unwrap();
        let c = &report.counters;
        assert!(c.questions > 0);
        assert_eq!(c.timeouts, c.questions);
        assert_eq!(c.answered, 0);
        let t = AgentModel::demo().timing().clone();
        assert!(c.max_gap_after_timeout <= t.pause_new.mean + 6.0 * t.pause_new.std_dev());
    }

    #[test]
    fn answered_question_updates_variable_and_reacts() {
        let model = demo();
        let (log, _) = simulate(model, UserPolicy::AlwaysPositive, SimConfig::new(3600.0, 11)).unwrap();
        let text = log.body_text();
        assert!(text.contains("variable_change InAGoodMood: unset -> 0.9"), "{text}");
        assert!(text.contains(":reaction "));
    }

    #[test]
    fn same_seed_same_log() {
        let run = || {
            simulate(demo(), UserPolicy::UniformRandom, SimConfig::new(1200.0, 21))
                .unwrap()
                .0
                .body_text()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nonverbal_draws_do_not_move_content() {
        let content = |nonverbal: bool| {
            let mut cfg = SimConfig::new(900.0, 8);
            cfg.options.nonverbal = nonverbal;
            let (log, _) = simulate(demo(), UserPolicy::AlwaysPositive, cfg).unwrap();
            log.events()
                .iter()
                .filter(|e| e.kind == LogKind::Utterance)
                .map(|e| e.payload.clone())
                .collect::<Vec<_>>()
        };
        let with = content(true);
        let without = content(false);
        let n = with.len().min(without.len());
        assert!(n > 20);
        assert_eq!(with[..n], without[..n]);
    }

    #[test]
    fn event_json_shape() {
        let e = EngineEvent {
            at: 1.5,
            kind: EventKind::Nonverbal { cue: Cue::Smile },
        };
        let v = e.to_json();
        assert_eq!(v, serde_json::json!({"at": 1.5, "kind": "nonverbal", "payload": {"cue": "smile"}}));
        assert_eq!(EngineEvent::from_json(&v).unwrap(), e);
        let end = EngineEvent {
            at: 2.0,
            kind: EventKind::SessionEnd { reason: "x".into() },
        };
        assert_eq!(EngineEvent::from_json(&end.to_json()).unwrap(), end);
    }

    #[test]
    fn speed_below_one_is_rejected() {
        let err = simulate(demo(), UserPolicy::Silent, SimConfig::new(10.0, 1).with_speed(0.5)).unwrap_err();
        assert!(matches!(err, EngineError::Config(_)));
    }
}
