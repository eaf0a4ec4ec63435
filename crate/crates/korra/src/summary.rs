//! Summary of a session log, for `korra stats`.

use std::collections::BTreeMap;
use std::fmt;

use korra_core::session::{LogEvent, LogKind};
use serde::Serialize;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LogSummary {
    pub events: usize,
    pub duration_s: f64,
    pub utterances_by_category: BTreeMap<String, u64>,
    pub responses: u64,
    pub timeouts: u64,
    pub unparsed: u64,
    pub regenerations: u64,
    pub depletions: BTreeMap<String, u64>,
    pub trigger_firings: BTreeMap<String, u64>,
    pub cues: BTreeMap<String, u64>,
    pub last_histogram: Option<String>,
}

pub fn summarize(events: &[LogEvent]) -> LogSummary {
    let mut s = LogSummary {
        events: events.len(),
        duration_s: events.last().map_or(0.0, |e| e.at),
        ..LogSummary::default()
    };
    for e in events {
        match e.kind {
            LogKind::Utterance => {
                // `{category}/{id} text`; reactions and clarifications carry `:` in the id.
                let head = e.payload.split(' ').next().unwrap_or_default();
                if let Some((category, id)) = head.split_once('/') {
                    if !id.contains(':') && category != "-" {
                        *s.utterances_by_category.entry(category.to_owned()).or_default() += 1;
                    }
                }
            }
            LogKind::Response => s.responses += 1,
            LogKind::Timeout => s.timeouts += 1,
            LogKind::Unparsed => s.unparsed += 1,
            LogKind::Histogram => {
                s.regenerations += 1;
                s.last_histogram = Some(e.payload.clone());
            }
            LogKind::Depletion => *s.depletions.entry(e.payload.clone()).or_default() += 1,
            LogKind::TriggerFired => {
                let id = e.payload.split(' ').next().unwrap_or_default().to_owned();
                *s.trigger_firings.entry(id).or_default() += 1;
            }
            LogKind::NonverbalCue => *s.cues.entry(e.payload.clone()).or_default() += 1,
            _ => {}
        }
    }
    s
}

impl fmt::Display for LogSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "events: {}", self.events)?;
        writeln!(f, "duration: {:.1}s", self.duration_s)?;
        writeln!(f, "responses: {}  timeouts: {}  unparsed: {}", self.responses, self.timeouts, self.unparsed)?;
        writeln!(f, "regenerations: {}", self.regenerations)?;
        let total: u64 = self.utterances_by_category.values().sum();
        writeln!(f, "interactions by category ({total}):")?;
        for (cat, n) in &self.utterances_by_category {
            writeln!(f, "  {cat} {n} ({:.1}%)", 100.0 * *n as f64 / total.max(1) as f64)?;
        }
        for (title, map) in [("depletions", &self.depletions), ("triggers", &self.trigger_firings), ("cues", &self.cues)] {
            if !map.is_empty() {
                writeln!(f, "{title}:")?;
                for (k, n) in map {
                    writeln!(f, "  {k} {n}")?;
                }
            }
        }
        if let Some(h) = &self.last_histogram {
            writeln!(f, "last distribution:")?;
            for line in h.lines().skip(2) {
                writeln!(f, "  {line}")?;
            }
        }
        Ok(())
    }
}
