//! Model triggers: the only runtime mechanisms that change the Main
//! Distribution or add interactions.
//!
//! | | update trigger | evaluate trigger |
//! |---|---|---|
//! | tracks responses | yes | yes |
//! | requests resampling | yes | no |
//! | adds an interaction | no | yes |
//! | tracks elapsed time | yes | no |
//!
//! The matrix is enforced by types: an update trigger can only produce
//! [`UpdateEffect`]s and an evaluate trigger only [`EvaluateEffect`]s.
//!
//! ```compile_fail
//! use korra_core::triggers::EvaluateEffect;
//! // Evaluate triggers have no way to ask for resampling.
//! let _ = EvaluateEffect::ResampleRequest;
//! ```
//!
//! ```compile_fail
//! use korra_core::triggers::UpdateEffect;
//! // Update triggers cannot add interactions.
//! let _ = UpdateEffect::InjectInteraction;
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bayes::{BayesNet, NetError, ObservationSet};
use crate::model::{AgentModel, Polarity};
use crate::scheduler::InjectedInteraction;
use crate::session::{SessionState, UserFact};

fn default_true() -> bool {
    true
}

fn default_threshold() -> f64 {
    0.85
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TriggerDef {
    Update(ModelUpdateTrigger),
    Evaluate(ModelEvaluateTrigger),
}

impl TriggerDef {
    pub fn id(&self) -> &str {
        match self {
            TriggerDef::Update(t) => &t.id,
            TriggerDef::Evaluate(t) => &t.id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UpdateWatch {
    /// An answer to `fact`; any polarity when `polarity` is absent.
    Response {
        fact: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        polarity: Option<Polarity>,
    },
    /// Session time reaching `after_seconds`.
    Elapsed { after_seconds: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightEdit {
    Multiply {
        category: String,
        #[serde(rename = "multiply")]
        factor: f64,
    },
    Set {
        category: String,
        #[serde(rename = "set")]
        value: f64,
    },
}

impl WeightEdit {
    pub fn category(&self) -> &str {
        match self {
            WeightEdit::Multiply { category, .. } | WeightEdit::Set { category, .. } => category,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelUpdateTrigger {
    pub id: String,
    pub watch: UpdateWatch,
    pub edits: Vec<WeightEdit>,
    #[serde(default = "default_true")]
    pub resample: bool,
    /// Fire at most once per session. Elapsed-time triggers always do.
    #[serde(default)]
    pub once: bool,
}

impl ModelUpdateTrigger {
    pub fn effects(&self) -> Vec<UpdateEffect> {
        let mut out: Vec<UpdateEffect> = self.edits.iter().cloned().map(UpdateEffect::DistributionEdit).collect();
        if self.resample {
            out.push(UpdateEffect::ResampleRequest);
        }
        out
    }

    fn fires_once(&self) -> bool {
        self.once || matches!(self.watch, UpdateWatch::Elapsed { .. })
    }
}

/// Maps an answered question onto a network node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetBinding {
    pub fact: String,
    pub node: String,
    /// With a cutoff the node is true when the numeric answer is below it;
    /// otherwise the node is true for a positive answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
}

impl NetBinding {
    pub fn observe(&self, fact: &UserFact) -> Option<bool> {
        match self.cutoff {
            Some(cut) => fact.number.map(|n| n < cut),
            None => fact.polarity.map(|p| p == Polarity::Positive),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectSpec {
    pub category: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEvaluateTrigger {
    pub id: String,
    pub net: String,
    pub bindings: Vec<NetBinding>,
    /// Fires when the contradiction score exceeds this value.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub inject: InjectSpec,
}

impl ModelEvaluateTrigger {
    /// Observations built from the accumulated answers.
    pub fn observations(&self, session: &SessionState) -> ObservationSet {
        let mut obs = ObservationSet::new();
        for binding in &self.bindings {
            if let Some(value) = session.user_facts.get(&binding.fact).and_then(|f| binding.observe(f)) {
                obs.insert(&binding.node, value);
            }
        }
        obs
    }

    /// Contradiction score of the accumulated answers, `None` before any
    /// bound question is answered.
    pub fn score(&self, model: &AgentModel, session: &SessionState) -> Result<Option<(ObservationSet, f64)>, NetError> {
        let obs = self.observations(session);
        if obs.is_empty() {
            return Ok(None);
        }
        let net = net_with_variable_priors(model, session, &self.net)?;
        let score = net.contradiction_score(&obs)?;
        Ok(Some((obs, score)))
    }

    pub fn effects(&self, ordinal: usize) -> Vec<EvaluateEffect> {
        vec![
            EvaluateEffect::FacialCue(FacialCue::Surprise),
            EvaluateEffect::InjectInteraction(InjectedInteraction {
                id: format!("{}#{ordinal}", self.id),
                category: Some(self.inject.category.clone()),
                text: self.inject.text.clone(),
            }),
        ]
    }
}

/// A model network with the priors of variable-backed root nodes replaced
/// by the session's current values.
pub fn net_with_variable_priors(model: &AgentModel, session: &SessionState, name: &str) -> Result<BayesNet, NetError> {
    let net = model.net(name).ok_or_else(|| NetError::UnknownNode(name.to_owned()))?;
    let spec = model.net_spec(name).expect("spec exists for every net");
    let priors: BTreeMap<String, f64> = spec
        .prior_variables
        .iter()
        .filter_map(|(node, var)| session.variable(model, var).map(|v| (node.clone(), v)))
        .collect();
    if priors.is_empty() {
        Ok(net.clone())
    } else {
        net.with_root_priors(&priors)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacialCue {
    Surprise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum UpdateEffect {
    DistributionEdit(WeightEdit),
    ResampleRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EvaluateEffect {
    InjectInteraction(InjectedInteraction),
    FacialCue(FacialCue),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TriggerEffect {
    Update(UpdateEffect),
    Evaluate(EvaluateEffect),
}

/// One trigger firing with the reason it fired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerFiring {
    pub trigger: String,
    pub cause: String,
    pub effects: Vec<TriggerEffect>,
}

impl TriggerFiring {
    /// `<trigger> cause=<cause> effects=<e1>; <e2>` as written to the log.
    pub fn log_payload(&self) -> String {
        let effects: Vec<String> = self.effects.iter().map(describe_effect).collect();
        format!("{} cause={} effects={}", self.trigger, self.cause, effects.join("; "))
    }
}

fn describe_effect(effect: &TriggerEffect) -> String {
    match effect {
        TriggerEffect::Update(UpdateEffect::DistributionEdit(WeightEdit::Multiply { category, factor })) => {
            format!("{category} *= {factor}")
        }
        TriggerEffect::Update(UpdateEffect::DistributionEdit(WeightEdit::Set { category, value })) => {
            format!("{category} = {value}")
        }
        TriggerEffect::Update(UpdateEffect::ResampleRequest) => "resample".to_owned(),
        TriggerEffect::Evaluate(EvaluateEffect::InjectInteraction(inj)) => format!("inject {}", inj.id),
        TriggerEffect::Evaluate(EvaluateEffect::FacialCue(FacialCue::Surprise)) => "cue surprise".to_owned(),
    }
}

/// Runs the triggers interested in an answer to `fact_id`. The answer must
/// already be stored in `session.user_facts`.
///
/// Update triggers watching the fact (with matching polarity) fire in model
/// order, then every evaluate trigger bound to the fact scores the whole
/// accumulated observation set. An evaluate trigger fires at most once per
/// distinct observation set.
pub fn on_response(model: &AgentModel, session: &mut SessionState, fact_id: &str) -> Vec<TriggerFiring> {
    let Some(fact) = session.user_facts.get(fact_id).cloned() else {
        return Vec::new();
    };
    let mut firings = Vec::new();
    for def in model.triggers() {
        let TriggerDef::Update(t) = def else { continue };
        let UpdateWatch::Response { fact: watched, polarity } = &t.watch else { continue };
        if watched != fact_id || polarity.is_some_and(|p| fact.polarity != Some(p)) {
            continue;
        }
        if t.fires_once() && !session.fired_triggers.insert(t.id.clone()) {
            continue;
        }
        firings.push(TriggerFiring {
            trigger: t.id.clone(),
            cause: format!("response {fact_id}={}", fact.display_label()),
            effects: t.effects().into_iter().map(TriggerEffect::Update).collect(),
        });
    }
    for def in model.triggers() {
        let TriggerDef::Evaluate(t) = def else { continue };
        if !t.bindings.iter().any(|b| b.fact == fact_id) {
            continue;
        }
        let Ok(Some((obs, score))) = t.score(model, session) else { continue };
        if score <= t.threshold {
            continue;
        }
        let seen = session.met_fired.entry(t.id.clone()).or_default();
        if !seen.insert(obs.key()) {
            continue;
        }
        let ordinal = seen.len();
        firings.push(TriggerFiring {
            trigger: t.id.clone(),
            cause: format!("contradiction {score:.4} > {} over {}", t.threshold, obs.key()),
            effects: t.effects(ordinal).into_iter().map(TriggerEffect::Evaluate).collect(),
        });
    }
    firings
}

/// Fires elapsed-time update triggers whose time has come, in order of
/// their thresholds. `now` is seconds since the session started.
pub fn on_tick(model: &AgentModel, session: &mut SessionState, now: f64) -> Vec<TriggerFiring> {
    let mut due: Vec<&ModelUpdateTrigger> = model
        .triggers()
        .iter()
        .filter_map(|def| match def {
            TriggerDef::Update(t) => match t.watch {
                UpdateWatch::Elapsed { after_seconds } if after_seconds <= now => Some(t),
                _ => None,
            },
            TriggerDef::Evaluate(_) => None,
        })
        .filter(|t| !session.fired_triggers.contains(&t.id))
        .collect();
    due.sort_by(|a, b| elapsed_of(a).total_cmp(&elapsed_of(b)));
    due.into_iter()
        .map(|t| {
            session.fired_triggers.insert(t.id.clone());
            TriggerFiring {
                trigger: t.id.clone(),
                cause: format!("elapsed {}s", elapsed_of(t)),
                effects: t.effects().into_iter().map(TriggerEffect::Update).collect(),
            }
        })
        .collect()
}

fn elapsed_of(t: &ModelUpdateTrigger) -> f64 {
    match t.watch {
        UpdateWatch::Elapsed { after_seconds } => after_seconds,
        UpdateWatch::Response { .. } => f64::INFINITY,
    }
}
