//! The agent model: categories, interactions, uncertain variables, networks,
//! triggers and tuning parameters, loaded from a JSON document.
//!
//! A model is data only. Usage state (which interactions were used, what the
//! user answered) lives in [`SessionState`](crate::session::SessionState).
//! The schema is documented in the book's *Model format* chapter; unknown
//! fields are rejected.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bayes::{BayesNet, BinaryNode, NetError};
use crate::timing::{GateParams, TimingParams};
use crate::triggers::{TriggerDef, UpdateWatch, WeightEdit};

/// The bundled demo model.
pub const DEMO_MODEL_JSON: &str = include_str!("../models/joi.json");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model document does not parse: {0}")]
    Parse(String),
    #[error("model is missing required section `{0}`")]
    MissingSection(&'static str),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: trigger capability violation: {message}")]
    Capability { path: String, message: String },
    #[error("variable `{variable}` uses the {strategy:?} strategy but the response does not carry a matching field")]
    StrategyMismatch {
        variable: String,
        strategy: UpdateStrategy,
    },
    #[error("unknown interaction `{0}`")]
    UnknownInteraction(String),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    PureFactAboutUser,
    PureFactAboutAgent,
    UncertainFactQuestion,
    Statement,
    Suggestion,
    Joke,
    AppearanceChange,
    StateExpression,
}

impl InteractionKind {
    fn repeatable_by_default(self) -> bool {
        matches!(
            self,
            InteractionKind::UncertainFactQuestion
                | InteractionKind::StateExpression
                | InteractionKind::AppearanceChange
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

/// Which branch of a state-dependent category an expression belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mood {
    Positive,
    Negative,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredefinedResponse {
    pub label: String,
    pub polarity: Polarity,
    /// Fixed value assigned to the question's variable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Signed increment applied to the question's variable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Numeric reading of the answer, used by network bindings with a cutoff.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub number: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reactions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative: Option<String>,
    /// Reaction used whatever the polarity, e.g. a punchline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub any: Option<String>,
}

fn default_weight() -> f64 {
    1.0
}

fn is_default_weight(w: &f64) -> bool {
    *w == 1.0
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interaction {
    pub id: String,
    pub category: String,
    pub kind: InteractionKind,
    /// Utterance template. May contain SSML tags and the `{user_name}` slot.
    #[serde(default)]
    pub text: String,
    /// Alternative phrasings; one of `text` and the variants is chosen
    /// uniformly at execution.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub responses: Vec<PredefinedResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reactions: Option<Reactions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeatable: Option<bool>,
    /// Uncertain variable written by this question's answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
    /// Accept any free-text answer verbatim (e.g. the user's name).
    #[serde(default, skip_serializing_if = "is_false")]
    pub free_text: bool,
    /// Relative weight in the uniform phase of within-category selection.
    #[serde(default = "default_weight", skip_serializing_if = "is_default_weight")]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mood: Option<Mood>,
}

impl Interaction {
    pub fn is_repeatable(&self) -> bool {
        self.repeatable
            .unwrap_or_else(|| self.kind.repeatable_by_default())
    }

    pub fn is_question(&self) -> bool {
        !self.responses.is_empty() || self.free_text
    }

    pub fn response(&self, label: &str) -> Option<&PredefinedResponse> {
        self.responses.iter().find(|r| r.label == label)
    }

    /// Case-insensitive label match for typed answers.
    pub fn match_free_text(&self, text: &str) -> Option<&PredefinedResponse> {
        let wanted = text.trim().to_lowercase();
        self.responses
            .iter()
            .find(|r| r.label.trim().to_lowercase() == wanted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// A seeded permutation first, then uniform draws that never repeat the
    /// previous item.
    #[default]
    PermutationThenUniform,
    /// Uniform draws excluding the previous item from the start.
    UniformNoImmediateRepeat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Category {
    pub name: String,
    pub base_weight: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub fixed: bool,
    #[serde(default)]
    pub selection: SelectionPolicy,
    /// State-dependent category: the queue holds a placeholder and the
    /// concrete expression is picked from this variable at execution time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placeholder_for: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateStrategy {
    FixedValues,
    Increment,
}

/// A probabilistic variable with a value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertainVariable {
    pub name: String,
    pub strategy: UpdateStrategy,
    /// Current value; absent until the user has answered (or the model
    /// declares an initial value).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current: Option<f64>,
}

/// Value an increment starts from when the variable has never been set.
pub const INCREMENT_START: f64 = 0.5;

/// Applies a predefined response to a variable.
///
/// ```
/// use korra_core::model::{map_response, Polarity, PredefinedResponse, UncertainVariable, UpdateStrategy};
///
/// let mood = UncertainVariable { name: "InAGoodMood".into(), strategy: UpdateStrategy::FixedValues, current: None };
/// let great = PredefinedResponse { label: "Great".into(), polarity: Polarity::Positive, value: Some(0.9), delta: None, number: None };
/// assert_eq!(map_response(&mood, &great).unwrap().current, Some(0.9));
/// ```
pub fn map_response(
    var: &UncertainVariable,
    response: &PredefinedResponse,
) -> Result<UncertainVariable, ModelError> {
    let mismatch = || ModelError::StrategyMismatch {
        variable: var.name.clone(),
        strategy: var.strategy,
    };
    let next = match (var.strategy, response.value, response.delta) {
        (UpdateStrategy::FixedValues, Some(value), None) => value,
        (UpdateStrategy::Increment, None, Some(delta)) => {
            var.current.unwrap_or(INCREMENT_START) + delta
        }
        _ => return Err(mismatch()),
    };
    Ok(UncertainVariable {
        current: Some(next.clamp(0.0, 1.0)),
        ..var.clone()
    })
}

/// Reaction matching the response polarity, falling back to the
/// polarity-independent reaction.
pub fn reaction_for<'a>(interaction: &'a Interaction, response: &PredefinedResponse) -> Option<&'a str> {
    let reactions = interaction.reactions.as_ref()?;
    let specific = match response.polarity {
        Polarity::Positive => reactions.positive.as_deref(),
        Polarity::Negative => reactions.negative.as_deref(),
    };
    specific.or(reactions.any.as_deref())
}

/// Removes SSML tags, keeping the spoken text.
pub fn strip_ssml(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_tag = false;
    for c in text.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => {
                in_tag = false;
                out.push(' ');
            }
            _ if !in_tag => out.push(c),
            _ => {}
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub name: String,
    pub nodes: Vec<BinaryNode>,
    /// Root nodes whose prior is read from an uncertain variable.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub prior_variables: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerParams {
    /// Top up the queue when fewer unexecuted items remain.
    pub queue_low_water: usize,
    pub queue_batch: usize,
    /// Hard cap on the number of items held in the queue.
    pub queue_max: usize,
    /// Time constant of the forgetfulness policy, seconds.
    pub forget_tau_s: f64,
    /// Duration estimate for categories that have never run.
    pub default_duration_s: f64,
}

impl Default for SchedulerParams {
    fn default() -> Self {
        SchedulerParams {
            queue_low_water: 3,
            queue_batch: 9,
            queue_max: 32,
            forget_tau_s: 86_400.0,
            default_duration_s: 5.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningRules {
    /// Greeting phrases; one is prepended when a session starts.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub greetings: Vec<String>,
    /// Interaction ids kept contiguous (in this order) whenever they are
    /// queued together.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub name: String,
    pub categories: Vec<Category>,
    pub interactions: Vec<Interaction>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variables: Vec<UncertainVariable>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nets: Vec<NetSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub triggers: Vec<TriggerDef>,
    #[serde(default)]
    pub timing: TimingParams,
    #[serde(default)]
    pub gates: GateParams,
    #[serde(default)]
    pub scheduler: SchedulerParams,
    #[serde(default)]
    pub tuning: TuningRules,
    /// Free-text question whose answer is the user's name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_name_fact: Option<String>,
    /// Desired share of time per category; enables weight suggestions.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub desired_time_shares: BTreeMap<String, f64>,
}

/// A validated, immutable agent model.
#[derive(Debug, Clone)]
pub struct AgentModel {
    doc: ModelDocument,
    interaction_index: HashMap<String, usize>,
    by_category: BTreeMap<String, Vec<usize>>,
    nets: BTreeMap<String, BayesNet>,
}

impl PartialEq for AgentModel {
    fn eq(&self, other: &Self) -> bool {
        self.doc == other.doc
    }
}

impl AgentModel {
    /// Parses and validates a model document.
    pub fn load(json: &str) -> Result<Self, ModelError> {
        let raw: Value = serde_json::from_str(json).map_err(|e| ModelError::Parse(e.to_string()))?;
        check_required_sections(&raw)?;
        check_trigger_capabilities(&raw)?;
        let doc: ModelDocument =
            serde_json::from_value(raw).map_err(|e| ModelError::Parse(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn load_file(path: &std::path::Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Parse(format!("{}: {e}", path.display())))?;
        Self::load(&text)
    }

    pub fn demo() -> Self {
        Self::load(DEMO_MODEL_JSON).expect("bundled demo model is valid")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("model document serializes")
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self, ModelError> {
        let mut interaction_index = HashMap::new();
        for (i, it) in doc.interactions.iter().enumerate() {
            if interaction_index.insert(it.id.clone(), i).is_some() {
                return Err(invalid(format!("interactions[{i}].id"), format!("duplicate id `{}`", it.id)));
            }
        }
        let mut by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, c) in doc.categories.iter().enumerate() {
            if by_category.insert(c.name.clone(), Vec::new()).is_some() {
                return Err(invalid(format!("categories[{i}].name"), format!("duplicate category `{}`", c.name)));
            }
        }
        for (i, it) in doc.interactions.iter().enumerate() {
            match by_category.get_mut(&it.category) {
                Some(list) => list.push(i),
                None => {
                    return Err(invalid(
                        format!("interactions[{i}].category"),
                        format!("unknown category `{}`", it.category),
                    ))
                }
            }
        }

        let mut nets = BTreeMap::new();
        for (i, spec) in doc.nets.iter().enumerate() {
            let net = BayesNet::new(spec.nodes.clone())
                .map_err(|e: NetError| invalid(format!("nets[{i}]"), e.to_string()))?;
            if nets.insert(spec.name.clone(), net).is_some() {
                return Err(invalid(format!("nets[{i}].name"), format!("duplicate net `{}`", spec.name)));
            }
        }

        let model = AgentModel {
            doc,
            interaction_index,
            by_category,
            nets,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let doc = &self.doc;
        if doc.categories.is_empty() {
            return Err(ModelError::MissingSection("categories"));
        }
        if doc.interactions.is_empty() {
            return Err(ModelError::MissingSection("interactions"));
        }

        let mut sum = 0.0;
        let mut fixed_sum = 0.0;
        for (i, c) in doc.categories.iter().enumerate() {
            if !(0.0..=1.0).contains(&c.base_weight) {
                return Err(invalid(
                    format!("categories[{i}].base_weight"),
                    format!("weight {} outside [0, 1]", c.base_weight),
                ));
            }
            sum += c.base_weight;
            if c.fixed {
                fixed_sum += c.base_weight;
            }
            if let Some(var) = &c.placeholder_for {
                if self.variable(var).is_none() {
                    return Err(invalid(
                        format!("categories[{i}].placeholder_for"),
                        format!("unknown variable `{var}`"),
                    ));
                }
                if self.by_category[&c.name].is_empty() {
                    return Err(invalid(
                        format!("categories[{i}]"),
                        "state-dependent category has no expressions",
                    ));
                }
            }
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid(
                "categories[*].base_weight",
                format!("base weights sum to {sum:.6}, expected 1"),
            ));
        }
        if fixed_sum > 1.0 + 1e-9 {
            return Err(invalid(
                "categories[*].base_weight",
                format!("fixed weights sum to {fixed_sum}, more than 1"),
            ));
        }

        let mut var_names = BTreeSet::new();
        for (i, v) in doc.variables.iter().enumerate() {
            if !var_names.insert(v.name.as_str()) {
                return Err(invalid(format!("variables[{i}].name"), format!("duplicate variable `{}`", v.name)));
            }
            if let Some(c) = v.current {
                if !(0.0..=1.0).contains(&c) {
                    return Err(invalid(format!("variables[{i}].current"), "value outside [0, 1]"));
                }
            }
        }

        for (i, it) in doc.interactions.iter().enumerate() {
            self.validate_interaction(i, it)?;
        }

        for (i, spec) in doc.nets.iter().enumerate() {
            let net = &self.nets[&spec.name];
            for (node, var) in &spec.prior_variables {
                let Some(idx) = net.index_of(node) else {
                    return Err(invalid(format!("nets[{i}].prior_variables"), format!("unknown node `{node}`")));
                };
                if !net.nodes()[idx].parents.is_empty() {
                    return Err(invalid(format!("nets[{i}].prior_variables"), format!("node `{node}` is not a root")));
                }
                if self.variable(var).is_none() {
                    return Err(invalid(format!("nets[{i}].prior_variables"), format!("unknown variable `{var}`")));
                }
            }
        }

        let mut trigger_ids = BTreeSet::new();
        for (i, t) in doc.triggers.iter().enumerate() {
            if !trigger_ids.insert(t.id()) {
                return Err(invalid(format!("triggers[{i}].id"), format!("duplicate trigger `{}`", t.id())));
            }
            self.validate_trigger(i, t)?;
        }

        doc.timing
            .validate()
            .map_err(|e| invalid("timing", e.to_string()))?;
        doc.gates.validate().map_err(|e| invalid("gates", e.to_string()))?;

        let s = &doc.scheduler;
        if s.queue_batch == 0 {
            return Err(invalid("scheduler.queue_batch", "must be positive"));
        }
        if s.queue_low_water > s.queue_max {
            return Err(invalid("scheduler.queue_low_water", "must be at most queue_max"));
        }
        if s.queue_max < s.queue_batch {
            return Err(invalid("scheduler.queue_max", "must be at least queue_batch"));
        }
        if !(s.forget_tau_s > 0.0) {
            return Err(invalid("scheduler.forget_tau_s", "must be positive"));
        }
        if !(s.default_duration_s >= 0.0) {
            return Err(invalid("scheduler.default_duration_s", "must be nonnegative"));
        }

        for (g, group) in doc.tuning.groups.iter().enumerate() {
            for id in group {
                if self.interaction(id).is_none() {
                    return Err(invalid(format!("tuning.groups[{g}]"), format!("unknown interaction `{id}`")));
                }
            }
        }
        if let Some(fact) = &doc.user_name_fact {
            match self.interaction(fact) {
                Some(it) if it.free_text => {}
                Some(_) => return Err(invalid("user_name_fact", format!("`{fact}` does not accept free text"))),
                None => return Err(invalid("user_name_fact", format!("unknown interaction `{fact}`"))),
            }
        }
        if !doc.desired_time_shares.is_empty() {
            let total: f64 = doc.desired_time_shares.values().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(invalid("desired_time_shares", format!("shares sum to {total}, expected 1")));
            }
            for cat in doc.desired_time_shares.keys() {
                if self.category(cat).is_none() {
                    return Err(invalid("desired_time_shares", format!("unknown category `{cat}`")));
                }
            }
        }
        Ok(())
    }

    fn validate_interaction(&self, i: usize, it: &Interaction) -> Result<(), ModelError> {
        let path = |field: &str| format!("interactions[{i}]{field}");
        if !(it.weight > 0.0 && it.weight.is_finite()) {
            return Err(invalid(path(".weight"), "must be positive"));
        }
        if it.text.trim().is_empty() && it.variants.is_empty() {
            return Err(invalid(path(".text"), "interaction has no text"));
        }
        match it.kind {
            InteractionKind::UncertainFactQuestion => {
                let Some(var_name) = &it.variable else {
                    return Err(invalid(path(".variable"), "uncertain fact question needs a variable"));
                };
                let Some(var) = self.variable(var_name) else {
                    return Err(invalid(path(".variable"), format!("unknown variable `{var_name}`")));
                };
                if it.responses.len() < 2 {
                    return Err(invalid(path(".responses"), "uncertain fact question needs at least two responses"));
                }
                for (r, resp) in it.responses.iter().enumerate() {
                    let ok = match var.strategy {
                        UpdateStrategy::FixedValues => {
                            resp.delta.is_none() && resp.value.is_some_and(|v| (0.0..=1.0).contains(&v))
                        }
                        UpdateStrategy::Increment => {
                            resp.value.is_none() && resp.delta.is_some_and(f64::is_finite)
                        }
                    };
                    if !ok {
                        return Err(invalid(
                            path(&format!(".responses[{r}]")),
                            format!("response must carry exactly one {:?} field", var.strategy),
                        ));
                    }
                }
            }
            _ => {
                if it.variable.is_some() {
                    return Err(invalid(path(".variable"), "only uncertain fact questions write variables"));
                }
                for (r, resp) in it.responses.iter().enumerate() {
                    if resp.value.is_some() || resp.delta.is_some() {
                        return Err(invalid(
                            path(&format!(".responses[{r}]")),
                            "value/delta only apply to uncertain fact questions",
                        ));
                    }
                }
            }
        }
        let mut labels = BTreeSet::new();
        for (r, resp) in it.responses.iter().enumerate() {
            if !labels.insert(resp.label.to_lowercase()) {
                return Err(invalid(path(&format!(".responses[{r}].label")), "duplicate label"));
            }
        }
        Ok(())
    }

    fn validate_trigger(&self, i: usize, t: &TriggerDef) -> Result<(), ModelError> {
        let path = |field: &str| format!("triggers[{i}]{field}");
        match t {
            TriggerDef::Update(mut_def) => {
                match &mut_def.watch {
                    UpdateWatch::Response { fact, .. } => match self.interaction(fact) {
                        Some(it) if it.is_question() => {}
                        Some(_) => return Err(invalid(path(".watch.fact"), format!("`{fact}` is not a question"))),
                        None => return Err(invalid(path(".watch.fact"), format!("unknown interaction `{fact}`"))),
                    },
                    UpdateWatch::Elapsed { after_seconds } => {
                        if !(*after_seconds >= 0.0) {
                            return Err(invalid(path(".watch.after_seconds"), "must be nonnegative"));
                        }
                    }
                }
                for (e, edit) in mut_def.edits.iter().enumerate() {
                    let epath = path(&format!(".edits[{e}]"));
                    match self.category(edit.category()) {
                        None => return Err(invalid(epath, format!("unknown category `{}`", edit.category()))),
                        Some(c) if c.fixed => {
                            return Err(invalid(epath, format!("category `{}` has a fixed weight", c.name)))
                        }
                        Some(_) => {}
                    }
                    match edit {
                        WeightEdit::Multiply { factor, .. } if !(*factor > 0.0 && factor.is_finite()) => {
                            return Err(invalid(epath, "factor must be positive"));
                        }
                        WeightEdit::Set { value, .. } if !(0.0..=1.0).contains(value) => {
                            return Err(invalid(epath, "set value outside [0, 1]"));
                        }
                        _ => {}
                    }
                }
            }
            TriggerDef::Evaluate(met) => {
                let Some(net) = self.net(&met.net) else {
                    return Err(invalid(path(".net"), format!("unknown net `{}`", met.net)));
                };
                if met.bindings.is_empty() {
                    return Err(invalid(path(".bindings"), "evaluate trigger needs at least one binding"));
                }
                for (b, binding) in met.bindings.iter().enumerate() {
                    let bpath = path(&format!(".bindings[{b}]"));
                    if self.interaction(&binding.fact).is_none_or(|it| !it.is_question()) {
                        return Err(invalid(bpath, format!("`{}` is not a known question", binding.fact)));
                    }
                    if net.index_of(&binding.node).is_none() {
                        return Err(invalid(bpath, format!("unknown node `{}`", binding.node)));
                    }
                }
                if !(0.0..=1.0).contains(&met.threshold) {
                    return Err(invalid(path(".threshold"), "threshold outside [0, 1]"));
                }
                if self.category(&met.inject.category).is_none() {
                    return Err(invalid(path(".inject.category"), format!("unknown category `{}`", met.inject.category)));
                }
                if met.inject.text.trim().is_empty() {
                    return Err(invalid(path(".inject.text"), "injected interaction has no text"));
                }
            }
        }
        Ok(())
    }

    pub fn document(&self) -> &ModelDocument {
        &self.doc
    }

    pub fn name(&self) -> &str {
        &self.doc.name
    }

    pub fn categories(&self) -> &[Category] {
        &self.doc.categories
    }

    pub fn category(&self, name: &str) -> Option<&Category> {
        self.doc.categories.iter().find(|c| c.name == name)
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.doc.interactions
    }

    pub fn interaction(&self, id: &str) -> Option<&Interaction> {
        self.interaction_index.get(id).map(|&i| &self.doc.interactions[i])
    }

    /// Interactions of a category in declaration order.
    pub fn interactions_in<'a>(&'a self, category: &str) -> impl Iterator<Item = &'a Interaction> + 'a {
        self.by_category
            .get(category)
            .into_iter()
            .flatten()
            .map(|&i| &self.doc.interactions[i])
    }

    pub fn variables(&self) -> &[UncertainVariable] {
        &self.doc.variables
    }

    pub fn variable(&self, name: &str) -> Option<&UncertainVariable> {
        self.doc.variables.iter().find(|v| v.name == name)
    }

    pub fn net(&self, name: &str) -> Option<&BayesNet> {
        self.nets.get(name)
    }

    pub fn net_spec(&self, name: &str) -> Option<&NetSpec> {
        self.doc.nets.iter().find(|n| n.name == name)
    }

    pub fn triggers(&self) -> &[TriggerDef] {
        &self.doc.triggers
    }

    pub fn timing(&self) -> &TimingParams {
        &self.doc.timing
    }

    pub fn gates(&self) -> &GateParams {
        &self.doc.gates
    }

    pub fn scheduler(&self) -> &SchedulerParams {
        &self.doc.scheduler
    }

    pub fn tuning(&self) -> &TuningRules {
        &self.doc.tuning
    }
}

fn check_required_sections(raw: &Value) -> Result<(), ModelError> {
    let obj = raw
        .as_object()
        .ok_or_else(|| ModelError::Parse("top level must be an object".into()))?;
    for section in ["categories", "interactions"] {
        if !obj.contains_key(section) {
            return Err(ModelError::MissingSection(section));
        }
    }
    Ok(())
}

/// Rejects trigger definitions that ask for a capability their type lacks.
/// Update triggers cannot add interactions; evaluate triggers cannot request
/// resampling or watch elapsed time.
fn check_trigger_capabilities(raw: &Value) -> Result<(), ModelError> {
    let Some(triggers) = raw.get("triggers").and_then(Value::as_array) else {
        return Ok(());
    };
    for (i, t) in triggers.iter().enumerate() {
        let kind = t.get("type").and_then(Value::as_str).unwrap_or_default();
        let has = |key: &str| t.get(key).is_some();
        let violation = |field: &str, message: &str| ModelError::Capability {
            path: format!("triggers[{i}].{field}"),
            message: message.to_owned(),
        };
        match kind {
            "update" => {
                if has("inject") {
                    return Err(violation("inject", "an update trigger cannot add an interaction"));
                }
            }
            "evaluate" => {
                if has("resample") || has("edits") {
                    return Err(violation(
                        if has("resample") { "resample" } else { "edits" },
                        "an evaluate trigger cannot change or resample the Main Distribution",
                    ));
                }
                if has("watch") || has("after_seconds") {
                    return Err(violation(
                        if has("watch") { "watch" } else { "after_seconds" },
                        "an evaluate trigger cannot track elapsed time",
                    ));
                }
            }
            _ => {}
        }
    }
    Ok(())
}
