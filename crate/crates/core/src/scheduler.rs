//! Main Distribution, Interactions Queue and within-category selection.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentModel, Interaction, Mood, SelectionPolicy};
use crate::prob::{histogram_text, FiniteDist, HistogramStyle, ProbError, RngStream};
use crate::session::SessionState;
use crate::triggers::WeightEdit;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("every category is depleted")]
    AllDepleted,
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error(transparent)]
    Prob(#[from] ProbError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TuningError {
    #[error("index {index} is inside the executed prefix (cursor {cursor})")]
    ExecutedPrefix { index: usize, cursor: usize },
    #[error("index {index} is past the end of the queue (length {len})")]
    OutOfRange { index: usize, len: usize },
}

/// Category weights before renormalization. Model update triggers edit
/// these; [`effective_distribution`] turns them into a distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryWeights {
    weights: Vec<(String, f64)>,
    fixed: BTreeSet<String>,
}

impl CategoryWeights {
    pub fn new<I, S>(weights: I, fixed: impl IntoIterator<Item = S>) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        CategoryWeights {
            weights: weights.into_iter().map(|(k, w)| (k.into(), w)).collect(),
            fixed: fixed.into_iter().map(Into::into).collect(),
        }
    }

    pub fn from_model(model: &AgentModel) -> Self {
        CategoryWeights {
            weights: model
                .categories()
                .iter()
                .map(|c| (c.name.clone(), c.base_weight))
                .collect(),
            fixed: model
                .categories()
                .iter()
                .filter(|c| c.fixed)
                .map(|c| c.name.clone())
                .collect(),
        }
    }

    pub fn get(&self, category: &str) -> Option<f64> {
        self.weights.iter().find(|(k, _)| k == category).map(|(_, w)| *w)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.weights.iter().map(|(k, w)| (k.as_str(), *w))
    }

    pub fn is_fixed(&self, category: &str) -> bool {
        self.fixed.contains(category)
    }

    pub fn fixed_set(&self) -> &BTreeSet<String> {
        &self.fixed
    }

    /// Applies a trigger edit and returns `(old, new)`.
    pub fn apply(&mut self, edit: &WeightEdit) -> Result<(f64, f64), SchedulerError> {
        let slot = self
            .weights
            .iter_mut()
            .find(|(k, _)| k == edit.category())
            .ok_or_else(|| SchedulerError::UnknownCategory(edit.category().to_owned()))?;
        let old = slot.1;
        slot.1 = match edit {
            WeightEdit::Multiply { factor, .. } => old * factor,
            WeightEdit::Set { value, .. } => *value,
        };
        Ok((old, slot.1))
    }
}

/// The distribution over categories actually sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct MainDistribution {
    dist: FiniteDist<String>,
    fixed: BTreeSet<String>,
}

impl MainDistribution {
    pub fn dist(&self) -> &FiniteDist<String> {
        &self.dist
    }

    pub fn weight(&self, category: &str) -> f64 {
        self.dist.weight_of(&category.to_owned())
    }

    pub fn fixed_set(&self) -> &BTreeSet<String> {
        &self.fixed
    }

    pub fn as_map(&self) -> BTreeMap<String, f64> {
        self.dist.entries().iter().cloned().collect()
    }

    pub fn histogram_text(&self) -> String {
        histogram_text(&self.dist, &HistogramStyle::default())
    }
}

/// Removes depleted categories and renormalizes, keeping fixed categories at
/// their exact weight. Returns a warning when only fixed categories survive
/// and the residual mass had to be spread over them.
///
/// ```
/// use std::collections::BTreeSet;
/// use korra_core::scheduler::{effective_distribution, CategoryWeights};
///
/// let weights = CategoryWeights::new([("A", 0.3), ("B", 0.4), ("C", 0.3)], ["A"]);
/// let depleted = BTreeSet::from(["C".to_owned()]);
/// let (dist, warning) = effective_distribution(&weights, &depleted).unwrap();
/// assert_eq!(dist.weight("A"), 0.3);
/// assert!((dist.weight("B") - 0.7).abs() < 1e-12);
/// assert!(warning.is_none());
/// ```
pub fn effective_distribution(
    weights: &CategoryWeights,
    depleted: &BTreeSet<String>,
) -> Result<(MainDistribution, Option<String>), SchedulerError> {
    let surviving: Vec<(&str, f64)> = weights
        .iter()
        .filter(|(k, _)| !depleted.contains(*k))
        .collect();
    let is_fixed = |k: &str| weights.is_fixed(k);
    let fixed_sum: f64 = surviving.iter().filter(|(k, _)| is_fixed(k)).map(|(_, w)| w).sum();
    let free_sum: f64 = surviving.iter().filter(|(k, _)| !is_fixed(k)).map(|(_, w)| w).sum();

    let mut warning = None;
    let entries: Vec<(String, f64)> = if free_sum > 0.0 {
        let residual = (1.0 - fixed_sum).max(0.0);
        surviving
            .iter()
            .map(|&(k, w)| {
                let weight = if is_fixed(k) { w } else { residual * w / free_sum };
                (k.to_owned(), weight)
            })
            .collect()
    } else {
        let fixed: Vec<(&str, f64)> = surviving.iter().copied().filter(|(k, w)| is_fixed(k) && *w > 0.0).collect();
        if fixed.is_empty() {
            return Err(SchedulerError::AllDepleted);
        }
        let residual = 1.0 - fixed_sum;
        if residual.abs() > crate::prob::TOLERANCE {
            warning = Some(format!(
                "only fixed categories remain; spreading residual mass {residual:.6} uniformly over them"
            ));
        }
        let share = residual / fixed.len() as f64;
        fixed.iter().map(|&(k, w)| (k.to_owned(), w + share)).collect()
    };

    let dist = FiniteDist::from_normalized(entries)?;
    Ok((
        MainDistribution {
            dist,
            fixed: weights.fixed.clone(),
        },
        warning,
    ))
}

/// An interaction created at runtime rather than declared in the model:
/// greetings and interactions added by evaluate triggers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedInteraction {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum QueueItem {
    Interaction { id: String, category: String },
    Placeholder { category: String, variable: String },
    Injected(InjectedInteraction),
}

impl QueueItem {
    pub fn category(&self) -> Option<&str> {
        match self {
            QueueItem::Interaction { category, .. } | QueueItem::Placeholder { category, .. } => Some(category),
            QueueItem::Injected(inj) => inj.category.as_deref(),
        }
    }

    pub fn interaction_id(&self) -> Option<&str> {
        match self {
            QueueItem::Interaction { id, .. } => Some(id),
            QueueItem::Injected(inj) => Some(&inj.id),
            QueueItem::Placeholder { .. } => None,
        }
    }

    /// Text shown in queue snapshots; SSML is kept.
    pub fn display_text(&self, model: &AgentModel) -> String {
        match self {
            QueueItem::Interaction { id, .. } => model
                .interaction(id)
                .map(|it| it.text.clone())
                .unwrap_or_else(|| id.clone()),
            QueueItem::Placeholder { variable, .. } => format!("###place holder for {variable}"),
            QueueItem::Injected(inj) => inj.text.clone(),
        }
    }
}

/// The buffered plan. Items before `cursor` have been executed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionsQueue {
    items: Vec<QueueItem>,
    cursor: usize,
}

impl InteractionsQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_items(items: Vec<QueueItem>) -> Self {
        InteractionsQueue { items, cursor: 0 }
    }

    pub fn items(&self) -> &[QueueItem] {
        &self.items
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn executed(&self) -> &[QueueItem] {
        &self.items[..self.cursor]
    }

    pub fn pending(&self) -> &[QueueItem] {
        &self.items[self.cursor..]
    }

    pub fn take_next(&mut self) -> Option<QueueItem> {
        let item = self.items.get(self.cursor).cloned()?;
        self.cursor += 1;
        Some(item)
    }

    pub fn push(&mut self, item: QueueItem) {
        self.items.push(item);
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = QueueItem>) {
        self.items.extend(items);
    }

    pub fn insert_at_cursor(&mut self, item: QueueItem) {
        self.items.insert(self.cursor, item);
    }

    /// Removes the unexecuted items that came from sampling, keeping injected
    /// ones in place. Returns the removed items.
    pub fn discard_suffix(&mut self) -> Vec<QueueItem> {
        let suffix = self.items.split_off(self.cursor);
        let (kept, removed): (Vec<_>, Vec<_>) = suffix
            .into_iter()
            .partition(|item| matches!(item, QueueItem::Injected(_)));
        self.items.extend(kept);
        removed
    }

    /// Forgets the executed prefix. The log keeps the history.
    pub fn compact(&mut self) {
        self.items.drain(..self.cursor);
        self.cursor = 0;
    }

    /// Numbered listing of the pending items.
    pub fn snapshot_text(&self, model: &AgentModel) -> String {
        let mut out = String::from("Interactions queue:");
        for (i, item) in self.pending().iter().enumerate() {
            out.push_str(&format!("\n{}. {}", i + 1, item.display_text(model)));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    #[default]
    Permutation,
    Uniform,
}

/// Selection state of one category.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryCursor {
    pub phase: Phase,
    /// Unvisited part of the current permutation; the next item is last.
    pub remaining: Vec<String>,
    pub last_emitted: Option<String>,
    started: bool,
}

impl CategoryCursor {
    pub fn new(policy: SelectionPolicy) -> Self {
        CategoryCursor {
            phase: match policy {
                SelectionPolicy::PermutationThenUniform => Phase::Permutation,
                SelectionPolicy::UniformNoImmediateRepeat => Phase::Uniform,
            },
            ..Self::default()
        }
    }
}

/// Picks the next interaction of a category. `candidates` lists the whole
/// category; `eligible` says which of them may be emitted now. Returns
/// `None` when nothing is eligible (the category is depleted).
///
/// A seeded permutation of the eligible items is walked first. When it runs
/// out, a new permutation starts if fresh non-repeatable items exist;
/// otherwise selection continues with weighted draws that skip the previous
/// item whenever another is available.
pub fn select_within_category<F>(
    cursor: &mut CategoryCursor,
    candidates: &[&Interaction],
    eligible: F,
    rng: &mut RngStream,
) -> Option<String>
where
    F: Fn(&Interaction) -> bool,
{
    let by_id = |id: &str| candidates.iter().find(|it| it.id == id).copied();
    if cursor.phase == Phase::Permutation {
        while let Some(id) = cursor.remaining.pop() {
            if by_id(&id).is_some_and(&eligible) {
                cursor.last_emitted = Some(id.clone());
                return Some(id);
            }
        }
        let pool: Vec<&Interaction> = candidates.iter().copied().filter(|it| eligible(it)).collect();
        if pool.is_empty() {
            return None;
        }
        let fresh = pool.iter().any(|it| !it.is_repeatable());
        if !cursor.started || fresh {
            cursor.started = true;
            let mut order: Vec<String> = pool.iter().map(|it| it.id.clone()).collect();
            rng.shuffle(&mut order);
            let n = order.len();
            if n >= 2 && cursor.last_emitted.as_deref() == Some(order[n - 1].as_str()) {
                order.swap(n - 1, 0);
            }
            let id = order.pop().expect("pool is not empty");
            cursor.remaining = order;
            cursor.last_emitted = Some(id.clone());
            return Some(id);
        }
        cursor.phase = Phase::Uniform;
    }

    let pool: Vec<&Interaction> = candidates.iter().copied().filter(|it| eligible(it)).collect();
    if pool.is_empty() {
        return None;
    }
    let draw_from: Vec<(&str, f64)> = if pool.len() >= 2 {
        pool.iter()
            .filter(|it| cursor.last_emitted.as_deref() != Some(it.id.as_str()))
            .map(|it| (it.id.as_str(), it.weight))
            .collect()
    } else {
        vec![(pool[0].id.as_str(), pool[0].weight)]
    };
    let dist = FiniteDist::from_weighted(draw_from).expect("weights validated positive");
    let id = (*dist.sample_ref(rng)).to_owned();
    cursor.last_emitted = Some(id.clone());
    Some(id)
}

/// Scheduler bookkeeping that lives for one session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    pub cursors: BTreeMap<String, CategoryCursor>,
    /// Non-repeatable interactions currently sitting in the queue.
    pub reserved: BTreeSet<String>,
    /// Categories found empty at draw time.
    pub known_depleted: BTreeSet<String>,
}

impl SelectionState {
    /// Releases items that left the queue without being executed.
    pub fn release(&mut self, removed: &[QueueItem]) {
        for item in removed {
            if let QueueItem::Interaction { id, .. } = item {
                self.reserved.remove(id);
            }
        }
        self.known_depleted.clear();
    }
}

/// Result of sampling a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedBatch {
    pub items: Vec<QueueItem>,
    /// Effective distribution at the start of the batch.
    pub distribution: Option<MainDistribution>,
    /// One entry per failed draw, in order.
    pub depletions: Vec<String>,
    pub warnings: Vec<String>,
    /// Set when content ran out before `n` items were produced.
    pub notice: Option<String>,
}

/// Samples up to `n` items. Each draw picks a category from the effective
/// distribution and then an interaction inside it; a category found empty
/// is counted in the session statistics and the draw is retried.
pub fn generate_queue(
    model: &AgentModel,
    session: &mut SessionState,
    selection: &mut SelectionState,
    weights: &CategoryWeights,
    n: usize,
    rng: &mut RngStream,
) -> GeneratedBatch {
    let mut batch = GeneratedBatch {
        items: Vec::with_capacity(n),
        distribution: None,
        depletions: Vec::new(),
        warnings: Vec::new(),
        notice: None,
    };
    'draws: while batch.items.len() < n {
        loop {
            let (dist, warning) = match effective_distribution(weights, &selection.known_depleted) {
                Ok(found) => found,
                Err(_) => {
                    batch.notice = Some(format!(
                        "content exhausted: generated {} of {n} items",
                        batch.items.len()
                    ));
                    break 'draws;
                }
            };
            if let Some(w) = warning {
                if !batch.warnings.contains(&w) {
                    batch.warnings.push(w);
                }
            }
            let category = dist.dist().sample(rng);
            if batch.distribution.is_none() {
                batch.distribution = Some(dist);
            }
            let cat = model.category(&category).expect("weights come from the model");
            if let Some(variable) = &cat.placeholder_for {
                batch.items.push(QueueItem::Placeholder {
                    category,
                    variable: variable.clone(),
                });
                break;
            }
            let candidates: Vec<&Interaction> = model.interactions_in(&category).collect();
            let cursor = selection
                .cursors
                .entry(category.clone())
                .or_insert_with(|| CategoryCursor::new(cat.selection));
            let reserved = &selection.reserved;
            let eligible =
                |it: &Interaction| it.is_repeatable() || (!session.is_used(&it.id) && !reserved.contains(&it.id));
            match select_within_category(cursor, &candidates, eligible, rng) {
                Some(id) => {
                    if !model.interaction(&id).is_some_and(Interaction::is_repeatable) {
                        selection.reserved.insert(id.clone());
                    }
                    batch.items.push(QueueItem::Interaction { id, category });
                    break;
                }
                None => {
                    session.stats.record_depletion(&category);
                    selection.known_depleted.insert(category.clone());
                    batch.depletions.push(category);
                }
            }
        }
    }
    batch
}

/// Picks the concrete expression for a state-dependent placeholder:
/// positive when the variable is at least 0.5, negative below, neutral
/// when it has never been set or no expression of the wanted mood exists.
pub fn fill_placeholder<'a>(
    model: &'a AgentModel,
    session: &SessionState,
    category: &str,
    variable: &str,
    rng: &mut RngStream,
) -> Option<&'a Interaction> {
    let wanted = match session.variable(model, variable) {
        Some(v) if v >= 0.5 => Mood::Positive,
        Some(_) => Mood::Negative,
        None => Mood::Neutral,
    };
    let with_mood = |mood: Mood| -> Vec<&'a Interaction> {
        model
            .interactions_in(category)
            .filter(|it| it.mood.unwrap_or(Mood::Neutral) == mood)
            .collect()
    };
    let mut pool = with_mood(wanted);
    if pool.is_empty() {
        pool = with_mood(Mood::Neutral);
    }
    if pool.is_empty() {
        pool = model.interactions_in(category).collect();
    }
    match pool.len() {
        0 => None,
        1 => Some(pool[0]),
        n => Some(pool[rng.index(n)]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemoveFilter {
    Category(String),
    Interaction(String),
}

impl RemoveFilter {
    fn matches(&self, item: &QueueItem) -> bool {
        match self {
            RemoveFilter::Category(c) => item.category() == Some(c.as_str()),
            RemoveFilter::Interaction(id) => item.interaction_id() == Some(id.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningCommand {
    /// Insert at the cursor so the item runs next.
    Prepend(QueueItem),
    /// Drop every pending item matching the filter.
    Remove(RemoveFilter),
    /// Make the listed interactions contiguous, in this order, at the
    /// position of the first of them.
    Group(Vec<String>),
    InsertAt { index: usize, item: QueueItem },
    RemoveAt(usize),
}

/// Applies tuning commands to the pending part of the queue. Returns the
/// items removed.
pub fn apply_tuning(
    queue: &mut InteractionsQueue,
    commands: &[TuningCommand],
) -> Result<Vec<QueueItem>, TuningError> {
    let mut removed = Vec::new();
    for command in commands {
        let cursor = queue.cursor;
        match command {
            TuningCommand::Prepend(item) => queue.insert_at_cursor(item.clone()),
            TuningCommand::Remove(filter) => {
                let mut i = cursor;
                while i < queue.items.len() {
                    if filter.matches(&queue.items[i]) {
                        removed.push(queue.items.remove(i));
                    } else {
                        i += 1;
                    }
                }
            }
            TuningCommand::Group(ids) => group_items(queue, ids),
            TuningCommand::InsertAt { index, item } => {
                if *index < cursor {
                    return Err(TuningError::ExecutedPrefix { index: *index, cursor });
                }
                if *index > queue.items.len() {
                    return Err(TuningError::OutOfRange {
                        index: *index,
                        len: queue.items.len(),
                    });
                }
                queue.items.insert(*index, item.clone());
            }
            TuningCommand::RemoveAt(index) => {
                if *index < cursor {
                    return Err(TuningError::ExecutedPrefix { index: *index, cursor });
                }
                if *index >= queue.items.len() {
                    return Err(TuningError::OutOfRange {
                        index: *index,
                        len: queue.items.len(),
                    });
                }
                removed.push(queue.items.remove(*index));
            }
        }
    }
    Ok(removed)
}

fn group_items(queue: &mut InteractionsQueue, ids: &[String]) {
    let cursor = queue.cursor;
    let positions: Vec<usize> = ids
        .iter()
        .filter_map(|id| {
            queue.items[cursor..]
                .iter()
                .position(|item| item.interaction_id() == Some(id.as_str()))
                .map(|p| p + cursor)
        })
        .collect();
    if positions.len() < 2 {
        return;
    }
    let anchor = *positions.iter().min().expect("at least two positions");
    let mut sorted = positions.clone();
    sorted.sort_unstable();
    let mut members = Vec::with_capacity(sorted.len());
    for &p in sorted.iter().rev() {
        members.push((p, queue.items.remove(p)));
    }
    // Restore group order.
    let ordered: Vec<QueueItem> = positions
        .iter()
        .map(|p| members.iter().find(|(q, _)| q == p).expect("removed above").1.clone())
        .collect();
    for (offset, item) in ordered.into_iter().enumerate() {
        queue.items.insert(anchor + offset, item);
    }
}

/// Probability that an interaction used `elapsed` seconds ago is offered
/// again: `1 - exp(-elapsed / tau)`.
pub fn reuse_probability(elapsed: f64, tau: f64) -> f64 {
    if elapsed <= 0.0 {
        return 0.0;
    }
    -(-elapsed / tau).exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InteractionKind;
    use proptest::prelude::*;

    fn set(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn effective_distribution_examples() {
        let w = CategoryWeights::new([("A", 0.5), ("B", 0.3), ("C", 0.2)], Vec::<&str>::new());
        let (d, _) = effective_distribution(&w, &set(&["C"])).unwrap();
        assert!((d.weight("A") - 0.625).abs() < 1e-12);
        assert!((d.weight("B") - 0.375).abs() < 1e-12);
        assert_eq!(d.weight("C"), 0.0);

        let (d, warn) = effective_distribution(&w, &set(&[])).unwrap();
        assert!(warn.is_none());
        for (k, v) in w.iter() {
            assert!((d.weight(k) - v).abs() < 1e-12);
        }

        let f = CategoryWeights::new([("A", 0.3), ("B", 0.4), ("C", 0.3)], ["A"]);
        let (d, _) = effective_distribution(&f, &set(&["C"])).unwrap();
        assert_eq!(d.weight("A"), 0.3);
        assert!((d.weight("B") - 0.7).abs() < 1e-9);
    }

    #[test]
    fn only_fixed_left_spreads_residual() {
        let f = CategoryWeights::new([("A", 0.2), ("B", 0.2), ("C", 0.6)], ["A", "B"]);
        let (d, warn) = effective_distribution(&f, &set(&["C"])).unwrap();
        assert!(warn.is_some());
        assert!((d.weight("A") - 0.5).abs() < 1e-12);
        assert_eq!(
            effective_distribution(&f, &set(&["A", "B", "C"])),
            Err(SchedulerError::AllDepleted)
        );
    }

    #[test]
    fn weight_edits() {
        let mut w = CategoryWeights::new([("MakeSuggestion", 0.375), ("Other", 0.625)], Vec::<&str>::new());
        let edit = WeightEdit::Multiply {
            category: "MakeSuggestion".into(),
            factor: 0.5,
        };
        assert_eq!(w.apply(&edit).unwrap(), (0.375, 0.1875));
        let (d, _) = effective_distribution(&w, &BTreeSet::new()).unwrap();
        assert!((d.weight("MakeSuggestion") - 0.1875 / 0.8125).abs() < 1e-12);
    }

    fn items(n: usize, repeatable: bool) -> Vec<Interaction> {
        (0..n)
            .map(|i| Interaction {
                id: format!("i{i}"),
                category: "C".into(),
                kind: InteractionKind::Statement,
                text: format!("Item {i}."),
                variants: vec![],
                responses: vec![],
                reactions: None,
                repeatable: Some(repeatable),
                variable: None,
                free_text: false,
                weight: 1.0,
                mood: None,
            })
            .collect()
    }

    #[test]
    fn permutation_then_uniform() {
        let pool = items(3, true);
        let refs: Vec<&Interaction> = pool.iter().collect();
        let mut cursor = CategoryCursor::new(SelectionPolicy::PermutationThenUniform);
        let mut rng = RngStream::new(4, "content");
        let drawn: Vec<String> = (0..50)
            .map(|_| select_within_category(&mut cursor, &refs, |_| true, &mut rng).unwrap())
            .collect();
        let first: BTreeSet<&String> = drawn[..3].iter().collect();
        assert_eq!(first.len(), 3);
        assert_eq!(cursor.phase, Phase::Uniform);
        for pair in drawn.windows(2) {
            assert_ne!(pair[0], pair[1]);
        }
    }

    #[test]
    fn single_repeatable_item_repeats() {
        let pool = items(1, true);
        let refs: Vec<&Interaction> = pool.iter().collect();
        let mut cursor = CategoryCursor::new(SelectionPolicy::UniformNoImmediateRepeat);
        let mut rng = RngStream::new(4, "content");
        for _ in 0..5 {
            assert_eq!(
                select_within_category(&mut cursor, &refs, |_| true, &mut rng).as_deref(),
                Some("i0")
            );
        }
    }

    #[test]
    fn non_repeatable_items_deplete() {
        let pool = items(4, false);
        let refs: Vec<&Interaction> = pool.iter().collect();
        let mut cursor = CategoryCursor::default();
        let mut rng = RngStream::new(9, "content");
        let mut used = BTreeSet::new();
        for _ in 0..4 {
            let id = select_within_category(&mut cursor, &refs, |it| !used.contains(&it.id), &mut rng).unwrap();
            assert!(used.insert(id));
        }
        assert_eq!(
            select_within_category(&mut cursor, &refs, |it| !used.contains(&it.id), &mut rng),
            None
        );
    }

    fn queue_of(ids: &[&str]) -> InteractionsQueue {
        InteractionsQueue::from_items(
            ids.iter()
                .map(|id| QueueItem::Interaction {
                    id: id.to_string(),
                    category: if id.starts_with('s') { "S".into() } else { "T".into() },
                })
                .collect(),
        )
    }

    fn ids(q: &InteractionsQueue) -> Vec<&str> {
        q.pending().iter().filter_map(QueueItem::interaction_id).collect()
    }

    #[test]
    fn tuning_commands() {
        let mut q = queue_of(&["t1", "s1", "bot_name", "t2", "ask_name", "s2"]);
        let greet = QueueItem::Injected(InjectedInteraction {
            id: "greeting".into(),
            category: None,
            text: "Hi".into(),
        });
        apply_tuning(&mut q, &[TuningCommand::Prepend(greet)]).unwrap();
        assert_eq!(ids(&q)[0], "greeting");

        apply_tuning(&mut q, &[TuningCommand::Group(vec!["ask_name".into(), "bot_name".into()])]).unwrap();
        assert_eq!(ids(&q), ["greeting", "t1", "s1", "ask_name", "bot_name", "t2", "s2"]);

        let removed = apply_tuning(&mut q, &[TuningCommand::Remove(RemoveFilter::Category("S".into()))]).unwrap();
        assert_eq!(removed.len(), 2);
        assert_eq!(q.pending().len(), 5);

        q.take_next();
        q.take_next();
        assert_eq!(
            apply_tuning(&mut q, &[TuningCommand::RemoveAt(1)]),
            Err(TuningError::ExecutedPrefix { index: 1, cursor: 2 })
        );
        let before = q.executed().to_vec();
        apply_tuning(&mut q, &[TuningCommand::RemoveAt(2)]).unwrap();
        assert_eq!(q.executed(), before.as_slice());
    }

    #[test]
    fn discard_keeps_injected_and_prefix() {
        let mut q = queue_of(&["a", "b", "c"]);
        q.take_next();
        q.insert_at_cursor(QueueItem::Injected(InjectedInteraction {
            id: "surprise#1".into(),
            category: Some("ExpressMentalState".into()),
            text: "Really?".into(),
        }));
        let removed = q.discard_suffix();
        assert_eq!(removed.len(), 2);
        assert_eq!(ids(&q), ["surprise#1"]);
        assert_eq!(q.executed().len(), 1);
        q.compact();
        assert_eq!(q.cursor(), 0);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn reuse_probability_examples() {
        assert_eq!(reuse_probability(0.0, 86_400.0), 0.0);
        assert!((reuse_probability(86_400.0, 86_400.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn effective_sums_to_one(
            raw in prop::collection::vec((0.0f64..1.0, any::<bool>(), any::<bool>()), 1..8),
        ) {
            let fixed_total: f64 = raw.iter().filter(|(_, f, _)| *f).map(|(w, _, _)| w).sum();
            prop_assume!(fixed_total <= 1.0);
            let names: Vec<String> = (0..raw.len()).map(|i| format!("c{i}")).collect();
            let weights = CategoryWeights::new(
                names.iter().zip(&raw).map(|(n, (w, _, _))| (n.clone(), *w)),
                names.iter().zip(&raw).filter(|(_, (_, f, _))| *f).map(|(n, _)| n.clone()),
            );
            let depleted: BTreeSet<String> = names.iter().zip(&raw).filter(|(_, (_, _, d))| *d).map(|(n, _)| n.clone()).collect();
            if let Ok((dist, warning)) = effective_distribution(&weights, &depleted) {
                let total: f64 = dist.dist().entries().iter().map(|(_, w)| w).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                if warning.is_none() {
                    for (n, (w, f, d)) in names.iter().zip(&raw) {
                        if *f && !*d {
                            prop_assert_eq!(dist.weight(n), *w);
                        }
                    }
                }
            }
        }

        #[test]
        fn reuse_is_monotone(a in 0.0f64..1e6, b in 0.0f64..1e6, tau in 1.0f64..1e6) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (p, q) = (reuse_probability(lo, tau), reuse_probability(hi, tau));
            prop_assert!(p <= q);
            prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&q));
        }
    }
}
