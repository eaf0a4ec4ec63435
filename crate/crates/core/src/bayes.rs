//! Small binary Bayesian networks evaluated by exact enumeration.
//!
//! A network is a topologically ordered list of [`BinaryNode`]s. The joint
//! distribution is built with [`FiniteDist::bind`], one Bernoulli per node,
//! which is exactly how the joke-telling rate is written as a chain of
//! `from ... in ...` clauses. Queries condition that joint table.
//!
//! CPT rows are indexed by the parents' truth values read as a binary number,
//! first parent most significant: for parents `[A, B]` the rows are
//! `(¬A,¬B), (¬A,B), (A,¬B), (A,B)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{bernoulli, FiniteDist, ProbError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("duplicate node name `{0}`")]
    DuplicateNode(String),
    #[error("node `{node}` references unknown parent `{parent}`")]
    UnknownParent { node: String, parent: String },
    #[error("node `{node}` has {found} CPT rows, expected {expected}")]
    CptSize {
        node: String,
        expected: usize,
        found: usize,
    },
    #[error("node `{node}` has CPT probability {value} outside [0, 1]")]
    CptRange { node: String, value: f64 },
    #[error("network contains a cycle through `{0}`")]
    Cycle(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("target node `{0}` is observed")]
    TargetObserved(String),
    #[error(transparent)]
    Prob(#[from] ProbError),
}

/// A boolean node with a conditional probability table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinaryNode {
    pub name: String,
    #[serde(default)]
    pub parents: Vec<String>,
    /// `P(node = true | parents)` per parent assignment.
    pub cpt: Vec<f64>,
}

impl BinaryNode {
    pub fn root(name: &str, prior: f64) -> Self {
        BinaryNode {
            name: name.to_owned(),
            parents: Vec::new(),
            cpt: vec![prior],
        }
    }

    pub fn with_parents(name: &str, parents: &[&str], cpt: Vec<f64>) -> Self {
        BinaryNode {
            name: name.to_owned(),
            parents: parents.iter().map(|p| (*p).to_owned()).collect(),
            cpt,
        }
    }
}

/// A validated network; nodes are stored in topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesNet {
    nodes: Vec<BinaryNode>,
    parent_index: Vec<Vec<usize>>,
}

/// Observed truth values keyed by node name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationSet(BTreeMap<String, bool>);

impl ObservationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, node: &str, value: bool) -> Self {
        self.0.insert(node.to_owned(), value);
        self
    }

    pub fn insert(&mut self, node: &str, value: bool) {
        self.0.insert(node.to_owned(), value);
    }

    pub fn get(&self, node: &str) -> Option<bool> {
        self.0.get(node).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, bool)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Canonical text form, e.g. `Age=1,HasTwitchAccount=0`.
    pub fn key(&self) -> String {
        self.0
            .iter()
            .map(|(k, v)| format!("{k}={}", u8::from(*v)))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl BayesNet {
    /// Validates `nodes` and sorts them topologically (stable with respect
    /// to the given order).
    pub fn new(nodes: Vec<BinaryNode>) -> Result<Self, NetError> {
        let mut names = BTreeSet::new();
        for node in &nodes {
            if !names.insert(node.name.clone()) {
                return Err(NetError::DuplicateNode(node.name.clone()));
            }
        }
        for node in &nodes {
            for parent in &node.parents {
                if !names.contains(parent) {
                    return Err(NetError::UnknownParent {
                        node: node.name.clone(),
                        parent: parent.clone(),
                    });
                }
            }
            let expected = 1usize << node.parents.len();
            if node.cpt.len() != expected {
                return Err(NetError::CptSize {
                    node: node.name.clone(),
                    expected,
                    found: node.cpt.len(),
                });
            }
            if let Some(&value) = node.cpt.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(NetError::CptRange {
                    node: node.name.clone(),
                    value,
                });
            }
        }

        let mut ordered: Vec<BinaryNode> = Vec::with_capacity(nodes.len());
        let mut placed = BTreeSet::new();
        let mut pending = nodes;
        while !pending.is_empty() {
            let ready = pending
                .iter()
                .position(|n| n.parents.iter().all(|p| placed.contains(p)));
            match ready {
                Some(i) => {
                    let node = pending.remove(i);
                    placed.insert(node.name.clone());
                    ordered.push(node);
                }
                None => return Err(NetError::Cycle(pending[0].name.clone())),
            }
        }

        let parent_index = ordered
            .iter()
            .map(|n| {
                n.parents
                    .iter()
                    .map(|p| ordered.iter().position(|m| &m.name == p).unwrap())
                    .collect()
            })
            .collect();
        Ok(BayesNet {
            nodes: ordered,
            parent_index,
        })
    }

    pub fn nodes(&self) -> &[BinaryNode] {
        &self.nodes
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Returns a copy with the given root priors replaced. Used to feed
    /// uncertain variables (answers mapped into [0, 1]) into a network.
    pub fn with_root_priors(&self, priors: &BTreeMap<String, f64>) -> Result<Self, NetError> {
        let mut net = self.clone();
        for (name, prior) in priors {
            let i = net
                .index_of(name)
                .ok_or_else(|| NetError::UnknownNode(name.clone()))?;
            if !(0.0..=1.0).contains(prior) {
                return Err(NetError::CptRange {
                    node: name.clone(),
                    value: *prior,
                });
            }
            if net.nodes[i].parents.is_empty() {
                net.nodes[i].cpt[0] = *prior;
            }
        }
        Ok(net)
    }

    /// `P(node = true)` given the values of the nodes before it.
    fn p_true(&self, i: usize, assignment: &[bool]) -> f64 {
        let row = self.parent_index[i]
            .iter()
            .fold(0usize, |row, &p| (row << 1) | usize::from(assignment[p]));
        self.nodes[i].cpt[row]
    }

    /// Joint distribution over the listed nodes (which must be closed under
    /// parents), as assignment vectors indexed like `self.nodes`; nodes left
    /// out are fixed to `false` and never consulted.
    fn joint_over(&self, keep: &[bool]) -> Result<FiniteDist<Vec<bool>>, NetError> {
        let mut joint = FiniteDist::point(vec![false; self.nodes.len()]);
        for i in 0..self.nodes.len() {
            if !keep[i] {
                continue;
            }
            joint = joint.try_bind(|assignment| {
                let node = bernoulli(self.p_true(i, assignment))?;
                Ok::<_, NetError>(node.map(|value| {
                    let mut next = assignment.clone();
                    next[i] = *value;
                    next
                }))
            })?;
        }
        Ok(joint)
    }

    /// Full joint distribution over every node.
    pub fn joint(&self) -> Result<FiniteDist<Vec<bool>>, NetError> {
        self.joint_over(&vec![true; self.nodes.len()])
    }

    fn check_observations(&self, observations: &ObservationSet) -> Result<Vec<(usize, bool)>, NetError> {
        observations
            .iter()
            .map(|(name, value)| {
                self.index_of(name)
                    .map(|i| (i, value))
                    .ok_or_else(|| NetError::UnknownNode(name.to_owned()))
            })
            .collect()
    }

    fn target_index(&self, target: &str, observations: &ObservationSet) -> Result<usize, NetError> {
        let t = self
            .index_of(target)
            .ok_or_else(|| NetError::UnknownNode(target.to_owned()))?;
        if observations.get(target).is_some() {
            return Err(NetError::TargetObserved(target.to_owned()));
        }
        Ok(t)
    }

    fn marginal(
        &self,
        joint: FiniteDist<Vec<bool>>,
        target: usize,
        observed: &[(usize, bool)],
    ) -> Result<FiniteDist<bool>, NetError> {
        let (posterior, _) = joint.condition(|a| observed.iter().all(|(i, v)| a[*i] == *v))?;
        let p = posterior.prob_of(|a| a[target]);
        Ok(bernoulli(p.clamp(0.0, 1.0))?)
    }

    /// Forward (predictive) inference. Enumerates only the ancestral closure
    /// of the target and the observed nodes; every other node sums out.
    pub fn forward_marginal(
        &self,
        target: &str,
        observations: &ObservationSet,
    ) -> Result<FiniteDist<bool>, NetError> {
        let t = self.target_index(target, observations)?;
        let observed = self.check_observations(observations)?;
        let mut keep = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = observed.iter().map(|(i, _)| *i).collect();
        stack.push(t);
        while let Some(i) = stack.pop() {
            if !keep[i] {
                keep[i] = true;
                stack.extend(self.parent_index[i].iter().copied());
            }
        }
        self.marginal(self.joint_over(&keep)?, t, &observed)
    }

    /// Backward (diagnostic) inference: `P(target | observations)` over the
    /// full joint table.
    pub fn posterior(
        &self,
        target: &str,
        observations: &ObservationSet,
    ) -> Result<FiniteDist<bool>, NetError> {
        let t = self.target_index(target, observations)?;
        let observed = self.check_observations(observations)?;
        self.marginal(self.joint()?, t, &observed)
    }

    /// Joint probability of the observed assignment.
    pub fn probability_of_evidence(&self, observations: &ObservationSet) -> Result<f64, NetError> {
        let observed = self.check_observations(observations)?;
        Ok(self
            .joint()?
            .prob_of(|a| observed.iter().all(|(i, v)| a[*i] == *v)))
    }

    /// `1 − POE(observations)`: the higher, the more surprising the answers.
    pub fn contradiction_score(&self, observations: &ObservationSet) -> Result<f64, NetError> {
        let poe = self.probability_of_evidence(observations)?;
        Ok((1.0 - poe).clamp(0.0, 1.0))
    }
}

/// Probability that the agent tells a joke given whether the user likes
/// jokes and is in a good mood.
pub fn tell_joke_prob(likes_joke: bool, in_good_mood: bool) -> f64 {
    match (likes_joke, in_good_mood) {
        (true, true) => 0.4,
        (true, false) => 0.9,
        _ => 0.2,
    }
}

/// Joke-telling rate: marginal over the likes-jokes and good-mood priors.
///
/// ```
/// use korra_core::bayes::joke_telling_rate;
///
/// let rate = joke_telling_rate(0.8, 0.6).unwrap();
/// assert!((rate.weight_of(&true) - 0.52).abs() < 1e-12);
/// ```
pub fn joke_telling_rate(likes_prior: f64, mood_prior: f64) -> Result<FiniteDist<bool>, ProbError> {
    let likes = bernoulli(likes_prior)?;
    let mood = bernoulli(mood_prior)?;
    likes.try_bind(|like| {
        mood.try_bind(|in_mood| bernoulli(tell_joke_prob(*like, *in_mood)))
    })
}

/// The joke-telling network as a [`BayesNet`].
pub fn joke_net(likes_prior: f64, mood_prior: f64) -> Result<BayesNet, NetError> {
    BayesNet::new(vec![
        BinaryNode::root("LikesJoke", likes_prior),
        BinaryNode::root("UserInAGoodMood", mood_prior),
        BinaryNode::with_parents(
            "JokeTellingRate",
            &["LikesJoke", "UserInAGoodMood"],
            vec![
                tell_joke_prob(false, false),
                tell_joke_prob(false, true),
                tell_joke_prob(true, false),
                tell_joke_prob(true, true),
            ],
        ),
    ])
}

/// Illustrative surprise network: being young and having a Twitch account
/// raise the chance of liking video games, which in turn raises the belief
/// that a video game is a good present. The numbers are demo defaults.
pub fn default_surprise_net() -> BayesNet {
    BayesNet::new(vec![
        BinaryNode::root("Age", 0.5),
        BinaryNode::root("HasTwitchAccount", 0.5),
        BinaryNode::with_parents(
            "UserLikesVideoGames",
            &["Age", "HasTwitchAccount"],
            vec![0.2, 0.7, 0.6, 0.9],
        ),
        BinaryNode::with_parents(
            "ThinksAVideoGameIsAGoodPresent",
            &["UserLikesVideoGames"],
            vec![0.1, 0.8],
        ),
    ])
    .expect("default surprise net is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-9;

    /// Independent oracle: walk all 2^n assignments and multiply CPT entries.
    fn oracle_joint(net: &BayesNet) -> Vec<(Vec<bool>, f64)> {
        let nodes = net.nodes();
        let n = nodes.len();
        (0..1usize << n)
            .map(|bits| {
                let a: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
                let mut p = 1.0;
                for (i, node) in nodes.iter().enumerate() {
                    let mut row = 0;
                    for parent in &node.parents {
                        let j = nodes.iter().position(|m| &m.name == parent).unwrap();
                        row = row * 2 + usize::from(a[j]);
                    }
                    let pt = node.cpt[row];
                    p *= if a[i] { pt } else { 1.0 - pt };
                }
                (a, p)
            })
            .collect()
    }

    fn oracle_query(net: &BayesNet, target: &str, obs: &ObservationSet) -> f64 {
        let t = net.index_of(target).unwrap();
        let rows = oracle_joint(net);
        let matches = |a: &Vec<bool>| obs.iter().all(|(n, v)| a[net.index_of(n).unwrap()] == v);
        let evidence: f64 = rows.iter().filter(|(a, _)| matches(a)).map(|(_, p)| p).sum();
        let hit: f64 = rows
            .iter()
            .filter(|(a, _)| matches(a) && a[t])
            .map(|(_, p)| p)
            .sum();
        hit / evidence
    }

    #[test]
    fn truth_table() {
        assert_eq!(tell_joke_prob(true, true), 0.4);
        assert_eq!(tell_joke_prob(true, false), 0.9);
        assert_eq!(tell_joke_prob(false, true), 0.2);
        assert_eq!(tell_joke_prob(false, false), 0.2);
    }

    #[test]
    fn joke_rate_examples() {
        let p = |l, m| joke_telling_rate(l, m).unwrap().weight_of(&true);
        assert!((p(1.0, 1.0) - 0.4).abs() < 1e-12);
        assert!((p(1.0, 0.0) - 0.9).abs() < 1e-12);
        assert!((p(0.0, 0.3) - 0.2).abs() < 1e-12);
        let hand = 0.8 * 0.6 * 0.4 + 0.8 * 0.4 * 0.9 + 0.2 * 0.6 * 0.2 + 0.2 * 0.4 * 0.2;
        assert!((p(0.8, 0.6) - hand).abs() < 1e-12);
        assert!((hand - 0.52).abs() < 1e-12);
    }

    #[test]
    fn joke_net_forward_matches_direct_rate() {
        let net = joke_net(0.8, 0.6).unwrap();
        let m = net
            .forward_marginal("JokeTellingRate", &ObservationSet::new())
            .unwrap();
        assert!((m.weight_of(&true) - 0.52).abs() < EPS);
        let cond = ObservationSet::new()
            .with("LikesJoke", true)
            .with("UserInAGoodMood", false);
        let m = net.forward_marginal("JokeTellingRate", &cond).unwrap();
        assert!((m.weight_of(&true) - 0.9).abs() < EPS);
        let root = net.forward_marginal("LikesJoke", &ObservationSet::new()).unwrap();
        assert!((root.weight_of(&true) - 0.8).abs() < EPS);
    }

    #[test]
    fn posterior_examples() {
        let net = default_surprise_net();
        let none = ObservationSet::new();
        for node in net.nodes() {
            let f = net.forward_marginal(&node.name, &none).unwrap();
            let b = net.posterior(&node.name, &none).unwrap();
            assert!((f.weight_of(&true) - b.weight_of(&true)).abs() < EPS);
        }

        let chain = BayesNet::new(vec![
            BinaryNode::root("A", 0.3),
            BinaryNode::with_parents("B", &["A"], vec![0.0, 1.0]),
        ])
        .unwrap();
        let p = chain
            .posterior("A", &ObservationSet::new().with("B", true))
            .unwrap();
        assert!((p.weight_of(&true) - 1.0).abs() < EPS);

        let twitch = ObservationSet::new().with("HasTwitchAccount", true);
        let prior = net.posterior("UserLikesVideoGames", &none).unwrap().weight_of(&true);
        let post = net.posterior("UserLikesVideoGames", &twitch).unwrap().weight_of(&true);
        assert!((post - oracle_query(&net, "UserLikesVideoGames", &twitch)).abs() < EPS);
        assert!(post > prior);
    }

    #[test]
    fn impossible_evidence_is_reported() {
        let chain = BayesNet::new(vec![
            BinaryNode::root("A", 1.0),
            BinaryNode::with_parents("B", &["A"], vec![0.0, 1.0]),
            BinaryNode::root("C", 0.5),
        ])
        .unwrap();
        let obs = ObservationSet::new().with("B", false);
        assert!(matches!(
            chain.posterior("C", &obs),
            Err(NetError::Prob(ProbError::ImpossibleEvidence))
        ));
        assert_eq!(chain.contradiction_score(&obs).unwrap(), 1.0);
    }

    #[test]
    fn contradiction_examples() {
        let det = BayesNet::new(vec![
            BinaryNode::root("A", 1.0),
            BinaryNode::with_parents("B", &["A"], vec![0.0, 1.0]),
        ])
        .unwrap();
        let obs = ObservationSet::new().with("A", true).with("B", true);
        assert!(det.contradiction_score(&obs).unwrap().abs() < EPS);

        let root = BayesNet::new(vec![BinaryNode::root("R", 0.7)]).unwrap();
        let s = root
            .contradiction_score(&ObservationSet::new().with("R", true))
            .unwrap();
        assert!((s - 0.3).abs() < EPS);

        let net = default_surprise_net();
        let base = ObservationSet::new()
            .with("Age", true)
            .with("HasTwitchAccount", true);
        let denies = base.clone().with("UserLikesVideoGames", false);
        let agrees = base.with("UserLikesVideoGames", true);
        let score_denies = net.contradiction_score(&denies).unwrap();
        let score_agrees = net.contradiction_score(&agrees).unwrap();
        assert!(score_denies > score_agrees);
        let oracle_poe = |obs: &ObservationSet| {
            oracle_joint(&net)
                .iter()
                .filter(|(a, _)| obs.iter().all(|(n, v)| a[net.index_of(n).unwrap()] == v))
                .map(|(_, p)| p)
                .sum::<f64>()
        };
        assert!((score_denies - (1.0 - oracle_poe(&denies))).abs() < EPS);
    }

    #[test]
    fn adding_an_observation_never_raises_poe() {
        let net = default_surprise_net();
        let names: Vec<String> = net.nodes().iter().map(|n| n.name.clone()).collect();
        for bits in 0..81u32 {
            // Each node: unobserved, true or false.
            let mut obs = ObservationSet::new();
            let mut code = bits;
            for name in &names {
                match code % 3 {
                    1 => obs.insert(name, true),
                    2 => obs.insert(name, false),
                    _ => {}
                }
                code /= 3;
            }
            let poe = net.probability_of_evidence(&obs).unwrap();
            for name in &names {
                if obs.get(name).is_none() {
                    for v in [true, false] {
                        let more = obs.clone().with(name, v);
                        assert!(net.probability_of_evidence(&more).unwrap() <= poe + EPS);
                    }
                }
            }
        }
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            BayesNet::new(vec![BinaryNode::root("A", 0.5), BinaryNode::root("A", 0.5)]),
            Err(NetError::DuplicateNode(_))
        ));
        assert!(matches!(
            BayesNet::new(vec![BinaryNode::with_parents("B", &["A"], vec![0.1, 0.2])]),
            Err(NetError::UnknownParent { .. })
        ));
        assert!(matches!(
            BayesNet::new(vec![
                BinaryNode::root("A", 0.5),
                BinaryNode::with_parents("B", &["A"], vec![0.1])
            ]),
            Err(NetError::CptSize { expected: 2, .. })
        ));
        assert!(matches!(
            BayesNet::new(vec![BinaryNode::root("A", 1.5)]),
            Err(NetError::CptRange { .. })
        ));
        assert!(matches!(
            BayesNet::new(vec![
                BinaryNode::with_parents("A", &["B"], vec![0.1, 0.2]),
                BinaryNode::with_parents("B", &["A"], vec![0.1, 0.2]),
            ]),
            Err(NetError::Cycle(_))
        ));
    }

    #[test]
    fn nodes_given_out_of_order_are_sorted() {
        let net = BayesNet::new(vec![
            BinaryNode::with_parents("B", &["A"], vec![0.25, 0.75]),
            BinaryNode::root("A", 0.5),
        ])
        .unwrap();
        assert_eq!(net.nodes()[0].name, "A");
        let m = net.forward_marginal("B", &ObservationSet::new()).unwrap();
        assert!((m.weight_of(&true) - 0.5).abs() < EPS);
    }

    #[test]
    fn target_must_be_unobserved() {
        let net = default_surprise_net();
        let obs = ObservationSet::new().with("Age", true);
        assert!(matches!(
            net.posterior("Age", &obs),
            Err(NetError::TargetObserved(_))
        ));
    }

    #[test]
    fn root_priors_can_be_overridden() {
        let net = joke_net(0.5, 0.5).unwrap();
        let priors = BTreeMap::from([
            ("LikesJoke".to_owned(), 0.8),
            ("UserInAGoodMood".to_owned(), 0.6),
        ]);
        let net = net.with_root_priors(&priors).unwrap();
        let m = net.forward_marginal("JokeTellingRate", &ObservationSet::new()).unwrap();
        assert!((m.weight_of(&true) - 0.52).abs() < EPS);
    }
}
