//! Tabular MDP data model: reward specifications, transition branches,
//! stationary policies and seeded sampling.
//!
//! States and actions are dense integer ids; human-readable names are
//! metadata only. Rewards attach to transition branches `(s, a, s')`, so a
//! realized branch determines the reward distribution.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::RngStream;

const PROB_TOL: f64 = 1e-12;

/// Reward distribution attached to a transition branch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RewardSpec {
    Constant { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl RewardSpec {
    pub fn constant(value: f64) -> Self {
        RewardSpec::Constant { value }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        RewardSpec::Uniform { lo, hi }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            RewardSpec::Constant { value } => value,
            RewardSpec::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    /// Draw a sample using `u` uniform in `[0, 1)`.
    fn sample_with(&self, u: f64) -> f64 {
        match *self {
            RewardSpec::Constant { value } => value,
            RewardSpec::Uniform { lo, hi } => lo + (hi - lo) * u,
        }
    }

    fn validate(&self) -> Result<()> {
        if let RewardSpec::Uniform { lo, hi } = *self {
            if !(lo <= hi) {
                return Err(CoreError::InvalidModel(format!(
                    "uniform reward requires lo <= hi, got lo={lo}, hi={hi}"
                )));
            }
        }
        Ok(())
    }
}

/// One outcome of taking an action: probability, successor, reward draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub p: f64,
    pub next: usize,
    pub reward: RewardSpec,
}

/// An observed environment step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    pub was_random_action: bool,
}

/// A deterministic stationary policy: one action id per state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    pub choice: Vec<usize>,
}

impl StationaryPolicy {
    pub fn new(choice: Vec<usize>) -> Self {
        Self { choice }
    }

    pub fn action(&self, s: usize) -> usize {
        self.choice[s]
    }

    pub fn validate(&self, model: &MdpModel) -> Result<()> {
        if self.choice.len() != model.n_states() {
            return Err(CoreError::InvalidPolicy(format!(
                "policy covers {} states, model has {}",
                self.choice.len(),
                model.n_states()
            )));
        }
        for (s, &a) in self.choice.iter().enumerate() {
            if !model.actions(s).contains(&a) {
                return Err(CoreError::InvalidPolicy(format!(
                    "action {a} not available in state {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Finite tabular MDP. Immutable once built; shareable across threads.
#[derive(Clone, Debug, PartialEq)]
pub struct MdpModel {
    n_states: usize,
    /// Available action ids per state, in declaration order.
    actions: Vec<Vec<usize>>,
    /// Branches indexed `[state][action id]`; empty = action unavailable.
    branches: Vec<Vec<Vec<Branch>>>,
    state_labels: Vec<Option<String>>,
    /// Action labels indexed like `branches`.
    action_labels: Vec<Vec<Option<String>>>,
}

impl MdpModel {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// Largest action id + 1; the width needed for dense (state, action) tables.
    pub fn max_actions(&self) -> usize {
        self.actions
            .iter()
            .flat_map(|acts| acts.iter().copied())
            .max()
            .map_or(0, |a| a + 1)
    }

    pub fn actions(&self, s: usize) -> &[usize] {
        &self.actions[s]
    }

    pub fn has_action(&self, s: usize, a: usize) -> bool {
        s < self.n_states && self.actions[s].contains(&a)
    }

    pub fn branches(&self, s: usize, a: usize) -> Result<&[Branch]> {
        if !self.has_action(s, a) {
            return Err(CoreError::InvalidAction { state: s, action: a });
        }
        Ok(&self.branches[s][a])
    }

    pub fn state_label(&self, s: usize) -> String {
        self.state_labels
            .get(s)
            .and_then(|l| l.clone())
            .unwrap_or_else(|| s.to_string())
    }

    pub fn action_label(&self, s: usize, a: usize) -> String {
        self.action_labels
            .get(s)
            .and_then(|row| row.get(a))
            .and_then(|l| l.clone())
            .unwrap_or_else(|| a.to_string())
    }

    /// Total number of (state, action) pairs.
    pub fn n_state_actions(&self) -> usize {
        self.actions.iter().map(|a| a.len()).sum()
    }

    /// Sample one environment step. Consumes exactly two draws from `rng`
    /// (branch pick, reward) regardless of the branch structure, so draw
    /// slots stay aligned across policies under common random numbers.
    pub fn sample_step(&self, s: usize, a: usize, rng: &mut RngStream) -> Result<Transition> {
        let branches = self.branches(s, a)?;
        let u = rng.next_f64();
        let u_reward = rng.next_f64();
        let mut acc = 0.0;
        let mut chosen = branches.len() - 1;
        for (i, b) in branches.iter().enumerate() {
            acc += b.p;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let b = &branches[chosen];
        Ok(Transition {
            s,
            a,
            r: b.reward.sample_with(u_reward),
            s_next: b.next,
            was_random_action: false,
        })
    }

    /// Probability-weighted mean reward of `(s, a)`.
    pub fn expected_reward(&self, s: usize, a: usize) -> Result<f64> {
        let branches = self.branches(s, a)?;
        Ok(branches.iter().map(|b| b.p * b.reward.mean()).sum())
    }

    /// Row-stochastic transition matrix induced by a stationary policy.
    pub fn transition_matrix(&self, pol: &StationaryPolicy) -> Result<DMatrix<f64>> {
        pol.validate(self)?;
        let n = self.n_states;
        let mut m = DMatrix::zeros(n, n);
        for s in 0..n {
            for b in self.branches(s, pol.action(s))? {
                m[(s, b.next)] += b.p;
            }
        }
        Ok(m)
    }

    /// Expected one-step reward per state under a policy.
    pub fn expected_reward_vector(&self, pol: &StationaryPolicy) -> Result<Vec<f64>> {
        pol.validate(self)?;
        (0..self.n_states)
            .map(|s| self.expected_reward(s, pol.action(s)))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.n_states == 0 {
            return Err(CoreError::InvalidModel("model has no states".into()));
        }
        for s in 0..self.n_states {
            if self.actions[s].is_empty() {
                return Err(CoreError::InvalidModel(format!(
                    "state {s} has no actions"
                )));
            }
            for &a in &self.actions[s] {
                let branches = &self.branches[s][a];
                if branches.is_empty() {
                    return Err(CoreError::InvalidModel(format!(
                        "state {s} action {a} has no branches"
                    )));
                }
                let total: f64 = branches.iter().map(|b| b.p).sum();
                if (total - 1.0).abs() > PROB_TOL {
                    return Err(CoreError::InvalidModel(format!(
                        "probabilities of state {s} action {a} sum to {total}, expected 1"
                    )));
                }
                for b in branches {
                    if !(0.0..=1.0).contains(&b.p) {
                        return Err(CoreError::InvalidModel(format!(
                            "branch probability {} of state {s} action {a} outside [0,1]",
                            b.p
                        )));
                    }
                    if b.next >= self.n_states {
                        return Err(CoreError::InvalidModel(format!(
                            "state {s} action {a} points to state {} >= n_states {}",
                            b.next, self.n_states
                        )));
                    }
                    b.reward.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDoc::from(self))?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(json)?;
        doc.into_model()
    }
}

impl fmt::Display for MdpModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MdpModel({} states, {} state-action pairs)",
            self.n_states,
            self.n_state_actions()
        )
    }
}

/// Incremental constructor; `build` runs the full invariant suite.
pub struct MdpBuilder {
    n_states: usize,
    entries: BTreeMap<(usize, usize), Vec<Branch>>,
    state_labels: BTreeMap<usize, String>,
    action_labels: BTreeMap<(usize, usize), String>,
}

impl MdpBuilder {
    pub fn new(n_states: usize) -> Self {
        Self {
            n_states,
            entries: BTreeMap::new(),
            state_labels: BTreeMap::new(),
            action_labels: BTreeMap::new(),
        }
    }

    /// Declare `(s, a)` with its outcome branches `(p, next, reward)`.
    pub fn transition(
        &mut self,
        s: usize,
        a: usize,
        branches: Vec<(f64, usize, RewardSpec)>,
    ) -> &mut Self {
        let branches = branches
            .into_iter()
            .map(|(p, next, reward)| Branch { p, next, reward })
            .collect();
        self.entries.insert((s, a), branches);
        self
    }

    /// Shorthand for a deterministic edge.
    pub fn edge(&mut self, s: usize, a: usize, next: usize, reward: RewardSpec) -> &mut Self {
        self.transition(s, a, vec![(1.0, next, reward)])
    }

    pub fn label_state(&mut self, s: usize, label: impl Into<String>) -> &mut Self {
        self.state_labels.insert(s, label.into());
        self
    }

    pub fn label_action(&mut self, s: usize, a: usize, label: impl Into<String>) -> &mut Self {
        self.action_labels.insert((s, a), label.into());
        self
    }

    pub fn build(&self) -> Result<MdpModel> {
        let n = self.n_states;
        let width = self
            .entries
            .keys()
            .map(|&(_, a)| a + 1)
            .max()
            .unwrap_or(0);
        let mut actions = vec![Vec::new(); n];
        let mut branches = vec![vec![Vec::new(); width]; n];
        let mut action_labels = vec![vec![None; width]; n];
        for (&(s, a), brs) in &self.entries {
            if s >= n {
                return Err(CoreError::InvalidModel(format!(
                    "transition declared for state {s} >= n_states {n}"
                )));
            }
            actions[s].push(a);
            branches[s][a] = brs.clone();
            if let Some(l) = self.action_labels.get(&(s, a)) {
                action_labels[s][a] = Some(l.clone());
            }
        }
        let mut state_labels = vec![None; n];
        for (&s, l) in &self.state_labels {
            if s < n {
                state_labels[s] = Some(l.clone());
            }
        }
        let model = MdpModel {
            n_states: n,
            actions,
            branches,
            state_labels,
            action_labels,
        };
        model.validate()?;
        Ok(model)
    }
}

// ---------------------------------------------------------------------------
// JSON document schema
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TransitionDoc {
    s: usize,
    a: usize,
    branches: Vec<Branch>,
}

#[derive(Serialize, Deserialize, Default)]
struct LabelsDoc {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    states: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    actions: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    n_states: usize,
    actions: BTreeMap<String, Vec<usize>>,
    transitions: Vec<TransitionDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<LabelsDoc>,
}

impl From<&MdpModel> for ModelDoc {
    fn from(m: &MdpModel) -> Self {
        let actions = (0..m.n_states)
            .map(|s| (s.to_string(), m.actions[s].clone()))
            .collect();
        let mut transitions = Vec::new();
        for s in 0..m.n_states {
            for &a in &m.actions[s] {
                transitions.push(TransitionDoc {
                    s,
                    a,
                    branches: m.branches[s][a].clone(),
                });
            }
        }
        let mut labels = LabelsDoc::default();
        for (s, l) in m.state_labels.iter().enumerate() {
            if let Some(l) = l {
                labels.states.insert(s.to_string(), l.clone());
            }
        }
        for (s, row) in m.action_labels.iter().enumerate() {
            for (a, l) in row.iter().enumerate() {
                if let Some(l) = l {
                    labels.actions.insert(format!("{s}:{a}"), l.clone());
                }
            }
        }
        let labels = if labels.states.is_empty() && labels.actions.is_empty() {
            None
        } else {
            Some(labels)
        };
        ModelDoc {
            n_states: m.n_states,
            actions,
            transitions,
            labels,
        }
    }
}

impl ModelDoc {
    fn into_model(self) -> Result<MdpModel> {
        let mut b = MdpBuilder::new(self.n_states);
        for t in self.transitions {
            let branches = t
                .branches
                .into_iter()
                .map(|br| (br.p, br.next, br.reward))
                .collect();
            b.transition(t.s, t.a, branches);
        }
        if let Some(labels) = self.labels {
            for (s, l) in labels.states {
                let s: usize = s
                    .parse()
                    .map_err(|_| CoreError::InvalidModel(format!("bad state label key `{s}`")))?;
                b.label_state(s, l);
            }
            for (key, l) in labels.actions {
                let (s, a) = key.split_once(':').ok_or_else(|| {
                    CoreError::InvalidModel(format!("bad action label key `{key}`"))
                })?;
                let s: usize = s.parse().map_err(|_| {
                    CoreError::InvalidModel(format!("bad action label key `{key}`"))
                })?;
                let a: usize = a.parse().map_err(|_| {
                    CoreError::InvalidModel(format!("bad action label key `{key}`"))
                })?;
                b.label_action(s, a, l);
            }
        }
        let model = b.build()?;
        // cross-check the declared action sets against the transitions
        for (s, declared) in self.actions {
            let s: usize = s
                .parse()
                .map_err(|_| CoreError::InvalidModel(format!("bad actions key `{s}`")))?;
            if s >= model.n_states() {
                return Err(CoreError::InvalidModel(format!(
                    "actions declared for state {s} >= n_states"
                )));
            }
            if model.actions(s) != declared.as_slice() {
                return Err(CoreError::InvalidModel(format!(
                    "declared actions {:?} for state {s} do not match transitions {:?}",
                    declared,
                    model.actions(s)
                )));
            }
        }
        Ok(model)
    }
}

// ---------------------------------------------------------------------------
// Dense (state, action) value tables
// ---------------------------------------------------------------------------

/// Dense `(state, action)` table of f64 values, zero-initialized.
pub type SaTable = Vec<Vec<f64>>;

pub fn new_table(model: &MdpModel) -> SaTable {
    vec![vec![0.0; model.max_actions()]; model.n_states()]
}

/// Max of `table[s][a]` over the actions available in `s`.
pub fn max_over_actions(table: &SaTable, model: &MdpModel, s: usize) -> f64 {
    model
        .actions(s)
        .iter()
        .map(|&a| table[s][a])
        .fold(f64::NEG_INFINITY, f64::max)
}
