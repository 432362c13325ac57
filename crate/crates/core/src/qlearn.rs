//! Watkins Q-Learning baseline with the same harness integration and decay
//! schedules as the adjusted learner, plus an optional epsilon-sensitive
//! action-selection variant.

use serde::{Deserialize, Serialize};

use crate::ara::StepOutcome;
use crate::error::{CoreError, Result};
use crate::mdp::{max_over_actions, new_table, MdpModel, SaTable, Transition};
use crate::rng::RngStream;
use crate::schedule::DecaySchedule;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QParams {
    pub gamma1: f64,
    /// Learning rate of the value table.
    pub w: DecaySchedule,
    /// Exploration probability.
    pub p_exp: DecaySchedule,
    /// When set, greedy selection admits every action within this band of
    /// the maximum instead of the plain argmax.
    pub epsilon_sensitive: Option<f64>,
}

impl QParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma1) {
            return Err(CoreError::Config(format!(
                "q-learning requires 0 <= gamma1 < 1, got {} \
                 (an undiscounted table diverges on recurrent rewards)",
                self.gamma1
            )));
        }
        if let Some(eps) = self.epsilon_sensitive {
            if eps < 0.0 {
                return Err(CoreError::Config(format!(
                    "epsilon-sensitive band must be >= 0, got {eps}"
                )));
            }
        }
        self.w.validate()?;
        self.p_exp.validate()?;
        Ok(())
    }
}

/// Snapshot: the value table and step counter (no average-reward fields).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QSnapshot {
    pub q: SaTable,
    pub t: u64,
}

#[derive(Clone, Debug)]
pub struct QLearner {
    pub params: QParams,
    q: SaTable,
    t: u64,
}

impl QLearner {
    pub fn new(model: &MdpModel, params: QParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            q: new_table(model),
            t: 0,
        })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn q(&self) -> &SaTable {
        &self.q
    }

    pub fn snapshot(&self) -> QSnapshot {
        QSnapshot {
            q: self.q.clone(),
            t: self.t,
        }
    }

    pub fn restore(model: &MdpModel, params: QParams, snap: QSnapshot) -> Result<Self> {
        params.validate()?;
        if snap.q.len() != model.n_states() {
            return Err(CoreError::Config(
                "snapshot table shape does not match the model".into(),
            ));
        }
        Ok(Self {
            params,
            q: snap.q,
            t: snap.t,
        })
    }

    /// Pick an action: with probability `p_exp` uniformly random, otherwise
    /// the argmax of `q(s, .)` with uniform tie-breaking. With the
    /// epsilon-sensitive variant enabled the winner set is every action
    /// within the band of the maximum.
    pub fn select_action(
        &self,
        model: &MdpModel,
        s: usize,
        p_exp: f64,
        rng: &mut RngStream,
    ) -> (usize, bool) {
        let actions = model.actions(s);
        if rng.bernoulli(p_exp) {
            return (actions[rng.pick(actions.len())], true);
        }
        let best = max_over_actions(&self.q, model, s);
        let band = self.params.epsilon_sensitive.unwrap_or(0.0);
        let winners: Vec<usize> = actions
            .iter()
            .copied()
            .filter(|&a| self.q[s][a] >= best - band)
            .collect();
        (winners[rng.pick(winners.len())], false)
    }

    /// One-step temporal-difference update. Returns the absolute change.
    pub fn update(&mut self, model: &MdpModel, tr: &Transition, w: f64) -> f64 {
        let forward = max_over_actions(&self.q, model, tr.s_next);
        let target = tr.r + self.params.gamma1 * forward;
        let old = self.q[tr.s][tr.a];
        let new = (1.0 - w) * old + w * target;
        self.q[tr.s][tr.a] = new;
        (new - old).abs()
    }

    /// One full learning step mirroring the adjusted learner's loop.
    pub fn step(
        &mut self,
        model: &MdpModel,
        s: usize,
        env_rng: &mut RngStream,
        agent_rng: &mut RngStream,
    ) -> Result<StepOutcome> {
        env_rng.seek_step(self.t);
        agent_rng.seek_step(self.t);
        let p_exp = self.params.p_exp.value(self.t);
        let w = self.params.w.value(self.t);
        let (a, was_random) = self.select_action(model, s, p_exp, agent_rng);
        let mut tr = model.sample_step(s, a, env_rng)?;
        tr.was_random_action = was_random;
        let max_table_delta = self.update(model, &tr, w);
        self.t += 1;
        Ok(StepOutcome {
            transition: tr,
            max_table_delta,
        })
    }
}
