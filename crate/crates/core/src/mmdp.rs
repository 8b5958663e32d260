//! Maximum-MDP state augmentation.
//!
//! Each environment state is paired with a vector `M` holding the largest
//! per-step cost seen so far for every constraint. A transition raises `M` by
//! a non-negative increment `D = max(C - M, 0)`, so the increments of an
//! episode sum to the episode's maximum state-wise cost. This turns the
//! maximum-cost constraint into an ordinary (undiscounted) additive return.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment observation together with the running maximum-cost tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedState {
    pub base: Vec<f64>,
    pub max_costs: Vec<f64>,
}

impl AugmentedState {
    /// State at episode reset: all tags are zero.
    pub fn reset(base: Vec<f64>, num_constraints: usize) -> Self {
        Self {
            base,
            max_costs: vec![0.0; num_constraints],
        }
    }

    pub fn num_constraints(&self) -> usize {
        self.max_costs.len()
    }

    /// The vector fed to the policy and value networks: `base ++ max_costs`.
    pub fn policy_input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.base.len() + self.max_costs.len());
        v.extend_from_slice(&self.base);
        v.extend_from_slice(&self.max_costs);
        v
    }

    pub fn input_dim(&self) -> usize {
        self.base.len() + self.max_costs.len()
    }
}

/// `D = max(cost - running_max, 0)`.
pub fn cost_increment(cost: f64, running_max: f64) -> Result<f64> {
    if !cost.is_finite() || !running_max.is_finite() {
        return Err(Error::domain(format!(
            "cost increment needs finite inputs, got cost={cost}, running_max={running_max}"
        )));
    }
    Ok((cost - running_max).max(0.0))
}

/// Advances the tags by one transition.
///
/// Returns the next augmented state (with `base = raw_next_obs`) and the
/// per-constraint increments.
pub fn augment_step(
    prev: &AugmentedState,
    raw_next_obs: Vec<f64>,
    costs: &[f64],
) -> Result<(AugmentedState, Vec<f64>)> {
    if costs.len() != prev.max_costs.len() {
        return Err(Error::domain(format!(
            "expected {} costs, got {}",
            prev.max_costs.len(),
            costs.len()
        )));
    }
    let mut increments = Vec::with_capacity(costs.len());
    let mut max_costs = Vec::with_capacity(costs.len());
    for (&cost, &m) in costs.iter().zip(&prev.max_costs) {
        let d = cost_increment(cost, m)?;
        increments.push(d);
        max_costs.push(m.max(cost));
    }
    Ok((
        AugmentedState {
            base: raw_next_obs,
            max_costs,
        },
        increments,
    ))
}

/// Replays augmentation over a raw cost sequence for one constraint,
/// returning the tag before each step and the increments.
pub fn replay_costs(costs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tags = Vec::with_capacity(costs.len());
    let mut increments = Vec::with_capacity(costs.len());
    let mut m = 0.0_f64;
    for &c in costs {
        tags.push(m);
        increments.push(cost_increment(c, m)?);
        m = m.max(c);
    }
    Ok((tags, increments))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: AugmentedState,
    pub action: Vec<f64>,
    pub next_state: AugmentedState,
    pub reward: f64,
    pub costs: Vec<f64>,
    pub increments: Vec<f64>,
    pub log_prob: f64,
    pub done: bool,
}

/// Transitions of a single episode in time order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeBuffer {
    pub transitions: Vec<Transition>,
    /// Configured episode horizon `H`.
    pub horizon: usize,
    /// The episode was cut by the end of the sampling budget rather than
    /// finishing on its own.
    pub truncated: bool,
}

impl EpisodeBuffer {
    pub fn new(horizon: usize) -> Self {
        Self {
            transitions: Vec::new(),
            horizon,
            truncated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn push(&mut self, transition: Transition) {
        self.transitions.push(transition);
    }

    pub fn num_constraints(&self) -> usize {
        self.transitions
            .first()
            .map(|t| t.costs.len())
            .unwrap_or(0)
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    /// Undiscounted cost sum for constraint `i`.
    pub fn total_cost(&self, i: usize) -> f64 {
        self.transitions.iter().map(|t| t.costs[i]).sum()
    }

    pub fn discounted_cost(&self, i: usize, gamma: f64) -> f64 {
        let mut acc = 0.0;
        for t in self.transitions.iter().rev() {
            acc = t.costs[i] + gamma * acc;
        }
        acc
    }

    pub fn max_cost(&self, i: usize) -> f64 {
        self.transitions
            .iter()
            .map(|t| t.costs[i])
            .fold(0.0, f64::max)
    }

    pub fn increment_sum(&self, i: usize) -> f64 {
        self.transitions.iter().map(|t| t.increments[i]).sum()
    }

    /// Both sides of `sum_t D_t = max_t C_t` for constraint `i`.
    pub fn episode_max_identity(&self, i: usize) -> Result<(f64, f64)> {
        if self.is_empty() {
            return Err(Error::domain("episode buffer is empty"));
        }
        if i >= self.num_constraints() {
            return Err(Error::domain(format!(
                "constraint index {i} out of range ({} constraints)",
                self.num_constraints()
            )));
        }
        let max_cost = self
            .transitions
            .iter()
            .map(|t| t.costs[i])
            .fold(f64::NEG_INFINITY, f64::max);
        Ok((self.increment_sum(i), max_cost))
    }

    /// Column names of [`EpisodeBuffer::write_columns`] for the given shapes.
    pub fn column_names(obs_dim: usize, num_constraints: usize, action_dim: usize) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        cols.extend((0..obs_dim).map(|k| format!("obs_{k}")));
        cols.extend((0..num_constraints).map(|k| format!("M_{k}")));
        cols.extend((0..action_dim).map(|k| format!("action_{k}")));
        cols.push("reward".into());
        cols.extend((0..num_constraints).map(|k| format!("cost_{k}")));
        cols.extend((0..num_constraints).map(|k| format!("increment_{k}")));
        cols.push("log_prob".into());
        cols.push("done".into());
        cols
    }

    /// Writes one CSV row per transition. Observation and tag columns
    /// describe the state the action was taken in.
    pub fn write_columns<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let Some(first) = self.transitions.first() else {
            out.flush()?;
            return Ok(());
        };
        out.write_record(Self::column_names(
            first.state.base.len(),
            first.costs.len(),
            first.action.len(),
        ))?;
        for (t, tr) in self.transitions.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(tr.state.base.iter().map(f64::to_string));
            row.extend(tr.state.max_costs.iter().map(f64::to_string));
            row.extend(tr.action.iter().map(f64::to_string));
            row.push(tr.reward.to_string());
            row.extend(tr.costs.iter().map(f64::to_string));
            row.extend(tr.increments.iter().map(f64::to_string));
            row.push(tr.log_prob.to_string());
            row.push(u8::from(tr.done).to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}
