use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::PointNavEnv;
use crate::error::{Error, Result};
use crate::mmdp::{augment_step, AugmentedState, EpisodeBuffer, Transition};
use crate::neural::GaussianPolicy;

/// One epoch of experience: whole episodes plus a trailing truncated one.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchBuffer {
    pub episodes: Vec<EpisodeBuffer>,
}

/// Per-episode averages over the completed episodes of a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub episodes: usize,
    pub mean_return: f64,
    pub mean_cost: f64,
    pub mean_max_cost: f64,
    pub mean_increment_sum: f64,
    pub mean_discounted_cost: f64,
    pub mean_length: f64,
}

impl BatchBuffer {
    pub fn num_steps(&self) -> usize {
        self.episodes.iter().map(EpisodeBuffer::len).sum()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flat_map(|e| e.transitions.iter())
    }

    /// Policy inputs `(s, M)` of every transition, in buffer order.
    pub fn inputs(&self) -> Array2<f64> {
        rows(self.transitions().map(|t| t.state.policy_input()))
    }

    pub fn actions(&self) -> Array2<f64> {
        rows(self.transitions().map(|t| t.action.clone()))
    }

    pub fn total_cost(&self) -> f64 {
        self.transitions().map(|t| t.costs.iter().sum::<f64>()).sum()
    }

    /// Whether any increment in the batch is non-zero.
    pub fn has_increments(&self) -> bool {
        self.transitions().any(|t| t.increments.iter().any(|d| *d != 0.0))
    }

    /// Averages over completed episodes, or over all episodes if none
    /// completed.
    pub fn stats(&self, gamma: f64) -> EpisodeStats {
        let complete: Vec<&EpisodeBuffer> = self.episodes.iter().filter(|e| !e.truncated).collect();
        let eps: Vec<&EpisodeBuffer> = if complete.is_empty() {
            self.episodes.iter().collect()
        } else {
            complete
        };
        let n = eps.len().max(1) as f64;
        let mean = |f: &dyn Fn(&EpisodeBuffer) -> f64| eps.iter().map(|e| f(e)).sum::<f64>() / n;
        EpisodeStats {
            episodes: eps.len(),
            mean_return: mean(&|e| e.total_reward()),
            mean_cost: mean(&|e| e.total_cost(0)),
            mean_max_cost: mean(&|e| e.max_cost(0)),
            mean_increment_sum: mean(&|e| e.increment_sum(0)),
            mean_discounted_cost: mean(&|e| e.discounted_cost(0, gamma)),
            mean_length: mean(&|e| e.len() as f64),
        }
    }
}

fn rows(it: impl Iterator<Item = Vec<f64>>) -> Array2<f64> {
    let data: Vec<Vec<f64>> = it.collect();
    let cols = data.first().map_or(0, Vec::len);
    let flat: Vec<f64> = data.into_iter().flatten().collect();
    Array2::from_shape_vec((flat.len() / cols.max(1), cols), flat).expect("rows have equal length")
}

/// Runs `policy` for exactly `steps` transitions.
///
/// Episode reset seeds and action noise are drawn from two streams derived
/// from `seed`, so the batch is a pure function of its arguments. The
/// episode still running when the budget is exhausted is kept with
/// `truncated = true`.
pub fn collect_rollouts(
    policy: &GaussianPolicy,
    env: &PointNavEnv,
    steps: usize,
    seed: u64,
) -> Result<BatchBuffer> {
    let m = env.config().num_costs();
    if policy.obs_dim() != env.config().obs_dim() + m {
        return Err(Error::domain(format!(
            "policy expects {} inputs, environment provides {} plus {m} cost tags",
            policy.obs_dim(),
            env.config().obs_dim()
        )));
    }
    let mut reset_rng = ChaCha8Rng::seed_from_u64(seed);
    reset_rng.set_stream(1);
    let mut action_rng = ChaCha8Rng::seed_from_u64(seed);
    action_rng.set_stream(2);
    let horizon = env.config().max_episode_steps;

    let mut episodes = Vec::new();
    let mut current = EpisodeBuffer::new(horizon);
    let (mut env_state, obs) = env.reset(reset_rng.random())?;
    let mut state = AugmentedState::reset(obs.to_vec(), m);
    for _ in 0..steps {
        let (action, log_prob) = policy.sample(&state.policy_input(), &mut action_rng)?;
        let outcome = env.step(&env_state, [action[0], action[1]])?;
        let (next_state, increments) = augment_step(&state, outcome.observation.to_vec(), &outcome.costs)?;
        current.push(Transition {
            state,
            action,
            next_state: next_state.clone(),
            reward: outcome.reward,
            costs: outcome.costs,
            increments,
            log_prob,
            done: outcome.done,
        });
        if outcome.done {
            episodes.push(std::mem::replace(&mut current, EpisodeBuffer::new(horizon)));
            let (s, obs) = env.reset(reset_rng.random())?;
            env_state = s;
            state = AugmentedState::reset(obs.to_vec(), m);
        } else {
            env_state = outcome.state;
            state = next_state;
        }
    }
    if !current.is_empty() {
        current.truncated = true;
        episodes.push(current);
    }
    Ok(BatchBuffer { episodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvConfig;

    fn setup(steps_per_episode: usize) -> (GaussianPolicy, PointNavEnv) {
        let mut cfg = EnvConfig::preset("point-hazard-4").unwrap();
        cfg.max_episode_steps = steps_per_episode;
        let env = PointNavEnv::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let policy = GaussianPolicy::new(env.config().obs_dim() + 1, &[8], 2, &mut rng).unwrap();
        (policy, env)
    }

    #[test]
    fn exact_step_count_and_episode_split() {
        let (policy, env) = setup(20);
        let batch = collect_rollouts(&policy, &env, 50, 3).unwrap();
        assert_eq!(batch.num_steps(), 50);
        assert_eq!(batch.episodes.len(), 3);
        assert!(!batch.episodes[0].truncated && !batch.episodes[1].truncated);
        assert!(batch.episodes[2].truncated);
        assert_eq!(batch.episodes[2].len(), 10);
        assert!(batch.episodes[1].transitions.last().unwrap().done);
        assert_eq!(batch.stats(0.99).episodes, 2);
    }

    #[test]
    fn same_seed_same_buffer() {
        let (policy, env) = setup(30);
        let a = collect_rollouts(&policy, &env, 90, 11).unwrap();
        let b = collect_rollouts(&policy, &env, 90, 11).unwrap();
        assert_eq!(a, b);
        let c = collect_rollouts(&policy, &env, 90, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tags_reset_between_episodes() {
        let (policy, env) = setup(25);
        let batch = collect_rollouts(&policy, &env, 75, 5).unwrap();
        for ep in &batch.episodes {
            assert_eq!(ep.transitions[0].state.max_costs, vec![0.0]);
            let (sum, max) = ep.episode_max_identity(0).unwrap();
            assert!((sum - max).abs() <= 1e-9);
        }
    }

    #[test]
    fn rejects_mismatched_policy() {
        let (_, env) = setup(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let policy = GaussianPolicy::new(3, &[4], 2, &mut rng).unwrap();
        assert!(collect_rollouts(&policy, &env, 10, 0).is_err());
    }
}
