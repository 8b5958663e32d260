use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Algo, RunConfig};
use super::metrics::{run_id, MetricsRow, MetricsWriter, RunSummary, TailMeans};
use super::rollout::{collect_rollouts, BatchBuffer, EpisodeStats};
use super::update::{
    advantage_bound, apply_update, compute_slack_c, epsilon_term, propose, Proposal, UpdateDiagnostics,
    UpdateSpec,
};
use crate::advantage::{d_return_targets, discounted_returns, gae, normalize, subsample_zero_targets};
use crate::envs::PointNavEnv;
use crate::error::{Error, Result};
use crate::neural::{adam_fit_minibatch, entropy, GaussianPolicy, ValueFunction};

// Independent random streams derived from the run seed.
const STREAM_POLICY_INIT: u64 = 1;
const STREAM_VALUE_INIT: u64 = 2;
const STREAM_COST_VALUE_INIT: u64 = 3;
const STREAM_ROLLOUT: u64 = 4;
const STREAM_VALUE_FIT: u64 = 5;
const STREAM_COST_VALUE_FIT: u64 = 6;
const STREAM_SUBSAMPLE: u64 = 7;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Zero-target sub-sampling counts for the increment value fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SubsampleStats {
    pub zeros_before: usize,
    pub zeros_kept: usize,
    pub nonzero: usize,
}

/// A batch with fitted values and every advantage the algorithms need.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub inputs: Array2<f64>,
    pub actions: Array2<f64>,
    pub stats: EpisodeStats,
    /// Normalized reward advantages.
    pub reward_adv: Vec<f64>,
    /// Increment advantages (identically zero if the batch saw no cost).
    pub increment_adv: Option<Vec<f64>>,
    /// Discounted raw-cost advantages.
    pub cost_adv: Option<Vec<f64>>,
    pub value_loss: f64,
    pub cost_value_loss: f64,
    pub subsample: SubsampleStats,
}

/// Policy, value networks and random streams of one training run.
pub struct Trainer {
    config: RunConfig,
    env: PointNavEnv,
    pub policy: GaussianPolicy,
    pub value: ValueFunction,
    /// Increment value for SCPO, discounted-cost value for CPO and the
    /// Lagrangian baseline, absent for TRPO.
    pub cost_value: Option<ValueFunction>,
    pub lagrange_multiplier: f64,
    rollout_rng: ChaCha8Rng,
    value_rng: ChaCha8Rng,
    cost_value_rng: ChaCha8Rng,
    subsample_rng: ChaCha8Rng,
    epoch: usize,
    cumulative_cost: f64,
    cumulative_steps: usize,
    pending_surrogate: f64,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let env = PointNavEnv::new(config.env_config()?)?;
        let seed = config.training.seed;
        let input_dim = env.config().obs_dim() + env.config().num_costs();
        let hidden = &config.training.hidden;
        let policy = GaussianPolicy::new(
            input_dim,
            hidden,
            env.config().action_dim(),
            &mut stream(seed, STREAM_POLICY_INIT),
        )?;
        let value = ValueFunction::new(input_dim, hidden, &mut stream(seed, STREAM_VALUE_INIT))?;
        let algo = config.algo.name;
        let cost_value = if algo.uses_increments() || algo.uses_discounted_costs() {
            Some(ValueFunction::new(input_dim, hidden, &mut stream(seed, STREAM_COST_VALUE_INIT))?)
        } else {
            None
        };
        Ok(Self {
            env,
            policy,
            value,
            cost_value,
            lagrange_multiplier: 0.0,
            rollout_rng: stream(seed, STREAM_ROLLOUT),
            value_rng: stream(seed, STREAM_VALUE_FIT),
            cost_value_rng: stream(seed, STREAM_COST_VALUE_FIT),
            subsample_rng: stream(seed, STREAM_SUBSAMPLE),
            epoch: 0,
            cumulative_cost: 0.0,
            cumulative_steps: 0,
            pending_surrogate: f64::NAN,
            config,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn env(&self) -> &PointNavEnv {
        &self.env
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn horizon(&self) -> usize {
        self.env.config().max_episode_steps
    }

    /// Samples the next epoch's batch with the current policy.
    pub fn collect(&mut self) -> Result<BatchBuffer> {
        let seed: u64 = self.rollout_rng.random();
        collect_rollouts(&self.policy, &self.env, self.config.training.steps_per_epoch, seed)
    }

    /// Values at every state of every episode plus the bootstrap value
    /// after its last transition (zero for finished episodes).
    fn episode_values(value: &ValueFunction, batch: &BatchBuffer, inputs: &Array2<f64>) -> Result<Vec<Vec<f64>>> {
        let preds = value.predict_batch(inputs.view())?;
        let mut out = Vec::with_capacity(batch.episodes.len());
        let mut offset = 0;
        for ep in &batch.episodes {
            let mut v: Vec<f64> = preds.slice(ndarray::s![offset..offset + ep.len()]).to_vec();
            offset += ep.len();
            let last = ep.transitions.last().expect("episodes are non-empty");
            v.push(if ep.truncated {
                value.predict(&last.next_state.policy_input())?
            } else {
                0.0
            });
            out.push(v);
        }
        Ok(out)
    }

    fn fit(
        value: &mut ValueFunction,
        inputs: &Array2<f64>,
        targets: &[f64],
        config: &RunConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let t = &config.training;
        let trace = adam_fit_minibatch(value, inputs.view(), targets, t.value_iters, t.value_lr, t.value_batch, rng)?;
        Ok(*trace.last().expect("trace is non-empty"))
    }

    /// Fits the value networks on this batch's targets and computes
    /// advantages with the fitted networks.
    pub fn prepare(&mut self, batch: &BatchBuffer) -> Result<PreparedBatch> {
        let adv_cfg = self.config.advantage();
        let inputs = batch.inputs();
        let actions = batch.actions();
        let stats = batch.stats(adv_cfg.gamma);

        // reward value: discounted returns, bootstrapped on truncation
        let boot = Self::episode_values(&self.value, batch, &inputs)?;
        let returns: Vec<f64> = batch
            .episodes
            .iter()
            .zip(&boot)
            .flat_map(|(ep, v)| {
                let r: Vec<f64> = ep.transitions.iter().map(|t| t.reward).collect();
                discounted_returns(&r, adv_cfg.gamma, *v.last().expect("bootstrap entry"))
            })
            .collect();
        let value_loss = Self::fit(&mut self.value, &inputs, &returns, &self.config, &mut self.value_rng)?;
        let values = Self::episode_values(&self.value, batch, &inputs)?;
        let mut reward_adv = Vec::with_capacity(inputs.nrows());
        for (ep, v) in batch.episodes.iter().zip(&values) {
            let r: Vec<f64> = ep.transitions.iter().map(|t| t.reward).collect();
            reward_adv.extend(gae(&r, v, adv_cfg.gamma, adv_cfg.lam)?);
        }
        normalize(&mut reward_adv);

        let mut prepared = PreparedBatch {
            inputs,
            actions,
            stats,
            reward_adv,
            increment_adv: None,
            cost_adv: None,
            value_loss,
            cost_value_loss: f64::NAN,
            subsample: SubsampleStats::default(),
        };
        let algo = self.config.algo.name;
        if algo.uses_increments() {
            self.prepare_increments(batch, &mut prepared)?;
        } else if algo.uses_discounted_costs() {
            self.prepare_discounted_costs(batch, &mut prepared)?;
        }
        Ok(prepared)
    }

    fn prepare_increments(&mut self, batch: &BatchBuffer, prepared: &mut PreparedBatch) -> Result<()> {
        let cost_lam = self.config.algo.cost_lam;
        let vd = self.cost_value.as_mut().expect("increment value exists");
        let mut targets = Vec::with_capacity(prepared.inputs.nrows());
        for ep in &batch.episodes {
            let d: Vec<f64> = ep.transitions.iter().map(|t| t.increments[0]).collect();
            targets.extend(d_return_targets(&d)?);
        }
        let zeros_before = targets.iter().filter(|t| **t == 0.0).count();
        let pairs: Vec<(usize, f64)> = targets.iter().copied().enumerate().collect();
        let kept = subsample_zero_targets(pairs, &mut self.subsample_rng);
        let rows: Vec<usize> = kept.iter().map(|(i, _)| *i).collect();
        let kept_targets: Vec<f64> = kept.iter().map(|(_, t)| *t).collect();
        let kept_inputs = prepared.inputs.select(Axis(0), &rows);
        let zeros_kept = kept_targets.iter().filter(|t| **t == 0.0).count();
        prepared.subsample = SubsampleStats {
            zeros_before,
            zeros_kept,
            nonzero: targets.len() - zeros_before,
        };
        prepared.cost_value_loss = Self::fit(vd, &kept_inputs, &kept_targets, &self.config, &mut self.cost_value_rng)?;

        if !batch.has_increments() {
            // no cost anywhere: the constraint carries no gradient signal
            prepared.increment_adv = Some(vec![0.0; prepared.inputs.nrows()]);
            return Ok(());
        }
        let values = Self::episode_values(vd, batch, &prepared.inputs)?;
        let mut adv = Vec::with_capacity(prepared.inputs.nrows());
        for (ep, v) in batch.episodes.iter().zip(&values) {
            let d: Vec<f64> = ep.transitions.iter().map(|t| t.increments[0]).collect();
            adv.extend(gae(&d, v, 1.0, cost_lam)?);
        }
        prepared.increment_adv = Some(adv);
        Ok(())
    }

    fn prepare_discounted_costs(&mut self, batch: &BatchBuffer, prepared: &mut PreparedBatch) -> Result<()> {
        let adv_cfg = self.config.advantage();
        let vc = self.cost_value.as_mut().expect("cost value exists");
        let boot = Self::episode_values(vc, batch, &prepared.inputs)?;
        let targets: Vec<f64> = batch
            .episodes
            .iter()
            .zip(&boot)
            .flat_map(|(ep, v)| {
                let c: Vec<f64> = ep.transitions.iter().map(|t| t.costs[0]).collect();
                discounted_returns(&c, adv_cfg.gamma, *v.last().expect("bootstrap entry"))
            })
            .collect();
        prepared.cost_value_loss = Self::fit(vc, &prepared.inputs, &targets, &self.config, &mut self.cost_value_rng)?;
        let values = Self::episode_values(vc, batch, &prepared.inputs)?;
        let mut adv = Vec::with_capacity(prepared.inputs.nrows());
        for (ep, v) in batch.episodes.iter().zip(&values) {
            let c: Vec<f64> = ep.transitions.iter().map(|t| t.costs[0]).collect();
            adv.extend(gae(&c, v, adv_cfg.gamma, adv_cfg.cost_lam)?);
        }
        prepared.cost_adv = Some(adv);
        Ok(())
    }

/// Discounted cost budget `d = w (1 - gamma^(H+1)) / (1 - gamma)`.
    pub fn discounted_limit(&self) -> f64 {
        let g = self.config.algo.gamma;
        self.config.algo.cost_limit * (1.0 - g.powi(self.horizon() as i32 + 1)) / (1.0 - g)
    }

    /// Episodic scale applied to the batch-mean cost advantage.
    fn discounted_scale(&self) -> f64 {
        let g = self.config.algo.gamma;
        (1.0 - g.powi(self.horizon() as i32)) / (1.0 - g)
    }

    /// The algorithm-specific ingredients of the update.
    pub fn update_spec(&self, prepared: &PreparedBatch) -> UpdateSpec {
        let algo = self.config.algo.name;
        let a = &self.config.algo;
        match algo {
            Algo::Trpo => UpdateSpec {
                algo,
                objective_adv: prepared.reward_adv.clone(),
                cost_adv: None,
                c: 0.0,
            },
            Algo::TrpoLagrangian => {
                let cost = prepared.cost_adv.as_ref().expect("cost advantages");
                let lm = self.lagrange_multiplier;
                UpdateSpec {
                    algo,
                    objective_adv: prepared.reward_adv.iter().zip(cost).map(|(r, c)| r - lm * c).collect(),
                    cost_adv: None,
                    c: 0.0,
                }
            }
            Algo::Scpo => {
                let adv = prepared.increment_adv.clone().expect("increment advantages");
                let c = compute_slack_c(
                    prepared.stats.mean_increment_sum,
                    &adv,
                    a.cost_limit,
                    a.epsilon_term,
                    a.delta,
                    self.horizon(),
                );
                UpdateSpec {
                    algo,
                    objective_adv: prepared.reward_adv.clone(),
                    cost_adv: Some((adv, self.horizon() as f64)),
                    c,
                }
            }
            Algo::Cpo => UpdateSpec {
                algo,
                objective_adv: prepared.reward_adv.clone(),
                cost_adv: Some((
                    prepared.cost_adv.clone().expect("cost advantages"),
                    self.discounted_scale(),
                )),
                c: prepared.stats.mean_discounted_cost - self.discounted_limit(),
            },
        }
    }

    /// Gradients and solved step for this batch, without touching the policy.
    pub fn propose(&self, prepared: &PreparedBatch, spec: &UpdateSpec) -> Result<Proposal> {
        let a = &self.config.algo;
        propose(
            &self.policy,
            prepared.inputs.view(),
            prepared.actions.view(),
            spec,
            a.delta,
            a.damping,
            &self.config.cg(),
        )
    }

    /// One full epoch: collect, fit, update, report.
    pub fn run_epoch(&mut self) -> Result<MetricsRow> {
        let batch = self.collect()?;
        let prepared = self.prepare(&batch)?;
        let spec = self.update_spec(&prepared);
        let delta = self.config.algo.delta;
        let diag = match self.propose(&prepared, &spec) {
            Ok(proposal) => apply_update(
                &mut self.policy,
                prepared.inputs.view(),
                prepared.actions.view(),
                &spec,
                &proposal,
                delta,
                &self.config.line_search(),
            )?,
            Err(e @ (Error::Solver(_) | Error::Numeric(_))) => {
                log::warn!("epoch {}: update skipped: {e}", self.epoch);
                UpdateDiagnostics {
                    mode: "skipped".into(),
                    accepted: false,
                    backtracks: None,
                    kl: 0.0,
                    c: spec.c,
                    predicted_change: 0.0,
                    realized_change: 0.0,
                    eq16_ok: true,
                    cg_iterations: 0,
                    solver_error: Some(e.to_string()),
                    cost_surrogate: None,
                }
            }
            Err(e) => return Err(e),
        };
        if !diag.accepted && diag.solver_error.is_none() {
            log::info!("epoch {}: line search rejected every candidate", self.epoch);
        }

        let stats = prepared.stats;
        if self.config.algo.name == Algo::TrpoLagrangian {
            let step = stats.mean_discounted_cost - self.discounted_limit();
            self.lagrange_multiplier = (self.lagrange_multiplier + self.config.algo.lagrangian_lr * step).max(0.0);
        }

        self.cumulative_cost += batch.total_cost();
        self.cumulative_steps += batch.num_steps();
        let reported_surrogate = self.pending_surrogate;
        self.pending_surrogate = match (&prepared.increment_adv, diag.cost_surrogate) {
            (Some(adv), Some(cost_change)) => {
                stats.mean_increment_sum + cost_change + epsilon_term(advantage_bound(adv), self.horizon(), diag.kl)
            }
            (Some(_), None) => stats.mean_increment_sum,
            _ => f64::NAN,
        };

        let row = MetricsRow {
            epoch: self.epoch,
            j_r: stats.mean_return,
            m_c: stats.mean_cost,
            rho_c: self.cumulative_cost / self.cumulative_steps as f64,
            max_statewise_cost: stats.mean_max_cost,
            j_d_true: stats.mean_increment_sum,
            j_d_surrogate: reported_surrogate,
            j_c: stats.mean_discounted_cost,
            episodes: stats.episodes,
            mode: diag.mode,
            accepted: diag.accepted,
            backtracks: diag.backtracks,
            kl: diag.kl,
            c: diag.c,
            predicted_change: diag.predicted_change,
            realized_change: diag.realized_change,
            eq16_ok: diag.eq16_ok,
            lagrange_multiplier: self.lagrange_multiplier,
            value_loss: prepared.value_loss,
            cost_value_loss: prepared.cost_value_loss,
            cg_iterations: diag.cg_iterations,
            entropy: entropy(&self.policy),
            zero_targets_kept: prepared.subsample.zeros_kept,
            nonzero_targets: prepared.subsample.nonzero,
            solver_error: diag.solver_error.unwrap_or_default(),
        };
        log::info!(
            "{} epoch {:>4}  J_r {:>8.3}  M_c {:>7.4}  max_c {:>6.4}  rho_c {:.5}  mode {}  kl {:.4}",
            self.config.algo.name,
            row.epoch,
            row.j_r,
            row.m_c,
            row.max_statewise_cost,
            row.rho_c,
            row.mode,
            row.kl
        );
        self.epoch += 1;
        Ok(row)
    }

    pub fn write_checkpoint(&self, dir: &Path, tag: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.policy
            .write_snapshot(BufWriter::new(File::create(dir.join(format!("policy_{tag}.snap")))?))?;
        self.value
            .write_snapshot(BufWriter::new(File::create(dir.join(format!("value_{tag}.snap")))?))?;
        if let Some(cv) = &self.cost_value {
            cv.write_snapshot(BufWriter::new(File::create(dir.join(format!("cost_value_{tag}.snap")))?))?;
        }
        Ok(())
    }
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rows: Vec<MetricsRow>,
    pub summary: RunSummary,
    pub policy: GaussianPolicy,
}

/// Trains for `config.training.epochs` epochs.
///
/// With an output directory, `metrics.csv` is appended and flushed every
/// epoch, checkpoints go under `checkpoints/`, and `summary.json` is
/// written at the end.
pub fn run(config: &RunConfig, out_dir: Option<&Path>) -> Result<RunOutcome> {
    let mut trainer = Trainer::new(config.clone())?;
    let mut writer = None;
    let mut ckpt_dir: Option<PathBuf> = None;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        writer = Some(MetricsWriter::create(&dir.join("metrics.csv"))?);
        let ck = dir.join("checkpoints");
        trainer.write_checkpoint(&ck, "initial")?;
        ckpt_dir = Some(ck);
    }
    let every = config.training.checkpoint_every;
    let mut rows = Vec::with_capacity(config.training.epochs);
    for epoch in 0..config.training.epochs {
        let row = trainer.run_epoch()?;
        if let Some(w) = writer.as_mut() {
            w.append(&row)?;
        }
        rows.push(row);
        if let Some(ck) = &ckpt_dir {
            if every > 0 && (epoch + 1) % every == 0 {
                trainer.write_checkpoint(ck, &format!("epoch{:04}", epoch + 1))?;
            }
        }
    }
    if let Some(ck) = &ckpt_dir {
        if !rows.is_empty() {
            trainer.write_checkpoint(ck, "final")?;
        }
    }
    let summary = RunSummary {
        run_id: run_id(config),
        algo: config.algo.name.name().to_string(),
        seed: config.training.seed,
        epochs_completed: rows.len(),
        final_epoch: rows.last().cloned(),
        last_10: TailMeans::from_rows(&rows, 10),
        skipped_updates: rows.iter().filter(|r| !r.accepted).count(),
        recovery_updates: rows.iter().filter(|r| r.mode == "infeasible-recovery").count(),
        config: config.clone(),
    };
    if let Some(dir) = out_dir {
        let file = File::create(dir.join("summary.json"))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &summary)?;
    }
    Ok(RunOutcome {
        rows,
        summary,
        policy: trainer.policy,
    })
}
