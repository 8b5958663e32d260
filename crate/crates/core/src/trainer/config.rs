use serde::{Deserialize, Serialize};

use crate::advantage::AdvantageConfig;
use crate::envs::{Circle, EnvConfig};
use crate::error::{Error, Result};
use crate::trust_region::{CgConfig, LineSearchConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Scpo,
    Trpo,
    #[serde(alias = "trpo-lagrangian", alias = "lagrangian")]
    TrpoLagrangian,
    Cpo,
}

impl Algo {
    pub const ALL: [Algo; 4] = [Algo::Scpo, Algo::Trpo, Algo::TrpoLagrangian, Algo::Cpo];

    pub fn name(&self) -> &'static str {
        match self {
            Algo::Scpo => "scpo",
            Algo::Trpo => "trpo",
            Algo::TrpoLagrangian => "trpo_lagrangian",
            Algo::Cpo => "cpo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "scpo" => Ok(Algo::Scpo),
            "trpo" => Ok(Algo::Trpo),
            "trpo_lagrangian" | "lagrangian" => Ok(Algo::TrpoLagrangian),
            "cpo" => Ok(Algo::Cpo),
            other => Err(Error::config(format!(
                "unknown algorithm `{other}` (expected scpo, trpo, trpo_lagrangian or cpo)"
            ))),
        }
    }

    /// Whether the algorithm fits a value network for cost increments.
    pub fn uses_increments(&self) -> bool {
        matches!(self, Algo::Scpo)
    }

    /// Whether the algorithm fits a value network for discounted raw costs.
    pub fn uses_discounted_costs(&self) -> bool {
        matches!(self, Algo::TrpoLagrangian | Algo::Cpo)
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `[env]` section: a layout preset plus optional geometry overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub preset: String,
    /// Replaces the preset's hazard centers.
    pub hazards: Option<Vec<[f64; 2]>>,
    /// Replaces the preset's pillar centers.
    pub pillars: Option<Vec<[f64; 2]>>,
    pub max_episode_steps: Option<usize>,
    pub goal_radius: Option<f64>,
    pub hazard_radius: Option<f64>,
    pub pillar_radius: Option<f64>,
    pub world_half_extent: Option<f64>,
    pub dt: Option<f64>,
    pub max_speed: Option<f64>,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            preset: "point-hazard-4".into(),
            hazards: None,
            pillars: None,
            max_episode_steps: None,
            goal_radius: None,
            hazard_radius: None,
            pillar_radius: None,
            world_half_extent: None,
            dt: None,
            max_speed: None,
        }
    }
}

impl EnvSection {
    pub fn build(&self, seed: u64) -> Result<EnvConfig> {
        let mut cfg = if self.preset == "open-field" {
            EnvConfig::open_field()
        } else {
            EnvConfig::preset(&self.preset)?
        };
        if let Some(centers) = &self.hazards {
            cfg.hazards = centers
                .iter()
                .map(|c| Circle::new(c[0], c[1], crate::envs::DEFAULT_HAZARD_RADIUS))
                .collect();
        }
        if let Some(centers) = &self.pillars {
            cfg.pillars = centers
                .iter()
                .map(|c| Circle::new(c[0], c[1], crate::envs::DEFAULT_PILLAR_RADIUS))
                .collect();
        }
        fn set_radius(list: &mut [Circle], r: Option<f64>) {
            if let Some(r) = r {
                list.iter_mut().for_each(|c| c.radius = r);
            }
        }
        set_radius(&mut cfg.hazards, self.hazard_radius);
        set_radius(&mut cfg.pillars, self.pillar_radius);
        if let Some(v) = self.max_episode_steps {
            cfg.max_episode_steps = v;
        }
        if let Some(v) = self.goal_radius {
            cfg.goal_radius = v;
        }
        if let Some(v) = self.world_half_extent {
            cfg.world_half_extent = v;
        }
        if let Some(v) = self.dt {
            cfg.dt = v;
        }
        if let Some(v) = self.max_speed {
            cfg.max_speed = v;
        }
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `[algo]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoSection {
    pub name: Algo,
    pub delta: f64,
    /// Cost limit `w`.
    pub cost_limit: f64,
    pub num_constraints: usize,
    pub epsilon_term: bool,
    pub lagrangian_lr: f64,
    pub gamma: f64,
    pub lam: f64,
    pub cost_lam: f64,
    pub damping: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub backtrack_coeff: f64,
    pub max_backtracks: usize,
}

impl Default for AlgoSection {
    fn default() -> Self {
        let adv = AdvantageConfig::default();
        let cg = CgConfig::default();
        let ls = LineSearchConfig::default();
        Self {
            name: Algo::Scpo,
            delta: 0.02,
            cost_limit: 0.0,
            num_constraints: 1,
            epsilon_term: false,
            lagrangian_lr: 0.005,
            gamma: adv.gamma,
            lam: adv.lam,
            cost_lam: adv.cost_lam,
            damping: 0.01,
            cg_iters: cg.max_iters,
            cg_tol: cg.residual_tol,
            backtrack_coeff: ls.backtrack_coeff,
            max_backtracks: ls.max_backtracks,
        }
    }
}

/// `[training]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub value_iters: usize,
    pub value_lr: f64,
    /// Rows per Adam step when fitting value networks; 0 means full batch.
    pub value_batch: usize,
    /// Write a policy snapshot every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            epochs: 100,
            steps_per_epoch: 4000,
            seed: 0,
            hidden: vec![64, 64],
            value_iters: crate::neural::VALUE_ITERATIONS,
            value_lr: crate::neural::VALUE_LEARNING_RATE,
            value_batch: 512,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSection,
    pub algo: AlgoSection,
    pub training: TrainingSection,
}

impl RunConfig {
    pub fn for_algo(algo: Algo) -> Self {
        let mut cfg = Self::default();
        cfg.algo.name = algo;
        cfg
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        self.env.build(self.training.seed)
    }

    pub fn advantage(&self) -> AdvantageConfig {
        AdvantageConfig {
            gamma: self.algo.gamma,
            lam: self.algo.lam,
            cost_gamma: 1.0,
            cost_lam: self.algo.cost_lam,
        }
    }

    pub fn cg(&self) -> CgConfig {
        CgConfig {
            max_iters: self.algo.cg_iters,
            residual_tol: self.algo.cg_tol,
        }
    }

    pub fn line_search(&self) -> LineSearchConfig {
        LineSearchConfig {
            backtrack_coeff: self.algo.backtrack_coeff,
            max_backtracks: self.algo.max_backtracks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let env = self.env_config()?;
        self.advantage().validate()?;
        let a = &self.algo;
        let t = &self.training;
        if a.num_constraints != 1 {
            return Err(Error::config(format!(
                "num_constraints = {}: only a single constraint is supported",
                a.num_constraints
            )));
        }
        if !(a.delta.is_finite() && a.delta > 0.0) {
            return Err(Error::config("delta must be positive"));
        }
        if !(a.cost_limit.is_finite() && a.cost_limit >= 0.0) {
            return Err(Error::config("cost_limit must be non-negative"));
        }
        if !(a.lagrangian_lr.is_finite() && a.lagrangian_lr >= 0.0) {
            return Err(Error::config("lagrangian_lr must be non-negative"));
        }
        if !(a.damping.is_finite() && a.damping >= 0.0) {
            return Err(Error::config("damping must be non-negative"));
        }
        if a.cg_iters == 0 || !(a.cg_tol > 0.0) {
            return Err(Error::config("cg_iters and cg_tol must be positive"));
        }
        if !(a.backtrack_coeff > 0.0 && a.backtrack_coeff < 1.0) || a.max_backtracks == 0 {
            return Err(Error::config(
                "backtrack_coeff must lie in (0, 1) and max_backtracks must be positive",
            ));
        }
        if t.steps_per_epoch < env.max_episode_steps {
            return Err(Error::config(format!(
                "steps_per_epoch = {} is shorter than one episode ({} steps)",
                t.steps_per_epoch, env.max_episode_steps
            )));
        }
        if t.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("hidden layer sizes must be positive"));
        }
        if t.value_iters == 0 || !(t.value_lr > 0.0) {
            return Err(Error::config("value_iters and value_lr must be positive"));
        }
        Ok(())
    }
}
