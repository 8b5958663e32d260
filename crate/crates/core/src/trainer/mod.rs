//! The epoch loop: rollouts, value fitting, advantage assembly, and the
//! per-algorithm trust-region update.

mod config;
mod metrics;
mod rollout;
mod update;

pub use config::{Algo, AlgoSection, EnvSection, RunConfig, TrainingSection};
pub use metrics::{read_metrics, run_id, MetricsRow, MetricsWriter, RunSummary, TailMeans, METRICS_HEADER};
pub use rollout::{collect_rollouts, BatchBuffer, EpisodeStats};
pub use update::{
    advantage_bound, apply_update, compute_slack_c, epsilon_term, propose, Proposal, SurrogateContext,
    UpdateDiagnostics, UpdateSpec,
};

mod engine;
pub use engine::{run, PreparedBatch, RunOutcome, SubsampleStats, Trainer};
