use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::Result;

/// Column order of `metrics.csv`.
pub const METRICS_HEADER: [&str; 25] = [
    "epoch",
    "J_r",
    "M_c",
    "rho_c",
    "max_statewise_cost",
    "J_D_true",
    "J_D_surrogate",
    "J_C",
    "episodes",
    "mode",
    "accepted",
    "backtracks",
    "kl",
    "c",
    "predicted_change",
    "realized_change",
    "eq16_ok",
    "lagrange_multiplier",
    "value_loss",
    "cost_value_loss",
    "cg_iterations",
    "entropy",
    "zero_targets_kept",
    "nonzero_targets",
    "solver_error",
];

/// One epoch of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    /// Mean episodic return.
    #[serde(rename = "J_r")]
    pub j_r: f64,
    /// Mean episodic cost sum.
    #[serde(rename = "M_c")]
    pub m_c: f64,
    /// Cumulative cost over cumulative steps since the start of training.
    pub rho_c: f64,
    /// Mean over episodes of the largest single-step cost.
    pub max_statewise_cost: f64,
    /// Mean episodic sum of cost increments.
    #[serde(rename = "J_D_true")]
    pub j_d_true: f64,
    /// Bound on this epoch's `J_D` predicted by the previous update.
    #[serde(rename = "J_D_surrogate")]
    pub j_d_surrogate: f64,
    /// Mean discounted episodic cost.
    #[serde(rename = "J_C")]
    pub j_c: f64,
    pub episodes: usize,
    pub mode: String,
    pub accepted: bool,
    pub backtracks: Option<usize>,
    /// KL of the applied update, re-measured on the update batch.
    pub kl: f64,
    pub c: f64,
    pub predicted_change: f64,
    pub realized_change: f64,
    pub eq16_ok: bool,
    pub lagrange_multiplier: f64,
    pub value_loss: f64,
    pub cost_value_loss: f64,
    pub cg_iterations: usize,
    pub entropy: f64,
    pub zero_targets_kept: usize,
    pub nonzero_targets: usize,
    pub solver_error: String,
}

/// Appends rows to `metrics.csv`, flushing after each one.
pub struct MetricsWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path)?;
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(BufWriter::new(file));
        inner.write_record(METRICS_HEADER)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Averages of the headline metrics over the last few epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailMeans {
    pub window: usize,
    #[serde(rename = "J_r")]
    pub j_r: f64,
    #[serde(rename = "M_c")]
    pub m_c: f64,
    pub rho_c: f64,
    pub max_statewise_cost: f64,
}

impl TailMeans {
    pub fn from_rows(rows: &[MetricsRow], window: usize) -> Self {
        let tail = &rows[rows.len().saturating_sub(window)..];
        let n = tail.len().max(1) as f64;
        let mean = |f: fn(&MetricsRow) -> f64| {
            if tail.is_empty() {
                f64::NAN
            } else {
                tail.iter().map(f).sum::<f64>() / n
            }
        };
        Self {
            window: tail.len(),
            j_r: mean(|r| r.j_r),
            m_c: mean(|r| r.m_c),
            rho_c: mean(|r| r.rho_c),
            max_statewise_cost: mean(|r| r.max_statewise_cost),
        }
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub algo: String,
    pub seed: u64,
    pub epochs_completed: usize,
    pub final_epoch: Option<MetricsRow>,
    pub last_10: TailMeans,
    pub skipped_updates: usize,
    pub recovery_updates: usize,
    pub config: RunConfig,
}

/// Short hexadecimal digest of the configuration (FNV-1a over its JSON).
pub fn run_id(config: &RunConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in json.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")[..12].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize) -> MetricsRow {
        MetricsRow {
            epoch,
            j_r: 1.5,
            m_c: 0.25,
            rho_c: 0.001,
            max_statewise_cost: 0.1,
            j_d_true: 0.1,
            j_d_surrogate: f64::NAN,
            j_c: 0.2,
            episodes: 20,
            mode: "feasible".into(),
            accepted: true,
            backtracks: Some(3),
            kl: 0.012,
            c: 0.1,
            predicted_change: -0.01,
            realized_change: -0.008,
            eq16_ok: true,
            lagrange_multiplier: 0.0,
            value_loss: 0.5,
            cost_value_loss: 0.01,
            cg_iterations: 40,
            entropy: 1.8,
            zero_targets_kept: 10,
            nonzero_targets: 10,
            solver_error: String::new(),
        }
    }

    #[test]
    fn csv_round_trip_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        w.append(&row(0)).unwrap();
        let mut skipped = row(1);
        skipped.backtracks = None;
        skipped.accepted = false;
        w.append(&skipped).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER.join(","));
        assert!(text
            .lines()
            .next()
            .unwrap()
            .starts_with("epoch,J_r,M_c,rho_c,max_statewise_cost,J_D_true,J_D_surrogate"));
        let back = read_metrics(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back[0].j_d_surrogate.is_nan());
        assert_eq!(back[1].backtracks, None);
        assert_eq!(back[0].epoch, 0);
    }

    #[test]
    fn empty_run_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        MetricsWriter::create(&path).unwrap();
        assert!(read_metrics(&path).unwrap().is_empty());
    }

    #[test]
    fn tail_means_use_last_rows() {
        let mut rows: Vec<MetricsRow> = (0..15).map(row).collect();
        for (i, r) in rows.iter_mut().enumerate() {
            r.j_r = i as f64;
        }
        let t = TailMeans::from_rows(&rows, 10);
        assert_eq!(t.window, 10);
        assert!((t.j_r - 9.5).abs() < 1e-12);
    }

    #[test]
    fn run_id_depends_on_config() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.training.seed = 1;
        assert_eq!(run_id(&a), run_id(&a.clone()));
        assert_ne!(run_id(&a), run_id(&b));
        assert_eq!(run_id(&a).len(), 12);
    }
}
