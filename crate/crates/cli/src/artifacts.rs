//! Output files. Everything written here is a pure function of the config
//! and seeds, so repeated runs are byte-identical.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use clipbound::HistoryRow;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;

pub const HISTORY_HEADER: &str = "step,loss,clip_bound,noisy_clip_fraction,grad_norm_p50,grad_norm_p90,grad_norm_max";
pub const SWEEP_HEADER: &str =
    "trial_index,learning_rate,clip_param,batch_size,seed,objective,macro_acc,worst_acc,per_run_epsilon";

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Common manifest written into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub sigma_grad: Option<f64>,
    pub sigma_count: Option<f64>,
    pub steps: usize,
    pub sampling_rate: f64,
    pub metrics: Value,
    pub non_private_flags: Vec<String>,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hpo: Option<Value>,
}

/// One sweep CSV record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub trial_index: usize,
    pub learning_rate: f64,
    pub clip_param: f64,
    pub batch_size: Option<f64>,
    pub seed: u64,
    pub objective: Option<f64>,
    pub macro_acc: Option<f64>,
    pub worst_acc: Option<f64>,
    pub per_run_epsilon: Option<f64>,
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_records<T: Serialize>(path: &Path, header: &str, rows: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header.split(','))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    write_records(path, HISTORY_HEADER, rows).with_context(|| format!("writing {}", path.display()))
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_records(path, SWEEP_HEADER, rows).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Mean and standard error (sample std / √n; zero for a single value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub values: Vec<f64>,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            se,
            values: values.to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_se_of_known_values() {
        let s = MeanSe::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        // sample variance 5/3
        assert!((s.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanSe::of(&[7.0]).se, 0.0);
    }

    #[test]
    fn history_round_trips_with_exact_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let rows = vec![
            HistoryRow {
                step: 0,
                loss: 0.5,
                clip_bound: 1.0,
                noisy_clip_fraction: None,
                grad_norm_p50: Some(0.25),
                grad_norm_p90: Some(0.5),
                grad_norm_max: Some(1.0),
            },
            HistoryRow {
                step: 1,
                loss: 0.25,
                clip_bound: 0.9,
                noisy_clip_fraction: Some(0.4),
                grad_norm_p50: None,
                grad_norm_p90: None,
                grad_norm_max: None,
            },
        ];
        write_history(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), HISTORY_HEADER);
        assert_eq!(read_history(&path).unwrap(), rows);
    }

    #[test]
    fn sweep_header_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let row = SweepRow {
            trial_index: 0,
            learning_rate: 1.0,
            clip_param: 0.1,
            batch_size: None,
            seed: 3,
            objective: Some(0.5),
            macro_acc: Some(0.5),
            worst_acc: Some(0.25),
            per_run_epsilon: Some(2.0),
        };
        write_sweep(&path, std::slice::from_ref(&row)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), SWEEP_HEADER);
        assert_eq!(read_sweep(&path).unwrap(), vec![row]);
    }
}
