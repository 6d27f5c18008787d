//! Stopping policies assembled from per-step decision networks.
//!
//! A policy holds one hard decision rule per time index. Stopping at the
//! horizon is forced, the interior rules come from training, and the rule
//! at a deterministic start collapses to a single precomputed bit. Paths
//! are scanned front to back and stop at the first index whose rule fires,
//! so a decision can never depend on anything after it.

use crate::net::NetworkParams;
use crate::process::{Direction, PathBatch};
use crate::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Decision at a deterministic start, resolved once during training by
/// comparing the immediate reward against an estimate of the value of
/// continuing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartRule {
    Stop,
    Continue,
}

/// A trained stopping policy for a problem with `n_steps` decision dates
/// after time zero.
///
/// `nets[n]` is the rule applied at step `n`; entries outside `1..n_steps`
/// stay `None` unless the start is random, in which case `nets[0]` is
/// trained like any other index. The horizon never consults a network.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Policy {
    pub n_steps: usize,
    pub feature_dim: usize,
    pub direction: Direction,
    pub nets: Vec<Option<NetworkParams>>,
    pub start_rule: Option<StartRule>,
    /// Fingerprint of the training configuration that produced this policy.
    pub config_digest: u64,
}

/// Where a path stopped and what it earned there, in the problem's native
/// orientation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoppedPath {
    pub stop_index: usize,
    pub reward: f64,
}

impl Policy {
    /// An untrained shell: every interior rule absent, start undecided.
    pub fn empty(n_steps: usize, feature_dim: usize, direction: Direction) -> Self {
        Policy {
            n_steps,
            feature_dim,
            direction,
            nets: vec![None; n_steps.max(1)],
            start_rule: None,
            config_digest: 0,
        }
    }

    fn net_at(&self, n: usize) -> Result<&NetworkParams> {
        self.nets
            .get(n)
            .and_then(|slot| slot.as_ref())
            .ok_or_else(|| Error::InvalidSpec(format!("policy has no rule at step {n}")))
    }

    /// Hard decisions at interior step `n` for every path in the batch.
    pub fn decisions_at(&self, batch: &PathBatch, n: usize) -> Result<Vec<bool>> {
        if n == 0 {
            if let Some(rule) = self.start_rule {
                return Ok(vec![rule == StartRule::Stop; batch.n_paths()]);
            }
        }
        self.net_at(n)?.decide_hard(batch.features_at(n))
    }

    /// First-hit scan beginning at `from_step`: each path stops at the first
    /// index `>= from_step` whose rule says stop; the horizon stops
    /// everything that survived. Only decisions at `from_step..n_steps` are
    /// ever evaluated, so later features cannot leak backwards.
    pub fn stop_indices_from(&self, batch: &PathBatch, from_step: usize) -> Result<Vec<usize>> {
        let n_paths = batch.n_paths();
        let horizon = self.n_steps;
        if from_step < batch.start_step {
            return Err(Error::InvalidSpec(format!(
                "scan from step {from_step} but batch starts at {}",
                batch.start_step
            )));
        }
        if batch.feature_dim() != self.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "policy expects {} features, batch has {}",
                self.feature_dim,
                batch.feature_dim()
            )));
        }
        let mut stop = vec![horizon; n_paths];
        if from_step >= horizon {
            return Ok(stop);
        }
        let mut alive: Vec<usize> = (0..n_paths).collect();
        let mut scratch = Array2::zeros((n_paths, self.feature_dim));
        for n in from_step..horizon {
            if alive.is_empty() {
                break;
            }
            let decided: Vec<bool> = if n == 0 && self.nets[0].is_none() {
                let rule = self.start_rule.unwrap_or(StartRule::Continue);
                vec![rule == StartRule::Stop; alive.len()]
            } else {
                let feats = batch.features_at(n);
                let mut rows = scratch.slice_mut(ndarray::s![..alive.len(), ..]);
                for (i, &k) in alive.iter().enumerate() {
                    rows.row_mut(i).assign(&feats.row(k));
                }
                self.net_at(n)?.decide_hard(rows.view())?
            };
            let mut still = Vec::with_capacity(alive.len());
            for (i, &k) in alive.iter().enumerate() {
                if decided[i] {
                    stop[k] = n;
                } else {
                    still.push(k);
                }
            }
            alive = still;
        }
        Ok(stop)
    }

    /// Stop index for every path, scanning from the batch's first stored
    /// step (zero for fresh paths, the branch date for continuation paths).
    pub fn stop_indices(&self, batch: &PathBatch) -> Result<Vec<usize>> {
        self.stop_indices_from(batch, batch.start_step)
    }

    /// Stop index and native reward per path.
    pub fn realize(&self, batch: &PathBatch) -> Result<Vec<StoppedPath>> {
        let stops = self.stop_indices(batch)?;
        Ok(stops
            .iter()
            .enumerate()
            .map(|(k, &n)| StoppedPath { stop_index: n, reward: batch.reward_of(k, n) })
            .collect())
    }

    /// Mean signed reward when every path stops at its first hit after
    /// `from_step`. Used for continuation values during training.
    pub fn mean_signed_reward_from(&self, batch: &PathBatch, from_step: usize) -> Result<f64> {
        let stops = self.stop_indices_from(batch, from_step)?;
        let sign = self.direction.sign();
        let mut total = 0.0;
        for (k, &n) in stops.iter().enumerate() {
            total += sign * batch.reward_of(k, n);
        }
        Ok(total / batch.n_paths() as f64)
    }

    /// Single-path convenience wrapper around the batched scan.
    pub fn stop_single(&self, batch: &PathBatch, path: usize) -> Result<StoppedPath> {
        let stops = self.stop_indices(batch)?;
        let n = *stops
            .get(path)
            .ok_or_else(|| Error::InvalidSpec(format!("path {path} out of range")))?;
        Ok(StoppedPath { stop_index: n, reward: batch.reward_of(path, n) })
    }

    /// One CSV row per path: `path,stop_index,reward` (native orientation).
    pub fn write_stops_csv<W: Write>(&self, batch: &PathBatch, mut w: W) -> Result<()> {
        let stops = self.realize(batch)?;
        writeln!(w, "path,stop_index,reward")?;
        for (k, s) in stops.iter().enumerate() {
            writeln!(w, "{k},{},{}", s.stop_index, crate::experiment::fmt_sig6(s.reward))?;
        }
        Ok(())
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn load<R: std::io::Read>(r: R) -> Result<Policy> {
        serde_json::from_reader(r).map_err(|e| Error::Serde(e.to_string()))
    }
}
