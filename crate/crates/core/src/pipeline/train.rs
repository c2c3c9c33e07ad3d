//! Per-class warper training, inference and warped averaging.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::data::{mean_series, ClassGroup, Label, Series};
use crate::error::{contract, Error, Result};
use crate::losses::{series_loss, LossConfig};
use crate::net::{NetConfig, WarperNetwork};
use crate::objective::{loss_and_grad, warp_forward};
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub checkpoint_every: usize,
    pub lr: f64,
    /// First epoch (1-based) from which each signal's fresh warp replaces its
    /// entry in the working set the other signals are scored against. The
    /// network itself always reads the original signal. `None` disables
    /// substitution.
    pub substitution_start_epoch: Option<usize>,
    pub validation_fraction: f64,
    /// One restart per seed.
    pub seeds: Vec<u64>,
    /// Where periodic snapshots go, if anywhere.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            checkpoint_every: 5,
            lr: 1e-3,
            substitution_start_epoch: Some(6),
            validation_fraction: 0.2,
            seeds: vec![0, 1, 2],
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.checkpoint_every == 0 || self.checkpoint_every > self.epochs {
            return bad(format!(
                "checkpoint_every must lie in 1..={}, got {}",
                self.epochs, self.checkpoint_every
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.substitution_start_epoch == Some(0) {
            return bad("substitution_start_epoch must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        Ok(())
    }

    fn substituting(&self, epoch: usize) -> bool {
        self.substitution_start_epoch.is_some_and(|s| epoch >= s)
    }
}

/// A trained per-class warper together with its warped training group.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWarper {
    pub label: Label,
    pub network: WarperNetwork,
    /// Every member of the training group after alignment, in input order.
    pub warped_group: Vec<Series>,
    /// Mean training loss per epoch of the selected restart.
    pub history: Vec<f64>,
    pub seed: u64,
    /// Epoch of the selected snapshot.
    pub epoch: usize,
    pub validation_loss: f64,
}

impl ClassWarper {
    pub fn series_len(&self) -> usize {
        self.network.config().input_len
    }
}

/// Outcome of one restart.
#[derive(Clone, Debug)]
pub struct RestartSummary {
    pub seed: u64,
    pub history: Vec<f64>,
    /// `(epoch, validation loss)` at every snapshot.
    pub snapshots: Vec<(usize, f64)>,
}

struct Snapshot {
    network: WarperNetwork,
    warped_group: Vec<Series>,
    epoch: usize,
    validation_loss: f64,
}

/// Seeded split into (training indices, held-out indices), both ascending.
/// At least two members always stay in training.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let held = ((fraction * n as f64).round() as usize).min(n.saturating_sub(2));
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    idx.shuffle(&mut rng);
    let mut val = idx[..held].to_vec();
    let mut train = idx[held..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

fn check_group(group: &ClassGroup, net_cfg: &NetConfig) -> Result<()> {
    if group.len() < 2 {
        return contract(format!(
            "class {} has {} series; training needs at least 2",
            group.label,
            group.len()
        ));
    }
    match group.shape() {
        Some((d, t)) if d == net_cfg.input_dim && t == net_cfg.input_len => Ok(()),
        Some((d, t)) => contract(format!(
            "class {} series are {d}x{t}, network expects {}x{}",
            group.label, net_cfg.input_dim, net_cfg.input_len
        )),
        None => unreachable!("group has members"),
    }
}

/// Trains one restart per seed and keeps the snapshot with the lowest
/// held-out alignment loss.
pub fn train_class_warper(
    group: &ClassGroup,
    net_cfg: &NetConfig,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<ClassWarper> {
    train_class_warper_detailed(group, net_cfg, train_cfg, loss_cfg).map(|(w, _)| w)
}

/// [`train_class_warper`] that also reports every restart.
pub fn train_class_warper_detailed(
    group: &ClassGroup,
    net_cfg: &NetConfig,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<(ClassWarper, Vec<RestartSummary>)> {
    train_cfg.validate()?;
    loss_cfg.validate()?;
    net_cfg.validate()?;
    check_group(group, net_cfg)?;
    if let Some(dir) = &train_cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let runs = par::map_slice(&train_cfg.seeds, |&seed| {
        train_restart(group, net_cfg, train_cfg, loss_cfg, seed)
    });
    let mut best: Option<(Snapshot, Vec<f64>, u64)> = None;
    let mut summaries = Vec::with_capacity(runs.len());
    for run in runs {
        let (snap, history, seed, snapshots) = run?;
        summaries.push(RestartSummary {
            seed,
            history: history.clone(),
            snapshots,
        });
        if best
            .as_ref()
            .is_none_or(|(b, _, _)| snap.validation_loss < b.validation_loss)
        {
            best = Some((snap, history, seed));
        }
    }
    let (snap, history, seed) = best.expect("at least one seed");
    let warper = ClassWarper {
        label: group.label,
        network: snap.network,
        warped_group: snap.warped_group,
        history,
        seed,
        epoch: snap.epoch,
        validation_loss: snap.validation_loss,
    };
    Ok((warper, summaries))
}

fn training_error(epoch: usize, signal: usize, e: Error) -> Error {
    match e {
        Error::Training { .. } => e,
        other => Error::Training {
            epoch,
            signal,
            msg: other.to_string(),
        },
    }
}

type RestartResult = (Snapshot, Vec<f64>, u64, Vec<(usize, f64)>);

fn train_restart(
    group: &ClassGroup,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    seed: u64,
) -> Result<RestartResult> {
    let (train_idx, val_idx) = validation_split(group.len(), cfg.validation_fraction, seed);
    let mut net = WarperNetwork::init(net_cfg.clone(), seed)?;
    let mut working: Vec<Series> = train_idx.iter().map(|&i| group.series[i].clone()).collect();
    let n = working.len();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<Snapshot> = None;
    let mut snapshots = Vec::new();

    for epoch in 1..=cfg.epochs {
        let substitute = cfg.substituting(epoch);
        let mut total = 0.0;
        for i in 0..n {
            let signal = train_idx[i];
            let targets: Vec<&Series> = (0..n).filter(|&j| j != i).map(|j| &working[j]).collect();
            let (le, grads) = loss_and_grad(&net, &group.series[signal], &targets, loss_cfg)
                .map_err(|e| training_error(epoch, signal, e))?;
            if !le.loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    signal,
                    msg: format!("loss is {}", le.loss),
                });
            }
            net.step(&grads, cfg.lr)
                .map_err(|e| training_error(epoch, signal, e))?;
            total += le.loss;
            if substitute {
                working[i] = le.eval.warped;
            }
        }
        history.push(total / n as f64);

        if epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs {
            let snap = snapshot(group, &net, &train_idx, &val_idx, loss_cfg, epoch)?;
            snapshots.push((epoch, snap.validation_loss));
            if let Some(dir) = &cfg.checkpoint_dir {
                let meta = CheckpointMeta {
                    dataset: String::new(),
                    label: group.label,
                    epoch,
                    loss: snap.validation_loss,
                };
                let avg = mean_series(&snap.warped_group)?;
                let path = dir.join(format!("class{}.seed{seed}.epoch{epoch}.wrpn", group.label));
                save_checkpoint(&net, &meta, Some(&avg), path)?;
            }
            if best
                .as_ref()
                .is_none_or(|b| snap.validation_loss < b.validation_loss)
            {
                best = Some(snap);
            }
        }
    }
    Ok((
        best.expect("final epoch is always a snapshot"),
        history,
        seed,
        snapshots,
    ))
}

/// Aligned view of the whole group under the current network, and the
/// held-out loss against the training members' average.
fn snapshot(
    group: &ClassGroup,
    net: &WarperNetwork,
    train_idx: &[usize],
    val_idx: &[usize],
    loss_cfg: &LossConfig,
    epoch: usize,
) -> Result<Snapshot> {
    let warped: Vec<Series> =
        par::map_slice(&group.series, |s| warp_forward(net, s).map(|e| e.warped))
            .into_iter()
            .collect::<Result<_>>()?;
    let train_avg = mean_series(train_idx.iter().map(|&i| &warped[i]))?;
    let scored = if val_idx.is_empty() {
        train_idx
    } else {
        val_idx
    };
    let mut total = 0.0;
    for &i in scored {
        total += series_loss(&warped[i], &train_avg, loss_cfg.epsilon)?;
    }
    Ok(Snapshot {
        network: net.clone(),
        warped_group: warped,
        epoch,
        validation_loss: total / scored.len() as f64,
    })
}
/// Warps one series with a trained class warper. A single forward pass; the
/// cost does not depend on the training-group size.
pub fn infer_warp(warper: &ClassWarper, series: &Series) -> Result<Series> {
    infer_with(&warper.network, series)
}

pub fn infer_with(net: &WarperNetwork, series: &Series) -> Result<Series> {
    let cfg = net.config();
    if series.len() != cfg.input_len || series.dim() != cfg.input_dim {
        return contract(format!(
            "series is {}x{}, warper expects {}x{}",
            series.dim(),
            series.len(),
            cfg.input_dim,
            cfg.input_len
        ));
    }
    Ok(warp_forward(net, series)?.warped)
}

/// Arithmetic mean of the warped training group: the class representative.
pub fn warped_average(warper: &ClassWarper) -> Result<Series> {
    mean_series(&warper.warped_group)
}
