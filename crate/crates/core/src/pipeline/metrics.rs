//! Alignment diagnostics and wall-clock comparisons.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{dba_average, dtw_distance, medoid, DtwOptions};
use crate::data::{ClassGroup, Label, LabeledDataset, Series};
use crate::error::{contract, Result};
use crate::losses::{mean_pairwise_loss_of, LossConfig};
use crate::net::NetConfig;
use crate::pipeline::classify::{DBA_MAX_ITER, DBA_TOL};
use crate::pipeline::train::{infer_warp, train_class_warper, ClassWarper, TrainConfig};
use crate::warp::{apply_warp, build_soft_matrix, PiecewiseLinearWarp};

/// How warped series are materialized for [`mtsa_objective`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveForm {
    /// Multiply by the soft warp matrix.
    Matrix,
    /// Evaluate each series directly at the warped time positions.
    Functional,
}

/// Sum of squared Frobenius distances over all ordered pairs of warped
/// series. Both forms agree up to rounding.
pub fn mtsa_objective(items: &[(Series, PiecewiseLinearWarp)], form: ObjectiveForm) -> Result<f64> {
    let warped: Vec<Series> = items
        .iter()
        .map(|(x, w)| match form {
            ObjectiveForm::Matrix => apply_warp(&build_soft_matrix(w, x.len())?, x),
            ObjectiveForm::Functional => compose(x, w),
        })
        .collect::<Result<_>>()?;
    pairwise_sq_distance(&warped)
}

/// [`mtsa_objective`] of series that are already warped.
pub fn pairwise_sq_distance(series: &[Series]) -> Result<f64> {
    if let Some(first) = series.first() {
        if series
            .iter()
            .any(|s| s.dim() != first.dim() || s.len() != first.len())
        {
            return contract("objective needs equal-shape series");
        }
    }
    let mut total = 0.0;
    for a in series {
        for b in series {
            total += a
                .values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
    }
    Ok(total)
}

fn compose(x: &Series, w: &PiecewiseLinearWarp) -> Result<Series> {
    let src = x.len();
    let t_out = w.target_len();
    let mut values = Vec::with_capacity(x.dim() * t_out);
    for row in x.rows() {
        for i in 0..t_out {
            let u = w.tau_unchecked(i as f64).clamp(0.0, (src - 1) as f64);
            let lo = (u.floor() as usize).min(src - 2);
            let frac = u - lo as f64;
            values.push((1.0 - frac) * row[lo] + frac * row[lo + 1]);
        }
    }
    Series::new(x.dim(), t_out, values)
}

/// Unweighted mean over classes of each class's mean pairwise loss.
pub fn dataset_pairwise_loss(groups: &[Vec<Series>], epsilon: f64) -> Result<f64> {
    if groups.is_empty() {
        return contract("no classes to summarize");
    }
    let mut sum = 0.0;
    for g in groups {
        sum += mean_pairwise_loss_of(g, epsilon)?;
    }
    Ok(sum / groups.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAlignment {
    pub label: Label,
    pub n_train: usize,
    pub pre_loss: f64,
    pub post_loss: f64,
}

/// Summary of one dataset run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub dataset: String,
    pub classes: Vec<ClassAlignment>,
    pub train_s: f64,
    pub test_s: f64,
    pub accuracy: Vec<(String, f64)>,
    pub mpce: Option<f64>,
}

impl AlignmentReport {
    pub fn cs_org(&self) -> f64 {
        mean(self.classes.iter().map(|c| c.pre_loss))
    }

    pub fn cs_warp(&self) -> f64 {
        mean(self.classes.iter().map(|c| c.post_loss))
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Pre/post alignment loss of a trained warper's class.
pub fn class_alignment(
    group: &ClassGroup,
    warper: &ClassWarper,
    epsilon: f64,
) -> Result<ClassAlignment> {
    Ok(ClassAlignment {
        label: group.label,
        n_train: group.len(),
        pre_loss: mean_pairwise_loss_of(&group.series, epsilon)?,
        post_loss: mean_pairwise_loss_of(&warper.warped_group, epsilon)?,
    })
}

/// One row of the timing comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub name: String,
    pub label: Label,
    pub n_train: usize,
    pub our_train_s: f64,
    pub our_test_s: f64,
    pub our_whole_s: f64,
    pub dba_whole_s: f64,
}

/// Times training plus warping of every test item against DBA averaging plus
/// DTW alignment of every test item to the barycenter.
pub fn timing_bench(
    name: &str,
    group: &ClassGroup,
    test: &LabeledDataset,
    net_cfg: &NetConfig,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<TimingRow> {
    let start = Instant::now();
    let warper = train_class_warper(group, net_cfg, train_cfg, loss_cfg)?;
    let our_train_s = start.elapsed().as_secs_f64();

    let start = Instant::now();
    for it in &test.items {
        infer_warp(&warper, &it.series)?;
    }
    let our_test_s = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let init = medoid(group)?;
    let bary = dba_average(group, &init, DBA_MAX_ITER, DBA_TOL)?.barycenter;
    for it in &test.items {
        dtw_distance(&it.series, &bary, DtwOptions::default())?;
    }
    let dba_whole_s = start.elapsed().as_secs_f64();

    Ok(TimingRow {
        name: name.to_string(),
        label: group.label,
        n_train: group.len(),
        our_train_s,
        our_test_s,
        our_whole_s: our_train_s + our_test_s,
        dba_whole_s,
    })
}
