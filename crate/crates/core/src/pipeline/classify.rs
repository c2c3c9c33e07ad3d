//! Nearest-neighbour classifiers and the per-class error summary.

use std::collections::BTreeMap;

use crate::baselines::{dba_average, dtw_distance, medoid, DtwOptions};
use crate::data::{group_by_label, Label, LabeledDataset, Series};
use crate::error::{contract, Result};
use crate::losses::{series_loss, LossConfig};
use crate::par;
use crate::pipeline::train::{infer_warp, warped_average, ClassWarper};

/// DBA iteration cap and relative tolerance used for class barycenters.
pub const DBA_MAX_ITER: usize = 10;
pub const DBA_TOL: f64 = 1e-5;

fn squared_euclidean(a: &Series, b: &Series) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn check_sets(train: &LabeledDataset, test: &LabeledDataset) -> Result<()> {
    if train.is_empty() || test.is_empty() {
        return contract("classification needs nonempty train and test sets");
    }
    let shape = |s: &Series| (s.dim(), s.len());
    let want = shape(&train.items[0].series);
    if train
        .items
        .iter()
        .chain(&test.items)
        .any(|it| shape(&it.series) != want)
    {
        return contract("train and test series must share one length; equalize first");
    }
    Ok(())
}

fn accuracy(test: &LabeledDataset, predicted: &[Label]) -> f64 {
    let hits = test
        .items
        .iter()
        .zip(predicted)
        .filter(|(it, p)| it.label == **p)
        .count();
    hits as f64 / test.len() as f64
}

/// Index of the smallest score; the first one wins ties.
fn argmin(scores: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, s) in scores.into_iter().enumerate() {
        if s < best.0 {
            best = (s, i);
        }
    }
    best.1
}

/// Euclidean 1-NN predictions.
pub fn predict_nn(train: &LabeledDataset, test: &LabeledDataset) -> Result<Vec<Label>> {
    check_sets(train, test)?;
    Ok(par::map_slice(&test.items, |q| {
        let i = argmin(
            train
                .items
                .iter()
                .map(|t| squared_euclidean(&q.series, &t.series)),
        );
        train.items[i].label
    }))
}

pub fn classify_nn(train: &LabeledDataset, test: &LabeledDataset) -> Result<f64> {
    Ok(accuracy(test, &predict_nn(train, test)?))
}

/// DTW 1-NN predictions (unconstrained window, squared local cost).
pub fn predict_dtw_nn(train: &LabeledDataset, test: &LabeledDataset) -> Result<Vec<Label>> {
    check_sets(train, test)?;
    par::map_slice(&test.items, |q| {
        let mut best = (f64::INFINITY, 0);
        for (i, t) in train.items.iter().enumerate() {
            let d = dtw_distance(&q.series, &t.series, DtwOptions::default())?;
            if d < best.0 {
                best = (d, i);
            }
        }
        Ok(train.items[best.1].label)
    })
    .into_iter()
    .collect()
}

pub fn classify_dtw_nn(train: &LabeledDataset, test: &LabeledDataset) -> Result<f64> {
    Ok(accuracy(test, &predict_dtw_nn(train, test)?))
}

/// One DBA barycenter per class, seeded from the class medoid.
pub fn dba_representatives(train: &LabeledDataset) -> Result<BTreeMap<Label, Series>> {
    let groups = group_by_label(train)?;
    let reps = par::map_slice(&groups, |g| {
        let init = medoid(g)?;
        Ok((
            g.label,
            dba_average(g, &init, DBA_MAX_ITER, DBA_TOL)?.barycenter,
        ))
    });
    reps.into_iter().collect()
}

/// Assigns each test item to the class whose representative is nearest
/// under DTW.
pub fn predict_by_representative(
    reps: &BTreeMap<Label, Series>,
    test: &LabeledDataset,
) -> Result<Vec<Label>> {
    if reps.is_empty() || test.is_empty() {
        return contract("classification needs representatives and test items");
    }
    let entries: Vec<(&Label, &Series)> = reps.iter().collect();
    par::map_slice(&test.items, |q| {
        let mut best = (f64::INFINITY, 0);
        for (i, (_, r)) in entries.iter().enumerate() {
            let d = dtw_distance(&q.series, r, DtwOptions::default())?;
            if d < best.0 {
                best = (d, i);
            }
        }
        Ok(*entries[best.1].0)
    })
    .into_iter()
    .collect()
}

pub fn classify_dba_nn(train: &LabeledDataset, test: &LabeledDataset) -> Result<f64> {
    check_sets(train, test)?;
    let reps = dba_representatives(train)?;
    Ok(accuracy(test, &predict_by_representative(&reps, test)?))
}

/// Per-class scores of one test series: the loss between the series warped
/// by each class's warper and that class's warped average.
pub fn ours_scores(
    warpers: &[ClassWarper],
    averages: &[Series],
    series: &Series,
    loss_cfg: &LossConfig,
) -> Result<Vec<f64>> {
    warpers
        .iter()
        .zip(averages)
        .map(|(w, avg)| series_loss(&infer_warp(w, series)?, avg, loss_cfg.epsilon))
        .collect()
}

/// Predicted labels for the warper classifier. Ties go to the lowest label.
pub fn predict_ours(
    warpers: &[ClassWarper],
    test: &LabeledDataset,
    loss_cfg: &LossConfig,
) -> Result<Vec<Label>> {
    if warpers.is_empty() || test.is_empty() {
        return contract("classification needs warpers and test items");
    }
    let mut sorted: Vec<&ClassWarper> = warpers.iter().collect();
    sorted.sort_by_key(|w| w.label);
    if sorted.windows(2).any(|p| p[0].label == p[1].label) {
        return contract("two warpers share one label");
    }
    for it in &test.items {
        if !sorted.iter().any(|w| w.label == it.label) {
            return contract(format!("no warper for class {}", it.label));
        }
    }
    let warpers: Vec<ClassWarper> = sorted.into_iter().cloned().collect();
    let averages: Vec<Series> = warpers.iter().map(warped_average).collect::<Result<_>>()?;
    par::map_slice(&test.items, |q| {
        let scores = ours_scores(&warpers, &averages, &q.series, loss_cfg)?;
        Ok(warpers[argmin(scores)].label)
    })
    .into_iter()
    .collect()
}

pub fn classify_ours(
    warpers: &[ClassWarper],
    test: &LabeledDataset,
    loss_cfg: &LossConfig,
) -> Result<f64> {
    Ok(accuracy(test, &predict_ours(warpers, test, loss_cfg)?))
}

/// Mean per-class error over datasets given `(accuracy, class_count)` pairs.
pub fn mpce(accuracies: &[(f64, usize)]) -> Result<f64> {
    if accuracies.is_empty() {
        return contract("MPCE needs at least one dataset");
    }
    for &(acc, classes) in accuracies {
        if !(0.0..=1.0).contains(&acc) || classes == 0 {
            return contract(format!("invalid accuracy entry ({acc}, {classes})"));
        }
    }
    let sum: f64 = accuracies.iter().map(|&(a, c)| (1.0 - a) / c as f64).sum();
    Ok(sum / accuracies.len() as f64)
}
