//! Dynamic time warping and DTW barycenter averaging (DBA).

use serde::{Deserialize, Serialize};

use crate::data::{ClassGroup, Series};
use crate::error::{contract, Result};
use crate::par;
use crate::warp::WarpPath;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalCost {
    #[default]
    Squared,
    Absolute,
}

impl LocalCost {
    #[inline]
    fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            LocalCost::Squared => (a - b) * (a - b),
            LocalCost::Absolute => (a - b).abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DtwOptions {
    pub cost: LocalCost,
    /// Sakoe-Chiba half width; `None` leaves the warp unconstrained.
    pub band: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtwResult {
    pub distance: f64,
    pub path: WarpPath,
}

fn local(x: &Series, y: &Series, i: usize, j: usize, cost: LocalCost) -> f64 {
    (0..x.dim())
        .map(|r| cost.eval(x.row(r)[i], y.row(r)[j]))
        .sum()
}

fn in_band(i: usize, j: usize, n: usize, m: usize, band: Option<usize>) -> bool {
    match band {
        None => true,
        Some(w) => {
            // band measured along the diagonal scaled to the rectangle
            let w = w.max(n.abs_diff(m));
            let jj = if n > 1 { i * (m - 1) / (n - 1) } else { 0 };
            j.abs_diff(jj) <= w
        }
    }
}

fn check_dims(x: &Series, y: &Series) -> Result<()> {
    if x.dim() != y.dim() {
        return contract(format!("dtw dimensions {} and {} differ", x.dim(), y.dim()));
    }
    Ok(())
}

/// DTW with squared local cost and no band.
pub fn dtw(x: &Series, y: &Series) -> Result<DtwResult> {
    dtw_with(x, y, DtwOptions::default())
}

/// Full dynamic program with backtracking. Ties prefer the diagonal, then the
/// step that advances only `x` ("vertical"), then the one that advances only
/// `y`.
pub fn dtw_with(x: &Series, y: &Series, opts: DtwOptions) -> Result<DtwResult> {
    check_dims(x, y)?;
    let (n, m) = (x.len(), y.len());
    let mut acc = vec![f64::INFINITY; n * m];
    let at = |i: usize, j: usize| i * m + j;
    for i in 0..n {
        for j in 0..m {
            if !in_band(i, j, n, m, opts.band) {
                continue;
            }
            let c = local(x, y, i, j, opts.cost);
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let d = if i > 0 && j > 0 {
                    acc[at(i - 1, j - 1)]
                } else {
                    f64::INFINITY
                };
                let v = if i > 0 {
                    acc[at(i - 1, j)]
                } else {
                    f64::INFINITY
                };
                let h = if j > 0 {
                    acc[at(i, j - 1)]
                } else {
                    f64::INFINITY
                };
                d.min(v).min(h)
            };
            acc[at(i, j)] = c + prev;
        }
    }
    let mut pairs = vec![(n, m)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let d = if i > 0 && j > 0 {
            acc[at(i - 1, j - 1)]
        } else {
            f64::INFINITY
        };
        let v = if i > 0 {
            acc[at(i - 1, j)]
        } else {
            f64::INFINITY
        };
        let h = if j > 0 {
            acc[at(i, j - 1)]
        } else {
            f64::INFINITY
        };
        if d <= v && d <= h {
            i -= 1;
            j -= 1;
        } else if v <= h {
            i -= 1;
        } else {
            j -= 1;
        }
        pairs.push((i + 1, j + 1));
    }
    pairs.reverse();
    Ok(DtwResult {
        distance: acc[at(n - 1, m - 1)],
        path: WarpPath { pairs },
    })
}

/// Distance only, using two rolling rows.
pub fn dtw_distance(x: &Series, y: &Series, opts: DtwOptions) -> Result<f64> {
    check_dims(x, y)?;
    let (n, m) = (x.len(), y.len());
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for i in 0..n {
        cur.fill(f64::INFINITY);
        for j in 0..m {
            if !in_band(i, j, n, m, opts.band) {
                continue;
            }
            let c = local(x, y, i, j, opts.cost);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let d = if i > 0 && j > 0 {
                    prev[j - 1]
                } else {
                    f64::INFINITY
                };
                let v = if i > 0 { prev[j] } else { f64::INFINITY };
                let h = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                d.min(v).min(h)
            };
            cur[j] = c + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Minimum DTW distance from `x` to any member, lowest index on ties.
pub fn dtw_distance_to_set(x: &Series, group: &ClassGroup) -> Result<(f64, usize)> {
    dtw_distance_to_set_with(x, &group.series, DtwOptions::default())
}

pub fn dtw_distance_to_set_with(
    x: &Series,
    members: &[Series],
    opts: DtwOptions,
) -> Result<(f64, usize)> {
    if members.is_empty() {
        return contract("distance to an empty set");
    }
    let dists = par::map_slice(members, |s| dtw_distance(x, s, opts));
    let mut best = (f64::INFINITY, 0);
    for (i, d) in dists.into_iter().enumerate() {
        let d = d?;
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarycenterState {
    pub barycenter: Series,
    pub iteration: usize,
    /// Sum of DTW distances from the barycenter to every member.
    pub objective: f64,
    /// Objective before the first update and after each iteration.
    pub history: Vec<f64>,
}

fn total_distance(center: &Series, members: &[Series]) -> Result<f64> {
    par::map_slice(members, |s| dtw_distance(center, s, DtwOptions::default()))
        .into_iter()
        .sum()
}

/// Member with the smallest summed DTW distance to the others.
pub fn medoid(group: &ClassGroup) -> Result<Series> {
    if group.is_empty() {
        return contract("medoid of an empty group");
    }
    let totals = par::map_slice(&group.series, |s| total_distance(s, &group.series));
    let mut best = (f64::INFINITY, 0);
    for (i, t) in totals.into_iter().enumerate() {
        let t = t?;
        if t < best.0 {
            best = (t, i);
        }
    }
    Ok(group.series[best.1].clone())
}

/// DBA with squared local cost. Each iteration aligns every member to the
/// current barycenter and replaces each barycenter sample by the mean of the
/// member samples mapped onto it. Stops after `max_iter` iterations or once
/// the relative objective improvement drops below `tol`.
pub fn dba_average(
    group: &ClassGroup,
    init: &Series,
    max_iter: usize,
    tol: f64,
) -> Result<BarycenterState> {
    if group.is_empty() {
        return contract("DBA needs a nonempty group");
    }
    let (dim, len) = (init.dim(), init.len());
    if group.series.iter().any(|s| s.dim() != dim) {
        return contract("DBA members must share the barycenter dimension");
    }
    let mut center = init.clone();
    let mut objective = total_distance(&center, &group.series)?;
    let mut history = vec![objective];
    let mut iteration = 0;
    while iteration < max_iter {
        let paths = par::map_slice(&group.series, |s| dtw(&center, s));
        let mut sums = vec![0.0; dim * len];
        let mut counts = vec![0usize; len];
        for (s, res) in group.series.iter().zip(paths) {
            for &(ci, si) in &res?.path.pairs {
                counts[ci - 1] += 1;
                for r in 0..dim {
                    sums[r * len + ci - 1] += s.row(r)[si - 1];
                }
            }
        }
        for r in 0..dim {
            for t in 0..len {
                sums[r * len + t] /= counts[t] as f64;
            }
        }
        let candidate = Series::new(dim, len, sums)?;
        let next = total_distance(&candidate, &group.series)?;
        iteration += 1;
        let improvement = objective - next;
        // alignment ties can leave the objective flat; never accept a rise
        if next <= objective {
            center = candidate;
            history.push(next);
            objective = next;
        } else {
            history.push(objective);
        }
        if objective == 0.0 || improvement <= tol * (objective + improvement) {
            break;
        }
    }
    Ok(BarycenterState {
        barycenter: center,
        iteration,
        objective,
        history,
    })
}
