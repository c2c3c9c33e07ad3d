//! Piecewise-linear warping functions and their soft (interpolating) and hard
//! (index path) realizations.
//!
//! A warp with slopes `a_1..a_K` and durations `t_1..t_K` maps output time
//! `t` to source time
//!
//! ```text
//! tau(t) = sum_{k<j} a_k t_k + a_j (t - sum_{k<j} t_k)
//! ```
//!
//! where `j` is the segment containing `t`. Output sample `i` reads the source
//! at `u = tau(i)`, clamped to `[0, T_src - 1]`, by linear interpolation of the
//! two neighbouring samples.

use serde::{Deserialize, Serialize};

use crate::data::Series;
use crate::error::{contract, Result};

/// Durations whose raw sum falls below this are replaced by a uniform split.
pub const DEGENERATE_SUM: f64 = 1e-8;

/// Tolerance used by [`check_constraints`] on the duration sum.
pub const BOUNDARY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearWarp {
    slopes: Vec<f64>,
    durations: Vec<f64>,
    target_len: usize,
}

impl PiecewiseLinearWarp {
    /// Wraps parameters as given. Durations are not normalized, so
    /// [`check_constraints`] may report violations.
    pub fn new(slopes: Vec<f64>, durations: Vec<f64>, target_len: usize) -> Result<Self> {
        if slopes.is_empty() {
            return contract("warp needs at least one segment");
        }
        if slopes.len() != durations.len() {
            return contract(format!(
                "{} slopes but {} durations",
                slopes.len(),
                durations.len()
            ));
        }
        Ok(Self {
            slopes,
            durations,
            target_len,
        })
    }

    /// Builds a warp from network-style outputs, normalizing the durations.
    pub fn from_raw(slopes: Vec<f64>, raw_durations: &[f64], target_len: usize) -> Result<Self> {
        let durations = normalize_durations(raw_durations, target_len);
        Self::new(slopes, durations, target_len)
    }

    pub fn identity(k: usize, target_len: usize) -> Self {
        let k = k.max(1);
        Self {
            slopes: vec![1.0; k],
            durations: vec![target_len as f64 / k as f64; k],
            target_len,
        }
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn segments(&self) -> usize {
        self.slopes.len()
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    /// Segment index containing `t`, the cumulative duration before it and the
    /// cumulative tau value before it.
    fn locate(&self, t: f64) -> (usize, f64, f64) {
        let last = self.slopes.len() - 1;
        let mut start = 0.0;
        let mut base = 0.0;
        for k in 0..last {
            let end = start + self.durations[k];
            if t < end {
                return (k, start, base);
            }
            base += self.slopes[k] * self.durations[k];
            start = end;
        }
        (last, start, base)
    }

    pub(crate) fn segment_of(&self, t: f64) -> usize {
        self.locate(t).0
    }

    pub(crate) fn tau_unchecked(&self, t: f64) -> f64 {
        let (j, start, base) = self.locate(t);
        base + self.slopes[j] * (t - start)
    }

    /// Accumulates `upstream * d tau(t) / d slope_k` into `g_slopes` and the
    /// matching derivative with respect to normalized durations into
    /// `g_durations`.
    pub(crate) fn tau_backward(
        &self,
        t: f64,
        upstream: f64,
        g_slopes: &mut [f64],
        g_durations: &mut [f64],
    ) {
        let (j, start, _) = self.locate(t);
        let aj = self.slopes[j];
        for k in 0..j {
            g_slopes[k] += upstream * self.durations[k];
            g_durations[k] += upstream * (self.slopes[k] - aj);
        }
        g_slopes[j] += upstream * (t - start);
    }
}

/// Rescales nonnegative raw durations to sum to `target_len`; falls back to a
/// uniform split when the raw sum is below [`DEGENERATE_SUM`].
pub fn normalize_durations(raw: &[f64], target_len: usize) -> Vec<f64> {
    let k = raw.len();
    let total: f64 = raw.iter().sum();
    let t = target_len as f64;
    if total < DEGENERATE_SUM {
        return vec![t / k as f64; k];
    }
    raw.iter().map(|r| t * r / total).collect()
}

/// Pulls a gradient on normalized durations back onto the raw durations.
pub fn normalize_durations_backward(raw: &[f64], target_len: usize, grad: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    if total < DEGENERATE_SUM {
        return vec![0.0; raw.len()];
    }
    let t = target_len as f64;
    // d out_k / d raw_m = T (delta_km S - raw_k) / S^2
    let weighted: f64 = grad.iter().zip(raw).map(|(g, r)| g * r).sum();
    grad.iter()
        .map(|g| t * (g * total - weighted) / (total * total))
        .collect()
}

/// Evaluates the warp at `t in [0, T]`.
pub fn eval_tau(warp: &PiecewiseLinearWarp, t: f64) -> Result<f64> {
    if !(0.0..=warp.target_len as f64).contains(&t) {
        return contract(format!("t = {t} outside [0, {}]", warp.target_len));
    }
    Ok(warp.tau_unchecked(t))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub boundary: bool,
    pub monotonicity: bool,
    pub continuity: bool,
}

impl ConstraintReport {
    pub fn all(&self) -> bool {
        self.boundary && self.monotonicity && self.continuity
    }
}

pub fn check_constraints(warp: &PiecewiseLinearWarp) -> ConstraintReport {
    let sum: f64 = warp.durations.iter().sum();
    let boundary = warp.tau_unchecked(0.0) == 0.0
        && (sum - warp.target_len as f64).abs() <= BOUNDARY_TOL
        && warp.durations.iter().all(|&d| d >= 0.0);
    let monotonicity = warp.slopes.iter().all(|&a| a >= 0.0);
    // the piecewise form telescopes, so it has no jumps for any parameters
    let continuity = warp
        .slopes
        .iter()
        .chain(&warp.durations)
        .all(|v| v.is_finite());
    ConstraintReport {
        boundary,
        monotonicity,
        continuity,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct SoftRow {
    /// Unclamped source coordinate.
    position: f64,
    lo: usize,
    frac: f64,
    clamped: bool,
}

/// Row-stochastic interpolation matrix, stored as one `(lo, frac)` pair per
/// row: weight `1 - frac` at column `lo`, `frac` at column `lo + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftWarpMatrix {
    rows: Vec<SoftRow>,
    source_len: usize,
}

impl SoftWarpMatrix {
    /// Builds the matrix directly from per-row source coordinates.
    pub fn from_positions(positions: &[f64], source_len: usize) -> Result<Self> {
        if source_len < 2 {
            return contract("source length must be at least 2");
        }
        let max = (source_len - 1) as f64;
        let rows = positions
            .iter()
            .map(|&p| {
                let clamped = !(0.0..=max).contains(&p);
                let u = p.clamp(0.0, max);
                let lo = (u.floor() as usize).min(source_len - 2);
                SoftRow {
                    position: p,
                    lo,
                    frac: u - lo as f64,
                    clamped,
                }
            })
            .collect();
        Ok(Self { rows, source_len })
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cols(&self) -> usize {
        self.source_len
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = &self.rows[i];
        if j == r.lo {
            1.0 - r.frac
        } else if j == r.lo + 1 {
            r.frac
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.rows())
            .map(|i| (0..self.cols()).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Hashes the interpolation cell and clamp state of every row.
    pub(crate) fn hash_cells<H: std::hash::Hasher>(&self, h: &mut H) {
        use std::hash::Hash;
        for r in &self.rows {
            r.lo.hash(h);
            r.clamped.hash(h);
            (r.frac == 0.0).hash(h);
        }
    }

    /// Unclamped source coordinate of each row.
    pub fn positions(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.position).collect()
    }

    /// Adjoint of `apply_warp` with respect to the row positions: for each
    /// output row, `sum_r grad_out[r][i] * (x[r][lo+1] - x[r][lo])`, or zero
    /// where the position was clamped.
    pub fn position_grads(&self, source: &Series, grad_out: &[f64]) -> Vec<f64> {
        let t_out = self.rows.len();
        let mut g = vec![0.0; t_out];
        for (r, x) in source.rows().enumerate() {
            let go = &grad_out[r * t_out..(r + 1) * t_out];
            for (i, row) in self.rows.iter().enumerate() {
                if !row.clamped {
                    g[i] += go[i] * (x[row.lo + 1] - x[row.lo]);
                }
            }
        }
        g
    }
}

/// Builds the soft warping matrix sampling `tau` on the integer output grid.
pub fn build_soft_matrix(warp: &PiecewiseLinearWarp, source_len: usize) -> Result<SoftWarpMatrix> {
    let positions: Vec<f64> = (0..warp.target_len)
        .map(|i| warp.tau_unchecked(i as f64))
        .collect();
    SoftWarpMatrix::from_positions(&positions, source_len)
}

/// Computes `W X` independently for each row of `series`.
pub fn apply_warp(w: &SoftWarpMatrix, series: &Series) -> Result<Series> {
    if w.cols() != series.len() {
        return contract(format!(
            "warp expects {} source steps, series has {}",
            w.cols(),
            series.len()
        ));
    }
    let mut out = Vec::with_capacity(series.dim() * w.rows());
    for x in series.rows() {
        out.extend(
            w.rows
                .iter()
                .map(|r| (1.0 - r.frac) * x[r.lo] + r.frac * x[r.lo + 1]),
        );
    }
    Series::new(series.dim(), w.rows(), out)
}

/// Warping path of 1-based `(output, source)` index pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpPath {
    pub pairs: Vec<(usize, usize)>,
}

impl WarpPath {
    /// Checks boundary, monotonicity and continuity against an `n x m` grid.
    pub fn is_valid(&self, n: usize, m: usize) -> bool {
        let (Some(&first), Some(&last)) = (self.pairs.first(), self.pairs.last()) else {
            return false;
        };
        if first != (1, 1) || last != (n, m) {
            return false;
        }
        self.pairs.windows(2).all(|w| {
            let (a, b) = (w[0], w[1]);
            matches!(
                (b.0.wrapping_sub(a.0), b.1.wrapping_sub(a.1)),
                (1, 0) | (0, 1) | (1, 1)
            )
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Rounds `tau` to source indices and pads skipped indices so the result is a
/// valid warping path from `(1, 1)` to `(T, T_src)`.
pub fn hard_warp_path(warp: &PiecewiseLinearWarp, source_len: usize) -> WarpPath {
    let t = warp.target_len.max(1);
    let max = source_len.saturating_sub(1) as f64;
    let mut targets = Vec::with_capacity(t);
    let mut prev = 0usize;
    for i in 0..t {
        let m = warp.tau_unchecked(i as f64).clamp(0.0, max).round() as usize;
        // running max keeps the path monotone even for invalid slopes
        let m = if i == 0 { 0 } else { m.max(prev) };
        targets.push(m);
        prev = m;
    }
    let mut pairs = Vec::with_capacity(t + source_len);
    pairs.push((1, 1));
    for i in 1..t {
        let (from, to) = (targets[i - 1], targets[i]);
        for m in from + 1..to {
            pairs.push((i, m + 1));
        }
        pairs.push((i + 1, to + 1));
    }
    let last = *targets.last().unwrap_or(&0);
    for m in last + 1..source_len {
        pairs.push((t, m + 1));
    }
    WarpPath { pairs }
}
