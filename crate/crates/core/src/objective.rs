//! The differentiable chain network -> warp parameters -> soft warp -> loss,
//! and its reverse pass.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::data::Series;
use crate::error::{contract, Result};
use crate::losses::{
    penalization, penalization_grad, series_loss, signed_square_loss_grad, LossConfig,
};
use crate::net::{ParamSet, Tape, WarperNetwork};
use crate::warp::{
    apply_warp, build_soft_matrix, normalize_durations_backward, PiecewiseLinearWarp,
    SoftWarpMatrix, DEGENERATE_SUM,
};

/// Result of pushing one series through the network and the warper.
#[derive(Clone, Debug)]
pub struct WarpEval {
    pub slopes: Vec<f64>,
    pub raw_durations: Vec<f64>,
    pub warp: PiecewiseLinearWarp,
    pub matrix: SoftWarpMatrix,
    pub warped: Series,
    tape: Tape,
}

impl WarpEval {
    /// Fingerprint of every non-smooth branch taken: ReLU states, active
    /// warp segments, interpolation cells and clamps.
    pub fn pattern_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.tape.pattern_hash().hash(&mut h);
        for i in 0..self.warp.target_len() {
            self.warp.segment_of(i as f64).hash(&mut h);
        }
        (self.raw_durations.iter().sum::<f64>() < DEGENERATE_SUM).hash(&mut h);
        self.matrix.hash_cells(&mut h);
        h.finish()
    }
}

pub fn warp_forward(net: &WarperNetwork, x: &Series) -> Result<WarpEval> {
    let (slopes, raw_durations, tape) = net.forward(x)?;
    let warp = PiecewiseLinearWarp::from_raw(slopes.clone(), &raw_durations, x.len())?;
    let matrix = build_soft_matrix(&warp, x.len())?;
    let warped = apply_warp(&matrix, x)?;
    Ok(WarpEval {
        slopes,
        raw_durations,
        warp,
        matrix,
        warped,
        tape,
    })
}

#[derive(Clone, Debug)]
pub struct LossEval {
    /// Mean main loss over targets plus `lambda2` times the penalty.
    pub loss: f64,
    pub main: f64,
    pub penalty: f64,
    pub eval: WarpEval,
}

/// Loss of warping `x` against every target: the mean main loss over
/// `targets` plus the weighted slope penalty.
pub fn loss_value(
    net: &WarperNetwork,
    x: &Series,
    targets: &[&Series],
    cfg: &LossConfig,
) -> Result<LossEval> {
    if targets.is_empty() {
        return contract("loss needs at least one target series");
    }
    let eval = warp_forward(net, x)?;
    let mut main = 0.0;
    for y in targets {
        main += series_loss(&eval.warped, y, cfg.epsilon)?;
    }
    main /= targets.len() as f64;
    let penalty = penalization(&eval.slopes, cfg.lambda1);
    Ok(LossEval {
        loss: main + cfg.lambda2 * penalty,
        main,
        penalty,
        eval,
    })
}

/// [`loss_value`] plus gradients for every network parameter.
pub fn loss_and_grad(
    net: &WarperNetwork,
    x: &Series,
    targets: &[&Series],
    cfg: &LossConfig,
) -> Result<(LossEval, ParamSet)> {
    let le = loss_value(net, x, targets, cfg)?;
    let ev = &le.eval;
    let (dim, len) = (ev.warped.dim(), ev.warped.len());
    let scale = 1.0 / (targets.len() * dim) as f64;

    let mut g_warped = vec![0.0; dim * len];
    for y in targets {
        for r in 0..dim {
            let (_, g) = signed_square_loss_grad(ev.warped.row(r), y.row(r), cfg.epsilon)?;
            for (dst, v) in g_warped[r * len..(r + 1) * len].iter_mut().zip(g) {
                *dst += scale * v;
            }
        }
    }

    let g_pos = ev.matrix.position_grads(x, &g_warped);
    let k = ev.slopes.len();
    let mut g_slopes = vec![0.0; k];
    let mut g_durations = vec![0.0; k];
    for (i, &g) in g_pos.iter().enumerate() {
        if g != 0.0 {
            ev.warp
                .tau_backward(i as f64, g, &mut g_slopes, &mut g_durations);
        }
    }
    for (ga, gp) in g_slopes
        .iter_mut()
        .zip(penalization_grad(&ev.slopes, cfg.lambda1))
    {
        *ga += cfg.lambda2 * gp;
    }
    let g_raw = normalize_durations_backward(&ev.raw_durations, len, &g_durations);
    let grads = net.backward(&ev.tape, &g_slopes, &g_raw)?;
    Ok((le, grads))
}
