#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpalign::data::{parse_ucr_tsv, ClassGroup, LabeledDataset, Series};
use warpalign::net::WarperNetwork;
use warpalign::objective::{loss_and_grad, loss_value};
use warpalign::LossConfig;

pub fn data_path(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(file)
}

pub fn gunpoint() -> (LabeledDataset, LabeledDataset) {
    (
        parse_ucr_tsv(data_path("GunPoint_TRAIN.tsv")).unwrap(),
        parse_ucr_tsv(data_path("GunPoint_TEST.tsv")).unwrap(),
    )
}

pub fn uni(v: &[f64]) -> Series {
    Series::univariate(v.to_vec()).unwrap()
}

pub fn random_series(rng: &mut ChaCha8Rng, dim: usize, len: usize) -> Series {
    Series::new(
        dim,
        len,
        (0..dim * len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

pub fn bump(len: usize, center: f64, width: f64) -> Series {
    Series::univariate(
        (0..len)
            .map(|i| (-(i as f64 - center).powi(2) / (2.0 * width * width)).exp())
            .collect(),
    )
    .unwrap()
}

/// `n` Gaussian bumps centred at `len / 2` plus a uniform shift of at most
/// 10% of `len`.
pub fn shifted_bumps(n: usize, len: usize, seed: u64) -> ClassGroup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_shift = 0.1 * len as f64;
    let series = (0..n)
        .map(|_| {
            bump(
                len,
                len as f64 / 2.0 + rng.gen_range(-max_shift..max_shift),
                len as f64 / 16.0,
            )
        })
        .collect();
    ClassGroup::new(1, series).unwrap()
}

/// Rising ramps with a random onset, same length as [`shifted_bumps`].
pub fn shifted_ramps(n: usize, len: usize, seed: u64) -> ClassGroup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let series = (0..n)
        .map(|_| {
            let onset = len as f64 * (0.3 + rng.gen_range(-0.1..0.1));
            Series::univariate(
                (0..len)
                    .map(|i| ((i as f64 - onset) / (0.4 * len as f64)).clamp(0.0, 1.0))
                    .collect(),
            )
            .unwrap()
        })
        .collect();
    ClassGroup::new(2, series).unwrap()
}

#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    /// Parameters sitting exactly on a kink, checked one-sided.
    pub one_sided: usize,
    /// Parameters whose probes flip only units that carry no derivative
    /// along that parameter (rounding residues around zero).
    pub inert_flips: usize,
    pub failures: Vec<String>,
    pub worst_rel: f64,
}

/// Compares every analytic parameter gradient of the loss of warping `x`
/// against `y` with finite differences. The step starts at `1e-4` and
/// shrinks tenfold whenever a probe crosses a kink (a change in any ReLU
/// state, warp segment, interpolation cell or clamp), so each difference
/// quotient samples a single smooth branch. A parameter that sits exactly on
/// a kink (for example a pre-activation of exactly zero) has no smooth
/// two-sided neighbourhood; it is checked with the second-order one-sided
/// quotient on the side whose branch the analytic sub-gradient follows.
/// Probes that flip units on both sides are accepted when the left and right
/// one-sided quotients agree, i.e. the flipped units (rounding residues
/// around zero) do not change the derivative along that parameter.
pub fn check_gradients(net: &WarperNetwork, x: &Series, y: &Series, cfg: &LossConfig) -> GradCheck {
    let (base, grads) = loss_and_grad(net, x, &[y], cfg).unwrap();
    let pattern = base.eval.pattern_hash();
    let mut out = GradCheck::default();
    let mut probe = net.clone();
    for idx in 0..net.params().len() {
        let analytic = grads.get(idx);
        let original = net.params().get(idx);
        let mut eval = |delta: f64| {
            *probe.params_mut().get_mut(idx) = original + delta;
            let le = loss_value(&probe, x, &[y], cfg).unwrap();
            *probe.params_mut().get_mut(idx) = original;
            (le.loss, le.eval.pattern_hash() == pattern)
        };
        let mut h: f64 = 1e-4;
        let mut found = None;
        while h >= 1e-9 && found.is_none() {
            let (plus, plus_ok) = eval(h);
            let (minus, minus_ok) = eval(-h);
            let (plus2, plus2_ok) = eval(2.0 * h);
            let (minus2, minus2_ok) = eval(-2.0 * h);
            let right = (-3.0 * base.loss + 4.0 * plus - plus2) / (2.0 * h);
            let left = (3.0 * base.loss - 4.0 * minus + minus2) / (2.0 * h);
            let central = (plus - minus) / (2.0 * h);
            found = if plus_ok && minus_ok {
                Some((central, "central"))
            } else if agrees(left, right) {
                out.inert_flips += 1;
                Some((central, "inert"))
            } else if plus_ok && plus2_ok {
                out.one_sided += 1;
                Some((right, "right"))
            } else if minus_ok && minus2_ok {
                out.one_sided += 1;
                Some((left, "left"))
            } else {
                h /= 10.0;
                None
            };
        }
        let Some((numeric, how)) = found else {
            out.failures
                .push(format!("param {idx}: no smooth side down to step 1e-9"));
            continue;
        };
        out.checked += 1;
        let diff = (analytic - numeric).abs();
        if diff > 1e-7 {
            out.worst_rel = out.worst_rel.max(diff / analytic.abs().max(numeric.abs()));
        }
        if !agrees(analytic, numeric) {
            out.failures.push(format!(
                "param {idx}: analytic {analytic:e} vs numeric {numeric:e} ({how}, step {h:e})"
            ));
        }
    }
    out
}

/// Relative error at most 1e-4, or absolute difference at most 1e-7.
pub fn agrees(a: f64, b: f64) -> bool {
    let diff = (a - b).abs();
    diff <= 1e-7 || diff <= 1e-4 * a.abs().max(b.abs())
}
