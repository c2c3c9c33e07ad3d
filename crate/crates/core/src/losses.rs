//! Signed-square cosine loss with slope penalization.

use serde::{Deserialize, Serialize};

use crate::data::{ClassGroup, Series};
use crate::error::{contract, Error, Result};
use crate::warp::{apply_warp, SoftWarpMatrix};

/// Constant in the denominator of the slope-magnitude penalty.
pub const PENALTY_FLOOR: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.5,
            lambda2: 0.5,
            epsilon: 1e-8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(Error::Config(format!(
                "lambda1 must be >= 0, got {}",
                self.lambda1
            )));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(Error::Config(format!(
                "lambda2 must be >= 0, got {}",
                self.lambda2
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn check_len(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() || x.is_empty() {
        return contract(format!(
            "vector lengths {} and {} differ or are zero",
            x.len(),
            y.len()
        ));
    }
    Ok(())
}

pub fn cosine_similarity(x: &[f64], y: &[f64], epsilon: f64) -> Result<f64> {
    check_len(x, y)?;
    Ok(cosine_unchecked(x, y, epsilon))
}

fn cosine_unchecked(x: &[f64], y: &[f64], epsilon: f64) -> f64 {
    let denom = (dot(x, x).sqrt() * dot(y, y).sqrt()).max(epsilon);
    dot(x, y) / denom
}

fn signed_square(s: f64) -> f64 {
    // f64::signum(0.0) is 1.0; sign(0) must be 0 here
    let sign = if s > 0.0 {
        1.0
    } else if s < 0.0 {
        -1.0
    } else {
        0.0
    };
    1.0 - s * s * sign
}

/// `1 - S_C^2 sign(S_C)`: 0 for codirectional, 1 for orthogonal and 2 for
/// contradirectional vectors.
pub fn signed_square_loss(x: &[f64], y: &[f64], epsilon: f64) -> Result<f64> {
    Ok(signed_square(cosine_similarity(x, y, epsilon)?))
}

/// Loss together with its gradient with respect to `x`.
pub fn signed_square_loss_grad(x: &[f64], y: &[f64], epsilon: f64) -> Result<(f64, Vec<f64>)> {
    check_len(x, y)?;
    let nx = dot(x, x).sqrt();
    let ny = dot(y, y).sqrt();
    let xy = dot(x, y);
    let prod = nx * ny;
    let (s, grad_s): (f64, Vec<f64>) = if prod > epsilon {
        let s = xy / prod;
        let coef = xy / (nx * nx * prod);
        (
            s,
            x.iter().zip(y).map(|(a, b)| b / prod - coef * a).collect(),
        )
    } else {
        (xy / epsilon, y.iter().map(|b| b / epsilon).collect())
    };
    // d/dS [1 - S^2 sign(S)] = -2|S|
    let dl_ds = -2.0 * s.abs();
    Ok((
        signed_square(s),
        grad_s.into_iter().map(|g| dl_ds * g).collect(),
    ))
}

/// Row-averaged signed-square loss between equal-shape series.
pub fn series_loss(x: &Series, y: &Series, epsilon: f64) -> Result<f64> {
    if x.dim() != y.dim() || x.len() != y.len() {
        return contract(format!(
            "series shapes {}x{} and {}x{} differ",
            x.dim(),
            x.len(),
            y.dim(),
            y.len()
        ));
    }
    let total: f64 = x
        .rows()
        .zip(y.rows())
        .map(|(a, b)| signed_square(cosine_unchecked(a, b, epsilon)))
        .sum();
    Ok(total / x.dim() as f64)
}

/// Loss of the warped `x` against `y`.
pub fn main_loss(x: &Series, y: &Series, w: &SoftWarpMatrix, epsilon: f64) -> Result<f64> {
    if x.dim() != y.dim() {
        return contract(format!("dimensions {} and {} differ", x.dim(), y.dim()));
    }
    let warped = apply_warp(w, x)?;
    series_loss(&warped, y, epsilon)
}

/// `sum (a_k - 1)^2 + lambda1 / (mean(a_k^2) + 0.1)`.
pub fn penalization(slopes: &[f64], lambda1: f64) -> f64 {
    let k = slopes.len().max(1) as f64;
    let spread: f64 = slopes.iter().map(|a| (a - 1.0) * (a - 1.0)).sum();
    let mean_sq = slopes.iter().map(|a| a * a).sum::<f64>() / k;
    spread + lambda1 / (mean_sq + PENALTY_FLOOR)
}

pub fn penalization_grad(slopes: &[f64], lambda1: f64) -> Vec<f64> {
    let k = slopes.len().max(1) as f64;
    let mean_sq = slopes.iter().map(|a| a * a).sum::<f64>() / k;
    let denom = (mean_sq + PENALTY_FLOOR).powi(2);
    slopes
        .iter()
        .map(|a| 2.0 * (a - 1.0) - lambda1 * (2.0 * a / k) / denom)
        .collect()
}

pub fn final_loss(
    x: &Series,
    y: &Series,
    w: &SoftWarpMatrix,
    slopes: &[f64],
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(main_loss(x, y, w, cfg.epsilon)? + cfg.lambda2 * penalization(slopes, cfg.lambda1))
}

/// Mean signed-square loss over all unordered pairs of an unwarped group.
pub fn mean_pairwise_loss(group: &ClassGroup, epsilon: f64) -> Result<f64> {
    mean_pairwise_loss_of(&group.series, epsilon)
}

pub fn mean_pairwise_loss_of(series: &[Series], epsilon: f64) -> Result<f64> {
    let n = series.len();
    if n < 2 {
        return contract(format!("pairwise loss needs at least 2 series, got {n}"));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += series_loss(&series[i], &series[j], epsilon)?;
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::{build_soft_matrix, PiecewiseLinearWarp};

    const EPS: f64 = 1e-8;

    fn uni(v: &[f64]) -> Series {
        Series::univariate(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 4.0], EPS).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(
            cosine_similarity(&[1.0, 0.0], &[0.0, 1.0], EPS).unwrap(),
            0.0
        );
        assert_eq!(
            cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0], EPS).unwrap(),
            -1.0
        );
        assert_eq!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 3.0], EPS).unwrap(),
            0.0
        );
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0], EPS).is_err());
    }

    #[test]
    fn signed_square_examples() {
        assert!(
            signed_square_loss(&[1.0, 2.0], &[2.0, 4.0], EPS)
                .unwrap()
                .abs()
                < 1e-15
        );
        assert_eq!(
            signed_square_loss(&[1.0, 0.0], &[0.0, 1.0], EPS).unwrap(),
            1.0
        );
        assert_eq!(
            signed_square_loss(&[1.0, 0.0], &[-1.0, 0.0], EPS).unwrap(),
            2.0
        );
    }

    #[test]
    fn main_loss_examples() {
        let x = uni(&[1.0, 2.0, 3.0]);
        let id = build_soft_matrix(&PiecewiseLinearWarp::identity(4, 3), 3).unwrap();
        assert!(main_loss(&x, &x, &id, EPS).unwrap().abs() < 1e-15);
        let a = uni(&[1.0, 0.0, -1.0]);
        let b = uni(&[1.0, 1.0, 1.0]);
        assert_eq!(main_loss(&a, &b, &id, EPS).unwrap(), 1.0);
        let x2 = Series::from_rows(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        let y2 = Series::from_rows(&[vec![2.0, 4.0, 6.0], vec![-1.0, -2.0, -3.0]]).unwrap();
        assert!((main_loss(&x2, &y2, &id, EPS).unwrap() - 1.0).abs() < 1e-12);
        assert!(main_loss(&x, &x2, &id, EPS).is_err());
    }

    #[test]
    fn penalization_examples() {
        assert_eq!(penalization(&[1.0; 4], 0.5), 0.5 / 1.1);
        for k in 1..6 {
            let v = penalization(&vec![0.0; k], 1.0);
            assert!((v - (k as f64 + 10.0)).abs() < 1e-12);
        }
        assert!((penalization(&[0.0], 1.0) - 11.0).abs() < 1e-12);
        assert!((penalization(&[1.0], 1.0) - 1.0 / 1.1).abs() < 1e-15);
        // prototype shape: high near 0, dips, then grows without bound
        assert!(penalization(&[0.0], 1.0) > penalization(&[1.0], 1.0));
        assert!(penalization(&[10.0], 1.0) > 80.0);
    }

    #[test]
    fn final_loss_examples() {
        let x = uni(&[0.3, 1.0, -0.5, 2.0]);
        let id = build_soft_matrix(&PiecewiseLinearWarp::identity(4, 4), 4).unwrap();
        let cfg = LossConfig::default();
        let v = final_loss(&x, &x, &id, &[1.0; 4], &cfg).unwrap();
        assert!((v - 0.25 / 1.1).abs() < 1e-12);
        let no_pen = LossConfig {
            lambda2: 0.0,
            ..cfg
        };
        let y = uni(&[1.0, 0.1, 0.4, -2.0]);
        assert_eq!(
            final_loss(&x, &y, &id, &[0.2, 3.0], &no_pen).unwrap(),
            main_loss(&x, &y, &id, EPS).unwrap()
        );
    }

    #[test]
    fn final_loss_is_sum_of_parts() {
        // independent recomputation: explicit warped vector, cosine and penalty
        let x = uni(&[0.5, -1.0, 2.0, 0.7, 1.1, -0.2]);
        let y = uni(&[1.5, 0.2, -0.3, 1.0, 0.4, 0.9]);
        let slopes = [0.8, 1.3, 0.6];
        let warp = PiecewiseLinearWarp::from_raw(slopes.to_vec(), &[0.4, 0.9, 0.2], 6).unwrap();
        let w = build_soft_matrix(&warp, 6).unwrap();
        let dense = w.to_dense();
        let xw: Vec<f64> = dense
            .iter()
            .map(|row| row.iter().zip(x.values()).map(|(a, b)| a * b).sum())
            .collect();
        let xy: f64 = xw.iter().zip(y.values()).map(|(a, b)| a * b).sum();
        let nx: f64 = xw.iter().map(|a| a * a).sum::<f64>().sqrt();
        let ny: f64 = y.values().iter().map(|a| a * a).sum::<f64>().sqrt();
        let s = xy / (nx * ny);
        let main = 1.0 - s * s * s.signum();
        let pen = slopes.iter().map(|a| (a - 1.0f64).powi(2)).sum::<f64>()
            + 0.5 / (slopes.iter().map(|a| a * a).sum::<f64>() / 3.0 + 0.1);
        let cfg = LossConfig::default();
        let got = final_loss(&x, &y, &w, &slopes, &cfg).unwrap();
        assert!((got - (main + 0.5 * pen)).abs() < 1e-12);
    }

    #[test]
    fn pairwise_examples() {
        let g = ClassGroup::new(1, vec![uni(&[1.0, 2.0]); 4]).unwrap();
        assert!(mean_pairwise_loss(&g, EPS).unwrap().abs() < 1e-15);
        let g = ClassGroup::new(1, vec![uni(&[1.0, 0.0]), uni(&[0.0, 1.0])]).unwrap();
        assert_eq!(mean_pairwise_loss(&g, EPS).unwrap(), 1.0);
        let g = ClassGroup::new(1, vec![uni(&[1.0, 0.0])]).unwrap();
        assert!(mean_pairwise_loss(&g, EPS).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = [0.4, -1.2, 0.8, 2.0, 0.1];
        let y = [1.0, 0.3, -0.7, 1.5, 0.2];
        let (_, g) = signed_square_loss_grad(&x, &y, EPS).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let mut p = x;
            p[i] += h;
            let mut q = x;
            q[i] -= h;
            let fd = (signed_square_loss(&p, &y, EPS).unwrap()
                - signed_square_loss(&q, &y, EPS).unwrap())
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
        let slopes = [0.3, 1.7, 0.9, 1.05];
        let g = penalization_grad(&slopes, 0.5);
        for k in 0..4 {
            let mut p = slopes;
            p[k] += h;
            let mut q = slopes;
            q[k] -= h;
            let fd = (penalization(&p, 0.5) - penalization(&q, 0.5)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        assert!(LossConfig {
            lambda1: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LossConfig {
            epsilon: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
            (2usize..40).prop_flat_map(|n| {
                (
                    prop::collection::vec(-5.0f64..5.0, n),
                    prop::collection::vec(-5.0f64..5.0, n),
                )
            })
        }

        proptest! {
            #[test]
            fn scale_symmetry_and_range((x, y) in pair(), c in 0.01f64..100.0) {
                prop_assume!(x.iter().any(|v| v.abs() > 1e-3) && y.iter().any(|v| v.abs() > 1e-3));
                let base = signed_square_loss(&x, &y, EPS).unwrap();
                prop_assert!((0.0..=2.0).contains(&base));
                let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
                prop_assert!((signed_square_loss(&xs, &y, EPS).unwrap() - base).abs() <= 1e-9);
                let xn: Vec<f64> = x.iter().map(|v| -v * c).collect();
                prop_assert!((signed_square_loss(&xn, &y, EPS).unwrap() - (2.0 - base)).abs() <= 1e-9);
                prop_assert!((signed_square_loss(&y, &x, EPS).unwrap() - base).abs() <= 1e-12);
            }

            #[test]
            fn penalty_nonnegative(a in prop::collection::vec(0.0f64..10.0, 1..9), l1 in 0.0f64..5.0) {
                prop_assert!(penalization(&a, l1) >= 0.0);
            }
        }
    }
}
