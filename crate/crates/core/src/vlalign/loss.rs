//! IoU-modulated binary classification loss, box regression terms and the
//! weighted training objective.

use serde::{Deserialize, Serialize};

use crate::geometry::{giou, iou, Box2D};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

/// Largest accepted relative error between analytic and central-difference
/// derivatives.
pub const GRADIENT_TOLERANCE: f64 = 1e-5;

/// Denominator floor of the relative error, for derivatives near zero.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// Largest accepted distance between the grid-searched positive-branch
/// minimizer and `q^gamma`.
pub const MINIMIZER_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_l1: f64,
    pub lambda_giou: f64,
    /// Focusing exponent.
    pub gamma: f64,
    /// Weight of the negative branch.
    pub lambda_neg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_l1: 5.0,
            lambda_giou: 2.0,
            gamma: 2.0,
            lambda_neg: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> crate::Result<()> {
        let all = [
            self.lambda_cls,
            self.lambda_l1,
            self.lambda_giou,
            self.gamma,
            self.lambda_neg,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(crate::Error::InvalidConfig(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Loss value and its derivative with respect to `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MalLoss {
    pub loss: f64,
    pub dloss_dp: f64,
}

/// Classification loss for one score.
///
/// Positive (`y = true`): `-(q^g ln p + (1 - q^g) ln(1 - p))`.
/// Negative: `-lambda_neg * p^g * ln(1 - p)`.
/// `p` is clamped into `[PROB_EPS, 1 - PROB_EPS]` and the derivative is
/// evaluated at the clamped value.
pub fn mal_loss(p: f64, q: f64, y: bool, w: &LossWeights) -> MalLoss {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let g = w.gamma;
    if y {
        let t = q.clamp(0.0, 1.0).powf(g);
        MalLoss {
            loss: -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()),
            dloss_dp: -t / p + (1.0 - t) / (1.0 - p),
        }
    } else {
        let pg = p.powf(g);
        let log1m = (1.0 - p).ln();
        let dpg = if g == 0.0 { 0.0 } else { g * p.powf(g - 1.0) };
        MalLoss {
            loss: -w.lambda_neg * pg * log1m,
            dloss_dp: -w.lambda_neg * (dpg * log1m - pg / (1.0 - p)),
        }
    }
}

/// Breakdown of the weighted objective for one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompositeLoss {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
    pub total: f64,
}

/// `lambda_cls * L_cls + lambda_l1 * L_1 + lambda_giou * (1 - giou)`.
///
/// `L_1` is the mean absolute difference of the normalized center-form
/// coordinates. `q` defaults to `iou(pred, gt)`. Negatives (`y = false`)
/// carry no box terms.
pub fn composite_loss(
    pred: &Box2D,
    gt: &Box2D,
    p: f64,
    q: Option<f64>,
    y: bool,
    w: &LossWeights,
    image_size: (f64, f64),
) -> CompositeLoss {
    let q = q.unwrap_or_else(|| iou(pred, gt));
    let cls = mal_loss(p, q, y, w).loss;
    let (l1, giou_term) = if y {
        let a = pred.to_cxcywh_normalized(image_size.0, image_size.1);
        let b = gt.to_cxcywh_normalized(image_size.0, image_size.1);
        let l1 = a.iter().zip(b).map(|(u, v)| (u - v).abs()).sum::<f64>() / 4.0;
        (l1, 1.0 - giou(pred, gt))
    } else {
        (0.0, 0.0)
    };
    CompositeLoss {
        cls,
        l1,
        giou: giou_term,
        total: w.lambda_cls * cls + w.lambda_l1 * l1 + w.lambda_giou * giou_term,
    }
}

/// Settings of the derivative and minimizer sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCheckConfig {
    pub gamma: f64,
    pub lambda_neg: f64,
    /// Number of evenly spaced `p` values searched for the minimizer.
    pub grid_density: usize,
    /// Perturbs the analytic derivative; the check must then fail.
    pub corrupt_derivative: bool,
}

impl Default for LossCheckConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            lambda_neg: 0.5,
            grid_density: 100_001,
            corrupt_derivative: false,
        }
    }
}

/// Grid-searched minimizer of the positive branch for one `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MinimizerPoint {
    pub q: f64,
    pub p_star: f64,
    pub q_pow_gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossCheckReport {
    pub gamma: f64,
    pub max_gradient_rel_error: f64,
    pub max_minimizer_error: f64,
    pub gradient_ok: bool,
    pub minimizer_ok: bool,
    pub minimizers: Vec<MinimizerPoint>,
}

impl LossCheckReport {
    pub fn passed(&self) -> bool {
        self.gradient_ok && self.minimizer_ok
    }
}

/// Compares analytic derivatives with central differences (`h = 1e-6`) over
/// `p` in `{0.05, ..., 0.95}`, `q` in `{0, 0.25, 0.5, 0.75, 1}` and both
/// labels, then grid-searches the positive-branch minimizer for `q` in
/// `{0.1, ..., 0.9}` against `q^gamma`.
///
/// Relative error is `|a - f| / max(|a|, |f|, REL_ERROR_FLOOR)`.
pub fn run_loss_check(cfg: &LossCheckConfig) -> LossCheckReport {
    let w = LossWeights {
        gamma: cfg.gamma,
        lambda_neg: cfg.lambda_neg,
        ..LossWeights::default()
    };
    const H: f64 = 1e-6;
    let mut max_rel = 0.0f64;
    for pi in 1..=19 {
        let p = pi as f64 * 0.05;
        for q in [0.0, 0.25, 0.5, 0.75, 1.0] {
            for y in [true, false] {
                let mut analytic = mal_loss(p, q, y, &w).dloss_dp;
                if cfg.corrupt_derivative {
                    analytic = analytic * 1.01 + 1e-3;
                }
                let fd = (mal_loss(p + H, q, y, &w).loss - mal_loss(p - H, q, y, &w).loss)
                    / (2.0 * H);
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(REL_ERROR_FLOOR);
                max_rel = max_rel.max(rel);
            }
        }
    }

    let n = cfg.grid_density.max(2);
    let mut minimizers = Vec::with_capacity(9);
    for qi in 1..=9 {
        let q = qi as f64 * 0.1;
        let mut best = (f64::INFINITY, 0.0);
        for k in 1..n - 1 {
            let p = k as f64 / (n - 1) as f64;
            let l = mal_loss(p, q, true, &w).loss;
            if l < best.0 {
                best = (l, p);
            }
        }
        minimizers.push(MinimizerPoint {
            q,
            p_star: best.1,
            q_pow_gamma: q.powf(cfg.gamma),
        });
    }
    let max_min_err = minimizers
        .iter()
        .map(|m| (m.p_star - m.q_pow_gamma).abs())
        .fold(0.0, f64::max);

    LossCheckReport {
        gamma: cfg.gamma,
        max_gradient_rel_error: max_rel,
        max_minimizer_error: max_min_err,
        gradient_ok: max_rel < GRADIENT_TOLERANCE,
        minimizer_ok: max_min_err < MINIMIZER_TOLERANCE,
        minimizers,
    }
}
