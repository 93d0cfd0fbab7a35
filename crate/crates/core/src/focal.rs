//! FocalL1 loss and the IOU-based reweightings of EIOU.
//!
//! FocalL1 shapes the gradient magnitude of an ℓ1-style loss as
//! `−αx ln(βx)` on `(0, 1]` and the constant `−α ln β` beyond, with
//! `α = eβ` so the peak value is exactly 1 at `x* = 1/(eβ)`.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Box};
use crate::losses::{self, Grad4, LossEval};

/// Floor for the IOU inside the logarithm of the Focal-EIOU* weight.
pub const LOG_IOU_FLOOR: f64 = 1e-12;

pub const DEFAULT_BETA: f64 = 0.8;
pub const DEFAULT_GAMMA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FocalL1Beta", into = "FocalL1Beta")]
pub struct FocalL1Params {
    beta: f64,
    alpha: f64,
    c: f64,
}

#[derive(Serialize, Deserialize)]
struct FocalL1Beta {
    beta: f64,
}

impl TryFrom<FocalL1Beta> for FocalL1Params {
    type Error = Error;
    fn try_from(raw: FocalL1Beta) -> Result<Self> {
        Self::new(raw.beta)
    }
}

impl From<FocalL1Params> for FocalL1Beta {
    fn from(p: FocalL1Params) -> Self {
        Self { beta: p.beta }
    }
}

impl FocalL1Params {
    /// Accepts `β ∈ [1/e, 1]`; `α` and the continuity constant follow from it.
    pub fn new(beta: f64) -> Result<Self> {
        // 1/e is not exactly representable; accept the rounded value.
        if !(1.0 / E..=1.0).contains(&beta) {
            return Err(Error::InvalidParameter {
                name: "beta",
                value: beta,
                reason: "must lie in [1/e, 1]",
            });
        }
        let alpha = E * beta;
        let c = (2.0 * alpha * beta.ln() + alpha) / 4.0;
        Ok(Self { beta, alpha, c })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Offset of the linear branch that makes the loss continuous at 1.
    pub fn c(&self) -> f64 {
        self.c
    }

    /// Location of the gradient peak, `1/(eβ)`.
    pub fn peak(&self) -> f64 {
        1.0 / (E * self.beta)
    }

    /// Gradient magnitude for errors above 1.
    pub fn plateau(&self) -> f64 {
        -self.alpha * self.beta.ln()
    }

    /// Value of the quadratic-log branch at `x`, without branch selection.
    pub fn inner_branch(&self, x: f64) -> f64 {
        -self.alpha * x * x * (2.0 * (self.beta * x).ln() - 1.0) / 4.0
    }

    /// Value of the linear branch at `x`, without branch selection.
    pub fn outer_branch(&self, x: f64) -> f64 {
        self.plateau() * x + self.c
    }
}

impl Default for FocalL1Params {
    fn default() -> Self {
        Self::new(DEFAULT_BETA).expect("default beta is in range")
    }
}

/// Gradient magnitude of FocalL1 at error `x ≥ 0`. Zero at the origin.
pub fn focal_l1_grad(x: f64, p: &FocalL1Params) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x <= 1.0 {
        -p.alpha * x * (p.beta * x).ln()
    } else {
        p.plateau()
    }
}

/// FocalL1 loss at error `x ≥ 0`. Zero at the origin.
pub fn focal_l1_loss(x: f64, p: &FocalL1Params) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x <= 1.0 {
        p.inner_branch(x)
    } else {
        p.outer_branch(x)
    }
}

/// `Σ_{i ∈ {x, y, w, h}} L_f(|pred_i − target_i|)` with its gradient.
pub fn localization_loss_eval(pred: &Box, target: &Box, p: &FocalL1Params) -> LossEval {
    let pa = pred.to_array();
    let ta = target.to_array();
    let mut value = 0.0;
    let mut grad = [0.0; 4];
    for i in 0..4 {
        let d = pa[i] - ta[i];
        value += focal_l1_loss(d.abs(), p);
        grad[i] = if d == 0.0 {
            0.0
        } else {
            d.signum() * focal_l1_grad(d.abs(), p)
        };
    }
    LossEval {
        value,
        grad: Grad4(grad),
    }
}

pub fn localization_loss(pred: &Box, target: &Box, p: &FocalL1Params) -> f64 {
    localization_loss_eval(pred, target, p).value
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalEiouParams {
    pub gamma: f64,
}

impl FocalEiouParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                value: gamma,
                reason: "must be non-negative",
            });
        }
        Ok(Self { gamma })
    }
}

impl Default for FocalEiouParams {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
        }
    }
}

/// `IOU^γ`, with `0^0 = 1`.
pub fn focal_eiou_weight(iou: f64, p: &FocalEiouParams) -> f64 {
    if p.gamma == 0.0 {
        1.0
    } else if iou <= 0.0 {
        0.0
    } else {
        iou.powf(p.gamma)
    }
}

/// `−(1 − IOU)^γ ln IOU`, with the IOU floored inside the logarithm.
pub fn focal_eiou_star_weight(iou: f64, p: &FocalEiouParams) -> f64 {
    let hard = if p.gamma == 0.0 {
        1.0
    } else {
        (1.0 - iou).max(0.0).powf(p.gamma)
    };
    -hard * iou.max(LOG_IOU_FLOOR).ln()
}

/// `IOU^γ · L_EIOU`; the IOU factor is a weight and is not differentiated.
pub fn focal_eiou(pred: &Box, target: &Box, p: &FocalEiouParams) -> LossEval {
    let weight = focal_eiou_weight(geometry::iou(pred, target), p);
    losses::loss_eiou(pred, target).weighted(weight)
}

/// `−(1 − IOU)^γ ln(IOU) · L_EIOU`, weight detached as in [`focal_eiou`].
pub fn focal_eiou_star(pred: &Box, target: &Box, p: &FocalEiouParams) -> LossEval {
    let weight = focal_eiou_star_weight(geometry::iou(pred, target), p);
    losses::loss_eiou(pred, target).weighted(weight)
}

/// FocalL1 applied to the EIOU value, differentiated by the chain rule.
pub fn focal_eiou_v1(pred: &Box, target: &Box, p: &FocalL1Params) -> LossEval {
    let eiou = losses::loss_eiou(pred, target);
    LossEval {
        value: focal_l1_loss(eiou.value, p),
        grad: eiou.grad * focal_l1_grad(eiou.value, p),
    }
}

/// `Σ WᵢLᵢ / Σ Wᵢ` over `(weight, eiou_value)` pairs; 0 when all weights are 0.
pub fn batch_normalized_loss(evals: &[(f64, f64)]) -> Result<f64> {
    if evals.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let (num, den) = evals
        .iter()
        .fold((0.0, 0.0), |(n, d), &(w, l)| (n + w * l, d + w));
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(num / den)
}
