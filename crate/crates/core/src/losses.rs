//! IOU-family losses and SmoothL1, each with an analytic gradient with
//! respect to the predicted box's `(cx, cy, w, h)`.
//!
//! Derivatives are assembled in corner space and mapped back to center form.
//! At kinks (a predicted edge coinciding with a target edge) the `min`/`max`
//! derivatives split evenly between the two arguments, which makes the
//! gradient vanish exactly when the prediction equals the target.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Box, Enclosure};

/// Floor applied to squared lengths before they are used as divisors.
pub const DIV_FLOOR: f64 = 1e-12;

/// Gradient with respect to `(cx, cy, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Grad4(pub [f64; 4]);

impl Grad4 {
    pub const ZERO: Self = Self([0.0; 4]);

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Add for Grad4 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(std::array::from_fn(|i| self.0[i] + rhs.0[i]))
    }
}

impl AddAssign for Grad4 {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sub for Grad4 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self(std::array::from_fn(|i| self.0[i] - rhs.0[i]))
    }
}

impl Neg for Grad4 {
    type Output = Self;
    fn neg(self) -> Self {
        Self(self.0.map(|v| -v))
    }
}

impl Mul<f64> for Grad4 {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self(self.0.map(|v| v * k))
    }
}

/// Loss value together with its gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEval {
    pub value: f64,
    pub grad: Grad4,
}

impl LossEval {
    pub const ZERO: Self = Self {
        value: 0.0,
        grad: Grad4::ZERO,
    };

    /// Multiplies value and gradient by a weight that is not differentiated.
    pub fn weighted(self, weight: f64) -> Self {
        Self {
            value: weight * self.value,
            grad: self.grad * weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossKind {
    SmoothL1 { beta: f64 },
    Iou,
    Giou,
    Diou,
    Ciou,
    Eiou,
}

impl LossKind {
    pub fn smooth_l1(beta: f64) -> Result<Self> {
        let kind = Self::SmoothL1 { beta };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::SmoothL1 { beta } if !(beta > 0.0 && beta.is_finite()) => {
                Err(Error::InvalidParameter {
                    name: "beta",
                    value: beta,
                    reason: "must be positive",
                })
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::SmoothL1 { .. } => "smooth-l1",
            Self::Iou => "iou",
            Self::Giou => "giou",
            Self::Diou => "diou",
            Self::Ciou => "ciou",
            Self::Eiou => "eiou",
        }
    }

    /// Members of the IOU family, in the order they are usually compared.
    pub const IOU_FAMILY: [LossKind; 5] =
        [Self::Iou, Self::Giou, Self::Diou, Self::Ciou, Self::Eiou];
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Uniform dispatch over [`LossKind`].
pub fn eval(kind: LossKind, pred: &Box, target: &Box) -> LossEval {
    match kind {
        LossKind::SmoothL1 { beta } => loss_smooth_l1(pred, target, beta),
        LossKind::Iou => loss_iou(pred, target),
        LossKind::Giou => loss_giou(pred, target),
        LossKind::Diou => loss_diou(pred, target),
        LossKind::Ciou => loss_ciou(pred, target),
        LossKind::Eiou => loss_eiou(pred, target),
    }
}

pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    let ax = x.abs();
    if ax < beta {
        0.5 * x * x / beta
    } else {
        ax - 0.5 * beta
    }
}

pub fn smooth_l1_grad(x: f64, beta: f64) -> f64 {
    if x.abs() < beta {
        x / beta
    } else {
        x.signum()
    }
}

/// Sum of [`smooth_l1`] over the four coordinate offsets.
pub fn loss_smooth_l1(pred: &Box, target: &Box, beta: f64) -> LossEval {
    let p = pred.to_array();
    let t = target.to_array();
    let mut value = 0.0;
    let mut grad = [0.0; 4];
    for i in 0..4 {
        let d = p[i] - t[i];
        value += smooth_l1(d, beta);
        grad[i] = smooth_l1_grad(d, beta);
    }
    LossEval {
        value,
        grad: Grad4(grad),
    }
}

// Derivatives of the predicted corners with respect to (cx, cy, w, h).
const D_X1: Grad4 = Grad4([1.0, 0.0, -0.5, 0.0]);
const D_X2: Grad4 = Grad4([1.0, 0.0, 0.5, 0.0]);
const D_Y1: Grad4 = Grad4([0.0, 1.0, 0.0, -0.5]);
const D_Y2: Grad4 = Grad4([0.0, 1.0, 0.0, 0.5]);

/// d min(p, g) / dp.
fn d_min(p: f64, g: f64) -> f64 {
    if p < g {
        1.0
    } else if p > g {
        0.0
    } else {
        0.5
    }
}

/// d max(p, g) / dp.
fn d_max(p: f64, g: f64) -> f64 {
    d_min(g, p)
}

/// Quantities shared by the IOU family, each paired with its gradient.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PairTerms {
    pub iou: f64,
    pub d_iou: Grad4,
    pub union: f64,
    pub d_union: Grad4,
    pub enclosure: Enclosure,
    pub d_cw: Grad4,
    pub d_ch: Grad4,
}

impl PairTerms {
    pub fn new(pred: &Box, target: &Box) -> Self {
        let (x1, y1, x2, y2) = pred.corners();
        let (gx1, gy1, gx2, gy2) = target.corners();

        let iw = x2.min(gx2) - x1.max(gx1);
        let ih = y2.min(gy2) - y1.max(gy1);
        let (inter, d_inter) = if iw > 0.0 && ih > 0.0 {
            let d_iw = D_X2 * d_min(x2, gx2) - D_X1 * d_max(x1, gx1);
            let d_ih = D_Y2 * d_min(y2, gy2) - D_Y1 * d_max(y1, gy1);
            (iw * ih, d_iw * ih + d_ih * iw)
        } else {
            (0.0, Grad4::ZERO)
        };

        // Side lengths are taken from the corners so that identical boxes give
        // inter == union bit for bit.
        let (pw, ph) = (x2 - x1, y2 - y1);
        let d_area = Grad4([0.0, 0.0, ph, pw]);
        let union = pw * ph + (gx2 - gx1) * (gy2 - gy1) - inter;
        let d_union = d_area - d_inter;
        let iou = inter / union;
        let d_iou = (d_inter * union - d_union * inter) * (1.0 / (union * union));

        let enclosure = geometry::enclosing(pred, target);
        let d_cw = D_X2 * d_max(x2, gx2) - D_X1 * d_min(x1, gx1);
        let d_ch = D_Y2 * d_max(y2, gy2) - D_Y1 * d_min(y1, gy1);

        Self {
            iou,
            d_iou,
            union,
            d_union,
            enclosure,
            d_cw,
            d_ch,
        }
    }

    /// `ρ²/c²`, the normalized center distance, and its gradient.
    fn distance_penalty(&self, pred: &Box, target: &Box) -> (f64, Grad4) {
        let dx = pred.cx - target.cx;
        let dy = pred.cy - target.cy;
        let rho_sq = dx * dx + dy * dy;
        let d_rho_sq = Grad4([2.0 * dx, 2.0 * dy, 0.0, 0.0]);
        let (c_sq, d_c_sq) = floored(
            self.enclosure.c_sq,
            self.d_cw * (2.0 * self.enclosure.c_w) + self.d_ch * (2.0 * self.enclosure.c_h),
        );
        quotient(rho_sq, d_rho_sq, c_sq, d_c_sq)
    }

    /// `(side − side_gt)² / C_side²` for one axis.
    fn side_penalty(side: f64, side_gt: f64, d_side: Grad4, c: f64, d_c: Grad4) -> (f64, Grad4) {
        let diff = side - side_gt;
        let (c_sq, d_c_sq) = floored(c * c, d_c * (2.0 * c));
        quotient(diff * diff, d_side * (2.0 * diff), c_sq, d_c_sq)
    }
}

/// Applies [`DIV_FLOOR`]; the floor is a constant so its gradient is zero.
fn floored(v: f64, dv: Grad4) -> (f64, Grad4) {
    if v < DIV_FLOOR {
        (DIV_FLOOR, Grad4::ZERO)
    } else {
        (v, dv)
    }
}

fn quotient(num: f64, d_num: Grad4, den: f64, d_den: Grad4) -> (f64, Grad4) {
    (num / den, (d_num * den - d_den * num) * (1.0 / (den * den)))
}

/// `1 − IOU`. Disjoint boxes sit on a plateau with zero gradient.
pub fn loss_iou(pred: &Box, target: &Box) -> LossEval {
    let t = PairTerms::new(pred, target);
    LossEval {
        value: 1.0 - t.iou,
        grad: -t.d_iou,
    }
}

/// `1 − IOU + |C − (A ∪ B)| / |C|`.
pub fn loss_giou(pred: &Box, target: &Box) -> LossEval {
    let t = PairTerms::new(pred, target);
    let c = t.enclosure.area();
    let d_c = t.d_cw * t.enclosure.c_h + t.d_ch * t.enclosure.c_w;
    // (C − U)/C = 1 − U/C
    let (ratio, d_ratio) = quotient(t.union, t.d_union, c, d_c);
    LossEval {
        value: 1.0 - t.iou + (1.0 - ratio),
        grad: -t.d_iou - d_ratio,
    }
}

/// `1 − IOU + ρ²/c²`.
pub fn loss_diou(pred: &Box, target: &Box) -> LossEval {
    let t = PairTerms::new(pred, target);
    let (dist, d_dist) = t.distance_penalty(pred, target);
    LossEval {
        value: 1.0 - t.iou + dist,
        grad: -t.d_iou + d_dist,
    }
}

/// Aspect-ratio consistency term of CIOU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AspectTerm {
    pub v: f64,
    pub dv_dw: f64,
    pub dv_dh: f64,
}

/// `v = 4/π² (atan(w_gt/h_gt) − atan(w/h))²` and its partials in `w`, `h`.
pub fn aspect_term(pred: &Box, target: &Box) -> AspectTerm {
    let delta = (target.w / target.h).atan() - (pred.w / pred.h).atan();
    let diag_sq = (pred.w * pred.w + pred.h * pred.h).max(DIV_FLOOR);
    // d atan(w/h)/dw = h/(w² + h²) enters with a minus sign through delta.
    let k = 8.0 / (PI * PI) * delta;
    AspectTerm {
        v: 4.0 / (PI * PI) * delta * delta,
        dv_dw: -k * pred.h / diag_sq,
        dv_dh: k * pred.w / diag_sq,
    }
}

/// Trade-off weight `α = v / ((1 − IOU) + v)`, taken as 0 for
/// non-overlapping boxes and when the denominator vanishes.
pub fn ciou_alpha(iou: f64, v: f64) -> f64 {
    let den = (1.0 - iou) + v;
    if iou <= 0.0 || den <= 0.0 {
        0.0
    } else {
        v / den
    }
}

/// `1 − IOU + ρ²/c² + αv`, with `α` treated as a constant in the gradient.
pub fn loss_ciou(pred: &Box, target: &Box) -> LossEval {
    let t = PairTerms::new(pred, target);
    let (dist, d_dist) = t.distance_penalty(pred, target);
    let a = aspect_term(pred, target);
    let alpha = ciou_alpha(t.iou, a.v);
    let d_aspect = Grad4([0.0, 0.0, a.dv_dw, a.dv_dh]) * alpha;
    LossEval {
        value: 1.0 - t.iou + dist + alpha * a.v,
        grad: -t.d_iou + d_dist + d_aspect,
    }
}

/// CIOU value with `α` supplied by the caller instead of recomputed.
///
/// Differentiating this with `alpha` fixed reproduces the gradient of
/// [`loss_ciou`].
pub fn ciou_value_with_alpha(pred: &Box, target: &Box, alpha: f64) -> f64 {
    let iou = geometry::iou(pred, target);
    let c_sq = geometry::enclosing(pred, target).c_sq.max(DIV_FLOOR);
    let dist = geometry::center_dist_sq(pred, target) / c_sq;
    1.0 - iou + dist + alpha * aspect_term(pred, target).v
}

/// The three parts of EIOU, reported separately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EiouParts {
    pub iou_loss: f64,
    pub distance: f64,
    pub width: f64,
    pub height: f64,
}

impl EiouParts {
    pub fn total(&self) -> f64 {
        self.iou_loss + self.distance + self.width + self.height
    }
}

/// `1 − IOU + ρ²/c² + (w − w_gt)²/C_w² + (h − h_gt)²/C_h²`, differentiated
/// through the enclosure as well.
pub fn loss_eiou(pred: &Box, target: &Box) -> LossEval {
    eiou_with_parts(pred, target).0
}

pub fn eiou_with_parts(pred: &Box, target: &Box) -> (LossEval, EiouParts) {
    let t = PairTerms::new(pred, target);
    let (dist, d_dist) = t.distance_penalty(pred, target);
    let e = t.enclosure;
    let (width, d_width) =
        PairTerms::side_penalty(pred.w, target.w, Grad4([0.0, 0.0, 1.0, 0.0]), e.c_w, t.d_cw);
    let (height, d_height) =
        PairTerms::side_penalty(pred.h, target.h, Grad4([0.0, 0.0, 0.0, 1.0]), e.c_h, t.d_ch);
    let parts = EiouParts {
        iou_loss: 1.0 - t.iou,
        distance: dist,
        width,
        height,
    };
    let eval = LossEval {
        value: parts.total(),
        grad: -t.d_iou + d_dist + d_width + d_height,
    };
    (eval, parts)
}

/// Central-difference gradient of `f` at `pred`.
///
/// Fails if a perturbed box would have a non-positive side.
pub fn central_difference<F>(f: F, pred: &Box, step: f64) -> Result<Grad4>
where
    F: Fn(&Box) -> f64,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "step",
            value: step,
            reason: "must be positive",
        });
    }
    if pred.w - step <= 0.0 {
        return Err(Error::DegeneratePerturbation { field: "w", step });
    }
    if pred.h - step <= 0.0 {
        return Err(Error::DegeneratePerturbation { field: "h", step });
    }
    let base = pred.to_array();
    let mut grad = [0.0; 4];
    for (i, g) in grad.iter_mut().enumerate() {
        let mut plus = base;
        let mut minus = base;
        plus[i] += step;
        minus[i] -= step;
        *g = (f(&Box::from_array(plus)) - f(&Box::from_array(minus))) / (2.0 * step);
    }
    Ok(Grad4(grad))
}

/// Finite-difference gradient of `eval(kind, ·, target).value`.
pub fn finite_diff_grad(kind: LossKind, pred: &Box, target: &Box, step: f64) -> Result<Grad4> {
    central_difference(|p| eval(kind, p, target).value, pred, step)
}

/// Finite-difference gradient of CIOU with `α` frozen at its value at `pred`.
pub fn finite_diff_grad_ciou_frozen(pred: &Box, target: &Box, step: f64) -> Result<Grad4> {
    let alpha = ciou_alpha(geometry::iou(pred, target), aspect_term(pred, target).v);
    central_difference(|p| ciou_value_with_alpha(p, target, alpha), pred, step)
}
