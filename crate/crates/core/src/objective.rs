//! A single selector over every loss the simulator and the CLI can drive.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::focal::{self, FocalEiouParams, FocalL1Params};
use crate::geometry::{self, Box};
use crate::losses::{self, Grad4, LossEval, LossKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObjectiveSpec", into = "ObjectiveSpec")]
pub enum Objective {
    Loss(LossKind),
    /// FocalL1 summed over the four coordinates.
    FocalL1(FocalL1Params),
    FocalEiou(FocalEiouParams),
    FocalEiouStar(FocalEiouParams),
    FocalEiouV1(FocalL1Params),
}

/// Flat `{loss, beta?, gamma?}` form used in manifests and config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub loss: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl TryFrom<ObjectiveSpec> for Objective {
    type Error = Error;
    fn try_from(spec: ObjectiveSpec) -> Result<Self> {
        Objective::from_parts(&spec.loss, spec.beta, spec.gamma)
    }
}

impl From<Objective> for ObjectiveSpec {
    fn from(o: Objective) -> Self {
        let (beta, gamma) = match o {
            Objective::Loss(LossKind::SmoothL1 { beta }) => (Some(beta), None),
            Objective::Loss(_) => (None, None),
            Objective::FocalL1(p) | Objective::FocalEiouV1(p) => (Some(p.beta()), None),
            Objective::FocalEiou(p) | Objective::FocalEiouStar(p) => (None, Some(p.gamma)),
        };
        ObjectiveSpec {
            loss: o.name().to_owned(),
            beta,
            gamma,
        }
    }
}

impl Objective {
    pub const NAMES: [&'static str; 10] = [
        "smooth-l1",
        "iou",
        "giou",
        "diou",
        "ciou",
        "eiou",
        "focal-l1",
        "focal-eiou",
        "focal-eiou-star",
        "focal-eiou-v1",
    ];

    /// Builds an objective from its name and optional hyper-parameters.
    ///
    /// Missing parameters take the defaults: `β = 1` for SmoothL1,
    /// `β = 0.8` for the FocalL1 variants, `γ = 0.5` for Focal-EIOU.
    pub fn from_parts(name: &str, beta: Option<f64>, gamma: Option<f64>) -> Result<Self> {
        let focal_l1 = || beta.map_or(Ok(FocalL1Params::default()), FocalL1Params::new);
        let focal_eiou = || gamma.map_or(Ok(FocalEiouParams::default()), FocalEiouParams::new);
        let o = match name.to_ascii_lowercase().as_str() {
            "smooth-l1" | "smoothl1" => Self::Loss(LossKind::smooth_l1(beta.unwrap_or(1.0))?),
            "iou" => Self::Loss(LossKind::Iou),
            "giou" => Self::Loss(LossKind::Giou),
            "diou" => Self::Loss(LossKind::Diou),
            "ciou" => Self::Loss(LossKind::Ciou),
            "eiou" => Self::Loss(LossKind::Eiou),
            "focal-l1" | "focall1" => Self::FocalL1(focal_l1()?),
            "focal-eiou" => Self::FocalEiou(focal_eiou()?),
            "focal-eiou-star" | "focal-eiou*" => Self::FocalEiouStar(focal_eiou()?),
            "focal-eiou-v1" => Self::FocalEiouV1(focal_l1()?),
            _ => return Err(Error::UnknownLoss(name.to_owned())),
        };
        Ok(o)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Loss(kind) => kind.name(),
            Self::FocalL1(_) => "focal-l1",
            Self::FocalEiou(_) => "focal-eiou",
            Self::FocalEiouStar(_) => "focal-eiou-star",
            Self::FocalEiouV1(_) => "focal-eiou-v1",
        }
    }

    pub fn eval(&self, pred: &Box, target: &Box) -> LossEval {
        match self {
            Self::Loss(kind) => losses::eval(*kind, pred, target),
            Self::FocalL1(p) => focal::localization_loss_eval(pred, target, p),
            Self::FocalEiou(p) => focal::focal_eiou(pred, target, p),
            Self::FocalEiouStar(p) => focal::focal_eiou_star(pred, target, p),
            Self::FocalEiouV1(p) => focal::focal_eiou_v1(pred, target, p),
        }
    }

    /// True for objectives whose analytic gradient holds some factor
    /// constant (CIOU's `α`, the Focal-EIOU weights).
    pub fn has_detached_factor(&self) -> bool {
        matches!(
            self,
            Self::Loss(LossKind::Ciou) | Self::FocalEiou(_) | Self::FocalEiouStar(_)
        )
    }

    /// Loss value as a function of the prediction, with every detached factor
    /// frozen at its value for `anchor`. Its derivative at `anchor` is what
    /// [`Objective::eval`] returns as the gradient.
    pub fn frozen_value_at(&self, anchor: &Box, target: &Box) -> impl Fn(&Box) -> f64 + '_ {
        let iou = geometry::iou(anchor, target);
        let frozen = match self {
            Self::Loss(LossKind::Ciou) => {
                losses::ciou_alpha(iou, losses::aspect_term(anchor, target).v)
            }
            Self::FocalEiou(p) => focal::focal_eiou_weight(iou, p),
            Self::FocalEiouStar(p) => focal::focal_eiou_star_weight(iou, p),
            _ => f64::NAN,
        };
        let target = *target;
        move |pred: &Box| match self {
            Self::Loss(LossKind::Ciou) => losses::ciou_value_with_alpha(pred, &target, frozen),
            Self::FocalEiou(_) | Self::FocalEiouStar(_) => {
                frozen * losses::loss_eiou(pred, &target).value
            }
            _ => self.eval(pred, &target).value,
        }
    }

    /// Central-difference gradient. With `freeze_detached` the detached
    /// factors are held at their value at `pred`, matching the analytic
    /// convention; without it the full value is differentiated.
    pub fn finite_diff(
        &self,
        pred: &Box,
        target: &Box,
        step: f64,
        freeze_detached: bool,
    ) -> Result<Grad4> {
        if freeze_detached {
            losses::central_difference(self.frozen_value_at(pred, target), pred, step)
        } else {
            losses::central_difference(|p| self.eval(p, target).value, pred, step)
        }
    }

    /// The variants compared in the convergence figures.
    pub fn comparison_set() -> Vec<Objective> {
        vec![
            Self::Loss(LossKind::Iou),
            Self::Loss(LossKind::Giou),
            Self::Loss(LossKind::Ciou),
            Self::Loss(LossKind::Eiou),
            Self::FocalEiou(FocalEiouParams::default()),
        ]
    }
}

impl From<LossKind> for Objective {
    fn from(kind: LossKind) -> Self {
        Self::Loss(kind)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::from_parts(s, None, None)
    }
}
