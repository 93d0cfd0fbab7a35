//! Randomized audit of analytic gradients against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::Box;
use crate::losses::{self, Grad4, LossKind};
use crate::objective::Objective;

/// Pass threshold on the maximum relative error.
pub const REL_TOL: f64 = 1e-5;
pub const DEFAULT_STEP: f64 = 1e-6;
/// Width of the neighbourhood around non-smooth configurations that is
/// excluded from sampling.
pub const KINK_MARGIN: f64 = 1e-4;
/// Gradient magnitudes below this are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

/// `‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞, GRAD_FLOOR)`.
pub fn relative_error(analytic: Grad4, numeric: Grad4) -> f64 {
    let scale = analytic.max_abs().max(numeric.max_abs()).max(GRAD_FLOOR);
    (analytic - numeric).max_abs() / scale
}

/// Draws a `(pred, target)` pair. Centers are offset by up to 3 units and
/// sides range over `[0.5, 5]`, so both overlapping and disjoint pairs occur.
pub fn sample_pair<R: Rng>(rng: &mut R) -> (Box, Box) {
    let target = Box::new_unchecked(
        rng.gen_range(-5.0..5.0),
        rng.gen_range(-5.0..5.0),
        rng.gen_range(0.5..5.0),
        rng.gen_range(0.5..5.0),
    );
    let pred = Box::new_unchecked(
        target.cx + rng.gen_range(-3.0..3.0),
        target.cy + rng.gen_range(-3.0..3.0),
        rng.gen_range(0.5..5.0),
        rng.gen_range(0.5..5.0),
    );
    (pred, target)
}

/// True when any predicted edge lies within `margin` of a target edge on
/// the same axis. Those are the points where the intersection or the
/// enclosure switches branch.
pub fn near_edge_alignment(pred: &Box, target: &Box, margin: f64) -> bool {
    let (x1, y1, x2, y2) = pred.corners();
    let (gx1, gy1, gx2, gy2) = target.corners();
    let close = |a: f64, b: f64| (a - b).abs() < margin;
    [x1, x2].iter().any(|&p| close(p, gx1) || close(p, gx2))
        || [y1, y2].iter().any(|&p| close(p, gy1) || close(p, gy2))
}

/// Objective-specific non-smooth neighbourhoods, on top of edge alignment.
pub fn near_kink(objective: &Objective, pred: &Box, target: &Box, margin: f64) -> bool {
    if near_edge_alignment(pred, target, margin) {
        return true;
    }
    match objective {
        Objective::Loss(LossKind::Ciou) => {
            ((pred.w / pred.h).atan() - (target.w / target.h).atan()).abs() < margin
        }
        Objective::Loss(LossKind::SmoothL1 { beta }) => {
            let (p, t) = (pred.to_array(), target.to_array());
            (0..4).any(|i| ((p[i] - t[i]).abs() - beta).abs() < margin)
        }
        Objective::FocalEiouV1(_) => (losses::loss_eiou(pred, target).value - 1.0).abs() < margin,
        _ => false,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub loss: String,
    pub samples: usize,
    pub skipped: usize,
    pub step: f64,
    pub frozen_detached: bool,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub passed: bool,
}

/// Compares analytic and numeric gradients over `samples` accepted pairs.
///
/// Pairs near a non-smooth configuration are redrawn and counted in
/// `skipped`.
pub fn audit(
    objective: &Objective,
    samples: usize,
    seed: u64,
    step: f64,
    freeze_detached: bool,
) -> Result<AuditReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel: f64 = 0.0;
    let mut sum_rel = 0.0;
    let mut accepted = 0;
    let mut skipped = 0;
    while accepted < samples {
        let (pred, target) = sample_pair(&mut rng);
        if near_kink(objective, &pred, &target, KINK_MARGIN) {
            skipped += 1;
            continue;
        }
        let analytic = objective.eval(&pred, &target).grad;
        let numeric = objective.finite_diff(&pred, &target, step, freeze_detached)?;
        let err = relative_error(analytic, numeric);
        max_rel = max_rel.max(err);
        sum_rel += err;
        accepted += 1;
    }
    Ok(AuditReport {
        loss: objective.name().to_owned(),
        samples,
        skipped,
        step,
        frozen_detached: freeze_detached,
        max_rel_err: max_rel,
        mean_rel_err: if samples == 0 {
            0.0
        } else {
            sum_rel / samples as f64
        },
        passed: max_rel < REL_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_larger_norm() {
        let a = Grad4([1.0, 0.0, 0.0, 0.0]);
        let n = Grad4([0.9, 0.0, 0.0, 0.0]);
        assert!((relative_error(a, n) - 0.1).abs() < 1e-12);
        assert_eq!(relative_error(Grad4::ZERO, Grad4::ZERO), 0.0);
    }

    #[test]
    fn edge_alignment_detection() {
        let t = Box::new(0.0, 0.0, 2.0, 2.0).unwrap();
        assert!(near_edge_alignment(&t, &t, 1e-4));
        let p = Box::new(2.00005, 0.3, 2.0, 1.0).unwrap();
        assert!(near_edge_alignment(&p, &t, 1e-4));
        let p = Box::new(0.5, 0.3, 2.3, 1.1).unwrap();
        assert!(!near_edge_alignment(&p, &t, 1e-4));
    }

    #[test]
    fn audit_is_deterministic() {
        let o = Objective::Loss(LossKind::Eiou);
        let a = audit(&o, 50, 9, DEFAULT_STEP, true).unwrap();
        let b = audit(&o, 50, 9, DEFAULT_STEP, true).unwrap();
        assert_eq!(a.max_rel_err, b.max_rel_err);
        assert!(a.passed);
    }
}
