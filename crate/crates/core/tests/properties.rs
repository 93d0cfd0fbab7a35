use std::f64::consts::E;

use bbreg::focal::{self, FocalEiouParams, FocalL1Params};
use bbreg::geometry::{self, Box};
use bbreg::losses::{self, LossKind};
use proptest::prelude::*;

fn any_box() -> impl Strategy<Value = Box> {
    (-50.0..50.0f64, -50.0..50.0f64, 0.1..30.0f64, 0.1..30.0f64)
        .prop_map(|(cx, cy, w, h)| Box::new_unchecked(cx, cy, w, h))
}

/// Pairs with centers close enough that they usually overlap.
fn near_pair() -> impl Strategy<Value = (Box, Box)> {
    (
        any_box(),
        -5.0..5.0f64,
        -5.0..5.0f64,
        0.5..10.0f64,
        0.5..10.0f64,
    )
        .prop_map(|(t, dx, dy, w, h)| (Box::new_unchecked(t.cx + dx, t.cy + dy, w, h), t))
}

const SCALE_INVARIANT: [LossKind; 4] = [
    LossKind::Iou,
    LossKind::Giou,
    LossKind::Diou,
    LossKind::Eiou,
];

proptest! {
    #[test]
    fn corners_round_trip(b in any_box()) {
        let (x1, y1, x2, y2) = b.corners();
        prop_assert!(x1 < x2 && y1 < y2);
        let back = Box::from_corners(x1, y1, x2, y2).unwrap();
        for (a, c) in back.to_array().iter().zip(b.to_array()) {
            prop_assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn iou_symmetric_and_bounded(a in any_box(), b in any_box()) {
        let ab = geometry::iou(&a, &b);
        prop_assert_eq!(ab, geometry::iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn iou_scale_and_translation_invariant((a, b) in near_pair(), k in 0.01..100.0f64, dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
        let base = geometry::iou(&a, &b);
        prop_assert!((geometry::iou(&a.scaled(k), &b.scaled(k)) - base).abs() < 1e-12);
        prop_assert!((geometry::iou(&a.translated(dx, dy), &b.translated(dx, dy)) - base).abs() < 1e-12);
        let e0 = geometry::enclosing(&a, &b);
        let e1 = geometry::enclosing(&a.translated(dx, dy), &b.translated(dx, dy));
        prop_assert!((e0.c_w - e1.c_w).abs() < 1e-12 && (e0.c_h - e1.c_h).abs() < 1e-12);
    }

    #[test]
    fn enclosure_covers_both(a in any_box(), b in any_box()) {
        let e = geometry::enclosing(&a, &b);
        prop_assert_eq!(e, geometry::enclosing(&b, &a));
        prop_assert!(e.c_w >= a.w.max(b.w) - 1e-12 && e.c_h >= a.h.max(b.h) - 1e-12);
        prop_assert_eq!(e.c_sq, e.c_w * e.c_w + e.c_h * e.c_h);
        // Corner-containment oracle: every corner lies inside the enclosure.
        let (ax1, ay1, ax2, ay2) = a.corners();
        let (bx1, by1, bx2, by2) = b.corners();
        let (x0, y0) = (ax1.min(bx1), ay1.min(by1));
        for (x, y) in [(ax1, ay1), (ax2, ay2), (bx1, by1), (bx2, by2)] {
            prop_assert!(x >= x0 && x <= x0 + e.c_w + 1e-9);
            prop_assert!(y >= y0 && y <= y0 + e.c_h + 1e-9);
        }
    }

    #[test]
    fn center_distance_matches_hypot(a in any_box(), b in any_box()) {
        let d = (a.cx - b.cx).hypot(a.cy - b.cy);
        prop_assert!((geometry::center_dist_sq(&a, &b) - d * d).abs() <= 1e-9 * (1.0 + d * d));
        prop_assert_eq!(geometry::center_dist_sq(&a, &b), geometry::center_dist_sq(&b, &a));
    }

    #[test]
    fn containment_gives_area_ratio(outer in any_box(), fx in 0.05..0.95f64, fy in 0.05..0.95f64, px in 0.0..1.0f64, py in 0.0..1.0f64) {
        let (w, h) = (outer.w * fx, outer.h * fy);
        let (x1, y1, _, _) = outer.corners();
        let inner = Box::new_unchecked(x1 + w / 2.0 + px * (outer.w - w), y1 + h / 2.0 + py * (outer.h - h), w, h);
        prop_assume!(outer.contains(&inner));
        prop_assert!((geometry::iou(&outer, &inner) - inner.area() / outer.area()).abs() < 1e-12);
        prop_assert!((losses::loss_giou(&inner, &outer).value - losses::loss_iou(&inner, &outer).value).abs() < 1e-12);
        prop_assert!((losses::loss_giou(&outer, &inner).value - losses::loss_iou(&outer, &inner).value).abs() < 1e-12);
    }

    #[test]
    fn losses_vanish_on_identical_boxes(b in any_box()) {
        for kind in LossKind::IOU_FAMILY {
            prop_assert!(losses::eval(kind, &b, &b).value.abs() < 1e-12);
        }
    }

    #[test]
    fn losses_translation_invariant((a, b) in near_pair(), dx in -20.0..20.0f64, dy in -20.0..20.0f64) {
        for kind in LossKind::IOU_FAMILY {
            let v0 = losses::eval(kind, &a, &b).value;
            let v1 = losses::eval(kind, &a.translated(dx, dy), &b.translated(dx, dy)).value;
            prop_assert!((v0 - v1).abs() < 1e-12, "{kind}: {v0} vs {v1}");
        }
    }

    #[test]
    fn iou_family_scale_invariant((a, b) in near_pair(), k in 0.05..20.0f64) {
        for kind in SCALE_INVARIANT {
            let v0 = losses::eval(kind, &a, &b).value;
            let v1 = losses::eval(kind, &a.scaled(k), &b.scaled(k)).value;
            prop_assert!((v0 - v1).abs() < 1e-10, "{kind}: {v0} vs {v1}");
        }
    }

    #[test]
    fn ciou_blind_to_proportional_boxes(t in any_box(), k in 0.05..20.0f64, dx in -5.0..5.0f64) {
        let pred = Box::new_unchecked(t.cx + dx, t.cy, t.w * k, t.h * k);
        prop_assert!(losses::aspect_term(&pred, &t).v < 1e-12);
    }

    #[test]
    fn ciou_partials_opposite((a, b) in near_pair()) {
        let t = losses::aspect_term(&a, &b);
        prop_assert!((t.dv_dw + a.h / a.w * t.dv_dh).abs() < 1e-10);
        prop_assert!(t.dv_dw * t.dv_dh <= 0.0);
        prop_assert!((t.dv_dw == 0.0) == (t.dv_dh == 0.0));
    }

    #[test]
    fn gradients_finite((a, b) in near_pair()) {
        for kind in LossKind::IOU_FAMILY {
            prop_assert!(losses::eval(kind, &a, &b).grad.is_finite());
        }
    }

    #[test]
    fn focal_eiou_weight_increasing_in_iou(lo in 0.001..0.999f64, gap in 1e-6..0.5f64, gamma in 0.05..4.0f64) {
        let hi = (lo + gap).min(1.0);
        prop_assume!(hi > lo);
        let p = FocalEiouParams::new(gamma).unwrap();
        prop_assert!(focal::focal_eiou_weight(hi, &p) > focal::focal_eiou_weight(lo, &p));
    }

    #[test]
    fn focal_eiou_gamma_zero_is_eiou((a, b) in near_pair()) {
        let zero = FocalEiouParams::new(0.0).unwrap();
        prop_assert_eq!(focal::focal_eiou(&a, &b, &zero), losses::loss_eiou(&a, &b));
    }

    #[test]
    fn batch_normalization_scale_invariant(pairs in prop::collection::vec((0.01..5.0f64, 0.0..3.0f64), 1..40), k in 0.01..100.0f64) {
        let base = focal::batch_normalized_loss(&pairs).unwrap();
        let scaled: Vec<_> = pairs.iter().map(|&(w, l)| (w * k, l)).collect();
        prop_assert!((focal::batch_normalized_loss(&scaled).unwrap() - base).abs() < 1e-12 * (1.0 + base));
    }

    #[test]
    fn localization_loss_is_coordinatewise_sum(a in any_box(), b in any_box(), beta in (1.0 / E)..1.0f64) {
        let p = FocalL1Params::new(beta).unwrap();
        let expected: f64 = a.to_array().iter().zip(b.to_array()).map(|(x, y)| focal::focal_l1_loss((x - y).abs(), &p)).sum();
        prop_assert_eq!(focal::localization_loss(&a, &b, &p), expected);
    }
}

#[test]
fn focal_l1_grad_unimodal_on_unit_interval() {
    for beta in [1.0 / E, 0.5, 0.6, 0.8, 0.9, 1.0] {
        let p = FocalL1Params::new(beta).unwrap();
        let peak = p.peak();
        let grid: Vec<f64> = (1..=1000).map(|i| i as f64 * 1e-3).collect();
        for w in grid.windows(2) {
            let (g0, g1) = (
                focal::focal_l1_grad(w[0], &p),
                focal::focal_l1_grad(w[1], &p),
            );
            if w[1] <= peak {
                assert!(g1 > g0, "beta {beta}: not increasing at {}", w[0]);
            } else if w[0] >= peak {
                assert!(g1 < g0, "beta {beta}: not decreasing at {}", w[0]);
            }
        }
    }
}

#[test]
fn focal_l1_grad_range_and_plateau() {
    for beta in [1.0 / E, 0.5, 0.8, 1.0] {
        let p = FocalL1Params::new(beta).unwrap();
        for i in 1..=3000 {
            let x = i as f64 * 1e-3;
            let g = focal::focal_l1_grad(x, &p);
            assert!(g <= 1.0 + 1e-12, "beta {beta}, x {x}: {g}");
            // β = 1 gives a zero plateau, so the lower bound is only strict below it.
            assert!(g > 0.0 || (beta == 1.0 && x >= 1.0));
            if x > 1.0 {
                assert_eq!(g, -p.alpha() * beta.ln());
            }
        }
    }
}

#[test]
fn larger_beta_suppresses_outliers_more() {
    let betas = [1.0 / E, 0.45, 0.6, 0.8, 0.95, 1.0];
    for pair in betas.windows(2) {
        let (p1, p2) = (
            FocalL1Params::new(pair[0]).unwrap(),
            FocalL1Params::new(pair[1]).unwrap(),
        );
        for x in [1.01, 1.5, 3.0, 10.0] {
            assert!(focal::focal_l1_grad(x, &p2) <= focal::focal_l1_grad(x, &p1));
        }
    }
}

#[test]
fn focal_l1_loss_monotone_and_matches_gradient() {
    for beta in [1.0 / E, 0.5, 0.8, 1.0] {
        let p = FocalL1Params::new(beta).unwrap();
        let mut prev = 0.0;
        for i in 1..=3000 {
            let x = i as f64 * 1e-3;
            let v = focal::focal_l1_loss(x, &p);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }
}

#[test]
fn focal_eiou_v1_gradient_matches_composition() {
    let p = FocalL1Params::default();
    let target = Box::new(0.0, 0.0, 4.0, 3.0).unwrap();
    for pred in [
        Box::new(0.3, -0.2, 3.1, 2.2).unwrap(),
        Box::new(2.3, 1.0, 1.0, 5.0).unwrap(),
        Box::new(-6.0, 0.0, 2.0, 2.0).unwrap(),
    ] {
        let analytic = focal::focal_eiou_v1(&pred, &target, &p).grad;
        let numeric = losses::central_difference(
            |b| focal::focal_l1_loss(losses::loss_eiou(b, &target).value, &p),
            &pred,
            1e-6,
        )
        .unwrap();
        let scale = analytic.max_abs().max(numeric.max_abs());
        assert!(
            (analytic - numeric).max_abs() / scale < 1e-5,
            "{analytic:?} vs {numeric:?}"
        );
    }
}
