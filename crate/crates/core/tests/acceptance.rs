//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::f64::consts::E;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bbreg::cli;
use bbreg::focal::{self, FocalEiouParams, FocalL1Params};
use bbreg::geometry::{self, Box};
use bbreg::gradcheck;
use bbreg::losses::{self, LossKind};
use bbreg::report;
use bbreg::sim::{self, Setup, SimConfig, SimResult};
use bbreg::Objective;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 42;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn gradient_audit() -> Outcome {
    let started = Instant::now();
    let mut objectives: Vec<Objective> = [
        LossKind::Iou,
        LossKind::Giou,
        LossKind::Diou,
        LossKind::Eiou,
    ]
    .into_iter()
    .map(Objective::Loss)
    .collect();
    objectives.extend([
        Objective::FocalEiou(FocalEiouParams::new(0.5).unwrap()),
        Objective::FocalEiouStar(FocalEiouParams::default()),
        Objective::FocalEiouV1(FocalL1Params::default()),
        Objective::Loss(LossKind::smooth_l1(1.0).unwrap()),
        Objective::Loss(LossKind::Ciou),
    ]);
    let mut ok = true;
    let mut worst = Vec::new();
    for obj in &objectives {
        let r = gradcheck::audit(obj, 1000, SEED, 1e-6, true).expect("audit");
        ok &= r.max_rel_err < 1e-5;
        worst.push(format!("{}={:.1e}", r.loss, r.max_rel_err));
    }
    let elapsed = started.elapsed();
    ok &= elapsed < Duration::from_secs(10);
    Outcome::new(
        ok,
        format!(
            "max rel err {} in {:.2}s",
            worst.join(" "),
            elapsed.as_secs_f64()
        ),
    )
}

fn geometry_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_raster: f64 = 0.0;
    let mut overlapping = 0;
    while overlapping < 100 {
        let a = Box::new(
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(0.5..6.0),
            rng.gen_range(0.5..6.0),
        )
        .unwrap();
        let b = Box::new(
            a.cx + rng.gen_range(-3.0..3.0),
            a.cy + rng.gen_range(-3.0..3.0),
            rng.gen_range(0.5..6.0),
            rng.gen_range(0.5..6.0),
        )
        .unwrap();
        if geometry::intersection_area(&a, &b) <= 0.0 {
            continue;
        }
        overlapping += 1;
        let raster = geometry::raster_iou_oracle(&a, &b, 2048).expect("raster");
        worst_raster = worst_raster.max((geometry::iou(&a, &b) - raster).abs());
    }
    let mut worst_contain: f64 = 0.0;
    for _ in 0..100 {
        let outer = Box::new(
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(1.0..8.0),
            rng.gen_range(1.0..8.0),
        )
        .unwrap();
        let (w, h) = (
            outer.w * rng.gen_range(0.1..0.9),
            outer.h * rng.gen_range(0.1..0.9),
        );
        let slack_x = (outer.w - w) / 2.0;
        let slack_y = (outer.h - h) / 2.0;
        let inner = Box::new(
            outer.cx + rng.gen_range(-slack_x..slack_x),
            outer.cy + rng.gen_range(-slack_y..slack_y),
            w,
            h,
        )
        .unwrap();
        assert!(outer.contains(&inner));
        for (p, t) in [(&inner, &outer), (&outer, &inner)] {
            worst_contain = worst_contain
                .max((losses::loss_giou(p, t).value - losses::loss_iou(p, t).value).abs());
        }
    }
    let elapsed = started.elapsed();
    let ok = worst_raster < 1e-2 && worst_contain < 1e-12 && elapsed < Duration::from_secs(30);
    Outcome::new(
        ok,
        format!(
            "raster gap {worst_raster:.2e}, containment gap {worst_contain:.1e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn focal_l1_family() -> Outcome {
    let mut ok = true;
    let (mut cont, mut peak_err, mut deriv, mut plateau): (f64, f64, f64, f64) =
        (0.0, 0.0, 0.0, 0.0);
    for beta in [1.0 / E, 0.5, 0.8, 1.0] {
        let p = FocalL1Params::new(beta).unwrap();
        let alpha = E * beta;
        // Closed forms written out independently of the library branches.
        let inner_grad = |x: f64| -alpha * x * (beta * x).ln();
        let outer_grad = |_: f64| -alpha * beta.ln();
        let inner_loss = |x: f64| -alpha * x * x * (2.0 * (beta * x).ln() - 1.0) / 4.0;
        let c = (2.0 * alpha * beta.ln() + alpha) / 4.0;
        let outer_loss = |x: f64| -alpha * beta.ln() * x + c;
        cont = cont
            .max((inner_grad(1.0) - outer_grad(1.0)).abs())
            .max((inner_loss(1.0) - outer_loss(1.0)).abs());
        let lib_left = focal::focal_l1_loss(1.0, &p);
        let lib_right = focal::focal_l1_loss(1.0 + 1e-15, &p);
        cont = cont
            .max((lib_left - lib_right).abs())
            .max((lib_left - outer_loss(1.0)).abs());

        let x_star = 1.0 / (E * beta);
        peak_err = peak_err.max((focal::focal_l1_grad(x_star, &p) - 1.0).abs());
        for k in 1..=2000 {
            let x = k as f64 * 1.5e-3;
            if focal::focal_l1_grad(x, &p) > 1.0 + 1e-9 {
                ok = false;
            }
        }

        let h = 1e-6;
        for k in 1..=1000 {
            let x = 3.0 * k as f64 / 1001.0;
            let numeric =
                (focal::focal_l1_loss(x + h, &p) - focal::focal_l1_loss(x - h, &p)) / (2.0 * h);
            let analytic = focal::focal_l1_grad(x, &p);
            let scale = analytic.abs().max(numeric.abs()).max(gradcheck::GRAD_FLOOR);
            deriv = deriv.max((analytic - numeric).abs() / scale);
        }

        for x in [1.0 + 1e-9, 1.5, 2.0, 10.0, 1e3] {
            plateau = plateau.max((focal::focal_l1_grad(x, &p) - outer_grad(x)).abs());
        }
    }
    ok &= cont < 1e-12 && peak_err < 1e-9 && deriv < 1e-6 && plateau < 1e-12;
    Outcome::new(
        ok,
        format!("continuity {cont:.1e}, peak {peak_err:.1e}, derivative rel err {deriv:.1e}, plateau {plateau:.1e}"),
    )
}

fn ciou_pathologies() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_v: f64 = 0.0;
    for _ in 0..100 {
        let t = Box::new(
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(0.5..5.0),
            rng.gen_range(0.5..5.0),
        )
        .unwrap();
        let k = rng.gen_range(0.2..5.0);
        let pred = Box::new(
            t.cx + rng.gen_range(-3.0..3.0),
            t.cy + rng.gen_range(-3.0..3.0),
            t.w * k,
            t.h * k,
        )
        .unwrap();
        worst_v = worst_v.max(losses::aspect_term(&pred, &t).v);
    }
    let mut sign_violations = 0;
    for _ in 0..1000 {
        let (pred, target) = gradcheck::sample_pair(&mut rng);
        let a = losses::aspect_term(&pred, &target);
        let opposite = a.dv_dw.signum() == -a.dv_dh.signum();
        let both_zero = a.dv_dw == 0.0 && a.dv_dh == 0.0;
        if !(opposite || both_zero) {
            sign_violations += 1;
        }
    }

    let target = Box::new(0.0, 0.0, 1.0, 1.0).unwrap();
    let anchor = Box::new(0.0, 0.0, 1.0, 2.4).unwrap();
    let aspect = losses::aspect_term(&anchor, &target);
    let (step_w, step_h) = (-aspect.dv_dw, -aspect.dv_dh);
    let ciou_opposite = step_w * step_h < 0.0;
    let sides = losses::central_difference(
        |b| {
            let (_, parts) = losses::eiou_with_parts(b, &target);
            parts.width + parts.height
        },
        &anchor,
        1e-6,
    )
    .unwrap();
    let toward = |step: f64, cur: f64, goal: f64| {
        step == 0.0 || step.abs() < 1e-9 || step.signum() == (goal - cur).signum()
    };
    let eiou_toward = toward(-sides.0[2], anchor.w, target.w)
        && toward(-sides.0[3], anchor.h, target.h)
        && -sides.0[3] < 0.0;

    let ok = worst_v < 1e-12 && sign_violations == 0 && ciou_opposite && eiou_toward;
    Outcome::new(
        ok,
        format!(
            "max v on proportional pairs {worst_v:.1e}, sign violations {sign_violations}/1000, \
             anchor 1x2.4: CIOU aspect step (dw {step_w:+.3}, dh {step_h:+.3}), EIOU side step (dw {:+.3}, dh {:+.3})",
            -sides.0[2],
            -sides.0[3]
        ),
    )
}

struct SetupRun {
    names: Vec<String>,
    results: Vec<SimResult>,
    secs: f64,
}

fn run_setup(setup: Setup) -> SetupRun {
    let started = Instant::now();
    let configs: Vec<SimConfig> = Objective::comparison_set()
        .into_iter()
        .map(|loss| SimConfig::new(setup, loss, SEED))
        .collect();
    let results = configs
        .iter()
        .map(|c| sim::run_simulation(c).expect("simulation"))
        .collect();
    SetupRun {
        names: configs.iter().map(|c| c.loss.name().to_owned()).collect(),
        results,
        secs: started.elapsed().as_secs_f64(),
    }
}

impl SetupRun {
    fn get(&self, name: &str) -> &SimResult {
        &self.results[self.names.iter().position(|n| n == name).expect("variant")]
    }
}

fn setup1_ordering(run: &SetupRun) -> Outcome {
    let e = |n| run.get(n).final_error();
    let count = |n| run.get(n).count_final_iou_above(0.9);
    let ordering = [
        ("E(eiou) < E(ciou)", e("eiou") < e("ciou")),
        ("E(ciou) < E(giou)", e("ciou") < e("giou")),
        ("E(giou) <= E(iou)", e("giou") <= e("iou")),
    ];
    let focal = count("focal-eiou");
    let counts_ok = ["iou", "giou", "ciou"].iter().all(|n| focal > count(n));
    let failed: Vec<&str> = ordering
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(s, _)| *s)
        .collect();
    let ok = failed.is_empty() && counts_ok && run.secs < 600.0;
    let summary: Vec<String> = run
        .names
        .iter()
        .map(|n| format!("{n}: E={:.4e} n>0.9={}", e(n), count(n)))
        .collect();
    let mut detail = format!("{} ({:.1}s)", summary.join("; "), run.secs);
    if !failed.is_empty() {
        detail.push_str(&format!("; violated: {}", failed.join(", ")));
    }
    Outcome::new(ok, detail)
}

fn setup2_focal_best(run: &SetupRun) -> Outcome {
    let focal = run.get("focal-eiou");
    let others: Vec<&String> = run.names.iter().filter(|n| *n != "focal-eiou").collect();
    let lowest_e = others
        .iter()
        .all(|n| focal.final_error() < run.get(n).final_error());
    let highest_iou = others
        .iter()
        .all(|n| focal.final_mean_iou() > run.get(n).final_mean_iou());
    let beats_eiou = focal.final_mean_iou() > run.get("eiou").final_mean_iou();
    let ok = lowest_e && highest_iou && beats_eiou && run.secs < 60.0;
    let summary: Vec<String> = run
        .names
        .iter()
        .map(|n| {
            format!(
                "{n}: E={:.5e} mIOU={:.4}",
                run.get(n).final_error(),
                run.get(n).final_mean_iou()
            )
        })
        .collect();
    Outcome::new(
        ok,
        format!(
            "{} ({:.1}s); lowest E {lowest_e}, highest mean IOU {highest_iou}",
            summary.join("; "),
            run.secs
        ),
    )
}

fn determinism(first: &[(Setup, &SetupRun)]) -> Outcome {
    let mut mismatches = Vec::new();
    for (setup, run) in first {
        let dir = tempfile::tempdir().expect("tempdir");
        let configs: Vec<SimConfig> = Objective::comparison_set()
            .into_iter()
            .map(|loss| SimConfig::new(*setup, loss, SEED))
            .collect();
        cli::simulate_to_dir(&configs, dir.path()).expect("rerun");
        for (name, result) in run.names.iter().zip(&run.results) {
            let errors =
                fs::read(dir.path().join(name).join(report::ERRORS_CSV)).expect("errors.csv");
            let stats =
                fs::read(dir.path().join(name).join(report::IOU_STATS_CSV)).expect("iou_stats.csv");
            if errors != report::errors_csv(&result.errors).into_bytes() {
                mismatches.push(format!("{setup:?}/{name}/errors.csv"));
            }
            if stats != report::iou_stats_csv(&result.iou_stats).into_bytes() {
                mismatches.push(format!("{setup:?}/{name}/iou_stats.csv"));
            }
        }
    }
    let detail = if mismatches.is_empty() {
        "all CSVs byte-identical across two runs".to_owned()
    } else {
        mismatches.join(", ")
    };
    Outcome::new(mismatches.is_empty(), detail)
}

fn report_line(id: u32, name: &str, outcome: &Outcome) -> bool {
    let tag = if outcome.passed { "PASS" } else { "FAIL" };
    println!("criterion {id} [{tag}] {name}: {}", outcome.detail);
    outcome.passed
}

fn main() -> ExitCode {
    let mut all = true;
    all &= report_line(1, "gradient audit", &gradient_audit());
    all &= report_line(2, "geometry oracle", &geometry_oracle());
    all &= report_line(3, "FocalL1 family", &focal_l1_family());
    all &= report_line(4, "CIOU pathologies", &ciou_pathologies());
    let s1 = run_setup(Setup::Setup1);
    all &= report_line(5, "simulation setup 1", &setup1_ordering(&s1));
    let s2 = run_setup(Setup::Setup2);
    all &= report_line(6, "simulation setup 2", &setup2_focal_best(&s2));
    all &= report_line(
        7,
        "determinism",
        &determinism(&[(Setup::Setup1, &s1), (Setup::Setup2, &s2)]),
    );
    println!("criterion 8 [SKIP] detector benchmarks: COCO AP numbers need full detector training and are out of scope");
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
