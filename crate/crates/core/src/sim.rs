//! Synthetic convergence experiment: anchors at random points regress towards
//! fixed targets by plain gradient descent under a chosen loss.
//!
//! Every anchor is paired with every target and each pair evolves on its
//! own. Pairs are stored in `(point, anchor shape, target)` order, which is
//! also the fixed reduction order for the per-iteration error sum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::focal;
use crate::geometry::{self, Box};
use crate::objective::Objective;
use crate::stats::{self, BoxPlotStats};

pub const TARGET_CENTER: (f64, f64) = (10.0, 10.0);
pub const TARGET_AREA: f64 = 100.0;
/// Lower bound applied to `w` and `h` after every update.
pub const MIN_SIDE: f64 = 1e-4;
pub const DEFAULT_ITERATIONS: usize = 200;
pub const DEFAULT_MEMORY_BUDGET: u64 = 1 << 30;

const SETUP1_RATIOS: [f64; 7] = [1.0 / 4.0, 1.0 / 3.0, 1.0 / 2.0, 1.0, 2.0, 3.0, 4.0];
const SETUP1_AREAS: [f64; 7] = [50.0, 67.0, 75.0, 100.0, 133.0, 150.0, 200.0];
const SETUP2_RATIOS: [f64; 3] = [1.0 / 3.0, 1.0, 3.0];
const SETUP2_AREAS: [f64; 3] = [50.0, 100.0, 150.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setup {
    /// Mostly low-quality anchors spread over a 20×20 region.
    Setup1,
    /// High-quality anchors within a 2.5-side square around the targets.
    Setup2,
}

impl Setup {
    /// Width-to-height ratios shared by targets and anchors.
    pub fn ratios(&self) -> &'static [f64] {
        match self {
            Self::Setup1 => &SETUP1_RATIOS,
            Self::Setup2 => &SETUP2_RATIOS,
        }
    }

    pub fn anchor_areas(&self) -> &'static [f64] {
        match self {
            Self::Setup1 => &SETUP1_AREAS,
            Self::Setup2 => &SETUP2_AREAS,
        }
    }

    pub fn default_points(&self) -> usize {
        match self {
            Self::Setup1 => 1000,
            Self::Setup2 => 100,
        }
    }

    /// Side length of the square anchor centers are drawn from.
    pub fn region_side(&self) -> f64 {
        match self {
            Self::Setup1 => 20.0,
            Self::Setup2 => 2.5,
        }
    }
}

impl std::str::FromStr for Setup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "setup1" => Ok(Self::Setup1),
            "2" | "setup2" => Ok(Self::Setup2),
            other => Err(Error::Config(format!(
                "unknown setup `{other}` (expected 1 or 2)"
            ))),
        }
    }
}

/// Direction of the parameter update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateSign {
    /// `B ← B − μ ∂L/∂B`.
    #[default]
    Descent,
    /// `B ← B + μ ∂L/∂B`, the update as literally written in the procedure.
    Literal,
}

/// How anchor centers are placed inside the sampling square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CenterLayout {
    #[default]
    Random,
    /// Regular grid; requires a square point count.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    /// Keep the full `T × N × S × A` IOU tensor.
    Full,
    /// Keep per-iteration box-plot statistics only.
    #[default]
    Streaming,
}

/// How Focal-EIOU weights enter the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FocalWeighting {
    /// Weights are divided by their mean over all pairs of the iteration,
    /// i.e. each step follows the batch loss `Σ WᵢLᵢ / Σ Wᵢ` scaled by `n`.
    #[default]
    Batch,
    /// Each pair descends its own `IOU^γ · L_EIOU`.
    Pair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub setup: Setup,
    pub loss: Objective,
    pub iterations: usize,
    pub seed: u64,
    pub points: usize,
    #[serde(default)]
    pub update_sign: UpdateSign,
    #[serde(default)]
    pub centers: CenterLayout,
    #[serde(default)]
    pub mode: OutputMode,
    #[serde(default)]
    pub focal_weighting: FocalWeighting,
    #[serde(default = "default_budget")]
    pub memory_budget: u64,
}

fn default_budget() -> u64 {
    DEFAULT_MEMORY_BUDGET
}

impl SimConfig {
    pub fn new(setup: Setup, loss: Objective, seed: u64) -> Self {
        Self {
            setup,
            loss,
            iterations: DEFAULT_ITERATIONS,
            seed,
            points: setup.default_points(),
            update_sign: UpdateSign::default(),
            centers: CenterLayout::default(),
            mode: OutputMode::default(),
            focal_weighting: FocalWeighting::default(),
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.points == 0 {
            return Err(Error::Config("points must be at least 1".into()));
        }
        if self.centers == CenterLayout::Grid {
            let side = (self.points as f64).sqrt().round() as usize;
            if side * side != self.points {
                return Err(Error::Config(format!(
                    "grid layout needs a square point count, got {}",
                    self.points
                )));
            }
        }
        Ok(())
    }

    pub fn pair_count(&self) -> usize {
        let a = self.setup.ratios().len();
        self.points * a * a * a
    }

    /// Bytes needed to hold the full IOU tensor.
    pub fn iou_tensor_bytes(&self) -> u64 {
        (self.iterations as u64) * (self.pair_count() as u64) * std::mem::size_of::<f64>() as u64
    }
}

/// Box with the given area and width-to-height ratio.
pub fn box_from_area_ratio(area: f64, ratio_w_to_h: f64, cx: f64, cy: f64) -> Box {
    Box::new_unchecked(
        cx,
        cy,
        (area * ratio_w_to_h).sqrt(),
        (area / ratio_w_to_h).sqrt(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// `points × shapes` anchors, point-major.
    pub anchors: Vec<Box>,
    pub targets: Vec<Box>,
    pub points: usize,
    /// Anchor shapes per point, `A·A` (area-major, then ratio).
    pub shapes: usize,
}

impl Scenario {
    pub fn anchor(&self, point: usize, shape: usize) -> &Box {
        &self.anchors[point * self.shapes + shape]
    }

    /// Initial boxes and targets for every pair, in run order.
    pub fn pairs(&self) -> impl Iterator<Item = (Box, Box)> + '_ {
        self.anchors
            .iter()
            .flat_map(move |a| self.targets.iter().map(move |t| (*a, *t)))
    }

    pub fn pair_count(&self) -> usize {
        self.anchors.len() * self.targets.len()
    }
}

fn anchor_centers(cfg: &SimConfig) -> Vec<(f64, f64)> {
    let side = cfg.setup.region_side();
    let (ox, oy) = (TARGET_CENTER.0 - side / 2.0, TARGET_CENTER.1 - side / 2.0);
    match cfg.centers {
        CenterLayout::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..cfg.points)
                .map(|_| (ox + rng.gen::<f64>() * side, oy + rng.gen::<f64>() * side))
                .collect()
        }
        CenterLayout::Grid => {
            let k = (cfg.points as f64).sqrt().round() as usize;
            let cell = side / k as f64;
            (0..cfg.points)
                .map(|i| {
                    (
                        ox + (i % k) as f64 * cell + cell / 2.0,
                        oy + (i / k) as f64 * cell + cell / 2.0,
                    )
                })
                .collect()
        }
    }
}

pub fn generate_scenario(cfg: &SimConfig) -> Result<Scenario> {
    cfg.validate()?;
    let ratios = cfg.setup.ratios();
    let areas = cfg.setup.anchor_areas();
    let (tx, ty) = TARGET_CENTER;
    let targets = ratios
        .iter()
        .map(|&r| box_from_area_ratio(TARGET_AREA, r, tx, ty))
        .collect();
    let anchors = anchor_centers(cfg)
        .into_iter()
        .flat_map(|(cx, cy)| {
            areas.iter().flat_map(move |&area| {
                ratios
                    .iter()
                    .map(move |&r| box_from_area_ratio(area, r, cx, cy))
            })
        })
        .collect();
    Ok(Scenario {
        anchors,
        targets,
        points: cfg.points,
        shapes: areas.len() * ratios.len(),
    })
}

/// Step size at iteration `t` (1-based) of `total`.
pub fn lr_schedule(t: usize, total: usize) -> f64 {
    let first = (0.8 * total as f64).round() as usize;
    let second = (0.9 * total as f64).round() as usize;
    if t <= first {
        0.1
    } else if t <= second {
        0.01
    } else {
        0.001
    }
}

/// ℓ1 distance over `(cx, cy, w, h)`.
pub fn l1_error(b: &Box, target: &Box) -> f64 {
    (b.cx - target.cx).abs()
        + (b.cy - target.cy).abs()
        + (b.w - target.w).abs()
        + (b.h - target.h).abs()
}

/// One update of a single pair. Returns the new box and whether a side was
/// clamped.
pub fn step_pair(
    current: &Box,
    target: &Box,
    loss: &Objective,
    lr: f64,
    sign: UpdateSign,
    weight_scale: f64,
) -> (Box, bool) {
    let grad = loss.eval(current, target).grad;
    let step = match sign {
        UpdateSign::Descent => -lr * weight_scale,
        UpdateSign::Literal => lr * weight_scale,
    };
    let p = current.to_array();
    let mut next = std::array::from_fn::<f64, 4, _>(|i| p[i] + step * grad.0[i]);
    let mut clamped = false;
    for side in &mut next[2..] {
        if *side < MIN_SIDE || side.is_nan() {
            *side = MIN_SIDE;
            clamped = true;
        }
    }
    (Box::from_array(next), clamped)
}

/// Full IOU history, indexed `(t, point, shape, target)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IouTensor {
    pub iterations: usize,
    pub points: usize,
    pub shapes: usize,
    pub targets: usize,
    pub data: Vec<f64>,
}

impl IouTensor {
    fn pairs(&self) -> usize {
        self.points * self.shapes * self.targets
    }

    /// `t` is 1-based, matching the error series.
    pub fn get(&self, t: usize, point: usize, shape: usize, target: usize) -> f64 {
        let pair = (point * self.shapes + shape) * self.targets + target;
        self.data[(t - 1) * self.pairs() + pair]
    }

    pub fn slice(&self, t: usize) -> &[f64] {
        let n = self.pairs();
        &self.data[(t - 1) * n..t * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// Summed ℓ1 error at iterations `1..=T`.
    pub errors: Vec<f64>,
    /// Present in [`OutputMode::Full`].
    pub iou: Option<IouTensor>,
    pub iou_stats: Vec<BoxPlotStats>,
    pub final_iou: Vec<f64>,
    pub final_boxes: Vec<Box>,
    pub clamp_events: u64,
}

impl SimResult {
    pub fn final_error(&self) -> f64 {
        *self.errors.last().expect("at least one iteration")
    }

    pub fn final_mean_iou(&self) -> f64 {
        self.final_iou.iter().sum::<f64>() / self.final_iou.len() as f64
    }

    pub fn count_final_iou_above(&self, threshold: f64) -> usize {
        self.final_iou.iter().filter(|&&v| v > threshold).count()
    }
}

/// Step multiplier for batch-normalized Focal-EIOU. The per-pair gradient
/// already carries `Wᵢ`, so the multiplier is `n / Σ W`; with equal weights
/// this reduces to plain EIOU.
fn batch_weight_scale(cfg: &SimConfig, boxes: &[Box], targets: &[Box]) -> f64 {
    let Objective::FocalEiou(p) = cfg.loss else {
        return 1.0;
    };
    if cfg.focal_weighting == FocalWeighting::Pair {
        return 1.0;
    }
    let a = targets.len();
    let total: f64 = boxes
        .par_iter()
        .enumerate()
        .map(|(k, b)| focal::focal_eiou_weight(geometry::iou(b, &targets[k % a]), &p))
        .collect::<Vec<_>>()
        .iter()
        .sum();
    if total == 0.0 {
        return 1.0;
    }
    boxes.len() as f64 / total
}

pub fn run_simulation(cfg: &SimConfig) -> Result<SimResult> {
    let scenario = generate_scenario(cfg)?;
    run_scenario(cfg, &scenario)
}

pub fn run_scenario(cfg: &SimConfig, scenario: &Scenario) -> Result<SimResult> {
    cfg.validate()?;
    let keep_tensor = cfg.mode == OutputMode::Full;
    if keep_tensor {
        let needed = cfg.iou_tensor_bytes();
        if needed > cfg.memory_budget {
            return Err(Error::MemoryBudget {
                needed,
                budget: cfg.memory_budget,
            });
        }
    }
    let total = cfg.iterations;
    let a = scenario.targets.len();
    let targets = &scenario.targets;
    let mut boxes: Vec<Box> = scenario.pairs().map(|(anchor, _)| anchor).collect();
    let pair_count = boxes.len();

    let mut errors = Vec::with_capacity(total);
    let mut iou_stats = Vec::with_capacity(total);
    let mut tensor = keep_tensor.then(|| Vec::with_capacity(total * pair_count));
    let mut iou_now = vec![0.0; pair_count];
    let mut clamp_events = 0u64;

    for t in 1..=total {
        let lr = lr_schedule(t, total);
        let scale = batch_weight_scale(cfg, &boxes, targets);
        let records: Vec<(f64, f64, bool)> = boxes
            .par_iter_mut()
            .enumerate()
            .map(|(k, b)| {
                let target = &targets[k % a];
                let (next, clamped) = step_pair(b, target, &cfg.loss, lr, cfg.update_sign, scale);
                *b = next;
                (
                    l1_error(&next, target),
                    geometry::iou(&next, target),
                    clamped,
                )
            })
            .collect();

        // Sequential sum in pair order keeps E(t) independent of thread count.
        let mut e = 0.0;
        for (k, &(err, iou, clamped)) in records.iter().enumerate() {
            e += err;
            iou_now[k] = iou;
            clamp_events += u64::from(clamped);
        }
        errors.push(e);
        iou_stats.push(stats::box_plot_stats(&iou_now, t)?);
        if let Some(data) = tensor.as_mut() {
            data.extend_from_slice(&iou_now);
        }
    }

    Ok(SimResult {
        errors,
        iou: tensor.map(|data| IouTensor {
            iterations: total,
            points: scenario.points,
            shapes: scenario.shapes,
            targets: a,
            data,
        }),
        iou_stats,
        final_iou: iou_now,
        final_boxes: boxes,
        clamp_events,
    })
}

/// Trajectory of one pair in isolation: the box after each iteration.
pub fn simulate_pair(
    anchor: &Box,
    target: &Box,
    loss: &Objective,
    iterations: usize,
    sign: UpdateSign,
) -> Vec<Box> {
    let mut b = *anchor;
    (1..=iterations)
        .map(|t| {
            b = step_pair(&b, target, loss, lr_schedule(t, iterations), sign, 1.0).0;
            b
        })
        .collect()
}
