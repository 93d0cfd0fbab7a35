//! Box-plot summaries of IOU distributions.
//!
//! Quartiles use linear interpolation between closest ranks (the "type 7"
//! definition): for sorted `x` of length `n`, `Q(p) = x[⌊h⌋] + (h − ⌊h⌋)
//! (x[⌊h⌋+1] − x[⌊h⌋])` with `h = (n − 1)p`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPlotStats {
    pub t: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// `q1 − 1.5·IQR`, raised to the smallest observation.
    pub lo_whisker: f64,
    /// `q3 + 1.5·IQR`, lowered to the largest observation.
    pub hi_whisker: f64,
    pub mean: f64,
}

/// Type-7 quantile of `values`, reordering the slice in place.
///
/// Uses selection rather than a full sort; the result is identical to
/// indexing into the sorted data.
pub fn quantile_in_place(values: &mut [f64], p: f64) -> f64 {
    let n = values.len();
    debug_assert!(n > 0);
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, x_lo, rest) = values.select_nth_unstable_by(lo, f64::total_cmp);
    let x_lo = *x_lo;
    if frac == 0.0 || rest.is_empty() {
        return x_lo;
    }
    let x_hi = rest.iter().copied().min_by(f64::total_cmp).unwrap_or(x_lo);
    x_lo + frac * (x_hi - x_lo)
}

/// Summarizes one iteration's IOU values.
pub fn box_plot_stats(iou_slice: &[f64], t: usize) -> Result<BoxPlotStats> {
    if iou_slice.is_empty() {
        return Err(Error::Empty("IOU slice"));
    }
    let mut buf = iou_slice.to_vec();
    let q1 = quantile_in_place(&mut buf, 0.25);
    let median = quantile_in_place(&mut buf, 0.5);
    let q3 = quantile_in_place(&mut buf, 0.75);
    let (min, max) = buf
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let iqr = q3 - q1;
    let mean = iou_slice.iter().sum::<f64>() / iou_slice.len() as f64;
    Ok(BoxPlotStats {
        t,
        q1,
        median,
        q3,
        lo_whisker: (q1 - 1.5 * iqr).max(min),
        hi_whisker: (q3 + 1.5 * iqr).min(max),
        mean,
    })
}

/// Reference quantile on a fully sorted copy, kept for cross-checks.
pub fn sorted_quantile(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let h = (s.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}
