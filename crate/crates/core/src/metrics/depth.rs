//! Standard monocular depth error metrics with optional median scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{check_dims, Grid};

/// Lower clamp applied to both prediction and ground truth, in meters.
pub const DEPTH_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum PredictionKind {
    #[default]
    Depth,
    /// Inverse depth; converted with `1/d` (zero maps to `+inf`).
    Disparity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub log10: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_pixels_evaluated: usize,
    pub scale_applied: f64,
}

pub const DEPTH_CSV_HEADER: &str =
    "abs_rel,sq_rel,rmse,rmse_log,log10,delta1,delta2,delta3,n_pixels_evaluated,scale_applied";

impl DepthReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}",
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.log10,
            self.delta1,
            self.delta2,
            self.delta3,
            self.n_pixels_evaluated,
            self.scale_applied
        )
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Evaluates `pred` against metric `gt_depth` on pixels where the ground
/// truth is finite and positive.
///
/// With `median_scale`, predictions are multiplied by
/// `median(gt) / median(pred)` over valid pixels. Both sides are then
/// clamped to `[DEPTH_EPSILON, cap_m]`.
pub fn depth_metrics(
    pred: &Grid<f64>,
    kind: PredictionKind,
    gt_depth: &Grid<f64>,
    cap_m: f64,
    median_scale: bool,
) -> Result<DepthReport> {
    check_dims(gt_depth.dims(), pred.dims())?;
    if !(cap_m > DEPTH_EPSILON) {
        return Err(Error::ParamOutOfRange(format!(
            "depth cap must exceed {DEPTH_EPSILON} m, got {cap_m}"
        )));
    }
    let mut pairs: Vec<(f64, f64)> = pred
        .as_slice()
        .iter()
        .zip(gt_depth.as_slice())
        .filter(|(p, g)| g.is_finite() && **g > 0.0 && !p.is_nan())
        .map(|(&p, &g)| {
            let depth = match kind {
                PredictionKind::Depth => p,
                PredictionKind::Disparity if p > 0.0 => 1.0 / p,
                PredictionKind::Disparity => f64::INFINITY,
            };
            (depth, g)
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyValidMask);
    }
    let scale = if median_scale {
        let mut p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
        let mut g: Vec<f64> = pairs.iter().map(|x| x.1).collect();
        let mp = median(&mut p);
        let mg = median(&mut g);
        if mp > 0.0 && mp.is_finite() {
            mg / mp
        } else {
            1.0
        }
    } else {
        1.0
    };
    for (p, g) in pairs.iter_mut() {
        *p = (*p * scale).clamp(DEPTH_EPSILON, cap_m);
        *g = g.clamp(DEPTH_EPSILON, cap_m);
    }

    let n = pairs.len() as f64;
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log, mut log10) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut d1, mut d2, mut d3) = (0usize, 0usize, 0usize);
    for &(p, g) in &pairs {
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        let dl = p.ln() - g.ln();
        sq_log += dl * dl;
        log10 += (p.log10() - g.log10()).abs();
        let ratio = (p / g).max(g / p);
        if ratio < 1.25 {
            d1 += 1;
        }
        if ratio < 1.25 * 1.25 {
            d2 += 1;
        }
        if ratio < 1.25 * 1.25 * 1.25 {
            d3 += 1;
        }
    }
    Ok(DepthReport {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (sq / n).sqrt(),
        rmse_log: (sq_log / n).sqrt(),
        log10: log10 / n,
        delta1: d1 as f64 / n,
        delta2: d2 as f64 / n,
        delta3: d3 as f64 / n,
        n_pixels_evaluated: pairs.len(),
        scale_applied: scale,
    })
}
