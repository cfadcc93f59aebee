use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ari::fg_ari;
use super::hungarian::max_weight_matching;
use crate::error::Result;
use crate::field::{check_dims, LabelGrid};

/// Pairwise IoU between selected predicted and ground-truth segments.
struct IouTable {
    /// `iou[r * cols + c]` for predicted segment `r`, ground-truth segment `c`.
    iou: Vec<f64>,
    rows: usize,
    cols: usize,
}

fn iou_table(pred: &LabelGrid, gt: &LabelGrid, skip_pred: Option<u16>, skip_gt: Option<u16>) -> IouTable {
    let mut pred_area: BTreeMap<u16, u64> = BTreeMap::new();
    let mut gt_area: BTreeMap<u16, u64> = BTreeMap::new();
    let mut inter: BTreeMap<(u16, u16), u64> = BTreeMap::new();
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        *pred_area.entry(p).or_default() += 1;
        *gt_area.entry(g).or_default() += 1;
        *inter.entry((p, g)).or_default() += 1;
    }
    let pred_ids: Vec<u16> = pred_area.keys().copied().filter(|l| Some(*l) != skip_pred).collect();
    let gt_ids: Vec<u16> = gt_area.keys().copied().filter(|l| Some(*l) != skip_gt).collect();
    let mut iou = vec![0.0; pred_ids.len() * gt_ids.len()];
    for (r, p) in pred_ids.iter().enumerate() {
        for (c, g) in gt_ids.iter().enumerate() {
            let i = inter.get(&(*p, *g)).copied().unwrap_or(0) as f64;
            if i > 0.0 {
                let u = (pred_area[p] + gt_area[g]) as f64 - i;
                iou[r * gt_ids.len() + c] = i / u;
            }
        }
    }
    IouTable {
        iou,
        rows: pred_ids.len(),
        cols: gt_ids.len(),
    }
}

/// Sum of matched IoUs and the `max(#pred, #gt)` divisor.
pub fn hungarian_miou_parts(pred: &LabelGrid, gt: &LabelGrid) -> Result<(f64, usize)> {
    check_dims(gt.dims(), pred.dims())?;
    let t = iou_table(pred, gt, None, None);
    let (_, total) = max_weight_matching(&t.iou, t.rows, t.cols);
    Ok((total, t.rows.max(t.cols)))
}

/// Matched IoU summed over a one-to-one assignment of all segments, divided
/// by the larger of the two segment counts. Empty grids score 0.
pub fn hungarian_miou(pred: &LabelGrid, gt: &LabelGrid) -> Result<f64> {
    let (total, count) = hungarian_miou_parts(pred, gt)?;
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Hungarian mIoU from a precomputed `rows x cols` IoU table.
pub fn miou_from_table(iou: &[f64], rows: usize, cols: usize) -> f64 {
    let count = rows.max(cols);
    if count == 0 {
        return 0.0;
    }
    max_weight_matching(iou, rows, cols).1 / count as f64
}

/// Mean IoU over ground-truth objects (background excluded on both sides)
/// after a per-frame Hungarian matching. Unmatched objects score 0.
pub fn jaccard_j(pred: &LabelGrid, gt: &LabelGrid) -> Result<f64> {
    check_dims(gt.dims(), pred.dims())?;
    let t = iou_table(pred, gt, Some(pred.background_label), Some(gt.background_label));
    if t.cols == 0 {
        return Ok(if t.rows == 0 { 1.0 } else { 0.0 });
    }
    let (_, total) = max_weight_matching(&t.iou, t.rows, t.cols);
    Ok(total / t.cols as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    pub fg_ari: Option<f64>,
    pub miou: f64,
    pub j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    /// Mean FG-ARI over frames with non-empty foreground.
    pub fg_ari: Option<f64>,
    /// Mean of per-frame Hungarian mIoU.
    pub miou: f64,
    /// Matched IoU summed over all frames divided by the summed divisors.
    pub miou_pooled: f64,
    pub j_mean: f64,
    /// Boundary F-measure is not computed.
    pub f_measure: String,
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_frame: Vec<FrameScores>,
}

pub const SEG_CSV_HEADER: &str = "fg_ari,miou,miou_pooled,j_mean,f_measure,frames";

impl SegReport {
    pub fn from_frames(frames: &[(LabelGrid, LabelGrid)], keep_per_frame: bool) -> Result<Self> {
        let mut per_frame = Vec::with_capacity(frames.len());
        let (mut matched, mut divisor) = (0.0, 0usize);
        for (pred, gt) in frames {
            let ari = match fg_ari(pred, gt) {
                Ok(a) => Some(a),
                Err(crate::Error::EmptyForeground) => None,
                Err(e) => return Err(e),
            };
            let (m, c) = hungarian_miou_parts(pred, gt)?;
            matched += m;
            divisor += c;
            per_frame.push(FrameScores {
                fg_ari: ari,
                miou: if c == 0 { 0.0 } else { m / c as f64 },
                j: jaccard_j(pred, gt)?,
            });
        }
        let aris: Vec<f64> = per_frame.iter().filter_map(|f| f.fg_ari).collect();
        let mean = |xs: &mut dyn Iterator<Item = f64>, n: usize| {
            if n == 0 {
                0.0
            } else {
                xs.sum::<f64>() / n as f64
            }
        };
        let n = per_frame.len();
        Ok(Self {
            fg_ari: (!aris.is_empty()).then(|| aris.iter().sum::<f64>() / aris.len() as f64),
            miou: mean(&mut per_frame.iter().map(|f| f.miou), n),
            miou_pooled: if divisor == 0 { 0.0 } else { matched / divisor as f64 },
            j_mean: mean(&mut per_frame.iter().map(|f| f.j), n),
            f_measure: "not computed".into(),
            frames: n,
            per_frame: if keep_per_frame { per_frame } else { Vec::new() },
        })
    }

    pub fn csv_row(&self) -> String {
        let ari = self.fg_ari.map(|a| format!("{a:.16e}")).unwrap_or_default();
        format!(
            "{ari},{:.16e},{:.16e},{:.16e},{},{}",
            self.miou, self.miou_pooled, self.j_mean, self.f_measure, self.frames
        )
    }
}
