//! Adjusted Rand Index restricted to ground-truth foreground.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::field::{check_dims, LabelGrid};

#[inline]
fn pairs(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// ARI between two labelings of the same items, from the contingency table.
///
/// When the chance-corrected denominator is zero (e.g. both sides a single
/// cluster), the result is 1.0 for identical partitions and 0.0 otherwise.
pub fn adjusted_rand_index(pred: &[u16], gt: &[u16]) -> f64 {
    assert_eq!(pred.len(), gt.len());
    let n = pred.len() as u64;
    let mut table: HashMap<(u16, u16), u64> = HashMap::new();
    let mut rows: HashMap<u16, u64> = HashMap::new();
    let mut cols: HashMap<u16, u64> = HashMap::new();
    for (&p, &g) in pred.iter().zip(gt) {
        *table.entry((p, g)).or_default() += 1;
        *rows.entry(p).or_default() += 1;
        *cols.entry(g).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| pairs(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| pairs(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| pairs(c)).sum();
    let total = pairs(n);
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom == 0.0 {
        // identical partitions have one table cell per row and per column
        let identical = table.len() == rows.len() && table.len() == cols.len();
        return if identical { 1.0 } else { 0.0 };
    }
    (index - expected) / denom
}

/// ARI over pixels where `gt` is not its background label.
pub fn fg_ari(pred: &LabelGrid, gt: &LabelGrid) -> Result<f64> {
    check_dims(gt.dims(), pred.dims())?;
    let (p, g): (Vec<u16>, Vec<u16>) = pred
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .filter(|(_, &g)| g != gt.background_label)
        .map(|(&p, &g)| (p, g))
        .unzip();
    if g.is_empty() {
        return Err(Error::EmptyForeground);
    }
    Ok(adjusted_rand_index(&p, &g))
}
