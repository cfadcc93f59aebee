use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Grid, LabelGrid};

/// Tolerance on the per-pixel partition-of-unity constraint.
pub const MASK_SUM_TOLERANCE: f64 = 1e-6;

/// `K` soft region weights per pixel, summing to one.
///
/// Weights are stored pixel-major: region `i` at pixel index `p` is
/// `weights[p * K + i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftMaskStack {
    width: usize,
    height: usize,
    k: usize,
    weights: Vec<f64>,
}

impl SoftMaskStack {
    pub fn new(width: usize, height: usize, k: usize, weights: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::ParamOutOfRange("mask stack needs K >= 1".into()));
        }
        if weights.len() != width * height * k {
            return Err(Error::DimensionMismatch {
                expected: format!("{} weights", width * height * k),
                actual: format!("{} weights", weights.len()),
            });
        }
        for px in weights.chunks_exact(k) {
            if px.iter().any(|w| !w.is_finite() || *w < 0.0 || *w > 1.0) {
                return Err(Error::ParamOutOfRange("mask weight outside [0, 1]".into()));
            }
            let s: f64 = px.iter().sum();
            if (s - 1.0).abs() > MASK_SUM_TOLERANCE {
                return Err(Error::ParamOutOfRange(format!(
                    "mask weights sum to {s}, expected 1"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            k,
            weights,
        })
    }

    /// Builds a stack without the partition-of-unity check. Used for the
    /// linearity property of region restriction, where scaled masks are
    /// intentionally not normalized.
    pub fn new_unchecked(width: usize, height: usize, k: usize, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), width * height * k);
        Self {
            width,
            height,
            k,
            weights,
        }
    }

    pub fn uniform(width: usize, height: usize, k: usize) -> Result<Self> {
        Self::new(width, height, k, vec![1.0 / k as f64; width * height * k])
    }

    /// One-hot masks from hard labels; every label must be `< k`.
    pub fn from_labels(labels: &Grid<u16>, k: usize) -> Result<Self> {
        let mut weights = vec![0.0; labels.len() * k];
        for (p, &l) in labels.as_slice().iter().enumerate() {
            let l = l as usize;
            if l >= k {
                return Err(Error::ParamOutOfRange(format!(
                    "label {l} does not fit in K = {k} regions"
                )));
            }
            weights[p * k + l] = 1.0;
        }
        Self::new(labels.width(), labels.height(), k, weights)
    }

    /// Channel-wise softmax of `K`-channel logits (pixel-major layout).
    pub fn from_logits(width: usize, height: usize, k: usize, logits: &[f64]) -> Result<Self> {
        if logits.len() != width * height * k {
            return Err(Error::DimensionMismatch {
                expected: format!("{} logits", width * height * k),
                actual: format!("{} logits", logits.len()),
            });
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput("mask logits"));
        }
        let mut weights = vec![0.0; logits.len()];
        for (out, z) in weights.chunks_exact_mut(k).zip(logits.chunks_exact(k)) {
            softmax_into(z, out);
        }
        Ok(Self {
            width,
            height,
            k,
            weights,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn weight(&self, pixel: usize, region: usize) -> f64 {
        self.weights[pixel * self.k + region]
    }

    pub fn channel(&self, region: usize) -> Vec<f64> {
        self.weights
            .chunks_exact(self.k)
            .map(|px| px[region])
            .collect()
    }

    /// Per-pixel argmax; ties resolve to the lowest region index.
    pub fn hard_labels(&self) -> LabelGrid {
        let labels: Vec<u16> = self
            .weights
            .chunks_exact(self.k)
            .map(|px| {
                let mut best = 0;
                for (i, w) in px.iter().enumerate() {
                    if *w > px[best] {
                        best = i;
                    }
                }
                best as u16
            })
            .collect();
        LabelGrid::new(
            Grid::from_vec(self.width, self.height, labels).expect("sized by construction"),
            0,
        )
    }

    /// Reorders channels so output channel `i` is input channel `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.k);
        let mut weights = vec![0.0; self.weights.len()];
        for (out, px) in weights
            .chunks_exact_mut(self.k)
            .zip(self.weights.chunks_exact(self.k))
        {
            for (i, &src) in perm.iter().enumerate() {
                out[i] = px[src];
            }
        }
        Self { weights, ..*self }
    }
}

/// Numerically stable softmax of one pixel's logits.
#[inline]
pub fn softmax_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(z) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}
