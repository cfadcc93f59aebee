//! Dense per-pixel containers.
//!
//! All grids are stored row-major: pixel `(u, v)` (column, row) lives at
//! index `v * width + u`. Two-channel flow is stored channel-last, so the
//! flattened `2HW` vector is `[u'(0,0), v'(0,0), u'(1,0), v'(1,0), ...]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single-channel row-major grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", width * height),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, u: usize, v: usize) -> &T {
        &self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: T) {
        self.data[v * self.width + u] = value;
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

/// Two-channel per-pixel motion `(u', v')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; 2 * width * height],
        }
    }

    /// Builds a field from an interleaved `(u', v')` buffer of length `2HW`.
    pub fn from_interleaved(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", 2 * width * height),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 2],
    ) -> Self {
        let mut data = Vec::with_capacity(2 * width * height);
        for v in 0..height {
            for u in 0..width {
                data.extend_from_slice(&f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
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

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn at(&self, u: usize, v: usize) -> [f64; 2] {
        let i = 2 * (v * self.width + u);
        [self.data[i], self.data[i + 1]]
    }

    pub fn set(&mut self, u: usize, v: usize, value: [f64; 2]) {
        let i = 2 * (v * self.width + u);
        self.data[i] = value[0];
        self.data[i + 1] = value[1];
    }

    /// The flattened `2HW` vector in the fixed channel-last order.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|x| s * x).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Per-pixel inverse depth (1/m). Finite and non-negative everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityField(Grid<f64>);

impl DisparityField {
    pub fn new(grid: Grid<f64>) -> Result<Self> {
        if grid.as_slice().iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::NonFiniteInput("disparity (must be finite and >= 0)"));
        }
        Ok(Self(grid))
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(Grid::filled(width, height, value))
    }

    pub fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::new(Grid::from_fn(width, height, f))
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        *self.0.get(u, v)
    }

    /// Depth in meters; zero disparity maps to `+inf`.
    pub fn to_depth(&self) -> Grid<f64> {
        self.0.map(|d| if *d > 0.0 { 1.0 / d } else { f64::INFINITY })
    }

    pub fn scaled(&self, gamma: f64) -> Result<Self> {
        Self::new(self.0.map(|d| d * gamma))
    }
}

/// Integer segmentation with a designated background id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelGrid {
    pub labels: Grid<u16>,
    pub background_label: u16,
}

impl LabelGrid {
    pub fn new(labels: Grid<u16>, background_label: u16) -> Self {
        Self {
            labels,
            background_label,
        }
    }

    pub fn from_vec(width: usize, height: usize, labels: Vec<u16>) -> Result<Self> {
        Ok(Self::new(Grid::from_vec(width, height, labels)?, 0))
    }

    pub fn with_background(mut self, background_label: u16) -> Self {
        self.background_label = background_label;
        self
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dims()
    }

    pub fn as_slice(&self) -> &[u16] {
        self.labels.as_slice()
    }

    /// Distinct labels present, ascending.
    pub fn distinct(&self) -> Vec<u16> {
        let mut seen: Vec<u16> = self.labels.as_slice().to_vec();
        seen.sort_unstable();
        seen.dedup();
        seen
    }
}

pub(crate) fn check_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::dims(expected, actual));
    }
    Ok(())
}
