//! Flow visualization with the Middlebury color wheel.

use std::path::Path;

use crate::error::Result;
use crate::field::FlowField;

const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;
pub const WHEEL_SIZE: usize = RY + YG + GC + CB + BM + MR;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

pub fn color_wheel() -> Vec<[f64; 3]> {
    let ramp = |i: usize, n: usize| (255 * i / n) as f64;
    let mut wheel = Vec::with_capacity(WHEEL_SIZE);
    wheel.extend((0..RY).map(|i| [255.0, ramp(i, RY), 0.0]));
    wheel.extend((0..YG).map(|i| [255.0 - ramp(i, YG), 255.0, 0.0]));
    wheel.extend((0..GC).map(|i| [0.0, 255.0, ramp(i, GC)]));
    wheel.extend((0..CB).map(|i| [0.0, 255.0 - ramp(i, CB), 255.0]));
    wheel.extend((0..BM).map(|i| [ramp(i, BM), 0.0, 255.0]));
    wheel.extend((0..MR).map(|i| [255.0, 0.0, 255.0 - ramp(i, MR)]));
    wheel
}

fn encode(wheel: &[[f64; 3]], u: f64, v: f64) -> [u8; 3] {
    let rad = (u * u + v * v).sqrt();
    let a = (-v).atan2(-u) / std::f64::consts::PI;
    let fk = (a + 1.0) / 2.0 * (WHEEL_SIZE - 1) as f64;
    let k0 = fk.floor() as usize;
    let k1 = (k0 + 1) % WHEEL_SIZE;
    let f = fk - k0 as f64;
    let mut out = [0u8; 3];
    for (ch, o) in out.iter_mut().enumerate() {
        let c0 = wheel[k0][ch] / 255.0;
        let c1 = wheel[k1][ch] / 255.0;
        let mut col = (1.0 - f) * c0 + f * c1;
        if rad <= 1.0 {
            col = 1.0 - rad * (1.0 - col);
        } else {
            col *= 0.75;
        }
        *o = (255.0 * col) as u8;
    }
    out
}

/// Hue follows flow direction and saturation its magnitude divided by
/// `max_magnitude` (or the largest finite magnitude in the field). Zero flow
/// is white; non-finite vectors are black.
pub fn flow_to_color(flow: &FlowField, max_magnitude: Option<f64>) -> RgbImage {
    let (w, h) = flow.dims();
    let s = flow.as_slice();
    let max_rad = max_magnitude.unwrap_or_else(|| {
        s.chunks_exact(2)
            .filter(|c| c[0].is_finite() && c[1].is_finite())
            .map(|c| c[0].hypot(c[1]))
            .fold(0.0, f64::max)
    });
    let max_rad = if max_rad > 0.0 && max_rad.is_finite() { max_rad } else { 1.0 };
    let wheel = color_wheel();
    let mut data = Vec::with_capacity(3 * w * h);
    for c in s.chunks_exact(2) {
        if c[0].is_finite() && c[1].is_finite() {
            data.extend_from_slice(&encode(&wheel, c[0] / max_rad, c[1] / max_rad));
        } else {
            data.extend_from_slice(&[0, 0, 0]);
        }
    }
    RgbImage { width: w, height: h, data }
}

pub fn write_rgb_png(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    super::label_png::write_png_rgb(path.as_ref(), image.width, image.height, &image.data)
}
