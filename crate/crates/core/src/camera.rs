use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera over a `width x height` pixel grid.
///
/// Pixel `(u, v)` is (column, row) at integer pixel centers. Centered
/// coordinates are `ū = u − c_x` and `v̄ = v − c_y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    /// `(c_x, c_y)` in pixels.
    pub principal_point: (f64, f64),
    /// `(f_x, f_y)` in pixels, when known.
    #[serde(default)]
    pub focal: Option<(f64, f64)>,
}

impl CameraModel {
    pub fn new(
        width: usize,
        height: usize,
        principal_point: (f64, f64),
        focal: Option<(f64, f64)>,
    ) -> Result<Self> {
        let cam = Self {
            width,
            height,
            principal_point,
            focal,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera with the principal point at the image center `((W−1)/2, (H−1)/2)`.
    pub fn centered(width: usize, height: usize, focal: Option<(f64, f64)>) -> Result<Self> {
        Self::new(
            width,
            height,
            ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
            focal,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::ParamOutOfRange(format!(
                "camera must be at least 2x2, got {}x{}",
                self.width, self.height
            )));
        }
        let (cx, cy) = self.principal_point;
        if !cx.is_finite() || !cy.is_finite() {
            return Err(Error::NonFiniteInput("principal point"));
        }
        if let Some((fx, fy)) = self.focal {
            if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
                return Err(Error::ParamOutOfRange(format!(
                    "focal lengths must be positive, got ({fx}, {fy})"
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn focal_or_err(&self) -> Result<(f64, f64)> {
        self.focal.ok_or(Error::MissingFocal)
    }

    /// `(ū, v̄)` for pixel `(u, v)`.
    #[inline]
    pub fn centered_coords(&self, u: usize, v: usize) -> (f64, f64) {
        (
            u as f64 - self.principal_point.0,
            v as f64 - self.principal_point.1,
        )
    }

    pub fn without_focal(&self) -> Self {
        Self {
            focal: None,
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_principal_point() {
        let cam = CameraModel::centered(5, 4, None).unwrap();
        assert_eq!(cam.principal_point, (2.0, 1.5));
        assert_eq!(cam.centered_coords(2, 0), (0.0, -1.5));
    }

    #[test]
    fn rejects_tiny_images() {
        assert!(matches!(
            CameraModel::centered(1, 4, None),
            Err(Error::ParamOutOfRange(_))
        ));
    }

    #[test]
    fn focal_required_when_asked() {
        let cam = CameraModel::centered(4, 4, None).unwrap();
        assert_eq!(cam.focal_or_err(), Err(Error::MissingFocal));
    }
}
