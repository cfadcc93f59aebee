//! Orthogonal projection of an observed flow onto the span of region bases.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{FieldId, RegionBases};
use crate::error::{Error, Result};
use crate::field::{check_dims, FlowField};

/// Singular values at or below this are treated as zero.
pub const DEFAULT_SV_THRESHOLD: f64 = 1e-5;

/// Identifies one column of the system matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnId {
    pub region: usize,
    pub basis_index: usize,
    pub field: FieldId,
}

/// `2HW x (B·K)` matrix whose columns are the flattened region basis fields,
/// region-major and in the basis' fixed order within each region.
#[derive(Debug, Clone)]
pub struct SystemMatrix {
    pub columns: DMatrix<f64>,
    pub column_map: Vec<ColumnId>,
    pub width: usize,
    pub height: usize,
}

impl SystemMatrix {
    pub fn rows(&self) -> usize {
        self.columns.nrows()
    }

    pub fn cols(&self) -> usize {
        self.columns.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub projected: FlowField,
    pub coefficients: Vec<f64>,
    pub rank: usize,
    pub residual: f64,
}

impl ProjectionResult {
    /// Residual divided by the observed flow norm (0 for zero flow).
    pub fn relative_residual(&self, observed: &FlowField) -> f64 {
        let n = observed.norm();
        if n == 0.0 {
            0.0
        } else {
            self.residual / n
        }
    }
}

pub fn assemble_system(regions: &RegionBases) -> Result<SystemMatrix> {
    let first = regions.per_region.first().ok_or(Error::EmptyRegions)?;
    let (w, h) = first.dims();
    for r in &regions.per_region {
        check_dims((w, h), r.dims())?;
        if r.ids != first.ids {
            return Err(Error::DimensionMismatch {
                expected: format!("{} fields per region", first.len()),
                actual: format!("{} fields", r.len()),
            });
        }
    }
    let rows = 2 * w * h;
    let ncols = first.len() * regions.k();
    let mut columns = DMatrix::zeros(rows, ncols);
    let mut column_map = Vec::with_capacity(ncols);
    for (i, stack) in regions.per_region.iter().enumerate() {
        for (j, (field, id)) in stack.fields.iter().zip(&stack.ids).enumerate() {
            let col = column_map.len();
            columns.column_mut(col).copy_from_slice(field.as_slice());
            column_map.push(ColumnId {
                region: i,
                basis_index: j,
                field: *id,
            });
        }
    }
    Ok(SystemMatrix {
        columns,
        column_map,
        width: w,
        height: h,
    })
}

/// Projects `flow` onto the column space of `system` via a thin SVD,
/// keeping left singular vectors with `σ > sv_threshold`.
pub fn project_flow(
    system: &SystemMatrix,
    flow: &FlowField,
    sv_threshold: f64,
) -> Result<ProjectionResult> {
    check_dims((system.width, system.height), flow.dims())?;
    if !(sv_threshold > 0.0) {
        return Err(Error::ParamOutOfRange(format!(
            "sv_threshold must be > 0, got {sv_threshold}"
        )));
    }
    if !flow.is_finite() {
        return Err(Error::NonFiniteInput("flow"));
    }
    let f = DVector::from_column_slice(flow.as_slice());
    let ncols = system.cols();
    if ncols == 0 {
        return Ok(ProjectionResult {
            projected: FlowField::zeros(system.width, system.height),
            coefficients: Vec::new(),
            rank: 0,
            residual: flow.norm(),
        });
    }
    let svd = system.columns.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");

    let mut projected = DVector::zeros(f.len());
    let mut coefficients = DVector::zeros(ncols);
    let mut rank = 0;
    for (k, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma > sv_threshold {
            rank += 1;
            let uk = u.column(k);
            let a = uk.dot(&f);
            projected.axpy(a, &uk, 1.0);
            let vk = v_t.row(k).transpose();
            coefficients.axpy(a / sigma, &vk, 1.0);
        }
    }
    let projected = FlowField::from_interleaved(
        system.width,
        system.height,
        projected.as_slice().to_vec(),
    )?;
    let residual = reconstruction_loss(flow, &projected)?;
    Ok(ProjectionResult {
        projected,
        coefficients: coefficients.as_slice().to_vec(),
        rank,
        residual,
    })
}

/// `‖F − F̂‖₂` over all `2HW` entries.
pub fn reconstruction_loss(observed: &FlowField, projected: &FlowField) -> Result<f64> {
    check_dims(observed.dims(), projected.dims())?;
    Ok(observed
        .as_slice()
        .iter()
        .zip(projected.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Loss divided by the pixel count, for scale-comparable logging.
pub fn per_pixel_loss(observed: &FlowField, projected: &FlowField) -> Result<f64> {
    Ok(reconstruction_loss(observed, projected)? / observed.pixel_count().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, restrict_basis, BasisFamily, BasisKind};
    use crate::camera::CameraModel;
    use crate::field::DisparityField;
    use crate::masks::SoftMaskStack;

    fn regions(w: usize, h: usize, k: usize) -> RegionBases {
        let c = CameraModel::centered(w, h, None).unwrap();
        let d = DisparityField::from_fn(w, h, |u, v| 0.2 + 0.03 * u as f64 + 0.01 * (v * v) as f64)
            .unwrap();
        let b = build_basis(&c, &d, BasisFamily::FocalFree, BasisKind::FocalFree8).unwrap();
        let logits: Vec<f64> = (0..w * h * k).map(|i| ((i * 7919) % 13) as f64 * 0.3).collect();
        let m = SoftMaskStack::from_logits(w, h, k, &logits).unwrap();
        restrict_basis(&b, &m).unwrap()
    }

    #[test]
    fn shapes() {
        let s = assemble_system(&regions(4, 4, 1)).unwrap();
        assert_eq!((s.rows(), s.cols()), (32, 8));
        let s = assemble_system(&regions(4, 4, 6)).unwrap();
        assert_eq!(s.cols(), 48);
        for (c, id) in s.column_map.iter().enumerate() {
            assert_eq!(id.region, c / 8);
            assert_eq!(id.basis_index, c % 8);
        }
    }

    #[test]
    fn empty_regions() {
        let r = RegionBases { per_region: vec![] };
        assert_eq!(assemble_system(&r).unwrap_err(), Error::EmptyRegions);
    }

    #[test]
    fn zero_mask_region_adds_no_rank() {
        let c = CameraModel::centered(4, 4, None).unwrap();
        let d = DisparityField::from_fn(4, 4, |u, v| 0.3 + 0.1 * (u * v) as f64).unwrap();
        let b = build_basis(&c, &d, BasisFamily::FocalFree, BasisKind::FocalFree8).unwrap();
        let mut w = Vec::new();
        for _ in 0..16 {
            w.extend_from_slice(&[1.0, 0.0]);
        }
        let m = SoftMaskStack::new(4, 4, 2, w).unwrap();
        let s = assemble_system(&restrict_basis(&b, &m).unwrap()).unwrap();
        for col in 8..16 {
            assert!(s.columns.column(col).iter().all(|x| *x == 0.0));
        }
        let f = FlowField::from_fn(4, 4, |u, v| [u as f64, v as f64 * 0.5]);
        let one = project_flow(&s, &f, DEFAULT_SV_THRESHOLD).unwrap();
        let s1 = assemble_system(&restrict_basis(&b, &SoftMaskStack::uniform(4, 4, 1).unwrap()).unwrap()).unwrap();
        let two = project_flow(&s1, &f, DEFAULT_SV_THRESHOLD).unwrap();
        assert_eq!(one.rank, two.rank);
    }

    #[test]
    fn member_of_span_is_reproduced() {
        let s = assemble_system(&regions(5, 4, 2)).unwrap();
        let col: Vec<f64> = s.columns.column(0).iter().map(|x| 3.0 * x).collect();
        let f = FlowField::from_interleaved(5, 4, col).unwrap();
        let p = project_flow(&s, &f, DEFAULT_SV_THRESHOLD).unwrap();
        assert!(p.residual < 1e-9 * f.norm());
    }

    #[test]
    fn zero_flow() {
        let s = assemble_system(&regions(4, 4, 2)).unwrap();
        let f = FlowField::zeros(4, 4);
        let p = project_flow(&s, &f, DEFAULT_SV_THRESHOLD).unwrap();
        assert_eq!(p.residual, 0.0);
        assert!(p.projected.as_slice().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn rejects_bad_threshold_and_dims() {
        let s = assemble_system(&regions(4, 4, 1)).unwrap();
        assert!(project_flow(&s, &FlowField::zeros(4, 4), 0.0).is_err());
        assert!(matches!(
            project_flow(&s, &FlowField::zeros(4, 5), 1e-5),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn loss_single_entry() {
        let a = FlowField::zeros(3, 2);
        let mut b = a.clone();
        assert_eq!(reconstruction_loss(&a, &b).unwrap(), 0.0);
        b.set(1, 1, [0.0, 3.0]);
        assert_eq!(reconstruction_loss(&a, &b).unwrap(), 3.0);
    }

    #[test]
    fn loss_matches_naive_double_loop() {
        let a = FlowField::from_fn(7, 5, |u, v| [(u as f64 * 1.3).sin(), (v as f64 * 0.7).cos()]);
        let b = FlowField::from_fn(7, 5, |u, v| [(u * v) as f64 * 0.01, -(u as f64) * 0.2]);
        let mut acc = 0.0;
        for v in 0..5 {
            for u in 0..7 {
                for c in 0..2 {
                    let e = a.at(u, v)[c] - b.at(u, v)[c];
                    acc += e * e;
                }
            }
        }
        let l = reconstruction_loss(&a, &b).unwrap();
        assert!((l - acc.sqrt()).abs() <= 1e-12 * l);
    }
}
