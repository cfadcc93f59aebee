//! Basis flow fields spanning the instantaneous flow of one rigid motion.
//!
//! Two families are provided. The intrinsic family has six fields and needs
//! the focal lengths; the focal-free family has eight and only assumes
//! `f_x = f_y`. Both use the same sign convention for every field:
//!
//! | field | value at `(ū, v̄)` with disparity `d` |
//! |-------|--------------------------------------|
//! | `Tx`  | `(f_x d, 0)` (focal-free: `(d, 0)`)   |
//! | `Ty`  | `(0, f_y d)` (focal-free: `(0, d)`)   |
//! | `Tz`  | `(−ū d, −v̄ d)`                        |
//! | `Rx`  | `(ū v̄ / f_y, f_y + v̄² / f_y)`          |
//! | `Ry`  | `(f_x + ū² / f_x, ū v̄ / f_x)`          |
//! | `Rz`  | `(f_x v̄ / f_y, −f_y ū / f_x)` (focal-free: `(v̄, −ū)`) |
//! | `R1x` | `(0, 1)`                              |
//! | `R2x` | `(ū v̄, v̄²)`                           |
//! | `R1y` | `(1, 0)`                              |
//! | `R2y` | `(ū², ū v̄)`                           |
//!
//! The rigid-motion generator writes flow with the opposite sign on `Tx`,
//! `Ty`, `Tz` and `Ry`; [`MOTION_TO_BASIS_SIGNS`] records that mapping so
//! spans and coefficients stay consistent between the two.

use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::field::{check_dims, DisparityField, FlowField};
use crate::masks::SoftMaskStack;

/// Sign of each intrinsic field `(Tx, Ty, Tz, Rx, Ry, Rz)` when flow is
/// written as `Σ sign_j · motion_j · b_j` for the motion vector
/// `(v₁, v₂, v₃, ω₁, ω₂, ω₃)`.
pub const MOTION_TO_BASIS_SIGNS: [f64; 6] = [-1.0, -1.0, -1.0, 1.0, -1.0, 1.0];

/// Frobenius norm of each normalized translational template.
pub const TRANSLATION_TEMPLATE_NORM: f64 = 2.0;
/// Frobenius norm of each normalized rotational field.
pub const ROTATION_FIELD_NORM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FieldId {
    Tx,
    Ty,
    Tz,
    Rx,
    Ry,
    Rz,
    R1x,
    R2x,
    R1y,
    R2y,
}

impl FieldId {
    pub fn is_translational(self) -> bool {
        matches!(self, FieldId::Tx | FieldId::Ty | FieldId::Tz)
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldId::Tx => "b_Tx",
            FieldId::Ty => "b_Ty",
            FieldId::Tz => "b_Tz",
            FieldId::Rx => "b_Rx",
            FieldId::Ry => "b_Ry",
            FieldId::Rz => "b_Rz",
            FieldId::R1x => "b_R1x",
            FieldId::R2x => "b_R2x",
            FieldId::R1y => "b_R1y",
            FieldId::R2y => "b_R2y",
        }
    }
}

/// Which parameterization of the rotational fields is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum BasisFamily {
    /// Six fields, requires focal lengths.
    Intrinsic,
    /// Eight fields, independent of the focal lengths.
    #[default]
    FocalFree,
}

impl BasisFamily {
    pub fn full_ids(self) -> &'static [FieldId] {
        use FieldId::*;
        match self {
            BasisFamily::Intrinsic => &[Tx, Ty, Tz, Rx, Ry, Rz],
            BasisFamily::FocalFree => &[Tx, Ty, Tz, R1x, R2x, R1y, R2y, Rz],
        }
    }
}

/// Tag on a basis stack. The subset kinds keep the parent family's order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum BasisKind {
    Intrinsic6,
    FocalFree8,
    TranslationOnly,
    RotationOnly,
}

impl BasisKind {
    /// Field ids of this kind within `family`, in the fixed order.
    pub fn ids(self, family: BasisFamily) -> Vec<FieldId> {
        let full = match self {
            BasisKind::Intrinsic6 => BasisFamily::Intrinsic.full_ids(),
            BasisKind::FocalFree8 => BasisFamily::FocalFree.full_ids(),
            _ => family.full_ids(),
        };
        full.iter()
            .copied()
            .filter(|id| match self {
                BasisKind::TranslationOnly => id.is_translational(),
                BasisKind::RotationOnly => !id.is_translational(),
                _ => true,
            })
            .collect()
    }

    /// The family implied by a full kind, or `fallback` for subsets.
    pub fn family_or(self, fallback: BasisFamily) -> BasisFamily {
        match self {
            BasisKind::Intrinsic6 => BasisFamily::Intrinsic,
            BasisKind::FocalFree8 => BasisFamily::FocalFree,
            _ => fallback,
        }
    }

    pub fn uses_disparity(self) -> bool {
        !matches!(self, BasisKind::RotationOnly)
    }
}

impl std::str::FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intrinsic6" | "intrinsic" => Ok(BasisKind::Intrinsic6),
            "focalFree8" | "focal-free8" | "focalfree8" | "full" => Ok(BasisKind::FocalFree8),
            "translationOnly" | "only-t" | "onlyT" => Ok(BasisKind::TranslationOnly),
            "rotationOnly" | "only-r" | "onlyR" => Ok(BasisKind::RotationOnly),
            other => Err(Error::ParamOutOfRange(format!("unknown basis kind {other:?}"))),
        }
    }
}

/// An ordered list of basis flow fields sharing one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisStack {
    pub kind: BasisKind,
    pub family: BasisFamily,
    pub camera: CameraModel,
    pub ids: Vec<FieldId>,
    pub fields: Vec<FlowField>,
    /// Factor applied to each field relative to its raw definition.
    pub scales: Vec<f64>,
    pub normalized: bool,
    /// Set by normalization when a field was identically zero.
    pub has_zero_field: bool,
}

impl BasisStack {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.camera.dims()
    }

    pub fn field(&self, id: FieldId) -> Option<&FlowField> {
        self.ids.iter().position(|i| *i == id).map(|j| &self.fields[j])
    }

    /// Keeps only the fields of `kind`, preserving order.
    pub fn subset(&self, kind: BasisKind) -> Result<Self> {
        let wanted = kind.ids(self.family);
        let mut out = Self {
            kind,
            ids: Vec::new(),
            fields: Vec::new(),
            scales: Vec::new(),
            ..self.clone()
        };
        for id in wanted {
            let j = self.ids.iter().position(|i| *i == id).ok_or_else(|| {
                Error::ParamOutOfRange(format!(
                    "{} not present in a {:?} stack",
                    id.name(),
                    self.kind
                ))
            })?;
            out.ids.push(id);
            out.fields.push(self.fields[j].clone());
            out.scales.push(self.scales[j]);
        }
        Ok(out)
    }
}

/// Disparity-free factor of a translational field at `(ū, v̄)`.
#[inline]
pub fn translational_template(
    id: FieldId,
    family: BasisFamily,
    focal: Option<(f64, f64)>,
    ub: f64,
    vb: f64,
) -> [f64; 2] {
    let (fx, fy) = match family {
        BasisFamily::Intrinsic => focal.unwrap_or((1.0, 1.0)),
        BasisFamily::FocalFree => (1.0, 1.0),
    };
    match id {
        FieldId::Tx => [fx, 0.0],
        FieldId::Ty => [0.0, fy],
        FieldId::Tz => [-ub, -vb],
        _ => [0.0, 0.0],
    }
}

/// Value of a rotational field at `(ū, v̄)`.
#[inline]
pub fn rotational_value(id: FieldId, family: BasisFamily, focal: Option<(f64, f64)>, ub: f64, vb: f64) -> [f64; 2] {
    match (id, family) {
        (FieldId::Rz, BasisFamily::FocalFree) => [vb, -ub],
        (FieldId::Rx | FieldId::Ry | FieldId::Rz, _) => {
            let (fx, fy) = focal.unwrap_or((1.0, 1.0));
            match id {
                FieldId::Rx => [ub * vb / fy, fy + vb * vb / fy],
                FieldId::Ry => [fx + ub * ub / fx, ub * vb / fx],
                _ => [fx * vb / fy, -fy * ub / fx],
            }
        }
        (FieldId::R1x, _) => [0.0, 1.0],
        (FieldId::R2x, _) => [ub * vb, vb * vb],
        (FieldId::R1y, _) => [1.0, 0.0],
        (FieldId::R2y, _) => [ub * ub, ub * vb],
        _ => [0.0, 0.0],
    }
}

/// Raw (unnormalized) value of field `id` at pixel `(u, v)`.
#[inline]
pub fn raw_field_value(
    id: FieldId,
    family: BasisFamily,
    camera: &CameraModel,
    u: usize,
    v: usize,
    d: f64,
) -> [f64; 2] {
    let (ub, vb) = camera.centered_coords(u, v);
    if id.is_translational() {
        let t = translational_template(id, family, camera.focal, ub, vb);
        [d * t[0], d * t[1]]
    } else {
        rotational_value(id, family, camera.focal, ub, vb)
    }
}

fn build(
    camera: &CameraModel,
    disparity: &DisparityField,
    family: BasisFamily,
    kind: BasisKind,
) -> Result<BasisStack> {
    camera.validate()?;
    check_dims(camera.dims(), disparity.dims())?;
    let ids = family.full_ids().to_vec();
    let fields = ids
        .iter()
        .map(|&id| {
            FlowField::from_fn(camera.width, camera.height, |u, v| {
                raw_field_value(id, family, camera, u, v, disparity.at(u, v))
            })
        })
        .collect();
    Ok(BasisStack {
        kind,
        family,
        camera: *camera,
        scales: vec![1.0; ids.len()],
        ids,
        fields,
        normalized: false,
        has_zero_field: false,
    })
}

/// The six intrinsic fields `(Tx, Ty, Tz, Rx, Ry, Rz)`, unnormalized.
pub fn intrinsic_basis(camera: &CameraModel, disparity: &DisparityField) -> Result<BasisStack> {
    camera.focal_or_err()?;
    build(camera, disparity, BasisFamily::Intrinsic, BasisKind::Intrinsic6)
}

/// The eight focal-free fields `(Tx, Ty, Tz, R1x, R2x, R1y, R2y, Rz)`, unnormalized.
pub fn focal_free_basis(camera: &CameraModel, disparity: &DisparityField) -> Result<BasisStack> {
    build(camera, disparity, BasisFamily::FocalFree, BasisKind::FocalFree8)
}

/// Target scale of each field relative to its raw definition, computed from
/// whole-image Frobenius norms. `None` when the reference norm is zero.
pub fn normalization_scales(
    camera: &CameraModel,
    family: BasisFamily,
    ids: &[FieldId],
) -> Vec<Option<f64>> {
    ids.iter()
        .map(|&id| {
            let mut sq = 0.0;
            for v in 0..camera.height {
                for u in 0..camera.width {
                    let (ub, vb) = camera.centered_coords(u, v);
                    let val = if id.is_translational() {
                        translational_template(id, family, camera.focal, ub, vb)
                    } else {
                        rotational_value(id, family, camera.focal, ub, vb)
                    };
                    sq += val[0] * val[0] + val[1] * val[1];
                }
            }
            let target = if id.is_translational() {
                TRANSLATION_TEMPLATE_NORM
            } else {
                ROTATION_FIELD_NORM
            };
            (sq > 0.0).then(|| target / sq.sqrt())
        })
        .collect()
}

/// Rescales translational fields so their disparity-free template has norm 2
/// and rotational fields to norm 1. Idempotent.
///
/// `disparity` must be the field the stack was built from; it is used only
/// to validate shape and detect the degenerate `d ≡ 0` case.
pub fn normalize_basis(basis: &BasisStack, disparity: &DisparityField) -> Result<BasisStack> {
    check_dims(basis.dims(), disparity.dims())?;
    let targets = normalization_scales(&basis.camera, basis.family, &basis.ids);
    let mut out = basis.clone();
    out.has_zero_field = false;
    for (j, target) in targets.into_iter().enumerate() {
        let zero = out.fields[j].as_slice().iter().all(|x| *x == 0.0);
        if zero {
            out.has_zero_field = true;
        }
        if let Some(target) = target {
            let ratio = target / out.scales[j];
            if ratio != 1.0 {
                out.fields[j].as_mut_slice().iter_mut().for_each(|x| *x *= ratio);
            }
            out.scales[j] = target;
        }
    }
    out.normalized = true;
    Ok(out)
}

/// Builds the normalized stack of `kind` in one call.
pub fn build_basis(
    camera: &CameraModel,
    disparity: &DisparityField,
    family: BasisFamily,
    kind: BasisKind,
) -> Result<BasisStack> {
    let family = kind.family_or(family);
    let full = match family {
        BasisFamily::Intrinsic => intrinsic_basis(camera, disparity)?,
        BasisFamily::FocalFree => focal_free_basis(camera, disparity)?,
    };
    let normalized = normalize_basis(&full, disparity)?;
    match kind {
        BasisKind::TranslationOnly | BasisKind::RotationOnly => normalized.subset(kind),
        _ => Ok(normalized),
    }
}

/// Per-region basis copies `m_i ⊙ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionBases {
    pub per_region: Vec<BasisStack>,
}

impl RegionBases {
    pub fn k(&self) -> usize {
        self.per_region.len()
    }
}

/// Multiplies every field by each region's mask, pixel-wise on both channels.
pub fn restrict_basis(basis: &BasisStack, masks: &SoftMaskStack) -> Result<RegionBases> {
    check_dims(basis.dims(), masks.dims())?;
    let per_region = (0..masks.k())
        .map(|i| {
            let mut stack = basis.clone();
            for field in stack.fields.iter_mut() {
                for (p, px) in field.as_mut_slice().chunks_exact_mut(2).enumerate() {
                    let m = masks.weight(p, i);
                    px[0] *= m;
                    px[1] *= m;
                }
            }
            stack
        })
        .collect();
    Ok(RegionBases { per_region })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(w: usize, h: usize, f: Option<f64>) -> CameraModel {
        CameraModel::centered(w, h, f.map(|f| (f, f))).unwrap()
    }

    /// Camera whose pixel (2, 3) sits at centered coordinates `(ub, vb)`.
    fn offset_cam(ub: f64, vb: f64, f: Option<(f64, f64)>) -> CameraModel {
        CameraModel::new(6, 6, (2.0 - ub, 3.0 - vb), f).unwrap()
    }

    #[test]
    fn intrinsic_at_principal_point() {
        let c = CameraModel::new(3, 3, (1.0, 1.0), Some((1.0, 1.0))).unwrap();
        let d = DisparityField::constant(3, 3, 0.7).unwrap();
        let b = intrinsic_basis(&c, &d).unwrap();
        assert_eq!(b.field(FieldId::Tz).unwrap().at(1, 1), [0.0, 0.0]);
        assert_eq!(b.field(FieldId::Rx).unwrap().at(1, 1), [0.0, 1.0]);
        assert_eq!(b.field(FieldId::Ry).unwrap().at(1, 1), [1.0, 0.0]);
    }

    #[test]
    fn intrinsic_translation_substitution() {
        let c = offset_cam(2.0, 3.0, Some((1.0, 1.0)));
        let d = DisparityField::constant(6, 6, 0.5).unwrap();
        let b = intrinsic_basis(&c, &d).unwrap();
        assert_eq!(b.field(FieldId::Tx).unwrap().at(2, 3), [0.5, 0.0]);
        assert_eq!(b.field(FieldId::Ty).unwrap().at(2, 3), [0.0, 0.5]);
        assert_eq!(b.field(FieldId::Tz).unwrap().at(2, 3), [-1.0, -1.5]);
    }

    #[test]
    fn intrinsic_rz_with_focal_two() {
        let c = offset_cam(2.0, 3.0, Some((2.0, 2.0)));
        let d = DisparityField::constant(6, 6, 1.0).unwrap();
        let b = intrinsic_basis(&c, &d).unwrap();
        assert_eq!(b.field(FieldId::Rz).unwrap().at(2, 3), [3.0, -2.0]);
    }

    #[test]
    fn intrinsic_requires_focal() {
        let c = cam(4, 4, None);
        let d = DisparityField::constant(4, 4, 1.0).unwrap();
        assert_eq!(intrinsic_basis(&c, &d), Err(Error::MissingFocal));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let c = cam(4, 4, None);
        let d = DisparityField::constant(4, 5, 1.0).unwrap();
        assert!(matches!(
            focal_free_basis(&c, &d),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn focal_free_fields() {
        let c = offset_cam(2.0, 3.0, None);
        let d = DisparityField::constant(6, 6, 0.5).unwrap();
        let b = focal_free_basis(&c, &d).unwrap();
        assert_eq!(b.ids, BasisFamily::FocalFree.full_ids());
        assert_eq!(b.field(FieldId::Rz).unwrap().at(2, 3), [3.0, -2.0]);
        assert_eq!(b.field(FieldId::Tz).unwrap().at(2, 3), [-1.0, -1.5]);
        assert_eq!(b.field(FieldId::R2x).unwrap().at(2, 3), [6.0, 9.0]);
        assert_eq!(b.field(FieldId::R2y).unwrap().at(2, 3), [4.0, 6.0]);
        for (u, v) in [(0, 0), (5, 1), (3, 4)] {
            assert_eq!(b.field(FieldId::R1x).unwrap().at(u, v), [0.0, 1.0]);
            assert_eq!(b.field(FieldId::R1y).unwrap().at(u, v), [1.0, 0.0]);
        }
    }

    #[test]
    fn normalization_of_two_pixel_template() {
        // 2x1 is below the camera minimum, so use 2x2 and check the scale
        // arithmetic on the Tx template ((1,0) at 4 pixels, norm 2).
        let c = cam(2, 2, None);
        let d = DisparityField::constant(2, 2, 1.0).unwrap();
        let b = normalize_basis(&focal_free_basis(&c, &d).unwrap(), &d).unwrap();
        assert!((b.scales[0] - 1.0).abs() < 1e-15);
        let n: f64 = b.fields[0].norm();
        assert!((n - 2.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_scale_sqrt_two_for_norm_sqrt_two_template() {
        // Tx template (1,0) over 2 pixels has norm √2, so it scales by √2.
        let c = CameraModel {
            width: 2,
            height: 1,
            principal_point: (0.5, 0.0),
            focal: None,
        };
        let s = normalization_scales(&c, BasisFamily::FocalFree, &[FieldId::Tx]);
        assert!((s[0].unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn unit_rotational_field_is_unchanged() {
        // R1y over one pixel... use a 2x2 grid: R1y = (1,0) everywhere, norm 2.
        // After one normalization its norm is 1, and a second pass keeps it.
        let c = cam(2, 2, None);
        let d = DisparityField::constant(2, 2, 0.3).unwrap();
        let once = normalize_basis(&focal_free_basis(&c, &d).unwrap(), &d).unwrap();
        let j = once.ids.iter().position(|i| *i == FieldId::R1y).unwrap();
        assert!((once.fields[j].norm() - 1.0).abs() < 1e-15);
        let twice = normalize_basis(&once, &d).unwrap();
        assert_eq!(once.fields[j], twice.fields[j]);
    }

    #[test]
    fn zero_disparity_sets_flag() {
        let c = cam(4, 3, None);
        let d = DisparityField::constant(4, 3, 0.0).unwrap();
        let b = normalize_basis(&focal_free_basis(&c, &d).unwrap(), &d).unwrap();
        assert!(b.has_zero_field);
        for j in 0..3 {
            assert!(b.fields[j].as_slice().iter().all(|x| *x == 0.0));
        }
        for j in 3..8 {
            assert!((b.fields[j].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn translational_norm_is_two_times_d() {
        let c = cam(5, 4, Some(30.0));
        let d = DisparityField::constant(5, 4, 0.25).unwrap();
        let b = build_basis(&c, &d, BasisFamily::Intrinsic, BasisKind::Intrinsic6).unwrap();
        for j in 0..3 {
            assert!((b.fields[j].norm() - 0.5).abs() < 1e-12);
        }
        for j in 3..6 {
            assert!((b.fields[j].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn subsets_keep_order() {
        let c = cam(4, 4, Some(10.0));
        let d = DisparityField::constant(4, 4, 1.0).unwrap();
        let ff = build_basis(&c, &d, BasisFamily::FocalFree, BasisKind::RotationOnly).unwrap();
        use FieldId::*;
        assert_eq!(ff.ids, vec![R1x, R2x, R1y, R2y, Rz]);
        let ir = build_basis(&c, &d, BasisFamily::Intrinsic, BasisKind::RotationOnly).unwrap();
        assert_eq!(ir.ids, vec![Rx, Ry, Rz]);
        let t = build_basis(&c, &d, BasisFamily::FocalFree, BasisKind::TranslationOnly).unwrap();
        assert_eq!(t.ids, vec![Tx, Ty, Tz]);
    }

    #[test]
    fn restrict_identity_zero_and_half() {
        let c = cam(4, 3, None);
        let d = DisparityField::from_fn(4, 3, |u, v| 0.1 + 0.05 * (u + v) as f64).unwrap();
        let b = build_basis(&c, &d, BasisFamily::FocalFree, BasisKind::FocalFree8).unwrap();

        let one = SoftMaskStack::uniform(4, 3, 1).unwrap();
        let r = restrict_basis(&b, &one).unwrap();
        assert_eq!(r.per_region[0].fields, b.fields);

        let mut w = Vec::new();
        for _ in 0..12 {
            w.extend_from_slice(&[0.5, 0.0, 0.5]);
        }
        let m = SoftMaskStack::new(4, 3, 3, w).unwrap();
        let r = restrict_basis(&b, &m).unwrap();
        for (j, f) in r.per_region[1].fields.iter().enumerate() {
            assert!(f.as_slice().iter().all(|x| *x == 0.0), "field {j}");
        }
        for (f, g) in r.per_region[0].fields.iter().zip(&b.fields) {
            assert_eq!(f, &g.scaled(0.5));
        }
    }
}
