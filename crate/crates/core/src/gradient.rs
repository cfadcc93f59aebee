//! Differentiable reconstruction loss.
//!
//! Parameters are a pre-softplus disparity grid `p` (`d = softplus(p)`) and
//! `K`-channel mask logits (masks are the per-pixel softmax). The forward
//! pass solves the damped normal equations
//!
//! ```text
//! c = (SᵀS + λI)⁻¹ SᵀF,   r = F − S c,   L = ‖r‖
//! ```
//!
//! and the backward pass differentiates through that solve. With
//! `w = λ (SᵀS + λI)⁻¹ c` and `q = S w` the gradient with respect to the
//! system matrix is `∂L/∂S = (−r (c + w)ᵀ + q cᵀ) / L`, which is then pushed
//! through the mask restriction, the basis builder and the parameter maps.
//!
//! The Gram matrix is accumulated per pixel from the `B` basis values and the
//! `K` mask weights, so the dense `2HW x BK` matrix is never formed here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{
    normalization_scales, raw_field_value, BasisFamily, BasisKind, FieldId,
};
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::field::{check_dims, DisparityField, FlowField, Grid};
use crate::masks::softmax_into;

pub const DEFAULT_DAMPING: f64 = 1e-8;

/// Loss evaluation options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientConfig {
    pub kind: BasisKind,
    pub family: BasisFamily,
    /// Tikhonov damping `λ` on the normal equations.
    pub damping: f64,
}

impl Default for GradientConfig {
    fn default() -> Self {
        Self {
            kind: BasisKind::FocalFree8,
            family: BasisFamily::FocalFree,
            damping: DEFAULT_DAMPING,
        }
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Disparity-independent parts of the normalized basis for one camera.
///
/// Translational fields are stored as their normalized template `t̂_j`
/// (so `b_j = d · t̂_j`); rotational fields are stored as-is.
#[derive(Debug, Clone)]
pub struct SubspaceModel {
    pub camera: CameraModel,
    pub kind: BasisKind,
    pub family: BasisFamily,
    pub ids: Vec<FieldId>,
    translational: Vec<bool>,
    /// `templates[p * B + j]`
    templates: Vec<[f64; 2]>,
}

impl SubspaceModel {
    pub fn new(camera: &CameraModel, kind: BasisKind, family: BasisFamily) -> Result<Self> {
        camera.validate()?;
        let family = kind.family_or(family);
        if family == BasisFamily::Intrinsic {
            camera.focal_or_err()?;
        }
        let full_ids = family.full_ids();
        let scales = normalization_scales(camera, family, full_ids);
        let ids = kind.ids(family);
        let nb = ids.len();
        let mut templates = Vec::with_capacity(camera.pixel_count() * nb);
        for v in 0..camera.height {
            for u in 0..camera.width {
                for &id in &ids {
                    let full_j = full_ids.iter().position(|i| *i == id).expect("subset");
                    let s = scales[full_j].unwrap_or(0.0);
                    // d = 1 yields the template for translational fields.
                    let raw = raw_field_value(id, family, camera, u, v, 1.0);
                    templates.push([s * raw[0], s * raw[1]]);
                }
            }
        }
        Ok(Self {
            camera: *camera,
            kind,
            family,
            translational: ids.iter().map(|id| id.is_translational()).collect(),
            ids,
            templates,
        })
    }

    pub fn basis_len(&self) -> usize {
        self.ids.len()
    }

    /// Normalized templates at pixel `p`, one per field.
    pub fn templates_at(&self, p: usize) -> &[[f64; 2]] {
        let nb = self.ids.len();
        &self.templates[p * nb..(p + 1) * nb]
    }

    pub fn is_translational(&self, j: usize) -> bool {
        self.translational[j]
    }

    /// Normalized basis values at pixel `p` for disparity `d`.
    #[inline]
    pub(crate) fn fill_basis(&self, p: usize, d: f64, out: &mut [[f64; 2]]) {
        let nb = self.ids.len();
        let t = &self.templates[p * nb..(p + 1) * nb];
        for j in 0..nb {
            out[j] = if self.translational[j] {
                [d * t[j][0], d * t[j][1]]
            } else {
                t[j]
            };
        }
    }
}

/// Loss value and gradients with respect to both parameter grids.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    /// `∂L/∂p` for the pre-softplus disparity parameter.
    pub grad_disparity: Grid<f64>,
    /// `∂L/∂z` for the logits, pixel-major `K` channels.
    pub grad_logits: Vec<f64>,
    /// Damped least-squares coefficients, region-major.
    pub coefficients: Vec<f64>,
}

struct Forward {
    loss: f64,
    masks: Vec<f64>,
    disparity: Vec<f64>,
    coefficients: DVector<f64>,
    residual: Vec<f64>,
    chol: nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
}

fn validate_inputs(
    model: &SubspaceModel,
    disparity_param: &Grid<f64>,
    mask_logits: &[f64],
    k: usize,
    flow: &FlowField,
) -> Result<()> {
    let dims = model.camera.dims();
    check_dims(dims, disparity_param.dims())?;
    check_dims(dims, flow.dims())?;
    if k == 0 {
        return Err(Error::ParamOutOfRange("K must be >= 1".into()));
    }
    if mask_logits.len() != model.camera.pixel_count() * k {
        return Err(Error::DimensionMismatch {
            expected: format!("{} logits", model.camera.pixel_count() * k),
            actual: format!("{} logits", mask_logits.len()),
        });
    }
    if !disparity_param.as_slice().iter().all(|x| x.is_finite()) {
        return Err(Error::NonFiniteInput("disparity parameter"));
    }
    if !mask_logits.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFiniteInput("mask logits"));
    }
    if !flow.is_finite() {
        return Err(Error::NonFiniteInput("flow"));
    }
    Ok(())
}

fn forward(
    model: &SubspaceModel,
    disparity_param: &Grid<f64>,
    mask_logits: &[f64],
    k: usize,
    flow: &FlowField,
    damping: f64,
) -> Result<Forward> {
    validate_inputs(model, disparity_param, mask_logits, k, flow)?;
    let n = model.camera.pixel_count();
    let nb = model.basis_len();
    let ncols = nb * k;

    let disparity: Vec<f64> = disparity_param.as_slice().iter().map(|&x| softplus(x)).collect();
    let mut masks = vec![0.0; n * k];
    for (out, z) in masks.chunks_exact_mut(k).zip(mask_logits.chunks_exact(k)) {
        softmax_into(z, out);
    }

    let f = flow.as_slice();
    let mut gram = DMatrix::<f64>::zeros(ncols, ncols);
    let mut rhs = DVector::<f64>::zeros(ncols);
    let mut b = vec![[0.0; 2]; nb];
    let mut q = vec![0.0; nb * nb];
    let mut bf = vec![0.0; nb];
    for p in 0..n {
        model.fill_basis(p, disparity[p], &mut b);
        for j in 0..nb {
            for l in j..nb {
                let v = b[j][0] * b[l][0] + b[j][1] * b[l][1];
                q[j * nb + l] = v;
                q[l * nb + j] = v;
            }
            bf[j] = b[j][0] * f[2 * p] + b[j][1] * f[2 * p + 1];
        }
        let m = &masks[p * k..(p + 1) * k];
        for i in 0..k {
            let mi = m[i];
            if mi == 0.0 {
                continue;
            }
            for j in 0..nb {
                rhs[i * nb + j] += mi * bf[j];
            }
            for kk in i..k {
                let mm = mi * m[kk];
                if mm == 0.0 {
                    continue;
                }
                for j in 0..nb {
                    let row = i * nb + j;
                    for l in 0..nb {
                        gram[(row, kk * nb + l)] += mm * q[j * nb + l];
                    }
                }
            }
        }
    }
    // mirror the upper block triangle
    for i in 0..k {
        for kk in (i + 1)..k {
            for j in 0..nb {
                for l in 0..nb {
                    let v = gram[(i * nb + j, kk * nb + l)];
                    gram[(kk * nb + l, i * nb + j)] = v;
                }
            }
        }
    }
    for c in 0..ncols {
        gram[(c, c)] += damping;
    }
    let chol = gram
        .cholesky()
        .ok_or(Error::NonFiniteInput("normal equations are not positive definite"))?;
    let coefficients = chol.solve(&rhs);

    let mut residual = f.to_vec();
    for p in 0..n {
        model.fill_basis(p, disparity[p], &mut b);
        let m = &masks[p * k..(p + 1) * k];
        let (mut x, mut y) = (0.0, 0.0);
        for i in 0..k {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..nb {
                let c = coefficients[i * nb + j];
                gx += c * b[j][0];
                gy += c * b[j][1];
            }
            x += m[i] * gx;
            y += m[i] * gy;
        }
        residual[2 * p] -= x;
        residual[2 * p + 1] -= y;
    }
    let loss = residual.iter().map(|r| r * r).sum::<f64>().sqrt();
    Ok(Forward {
        loss,
        masks,
        disparity,
        coefficients,
        residual,
        chol,
    })
}

/// Forward pass only: `‖F − S c_λ‖` for the damped coefficients.
pub fn damped_loss(
    model: &SubspaceModel,
    disparity_param: &Grid<f64>,
    mask_logits: &[f64],
    k: usize,
    flow: &FlowField,
    damping: f64,
) -> Result<f64> {
    Ok(forward(model, disparity_param, mask_logits, k, flow, damping)?.loss)
}

/// Loss and exact gradients of the damped reconstruction loss.
pub fn loss_gradient_with_model(
    model: &SubspaceModel,
    disparity_param: &Grid<f64>,
    mask_logits: &[f64],
    k: usize,
    flow: &FlowField,
    damping: f64,
) -> Result<LossGradient> {
    let fw = forward(model, disparity_param, mask_logits, k, flow, damping)?;
    let n = model.camera.pixel_count();
    let nb = model.basis_len();
    let mut grad_disparity = vec![0.0; n];
    let mut grad_logits = vec![0.0; n * k];

    // The loss is flat (and non-differentiable) exactly at zero residual.
    let scale = fw.loss.max(f64::MIN_POSITIVE);
    if fw.loss > 0.0 && fw.loss.is_finite() {
        let w = fw.chol.solve(&fw.coefficients) * damping;
        let c = &fw.coefficients;
        let a = c + &w;
        let mut b = vec![[0.0; 2]; nb];
        let mut gc = vec![[0.0; 2]; k];
        let mut ga = vec![[0.0; 2]; k];
        let mut dm = vec![0.0; k];
        for p in 0..n {
            model.fill_basis(p, fw.disparity[p], &mut b);
            let m = &fw.masks[p * k..(p + 1) * k];
            let r = [fw.residual[2 * p], fw.residual[2 * p + 1]];
            let mut qp = [0.0; 2];
            for i in 0..k {
                let (mut cx, mut cy, mut ax, mut ay, mut wx, mut wy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..nb {
                    let idx = i * nb + j;
                    cx += c[idx] * b[j][0];
                    cy += c[idx] * b[j][1];
                    ax += a[idx] * b[j][0];
                    ay += a[idx] * b[j][1];
                    wx += w[idx] * b[j][0];
                    wy += w[idx] * b[j][1];
                }
                gc[i] = [cx, cy];
                ga[i] = [ax, ay];
                qp[0] += m[i] * wx;
                qp[1] += m[i] * wy;
            }
            for i in 0..k {
                dm[i] = (-(r[0] * ga[i][0] + r[1] * ga[i][1])
                    + (qp[0] * gc[i][0] + qp[1] * gc[i][1]))
                    / scale;
            }
            let dot: f64 = (0..k).map(|i| m[i] * dm[i]).sum();
            for i in 0..k {
                grad_logits[p * k + i] = m[i] * (dm[i] - dot);
            }

            if model.kind.uses_disparity() {
                let t = &model.templates[p * nb..(p + 1) * nb];
                let mut dd = 0.0;
                for j in 0..nb {
                    if !model.translational[j] {
                        continue;
                    }
                    let (mut abar, mut cbar) = (0.0, 0.0);
                    for i in 0..k {
                        abar += m[i] * a[i * nb + j];
                        cbar += m[i] * c[i * nb + j];
                    }
                    let gx = -r[0] * abar + qp[0] * cbar;
                    let gy = -r[1] * abar + qp[1] * cbar;
                    dd += gx * t[j][0] + gy * t[j][1];
                }
                grad_disparity[p] = dd / scale * sigmoid(disparity_param.as_slice()[p]);
            }
        }
    }
    if !grad_disparity.iter().chain(&grad_logits).all(|g| g.is_finite()) {
        return Err(Error::NonFiniteGradient { step: 0 });
    }
    Ok(LossGradient {
        loss: fw.loss,
        grad_disparity: Grid::from_vec(model.camera.width, model.camera.height, grad_disparity)?,
        grad_logits,
        coefficients: fw.coefficients.as_slice().to_vec(),
    })
}

/// Builds the basis model for `camera` and evaluates [`loss_gradient_with_model`].
pub fn loss_gradient(
    camera: &CameraModel,
    disparity_param: &Grid<f64>,
    mask_logits: &[f64],
    k: usize,
    flow: &FlowField,
    config: &GradientConfig,
) -> Result<LossGradient> {
    let model = SubspaceModel::new(camera, config.kind, config.family)?;
    loss_gradient_with_model(&model, disparity_param, mask_logits, k, flow, config.damping)
}

/// Maps the disparity parameter grid to a disparity field.
pub fn disparity_from_param(param: &Grid<f64>) -> Result<DisparityField> {
    DisparityField::new(param.map(|&x| softplus(x)))
}
