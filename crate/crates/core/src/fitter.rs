//! Recovers disparity and soft masks from flow alone by first-order
//! minimization of the reconstruction loss over per-pixel parameters.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis, restrict_basis, BasisFamily, BasisKind};
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::field::{check_dims, DisparityField, FlowField, Grid, LabelGrid};
use crate::gradient::{
    disparity_from_param, loss_gradient_with_model, softplus_inv, SubspaceModel, DEFAULT_DAMPING,
};
use crate::masks::SoftMaskStack;
use crate::projector::{assemble_system, project_flow, ProjectionResult, DEFAULT_SV_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Region count.
    pub k: usize,
    /// Maximum number of steps.
    pub iterations: usize,
    pub lr_disparity: f64,
    pub lr_logits: f64,
    pub sv_threshold: f64,
    pub basis_kind: BasisKind,
    /// Family used by the subset kinds (`translationOnly`, `rotationOnly`).
    pub family: BasisFamily,
    pub seed: u64,
    /// Stop when the best loss improves by less than this fraction over
    /// `patience` steps. Zero disables early stopping.
    pub tolerance: f64,
    pub patience: usize,
    /// Tikhonov damping on the normal equations.
    pub damping: f64,
    /// Initial logits are uniform in `[-s, s]`.
    pub init_logit_scale: f64,
    /// Initial disparity value.
    pub init_disparity: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Weight of a smoothed total-variation penalty on logits.
    pub tv_weight: f64,
    /// Same penalty on the disparity parameters (off by default).
    pub tv_disparity_weight: f64,
    /// Step sizes follow a cosine schedule from the given rates down to this
    /// fraction of them at the last iteration. 1 keeps them constant.
    pub lr_final_fraction: f64,
    /// Rounds of hard-assignment polishing after the gradient phase
    /// (0 disables).
    pub polish_iterations: usize,
    /// Residual-norm change, relative to the flow norm, below which polishing
    /// prefers fewer regions.
    pub polish_tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k: 6,
            iterations: 2000,
            lr_disparity: 1e-2,
            lr_logits: 5e-2,
            sv_threshold: DEFAULT_SV_THRESHOLD,
            basis_kind: BasisKind::FocalFree8,
            family: BasisFamily::FocalFree,
            seed: 0,
            tolerance: 1e-7,
            patience: 200,
            damping: DEFAULT_DAMPING,
            init_logit_scale: 0.1,
            init_disparity: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            tv_weight: 0.003,
            tv_disparity_weight: 0.0,
            lr_final_fraction: 0.05,
            polish_iterations: 30,
            polish_tolerance: 1e-4,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ParamOutOfRange(m.to_string()));
        if self.k < 1 {
            return bad("K must be >= 1");
        }
        if !(self.lr_disparity > 0.0 && self.lr_logits > 0.0) {
            return bad("learning rates must be > 0");
        }
        if !(self.sv_threshold > 0.0) {
            return bad("sv_threshold must be > 0");
        }
        if !(self.damping > 0.0) {
            return bad("damping must be > 0");
        }
        if !(self.init_disparity > 0.0) {
            return bad("init_disparity must be > 0");
        }
        if !(self.tolerance >= 0.0 && self.tv_weight >= 0.0
            && self.tv_disparity_weight >= 0.0
            && self.init_logit_scale >= 0.0) {
            return bad("tolerance, penalty weights and init_logit_scale must be >= 0");
        }
        if !(self.lr_final_fraction > 0.0 && self.lr_final_fraction <= 1.0) {
            return bad("lr_final_fraction must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        Ok(())
    }

    /// Step-size multiplier at step `t` under the cosine schedule.
    pub fn lr_scale(&self, t: usize) -> f64 {
        if self.lr_final_fraction >= 1.0 || self.iterations <= 1 {
            return 1.0;
        }
        let progress = (t as f64 / (self.iterations - 1) as f64).min(1.0);
        let lo = self.lr_final_fraction;
        lo + (1.0 - lo) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    pub fn model(&self, camera: &CameraModel) -> Result<SubspaceModel> {
        SubspaceModel::new(camera, self.basis_kind, self.family)
    }
}

/// Parameters and optimizer moments of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    pub disparity_param: Grid<f64>,
    /// Pixel-major `K` channels.
    pub mask_logits: Vec<f64>,
    pub k: usize,
    pub step: usize,
    pub loss_history: Vec<f64>,
    /// Pre-step loss plus penalties; equals `loss_history` when penalties are off.
    pub objective_history: Vec<f64>,
    m_disparity: Vec<f64>,
    v_disparity: Vec<f64>,
    m_logits: Vec<f64>,
    v_logits: Vec<f64>,
}

impl FitState {
    pub fn dims(&self) -> (usize, usize) {
        self.disparity_param.dims()
    }

    pub fn disparity(&self) -> DisparityField {
        disparity_from_param(&self.disparity_param).expect("softplus is finite and >= 0")
    }

    pub fn masks(&self) -> SoftMaskStack {
        let (w, h) = self.dims();
        SoftMaskStack::from_logits(w, h, self.k, &self.mask_logits).expect("finite logits")
    }

    /// Replaces the logits (e.g. a channel permutation) and resets moments.
    pub fn with_logits(mut self, logits: Vec<f64>) -> Self {
        assert_eq!(logits.len(), self.mask_logits.len());
        self.mask_logits = logits;
        self.m_logits.iter_mut().for_each(|x| *x = 0.0);
        self.v_logits.iter_mut().for_each(|x| *x = 0.0);
        self
    }
}

pub fn init_state(dims: (usize, usize), config: &FitConfig) -> Result<FitState> {
    config.validate()?;
    let (w, h) = dims;
    if w < 4 || h < 4 {
        return Err(Error::ParamOutOfRange(format!(
            "fit needs at least 4x4 pixels, got {w}x{h}"
        )));
    }
    let n = w * h;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let s = config.init_logit_scale;
    let mask_logits: Vec<f64> = (0..n * config.k)
        .map(|_| if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 })
        .collect();
    let p0 = softplus_inv(config.init_disparity);
    Ok(FitState {
        disparity_param: Grid::filled(w, h, p0),
        k: config.k,
        step: 0,
        loss_history: Vec::new(),
        objective_history: Vec::new(),
        m_disparity: vec![0.0; n],
        v_disparity: vec![0.0; n],
        m_logits: vec![0.0; n * config.k],
        v_logits: vec![0.0; n * config.k],
        mask_logits,
    })
}

/// Adds the gradient of `weight · Σ sqrt((z_p − z_q)² + ε²)` over
/// 4-neighbour pairs, per channel. Returns the penalty value.
fn add_tv_gradient(logits: &[f64], w: usize, h: usize, k: usize, weight: f64, grad: &mut [f64]) -> f64 {
    const EPS2: f64 = 1e-6;
    let mut value = 0.0;
    for v in 0..h {
        for u in 0..w {
            let p = v * w + u;
            for q in [(u + 1 < w).then(|| p + 1), (v + 1 < h).then(|| p + w)]
                .into_iter()
                .flatten()
            {
                for i in 0..k {
                    let diff = logits[p * k + i] - logits[q * k + i];
                    let len = (diff * diff + EPS2).sqrt();
                    value += weight * len;
                    let g = weight * diff / len;
                    grad[p * k + i] += g;
                    grad[q * k + i] -= g;
                }
            }
        }
    }
    value
}

fn adam_update(
    params: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    t: usize,
    cfg: &FitConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..params.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        params[i] -= lr * mh / (vh.sqrt() + cfg.epsilon);
    }
}

/// One adaptive-gradient update. The pre-step loss is appended to the
/// history. On a non-finite gradient the input state is left untouched.
pub fn step(
    state: &FitState,
    flow: &FlowField,
    model: &SubspaceModel,
    config: &FitConfig,
) -> Result<FitState> {
    check_dims(state.dims(), flow.dims())?;
    let (w, h) = state.dims();
    let g = loss_gradient_with_model(
        model,
        &state.disparity_param,
        &state.mask_logits,
        state.k,
        flow,
        config.damping,
    )
    .map_err(|e| match e {
        Error::NonFiniteGradient { .. } => Error::NonFiniteGradient { step: state.step },
        other => other,
    })?;
    let mut grad_logits = g.grad_logits;
    let mut grad_disparity = g.grad_disparity.into_vec();
    let mut objective = g.loss;
    if config.tv_weight > 0.0 {
        objective += add_tv_gradient(&state.mask_logits, w, h, state.k, config.tv_weight, &mut grad_logits);
    }
    if config.tv_disparity_weight > 0.0 {
        objective += add_tv_gradient(
            state.disparity_param.as_slice(),
            w,
            h,
            1,
            config.tv_disparity_weight,
            &mut grad_disparity,
        );
    }
    if !g.loss.is_finite() || grad_logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteGradient { step: state.step });
    }
    let mut next = state.clone();
    next.step += 1;
    let t = next.step;
    let lr_scale = config.lr_scale(state.step);
    adam_update(
        next.disparity_param.as_mut_slice(),
        &grad_disparity,
        &mut next.m_disparity,
        &mut next.v_disparity,
        config.lr_disparity * lr_scale,
        t,
        config,
    );
    adam_update(
        &mut next.mask_logits,
        &grad_logits,
        &mut next.m_logits,
        &mut next.v_logits,
        config.lr_logits * lr_scale,
        t,
        config,
    );
    next.loss_history.push(g.loss);
    next.objective_history.push(objective);
    Ok(next)
}

/// Logit given to the owning channel when a hard assignment is written back
/// as a soft-mask state; the other channels get weight `e^-60`.
const HARD_LOGIT: f64 = 60.0;
/// Floor keeping the disparity parameter finite after polishing.
const MIN_POLISH_DISPARITY: f64 = 1e-12;

/// One alternation round: least-squares coefficients per region, then the
/// best region and non-negative disparity per pixel. Fills `cost` with each
/// pixel's squared residual and returns whether any label changed.
fn polish_round(
    model: &SubspaceModel,
    flow: &[f64],
    labels: &mut [u16],
    disparity: &mut [f64],
    cost: &mut [f64],
    k: usize,
) -> bool {
    let n = labels.len();
    let nb = model.basis_len();
    let mut b = vec![[0.0; 2]; nb];
    let mut gram = vec![DMatrix::<f64>::zeros(nb, nb); k];
    let mut rhs = vec![DVector::<f64>::zeros(nb); k];
    let mut count = vec![0usize; k];
    for p in 0..n {
        let i = labels[p] as usize;
        count[i] += 1;
        model.fill_basis(p, disparity[p], &mut b);
        for j in 0..nb {
            rhs[i][j] += b[j][0] * flow[2 * p] + b[j][1] * flow[2 * p + 1];
            for l in 0..nb {
                gram[i][(j, l)] += b[j][0] * b[l][0] + b[j][1] * b[l][1];
            }
        }
    }
    let coeffs: Vec<Option<DVector<f64>>> = (0..k)
        .map(|i| {
            if count[i] == 0 {
                return None;
            }
            let svd = gram[i].clone().svd(true, true);
            let eps = 1e-12 * svd.singular_values.max();
            svd.solve(&rhs[i], eps).ok()
        })
        .collect();

    let mut changed = false;
    let mut region_cost = vec![(f64::INFINITY, 0.0); k];
    for p in 0..n {
        let t = model.templates_at(p);
        let fp = [flow[2 * p], flow[2 * p + 1]];
        for (i, c) in coeffs.iter().enumerate() {
            region_cost[i] = (f64::INFINITY, disparity[p]);
            let Some(c) = c else { continue };
            let (mut tr, mut rot) = ([0.0; 2], [0.0; 2]);
            for j in 0..nb {
                let acc = if model.is_translational(j) { &mut tr } else { &mut rot };
                acc[0] += c[j] * t[j][0];
                acc[1] += c[j] * t[j][1];
            }
            let e = [fp[0] - rot[0], fp[1] - rot[1]];
            let tt = tr[0] * tr[0] + tr[1] * tr[1];
            let d = if tt > 0.0 {
                ((e[0] * tr[0] + e[1] * tr[1]) / tt).max(0.0)
            } else {
                disparity[p]
            };
            let r = [e[0] - d * tr[0], e[1] - d * tr[1]];
            region_cost[i] = (r[0] * r[0] + r[1] * r[1], d);
        }
        let current = labels[p] as usize;
        let mut best = current;
        for i in 0..k {
            if region_cost[i].0 < region_cost[best].0 {
                best = i;
            }
        }
        // the current label wins near-ties
        if region_cost[current].0 <= region_cost[best].0 * (1.0 + 1e-12) {
            best = current;
        }
        changed |= best != current;
        labels[p] = best as u16;
        (cost[p], disparity[p]) = region_cost[best];
    }
    changed
}

/// Moves the worst-explained pixels of the highest-cost region into the
/// empty region `empty`. Returns false when there is nothing to split.
fn reseed_empty(labels: &mut [u16], cost: &[f64], k: usize, empty: usize) -> bool {
    let mut total = vec![(0.0, 0usize); k];
    for (&l, &c) in labels.iter().zip(cost) {
        total[l as usize].0 += c;
        total[l as usize].1 += 1;
    }
    let worst = (0..k)
        .filter(|&i| total[i].1 > 1)
        .max_by(|&a, &b| total[a].0.total_cmp(&total[b].0));
    let Some(worst) = worst else { return false };
    let mean = total[worst].0 / total[worst].1 as f64;
    let mut moved = 0;
    for (l, &c) in labels.iter_mut().zip(cost) {
        if *l as usize == worst && c > mean {
            *l = empty as u16;
            moved += 1;
        }
    }
    moved > 0 && moved < total[worst].1
}

fn polish_converge(
    model: &SubspaceModel,
    flow: &[f64],
    labels: &mut [u16],
    disparity: &mut [f64],
    cost: &mut [f64],
    k: usize,
    iterations: usize,
) -> f64 {
    for _ in 0..iterations {
        if !polish_round(model, flow, labels, disparity, cost, k) {
            break;
        }
    }
    cost.iter().sum()
}

/// Alternating minimization of the reconstruction loss over one-hot masks.
///
/// Each round fits every region's coefficients by least squares on its
/// pixels, then moves each pixel to the region whose motion explains it best
/// with the optimal non-negative disparity.
///
/// Around that, the region count is adjusted greedily. Empty regions are
/// reseeded from the worst-explained pixels of the costliest region when
/// this drops the residual norm by more than `tolerance * |flow|`, and pairs
/// of regions are merged while the cheapest merge raises it by at most that
/// much. `labels` and `disparity` are updated in place.
pub fn polish_hard(
    model: &SubspaceModel,
    flow: &FlowField,
    labels: &mut [u16],
    disparity: &mut [f64],
    k: usize,
    iterations: usize,
    tolerance: f64,
) {
    if iterations == 0 {
        return;
    }
    let f = flow.as_slice();
    let margin = tolerance * flow.norm();
    let mut cost = vec![0.0; labels.len()];
    let mut best = polish_converge(model, f, labels, disparity, &mut cost, k, iterations).sqrt();
    for _ in 0..k {
        let mut used = vec![false; k];
        for &l in labels.iter() {
            used[l as usize] = true;
        }
        let Some(empty) = used.iter().position(|u| !u) else { break };
        let (mut l2, mut d2, mut c2) = (labels.to_vec(), disparity.to_vec(), cost.clone());
        if !reseed_empty(&mut l2, &c2, k, empty) {
            break;
        }
        let total = polish_converge(model, f, &mut l2, &mut d2, &mut c2, k, iterations).sqrt();
        if total >= best - margin {
            break;
        }
        best = total;
        labels.copy_from_slice(&l2);
        disparity.copy_from_slice(&d2);
        cost = c2;
    }
    loop {
        let mut used = vec![false; k];
        for &l in labels.iter() {
            used[l as usize] = true;
        }
        // residual norm, labels, disparity, per-pixel cost
        let mut cheapest: Option<(f64, Vec<u16>, Vec<f64>, Vec<f64>)> = None;
        for i in 0..k {
            for j in i + 1..k {
                if !(used[i] && used[j]) {
                    continue;
                }
                let mut l2: Vec<u16> = labels.iter().map(|&l| if l as usize == j { i as u16 } else { l }).collect();
                let (mut d2, mut c2) = (disparity.to_vec(), cost.clone());
                let total = polish_converge(model, f, &mut l2, &mut d2, &mut c2, k, iterations).sqrt();
                if cheapest.as_ref().is_none_or(|c| total < c.0) {
                    cheapest = Some((total, l2, d2, c2));
                }
            }
        }
        let Some((total, l2, d2, c2)) = cheapest else { break };
        if total > best + margin {
            break;
        }
        best = total.min(best);
        labels.copy_from_slice(&l2);
        disparity.copy_from_slice(&d2);
        cost = c2;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub disparity: DisparityField,
    pub masks: SoftMaskStack,
    pub hard_labels: LabelGrid,
    /// Projection loss of the returned fields.
    pub final_loss: f64,
    pub converged: bool,
    /// Pre-step damped losses, one per step taken.
    pub loss_history: Vec<f64>,
    /// Pre-step loss plus penalties. Best-iterate selection uses this.
    pub objective_history: Vec<f64>,
    /// Step index of the best gradient-phase iterate.
    pub best_step: usize,
    /// Whether the returned fields come from hard-assignment polishing.
    pub polished: bool,
}

/// Projects `flow` onto the span built from explicit fields.
pub fn evaluate_fields(
    flow: &FlowField,
    camera: &CameraModel,
    disparity: &DisparityField,
    masks: &SoftMaskStack,
    kind: BasisKind,
    family: BasisFamily,
    sv_threshold: f64,
) -> Result<ProjectionResult> {
    let basis = build_basis(camera, disparity, family, kind)?;
    let regions = restrict_basis(&basis, masks)?;
    let system = assemble_system(&regions)?;
    project_flow(&system, flow, sv_threshold)
}

/// Runs [`fit_from`] from [`init_state`].
pub fn fit(flow: &FlowField, camera: &CameraModel, config: &FitConfig) -> Result<FitResult> {
    let state = init_state(flow.dims(), config)?;
    fit_from(state, flow, camera, config)
}

/// Steps until the iteration budget or the tolerance criterion, and returns
/// the lowest-loss iterate seen.
pub fn fit_from(
    mut state: FitState,
    flow: &FlowField,
    camera: &CameraModel,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    check_dims(camera.dims(), flow.dims())?;
    check_dims(state.dims(), flow.dims())?;
    let model = config.model(camera)?;
    let flow_norm = flow.norm();
    // Loss at which the flow is explained to rounding error.
    let exact = 1e-12 * flow_norm.max(f64::MIN_POSITIVE);

    let mut best = state.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_step = 0;
    let mut converged = false;
    let mut window_start_loss = f64::INFINITY;
    for it in 0..config.iterations {
        let next = step(&state, flow, &model, config)?;
        let loss = *next.objective_history.last().expect("step appends");
        if loss < best_loss {
            best_loss = loss;
            best = state.clone();
            best_step = it;
        }
        // history lives on the running state; best keeps its own prefix
        state = next;
        if loss <= exact {
            converged = true;
            break;
        }
        if config.tolerance > 0.0 && config.patience > 0 && (it + 1) % config.patience == 0 {
            if window_start_loss.is_finite()
                && window_start_loss - best_loss < config.tolerance * window_start_loss
            {
                converged = true;
                break;
            }
            window_start_loss = best_loss;
        }
    }
    if config.iterations == 0 {
        best = state.clone();
    }
    let evaluate = |s: &FitState| -> Result<(DisparityField, SoftMaskStack, ProjectionResult)> {
        let disparity = s.disparity();
        let masks = s.masks();
        let p = evaluate_fields(flow, camera, &disparity, &masks, config.basis_kind, config.family, config.sv_threshold)?;
        Ok((disparity, masks, p))
    };
    let (mut disparity, mut masks, mut projection) = evaluate(&best)?;
    let mut polished = false;
    if config.polish_iterations > 0 {
        let mut labels: Vec<u16> = masks.hard_labels().as_slice().to_vec();
        let mut d = disparity.as_slice().to_vec();
        polish_hard(&model, flow, &mut labels, &mut d, config.k, config.polish_iterations, config.polish_tolerance);
        let mut hard = best.clone();
        for (p, &l) in labels.iter().enumerate() {
            for i in 0..config.k {
                hard.mask_logits[p * config.k + i] = if i == l as usize { HARD_LOGIT } else { 0.0 };
            }
            hard.disparity_param.as_mut_slice()[p] = softplus_inv(d[p].max(MIN_POLISH_DISPARITY));
        }
        let candidate = evaluate(&hard)?;
        if candidate.2.residual <= projection.residual {
            (disparity, masks, projection) = candidate;
            polished = true;
        }
    }
    if projection.residual <= exact {
        converged = true;
    }
    Ok(FitResult {
        hard_labels: masks.hard_labels(),
        disparity,
        masks,
        final_loss: projection.residual,
        converged,
        loss_history: state.loss_history,
        objective_history: state.objective_history,
        best_step,
        polished,
    })
}
