//! Synthetic multi-region rigid scenes with exact instantaneous flow.
//!
//! Flow is the image-plane velocity of each back-projected point under
//! `X' = −(ω × X + v)`, not a finite displacement, so no warping or
//! occlusion handling is involved.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::MOTION_TO_BASIS_SIGNS;
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::field::{DisparityField, FlowField, Grid, LabelGrid};

pub const SCENE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidMotionSpec {
    /// Angular velocity `(ω₁, ω₂, ω₃)` in rad/s.
    pub omega: [f64; 3],
    /// Linear velocity `(v₁, v₂, v₃)` in m/s.
    pub vel: [f64; 3],
}

impl RigidMotionSpec {
    pub fn is_finite(&self) -> bool {
        self.omega.iter().chain(&self.vel).all(|x| x.is_finite())
    }

    /// Coefficients on the intrinsic fields `(Tx, Ty, Tz, Rx, Ry, Rz)` that
    /// reproduce this motion's flow.
    pub fn intrinsic_coefficients(&self) -> [f64; 6] {
        let m = [
            self.vel[0],
            self.vel[1],
            self.vel[2],
            self.omega[0],
            self.omega[1],
            self.omega[2],
        ];
        let mut out = [0.0; 6];
        for j in 0..6 {
            out[j] = MOTION_TO_BASIS_SIGNS[j] * m[j];
        }
        out
    }
}

/// Region support. Pixel `(u, v)` uses integer pixel centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum Shape {
    /// Half-open box `x0 <= u < x1`, `y0 <= v < y1`.
    Rectangle { x0: usize, y0: usize, x1: usize, y1: usize },
    /// `(u − cx)² + (v − cy)² <= radius²`.
    Disk { cx: f64, cy: f64, radius: f64 },
    /// `nx·u + ny·v >= offset`.
    HalfPlane { nx: f64, ny: f64, offset: f64 },
    /// Row-major 0/1 membership grid.
    Explicit { mask: Vec<u8> },
    /// Every pixel not covered by another region. At most one per scene.
    Rest,
}

impl Shape {
    fn contains(&self, u: usize, v: usize, width: usize) -> bool {
        match self {
            Shape::Rectangle { x0, y0, x1, y1 } => u >= *x0 && u < *x1 && v >= *y0 && v < *y1,
            Shape::Disk { cx, cy, radius } => {
                let (du, dv) = (u as f64 - cx, v as f64 - cy);
                du * du + dv * dv <= radius * radius
            }
            Shape::HalfPlane { nx, ny, offset } => nx * u as f64 + ny * v as f64 >= *offset,
            Shape::Explicit { mask } => mask.get(v * width + u).is_some_and(|m| *m != 0),
            Shape::Rest => false,
        }
    }
}

/// Depth in meters as a function of the pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum DepthModel {
    Constant { depth: f64 },
    /// `z = depth + grad_u · ū + grad_v · v̄`.
    Plane { depth: f64, grad_u: f64, grad_v: f64 },
    /// Fronto-parallel surface `offset` meters in front of region 0.
    Offset { offset: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub shape: Shape,
    pub depth: DepthModel,
    pub motion: RigidMotionSpec,
}

/// Generator input. Serialized as JSON with `schema: 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub schema: u32,
    pub camera: CameraModel,
    pub regions: Vec<RegionSpec>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene spec serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        if spec.schema != SCENE_SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported scene schema {} (expected {SCENE_SCHEMA_VERSION})",
                spec.schema
            )));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneInstance {
    pub flow: FlowField,
    pub gt_disparity: DisparityField,
    pub gt_labels: LabelGrid,
    pub spec: SceneSpec,
}

impl SceneInstance {
    pub fn gt_depth(&self) -> Grid<f64> {
        self.gt_disparity.to_depth()
    }
}

/// Closed-form instantaneous flow `(u', v')` at `pixel` for a point at
/// `depth` meters moving with `−(ω × X + v)`.
pub fn instantaneous_flow(
    camera: &CameraModel,
    depth: f64,
    motion: &RigidMotionSpec,
    pixel: (usize, usize),
) -> Result<[f64; 2]> {
    let (fx, fy) = camera.focal_or_err()?;
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::NonPositiveDepth {
            depth,
            u: pixel.0,
            v: pixel.1,
        });
    }
    let (ub, vb) = camera.centered_coords(pixel.0, pixel.1);
    let z = depth;
    let x = ub / fx * z;
    let y = vb / fy * z;
    let [w1, w2, w3] = motion.omega;
    let [v1, v2, v3] = motion.vel;
    // X' = −(ω × X + v)
    let dx = -(w2 * z - w3 * y + v1);
    let dy = -(w3 * x - w1 * z + v2);
    let dz = -(w1 * y - w2 * x + v3);
    Ok([
        fx * (z * dx - x * dz) / (z * z),
        fy * (z * dy - y * dz) / (z * z),
    ])
}

fn region_depth(spec: &SceneSpec, region: usize, u: usize, v: usize) -> Result<f64> {
    let (ub, vb) = spec.camera.centered_coords(u, v);
    let eval = |m: &DepthModel| -> Option<f64> {
        match *m {
            DepthModel::Constant { depth } => Some(depth),
            DepthModel::Plane { depth, grad_u, grad_v } => Some(depth + grad_u * ub + grad_v * vb),
            DepthModel::Offset { .. } => None,
        }
    };
    let z = match spec.regions[region].depth {
        DepthModel::Offset { offset } => {
            let base = spec
                .regions
                .first()
                .and_then(|r| eval(&r.depth))
                .ok_or_else(|| {
                    Error::InvalidPartition("offset depth needs a non-offset region 0".into())
                })?;
            base - offset
        }
        ref m => eval(m).expect("non-offset"),
    };
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::NonPositiveDepth { depth: z, u, v });
    }
    Ok(z)
}

/// Hard label map of a spec, checking that shapes partition the image.
pub fn label_map(spec: &SceneSpec) -> Result<Grid<u16>> {
    let cam = &spec.camera;
    let rest: Vec<usize> = spec
        .regions
        .iter()
        .enumerate()
        .filter(|(_, r)| r.shape == Shape::Rest)
        .map(|(i, _)| i)
        .collect();
    if rest.len() > 1 {
        return Err(Error::InvalidPartition("more than one rest region".into()));
    }
    if spec.regions.len() > u16::MAX as usize {
        return Err(Error::InvalidPartition("too many regions".into()));
    }
    for r in &spec.regions {
        if let Shape::Explicit { mask } = &r.shape {
            if mask.len() != cam.pixel_count() {
                return Err(Error::InvalidPartition(format!(
                    "explicit mask has {} entries for {} pixels",
                    mask.len(),
                    cam.pixel_count()
                )));
            }
        }
    }
    let mut labels = Vec::with_capacity(cam.pixel_count());
    for v in 0..cam.height {
        for u in 0..cam.width {
            let mut owner = None;
            for (i, r) in spec.regions.iter().enumerate() {
                if r.shape.contains(u, v, cam.width) {
                    if let Some(prev) = owner {
                        return Err(Error::InvalidPartition(format!(
                            "regions {prev} and {i} overlap at ({u}, {v})"
                        )));
                    }
                    owner = Some(i);
                }
            }
            match owner.or(rest.first().copied()) {
                Some(i) => labels.push(i as u16),
                None => {
                    return Err(Error::InvalidPartition(format!(
                        "pixel ({u}, {v}) is not covered"
                    )))
                }
            }
        }
    }
    Grid::from_vec(cam.width, cam.height, labels)
}

pub fn compose_scene(spec: &SceneSpec) -> Result<SceneInstance> {
    let cam = &spec.camera;
    cam.validate()?;
    cam.focal_or_err()?;
    if spec.regions.is_empty() {
        return Err(Error::InvalidPartition("scene has no regions".into()));
    }
    if spec.regions.iter().any(|r| !r.motion.is_finite()) {
        return Err(Error::NonFiniteInput("region motion"));
    }
    let labels = label_map(spec)?;
    let mut flow = FlowField::zeros(cam.width, cam.height);
    let mut disparity = Grid::filled(cam.width, cam.height, 0.0);
    for v in 0..cam.height {
        for u in 0..cam.width {
            let region = *labels.get(u, v) as usize;
            let z = region_depth(spec, region, u, v)?;
            flow.set(u, v, instantaneous_flow(cam, z, &spec.regions[region].motion, (u, v))?);
            disparity.set(u, v, 1.0 / z);
        }
    }
    Ok(SceneInstance {
        flow,
        gt_disparity: DisparityField::new(disparity)?,
        gt_labels: LabelGrid::new(labels, 0),
        spec: spec.clone(),
    })
}

/// Which motion components random regions receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum MotionMix {
    #[default]
    Mixed,
    PureRotation,
    PureTranslation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSceneParams {
    pub k: usize,
    pub width: usize,
    pub height: usize,
    /// Depth range in meters, `0 < lo < hi`.
    pub depth_range: (f64, f64),
    /// Linear velocity scale in m/s; angular velocity uses `motion_scale / mid-depth`.
    pub motion_scale: f64,
    /// Focal length in pixels (`f_x = f_y`).
    pub focal: f64,
    /// Minimum region area as a fraction of the image.
    pub min_region_frac: f64,
    /// Minimum RMS per-pixel flow difference between any two motions, in pixels.
    pub min_motion_distance: f64,
    pub motion_mix: MotionMix,
}

impl Default for RandomSceneParams {
    fn default() -> Self {
        Self {
            k: 3,
            width: 64,
            height: 64,
            depth_range: (2.0, 6.0),
            motion_scale: 0.1,
            focal: 64.0,
            min_region_frac: 0.02,
            min_motion_distance: 0.5,
            motion_mix: MotionMix::Mixed,
        }
    }
}

impl RandomSceneParams {
    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_dims(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn with_motion_mix(mut self, mix: MotionMix) -> Self {
        self.motion_mix = mix;
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ParamOutOfRange(m));
        if self.k < 1 {
            return bad("K must be >= 1".into());
        }
        if self.width < 8 || self.height < 8 {
            return bad(format!("dims must be >= 8x8, got {}x{}", self.width, self.height));
        }
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return bad(format!("depth range must satisfy 0 < lo < hi, got ({lo}, {hi})"));
        }
        if !(self.motion_scale > 0.0 && self.motion_scale.is_finite()) {
            return bad("motion_scale must be > 0".into());
        }
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return bad("focal must be > 0".into());
        }
        if !(self.min_region_frac >= 0.0 && self.min_region_frac * self.k as f64 <= 0.5) {
            return bad("min_region_frac * K must be <= 0.5".into());
        }
        if !(self.min_motion_distance >= 0.0) {
            return bad("min_motion_distance must be >= 0".into());
        }
        Ok(())
    }
}

/// RMS per-pixel difference between the flows of two motions over the whole
/// image at constant `depth`.
pub fn motion_distance(camera: &CameraModel, a: &RigidMotionSpec, b: &RigidMotionSpec, depth: f64) -> f64 {
    let mut sq = 0.0;
    for v in 0..camera.height {
        for u in 0..camera.width {
            let fa = instantaneous_flow(camera, depth, a, (u, v)).expect("valid depth");
            let fb = instantaneous_flow(camera, depth, b, (u, v)).expect("valid depth");
            sq += (fa[0] - fb[0]).powi(2) + (fa[1] - fb[1]).powi(2);
        }
    }
    (sq / camera.pixel_count() as f64).sqrt()
}

fn sample_motion(rng: &mut ChaCha8Rng, params: &RandomSceneParams) -> RigidMotionSpec {
    let mid = 0.5 * (params.depth_range.0 + params.depth_range.1);
    let s = params.motion_scale;
    let mut m = RigidMotionSpec::default();
    if params.motion_mix != MotionMix::PureRotation {
        for x in m.vel.iter_mut() {
            *x = rng.random_range(-s..s);
        }
    }
    if params.motion_mix != MotionMix::PureTranslation {
        for x in m.omega.iter_mut() {
            *x = rng.random_range(-s..s) / mid;
        }
    }
    m
}

fn sample_shape(rng: &mut ChaCha8Rng, w: usize, h: usize, scale: f64) -> Shape {
    let min_side = w.min(h) as f64;
    if rng.random_bool(0.5) {
        let rw = ((rng.random_range(0.2..0.45) * scale * w as f64) as usize).max(2);
        let rh = ((rng.random_range(0.2..0.45) * scale * h as f64) as usize).max(2);
        let x0 = rng.random_range(0..=(w - rw.min(w)));
        let y0 = rng.random_range(0..=(h - rh.min(h)));
        Shape::Rectangle {
            x0,
            y0,
            x1: x0 + rw,
            y1: y0 + rh,
        }
    } else {
        let radius = rng.random_range(0.1..0.22) * scale * min_side;
        Shape::Disk {
            cx: rng.random_range(radius..(w as f64 - 1.0 - radius).max(radius + 1e-9)),
            cy: rng.random_range(radius..(h as f64 - 1.0 - radius).max(radius + 1e-9)),
            radius,
        }
    }
}

/// Deterministic random scene: region 0 is the background (`Rest`), the
/// others are non-overlapping rectangles or disks.
pub fn random_scene(seed: u64, params: &RandomSceneParams) -> Result<SceneSpec> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (params.width, params.height);
    let f = params.focal;
    let camera = CameraModel::centered(w, h, Some((f, f)))?;
    let n = w * h;
    let min_pixels = (params.min_region_frac * n as f64).ceil() as usize;
    let (lo, hi) = params.depth_range;

    let mut shapes: Vec<Shape> = Vec::new();
    let mut occupied = vec![false; n];
    let mut scale = 1.0;
    let mut attempts = 0;
    while shapes.len() + 1 < params.k {
        attempts += 1;
        if attempts % 200 == 0 {
            // crowded: restart with smaller objects
            scale *= 0.85;
            shapes.clear();
            occupied.iter_mut().for_each(|o| *o = false);
            if scale < 0.05 {
                return Err(Error::ParamOutOfRange(
                    "could not place non-degenerate regions".into(),
                ));
            }
        }
        let shape = sample_shape(&mut rng, w, h, scale);
        let pixels: Vec<usize> = (0..n)
            .filter(|&p| shape.contains(p % w, p / w, w))
            .collect();
        if pixels.len() < min_pixels || pixels.iter().any(|&p| occupied[p]) {
            continue;
        }
        let free_after = occupied.iter().filter(|o| !**o).count() - pixels.len();
        if free_after < min_pixels {
            continue;
        }
        for p in pixels {
            occupied[p] = true;
        }
        shapes.push(shape);
    }

    let background_depth = if rng.random_bool(0.5) {
        DepthModel::Constant {
            depth: rng.random_range(0.5 * (lo + hi)..hi),
        }
    } else {
        // a tilted plane kept inside the range over the whole image
        let depth = rng.random_range(0.5 * (lo + hi)..hi);
        let span = (hi - depth).min(depth - lo) * 0.9;
        let gu = rng.random_range(-1.0..1.0) * span / (w as f64);
        let gv = rng.random_range(-1.0..1.0) * span / (h as f64);
        DepthModel::Plane {
            depth,
            grad_u: gu,
            grad_v: gv,
        }
    };
    let bg_min = match background_depth {
        DepthModel::Constant { depth } => depth,
        DepthModel::Plane { depth, grad_u, grad_v } => {
            depth - (grad_u.abs() * w as f64 + grad_v.abs() * h as f64) * 0.5
        }
        DepthModel::Offset { .. } => unreachable!(),
    };

    let mid = 0.5 * (lo + hi);
    let mut motions: Vec<RigidMotionSpec> = Vec::new();
    for _ in 0..params.k {
        let mut m = sample_motion(&mut rng, params);
        let mut tries = 0;
        while motions
            .iter()
            .any(|o| motion_distance(&camera, o, &m, mid) < params.min_motion_distance)
        {
            tries += 1;
            if tries > 1000 {
                return Err(Error::ParamOutOfRange(
                    "cannot sample motions satisfying min_motion_distance".into(),
                ));
            }
            m = sample_motion(&mut rng, params);
        }
        motions.push(m);
    }

    let mut regions = vec![RegionSpec {
        shape: Shape::Rest,
        depth: background_depth,
        motion: motions[0],
    }];
    for (i, shape) in shapes.into_iter().enumerate() {
        let depth = match rng.random_range(0..3) {
            0 if bg_min - lo > 0.2 => DepthModel::Offset {
                offset: rng.random_range(0.1..(bg_min - lo)),
            },
            1 => {
                let depth = rng.random_range(lo..mid);
                DepthModel::Plane {
                    depth,
                    grad_u: rng.random_range(-0.01..0.01),
                    grad_v: rng.random_range(-0.01..0.01),
                }
            }
            _ => DepthModel::Constant {
                depth: rng.random_range(lo..mid),
            },
        };
        regions.push(RegionSpec {
            shape,
            depth,
            motion: motions[i + 1],
        });
    }
    Ok(SceneSpec {
        schema: SCENE_SCHEMA_VERSION,
        camera,
        regions,
        seed,
    })
}
