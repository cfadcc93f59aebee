//! Independent reference implementations and fixtures shared by the test targets.
#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{Cursor, Read};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flowsub::basis::{build_basis, restrict_basis, BasisFamily, BasisKind};
use flowsub::projector::{assemble_system, SystemMatrix};
use flowsub::{CameraModel, DisparityField, FlowField, Grid, LabelGrid, SoftMaskStack};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_disparity(r: &mut ChaCha8Rng, w: usize, h: usize) -> DisparityField {
    DisparityField::from_fn(w, h, |_, _| r.random_range(0.1..2.0)).unwrap()
}

pub fn random_masks(r: &mut ChaCha8Rng, w: usize, h: usize, k: usize) -> SoftMaskStack {
    let logits: Vec<f64> = (0..w * h * k).map(|_| r.random_range(-2.0..2.0)).collect();
    SoftMaskStack::from_logits(w, h, k, &logits).unwrap()
}

pub fn random_flow(r: &mut ChaCha8Rng, w: usize, h: usize) -> FlowField {
    FlowField::from_fn(w, h, |_, _| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
}

/// A random `w x h` focal-free system with soft masks.
pub struct Instance {
    pub camera: CameraModel,
    pub disparity: DisparityField,
    pub masks: SoftMaskStack,
    pub system: SystemMatrix,
}

pub fn random_instance(seed: u64, w: usize, h: usize, k: usize) -> Instance {
    let mut r = rng(seed);
    let camera = CameraModel::centered(w, h, None).unwrap();
    let disparity = random_disparity(&mut r, w, h);
    let masks = random_masks(&mut r, w, h, k);
    let basis = build_basis(&camera, &disparity, BasisFamily::FocalFree, BasisKind::FocalFree8).unwrap();
    let system = assemble_system(&restrict_basis(&basis, &masks).unwrap()).unwrap();
    Instance {
        camera,
        disparity,
        masks,
        system,
    }
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Orthogonal projection onto the column space via the eigendecomposition of
/// `SᵀS`, keeping eigenvalues above `threshold²`.
pub fn pinv_projection(s: &DMatrix<f64>, f: &[f64], threshold: f64) -> Vec<f64> {
    let gram = s.transpose() * s;
    let eig = SymmetricEigen::new(gram);
    let f = DVector::from_column_slice(f);
    let stf = s.transpose() * &f;
    let mut coeff = DVector::zeros(s.ncols());
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > threshold * threshold {
            let v = eig.eigenvectors.column(i);
            coeff += v * (v.dot(&stf) / lambda);
        }
    }
    (s * coeff).as_slice().to_vec()
}

/// Straight double loop `sqrt(Σ (a − b)²)`.
pub fn naive_loss(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc.sqrt()
}

fn ids_of(labels: &[u16]) -> Vec<u16> {
    let mut v: Vec<u16> = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Exhaustive best assignment between all segments of both sides, divided
/// by the larger segment count.
pub fn brute_force_miou(pred: &LabelGrid, gt: &LabelGrid) -> f64 {
    let (p, g) = (pred.as_slice(), gt.as_slice());
    let (pi, gi) = (ids_of(p), ids_of(g));
    let iou = |a: u16, b: u16| -> f64 {
        let mut inter = 0usize;
        let mut uni = 0usize;
        for k in 0..p.len() {
            let (x, y) = (p[k] == a, g[k] == b);
            inter += (x && y) as usize;
            uni += (x || y) as usize;
        }
        if uni == 0 {
            0.0
        } else {
            inter as f64 / uni as f64
        }
    };
    let (small, large, flip) = if pi.len() <= gi.len() { (&pi, &gi, false) } else { (&gi, &pi, true) };
    let n = large.len();
    if n == 0 {
        return 0.0;
    }
    let mut best = 0.0f64;
    let mut perm: Vec<usize> = (0..n).collect();
    permutations(&mut perm, 0, &mut |perm| {
        let mut total = 0.0;
        for (a, &j) in small.iter().zip(perm.iter()) {
            total += if flip { iou(large[j], *a) } else { iou(*a, large[j]) };
        }
        best = best.max(total);
    });
    best / n as f64
}

fn permutations(v: &mut Vec<usize>, start: usize, f: &mut dyn FnMut(&[usize])) {
    if start == v.len() {
        f(v);
        return;
    }
    for i in start..v.len() {
        v.swap(start, i);
        permutations(v, start + 1, f);
        v.swap(start, i);
    }
}

/// Exhaustive J: mean IoU over non-background gt objects under the best
/// injective matching from non-background predicted objects.
pub fn brute_force_j(pred: &LabelGrid, gt: &LabelGrid) -> f64 {
    let (p, g) = (pred.as_slice(), gt.as_slice());
    let pi: Vec<u16> = ids_of(p).into_iter().filter(|&l| l != pred.background_label).collect();
    let gi: Vec<u16> = ids_of(g).into_iter().filter(|&l| l != gt.background_label).collect();
    if gi.is_empty() {
        return if pi.is_empty() { 1.0 } else { 0.0 };
    }
    let iou = |a: u16, b: u16| -> f64 {
        let inter = (0..p.len()).filter(|&k| p[k] == a && g[k] == b).count();
        let uni = (0..p.len()).filter(|&k| p[k] == a || g[k] == b).count();
        inter as f64 / uni as f64
    };
    // pad predictions with "no match" slots so every gt can go unmatched
    let n = pi.len() + gi.len();
    let mut best = 0.0f64;
    let mut perm: Vec<usize> = (0..n).collect();
    permutations(&mut perm, 0, &mut |perm| {
        let total: f64 = gi
            .iter()
            .zip(perm.iter())
            .map(|(&b, &j)| if j < pi.len() { iou(pi[j], b) } else { 0.0 })
            .sum();
        best = best.max(total);
    });
    best / gi.len() as f64
}

/// ARI from the textbook pair-count formula.
pub fn ari_formula(pred: &[u16], gt: &[u16]) -> f64 {
    let c2 = |n: usize| (n * n.saturating_sub(1) / 2) as f64;
    let mut table: HashMap<(u16, u16), usize> = HashMap::new();
    let mut a: HashMap<u16, usize> = HashMap::new();
    let mut b: HashMap<u16, usize> = HashMap::new();
    for (&x, &y) in pred.iter().zip(gt) {
        *table.entry((x, y)).or_default() += 1;
        *a.entry(x).or_default() += 1;
        *b.entry(y).or_default() += 1;
    }
    let sum_ij: f64 = table.values().map(|&n| c2(n)).sum();
    let sum_a: f64 = a.values().map(|&n| c2(n)).sum();
    let sum_b: f64 = b.values().map(|&n| c2(n)).sum();
    let expected = sum_a * sum_b / c2(pred.len());
    (sum_ij - expected) / (0.5 * (sum_a + sum_b) - expected)
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Two-pass union-find component labeling. Returns per-pixel component ids
/// numbered in raster order of first appearance.
pub fn two_pass_components(labels: &[u16], w: usize, h: usize, eight: bool) -> Vec<usize> {
    let n = w * h;
    let mut parent: Vec<usize> = (0..n).collect();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let mut neigh = Vec::new();
            if x > 0 {
                neigh.push(p - 1);
            }
            if y > 0 {
                neigh.push(p - w);
                if eight && x > 0 {
                    neigh.push(p - w - 1);
                }
                if eight && x + 1 < w {
                    neigh.push(p - w + 1);
                }
            }
            for q in neigh {
                if labels[q] == labels[p] {
                    let (a, b) = (find(&mut parent, p), find(&mut parent, q));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut remap: HashMap<usize, usize> = HashMap::new();
    (0..n)
        .map(|p| {
            let root = find(&mut parent, p);
            let next = remap.len();
            *remap.entry(root).or_insert(next)
        })
        .collect()
}

/// Reference cleanup: keep the `k` biggest components of at least
/// `min_frac · N` pixels (ties to the earliest pixel), paint the rest with
/// the biggest component's label, repeat until stable.
pub fn reference_postprocess(labels: &LabelGrid, k: usize, min_frac: f64, eight: bool) -> Vec<u16> {
    let (w, h) = labels.dims();
    let mut cur = labels.as_slice().to_vec();
    loop {
        let comp = two_pass_components(&cur, w, h, eight);
        let count = comp.iter().max().map_or(0, |m| m + 1);
        let mut size = vec![0usize; count];
        let mut first = vec![usize::MAX; count];
        for (p, &c) in comp.iter().enumerate() {
            size[c] += 1;
            first[c] = first[c].min(p);
        }
        let mut order: Vec<usize> = (0..count).collect();
        order.sort_by_key(|&c| (std::cmp::Reverse(size[c]), first[c]));
        let mut keep = vec![false; count];
        for (rank, &c) in order.iter().enumerate() {
            keep[c] = rank == 0 || (rank < k && size[c] as f64 >= min_frac * (w * h) as f64);
        }
        let target = cur[first[order[0]]];
        let next: Vec<u16> = comp
            .iter()
            .zip(&cur)
            .map(|(&c, &l)| if keep[c] { l } else { target })
            .collect();
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

/// Minimal `.flo` reader written against the format description.
pub fn parse_flo_reference(bytes: &[u8]) -> Option<(u32, u32, Vec<f32>)> {
    let mut c = Cursor::new(bytes);
    let mut tag = [0u8; 4];
    c.read_exact(&mut tag).ok()?;
    if tag != [0x50, 0x49, 0x45, 0x48] {
        return None;
    }
    let mut word = [0u8; 4];
    c.read_exact(&mut word).ok()?;
    let w = u32::from_le_bytes(word);
    c.read_exact(&mut word).ok()?;
    let h = u32::from_le_bytes(word);
    let mut data = Vec::new();
    for _ in 0..(w as usize * h as usize * 2) {
        c.read_exact(&mut word).ok()?;
        data.push(f32::from_le_bytes(word));
    }
    Some((w, h, data))
}

pub fn random_labels(r: &mut ChaCha8Rng, w: usize, h: usize, max_label: u16) -> LabelGrid {
    LabelGrid::from_vec(w, h, (0..w * h).map(|_| r.random_range(0..=max_label)).collect()).unwrap()
}

/// Blocky random labels: a coarse grid of random ids upsampled by `cell`.
pub fn blocky_labels(r: &mut ChaCha8Rng, w: usize, h: usize, cell: usize, max_label: u16) -> LabelGrid {
    let cw = w.div_ceil(cell);
    let coarse: Vec<u16> = (0..cw * h.div_ceil(cell)).map(|_| r.random_range(0..=max_label)).collect();
    let g = Grid::from_fn(w, h, |u, v| coarse[(v / cell) * cw + u / cell]);
    LabelGrid::new(g, 0)
}
