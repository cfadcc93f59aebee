//! Connected-component cleanup of hard label maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Grid, LabelGrid};

pub const DEFAULT_MIN_FRAC: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

/// One connected component: its source label, pixel count and the raster
/// index of its first pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub label: u16,
    pub size: usize,
    pub first: usize,
}

/// Labels connected components of equal-label pixels by flood fill.
///
/// Returns a component id per pixel and the components in raster order of
/// their first pixel.
pub fn connected_components(labels: &LabelGrid, connectivity: Connectivity) -> (Grid<u32>, Vec<Component>) {
    let (w, h) = labels.dims();
    let src = labels.as_slice();
    let mut ids = vec![u32::MAX; w * h];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    let offsets: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)],
    };
    for start in 0..w * h {
        if ids[start] != u32::MAX {
            continue;
        }
        let id = comps.len() as u32;
        let label = src[start];
        ids[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(p) = stack.pop() {
            size += 1;
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            for &(dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if ids[q] == u32::MAX && src[q] == label {
                    ids[q] = id;
                    stack.push(q);
                }
            }
        }
        comps.push(Component { label, size, first: start });
    }
    (Grid::from_vec(w, h, ids).expect("dims match"), comps)
}

fn single_pass(labels: &LabelGrid, k: usize, min_frac: f64, connectivity: Connectivity) -> LabelGrid {
    let (w, h) = labels.dims();
    let (ids, comps) = connected_components(labels, connectivity);
    if comps.is_empty() {
        return labels.clone();
    }
    let mut order: Vec<usize> = (0..comps.len()).collect();
    // size descending, then earliest first pixel
    order.sort_by(|&a, &b| comps[b].size.cmp(&comps[a].size).then(comps[a].first.cmp(&comps[b].first)));
    let threshold = min_frac * (w * h) as f64;
    let target = comps[order[0]].label;
    let mut keep = vec![false; comps.len()];
    for &c in order.iter().take(k) {
        if comps[c].size as f64 >= threshold {
            keep[c] = true;
        }
    }
    keep[order[0]] = true;
    let out: Vec<u16> = ids
        .as_slice()
        .iter()
        .zip(labels.as_slice())
        .map(|(&id, &l)| if keep[id as usize] { l } else { target })
        .collect();
    LabelGrid::from_vec(w, h, out).expect("dims match").with_background(labels.background_label)
}

/// Keeps the `k` largest connected components that cover at least
/// `min_frac` of the image and relabels every other component to the label
/// of the largest one.
///
/// Merged pixels can join neighbouring components, so the pass is repeated
/// until the map stops changing. Each repeat only converts pixels to the
/// dominant label, which bounds the loop and makes the result idempotent.
/// Components are ranked by size, ties broken by the earliest raster pixel.
pub fn postprocess_masks(
    labels: &LabelGrid,
    k: usize,
    min_frac: f64,
    connectivity: Connectivity,
) -> Result<LabelGrid> {
    if !(min_frac > 0.0 && min_frac < 1.0) {
        return Err(Error::ParamOutOfRange(format!("min_frac must be in (0, 1), got {min_frac}")));
    }
    if k == 0 {
        return Err(Error::ParamOutOfRange("k must be at least 1".into()));
    }
    let mut current = labels.clone();
    loop {
        let next = single_pass(&current, k, min_frac, connectivity);
        if next == current {
            return Ok(next);
        }
        current = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_when_all_large() {
        let g = LabelGrid::from_vec(4, 2, vec![1, 1, 2, 2, 1, 1, 2, 2]).unwrap();
        assert_eq!(postprocess_masks(&g, 2, 0.1, Connectivity::Four).unwrap(), g);
    }

    #[test]
    fn small_component_merges_into_largest() {
        let mut v = vec![1u16; 128 * 128];
        for y in 0..4 {
            for x in 0..4 {
                v[(10 + y) * 128 + 10 + x] = 2;
            }
        }
        let g = LabelGrid::from_vec(128, 128, v).unwrap();
        let out = postprocess_masks(&g, 6, DEFAULT_MIN_FRAC, Connectivity::Four).unwrap();
        assert!(out.as_slice().iter().all(|&l| l == 1));
    }

    #[test]
    fn extra_components_beyond_k() {
        // three separate blobs of label 2 and 3 in a sea of 1
        let g = LabelGrid::from_vec(7, 1, vec![1, 1, 1, 2, 1, 3, 1]).unwrap();
        let (_, comps) = connected_components(&g, Connectivity::Four);
        assert_eq!(comps.len(), 5);
        // ties among the 1-pixel blobs go to the earliest: '2' and the '1' at index 4 survive
        let out = postprocess_masks(&g, 3, 0.01, Connectivity::Four).unwrap();
        assert_eq!(out.as_slice(), &[1, 1, 1, 2, 1, 1, 1]);
        // with k = 2 the first pass leaves two runs of 1 around the '2', which then loses
        let out = postprocess_masks(&g, 2, 0.01, Connectivity::Four).unwrap();
        assert_eq!(out.as_slice(), &[1; 7]);
    }

    #[test]
    fn diagonal_connectivity_flag() {
        let g = LabelGrid::from_vec(2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(connected_components(&g, Connectivity::Four).1.len(), 4);
        assert_eq!(connected_components(&g, Connectivity::Eight).1.len(), 2);
    }

    #[test]
    fn rejects_bad_params() {
        let g = LabelGrid::from_vec(2, 2, vec![0; 4]).unwrap();
        assert!(postprocess_masks(&g, 1, 0.0, Connectivity::Four).is_err());
        assert!(postprocess_masks(&g, 0, 0.5, Connectivity::Four).is_err());
    }
}
