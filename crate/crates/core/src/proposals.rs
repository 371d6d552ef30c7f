//! Scored proposals, greedy non-maximum suppression and per-level NMS
//! followed by a merge.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::anchors::LevelName;
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Default number of proposals kept after merging.
pub const DEFAULT_TOP_N: usize = 2000;

/// Default suppression threshold.
pub const DEFAULT_NMS_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
    pub level: Option<LevelName>,
}

impl ScoredBox {
    pub fn new(bbox: BBox, score: f64) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::arg("score", format!("{score} is not finite")));
        }
        Ok(Self {
            bbox,
            score,
            level: None,
        })
    }

    pub fn at_level(mut self, level: LevelName) -> Self {
        self.level = Some(level);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub image_id: String,
    pub items: Vec<ScoredBox>,
}

impl ProposalSet {
    pub fn new(image_id: impl Into<String>, items: Vec<ScoredBox>) -> Result<Self> {
        let image_id = image_id.into();
        if image_id.is_empty() {
            return Err(Error::arg("image_id", "must not be empty"));
        }
        Ok(Self { image_id, items })
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold.is_finite() && threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::arg("threshold", format!("{threshold} must be in (0, 1]")))
    }
}

/// Score descending, then larger area, then earlier input position.
fn rank(items: &[ScoredBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        let (ia, ib) = (&items[a], &items[b]);
        ib.score
            .partial_cmp(&ia.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| ib.bbox.area().partial_cmp(&ia.bbox.area()).unwrap_or(Ordering::Equal))
            .then_with(|| a.cmp(&b))
    });
    order
}

/// Greedy NMS: keep the best remaining box, drop everything overlapping it
/// with IoU >= `threshold`, repeat. Output is in rank order.
pub fn nms(items: &[ScoredBox], threshold: f64) -> Result<Vec<ScoredBox>> {
    check_threshold(threshold)?;
    let order = rank(items);
    let mut kept: Vec<ScoredBox> = Vec::new();
    let mut suppressed = vec![false; order.len()];
    for (pos, &idx) in order.iter().enumerate() {
        if suppressed[pos] {
            continue;
        }
        let keep = items[idx];
        kept.push(keep);
        for (later, &other) in order.iter().enumerate().skip(pos + 1) {
            if !suppressed[later] && keep.bbox.iou(&items[other].bbox) >= threshold {
                suppressed[later] = true;
            }
        }
    }
    Ok(kept)
}

/// NMS within each level at `level_threshold`, then NMS over the merged
/// survivors at `merge_threshold`, truncated to `top_n`.
///
/// Survivors are concatenated in level order before the second pass.
pub fn hierarchical_merge_with(
    per_level: &BTreeMap<LevelName, Vec<ScoredBox>>,
    level_threshold: f64,
    merge_threshold: f64,
    top_n: usize,
) -> Result<Vec<ScoredBox>> {
    check_threshold(level_threshold)?;
    check_threshold(merge_threshold)?;
    if top_n == 0 {
        return Err(Error::arg("top_n", "must be >= 1"));
    }
    let mut merged = Vec::new();
    for items in per_level.values() {
        merged.extend(nms(items, level_threshold)?);
    }
    let mut out = nms(&merged, merge_threshold)?;
    out.truncate(top_n);
    Ok(out)
}

/// [`hierarchical_merge_with`] using the same threshold for both passes.
pub fn hierarchical_merge(
    per_level: &BTreeMap<LevelName, Vec<ScoredBox>>,
    threshold: f64,
    top_n: usize,
) -> Result<Vec<ScoredBox>> {
    hierarchical_merge_with(per_level, threshold, threshold, top_n)
}
