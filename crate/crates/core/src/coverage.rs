//! Perfect-classifier coverage: anchor labeling, average best overlap per
//! class, localization recall and object-size sweeps.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::{best_ideal_iou, AnchorGrid, AnchorSet, FeatureLevel, LevelMap, LevelName};
use crate::dataset::{Dataset, ImageAnnotation, SizeVariant};
pub use crate::dataset::GroundtruthObject;
use crate::error::{Error, Result};
use crate::geometry::{BBox, IouThreshold, Stride};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive,
    Negative,
}

/// Label each anchor of `grid`, in enumeration order: positive when its IoU
/// with some groundtruth box reaches `t`.
pub fn label_anchors(grid: &AnchorGrid, gts: &[GroundtruthObject], t: IouThreshold) -> Vec<AnchorLabel> {
    grid.enumerate()
        .map(|a| {
            let hit = gts.iter().any(|g| a.bbox.iou(&g.bbox) >= t.get());
            if hit {
                AnchorLabel::Positive
            } else {
                AnchorLabel::Negative
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub abo: f64,
    pub n_gt: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtMatch {
    pub image_id: String,
    #[serde(rename = "class")]
    pub class_name: String,
    pub gt: [f64; 4],
    pub best_iou: f64,
    pub best_box: Option<[f64; 4]>,
}

/// Coverage of a dataset by a set of proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub threshold: f64,
    pub per_class: BTreeMap<String, ClassStats>,
    /// Unweighted mean of per-class ABO over classes with groundtruth.
    pub mabo: f64,
    /// Fraction of all groundtruth boxes whose best IoU reaches `threshold`.
    pub recall: f64,
    pub n_gt: usize,
    pub per_gt: Vec<GtMatch>,
}

/// Best overlap for each object of one image, in object order.
type ImageMatches = Vec<(f64, Option<BBox>)>;

fn best_from_boxes(img: &ImageAnnotation, proposals: &[BBox]) -> ImageMatches {
    img.objects()
        .iter()
        .map(|obj| {
            let mut best = (0.0, None);
            for p in proposals {
                let v = obj.bbox.iou(p);
                if v > best.0 {
                    best = (v, Some(*p));
                }
            }
            best
        })
        .collect()
}

/// Assemble a report from per-image matches. Images are visited in sorted id
/// order so that sums are independent of how matches were computed.
fn build_report(dataset: &Dataset, matches: &[ImageMatches], t: IouThreshold) -> CoverageReport {
    let mut order: Vec<usize> = (0..dataset.images().len()).collect();
    order.sort_by(|&a, &b| dataset.images()[a].image_id().cmp(dataset.images()[b].image_id()));

    let mut sums: BTreeMap<String, (f64, usize, usize)> = BTreeMap::new();
    let mut per_gt = Vec::with_capacity(dataset.n_objects());
    let mut hits = 0usize;
    for idx in order {
        let img = &dataset.images()[idx];
        for (obj, &(best_iou, best_box)) in img.objects().iter().zip(&matches[idx]) {
            let hit = best_iou >= t.get();
            let e = sums.entry(obj.class_name.clone()).or_insert((0.0, 0, 0));
            e.0 += best_iou;
            e.1 += 1;
            e.2 += usize::from(hit);
            hits += usize::from(hit);
            per_gt.push(GtMatch {
                image_id: img.image_id().to_string(),
                class_name: obj.class_name.clone(),
                gt: obj.bbox.as_array(),
                best_iou,
                best_box: best_box.map(|b| b.as_array()),
            });
        }
    }
    let per_class: BTreeMap<String, ClassStats> = sums
        .into_iter()
        .map(|(c, (sum, n, hit))| {
            let stats = ClassStats {
                abo: sum / n as f64,
                n_gt: n,
                recall: hit as f64 / n as f64,
            };
            (c, stats)
        })
        .collect();
    let n_gt = per_gt.len();
    let mabo = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().map(|s| s.abo).sum::<f64>() / per_class.len() as f64
    };
    let recall = if n_gt == 0 { 0.0 } else { hits as f64 / n_gt as f64 };
    CoverageReport {
        threshold: t.get(),
        per_class,
        mabo,
        recall,
        n_gt,
        per_gt,
    }
}

/// Coverage of `dataset` by class-agnostic proposal boxes keyed by image id.
///
/// Images without an entry have no proposals.
pub fn evaluate_boxes(
    dataset: &Dataset,
    proposals: &BTreeMap<String, Vec<BBox>>,
    t: IouThreshold,
) -> Result<CoverageReport> {
    for id in proposals.keys() {
        if dataset.image(id).is_none() {
            return Err(Error::UnknownImage(id.clone()));
        }
    }
    let matches: Vec<ImageMatches> = dataset
        .images()
        .par_iter()
        .map(|img| {
            let props = proposals.get(img.image_id()).map(Vec::as_slice).unwrap_or(&[]);
            best_from_boxes(img, props)
        })
        .collect();
    Ok(build_report(dataset, &matches, t))
}

/// How anchor scales map to grid strides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridMode {
    /// Every scale on one grid with this stride.
    Flat(Stride),
    /// Scales routed to feature levels, each with its own stride.
    Leveled(LevelMap),
}

impl GridMode {
    fn level_for(&self, scale: f64) -> FeatureLevel {
        match self {
            GridMode::Flat(d) => FeatureLevel::new(LevelName::Conv5, *d),
            GridMode::Leveled(map) => map.level_for(scale),
        }
    }
}

/// Options for grid evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    pub mode: GridMode,
    pub threshold: IouThreshold,
    pub clip_to_image: bool,
}

/// Grids induced on an image of the given extent: one per feature level in
/// level order, with that level's scales in set order.
pub fn grids_for_image(width: f64, height: f64, anchors: &AnchorSet, mode: GridMode, clip: bool) -> Result<Vec<AnchorGrid>> {
    let mut by_level: BTreeMap<LevelName, (FeatureLevel, Vec<f64>)> = BTreeMap::new();
    for &s in anchors.scales() {
        let level = mode.level_for(s);
        by_level.entry(level.name).or_insert((level, Vec::new())).1.push(s);
    }
    by_level
        .into_values()
        .map(|(level, scales)| {
            let specs = scales.iter().flat_map(|&s| anchors.specs_for_scale(s)).collect();
            Ok(AnchorGrid::new(width, height, level, specs)?.clipped(clip))
        })
        .collect()
}

fn best_on_grids(grids: &[AnchorGrid], gt: &BBox) -> (f64, Option<BBox>) {
    let mut best = (0.0, None);
    for g in grids {
        let m = g.best_iou(gt);
        if m.iou > best.0 {
            best = (m.iou, m.anchor.map(|a| a.bbox));
        }
    }
    best
}

/// Upper bound on proposal coverage without box regression: every anchor of
/// the induced grids is treated as a proposal.
pub fn evaluate_grid(dataset: &Dataset, anchors: &AnchorSet, opts: GridOptions) -> Result<CoverageReport> {
    let matches = dataset
        .images()
        .par_iter()
        .map(|img| {
            let grids = grids_for_image(img.width(), img.height(), anchors, opts.mode, opts.clip_to_image)?;
            Ok(img.objects().iter().map(|o| best_on_grids(&grids, &o.bbox)).collect())
        })
        .collect::<Result<Vec<ImageMatches>>>()?;
    Ok(build_report(dataset, &matches, opts.threshold))
}

/// Placement model for a size sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepMode {
    /// Anchors restricted to the strided grid of the scale's level.
    Grid(GridMode),
    /// Each anchor placed concentrically on the object.
    Ideal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub object_size: f64,
    pub mabo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub anchor_scale: f64,
    pub points: Vec<SweepPoint>,
}

fn single_scale_mabo(ds: &Dataset, anchors: &AnchorSet, scale: f64, mode: SweepMode) -> Result<f64> {
    let single = AnchorSet::new(vec![scale], anchors.aspects().to_vec(), anchors.scheme())?;
    let t = IouThreshold::new(0.5)?;
    let report = match mode {
        SweepMode::Grid(grid_mode) => evaluate_grid(
            ds,
            &single,
            GridOptions {
                mode: grid_mode,
                threshold: t,
                clip_to_image: false,
            },
        )?,
        SweepMode::Ideal => {
            let specs = single.specs();
            let matches: Vec<ImageMatches> = ds
                .images()
                .par_iter()
                .map(|img| {
                    img.objects()
                        .iter()
                        .map(|o| {
                            let best = specs.iter().map(|s| best_ideal_iou(&o.bbox, s)).fold(0.0, f64::max);
                            (best, None)
                        })
                        .collect()
                })
                .collect();
            build_report(ds, &matches, t)
        }
    };
    Ok(report.mabo)
}

/// One curve per anchor scale: MABO on each size variant when only that
/// scale's anchors are available.
pub fn size_sweep(variants: &[SizeVariant], anchors: &AnchorSet, mode: SweepMode) -> Result<Vec<SweepCurve>> {
    if variants.is_empty() {
        return Err(Error::arg("variants", "at least one size variant is required"));
    }
    if variants.windows(2).any(|w| w[1].size <= w[0].size) {
        return Err(Error::arg("variants", "variant sizes must be strictly increasing"));
    }
    anchors
        .scales()
        .iter()
        .map(|&scale| {
            let points = variants
                .iter()
                .map(|v| {
                    Ok(SweepPoint {
                        object_size: v.size,
                        mabo: single_scale_mabo(&v.dataset, anchors, scale, mode)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepCurve {
                anchor_scale: scale,
                points,
            })
        })
        .collect()
}
