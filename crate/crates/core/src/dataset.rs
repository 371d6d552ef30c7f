//! Annotation-level datasets, recursive partitioning into single-object
//! images, and size-targeted rescaling.
//!
//! Nothing here touches pixels; every transform acts on image extents and
//! groundtruth boxes only.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Relative slack allowed when checking that boxes sit inside their image.
const EXTENT_TOLERANCE: f64 = 1e-9;

/// Target sizes of the fixed-size test variants: 20, 30, ..., 120.
pub const TEST_VARIANT_SIZES: [u32; 11] = [20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120];

/// Size intervals of the four training variants.
pub const TRAIN_VARIANT_RANGES: [(f64, f64); 4] = [(20.0, 60.0), (40.0, 80.0), (60.0, 100.0), (80.0, 120.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct GroundtruthObject {
    pub class_name: String,
    pub bbox: BBox,
}

impl GroundtruthObject {
    pub fn new(class_name: impl Into<String>, bbox: BBox) -> Result<Self> {
        let class_name = class_name.into();
        if class_name.is_empty() {
            return Err(Error::arg("class", "class name must not be empty"));
        }
        Ok(Self { class_name, bbox })
    }
}

/// Where a derived image came from: the crop rectangle in source image
/// coordinates and the factor applied after cropping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    /// `[x, y, w, h]` in source coordinates.
    pub crop: [f64; 4],
    pub scale: f64,
}

impl Provenance {
    /// Map a box in local coordinates back to the source image.
    pub fn to_source(&self, local: &BBox) -> Result<BBox> {
        let f = self.scale;
        BBox::new(
            self.crop[0] + local.x() / f,
            self.crop[1] + local.y() / f,
            local.w() / f,
            local.h() / f,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnnotation {
    image_id: String,
    width: f64,
    height: f64,
    objects: Vec<GroundtruthObject>,
    provenance: Option<Provenance>,
}

impl ImageAnnotation {
    pub fn new(
        image_id: impl Into<String>,
        width: f64,
        height: f64,
        objects: Vec<GroundtruthObject>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        let invalid = |reason: String| Error::InvalidImage {
            image_id: image_id.clone(),
            reason,
        };
        if image_id.is_empty() {
            return Err(Error::arg("id", "image id must not be empty"));
        }
        if !(width.is_finite() && width > 0.0 && height.is_finite() && height > 0.0) {
            return Err(invalid(format!("extent {width}x{height} must be positive")));
        }
        let tol = EXTENT_TOLERANCE * width.max(height).max(1.0);
        for (k, obj) in objects.iter().enumerate() {
            if !obj.bbox.within_extent(width, height, tol) {
                return Err(invalid(format!(
                    "object {k} box {:?} exceeds image extent {width}x{height}",
                    obj.bbox.as_array()
                )));
            }
        }
        Ok(Self {
            image_id,
            width,
            height,
            objects,
            provenance: None,
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn objects(&self) -> &[GroundtruthObject] {
        &self.objects
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    /// Provenance, or the identity mapping onto this image itself.
    fn provenance_or_identity(&self) -> Provenance {
        self.provenance.clone().unwrap_or_else(|| Provenance {
            source_id: self.image_id.clone(),
            crop: [0.0, 0.0, self.width, self.height],
            scale: 1.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    images: Vec<ImageAnnotation>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Vec<ImageAnnotation>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(images.len());
        for img in &images {
            if !seen.insert(img.image_id.as_str()) {
                return Err(Error::DuplicateImage(img.image_id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            images,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn images(&self) -> &[ImageAnnotation] {
        &self.images
    }

    pub fn image(&self, id: &str) -> Option<&ImageAnnotation> {
        self.images.iter().find(|img| img.image_id == id)
    }

    pub fn n_objects(&self) -> usize {
        self.images.iter().map(|img| img.objects.len()).sum()
    }
}

/// Why objects were dropped during partitioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscardReason {
    /// Every pair of objects overlaps.
    NoPair,
    /// Non-overlapping pairs exist but every split crosses some object.
    NoValidAxes,
}

impl DiscardReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DiscardReason::NoPair => "no-pair",
            DiscardReason::NoValidAxes => "no-valid-axes",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscardRecord {
    pub image_id: String,
    /// Region whose objects were dropped, in the input image's coordinates.
    pub region: [f64; 4],
    pub n_objects: usize,
    pub reason: DiscardReason,
    /// True when the whole image was discarded.
    pub whole_image: bool,
}

/// A split that was applied: the vertical line `x` and horizontal line `y`
/// across `region`, all in the input image's coordinates. A missing line
/// means the region was only cut along the other axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitRecord {
    pub image_id: String,
    pub region: [f64; 4],
    pub x: Option<f64>,
    pub y: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partition {
    pub images: Vec<ImageAnnotation>,
    pub splits: Vec<SplitRecord>,
    pub discards: Vec<DiscardRecord>,
}

#[derive(Debug, Clone, Copy)]
struct Region {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Region {
    fn as_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1 - self.x0, self.y1 - self.y0]
    }
}

/// Split lines for a non-overlapping pair, through the midpoint of a
/// shortest connecting segment.
///
/// On an axis where the two projections overlap there is no cut: any line
/// there would cross both boxes.
fn split_lines(a: &BBox, b: &BBox) -> (Option<f64>, Option<f64>) {
    let mid_gap = |a0: f64, a1: f64, b0: f64, b1: f64| {
        if b0 >= a1 {
            Some((a1 + b0) / 2.0)
        } else if a0 >= b1 {
            Some((b1 + a0) / 2.0)
        } else {
            None
        }
    };
    (
        mid_gap(a.x(), a.right(), b.x(), b.right()),
        mid_gap(a.y(), a.bottom(), b.y(), b.bottom()),
    )
}

fn lines_clear(boxes: &[(usize, BBox)], x: Option<f64>, y: Option<f64>) -> bool {
    boxes.iter().all(|(_, b)| {
        x.is_none_or(|x| x < b.x() || x > b.right()) && y.is_none_or(|y| y < b.y() || y > b.bottom())
    })
}

#[derive(Default)]
struct PartitionState {
    leaves: Vec<(Region, usize)>,
    splits: Vec<(Region, Option<f64>, Option<f64>)>,
    discards: Vec<(Region, usize, DiscardReason)>,
}

fn partition_region(objects: Vec<(usize, BBox)>, region: Region, state: &mut PartitionState) -> bool {
    match objects.len() {
        0 => return true,
        1 => {
            state.leaves.push((region, objects[0].0));
            return true;
        }
        _ => {}
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for a in 0..objects.len() {
        for b in a + 1..objects.len() {
            let (ba, bb) = (&objects[a].1, &objects[b].1);
            if ba.intersection_area(bb) == 0.0 {
                pairs.push((ba.gap_distance(bb), a, b));
            }
        }
    }
    if pairs.is_empty() {
        state.discards.push((region, objects.len(), DiscardReason::NoPair));
        return false;
    }
    pairs.sort_by(|p, q| {
        q.0.partial_cmp(&p.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| (p.1, p.2).cmp(&(q.1, q.2)))
    });
    let chosen = pairs.iter().find_map(|&(_, a, b)| {
        let (x, y) = split_lines(&objects[a].1, &objects[b].1);
        ((x.is_some() || y.is_some()) && lines_clear(&objects, x, y)).then_some((x, y))
    });
    let Some((sx, sy)) = chosen else {
        state.discards.push((region, objects.len(), DiscardReason::NoValidAxes));
        return false;
    };
    state.splits.push((region, sx, sy));
    let xs: Vec<f64> = [Some(region.x0), sx, Some(region.x1)].into_iter().flatten().collect();
    let ys: Vec<f64> = [Some(region.y0), sy, Some(region.y1)].into_iter().flatten().collect();
    let mut cells: Vec<(Region, Vec<(usize, BBox)>)> = Vec::new();
    for yw in ys.windows(2) {
        for xw in xs.windows(2) {
            cells.push((Region { x0: xw[0], y0: yw[0], x1: xw[1], y1: yw[1] }, Vec::new()));
        }
    }
    for obj in objects {
        let (cx, cy) = obj.1.center();
        let col = usize::from(sx.is_some_and(|x| cx > x));
        let row = usize::from(sy.is_some_and(|y| cy > y));
        cells[row * (xs.len() - 1) + col].1.push(obj);
    }
    for (cell, bucket) in cells {
        partition_region(bucket, cell, state);
    }
    true
}

/// Recursively split `img` until every region holds a single object.
///
/// Images with zero objects yield nothing; single-object images pass through
/// unchanged. Regions that cannot be split lose their objects; when that
/// happens at the top level the whole image is dropped.
pub fn partition_image(img: &ImageAnnotation) -> Partition {
    let mut out = Partition::default();
    match img.objects.len() {
        0 => return out,
        1 => {
            out.images.push(img.clone());
            return out;
        }
        _ => {}
    }
    let full = Region {
        x0: 0.0,
        y0: 0.0,
        x1: img.width,
        y1: img.height,
    };
    let objects: Vec<(usize, BBox)> = img.objects.iter().map(|o| o.bbox).enumerate().collect();
    let n = objects.len();
    let mut state = PartitionState::default();
    let whole = !partition_region(objects, full, &mut state);

    out.discards = state
        .discards
        .iter()
        .map(|&(r, n_objects, reason)| DiscardRecord {
            image_id: img.image_id.clone(),
            region: r.as_array(),
            n_objects: if whole { n } else { n_objects },
            reason,
            whole_image: whole,
        })
        .collect();
    if whole {
        return out;
    }
    out.splits = state
        .splits
        .iter()
        .map(|&(r, x, y)| SplitRecord {
            image_id: img.image_id.clone(),
            region: r.as_array(),
            x,
            y,
        })
        .collect();

    let parent = img.provenance_or_identity();
    for (k, (region, obj_idx)) in state.leaves.into_iter().enumerate() {
        let obj = &img.objects[obj_idx];
        let local = BBox::new(
            obj.bbox.x() - region.x0,
            obj.bbox.y() - region.y0,
            obj.bbox.w(),
            obj.bbox.h(),
        )
        .expect("translated valid box");
        let f = parent.scale;
        let provenance = Provenance {
            source_id: parent.source_id.clone(),
            crop: [
                parent.crop[0] + region.x0 / f,
                parent.crop[1] + region.y0 / f,
                (region.x1 - region.x0) / f,
                (region.y1 - region.y0) / f,
            ],
            scale: f,
        };
        let child = ImageAnnotation {
            image_id: format!("{}#{k}", img.image_id),
            width: region.x1 - region.x0,
            height: region.y1 - region.y0,
            objects: vec![GroundtruthObject {
                class_name: obj.class_name.clone(),
                bbox: local,
            }],
            provenance: Some(provenance),
        };
        out.images.push(child);
    }
    out
}

/// Partition every image of `ds`, keeping input order.
pub fn partition_dataset(ds: &Dataset) -> Result<(Dataset, Vec<SplitRecord>, Vec<DiscardRecord>)> {
    let parts: Vec<Partition> = ds.images.par_iter().map(partition_image).collect();
    let mut images = Vec::new();
    let mut splits = Vec::new();
    let mut discards = Vec::new();
    for p in parts {
        images.extend(p.images);
        splits.extend(p.splits);
        discards.extend(p.discards);
    }
    let out = Dataset::new(format!("{}-partitioned", ds.name), images)?;
    Ok((out, splits, discards))
}

/// Scale a single-object image so the object's side (square root of its area)
/// equals `target`.
pub fn rescale_to_target(img: &ImageAnnotation, target: f64) -> Result<ImageAnnotation> {
    if img.objects.len() != 1 {
        return Err(Error::InvalidImage {
            image_id: img.image_id.clone(),
            reason: format!("rescaling needs exactly one object, found {}", img.objects.len()),
        });
    }
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::arg("target", format!("{target} must be > 0")));
    }
    let obj = &img.objects[0];
    let f = target / obj.bbox.side();
    let mut provenance = img.provenance_or_identity();
    provenance.scale *= f;
    Ok(ImageAnnotation {
        image_id: img.image_id.clone(),
        width: img.width * f,
        height: img.height * f,
        objects: vec![GroundtruthObject {
            class_name: obj.class_name.clone(),
            bbox: obj.bbox.scale(f)?,
        }],
        provenance: Some(provenance),
    })
}

/// One fixed-size variant of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeVariant {
    pub size: f64,
    pub dataset: Dataset,
}

/// Partition `ds` and rescale the survivors to every size in
/// [`TEST_VARIANT_SIZES`].
pub fn make_test_variants(ds: &Dataset) -> Result<(Vec<SizeVariant>, Vec<DiscardRecord>)> {
    let (parts, _, discards) = partition_dataset(ds)?;
    let variants = TEST_VARIANT_SIZES
        .iter()
        .map(|&x| {
            let images = parts
                .images
                .par_iter()
                .map(|img| rescale_to_target(img, x as f64))
                .collect::<Result<Vec<_>>>()?;
            Ok(SizeVariant {
                size: x as f64,
                dataset: Dataset::new(format!("F_test,{x}"), images)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((variants, discards))
}

/// Partition `ds` and rescale each survivor to a side drawn uniformly from
/// `[a, b]`. The draw sequence depends only on `seed` and survivor order.
pub fn make_train_variant(ds: &Dataset, a: f64, b: f64, seed: u64) -> Result<(Dataset, Vec<DiscardRecord>)> {
    if !(a.is_finite() && b.is_finite() && 0.0 < a && a < b) {
        return Err(Error::arg("range", format!("need 0 < a < b, got [{a}, {b}]")));
    }
    let (parts, _, discards) = partition_dataset(ds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<f64> = (0..parts.images.len()).map(|_| rng.gen_range(a..=b)).collect();
    let images = parts
        .images
        .par_iter()
        .zip(targets.par_iter())
        .map(|(img, &t)| rescale_to_target(img, t))
        .collect::<Result<Vec<_>>>()?;
    let name = format!("F_train,{},{}", crate::anchors::format_scale(a), crate::anchors::format_scale(b));
    Ok((Dataset::new(name, images)?, discards))
}
