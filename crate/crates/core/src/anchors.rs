//! Anchor sets, strided anchor grids and the mapping from anchor scale to
//! feature level.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{concentric_iou, BBox, IouThreshold, Shape, Stride};

/// Slack added before flooring synthesized scales so that values such as
/// `63.99999999` land on 64.
const FLOOR_SLACK: f64 = 1e-9;

/// Default aspect ratios (w/h).
pub const DEFAULT_ASPECTS: [f64; 3] = [0.5, 1.0, 2.0];

/// Anchor scale / aspect pair. The realized box keeps the area at `scale²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorSpec {
    scale: f64,
    aspect: f64,
}

impl AnchorSpec {
    pub fn new(scale: f64, aspect: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::arg("scale", format!("{scale} must be > 0")));
        }
        if !(aspect.is_finite() && aspect > 0.0) {
            return Err(Error::arg("aspect", format!("{aspect} must be > 0")));
        }
        Ok(Self { scale, aspect })
    }

    pub fn square(scale: f64) -> Result<Self> {
        Self::new(scale, 1.0)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn aspect(&self) -> f64 {
        self.aspect
    }

    pub fn width(&self) -> f64 {
        self.scale * self.aspect.sqrt()
    }

    pub fn height(&self) -> f64 {
        self.scale / self.aspect.sqrt()
    }

    pub fn shape(&self) -> Shape {
        Shape {
            w: self.width(),
            h: self.height(),
        }
    }
}

/// How the scales of an [`AnchorSet`] were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Neighboring scales differ by `1/sqrt(t)`.
    Geometric,
    PowersOfTwo,
    Explicit,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(Scheme::Geometric),
            "powers-of-two" | "powers_of_two" | "pow2" => Ok(Scheme::PowersOfTwo),
            "explicit" => Ok(Scheme::Explicit),
            other => Err(Error::arg("scheme", format!("unknown scheme `{other}`"))),
        }
    }
}

/// Ordered anchor scales combined with a list of aspect ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    scales: Vec<f64>,
    aspects: Vec<f64>,
    scheme: Scheme,
}

impl AnchorSet {
    pub fn new(scales: Vec<f64>, aspects: Vec<f64>, scheme: Scheme) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::arg("scales", "anchor set must not be empty"));
        }
        if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::arg("scales", format!("scale {s} must be > 0")));
        }
        if scales.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::arg("scales", "scales must be strictly increasing"));
        }
        if aspects.is_empty() {
            return Err(Error::arg("aspects", "at least one aspect ratio is required"));
        }
        if let Some(a) = aspects.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::arg("aspects", format!("aspect {a} must be > 0")));
        }
        Ok(Self {
            scales,
            aspects,
            scheme,
        })
    }

    pub fn explicit(scales: Vec<f64>) -> Result<Self> {
        Self::new(scales, DEFAULT_ASPECTS.to_vec(), Scheme::Explicit)
    }

    /// Named preset: `A_paper`, `A_prop`, `A_ext` or `A_orig`.
    pub fn preset(name: &str) -> Option<Self> {
        let scales: &[f64] = match name {
            "A_paper" => &[32.0, 45.0, 64.0, 90.0, 128.0, 181.0, 256.0],
            "A_prop" => &[32.0, 45.0, 64.0, 90.0, 128.0, 256.0],
            "A_ext" => &[32.0, 64.0, 128.0, 256.0],
            "A_orig" => &[128.0, 256.0, 512.0],
            _ => return None,
        };
        let scheme = match name {
            "A_ext" | "A_orig" => Scheme::PowersOfTwo,
            "A_paper" => Scheme::Geometric,
            _ => Scheme::Explicit,
        };
        Some(Self {
            scales: scales.to_vec(),
            aspects: DEFAULT_ASPECTS.to_vec(),
            scheme,
        })
    }

    pub const PRESETS: [&'static str; 4] = ["A_paper", "A_prop", "A_ext", "A_orig"];

    pub fn with_aspects(self, aspects: Vec<f64>) -> Result<Self> {
        Self::new(self.scales, aspects, self.scheme)
    }

    /// Same scales with a single square aspect.
    pub fn quadratic(self) -> Self {
        Self {
            aspects: vec![1.0],
            ..self
        }
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn aspects(&self) -> &[f64] {
        &self.aspects
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Specs for one scale, one per aspect in declared order.
    pub fn specs_for_scale(&self, scale: f64) -> Vec<AnchorSpec> {
        self.aspects
            .iter()
            .map(|&a| AnchorSpec { scale, aspect: a })
            .collect()
    }

    /// All specs, scale-major.
    pub fn specs(&self) -> Vec<AnchorSpec> {
        self.scales
            .iter()
            .flat_map(|&s| self.specs_for_scale(s))
            .collect()
    }

    /// Comma-separated scale list; integral scales print without decimals.
    pub fn scales_csv(&self) -> String {
        self.scales
            .iter()
            .map(|s| format_scale(*s))
            .collect::<Vec<_>>()
            .join(",")
    }
}

pub(crate) fn format_scale(s: f64) -> String {
    if s.fract() == 0.0 && s.abs() < 1e15 {
        format!("{}", s as i64)
    } else {
        format!("{s:.6}")
    }
}

/// Build an anchor set from `s_min` up to `s_max`.
///
/// The geometric scheme floors `s_min · t^(-k/2)`; powers of two double from
/// `s_min`. Generation stops at the last scale not exceeding `s_max`.
pub fn synthesize_anchor_set(
    s_min: f64,
    s_max: f64,
    t: IouThreshold,
    scheme: Scheme,
) -> Result<AnchorSet> {
    if !(s_min.is_finite() && s_min > 0.0) {
        return Err(Error::arg("s_min", format!("{s_min} must be > 0")));
    }
    if !(s_max.is_finite() && s_max >= s_min) {
        return Err(Error::arg("s_max", format!("{s_max} must be >= s_min ({s_min})")));
    }
    let ratio = match scheme {
        Scheme::Geometric => 1.0 / t.get().sqrt(),
        Scheme::PowersOfTwo => 2.0,
        Scheme::Explicit => {
            return Err(Error::arg(
                "scheme",
                "explicit anchor sets are constructed from a scale list, not synthesized",
            ))
        }
    };
    let mut scales: Vec<f64> = Vec::new();
    for k in 0.. {
        let s = (s_min * ratio.powi(k) + FLOOR_SLACK).floor();
        if s > s_max {
            break;
        }
        // flooring can collapse neighbors for tiny s_min
        if scales.last().is_none_or(|&last| s > last) && s > 0.0 {
            scales.push(s);
        }
    }
    if scales.is_empty() {
        return Err(Error::arg("s_min", format!("no positive integral scale in [{s_min}, {s_max}]")));
    }
    AnchorSet::new(scales, DEFAULT_ASPECTS.to_vec(), scheme)
}

/// Feature maps anchors can be attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelName {
    Conv3,
    Conv4,
    Conv5,
}

impl LevelName {
    pub const ALL: [LevelName; 3] = [LevelName::Conv3, LevelName::Conv4, LevelName::Conv5];

    pub fn as_str(self) -> &'static str {
        match self {
            LevelName::Conv3 => "conv3",
            LevelName::Conv4 => "conv4",
            LevelName::Conv5 => "conv5",
        }
    }

    pub fn default_stride(self) -> Stride {
        let d = match self {
            LevelName::Conv3 => 4.0,
            LevelName::Conv4 => 8.0,
            LevelName::Conv5 => 16.0,
        };
        Stride::new(d).expect("positive constant")
    }
}

impl fmt::Display for LevelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LevelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv3" => Ok(LevelName::Conv3),
            "conv4" => Ok(LevelName::Conv4),
            "conv5" => Ok(LevelName::Conv5),
            other => Err(Error::arg("level", format!("unknown level `{other}` (expected conv3, conv4 or conv5)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureLevel {
    pub name: LevelName,
    pub stride: Stride,
}

impl FeatureLevel {
    pub fn new(name: LevelName, stride: Stride) -> Self {
        Self { name, stride }
    }

    pub fn with_default_stride(name: LevelName) -> Self {
        Self::new(name, name.default_stride())
    }
}

/// Scale boundaries used by [`assign_level`].
pub const DEFAULT_LEVEL_BOUNDARIES: (f64, f64) = (45.0, 90.0);

/// Level for an anchor scale: conv3 up to and including the first boundary,
/// conv4 strictly below the second, conv5 from there on.
pub fn assign_level(scale: f64, boundaries: (f64, f64)) -> LevelName {
    if scale <= boundaries.0 {
        LevelName::Conv3
    } else if scale < boundaries.1 {
        LevelName::Conv4
    } else {
        LevelName::Conv5
    }
}

/// Per-level strides together with the scale boundaries that route anchors
/// to levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelMap {
    strides: [Stride; 3],
    boundaries: (f64, f64),
}

impl Default for LevelMap {
    fn default() -> Self {
        Self {
            strides: LevelName::ALL.map(LevelName::default_stride),
            boundaries: DEFAULT_LEVEL_BOUNDARIES,
        }
    }
}

impl LevelMap {
    pub fn new(strides: [f64; 3], boundaries: (f64, f64)) -> Result<Self> {
        let strides = [
            Stride::new(strides[0])?,
            Stride::new(strides[1])?,
            Stride::new(strides[2])?,
        ];
        if !(strides[0] < strides[1] && strides[1] < strides[2]) {
            return Err(Error::arg("strides", "level strides must increase strictly with depth"));
        }
        let (lo, hi) = boundaries;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
            return Err(Error::arg("boundaries", format!("need 0 < {lo} < {hi}")));
        }
        Ok(Self {
            strides,
            boundaries,
        })
    }

    pub fn stride(&self, level: LevelName) -> Stride {
        self.strides[level as usize]
    }

    pub fn boundaries(&self) -> (f64, f64) {
        self.boundaries
    }

    pub fn level_for(&self, scale: f64) -> FeatureLevel {
        let name = assign_level(scale, self.boundaries);
        FeatureLevel::new(name, self.stride(name))
    }
}

/// Dense placement of anchor specs over an image at one feature level.
///
/// Centers sit at `((i + ½)·d, (j + ½)·d)` for every `i, j` whose center lies
/// strictly inside the extent.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    width: f64,
    height: f64,
    level: FeatureLevel,
    specs: Vec<AnchorSpec>,
    clip_to_image: bool,
}

/// One enumerated anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub bbox: BBox,
    pub spec: AnchorSpec,
    pub spec_index: usize,
    /// Row-major index of the grid center.
    pub center_index: usize,
}

/// Best anchor for a groundtruth box. `anchor` is `None` when no anchor
/// overlaps the box at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMatch {
    pub iou: f64,
    pub anchor: Option<Anchor>,
}

impl AnchorGrid {
    pub fn new(width: f64, height: f64, level: FeatureLevel, specs: Vec<AnchorSpec>) -> Result<Self> {
        if !(width.is_finite() && width > 0.0 && height.is_finite() && height > 0.0) {
            return Err(Error::arg("extent", format!("{width}x{height} must be positive")));
        }
        Ok(Self {
            width,
            height,
            level,
            specs,
            clip_to_image: false,
        })
    }

    pub fn clipped(mut self, clip: bool) -> Self {
        self.clip_to_image = clip;
        self
    }

    pub fn level(&self) -> FeatureLevel {
        self.level
    }

    pub fn specs(&self) -> &[AnchorSpec] {
        &self.specs
    }

    pub fn stride(&self) -> f64 {
        self.level.stride.get()
    }

    /// Number of centers along x and y.
    pub fn centers_shape(&self) -> (usize, usize) {
        let count = |extent: f64| (extent / self.stride() - 0.5).ceil().max(0.0) as usize;
        (count(self.width), count(self.height))
    }

    pub fn n_centers(&self) -> usize {
        let (nx, ny) = self.centers_shape();
        nx * ny
    }

    fn center(&self, i: usize, j: usize) -> (f64, f64) {
        let d = self.stride();
        ((i as f64 + 0.5) * d, (j as f64 + 0.5) * d)
    }

    /// Anchor box at grid position `(i, j)` for spec `k`, or `None` when
    /// clipping leaves nothing.
    fn anchor_at(&self, i: usize, j: usize, k: usize) -> Option<Anchor> {
        let spec = self.specs[k];
        let (cx, cy) = self.center(i, j);
        let (w, h) = (spec.width(), spec.height());
        let (mut x0, mut y0, mut x1, mut y1) = (cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0);
        if self.clip_to_image {
            x0 = x0.max(0.0);
            y0 = y0.max(0.0);
            x1 = x1.min(self.width);
            y1 = y1.min(self.height);
            if x1 <= x0 || y1 <= y0 {
                return None;
            }
        }
        let bbox = BBox::from_corners(x0, y0, x1, y1).ok()?;
        let (nx, _) = self.centers_shape();
        Some(Anchor {
            bbox,
            spec,
            spec_index: k,
            center_index: j * nx + i,
        })
    }

    /// Every anchor in row-major center order, specs in declared order.
    pub fn enumerate(&self) -> impl Iterator<Item = Anchor> + '_ {
        let (nx, ny) = self.centers_shape();
        let n_specs = self.specs.len();
        (0..ny).flat_map(move |j| {
            (0..nx).flat_map(move |i| (0..n_specs).filter_map(move |k| self.anchor_at(i, j, k)))
        })
    }

    /// Highest-IoU anchor for `gt`. Ties go to the smallest center index, then
    /// to the earliest spec.
    ///
    /// Only centers close enough to overlap `gt` are visited.
    pub fn best_iou(&self, gt: &BBox) -> GridMatch {
        let (nx, ny) = self.centers_shape();
        let mut best = GridMatch {
            iou: 0.0,
            anchor: None,
        };
        if nx == 0 || ny == 0 {
            return best;
        }
        let d = self.stride();
        let (gcx, gcy) = gt.center();
        let window = |center: f64, reach: f64, n: usize| {
            let lo = ((center - reach) / d - 0.5).floor().max(0.0);
            let hi = ((center + reach) / d - 0.5).ceil().min((n - 1) as f64);
            if hi < lo {
                None
            } else {
                Some((lo as usize, hi as usize))
            }
        };
        let mut best_key = (usize::MAX, usize::MAX);
        for (k, spec) in self.specs.iter().enumerate() {
            let reach_x = (spec.width() + gt.w()) / 2.0 + d;
            let reach_y = (spec.height() + gt.h()) / 2.0 + d;
            let (Some((i0, i1)), Some((j0, j1))) = (window(gcx, reach_x, nx), window(gcy, reach_y, ny)) else {
                continue;
            };
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let Some(anchor) = self.anchor_at(i, j, k) else {
                        continue;
                    };
                    let v = anchor.bbox.iou(gt);
                    if v <= 0.0 {
                        continue;
                    }
                    let key = (anchor.center_index, k);
                    if v > best.iou || (v == best.iou && key < best_key) {
                        best = GridMatch {
                            iou: v,
                            anchor: Some(anchor),
                        };
                        best_key = key;
                    }
                }
            }
        }
        best
    }
}

/// Stride-free upper bound: IoU of `gt` with `spec` placed on its center.
pub fn best_ideal_iou(gt: &BBox, spec: &AnchorSpec) -> f64 {
    concentric_iou(gt.shape(), spec.shape())
}
