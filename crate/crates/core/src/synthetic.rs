//! Seeded synthetic annotation corpora with a small-object size profile:
//! object sides are log-normal around 50px, so most fall inside 20-120px.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::dataset::{Dataset, GroundtruthObject, ImageAnnotation};
use crate::error::Result;
use crate::geometry::BBox;

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n_images: usize,
    pub seed: u64,
    /// Inclusive range of objects per image.
    pub objects_per_image: (usize, usize),
    pub image_width: (f64, f64),
    pub image_height: (f64, f64),
    /// Median object side in pixels.
    pub median_side: f64,
    /// Standard deviation of ln(side).
    pub log_sigma: f64,
    /// Sides are clamped into this range.
    pub side_bounds: (f64, f64),
    /// Aspect ratios (w/h) are drawn log-uniformly from this range.
    pub aspect_range: (f64, f64),
    pub classes: Vec<String>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_images: 200,
            seed: 0,
            objects_per_image: (1, 4),
            image_width: (500.0, 1024.0),
            image_height: (375.0, 768.0),
            median_side: 50.0,
            log_sigma: 0.45,
            side_bounds: (12.0, 300.0),
            aspect_range: (0.5, 2.0),
            classes: ["adidas", "cocacola", "ferrari", "google", "heineken"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Generate a corpus. Objects are placed uniformly, so some images contain
/// overlapping boxes.
pub fn generate(cfg: &SyntheticConfig) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let side_dist = LogNormal::new(cfg.median_side.ln(), cfg.log_sigma).expect("valid log-normal parameters");
    let (amin, amax) = (cfg.aspect_range.0.ln(), cfg.aspect_range.1.ln());
    let mut images = Vec::with_capacity(cfg.n_images);
    for i in 0..cfg.n_images {
        let width = uniform(&mut rng, cfg.image_width).round();
        let height = uniform(&mut rng, cfg.image_height).round();
        let n = rng.gen_range(cfg.objects_per_image.0..=cfg.objects_per_image.1);
        let mut objects = Vec::with_capacity(n);
        for _ in 0..n {
            let side = side_dist.sample(&mut rng).clamp(cfg.side_bounds.0, cfg.side_bounds.1);
            let aspect = uniform(&mut rng, (amin, amax)).exp();
            let w = (side * aspect.sqrt()).min(width);
            let h = (side / aspect.sqrt()).min(height);
            let x = uniform(&mut rng, (0.0, width - w));
            let y = uniform(&mut rng, (0.0, height - h));
            let class = &cfg.classes[rng.gen_range(0..cfg.classes.len())];
            objects.push(GroundtruthObject::new(class.clone(), BBox::new(x, y, w, h)?)?);
        }
        images.push(ImageAnnotation::new(format!("synth{i:05}"), width, height, objects)?);
    }
    Dataset::new(format!("synthetic-{}", cfg.seed), images)
}
