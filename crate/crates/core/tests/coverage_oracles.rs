mod common;

use std::collections::BTreeMap;

use anchorscope::anchors::{AnchorGrid, AnchorSet, FeatureLevel, LevelMap, LevelName};
use anchorscope::coverage::{self, GridMode, GridOptions, SweepMode};
use anchorscope::dataset;
use anchorscope::synthetic::{self, SyntheticConfig};
use anchorscope::{BBox, Dataset, GroundtruthObject, ImageAnnotation, IouThreshold, Stride};

fn thr(t: f64) -> IouThreshold {
    IouThreshold::new(t).unwrap()
}

fn corpus(n: usize, seed: u64) -> Dataset {
    synthetic::generate(&SyntheticConfig {
        n_images: n,
        seed,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn evaluate_boxes_matches_reference() {
    for seed in 0..300 {
        let (ds, props) = common::random_int_case(seed);
        let got = coverage::evaluate_boxes(&ds, &props, thr(0.5)).unwrap();
        let want = common::reference_coverage(&ds, &props, 0.5);
        assert_eq!(got.mabo, want.mabo, "seed {seed}");
        assert_eq!(got.recall, want.recall, "seed {seed}");
        assert_eq!(got.per_class.len(), want.per_class.len());
        for (c, s) in &got.per_class {
            assert_eq!((s.abo, s.n_gt, s.recall), want.per_class[c]);
        }
        let best: Vec<f64> = got.per_gt.iter().map(|g| g.best_iou).collect();
        assert_eq!(best, want.best);
    }
}

#[test]
fn groundtruth_as_proposals_is_perfect() {
    let ds = corpus(40, 2);
    let props: BTreeMap<String, Vec<BBox>> = ds
        .images()
        .iter()
        .map(|i| (i.image_id().to_string(), i.objects().iter().map(|o| o.bbox).collect()))
        .collect();
    let r = coverage::evaluate_boxes(&ds, &props, thr(0.5)).unwrap();
    assert_eq!(r.mabo, 1.0);
    assert_eq!(r.recall, 1.0);
}

#[test]
fn grid_search_matches_exhaustive_enumeration() {
    let ds = corpus(25, 9);
    let anchors = AnchorSet::preset("A_paper").unwrap();
    for &clip in &[false, true] {
        for img in ds.images() {
            let grids = coverage::grids_for_image(
                img.width(),
                img.height(),
                &anchors,
                GridMode::Leveled(LevelMap::default()),
                clip,
            )
            .unwrap();
            for obj in img.objects() {
                let fast = grids.iter().map(|g| g.best_iou(&obj.bbox).iou).fold(0.0, f64::max);
                let slow = grids
                    .iter()
                    .flat_map(|g| g.enumerate())
                    .map(|a| common::plain_iou(&a.bbox, &obj.bbox))
                    .fold(0.0, f64::max);
                assert!((fast - slow).abs() < 1e-12, "{} {:?}", img.image_id(), obj.bbox);
            }
        }
    }
}

#[test]
fn more_scales_never_lower_coverage() {
    let ds = corpus(60, 4);
    let opts = GridOptions {
        mode: GridMode::Leveled(LevelMap::default()),
        threshold: thr(0.5),
        clip_to_image: false,
    };
    let prop = coverage::evaluate_grid(&ds, &AnchorSet::preset("A_prop").unwrap(), opts).unwrap();
    let full = coverage::evaluate_grid(&ds, &AnchorSet::preset("A_paper").unwrap(), opts).unwrap();
    for (a, b) in prop.per_gt.iter().zip(&full.per_gt) {
        assert!(b.best_iou >= a.best_iou);
    }
    assert!(full.mabo >= prop.mabo);
}

#[test]
fn image_order_does_not_change_the_report() {
    let ds = corpus(50, 6);
    let mut rev: Vec<ImageAnnotation> = ds.images().to_vec();
    rev.reverse();
    let rev = Dataset::new(ds.name(), rev).unwrap();
    let anchors = AnchorSet::preset("A_prop").unwrap();
    let opts = GridOptions {
        mode: GridMode::Flat(Stride::new(16.0).unwrap()),
        threshold: thr(0.5),
        clip_to_image: false,
    };
    let a = coverage::evaluate_grid(&ds, &anchors, opts).unwrap();
    let b = coverage::evaluate_grid(&rev, &anchors, opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn halving_the_stride_can_lower_a_single_match() {
    // An object sitting exactly on a d=16 anchor loses that perfect match when
    // the centers move to the d=8 lattice: centers sit at (i + 1/2) d.
    let gt = BBox::from_center(72.0, 72.0, 64.0, 64.0).unwrap();
    let spec = vec![anchorscope::AnchorSpec::square(64.0).unwrap()];
    let coarse = AnchorGrid::new(400.0, 400.0, FeatureLevel::new(LevelName::Conv5, Stride::new(16.0).unwrap()), spec.clone()).unwrap();
    let fine = AnchorGrid::new(400.0, 400.0, FeatureLevel::new(LevelName::Conv5, Stride::new(8.0).unwrap()), spec).unwrap();
    assert_eq!(coarse.best_iou(&gt).iou, 1.0);
    assert!(fine.best_iou(&gt).iou < 1.0);
}

#[test]
fn halving_the_stride_helps_on_average() {
    let ds = corpus(150, 8);
    let anchors = AnchorSet::preset("A_paper").unwrap();
    let mabo = |d: f64| {
        coverage::evaluate_grid(
            &ds,
            &anchors,
            GridOptions {
                mode: GridMode::Flat(Stride::new(d).unwrap()),
                threshold: thr(0.5),
                clip_to_image: false,
            },
        )
        .unwrap()
        .mabo
    };
    assert!(mabo(8.0) >= mabo(16.0));
    assert!(mabo(16.0) >= mabo(32.0));
}

#[test]
fn ideal_sweep_peaks_at_the_nearest_size() {
    let (variants, _) = dataset::make_test_variants(&corpus(120, 1)).unwrap();
    let anchors = AnchorSet::preset("A_paper").unwrap();
    let ideal = coverage::size_sweep(&variants, &anchors, SweepMode::Ideal).unwrap();
    let grid = coverage::size_sweep(&variants, &anchors, SweepMode::Grid(GridMode::Leveled(LevelMap::default()))).unwrap();
    for (ci, cg) in ideal.iter().zip(&grid) {
        let nearest = variants
            .iter()
            .map(|v| v.size)
            .min_by(|a, b| (a / ci.anchor_scale).ln().abs().partial_cmp(&(b / ci.anchor_scale).ln().abs()).unwrap())
            .unwrap();
        let peak = ci.points.iter().max_by(|a, b| a.mabo.partial_cmp(&b.mabo).unwrap()).unwrap();
        assert_eq!(peak.object_size, nearest, "scale {}", ci.anchor_scale);
        for (pi, pg) in ci.points.iter().zip(&cg.points) {
            assert!(pi.mabo >= pg.mabo - 1e-12);
        }
    }
}

#[test]
fn square_ideal_curve_is_inverse_square_ratio() {
    let img = ImageAnnotation::new(
        "sq",
        200.0,
        200.0,
        vec![GroundtruthObject::new("x", BBox::new(10.0, 10.0, 50.0, 50.0).unwrap()).unwrap()],
    )
    .unwrap();
    let ds = Dataset::new("sq", vec![img]).unwrap();
    let (variants, _) = dataset::make_test_variants(&ds).unwrap();
    let anchors = AnchorSet::explicit(vec![64.0]).unwrap().quadratic();
    let curve = &coverage::size_sweep(&variants, &anchors, SweepMode::Ideal).unwrap()[0];
    for p in &curve.points {
        let r = p.object_size.min(64.0) / p.object_size.max(64.0);
        assert!((p.mabo - r * r).abs() < 1e-12);
    }
}
