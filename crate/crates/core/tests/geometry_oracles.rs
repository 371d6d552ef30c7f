mod common;

use anchorscope::geometry::{self, BBox, IouThreshold, Stride};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tenth_box(rng: &mut ChaCha8Rng) -> [i64; 4] {
    [rng.gen_range(0..150), rng.gen_range(0..150), rng.gen_range(1..120), rng.gen_range(1..120)]
}

#[test]
fn iou_matches_rasterization() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let (a, b) = (tenth_box(&mut rng), tenth_box(&mut rng));
        let to_box = |r: [i64; 4]| BBox::new(r[0] as f64 / 10.0, r[1] as f64 / 10.0, r[2] as f64 / 10.0, r[3] as f64 / 10.0).unwrap();
        let got = geometry::iou(&to_box(a), &to_box(b));
        let want = common::raster_iou(a, b);
        assert!((got - want).abs() < 1e-9, "{a:?} {b:?}: {got} vs {want}");
    }
}

#[test]
fn touching_boxes_do_not_overlap() {
    let a = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
    let b = BBox::new(10.0, 0.0, 10.0, 10.0).unwrap();
    let c = BBox::new(10.0, 10.0, 5.0, 5.0).unwrap();
    assert_eq!(a.iou(&b), 0.0);
    assert_eq!(a.iou(&c), 0.0);
}

#[test]
fn worst_case_matches_brute_force() {
    for &d in &[4.0, 8.0, 16.0, 32.0] {
        let mut s = 24.0;
        while s <= 200.0 {
            let analytic = geometry::worst_case_displaced_iou(s, Stride::new(d).unwrap());
            let brute = common::brute_worst_case(s, d, 0.05);
            assert!((analytic - brute).abs() < 1e-3, "s={s} d={d}: {analytic} vs {brute}");
            s += 8.0;
        }
    }
}

#[test]
fn library_brute_force_agrees_with_oracle() {
    let d = Stride::new(16.0).unwrap();
    for &s in &[10.0, 30.0, 44.0, 120.0] {
        let lib = geometry::brute_force_worst_case(s, d, 0.1).unwrap();
        assert!((lib - common::brute_worst_case(s, 16.0, 0.1)).abs() < 1e-12);
    }
    assert!(geometry::brute_force_worst_case(30.0, d, 0.0).is_err());
}

#[test]
fn min_size_inverts_worst_case() {
    for &t in &[0.3, 0.5, 0.7] {
        for &d in &[4.0, 8.0, 16.0, 32.0] {
            let stride = Stride::new(d).unwrap();
            let s = geometry::min_detectable_size(stride, IouThreshold::new(t).unwrap());
            assert!((geometry::worst_case_displaced_iou(s, stride) - t).abs() < 1e-9);
            // just below the minimum the bound fails
            assert!(geometry::worst_case_displaced_iou(s - 0.01, stride) < t);
        }
    }
}

#[test]
fn min_size_values() {
    let t = IouThreshold::new(0.5).unwrap();
    let v16 = geometry::min_detectable_size(Stride::new(16.0).unwrap(), t);
    let v8 = geometry::min_detectable_size(Stride::new(8.0).unwrap(), t);
    // (d(t+1) + d*sqrt(2t(t+1))) / (2-2t) at t = 1/2 is d * (1.5 + sqrt(1.5))
    assert!((v16 - 16.0 * (1.5 + 1.5f64.sqrt())).abs() < 1e-12);
    assert!((v16 - 43.595918).abs() < 1e-6);
    assert!((v8 - 21.797959).abs() < 1e-6);
}

#[test]
fn halving_stride_never_lowers_the_worst_case_bound() {
    for s in (10..=300).map(f64::from) {
        for &d in &[4.0, 8.0, 16.0, 32.0] {
            let coarse = geometry::worst_case_displaced_iou(s, Stride::new(d).unwrap());
            let fine = geometry::worst_case_displaced_iou(s, Stride::new(d / 2.0).unwrap());
            assert!(fine >= coarse);
        }
    }
}

#[test]
fn aligned_scale_composes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let a: f64 = rng.gen_range(1.0..4.0);
        let b: f64 = rng.gen_range(1.0..4.0);
        let ab = geometry::aligned_scale_iou(a * b).unwrap();
        let prod = geometry::aligned_scale_iou(a).unwrap() * geometry::aligned_scale_iou(b).unwrap();
        assert!((ab - prod).abs() < 1e-12);
        // concentric squares of sides s and a*s
        let s = 37.0;
        let inner = BBox::from_center(0.0, 0.0, s, s).unwrap();
        let outer = BBox::from_center(0.0, 0.0, s * a, s * a).unwrap();
        assert!((inner.iou(&outer) - geometry::aligned_scale_iou(a).unwrap()).abs() < 1e-12);
    }
}
