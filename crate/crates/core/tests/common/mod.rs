//! Independent reference implementations shared by the integration tests and
//! the acceptance harness. None of these call into the library's geometry.

#![allow(dead_code)]

use std::collections::BTreeMap;

use anchorscope::{BBox, Dataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// IoU of two boxes given in tenths of a pixel, by counting covered
/// 0.1px cells.
pub fn raster_iou(a: [i64; 4], b: [i64; 4]) -> f64 {
    let x0 = a[0].min(b[0]);
    let y0 = a[1].min(b[1]);
    let x1 = (a[0] + a[2]).max(b[0] + b[2]);
    let y1 = (a[1] + a[3]).max(b[1] + b[3]);
    let inside = |r: [i64; 4], cx: i64, cy: i64| cx >= r[0] && cx < r[0] + r[2] && cy >= r[1] && cy < r[1] + r[3];
    let (mut inter, mut union) = (0u64, 0u64);
    for cy in y0..y1 {
        for cx in x0..x1 {
            let (ia, ib) = (inside(a, cx, cy), inside(b, cx, cy));
            inter += u64::from(ia && ib);
            union += u64::from(ia || ib);
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Exact IoU for integer-coordinate boxes `[x, y, w, h]`: integer
/// intersection and union, one division.
pub fn int_iou(a: [i64; 4], b: [i64; 4]) -> f64 {
    let iw = ((a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0])).max(0);
    let ih = ((a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1])).max(0);
    let inter = iw * ih;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    inter as f64 / union as f64
}

/// Minimum IoU of a side-`s` square against copies shifted by every
/// `(dx, dy)` on a `step` lattice of `[0, d/2]^2`.
pub fn brute_worst_case(s: f64, d: f64, step: f64) -> f64 {
    let n = ((d / 2.0) / step).round() as usize;
    let mut worst = f64::INFINITY;
    for i in 0..=n {
        let dx = i as f64 * step;
        let ow = (s - dx).max(0.0);
        for j in 0..=n {
            let dy = j as f64 * step;
            let inter = ow * (s - dy).max(0.0);
            worst = worst.min(inter / (2.0 * s * s - inter));
        }
    }
    worst
}

pub struct RefReport {
    pub per_class: BTreeMap<String, (f64, usize, f64)>,
    pub mabo: f64,
    pub recall: f64,
    pub best: Vec<f64>,
}

fn int_box(b: &BBox) -> [i64; 4] {
    let r = |v: f64| {
        assert_eq!(v, v.round(), "reference expects integer coordinates");
        v as i64
    };
    [r(b.x()), r(b.y()), r(b.w()), r(b.h())]
}

/// Average best overlap written out directly: loop over images in id
/// order, objects in file order, every proposal.
pub fn reference_coverage(ds: &Dataset, proposals: &BTreeMap<String, Vec<BBox>>, t: f64) -> RefReport {
    let mut imgs: Vec<_> = ds.images().iter().collect();
    imgs.sort_by(|a, b| a.image_id().cmp(b.image_id()));
    let mut sums: BTreeMap<String, (f64, usize, usize)> = BTreeMap::new();
    let mut best_all = Vec::new();
    let mut hits = 0;
    for img in imgs {
        let props = proposals.get(img.image_id()).cloned().unwrap_or_default();
        for obj in img.objects() {
            let mut best = 0.0f64;
            for p in &props {
                best = best.max(int_iou(int_box(&obj.bbox), int_box(p)));
            }
            let e = sums.entry(obj.class_name.clone()).or_default();
            e.0 += best;
            e.1 += 1;
            if best >= t {
                e.2 += 1;
                hits += 1;
            }
            best_all.push(best);
        }
    }
    let per_class: BTreeMap<String, (f64, usize, f64)> = sums
        .into_iter()
        .map(|(c, (s, n, h))| (c, (s / n as f64, n, h as f64 / n as f64)))
        .collect();
    let mabo = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().map(|v| v.0).sum::<f64>() / per_class.len() as f64
    };
    let recall = if best_all.is_empty() { 0.0 } else { hits as f64 / best_all.len() as f64 };
    RefReport {
        per_class,
        mabo,
        recall,
        best: best_all,
    }
}

/// Random dataset with integer boxes and matching integer proposals.
pub fn random_int_case(seed: u64) -> (Dataset, BTreeMap<String, Vec<BBox>>) {
    use anchorscope::{GroundtruthObject, ImageAnnotation};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = ["a", "b", "c"];
    let n_images = rng.gen_range(1..6);
    let mut images = Vec::new();
    let mut props = BTreeMap::new();
    for i in 0..n_images {
        let (w, h) = (rng.gen_range(60..200) as f64, rng.gen_range(60..200) as f64);
        let boxes = |rng: &mut ChaCha8Rng| {
            let bw = rng.gen_range(1..40) as f64;
            let bh = rng.gen_range(1..40) as f64;
            let x = rng.gen_range(0..(w - bw) as i64 + 1) as f64;
            let y = rng.gen_range(0..(h - bh) as i64 + 1) as f64;
            BBox::new(x, y, bw, bh).unwrap()
        };
        let objects: Vec<_> = (0..rng.gen_range(0..5))
            .map(|_| {
                let class = classes[rng.gen_range(0..classes.len())];
                GroundtruthObject::new(class, boxes(&mut rng)).unwrap()
            })
            .collect();
        let id = format!("img{i}");
        if rng.gen_bool(0.8) {
            let p: Vec<BBox> = (0..rng.gen_range(0..30)).map(|_| boxes(&mut rng)).collect();
            props.insert(id.clone(), p);
        }
        images.push(ImageAnnotation::new(id, w, h, objects).unwrap());
    }
    (Dataset::new("rand", images).unwrap(), props)
}

/// Greedy suppression by repeated linear scans for the best remaining box.
pub fn reference_nms(items: &[(BBox, f64)], threshold: f64) -> Vec<(BBox, f64)> {
    let mut pool: Vec<(usize, BBox, f64)> = items.iter().enumerate().map(|(i, &(b, s))| (i, b, s)).collect();
    let mut out = Vec::new();
    while !pool.is_empty() {
        let mut best = 0;
        for k in 1..pool.len() {
            let (p, q) = (&pool[k], &pool[best]);
            let pa = p.1.w() * p.1.h();
            let qa = q.1.w() * q.1.h();
            if p.2 > q.2 || (p.2 == q.2 && (pa > qa || (pa == qa && p.0 < q.0))) {
                best = k;
            }
        }
        let keep = pool.remove(best);
        pool.retain(|p| plain_iou(&keep.1, &p.1) < threshold);
        out.push((keep.1, keep.2));
    }
    out
}

/// IoU from corner coordinates.
pub fn plain_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x() + a.w()).min(b.x() + b.w()) - a.x().max(b.x());
    let ih = (a.y() + a.h()).min(b.y() + b.h()) - a.y().max(b.y());
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.w() * a.h() + b.w() * b.h() - inter)
}

/// Seeded random scored boxes; scores are drawn from a small set so ties
/// occur.
pub fn random_scored(seed: u64) -> Vec<(BBox, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rng.gen_range(0..60))
        .map(|_| {
            let b = BBox::new(
                rng.gen_range(0.0..150.0),
                rng.gen_range(0.0..150.0),
                rng.gen_range(2.0..60.0),
                rng.gen_range(2.0..60.0),
            )
            .unwrap();
            (b, rng.gen_range(0..25) as f64 / 25.0)
        })
        .collect()
}

/// One-sample Kolmogorov-Smirnov statistic of `samples` against
/// Uniform[a, b].
pub fn ks_uniform(samples: &[f64], a: f64, b: f64) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = ((x - a) / (b - a)).clamp(0.0, 1.0);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub mod cli {
    use std::fs;
    use std::path::{Path, PathBuf};
    use std::process::{Command, Output};

    use anchorscope::anchors::{AnchorSet, LevelMap};
    use anchorscope::coverage::{self, GridMode};
    use anchorscope::io;
    use anchorscope::proposals::ScoredBox;
    use anchorscope::synthetic::{self, SyntheticConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn bin() -> &'static str {
        env!("CARGO_BIN_EXE_anchorscope")
    }

    pub fn run<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
        Command::new(bin()).args(args).output().expect("spawn anchorscope")
    }

    pub struct Fixtures {
        pub annotations: PathBuf,
        pub proposals: PathBuf,
        pub voc: Vec<PathBuf>,
    }

    /// Synthetic annotations, anchor-derived proposals with random scores and
    /// a pair of VOC files, written under `dir`.
    pub fn write_fixtures(dir: &Path) -> Fixtures {
        let ds = synthetic::generate(&SyntheticConfig {
            n_images: 40,
            seed: 17,
            ..Default::default()
        })
        .unwrap();
        let annotations = dir.join("ann.json");
        fs::write(&annotations, io::write_annotations(&ds)).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let anchors = AnchorSet::preset("A_prop").unwrap();
        let mut sets = std::collections::BTreeMap::new();
        for img in ds.images().iter().take(12) {
            let grids = coverage::grids_for_image(
                img.width(),
                img.height(),
                &anchors,
                GridMode::Leveled(LevelMap::default()),
                true,
            )
            .unwrap();
            let mut boxes = Vec::new();
            for g in &grids {
                for a in g.enumerate() {
                    if !rng.gen_bool(0.004) {
                        continue;
                    }
                    let score = rng.gen_range(0..1000) as f64 / 1000.0;
                    boxes.push(ScoredBox::new(a.bbox, score).unwrap().at_level(g.level().name));
                }
            }
            sets.insert(img.image_id().to_string(), boxes);
        }
        let proposals = dir.join("props.csv");
        fs::write(&proposals, io::write_proposals(&sets)).unwrap();

        let voc = ["a", "b"]
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let path = dir.join(format!("{name}.xml"));
                let xml = format!(
                    "<annotation><filename>{name}.jpg</filename><size><width>320</width><height>240</height><depth>3</depth></size>\
                     <object><name>logo</name><bndbox><xmin>{}</xmin><ymin>11</ymin><xmax>60</xmax><ymax>70</ymax></bndbox></object></annotation>",
                    10 + k
                );
                fs::write(&path, xml).unwrap();
                path
            })
            .collect();
        Fixtures {
            annotations,
            proposals,
            voc,
        }
    }

    /// One invocation per subcommand (and per notable mode). `{DIR}` stands
    /// for a fresh output directory.
    pub fn invocations(f: &Fixtures) -> Vec<Vec<String>> {
        let ann = f.annotations.display().to_string();
        let props = f.proposals.display().to_string();
        let mut list: Vec<Vec<&str>> = vec![
            vec!["min-size", "--stride", "16", "--iou", "0.5"],
            vec!["worst-case", "--size", "44", "--stride", "16", "--verify"],
            vec!["anchor-set", "--min", "32", "--max", "256", "--iou", "0.5"],
            vec!["assign-levels", "--anchors", "A_paper"],
            vec!["grid-coverage", "--annotations", &ann, "--anchors", "A_prop"],
            vec!["grid-coverage", "--annotations", &ann, "--anchors", "A_ext", "--stride", "16", "--format", "csv"],
            vec!["eval-proposals", "--annotations", &ann, "--proposals", &props],
            vec!["nms", "--proposals", &props, "--threshold", "0.7"],
            vec!["nms", "--proposals", &props, "--hierarchical", "--top-n", "50"],
            vec!["partition", "--annotations", &ann],
            vec!["variants", "--annotations", &ann, "--kind", "test", "--out-dir", "{DIR}"],
            vec!["variants", "--annotations", &ann, "--kind", "train", "--min", "20", "--max", "60", "--seed", "3"],
            vec!["sweep", "--annotations", &ann, "--mode", "ideal"],
            vec!["sweep", "--annotations", &ann, "--mode", "grid", "--anchors", "A_prop"],
        ];
        let mut voc: Vec<&str> = vec!["voc-convert"];
        voc.extend(f.voc.iter().map(|p| p.to_str().unwrap()));
        list.push(voc);
        list.into_iter().map(|v| v.into_iter().map(String::from).collect()).collect()
    }

    /// Run `args` with `--threads n`, returning stdout, stderr and the
    /// contents of any `{DIR}` output directory, or the exit code on failure.
    pub fn capture(args: &[String], threads: usize, scratch: &Path) -> Result<Vec<u8>, i32> {
        let dir = scratch.join(format!("out-{threads}"));
        let _ = fs::remove_dir_all(&dir);
        let mut full: Vec<String> = args.iter().map(|a| a.replace("{DIR}", dir.to_str().unwrap())).collect();
        full.push("--threads".into());
        full.push(threads.to_string());
        let out = run(&full);
        if !out.status.success() {
            return Err(out.status.code().unwrap_or(-1));
        }
        let mut bytes = out.stdout;
        bytes.extend_from_slice(b"\n--stderr--\n");
        bytes.extend(out.stderr);
        if dir.exists() {
            let mut names: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
            names.sort();
            for p in names {
                bytes.extend(p.file_name().unwrap().to_str().unwrap().as_bytes());
                bytes.extend(fs::read(&p).unwrap());
            }
        }
        Ok(bytes)
    }
}
