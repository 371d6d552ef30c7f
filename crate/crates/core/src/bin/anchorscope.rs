//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on bad input or usage, 2 when an internal
//! consistency check fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use anchorscope::anchors::{self, AnchorSet, LevelMap, LevelName, Scheme};
use anchorscope::coverage::{self, GridMode, GridOptions, SweepMode};
use anchorscope::dataset::{self, Dataset, DiscardRecord};
use anchorscope::geometry::{self, BBox, IouThreshold, Stride};
use anchorscope::io;
use anchorscope::proposals::{self, ScoredBox, DEFAULT_NMS_THRESHOLD, DEFAULT_TOP_N};

#[derive(Parser, Debug)]
#[command(name = "anchorscope", version)]
#[command(about = "Anchor geometry, proposal coverage and dataset partitioning for small-object detection")]
struct Cli {
    /// Worker threads for dataset-scale commands (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Write results here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Smallest square object a stride-d anchor grid can still match at IoU t.
    ///
    /// s_min = (d(t+1) + d*sqrt(2t(t+1))) / (2 - 2t), the side at which a
    /// scale-matched anchor displaced by d/2 along both axes reaches IoU t.
    MinSize {
        /// Grid stride d in pixels
        #[arg(long, default_value_t = 16.0)]
        stride: f64,
        /// IoU threshold t, 0 < t < 1
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
    },

    /// Worst-case IoU of a square object and a scale-matched anchor on a stride-d grid.
    ///
    /// IoU = (s - d/2)^2 / (s^2 + d*s - d^2/4), zero once s <= d/2. With
    /// --verify the closed form is checked against a brute-force minimum over
    /// displacements in [0, d/2]^2.
    WorstCase {
        /// Object side s in pixels
        #[arg(long)]
        size: f64,
        /// Grid stride d in pixels
        #[arg(long, default_value_t = 16.0)]
        stride: f64,
        /// Cross-check against brute-force displacement search
        #[arg(long)]
        verify: bool,
        /// Displacement step for --verify, in pixels
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },

    /// Synthesize an anchor scale set.
    ///
    /// geometric: s_k = floor(s_min * t^(-k/2)), so neighboring scales keep
    /// IoU >= t on each other's matched objects (aligned-box IoU = 1/alpha^2).
    /// powers-of-two: s_k = s_min * 2^k. Both stop at s_max.
    AnchorSet {
        #[arg(long, default_value_t = 32.0)]
        min: f64,
        #[arg(long, default_value_t = 256.0)]
        max: f64,
        /// IoU threshold t for the geometric progression
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, value_enum, default_value_t = SchemeArg::Geometric)]
        scheme: SchemeArg,
        /// Print a named preset instead (A_paper, A_prop, A_ext, A_orig)
        #[arg(long)]
        preset: Option<String>,
    },

    /// Map anchor scales to feature levels and strides.
    ///
    /// conv3 for scale <= first boundary, conv4 below the second, conv5 from
    /// the second boundary up (shared endpoints go to the shallower level).
    AssignLevels {
        #[command(flatten)]
        anchors: AnchorArgs,
        #[command(flatten)]
        levels: LevelArgs,
    },

    /// Perfect-classifier coverage of an annotation file by an anchor grid.
    ///
    /// Every anchor is a proposal; per object the best IoU is taken,
    /// ABO(c) = mean best IoU over class c, MABO = mean of ABO over classes.
    GridCoverage {
        #[arg(long)]
        annotations: PathBuf,
        #[command(flatten)]
        anchors: AnchorArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Threshold for recall and positive labels
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Clip anchors to the image and drop empty ones
        #[arg(long)]
        clip: bool,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },

    /// Coverage of an annotation file by externally produced proposals.
    ///
    /// ABO(c) = (1/|G_c|) * sum over g in G_c of max over proposals l of IoU(g, l);
    /// MABO is the unweighted mean over classes present in the annotations.
    EvalProposals {
        #[arg(long)]
        annotations: PathBuf,
        /// Proposal CSV: image_id,score,x,y,w,h[,level]
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },

    /// Greedy non-maximum suppression per image.
    ///
    /// Boxes are ranked by score (ties: larger area, then file order) and any
    /// box with IoU >= threshold against a kept box is dropped. With
    /// --hierarchical, NMS runs within each level, survivors are merged, NMS
    /// runs again and the top N are kept.
    Nms {
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long, default_value_t = DEFAULT_NMS_THRESHOLD)]
        threshold: f64,
        /// Per-level NMS followed by a merge (requires the level column)
        #[arg(long)]
        hierarchical: bool,
        /// Threshold of the merge pass (default: --threshold)
        #[arg(long)]
        merge_threshold: Option<f64>,
        /// Proposals kept per image (hierarchical default 2000; flat: unlimited)
        #[arg(long)]
        top_n: Option<usize>,
    },

    /// Split multi-object images into single-object images.
    ///
    /// Picks the farthest-apart pair of non-overlapping objects whose split
    /// lines cross no object, cuts the region along them and recurses.
    /// Unsplittable regions are dropped and reported on stderr.
    Partition {
        #[arg(long)]
        annotations: PathBuf,
    },

    /// Build size-controlled dataset variants.
    ///
    /// test: partition, then rescale every object so sqrt(area) = x for
    /// x in {20, 30, ..., 120}, one file per x in --out-dir.
    /// train: partition, then rescale to sqrt(area) ~ Uniform[min, max].
    Variants {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, value_enum)]
        kind: VariantKind,
        /// Smallest object side for train variants
        #[arg(long, default_value_t = 20.0)]
        min: f64,
        /// Largest object side for train variants
        #[arg(long, default_value_t = 120.0)]
        max: f64,
        /// Seed for train-variant size draws
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the test variant files
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },

    /// MABO per anchor scale across object sizes 20..120px.
    ///
    /// The annotations are partitioned and rescaled to each size; for every
    /// anchor scale, MABO is computed with only that scale's anchors, either
    /// on the strided grid (grid) or placed concentrically (ideal, where the
    /// square case reduces to IoU = 1/alpha^2).
    Sweep {
        #[arg(long)]
        annotations: PathBuf,
        #[command(flatten)]
        anchors: AnchorArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value_t = SweepArg::Ideal)]
        mode: SweepArg,
    },

    /// Convert VOC-style XML annotations into the annotation JSON format.
    VocConvert {
        /// XML files, one per image
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Dataset name stored in the output
        #[arg(long, default_value = "voc")]
        name: String,
    },
}

#[derive(Args, Debug)]
struct AnchorArgs {
    /// Preset name (A_paper, A_prop, A_ext, A_orig) or comma-separated scales
    #[arg(long, default_value = "A_paper")]
    anchors: String,
    /// Comma-separated aspect ratios w/h
    #[arg(long, default_value = "0.5,1,2")]
    aspects: String,
}

#[derive(Args, Debug)]
struct LevelArgs {
    /// conv3,conv4,conv5 strides
    #[arg(long, default_value = "4,8,16")]
    strides: String,
    /// Scale boundaries between conv3/conv4 and conv4/conv5
    #[arg(long, default_value = "45,90")]
    boundaries: String,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Single grid stride for all scales (default: per-level strides)
    #[arg(long, conflicts_with = "strides")]
    stride: Option<f64>,
    #[command(flatten)]
    levels: LevelArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SchemeArg {
    Geometric,
    PowersOfTwo,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Format {
    Json,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum VariantKind {
    Test,
    Train,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SweepArg {
    Ideal,
    Grid,
}

enum Failure {
    Input(String),
    Internal(String),
}

impl From<anchorscope::Error> for Failure {
    fn from(e: anchorscope::Error) -> Self {
        if e.is_internal() {
            Failure::Internal(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn input(msg: impl Into<String>) -> Failure {
    Failure::Input(msg.into())
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    let bytes = read(path)?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    io::parse_annotations(&bytes, name).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn parse_list(text: &str, what: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| input(format!("--{what}: `{s}` is not a number")))
        })
        .collect()
}

fn anchor_set(args: &AnchorArgs) -> CliResult<AnchorSet> {
    let aspects = parse_list(&args.aspects, "aspects")?;
    let base = match AnchorSet::preset(&args.anchors) {
        Some(set) => set,
        None => {
            let scales = parse_list(&args.anchors, "anchors").map_err(|_| {
                input(format!(
                    "--anchors: `{}` is neither a preset ({}) nor a scale list",
                    args.anchors,
                    AnchorSet::PRESETS.join(", ")
                ))
            })?;
            AnchorSet::explicit(scales)?
        }
    };
    Ok(base.with_aspects(aspects)?)
}

fn level_map(args: &LevelArgs) -> CliResult<LevelMap> {
    let strides = parse_list(&args.strides, "strides")?;
    let bounds = parse_list(&args.boundaries, "boundaries")?;
    let [a, b, c] = strides[..] else {
        return Err(input("--strides needs exactly three values"));
    };
    let [lo, hi] = bounds[..] else {
        return Err(input("--boundaries needs exactly two values"));
    };
    Ok(LevelMap::new([a, b, c], (lo, hi))?)
}

fn grid_mode(args: &GridArgs) -> CliResult<GridMode> {
    match args.stride {
        Some(d) => Ok(GridMode::Flat(Stride::new(d)?)),
        None => Ok(GridMode::Leveled(level_map(&args.levels)?)),
    }
}

fn report_text(report: &coverage::CoverageReport, format: Format) -> String {
    match format {
        Format::Json => io::write_report_json(report),
        Format::Csv => io::write_report_csv(report),
    }
}

fn log_discards(discards: &[DiscardRecord]) {
    for d in discards {
        let scope = if d.whole_image { "image" } else { "region" };
        eprintln!(
            "discarded {scope} of `{}` ({} objects): {}",
            d.image_id,
            d.n_objects,
            d.reason.as_str()
        );
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| input(format!("{}: {e}", path.display())))
}

/// Run one command and return its stdout payload.
fn execute(cmd: Command) -> CliResult<String> {
    match cmd {
        Command::MinSize { stride, iou } => {
            let s = geometry::min_detectable_size(Stride::new(stride)?, IouThreshold::new(iou)?);
            Ok(format!("{s:.6}\n"))
        }
        Command::WorstCase {
            size,
            stride,
            verify,
            step,
        } => {
            if !(size.is_finite() && size > 0.0) {
                return Err(input("--size must be > 0"));
            }
            let d = Stride::new(stride)?;
            let analytic = geometry::worst_case_displaced_iou(size, d);
            if !verify {
                return Ok(format!("{analytic:.6}\n"));
            }
            let brute = geometry::brute_force_worst_case(size, d, step)?;
            let diff = (analytic - brute).abs();
            if diff > 1e-3 {
                return Err(Failure::Internal(format!(
                    "closed form {analytic:.6} disagrees with brute force {brute:.6}"
                )));
            }
            Ok(format!(
                "size,stride,analytic,brute_force,abs_diff\n{size:.6},{stride:.6},{analytic:.6},{brute:.6},{diff:.6}\n"
            ))
        }
        Command::AnchorSet {
            min,
            max,
            iou,
            scheme,
            preset,
        } => {
            let set = match preset {
                Some(name) => AnchorSet::preset(&name).ok_or_else(|| {
                    input(format!("unknown preset `{name}` (expected one of {})", AnchorSet::PRESETS.join(", ")))
                })?,
                None => {
                    let scheme = match scheme {
                        SchemeArg::Geometric => Scheme::Geometric,
                        SchemeArg::PowersOfTwo => Scheme::PowersOfTwo,
                    };
                    anchors::synthesize_anchor_set(min, max, IouThreshold::new(iou)?, scheme)?
                }
            };
            Ok(format!("{}\n", set.scales_csv()))
        }
        Command::AssignLevels { anchors, levels } => {
            let set = anchor_set(&anchors)?;
            let map = level_map(&levels)?;
            let mut out = String::from("scale,level,stride\n");
            for &s in set.scales() {
                let level = map.level_for(s);
                out.push_str(&format!("{s:.6},{},{:.6}\n", level.name, level.stride.get()));
            }
            Ok(out)
        }
        Command::GridCoverage {
            annotations,
            anchors,
            grid,
            iou,
            clip,
            format,
        } => {
            let ds = load_dataset(&annotations)?;
            let set = anchor_set(&anchors)?;
            let opts = GridOptions {
                mode: grid_mode(&grid)?,
                threshold: IouThreshold::new(iou)?,
                clip_to_image: clip,
            };
            let report = coverage::evaluate_grid(&ds, &set, opts)?;
            Ok(report_text(&report, format))
        }
        Command::EvalProposals {
            annotations,
            proposals,
            iou,
            format,
        } => {
            let ds = load_dataset(&annotations)?;
            let sets = io::parse_proposals(&read(&proposals)?)
                .map_err(|e| input(format!("{}: {e}", proposals.display())))?;
            let boxes: BTreeMap<String, Vec<BBox>> = sets
                .into_iter()
                .map(|(id, set)| (id, set.items.iter().map(|b| b.bbox).collect()))
                .collect();
            let report = coverage::evaluate_boxes(&ds, &boxes, IouThreshold::new(iou)?)?;
            Ok(report_text(&report, format))
        }
        Command::Nms {
            proposals,
            threshold,
            hierarchical,
            merge_threshold,
            top_n,
        } => {
            let sets = io::parse_proposals(&read(&proposals)?)
                .map_err(|e| input(format!("{}: {e}", proposals.display())))?;
            let sets: Vec<_> = sets.into_values().collect();
            let results = sets
                .par_iter()
                .map(|set| -> CliResult<(String, Vec<ScoredBox>)> {
                    let kept = if hierarchical {
                        let mut per_level: BTreeMap<LevelName, Vec<ScoredBox>> = BTreeMap::new();
                        for b in &set.items {
                            let level = b.level.ok_or_else(|| {
                                input(format!("--hierarchical: a box of image `{}` has no level", set.image_id))
                            })?;
                            per_level.entry(level).or_default().push(*b);
                        }
                        proposals::hierarchical_merge_with(
                            &per_level,
                            threshold,
                            merge_threshold.unwrap_or(threshold),
                            top_n.unwrap_or(DEFAULT_TOP_N),
                        )?
                    } else {
                        let mut kept = proposals::nms(&set.items, threshold)?;
                        if let Some(n) = top_n {
                            kept.truncate(n);
                        }
                        kept
                    };
                    Ok((set.image_id.clone(), kept))
                })
                .collect::<CliResult<BTreeMap<_, _>>>()?;
            Ok(io::write_proposals(&results))
        }
        Command::Partition { annotations } => {
            let ds = load_dataset(&annotations)?;
            let (parts, _, discards) = dataset::partition_dataset(&ds)?;
            log_discards(&discards);
            eprintln!(
                "{} input images -> {} single-object images",
                ds.images().len(),
                parts.images().len()
            );
            Ok(io::write_annotations(&parts))
        }
        Command::Variants {
            annotations,
            kind,
            min,
            max,
            seed,
            out_dir,
        } => {
            let ds = load_dataset(&annotations)?;
            match kind {
                VariantKind::Test => {
                    let dir = out_dir.ok_or_else(|| input("--kind test writes one file per size; pass --out-dir"))?;
                    fs::create_dir_all(&dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
                    let (variants, discards) = dataset::make_test_variants(&ds)?;
                    log_discards(&discards);
                    let mut listing = String::from("size,images,path\n");
                    for v in &variants {
                        let path = dir.join(format!("F_test_{:03}.json", v.size as u32));
                        write_file(&path, &io::write_annotations(&v.dataset))?;
                        listing.push_str(&format!(
                            "{:.6},{},{}\n",
                            v.size,
                            v.dataset.images().len(),
                            path.file_name().and_then(|n| n.to_str()).unwrap_or_default()
                        ));
                    }
                    Ok(listing)
                }
                VariantKind::Train => {
                    let (variant, discards) = dataset::make_train_variant(&ds, min, max, seed)?;
                    log_discards(&discards);
                    Ok(io::write_annotations(&variant))
                }
            }
        }
        Command::Sweep {
            annotations,
            anchors,
            grid,
            mode,
        } => {
            let ds = load_dataset(&annotations)?;
            let set = anchor_set(&anchors)?;
            let mode = match mode {
                SweepArg::Ideal => SweepMode::Ideal,
                SweepArg::Grid => SweepMode::Grid(grid_mode(&grid)?),
            };
            let (variants, discards) = dataset::make_test_variants(&ds)?;
            log_discards(&discards);
            let curves = coverage::size_sweep(&variants, &set, mode)?;
            Ok(io::write_curves_csv(&curves))
        }
        Command::VocConvert { files, name } => {
            let mut images = Vec::with_capacity(files.len());
            for path in &files {
                let bytes = read(path)?;
                let text = String::from_utf8(bytes).map_err(|_| input(format!("{}: not UTF-8", path.display())))?;
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
                let img = io::parse_voc_xml(&text, stem).map_err(|e| input(format!("{}: {e}", path.display())))?;
                images.push(img);
            }
            let ds = Dataset::new(name, images)?;
            Ok(io::write_annotations(&ds))
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(input("--threads must be >= 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Failure::Internal(format!("thread pool: {e}")))?;
    let text = pool.install(|| execute(cli.command))?;
    match &cli.out {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}
