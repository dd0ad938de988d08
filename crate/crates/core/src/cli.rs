//! Command-line driver: scene generation, reconstruction, evaluation,
//! fusion and the guidance ablation table.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage or config error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::camera::{Camera, View, ViewSet};
use crate::dataset::{
    all_pairs, parse_scene_config, read_pfm_dir, write_hints, write_pfm, write_scene,
    DepthRangeMeta, SceneDataset, SceneWriter,
};
use crate::fusion::{
    cloud_accuracy_completeness, depth_map_to_cloud, error_rates, fuse, write_ply,
    EvalThresholds, PointCloud,
};
use crate::grid::ImageBuf;
use crate::guidance::{GuidanceParams, OutOfRangePolicy, SparseDepthMap};
use crate::hints::{filter_hints, merge_hints, project_hints, to_sparse_map, FilterParams};
use crate::inference::{
    run_coarse_to_fine, DepthMap, PipelineConfig, RangePolicy, StageConfig,
};
use crate::sweep::HypothesisSpacing;
use crate::synth::{generate_scene, occlusion_scene, sample_hints, GroundTruth, SceneConfig};

/// Guidance variants, named after the guiding strategies they ablate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GuidanceMode {
    /// No hints at all.
    Unguided,
    /// Reference-view hints only.
    G,
    /// Hints aggregated from every viewpoint.
    Mvg,
    /// Aggregated hints with occlusion filtering.
    Fmvg,
}

impl GuidanceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GuidanceMode::Unguided => "unguided",
            GuidanceMode::G => "g",
            GuidanceMode::Mvg => "mvg",
            GuidanceMode::Fmvg => "fmvg",
        }
    }
}

/// Hints ready for the pipeline plus the densities the run reports.
#[derive(Debug, Clone)]
pub struct HintAssembly {
    pub hints: Option<SparseDepthMap>,
    pub density_reference: f64,
    pub density_merged: f64,
    pub density_final: f64,
    /// Reprojected points dropped for landing behind the reference camera.
    pub dropped_behind: usize,
    /// Reprojected points dropped for landing outside the reference image.
    pub dropped_out_of_bounds: usize,
}

/// Turn per-view hint maps into the reference-frame guidance map for a mode.
/// `cameras` and `per_view_hints` are aligned, reference first.
pub fn assemble_hints(
    mode: GuidanceMode,
    cameras: &[&Camera],
    per_view_hints: &[&SparseDepthMap],
    filter: &FilterParams,
) -> HintAssembly {
    assert_eq!(cameras.len(), per_view_hints.len());
    let reference = cameras[0];
    let (w, h) = (reference.intrinsics.width, reference.intrinsics.height);
    let density_reference = per_view_hints[0].density();
    match mode {
        GuidanceMode::Unguided => HintAssembly {
            hints: None,
            density_reference,
            density_merged: 0.0,
            density_final: 0.0,
            dropped_behind: 0,
            dropped_out_of_bounds: 0,
        },
        GuidanceMode::G => HintAssembly {
            hints: Some(per_view_hints[0].clone()),
            density_merged: density_reference,
            density_final: density_reference,
            density_reference,
            dropped_behind: 0,
            dropped_out_of_bounds: 0,
        },
        GuidanceMode::Mvg | GuidanceMode::Fmvg => {
            let mut dropped_behind = 0;
            let mut dropped_out_of_bounds = 0;
            let projected: Vec<_> = cameras
                .iter()
                .zip(per_view_hints)
                .skip(1)
                .map(|(cam, hints)| {
                    let outcome = project_hints(hints, cam, reference);
                    dropped_behind += outcome.dropped_behind;
                    dropped_out_of_bounds += outcome.dropped_out_of_bounds;
                    outcome.points
                })
                .collect();
            let merged = merge_hints(&projected, per_view_hints[0], reference);
            let density_merged = merged.density(w, h);
            let final_points = if mode == GuidanceMode::Fmvg {
                filter_hints(&merged, filter)
            } else {
                merged
            };
            let density_final = final_points.density(w, h);
            HintAssembly {
                hints: Some(to_sparse_map(&final_points, w, h)),
                density_reference,
                density_merged,
                density_final,
                dropped_behind,
                dropped_out_of_bounds,
            }
        }
    }
}

// ---- argument surface -------------------------------------------------

#[derive(Parser)]
#[command(
    name = "hintmvs",
    version,
    about = "Plane-sweep multi-view stereo guided by sparse depth hints"
)]
struct Cli {
    /// Worker threads (default: RAYON_NUM_THREADS or all logical CPUs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene to a dataset directory.
    Generate(GenerateArgs),
    /// Estimate depth maps for every reference view of a dataset.
    Reconstruct(ReconstructArgs),
    /// Compare estimated depth maps against ground truth.
    Evaluate(EvaluateArgs),
    /// Fuse depth maps into a point cloud (and score it when ground truth
    /// exists).
    Fuse(FuseArgs),
    /// Run every guidance variant over seeded scenes and print the
    /// comparison tables.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Scene description file; omit to use the built-in occlusion preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Scene seed (texture, shell rigs, preset geometry).
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also sample hint files at this density from the rendered depth.
    #[arg(long)]
    density: Option<f64>,
    /// Seed for hint sampling.
    #[arg(long, default_value_t = 1)]
    hint_seed: u64,
    /// Preset dimensions when no config file is given.
    #[arg(long, default_value_t = 160)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 5)]
    views: usize,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Scene dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for depth, confidence and report files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = GuidanceMode::Fmvg)]
    mode: GuidanceMode,
    /// Gaussian amplitude.
    #[arg(long, default_value_t = 10.0)]
    k: f64,
    /// Gaussian width in scene units, or 'auto' for the stage-1 plane
    /// spacing.
    #[arg(long, default_value = "0.01")]
    c: String,
    /// Occlusion filter depth gap (scene units).
    #[arg(long, default_value_t = 3.0)]
    epsilon: f64,
    /// Occlusion filter neighborhood radius (pixels).
    #[arg(long, default_value_t = 2)]
    radius: usize,
    /// Hint density sampled from ground truth when the dataset carries no
    /// hint files. Zero runs guided modes with empty hints.
    #[arg(long, default_value_t = 0.03)]
    density: f64,
    /// Seed for hint sampling.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Stage list as scale:hypotheses[:half-width-in-spacings].
    #[arg(long, default_value = "0.25:64,0.5:16:4,1:8:2")]
    stages: String,
    /// Which stages receive guidance: 'all' or comma-separated 1-based
    /// indices.
    #[arg(long, default_value = "all")]
    guide_stages: String,
    /// Hypothesis spacing of full-range stages.
    #[arg(long, value_enum, default_value_t = SpacingArg::Inverse)]
    spacing: SpacingArg,
    /// Ignore hints outside a stage's hypothesis range instead of letting
    /// them inflate every cost.
    #[arg(long, default_value_t = false)]
    skip_out_of_range_hints: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SpacingArg {
    Inverse,
    Linear,
}

impl From<SpacingArg> for HypothesisSpacing {
    fn from(v: SpacingArg) -> Self {
        match v {
            SpacingArg::Inverse => HypothesisSpacing::InverseDepth,
            SpacingArg::Linear => HypothesisSpacing::Depth,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of estimated depth PFMs.
    #[arg(long)]
    est: PathBuf,
    /// Directory of ground-truth depth PFMs.
    #[arg(long)]
    gt: PathBuf,
    /// Error thresholds.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 2.0, 3.0, 4.0])]
    tau: Vec<f64>,
    /// Optional report file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    /// Scene dataset directory (cameras and optional ground truth).
    #[arg(long)]
    dataset: PathBuf,
    /// Directory of estimated depth PFMs (defaults to the dataset's own
    /// depths).
    #[arg(long)]
    depths: Option<PathBuf>,
    /// Output PLY path.
    #[arg(long)]
    out: PathBuf,
    /// Minimum confirming source views.
    #[arg(long, default_value_t = 2)]
    min_views: usize,
    /// Maximum reprojection round-trip error (pixels).
    #[arg(long, default_value_t = 1.0)]
    max_reproj: f64,
    /// Maximum relative depth difference.
    #[arg(long, default_value_t = 0.01)]
    max_rel_depth: f64,
    /// Distance cap for accuracy/completeness (scene units).
    #[arg(long, default_value_t = 20.0)]
    cap: f64,
}

#[derive(Args)]
struct AblateArgs {
    /// Report file (tables are also printed to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scene description file; omit for the built-in occlusion family.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of seeded scenes.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    #[arg(long, default_value_t = 160)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 5)]
    views: usize,
    /// Hint density per view.
    #[arg(long, default_value_t = 0.03)]
    density: f64,
    #[arg(long, default_value_t = 10.0)]
    k: f64,
    #[arg(long, default_value_t = 3.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 2)]
    radius: usize,
}

// ---- error classification ---------------------------------------------

#[derive(Debug)]
enum CliError {
    /// Bad flags or config files: exit 2.
    Usage(String),
    /// Data or runtime failures: exit 1.
    Runtime(String),
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Entry point used by the binary.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // ignore failure when a pool already exists (tests, repeated init)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Reconstruct(args) => cmd_reconstruct(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Fuse(args) => cmd_fuse(args),
        Command::Ablate(args) => cmd_ablate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

// ---- generate -----------------------------------------------------------

fn load_scene_config(
    config: &Option<PathBuf>,
    width: usize,
    height: usize,
    views: usize,
    seed: u64,
) -> CliResult<SceneConfig> {
    match config {
        Some(path) => parse_scene_config(path).map_err(|e| usage(e.to_string())),
        None => Ok(occlusion_scene(width, height, views, seed)),
    }
}

fn scene_range_meta(gt: &GroundTruth) -> DepthRangeMeta {
    let (z_min, z_max) = gt.depth_range(0.05);
    let z_count = 64usize;
    DepthRangeMeta {
        z_min,
        z_interval: (z_max - z_min) / (z_count - 1) as f64,
        z_count,
        z_max,
    }
}

fn cmd_generate(args: GenerateArgs) -> CliResult<()> {
    let cfg = load_scene_config(&args.config, args.width, args.height, args.views, args.seed)?;
    let (views, gt) = generate_scene(&cfg, args.seed).map_err(|e| usage(e.to_string()))?;
    let cameras: Vec<Camera> = std::iter::once(views.reference.camera.clone())
        .chain(views.sources.iter().map(|v| v.camera.clone()))
        .collect();
    let images: Vec<ImageBuf> = gt.views.iter().map(|v| v.image.clone()).collect();
    let depths: Vec<DepthMap> = gt.views.iter().map(|v| v.depth.clone()).collect();
    let range = scene_range_meta(&gt);
    let hints: Option<Vec<SparseDepthMap>> = match args.density {
        Some(density) if density > 0.0 => Some(
            (0..cameras.len())
                .map(|v| {
                    sample_hints(&gt, v, density, crate::rng::mix(args.hint_seed, v as u64), cfg.hint_noise)
                        .map_err(|e| usage(e.to_string()))
                })
                .collect::<CliResult<_>>()?,
        ),
        Some(_) => Some(
            (0..cameras.len())
                .map(|_| SparseDepthMap::new(cfg.width, cfg.height))
                .collect(),
        ),
        None => None,
    };
    let pairs = all_pairs(cameras.len());
    write_scene(
        &args.out,
        &SceneWriter {
            images: &images,
            cameras: &cameras,
            range,
            gt_depths: Some(&depths),
            hints: hints.as_deref(),
            pairs: &pairs,
        },
    )?;
    let valid: usize = depths
        .iter()
        .map(|d| d.validity_slice().iter().filter(|v| **v).count())
        .sum();
    let total: usize = depths.len() * cfg.width * cfg.height;
    println!("scene {}", args.out.display());
    println!("views {}", cameras.len());
    println!("resolution {}x{}", cfg.width, cfg.height);
    println!("valid_fraction {:.4}", valid as f64 / total as f64);
    println!("z_min {:.6}", range.z_min);
    println!("z_max {:.6}", range.z_max);
    if let Some(h) = &hints {
        println!("hint_density {:.4}", h[0].density());
    }
    Ok(())
}

// ---- reconstruct ----------------------------------------------------

fn parse_stages(spec: &str) -> CliResult<Vec<StageConfig>> {
    let mut stages = Vec::new();
    for (i, part) in spec.split(',').enumerate() {
        let fields: Vec<&str> = part.split(':').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(usage(format!(
                "bad stage '{part}': expected scale:hypotheses[:half-width]"
            )));
        }
        let scale: f64 = fields[0]
            .parse()
            .map_err(|_| usage(format!("bad stage scale '{}'", fields[0])))?;
        let depth_count: usize = fields[1]
            .parse()
            .map_err(|_| usage(format!("bad hypothesis count '{}'", fields[1])))?;
        let mult: f64 = match fields.get(2) {
            Some(t) => t
                .parse()
                .map_err(|_| usage(format!("bad half-width '{t}'")))?,
            None => 3.0,
        };
        stages.push(StageConfig {
            scale,
            depth_count,
            range: if i == 0 {
                RangePolicy::FullRange
            } else {
                RangePolicy::AroundPrevious { spacing_mult: mult }
            },
            guided: false,
        });
    }
    Ok(stages)
}

fn parse_guide_stages(spec: &str, stage_count: usize) -> CliResult<Vec<bool>> {
    if spec == "all" {
        return Ok(vec![true; stage_count]);
    }
    if spec == "none" {
        return Ok(vec![false; stage_count]);
    }
    let mut flags = vec![false; stage_count];
    for tok in spec.split(',') {
        let idx: usize = tok
            .parse()
            .map_err(|_| usage(format!("bad stage index '{tok}'")))?;
        if idx == 0 || idx > stage_count {
            return Err(usage(format!(
                "guide stage {idx} out of range 1..={stage_count}"
            )));
        }
        flags[idx - 1] = true;
    }
    Ok(flags)
}

struct LoadedScene {
    cameras: Vec<Camera>,
    images: Vec<ImageBuf>,
    range: DepthRangeMeta,
    hints: Vec<SparseDepthMap>,
}

fn load_scene_for_reconstruction(
    dataset: &Path,
    mode: GuidanceMode,
    density: f64,
    seed: u64,
) -> CliResult<(SceneDataset, LoadedScene)> {
    let ds = SceneDataset::open(dataset)?;
    let mut cameras = Vec::with_capacity(ds.len());
    let mut images = Vec::with_capacity(ds.len());
    let mut range = None;
    for v in 0..ds.len() {
        let (cam, meta) = ds.camera(v)?;
        cameras.push(cam);
        images.push(ds.image(v)?);
        range.get_or_insert(meta);
    }
    let range = range.expect("datasets have at least one view");
    if !(range.z_min > 0.0 && range.z_max > range.z_min) {
        return Err(CliError::Runtime(format!(
            "camera files carry no usable depth range ({} .. {})",
            range.z_min, range.z_max
        )));
    }
    let mut gt = None;
    if ds.has_gt_depths() {
        let mut maps = Vec::with_capacity(ds.len());
        for v in 0..ds.len() {
            maps.push(ds.gt_depth(v)?.expect("has_gt_depths"));
        }
        gt = Some(maps);
    }
    let needs_hints = mode != GuidanceMode::Unguided;
    let hints: Vec<SparseDepthMap> = if ds.has_hints() {
        (0..ds.len())
            .map(|v| ds.hints(v).map(|h| h.expect("has_hints")))
            .collect::<Result<_, _>>()?
    } else if needs_hints {
        match (&gt, density) {
            (_, 0.0) => images
                .iter()
                .map(|img| SparseDepthMap::new(img.width(), img.height()))
                .collect(),
            (Some(gt_maps), _) => {
                let synth_gt = GroundTruth {
                    views: gt_maps
                        .iter()
                        .zip(&images)
                        .map(|(d, i)| crate::synth::RenderedView {
                            image: i.clone(),
                            depth: d.clone(),
                        })
                        .collect(),
                };
                let mut sampled = Vec::with_capacity(ds.len());
                for v in 0..ds.len() {
                    sampled.push(
                        sample_hints(&synth_gt, v, density, crate::rng::mix(seed, v as u64), 0.0)
                            .map_err(|e| usage(e.to_string()))?,
                    );
                }
                sampled
            }
            (None, _) => {
                return Err(CliError::Runtime(
                    "guided mode needs hint files or ground-truth depth to sample from".into(),
                ))
            }
        }
    } else {
        images
            .iter()
            .map(|img| SparseDepthMap::new(img.width(), img.height()))
            .collect()
    };
    Ok((
        ds,
        LoadedScene {
            cameras,
            images,
            range,
            hints,
        },
    ))
}

fn cmd_reconstruct(args: ReconstructArgs) -> CliResult<()> {
    let stages = parse_stages(&args.stages)?;
    let guide_flags = parse_guide_stages(&args.guide_stages, stages.len())?;
    let filter = FilterParams::new(args.epsilon, args.radius).map_err(|e| usage(e.to_string()))?;
    let (ds, scene) =
        load_scene_for_reconstruction(&args.dataset, args.mode, args.density, args.seed)?;
    if matches!(args.mode, GuidanceMode::Mvg | GuidanceMode::Fmvg) && ds.len() < 2 {
        return Err(usage("mvg/fmvg need at least two views with hints"));
    }
    let (z_min, z_max) = (scene.range.z_min, scene.range.z_max);
    let c = match args.c.as_str() {
        "auto" => {
            let d = stages[0].depth_count;
            (z_max - z_min) / (d - 1) as f64
        }
        other => other
            .parse::<f64>()
            .map_err(|_| usage(format!("bad c '{other}' (number or 'auto')")))?,
    };
    let guidance = GuidanceParams::new(args.k, c).map_err(|e| usage(e.to_string()))?;
    let mut cfg = PipelineConfig {
        stages,
        guidance,
        depth_range: (z_min, z_max),
        full_range_spacing: args.spacing.into(),
        out_of_range_hints: if args.skip_out_of_range_hints {
            OutOfRangePolicy::Ignore
        } else {
            OutOfRangePolicy::Modulate
        },
    };
    for (stage, guided) in cfg.stages.iter_mut().zip(&guide_flags) {
        stage.guided = *guided && args.mode != GuidanceMode::Unguided;
    }

    std::fs::create_dir_all(&args.out)?;
    let mut report = String::new();
    writeln!(report, "mode {}", args.mode.as_str()).unwrap();
    writeln!(report, "k {}", args.k).unwrap();
    writeln!(report, "c {c}").unwrap();
    writeln!(report, "epsilon {}", args.epsilon).unwrap();
    writeln!(report, "radius {}", args.radius).unwrap();
    writeln!(report, "stages {}", args.stages).unwrap();
    writeln!(report, "guide_stages {}", args.guide_stages).unwrap();
    writeln!(report, "z_min {z_min}").unwrap();
    writeln!(report, "z_max {z_max}").unwrap();
    writeln!(report, "views {}", ds.len()).unwrap();

    let mut dens_ref = Vec::new();
    let mut dens_merged = Vec::new();
    let mut dens_final = Vec::new();
    for (reference, sources) in &ds.pairs.entries {
        let view_set = ViewSet::new(
            View::new(
                scene.cameras[*reference].clone(),
                scene.images[*reference].clone(),
            )?,
            sources
                .iter()
                .map(|s| View::new(scene.cameras[*s].clone(), scene.images[*s].clone()))
                .collect::<Result<_, _>>()?,
        )?;
        let cam_refs: Vec<&Camera> = std::iter::once(&scene.cameras[*reference])
            .chain(sources.iter().map(|s| &scene.cameras[*s]))
            .collect();
        let hint_refs: Vec<&SparseDepthMap> = std::iter::once(&scene.hints[*reference])
            .chain(sources.iter().map(|s| &scene.hints[*s]))
            .collect();
        let assembly = assemble_hints(args.mode, &cam_refs, &hint_refs, &filter);
        dens_ref.push(assembly.density_reference);
        dens_merged.push(assembly.density_merged);
        dens_final.push(assembly.density_final);
        let depth = run_coarse_to_fine(&view_set, assembly.hints.as_ref(), &cfg)?;
        write_pfm(&args.out.join(format!("depth_{reference:04}.pfm")), &depth)?;
        let conf = DepthMap::from_parts(
            depth.width(),
            depth.height(),
            depth.confidence_slice().to_vec(),
            depth.confidence_slice().to_vec(),
            depth.validity_slice().to_vec(),
        );
        write_pfm(&args.out.join(format!("conf_{reference:04}.pfm")), &conf)?;
        if let Some(hints) = &assembly.hints {
            write_hints(
                &args.out.join(format!("hints_{reference:04}.txt")),
                hints,
            )?;
        }
        writeln!(
            report,
            "view {reference} density_reference {:.6} density_merged {:.6} density_final {:.6} dropped_behind {} dropped_out_of_bounds {}",
            assembly.density_reference,
            assembly.density_merged,
            assembly.density_final,
            assembly.dropped_behind,
            assembly.dropped_out_of_bounds
        )
        .unwrap();
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    writeln!(report, "mean_density_reference {:.6}", mean(&dens_ref)).unwrap();
    writeln!(report, "mean_density_merged {:.6}", mean(&dens_merged)).unwrap();
    writeln!(report, "mean_density_final {:.6}", mean(&dens_final)).unwrap();
    std::fs::write(args.out.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

// ---- evaluate -----------------------------------------------------------

fn cmd_evaluate(args: EvaluateArgs) -> CliResult<()> {
    let est = read_pfm_dir(&args.est)?;
    let gt = read_pfm_dir(&args.gt)?;
    if est.len() != gt.len() || est.is_empty() {
        return Err(CliError::Runtime(format!(
            "view sets differ: {} estimated vs {} ground truth",
            est.len(),
            gt.len()
        )));
    }
    let mut report = String::new();
    write!(report, "{:<8}", "view").unwrap();
    for tau in &args.tau {
        write!(report, " >{tau:<7}").unwrap();
    }
    writeln!(report).unwrap();
    let mut sums = vec![0.0f64; args.tau.len()];
    let mut machine = String::new();
    for (i, (e, g)) in est.iter().zip(&gt).enumerate() {
        let rates = error_rates(e, g, &args.tau)?;
        write!(report, "{i:<8}").unwrap();
        for (r, tau) in rates.iter().zip(&args.tau) {
            write!(report, " {r:<8.4}").unwrap();
            writeln!(machine, "view {i} tau {tau} rate {r:.6}").unwrap();
        }
        writeln!(report).unwrap();
        for (s, r) in sums.iter_mut().zip(&rates) {
            *s += r;
        }
    }
    write!(report, "{:<8}", "mean").unwrap();
    for s in &sums {
        write!(report, " {:<8.4}", s / est.len() as f64).unwrap();
    }
    writeln!(report).unwrap();
    report.push_str(&machine);
    for (tau, s) in args.tau.iter().zip(&sums) {
        writeln!(report, "mean tau {tau} rate {:.6}", s / est.len() as f64).unwrap();
    }
    print!("{report}");
    if let Some(out) = args.out {
        std::fs::write(out, report)?;
    }
    Ok(())
}

// ---- fuse ------------------------------------------------------------

fn cmd_fuse(args: FuseArgs) -> CliResult<()> {
    let ds = SceneDataset::open(&args.dataset)?;
    let mut cameras = Vec::with_capacity(ds.len());
    for v in 0..ds.len() {
        cameras.push(ds.camera(v)?.0);
    }
    let depths = match &args.depths {
        Some(dir) => read_pfm_dir(dir)?,
        None => {
            if !ds.has_gt_depths() {
                return Err(CliError::Runtime(
                    "no --depths given and the dataset has no depth maps".into(),
                ));
            }
            let mut maps = Vec::with_capacity(ds.len());
            for v in 0..ds.len() {
                maps.push(ds.gt_depth(v)?.expect("has_gt_depths"));
            }
            maps
        }
    };
    if depths.len() != cameras.len() {
        return Err(CliError::Runtime(format!(
            "{} depth maps for {} cameras",
            depths.len(),
            cameras.len()
        )));
    }
    let thresholds = EvalThresholds {
        tau_list: vec![1.0, 2.0, 3.0, 4.0],
        min_views: args.min_views,
        max_reprojection_px: args.max_reproj,
        max_relative_depth: args.max_rel_depth,
    };
    let views: Vec<(&DepthMap, &Camera)> = depths.iter().zip(cameras.iter()).collect();
    let cloud = fuse(&views, &thresholds);
    write_ply(&args.out, &cloud)?;
    println!("fused_points {}", cloud.len());
    println!("ply {}", args.out.display());
    if cloud.is_empty() {
        println!("warning: fused cloud is empty (min_views too strict?)");
        return Ok(());
    }
    if ds.has_gt_depths() {
        let mut gt_points = PointCloud::default();
        for (v, camera) in cameras.iter().enumerate() {
            let gt = ds.gt_depth(v)?.expect("has_gt_depths");
            let cloud_v = depth_map_to_cloud(&gt, camera, 1);
            gt_points.points.extend(cloud_v.points);
        }
        let metrics = cloud_accuracy_completeness(&cloud, &gt_points, args.cap)?;
        println!("accuracy {:.6}", metrics.accuracy);
        println!("completeness {:.6}", metrics.completeness);
        println!("average {:.6}", metrics.average);
    }
    Ok(())
}

// ---- ablate ----------------------------------------------------------

/// Errors from the programmatic ablation driver.
#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
    #[error(transparent)]
    Pipeline(#[from] crate::inference::PipelineError),
    #[error(transparent)]
    Eval(#[from] crate::fusion::EvalError),
    #[error(transparent)]
    Guidance(#[from] crate::guidance::GuidanceError),
    #[error(transparent)]
    Geometry(#[from] crate::camera::GeometryError),
    #[error(transparent)]
    Filter(#[from] crate::hints::FilterConfigError),
}

/// Seeded comparison settings. Defaults mirror the evaluation protocol:
/// 20 scenes of the occlusion family at 160x128 with five views, 3% hints,
/// k = 10 and c matched to the plane spacing.
#[derive(Debug, Clone)]
pub struct AblationOptions {
    /// Scene template; None uses the built-in occlusion family, which also
    /// varies its geometry per seed.
    pub scene: Option<SceneConfig>,
    pub seeds: u64,
    pub seed_base: u64,
    pub width: usize,
    pub height: usize,
    pub views: usize,
    pub density: f64,
    pub k: f64,
    pub epsilon: f64,
    pub radius: usize,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self {
            scene: None,
            seeds: 20,
            seed_base: 0,
            width: 160,
            height: 128,
            views: 5,
            density: 0.03,
            k: 10.0,
            epsilon: 3.0,
            radius: 2,
        }
    }
}

pub const ABLATION_TAUS: [f64; 4] = [1.0, 2.0, 3.0, 4.0];
pub const ABLATION_MODES: [GuidanceMode; 4] = [
    GuidanceMode::Unguided,
    GuidanceMode::G,
    GuidanceMode::Mvg,
    GuidanceMode::Fmvg,
];
pub const ABLATION_STAGE_VARIANTS: [(&str, [bool; 3]); 5] = [
    ("none", [false, false, false]),
    ("1", [true, false, false]),
    ("2", [false, true, false]),
    ("3", [false, false, true]),
    ("all", [true, true, true]),
];

/// Mean error rates per guidance variant and per stage-guidance pattern
/// over the seeded scene family.
#[derive(Debug, Clone)]
pub struct AblationSummary {
    /// Mean rates per mode (order of [`ABLATION_MODES`]) per tau.
    pub mode_rates: Vec<Vec<f64>>,
    /// Mean rates per stage pattern (order of [`ABLATION_STAGE_VARIANTS`]).
    pub stage_rates: Vec<Vec<f64>>,
    /// Mean density after multi-view aggregation (before filtering).
    pub density_merged: f64,
    /// Mean density after filtering.
    pub density_filtered: f64,
    /// Whether guided runs with zero hints were bit-identical to unguided.
    pub zero_hints_bitwise_equal: bool,
}

impl AblationSummary {
    pub fn mode_rate(&self, mode: GuidanceMode, tau_index: usize) -> f64 {
        let mi = ABLATION_MODES.iter().position(|m| *m == mode).unwrap();
        self.mode_rates[mi][tau_index]
    }

    pub fn stage_rate(&self, name: &str, tau_index: usize) -> f64 {
        let si = ABLATION_STAGE_VARIANTS
            .iter()
            .position(|(n, _)| *n == name)
            .unwrap();
        self.stage_rates[si][tau_index]
    }
}

/// Run every guidance variant and stage-guidance pattern over seeded scenes
/// and average the depth error rates against ground truth.
pub fn guidance_ablation(opts: &AblationOptions) -> Result<AblationSummary, DriverError> {
    let filter = FilterParams::new(opts.epsilon, opts.radius)?;
    let mut mode_acc = vec![vec![0.0f64; ABLATION_TAUS.len()]; ABLATION_MODES.len()];
    let mut stage_acc = vec![vec![0.0f64; ABLATION_TAUS.len()]; ABLATION_STAGE_VARIANTS.len()];
    let mut merged_acc = 0.0f64;
    let mut filtered_acc = 0.0f64;
    let mut zero_hints_bitwise_equal = true;

    for i in 0..opts.seeds {
        let seed = opts.seed_base + i;
        let cfg = match &opts.scene {
            Some(template) => {
                let mut c = template.clone();
                c.texture_seed = crate::rng::mix(c.texture_seed, seed);
                c
            }
            None => occlusion_scene(opts.width, opts.height, opts.views, seed),
        };
        let (views, gt) = generate_scene(&cfg, seed)?;
        let range = gt.depth_range(0.05);
        let cameras: Vec<&Camera> = std::iter::once(&views.reference.camera)
            .chain(views.sources.iter().map(|v| &v.camera))
            .collect();
        let per_view: Vec<SparseDepthMap> = (0..cameras.len())
            .map(|v| sample_hints(&gt, v, opts.density, crate::rng::mix(seed, v as u64), cfg.hint_noise))
            .collect::<Result<_, _>>()?;
        let hint_refs: Vec<&SparseDepthMap> = per_view.iter().collect();
        let gt0 = &gt.views[0].depth;

        // single-volume variants at half resolution, c matched to the plane
        // spacing
        let depth_count = 48;
        let c = (range.1 - range.0) / (depth_count - 1) as f64;
        let single = {
            let mut s = PipelineConfig::single_stage(range, 0.5, depth_count, false);
            s.guidance = GuidanceParams::new(opts.k, c)?;
            s
        };
        for (mi, mode) in ABLATION_MODES.iter().enumerate() {
            let assembly = assemble_hints(*mode, &cameras, &hint_refs, &filter);
            let mut cfg_run = single.clone();
            cfg_run.stages[0].guided = *mode != GuidanceMode::Unguided;
            let map = run_coarse_to_fine(&views, assembly.hints.as_ref(), &cfg_run)?;
            let rates = error_rates(&map, gt0, &ABLATION_TAUS)?;
            for (a, r) in mode_acc[mi].iter_mut().zip(&rates) {
                *a += r;
            }
            if *mode == GuidanceMode::Fmvg {
                merged_acc += assembly.density_merged;
                filtered_acc += assembly.density_final;
            }
        }

        // coarse-to-fine per-stage guidance, fmvg hints
        let assembly = assemble_hints(GuidanceMode::Fmvg, &cameras, &hint_refs, &filter);
        for (si, (_, flags)) in ABLATION_STAGE_VARIANTS.iter().enumerate() {
            let mut cfg_run = PipelineConfig::three_stage(range, *flags);
            cfg_run.guidance = GuidanceParams::new(opts.k, c)?;
            let map = run_coarse_to_fine(&views, assembly.hints.as_ref(), &cfg_run)?;
            let rates = error_rates(&map, gt0, &ABLATION_TAUS)?;
            for (a, r) in stage_acc[si].iter_mut().zip(&rates) {
                *a += r;
            }
        }

        // graceful degradation: guided pipeline with zero hints must match
        // the unguided result exactly
        let empty: Vec<SparseDepthMap> = cameras
            .iter()
            .map(|c| SparseDepthMap::new(c.intrinsics.width, c.intrinsics.height))
            .collect();
        let empty_refs: Vec<&SparseDepthMap> = empty.iter().collect();
        let assembly0 = assemble_hints(GuidanceMode::Fmvg, &cameras, &empty_refs, &filter);
        let mut guided_cfg = single.clone();
        guided_cfg.stages[0].guided = true;
        let guided0 = run_coarse_to_fine(&views, assembly0.hints.as_ref(), &guided_cfg)?;
        let unguided0 = run_coarse_to_fine(&views, None, &single)?;
        if guided0 != unguided0 {
            zero_hints_bitwise_equal = false;
        }
    }

    let n = opts.seeds as f64;
    Ok(AblationSummary {
        mode_rates: mode_acc
            .into_iter()
            .map(|row| row.into_iter().map(|v| v / n).collect())
            .collect(),
        stage_rates: stage_acc
            .into_iter()
            .map(|row| row.into_iter().map(|v| v / n).collect())
            .collect(),
        density_merged: merged_acc / n,
        density_filtered: filtered_acc / n,
        zero_hints_bitwise_equal,
    })
}

fn cmd_ablate(args: AblateArgs) -> CliResult<()> {
    let scene = match &args.config {
        Some(path) => Some(parse_scene_config(path).map_err(|e| usage(e.to_string()))?),
        None => None,
    };
    let opts = AblationOptions {
        scene,
        seeds: args.seeds,
        seed_base: args.seed_base,
        width: args.width,
        height: args.height,
        views: args.views,
        density: args.density,
        k: args.k,
        epsilon: args.epsilon,
        radius: args.radius,
    };
    let summary = guidance_ablation(&opts).map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut report = String::new();
    writeln!(report, "scenes {}", args.seeds).unwrap();
    writeln!(report, "density {}", args.density).unwrap();
    writeln!(report).unwrap();
    writeln!(
        report,
        "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "variant", "dens", "filt", ">1", ">2", ">3", ">4"
    )
    .unwrap();
    for (mi, mode) in ABLATION_MODES.iter().enumerate() {
        let rates = &summary.mode_rates[mi];
        let (dm, df) = match mode {
            GuidanceMode::Unguided => (0.0, 0.0),
            GuidanceMode::G => (args.density, args.density),
            GuidanceMode::Mvg => (summary.density_merged, summary.density_merged),
            GuidanceMode::Fmvg => (summary.density_merged, summary.density_filtered),
        };
        writeln!(
            report,
            "{:<10} {:>8.3} {:>8.3} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            mode.as_str(),
            dm,
            df,
            rates[0],
            rates[1],
            rates[2],
            rates[3]
        )
        .unwrap();
    }
    writeln!(report).unwrap();
    writeln!(
        report,
        "{:<10} {:>8} {:>8} {:>8} {:>8}",
        "stages", ">1", ">2", ">3", ">4"
    )
    .unwrap();
    for (si, (name, _)) in ABLATION_STAGE_VARIANTS.iter().enumerate() {
        let rates = &summary.stage_rates[si];
        writeln!(
            report,
            "{:<10} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            name, rates[0], rates[1], rates[2], rates[3]
        )
        .unwrap();
    }
    writeln!(report).unwrap();

    let check = |name: &str, ok: bool, detail: String| -> String {
        format!(
            "check {:<34} {} {}\n",
            name,
            if ok { "PASS" } else { "FAIL" },
            detail
        )
    };
    let un = summary.mode_rate(GuidanceMode::Unguided, 0);
    let g = summary.mode_rate(GuidanceMode::G, 0);
    let mvg = summary.mode_rate(GuidanceMode::Mvg, 0);
    let fmvg = summary.mode_rate(GuidanceMode::Fmvg, 0);
    report.push_str(&check(
        "unguided_gt_g",
        un > g,
        format!("{un:.4} > {g:.4}"),
    ));
    report.push_str(&check(
        "g_ge_fmvg",
        g >= fmvg,
        format!("{g:.4} >= {fmvg:.4}"),
    ));
    report.push_str(&check(
        "fmvg_le_mvg",
        fmvg <= mvg,
        format!("{fmvg:.4} <= {mvg:.4}"),
    ));
    let s_none = summary.stage_rate("none", 0);
    let s_1 = summary.stage_rate("1", 0);
    let s_all = summary.stage_rate("all", 0);
    report.push_str(&check(
        "all_le_stage1_le_none",
        s_all <= s_1 && s_1 <= s_none,
        format!("{s_all:.4} <= {s_1:.4} <= {s_none:.4}"),
    ));
    report.push_str(&check(
        "merged_density_in_range",
        (0.10..=0.15).contains(&summary.density_merged),
        format!("{:.4}", summary.density_merged),
    ));
    report.push_str(&check(
        "zero_hints_equals_unguided",
        summary.zero_hints_bitwise_equal,
        String::new(),
    ));

    print!("{report}");
    if let Some(out) = args.out {
        std::fs::write(out, report)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::flat_wall_scene;

    #[test]
    fn stage_spec_parsing() {
        let stages = parse_stages("0.25:64,0.5:16:4,1:8:2").unwrap();
        assert_eq!(stages.len(), 3);
        assert_eq!(stages[0].scale, 0.25);
        assert!(matches!(stages[0].range, RangePolicy::FullRange));
        assert!(matches!(
            stages[1].range,
            RangePolicy::AroundPrevious { spacing_mult } if spacing_mult == 4.0
        ));
        assert!(parse_stages("0.25").is_err());
        assert!(parse_stages("a:b").is_err());
    }

    #[test]
    fn guide_stage_parsing() {
        assert_eq!(parse_guide_stages("all", 3).unwrap(), vec![true; 3]);
        assert_eq!(parse_guide_stages("none", 3).unwrap(), vec![false; 3]);
        assert_eq!(
            parse_guide_stages("1,3", 3).unwrap(),
            vec![true, false, true]
        );
        assert!(parse_guide_stages("0", 3).is_err());
        assert!(parse_guide_stages("4", 3).is_err());
    }

    #[test]
    fn assemble_modes_produce_expected_densities() {
        let cfg = flat_wall_scene(64, 48, 4, 7.0);
        let (views, gt) = generate_scene(&cfg, 3).unwrap();
        let cameras: Vec<&Camera> = std::iter::once(&views.reference.camera)
            .chain(views.sources.iter().map(|v| &v.camera))
            .collect();
        let per_view: Vec<SparseDepthMap> = (0..4)
            .map(|v| sample_hints(&gt, v, 0.03, v as u64 + 1, 0.0).unwrap())
            .collect();
        let refs: Vec<&SparseDepthMap> = per_view.iter().collect();
        let filter = FilterParams::default();
        let un = assemble_hints(GuidanceMode::Unguided, &cameras, &refs, &filter);
        assert!(un.hints.is_none());
        let g = assemble_hints(GuidanceMode::G, &cameras, &refs, &filter);
        assert_eq!(g.hints.as_ref().unwrap(), &per_view[0]);
        let mvg = assemble_hints(GuidanceMode::Mvg, &cameras, &refs, &filter);
        assert!(mvg.density_merged > g.density_reference * 2.0);
        let fmvg = assemble_hints(GuidanceMode::Fmvg, &cameras, &refs, &filter);
        assert!(fmvg.density_final <= mvg.density_merged + 1e-12);
        // no occlusion on a single wall: filtering keeps nearly everything
        assert!(fmvg.density_final > 0.9 * mvg.density_merged);
    }
}
