//! Command-line pipeline: features → affinity → restarts → mask → refinement
//! → outputs, plus a timing benchmark against the spectral baseline.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dream::refine_with_planes;
use crate::error::{Error, Result};
use crate::eval::miou;
use crate::graph::{build_affinity, AffinityGraph};
use crate::maskgen::{
    argmax_mask, feature_centers, refine_by_similarity, tokens_to_planes, upsample_bilinear,
    upsample_nearest, LabelMask,
};
use crate::oracle::spectral_recursive_ncut;
use crate::solver::{solve, SoftAssignment, SolveReport};
use crate::tensor_io::{load_config, read_npy, read_pgm, write_pgm, PipelineConfig, Tensor};

#[derive(Debug, Parser)]
#[command(
    name = "fracut",
    version,
    about = "K-way normalized-cut segmentation of token feature grids"
)]
#[command(args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Time the alternating cut against recursive spectral bipartitioning.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Token features as an N×d (or H×W×d) little-endian f32 NPY file.
    #[arg(long, required = true)]
    pub features: Option<PathBuf>,
    /// RGB planes (C×H×W NPY at the output size); enables refinement.
    #[arg(long)]
    pub rgb: Option<PathBuf>,
    /// Depth plane (H×W or 1×H×W NPY at the output size); requires --rgb.
    #[arg(long, requires = "rgb")]
    pub depth: Option<PathBuf>,
    /// Ground-truth label mask (PGM at the output size); prints mIoU.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// JSON pipeline configuration; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output mask path; the run manifest is written next to it as JSON.
    #[arg(long, default_value = "mask.pgm")]
    pub out: PathBuf,
    /// Token grid height; inferred from 3-D features or a square token count.
    #[arg(long)]
    pub grid_h: Option<usize>,
    #[arg(long)]
    pub grid_w: Option<usize>,
    #[arg(long, default_value_t = 128)]
    pub out_h: usize,
    #[arg(long, default_value_t = 128)]
    pub out_w: usize,
    /// Independent solver runs; the best Rayleigh objective is kept.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub restarts: u64,
    /// Base seed; restart r uses seed + r. Overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Solver iterations. Overrides the config.
    #[arg(long)]
    pub t_cuts: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Nodes per graph.
    #[arg(long, default_value_t = 1024)]
    pub n: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    #[arg(long, default_value_t = 32)]
    pub k: usize,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 50)]
    pub t_cuts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Pipeline stage names used in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    ReadFeatures,
    Affinity,
    Solve,
    Mask,
    Refine,
    ReadPlanes,
    Dream,
    Write,
    Evaluate,
    Bench,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::ReadFeatures => "read-features",
            Stage::Affinity => "affinity",
            Stage::Solve => "solve",
            Stage::Mask => "mask",
            Stage::Refine => "refine",
            Stage::ReadPlanes => "read-planes",
            Stage::Dream => "dream",
            Stage::Write => "write",
            Stage::Evaluate => "evaluate",
            Stage::Bench => "bench",
        })
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub read_ms: f64,
    pub affinity_ms: f64,
    pub solve_ms: f64,
    pub mask_ms: f64,
    pub refine_ms: f64,
    pub dream_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub features: PathBuf,
    pub rgb: Option<PathBuf>,
    pub depth: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub grid_h: usize,
    pub grid_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub restart_count: u64,
    /// Seed of the restart that was kept.
    pub best_seed: u64,
    pub iterations_run: usize,
    /// Rayleigh sum of the kept hard labeling on the affinity graph.
    pub objective: f64,
    pub miou: Option<f64>,
    pub mask_path: PathBuf,
    pub manifest_path: PathBuf,
    pub timings: StageTimings,
}

/// The restart kept by [`best_of_restarts`].
#[derive(Debug, Clone, PartialEq)]
pub struct Restart {
    pub seed: u64,
    pub assignment: SoftAssignment,
    pub report: SolveReport,
    /// Rayleigh sum of the hard labels on the input graph.
    pub objective: f64,
}

/// Runs `restarts` independent solves with seeds `config.seed + r` in
/// parallel and keeps the one whose hard labeling has the largest Rayleigh
/// sum (equivalently the smallest Ncut); ties go to the earliest seed.
pub fn best_of_restarts(
    graph: &AffinityGraph,
    config: &PipelineConfig,
    restarts: u64,
) -> Result<Restart> {
    if restarts == 0 {
        return Err(Error::InvariantViolation {
            field: "restarts",
            reason: "need at least one restart".into(),
        });
    }
    let runs: Vec<Restart> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let seed = config.seed.wrapping_add(r);
            let cfg = PipelineConfig {
                seed,
                ..config.clone()
            };
            let (assignment, report) = solve(graph, &cfg)?;
            let objective = graph.rayleigh_sum(&assignment.hard_labels(), config.k_clusters);
            Ok(Restart {
                seed,
                assignment,
                report,
                objective,
            })
        })
        .collect::<Result<_>>()?;
    let mut best = None::<Restart>;
    for run in runs {
        if best.as_ref().is_none_or(|b| run.objective > b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Scales every nonzero row to unit Euclidean norm; zero rows stay zero.
pub fn l2_normalize_rows(features: &Tensor) -> Result<Tensor> {
    let d = match features.shape() {
        &[_, d] => d,
        other => {
            return Err(Error::ShapeMismatch(format!(
                "expected N×d features, got {other:?}"
            )))
        }
    };
    let mut data = features.data().to_vec();
    if d > 0 {
        for row in data.chunks_exact_mut(d) {
            let norm = row
                .iter()
                .map(|&v| f64::from(v) * f64::from(v))
                .sum::<f64>()
                .sqrt();
            if norm > 0.0 {
                row.iter_mut()
                    .for_each(|v| *v = (f64::from(*v) / norm) as f32);
            }
        }
    }
    Tensor::new(features.shape().to_vec(), data)
}

/// Resolves the token grid and returns features flattened to `N×d`.
fn token_grid(
    features: Tensor,
    grid_h: Option<usize>,
    grid_w: Option<usize>,
) -> Result<(Tensor, usize, usize)> {
    let (n, d, inferred) = match *features.shape() {
        [h, w, d] => (h * w, d, Some((h, w))),
        [n, d] => {
            let side = (n as f64).sqrt().round() as usize;
            (n, d, (side * side == n).then_some((side, side)))
        }
        ref other => {
            return Err(Error::ShapeMismatch(format!(
                "expected N×d or H×W×d features, got {other:?}"
            )))
        }
    };
    let (h, w) = match (grid_h, grid_w, inferred) {
        (Some(h), Some(w), _) => (h, w),
        (Some(h), None, _) if h > 0 && n % h == 0 => (h, n / h),
        (None, Some(w), _) if w > 0 && n % w == 0 => (n / w, w),
        (None, None, Some(hw)) => hw,
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "cannot place {n} tokens on a grid; pass --grid-h/--grid-w"
            )))
        }
    };
    if h * w != n || n == 0 {
        return Err(Error::ShapeMismatch(format!(
            "{n} tokens do not fill a {h}x{w} grid"
        )));
    }
    Ok((features.reshape(vec![n, d])?, h, w))
}

fn millis(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

pub fn manifest_path_for(mask_path: &Path) -> PathBuf {
    mask_path.with_extension("json")
}

fn resolve_config(path: Option<&Path>) -> Result<PipelineConfig> {
    path.map_or_else(|| Ok(PipelineConfig::default()), load_config)
}

/// Executes the full pipeline and writes the mask and manifest.
pub fn run_pipeline(args: &RunArgs) -> std::result::Result<RunManifest, StageError> {
    let started = Instant::now();
    let features_path = args
        .features
        .clone()
        .ok_or_else(|| Error::MissingFile(PathBuf::from("--features")))
        .at(Stage::Config)?;
    let mut config = resolve_config(args.config.as_deref()).at(Stage::Config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(t) = args.t_cuts {
        config.t_cuts = t;
    }
    config.validate().at(Stage::Config)?;

    let t = Instant::now();
    let raw = read_npy(&features_path).at(Stage::ReadFeatures)?;
    let (raw, grid_h, grid_w) =
        token_grid(raw, args.grid_h, args.grid_w).at(Stage::ReadFeatures)?;
    let features = l2_normalize_rows(&raw).at(Stage::ReadFeatures)?;
    let read_ms = millis(t);

    let t = Instant::now();
    let graph = build_affinity(&features, config.alpha_power, config.lambda_affinity)
        .at(Stage::Affinity)?;
    let affinity_ms = millis(t);

    let t = Instant::now();
    let best = best_of_restarts(&graph, &config, args.restarts).at(Stage::Solve)?;
    let solve_ms = millis(t);

    let t = Instant::now();
    let coarse = argmax_mask(&best.assignment, grid_h, grid_w).at(Stage::Mask)?;
    let upsampled = upsample_nearest(&coarse, args.out_h, args.out_w).at(Stage::Mask)?;
    let mask_ms = millis(t);

    let t = Instant::now();
    let planes = tokens_to_planes(&features, grid_h, grid_w)
        .and_then(|p| upsample_bilinear(&p, args.out_h, args.out_w))
        .at(Stage::Refine)?;
    let centers = feature_centers(&planes, &upsampled, config.k_clusters).at(Stage::Refine)?;
    let mut mask = refine_by_similarity(&planes, &centers).at(Stage::Refine)?;
    let refine_ms = millis(t);

    let t = Instant::now();
    if let (Some(rgb_path), true) = (&args.rgb, config.t_ref > 0) {
        let rgb = read_npy(rgb_path).at(Stage::ReadPlanes)?;
        let depth = args
            .depth
            .as_ref()
            .map(read_npy)
            .transpose()
            .at(Stage::ReadPlanes)?;
        mask = refine_with_planes(&mask, &rgb, depth.as_ref(), &config).at(Stage::Dream)?;
    }
    let dream_ms = millis(t);

    let score = args
        .gt
        .as_ref()
        .map(|gt_path| {
            let gt = read_pgm(gt_path)?;
            miou(&mask, &gt, gt.label_bound(), false, None)
        })
        .transpose()
        .at(Stage::Evaluate)?;

    let manifest_path = manifest_path_for(&args.out);
    let manifest = RunManifest {
        config,
        features: features_path,
        rgb: args.rgb.clone(),
        depth: args.depth.clone(),
        gt: args.gt.clone(),
        grid_h,
        grid_w,
        out_h: args.out_h,
        out_w: args.out_w,
        restart_count: args.restarts,
        best_seed: best.seed,
        iterations_run: best.report.iterations_run,
        objective: best.objective,
        miou: score,
        mask_path: args.out.clone(),
        manifest_path: manifest_path.clone(),
        timings: StageTimings {
            read_ms,
            affinity_ms,
            solve_ms,
            mask_ms,
            refine_ms,
            dream_ms,
            total_ms: millis(started),
        },
    };
    write_pgm(&mask, &args.out).at(Stage::Write)?;
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::MalformedJson(e.to_string()))
        .at(Stage::Write)?;
    std::fs::write(&manifest_path, json + "\n")
        .map_err(Error::from)
        .at(Stage::Write)?;
    Ok(manifest)
}

/// Reads a mask written by the pipeline.
pub fn read_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    read_pgm(path)
}

/// Benchmark settings, independent of argument parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub n: usize,
    pub d: usize,
    pub trials: usize,
    pub seed: u64,
    /// Solver configuration; `k_clusters` and `t_cuts` apply to both methods.
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub trial: usize,
    pub method: &'static str,
    pub millis: f64,
    pub ncut: f64,
}

pub const ALTERNATING_METHOD: &str = "alternating";
pub const SPECTRAL_METHOD: &str = "spectral";

/// Seeded `n×d` features with entries uniform in `[−1, 1]`.
pub fn random_features(n: usize, d: usize, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(
        vec![n, d],
        (0..n * d)
            .map(|_| rng.random_range(-1.0f32..=1.0))
            .collect(),
    )
}

/// Times one solve and one recursive spectral partition per trial on the
/// same affinity graph. Only the partitioning step is timed.
pub fn run_bench(options: &BenchOptions) -> Result<Vec<BenchRow>> {
    options.config.validate()?;
    let k = options.config.k_clusters;
    let mut rows = Vec::with_capacity(2 * options.trials);
    for trial in 0..options.trials {
        let seed = options.seed.wrapping_add(trial as u64);
        let features = l2_normalize_rows(&random_features(options.n, options.d, seed)?)?;
        let graph = build_affinity(
            &features,
            options.config.alpha_power,
            options.config.lambda_affinity,
        )?;

        let t = Instant::now();
        let (asg, _) = solve(
            &graph,
            &PipelineConfig {
                seed,
                ..options.config.clone()
            },
        )?;
        let alternating_ms = millis(t);
        rows.push(BenchRow {
            trial,
            method: ALTERNATING_METHOD,
            millis: alternating_ms,
            ncut: graph.ncut(&asg.hard_labels(), k),
        });

        let t = Instant::now();
        let partition = spectral_recursive_ncut(&graph, k)?;
        let spectral_ms = millis(t);
        rows.push(BenchRow {
            trial,
            method: SPECTRAL_METHOD,
            millis: spectral_ms,
            ncut: partition.ncut(&graph),
        });
    }
    Ok(rows)
}

pub fn write_bench_csv(rows: &[BenchRow], sink: impl Write) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(sink);
    let csv_err = |e: csv::Error| Error::IoFailure(std::io::Error::other(e));
    writer
        .write_record(["trial", "method", "millis", "ncut"])
        .map_err(csv_err)?;
    for row in rows {
        writer.serialize(row).map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

fn bench_command(args: &BenchArgs) -> std::result::Result<(), StageError> {
    let mut config = resolve_config(args.config.as_deref()).at(Stage::Config)?;
    config.k_clusters = args.k;
    config.t_cuts = args.t_cuts;
    config.validate().at(Stage::Config)?;
    let options = BenchOptions {
        n: args.n,
        d: args.d,
        trials: args.trials,
        seed: args.seed,
        config,
    };
    let rows = run_bench(&options).at(Stage::Bench)?;
    match &args.out {
        Some(path) => {
            let file = std::fs::File::create(path)
                .map_err(Error::from)
                .at(Stage::Write)?;
            write_bench_csv(&rows, file).at(Stage::Write)
        }
        None => write_bench_csv(&rows, std::io::stdout().lock()).at(Stage::Write),
    }
}

/// Parses arguments, runs the requested command and returns the exit code:
/// 0 on success, 1 on a stage failure, 2 on a usage error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match &cli.command {
        Some(Command::Bench(bench)) => bench_command(bench),
        None => run_pipeline(&cli.run).map(|manifest| {
            if let Some(score) = manifest.miou {
                println!("mIoU: {score:.6}");
            }
        }),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_features_is_a_usage_error() {
        assert_eq!(main_with_args(["fracut", "--out", "x.pgm"]), 2);
    }

    #[test]
    fn depth_requires_rgb() {
        assert_eq!(
            main_with_args(["fracut", "--features", "f.npy", "--depth", "d.npy"]),
            2
        );
    }

    #[test]
    fn zero_restarts_rejected_by_parser() {
        assert_eq!(
            main_with_args(["fracut", "--features", "f.npy", "--restarts", "0"]),
            2
        );
    }

    #[test]
    fn grid_inference() {
        let t = Tensor::new(vec![16, 2], vec![1.0; 32]).unwrap();
        let (_, h, w) = token_grid(t.clone(), None, None).unwrap();
        assert_eq!((h, w), (4, 4));
        let (_, h, w) = token_grid(t.clone(), Some(2), None).unwrap();
        assert_eq!((h, w), (2, 8));
        assert!(token_grid(t.clone(), Some(3), Some(3)).is_err());
        let cube = Tensor::new(vec![2, 3, 1], vec![1.0; 6]).unwrap();
        let (flat, h, w) = token_grid(cube, None, None).unwrap();
        assert_eq!((flat.shape(), h, w), (&[6usize, 1][..], 2, 3));
        let odd = Tensor::new(vec![6, 1], vec![1.0; 6]).unwrap();
        assert!(token_grid(odd, None, None).is_err());
    }

    #[test]
    fn rows_are_unit_norm() {
        let t = Tensor::new(vec![3, 2], vec![3., 4., 0., 0., -2., 0.]).unwrap();
        let n = l2_normalize_rows(&t).unwrap();
        assert_eq!(n.data(), &[0.6, 0.8, 0.0, 0.0, -1.0, 0.0]);
    }

    #[test]
    fn restarts_keep_the_best_and_are_nested() {
        let features = l2_normalize_rows(&random_features(12, 4, 3).unwrap()).unwrap();
        let graph = build_affinity(&features, 4.5, 0.1).unwrap();
        let config = PipelineConfig {
            k_clusters: 3,
            softmax_temperature: 0.01,
            ..Default::default()
        };
        let mut previous = f64::NEG_INFINITY;
        for r in 1..=6 {
            let best = best_of_restarts(&graph, &config, r).unwrap();
            assert!(best.objective >= previous);
            assert!(best.seed < r);
            previous = best.objective;
        }
    }

    #[test]
    fn bench_with_zero_trials_is_header_only() {
        let options = BenchOptions {
            n: 8,
            d: 4,
            trials: 0,
            seed: 0,
            config: PipelineConfig {
                k_clusters: 2,
                ..Default::default()
            },
        };
        let mut out = Vec::new();
        write_bench_csv(&run_bench(&options).unwrap(), &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "trial,method,millis,ncut\n"
        );
    }
}
