//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line
//! with the measured values, then asserts. Run with `--nocapture` to see the
//! lines. All criteria share one lock so the timing criterion runs alone.

mod common;

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use fracut::cli::{
    best_of_restarts, l2_normalize_rows, run_bench, run_pipeline, BenchOptions, RunArgs,
    ALTERNATING_METHOD,
};
use fracut::dream::{diffuse_step, fuse_affinities, neighborhood_affinity, SoftMask};
use fracut::eval::{hungarian_match, CostMatrix};
use fracut::graph::{build_affinity, AffinityGraph};
use fracut::maskgen::LabelMask;
use fracut::oracle::{exact_kway_ncut, spectral_recursive_ncut};
use fracut::solver::{
    fqt_objective, reweight_graph, solve, update_assignment, update_aux, SoftAssignment,
};
use fracut::tensor_io::{read_pgm, write_npy, write_pgm, PipelineConfig, Tensor};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL
        .lock()
        .unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn report(criterion: u32, pass: bool, detail: String) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

/// Solver settings for the small random-graph criteria.
fn small_graph_config(k: usize) -> PipelineConfig {
    PipelineConfig {
        k_clusters: k,
        softmax_temperature: 0.001,
        beta_reweight: 2.0,
        objective_tol: 0.0,
        ..Default::default()
    }
}

/// Best Ncut over restarts with seeds `0..restarts`, counting only labelings
/// that populate all `k` clusters. `None` when no restart does.
fn best_valid_ncut(graph: &AffinityGraph, config: &PipelineConfig, restarts: u64) -> Option<f64> {
    let k = config.k_clusters;
    (0..restarts)
        .filter_map(|seed| {
            let (asg, _) = solve(
                graph,
                &PipelineConfig {
                    seed,
                    ..config.clone()
                },
            )
            .unwrap();
            let labels = asg.hard_labels();
            (0..k)
                .all(|c| labels.contains(&c))
                .then(|| graph.ncut(&labels, k))
        })
        .reduce(f64::min)
}

#[test]
fn criterion_1_near_optimal_on_random_graphs() {
    let _guard = serial();
    let started = Instant::now();
    let mut rng = common::rng(2024);
    let mut within = 0;
    let mut no_valid = 0;
    let mut worst: f64 = 1.0;
    for i in 0..100 {
        let n = rng.random_range(5..=10);
        let k = 2 + i % 2;
        let g = common::uniform_graph(n, &mut rng);
        let (_, optimum) = exact_kway_ncut(&g, k, 12).unwrap();
        match best_valid_ncut(&g, &small_graph_config(k), 10) {
            Some(best) => {
                worst = worst.max(best / optimum);
                if best <= 1.05 * optimum {
                    within += 1;
                }
            }
            None => no_valid += 1,
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    let pass = within >= 95 && seconds < 30.0;
    report(
        1,
        pass,
        format!(
            "{within}/100 instances within 5% of the exhaustive optimum (need 95); \
             {no_valid} with no restart populating all clusters; worst ratio {worst:.3}; {seconds:.1}s"
        ),
    );
    assert!(pass);
}

/// Three planted blocks of 2–4 nodes: strong intra-block, weak inter-block weights.
fn planted_three_blocks(seed: u64) -> AffinityGraph {
    let mut rng = common::rng(seed);
    let sizes: Vec<usize> = (0..3).map(|_| rng.random_range(2..=4)).collect();
    let block: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    let n = block.len();
    let mut w = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = if block[i] == block[j] {
                rng.random_range(0.5..1.0)
            } else {
                rng.random_range(0.0..0.35)
            };
            w[[i, j]] = v;
            w[[j, i]] = v;
        }
    }
    AffinityGraph::from_weights(w).unwrap()
}

#[test]
fn criterion_2_recursive_bipartition_is_suboptimal_where_kway_is_not() {
    let _guard = serial();
    let config = small_graph_config(3);
    let mut witness = None;
    let mut searched = 0;
    for seed in 0..500 {
        searched += 1;
        let g = planted_three_blocks(seed);
        let (_, optimum) = exact_kway_ncut(&g, 3, 12).unwrap();
        let spectral = spectral_recursive_ncut(&g, 3).unwrap().ncut(&g);
        if spectral <= optimum + 1e-9 {
            continue;
        }
        if let Some(best) = best_valid_ncut(&g, &config, 10) {
            if (best - optimum).abs() <= 1e-6 {
                witness = Some((seed, g.n_nodes(), optimum, spectral, best));
                break;
            }
        }
    }
    let pass = witness.is_some();
    let detail = match witness {
        Some((seed, n, optimum, spectral, best)) => format!(
            "planted instance {seed} (N={n}): optimum {optimum:.6}, recursive spectral {spectral:.6}, \
             alternating cut best-of-10 {best:.6}"
        ),
        None => format!("no witness among {searched} planted instances"),
    };
    report(2, pass, detail);
    assert!(pass);
}

/// Two groups of ℓ2-normalized features on disjoint coordinate halves, so the
/// affinity graph has exactly two connected components.
fn two_component_graph(seed: u64) -> (AffinityGraph, usize) {
    let mut rng = common::rng(seed);
    let (a, b) = (rng.random_range(2..9), rng.random_range(2..9));
    let (n, d) = (a + b, 16);
    let mut data = vec![0.0f32; n * d];
    for i in 0..n {
        let offset = if i < a { 0 } else { d / 2 };
        for c in 0..d / 2 {
            data[i * d + offset + c] = 1.0 + 0.3 * rng.random_range(-1.0f32..1.0);
        }
    }
    let features = l2_normalize_rows(&Tensor::new(vec![n, d], data).unwrap()).unwrap();
    (build_affinity(&features, 4.5, 0.1).unwrap(), a)
}

#[test]
fn criterion_3_disconnected_components_recovered() {
    let _guard = serial();
    let config = PipelineConfig {
        k_clusters: 2,
        softmax_temperature: 0.03,
        beta_reweight: 2.0,
        ..Default::default()
    };
    let mut failures = Vec::new();
    let mut worst_soft: f64 = 0.0;
    for graph_seed in 0..10 {
        let (g, split) = two_component_graph(graph_seed);
        for seed in 0..50 {
            let (asg, report) = solve(
                &g,
                &PipelineConfig {
                    seed,
                    ..config.clone()
                },
            )
            .unwrap();
            let labels = asg.hard_labels();
            let separated = labels[..split].iter().all(|&l| l == labels[0])
                && labels[split..].iter().all(|&l| l == labels[split])
                && labels[0] != labels[split];
            let objective = g.rayleigh_sum(&labels, 2);
            worst_soft = worst_soft.max((report.rayleigh_trace.last().unwrap() - 2.0).abs());
            if !separated || (objective - 2.0).abs() > 1e-6 {
                failures.push((graph_seed, seed));
            }
        }
    }
    let pass = failures.is_empty();
    report(
        3,
        pass,
        format!(
            "{}/500 (10 graphs × 50 seeds) recovered both components with objective 2 ± 1e-6; \
             largest soft-assignment deviation {worst_soft:.1e}; failures {failures:?}",
            500 - failures.len()
        ),
    );
    assert!(pass);
}

fn random_assignment(n: usize, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut x = Array2::from_shape_fn((n, k), |_| rng.random_range(0.01..1.0));
    for mut row in x.axis_iter_mut(Axis(0)) {
        let s = row.sum();
        row /= s;
    }
    x
}

#[test]
fn criterion_4_aux_update_never_decreases_objective() {
    let _guard = serial();
    let mut rng = common::rng(4);
    let mut worst_drop: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..500 {
        let n = rng.random_range(3..12);
        let k = rng.random_range(2..5);
        let g = common::uniform_graph(n, &mut rng);
        let aux = Array1::from_shape_fn(k, |_| rng.random_range(0.0..3.0));
        let asg = SoftAssignment::new(random_assignment(n, k, &mut rng), aux).unwrap();
        let before = fqt_objective(&g, &asg).unwrap();
        let after = fqt_objective(&g, &update_aux(&g, &asg, 1e-12).unwrap()).unwrap();
        worst_drop = worst_drop.max(before - after);
        if after < before - 1e-9 {
            violations += 1;
        }
    }
    let pass = violations == 0;
    report(
        4,
        pass,
        format!("500 pairs, {violations} decreases beyond 1e-9 (largest drop {worst_drop:.2e})"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_invariant_suite() {
    let _guard = serial();
    let mut rng = common::rng(5);
    let cases = 100;
    let mut results: Vec<(&str, usize)> = Vec::new();

    let mut ok = 0;
    for _ in 0..cases {
        let (n, k) = (rng.random_range(3..12), rng.random_range(2..5));
        let g = common::uniform_graph(n, &mut rng);
        let asg = update_aux(
            &g,
            &SoftAssignment::new(random_assignment(n, k, &mut rng), Array1::ones(k)).unwrap(),
            1e-12,
        )
        .unwrap();
        let out = update_assignment(&g, &asg, rng.random_range(0.001..2.0), 1e-8).unwrap();
        if out
            .assignment
            .rows()
            .into_iter()
            .all(|r| (r.sum() - 1.0).abs() <= 1e-9 && r.iter().all(|v| (0.0..=1.0).contains(v)))
        {
            ok += 1;
        }
    }
    results.push(("simplex rows", ok));

    let mut ok = 0;
    for _ in 0..cases {
        let (n, k) = (rng.random_range(3..12), rng.random_range(2..5));
        let g = common::uniform_graph(n, &mut rng);
        let asg = SoftAssignment::new(random_assignment(n, k, &mut rng), Array1::ones(k)).unwrap();
        let out = reweight_graph(&g, &asg, rng.random_range(0.1..5.0), 1e-8).unwrap();
        let w = out.weights();
        if (0..n).all(|i| (0..n).all(|j| (w[[i, j]] - w[[j, i]]).abs() <= 1e-12)) {
            ok += 1;
        }
    }
    results.push(("reweighted symmetry", ok));

    let mut ok = 0;
    for _ in 0..cases {
        let (n, d) = (rng.random_range(2..20), rng.random_range(1..8));
        let f = Tensor::new(
            vec![n, d],
            (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        )
        .unwrap();
        let g = build_affinity(&f, rng.random_range(0.5..6.0), rng.random_range(0.0..1.0)).unwrap();
        let asg = SoftAssignment::new(random_assignment(n, 3, &mut rng), Array1::ones(3)).unwrap();
        let r = reweight_graph(&g, &asg, 1.0, 1e-8).unwrap();
        let consistent = |g: &AffinityGraph| {
            g.weights()
                .rows()
                .into_iter()
                .zip(g.degrees())
                .all(|(row, &d)| (row.sum() - d).abs() <= 1e-9)
        };
        if consistent(&g) && consistent(&r) {
            ok += 1;
        }
    }
    results.push(("degree consistency", ok));

    let mut ok = 0;
    for _ in 0..cases {
        let (n, d) = (rng.random_range(2..20), rng.random_range(1..8));
        let f = Tensor::new(
            vec![n, d],
            (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        )
        .unwrap();
        let alpha = rng.random_range(0.5..8.0);
        let g = build_affinity(&f, alpha, 0.0).unwrap();
        let (lo, hi) = g
            .weights()
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if lo == 0.0 && hi == 1.0 && 0.0f64.powf(alpha) == 0.0 && 1.0f64.powf(alpha) == 1.0 {
            ok += 1;
        }
    }
    results.push(("power-transform fixed points", ok));

    let random_plane = |rng: &mut common::Rng8, c: usize, h: usize, w: usize| {
        Tensor::new(
            vec![c, h, w],
            (0..c * h * w)
                .map(|_| rng.random_range(0.0f32..1.0))
                .collect(),
        )
        .unwrap()
    };
    let mut ok = 0;
    for _ in 0..cases {
        let (h, w, k) = (
            rng.random_range(1..10),
            rng.random_range(1..10),
            rng.random_range(1..6),
        );
        let rgb = neighborhood_affinity(&random_plane(&mut rng, 3, h, w), 1.0, 0.1, 1e-8).unwrap();
        let depth =
            neighborhood_affinity(&random_plane(&mut rng, 1, h, w), 1.0, 0.1, 1e-8).unwrap();
        let fused = fuse_affinities(&rgb, Some(&depth), 0.7, 0.3).unwrap();
        let labels = (0..h * w).map(|_| rng.random_range(0..k)).collect();
        let mut soft = SoftMask::one_hot(&LabelMask::new(h, w, labels).unwrap(), k).unwrap();
        let mut conserved = true;
        for _ in 0..10 {
            soft = diffuse_step(&soft, &fused).unwrap();
            conserved &= soft.max_mass_error() <= 1e-9;
        }
        ok += usize::from(conserved);
    }
    results.push(("refinement probability conservation", ok));

    let mut ok = 0;
    for _ in 0..cases {
        let (h, w, k) = (
            rng.random_range(1..10),
            rng.random_range(1..10),
            rng.random_range(1..6),
        );
        let rgb = neighborhood_affinity(&random_plane(&mut rng, 3, h, w), 1.0, 0.1, 1e-8).unwrap();
        let fused = fuse_affinities(&rgb, None, 0.7, 0.0).unwrap();
        let start = SoftMask::one_hot(&LabelMask::filled(h, w, rng.random_range(0..k)).unwrap(), k)
            .unwrap();
        let next = diffuse_step(&start, &fused).unwrap();
        let fixed = (0..h).all(|r| {
            (0..w).all(|c| {
                next.pixel(r, c)
                    .iter()
                    .zip(start.pixel(r, c))
                    .all(|(a, b)| (a - b).abs() <= 1e-12)
            })
        });
        ok += usize::from(fixed);
    }
    results.push(("refinement uniform-mask fixed point", ok));

    let pass = results.iter().all(|&(_, ok)| ok == cases);
    let detail = results
        .iter()
        .map(|(name, ok)| format!("{name} {ok}/{cases}"))
        .collect::<Vec<_>>()
        .join(", ");
    report(5, pass, detail);
    assert!(pass);
}

#[test]
fn criterion_6_hungarian_matches_exhaustive_search() {
    let _guard = serial();
    let mut rng = common::rng(6);
    let mut exact = 0;
    let mut rectangular = 0;
    for _ in 0..200 {
        let (rows, cols) = (rng.random_range(1..=7), rng.random_range(1..=7));
        rectangular += usize::from(rows != cols);
        let costs: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.random_range(-50.0..50.0)).collect())
            .collect();
        let result = hungarian_match(&CostMatrix::from_rows(&costs).unwrap());
        if result.total_cost == common::brute_force_assignment(&costs) {
            exact += 1;
        }
    }
    let pass = exact == 200;
    report(
        6,
        pass,
        format!("{exact}/200 exact matches ({rectangular} rectangular)"),
    );
    assert!(pass);
}

#[test]
fn criterion_7_runtime_ordering() {
    let _guard = serial();
    let options = BenchOptions {
        n: 1024,
        d: 64,
        trials: 5,
        seed: 0,
        config: PipelineConfig {
            k_clusters: 32,
            t_cuts: 50,
            softmax_temperature: 1e-4,
            objective_tol: 0.0,
            ..Default::default()
        },
    };
    let rows = run_bench(&options).unwrap();
    let (alternating, spectral): (Vec<_>, Vec<_>) =
        rows.iter().partition(|r| r.method == ALTERNATING_METHOD);
    let mean = |rows: &[&fracut::cli::BenchRow], f: fn(&fracut::cli::BenchRow) -> f64| {
        rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64
    };
    let (alternating_ms, spectral_ms) = (
        mean(&alternating, |r| r.millis),
        mean(&spectral, |r| r.millis),
    );
    let slowest = alternating.iter().map(|r| r.millis).fold(0.0, f64::max);
    let pass = alternating.len() == 5 && alternating_ms <= spectral_ms && slowest < 2000.0;
    report(
        7,
        pass,
        format!(
            "mean {alternating_ms:.0} ms (slowest {slowest:.0} ms) vs spectral {spectral_ms:.0} ms; \
             mean Ncut {:.3} vs {:.3}",
            mean(&alternating, |r| r.ncut),
            mean(&spectral, |r| r.ncut)
        ),
    );
    assert!(pass);
}

/// 8×8 tokens in two orthogonal blocks (left e₀, right e₁) with matching
/// ground truth and a textured RGB plane at 32×32.
fn separable_grid(dir: &Path) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    let mut data = vec![0.0f32; 64 * 4];
    for p in 0..64 {
        data[p * 4 + usize::from(p % 8 >= 4)] = 1.0;
    }
    let features = dir.join("features.npy");
    write_npy(&Tensor::new(vec![64, 4], data).unwrap(), &features).unwrap();
    let gt = dir.join("gt.pgm");
    write_pgm(
        &LabelMask::new(
            32,
            32,
            (0..1024).map(|p| usize::from(p % 32 >= 16)).collect(),
        )
        .unwrap(),
        &gt,
    )
    .unwrap();
    let rgb = dir.join("rgb.npy");
    let plane = (0..3 * 1024)
        .map(|i| ((i * 7919) % 257) as f32 / 257.0)
        .collect();
    write_npy(&Tensor::new(vec![3, 32, 32], plane).unwrap(), &rgb).unwrap();
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{"k_clusters": 2, "softmax_temperature": 0.03, "t_ref": 0}"#,
    )
    .unwrap();
    (features, gt, rgb, config)
}

fn run_args(features: PathBuf, config: PathBuf, out: PathBuf) -> RunArgs {
    RunArgs {
        features: Some(features),
        rgb: None,
        depth: None,
        gt: None,
        config: Some(config),
        out,
        grid_h: None,
        grid_w: None,
        out_h: 32,
        out_w: 32,
        restarts: 3,
        seed: None,
        t_cuts: None,
    }
}

#[test]
fn criterion_8_separable_grid_end_to_end() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let (features, gt, _, config) = separable_grid(dir.path());
    let mut args = run_args(features, config, dir.path().join("mask.pgm"));
    args.gt = Some(gt);
    let manifest = run_pipeline(&args).unwrap();
    let labels = read_pgm(&args.out).unwrap().distinct_labels().len();
    let score = manifest.miou.unwrap();
    let pass = score == 1.0 && labels == 2;
    report(
        8,
        pass,
        format!(
            "separable 8×8 grid, K=2: mIoU {score:.6} with {labels} labels; benchmark mIoU tables are not \
             reproducible without foundation-model features and are substituted by criteria 1–7"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_identical_runs_are_byte_identical() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let (features, gt, rgb, _) = separable_grid(dir.path());
    let config = dir.path().join("refine.json");
    std::fs::write(
        &config,
        r#"{"k_clusters": 3, "softmax_temperature": 0.03, "t_ref": 10}"#,
    )
    .unwrap();
    let mut args = run_args(features, config, dir.path().join("mask.pgm"));
    let depth = dir.path().join("depth.npy");
    write_npy(
        &Tensor::new(vec![32, 32], (0..1024).map(|p| (p % 32) as f32).collect()).unwrap(),
        &depth,
    )
    .unwrap();
    args.rgb = Some(rgb);
    args.depth = Some(depth);
    args.gt = Some(gt);
    args.seed = Some(17);

    let strip_timings = |path: &Path| {
        let mut value: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        value.as_object_mut().unwrap().remove("timings");
        serde_json::to_string(&value).unwrap()
    };
    let first = run_pipeline(&args).unwrap();
    let (mask_a, manifest_a) = (
        std::fs::read(&args.out).unwrap(),
        strip_timings(&first.manifest_path),
    );
    let second = run_pipeline(&args).unwrap();
    let (mask_b, manifest_b) = (
        std::fs::read(&args.out).unwrap(),
        strip_timings(&second.manifest_path),
    );

    let features = fracut::tensor_io::read_npy(args.features.as_ref().unwrap()).unwrap();
    let g = build_affinity(&l2_normalize_rows(&features).unwrap(), 4.5, 0.1).unwrap();
    let config = PipelineConfig {
        k_clusters: 3,
        softmax_temperature: 0.03,
        seed: 17,
        ..Default::default()
    };
    let same_restart =
        best_of_restarts(&g, &config, 3).unwrap() == best_of_restarts(&g, &config, 3).unwrap();

    let pass = mask_a == mask_b && manifest_a == manifest_b && same_restart;
    report(
        9,
        pass,
        format!(
            "two runs with RGB and depth refinement: masks identical {}, manifests identical without timings {}, restarts identical {}",
            mask_a == mask_b,
            manifest_a == manifest_b,
            same_restart
        ),
    );
    assert!(pass);
}
