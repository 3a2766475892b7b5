use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use ardr::datasets::{generate, Dataset, Generator, SyntheticSpec};
use ardr_core::engine::{
    descend, initial_embedding, lowrank_pca_gradient, umap_effective_optimize, Init, LrDecay, RunConfig,
};
use ardr_core::kernels::{input_kernel_matrix, OutputKernel};
use ardr_core::linalg::{
    center_rows, double_center, gram, procrustes_residual, sq_dist_matrix, sym_eigh, Matrix, Metric, SpectrumEnd,
};
use ardr_core::metrics::{metric_report, normalize_jointly, Divisor, MetricRequest};
use ardr_core::neighbors::{geodesic_dists, knn_graph, lle_weights, m_matrix, DEFAULT_K, DEFAULT_LLE_REG};
use ardr_core::objectives::{
    assemble_pairwise, dkpca_gradient, dkpca_loss, dklle_gradient, dklle_loss, pca_gradient, pca_loss,
    pca_pair_field, umap_intended_gradient, umap_intended_loss, GradientScheme, DEFAULT_UMAP_EPS,
};
use ardr_core::oracles::{cmds_oracle, finite_diff_grad, lle_oracle, pca_oracle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gaussian(n: usize, dim: usize, scales: &[f64], seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(n, dim, |_, j| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scales[j]
    })
}

/// Column scales 1.0, 0.9, ..., 0.1.
fn decaying_scales(dim: usize) -> Vec<f64> {
    (0..dim).map(|j| 1.0 - j as f64 / dim as f64).collect()
}

fn synthetic(kind: &str, n: usize, seed: u64) -> Dataset {
    generate(&SyntheticSpec {
        n,
        seed,
        generator: Generator::from_kind(kind).unwrap(),
    })
    .unwrap()
}

/// Full-batch descent from a seeded Gaussian start with a constant step of
/// `0.05 / (4 lambda_1)`.
fn descend_to_oracle(scheme: &GradientScheme, oracle: &Matrix, lambda1: f64, seed: u64) -> f64 {
    let cfg = RunConfig {
        seed,
        epochs: 4000,
        learning_rate: 0.05 / (4.0 * lambda1),
        lr_decay: LrDecay::None,
        init: Init::Provided,
        record_every: 4000,
        ..RunConfig::default()
    };
    let y0 = initial_embedding(Init::RandomGaussian { scale: 1.0 }, oracle.rows(), 2, None, seed).unwrap();
    let r = descend(scheme, &y0, &cfg, None).unwrap();
    procrustes_residual(&center_rows(&r.embedding), oracle).unwrap()
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut slowest: f64 = 0.0;
    for seed in SEEDS {
        let t = Instant::now();
        let x = gaussian(300, 10, &decaying_scales(10), seed);
        let o = pca_oracle(&x, 2).unwrap();
        let res = descend_to_oracle(&GradientScheme::pca(&x), &o.embedding, o.spectrum[0], seed);
        worst = worst.max(res);
        slowest = slowest.max(t.elapsed().as_secs_f64());
    }
    outcome(
        worst <= 1e-2 && slowest <= 60.0,
        format!("max residual {worst:.2e}, slowest seed {slowest:.1}s"),
    )
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in SEEDS {
        let x = gaussian(300, 10, &decaying_scales(10), seed);
        let dsq = sq_dist_matrix(&x, Metric::L1);
        let o = cmds_oracle(&dsq, 2).unwrap();
        let res = descend_to_oracle(&GradientScheme::cmds(&dsq).unwrap(), &o.embedding, o.spectrum[0], seed);
        worst = worst.max(res);
    }
    outcome(worst <= 1e-2, format!("max residual {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in SEEDS {
        let data = synthetic("swiss_roll", 300, seed);
        let geo = geodesic_dists(&knn_graph(&data.x, 10, Metric::EuclideanSq).unwrap()).unwrap();
        let o = cmds_oracle(&geo.squared, 2).unwrap();
        let res = descend_to_oracle(&GradientScheme::isomap(&geo).unwrap(), &o.embedding, o.spectrum[0], seed);
        worst = worst.max(res);
    }
    outcome(worst <= 2e-2, format!("max residual {worst:.2e}"))
}

fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().frob_norm() / b.frob_norm().max(f64::MIN_POSITIVE)
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let n = 10;
    let mut worst = [0.0f64; 4];
    for seed in SEEDS {
        let x = gaussian(n, 4, &[1.0; 4], 100 + seed);
        let y = gaussian(n, 2, &[1.0; 2], 200 + seed);
        let g = knn_graph(&x, 4, Metric::EuclideanSq).unwrap();
        let kx = input_kernel_matrix(&x, &g, Default::default()).unwrap();
        let gx_c = double_center(&gram(&x));
        let kx_c = double_center(&kx);
        let w = lle_weights(&x, &g, DEFAULT_LLE_REG).unwrap();
        let m = m_matrix(&w);
        let ck = OutputKernel::Cauchy;
        let h = 1e-5;
        let pairs = [
            (pca_gradient(&gx_c, &y).unwrap(), finite_diff_grad(|z| pca_loss(&gx_c, z), &y, h).unwrap()),
            (
                dkpca_gradient(&kx_c, &y, ck).unwrap(),
                finite_diff_grad(|z| dkpca_loss(&kx_c, z, ck), &y, h).unwrap(),
            ),
            (
                dklle_gradient(&w, &y, ck).unwrap(),
                finite_diff_grad(|z| dklle_loss(&m, z, ck), &y, h).unwrap(),
            ),
            (
                umap_intended_gradient(&kx, &y, ck, DEFAULT_UMAP_EPS).unwrap(),
                finite_diff_grad(|z| umap_intended_loss(&kx, z, DEFAULT_UMAP_EPS), &y, h).unwrap(),
            ),
        ];
        for (i, (an, fd)) in pairs.iter().enumerate() {
            worst[i] = worst[i].max(rel_err(an, fd));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let max = worst.iter().cloned().fold(0.0, f64::max);
    outcome(
        max <= 1e-5 && secs <= 10.0,
        format!(
            "rel err pca {:.1e}, dkpca {:.1e}, dklle {:.1e}, umap {:.1e}; {secs:.2}s",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(5..40);
        let dim = rng.random_range(2..8);
        let x = gaussian(n, dim, &vec![1.0; dim], 300 + seed);
        let y = gaussian(n, 2, &[1.0; 2], 400 + seed);
        let gx_c = double_center(&gram(&x));
        let matrix_form = pca_gradient(&gx_c, &y).unwrap();
        let pairwise = assemble_pairwise(&pca_pair_field(&gx_c, &y).unwrap(), &y).unwrap();
        worst = worst.max(matrix_form.max_abs_diff(&pairwise));
    }
    outcome(worst <= 1e-10, format!("max entry diff {worst:.2e} over 20 instances"))
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let (mut held, mut aligned, mut tried) = (0, 0, 0u64);
    while held < 100 && tried < 10_000 {
        let seed = tried;
        tried += 1;
        let x = gaussian(40, 10, &decaying_scales(10), 500 + seed);
        let y = gaussian(40, 2, &[0.1; 2], 600 + seed);
        let gx_c = double_center(&gram(&x));
        let r = lowrank_pca_gradient(&gx_c, &y, 3, 0.1, seed).unwrap();
        if !r.condition_holds {
            continue;
        }
        held += 1;
        if r.alignment > 0.0 {
            aligned += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        held == 100 && aligned == 100 && secs <= 30.0,
        format!("{aligned}/{held} aligned ({tried} instances drawn), {secs:.2}s"),
    )
}

fn criterion_7() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..60);
        let dim = rng.random_range(1..12);
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let x = gaussian(n, dim, &vec![scale; dim], 700 + seed);
        let cdc = double_center(&sq_dist_matrix(&x, Metric::EuclideanSq));
        let cgc = double_center(&gram(&x)).scaled(-2.0);
        worst = worst.max(cdc.as_matrix().max_abs_diff(cgc.as_matrix()));
    }
    outcome(worst <= 1e-8, format!("max entry diff {worst:.2e} over 50 datasets"))
}

fn random_orthonormal(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < d {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        v.iter_mut().for_each(|e| *e -= mean);
        for c in &cols {
            let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
        }
        let norm = v.iter().map(|e| e * e).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|e| e / norm).collect());
        }
    }
    Matrix::from_fn(n, d, |i, j| cols[j][i])
}

fn trace_form(m: &ardr_core::linalg::SymMatrix, y: &Matrix) -> f64 {
    let my = m.mul_mat(y).unwrap();
    my.as_slice().iter().zip(y.as_slice()).map(|(a, b)| a * b).sum()
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut row_err, mut null_err, mut min_eig, mut losses) = (0.0f64, 0.0f64, f64::INFINITY, 0);
    for seed in 0..20u64 {
        let n = 60;
        let x = gaussian(n, 5, &decaying_scales(5), 800 + seed);
        let g = knn_graph(&x, 8, Metric::EuclideanSq).unwrap();
        let w = lle_weights(&x, &g, DEFAULT_LLE_REG).unwrap();
        for i in 0..n {
            let s: f64 = w.row(i).iter().map(|e| e.1).sum();
            row_err = row_err.max((s - 1.0).abs());
        }
        let m = m_matrix(&w);
        let scale = m.frob_norm();
        let ones = Matrix::from_fn(n, 1, |_, _| 1.0);
        null_err = null_err.max(m.mul_mat(&ones).unwrap().frob_norm() / scale);
        let low = sym_eigh(&m, 1, SpectrumEnd::Smallest).unwrap();
        min_eig = min_eig.min(low.values[0] / scale);
        let o = lle_oracle(&m, 2).unwrap();
        let best = trace_form(&m, &o.embedding.scaled(1.0 / (n as f64).sqrt()));
        for _ in 0..50 {
            if trace_form(&m, &random_orthonormal(n, 2, &mut rng)) <= best {
                losses += 1;
            }
        }
    }
    outcome(
        row_err <= 1e-8 && losses == 0 && min_eig >= -1e-10 && null_err <= 1e-10,
        format!(
            "row-sum err {row_err:.1e}, oracle beaten {losses}/1000, min eig/|M| {min_eig:.1e}, |M1|/|M| {null_err:.1e}"
        ),
    )
}

struct Pair {
    dklle: ardr_core::engine::RunResult,
    umap: ardr_core::engine::RunResult,
    data: Dataset,
}

fn paired_runs(kind: &str, seed: u64, learning_rate: f64) -> Pair {
    let data = synthetic(kind, 1000, seed);
    let g = knn_graph(&data.x, DEFAULT_K, Metric::EuclideanSq).unwrap();
    let kx = input_kernel_matrix(&data.x, &g, Default::default()).unwrap();
    let y0 = initial_embedding(Init::LaplacianEigenmaps, 1000, 2, Some(&kx), seed).unwrap();
    let dk = GradientScheme::dklle(lle_weights(&data.x, &g, DEFAULT_LLE_REG).unwrap());
    let cfg = RunConfig {
        seed,
        learning_rate,
        init: Init::Provided,
        record_every: 10,
        ..RunConfig::default()
    };
    let dklle = descend(&dk, &y0, &cfg, Some(&dk)).unwrap();
    let umap = umap_effective_optimize(&kx, &g, &y0, &cfg, Some(&dk)).unwrap();
    Pair { dklle, umap, data }
}

fn criterion_9() -> Outcome {
    let req = MetricRequest {
        knn_k: 5,
        divisor: Divisor::Exclusive,
        ..MetricRequest::default()
    };
    let mut lines = Vec::new();
    let mut pass = true;
    for kind in ["swiss_roll", "gaussian_blobs"] {
        let t = Instant::now();
        let mut ok = 0;
        let (mut gap_ratio, mut gap_knn) = (0.0f64, 0.0f64);
        for seed in SEEDS {
            let p = paired_runs(kind, seed, 1.0);
            let labels = p.data.labels.as_deref();
            let a = metric_report(&p.data.x, &p.dklle.embedding, labels, &req).unwrap();
            let b = metric_report(&p.data.x, &p.umap.embedding, labels, &req).unwrap();
            let e = a
                .preservation_ratios
                .iter()
                .zip(&b.preservation_ratios)
                .map(|(x, y)| (x.2 - y.2).abs())
                .fold(0.0, f64::max);
            let k = (a.knn_accuracy.unwrap() - b.knn_accuracy.unwrap()).abs();
            gap_ratio = gap_ratio.max(e);
            gap_knn = gap_knn.max(k);
            if e <= 0.1 && k <= 0.05 {
                ok += 1;
            }
        }
        let secs = t.elapsed().as_secs_f64();
        pass &= ok >= 4 && secs <= 600.0;
        lines.push(format!(
            "{kind} {ok}/5 seeds (max ratio gap {gap_ratio:.3}, max knn gap {gap_knn:.3}, {secs:.0}s)"
        ));
    }
    outcome(pass, lines.join("; "))
}

fn criterion_10() -> Outcome {
    let mut ok = 0;
    let mut finals = Vec::new();
    for seed in SEEDS {
        let p = paired_runs("swiss_roll", seed, 1e-3);
        let joint = normalize_jointly(&[&p.dklle.probe_curve, &p.umap.loss_curve]);
        let (gd, um) = (joint[0].last().unwrap().1, joint[1].last().unwrap().1);
        if um <= gd {
            ok += 1;
        }
        finals.push(format!("{um:.3}/{gd:.3}"));
    }
    outcome(
        ok >= 4,
        format!("{ok}/5 seeds; final normalized loss umap/descent {}", finals.join(" ")),
    )
}

fn criterion_11() -> Outcome {
    let data = synthetic("swiss_roll", 100, 11);
    let g = knn_graph(&data.x, DEFAULT_K, Metric::EuclideanSq).unwrap();
    let kx = input_kernel_matrix(&data.x, &g, Default::default()).unwrap();
    let y0 = initial_embedding(Init::LaplacianEigenmaps, 100, 2, Some(&kx), 11).unwrap();
    let dk = GradientScheme::dklle(lle_weights(&data.x, &g, DEFAULT_LLE_REG).unwrap());
    let cfg = RunConfig {
        seed: 11,
        epochs: 200,
        learning_rate: 1e-3,
        lr_decay: LrDecay::None,
        init: Init::Provided,
        record_every: 1,
        ..RunConfig::default()
    };
    let r = descend(&dk, &y0, &cfg, None).unwrap();
    let worst = r
        .loss_curve
        .windows(2)
        .map(|w| w[1].1 - w[0].1)
        .fold(f64::NEG_INFINITY, f64::max);
    let (first, last) = (r.loss_curve[0].1, r.loss_curve.last().unwrap().1);
    outcome(
        worst <= 1e-9 && r.loss_curve.len() == 201,
        format!("largest per-epoch change {worst:.2e}; loss {first:.4} -> {last:.4}"),
    )
}

fn run_cli(config: &Path, out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_ardr"))
        .arg("run")
        .arg(config)
        .arg("--outputs")
        .arg(out)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn criterion_12() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let files = ["embedding.csv", "loss_curve.csv", "metrics.json", "scatter.svg"];
    let mut checked = 0;
    let gaussian_init = r#"{"kind": "random_gaussian", "scale": 1.0}"#;
    let spectral_init = r#"{"kind": "laplacian_eigenmaps"}"#;
    for (scheme, lr, init) in [
        ("pca", 1e-4, gaussian_init),
        ("dklle", 1.0, spectral_init),
        ("umap_effective", 1.0, spectral_init),
        ("lle_oracle", 1.0, spectral_init),
    ] {
        let cfg = tmp.path().join(format!("{scheme}.json"));
        let body = format!(
            r#"{{"dataset": {{"source": {{"synthetic": {{"kind": "swiss_roll", "n": 300, "seed": 12}}}}, "standardize": true}},
"scheme": {{"name": "{scheme}", "probe": "dklle"}},
"run": {{"seed": 12, "epochs": 100, "learning_rate": {lr}, "init": {init}}}}}"#
        );
        fs::write(&cfg, body).unwrap();
        let (a, b) = (tmp.path().join(format!("{scheme}.a")), tmp.path().join(format!("{scheme}.b")));
        if !run_cli(&cfg, &a) || !run_cli(&cfg, &b) {
            return outcome(false, format!("{scheme}: run failed"));
        }
        for f in files {
            if fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap() {
                return outcome(false, format!("{scheme}: {f} differs"));
            }
            checked += 1;
        }
    }
    outcome(true, format!("{checked} files identical across 4 schemes"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("gradient PCA matches eigendecomposition", criterion_1),
        ("gradient cMDS (L1) matches oracle", criterion_2),
        ("gradient Isomap matches oracle", criterion_3),
        ("analytic gradients match finite differences", criterion_4),
        ("PCA gradient equals pairwise attraction/repulsion", criterion_5),
        ("low-rank gradient stays aligned", criterion_6),
        ("centered distances equal -2 centered Gram", criterion_7),
        ("LLE weights, oracle optimality, M psd", criterion_8),
        ("DK-LLE and UMAP parity", criterion_9),
        ("UMAP converges faster on the DK-LLE loss", criterion_10),
        ("full-batch DK-LLE descent is monotone", criterion_11),
        ("CLI runs are byte-identical", criterion_12),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = std::panic::catch_unwind(f).unwrap_or_else(|_| outcome(false, "panicked".into()));
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} ({})",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail
        );
    }
    println!("{} of 12 criteria passed", 12 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
