//! End-to-end acceptance run. One PASS/FAIL line per criterion; exits
//! nonzero if any criterion fails.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spnet::config::RunConfig;
use spnet::pipeline::{self, EvalMetrics, RetrievalSummary};
use spnet::synth::{self, SynthOptions};
use spnet_core::multiview::{aggregate, aggregate_backward, Aggregation};
use spnet_core::nn::layers::softmax_cross_entropy;
use spnet_core::nn::{SpnetConfig, SpnetModel};
use spnet_core::raycast::{BruteForceCaster, Bvh, HitMode, Ray, RayCaster};
use spnet_core::retrieval::{
    average_precision, distance, evaluate_retrieval, f_scores, ndcg, Descriptor, Metric,
};
use spnet_core::{render, shapes, ImageKind, ProjectionKind, RenderOptions, Rotation, SphereCoord, Vec3};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_budget(elapsed: Duration, budget: Duration, detail: String) -> Outcome {
    check(elapsed < budget, format!("{detail}; {:.2?} (budget {budget:.0?})", elapsed))
}

fn projections() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for kind in ProjectionKind::ALL {
        for i in 0..17 {
            for j in 0..17 {
                let c = SphereCoord::new(-PI + (i + 1) as f64 * 2.0 * PI / 18.0, -FRAC_PI_2 + (j + 1) as f64 * PI / 18.0);
                let p = kind.project(c);
                let back = kind.unproject(p).map_err(|e| format!("{} unproject failed: {e}", kind.name()))?;
                let again = kind.project(back);
                worst = worst
                    .max((back.lon - c.lon).abs())
                    .max((back.lat - c.lat).abs())
                    .max((again.u - p.u).abs())
                    .max((again.v - p.v).abs());
            }
        }
    }
    let kav_u = 1.5 * PI * (1.0f64 / 3.0 - 0.25).sqrt();
    let eck_v = (2.0 * PI / 3.0).sqrt();
    let cases = [
        (ProjectionKind::Uv, SphereCoord::new(FRAC_PI_2, 0.0), Some(0.75), 0.5),
        (ProjectionKind::KavrayskiyVii, SphereCoord::new(PI, FRAC_PI_2), Some(kav_u), FRAC_PI_2),
        // Only v is fixed at the pole.
        (ProjectionKind::EckertIv, SphereCoord::new(1.0, FRAC_PI_2), None, eck_v),
        (ProjectionKind::Cassini, SphereCoord::new(0.0, 0.3), Some(0.0), 0.3),
    ];
    let mut worked = 0.0f64;
    for (kind, c, u, v) in cases {
        let got = kind.project(c);
        worked = worked.max(u.map_or(0.0, |u| (got.u - u).abs())).max((got.v - v).abs());
    }
    let elapsed = t.elapsed();
    let ok = worst < 1e-9 && worked < 1e-5 && (kav_u - 1.36035).abs() < 1e-5 && (eck_v - 1.44720).abs() < 1e-5;
    within_budget(
        elapsed,
        Duration::from_secs(1),
        format!("round-trip max err {worst:.1e} (<1e-9), worked values max err {worked:.1e} (<1e-5)"),
    )
    .and_then(|d| check(ok, d))
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v.scale(1.0 / n);
        }
    }
}

fn rendering() -> Outcome {
    let t = Instant::now();
    let mesh = shapes::torus(0.7, 0.25, 25, 10).normalize().map_err(|e| e.to_string())?;
    let tris = mesh.faces().len();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut max_diff = 0.0f64;
    let mut hits = 0;
    for mode in [HitMode::Farthest, HitMode::Nearest] {
        let (bvh, brute) = (Bvh::new(&mesh, mode), BruteForceCaster::new(&mesh, mode));
        for _ in 0..500 {
            let origin = random_unit(&mut rng).scale(rng.gen_range(0.0..0.3));
            let ray = Ray::new(origin, random_unit(&mut rng));
            match (bvh.cast(&ray), brute.cast(&ray)) {
                (Some(a), Some(b)) => {
                    hits += 1;
                    max_diff = max_diff.max((a - b).abs());
                }
                (None, None) => {}
                _ => max_diff = f64::INFINITY,
            }
        }
    }
    let sphere = shapes::icosphere(3).normalize().map_err(|e| e.to_string())?;
    let img = render(&sphere, ImageKind::Uv, Rotation::IDENTITY, &RenderOptions::default()).map_err(|e| e.to_string())?;
    let sphere_err = img.pixels.iter().map(|&p| (p as f64 - 1.0).abs()).fold(0.0, f64::max);
    let cube = shapes::cuboid(Vec3::new(1.0, 1.0, 1.0)).normalize().map_err(|e| e.to_string())?;
    let depth = spnet_core::raycast::ray_cast(&cube, Vec3::new(1.0, 0.0, 0.0));
    let cube_err = (depth - 1.0 / 3f64.sqrt()).abs();
    let ok = tris == 500 && max_diff <= 1e-9 && sphere_err <= 5e-3 && cube_err <= 1e-6;
    within_budget(
        t.elapsed(),
        Duration::from_secs(30),
        format!(
            "BVH vs brute force on {tris} triangles, 1000 rays ({hits} hits): max diff {max_diff:.1e}; \
             icosphere max |d-1| {sphere_err:.1e}; cube axis depth err {cube_err:.1e}"
        ),
    )
    .and_then(|d| check(ok, d))
}

fn equivariance() -> Outcome {
    let t = Instant::now();
    let opts = SynthOptions::default();
    let mut worst = 0.0f32;
    for class in 0..synth::CLASSES.len() {
        let mesh = synth::synth_object(class, 7, &opts).normalize().map_err(|e| e.to_string())?;
        let a = render(&mesh, ImageKind::Uv, Rotation::IDENTITY, &RenderOptions::default()).map_err(|e| e.to_string())?;
        let b = render(&mesh, ImageKind::Uv, Rotation::from_degrees(45.0, 0.0), &RenderOptions::default())
            .map_err(|e| e.to_string())?;
        worst = worst.max(b.max_abs_diff(&a.shift_columns(16)));
    }
    within_budget(
        t.elapsed(),
        Duration::from_secs(30),
        format!("45 deg azimuth vs 16-column shift over {} synthetic meshes: max diff {worst:.1e}", synth::CLASSES.len()),
    )
    .and_then(|d| check(worst < 1e-6, d))
}

fn ensemble_loss(scores: &[Vec<f64>], w: &[f64], label: usize) -> f64 {
    let y = aggregate(scores, Aggregation::Weighted, w).unwrap();
    softmax_cross_entropy(&y, label).unwrap().0
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let report = pipeline::cmd_gradcheck(4).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (h, mut worst_w) = (1e-6, 0.0f64);
    for _ in 0..50 {
        let (m, c) = (rng.gen_range(1..=8), rng.gen_range(2..=10));
        let scores: Vec<Vec<f64>> = (0..m).map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let w: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let label = rng.gen_range(0..c);
        let y = aggregate(&scores, Aggregation::Weighted, &w).unwrap();
        let (_, d_out) = softmax_cross_entropy(&y, label).unwrap();
        let (d_scores, d_w) = aggregate_backward(&scores, Aggregation::Weighted, &w, &d_out).unwrap();
        for j in 0..m {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[j] += h;
            down[j] -= h;
            let numeric = (ensemble_loss(&scores, &up, label) - ensemble_loss(&scores, &down, label)) / (2.0 * h);
            worst_w = worst_w.max(rel(d_w[j], numeric));
            let (mut up, mut down) = (scores.clone(), scores.clone());
            let k = rng.gen_range(0..c);
            up[j][k] += h;
            down[j][k] -= h;
            let numeric = (ensemble_loss(&up, &w, label) - ensemble_loss(&down, &w, label)) / (2.0 * h);
            worst_w = worst_w.max(rel(d_scores[j][k], numeric));
        }
    }
    let per_tensor: Vec<String> = report.tensors.iter().map(|(n, _, e)| format!("{n} {e:.1e}")).collect();
    within_budget(
        t.elapsed(),
        Duration::from_secs(120),
        format!(
            "network max rel err {:.1e} [{}]; ensemble weights/scores max rel err {worst_w:.1e} (<1e-4)",
            report.max_rel_error,
            per_tensor.join(", ")
        ),
    )
    .and_then(|d| check(report.max_rel_error < 1e-4 && worst_w < 1e-4, d))
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-6)
}

fn parameters() -> Outcome {
    let model = SpnetModel::<f32>::new(SpnetConfig::new(10), &mut ChaCha8Rng::seed_from_u64(0));
    let n = model.param_count();
    check(n == 87_178, format!("{n} parameters for 10 classes (want 87178)"))
}

struct Desk {
    eval: EvalMetrics,
    retrieval: RetrievalSummary,
    epochs: usize,
    elapsed: Duration,
}

fn desk_run(root: &Path) -> Result<Desk, String> {
    let t = Instant::now();
    let opts = SynthOptions { count: 400, classes: 5, test_fraction: 0.25, seed: 1, ..SynthOptions::default() };
    let manifest = synth::synth(&root.join("data"), &opts).map_err(|e| e.to_string())?;
    let mut cfg = RunConfig { out: root.join("run"), seed: 1, ..RunConfig::default() };
    for (k, v) in [
        ("epochs", "200"),
        ("batch_size", "1"),
        ("dropout", "0"),
        ("train_stop_accuracy", "0.98"),
        ("ensemble_epochs", "10"),
        ("ensemble_stop_accuracy", "0.98"),
    ] {
        cfg.set(k, v)?;
    }
    let e = |e: spnet::Error| e.to_string();
    let report = pipeline::cmd_render(&manifest, &cfg).map_err(e)?;
    if !report.errors.is_empty() {
        return Err(format!("render errors: {:?}", report.errors));
    }
    let train = pipeline::cmd_train(&manifest, &cfg).map_err(e)?;
    pipeline::cmd_select(&manifest, &cfg).map_err(e)?;
    pipeline::cmd_ensemble(&manifest, &cfg).map_err(e)?;
    let eval = pipeline::cmd_eval(&manifest, &cfg).map_err(e)?;
    let retrieval = pipeline::cmd_retrieve(&manifest, &cfg).map_err(e)?;
    Ok(Desk { eval, retrieval, epochs: train.epochs_run, elapsed: t.elapsed() })
}

fn desk_learning(desk: &Result<Desk, String>) -> Outcome {
    let d = desk.as_ref().map_err(|e| format!("pipeline failed: {e}"))?;
    let single = d.eval.single_view.accuracy;
    let ens = d.eval.ensemble.as_ref().ok_or("no ensemble metrics")?;
    let ok = single >= 0.9 && d.epochs <= 200 && ens.accuracy >= single;
    within_budget(
        d.elapsed,
        Duration::from_secs(30 * 60),
        format!(
            "{} test objects: single view {:.4} after {} epochs (>=0.90), ensemble of views {:?} {:.4} (>= single)",
            d.eval.objects, single, d.epochs, ens.views, ens.accuracy
        ),
    )
    .and_then(|s| check(ok, s))
}

fn ensemble_algebra() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut bit_mismatch, mut max_below) = (0usize, 0usize);
    for _ in 0..10_000 {
        let (m, c) = (rng.gen_range(1..=16), rng.gen_range(1..=40));
        let scores: Vec<Vec<f64>> = (0..m).map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let uniform = vec![1.0 / m as f64; m];
        let avg = aggregate(&scores, Aggregation::Avg, &[]).unwrap();
        let weighted = aggregate(&scores, Aggregation::Weighted, &uniform).unwrap();
        let max = aggregate(&scores, Aggregation::Max, &[]).unwrap();
        bit_mismatch += avg.iter().zip(&weighted).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
        max_below += max.iter().zip(&avg).filter(|(x, a)| x < a).count();

        let s32: Vec<Vec<f32>> = scores.iter().map(|r| r.iter().map(|&v| v as f32).collect()).collect();
        let u32w = vec![1.0 / m as f32; m];
        let a = aggregate(&s32, Aggregation::Avg, &[]).unwrap();
        let w = aggregate(&s32, Aggregation::Weighted, &u32w).unwrap();
        bit_mismatch += a.iter().zip(&w).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    }
    within_budget(
        t.elapsed(),
        Duration::from_secs(30),
        format!("10^4 trials: {bit_mismatch} bitwise uniform-weight/mean mismatches, {max_below} classes with max < mean"),
    )
    .and_then(|d| check(bit_mismatch == 0 && max_below == 0, d))
}

/// Independent ranking and AP: every pair's distance, a full sort, and
/// precision recounted from scratch at each relevant rank.
fn oracle_map(corpus: &[Descriptor], metric: Metric) -> f64 {
    let mut total = 0.0;
    for q in corpus {
        let mut others: Vec<&Descriptor> = corpus.iter().filter(|d| d.object_id != q.object_id).collect();
        others.sort_by(|a, b| {
            distance(&q.probs, &a.probs, metric)
                .total_cmp(&distance(&q.probs, &b.probs, metric))
                .then_with(|| a.object_id.cmp(&b.object_id))
        });
        let rel: Vec<bool> = others.iter().map(|d| d.label == q.label).collect();
        let r = rel.iter().filter(|&&x| x).count();
        let mut sum = 0.0;
        for k in 0..rel.len() {
            if rel[k] {
                sum += rel[..=k].iter().filter(|&&x| x).count() as f64 / (k + 1) as f64;
            }
        }
        total += if r == 0 { 0.0 } else { sum / r as f64 };
    }
    total / corpus.len() as f64
}

fn retrieval(desk: &Result<Desk, String>) -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    let mut corpora = 0;
    for n in 2..=50 {
        for metric in [Metric::L1, Metric::L2] {
            let classes = rng.gen_range(1..=5);
            let corpus: Vec<Descriptor> = (0..n)
                .map(|i| {
                    // Coarse values so that distance ties actually occur.
                    let scores: Vec<f64> = (0..4).map(|_| rng.gen_range(0..3) as f64).collect();
                    Descriptor::from_scores(format!("obj{:03}", (i * 37) % 101), rng.gen_range(0..classes), &scores)
                })
                .collect();
            corpora += 1;
            if evaluate_retrieval(&corpus, metric).metrics.map != oracle_map(&corpus, metric) {
                mismatches += 1;
            }
        }
    }
    let ap = average_precision(&[true, false, true]);
    let nd = ndcg(&[false, true], 2);
    let (micro, macro_f) = f_scores(&[(0, 1.0), (1, 0.0), (1, 0.0), (1, 0.0)]);
    let hand_ok = (ap - 0.8333).abs() < 1e-4 && (nd - 0.6309).abs() < 1e-4 && (macro_f - 0.5).abs() < 1e-4
        && (micro - 0.25).abs() < 1e-4;
    let sep = match desk {
        Ok(d) => (d.retrieval.within_class_distance, d.retrieval.between_class_distance),
        Err(_) => (f64::NAN, f64::NAN),
    };
    let map = desk.as_ref().map_or(f64::NAN, |d| d.retrieval.map);
    let ok = mismatches == 0 && hand_ok && sep.0 < sep.1;
    check(
        ok,
        format!(
            "mAP vs oracle on {corpora} corpora: {mismatches} mismatches; AP {ap:.4}, NDCG {nd:.4}, macro {macro_f:.4}, \
             micro {micro:.4}; desk model within {:.4} < between {:.4} (mAP {map:.4}); {:.2?}",
            sep.0,
            sep.1,
            t.elapsed()
        ),
    )
}

fn spnet(args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_spnet"))
        .args(args)
        .env("SPNET_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("spnet {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn cli_run(dir: &Path, threads: &str) -> Result<(), String> {
    let data = dir.join("data");
    let out = dir.join("run");
    let (data, out) = (data.to_str().unwrap(), out.to_str().unwrap());
    spnet(&["synth", "--out", data, "--count", "12", "--classes", "3", "--seed", "5"], threads)?;
    let manifest = format!("{data}/manifest.csv");
    let common = [
        "--manifest", &manifest, "--out", out, "--seed", "5", "--set", "image_size=32", "--set", "bank_size=8",
        "--set", "top_m=3", "--set", "hidden=32", "--set", "epochs=3", "--set", "batch_size=2", "--set",
        "select_epochs=5", "--set", "ensemble_epochs=2",
    ];
    for stage in ["render", "train", "select", "ensemble", "eval", "retrieve"] {
        let mut args = vec![stage];
        args.extend_from_slice(&common);
        spnet(&args, threads)?;
    }
    Ok(())
}

fn determinism() -> Outcome {
    let t = Instant::now();
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    cli_run(a.path(), "1")?;
    cli_run(b.path(), "3")?;
    let mut compared = Vec::new();
    for name in [pipeline::BACKBONE, pipeline::SELECTION, pipeline::ENSEMBLE, pipeline::METRICS, pipeline::RETRIEVAL] {
        let read = |d: &Path| std::fs::read(d.join("run").join(name)).map_err(|e| format!("{name}: {e}"));
        if read(a.path())? != read(b.path())? {
            return Err(format!("{name} differs between runs"));
        }
        compared.push(name);
    }
    check(true, format!("1-thread and 3-thread runs identical in {}; {:.2?}", compared.join(", "), t.elapsed()))
}

fn main() {
    let desk_dir = tempfile::tempdir().expect("tempdir");
    let mut desk = None;
    let mut failed = 0;
    for n in 1..=9 {
        let outcome = match n {
            1 => projections(),
            2 => rendering(),
            3 => equivariance(),
            4 => gradients(),
            5 => parameters(),
            6 => desk_learning(desk.insert(desk_run(desk_dir.path()))),
            7 => ensemble_algebra(),
            8 => retrieval(desk.as_ref().expect("criterion 6 runs first")),
            _ => determinism(),
        };
        match outcome {
            Ok(d) => println!("PASS criterion {n}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {n}: {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
