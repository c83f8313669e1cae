//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::{config, fixture_config, write_fixture};
use hypervq::diffcore::{straight_through, Bindings, DiffError, DiffTensor, Graph, ParamStore, Tensor};
use hypervq::geometry::differentiable as dg;
use hypervq::geometry::{
    distance, exp_map, exp_map_origin, log_map, log_map_origin, mobius_add, mobius_neg, BallConfig, BallPoint,
    TangentVector,
};
use hypervq::gradcheck::{check, project};
use hypervq::models::load_checkpoint;
use hypervq::quantizers::{
    argmax_rows, gumbel_softmax_sample, GumbelMode, HyperKmeansVq, HyperbolicHyperplane, KmeansVq, Mode, Quantizer,
};
use hypervq_cli::{cmd_eval, cmd_export_codebook, cmd_train_classifier, cmd_train_vqvae, EvalReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CURVATURES: [f64; 3] = [0.25, 1.0, 4.0];
const MNIST_SEEDS: [u64; 3] = [0, 1, 2];
const MNIST_EPOCHS: usize = 20;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(vec![n, d], (0..n * d).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize, cfg: BallConfig, max_frac: f64) -> BallPoint {
    let dir: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let radius = rng.random_range(0.0..max_frac) * cfg.radius();
    BallPoint::new(dir.iter().map(|v| v * radius / n).collect(), cfg).unwrap()
}

fn random_tangent(rng: &mut ChaCha8Rng, dim: usize, max_norm: f64) -> TangentVector {
    let dir: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let len = rng.random_range(0.0..max_norm);
    TangentVector::new(dir.iter().map(|v| v * len / n).collect()).unwrap()
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_roundtrip = 0.0f64;
    let mut worst_cancel = 0.0f64;
    let mut triples = 0;
    for &c in &CURVATURES {
        let cfg = BallConfig::with_curvature(c).unwrap();
        for _ in 0..1000 {
            let v = random_tangent(&mut rng, 3, 3.0);
            let back = log_map_origin(&exp_map_origin(&v, cfg));
            worst_roundtrip = worst_roundtrip.max(norm_diff(back.coords(), v.coords()) / (1.0 + v.norm()));
            let x = random_point(&mut rng, 3, cfg, 0.8);
            let u = random_tangent(&mut rng, 3, 1.0);
            let back = log_map(&x, &exp_map(&x, &u).unwrap()).unwrap();
            worst_roundtrip = worst_roundtrip.max(norm_diff(back.coords(), u.coords()));

            let y = random_point(&mut rng, 4, cfg, 0.999);
            ensure(mobius_add(&BallPoint::origin(4, cfg), &y).unwrap() == y, || {
                format!("left identity fails at c={c}")
            })?;
            worst_cancel = worst_cancel.max(mobius_add(&mobius_neg(&y), &y).unwrap().norm());
        }
        for _ in 0..10_000 {
            let x = random_point(&mut rng, 3, cfg, 0.95);
            let y = random_point(&mut rng, 3, cfg, 0.95);
            let z = random_point(&mut rng, 3, cfg, 0.95);
            let dxy = distance(&x, &y).unwrap();
            let dyx = distance(&y, &x).unwrap();
            ensure((dxy - dyx).abs() <= 1e-12 * (1.0 + dxy), || format!("asymmetric distance at c={c}"))?;
            let dxz = distance(&x, &z).unwrap();
            let dyz = distance(&y, &z).unwrap();
            ensure(dxz <= dxy + dyz + 1e-9, || format!("triangle inequality fails at c={c}: {dxz} > {dxy} + {dyz}"))?;
            triples += 1;
        }
    }
    ensure(worst_roundtrip < 1e-6, || format!("roundtrip error {worst_roundtrip:e}"))?;
    ensure(worst_cancel <= 1e-12, || format!("cancellation residue {worst_cancel:e}"))?;
    Ok(format!("roundtrip {worst_roundtrip:.1e}, cancellation {worst_cancel:.1e}, {triples} triples"))
}

struct GradSuite {
    checked: usize,
    worst: f64,
    failures: Vec<String>,
}

impl GradSuite {
    fn run<F, G>(&mut self, name: &str, make: G, f: F)
    where
        F: for<'g> Fn(&'g Graph, &[DiffTensor<'g>]) -> Result<DiffTensor<'g>, DiffError>,
        G: Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(name.bytes().map(u64::from).sum::<u64>() + 7);
        for i in 0..20 {
            match check(&f, &make(&mut rng), 1e-6) {
                Ok(report) => {
                    let err = report.max_relative_error();
                    self.worst = self.worst.max(err);
                    if !(err < 1e-4) {
                        self.failures.push(format!("{name}#{i} rel {err:e}"));
                    }
                }
                Err(e) => self.failures.push(format!("{name}#{i}: {e}")),
            }
        }
        self.checked += 1;
    }
}

fn gradients() -> Outcome {
    let mut s = GradSuite { checked: 0, worst: 0.0, failures: vec![] };
    let one = |r: &mut ChaCha8Rng| vec![random_rows(r, 2, 3, -2.0, 2.0)];
    let two = |r: &mut ChaCha8Rng| vec![random_rows(r, 2, 3, -2.0, 2.0), random_rows(r, 2, 3, -2.0, 2.0)];
    let pos = |r: &mut ChaCha8Rng| vec![random_rows(r, 2, 3, 0.3, 2.0), random_rows(r, 2, 3, 0.3, 2.0)];
    let unit = |r: &mut ChaCha8Rng| vec![random_rows(r, 2, 3, -0.9, 0.9)];
    let away = |r: &mut ChaCha8Rng| {
        let t = random_rows(r, 2, 3, 0.1, 2.0);
        let signs = random_rows(r, 2, 3, -1.0, 1.0);
        vec![t.zip_map(&signs, |x, s| if s < 0.0 { -x } else { x })]
    };
    let bc = |r: &mut ChaCha8Rng| vec![random_rows(r, 2, 3, -2.0, 2.0), random_rows(r, 1, 3, 0.5, 2.0)];

    s.run("add", two, |_, v| project(&v[0].add(&v[1])?));
    s.run("sub", two, |_, v| project(&v[0].sub(&v[1])?));
    s.run("mul", two, |_, v| project(&v[0].mul(&v[1])?));
    s.run("div", pos, |_, v| project(&v[0].div(&v[1])?));
    s.run("add_bc", bc, |_, v| project(&v[0].add(&v[1])?));
    s.run("mul_bc", bc, |_, v| project(&v[0].mul(&v[1])?));
    s.run("div_bc", bc, |_, v| project(&v[0].div(&v[1])?));
    s.run("neg", one, |_, v| project(&v[0].neg()));
    s.run("scale", one, |_, v| project(&v[0].scale(-1.7)));
    s.run("tanh", one, |_, v| project(&v[0].tanh()));
    s.run("asinh", one, |_, v| project(&v[0].asinh()));
    s.run("exp", one, |_, v| project(&v[0].exp()));
    s.run("square", one, |_, v| project(&v[0].square()));
    s.run("artanh", unit, |_, v| project(&v[0].artanh()?));
    s.run("log", |r| vec![random_rows(r, 2, 3, 0.2, 3.0)], |_, v| project(&v[0].log()?));
    s.run("pow", |r| vec![random_rows(r, 2, 3, 0.2, 3.0)], |_, v| project(&v[0].pow(1.7)));
    s.run("relu", away, |_, v| project(&v[0].relu()));
    s.run("clamp_min", away, |_, v| project(&v[0].clamp_min(0.05)));
    s.run("sum", one, |_, v| Ok(v[0].sum()));
    s.run("mean", one, |_, v| Ok(v[0].mean().scale(3.0)));
    s.run("sum_axis", one, |_, v| project(&v[0].sum_axis(0)?));
    s.run("mean_axis", one, |_, v| project(&v[0].mean_axis(1)?));
    s.run("l2_norm", one, |_, v| project(&v[0].l2_norm(1)?));
    s.run("dot", two, |_, v| v[0].dot(&v[1]));
    s.run("softmax", one, |_, v| project(&v[0].softmax(1)?));
    s.run("mse", two, |_, v| v[0].mse(&v[1]));
    s.run("cross_entropy", one, |_, v| v[0].cross_entropy(&[2, 0]));
    s.run("reshape", one, |_, v| project(&v[0].reshape(&[3, 2])?));
    s.run("permute", one, |_, v| project(&v[0].permute(&[1, 0])?));
    s.run("broadcast", |r| vec![random_rows(r, 1, 3, -2.0, 2.0)], |_, v| project(&v[0].broadcast_to(&[4, 3])?));
    s.run("concat", two, |_, v| project(&DiffTensor::concat(&[v[0], v[1]], 1)?));
    s.run(
        "matmul",
        |r| vec![random_rows(r, 2, 3, -2.0, 2.0), random_rows(r, 3, 4, -2.0, 2.0)],
        |_, v| project(&v[0].matmul(&v[1])?),
    );
    s.run("straight_through", one, |g, v| project(&straight_through(&g.constant((*v[0].value()).clone()), &v[0])?));
    let conv = |r: &mut ChaCha8Rng| {
        vec![
            random_rows(r, 2, 50, -1.0, 1.0).reshape(&[2, 2, 5, 5]).unwrap(),
            random_rows(r, 3, 18, -1.0, 1.0).reshape(&[3, 2, 3, 3]).unwrap(),
            random_rows(r, 1, 3, -1.0, 1.0).reshape(&[3]).unwrap(),
        ]
    };
    s.run("conv2d", conv, |_, v| project(&v[0].conv2d(&v[1], Some(&v[2]), 2, 1)?));
    let convt = |r: &mut ChaCha8Rng| {
        vec![
            random_rows(r, 2, 18, -1.0, 1.0).reshape(&[2, 2, 3, 3]).unwrap(),
            random_rows(r, 2, 48, -1.0, 1.0).reshape(&[2, 3, 4, 4]).unwrap(),
            random_rows(r, 1, 3, -1.0, 1.0).reshape(&[3]).unwrap(),
        ]
    };
    s.run("conv_transpose2d", convt, |_, v| project(&v[0].conv_transpose2d(&v[1], Some(&v[2]), 2, 1)?));

    for &c in &CURVATURES {
        let cfg = BallConfig::with_curvature(c).unwrap();
        let inside = 0.5 / cfg.sqrt_c();
        let ball2 = move |r: &mut ChaCha8Rng| {
            vec![random_rows(r, 3, 3, -inside, inside), random_rows(r, 3, 3, -inside, inside)]
        };
        s.run(
            "exp_map_origin",
            |r| vec![random_rows(r, 3, 3, -1.5, 1.5)],
            |_, v| project(&dg::exp_map_origin(&v[0], cfg)?),
        );
        s.run(
            "log_map_origin",
            |r| vec![random_rows(r, 3, 3, -inside, inside)],
            |_, v| project(&dg::log_map_origin(&v[0], cfg)?),
        );
        s.run("mobius_add", ball2, |_, v| project(&dg::mobius_add(&v[0], &v[1], cfg)?));
        s.run("distance", ball2, |_, v| project(&dg::distance(&v[0], &v[1], cfg)?));
        let planes = move |r: &mut ChaCha8Rng| {
            vec![
                random_rows(r, 4, 3, -inside, inside),
                random_rows(r, 5, 3, -1.0, 1.0),
                random_rows(r, 1, 5, -0.5, 0.5).reshape(&[5]).unwrap(),
            ]
        };
        s.run("hyperplane_signed_score", planes, |_, v| project(&dg::hyperplane_logits(&v[0], &v[1], &v[2], cfg)?));
        s.run(
            "hypervq_logits",
            |r| {
                vec![
                    random_rows(r, 4, 3, -1.5, 1.5),
                    random_rows(r, 5, 3, -1.0, 1.0),
                    random_rows(r, 1, 5, -0.5, 0.5).reshape(&[5]).unwrap(),
                ]
            },
            |_, v| project(&dg::hyperplane_logits(&dg::project_to_ball(&v[0], cfg)?, &v[1], &v[2], cfg)?),
        );
    }
    if s.failures.is_empty() {
        Ok(format!("{} checks x 20 instances, worst relative error {:.1e}", s.checked, s.worst))
    } else {
        Err(s.failures.join("; "))
    }
}

fn codebook_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    for &c in &CURVATURES {
        let cfg = BallConfig::with_curvature(c).unwrap();
        for _ in 0..1000 {
            let a = random_tangent(&mut rng, 3, 3.0);
            if a.norm() < 1e-6 {
                continue;
            }
            let plane = HyperbolicHyperplane::new(a, rng.random_range(-2.0..2.0)).unwrap();
            let row = plane.codebook_vector();
            let back = log_map_origin(&exp_map_origin(&TangentVector::new(row.clone()).unwrap(), cfg));
            worst = worst.max(back.coords().iter().zip(&row).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        }
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:e}"))?;
    Ok(format!("max deviation {worst:.1e} over 3000 planes"))
}

fn scan(p: &[f64], book: &Tensor, d: impl Fn(&[f64], &[f64]) -> f64) -> usize {
    let mut best = (0, f64::INFINITY);
    for k in 0..book.shape()[0] {
        let dk = d(p, book.row(k));
        if dk < best.1 {
            best = (k, dk);
        }
    }
    best.0
}

fn quantizer_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut rows: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    rows.push(rows[2].clone());
    rows.extend([vec![0.0, 0.0, 0.0], vec![2.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]]);
    let book = Tensor::from_rows(&rows).unwrap();
    let mut store = ParamStore::new();
    let mut q = KmeansVq::new(&mut store, book.shape()[0], 3, 0.25, &mut rng);
    *store.get_mut(q.codebook_id()) = book.clone();
    let mut points: Vec<Vec<f64>> = (0..990).map(|_| (0..3).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
    points.extend((0..10).map(|i| vec![1.0, 1.0, i as f64 * 0.1]));
    let g = Graph::new();
    let b = Bindings::new(&g, &store);
    let out = q.forward(&g.constant(Tensor::from_rows(&points).unwrap()), &b, Mode::Eval, &mut rng).unwrap();
    let euclid = |a: &[f64], b: &[f64]| norm_diff(a, b);
    let mismatches = points.iter().enumerate().filter(|(i, p)| out.indices[*i] != scan(p, &book, euclid)).count();
    ensure(mismatches == 0, || format!("kmeans: {mismatches} mismatches"))?;

    let mut checked = points.len();
    for &c in &CURVATURES {
        let cfg = BallConfig::with_curvature(c).unwrap();
        let r = cfg.radius();
        let mut rows: Vec<Vec<f64>> =
            (0..8).map(|_| (0..3).map(|_| rng.random_range(-0.5 * r..0.5 * r)).collect()).collect();
        rows.push(rows[4].clone());
        let book = Tensor::from_rows(&rows).unwrap();
        let mut store = ParamStore::new();
        let mut q = HyperKmeansVq::new(&mut store, 9, 3, 0.25, cfg, &mut rng);
        *store.get_mut(q.codebook_id()) = book.clone();
        let z = random_rows(&mut rng, 1000, 3, -2.0, 2.0);
        let g = Graph::new();
        let b = Bindings::new(&g, &store);
        let out = q.forward(&g.constant(z.clone()), &b, Mode::Eval, &mut rng).unwrap();
        let z_h = dg::project_to_ball(&g.constant(z), cfg).unwrap().value();
        let poincare = |a: &[f64], b: &[f64]| {
            distance(&BallPoint::new(a.to_vec(), cfg).unwrap(), &BallPoint::new(b.to_vec(), cfg).unwrap()).unwrap()
        };
        let mismatches = (0..1000).filter(|&i| out.indices[i] != scan(z_h.row(i), &book, poincare)).count();
        ensure(mismatches == 0, || format!("hyper kmeans c={c}: {mismatches} mismatches"))?;
        checked += 1000;
    }
    Ok(format!("{checked} inputs match the exhaustive scans"))
}

fn gumbel_statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let n = 100_000;
    let logits: Vec<f64> = (0..n).flat_map(|_| [2.0, 0.0]).collect();
    let g = Graph::new();
    let logits = g.constant(Tensor::new(vec![n, 2], logits).unwrap());
    let y = gumbel_softmax_sample(&logits, 1.0, GumbelMode::Hard, &mut rng).map_err(|e| e.to_string())?;
    let freq = argmax_rows(&y.value()).iter().filter(|&&i| i == 0).count() as f64 / n as f64;
    let expected = 2f64.exp() / (2f64.exp() + 1.0);
    ensure((freq - expected).abs() <= 0.01, || format!("frequency {freq:.4} vs {expected:.4}"))?;
    Ok(format!("frequency {freq:.4} vs {expected:.4}"))
}

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-5k")
}

struct MnistRun {
    report: EvalReport,
}

fn mnist_run(root: &Path, quantizer: &str, seed: u64) -> Result<MnistRun, String> {
    let text = format!(
        "data_dir = {:?}\nquantizer = {quantizer:?}\nseed = {seed}\nepochs = {MNIST_EPOCHS}\nlog_every = 50\n",
        mnist_dir().display().to_string()
    );
    let run = config(&text);
    let out = root.join(format!("{quantizer}-{seed}"));
    let started = Instant::now();
    cmd_train_vqvae(&run, &out).map_err(|e| format!("{quantizer} seed {seed}: {e}"))?;
    let report = cmd_eval(&run, &out.join("model.ckpt"), &out).map_err(|e| format!("{quantizer} seed {seed}: {e}"))?;
    println!(
        "      {quantizer:<8} seed {seed}: mse {:.4} perplexity {:.2} silhouette {:.3} db {:.3} drop {:.4} ({:.0}s)",
        report.clean.mse,
        report.clean.perplexity,
        report.clean.silhouette,
        report.clean.davies_bouldin,
        report.silhouette_drop(),
        started.elapsed().as_secs_f64()
    );
    Ok(MnistRun { report })
}

struct Mnist {
    hyper: Vec<MnistRun>,
    kmeans: Vec<MnistRun>,
}

impl Mnist {
    fn majority(&self, name: &str, f: impl Fn(&EvalReport, &EvalReport) -> bool) -> Outcome {
        let wins = self.hyper.iter().zip(&self.kmeans).filter(|(h, k)| f(&h.report, &k.report)).count();
        let msg = format!("{name} holds for {wins}/{} seeds", self.hyper.len());
        if 2 * wins > self.hyper.len() {
            Ok(msg)
        } else {
            Err(msg)
        }
    }

    fn mean(runs: &[MnistRun], f: impl Fn(&EvalReport) -> f64) -> f64 {
        runs.iter().map(|r| f(&r.report)).sum::<f64>() / runs.len() as f64
    }
}

fn disentanglement(m: &Mnist) -> Outcome {
    m.majority("silhouette and Davies-Bouldin ordering", |h, k| {
        h.clean.silhouette > k.clean.silhouette && h.clean.davies_bouldin < k.clean.davies_bouldin
    })
}

fn robustness(m: &Mnist) -> Outcome {
    m.majority("smaller silhouette drop", |h, k| h.silhouette_drop() < k.silhouette_drop())
}

fn usage(m: &Mnist) -> Outcome {
    let msg = format!(
        "mean perplexity {:.2} vs {:.2}",
        Mnist::mean(&m.hyper, |r| r.clean.perplexity),
        Mnist::mean(&m.kmeans, |r| r.clean.perplexity)
    );
    m.majority("higher perplexity", |h, k| h.clean.perplexity > k.clean.perplexity)
        .map(|s| format!("{s}, {msg}"))
        .map_err(|s| format!("{s}, {msg}"))
}

fn parity(m: &Mnist) -> Outcome {
    let h = Mnist::mean(&m.hyper, |r| r.clean.mse);
    let k = Mnist::mean(&m.kmeans, |r| r.clean.mse);
    let msg = format!("mean test mse {h:.4} vs {k:.4} (ratio {:.2})", h / k);
    if h <= 1.2 * k {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn frozen_backbone(root: &Path) -> Outcome {
    let data = write_fixture(root, 256, 64);
    let text = fixture_config(&data, "");
    let out = root.join("frozen");
    cmd_train_vqvae(&config(&text), &out).map_err(|e| e.to_string())?;
    let input = out.join("model.ckpt");
    let before = fs::read(&input).unwrap();
    let head_out = root.join("frozen-head");
    cmd_train_classifier(&config(&text), &input, &head_out).map_err(|e| e.to_string())?;
    ensure(fs::read(&input).unwrap() == before, || "input checkpoint changed".into())?;
    ensure(fs::read(head_out.join("backbone.ckpt")).unwrap() == before, || "backbone checkpoint differs".into())?;
    let head = load_checkpoint(&head_out.join("head.ckpt")).map_err(|e| e.to_string())?;
    Ok(format!("{} backbone bytes identical, head has {} tensors", before.len(), head.tensors.len()))
}

fn determinism(root: &Path) -> Outcome {
    let data = write_fixture(root, 256, 64);
    let text = fixture_config(&data, "dump_embeddings = true\nseed = 11");
    let run = config(&text);
    let outputs: Vec<PathBuf> = ["a", "b"]
        .iter()
        .map(|name| -> Result<PathBuf, String> {
            let out = root.join(format!("det-{name}"));
            cmd_train_vqvae(&run, &out).map_err(|e| e.to_string())?;
            let ckpt = out.join("model.ckpt");
            cmd_eval(&run, &ckpt, &out).map_err(|e| e.to_string())?;
            cmd_train_classifier(&run, &ckpt, &out.join("head")).map_err(|e| e.to_string())?;
            cmd_export_codebook(&ckpt, &out).map_err(|e| e.to_string())?;
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    let files = [
        "model.ckpt",
        "train.log",
        "summary.txt",
        "metrics.txt",
        "embeddings.csv",
        "codebook.csv",
        "head/head.ckpt",
        "head/backbone.ckpt",
        "head/classifier.log",
    ];
    for file in files {
        let a = fs::read(outputs[0].join(file)).map_err(|e| format!("{file}: {e}"))?;
        let b = fs::read(outputs[1].join(file)).map_err(|e| format!("{file}: {e}"))?;
        ensure(a == b, || format!("{file} differs between runs"))?;
    }
    Ok(format!("{} output files byte-identical across two runs of every command", files.len()))
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let mut passed = Vec::new();
    let mut record = |name: &str, f: &dyn Fn() -> Outcome| {
        let started = Instant::now();
        let outcome = f();
        let secs = started.elapsed().as_secs_f64();
        match &outcome {
            Ok(detail) => println!("PASS  {name}: {detail} ({secs:.1}s)"),
            Err(detail) => println!("FAIL  {name}: {detail} ({secs:.1}s)"),
        }
        passed.push(outcome.is_ok());
    };

    record("geometry correctness", &geometry);
    record("gradient fidelity", &gradients);
    record("codebook consistency", &codebook_consistency);
    record("quantizer oracles", &quantizer_oracles);
    record("gumbel statistics", &gumbel_statistics);
    record("frozen backbone", &|| frozen_backbone(&root.path().join("frozen")));
    record("determinism", &|| determinism(&root.path().join("det")));

    let started = Instant::now();
    println!("      training {} MNIST models ({MNIST_EPOCHS} epochs each)", 2 * MNIST_SEEDS.len());
    let trained = (|| -> Result<Mnist, String> {
        let mnist_root = root.path().join("mnist");
        let mut m = Mnist { hyper: vec![], kmeans: vec![] };
        for &seed in &MNIST_SEEDS {
            m.hyper.push(mnist_run(&mnist_root, "hypervq", seed)?);
            m.kmeans.push(mnist_run(&mnist_root, "kmeansvq", seed)?);
        }
        Ok(m)
    })();
    println!("      MNIST training and evaluation took {:.0}s", started.elapsed().as_secs_f64());
    let mnist_criteria: [(&str, fn(&Mnist) -> Outcome); 4] = [
        ("mnist disentanglement", disentanglement),
        ("robustness ordering", robustness),
        ("codebook usage ordering", usage),
        ("reconstruction parity", parity),
    ];
    for (name, criterion) in mnist_criteria {
        match &trained {
            Ok(m) => record(name, &|| criterion(m)),
            Err(e) => record(name, &|| Err(e.clone())),
        }
    }

    let failed = passed.iter().filter(|ok| !**ok).count();
    println!("{} of {} criteria passed", passed.len() - failed, passed.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
