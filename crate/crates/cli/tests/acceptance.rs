//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails other than those listed in
//! `UNATTAINABLE`.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use fqpe_core::autodiff::Tape;
use fqpe_core::dic::{self, CorrectionOrder, DicWeights, TaylorVariant};
use fqpe_core::gradsuite::{self, SuiteOptions};
use fqpe_core::harness::{self, split_indices, TrainConfig};
use fqpe_core::mld::{self, MldWeights};
use fqpe_core::nn::LayerVars;
use fqpe_core::pipeline::{
    self, count_params, estimate_flops, init_weights, EnhancerWeights, RunConfig,
};
use fqpe_core::pyramid::{self, LowpassKernel};
use fqpe_core::Tensor;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

/// Criteria whose failure is expected and does not fail the run.
///
/// 3: the ln-form expansion is exactly second order, so its relative error
/// against the power law is the third-order remainder, about
/// |g ln I|^3 / 6. At I = 0.05, g = 0.2 that is 5.7%, far above 1e-3.
const UNATTAINABLE: &[usize] = &[3];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    Tensor::from_fn(&[3, h, w], |_| rng.random_range(0.0..1.0)).unwrap()
}

fn perfect_reconstruction() -> Verdict {
    let start = Instant::now();
    let mut worst = 0f32;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let img = random_image(&mut rng, 128, 128);
        for levels in 2..=6 {
            let back = pyramid::reconstruct(&pyramid::decompose(&img, levels).unwrap()).unwrap();
            worst = worst.max(back.max_abs_diff(&img).unwrap());
        }
    }
    let t = start.elapsed();
    verdict(
        worst < 1e-5 && t < Duration::from_secs(30),
        format!(
            "max abs error {worst:.3e} over 100 images x L=2..6 in {:.1}s",
            t.as_secs_f64()
        ),
    )
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let entries = gradsuite::run_suite(&SuiteOptions::default(), None, |_| {}).unwrap();
    let t = start.elapsed();
    let failed: Vec<_> = entries
        .iter()
        .filter(|e| !e.passed())
        .map(|e| e.name)
        .collect();
    let worst = entries
        .iter()
        .max_by(|a, b| (a.max_rel_error / a.threshold).total_cmp(&(b.max_rel_error / b.threshold)))
        .unwrap();
    verdict(
        failed.is_empty() && t < Duration::from_secs(300),
        format!(
            "{} checks x 10 points, worst {} {:.3e} (limit {:.0e}), failed {:?}, {:.1}s",
            entries.len(),
            worst.name,
            worst.max_rel_error,
            worst.threshold,
            failed,
            t.as_secs_f64()
        ),
    )
}

fn taylor_fidelity() -> Verdict {
    let (mut worst, mut at, mut over) = (0f64, (0.0, 0.0), 0usize);
    let mut remainder_matches = true;
    for i in 5..=100 {
        let x = i as f64 / 100.0;
        for g in 0..=20 {
            let gamma = g as f64 / 100.0;
            let img = Tensor::<f64>::full(&[1], x).unwrap();
            let gam = Tensor::<f64>::full(&[1], gamma).unwrap();
            let approx = dic::taylor_correct_tensor(&img, &gam, TaylorVariant::Ln)
                .unwrap()
                .data()[0];
            let exact = x.powf(1.0 + gamma);
            let rel = (approx - exact).abs() / exact;
            let t = gamma * x.ln();
            let remainder = (t.exp() - (1.0 + t + t * t / 2.0)).abs() / t.exp();
            remainder_matches &= (rel - remainder).abs() < 1e-12;
            if rel >= 1e-3 {
                over += 1;
            }
            if rel > worst {
                worst = rel;
                at = (x, gamma);
            }
        }
    }
    verdict(
        worst < 1e-3,
        format!(
            "max rel error {worst:.4e} at I={}, gamma={}; {over}/2016 grid points >= 1e-3; \
             error equals the third-order remainder: {remainder_matches}",
            at.0, at.1
        ),
    )
}

fn identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = random_image(&mut rng, 16, 12);
    let zero_gamma = Tensor::zeros(&[3]).unwrap();
    let taylor = [TaylorVariant::Tanh, TaylorVariant::Ln].iter().all(|&v| {
        dic::taylor_correct_tensor(&img.map(|x| x.max(1e-3)), &zero_gamma, v).unwrap()
            == img.map(|x| x.max(1e-3))
    });
    let bypass = pipeline::enhance(
        &img,
        &EnhancerWeights::zeros(0, CorrectionOrder::default()).unwrap(),
    )
    .unwrap()
        == img;

    let residual = {
        let w = DicWeights::zeros();
        let mut tape = Tape::new();
        let x = tape.leaf(img.clone());
        let p = w.bind(&mut tape).unwrap();
        let y = dic::residual_enhance(&mut tape, x, &p).unwrap();
        tape.value(y) == &img
    };
    let fusion = {
        let levels = [
            random_image(&mut rng, 16, 12),
            random_image(&mut rng, 8, 6),
            random_image(&mut rng, 4, 3),
        ];
        let w = MldWeights::zeros(3);
        let mut tape = Tape::new();
        let vars: Vec<_> = levels.iter().map(|l| tape.leaf(l.clone())).collect();
        let p = w.bind(&mut tape).unwrap();
        let fuse: Vec<LayerVars> = p.levels.iter().map(|l| l.fuse).collect();
        let out =
            mld::cross_scale_fuse(&mut tape, &vars, &fuse, &LowpassKernel::default()).unwrap();
        out.iter().zip(&levels).all(|(&o, l)| tape.value(o) == l)
    };
    verdict(
        taylor && bypass && residual && fusion,
        format!("gamma=0 taylor {taylor}, levels=0 bypass {bypass}, zero residual {residual}, zero fusion {fusion}"),
    )
}

fn rank_bound() -> Verdict {
    let (mut worst_rank, mut products) = (0usize, 0usize);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let img = random_image(&mut rng, 64, 48);
        let w = MldWeights::init(3, &mut rng);
        let pyr = pyramid::decompose(&img, 4).unwrap();
        let mut tape = Tape::<f32>::new();
        let p = w.bind(&mut tape).unwrap();
        for (hf, lp) in pyr.hf_levels.iter().zip(&p.levels) {
            let x = tape.leaf(hf.clone());
            let feat = mld::lift_features(&mut tape, x, lp).unwrap();
            let u = mld::compute_u(&mut tape, feat, lp).unwrap();
            let f = mld::compute_f(&mut tape, feat, lp).unwrap();
            let v = mld::compute_v(&mut tape, f, u).unwrap();
            let vt = tape.transpose(v).unwrap();
            let prod = tape.matmul(u, vt).unwrap();
            let t = tape.value(prod);
            let (rows, cols) = t.dims2().unwrap();
            let m = DMatrix::from_row_iterator(rows, cols, t.data().iter().map(|&v| v as f64));
            let sv = m.singular_values();
            let max = sv.max();
            let rank = sv.iter().filter(|&&s| s > 1e-5 * max).count();
            worst_rank = worst_rank.max(rank);
            products += 1;
        }
    }
    verdict(
        worst_rank <= 3,
        format!("{products} products (20 inputs x 3 levels), largest numerical rank {worst_rank}"),
    )
}

fn accounting() -> Verdict {
    let cfg = RunConfig::default();
    let a = count_params(&init_weights(1, &cfg).unwrap());
    let b = count_params(&EnhancerWeights::zeros(cfg.levels, cfg.order).unwrap());
    let flops = estimate_flops(&init_weights(1, &cfg).unwrap(), cfg.resolution).unwrap();
    let ratio = flops.total / 1.36;
    let pass = a == b
        && (20_000..=60_000).contains(&a.dic)
        && (30_000..=150_000).contains(&a.total)
        && (0.1..=10.0).contains(&ratio);
    verdict(
        pass,
        format!(
            "params dic {} mld {} total {} (stable {}); {:.4} GFLOPs at {}x{} with 2 FLOPs/MAC, {ratio:.3}x of 1.36G",
            a.dic,
            a.mld,
            a.total,
            a == b,
            flops.total,
            cfg.resolution.0,
            cfg.resolution.1
        ),
    )
}

fn training_efficacy() -> Verdict {
    let start = Instant::now();
    let cfg = TrainConfig::default();
    let corpus = cfg.load_corpus().unwrap();
    let outcome = harness::train(&cfg, &corpus, |_| {}).unwrap();
    let (_, val) = split_indices(corpus.len());
    let held_out: Vec<_> = val.iter().map(|&i| corpus[i].clone()).collect();
    let report = harness::evaluate(&held_out, &outcome.weights, cfg.seed).unwrap();
    let t = start.elapsed();
    let gains: Vec<String> = report
        .buckets
        .iter()
        .map(|b| format!("{} {:+.2}", b.bucket, b.gain()))
        .collect();
    let first = outcome.log.first().unwrap().loss;
    let last = outcome.log.last().unwrap().loss;
    verdict(
        report.overall.gain() >= 3.0
            && report.buckets.iter().all(|b| b.gain() > 0.0)
            && last < first
            && t < Duration::from_secs(900),
        format!(
            "{} epochs, overall {:.2} -> {:.2} dB ({:+.2}), {}; loss {first:.4} -> {last:.4}; {:.0}s",
            cfg.epochs,
            report.overall.psnr_degraded,
            report.overall.psnr_enhanced,
            report.overall.gain(),
            gains.join(", "),
            t.as_secs_f64()
        ),
    )
}

fn fqpe(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_fqpe"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "fqpe {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn ablation_grid(dir: &Path) -> Verdict {
    let csv_path = dir.join("ablation.csv");
    let p = csv_path.to_str().unwrap();
    fqpe(&[
        "ablate",
        "--epochs",
        "2",
        "--single-thread",
        "--resolution",
        "256x192",
        "--out",
        p,
    ]);
    let mut rd = csv::Reader::from_path(&csv_path).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    let depth: Vec<&str> = rows
        .iter()
        .filter(|r| &r[0] == "depth")
        .map(|r| r.get(1).unwrap())
        .collect();
    let orders: Vec<&str> = rows
        .iter()
        .filter(|r| &r[0] == "order")
        .map(|r| r.get(2).unwrap())
        .collect();
    let mut mismatches = 0;
    for r in &rows {
        let info: Value = serde_json::from_slice(
            &fqpe(&[
                "info",
                "--json",
                "--levels",
                &r[1],
                "--order",
                &r[2],
                "--resolution",
                "256x192",
            ])
            .stdout,
        )
        .unwrap();
        for (i, module) in ["dic", "mld", "total"].iter().enumerate() {
            let params: u64 = r[3 + i].parse().unwrap();
            let gflops: f64 = r[6 + i].parse().unwrap();
            if params != info["params"][module].as_u64().unwrap()
                || gflops != info["gflops"][module].as_f64().unwrap()
            {
                mismatches += 1;
            }
        }
    }
    let bypass = &rows[0];
    let pass = depth == ["0", "2", "3", "4", "5", "6"]
        && orders == ["global_to_local", "local_to_global"]
        && mismatches == 0
        && &bypass[5] == "0"
        && bypass[9] == bypass[10];
    verdict(
        pass,
        format!("depth rows {depth:?}, order rows {orders:?}, {mismatches} accounting mismatches against info"),
    )
}

fn determinism(dir: &Path) -> Verdict {
    let paths = [dir.join("a.fqpe"), dir.join("b.fqpe")];
    for p in &paths {
        fqpe(&[
            "train",
            "--single-thread",
            "--epochs",
            "2",
            "--seed",
            "7",
            "--out",
            p.to_str().unwrap(),
        ]);
    }
    let (a, b) = (
        std::fs::read(&paths[0]).unwrap(),
        std::fs::read(&paths[1]).unwrap(),
    );
    verdict(
        a == b,
        format!(
            "two single-thread runs, {} bytes each, identical: {}",
            a.len(),
            a == b
        ),
    )
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

fn main() -> ExitCode {
    let dir = tempfile::tempdir().unwrap();
    let criteria: Vec<Criterion> = vec![
        ("perfect reconstruction", Box::new(perfect_reconstruction)),
        ("gradient suite", Box::new(gradient_suite)),
        ("taylor fidelity", Box::new(taylor_fidelity)),
        ("identity invariants", Box::new(identities)),
        ("rank bound", Box::new(rank_bound)),
        ("accounting", Box::new(accounting)),
        ("training efficacy", Box::new(training_efficacy)),
        ("ablation grid", Box::new(|| ablation_grid(dir.path()))),
        ("determinism", Box::new(|| determinism(dir.path()))),
    ];
    let mut unexpected = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        let v = run();
        let note = if !v.pass && UNATTAINABLE.contains(&n) {
            " (unattainable, see README)"
        } else {
            ""
        };
        println!(
            "criterion {n} {name}: {}{note} | {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        if !v.pass && !UNATTAINABLE.contains(&n) {
            unexpected += 1;
        }
        if v.pass && UNATTAINABLE.contains(&n) {
            println!("criterion {n} passed although listed as unattainable");
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
