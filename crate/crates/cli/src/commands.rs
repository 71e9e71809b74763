use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;

use fqpe_core::dic::CorrectionOrder;
use fqpe_core::gradsuite::{self, SuiteOptions};
use fqpe_core::harness::{
    self, ablate, evaluate, read_png, split_indices, synthetic_corpus, write_png,
    DegradationParams, TrainConfig, BUNDLED_CORPUS_LEN, BUNDLED_CORPUS_SEED, BUNDLED_IMAGE_SIZE,
};
use fqpe_core::pipeline::{
    self, count_params, estimate_flops, init_weights, load_weights, save_weights, EnhancerWeights,
    RunConfig, FLOPS_PER_MAC,
};
use fqpe_core::Error;
use serde_json::{json, Value};

use crate::args::*;
use crate::failure::{Code, Failure, Outcome};

fn read_json(path: &Path) -> Outcome<Value> {
    let text = fs::read_to_string(path).map_err(|e| {
        Failure::new(
            Code::Input,
            format!("cannot read config {}: {e}", path.display()),
        )
    })?;
    serde_json::from_str(&text).map_err(|e| {
        Failure::new(
            Code::Input,
            format!("invalid config {}: {e}", path.display()),
        )
    })
}

fn config_error(path: &Path, e: serde_json::Error) -> Failure {
    Failure::new(
        Code::Input,
        format!("invalid config {}: {e}", path.display()),
    )
}

/// Run configuration after applying flags over the config file, plus the
/// architecture fields that were stated explicitly by either.
struct ModelChoice {
    cfg: RunConfig,
    levels: Option<usize>,
    order: Option<CorrectionOrder>,
}

fn model_choice(m: &ModelFlags) -> Outcome<ModelChoice> {
    let (mut cfg, mut levels, mut order) = (RunConfig::default(), None, None);
    if let Some(path) = &m.config {
        let v = read_json(path)?;
        cfg = serde_json::from_value(v.clone()).map_err(|e| config_error(path, e))?;
        levels = v.get("levels").map(|_| cfg.levels);
        order = v.get("order").map(|_| cfg.order);
    }
    levels = m.levels.or(levels);
    order = m.order.or(order);
    if let Some(l) = levels {
        cfg.levels = l;
    }
    if let Some(o) = order {
        cfg.order = o;
    }
    if let Some(s) = m.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(ModelChoice { cfg, levels, order })
}

/// Load weights and reject any stated architecture they contradict. Without
/// a file, `--levels 0` selects the bypass; `architecture_only` allows an
/// untrained stand-in for accounting.
fn resolve_weights(
    path: Option<&Path>,
    choice: &ModelChoice,
    architecture_only: bool,
) -> Outcome<EnhancerWeights> {
    let Some(path) = path else {
        if choice.cfg.levels == 0 || architecture_only {
            return Ok(EnhancerWeights::zeros(choice.cfg.levels, choice.cfg.order)?);
        }
        return Err(Failure::new(
            Code::Weights,
            "--weights is required unless --levels 0",
        ));
    };
    let w = load_weights(path).map_err(|e| match e {
        Error::Io(io) => Failure::new(
            Code::Weights,
            format!("cannot read weights {}: {io}", path.display()),
        ),
        other => Failure::weights(other),
    })?;
    if let Some(l) = choice.levels.filter(|&l| l != w.levels) {
        return Err(Failure::new(
            Code::Conflict,
            format!(
                "--levels {l} conflicts with weights built for {} levels",
                w.levels
            ),
        ));
    }
    if let Some(o) = choice.order.filter(|&o| o != w.order && w.levels > 0) {
        return Err(Failure::new(
            Code::Conflict,
            format!("--order {o} conflicts with weights trained for {}", w.order),
        ));
    }
    Ok(w)
}

fn read_image(path: &Path) -> Outcome<fqpe_core::Tensor> {
    read_png(path).map_err(|e| {
        Failure::new(
            Code::Input,
            format!("cannot read image {}: {e}", path.display()),
        )
    })
}

pub fn enhance(a: &EnhanceArgs) -> Outcome {
    let choice = model_choice(&a.model)?;
    let weights = resolve_weights(a.weights.as_deref(), &choice, false)?;
    let img = read_image(&a.input)?;
    let out = pipeline::enhance(&img, &weights)?;
    if !out.is_finite() {
        return Err(Failure::new(
            Code::Numeric,
            "enhanced image contains non-finite values",
        ));
    }
    write_png(&a.out, &out)?;
    Ok(())
}

pub fn degrade(a: &DegradeArgs) -> Outcome {
    let img = read_image(&a.input)?;
    let p = DegradationParams {
        darken_exponent: a.darken,
        read_noise_sigma: a.read_noise,
        shot_noise_scale: a.shot_noise,
        seed: a.seed,
    };
    write_png(&a.out, &harness::degrade(&img, &p)?)?;
    Ok(())
}

fn train_config(f: &TrainFlags) -> Outcome<TrainConfig> {
    let mut cfg = match &f.model.config {
        Some(path) => {
            serde_json::from_value(read_json(path)?).map_err(|e| config_error(path, e))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = f.model.levels {
        cfg.levels = v;
    }
    if let Some(v) = f.model.order {
        cfg.order = v;
    }
    if let Some(v) = f.model.seed {
        cfg.seed = v;
    }
    if let Some(v) = &f.corpus {
        cfg.corpus = Some(v.clone());
    }
    if let Some(v) = f.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = f.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = f.lr {
        cfg.lr = v;
    }
    cfg.single_thread |= f.single_thread;
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> Outcome {
    let cfg = train_config(&a.train)?;
    let corpus = cfg.load_corpus()?;
    let mut log_file = match &a.log {
        Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };
    let mut io_error = None;
    let outcome = harness::train(&cfg, &corpus, |record| {
        let line = serde_json::to_string(record).expect("log records serialize");
        println!("{line}");
        if let Some(f) = log_file.as_mut() {
            if let Err(e) = writeln!(f, "{line}") {
                io_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    save_weights(&outcome.weights, &a.out)?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn load_corpus(dir: Option<&Path>) -> Outcome<Vec<fqpe_core::Tensor>> {
    Ok(match dir {
        Some(d) => harness::load_png_dir(d)?,
        None => synthetic_corpus(BUNDLED_CORPUS_LEN, BUNDLED_IMAGE_SIZE, BUNDLED_CORPUS_SEED),
    })
}

fn csv_sink(out: Option<&Path>) -> Outcome<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout()),
    })
}

pub fn evaluate_cmd(a: &EvaluateArgs) -> Outcome {
    let choice = model_choice(&a.model)?;
    let weights = resolve_weights(a.weights.as_deref(), &choice, false)?;
    let mut corpus = load_corpus(a.corpus.as_deref())?;
    if !a.all {
        let (_, val) = split_indices(corpus.len());
        corpus = val.into_iter().map(|i| corpus[i].clone()).collect();
    }
    let report = evaluate(&corpus, &weights, choice.cfg.seed)?;
    report.write_csv(csv_sink(a.out.as_deref())?)?;
    Ok(())
}

pub fn ablate_cmd(a: &AblateArgs) -> Outcome {
    let cfg = train_config(&a.train)?;
    let corpus = cfg.load_corpus()?;
    let resolution = a.resolution.unwrap_or(pipeline::DEFAULT_RESOLUTION);
    let report = ablate(&cfg, &corpus, resolution, |row| {
        eprintln!(
            "{:?} levels={} order={} psnr {:.3} -> {:.3}",
            row.study, row.levels, row.order, row.psnr_degraded, row.psnr_enhanced
        );
    })?;
    report.write_csv(csv_sink(a.out.as_deref())?)?;
    Ok(())
}

pub fn info(a: &InfoArgs) -> Outcome {
    let choice = model_choice(&a.model)?;
    let weights = resolve_weights(a.weights.as_deref(), &choice, true)?;
    let resolution = a.resolution.unwrap_or(choice.cfg.resolution);
    let params = count_params(&weights);
    let flops = estimate_flops(&weights, resolution)?;
    if a.json {
        let v = json!({
            "levels": weights.levels,
            "order": weights.order,
            "resolution": [resolution.0, resolution.1],
            "flops_per_mac": FLOPS_PER_MAC,
            "params": {"dic": params.dic, "mld": params.mld, "total": params.total},
            "gflops": {"dic": flops.dic, "mld": flops.mld, "total": flops.total},
        });
        println!("{v}");
    } else {
        println!("levels {}  order {}", weights.levels, weights.order);
        println!(
            "params  dic {}  mld {}  total {}",
            params.dic, params.mld, params.total
        );
        println!(
            "gflops at {}x{} ({FLOPS_PER_MAC} FLOPs per MAC)  dic {:.9}  mld {:.9}  total {:.9}",
            resolution.0, resolution.1, flops.dic, flops.mld, flops.total
        );
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Outcome {
    let opts = SuiteOptions {
        points: a.points.max(1),
        seed: a.seed,
        ..SuiteOptions::default()
    };
    let json = a.json;
    let entries = gradsuite::run_suite(&opts, a.filter.as_deref(), |e| {
        if !json {
            println!(
                "{:<30} {:<8} max_rel_error {:.3e}  threshold {:.0e}  skipped {:>3}/{:<5} {}",
                e.name,
                format!("{:?}", e.class).to_lowercase(),
                e.max_rel_error,
                e.threshold,
                e.coords_skipped,
                e.coords_checked + e.coords_skipped,
                if e.passed() { "PASS" } else { "FAIL" }
            );
        }
    })?;
    if entries.is_empty() {
        return Err(Failure::new(
            Code::Input,
            "no gradient check matches the filter",
        ));
    }
    if json {
        println!(
            "{}",
            serde_json::to_string(&entries).expect("entries serialize")
        );
    }
    let worst = entries
        .iter()
        .max_by(|a, b| (a.max_rel_error / a.threshold).total_cmp(&(b.max_rel_error / b.threshold)))
        .expect("non-empty");
    let failed = entries.iter().filter(|e| !e.passed()).count();
    eprintln!(
        "worst: {} ({:.3e} against {:.0e}, point {}); {failed} of {} checks failed",
        worst.name,
        worst.max_rel_error,
        worst.threshold,
        worst.worst_point,
        entries.len()
    );
    if failed > 0 {
        return Err(Failure::new(
            Code::CheckFailed,
            format!("{failed} gradient checks failed"),
        ));
    }
    Ok(())
}

pub fn init(a: &InitArgs) -> Outcome {
    let choice = model_choice(&a.model)?;
    let w = init_weights(choice.cfg.seed, &choice.cfg)?;
    save_weights(&w, &a.out)?;
    Ok(())
}

pub fn gen_corpus(a: &GenCorpusArgs) -> Outcome {
    fs::create_dir_all(&a.out)?;
    for (i, img) in synthetic_corpus(BUNDLED_CORPUS_LEN, BUNDLED_IMAGE_SIZE, BUNDLED_CORPUS_SEED)
        .iter()
        .enumerate()
    {
        write_png(&a.out.join(format!("{i:03}.png")), img)?;
    }
    Ok(())
}
