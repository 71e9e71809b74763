use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::corpus::{load_png_dir, synthetic_corpus};
use super::degrade::{degrade, DegradationParams};
use super::evaluate::evaluate_indices;
use crate::autodiff::Tape;
use crate::dic::CorrectionOrder;
use crate::error::{Error, Result};
use crate::pipeline::{self, check_levels, EnhancerWeights, RunConfig};
use crate::pyramid::LowpassKernel;
use crate::tensor::Tensor;

/// Size and seed of the bundled procedural corpus.
pub const BUNDLED_CORPUS_LEN: usize = 64;
pub const BUNDLED_IMAGE_SIZE: usize = 96;
pub const BUNDLED_CORPUS_SEED: u64 = 2024;
/// Every `VALIDATION_STRIDE`-th image is held out.
pub const VALIDATION_STRIDE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub levels: usize,
    pub order: CorrectionOrder,
    pub seed: u64,
    /// Directory of PNG files; the bundled corpus when absent.
    pub corpus: Option<PathBuf>,
    pub single_thread: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            batch_size: 32,
            epochs: 30,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            levels: pipeline::DEFAULT_LEVELS,
            order: CorrectionOrder::GlobalToLocal,
            seed: 0,
            corpus: None,
            single_thread: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_levels(self.levels)?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be finite and nonnegative, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch_size and epochs must be positive".into(),
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(())
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            levels: self.levels,
            order: self.order,
            seed: self.seed,
            ..RunConfig::default()
        }
    }

    /// The configured PNG directory, or the bundled procedural corpus.
    pub fn load_corpus(&self) -> Result<Vec<Tensor>> {
        match &self.corpus {
            Some(dir) => load_png_dir(dir),
            None => Ok(synthetic_corpus(
                BUNDLED_CORPUS_LEN,
                BUNDLED_IMAGE_SIZE,
                BUNDLED_CORPUS_SEED,
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-image L1 loss over the epoch.
    pub loss: f64,
    /// Mean validation PSNR of the enhanced images.
    pub psnr: f64,
    pub psnr_degraded: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: EnhancerWeights,
    pub log: Vec<EpochLog>,
}

/// `(train, validation)` indices for a corpus of `n` images. A corpus of
/// one image validates on its training image.
pub fn split_indices(n: usize) -> (Vec<usize>, Vec<usize>) {
    let (val, train): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|i| i % VALIDATION_STRIDE == VALIDATION_STRIDE - 1);
    if val.is_empty() {
        (train.clone(), train)
    } else {
        (train, val)
    }
}

fn item_gradient(
    weights: &EnhancerWeights,
    clean: &Tensor,
    degradation: &DegradationParams,
    kernel: &LowpassKernel,
) -> Result<(f64, Vec<f32>)> {
    let dark = degrade(clean, degradation)?;
    let mut tape = Tape::new();
    let x = tape.leaf(dark);
    let target = tape.leaf(clean.clone());
    let params = weights.bind(&mut tape)?;
    let y = pipeline::enhance_on(&mut tape, x, &params, weights.levels, weights.order, kernel)?;
    let loss = tape.mean_abs_diff(y, target)?;
    let value = tape.value(loss).data()[0] as f64;
    let mut flat = Vec::with_capacity(weights.param_len());
    if value.is_finite() {
        let grads = tape.backward(loss)?;
        for v in params.vars() {
            flat.extend_from_slice(grads.wrt(v)?.data());
        }
    }
    Ok((value, flat))
}

/// Adam on the L1 distance between enhanced degraded images and their clean
/// sources. `on_epoch` sees each log record as soon as it is produced.
pub fn train(
    cfg: &TrainConfig,
    corpus: &[Tensor],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("training corpus has no images".into()));
    }
    for img in corpus {
        let (_, h, w) = img.dims3()?;
        if cfg.levels > 0 {
            crate::pyramid::check_levels(h, w, cfg.levels)?;
        }
    }
    let (train_idx, val_idx) = split_indices(corpus.len());
    let kernel = LowpassKernel::default();
    let mut weights = pipeline::init_weights(cfg.seed, &cfg.run_config())?;
    let mut flat = weights.flat_values();
    let mut adam = Adam::new(flat.len(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_7a1e);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0f64, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let jobs: Vec<(usize, DegradationParams)> = batch
                .iter()
                .map(|&i| (i, DegradationParams::sample_any(&mut rng)))
                .collect();
            let run = |&(i, ref d): &(usize, DegradationParams)| {
                item_gradient(&weights, &corpus[i], d, &kernel)
            };
            let results: Vec<Result<(f64, Vec<f32>)>> = if cfg.single_thread {
                jobs.iter().map(run).collect()
            } else {
                jobs.par_iter().map(run).collect()
            };
            let mut grad = vec![0f32; flat.len()];
            for (k, r) in results.into_iter().enumerate() {
                let (loss, g) = r?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss {loss} at epoch {epoch} on image {}",
                        jobs[k].0
                    )));
                }
                loss_sum += loss;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            seen += batch.len();
            let inv = 1.0 / batch.len() as f32;
            grad.iter_mut().for_each(|g| *g *= inv);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "non-finite gradient at epoch {epoch}"
                )));
            }
            adam.step(&mut flat, &grad);
            weights.set_flat(&flat)?;
        }
        let eval = evaluate_indices(corpus, &val_idx, &weights, cfg.seed)?;
        let record = EpochLog {
            epoch,
            loss: loss_sum / seen as f64,
            psnr: eval.overall.psnr_enhanced,
            psnr_degraded: eval.overall.psnr_degraded,
        };
        on_epoch(&record);
        log.push(record);
    }
    Ok(TrainOutcome { weights, log })
}
