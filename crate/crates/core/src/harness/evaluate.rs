use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::degrade::{degrade, DegradationParams, DifficultyBucket};
use super::metrics::{format_psnr, mean_psnr, psnr};
use crate::error::{Error, Result};
use crate::pipeline::{self, EnhancerWeights};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BucketRow {
    /// `normal`, `hard`, `extreme` or `overall`.
    pub bucket: String,
    pub count: usize,
    pub psnr_degraded: f64,
    pub psnr_enhanced: f64,
}

impl BucketRow {
    pub fn gain(&self) -> f64 {
        self.psnr_enhanced - self.psnr_degraded
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub buckets: Vec<BucketRow>,
    pub overall: BucketRow,
}

impl EvalReport {
    pub const CSV_HEADER: [&'static str; 5] = [
        "bucket",
        "count",
        "psnr_degraded",
        "psnr_enhanced",
        "gain_db",
    ];

    /// One row per bucket, then `overall`. PSNR columns in dB, `inf` for
    /// exact matches.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for r in self.buckets.iter().chain(std::iter::once(&self.overall)) {
            w.write_record([
                r.bucket.clone(),
                r.count.to_string(),
                format_psnr(r.psnr_degraded),
                format_psnr(r.psnr_enhanced),
                format!("{:.4}", r.gain()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Degradation applied to corpus image `index`: bucket `index % 3`, noise
/// and exponent drawn from a stream keyed on `(seed, index)`.
pub fn eval_degradation(seed: u64, index: usize) -> (DifficultyBucket, DegradationParams) {
    let bucket = DifficultyBucket::ALL[index % 3];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe7a1_0000_0000 ^ index as u64);
    (bucket, DegradationParams::sample(&mut rng, bucket))
}

/// Per-bucket mean PSNR of degraded and enhanced images against the clean
/// sources. Enhanced images are clamped to `[0, 1]` as on export.
pub fn evaluate(corpus: &[Tensor], weights: &EnhancerWeights, seed: u64) -> Result<EvalReport> {
    let idx: Vec<usize> = (0..corpus.len()).collect();
    evaluate_indices(corpus, &idx, weights, seed)
}

pub(crate) fn evaluate_indices(
    corpus: &[Tensor],
    indices: &[usize],
    weights: &EnhancerWeights,
    seed: u64,
) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::EmptyCorpus("evaluation corpus has no images".into()));
    }
    let mut per_bucket: [(Vec<f64>, Vec<f64>); 3] = Default::default();
    let (mut all_d, mut all_e) = (Vec::new(), Vec::new());
    for (k, &i) in indices.iter().enumerate() {
        let clean = &corpus[i];
        let (bucket, params) = eval_degradation(seed, k);
        let dark = degrade(clean, &params)?;
        let enhanced = pipeline::enhance(&dark, weights)
            .map_err(|e| match e {
                Error::IncompatibleWeights(_) | Error::ImageTooSmall { .. } => e,
                other => Error::IncompatibleWeights(other.to_string()),
            })?
            .clamp(0.0, 1.0);
        let (pd, pe) = (psnr(&dark, clean)?, psnr(&enhanced, clean)?);
        let slot = &mut per_bucket[bucket as usize];
        slot.0.push(pd);
        slot.1.push(pe);
        all_d.push(pd);
        all_e.push(pe);
    }
    let buckets = DifficultyBucket::ALL
        .iter()
        .zip(&per_bucket)
        .map(|(b, (d, e))| BucketRow {
            bucket: b.name().to_string(),
            count: d.len(),
            psnr_degraded: mean_psnr(d),
            psnr_enhanced: mean_psnr(e),
        })
        .collect();
    Ok(EvalReport {
        buckets,
        overall: BucketRow {
            bucket: "overall".to_string(),
            count: all_d.len(),
            psnr_degraded: mean_psnr(&all_d),
            psnr_enhanced: mean_psnr(&all_e),
        },
    })
}
