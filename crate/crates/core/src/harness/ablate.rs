use std::collections::hash_map::{Entry, HashMap};
use std::io::Write;

use serde::Serialize;

use super::evaluate::evaluate_indices;
use super::metrics::format_psnr;
use super::train::{split_indices, train, TrainConfig};
use crate::dic::CorrectionOrder;
use crate::error::Result;
use crate::pipeline::{
    count_params, estimate_flops, EnhancerWeights, DEFAULT_LEVELS, LEGAL_LEVELS,
};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    Depth,
    Order,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub study: Study,
    pub levels: usize,
    pub order: CorrectionOrder,
    pub params_dic: usize,
    pub params_mld: usize,
    pub params_total: usize,
    pub gflops_dic: f64,
    pub gflops_mld: f64,
    pub gflops_total: f64,
    pub psnr_degraded: f64,
    pub psnr_enhanced: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub resolution: (usize, usize),
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub const CSV_HEADER: [&'static str; 11] = [
        "study",
        "levels",
        "order",
        "params_dic",
        "params_mld",
        "params_total",
        "gflops_dic",
        "gflops_mld",
        "gflops_total",
        "psnr_degraded",
        "psnr_enhanced",
    ];

    /// GFLOPs in shortest round-trip form; PSNR in dB with `inf` for exact
    /// matches.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for r in &self.rows {
            let study = match r.study {
                Study::Depth => "depth",
                Study::Order => "order",
            };
            w.write_record([
                study.to_string(),
                r.levels.to_string(),
                r.order.to_string(),
                r.params_dic.to_string(),
                r.params_mld.to_string(),
                r.params_total.to_string(),
                r.gflops_dic.to_string(),
                r.gflops_mld.to_string(),
                r.gflops_total.to_string(),
                format_psnr(r.psnr_degraded),
                format_psnr(r.psnr_enhanced),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Train and evaluate every pyramid depth with the base order, then both
/// orders at the base depth (the default depth when the base is a bypass).
/// Accounting columns are taken at `resolution`.
pub fn ablate(
    base: &TrainConfig,
    corpus: &[Tensor],
    resolution: (usize, usize),
    mut on_row: impl FnMut(&AblationRow),
) -> Result<AblationReport> {
    base.validate()?;
    let order_levels = if base.levels == 0 {
        DEFAULT_LEVELS
    } else {
        base.levels
    };
    let mut plan: Vec<(Study, usize, CorrectionOrder)> = LEGAL_LEVELS
        .iter()
        .map(|&l| (Study::Depth, l, base.order))
        .collect();
    for order in [
        CorrectionOrder::GlobalToLocal,
        CorrectionOrder::LocalToGlobal,
    ] {
        plan.push((Study::Order, order_levels, order));
    }

    let (_, val_idx) = split_indices(corpus.len());
    let mut trained: HashMap<(usize, CorrectionOrder), (EnhancerWeights, f64, f64)> =
        HashMap::new();
    let mut rows = Vec::with_capacity(plan.len());
    for (study, levels, order) in plan {
        let (weights, psnr_degraded, psnr_enhanced) = match trained.entry((levels, order)) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(slot) => {
                let cfg = TrainConfig {
                    levels,
                    order,
                    ..base.clone()
                };
                let weights = train(&cfg, corpus, |_| {})?.weights;
                let eval = evaluate_indices(corpus, &val_idx, &weights, cfg.seed)?;
                slot.insert((
                    weights,
                    eval.overall.psnr_degraded,
                    eval.overall.psnr_enhanced,
                ))
            }
        };
        let params = count_params(weights);
        let flops = estimate_flops(weights, resolution)?;
        let row = AblationRow {
            study,
            levels,
            order,
            params_dic: params.dic,
            params_mld: params.mld,
            params_total: params.total,
            gflops_dic: flops.dic,
            gflops_mld: flops.mld,
            gflops_total: flops.total,
            psnr_degraded: *psnr_degraded,
            psnr_enhanced: *psnr_enhanced,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(AblationReport { resolution, rows })
}
