use serde::{Deserialize, Serialize};

use super::EnhancerWeights;
use crate::error::Result;
use crate::pyramid::level_extents;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub dic: usize,
    pub mld: usize,
    pub total: usize,
}

pub fn count_params(w: &EnhancerWeights) -> ParamCounts {
    let dic = w.dic.as_ref().map_or(0, |d| d.param_count());
    let mld = w.mld.param_count();
    ParamCounts {
        dic,
        mld,
        total: dic + mld,
    }
}

/// GFLOPs at a given input resolution, counting two FLOPs per
/// multiply-accumulate of every convolution, the pooled linear layer and the
/// two factor products. Pyramid filtering and elementwise work are excluded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub dic: f64,
    pub mld: f64,
    pub total: f64,
}

pub const FLOPS_PER_MAC: u64 = 2;

pub fn estimate_flops(w: &EnhancerWeights, resolution: (usize, usize)) -> Result<FlopReport> {
    if w.is_bypass() {
        return Ok(FlopReport {
            dic: 0.0,
            mld: 0.0,
            total: 0.0,
        });
    }
    let extents = level_extents(resolution.0, resolution.1, w.levels);
    let (lh, lw) = *extents.last().expect("at least two levels");
    let dic_macs = w.dic.as_ref().map_or(0, |d| d.macs(lh, lw));
    let mld_macs: u64 = w
        .mld
        .levels
        .iter()
        .zip(&extents)
        .map(|(level, &(h, ww))| level.macs(h, ww))
        .sum();
    let dic = (FLOPS_PER_MAC * dic_macs) as f64 / 1e9;
    let mld = (FLOPS_PER_MAC * mld_macs) as f64 / 1e9;
    Ok(FlopReport {
        dic,
        mld,
        total: (FLOPS_PER_MAC * (dic_macs + mld_macs)) as f64 / 1e9,
    })
}
