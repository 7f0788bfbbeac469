//! Voxel-wise maximum ensembling of probability maps and thresholding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{IntensityUnit, Mask, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionParams {
    pub threshold: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Parameter(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Voxel-wise maximum over `maps`.
pub fn ensemble_max(maps: &[Volume]) -> Result<Volume> {
    let (first, rest) = maps
        .split_first()
        .ok_or_else(|| Error::Parameter("ensemble needs at least one probability map".into()))?;
    for (i, m) in maps.iter().enumerate() {
        if m.unit() != IntensityUnit::Probability {
            return Err(Error::Parameter(format!(
                "map {i} is tagged {}, expected probability",
                m.unit().as_str()
            )));
        }
        first.ensure_same_shape(m, &format!("map 0 vs map {i}"))?;
    }
    let mut out = first.data().to_vec();
    for m in rest {
        out.par_iter_mut()
            .zip(m.data().par_iter())
            .for_each(|(o, &v)| *o = o.max(v));
    }
    first.with_data(IntensityUnit::Probability, out)
}

/// Binary mask of voxels with probability `>= threshold`.
pub fn threshold(map: &Volume, params: &FusionParams) -> Result<Mask> {
    params.validate()?;
    if map.unit() != IntensityUnit::Probability {
        return Err(Error::Parameter(format!(
            "threshold expects a probability map, got {}",
            map.unit().as_str()
        )));
    }
    let t = params.threshold;
    let data: Vec<u8> = map.data().par_iter().map(|&v| (v as f64 >= t) as u8).collect();
    map.with_data(IntensityUnit::Binary, data)
}
