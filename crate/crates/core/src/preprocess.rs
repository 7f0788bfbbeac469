//! CT preparation: isotropic resampling, HU clipping and normalisation,
//! lung bounding-box cropping, and trachea clipping at the lung apex.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BoundingBox, Index3, IntensityUnit, Mask, Sample, Volume, VoxelGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessParams {
    /// Isotropic output spacing in mm.
    pub target_spacing: f64,
    pub clip_low: f64,
    pub clip_high: f64,
    /// Voxels added on every side of the lung bounding box.
    pub crop_margin: usize,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            target_spacing: 0.75,
            clip_low: -1024.0,
            clip_high: 1024.0,
            crop_margin: 0,
        }
    }
}

impl PreprocessParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_spacing > 0.0) {
            return Err(Error::Parameter(format!(
                "target_spacing must be positive, got {}",
                self.target_spacing
            )));
        }
        if !(self.clip_low < self.clip_high) {
            return Err(Error::Parameter(format!(
                "clip_low {} must be below clip_high {}",
                self.clip_low, self.clip_high
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// Output dims for resampling `dims` at `spacing` to an isotropic `target`.
pub fn resampled_dims(dims: Index3, spacing: [f64; 3], target: f64) -> Index3 {
    [0, 1, 2].map(|a| ((dims[a] as f64 * spacing[a] / target).round() as usize).max(1))
}

/// Resamples onto an isotropic grid of spacing `target`.
///
/// Output voxel `o` samples the input at continuous index `o * target / spacing`
/// so voxel `(0,0,0)` keeps its world position. Coordinates beyond the last
/// sample are clamped to the edge.
pub fn resample_isotropic<T: Sample>(grid: &VoxelGrid<T>, target: f64, mode: Interpolation) -> Result<VoxelGrid<T>> {
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::Parameter(format!("target spacing must be positive, got {target}")));
    }
    if grid.unit() == IntensityUnit::Binary && mode != Interpolation::Nearest {
        return Err(Error::Parameter("binary masks must be resampled with nearest".into()));
    }
    let in_dims = grid.dims();
    let spacing = grid.spacing();
    let out_dims = resampled_dims(in_dims, spacing, target);
    let ratio = [0, 1, 2].map(|a| target / spacing[a]);
    let data = grid.data();
    let nx = in_dims[0];
    let nxy = in_dims[0] * in_dims[1];

    let mut out = vec![T::default(); out_dims.iter().product()];
    let slice = out_dims[0] * out_dims[1];
    out.par_chunks_mut(slice).enumerate().for_each(|(k, plane)| {
        let z = (k as f64 * ratio[2]).clamp(0.0, (in_dims[2] - 1) as f64);
        for j in 0..out_dims[1] {
            let y = (j as f64 * ratio[1]).clamp(0.0, (in_dims[1] - 1) as f64);
            for i in 0..out_dims[0] {
                let x = (i as f64 * ratio[0]).clamp(0.0, (in_dims[0] - 1) as f64);
                plane[i + out_dims[0] * j] = match mode {
                    Interpolation::Nearest => {
                        let idx = x.round() as usize + nx * (y.round() as usize) + nxy * (z.round() as usize);
                        data[idx]
                    }
                    Interpolation::Trilinear => {
                        let (x0, tx) = split(x, in_dims[0]);
                        let (y0, ty) = split(y, in_dims[1]);
                        let (z0, tz) = split(z, in_dims[2]);
                        let x1 = (x0 + 1).min(in_dims[0] - 1);
                        let y1 = (y0 + 1).min(in_dims[1] - 1);
                        let z1 = (z0 + 1).min(in_dims[2] - 1);
                        let at = |a: usize, b: usize, c: usize| data[a + nx * b + nxy * c].to_f32() as f64;
                        let c00 = at(x0, y0, z0) * (1.0 - tx) + at(x1, y0, z0) * tx;
                        let c10 = at(x0, y1, z0) * (1.0 - tx) + at(x1, y1, z0) * tx;
                        let c01 = at(x0, y0, z1) * (1.0 - tx) + at(x1, y0, z1) * tx;
                        let c11 = at(x0, y1, z1) * (1.0 - tx) + at(x1, y1, z1) * tx;
                        let c0 = c00 * (1.0 - ty) + c10 * ty;
                        let c1 = c01 * (1.0 - ty) + c11 * ty;
                        T::from_f32((c0 * (1.0 - tz) + c1 * tz) as f32)
                    }
                };
            }
        }
    });
    let affine = grid.affine().scale_axes(ratio);
    VoxelGrid::new(out_dims, [target; 3], affine, grid.unit(), out)
}

fn split(x: f64, n: usize) -> (usize, f64) {
    let x0 = (x.floor() as usize).min(n - 1);
    (x0, x - x0 as f64)
}

/// Clamps HU to `[clip_low, clip_high]` and maps that range linearly onto `[0, 1]`.
pub fn clip_normalize(grid: &Volume, params: &PreprocessParams) -> Result<Volume> {
    params.validate()?;
    if grid.unit() != IntensityUnit::Hu {
        return Err(Error::Parameter(format!(
            "clip_normalize expects HU intensities, grid is tagged {}",
            grid.unit().as_str()
        )));
    }
    let (lo, hi) = (params.clip_low, params.clip_high);
    let data: Vec<f32> = grid
        .data()
        .par_iter()
        .map(|&v| normalize_value(v as f64, lo, hi) as f32)
        .collect();
    grid.with_data(IntensityUnit::Probability, data)
}

#[inline]
pub fn normalize_value(v: f64, lo: f64, hi: f64) -> f64 {
    if v.is_nan() {
        return 0.0;
    }
    (v.clamp(lo, hi) - lo) / (hi - lo)
}

/// Tightest box around the lung foreground, grown by `margin` and clamped to the grid.
pub fn lung_bbox(lung_mask: &Mask, margin: usize) -> Result<BoundingBox> {
    let tight = BoundingBox::of_foreground(lung_mask)
        .ok_or_else(|| Error::EmptyMask("lung mask has no foreground".into()))?;
    let dims = lung_mask.dims();
    Ok(BoundingBox {
        min: tight.min.map(|v| v.saturating_sub(margin)),
        max: [0, 1, 2].map(|a| (tight.max[a] + margin).min(dims[a] - 1)),
    })
}

/// Sub-grid covered by `bbox`; world positions of retained voxels are unchanged.
pub fn crop<T: Sample>(grid: &VoxelGrid<T>, bbox: &BoundingBox) -> Result<VoxelGrid<T>> {
    let dims = grid.dims();
    if !bbox.fits(dims) {
        return Err(Error::Bounds {
            index: bbox.max.map(|v| v as i64),
            dims,
        });
    }
    let ext = bbox.extent();
    let mut out = Vec::with_capacity(ext.iter().product());
    let data = grid.data();
    for k in bbox.min[2]..=bbox.max[2] {
        for j in bbox.min[1]..=bbox.max[1] {
            let start = grid.linear_index([bbox.min[0], j, k]);
            out.extend_from_slice(&data[start..start + ext[0]]);
        }
    }
    let affine = grid.affine().shifted(bbox.min.map(|v| v as f64));
    VoxelGrid::new(ext, grid.spacing(), affine, grid.unit(), out)
}

/// Index along the superior axis of the most superior lung voxel, with the axis
/// and its orientation.
pub fn lung_top(lung_mask: &Mask) -> Result<(usize, bool, usize)> {
    let bbox = BoundingBox::of_foreground(lung_mask)
        .ok_or_else(|| Error::EmptyMask("lung mask has no foreground".into()))?;
    let (axis, increasing) = lung_mask.affine().superior_axis();
    let top = if increasing { bbox.max[axis] } else { bbox.min[axis] };
    Ok((axis, increasing, top))
}

/// Removes airway voxels strictly superior to the top of the lungs.
pub fn clip_trachea_at_lung_top(airway: &Mask, lung_mask: &Mask) -> Result<Mask> {
    airway.ensure_same_shape(lung_mask, "airway vs lung mask")?;
    let (axis, increasing, top) = lung_top(lung_mask)?;
    let dims = airway.dims();
    let data: Vec<u8> = airway
        .data()
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            if v == 0 {
                return 0;
            }
            let c = crate::volume::coords_of(dims, idx)[axis];
            let above = if increasing { c > top } else { c < top };
            (!above) as u8
        })
        .collect();
    Mask::from_bits(airway, data)
}
