//! Exact anisotropic Euclidean distance transform (separable lower envelope
//! of parabolas) and the per-skeleton-voxel radius field built on it.
//!
//! Everything outside the grid counts as background, so a mask touching the
//! border still has finite distances there.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Skeleton;
use crate::error::{Error, Result};
use crate::volume::{BoundingBox, Index3, Mask};

/// One line of the transform. `f` holds squared distances (`INFINITY` for
/// unknown); virtual zero-cost sites sit just outside both ends.
fn envelope(f: &[f64], step: f64, out: &mut [f64], pos: &mut Vec<f64>, val: &mut Vec<f64>, bound: &mut Vec<f64>) {
    let n = f.len();
    pos.clear();
    val.clear();
    bound.clear();
    let sites = std::iter::once((-step, 0.0))
        .chain(f.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(q, &v)| (q as f64 * step, v)))
        .chain(std::iter::once((n as f64 * step, 0.0)));
    for (p, fp) in sites {
        loop {
            let Some(&top) = pos.last() else {
                pos.push(p);
                val.push(fp);
                bound.push(f64::NEG_INFINITY);
                break;
            };
            let ftop = *val.last().unwrap();
            let s = ((fp + p * p) - (ftop + top * top)) / (2.0 * (p - top));
            if s <= *bound.last().unwrap() {
                pos.pop();
                val.pop();
                bound.pop();
            } else {
                pos.push(p);
                val.push(fp);
                bound.push(s);
                break;
            }
        }
    }
    let mut k = 0;
    for (i, o) in out.iter_mut().enumerate() {
        let x = i as f64 * step;
        while k + 1 < pos.len() && bound[k + 1] < x {
            k += 1;
        }
        let d = x - pos[k];
        *o = d * d + val[k];
    }
}

/// Squared distances (mm²) over the region `bbox`, x-fastest within the box.
pub(super) fn squared_edt_region(mask: &Mask, bbox: &BoundingBox) -> Vec<f64> {
    let ext = bbox.extent();
    let sp = mask.spacing();
    let (nx, ny, nz) = (ext[0], ext[1], ext[2]);
    let mut d = vec![0.0f64; nx * ny * nz];

    // x lines
    d.par_chunks_mut(nx * ny).enumerate().for_each(|(k, plane)| {
        let (mut pos, mut val, mut bound) = (Vec::new(), Vec::new(), Vec::new());
        let mut f = vec![0.0; nx];
        for j in 0..ny {
            let src = mask.linear_index([bbox.min[0], bbox.min[1] + j, bbox.min[2] + k]);
            for (i, v) in f.iter_mut().enumerate() {
                *v = if mask.data()[src + i] != 0 { f64::INFINITY } else { 0.0 };
            }
            envelope(&f, sp[0], &mut plane[j * nx..(j + 1) * nx], &mut pos, &mut val, &mut bound);
        }
    });

    // y lines
    d.par_chunks_mut(nx * ny).for_each(|plane| {
        let (mut pos, mut val, mut bound) = (Vec::new(), Vec::new(), Vec::new());
        let mut f = vec![0.0; ny];
        let mut out = vec![0.0; ny];
        for i in 0..nx {
            for j in 0..ny {
                f[j] = plane[i + nx * j];
            }
            envelope(&f, sp[1], &mut out, &mut pos, &mut val, &mut bound);
            for j in 0..ny {
                plane[i + nx * j] = out[j];
            }
        }
    });

    // z lines, one row of columns per task
    let columns: Vec<(usize, Vec<f64>)> = (0..ny)
        .into_par_iter()
        .map(|j| {
            let (mut pos, mut val, mut bound) = (Vec::new(), Vec::new(), Vec::new());
            let mut f = vec![0.0; nz];
            let mut res = vec![0.0; nx * nz];
            for i in 0..nx {
                for k in 0..nz {
                    f[k] = d[i + nx * (j + ny * k)];
                }
                envelope(&f, sp[2], &mut res[i * nz..(i + 1) * nz], &mut pos, &mut val, &mut bound);
            }
            (j, res)
        })
        .collect();
    for (j, res) in columns {
        for i in 0..nx {
            for k in 0..nz {
                d[i + nx * (j + ny * k)] = res[i * nz + k];
            }
        }
    }
    d
}

/// Squared Euclidean distance (mm²) from every voxel centre to the nearest
/// background voxel centre; 0 on background.
pub fn squared_edt(mask: &Mask) -> Vec<f64> {
    let mut out = vec![0.0; mask.len()];
    let Some(bbox) = BoundingBox::of_foreground(mask) else {
        return out;
    };
    let region = squared_edt_region(mask, &bbox);
    let ext = bbox.extent();
    for k in 0..ext[2] {
        for j in 0..ext[1] {
            let dst = mask.linear_index([bbox.min[0], bbox.min[1] + j, bbox.min[2] + k]);
            let src = ext[0] * (j + ext[1] * k);
            out[dst..dst + ext[0]].copy_from_slice(&region[src..src + ext[0]]);
        }
    }
    out
}

/// Euclidean distance to background (mm) at each skeleton voxel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusField {
    dims: Index3,
    indices: Vec<usize>,
    radii_mm: Vec<f64>,
    /// Largest distance anywhere in the mask.
    global_max_mm: f64,
}

impl RadiusField {
    pub fn get(&self, [i, j, k]: Index3) -> Option<f64> {
        let idx = i + self.dims[0] * (j + self.dims[1] * k);
        self.indices.binary_search(&idx).ok().map(|p| self.radii_mm[p])
    }

    pub fn values(&self) -> &[f64] {
        &self.radii_mm
    }

    pub fn global_max_mm(&self) -> f64 {
        self.global_max_mm
    }

    pub fn len(&self) -> usize {
        self.radii_mm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii_mm.is_empty()
    }
}

pub fn radius_field(mask: &Mask, skel: &Skeleton) -> Result<RadiusField> {
    if skel.source_dims() != mask.dims() {
        return Err(Error::Consistency(format!(
            "skeleton dims {:?} vs mask dims {:?}",
            skel.source_dims(),
            mask.dims()
        )));
    }
    if let Some(&bad) = skel.indices().iter().find(|&&i| mask.data()[i] == 0) {
        return Err(Error::Consistency(format!(
            "skeleton voxel {:?} is background in the mask",
            mask.coords(bad)
        )));
    }
    let Some(bbox) = BoundingBox::of_foreground(mask) else {
        return Ok(RadiusField {
            dims: mask.dims(),
            indices: Vec::new(),
            radii_mm: Vec::new(),
            global_max_mm: 0.0,
        });
    };
    let region = squared_edt_region(mask, &bbox);
    let ext = bbox.extent();
    let radii_mm = skel
        .voxels()
        .map(|p| {
            let l = [0, 1, 2].map(|a| p[a] - bbox.min[a]);
            region[l[0] + ext[0] * (l[1] + ext[1] * l[2])].sqrt()
        })
        .collect();
    let global_max_mm = region.iter().copied().fold(0.0, f64::max).sqrt();
    Ok(RadiusField {
        dims: mask.dims(),
        indices: skel.indices().to_vec(),
        radii_mm,
        global_max_mm,
    })
}
