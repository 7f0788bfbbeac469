//! Topology-preserving 3D thinning.
//!
//! Border voxels are peeled in six directional sub-iterations (up, down,
//! north, south, east, west). In each sub-iteration the simple, non-endpoint
//! border voxels are collected and then re-checked one by one before
//! deletion, which keeps the result (26, 6)-homotopic to the input. Curve
//! endpoints (exactly one foreground neighbour) are never deleted.
//!
//! Directional peeling shortens curves by roughly the local radius at their
//! free ends and bends them towards the shape of the end face, so once
//! thinning converges every free end is straightened and walked back out to
//! the last voxel inside the mask.

use rayon::prelude::*;

use super::neighborhood::{is_simple, OFFSETS};
use super::Skeleton;
use crate::geometry::{add, digital_line, dot, principal_direction, sub, to_mm, Vec3};
use crate::volume::{BoundingBox, Index3, Mask};

/// Skeleton voxels used to fit the direction of a free end.
const TIP_WINDOW: usize = 6;

/// Radius, in local tube radii, of the neighbourhood used to fit a free end's axis.
const TUBE_REACH: f64 = 2.5;

/// Required ratio of axial to transverse spread for that neighbourhood.
const ELONGATION: f64 = 1.5;

/// Upper bound on the voxels retracted from a free end before re-extension.
const MAX_RETRACT: usize = 8;

/// Positions of the six face neighbours in peeling order: +z, -z, +y, -y, +x, -x.
const PEEL_ORDER: [usize; 6] = [22, 4, 16, 10, 14, 12];

/// Whether `p` is a simple point of the foreground of `mask` (outside the grid
/// counts as background).
pub fn is_simple_point(mask: &Mask, p: Index3) -> bool {
    let mut nb = 0u32;
    for (pos, o) in OFFSETS.iter().enumerate() {
        if pos == super::neighborhood::CENTER {
            continue;
        }
        let q = [p[0] as i64 + o[0], p[1] as i64 + o[1], p[2] as i64 + o[2]];
        if mask.contains(q) && mask.data()[mask.linear_index(q.map(|v| v as usize))] != 0 {
            nb |= 1 << pos;
        }
    }
    is_simple(nb)
}

/// Padded working copy of the foreground bounding box.
struct Workspace {
    origin: Index3,
    dims: Index3,
    local: Index3,
    offsets: [isize; 27],
    buf: Vec<u8>,
    inside: Vec<u8>,
    spacing: [f64; 3],
}

impl Workspace {
    fn new(mask: &Mask, bbox: BoundingBox) -> Self {
        let ext = bbox.extent();
        let local = ext.map(|e| e + 2);
        let mut buf = vec![0u8; local.iter().product()];
        for k in 0..ext[2] {
            for j in 0..ext[1] {
                let src = mask.linear_index([bbox.min[0], bbox.min[1] + j, bbox.min[2] + k]);
                let dst = 1 + local[0] * ((j + 1) + local[1] * (k + 1));
                buf[dst..dst + ext[0]].copy_from_slice(&mask.data()[src..src + ext[0]]);
            }
        }
        let offsets = OFFSETS.map(|o| o[0] as isize + local[0] as isize * (o[1] as isize + local[1] as isize * o[2] as isize));
        Self {
            origin: bbox.min,
            dims: mask.dims(),
            local,
            offsets,
            inside: buf.clone(),
            buf,
            spacing: mask.spacing(),
        }
    }

    #[inline]
    fn neighborhood(&self, v: usize) -> u32 {
        let mut nb = 0u32;
        for (pos, &off) in self.offsets.iter().enumerate() {
            if pos != super::neighborhood::CENTER && self.buf[(v as isize + off) as usize] != 0 {
                nb |= 1 << pos;
            }
        }
        nb
    }

    #[inline]
    fn deletable(&self, v: usize) -> bool {
        let nb = self.neighborhood(v);
        nb.count_ones() > 1 && is_simple(nb)
    }

    fn to_global(&self, v: usize) -> Index3 {
        let i = v % self.local[0];
        let r = v / self.local[0];
        let (j, k) = (r % self.local[1], r / self.local[1]);
        [i + self.origin[0] - 1, j + self.origin[1] - 1, k + self.origin[2] - 1]
    }

    /// Local index of a global coordinate, if it lies within the padded box.
    fn to_local(&self, p: [i64; 3]) -> Option<usize> {
        let mut l = [0usize; 3];
        for a in 0..3 {
            let v = p[a] - self.origin[a] as i64 + 1;
            if v < 0 || v as usize >= self.local[a] {
                return None;
            }
            l[a] = v as usize;
        }
        Some(l[0] + self.local[0] * (l[1] + self.local[1] * l[2]))
    }

    fn thin(&mut self) {
        let mut active: Vec<usize> = (0..self.buf.len()).filter(|&v| self.buf[v] != 0).collect();
        loop {
            let mut changed = false;
            for &dir in &PEEL_ORDER {
                let off = self.offsets[dir];
                let this = &*self;
                let candidates: Vec<usize> = active
                    .par_iter()
                    .copied()
                    .filter(|&v| this.buf[(v as isize + off) as usize] == 0 && this.deletable(v))
                    .collect();
                let mut deleted = false;
                for v in candidates {
                    if self.deletable(v) {
                        self.buf[v] = 0;
                        deleted = true;
                    }
                }
                if deleted {
                    changed = true;
                    active.retain(|&v| self.buf[v] != 0);
                }
            }
            if !changed {
                break;
            }
        }
    }

    fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.offsets
            .iter()
            .enumerate()
            .filter(|(pos, _)| *pos != super::neighborhood::CENTER)
            .map(move |(_, &off)| (v as isize + off) as usize)
            .filter(move |&w| self.buf[w] != 0)
    }

    /// Skeleton voxels from the endpoint `tip` inwards, stopping before any
    /// junction voxel.
    fn trailing_chain(&self, tip: usize, max_len: usize) -> Vec<usize> {
        let mut chain = vec![tip];
        let mut prev = usize::MAX;
        let mut cur = tip;
        while chain.len() < max_len {
            let next: Vec<usize> = self.neighbors(cur).filter(|&w| w != prev).collect();
            if next.len() != 1 {
                break;
            }
            let n = next[0];
            if self.neighbors(n).count() > 2 || chain.contains(&n) {
                break;
            }
            chain.push(n);
            prev = cur;
            cur = n;
        }
        chain
    }

    /// Squared distance to background at a local index, from a distance map
    /// over the unpadded bounding box.
    fn sq_radius(&self, edt: &[f64], v: usize) -> f64 {
        let ext = self.local.map(|e| e - 2);
        let i = v % self.local[0];
        let r = v / self.local[0];
        let (j, k) = (r % self.local[1], r / self.local[1]);
        edt[(i - 1) + ext[0] * ((j - 1) + ext[1] * (k - 1))]
    }

    /// Axis of the mask around `v`: principal direction of the in-mask voxels
    /// connected to `v` within `reach_mm`, if that neighbourhood is elongated.
    fn local_axis(&self, v: usize, reach_mm: f64) -> Option<Vec3> {
        let c = to_mm(self.to_global(v), self.spacing);
        let r2 = reach_mm * reach_mm;
        let mut seen = std::collections::HashSet::from([v]);
        let mut queue = vec![v];
        let mut pts = Vec::new();
        while let Some(u) = queue.pop() {
            let p = to_mm(self.to_global(u), self.spacing);
            pts.push(p);
            for (pos, &off) in self.offsets.iter().enumerate() {
                if pos == super::neighborhood::CENTER {
                    continue;
                }
                let w = (u as isize + off) as usize;
                if self.inside[w] == 0 || seen.contains(&w) {
                    continue;
                }
                let d = sub(to_mm(self.to_global(w), self.spacing), c);
                if dot(d, d) <= r2 {
                    seen.insert(w);
                    queue.push(w);
                }
            }
        }
        let dir = principal_direction(&pts)?;
        let n = pts.len() as f64;
        let mean = pts.iter().fold([0.0; 3], |a, &p| add(a, p)).map(|x| x / n);
        let (mut along, mut total) = (0.0, 0.0);
        for p in &pts {
            let d = sub(*p, mean);
            along += dot(d, dir).powi(2);
            total += dot(d, d);
        }
        (along >= ELONGATION * (total - along)).then_some(dir)
    }

    /// Straightens every free end: the last voxels, about one local radius
    /// long, follow the shape of the end face rather than the tube, so they
    /// are retracted and the curve is re-extended along the direction of the
    /// voxels behind them to the last voxel inside the mask.
    fn extend_tips(&mut self, edt: &[f64]) {
        let tips: Vec<usize> = (0..self.buf.len())
            .filter(|&v| self.buf[v] != 0 && self.neighbors(v).count() == 1)
            .collect();
        let max_steps = 4 * self.dims.iter().max().copied().unwrap_or(1);
        let min_spacing = self.spacing.iter().copied().fold(f64::INFINITY, f64::min);
        let step_mm = 0.5 * min_spacing;

        for tip in tips {
            if self.buf[tip] == 0 || self.neighbors(tip).count() != 1 {
                continue;
            }
            let chain = self.trailing_chain(tip, MAX_RETRACT + TIP_WINDOW);
            if chain.len() < 2 {
                continue;
            }
            let radius = chain.iter().map(|&v| self.sq_radius(edt, v)).fold(0.0, f64::max).sqrt();
            let retract = ((radius / min_spacing).ceil() as usize).min(MAX_RETRACT).min(chain.len() - 2);
            let fit = &chain[retract..(retract + TIP_WINDOW).min(chain.len())];
            let pts: Vec<_> = fit.iter().map(|&v| to_mm(self.to_global(v), self.spacing)).collect();
            let neighbourhood = (TUBE_REACH * radius).max(3.0 * min_spacing);
            let Some(mut dir) = self.local_axis(fit[0], neighbourhood).or_else(|| principal_direction(&pts)) else { continue };
            let outward = sub(pts[0], to_mm(self.to_global(chain[chain.len() - 1]), self.spacing));
            if dot(dir, outward) < 0.0 {
                dir = dir.map(|c| -c);
            }

            let start = fit[0];
            let start_g = self.to_global(start).map(|v| v as i64);
            let mut end = start_g;
            for s in 1..=max_steps {
                let q = [0, 1, 2].map(|a| pts[0][a] + dir[a] * step_mm * s as f64);
                let vox = [0, 1, 2].map(|a| (q[a] / self.spacing[a]).round() as i64);
                match self.to_local(vox) {
                    Some(l) if self.inside[l] != 0 => end = vox,
                    _ => break,
                }
            }
            if end == start_g {
                continue;
            }

            for &v in &chain[..retract] {
                self.buf[v] = 0;
            }
            let line = digital_line(start_g, end);
            let mut added = Vec::new();
            let mut prev = start;
            for (n, p) in line.iter().enumerate().skip(1) {
                let Some(v) = self.to_local(*p) else { break };
                if self.inside[v] == 0 || self.buf[v] != 0 {
                    break;
                }
                let allowed = |w: usize| w == prev || (n == 1 && w == fit[1]);
                if self.neighbors(v).any(|w| !allowed(w)) {
                    break;
                }
                self.buf[v] = 1;
                added.push(v);
                prev = v;
            }
            let reach = |v: usize| dot(sub(to_mm(self.to_global(v), self.spacing), pts[0]), dir);
            let new_reach = added.last().map_or(0.0, |&v| reach(v));
            if retract > 0 && new_reach < reach(chain[0]) - min_spacing {
                // the straight continuation falls short of the old tip
                for &v in &added {
                    self.buf[v] = 0;
                }
                for &v in &chain[..retract] {
                    self.buf[v] = 1;
                }
                continue;
            }
            if added.is_empty() {
                continue;
            }

            let mut local: Vec<usize> = vec![start, fit[1]];
            local.extend(&added);
            loop {
                let mut changed = false;
                for &c in &local {
                    if self.buf[c] != 0 && self.deletable(c) {
                        self.buf[c] = 0;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
        }
    }

    fn into_skeleton(self) -> Skeleton {
        let dims = self.dims;
        let indices = (0..self.buf.len())
            .filter(|&v| self.buf[v] != 0)
            .map(|v| {
                let [i, j, k] = self.to_global(v);
                i + dims[0] * (j + dims[1] * k)
            })
            .collect();
        Skeleton::from_indices(indices, dims, self.spacing)
    }
}

/// Re-thins an edited skeleton without tip extension.
pub(crate) fn rethin(skel: &Skeleton) -> Skeleton {
    let dims = skel.source_dims();
    let mut data = vec![0u8; dims.iter().product()];
    for &i in skel.indices() {
        data[i] = 1;
    }
    let Ok(mask) = Mask::from_data(dims, skel.spacing(), crate::volume::IntensityUnit::Binary, data) else {
        return skel.clone();
    };
    let Some(bbox) = BoundingBox::of_foreground(&mask) else {
        return skel.clone();
    };
    let mut ws = Workspace::new(&mask, bbox);
    ws.thin();
    ws.into_skeleton()
}

/// Thins a binary mask to a unit-thick, topology-equivalent curve skeleton.
pub fn skeletonize(mask: &Mask) -> Skeleton {
    let Some(bbox) = BoundingBox::of_foreground(mask) else {
        return Skeleton::from_indices(Vec::new(), mask.dims(), mask.spacing());
    };
    let edt = super::edt::squared_edt_region(mask, &bbox);
    let mut ws = Workspace::new(mask, bbox);
    ws.thin();
    ws.extend_tips(&edt);
    ws.into_skeleton()
}
