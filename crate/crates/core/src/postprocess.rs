//! Topological refinement of a binary airway mask: keep the main tree,
//! bridge free segments whose ends line up with it, drop the rest.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{add, angle_deg, digital_line, dot, norm, principal_direction, scale, segment_distance_sq, sub, to_mm, Vec3};
use crate::topology::{
    build_graph, connected_components, radius_field, skeletonize, CenterlineGraph, Connectivity, Labeling, Node, RadiusField,
    Skeleton,
};
use crate::volume::{coords_of, Index3, IntensityUnit, Mask};

/// Sets every voxel whose centre lies within `radius_mm` of the segment
/// `a`–`b` (grid-aligned millimetres). Returns the number of newly set voxels.
pub fn paint_capsule(data: &mut [u8], dims: Index3, spacing: [f64; 3], a: Vec3, b: Vec3, radius_mm: f64) -> usize {
    let r2 = radius_mm * radius_mm * (1.0 + 1e-9);
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for ax in 0..3 {
        let min = (a[ax].min(b[ax]) - radius_mm) / spacing[ax];
        let max = (a[ax].max(b[ax]) + radius_mm) / spacing[ax];
        if max < 0.0 || min > (dims[ax] - 1) as f64 {
            return 0;
        }
        lo[ax] = min.ceil().max(0.0) as usize;
        hi[ax] = (max.floor() as usize).min(dims[ax] - 1);
        if lo[ax] > hi[ax] {
            return 0;
        }
    }
    let mut added = 0;
    for k in lo[2]..=hi[2] {
        for j in lo[1]..=hi[1] {
            let row = dims[0] * (j + dims[1] * k);
            for i in lo[0]..=hi[0] {
                let v = &mut data[row + i];
                if *v == 0 && segment_distance_sq(to_mm([i, j, k], spacing), a, b) <= r2 {
                    *v = 1;
                    added += 1;
                }
            }
        }
    }
    added
}

/// Capsule of `radius_mm` swept along a voxel polyline, clipped to a grid
/// shaped like `like`. Every in-grid path voxel is foreground.
pub fn rasterize_tube(path: &[[i64; 3]], radius_mm: f64, like: &Mask) -> Result<Mask> {
    if !(radius_mm > 0.0) {
        return Err(Error::Parameter(format!("tube radius must be positive, got {radius_mm}")));
    }
    let dims = like.dims();
    let spacing = like.spacing();
    let mut data = vec![0u8; like.len()];
    let mm = |p: [i64; 3]| [0, 1, 2].map(|a| p[a] as f64 * spacing[a]);
    match path {
        [] => {}
        [p] => {
            paint_capsule(&mut data, dims, spacing, mm(*p), mm(*p), radius_mm);
        }
        _ => {
            for w in path.windows(2) {
                paint_capsule(&mut data, dims, spacing, mm(w[0]), mm(w[1]), radius_mm);
            }
        }
    }
    for p in path {
        if like.contains(*p) {
            data[like.linear_index(p.map(|v| v as usize))] = 1;
        }
    }
    like.with_data(IntensityUnit::Binary, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconnectParams {
    pub search_radius_mm: f64,
    /// Largest accepted angle between an endpoint's outward direction and the gap.
    pub max_angle_deg: f64,
    /// Trailing centreline voxels used to fit an endpoint direction.
    pub orientation_window: usize,
    /// Largest accepted mean squared angular deviation (deg²) of the window
    /// points from the fitted line.
    pub max_orientation_variance: f64,
    /// Discarded islands smaller than this are left out of the report.
    pub min_island_voxels: usize,
    /// Repeat passes until nothing more is reconnected.
    pub iterate: bool,
}

impl Default for ReconnectParams {
    fn default() -> Self {
        Self {
            search_radius_mm: 10.0,
            max_angle_deg: 30.0,
            orientation_window: 5,
            max_orientation_variance: 100.0,
            min_island_voxels: 0,
            iterate: false,
        }
    }
}

impl ReconnectParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.search_radius_mm > 0.0 && self.search_radius_mm.is_finite()) {
            return Err(Error::Parameter(format!("search_radius_mm must be positive, got {}", self.search_radius_mm)));
        }
        if !(self.max_angle_deg > 0.0 && self.max_angle_deg <= 90.0) {
            return Err(Error::Parameter(format!("max_angle_deg must be in (0, 90], got {}", self.max_angle_deg)));
        }
        if self.orientation_window < 2 {
            return Err(Error::Parameter("orientation_window must be at least 2".into()));
        }
        if !(self.max_orientation_variance > 0.0) {
            return Err(Error::Parameter(format!(
                "max_orientation_variance must be positive, got {}",
                self.max_orientation_variance
            )));
        }
        Ok(())
    }
}

/// Outward direction of a centreline endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointDirection {
    /// Node id in the centreline graph.
    pub node: usize,
    pub position: Index3,
    /// Unit vector pointing out of the structure; `None` when unfittable.
    pub direction: Option<Vec3>,
    pub variance_deg2: f64,
    /// Largest radius along the fitting window; the tip itself sits next to
    /// the cut face or cap and underestimates the tube.
    pub radius_mm: Option<f64>,
}

impl EndpointDirection {
    fn usable(&self, params: &ReconnectParams) -> Option<Vec3> {
        self.direction.filter(|_| self.variance_deg2 <= params.max_orientation_variance)
    }
}

/// Fits a line to the trailing `orientation_window` voxels of every endpoint.
///
/// The variance is the mean squared angle, in deg², under which each window
/// point's perpendicular offset from the fitted line is seen across the
/// window length.
pub fn endpoint_directions(graph: &CenterlineGraph, radii: Option<&RadiusField>, params: &ReconnectParams) -> Vec<EndpointDirection> {
    let sp = graph.spacing;
    let fit = |node: usize, n: &Node| {
        let mut out = EndpointDirection {
            node,
            position: n.position,
            direction: None,
            variance_deg2: 0.0,
            radius_mm: radii.and_then(|r| r.get(n.position)),
        };
        let Some((_, branch)) = graph.branches_at(node).next() else { return out };
        let path = &branch.voxel_path;
        let mut window: Vec<Index3> = if path.last() == Some(&n.position) {
            path.iter().rev().take(params.orientation_window).copied().collect()
        } else {
            path.iter().take(params.orientation_window).copied().collect()
        };
        window.reverse();
        if window.len() < 2 {
            return out;
        }
        if let Some(r) = radii {
            out.radius_mm = window.iter().filter_map(|&p| r.get(p)).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
        }
        let pts: Vec<Vec3> = window.iter().map(|&p| to_mm(p, sp)).collect();
        let Some(mut dir) = principal_direction(&pts) else { return out };
        let tip = pts[pts.len() - 1];
        if dot(dir, sub(tip, pts[0])) < 0.0 {
            dir = scale(dir, -1.0);
        }
        let along: Vec<f64> = pts.iter().map(|&p| dot(sub(p, pts[0]), dir)).collect();
        let span = along.iter().copied().fold(f64::MIN, f64::max) - along.iter().copied().fold(f64::MAX, f64::min);
        if span <= 0.0 {
            return out;
        }
        let centroid = scale(pts.iter().fold([0.0; 3], |a, &p| add(a, p)), 1.0 / pts.len() as f64);
        let variance = pts
            .iter()
            .map(|&p| {
                let d = sub(p, centroid);
                let perp = norm(sub(d, scale(dir, dot(d, dir))));
                perp.atan2(span).to_degrees().powi(2)
            })
            .sum::<f64>()
            / pts.len() as f64;
        out.direction = Some(dir);
        out.variance_deg2 = variance;
        out
    };
    let endpoints: Vec<(usize, &Node)> = graph.endpoints().collect();
    endpoints.par_iter().map(|&(id, n)| fit(id, n)).collect()
}

/// A foreground component other than the main tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeSegment {
    /// Label in the decomposition's 26-connected labelling.
    pub label: u32,
    /// Linear voxel indices.
    pub voxels: Vec<usize>,
    pub endpoints: Vec<EndpointDirection>,
}

/// Main connected component plus the free segments of a binary mask,
/// sharing one skeleton, centreline graph and radius field.
#[derive(Clone, Debug)]
pub struct AirwayTreeDecomposition {
    pub labels: Labeling,
    pub main_label: u32,
    pub main_endpoints: Vec<EndpointDirection>,
    pub free_segments: Vec<FreeSegment>,
    pub skeleton: Skeleton,
    pub graph: CenterlineGraph,
    pub radii: RadiusField,
}

impl AirwayTreeDecomposition {
    pub fn main_mask(&self, like: &Mask) -> Mask {
        self.labels.component_mask(like, self.main_label)
    }

    pub fn main_voxels(&self) -> usize {
        self.labels.sizes[self.main_label as usize - 1]
    }
}

/// Largest 26-connected component, ties broken towards the component that
/// reaches furthest in the superior direction.
pub fn identify_main_tree(mask: &Mask, params: &ReconnectParams) -> Result<AirwayTreeDecomposition> {
    let labels = connected_components(mask, Connectivity::TwentySix);
    if labels.count() == 0 {
        return Err(Error::EmptyMask("no foreground to refine".into()));
    }
    let (axis, increasing) = mask.affine().superior_axis();
    let mut top = vec![None::<usize>; labels.count()];
    let dims = mask.dims();
    for (idx, &l) in labels.labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let c = coords_of(dims, idx)[axis];
        let slot = &mut top[l as usize - 1];
        *slot = Some(match *slot {
            None => c,
            Some(t) if increasing => t.max(c),
            Some(t) => t.min(c),
        });
    }
    let superior = |l: usize| {
        let t = top[l].unwrap_or(0);
        if increasing { t as i64 } else { -(t as i64) }
    };
    let main = (0..labels.count())
        .max_by(|&a, &b| {
            labels.sizes[a]
                .cmp(&labels.sizes[b])
                .then(superior(a).cmp(&superior(b)))
                .then(b.cmp(&a))
        })
        .unwrap();
    let main_label = main as u32 + 1;

    let skeleton = skeletonize(mask);
    let radii = radius_field(mask, &skeleton)?;
    let graph = build_graph(&skeleton);
    let endpoints = endpoint_directions(&graph, Some(&radii), params);

    let mut free: Vec<FreeSegment> = (1..=labels.count() as u32)
        .filter(|&l| l != main_label)
        .map(|label| FreeSegment {
            label,
            voxels: Vec::new(),
            endpoints: Vec::new(),
        })
        .collect();
    let slot = |l: u32| if l < main_label { l as usize - 1 } else { l as usize - 2 };
    for (idx, &l) in labels.labels.iter().enumerate() {
        if l != 0 && l != main_label {
            free[slot(l)].voxels.push(idx);
        }
    }
    let mut main_endpoints = Vec::new();
    for e in endpoints {
        match labels.label_at(e.position) {
            l if l == main_label => main_endpoints.push(e),
            0 => {}
            l => free[slot(l)].endpoints.push(e),
        }
    }
    Ok(AirwayTreeDecomposition {
        labels,
        main_label,
        main_endpoints,
        free_segments: free,
        skeleton,
        graph,
        radii,
    })
}

/// An accepted bridge between a main-tree endpoint and a free-segment endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentMatch {
    /// Index into `main_endpoints`.
    pub main_endpoint: usize,
    /// Index into `free_segments`.
    pub segment: usize,
    /// Index into that segment's `endpoints`.
    pub free_endpoint: usize,
    pub gap_mm: f64,
    /// Larger of the two endpoint-to-gap angles.
    pub angle_deg: f64,
    /// Straight 26-connected voxel line from the main endpoint to the free one.
    pub path: Vec<[i64; 3]>,
}

/// Accepts pairs whose gap is within the search radius, whose outward
/// directions both point along the gap within `max_angle_deg`, and whose
/// fits are not too noisy. Pairs are taken greedily by gap, then angle, then
/// index; every free segment is connected at most once.
pub fn match_segments(
    main_endpoints: &[EndpointDirection],
    free_segments: &[FreeSegment],
    spacing: [f64; 3],
    params: &ReconnectParams,
) -> Vec<SegmentMatch> {
    let mut candidates: Vec<(f64, f64, usize, usize, usize)> = Vec::new();
    for (mi, m) in main_endpoints.iter().enumerate() {
        let Some(md) = m.usable(params) else { continue };
        let mp = to_mm(m.position, spacing);
        for (si, seg) in free_segments.iter().enumerate() {
            for (fi, f) in seg.endpoints.iter().enumerate() {
                let Some(fd) = f.usable(params) else { continue };
                let gap = sub(to_mm(f.position, spacing), mp);
                let gap_mm = norm(gap);
                if gap_mm > params.search_radius_mm || gap_mm == 0.0 {
                    continue;
                }
                let (Some(a), Some(b)) = (angle_deg(md, gap), angle_deg(fd, scale(gap, -1.0))) else { continue };
                if a <= params.max_angle_deg && b <= params.max_angle_deg {
                    candidates.push((gap_mm, a.max(b), mi, si, fi));
                }
            }
        }
    }
    candidates.sort_by(|x, y| {
        x.0.total_cmp(&y.0)
            .then(x.1.total_cmp(&y.1))
            .then((x.2, x.3, x.4).cmp(&(y.2, y.3, y.4)))
    });
    let mut taken = vec![false; free_segments.len()];
    let mut out = Vec::new();
    for (gap_mm, angle, mi, si, fi) in candidates {
        if taken[si] {
            continue;
        }
        taken[si] = true;
        let a = main_endpoints[mi].position.map(|v| v as i64);
        let b = free_segments[si].endpoints[fi].position.map(|v| v as i64);
        out.push(SegmentMatch {
            main_endpoint: mi,
            segment: si,
            free_endpoint: fi,
            gap_mm,
            angle_deg: angle,
            path: digital_line(a, b),
        });
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconnection {
    pub gap_mm: f64,
    pub angle_deg: f64,
    pub tube_radius_mm: f64,
    pub added_voxels: usize,
    pub main_endpoint: Index3,
    pub free_endpoint: Index3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscardedIsland {
    pub voxels: usize,
    /// World coordinates (mm).
    pub centroid: Vec3,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub reconnected: Vec<Reconnection>,
    pub discarded: Vec<DiscardedIsland>,
}

impl RefineReport {
    pub fn is_empty(&self) -> bool {
        self.reconnected.is_empty() && self.discarded.is_empty()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

#[derive(Clone, Debug)]
pub struct Refined {
    pub mask: Mask,
    pub report: RefineReport,
}

/// One reconnection sweep; returns the bridged mask and the main-tree seed voxel.
fn reconnect_pass(mask: &Mask, params: &ReconnectParams, report: &mut RefineReport) -> Result<(Mask, usize, usize)> {
    let decomp = identify_main_tree(mask, params)?;
    let seed = decomp
        .labels
        .labels
        .iter()
        .position(|&l| l == decomp.main_label)
        .expect("main label has voxels");
    let matches = match_segments(&decomp.main_endpoints, &decomp.free_segments, mask.spacing(), params);
    if matches.is_empty() {
        return Ok((mask.clone(), seed, 0));
    }
    let voxel = mask.spacing().iter().copied().fold(0.0, f64::max);
    let mut data = mask.data().to_vec();
    for m in &matches {
        let me = &decomp.main_endpoints[m.main_endpoint];
        let fe = &decomp.free_segments[m.segment].endpoints[m.free_endpoint];
        let r = match (me.radius_mm, fe.radius_mm) {
            (Some(a), Some(b)) => 0.5 * (a + b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => voxel,
        }
        .max(voxel);
        let tube = rasterize_tube(&m.path, r, mask)?;
        let mut added = 0;
        for (d, &t) in data.iter_mut().zip(tube.data()) {
            if t != 0 && *d == 0 {
                *d = 1;
                added += 1;
            }
        }
        report.reconnected.push(Reconnection {
            gap_mm: m.gap_mm,
            angle_deg: m.angle_deg,
            tube_radius_mm: r,
            added_voxels: added,
            main_endpoint: me.position,
            free_endpoint: fe.position,
        });
    }
    Ok((mask.with_data(IntensityUnit::Binary, data)?, seed, matches.len()))
}

/// Reconnects free segments to the main tree and discards everything that
/// is still detached. The result is a single 26-connected component that
/// contains the whole original main component.
pub fn refine(mask: &Mask, params: &ReconnectParams) -> Result<Refined> {
    params.validate()?;
    if mask.unit() != IntensityUnit::Binary {
        return Err(Error::Parameter("refine expects a binary mask".into()));
    }
    let mut report = RefineReport::default();
    let (mut current, seed, mut n) = reconnect_pass(mask, params, &mut report)?;
    while params.iterate && n > 0 {
        let (next, _, m) = reconnect_pass(&current, params, &mut report)?;
        current = next;
        n = m;
    }

    let labels = connected_components(&current, Connectivity::TwentySix);
    let keep = labels.labels[seed];
    let mut data = current.into_data();
    let mut sums = vec![([0.0f64; 3], 0usize); labels.count()];
    for (idx, &l) in labels.labels.iter().enumerate() {
        if l != 0 && l != keep {
            data[idx] = 0;
            let c = coords_of(mask.dims(), idx);
            let s = &mut sums[l as usize - 1];
            s.0 = add(s.0, c.map(|v| v as f64));
            s.1 += 1;
        }
    }
    for (sum, count) in sums {
        if count == 0 || count < params.min_island_voxels {
            continue;
        }
        let centroid = mask.affine().apply(scale(sum, 1.0 / count as f64));
        report.discarded.push(DiscardedIsland { voxels: count, centroid });
    }
    Ok(Refined {
        mask: mask.with_data(IntensityUnit::Binary, data)?,
        report,
    })
}
