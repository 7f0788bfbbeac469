//! Deterministic synthetic airway trees with exact ground-truth metadata.
//!
//! The root tube starts near the top of the grid and runs towards `-z`. Each
//! branch bifurcates into two children that leave its end at
//! `±branch_angle_deg`; the bifurcation plane turns by 90° every generation.
//! Branch ids are assigned breadth-first, so the root is 0 and the children
//! of branch `b` are `2b + 1` and `2b + 2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{add, cross, digital_line, dot, normalize, scale, segment_distance_sq, sub, to_mm, Vec3};
use crate::postprocess::paint_capsule;
use crate::topology::{connected_components, Connectivity};
use crate::volume::{Index3, IntensityUnit, Mask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthTreeSpec {
    pub seed: u64,
    pub depth: u32,
    pub root_length_mm: f64,
    pub root_radius_mm: f64,
    pub length_decay: f64,
    pub radius_decay: f64,
    pub branch_angle_deg: f64,
    /// Relative perturbation of branch angles and azimuths; 0 disables.
    pub jitter: f64,
    pub spacing: [f64; 3],
    pub dims: Index3,
}

impl Default for SynthTreeSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            depth: 2,
            root_length_mm: 30.0,
            root_radius_mm: 4.0,
            length_decay: 0.7,
            radius_decay: 0.75,
            branch_angle_deg: 35.0,
            jitter: 0.0,
            spacing: [1.0; 3],
            dims: [96, 96, 96],
        }
    }
}

impl SynthTreeSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.root_length_mm) || !positive(self.root_radius_mm) {
            return Err(Error::Spec("root length and radius must be positive".into()));
        }
        for (name, v) in [("length_decay", self.length_decay), ("radius_decay", self.radius_decay)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Spec(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        if !(self.branch_angle_deg > 0.0 && self.branch_angle_deg < 90.0) {
            return Err(Error::Spec(format!("branch_angle_deg must be in (0, 90), got {}", self.branch_angle_deg)));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::Spec(format!("jitter must be in [0, 1), got {}", self.jitter)));
        }
        if self.spacing.iter().any(|&s| !positive(s)) || self.dims.contains(&0) {
            return Err(Error::Spec("spacing and dims must be positive".into()));
        }
        if self.depth > 16 {
            return Err(Error::Spec(format!("depth {} is too large", self.depth)));
        }
        let voxel = self.spacing.iter().copied().fold(0.0, f64::max);
        let leaf_radius = self.root_radius_mm * self.radius_decay.powi(self.depth as i32);
        if leaf_radius < voxel {
            return Err(Error::Spec(format!(
                "radius at generation {} is {leaf_radius:.3} mm, below one voxel ({voxel} mm)",
                self.depth
            )));
        }
        Ok(())
    }

    pub fn branch_count(&self) -> usize {
        (1usize << (self.depth + 1)) - 1
    }

    /// Closed-form total centreline length over all generations.
    pub fn total_length_mm(&self) -> f64 {
        (0..=self.depth)
            .map(|g| self.root_length_mm * 2f64.powi(g as i32) * self.length_decay.powi(g as i32))
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthBranch {
    pub id: usize,
    pub parent: Option<usize>,
    pub generation: u32,
    pub start_mm: Vec3,
    pub end_mm: Vec3,
    pub radius_mm: f64,
    pub length_mm: f64,
    /// Digital line between the voxels nearest the analytic end points.
    pub centerline: Vec<Index3>,
}

impl SynthBranch {
    pub fn direction(&self) -> Vec3 {
        normalize(sub(self.end_mm, self.start_mm)).unwrap_or([0.0, 0.0, -1.0])
    }
}

#[derive(Clone, Debug)]
pub struct SynthTreeTruth {
    pub spec: SynthTreeSpec,
    pub mask: Mask,
    pub branches: Vec<SynthBranch>,
    pub total_length_mm: f64,
    pub branch_count: usize,
}

#[derive(Serialize)]
struct TruthMetadata<'a> {
    spec: &'a SynthTreeSpec,
    branch_count: usize,
    total_length_mm: f64,
    foreground_voxels: usize,
    branches: &'a [SynthBranch],
}

impl SynthTreeTruth {
    pub fn children(&self, id: usize) -> impl Iterator<Item = &SynthBranch> {
        self.branches.iter().filter(move |b| b.parent == Some(id))
    }

    /// `id` and all of its descendants.
    pub fn subtree(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut i = 0;
        while i < out.len() {
            let cur = out[i];
            out.extend(self.children(cur).map(|b| b.id));
            i += 1;
        }
        out
    }

    pub fn leaves(&self) -> impl Iterator<Item = &SynthBranch> {
        self.branches.iter().filter(|b| b.generation == self.spec.depth)
    }

    pub fn metadata_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(&TruthMetadata {
            spec: &self.spec,
            branch_count: self.branch_count,
            total_length_mm: self.total_length_mm,
            foreground_voxels: self.mask.foreground_count(),
            branches: &self.branches,
        })
    }
}

fn rotate(v: Vec3, axis: Vec3, angle: f64) -> Vec3 {
    // Rodrigues, axis assumed unit length
    let (s, c) = angle.sin_cos();
    add(add(scale(v, c), scale(cross(axis, v), s)), scale(axis, dot(axis, v) * (1.0 - c)))
}

fn nearest_voxel(p: Vec3, spacing: [f64; 3]) -> [i64; 3] {
    [0, 1, 2].map(|a| (p[a] / spacing[a]).round() as i64)
}

pub fn generate(spec: &SynthTreeSpec) -> Result<SynthTreeTruth> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut jitter = |v: f64| {
        if spec.jitter > 0.0 {
            v * (1.0 + rng.gen_range(-spec.jitter..=spec.jitter))
        } else {
            v
        }
    };

    let sp = spec.spacing;
    let extent = [0, 1, 2].map(|a| (spec.dims[a] - 1) as f64 * sp[a]);
    // Root axis on voxel centres: a tube split evenly across a voxel boundary
    // has no unique digital centreline.
    let centre = |a: usize| (spec.dims[a] / 2) as f64 * sp[a];
    let top = ((extent[2] - spec.root_radius_mm) / sp[2]).floor() * sp[2] - sp[2];
    let root_start = [centre(0), centre(1), top];
    let root_dir = [0.0, 0.0, -1.0];

    // (direction, in-plane reference perpendicular to it)
    let mut frames: Vec<(Vec3, Vec3)> = vec![(root_dir, [1.0, 0.0, 0.0])];
    let mut branches = vec![SynthBranch {
        id: 0,
        parent: None,
        generation: 0,
        start_mm: root_start,
        end_mm: add(root_start, scale(root_dir, spec.root_length_mm)),
        radius_mm: spec.root_radius_mm,
        length_mm: spec.root_length_mm,
        centerline: Vec::new(),
    }];
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut id = 0;
    while id < branches.len() {
        let parent = branches[id].clone();
        if parent.generation < spec.depth {
            let (d, u) = frames[id];
            let azimuth = if parent.generation == 0 { 0.0 } else { jitter(half_pi) };
            let w = rotate(u, d, azimuth);
            let g = parent.generation + 1;
            let length = spec.root_length_mm * spec.length_decay.powi(g as i32);
            let radius = spec.root_radius_mm * spec.radius_decay.powi(g as i32);
            for sign in [1.0, -1.0] {
                let theta = jitter(spec.branch_angle_deg).to_radians();
                let dir = normalize(add(scale(d, theta.cos()), scale(w, sign * theta.sin()))).unwrap_or(d);
                let reference = normalize(sub(w, scale(dir, dot(w, dir)))).unwrap_or(w);
                frames.push((dir, reference));
                branches.push(SynthBranch {
                    id: branches.len(),
                    parent: Some(id),
                    generation: g,
                    start_mm: parent.end_mm,
                    end_mm: add(parent.end_mm, scale(dir, length)),
                    radius_mm: radius,
                    length_mm: length,
                    centerline: Vec::new(),
                });
            }
        }
        id += 1;
    }

    for b in &branches {
        for p in [b.start_mm, b.end_mm] {
            for a in 0..3 {
                if p[a] - b.radius_mm < 0.0 || p[a] + b.radius_mm > extent[a] {
                    return Err(Error::Spec(format!(
                        "branch {} (generation {}) leaves the {:?} grid",
                        b.id, b.generation, spec.dims
                    )));
                }
            }
        }
    }

    let mut data = vec![0u8; spec.dims.iter().product()];
    for b in &branches {
        paint_capsule(&mut data, spec.dims, sp, b.start_mm, b.end_mm, b.radius_mm);
    }
    let mask = Mask::from_data(spec.dims, sp, IntensityUnit::Binary, data)?;

    for b in &mut branches {
        let line = digital_line(nearest_voxel(b.start_mm, sp), nearest_voxel(b.end_mm, sp));
        b.centerline = line.into_iter().map(|p| p.map(|v| v as usize)).collect();
        if let Some(p) = b.centerline.iter().find(|&&p| mask.get(p) != Some(1)) {
            return Err(Error::Spec(format!("centreline voxel {p:?} of branch {} falls outside the tube", b.id)));
        }
    }

    Ok(SynthTreeTruth {
        total_length_mm: branches.iter().map(|b| b.length_mm).sum(),
        branch_count: branches.len(),
        spec: spec.clone(),
        mask,
        branches,
    })
}

#[derive(Clone, Debug)]
pub struct CutResult {
    pub mask: Mask,
    /// Foreground voxels still connected to the root.
    pub rooted: Vec<usize>,
    /// Foreground voxels of the severed part.
    pub free: Vec<usize>,
    pub removed_voxels: usize,
}

/// Removes the slab of `branch_id`'s tube whose axial position lies strictly
/// within `gap_mm / 2` of the branch midpoint.
pub fn cut_branch(truth: &SynthTreeTruth, branch_id: usize, gap_mm: f64) -> Result<CutResult> {
    let b = truth
        .branches
        .get(branch_id)
        .ok_or_else(|| Error::Parameter(format!("no branch {branch_id}")))?;
    if !(gap_mm >= 0.0) || gap_mm >= b.length_mm {
        return Err(Error::Parameter(format!(
            "gap {gap_mm} mm must be non-negative and shorter than the branch ({} mm)",
            b.length_mm
        )));
    }
    let mask = &truth.mask;
    let sp = mask.spacing();
    let mut data = mask.data().to_vec();
    let mut removed = 0;
    if gap_mm > 0.0 {
        let dir = b.direction();
        let mid = b.length_mm / 2.0;
        let r2 = b.radius_mm * b.radius_mm * (1.0 + 1e-9);
        for idx in mask.foreground_indices() {
            let p = to_mm(mask.coords(idx), sp);
            let t = dot(sub(p, b.start_mm), dir);
            if (t - mid).abs() < gap_mm / 2.0 && segment_distance_sq(p, b.start_mm, b.end_mm) <= r2 {
                data[idx] = 0;
                removed += 1;
            }
        }
    }
    let cut = mask.with_data(IntensityUnit::Binary, data)?;
    let labels = connected_components(&cut, Connectivity::TwentySix);
    let expected = if gap_mm > 0.0 { 2 } else { 1 };
    if labels.count() != expected {
        return Err(Error::Parameter(format!(
            "cutting branch {branch_id} with a {gap_mm} mm gap leaves {} components",
            labels.count()
        )));
    }
    let root_voxel = truth.branches[0].centerline[0];
    let root_label = labels.label_at(root_voxel);
    let (rooted, free) = cut.foreground_indices().into_iter().partition(|&i| labels.labels[i] == root_label);
    Ok(CutResult {
        mask: cut,
        rooted,
        free,
        removed_voxels: removed,
    })
}

#[derive(Clone, Debug)]
pub struct NoiseBlob {
    pub mask: Mask,
    pub voxels: usize,
}

/// Adds a ball of `radius_mm` at `center_mm`. The ball must not touch
/// existing foreground, including diagonally.
pub fn add_noise_blob(mask: &Mask, center_mm: Vec3, radius_mm: f64) -> Result<NoiseBlob> {
    add_capsule_island(mask, center_mm, center_mm, radius_mm)
}

/// Adds a capsule from `a_mm` to `b_mm`. The capsule must not touch existing
/// foreground, including diagonally.
pub fn add_capsule_island(mask: &Mask, a_mm: Vec3, b_mm: Vec3, radius_mm: f64) -> Result<NoiseBlob> {
    if !(radius_mm > 0.0) {
        return Err(Error::Parameter(format!("island radius must be positive, got {radius_mm}")));
    }
    let mut island = vec![0u8; mask.len()];
    let voxels = paint_capsule(&mut island, mask.dims(), mask.spacing(), a_mm, b_mm, radius_mm);
    if voxels == 0 {
        return Err(Error::Parameter(format!("island at {a_mm:?} has no voxel inside the grid")));
    }
    let mut data = mask.data().to_vec();
    for (idx, _) in island.iter().enumerate().filter(|(_, &v)| v != 0) {
        let [i, j, k] = mask.coords(idx);
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let q = [i as i64 + dx, j as i64 + dy, k as i64 + dz];
                    if mask.contains(q) && mask.data()[mask.linear_index(q.map(|v| v as usize))] != 0 {
                        return Err(Error::Parameter(format!("island at {a_mm:?} touches the existing foreground")));
                    }
                }
            }
        }
        data[idx] = 1;
    }
    Ok(NoiseBlob {
        mask: mask.with_data(IntensityUnit::Binary, data)?,
        voxels,
    })
}

/// Fixture families built on the generator.
pub mod fixtures {
    use super::*;

    /// Gap used for the collinear cut family.
    pub const CUT_GAP_MM: f64 = 7.0;

    /// Slender depth-2 tree used by the cut and fragment families.
    pub fn slender_spec(seed: u64) -> SynthTreeSpec {
        SynthTreeSpec {
            seed,
            depth: 2,
            root_length_mm: 40.0,
            root_radius_mm: 3.0,
            length_decay: 0.75,
            radius_decay: 0.8,
            jitter: 0.2,
            dims: [96, 96, 112],
            ..Default::default()
        }
    }

    #[derive(Clone, Debug)]
    pub struct CutFixture {
        pub truth: SynthTreeTruth,
        pub branch_id: usize,
        pub gap_mm: f64,
        pub cut: CutResult,
    }

    /// Every leaf of `slender_spec(seed)` cut mid-branch by `CUT_GAP_MM`.
    pub fn leaf_cuts(seed: u64) -> Result<Vec<CutFixture>> {
        let truth = generate(&slender_spec(seed))?;
        let leaves: Vec<usize> = truth.leaves().map(|b| b.id).collect();
        leaves
            .into_iter()
            .map(|id| {
                Ok(CutFixture {
                    cut: cut_branch(&truth, id, CUT_GAP_MM)?,
                    truth: truth.clone(),
                    branch_id: id,
                    gap_mm: CUT_GAP_MM,
                })
            })
            .collect()
    }

    /// A short tube placed beyond the tip of `leaf_id`, centred on its axis
    /// but running perpendicular to it.
    pub fn perpendicular_fragment(truth: &SynthTreeTruth, leaf_id: usize) -> Result<NoiseBlob> {
        let b = truth
            .branches
            .get(leaf_id)
            .ok_or_else(|| Error::Parameter(format!("no branch {leaf_id}")))?;
        let d = b.direction();
        let helper = if d[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let u = normalize(cross(d, helper)).ok_or_else(|| Error::Parameter("degenerate branch direction".into()))?;
        let radius = 1.5;
        let centre = add(b.end_mm, scale(d, b.radius_mm + 5.0));
        let (a, e) = (add(centre, scale(u, -4.0)), add(centre, scale(u, 4.0)));
        let sp = truth.mask.spacing();
        let dims = truth.mask.dims();
        let fits = [a, e].iter().all(|p| (0..3).all(|k| p[k] - radius >= 0.0 && p[k] + radius <= (dims[k] - 1) as f64 * sp[k]));
        if !fits {
            return Err(Error::Parameter(format!("fragment beyond leaf {leaf_id} leaves the grid")));
        }
        add_capsule_island(&truth.mask, a, e, radius)
    }
}
