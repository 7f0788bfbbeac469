//! Dense voxel grids with physical geometry, plus NIfTI-1 I/O.
//!
//! Samples are stored x-fastest: the linear index of `(i, j, k)` is
//! `i + nx * (j + ny * k)`, matching the on-disk NIfTI layout.

mod nifti;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use nifti::{read_mask, read_nifti, write_nifti, NiftiDatatype};

pub type Index3 = [usize; 3];

/// Largest tolerated disagreement between `spacing` and the affine column norms.
pub const SPACING_TOLERANCE_MM: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityUnit {
    Hu,
    Probability,
    Binary,
}

impl IntensityUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            IntensityUnit::Hu => "hu",
            IntensityUnit::Probability => "probability",
            IntensityUnit::Binary => "binary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hu" => Some(IntensityUnit::Hu),
            "probability" => Some(IntensityUnit::Probability),
            "binary" => Some(IntensityUnit::Binary),
            _ => None,
        }
    }
}

/// Element types a grid can carry.
pub trait Sample: Copy + Send + Sync + PartialOrd + Default + std::fmt::Debug + 'static {
    fn to_f32(self) -> f32;
    fn from_f32(v: f32) -> Self;
}

impl Sample for u8 {
    fn to_f32(self) -> f32 {
        self as f32
    }
    fn from_f32(v: f32) -> Self {
        v.round().clamp(0.0, 255.0) as u8
    }
}

impl Sample for f32 {
    fn to_f32(self) -> f32 {
        self
    }
    fn from_f32(v: f32) -> Self {
        v
    }
}

/// Voxel-index to world-millimetre transform, row-major 4×4.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine(pub [[f64; 4]; 4]);

impl Affine {
    pub fn identity() -> Self {
        Self::from_spacing([1.0; 3])
    }

    pub fn from_spacing(spacing: [f64; 3]) -> Self {
        let mut m = [[0.0; 4]; 4];
        for (a, s) in spacing.iter().enumerate() {
            m[a][a] = *s;
        }
        m[3][3] = 1.0;
        Affine(m)
    }

    pub fn with_translation(mut self, t: [f64; 3]) -> Self {
        for (r, v) in t.iter().enumerate() {
            self.0[r][3] = *v;
        }
        self
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            *o = m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3];
        }
        out
    }

    pub fn column_norms(&self) -> [f64; 3] {
        let m = &self.0;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = (m[0][c] * m[0][c] + m[1][c] * m[1][c] + m[2][c] * m[2][c]).sqrt();
        }
        out
    }

    /// Affine of a sub-grid whose voxel `(0,0,0)` is voxel `offset` here.
    pub fn shifted(&self, offset: [f64; 3]) -> Self {
        let origin = self.apply(offset);
        let mut m = *self;
        for (r, v) in origin.iter().enumerate() {
            m.0[r][3] = *v;
        }
        m
    }

    /// Scales each index axis, keeping the world position of voxel `(0,0,0)`.
    pub fn scale_axes(&self, factors: [f64; 3]) -> Self {
        let mut m = *self;
        for (c, f) in factors.iter().enumerate() {
            for r in 0..3 {
                m.0[r][c] *= f;
            }
        }
        m
    }

    /// Index axis pointing most along world z, and whether increasing the
    /// index moves superior (+z in RAS+ world coordinates).
    pub fn superior_axis(&self) -> (usize, bool) {
        let m = &self.0;
        let axis = (0..3)
            .max_by(|&a, &b| m[2][a].abs().total_cmp(&m[2][b].abs()).then(b.cmp(&a)))
            .unwrap_or(2);
        (axis, m[2][axis] >= 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid<T> {
    dims: Index3,
    spacing: [f64; 3],
    affine: Affine,
    unit: IntensityUnit,
    data: Vec<T>,
}

pub type Mask = VoxelGrid<u8>;
pub type Volume = VoxelGrid<f32>;

impl<T: Sample> VoxelGrid<T> {
    /// Builds a grid, checking every invariant of the carrier type.
    pub fn new(
        dims: Index3,
        spacing: [f64; 3],
        affine: Affine,
        unit: IntensityUnit,
        data: Vec<T>,
    ) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidGrid(format!("dims must be positive, got {dims:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::InvalidGrid(format!(
                "{} samples for dims {dims:?} (expected {n})",
                data.len()
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {spacing:?}")));
        }
        let norms = affine.column_norms();
        for a in 0..3 {
            if (norms[a] - spacing[a]).abs() > SPACING_TOLERANCE_MM {
                return Err(Error::InvalidGrid(format!(
                    "spacing {spacing:?} disagrees with affine column norms {norms:?}"
                )));
            }
        }
        validate_values(unit, &data)?;
        Ok(Self {
            dims,
            spacing,
            affine,
            unit,
            data,
        })
    }

    /// Grid with a diagonal affine built from `spacing`.
    pub fn from_data(dims: Index3, spacing: [f64; 3], unit: IntensityUnit, data: Vec<T>) -> Result<Self> {
        Self::new(dims, spacing, Affine::from_spacing(spacing), unit, data)
    }

    pub fn filled(dims: Index3, spacing: [f64; 3], unit: IntensityUnit, value: T) -> Result<Self> {
        let n = dims.iter().product();
        Self::from_data(dims, spacing, unit, vec![value; n])
    }

    /// New grid with this grid's geometry and the given samples.
    pub fn with_data<U: Sample>(&self, unit: IntensityUnit, data: Vec<U>) -> Result<VoxelGrid<U>> {
        VoxelGrid::new(self.dims, self.spacing, self.affine, unit, data)
    }

    pub fn dims(&self) -> Index3 {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &Affine {
        &self.affine
    }

    pub fn unit(&self) -> IntensityUnit {
        self.unit
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn linear_index(&self, [i, j, k]: Index3) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> Index3 {
        coords_of(self.dims, idx)
    }

    pub fn contains(&self, index: [i64; 3]) -> bool {
        (0..3).all(|a| index[a] >= 0 && (index[a] as usize) < self.dims[a])
    }

    pub fn get(&self, index: Index3) -> Option<T> {
        if (0..3).all(|a| index[a] < self.dims[a]) {
            Some(self.data[self.linear_index(index)])
        } else {
            None
        }
    }

    /// World position (mm) of a voxel centre.
    pub fn world_of(&self, index: Index3) -> Result<[f64; 3]> {
        if !(0..3).all(|a| index[a] < self.dims[a]) {
            return Err(Error::Bounds {
                index: index.map(|v| v as i64),
                dims: self.dims,
            });
        }
        Ok(self.affine.apply(index.map(|v| v as f64)))
    }

    pub fn same_shape<U>(&self, other: &VoxelGrid<U>) -> bool {
        self.dims == other.dims
            && (0..3).all(|a| (self.spacing[a] - other.spacing[a]).abs() <= SPACING_TOLERANCE_MM)
    }

    pub fn ensure_same_shape<U>(&self, other: &VoxelGrid<U>, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: dims {:?} spacing {:?} vs dims {:?} spacing {:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }

    /// Same samples under a different unit tag, re-validated.
    pub fn retag(self, unit: IntensityUnit) -> Result<Self> {
        validate_values(unit, &self.data)?;
        Ok(Self { unit, ..self })
    }

    pub fn to_volume(&self) -> Volume {
        VoxelGrid {
            dims: self.dims,
            spacing: self.spacing,
            affine: self.affine,
            unit: self.unit,
            data: self.data.iter().map(|v| v.to_f32()).collect(),
        }
    }

    /// Binary view of the grid; fails if any sample is outside {0, 1}.
    pub fn to_mask(&self) -> Result<Mask> {
        let mut data = Vec::with_capacity(self.data.len());
        for v in &self.data {
            let f = v.to_f32();
            if f == 0.0 {
                data.push(0);
            } else if f == 1.0 {
                data.push(1);
            } else {
                return Err(Error::InvalidGrid(format!("binary grid contains value {f}")));
            }
        }
        Ok(VoxelGrid {
            dims: self.dims,
            spacing: self.spacing,
            affine: self.affine,
            unit: IntensityUnit::Binary,
            data,
        })
    }
}

impl Mask {
    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Mask built from a predicate over voxel indices, geometry copied from `like`.
    pub fn from_fn<U>(like: &VoxelGrid<U>, mut f: impl FnMut(Index3) -> bool) -> Mask {
        let dims = like.dims;
        let mut data = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f([i, j, k]) as u8);
                }
            }
        }
        VoxelGrid {
            dims,
            spacing: like.spacing,
            affine: like.affine,
            unit: IntensityUnit::Binary,
            data,
        }
    }

    /// Binary mask from a raw 0/1 buffer, geometry copied from `like`.
    pub fn from_bits<U>(like: &VoxelGrid<U>, data: Vec<u8>) -> Result<Mask> {
        VoxelGrid::new(like.dims, like.spacing, like.affine, IntensityUnit::Binary, data)
    }

    /// Indices of all foreground voxels in scan order.
    pub fn foreground_indices(&self) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| (v != 0).then_some(i))
            .collect()
    }
}

#[inline]
pub fn coords_of(dims: Index3, idx: usize) -> Index3 {
    let i = idx % dims[0];
    let r = idx / dims[0];
    [i, r % dims[1], r / dims[1]]
}

fn validate_values<T: Sample>(unit: IntensityUnit, data: &[T]) -> Result<()> {
    match unit {
        IntensityUnit::Binary => {
            if let Some(v) = data.iter().map(|v| v.to_f32()).find(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidGrid(format!("binary grid contains value {v}")));
            }
        }
        IntensityUnit::Probability => {
            if let Some(v) = data
                .iter()
                .map(|v| v.to_f32())
                .find(|v| !(0.0..=1.0).contains(v))
            {
                return Err(Error::InvalidGrid(format!("probability grid contains value {v}")));
            }
        }
        IntensityUnit::Hu => {}
    }
    Ok(())
}

/// Inclusive voxel-index box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Index3,
    pub max: Index3,
}

impl BoundingBox {
    pub fn new(min: Index3, max: Index3) -> Result<Self> {
        if (0..3).any(|a| min[a] > max[a]) {
            return Err(Error::Parameter(format!("bounding box min {min:?} > max {max:?}")));
        }
        Ok(Self { min, max })
    }

    pub fn full(dims: Index3) -> Self {
        Self {
            min: [0; 3],
            max: dims.map(|d| d - 1),
        }
    }

    pub fn extent(&self) -> Index3 {
        [0, 1, 2].map(|a| self.max[a] - self.min[a] + 1)
    }

    pub fn fits(&self, dims: Index3) -> bool {
        (0..3).all(|a| self.min[a] <= self.max[a] && self.max[a] < dims[a])
    }

    pub fn contains(&self, p: Index3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Tightest box around the foreground of `mask`, if any.
    pub fn of_foreground(mask: &Mask) -> Option<Self> {
        let dims = mask.dims();
        let mut min = dims;
        let mut max = [0usize; 3];
        let mut any = false;
        for (idx, &v) in mask.data().iter().enumerate() {
            if v != 0 {
                let c = coords_of(dims, idx);
                for a in 0..3 {
                    min[a] = min[a].min(c[a]);
                    max[a] = max[a].max(c[a]);
                }
                any = true;
            }
        }
        any.then_some(Self { min, max })
    }
}
