//! Skeletons, centerline graphs, radius estimation and connected components.

mod components;
mod edt;
mod graph;
pub(crate) mod neighborhood;
mod thinning;

use serde::{Deserialize, Serialize};

use crate::volume::{coords_of, Index3, Mask};

pub use components::{connected_components, Connectivity, Labeling};
pub use edt::{radius_field, squared_edt, RadiusField};
pub use graph::{build_graph, build_graph_with, Branch, CenterlineGraph, GraphParams, Node, NodeKind};
pub use thinning::{is_simple_point, skeletonize};

/// Unit-thick centerline voxels of a binary mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    /// Linear voxel indices, sorted ascending.
    indices: Vec<usize>,
    source_dims: Index3,
    spacing: [f64; 3],
}

impl Skeleton {
    pub fn from_indices(mut indices: Vec<usize>, source_dims: Index3, spacing: [f64; 3]) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self {
            indices,
            source_dims,
            spacing,
        }
    }

    pub fn from_mask(mask: &Mask) -> Self {
        Self::from_indices(mask.foreground_indices(), mask.dims(), mask.spacing())
    }

    pub fn source_dims(&self) -> Index3 {
        self.source_dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn voxels(&self) -> impl Iterator<Item = Index3> + '_ {
        self.indices.iter().map(|&i| coords_of(self.source_dims, i))
    }

    pub fn linear_index(&self, [i, j, k]: Index3) -> usize {
        i + self.source_dims[0] * (j + self.source_dims[1] * k)
    }

    pub fn contains(&self, p: Index3) -> bool {
        (0..3).all(|a| p[a] < self.source_dims[a]) && self.indices.binary_search(&self.linear_index(p)).is_ok()
    }

    /// Skeleton as a binary mask with the geometry of `like`.
    pub fn to_mask(&self, like: &Mask) -> Mask {
        let mut data = vec![0u8; like.len()];
        for &i in &self.indices {
            data[i] = 1;
        }
        Mask::from_bits(like, data).expect("skeleton dims match source mask")
    }
}
