use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::neighborhood::{NEIGHBORS_26, NEIGHBORS_6};
use crate::volume::{coords_of, Index3, Mask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Six,
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> &'static [[i64; 3]] {
        match self {
            Connectivity::Six => &NEIGHBORS_6,
            Connectivity::TwentySix => &NEIGHBORS_26,
        }
    }
}

/// Dense component labels: 0 is background, components are `1..=count`
/// numbered in scan order of their first voxel.
#[derive(Clone, Debug)]
pub struct Labeling {
    pub dims: Index3,
    pub labels: Vec<u32>,
    /// `sizes[l - 1]` is the voxel count of label `l`.
    pub sizes: Vec<usize>,
}

impl Labeling {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn label_at(&self, [i, j, k]: Index3) -> u32 {
        self.labels[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    /// Binary mask of one label, with the geometry of `like`.
    pub fn component_mask(&self, like: &Mask, label: u32) -> Mask {
        let data = self.labels.iter().map(|&l| (l == label) as u8).collect();
        Mask::from_bits(like, data).expect("labeling dims match mask")
    }
}

pub fn connected_components(mask: &Mask, connectivity: Connectivity) -> Labeling {
    let dims = mask.dims();
    let data = mask.data();
    let mut labels = vec![0u32; data.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    let offsets = connectivity.offsets();
    let (nx, nxy) = (dims[0] as i64, (dims[0] * dims[1]) as i64);

    for seed in 0..data.len() {
        if data[seed] == 0 || labels[seed] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[seed] = label;
        queue.push_back(seed);
        let mut size = 0;
        while let Some(v) = queue.pop_front() {
            size += 1;
            let c = coords_of(dims, v);
            for o in offsets {
                let q = [c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]];
                if q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= dims[0] as i64 || q[1] >= dims[1] as i64 || q[2] >= dims[2] as i64 {
                    continue;
                }
                let w = (q[0] + nx * q[1] + nxy * q[2]) as usize;
                if data[w] != 0 && labels[w] == 0 {
                    labels[w] = label;
                    queue.push_back(w);
                }
            }
        }
        sizes.push(size);
    }
    Labeling { dims, labels, sizes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::IntensityUnit;

    fn blank(n: usize) -> Mask {
        Mask::filled([n, n, n], [1.0; 3], IntensityUnit::Binary, 0).unwrap()
    }

    #[test]
    fn two_cubes() {
        let m = Mask::from_fn(&blank(12), |p| p.iter().all(|&c| c < 3) || p.iter().all(|&c| (6..10).contains(&c)));
        let l = connected_components(&m, Connectivity::TwentySix);
        assert_eq!(l.sizes, vec![27, 64]);
        assert_eq!(l.label_at([0, 0, 0]), 1);
        assert_eq!(l.label_at([7, 7, 7]), 2);
    }

    #[test]
    fn empty() {
        assert_eq!(connected_components(&blank(4), Connectivity::Six).count(), 0);
    }

    #[test]
    fn diagonal_touch() {
        let m = Mask::from_fn(&blank(4), |p| p == [1, 1, 1] || p == [2, 2, 2]);
        assert_eq!(connected_components(&m, Connectivity::TwentySix).count(), 1);
        assert_eq!(connected_components(&m, Connectivity::Six).count(), 2);
    }
}
