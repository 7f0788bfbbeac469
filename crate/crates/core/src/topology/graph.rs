//! Decomposition of a skeleton into nodes (endpoints, junction clusters) and
//! branches (maximal chains of degree-2 voxels between nodes).

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::neighborhood::NEIGHBORS_26;
use super::{RadiusField, Skeleton};
use crate::geometry::step_length;
use crate::volume::{coords_of, Index3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Endpoint,
    Junction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Representative voxel (for junction clusters, the member nearest the centroid).
    pub position: Index3,
    pub kind: NodeKind,
    /// All skeleton voxels merged into this node.
    pub voxels: Vec<Index3>,
    pub component_id: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// Ordered, 26-adjacent voxels including the terminal node voxels.
    pub voxel_path: Vec<Index3>,
    pub length_mm: f64,
    pub mean_radius_mm: Option<f64>,
    /// Node ids at either end; `None` for an isolated cycle.
    pub nodes: Option<(usize, usize)>,
    /// Closed cycle, either isolated or returning to its start node.
    pub is_loop: bool,
    pub component_id: usize,
}

impl Branch {
    pub fn steps(&self) -> impl Iterator<Item = (Index3, Index3)> + '_ {
        self.voxel_path.windows(2).map(|w| (w[0], w[1]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterlineGraph {
    pub dims: Index3,
    pub spacing: [f64; 3],
    pub nodes: Vec<Node>,
    pub branches: Vec<Branch>,
    pub component_count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphParams {
    /// Terminal branches shorter than this are pruned before decomposition; 0 disables.
    pub min_branch_length_mm: f64,
}

impl CenterlineGraph {
    pub fn total_length_mm(&self) -> f64 {
        self.branches.iter().map(|b| b.length_mm).sum()
    }

    pub fn endpoints(&self) -> impl Iterator<Item = (usize, &Node)> {
        self.nodes.iter().enumerate().filter(|(_, n)| n.kind == NodeKind::Endpoint)
    }

    pub fn junction_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Junction).count()
    }

    /// Branches ending at node `id`.
    pub fn branches_at(&self, id: usize) -> impl Iterator<Item = (usize, &Branch)> {
        self.branches
            .iter()
            .enumerate()
            .filter(move |(_, b)| matches!(b.nodes, Some((a, c)) if a == id || c == id))
    }

    /// Fills `mean_radius_mm` of every branch from a radius field.
    pub fn attach_radii(&mut self, radii: &RadiusField) {
        for b in &mut self.branches {
            let vals: Vec<f64> = b.voxel_path.iter().filter_map(|&p| radii.get(p)).collect();
            b.mean_radius_mm = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

pub fn build_graph(skel: &Skeleton) -> CenterlineGraph {
    Decomposer::new(skel).run()
}

/// As [`build_graph`], after pruning terminal branches shorter than
/// `params.min_branch_length_mm` once.
pub fn build_graph_with(skel: &Skeleton, params: &GraphParams) -> CenterlineGraph {
    let graph = build_graph(skel);
    if params.min_branch_length_mm <= 0.0 {
        return graph;
    }
    let mut drop: HashSet<usize> = HashSet::new();
    for b in &graph.branches {
        let Some((a, c)) = b.nodes else { continue };
        let (ka, kc) = (graph.nodes[a].kind, graph.nodes[c].kind);
        let terminal = (ka == NodeKind::Endpoint) != (kc == NodeKind::Endpoint);
        if !terminal || b.length_mm >= params.min_branch_length_mm {
            continue;
        }
        // keep the voxel touching the junction
        let path: Vec<&Index3> = if ka == NodeKind::Endpoint {
            b.voxel_path[..b.voxel_path.len() - 1].iter().collect()
        } else {
            b.voxel_path[1..].iter().collect()
        };
        drop.extend(path.into_iter().map(|&p| skel.linear_index(p)));
    }
    if drop.is_empty() {
        return graph;
    }
    let kept = skel.indices().iter().copied().filter(|i| !drop.contains(i)).collect();
    let pruned = Skeleton::from_indices(kept, skel.source_dims(), skel.spacing());
    build_graph(&super::thinning::rethin(&pruned))
}

struct Decomposer<'a> {
    skel: &'a Skeleton,
    coords: Vec<Index3>,
    adj: Vec<Vec<u32>>,
}

impl<'a> Decomposer<'a> {
    fn new(skel: &'a Skeleton) -> Self {
        let dims = skel.source_dims();
        let coords: Vec<Index3> = skel.indices().iter().map(|&i| coords_of(dims, i)).collect();
        let id_of: HashMap<usize, u32> = skel.indices().iter().enumerate().map(|(n, &i)| (i, n as u32)).collect();
        let adj = coords
            .iter()
            .map(|c| {
                NEIGHBORS_26
                    .iter()
                    .filter_map(|o| {
                        let q = [0, 1, 2].map(|a| c[a] as i64 + o[a]);
                        if (0..3).any(|a| q[a] < 0 || q[a] >= dims[a] as i64) {
                            return None;
                        }
                        let lin = q[0] as usize + dims[0] * (q[1] as usize + dims[1] * q[2] as usize);
                        id_of.get(&lin).copied()
                    })
                    .collect()
            })
            .collect();
        Self { skel, coords, adj }
    }

    fn components(&self) -> (Vec<usize>, usize) {
        let n = self.coords.len();
        let mut comp = vec![usize::MAX; n];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = count;
            queue.push_back(s);
            while let Some(v) = queue.pop_front() {
                for &w in &self.adj[v] {
                    let w = w as usize;
                    if comp[w] == usize::MAX {
                        comp[w] = count;
                        queue.push_back(w);
                    }
                }
            }
            count += 1;
        }
        (comp, count)
    }

    fn run(self) -> CenterlineGraph {
        let n = self.coords.len();
        let spacing = self.skel.spacing();
        let (comp, component_count) = self.components();
        let degree: Vec<usize> = self.adj.iter().map(Vec::len).collect();

        // nodes: endpoints / isolated voxels, then 26-connected junction clusters
        let mut node_of = vec![usize::MAX; n];
        let mut nodes: Vec<Node> = Vec::new();
        for v in 0..n {
            if node_of[v] != usize::MAX {
                continue;
            }
            match degree[v] {
                0 | 1 => {
                    node_of[v] = nodes.len();
                    nodes.push(Node {
                        position: self.coords[v],
                        kind: NodeKind::Endpoint,
                        voxels: vec![self.coords[v]],
                        component_id: comp[v],
                    });
                }
                d if d >= 3 => {
                    let id = nodes.len();
                    let mut members = vec![v];
                    node_of[v] = id;
                    let mut head = 0;
                    while head < members.len() {
                        let u = members[head];
                        head += 1;
                        for &w in &self.adj[u] {
                            let w = w as usize;
                            if degree[w] >= 3 && node_of[w] == usize::MAX {
                                node_of[w] = id;
                                members.push(w);
                            }
                        }
                    }
                    members.sort_unstable();
                    let voxels: Vec<Index3> = members.iter().map(|&m| self.coords[m]).collect();
                    nodes.push(Node {
                        position: representative(&voxels),
                        kind: NodeKind::Junction,
                        voxels,
                        component_id: comp[v],
                    });
                }
                _ => {}
            }
        }

        let make_branch = |path: Vec<usize>, ends: Option<(usize, usize)>, is_loop: bool| -> Branch {
            let voxel_path: Vec<Index3> = path.iter().map(|&v| self.coords[v]).collect();
            let length_mm = voxel_path.windows(2).map(|w| step_length(w[0], w[1], spacing)).sum();
            Branch {
                component_id: comp[path[0]],
                voxel_path,
                length_mm,
                mean_radius_mm: None,
                nodes: ends,
                is_loop,
            }
        };

        let mut branches = Vec::new();
        let mut visited = vec![false; n];
        let mut direct: HashSet<(usize, usize)> = HashSet::new();
        for v in 0..n {
            let start = node_of[v];
            if start == usize::MAX {
                continue;
            }
            for &w in &self.adj[v] {
                let w = w as usize;
                if node_of[w] == start {
                    continue;
                }
                if node_of[w] != usize::MAX {
                    if direct.insert((v.min(w), v.max(w))) {
                        branches.push(make_branch(vec![v, w], Some((start, node_of[w])), false));
                    }
                    continue;
                }
                if visited[w] {
                    continue;
                }
                let mut path = vec![v, w];
                visited[w] = true;
                let (mut prev, mut cur) = (v, w);
                let end = loop {
                    let next = self.adj[cur]
                        .iter()
                        .map(|&x| x as usize)
                        .find(|&x| x != prev && !(node_of[x] == usize::MAX && visited[x]));
                    let Some(next) = next else {
                        // dead end inside a chain; only possible for malformed input
                        break None;
                    };
                    path.push(next);
                    if node_of[next] != usize::MAX {
                        break Some(node_of[next]);
                    }
                    visited[next] = true;
                    prev = cur;
                    cur = next;
                };
                match end {
                    Some(e) => branches.push(make_branch(path, Some((start, e)), e == start)),
                    None => branches.push(make_branch(path, Some((start, start)), true)),
                }
            }
        }

        // isolated cycles of degree-2 voxels
        for v in 0..n {
            if node_of[v] != usize::MAX || visited[v] {
                continue;
            }
            let mut path = vec![v];
            visited[v] = true;
            let (mut prev, mut cur) = (usize::MAX, v);
            while let Some(next) = self.adj[cur].iter().map(|&x| x as usize).find(|&x| x != prev && !visited[x]) {
                visited[next] = true;
                path.push(next);
                prev = cur;
                cur = next;
            }
            path.push(v);
            branches.push(make_branch(path, None, true));
        }

        CenterlineGraph {
            dims: self.skel.source_dims(),
            spacing,
            nodes,
            branches,
            component_count,
        }
    }
}

fn representative(voxels: &[Index3]) -> Index3 {
    let n = voxels.len() as f64;
    let c = [0, 1, 2].map(|a| voxels.iter().map(|v| v[a] as f64).sum::<f64>() / n);
    *voxels
        .iter()
        .min_by(|a, b| {
            let da: f64 = (0..3).map(|x| (a[x] as f64 - c[x]).powi(2)).sum();
            let db: f64 = (0..3).map(|x| (b[x] as f64 - c[x]).powi(2)).sum();
            da.total_cmp(&db)
        })
        .expect("non-empty cluster")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skel(dims: Index3, voxels: &[Index3]) -> Skeleton {
        let idx = voxels.iter().map(|p| p[0] + dims[0] * (p[1] + dims[1] * p[2])).collect();
        Skeleton::from_indices(idx, dims, [1.0; 3])
    }

    #[test]
    fn straight_path() {
        let v: Vec<Index3> = (0..20).map(|i| [i + 2, 5, 5]).collect();
        let g = build_graph(&skel([30, 10, 10], &v));
        assert_eq!(g.endpoints().count(), 2);
        assert_eq!(g.junction_count(), 0);
        assert_eq!(g.branches.len(), 1);
        assert!((g.branches[0].length_mm - 19.0).abs() < 1e-12);
        assert_eq!(g.branches[0].voxel_path.len(), 20);
    }

    #[test]
    fn y_shape() {
        let mut v: Vec<Index3> = vec![[10, 10, 10]];
        for t in 1..=6 {
            v.push([10, 10, 10 + t]);
            v.push([10 + t, 10, 10 - t]);
            v.push([10 - t, 10, 10 - t]);
        }
        let g = build_graph(&skel([21, 21, 21], &v));
        assert_eq!(g.junction_count(), 1);
        assert_eq!(g.endpoints().count(), 3);
        assert_eq!(g.branches.len(), 3);
        let covered: HashSet<Index3> = g.branches.iter().flat_map(|b| b.voxel_path.iter().copied()).collect();
        assert_eq!(covered.len(), v.len());
    }

    #[test]
    fn single_voxel_and_cycle() {
        let g = build_graph(&skel([5, 5, 5], &[[2, 2, 2]]));
        assert_eq!(g.nodes.len(), 1);
        assert!(g.branches.is_empty());

        let ring: Vec<Index3> = [[1, 0], [2, 0], [3, 0], [4, 1], [4, 2], [4, 3], [3, 4], [2, 4], [1, 4], [0, 3], [0, 2], [0, 1]]
            .iter()
            .map(|&[x, y]| [x, y, 1])
            .collect();
        let g = build_graph(&skel([5, 5, 5], &ring));
        assert!(g.nodes.is_empty());
        assert_eq!(g.branches.len(), 1);
        assert!(g.branches[0].is_loop);
        assert!((g.branches[0].length_mm - (8.0 + 4.0 * 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn two_voxels() {
        let g = build_graph(&skel([5, 5, 5], &[[1, 1, 1], [2, 2, 2]]));
        assert_eq!(g.branches.len(), 1);
        assert!((g.branches[0].length_mm - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pruning_short_spur() {
        let mut v: Vec<Index3> = (0..20).map(|i| [i, 5, 5]).collect();
        v.push([10, 6, 5]);
        v.push([10, 7, 5]);
        let s = skel([20, 10, 10], &v);
        assert_eq!(build_graph(&s).branches.len(), 3);
        let pruned = build_graph_with(&s, &GraphParams { min_branch_length_mm: 3.0 });
        assert_eq!(pruned.branches.len(), 1);
    }
}
