use aerotree_core::geometry::{norm, sub, to_mm};
use aerotree_core::metrics::{evaluate_case, MetricParams};
use aerotree_core::postprocess::{
    endpoint_directions, identify_main_tree, match_segments, rasterize_tube, refine, ReconnectParams,
};
use aerotree_core::synth::{add_noise_blob, cut_branch, fixtures, generate, SynthTreeSpec};
use aerotree_core::topology::{build_graph, connected_components, skeletonize, Connectivity};
use aerotree_core::{Error, Index3, IntensityUnit, Mask};
use rayon::prelude::*;

fn empty(dims: Index3) -> Mask {
    Mask::filled(dims, [1.0; 3], IntensityUnit::Binary, 0).unwrap()
}

fn components(m: &Mask) -> usize {
    connected_components(m, Connectivity::TwentySix).count()
}

fn whole_grid(like: &Mask) -> Mask {
    Mask::from_fn(like, |_| true)
}

/// Tube of radius 3 along z through the grid centre, z in `z0..z1`, with the
/// slab `gap` removed.
fn cut_tube(dims: Index3, z0: usize, z1: usize, gap: std::ops::Range<usize>) -> Mask {
    let c = (dims[0] / 2) as f64;
    Mask::from_fn(&empty(dims), |[i, j, k]| {
        let (dx, dy) = (i as f64 - c, j as f64 - c);
        dx * dx + dy * dy <= 9.0 && (z0..z1).contains(&k) && !gap.contains(&k)
    })
}

#[test]
fn single_component_has_no_free_segments() {
    let m = cut_tube([16, 16, 40], 5, 35, 0..0);
    let d = identify_main_tree(&m, &ReconnectParams::default()).unwrap();
    assert!(d.free_segments.is_empty());
    assert_eq!(d.main_voxels(), m.foreground_count());
}

#[test]
fn largest_component_is_main() {
    let e = empty([40, 40, 40]);
    let m = Mask::from_fn(&e, |[i, j, k]| {
        (i < 22 && j < 22 && k < 22) || ((30..36).contains(&i) && (30..36).contains(&j) && (30..36).contains(&k))
    });
    let d = identify_main_tree(&m, &ReconnectParams::default()).unwrap();
    assert_eq!(d.main_voxels(), 22 * 22 * 22);
    assert_eq!(d.free_segments.len(), 1);
    assert_eq!(d.free_segments[0].voxels.len(), 216);
}

#[test]
fn tie_goes_to_the_most_superior_component() {
    let e = empty([10, 10, 30]);
    let m = Mask::from_fn(&e, |[i, j, k]| (2..5).contains(&i) && (2..5).contains(&j) && ((3..6).contains(&k) || (20..23).contains(&k)));
    let d = identify_main_tree(&m, &ReconnectParams::default()).unwrap();
    let main = d.main_mask(&m);
    assert_eq!(main.get([3, 3, 21]), Some(1));
    assert_eq!(main.get([3, 3, 4]), Some(0));
}

#[test]
fn empty_mask_is_an_error() {
    let e = empty([4, 4, 4]);
    assert!(matches!(identify_main_tree(&e, &ReconnectParams::default()), Err(Error::EmptyMask(_))));
    assert!(matches!(refine(&e, &ReconnectParams::default()), Err(Error::EmptyMask(_))));
}

#[test]
fn cut_fixture_main_is_the_rooted_part() {
    let t = generate(&fixtures::slender_spec(2)).unwrap();
    let cut = cut_branch(&t, 4, 5.0).unwrap();
    let d = identify_main_tree(&cut.mask, &ReconnectParams::default()).unwrap();
    assert_eq!(d.main_voxels(), cut.rooted.len());
    assert_eq!(d.free_segments.len(), 1);
    let mut free = d.free_segments[0].voxels.clone();
    free.sort_unstable();
    assert_eq!(free, cut.free);
}

#[test]
fn straight_limb_direction_is_the_axis() {
    let e = empty([20, 5, 5]);
    let m = Mask::from_fn(&e, |[i, j, k]| j == 2 && k == 2 && (3..15).contains(&i));
    let g = build_graph(&skeletonize(&m));
    let dirs = endpoint_directions(&g, None, &ReconnectParams::default());
    assert_eq!(dirs.len(), 2);
    for d in dirs {
        let v = d.direction.unwrap();
        let expected = if d.position[0] == 3 { -1.0 } else { 1.0 };
        assert!((v[0] - expected).abs() < 1e-12 && v[1].abs() < 1e-12 && v[2].abs() < 1e-12);
        assert_eq!(d.variance_deg2, 0.0);
    }
}

#[test]
fn elbow_in_window_has_positive_variance() {
    let e = empty([12, 12, 3]);
    let m = Mask::from_fn(&e, |[i, j, k]| k == 1 && ((j == 2 && (2..=4).contains(&i)) || (i == 4 && (2..=9).contains(&j))));
    let g = build_graph(&skeletonize(&m));
    let dirs = endpoint_directions(&g, None, &ReconnectParams::default());
    let near_corner = dirs.iter().find(|d| d.position == [2, 2, 1]).unwrap();
    assert!(near_corner.variance_deg2 > 0.0);
}

#[test]
fn single_voxel_segment_is_unfittable() {
    let e = empty([5, 5, 5]);
    let m = Mask::from_fn(&e, |p| p == [2, 2, 2]);
    let g = build_graph(&skeletonize(&m));
    let dirs = endpoint_directions(&g, None, &ReconnectParams::default());
    assert!(dirs.iter().all(|d| d.direction.is_none()));
}

#[test]
fn collinear_three_voxel_gap_gives_one_match() {
    let m = cut_tube([16, 16, 70], 5, 65, 34..37);
    let p = ReconnectParams::default();
    let d = identify_main_tree(&m, &p).unwrap();
    let matches = match_segments(&d.main_endpoints, &d.free_segments, m.spacing(), &p);
    assert_eq!(matches.len(), 1);
    let r = refine(&m, &p).unwrap();
    assert_eq!(components(&r.mask), 1);
    assert_eq!(r.report.reconnected.len(), 1);
}

#[test]
fn gap_of_twice_the_search_radius_is_not_matched() {
    let m = cut_tube([16, 16, 80], 5, 75, 30..50);
    let p = ReconnectParams::default();
    let d = identify_main_tree(&m, &p).unwrap();
    assert!(match_segments(&d.main_endpoints, &d.free_segments, m.spacing(), &p).is_empty());
}

#[test]
fn perpendicular_fragment_is_not_matched() {
    let e = empty([40, 16, 60]);
    let m = Mask::from_fn(&e, |[i, j, k]| {
        let (dx, dy) = (i as f64 - 20.0, j as f64 - 8.0);
        let trunk = dx * dx + dy * dy <= 9.0 && (20..55).contains(&k);
        let dz = k as f64 - 13.0;
        let cross = dz * dz + dy * dy <= 4.0 && (12..29).contains(&i);
        trunk || cross
    });
    assert_eq!(components(&m), 2);
    let p = ReconnectParams::default();
    let d = identify_main_tree(&m, &p).unwrap();
    assert!(match_segments(&d.main_endpoints, &d.free_segments, m.spacing(), &p).is_empty());
}

#[test]
fn rasterized_tubes_match_discrete_balls_and_disks() {
    let like = empty([9, 9, 21]);
    let dot = rasterize_tube(&[[4, 4, 10]], 1.0, &like).unwrap();
    assert_eq!(dot.foreground_count(), 7);
    let path: Vec<[i64; 3]> = (0..21).map(|k| [4, 4, k]).collect();
    let rod = rasterize_tube(&path, 2.0, &like).unwrap();
    let slice = (0..9).flat_map(|j| (0..9).map(move |i| [i, j, 10])).filter(|&p| rod.get(p) == Some(1)).count();
    assert_eq!(slice, 13);
    let outside = rasterize_tube(&[[-20, -20, -20], [-30, -20, -20]], 2.0, &like).unwrap();
    assert_eq!(outside.foreground_count(), 0);
    assert!(matches!(rasterize_tube(&path, 0.0, &like), Err(Error::Parameter(_))));
}

#[test]
fn intact_tree_is_a_fixpoint() {
    let t = generate(&SynthTreeSpec::default()).unwrap();
    let r = refine(&t.mask, &ReconnectParams::default()).unwrap();
    assert_eq!(r.mask, t.mask);
    assert!(r.report.is_empty());
}

#[test]
fn distant_blob_is_discarded() {
    let t = generate(&SynthTreeSpec::default()).unwrap();
    let noisy = add_noise_blob(&t.mask, [10.0, 10.0, 10.0], 2.0).unwrap();
    let r = refine(&noisy.mask, &ReconnectParams::default()).unwrap();
    assert_eq!(r.mask, t.mask);
    assert_eq!(r.report.discarded.len(), 1);
    assert_eq!(r.report.discarded[0].voxels, 33);
    let c = r.report.discarded[0].centroid;
    assert!(norm(sub(c, [10.0, 10.0, 10.0])) < 1e-9);
    let small = ReconnectParams {
        min_island_voxels: 34,
        ..Default::default()
    };
    assert!(refine(&noisy.mask, &small).unwrap().report.discarded.is_empty());
    let json: serde_json::Value = serde_json::from_str(&r.report.to_json().unwrap()).unwrap();
    assert_eq!(json["discarded"][0]["voxels"], 33);
}

#[test]
fn leaf_cuts_are_restored() {
    let p = MetricParams::default();
    let fixtures: Vec<_> = (0..3).flat_map(|s| fixtures::leaf_cuts(s).unwrap()).collect();
    fixtures.par_iter().for_each(|f| {
        let params = ReconnectParams::default();
        let r = refine(&f.cut.mask, &params).unwrap();
        assert_eq!(components(&r.mask), 1, "branch {}", f.branch_id);
        let lung = whole_grid(&f.truth.mask);
        let before = evaluate_case("cut", &f.cut.mask, &f.truth.mask, &lung, &p).unwrap();
        let after = evaluate_case("refined", &r.mask, &f.truth.mask, &lung, &p).unwrap();
        assert!(after.td > before.td && after.bd > before.bd, "branch {}: {before:?} -> {after:?}", f.branch_id);
        // The rooted part survives untouched.
        assert!(f.cut.rooted.iter().all(|&i| r.mask.data()[i] == 1));
        // Added voxels stay near a matched endpoint.
        let sp = r.mask.spacing();
        for (i, (&a, &b)) in r.mask.data().iter().zip(f.cut.mask.data()).enumerate() {
            if a == 1 && b == 0 {
                let q = to_mm(r.mask.coords(i), sp);
                assert!(r.report.reconnected.iter().any(|c| {
                    norm(sub(q, to_mm(c.main_endpoint, sp))) <= params.search_radius_mm + c.tube_radius_mm
                }));
            }
        }
        let again = refine(&r.mask, &params).unwrap();
        assert_eq!(again.mask, r.mask);
    });
}

#[test]
fn internal_cuts_reconnect_their_subtree() {
    let cases: Vec<(u64, usize)> = (0..3).flat_map(|s| [(s, 1), (s, 2)]).collect();
    cases.par_iter().for_each(|&(seed, id)| {
        let t = generate(&fixtures::slender_spec(seed)).unwrap();
        let cut = cut_branch(&t, id, fixtures::CUT_GAP_MM).unwrap();
        let r = refine(&cut.mask, &ReconnectParams::default()).unwrap();
        assert_eq!(components(&r.mask), 1);
        assert!(cut.free.iter().all(|&i| r.mask.data()[i] == 1), "seed {seed} branch {id} lost its subtree");
    });
}

#[test]
fn perpendicular_fragments_are_discarded() {
    let p = MetricParams::default();
    for seed in 0..2 {
        let t = generate(&fixtures::slender_spec(seed)).unwrap();
        let lung = whole_grid(&t.mask);
        for leaf in t.leaves() {
            let f = fixtures::perpendicular_fragment(&t, leaf.id).unwrap();
            let r = refine(&f.mask, &ReconnectParams::default()).unwrap();
            assert_eq!(r.mask, t.mask);
            assert!(r.report.reconnected.is_empty());
            let before = evaluate_case("f", &f.mask, &t.mask, &lung, &p).unwrap();
            let after = evaluate_case("r", &r.mask, &t.mask, &lung, &p).unwrap();
            assert_eq!((before.td, before.bd), (after.td, after.bd));
            assert_eq!(refine(&r.mask, &ReconnectParams::default()).unwrap().mask, r.mask);
        }
    }
}

#[test]
fn iterating_reaches_a_fixpoint() {
    let t = generate(&fixtures::slender_spec(3)).unwrap();
    let cut = cut_branch(&t, 5, fixtures::CUT_GAP_MM).unwrap();
    let p = ReconnectParams {
        iterate: true,
        ..Default::default()
    };
    let r = refine(&cut.mask, &p).unwrap();
    assert_eq!(components(&r.mask), 1);
    assert_eq!(refine(&r.mask, &p).unwrap().mask, r.mask);
}

#[test]
fn invalid_params_rejected() {
    let m = cut_tube([8, 8, 8], 2, 6, 0..0);
    for p in [
        ReconnectParams {
            search_radius_mm: 0.0,
            ..Default::default()
        },
        ReconnectParams {
            max_angle_deg: 95.0,
            ..Default::default()
        },
        ReconnectParams {
            orientation_window: 1,
            ..Default::default()
        },
    ] {
        assert!(matches!(refine(&m, &p), Err(Error::Parameter(_))));
    }
}
