use std::hint::black_box;

use aerotree_core::synth::fixtures::leaf_cuts;
use aerotree_core::synth::{generate, SynthTreeSpec};
use aerotree_core::topology::{build_graph, connected_components, skeletonize, squared_edt, Connectivity};
use aerotree_core::{
    ensemble_max, evaluate_case, read_mask, refine, threshold, write_nifti, FusionParams, IntensityUnit, Mask,
    MetricParams, ReconnectParams, Volume,
};
use criterion::{criterion_group, criterion_main, Criterion};

fn tree() -> Mask {
    generate(&SynthTreeSpec {
        seed: 5,
        depth: 4,
        root_length_mm: 30.0,
        root_radius_mm: 5.0,
        length_decay: 0.75,
        radius_decay: 0.72,
        jitter: 0.2,
        dims: [128; 3],
        ..Default::default()
    })
    .unwrap()
    .mask
}

fn topology(c: &mut Criterion) {
    let m = tree();
    let skel = skeletonize(&m);
    let mut g = c.benchmark_group("topology_128");
    g.sample_size(10);
    g.bench_function("skeletonize", |b| b.iter(|| skeletonize(black_box(&m))));
    g.bench_function("build_graph", |b| b.iter(|| build_graph(black_box(&skel))));
    g.bench_function("squared_edt", |b| b.iter(|| squared_edt(black_box(&m))));
    g.bench_function("components_26", |b| {
        b.iter(|| connected_components(black_box(&m), Connectivity::TwentySix))
    });
    g.finish();
}

fn pipeline(c: &mut Criterion) {
    let fixture = leaf_cuts(0).unwrap().remove(0);
    let lung = Mask::from_fn(&fixture.truth.mask, |_| true);
    let params = ReconnectParams::default();
    let metrics = MetricParams::default();
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    g.bench_function("refine_leaf_cut", |b| b.iter(|| refine(black_box(&fixture.cut.mask), &params).unwrap()));
    g.bench_function("evaluate_case", |b| {
        b.iter(|| evaluate_case("b", black_box(&fixture.cut.mask), &fixture.truth.mask, &lung, &metrics).unwrap())
    });
    let maps: Vec<Volume> = (0..3u32)
        .map(|s| {
            let data = fixture
                .truth
                .mask
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| (v as f32 * 0.7 + ((i as u32 ^ s).wrapping_mul(2_654_435_761) >> 24) as f32 / 1024.0).min(1.0))
                .collect();
            fixture.truth.mask.with_data(IntensityUnit::Probability, data).unwrap()
        })
        .collect();
    g.bench_function("fuse_three_maps", |b| {
        b.iter(|| threshold(&ensemble_max(black_box(&maps)).unwrap(), &FusionParams::default()).unwrap())
    });
    g.finish();
}

fn io(c: &mut Criterion) {
    let m = tree();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.nii.gz");
    let mut g = c.benchmark_group("nifti_128");
    g.sample_size(10);
    g.bench_function("write_gz", |b| b.iter(|| write_nifti(black_box(&m), &path).unwrap()));
    write_nifti(&m, &path).unwrap();
    g.bench_function("read_gz", |b| b.iter(|| read_mask(black_box(&path)).unwrap()));
    g.finish();
}

criterion_group!(benches, topology, pipeline, io);
criterion_main!(benches);
