use aerotree_core::preprocess::{clip_normalize, clip_trachea_at_lung_top, resample_isotropic, Interpolation};
use aerotree_core::synth::{generate, SynthTreeSpec};
use aerotree_core::{
    ensemble_max, read_mask, read_nifti, threshold, write_nifti, Affine, FusionParams, IntensityUnit, Mask,
    PreprocessParams, Volume, VoxelGrid,
};
use proptest::prelude::*;

fn dims_strategy() -> impl Strategy<Value = [usize; 3]> {
    [1usize..12, 1usize..12, 1usize..12]
}

fn spacing_strategy() -> impl Strategy<Value = [f64; 3]> {
    [0.3f64..2.5, 0.3f64..2.5, 0.3f64..2.5]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(25))]

    #[test]
    fn float_grids_round_trip(dims in dims_strategy(), spacing in spacing_strategy(), gz in any::<bool>(), seed in any::<u64>()) {
        let n = dims.iter().product::<usize>();
        let data: Vec<f32> = (0..n).map(|i| f32::from_bits((seed as u32).wrapping_mul(2_654_435_761).wrapping_add(i as u32 * 97) & 0x7f7f_ffff)).collect();
        let affine = Affine::from_spacing(spacing).with_translation([-12.5, 3.0, 40.25]);
        let g = VoxelGrid::new(dims, spacing, affine, IntensityUnit::Hu, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(if gz { "v.nii.gz" } else { "v.nii" });
        write_nifti(&g, &path).unwrap();
        let back = read_nifti(&path).unwrap();
        prop_assert_eq!(back.dims(), dims);
        prop_assert_eq!(back.unit(), IntensityUnit::Hu);
        prop_assert!(back.data().iter().zip(g.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        for (got, want) in back.spacing().iter().zip(spacing) {
            prop_assert!((got - want).abs() < 1e-5);
        }
    }

    #[test]
    fn binary_grids_round_trip(dims in dims_strategy(), spacing in spacing_strategy(), gz in any::<bool>(), bits in proptest::collection::vec(0u8..2, 1..1728)) {
        let n = dims.iter().product::<usize>();
        let data: Vec<u8> = (0..n).map(|i| bits[i % bits.len()]).collect();
        let g = Mask::from_data(dims, spacing, IntensityUnit::Binary, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(if gz { "m.nii.gz" } else { "m.nii" });
        write_nifti(&g, &path).unwrap();
        let back = read_mask(&path).unwrap();
        prop_assert_eq!(back.data(), g.data());
        prop_assert_eq!(back.dims(), dims);
    }

    #[test]
    fn fusion_laws(dims in dims_strategy(), a in any::<u64>(), b in any::<u64>(), c in any::<u64>(), t in 0.05f64..0.95) {
        let map = |seed: u64| {
            let n = dims.iter().product::<usize>();
            let data = (0..n).map(|i| ((seed.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407)) >> 40) as f32) / (1u64 << 24) as f32).collect();
            Volume::from_data(dims, [1.0; 3], IntensityUnit::Probability, data).unwrap()
        };
        let (a, b, c) = (map(a), map(b), map(c));
        let abc = ensemble_max(&[a.clone(), b.clone(), c.clone()]).unwrap();
        prop_assert_eq!(&abc, &ensemble_max(&[c.clone(), a.clone(), b.clone()]).unwrap());
        prop_assert_eq!(&abc, &ensemble_max(&[b.clone(), c.clone(), a.clone()]).unwrap());
        let left = ensemble_max(&[ensemble_max(&[a.clone(), b.clone()]).unwrap(), c.clone()]).unwrap();
        let right = ensemble_max(&[a.clone(), ensemble_max(&[b.clone(), c.clone()]).unwrap()]).unwrap();
        prop_assert_eq!(&left, &right);
        prop_assert_eq!(&ensemble_max(&[a.clone(), a.clone()]).unwrap(), &a);
        let params = FusionParams { threshold: t };
        let fused = threshold(&abc, &params).unwrap();
        for m in [&a, &b, &c] {
            let own = threshold(m, &params).unwrap();
            prop_assert!(own.data().iter().zip(fused.data()).all(|(&o, &f)| o <= f));
        }
    }
}

#[test]
fn hu_window_end_points() {
    let g = Volume::from_data([3, 1, 1], [1.0; 3], IntensityUnit::Hu, vec![-1024.0, 1024.0, 0.0]).unwrap();
    let out = clip_normalize(&g, &PreprocessParams::default()).unwrap();
    assert_eq!(out.data(), &[0.0, 1.0, 0.5]);
}

#[test]
fn ramp_resampled_to_working_spacing() {
    // f(x) = 2x + 3y - z in mm, sampled at anisotropic spacing.
    let (dims, sp) = ([20, 16, 12], [0.6, 0.9, 1.2]);
    let f = |x: f64, y: f64, z: f64| 2.0 * x + 3.0 * y - z;
    let mut data = Vec::new();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                data.push(f(i as f64 * sp[0], j as f64 * sp[1], k as f64 * sp[2]) as f32);
            }
        }
    }
    let g = Volume::from_data(dims, sp, IntensityUnit::Hu, data).unwrap();
    let out = resample_isotropic(&g, 0.75, Interpolation::Trilinear).unwrap();
    assert_eq!(out.spacing(), [0.75; 3]);
    let od = out.dims();
    let extent = [0, 1, 2].map(|a| (dims[a] - 1) as f64 * sp[a]);
    let mut checked = 0;
    for k in 0..od[2] {
        for j in 0..od[1] {
            for i in 0..od[0] {
                let p = [i as f64 * 0.75, j as f64 * 0.75, k as f64 * 0.75];
                if (0..3).all(|a| p[a] <= extent[a]) {
                    let v = out.get([i, j, k]).unwrap() as f64;
                    assert!((v - f(p[0], p[1], p[2])).abs() <= 1e-5 * f(p[0], p[1], p[2]).abs().max(1.0), "at {p:?}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 1000);
}

#[test]
fn trachea_stub_above_the_lungs_is_removed() {
    let t = generate(&SynthTreeSpec {
        depth: 1,
        root_length_mm: 45.0,
        root_radius_mm: 3.0,
        ..Default::default()
    })
    .unwrap();
    let m = &t.mask;
    let top = m.foreground_indices().iter().map(|&i| m.coords(i)[2]).max().unwrap();
    let lung_top = top - 30;
    let lung = Mask::from_fn(m, |[_, _, k]| k <= lung_top && k > 5);
    let stub = m.foreground_indices().iter().filter(|&&i| m.coords(i)[2] > lung_top).count();
    assert!(stub > 0);
    let clipped = clip_trachea_at_lung_top(m, &lung).unwrap();
    assert_eq!(clipped.foreground_count(), m.foreground_count() - stub);
    assert!(m.data().iter().zip(clipped.data()).enumerate().all(|(i, (&a, &b))| m.coords(i)[2] > lung_top || a == b));
}
