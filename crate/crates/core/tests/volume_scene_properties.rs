use proptest::prelude::*;
use xpf_core::implant::sdf_eval;
use xpf_core::{crop_slices, merge, random_implant, resample, voxelize, KindSelector, Volume, AIR_HU};

fn noise_volume(dims: [usize; 3], spacing: f64, seed: u64) -> Volume {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = (0..dims.iter().product::<usize>())
        .map(|_| rng.random_range(-1000.0f32..3000.0))
        .collect();
    Volume::new(dims, spacing, [1.0, -2.0, 3.0], data).unwrap()
}

fn dims_strategy() -> impl Strategy<Value = [usize; 3]> {
    prop::array::uniform3(2usize..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn crops_compose(dims in dims_strategy(), seed in any::<u64>(), f in prop::array::uniform4(0.0f64..1.0)) {
        let v = noise_volume(dims, 0.5, seed);
        let pick = |x: f64, n: usize| ((x * n as f64) as usize).min(n - 1);
        let a = pick(f[0], dims[0]);
        let b = 1 + pick(f[1], dims[0] - a);
        let c = pick(f[2], b);
        let d = 1 + pick(f[3], b - c);
        let twice = crop_slices(&crop_slices(&v, a, b).unwrap(), c, d).unwrap();
        let once = crop_slices(&v, a + c, d).unwrap();
        prop_assert_eq!(twice.values(), once.values());
        prop_assert_eq!(twice.dims(), once.dims());
        prop_assert!((twice.origin_mm()[0] - once.origin_mm()[0]).abs() < 1e-12);
    }

    #[test]
    fn crop_rejects_ranges_past_the_end(dims in dims_strategy(), start in 0usize..20, count in 0usize..20) {
        let v = noise_volume(dims, 0.5, 0);
        prop_assert_eq!(crop_slices(&v, start, count).is_ok(), count >= 1 && start + count <= dims[0]);
    }

    #[test]
    fn resampling_stays_inside_the_input_range_and_extent(dims in dims_strategy(), seed in any::<u64>(), target in 0.2f64..2.0) {
        let v = noise_volume(dims, 0.5, seed);
        let r = resample(&v, target).unwrap();
        let (lo, hi) = v.min_max();
        prop_assert!(r.values().iter().all(|x| (lo..=hi).contains(x)));
        for a in 0..3 {
            let extent_in = (dims[a] - 1) as f64 * 0.5;
            let extent_out = (r.dims()[a] - 1) as f64 * target;
            prop_assert!(extent_out <= extent_in + 1e-9);
            prop_assert!(extent_out > extent_in - target);
        }
        prop_assert_eq!(r.origin_mm(), v.origin_mm());
    }

    #[test]
    fn merge_prefers_positive_metal(seed in any::<u64>()) {
        let anatomy = noise_volume([4, 5, 6], 0.5, seed);
        let metal = noise_volume([4, 5, 6], 0.5, seed.wrapping_add(1)).map(|x| if x > 1000.0 { x } else { 0.0 });
        let m = merge(&anatomy, &metal).unwrap();
        for ((&a, &t), &o) in anatomy.values().iter().zip(metal.values()).zip(m.values()) {
            prop_assert_eq!(o, if t > 0.0 { t } else { a });
        }
        let empty = Volume::filled([4, 5, 6], 0.5, [1.0, -2.0, 3.0], 0.0).unwrap();
        let unchanged = merge(&anatomy, &empty).unwrap();
        prop_assert_eq!(unchanged.values(), anatomy.values());
    }

    #[test]
    fn voxelized_centers_agree_with_the_sdf(seed in 0u64..10_000) {
        let model = random_implant(seed, KindSelector::Any);
        let b = voxelize(&model, 1.0).unwrap();
        prop_assert!(b.count() > 0);
        let [nx, ny, nz] = b.dims;
        // Border layer is margin and must stay empty.
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let inside = sdf_eval(&model, b.voxel_center(i, j, k)) <= 0.0;
                    prop_assert_eq!(b.get(i, j, k), inside);
                    let border = i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1;
                    prop_assert!(!(border && inside));
                }
            }
        }
    }
}

#[test]
fn resampled_air_stays_air() {
    let v = Volume::filled([7, 9, 5], 0.7, [0.0; 3], AIR_HU).unwrap();
    let r = resample(&v, 0.5).unwrap();
    assert!(r.values().iter().all(|&x| x == AIR_HU));
}
