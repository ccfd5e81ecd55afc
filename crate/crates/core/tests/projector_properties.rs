use proptest::prelude::*;
use xpf_core::projector::{integrate, line_integral, project_channels, Integrand, ScalarGrid};
use xpf_core::{ProjectionGeometry, Volume};

/// Sum of isotropic Gaussian blobs `(center offset from grid center, sigma, peak)`.
fn blobs(dims: [usize; 3], spacing: f64, parts: &[([f64; 3], f64, f64)]) -> Volume {
    let c = dims.map(|n| 0.5 * (n - 1) as f64 * spacing);
    let mut data = Vec::with_capacity(dims.iter().product());
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let p = [i as f64 * spacing - c[0], j as f64 * spacing - c[1], k as f64 * spacing - c[2]];
                let v: f64 = parts
                    .iter()
                    .map(|(m, s, a)| {
                        let r2 = (0..3).map(|x| (p[x] - m[x]).powi(2)).sum::<f64>();
                        a * (-r2 / (2.0 * s * s)).exp()
                    })
                    .sum();
                data.push(v as f32);
            }
        }
    }
    Volume::new(dims, spacing, [0.0; 3], data).unwrap()
}

fn small_geometry(angles: Vec<f64>) -> ProjectionGeometry {
    ProjectionGeometry {
        detector_pixels: [96, 64],
        pixel_pitch_mm: 1.0,
        angles_deg: angles,
        ..Default::default()
    }
}

fn unit(d: [f64; 3]) -> [f64; 3] {
    let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    d.map(|x| x / n)
}

#[test]
fn halving_the_step_changes_integrals_by_under_0_2_percent() {
    let v = blobs([40, 40, 40], 1.0, &[([0.0; 3], 6.0, 0.02), ([5.0, -4.0, 3.0], 3.0, 0.05)]);
    let grid = ScalarGrid::from_scalar_volume(&v);
    let c = grid.center_mm();
    let mut worst = 0.0f64;
    for n in 0..200 {
        let a = n as f64 * 0.7;
        let b = n as f64 * 0.31;
        let d = unit([a.sin() * 0.3, a.cos(), b.sin()]);
        let o = [0, 1, 2].map(|x| c[x] - 60.0 * d[x] + 2.0 * (b + x as f64).cos());
        let coarse = integrate(&grid, o, d, 0.5).unwrap()[0];
        let fine = integrate(&grid, o, d, 0.25).unwrap()[0];
        if fine > 1e-3 {
            worst = worst.max((coarse - fine).abs() / fine);
        }
    }
    assert!(worst < 2e-3, "worst relative change {worst}");
}

#[test]
fn rotating_the_object_matches_rotating_the_gantry() {
    // Rotating the object by phi about the axis and viewing at phi equals
    // viewing the unrotated object at 0.
    let phi = 37.0f64;
    let (s, co) = phi.to_radians().sin_cos();
    let m = [4.0, 12.0, -7.0];
    let rotated = [m[0], co * m[1] - s * m[2], s * m[1] + co * m[2]];
    let a = blobs([48, 64, 64], 1.0, &[(m, 4.0, 0.05)]);
    let b = blobs([48, 64, 64], 1.0, &[(rotated, 4.0, 0.05)]);
    let pa = project_channels(&ScalarGrid::from_scalar_volume(&a), &small_geometry(vec![0.0])).unwrap();
    let pb = project_channels(&ScalarGrid::from_scalar_volume(&b), &small_geometry(vec![phi])).unwrap();
    let (ia, ib) = (&pa[0][0], &pb[0][0]);
    let row_of_center = {
        // Center row of the blob on the detector: v offset = m.x * magnification.
        let g = small_geometry(vec![0.0]);
        (0.5 * (g.height() - 1) as f64 + m[0] * g.magnification() / g.pixel_pitch_mm).round() as usize
    };
    let peak = (0..ia.width).map(|u| ia.get(row_of_center, u)).fold(0.0, f64::max);
    assert!(peak > 0.1, "blob missed the row, peak {peak}");
    for u in 0..ia.width {
        let d = (ia.get(row_of_center, u) - ib.get(row_of_center, u)).abs();
        assert!(d <= 0.01 * peak, "column {u}: {} vs {}", ia.get(row_of_center, u), ib.get(row_of_center, u));
    }
}

#[test]
fn projection_is_bitwise_independent_of_worker_count() {
    let v = blobs([32, 40, 40], 1.0, &[([1.0, 2.0, -3.0], 5.0, 0.03)]);
    let grid = ScalarGrid::from_scalar_volume(&v);
    let g = small_geometry(vec![0.0, 45.0, 200.0]);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| project_channels(&grid, &g).unwrap())
    };
    let one = run(1);
    let four = run(4);
    for (a, b) in one.iter().zip(&four) {
        let bits = |img: &xpf_core::Image| img.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a[0]), bits(&b[0]));
    }
}

fn ray_strategy() -> impl Strategy<Value = ([f64; 3], [f64; 3])> {
    (
        prop::array::uniform3(-8.0f64..8.0),
        prop::array::uniform3(-1.0f64..1.0).prop_filter("nonzero", |d| d.iter().map(|x| x * x).sum::<f64>() > 0.05),
    )
        .prop_map(|(off, d)| {
            let d = unit(d);
            let c = [7.5, 7.5, 7.5];
            ([0, 1, 2].map(|a| c[a] + off[a] - 40.0 * d[a]), d)
        })
}

fn random_grid(seed: u64) -> Volume {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = (0..16 * 16 * 16).map(|_| rng.random::<f32>()).collect();
    Volume::new([16, 16, 16], 1.0, [0.0; 3], data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn integrals_are_linear_in_the_volume(seed in any::<u64>(), (o, d) in ray_strategy(), a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let f = random_grid(seed);
        let g = random_grid(seed ^ 0x9e37);
        let mix = Volume::new(
            f.dims(),
            1.0,
            [0.0; 3],
            f.values().iter().zip(g.values()).map(|(x, y)| (a * *x as f64 + b * *y as f64) as f32).collect(),
        ).unwrap();
        let i = |v: &Volume| line_integral(&ScalarGrid::from_scalar_volume(v), o, d).unwrap();
        let (lf, lg, lm) = (i(&f), i(&g), i(&mix));
        let expect = a * lf + b * lg;
        prop_assert!((lm - expect).abs() <= 1e-6 * expect.abs().max(1.0), "{} vs {}", lm, expect);
    }

    #[test]
    fn integrals_are_nonnegative_and_direction_symmetric(seed in any::<u64>(), (o, d) in ray_strategy()) {
        let grid = ScalarGrid::from_scalar_volume(&random_grid(seed));
        let fwd = line_integral(&grid, o, d).unwrap();
        prop_assert!(fwd >= 0.0);
        let far = [0, 1, 2].map(|a| o[a] + 80.0 * d[a]);
        let back = line_integral(&grid, far, d.map(|x| -x)).unwrap();
        prop_assert!((fwd - back).abs() <= 1e-9 * fwd.max(1.0), "{} vs {}", fwd, back);
    }

    #[test]
    fn integral_is_bounded_by_max_value_times_chord(seed in any::<u64>(), (o, d) in ray_strategy()) {
        let v = random_grid(seed);
        let grid = ScalarGrid::from_scalar_volume(&v);
        let chord = grid.frame().clip(o, d).map_or(0.0, |(t0, t1)| t1 - t0);
        let max = v.min_max().1 as f64;
        prop_assert!(line_integral(&grid, o, d).unwrap() <= max * chord + 1e-9);
    }
}
