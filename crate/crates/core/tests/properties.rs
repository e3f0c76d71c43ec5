use proptest::prelude::*;

use rslf_core::eval::{abs_diff, delta_125, rmse};
use rslf_core::geometry::{
    deform_to_static, disparity_to_depth, disparity_to_point, point_to_disparity, reimage_at, rodrigues, MotionParams,
    Point3, RelativeTransform,
};
use rslf_core::io::{parse_cloud, parse_pfm, pfm_bytes, cloud_bytes};
use rslf_core::lightfield::{LFIntrinsics, RSTiming};
use rslf_core::splat::{observation_times, Band, Gaussian2D, GaussianCloud, MotionContext, SplatRenderer};

fn vec3(s: f64) -> impl Strategy<Value = [f64; 3]> {
    [-s..s, -s..s, -s..s]
}

fn motion(sw: f64, sv: f64) -> impl Strategy<Value = MotionParams> {
    (vec3(sw), vec3(sv)).prop_map(|(w, v)| MotionParams::new(w, v))
}

fn intr() -> LFIntrinsics {
    LFIntrinsics::desk(64, 48)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn reimage_inverts_deform_at_equal_times(
        p in vec3(2.0), z in 0.3..4.0f64, tau in -0.6..0.6f64, m in motion(1.5, 1.0)
    ) {
        let p = Point3::new(p[0], p[1], z);
        let back = reimage_at(&deform_to_static(&p, tau, &m), tau, &m);
        prop_assert!((back - p).norm() < 1e-10);
    }

    #[test]
    fn relative_transform_composes_the_two_maps(
        p in vec3(2.0), tau in -0.6..0.6f64, tl in -0.6..0.6f64, m in motion(1.0, 1.0)
    ) {
        let p = Point3::new(p[0], p[1], p[2] + 3.0);
        let direct = reimage_at(&deform_to_static(&p, tau, &m), tl, &m);
        let fused = RelativeTransform::new(tau, tl, &m).apply(&p);
        prop_assert!((direct - fused).norm() < 1e-12);
    }

    #[test]
    fn rotations_are_orthonormal(w in vec3(3.0)) {
        let r = rodrigues(&nalgebra::Vector3::from(w));
        let e = (r.transpose() * r - nalgebra::Matrix3::identity()).norm();
        prop_assert!(e < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disparity_point_round_trip(u in -10.0..74.0f64, v in -10.0..58.0f64, d in -1.5..3.0f64) {
        let intr = intr();
        let p = disparity_to_point(u, v, d, &intr).unwrap();
        let (u2, v2, d2) = point_to_disparity(&p, &intr).unwrap();
        prop_assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9 && (d - d2).abs() < 1e-9);
        prop_assert!((disparity_to_depth(d, &intr).unwrap() - p.z).abs() < 1e-12);
    }

    #[test]
    fn nearer_points_have_larger_disparity(z1 in 0.2..5.0f64, dz in 0.01..3.0f64) {
        let intr = intr();
        let (_, _, d1) = point_to_disparity(&Point3::new(0.0, 0.0, z1), &intr).unwrap();
        let (_, _, d2) = point_to_disparity(&Point3::new(0.0, 0.0, z1 + dz), &intr).unwrap();
        prop_assert!(d1 > d2);
    }

    #[test]
    fn bands_tile_the_rows(h in 1usize..300, b in 1usize..40) {
        let bands = Band::split(h, b);
        prop_assert_eq!(bands[0].start, 0);
        prop_assert_eq!(bands.last().unwrap().end, h);
        for w in bands.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
        }
        prop_assert!(bands.iter().all(|x| x.rows() >= 1 && x.rows() <= b));
    }

    #[test]
    fn metrics_ignore_pixels_outside_the_mask(
        vals in prop::collection::vec((0.1..5.0f64, 0.1..5.0f64, any::<bool>()), 1..40),
        junk in 0.1..100.0f64
    ) {
        prop_assume!(vals.iter().any(|v| v.2));
        let p: Vec<f64> = vals.iter().map(|v| v.0).collect();
        let g: Vec<f64> = vals.iter().map(|v| v.1).collect();
        let m: Vec<bool> = vals.iter().map(|v| v.2).collect();
        let g2: Vec<f64> = g.iter().zip(&m).map(|(x, &k)| if k { *x } else { junk }).collect();
        prop_assert_eq!(abs_diff(&p, &g, &m).unwrap(), abs_diff(&p, &g2, &m).unwrap());
        prop_assert_eq!(rmse(&p, &g, &m).unwrap(), rmse(&p, &g2, &m).unwrap());
        prop_assert_eq!(delta_125(&p, &g, &m).unwrap(), delta_125(&p, &g2, &m).unwrap());
    }

    #[test]
    fn metrics_scale_as_specified(
        vals in prop::collection::vec((0.1..5.0f64, 0.1..5.0f64), 1..40),
        s in 0.01..100.0f64
    ) {
        let p: Vec<f64> = vals.iter().map(|v| v.0).collect();
        let g: Vec<f64> = vals.iter().map(|v| v.1).collect();
        let m = vec![true; p.len()];
        let ps: Vec<f64> = p.iter().map(|x| x * s).collect();
        let gs: Vec<f64> = g.iter().map(|x| x * s).collect();
        let a = abs_diff(&p, &g, &m).unwrap();
        prop_assert!((abs_diff(&ps, &gs, &m).unwrap() - s * a).abs() <= 1e-9 * (1.0 + s * a));
        let r = rmse(&p, &g, &m).unwrap();
        prop_assert!((rmse(&ps, &gs, &m).unwrap() - s * r).abs() <= 1e-9 * (1.0 + s * r));
        // The relative threshold is exact up to rounding at the boundary.
        let near_boundary = p.iter().zip(&g).any(|(x, y)| ((x - y).abs() / y - 0.25).abs() < 1e-9);
        prop_assume!(!near_boundary);
        prop_assert_eq!(delta_125(&ps, &gs, &m).unwrap(), delta_125(&p, &g, &m).unwrap());
    }

    #[test]
    fn metrics_are_permutation_invariant(
        vals in prop::collection::vec((0.1..5.0f64, 0.1..5.0f64), 2..30),
        seed in any::<u64>()
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = vals.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let split = |v: &[(f64, f64)]| (v.iter().map(|x| x.0).collect::<Vec<_>>(), v.iter().map(|x| x.1).collect::<Vec<_>>());
        let (p, g) = split(&vals);
        let (p2, g2) = split(&shuffled);
        let m = vec![true; p.len()];
        prop_assert!((abs_diff(&p, &g, &m).unwrap() - abs_diff(&p2, &g2, &m).unwrap()).abs() < 1e-12);
        prop_assert!((rmse(&p, &g, &m).unwrap() - rmse(&p2, &g2, &m).unwrap()).abs() < 1e-12);
        prop_assert_eq!(delta_125(&p, &g, &m).unwrap(), delta_125(&p2, &g2, &m).unwrap());
    }

    #[test]
    fn pfm_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..w * h).map(|_| rng.gen_range(-1e6f32..1e6)).collect();
        let (w2, h2, back) = parse_pfm(&pfm_bytes(w, h, &data).unwrap()).unwrap();
        prop_assert_eq!((w2, h2), (w, h));
        prop_assert_eq!(back, data);
    }

    #[test]
    fn pfm_parser_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = parse_pfm(&bytes);
        let mut framed = b"Pf\n3 2\n-1.0\n".to_vec();
        framed.extend_from_slice(&bytes);
        let r = parse_pfm(&framed);
        prop_assert_eq!(r.is_ok(), bytes.len() >= 24);
    }

    #[test]
    fn cloud_round_trip_is_exact_in_single_precision(
        gs in prop::collection::vec((vec3(3.0), 0.5..30.0f32, 0.0..1.0f32), 0..30),
        bg in 0.0..1.0f32
    ) {
        let cloud = GaussianCloud {
            gaussians: gs.iter().map(|(c, s, i)| Gaussian2D {
                center: Point3::new(c[0] as f32 as f64, c[1] as f32 as f64, c[2] as f32 as f64),
                sigma: *s as f64,
                intensity: *i as f64,
            }).collect(),
            background: bg as f64,
        };
        prop_assert_eq!(parse_cloud(&cloud_bytes(&cloud)).unwrap(), cloud);
    }

    #[test]
    fn cloud_parser_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..120)) {
        let mut framed = b"RSLF".to_vec();
        framed.extend_from_slice(&bytes);
        let _ = parse_cloud(&framed);
        let _ = parse_cloud(&bytes);
    }
}

fn random_cloud(seed: u64, n: usize, intr: &LFIntrinsics) -> GaussianCloud {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let gaussians = (0..n)
        .map(|_| Gaussian2D {
            center: disparity_to_point(
                rng.gen_range(-4.0..68.0),
                rng.gen_range(-4.0..52.0),
                rng.gen_range(-1.5..1.5),
                intr,
            )
            .unwrap(),
            sigma: rng.gen_range(0.6..4.0),
            intensity: rng.gen_range(0.0..1.0),
        })
        .collect();
    GaussianCloud::new(gaussians, 0.2).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn zero_motion_band_render_equals_global_shutter(seed in any::<u64>(), x in 0usize..5, y in 0usize..5, b in 1usize..20) {
        let intr = intr();
        let r = SplatRenderer::new(intr, 64, 48, 5);
        let cloud = random_cloud(seed, 40, &intr);
        let timing = RSTiming::for_height(48, intr.v0);
        let taus = observation_times(&cloud, &intr, &timing);
        let ctx = MotionContext { motion: MotionParams::zero(), taus: &taus, timing };
        for band in Band::split(48, b) {
            let gs = r.render_band(&cloud, x, y, band, None).unwrap();
            let rs = r.render_band(&cloud, x, y, band, Some(&ctx)).unwrap();
            prop_assert_eq!(gs, rs);
        }
    }

    #[test]
    fn rendered_values_stay_in_range(seed in any::<u64>(), x in 0usize..5, y in 0usize..5) {
        let intr = intr();
        let r = SplatRenderer::new(intr, 64, 48, 5);
        let cloud = random_cloud(seed, 60, &intr);
        let view = r.render_view_gs(&cloud, x, y).unwrap();
        for (&c, &a) in view.intensity.data().iter().zip(view.alpha.data()) {
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn central_line_gaussians_are_motion_invariant(seed in any::<u64>(), m in motion(0.5, 0.3)) {
        // A gaussian whose own time equals the band time is not moved.
        let intr = intr();
        let timing = RSTiming::for_height(48, intr.v0);
        let cloud = random_cloud(seed, 20, &intr);
        let taus = observation_times(&cloud, &intr, &timing);
        for (g, &tau) in cloud.gaussians.iter().zip(&taus) {
            let moved = RelativeTransform::new(tau, tau, &m).apply(&g.center);
            prop_assert!((moved - g.center).norm() < 1e-12);
        }
    }
}
