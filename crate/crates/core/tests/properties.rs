use ctsdr_core::analysis::{
    calibrate_stiffness_ratio, fit_arc, fit_circle, fit_plane, plane_angle_deg, split_s_path, SplitOptions,
};
use ctsdr_core::geometry::Frame;
use ctsdr_core::kinematics::{blend_curvature, forward_kinematics, CurvatureComponent, DEFAULT_SAMPLE_STEP};
use ctsdr_core::model::{default_config, JointState};
use ctsdr_core::phantom::{create_phantom, VoxelPhantom};
use nalgebra::{Point2, Point3, Rotation2, Rotation3, Vector2, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn joints() -> impl Strategy<Value = JointState> {
    (0.0..41.5f64, 0.0..1.0f64, -180.0..180.0f64, -180.0..180.0f64)
        .prop_map(|(o, f, ro, ri)| JointState::new(o, o + f * (100.0 - o), ro, ri))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roll_equivariance(j in joints(), delta in -180.0..180.0f64) {
        let config = default_config();
        let (a, _) = forward_kinematics(&config, &j, DEFAULT_SAMPLE_STEP).unwrap();
        let rolled = JointState::new(j.outer_translation, j.inner_translation, j.outer_roll + delta, j.inner_roll + delta);
        let (b, _) = forward_kinematics(&config, &rolled, DEFAULT_SAMPLE_STEP).unwrap();
        let rot = Rotation3::from_axis_angle(&Vector3::x_axis(), delta.to_radians());
        prop_assert_eq!(a.samples.len(), b.samples.len());
        for (p, q) in a.samples.iter().zip(&b.samples) {
            prop_assert!((rot * p.point - q.point).norm() < 1e-9);
        }
    }

    #[test]
    fn arc_length_is_conserved(j in joints()) {
        let config = default_config();
        let (line, _) = forward_kinematics(&config, &j, DEFAULT_SAMPLE_STEP).unwrap();
        let expected = j.inner_translation;
        prop_assert!((line.arc_length() - expected).abs() <= 1e-3 * expected.max(1e-9));
        prop_assert!((line.polyline_length() - expected).abs() <= 1e-3 * expected.max(1e-9));
    }

    #[test]
    fn planar_rolls_keep_the_centerline_planar(j in joints(), ro in 0..2u8, ri in 0..2u8) {
        let config = default_config();
        let j = JointState::new(j.outer_translation, j.inner_translation, 180.0 * ro as f64, 180.0 * ri as f64);
        let (line, _) = forward_kinematics(&config, &j, DEFAULT_SAMPLE_STEP).unwrap();
        for s in &line.samples {
            prop_assert!(s.point.z.abs() < 1e-9);
        }
    }

    #[test]
    fn opposed_blend_scales_by_stiffness_ratio(rho in 1.01..10.0f64, r in 10.0..500.0f64) {
        let k = 1.0 / r;
        let blended = blend_curvature(&[CurvatureComponent::new(rho, k, 0.0), CurvatureComponent::new(1.0, k, 180.0)]).unwrap();
        let expected = k * (rho - 1.0) / (rho + 1.0);
        prop_assert!((blended.norm() - expected).abs() <= 1e-12 * expected);
        let aligned = blend_curvature(&[CurvatureComponent::new(rho, k, 0.0), CurvatureComponent::new(1.0, k, 0.0)]).unwrap();
        prop_assert!((aligned.norm() - k).abs() <= 1e-12 * k);
    }

    #[test]
    fn stiffness_calibration_inverts_blending(rho in 1.01..10.0f64, r in 10.0..500.0f64) {
        let blended = blend_curvature(&[CurvatureComponent::new(rho, 1.0 / r, 0.0), CurvatureComponent::new(1.0, 1.0 / r, 180.0)]).unwrap();
        let recovered = calibrate_stiffness_ratio(1.0 / blended.norm(), r).unwrap();
        prop_assert!((recovered - rho).abs() <= 1e-6 * rho);
    }

    #[test]
    fn circle_fit_is_rigid_motion_invariant(
        r in 5.0..200.0f64,
        span in 0.5..6.0f64,
        seed in 0..1000u64,
        angle in -3.2..3.2f64,
        tx in -100.0..100.0f64,
        ty in -100.0..100.0f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let pts: Vec<Point2<f64>> = (0..40)
            .map(|i| {
                let a = span * i as f64 / 39.0;
                let rr = r + noise.sample(&mut rng);
                Point2::new(rr * a.cos(), rr * a.sin())
            })
            .collect();
        let rot = Rotation2::new(angle);
        let moved: Vec<Point2<f64>> = pts.iter().map(|p| rot * p + Vector2::new(tx, ty)).collect();
        let a = fit_circle(&pts).unwrap().radius.unwrap();
        let b = fit_circle(&moved).unwrap().radius.unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn split_lengths_sum_to_total(l1 in 15.0..41.0f64, l2 in 15.0..60.0f64, r1 in 60.0..300.0f64, r2 in 30.0..80.0f64) {
        let pts = two_arc_curve(l1, r1, l2, r2);
        let opts = SplitOptions::default();
        let split = split_s_path(&pts, &opts).unwrap();
        prop_assert!((split.first.arc_length + split.second.arc_length - split.total_length).abs() <= opts.step);
        prop_assert!((split.total_length - (l1 + l2)).abs() <= opts.step);
        prop_assert!((split.split_s - l1).abs() <= 0.5, "split {} vs {}", split.split_s, l1);
    }
}

/// Planar S: an arc of radius r1 bending one way, then r2 bending the other.
fn two_arc_curve(l1: f64, r1: f64, l2: f64, r2: f64) -> Vec<Point3<f64>> {
    let mut frame = Frame::default();
    let mut pts = vec![frame.origin];
    let step = 0.05;
    for (len, k) in [(l1, 1.0 / r1), (l2, -1.0 / r2)] {
        let n = (len / step).ceil() as usize;
        for _ in 0..n {
            frame = frame.advance(Vector2::new(k, 0.0), len / n as f64);
            pts.push(frame.origin);
        }
    }
    pts
}

#[test]
fn two_arc_split_recovers_the_inflection() {
    let pts = two_arc_curve(40.7, 91.23, 50.0, 50.0);
    let split = split_s_path(&pts, &SplitOptions::default()).unwrap();
    assert!((split.split_s - 40.7).abs() <= 0.5, "{}", split.split_s);
    assert!((split.first.fit.radius.unwrap() - 91.23).abs() < 1e-3);
    assert!((split.second.fit.radius.unwrap() - 50.0).abs() < 1e-3);
    assert!(split.bend_plane_angle_deg() < 1e-6);
}

#[test]
fn double_inflection_is_reported_with_its_count() {
    let mut pts = two_arc_curve(30.0, 60.0, 30.0, 60.0);
    let mut frame = Frame::default();
    // continue from the end with a third arc bending back again
    let last = pts[pts.len() - 1];
    let prev = pts[pts.len() - 2];
    let t = (last - prev).normalize();
    let d1 = Vector3::z().cross(&t);
    frame.origin = last;
    frame.orientation = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[d1, Vector3::z(), t]));
    for _ in 0..600 {
        frame = frame.advance(Vector2::new(1.0 / 60.0, 0.0), 0.05);
        pts.push(frame.origin);
    }
    let err = split_s_path(&pts, &SplitOptions::default()).unwrap_err();
    assert!(matches!(err, ctsdr_core::Error::Inflection { count: 2 }), "{err}");
}

/// Brute-force reference: scan centers on a fine grid, radius = mean
/// distance, keep the minimum sum of squared radial residuals.
fn grid_fit(points: &[Point2<f64>], around: Point2<f64>, half: f64, step: f64) -> (Point2<f64>, f64) {
    let n = (half / step).round() as i64;
    let mut best = (f64::INFINITY, around, 0.0);
    for i in -n..=n {
        for j in -n..=n {
            let c = around + Vector2::new(i as f64 * step, j as f64 * step);
            let d: Vec<f64> = points.iter().map(|p| (p - c).norm()).collect();
            let r = d.iter().sum::<f64>() / d.len() as f64;
            let sse: f64 = d.iter().map(|x| (x - r).powi(2)).sum();
            if sse < best.0 {
                best = (sse, c, r);
            }
        }
    }
    (best.1, best.2)
}

#[test]
fn noisy_circle_matches_brute_force_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_241_018);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let pts: Vec<Point2<f64>> = (0..50)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / 50.0;
            Point2::new(
                50.0 * a.cos() + noise.sample(&mut rng),
                50.0 * a.sin() + noise.sample(&mut rng),
            )
        })
        .collect();
    let fit = fit_circle(&pts).unwrap();
    let r = fit.radius.unwrap();
    assert!((r - 50.0).abs() <= 0.5, "{r}");

    let coarse = grid_fit(&pts, Point2::origin(), 1.0, 0.01);
    let (c, r_ref) = grid_fit(&pts, coarse.0, 0.01, 0.0002);
    assert!((r - r_ref).abs() < 1e-3, "{r} vs {r_ref}");
    assert!((fit.center.unwrap() - c).norm() < 1e-3);
}

#[test]
fn static_out_of_plane_bend_planes() {
    // Blended first section bends 16.2754° off the outer tube's plane, so
    // the inner section's plane (rolled to 90°) meets it at the complement.
    let config = default_config();
    let j = JointState::new(30.0, 80.0, 0.0, 90.0);
    let (line, _) = forward_kinematics(&config, &j, DEFAULT_SAMPLE_STEP).unwrap();
    let first: Vec<_> = line
        .samples
        .iter()
        .filter(|s| s.s <= 30.0 + 1e-9)
        .map(|s| s.point)
        .collect();
    let second: Vec<_> = line
        .samples
        .iter()
        .filter(|s| s.s >= 30.0 - 1e-9)
        .map(|s| s.point)
        .collect();
    let (_, n1) = fit_plane(&first).unwrap();
    let (_, n2) = fit_plane(&second).unwrap();
    let angle = plane_angle_deg(&n1, &n2);
    let blended = blend_curvature(&[
        CurvatureComponent::new(config.bending_stiffnesses().0, 0.02, 0.0),
        CurvatureComponent::new(config.bending_stiffnesses().1, 0.02, 90.0),
    ])
    .unwrap();
    let direction = blended.y.atan2(blended.x).to_degrees();
    assert!((direction - 16.2754).abs() < 1e-3);
    assert!((angle - (90.0 - direction)).abs().to_radians() < 1e-6, "{angle}");
    assert!(fit_arc(&second).unwrap().plane_deviation < 1e-9);
}

fn small_block() -> VoxelPhantom {
    create_phantom(Vector3::repeat(16.0), 0.4, Point3::origin()).unwrap()
}

fn carve_path() -> impl Strategy<Value = (Vec<Point3<f64>>, f64)> {
    (
        prop::collection::vec((0.0..16.0f64, 0.0..16.0f64, 0.0..16.0f64), 1..4),
        0.5..3.0f64,
    )
        .prop_map(|(pts, r)| (pts.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect(), r))
}

fn bits(p: &VoxelPhantom) -> Vec<u8> {
    let mut out = Vec::new();
    p.write_bits(&mut out).unwrap();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn carving_never_adds_material(carves in prop::collection::vec(carve_path(), 1..5)) {
        let mut p = small_block();
        let mut last = p.occupied_count();
        for (path, r) in &carves {
            p.carve_swept_sphere(path, *r).unwrap();
            let now = p.occupied_count();
            prop_assert!(now <= last);
            last = now;
        }
    }

    #[test]
    fn carving_is_order_independent_and_idempotent(carves in prop::collection::vec(carve_path(), 2..5)) {
        let mut forward = small_block();
        let mut backward = small_block();
        for (path, r) in &carves {
            forward.carve_swept_sphere(path, *r).unwrap();
        }
        for (path, r) in carves.iter().rev() {
            backward.carve_swept_sphere(path, *r).unwrap();
        }
        prop_assert!(bits(&forward) == bits(&backward));
        let once = bits(&forward);
        for (path, r) in &carves {
            prop_assert_eq!(forward.carve_swept_sphere(path, *r).unwrap(), 0);
        }
        prop_assert!(bits(&forward) == once);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn halving_voxels_converges_diameter(r in 2.5..3.7f64, tilt_y in -0.2..0.2f64, tilt_z in -0.2..0.2f64, off in 0.0..0.4f64) {
        let a = Point3::new(-1.0, 10.0 + off, 10.0 - off);
        let b = Point3::new(31.0, 10.0 + off + 30.0 * tilt_y, 10.0 - off + 30.0 * tilt_z);
        let mid = a + (b - a) * 0.5;
        let diameter = |voxel: f64| {
            let mut p = create_phantom(Vector3::new(30.0, 20.0, 20.0), voxel, Point3::origin()).unwrap();
            p.carve_swept_sphere(&[a, b], r).unwrap();
            p.tunnel_diameter(&mid, &(b - a)).unwrap()
        };
        let (coarse, fine) = (diameter(0.2), diameter(0.1));
        prop_assert!((coarse - fine).abs() <= 0.2, "{} vs {}", coarse, fine);
    }
}
