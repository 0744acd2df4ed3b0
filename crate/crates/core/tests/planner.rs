use ctsdr_core::kinematics::tip_position;
use ctsdr_core::model::{default_config, JointState};
use ctsdr_core::planner::{plan_s_shape, PlanRequest, ScheduleStyle};
use ctsdr_core::sim::{default_phantom, run_scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random joint states inside the limits with the inner tip ahead of the outer.
fn random_joints(rng: &mut ChaCha8Rng) -> JointState {
    let outer = rng.random_range(0.0..41.5);
    let inner = rng.random_range(outer..100.0);
    JointState::new(
        outer,
        inner,
        rng.random_range(-180.0..180.0),
        rng.random_range(-180.0..180.0),
    )
}

#[test]
fn round_trip_through_forward_kinematics() {
    let config = default_config();
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let mut hits = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let truth = random_joints(&mut rng);
        let req = PlanRequest::new(tip_position(&config, &truth).unwrap(), truth.inner_translation);
        match plan_s_shape(&req, &config) {
            Ok(r) => {
                worst = worst.max(r.best.tip_error);
                assert!(r.best.cost <= r.grid_best_cost, "refinement must not lose to the grid");
                if r.best.tip_error < 0.5 {
                    hits += 1;
                }
            }
            Err(e) => eprintln!("{truth:?}: {e}"),
        }
    }
    eprintln!("round trip: {hits}/100 under 0.5 mm, worst {worst:.3e} mm");
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn planned_script_drives_the_tip_to_the_target() {
    let config = default_config();
    let truth = JointState::new(35.0, 85.0, 30.0, -150.0);
    let req = PlanRequest::new(tip_position(&config, &truth).unwrap(), 85.0);
    let plan = plan_s_shape(&req, &config).unwrap();
    let script = plan.script(ScheduleStyle::Opposed).unwrap();
    let mut phantom = default_phantom(&config, 0.5).unwrap();
    let record = run_scenario(script, &config, &mut phantom).unwrap();
    let end = *record.tip_locus.last().unwrap();
    assert!((end - req.target).norm() < 0.5);
    assert!((end - plan.best.predicted_tip).norm() < 1e-6);
    assert!(!record.flagged);
}
