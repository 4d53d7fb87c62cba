use std::time::Instant;

use globalfuse::factors::{GpsFactor, ImuFactor, StateId};
use globalfuse::graph::GraphProblem;
use globalfuse::imu::{ImuBuffer, NavState, PreintegratedImu};
use globalfuse::simkit::{
    dead_reckon, make_gps, make_odometry, sample_extrinsics, synthesize, DropoutPattern, OdometryDrift,
    OdometryNoise, TrajectorySpec,
};
use globalfuse::{compute_ate, AteMode, Termination};
use nalgebra::Vector3;

#[test]
fn five_hundred_states_solve_quickly() {
    let spec = TrajectorySpec::default_loop(8);
    let syn = synthesize(&spec).unwrap();
    let truth = &syn.states;
    assert!(truth.len() >= 500);
    let imu = ImuBuffer::new(syn.imu.clone()).unwrap();
    let noise = spec.imu_errors.as_noise();
    let drift = OdometryDrift {
        scale: 0.01,
        yaw_per_metre: 5e-4,
    };
    let odo = make_odometry(truth, &drift, &OdometryNoise::default(), 8).unwrap();
    let mut ext = sample_extrinsics(8);
    ext.fixed = true;
    let lever = Vector3::new(0.1, 0.05, 0.2);
    let fixes = make_gps(&syn.trajectory, spec.state_rate, &ext, &lever, 0.2, &DropoutPattern::none(), 8);

    let mut problem = GraphProblem::default();
    problem.extrinsics = ext;
    for (s, pose) in truth.iter().zip(dead_reckon(truth[0].pose(), &odo)) {
        problem
            .add_state(NavState::new(s.t, pose, s.velocity, s.bias))
            .unwrap();
    }
    for (k, w) in truth.windows(2).enumerate() {
        let preint = imu.preintegrate(w[0].t, w[1].t, w[0].bias, &noise).unwrap();
        problem
            .add_imu_factor(ImuFactor {
                from: StateId(k),
                to: StateId(k + 1),
                preint,
            })
            .unwrap();
    }
    for f in odo {
        problem.add_relpose_factor(f).unwrap();
    }
    for z in fixes {
        let anchor = problem.state_at_or_before(z.t + 1e-9).unwrap();
        let t = problem.state(anchor).unwrap().t;
        assert!((t - z.t).abs() < 1e-9);
        problem
            .add_gps_factor(GpsFactor {
                measurement: z,
                anchor,
                preint: PreintegratedImu::empty(t, truth[anchor.0].bias),
                lever_arm: lever,
            })
            .unwrap();
    }

    let start = Instant::now();
    let report = problem.solve_full().unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "solve took {elapsed:.2} s");
    assert_ne!(report.termination, Termination::DampingSaturated);
    assert!(report.final_cost < report.initial_cost);
    assert!(report.cost_history.windows(2).all(|w| w[1] <= w[0]));

    let est: Vec<_> = problem.states().iter().map(|s| (s.t, s.position)).collect();
    let tru: Vec<_> = truth.iter().map(|s| (s.t, s.position)).collect();
    let ate = compute_ate(&est, &tru, AteMode::RawGlobal).unwrap();
    assert!(ate.rmse < 0.2, "ATE {}", ate.rmse);
}
