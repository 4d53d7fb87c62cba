use globalfuse::align::{position_align, reinitialise, full_align, dropout_segment};
use globalfuse::estimator::{Estimator, EstimatorConfig, EventKind};
use globalfuse::eval::{compute_ate, run_repetition, AteMode, ScenarioConfig};
use globalfuse::factors::{gps_residual, ExtrinsicsGW, GpsFactor, GpsMeasurement, StateId};
use globalfuse::geom::Pose3;
use globalfuse::graph::GraphProblem;
use globalfuse::imu::{ImuBias, ImuBuffer, NavState, PreintegratedImu};
use globalfuse::simkit::{
    dead_reckon, make_odometry, sample_extrinsics, synthesize, DropoutPattern, OdometryDrift, OdometryNoise,
    TrajectorySpec,
};
use globalfuse::{Error, PipelineMode, Stage};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn dropout_config() -> ScenarioConfig {
    let mut c = ScenarioConfig {
        repetitions: 1,
        ..ScenarioConfig::default()
    };
    c.gps.dropouts = DropoutPattern::new(vec![[0.33, 0.66]]).unwrap();
    c
}

#[test]
fn stage_machine_event_sequence() {
    let run = run_repetition(&dropout_config(), 11).unwrap();
    let kinds: Vec<_> = run.report.events.iter().map(|e| e.kind).collect();
    assert_eq!(
        kinds,
        [EventKind::Initialisation, EventKind::ExtrinsicsFixed, EventKind::PositionAlign, EventKind::FullAlign]
    );
    let ev = &run.report.events;
    assert!(ev[1].p_theta_theta.unwrap() < 1f64.to_radians().powi(2));
    // The first fix after the outage arrives at the end of the dropout.
    assert!((ev[2].t - 66.0).abs() < 0.11);
    let seg = ev[2].segment.unwrap();
    assert!(seg.last > seg.pivot);
    assert_eq!(ev[3].segment, ev[2].segment);
    assert!(run.report.full_solves >= 3);
}

#[test]
fn extrinsics_untouched_once_fixed() {
    let config = dropout_config();
    let seed = 3;
    let spec = TrajectorySpec {
        seed,
        ..config.trajectory.clone()
    };
    let syn = synthesize(&spec).unwrap();
    let ext_true = sample_extrinsics(seed);
    let lever = Vector3::from(config.lever_arm);
    let gps = globalfuse::simkit::make_gps(&syn.trajectory, 10.0, &ext_true, &lever, 0.2, &config.gps.dropouts, seed);
    let odo = make_odometry(&syn.states, &config.odometry.drift, &config.odometry.noise, seed).unwrap();
    let est_config = EstimatorConfig {
        lever_arm: config.lever_arm,
        imu_noise: spec.imu_errors.as_noise(),
        ..EstimatorConfig::default()
    };
    let mut est = Estimator::new(syn.states[0], ImuBuffer::new(syn.imu.clone()).unwrap(), est_config).unwrap();
    let mut fixed_at: Option<ExtrinsicsGW<f64>> = None;
    let mut stages = vec![est.stage()];
    let mut fixes = gps.iter().peekable();
    for (k, f) in odo.iter().enumerate() {
        let t = syn.states[k + 1].t;
        while let Some(z) = fixes.next_if(|z| z.t < t) {
            est.add_gps(*z).unwrap();
            if stages.last() != Some(&est.stage()) {
                stages.push(est.stage());
            }
            if let Some(e) = fixed_at {
                assert_eq!(*est.extrinsics(), e);
            } else if est.extrinsics().fixed {
                fixed_at = Some(*est.extrinsics());
            }
        }
        est.add_odometry(t, f.measured, f.covariance).unwrap();
    }
    est.finish().unwrap();
    assert_eq!(*est.extrinsics(), fixed_at.unwrap());
    assert_eq!(
        stages,
        [Stage::Initialising, Stage::Initialised, Stage::ReInitialising, Stage::Initialised]
    );
    assert!(est.live_trajectory().len() > 400);
}

#[test]
fn baseline_keeps_extrinsics_free_and_never_batch_solves() {
    let mut config = dropout_config();
    config.estimator.mode = PipelineMode::SvdOnce;
    let run = run_repetition(&config, 11).unwrap();
    let kinds: Vec<_> = run.report.events.iter().map(|e| e.kind).collect();
    assert_eq!(kinds, [EventKind::Initialisation]);
    assert_eq!(run.report.full_solves, 0);
}

#[test]
fn full_gps_error_below_twice_noise() {
    let run = run_repetition(&ScenarioConfig::default(), 21).unwrap();
    assert!(run.report.ate.rmse < 0.4, "{}", run.report.ate.rmse);
    assert_eq!(run.report.ate.mode, AteMode::RawGlobal);
    assert!(run.report.extrinsics_error.yaw.abs() < 3.0 * 1f64.to_radians());
}

#[test]
fn gps_free_error_is_the_odometry_drift() {
    let mut config = ScenarioConfig {
        repetitions: 1,
        ..ScenarioConfig::default()
    };
    config.gps.enabled = false;
    let seed = 5;
    let run = run_repetition(&config, seed).unwrap();
    assert!(run.report.events.is_empty());
    assert_eq!(run.report.ate.mode, AteMode::Aligned4Dof);
    // Dead reckoning through the same odometry, evaluated the same way.
    let spec = TrajectorySpec {
        seed,
        ..config.trajectory.clone()
    };
    let syn = synthesize(&spec).unwrap();
    let odo = make_odometry(&syn.states, &config.odometry.drift, &config.odometry.noise, seed).unwrap();
    let reckoned: Vec<_> = dead_reckon(syn.states[0].pose(), &odo)
        .iter()
        .zip(&syn.states)
        .map(|(p, s)| (s.t, p.translation))
        .collect();
    let truth: Vec<_> = syn.states.iter().map(|s| (s.t, s.position)).collect();
    let drift = compute_ate(&reckoned, &truth, AteMode::Aligned4Dof).unwrap().rmse;
    let ratio = run.report.ate.rmse / drift;
    assert!((0.3..3.0).contains(&ratio), "estimate {} vs dead reckoning {drift}", run.report.ate.rmse);
}

#[test]
fn gps_before_first_state_is_rejected() {
    let syn = synthesize(&TrajectorySpec::default_loop(1)).unwrap();
    let mut first = syn.states[0];
    first.t = 1.0;
    let mut est = Estimator::new(first, ImuBuffer::new(syn.imu).unwrap(), EstimatorConfig::default()).unwrap();
    let z = GpsMeasurement::isotropic(0.5, Vector3::zeros(), 0.2);
    assert!(matches!(est.add_gps(z), Err(Error::MeasurementBeforeAnchor { .. })));
}

/// Truth before the outage, dead-reckoned drifting odometry from the start
/// of the outage on, and GPS-fix factors on every state after it.
struct Outage {
    problem: GraphProblem<f64>,
    truth: Vec<NavState<f64>>,
    fixes: Vec<GpsFactor<f64>>,
    pivot: usize,
    end: usize,
    lever: Vector3<f64>,
}

fn outage(drift: OdometryDrift) -> Outage {
    let spec = TrajectorySpec::default_loop(17);
    let syn = synthesize(&spec).unwrap();
    let truth = syn.states;
    let odo = make_odometry(&truth, &drift, &OdometryNoise::default(), 17).unwrap();
    let (pivot, end) = (165, 330);
    let mut ext = sample_extrinsics(17);
    ext.fixed = true;
    let lever = Vector3::new(0.1, 0.05, 0.2);
    let reckoned = dead_reckon(truth[pivot].pose(), &odo[pivot..]);
    let mut problem = GraphProblem::default();
    problem.extrinsics = ext;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let noise = Normal::new(0.0, 0.2).unwrap();
    let mut fixes = Vec::new();
    for (k, s) in truth.iter().enumerate() {
        let pose = if k <= pivot { s.pose() } else { reckoned[k - pivot] };
        problem
            .add_state(NavState::new(s.t, pose, s.velocity, ImuBias::zero()))
            .unwrap();
        let z = ext.to_global(&s.pose().transform_point(&lever))
            + Vector3::from_fn(|_, _| noise.sample(&mut rng));
        let f = GpsFactor {
            measurement: GpsMeasurement::isotropic(s.t, z, 0.2),
            anchor: StateId(k),
            preint: PreintegratedImu::empty(s.t, ImuBias::zero()),
            lever_arm: lever,
        };
        if k <= pivot {
            problem.add_gps_factor(f).unwrap();
            problem.fix_state(StateId(k)).unwrap();
        } else if k >= end {
            fixes.push(f);
        }
    }
    Outage {
        problem,
        truth,
        fixes,
        pivot,
        end,
        lever,
    }
}

fn ate_from(problem: &GraphProblem<f64>, truth: &[NavState<f64>], from: usize) -> f64 {
    let est: Vec<_> = problem.states()[from..].iter().map(|s| (s.t, s.position)).collect();
    let tru: Vec<_> = truth[from..].iter().map(|s| (s.t, s.position)).collect();
    compute_ate(&est, &tru, AteMode::RawGlobal).unwrap().rmse
}

#[test]
fn position_alignment_lands_on_the_fix() {
    let mut o = outage(OdometryDrift {
        scale: 0.01,
        yaw_per_metre: 0.0,
    });
    let trigger = o.fixes[0].clone();
    let g = o.problem.gravity;
    let before = gps_residual(&trigger, o.problem.state(trigger.anchor).unwrap(), &o.problem.extrinsics, &g)
        .unwrap()
        .residual
        .norm();
    let rotations: Vec<_> = o.problem.states().iter().map(|s| s.rotation).collect();
    let c = position_align(&mut o.problem, &trigger).unwrap();
    assert_eq!(c.segment.pivot, StateId(o.pivot));
    assert_eq!(c.segment.last, StateId(o.end));
    let s = o.problem.state(trigger.anchor).unwrap();
    let after = gps_residual(&trigger, s, &o.problem.extrinsics, &g).unwrap().residual.norm();
    assert!(after <= before && after < 1e-9);
    assert!(o.problem.states().iter().zip(&rotations).all(|(s, r)| s.rotation == *r));
    // Whatever remains is the fix noise plus the lever arm seen through the orientation error.
    let truth = &o.truth[o.end];
    let noise = (o.problem.extrinsics.to_world(&trigger.measurement.position) - truth.pose().transform_point(&o.lever)).norm();
    let orientation = s.rotation.angle_to(&truth.rotation) * o.lever.norm();
    assert!((s.position - truth.position).norm() <= noise + orientation + 1e-9);
}

#[test]
fn full_alignment_halves_the_position_only_error() {
    let drift = OdometryDrift {
        scale: 0.01,
        yaw_per_metre: 0.1 / 66.0,
    };
    let mut o = outage(drift);
    let trigger = o.fixes[0].clone();
    position_align(&mut o.problem, &trigger).unwrap();
    let position_only = ate_from(&o.problem, &o.truth, o.pivot);

    let collected = &o.fixes[..50];
    let segment = dropout_segment(&o.problem, &trigger).unwrap();
    let (ext_new, report) = reinitialise(&o.problem, collected, 1f64.to_radians()).unwrap();
    assert!(report.observable);
    let last = collected.last().unwrap();
    let g = o.problem.gravity;
    let res = |p: &GraphProblem<f64>| {
        gps_residual(last, p.state(last.anchor).unwrap(), &p.extrinsics, &g)
            .unwrap()
            .residual
            .norm()
    };
    let before = res(&o.problem);
    full_align(&mut o.problem, &ext_new, segment).unwrap();
    assert!(res(&o.problem) <= before);
    let full = ate_from(&o.problem, &o.truth, o.pivot);
    assert!(full <= 0.5 * position_only, "full {full} vs position-only {position_only}");
}

#[test]
fn batch_refinement_after_alignment_lowers_cost() {
    let mut o = outage(OdometryDrift {
        scale: 0.01,
        yaw_per_metre: 1e-3,
    });
    // Odometry links so that the batch solve has something to reconcile.
    let odo = make_odometry(&o.truth, &OdometryDrift::default(), &OdometryNoise::default(), 5).unwrap();
    for f in odo {
        o.problem.add_relpose_factor(f).unwrap();
    }
    let mut unaligned = o.problem.clone();
    for f in &o.fixes {
        unaligned.add_gps_factor(f.clone()).unwrap();
    }
    let unaligned = unaligned.cost().unwrap();
    position_align(&mut o.problem, &o.fixes[0]).unwrap();
    for f in &o.fixes {
        o.problem.add_gps_factor(f.clone()).unwrap();
    }
    assert!(o.problem.cost().unwrap() < unaligned);
    let report = o.problem.solve_full().unwrap();
    assert!(report.final_cost < unaligned);
    assert!(report.final_cost <= report.initial_cost);
}

#[test]
fn single_pose_identity_helper() {
    // Global poses combine the extrinsics with the state pose.
    let syn = synthesize(&TrajectorySpec::default_loop(2)).unwrap();
    let est = Estimator::new(syn.states[0], ImuBuffer::new(syn.imu).unwrap(), EstimatorConfig::default()).unwrap();
    let poses = est.global_poses();
    assert_eq!(poses.len(), 1);
    assert_eq!(poses[0].1, Pose3::identity().compose(&syn.states[0].pose()));
}
