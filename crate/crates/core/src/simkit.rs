//! Synthetic trajectories, IMU synthesis and noisy GPS / odometry generation.

use nalgebra::{Matrix6, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{ExtrinsicsGW, GpsMeasurement, RelPoseFactor, StateId};
use crate::geom::{exp_so3, yaw_rotation, Pose3};
use crate::imu::{default_gravity, ImuBias, ImuNoise, ImuSample, NavState};

/// Random-number streams, one per purpose, so that changing one generator
/// does not shift the others.
mod stream {
    pub const IMU: u64 = 1;
    pub const GPS: u64 = 2;
    pub const ODOMETRY: u64 = 3;
    pub const EXTRINSICS: u64 = 4;
}

fn rng(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(purpose);
    r
}

fn gaussian3(r: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(
        StandardNormal.sample(r),
        StandardNormal.sample(r),
        StandardNormal.sample(r),
    )
}

/// Planar path in the horizontal plane, parameterised by `u` (metres for
/// the loop and straight shapes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Loop { radius: f64 },
    FigureEight { half_width: f64 },
    Straight { heading: f64 },
    /// Closed Catmull-Rom spline through the points.
    Waypoints { points: Vec<[f64; 2]> },
}

impl Shape {
    /// `c(u)`, `c'(u)`, `c''(u)`.
    fn eval(&self, u: f64) -> [Vector2<f64>; 3] {
        match self {
            Shape::Loop { radius: r } => {
                let (s, c) = (u / r).sin_cos();
                [
                    Vector2::new(r * s, r * (1.0 - c)),
                    Vector2::new(c, s),
                    Vector2::new(-s / r, c / r),
                ]
            }
            Shape::FigureEight { half_width: a } => {
                let w = 1.0 / a;
                let x = w * u;
                [
                    Vector2::new(a * x.sin(), 0.5 * a * (2.0 * x).sin()),
                    Vector2::new(x.cos(), (2.0 * x).cos()),
                    Vector2::new(-w * x.sin(), -2.0 * w * (2.0 * x).sin()),
                ]
            }
            Shape::Straight { heading } => {
                let d = Vector2::new(heading.cos(), heading.sin());
                [d * u, d, Vector2::zeros()]
            }
            Shape::Waypoints { points } => catmull_rom(points, u),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Loop { radius } => *radius > 0.0,
            Shape::FigureEight { half_width } => *half_width > 0.0,
            Shape::Straight { heading } => heading.is_finite(),
            Shape::Waypoints { points } => {
                points.len() >= 3
                    && points
                        .iter()
                        .zip(points.iter().cycle().skip(1))
                        .all(|(a, b)| a != b)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid trajectory shape {self:?}")))
        }
    }
}

fn catmull_rom(points: &[[f64; 2]], u: f64) -> [Vector2<f64>; 3] {
    let n = points.len();
    let p = |i: isize| {
        let q = points[i.rem_euclid(n as isize) as usize];
        Vector2::new(q[0], q[1])
    };
    let length = (0..n as isize).map(|i| (p(i + 1) - p(i)).norm()).sum::<f64>() / n as f64;
    let x = u / length;
    let i = x.floor() as isize;
    let s = x - x.floor();
    let (p0, p1, p2, p3) = (p(i - 1), p(i), p(i + 1), p(i + 2));
    let a = p1 * 2.0;
    let b = p2 - p0;
    let c = p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3;
    let d = -p0 + p1 * 3.0 - p2 * 3.0 + p3;
    let pos = (a + b * s + c * s * s + d * s * s * s) * 0.5;
    let vel = (b + c * (2.0 * s) + d * (3.0 * s * s)) * (0.5 / length);
    let acc = (c * 2.0 + d * (6.0 * s)) * (0.5 / (length * length));
    [pos, vel, acc]
}

/// Path parameter as a function of time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpeedProfile {
    Constant { speed: f64 },
    /// `ṡ = mean + amplitude · sin(2πt / period)`.
    Sinusoidal { mean: f64, amplitude: f64, period: f64 },
}

impl SpeedProfile {
    /// `s(t)`, `ṡ(t)`, `s̈(t)`.
    fn eval(&self, t: f64) -> [f64; 3] {
        match *self {
            SpeedProfile::Constant { speed } => [speed * t, speed, 0.0],
            SpeedProfile::Sinusoidal {
                mean,
                amplitude,
                period,
            } => {
                let w = 2.0 * std::f64::consts::PI / period;
                let (s, c) = (w * t).sin_cos();
                [
                    mean * t + amplitude / w * (1.0 - c),
                    mean + amplitude * s,
                    amplitude * w * c,
                ]
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            SpeedProfile::Constant { speed } => speed > 0.0,
            SpeedProfile::Sinusoidal {
                mean,
                amplitude,
                period,
            } => mean > 0.0 && amplitude.abs() < mean && period > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid speed profile {self:?}")))
        }
    }
}

/// Densities of the synthesised IMU errors; zero gives exact samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuErrorModel {
    pub gyro_noise: f64,
    pub accel_noise: f64,
    pub gyro_walk: f64,
    pub accel_walk: f64,
}

impl Default for ImuErrorModel {
    fn default() -> Self {
        Self {
            gyro_noise: 2e-3,
            accel_noise: 2e-2,
            gyro_walk: 2e-5,
            accel_walk: 2e-4,
        }
    }
}

impl ImuErrorModel {
    pub fn zero() -> Self {
        Self {
            gyro_noise: 0.0,
            accel_noise: 0.0,
            gyro_walk: 0.0,
            accel_walk: 0.0,
        }
    }

    /// The same densities in the form the estimator consumes, floored so
    /// that noise-free data still yields invertible covariances.
    pub fn as_noise(&self) -> ImuNoise<f64> {
        ImuNoise {
            gyro_noise: self.gyro_noise.max(1e-6),
            accel_noise: self.accel_noise.max(1e-5),
            gyro_walk: self.gyro_walk.max(1e-7),
            accel_walk: self.accel_walk.max(1e-6),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub shape: Shape,
    pub duration: f64,
    pub speed: SpeedProfile,
    #[serde(default = "default_imu_rate")]
    pub imu_rate: f64,
    #[serde(default = "default_gps_rate")]
    pub gps_rate: f64,
    /// Rate of estimator states (odometry keyframes).
    #[serde(default = "default_state_rate")]
    pub state_rate: f64,
    #[serde(default)]
    pub imu_errors: ImuErrorModel,
    #[serde(default)]
    pub seed: u64,
}

fn default_imu_rate() -> f64 {
    200.0
}
fn default_gps_rate() -> f64 {
    10.0
}
fn default_state_rate() -> f64 {
    5.0
}

impl TrajectorySpec {
    /// A 200 m loop driven at 2 m/s.
    pub fn default_loop(seed: u64) -> Self {
        Self {
            shape: Shape::Loop {
                radius: 100.0 / std::f64::consts::PI,
            },
            duration: 100.0,
            speed: SpeedProfile::Constant { speed: 2.0 },
            imu_rate: default_imu_rate(),
            gps_rate: default_gps_rate(),
            state_rate: default_state_rate(),
            imu_errors: ImuErrorModel::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        self.speed.validate()?;
        let rates = [self.duration, self.imu_rate, self.gps_rate, self.state_rate];
        if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Config("duration and rates must be positive".into()));
        }
        Ok(())
    }

    pub fn trajectory(&self) -> Result<Trajectory> {
        self.validate()?;
        Ok(Trajectory {
            shape: self.shape.clone(),
            speed: self.speed,
            duration: self.duration,
        })
    }
}

/// Kinematic truth at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub pose: Pose3<f64>,
    pub velocity: Vector3<f64>,
    /// World-frame acceleration.
    pub acceleration: Vector3<f64>,
    /// Body-frame angular rate.
    pub omega: Vector3<f64>,
}

/// Analytic trajectory; the body is level and faces along the path.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    shape: Shape,
    speed: SpeedProfile,
    duration: f64,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn at(&self, t: f64) -> TruthSample {
        let [s, sd, sdd] = self.speed.eval(t);
        let [c, c1, c2] = self.shape.eval(s);
        let vel = c1 * sd;
        let acc = c2 * (sd * sd) + c1 * sdd;
        let heading = c1.y.atan2(c1.x);
        let yaw_rate = (c1.x * c2.y - c1.y * c2.x) / c1.norm_squared() * sd;
        TruthSample {
            t,
            pose: Pose3::new(yaw_rotation(heading), Vector3::new(c.x, c.y, 0.0)),
            velocity: Vector3::new(vel.x, vel.y, 0.0),
            acceleration: Vector3::new(acc.x, acc.y, 0.0),
            omega: Vector3::new(0.0, 0.0, yaw_rate),
        }
    }

    /// Exact body-frame IMU measurement at `t`.
    pub fn imu_at(&self, t: f64) -> ImuSample<f64> {
        let s = self.at(t);
        let accel = s
            .pose
            .rotation
            .inverse()
            .rotate(&(s.acceleration - default_gravity::<f64>()));
        ImuSample::new(t, s.omega, accel)
    }

    /// Truth samples at `rate` over `[0, duration]`.
    pub fn sample(&self, rate: f64) -> Vec<TruthSample> {
        sample_times(self.duration, rate)
            .map(|t| self.at(t))
            .collect()
    }
}

/// `k / rate` for every `k` with `k / rate ≤ duration`.
pub fn sample_times(duration: f64, rate: f64) -> impl Iterator<Item = f64> {
    let n = (duration * rate + 1e-9).floor() as usize;
    (0..=n).map(move |k| k as f64 / rate)
}

/// Truth at state rate, IMU samples and the analytic trajectory they came from.
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub trajectory: Trajectory,
    pub states: Vec<NavState<f64>>,
    pub imu: Vec<ImuSample<f64>>,
}

pub fn synthesize(spec: &TrajectorySpec) -> Result<Synthesis> {
    let trajectory = spec.trajectory()?;
    let mut r = rng(spec.seed, stream::IMU);
    let e = spec.imu_errors;
    let h = 1.0 / spec.imu_rate;
    let mut bias = ImuBias::zero();
    let mut imu = Vec::new();
    let mut biases = Vec::new();
    for t in sample_times(spec.duration, spec.imu_rate) {
        let exact = trajectory.imu_at(t);
        let gyro = exact.gyro + bias.gyro + gaussian3(&mut r) * (e.gyro_noise / h.sqrt());
        let accel = exact.accel + bias.accel + gaussian3(&mut r) * (e.accel_noise / h.sqrt());
        imu.push(ImuSample::new(t, gyro, accel));
        biases.push(bias);
        bias.gyro += gaussian3(&mut r) * (e.gyro_walk * h.sqrt());
        bias.accel += gaussian3(&mut r) * (e.accel_walk * h.sqrt());
    }
    let states = sample_times(spec.duration, spec.state_rate)
        .map(|t| {
            let s = trajectory.at(t);
            let k = ((t * spec.imu_rate).round() as usize).min(biases.len() - 1);
            NavState::new(t, s.pose, s.velocity, biases[k])
        })
        .collect();
    Ok(Synthesis {
        trajectory,
        states,
        imu,
    })
}

/// GPS-off intervals as fractions of the run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DropoutPattern(pub Vec<[f64; 2]>);

impl DropoutPattern {
    pub fn none() -> Self {
        Self(Vec::new())
    }

    pub fn new(intervals: Vec<[f64; 2]>) -> Result<Self> {
        let p = Self(intervals);
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let mut sorted = self.0.clone();
        sorted.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let inside = sorted
            .iter()
            .all(|[a, b]| 0.0 <= *a && a < b && *b <= 1.0);
        let disjoint = sorted.windows(2).all(|w| w[0][1] <= w[1][0]);
        if inside && disjoint {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid dropout pattern {:?}", self.0)))
        }
    }

    pub fn contains(&self, fraction: f64) -> bool {
        self.0.iter().any(|[a, b]| *a <= fraction && fraction < *b)
    }

    /// Fraction of time with GPS switched off.
    pub fn coverage(&self) -> f64 {
        self.0.iter().map(|[a, b]| b - a).sum()
    }
}

/// Noisy fixes of the antenna in `G` at `rate`, skipping dropouts.
pub fn make_gps(
    trajectory: &Trajectory,
    rate: f64,
    ext_true: &ExtrinsicsGW<f64>,
    lever_arm: &Vector3<f64>,
    sigma: f64,
    pattern: &DropoutPattern,
    seed: u64,
) -> Vec<GpsMeasurement<f64>> {
    let mut r = rng(seed, stream::GPS);
    let duration = trajectory.duration();
    sample_times(duration, rate)
        .filter_map(|t| {
            // Draw for every epoch so the noise does not depend on the pattern.
            let n = gaussian3(&mut r) * sigma;
            if pattern.contains(t / duration) {
                return None;
            }
            let pose = trajectory.at(t).pose;
            let antenna = pose.transform_point(lever_arm);
            Some(GpsMeasurement::isotropic(
                t,
                ext_true.to_global(&antenna) + n,
                sigma.max(1e-6),
            ))
        })
        .collect()
}

/// Systematic odometry error, emulating visual-inertial drift.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdometryDrift {
    /// Fractional translation scale error.
    pub scale: f64,
    /// Yaw error accumulated per metre travelled, rad/m.
    pub yaw_per_metre: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdometryNoise {
    /// Per-axis translation noise, metres.
    pub sigma_t: f64,
    /// Per-axis rotation noise, radians.
    pub sigma_r: f64,
}

impl Default for OdometryNoise {
    fn default() -> Self {
        Self {
            sigma_t: 0.01,
            sigma_r: 5e-4,
        }
    }
}

impl OdometryNoise {
    pub fn zero() -> Self {
        Self {
            sigma_t: 0.0,
            sigma_r: 0.0,
        }
    }

    pub fn covariance(&self) -> Matrix6<f64> {
        let t = self.sigma_t.max(1e-6).powi(2);
        let r = self.sigma_r.max(1e-6).powi(2);
        Matrix6::from_diagonal(&Vector6::new(t, t, t, r, r, r))
    }
}

/// Relative poses between consecutive truth states, corrupted by drift and noise.
pub fn make_odometry(
    truth: &[NavState<f64>],
    drift: &OdometryDrift,
    noise: &OdometryNoise,
    seed: u64,
) -> Result<Vec<RelPoseFactor<f64>>> {
    let mut r = rng(seed, stream::ODOMETRY);
    let cov = noise.covariance();
    truth
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let rel = w[0].pose().between(&w[1].pose());
            let dist = rel.translation.norm();
            let translation = rel.translation * (1.0 + drift.scale) + gaussian3(&mut r) * noise.sigma_t;
            let rotation = exp_so3(&(gaussian3(&mut r) * noise.sigma_r))
                .compose(&yaw_rotation(drift.yaw_per_metre * dist))
                .compose(&rel.rotation);
            RelPoseFactor::new(StateId(k), StateId(k + 1), Pose3::new(rotation, translation), cov)
        })
        .collect()
}

/// Chains relative poses from `start`.
pub fn dead_reckon(start: Pose3<f64>, factors: &[RelPoseFactor<f64>]) -> Vec<Pose3<f64>> {
    let mut poses = vec![start];
    for f in factors {
        let last = *poses.last().expect("non-empty");
        poses.push(last.compose(&f.measured));
    }
    poses
}

/// Hidden `T_GW` for a scenario: uniform yaw, translation within
/// ±100 m horizontally and ±5 m vertically.
pub fn sample_extrinsics(seed: u64) -> ExtrinsicsGW<f64> {
    let mut r = rng(seed, stream::EXTRINSICS);
    let yaw = r.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let t = Vector3::new(
        r.random_range(-100.0..100.0),
        r.random_range(-100.0..100.0),
        r.random_range(-5.0..5.0),
    );
    ExtrinsicsGW::new(yaw, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::log_so3;
    use crate::imu::{predict, ImuBuffer};

    fn exact(shape: Shape, speed: SpeedProfile, duration: f64) -> TrajectorySpec {
        TrajectorySpec {
            shape,
            duration,
            speed,
            imu_rate: 200.0,
            gps_rate: 10.0,
            state_rate: 5.0,
            imu_errors: ImuErrorModel::zero(),
            seed: 1,
        }
    }

    #[test]
    fn straight_line_measures_only_gravity() {
        let spec = exact(Shape::Straight { heading: 0.3 }, SpeedProfile::Constant { speed: 1.5 }, 5.0);
        let syn = synthesize(&spec).unwrap();
        for s in &syn.imu {
            assert_eq!(s.gyro, Vector3::zeros());
            let expected = yaw_rotation(0.3).inverse().rotate(&-default_gravity::<f64>());
            assert!((s.accel - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn loop_acceleration_is_centripetal() {
        let (r, v) = (20.0, 3.0);
        let traj = exact(Shape::Loop { radius: r }, SpeedProfile::Constant { speed: v }, 30.0)
            .trajectory()
            .unwrap();
        for k in 0..50 {
            let t = k as f64 * 0.57;
            let imu = traj.imu_at(t);
            // Body y points to the centre of a left-turning circle.
            let expected = Vector3::new(0.0, v * v / r, 9.81);
            assert!((imu.accel - expected).norm() < 1e-9);
            assert!((imu.gyro.z - v / r).abs() < 1e-12);
        }
    }

    fn check_self_consistency(spec: &TrajectorySpec) {
        let syn = synthesize(spec).unwrap();
        let buffer = ImuBuffer::new(syn.imu.clone()).unwrap();
        let noise = ImuNoise::default();
        let g = default_gravity();
        for t0 in [0.0, 3.0, 7.4] {
            let a = syn.trajectory.at(t0);
            let b = syn.trajectory.at(t0 + 1.0);
            let start = NavState::new(t0, a.pose, a.velocity, ImuBias::zero());
            let pre = buffer.preintegrate(t0, t0 + 1.0, ImuBias::zero(), &noise).unwrap();
            let (end, _) = predict(&start, &pre, &g).unwrap();
            assert!((end.position - b.pose.translation).norm() < 1e-4, "{spec:?} at {t0}");
            assert!(log_so3(&end.rotation.compose(&b.pose.rotation.inverse())).norm() < 1e-6);
        }
    }

    #[test]
    fn preintegration_reproduces_truth() {
        check_self_consistency(&exact(Shape::Loop { radius: 15.0 }, SpeedProfile::Constant { speed: 2.0 }, 10.0));
        check_self_consistency(&exact(
            Shape::FigureEight { half_width: 12.0 },
            SpeedProfile::Sinusoidal {
                mean: 2.0,
                amplitude: 0.5,
                period: 4.0,
            },
            10.0,
        ));
    }

    #[test]
    fn waypoint_spline_is_continuous() {
        let shape = Shape::Waypoints {
            points: vec![[0.0, 0.0], [20.0, 0.0], [25.0, 15.0], [5.0, 20.0]],
        };
        let traj = exact(shape.clone(), SpeedProfile::Constant { speed: 2.0 }, 60.0)
            .trajectory()
            .unwrap();
        let mut prev = traj.at(0.0).pose.translation;
        for k in 1..6000 {
            let p = traj.at(k as f64 * 0.01).pose.translation;
            assert!((p - prev).norm() < 0.05);
            prev = p;
        }
        // The spline interpolates the waypoints.
        let [p, ..] = shape.eval(0.0);
        assert!(p.norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = TrajectorySpec::default_loop(0);
        spec.duration = 0.0;
        assert!(spec.validate().is_err());
        let mut spec = TrajectorySpec::default_loop(0);
        spec.speed = SpeedProfile::Sinusoidal {
            mean: 1.0,
            amplitude: 2.0,
            period: 1.0,
        };
        assert!(spec.validate().is_err());
        assert!(DropoutPattern::new(vec![[0.2, 0.5], [0.4, 0.6]]).is_err());
        assert!(DropoutPattern::new(vec![[0.6, 0.5]]).is_err());
        assert!(DropoutPattern::new(vec![[0.1, 0.2], [0.5, 1.0]]).is_ok());
    }

    #[test]
    fn noise_free_gps_is_truth() {
        let spec = TrajectorySpec::default_loop(3);
        let traj = spec.trajectory().unwrap();
        let gps = make_gps(&traj, 10.0, &ExtrinsicsGW::identity(), &Vector3::zeros(), 0.0, &DropoutPattern::none(), 3);
        assert_eq!(gps.len(), 1001);
        for z in &gps {
            assert!((z.position - traj.at(z.t).pose.translation).norm() < 1e-12);
        }
    }

    #[test]
    fn gps_noise_has_requested_sigma() {
        let spec = TrajectorySpec {
            duration: 1000.0,
            ..TrajectorySpec::default_loop(4)
        };
        let traj = spec.trajectory().unwrap();
        let ext = sample_extrinsics(4);
        let gps = make_gps(&traj, 10.0, &ext, &Vector3::zeros(), 0.2, &DropoutPattern::none(), 4);
        assert!(gps.len() >= 10_000);
        for axis in 0..3 {
            let errs: Vec<f64> = gps
                .iter()
                .map(|z| (z.position - ext.to_global(&traj.at(z.t).pose.translation))[axis])
                .collect();
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errs.len() - 1) as f64).sqrt();
            assert!((sd / 0.2 - 1.0).abs() < 0.03, "axis {axis}: {sd}");
        }
    }

    #[test]
    fn dropout_removes_its_share() {
        let traj = TrajectorySpec::default_loop(5).trajectory().unwrap();
        let pattern = DropoutPattern::new(vec![[0.33, 0.66]]).unwrap();
        let gps = make_gps(&traj, 10.0, &ExtrinsicsGW::identity(), &Vector3::zeros(), 0.2, &pattern, 5);
        let expected = (0.67f64 * 100.0 * 10.0).ceil();
        assert!((gps.len() as f64 - expected).abs() <= 1.0, "{}", gps.len());
        assert!(gps.iter().all(|z| !pattern.contains(z.t / 100.0)));
    }

    #[test]
    fn clean_odometry_reproduces_truth() {
        let syn = synthesize(&TrajectorySpec::default_loop(6)).unwrap();
        let odo = make_odometry(&syn.states, &OdometryDrift::default(), &OdometryNoise::zero(), 6).unwrap();
        let poses = dead_reckon(syn.states[0].pose(), &odo);
        for (p, s) in poses.iter().zip(&syn.states) {
            assert!((p.translation - s.position).norm() < 1e-9);
        }
    }

    #[test]
    fn scale_drift_on_straight_line() {
        let spec = exact(Shape::Straight { heading: 0.0 }, SpeedProfile::Constant { speed: 2.0 }, 50.0);
        let syn = synthesize(&spec).unwrap();
        let drift = OdometryDrift {
            scale: 0.01,
            yaw_per_metre: 0.0,
        };
        let odo = make_odometry(&syn.states, &drift, &OdometryNoise::zero(), 0).unwrap();
        let end = *dead_reckon(syn.states[0].pose(), &odo).last().unwrap();
        let err = (end.translation - syn.states.last().unwrap().position).norm();
        assert!((err - 1.0).abs() < 1e-9, "{err}");
    }

    #[test]
    fn yaw_drift_matches_closed_form_circle() {
        let (r, kappa) = (100.0 / std::f64::consts::PI, 1e-3);
        let spec = exact(Shape::Loop { radius: r }, SpeedProfile::Constant { speed: 2.0 }, 100.0);
        let syn = synthesize(&spec).unwrap();
        let drift = OdometryDrift {
            scale: 0.0,
            yaw_per_metre: kappa,
        };
        let odo = make_odometry(&syn.states, &drift, &OdometryNoise::zero(), 0).unwrap();
        let end = dead_reckon(syn.states[0].pose(), &odo).last().unwrap().translation;
        // Heading grows at 1/r + κ per metre: a circle of radius 1/(1/r + κ).
        let rd = 1.0 / (1.0 / r + kappa);
        let len = 200.0;
        let predicted = Vector3::new(rd * (len / rd).sin(), rd * (1.0 - (len / rd).cos()), 0.0);
        let truth_end = syn.states.last().unwrap().position;
        let (e_sim, e_ref) = ((end - truth_end).norm(), (predicted - truth_end).norm());
        assert!((e_sim / e_ref - 1.0).abs() < 0.05, "{e_sim} vs {e_ref}");
    }

    #[test]
    fn seeds_are_reproducible() {
        let spec = TrajectorySpec::default_loop(9);
        let a = synthesize(&spec).unwrap();
        let b = synthesize(&spec).unwrap();
        assert_eq!(a.imu, b.imu);
        assert_eq!(a.states, b.states);
        let c = synthesize(&TrajectorySpec::default_loop(10)).unwrap();
        assert_ne!(a.imu, c.imu);
        assert_eq!(sample_extrinsics(2), sample_extrinsics(2));
    }
}
