//! Trajectory error evaluation and the synthetic scenario runner.

use std::path::Path;

use log::info;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::align::svd_init;
use crate::error::{Error, Result};
use crate::estimator::{AlignmentEvent, Estimator, EstimatorConfig, PipelineMode};
use crate::factors::{ExtrinsicsGW, GpsMeasurement};
use crate::geom::Pose3;
use crate::imu::ImuBuffer;
use crate::simkit::{
    make_gps, make_odometry, sample_extrinsics, synthesize, DropoutPattern, OdometryDrift, OdometryNoise,
    TrajectorySpec,
};

/// Maximum timestamp difference for associating estimate and truth.
pub const ASSOCIATION_TOLERANCE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AteMode {
    /// Estimate and truth are both already in `G`.
    RawGlobal,
    /// A 4-DoF fit of the estimate onto the truth is removed first.
    #[serde(rename = "aligned_4dof")]
    Aligned4Dof,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AteResult {
    pub mode: AteMode,
    pub rmse: f64,
    pub median: f64,
    pub errors: Vec<f64>,
    /// `[yaw, tx, ty, tz]` of the fit, in aligned mode.
    pub alignment: Option<[f64; 4]>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Position error against truth after nearest-timestamp association.
/// `truth` must be sorted by time.
pub fn compute_ate(
    estimate: &[(f64, Vector3<f64>)],
    truth: &[(f64, Vector3<f64>)],
    mode: AteMode,
) -> Result<AteResult> {
    let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = estimate
        .iter()
        .filter_map(|(t, p)| {
            let k = truth.partition_point(|(tt, _)| tt < t);
            let nearest = [k.checked_sub(1), Some(k)]
                .into_iter()
                .flatten()
                .filter_map(|i| truth.get(i))
                .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))?;
            ((nearest.0 - t).abs() <= ASSOCIATION_TOLERANCE).then_some((*p, nearest.1))
        })
        .collect();
    if pairs.len() < 2 {
        return Err(Error::TooFewAssociations(pairs.len()));
    }
    let fit = match mode {
        AteMode::RawGlobal => None,
        AteMode::Aligned4Dof => Some(svd_init(&pairs)?),
    };
    let errors: Vec<f64> = pairs
        .iter()
        .map(|(p, q)| {
            let mapped = fit.as_ref().map_or(*p, |f| f.to_global(p));
            (mapped - q).norm()
        })
        .collect();
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
    Ok(AteResult {
        mode,
        rmse,
        median: median(&errors),
        alignment: fit.map(|f| [f.yaw, f.translation.x, f.translation.y, f.translation.z]),
        errors,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpsSettings {
    pub enabled: bool,
    /// Per-axis noise, metres.
    pub sigma: f64,
    pub dropouts: DropoutPattern,
}

impl Default for GpsSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            sigma: 0.2,
            dropouts: DropoutPattern::none(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdometrySettings {
    pub drift: OdometryDrift,
    pub noise: OdometryNoise,
}

/// A complete synthetic experiment. The estimator's lever arm and IMU
/// noise are taken from the simulation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub trajectory: TrajectorySpec,
    pub gps: GpsSettings,
    pub odometry: OdometrySettings,
    pub estimator: EstimatorConfig,
    /// `p_SA` used both to simulate and to estimate.
    pub lever_arm: [f64; 3],
    pub repetitions: usize,
    /// Explicit seeds; when empty, `trajectory.seed + k` is used.
    pub seeds: Vec<u64>,
    /// Defaults to raw-global when GPS is used, 4-DoF aligned otherwise.
    pub ate_mode: Option<AteMode>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "loop".into(),
            trajectory: TrajectorySpec::default_loop(0),
            gps: GpsSettings::default(),
            odometry: OdometrySettings {
                drift: OdometryDrift {
                    scale: 0.01,
                    yaw_per_metre: 5e-4,
                },
                noise: OdometryNoise::default(),
            },
            estimator: EstimatorConfig::default(),
            lever_arm: [0.1, 0.05, 0.2],
            repetitions: 3,
            seeds: Vec::new(),
            ate_mode: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if !self.seeds.is_empty() && self.seeds.len() != self.repetitions {
            return Err(Error::Config("seeds must list one seed per repetition".into()));
        }
        if self.gps.enabled && !(self.gps.sigma >= 0.0) {
            return Err(Error::Config("gps.sigma must be non-negative".into()));
        }
        self.trajectory.validate()?;
        self.gps.dropouts.validate()?;
        self.estimator.validate()
    }

    pub fn seed(&self, repetition: usize) -> u64 {
        self.seeds
            .get(repetition)
            .copied()
            .unwrap_or(self.trajectory.seed + repetition as u64)
    }

    pub fn ate_mode(&self) -> AteMode {
        self.ate_mode.unwrap_or(if self.gps.enabled {
            AteMode::RawGlobal
        } else {
            AteMode::Aligned4Dof
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicsError {
    pub yaw: f64,
    pub translation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    pub seed: u64,
    pub ate: AteResult,
    pub extrinsics_error: ExtrinsicsError,
    pub num_states: usize,
    pub num_gps: usize,
    pub window_solves: usize,
    pub full_solves: usize,
    pub events: Vec<AlignmentEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub mode: PipelineMode,
    pub ate_mode: AteMode,
    pub median_ate: f64,
    pub repetitions: Vec<RepetitionReport>,
}

impl ScenarioReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Trajectories of one repetition in `G`, for plotting.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RepetitionReport,
    pub truth: Vec<(f64, Pose3<f64>)>,
    pub live: Vec<(f64, Vector3<f64>)>,
    pub estimate: Vec<(f64, Pose3<f64>)>,
    pub gps: Vec<GpsMeasurement<f64>>,
}

fn positions(poses: &[(f64, Pose3<f64>)]) -> Vec<(f64, Vector3<f64>)> {
    poses.iter().map(|(t, p)| (*t, p.translation)).collect()
}

/// Simulates and estimates one repetition.
pub fn run_repetition(config: &ScenarioConfig, seed: u64) -> Result<RunOutput> {
    let spec = TrajectorySpec {
        seed,
        ..config.trajectory.clone()
    };
    let syn = synthesize(&spec)?;
    let ext_true = sample_extrinsics(seed);
    let lever = Vector3::from(config.lever_arm);
    let gps = if config.gps.enabled {
        make_gps(
            &syn.trajectory,
            spec.gps_rate,
            &ext_true,
            &lever,
            config.gps.sigma,
            &config.gps.dropouts,
            seed,
        )
    } else {
        Vec::new()
    };
    let odometry = make_odometry(&syn.states, &config.odometry.drift, &config.odometry.noise, seed)?;
    let estimator_config = EstimatorConfig {
        lever_arm: config.lever_arm,
        imu_noise: spec.imu_errors.as_noise(),
        ..config.estimator.clone()
    };
    let mut est = Estimator::new(syn.states[0], ImuBuffer::new(syn.imu)?, estimator_config)?;
    let mut fixes = gps.iter().peekable();
    for (k, f) in odometry.iter().enumerate() {
        let t = syn.states[k + 1].t;
        while let Some(z) = fixes.next_if(|z| z.t < t) {
            est.add_gps(*z)?;
        }
        est.add_odometry(t, f.measured, f.covariance)?;
    }
    for z in fixes {
        est.add_gps(*z)?;
    }
    est.finish()?;

    let ext = *est.extrinsics();
    let truth: Vec<(f64, Pose3<f64>)> = syn
        .states
        .iter()
        .map(|s| (s.t, ext_true.pose().compose(&s.pose())))
        .collect();
    let mode = config.ate_mode();
    let estimate = est.global_poses();
    let ate = match mode {
        AteMode::RawGlobal => compute_ate(&positions(&estimate), &positions(&truth), mode)?,
        // The fit absorbs the frame, so compare in W directly.
        AteMode::Aligned4Dof => {
            let w: Vec<_> = est
                .problem()
                .states()
                .iter()
                .map(|s| (s.t, s.position))
                .collect();
            compute_ate(&w, &positions(&truth), mode)?
        }
    };
    let extrinsics_error = extrinsics_error(&ext, &ext_true);
    let (window_solves, full_solves) = est.solve_counts();
    info!(
        "seed {seed}: ATE {:.4} m ({:?}), {} events",
        ate.rmse,
        mode,
        est.events().len()
    );
    Ok(RunOutput {
        report: RepetitionReport {
            seed,
            ate,
            extrinsics_error,
            num_states: est.problem().num_states(),
            num_gps: gps.len(),
            window_solves,
            full_solves,
            events: est.events().to_vec(),
        },
        truth,
        live: est
            .live_trajectory()
            .iter()
            .map(|p| (p.t, Vector3::from(p.position)))
            .collect(),
        estimate,
        gps,
    })
}

fn extrinsics_error(est: &ExtrinsicsGW<f64>, truth: &ExtrinsicsGW<f64>) -> ExtrinsicsError {
    let d = est.yaw - truth.yaw;
    ExtrinsicsError {
        yaw: d.sin().atan2(d.cos()),
        translation: (est.translation - truth.translation).norm(),
    }
}

/// Runs all repetitions (in parallel) and reports them in seed order.
pub fn run_scenario_outputs(config: &ScenarioConfig) -> Result<Vec<RunOutput>> {
    config.validate()?;
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.repetitions)
            .map(|k| {
                let seed = config.seed(k);
                scope.spawn(move || run_repetition(config, seed))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("repetition thread panicked"))
            .collect()
    })
}

pub fn summarise(config: &ScenarioConfig, runs: &[RunOutput]) -> ScenarioReport {
    let ates: Vec<f64> = runs.iter().map(|r| r.report.ate.rmse).collect();
    ScenarioReport {
        name: config.name.clone(),
        mode: config.estimator.mode,
        ate_mode: config.ate_mode(),
        median_ate: median(&ates),
        repetitions: runs.iter().map(|r| r.report.clone()).collect(),
    }
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioReport> {
    Ok(summarise(config, &run_scenario_outputs(config)?))
}

/// One cell of a dropout sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dropouts: DropoutPattern,
    pub mode: PipelineMode,
    pub median_ate: f64,
    pub ates: Vec<f64>,
}

/// Evaluates every pipeline mode on every dropout pattern with the same seeds.
pub fn sweep(base: &ScenarioConfig, patterns: &[DropoutPattern], modes: &[PipelineMode]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for pattern in patterns {
        for mode in modes {
            let mut config = base.clone();
            config.gps.dropouts = pattern.clone();
            config.estimator.mode = *mode;
            let report = run_scenario(&config)?;
            rows.push(SweepRow {
                dropouts: pattern.clone(),
                mode: *mode,
                median_ate: report.median_ate,
                ates: report.repetitions.iter().map(|r| r.ate.rmse).collect(),
            });
        }
    }
    Ok(rows)
}

/// Dropout patterns of the form "one 33% gap" and "two 20% gaps".
pub fn standard_patterns() -> Vec<DropoutPattern> {
    vec![
        DropoutPattern::none(),
        DropoutPattern(vec![[0.33, 0.66]]),
        DropoutPattern(vec![[0.2, 0.4], [0.6, 0.8]]),
    ]
}
