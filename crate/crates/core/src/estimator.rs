//! Online estimator: feeds odometry and GPS into the factor graph and runs
//! the initialisation / dropout / re-initialisation stage machine.

use std::io::Write;
use std::path::Path;

use log::{debug, info};
use nalgebra::{Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::align::{
    assess_observability, antenna_pairs, detect_dropout, dropout_segment, full_align, horizontal_baseline,
    position_align, reinitialise, svd_init, AlignmentCorrection, Segment,
};
use crate::error::{Error, Result};
use crate::factors::{ExtrinsicsGW, GpsFactor, GpsMeasurement, ImuFactor, RelPoseFactor, StateId};
use crate::geom::Pose3;
use crate::graph::{GraphProblem, SolveReport, SolverSettings};
use crate::imu::{predict, ImuBuffer, ImuNoise, ImuSample, NavState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// Observability-gated initialisation with drift alignment after dropouts.
    #[default]
    Criterion,
    /// Baseline: a single SVD alignment once the first fixes are spread out,
    /// extrinsics left free, no dropout handling and no batch refinement.
    SvdOnce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub mode: PipelineMode,
    /// Yaw standard deviation below which `T_GW` counts as observable, degrees.
    pub sigma_theta_deg: f64,
    /// Required horizontal spread of the first fixes, in multiples of `√trace(Σ_g0)`.
    pub baseline_sigmas: f64,
    /// `p_SA`, metres.
    pub lever_arm: [f64; 3],
    pub imu_noise: ImuNoise<f64>,
    pub solver: SolverSettings,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            mode: PipelineMode::Criterion,
            sigma_theta_deg: 1.0,
            baseline_sigmas: 3.0,
            lever_arm: [0.0; 3],
            imu_noise: ImuNoise::default(),
            solver: SolverSettings::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(self.sigma_theta_deg > 0.0) || !(self.baseline_sigmas >= 0.0) {
            return Err(Error::Config("sigma_theta_deg must be positive, baseline_sigmas non-negative".into()));
        }
        Ok(())
    }

    fn sigma_theta(&self) -> f64 {
        self.sigma_theta_deg.to_radians()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initialising,
    Initialised,
    ReInitialising,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// First SVD fit of `T_GW`.
    Initialisation,
    /// The observability test passed and `T_GW` was fixed.
    ExtrinsicsFixed,
    PositionAlign,
    FullAlign,
}

/// One entry of the alignment log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEvent {
    /// Time of the triggering GPS fix.
    pub t: f64,
    pub kind: EventKind,
    /// Yaw of the transform involved: `T_GW` for initialisation events,
    /// the estimated drift `T_WnewW` for alignments.
    pub yaw: f64,
    pub translation: [f64; 3],
    pub segment: Option<Segment>,
    /// Yaw variance from the observability test, when one was run.
    pub p_theta_theta: Option<f64>,
}

impl AlignmentEvent {
    fn from_pose(t: f64, kind: EventKind, pose: &Pose3<f64>) -> Self {
        Self {
            t,
            kind,
            yaw: pose.rotation.yaw(),
            translation: pose.translation.into(),
            segment: None,
            p_theta_theta: None,
        }
    }

    fn from_correction(t: f64, kind: EventKind, c: &AlignmentCorrection<f64>) -> Self {
        Self {
            segment: Some(c.segment),
            ..Self::from_pose(t, kind, &c.drift)
        }
    }
}

/// Writes one JSON object per line.
pub fn write_events_jsonl<W: Write>(mut writer: W, events: &[AlignmentEvent]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut writer, e)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_events_file(path: impl AsRef<Path>, events: &[AlignmentEvent]) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_events_jsonl(file, events)
}

/// Newest-state position in `G` right after its window solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LivePoint {
    pub t: f64,
    pub position: [f64; 3],
}

pub struct Estimator {
    problem: GraphProblem<f64>,
    imu: ImuBuffer<f64>,
    config: EstimatorConfig,
    lever_arm: Vector3<f64>,
    stage: Stage,
    /// Fixes seen before `T_GW` was first estimated.
    pending: Vec<GpsFactor<f64>>,
    initialised_once: bool,
    /// Post-dropout fixes gathered for re-initialisation; the first one is
    /// already in the graph.
    collected: Vec<GpsFactor<f64>>,
    segment: Option<Segment>,
    events: Vec<AlignmentEvent>,
    live: Vec<LivePoint>,
    window_solves: usize,
    full_solves: usize,
}

impl Estimator {
    /// Starts from a known first state, which anchors the world frame.
    pub fn new(initial: NavState<f64>, imu: ImuBuffer<f64>, config: EstimatorConfig) -> Result<Self> {
        config.validate()?;
        let mut problem = GraphProblem::new(config.solver.clone());
        let first = problem.add_state(initial)?;
        problem.fix_state(first)?;
        Ok(Self {
            problem,
            imu,
            lever_arm: Vector3::from(config.lever_arm),
            config,
            stage: Stage::Initialising,
            pending: Vec::new(),
            initialised_once: false,
            collected: Vec::new(),
            segment: None,
            events: Vec::new(),
            live: Vec::new(),
            window_solves: 0,
            full_solves: 0,
        })
    }

    pub fn problem(&self) -> &GraphProblem<f64> {
        &self.problem
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn extrinsics(&self) -> &ExtrinsicsGW<f64> {
        &self.problem.extrinsics
    }

    pub fn events(&self) -> &[AlignmentEvent] {
        &self.events
    }

    pub fn live_trajectory(&self) -> &[LivePoint] {
        &self.live
    }

    pub fn solve_counts(&self) -> (usize, usize) {
        (self.window_solves, self.full_solves)
    }

    pub fn push_imu(&mut self, sample: ImuSample<f64>) -> Result<()> {
        self.imu.push(sample)
    }

    /// Creates a state at `t` from an odometry increment relative to the newest state.
    pub fn add_odometry(&mut self, t: f64, measured: Pose3<f64>, covariance: Matrix6<f64>) -> Result<StateId> {
        let prev_id = self.problem.newest().ok_or(Error::EmptyWindow)?;
        let prev = *self.problem.state(prev_id)?;
        let pre = self
            .imu
            .preintegrate(prev.t, t, prev.bias, &self.config.imu_noise)?;
        let (predicted, _) = predict(&prev, &pre, &self.problem.gravity)?;
        let guess = NavState::new(t, prev.pose().compose(&measured), predicted.velocity, prev.bias);
        let id = self.problem.add_state(guess)?;
        self.problem.add_imu_factor(ImuFactor {
            from: prev_id,
            to: id,
            preint: pre,
        })?;
        self.problem
            .add_relpose_factor(RelPoseFactor::new(prev_id, id, measured, covariance)?)?;
        self.solve_window()?;
        if self.initialised_once {
            let p = self.problem.state(id)?.position;
            self.live.push(LivePoint {
                t,
                position: self.problem.extrinsics.to_global(&p).into(),
            });
        }
        Ok(id)
    }

    pub fn add_gps(&mut self, measurement: GpsMeasurement<f64>) -> Result<()> {
        let anchor = match self.problem.state_at_or_before(measurement.t) {
            Some(a) => a,
            None => {
                let first = self.problem.states().first().map_or(f64::NAN, |s| s.t);
                return Err(Error::MeasurementBeforeAnchor {
                    t: measurement.t,
                    anchor: first,
                });
            }
        };
        let s = *self.problem.state(anchor)?;
        let preint = self
            .imu
            .preintegrate(s.t, measurement.t, s.bias, &self.config.imu_noise)?;
        let factor = GpsFactor {
            measurement,
            anchor,
            preint,
            lever_arm: self.lever_arm,
        };
        match (self.config.mode, self.stage) {
            (_, Stage::Initialising) => self.initialise(factor),
            (PipelineMode::SvdOnce, _) => {
                self.problem.add_gps_factor(factor)?;
                Ok(())
            }
            (PipelineMode::Criterion, Stage::Initialised) => self.fuse(factor),
            (PipelineMode::Criterion, Stage::ReInitialising) => self.reinitialise(factor),
        }
    }

    /// Adds any fixes still held back and, in criterion mode, refines the
    /// whole trajectory.
    pub fn finish(&mut self) -> Result<Option<SolveReport>> {
        if self.stage == Stage::ReInitialising {
            for f in self.collected.drain(..).skip(1) {
                self.problem.add_gps_factor(f)?;
            }
            self.segment = None;
            self.stage = Stage::Initialised;
        }
        match self.config.mode {
            PipelineMode::Criterion => self.solve_full().map(Some),
            PipelineMode::SvdOnce => Ok(None),
        }
    }

    /// Final state poses mapped into `G`.
    pub fn global_poses(&self) -> Vec<(f64, Pose3<f64>)> {
        let ext = self.problem.extrinsics.pose();
        self.problem
            .states()
            .iter()
            .map(|s| (s.t, ext.compose(&s.pose())))
            .collect()
    }

    fn baseline_reached(&self, factors: &[GpsFactor<f64>]) -> bool {
        let Some(first) = factors.first() else {
            return false;
        };
        let sigma = first.measurement.covariance.trace().sqrt();
        factors.len() >= 2 && horizontal_baseline(factors) > self.config.baseline_sigmas * sigma
    }

    fn initialise(&mut self, factor: GpsFactor<f64>) -> Result<()> {
        let t = factor.measurement.t;
        if !self.initialised_once {
            self.pending.push(factor);
            if !self.baseline_reached(&self.pending) {
                return Ok(());
            }
            let mut ext = svd_init(&antenna_pairs(&self.problem, &self.pending)?)?;
            ext.fixed = false;
            self.problem.extrinsics = ext;
            for f in self.pending.drain(..) {
                self.problem.add_gps_factor(f)?;
            }
            self.initialised_once = true;
            info!("t = {t:.2}: initial T_GW yaw {:.4} rad", ext.yaw);
            self.events
                .push(AlignmentEvent::from_pose(t, EventKind::Initialisation, &ext.pose()));
            if self.config.mode == PipelineMode::SvdOnce {
                self.stage = Stage::Initialised;
                return Ok(());
            }
        } else {
            self.problem.add_gps_factor(factor)?;
        }
        let report = assess_observability(
            self.problem.gps_factors(),
            &self.problem,
            &self.problem.extrinsics,
            self.config.sigma_theta(),
        )?;
        debug!("t = {t:.2}: p_θθ = {:.3e}", report.p_theta_theta);
        if report.observable {
            self.problem.extrinsics.fixed = true;
            self.stage = Stage::Initialised;
            info!("t = {t:.2}: T_GW observable, fixed");
            let mut event = AlignmentEvent::from_pose(t, EventKind::ExtrinsicsFixed, &self.problem.extrinsics.pose());
            event.p_theta_theta = Some(report.p_theta_theta);
            self.events.push(event);
        }
        Ok(())
    }

    fn fuse(&mut self, factor: GpsFactor<f64>) -> Result<()> {
        if !detect_dropout(&self.problem) {
            self.problem.add_gps_factor(factor)?;
            return Ok(());
        }
        let segment = match dropout_segment(&self.problem, &factor) {
            Ok(s) => s,
            // The fix belongs to already-anchored history.
            Err(Error::NoSegment) => {
                self.problem.add_gps_factor(factor)?;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let t = factor.measurement.t;
        let correction = position_align(&mut self.problem, &factor)?;
        info!(
            "t = {t:.2}: dropout over states {}..{}, position shift {:.3} m",
            segment.pivot,
            segment.last,
            correction.drift.translation.norm()
        );
        self.events
            .push(AlignmentEvent::from_correction(t, EventKind::PositionAlign, &correction));
        self.problem.add_gps_factor(factor.clone())?;
        self.solve_full()?;
        self.collected = vec![factor];
        self.segment = Some(segment);
        self.stage = Stage::ReInitialising;
        Ok(())
    }

    fn reinitialise(&mut self, factor: GpsFactor<f64>) -> Result<()> {
        let t = factor.measurement.t;
        self.collected.push(factor);
        if !self.baseline_reached(&self.collected) {
            return Ok(());
        }
        let (ext_new, report) = match reinitialise(&self.problem, &self.collected, self.config.sigma_theta()) {
            Ok(r) => r,
            Err(Error::DegenerateSpread) => return Ok(()),
            Err(e) => return Err(e),
        };
        if !report.observable {
            return Ok(());
        }
        let segment = self.segment.take().ok_or(Error::NoSegment)?;
        let correction = full_align(&mut self.problem, &ext_new, segment)?;
        info!(
            "t = {t:.2}: re-initialised, drift yaw {:.4} rad",
            correction.drift.rotation.yaw()
        );
        let mut event = AlignmentEvent::from_correction(t, EventKind::FullAlign, &correction);
        event.p_theta_theta = Some(report.p_theta_theta);
        self.events.push(event);
        for f in self.collected.drain(..).skip(1) {
            self.problem.add_gps_factor(f)?;
        }
        self.solve_full()?;
        self.stage = Stage::Initialised;
        Ok(())
    }

    fn solve_window(&mut self) -> Result<SolveReport> {
        let report = self.problem.solve_window()?;
        self.window_solves += 1;
        self.check_finite(&report)?;
        Ok(report)
    }

    fn solve_full(&mut self) -> Result<SolveReport> {
        let report = self.problem.solve_full()?;
        self.full_solves += 1;
        self.check_finite(&report)?;
        Ok(report)
    }

    fn check_finite(&self, report: &SolveReport) -> Result<()> {
        let finite = report.final_cost.is_finite()
            && self
                .problem
                .states()
                .iter()
                .all(|s| s.position.iter().chain(s.velocity.iter()).all(|x| x.is_finite()));
        if finite {
            Ok(())
        } else {
            Err(Error::Diverged(format!("{:?} solve produced non-finite values", report.scope)))
        }
    }
}
