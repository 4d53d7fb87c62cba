use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use nalgebra::Vector3;
use serde::Serialize;

use globalfuse::estimator::write_events_file;
use globalfuse::eval::{run_scenario_outputs, standard_patterns, summarise, sweep, RunOutput};
use globalfuse::imu::ImuBuffer;
use globalfuse::io::{
    read_gps_csv, read_imu_csv, read_odometry_csv, read_poses_csv, write_gps_csv, write_imu_csv,
    write_odometry_csv, write_points_csv, write_poses_csv, OdometryRecord,
};
use globalfuse::simkit::{make_gps, make_odometry, sample_extrinsics, synthesize, DropoutPattern, TrajectorySpec};
use globalfuse::{
    compute_ate, AlignmentEvent, AteMode, AteResult, Estimator, EstimatorConfig, ExtrinsicsGW, ImuBias, NavState,
    PipelineMode, Pose3, ScenarioConfig, Stage,
};

#[derive(Parser)]
#[command(name = "globalfuse", version, about = "GPS + inertial factor-graph estimation with dropout alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate IMU, GPS, odometry and ground-truth CSVs for one seed.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Estimate a trajectory from recorded CSV inputs.
    Run(RunArgs),
    /// Simulate and estimate a scenario, reporting the median ATE.
    Evaluate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
        /// Directory for the plot CSVs of the first repetition.
        #[arg(long)]
        plot_dir: Option<PathBuf>,
    },
    /// Compare both pipelines across the standard dropout patterns.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Criterion,
    SvdOnce,
}

impl From<ModeArg> for PipelineMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Criterion => PipelineMode::Criterion,
            ModeArg::SvdOnce => PipelineMode::SvdOnce,
        }
    }
}

/// Scenario settings as flags; values in `--config` take precedence.
#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// GPS noise per axis, metres.
    #[arg(long)]
    gps_sigma: Option<f64>,
    #[arg(long)]
    no_gps: bool,
    /// GPS-off interval as `start:end` fractions of the duration; repeatable.
    #[arg(long = "dropout", value_parser = parse_interval)]
    dropouts: Vec<[f64; 2]>,
    /// Odometry translation scale error.
    #[arg(long)]
    drift_scale: Option<f64>,
    /// Odometry yaw error per metre, rad/m.
    #[arg(long)]
    drift_yaw: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    imu: PathBuf,
    #[arg(long)]
    gps: Option<PathBuf>,
    #[arg(long)]
    odom: PathBuf,
    /// Estimator TOML file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth poses in `G`, for ATE.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Directory for plot CSVs and the event log; defaults to the report's directory.
    #[arg(long)]
    plot_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Antenna position in the IMU frame as `x,y,z` metres.
    #[arg(long, value_parser = parse_vec3)]
    lever_arm: Option<[f64; 3]>,
    #[arg(long)]
    sigma_theta_deg: Option<f64>,
}

fn parse_interval(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s.split_once(':').ok_or("expected start:end")?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok([parse(a)?, parse(b)?])
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|c| c.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected x,y,z".to_string())
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

fn overlay_file<T>(from_flags: &T, path: Option<&Path>) -> Result<T>
where
    T: Serialize + serde::de::DeserializeOwned,
{
    let mut table = toml::Table::try_from(from_flags)?;
    if let Some(path) = path {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        merge(&mut table, file);
    }
    Ok(table.try_into()?)
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<ScenarioConfig> {
        let mut c = ScenarioConfig::default();
        if let Some(seed) = self.seed {
            c.trajectory.seed = seed;
        }
        if let Some(n) = self.repetitions {
            c.repetitions = n;
        }
        if let Some(m) = self.mode {
            c.estimator.mode = m.into();
        }
        if let Some(s) = self.gps_sigma {
            c.gps.sigma = s;
        }
        c.gps.enabled = !self.no_gps;
        if !self.dropouts.is_empty() {
            c.gps.dropouts = DropoutPattern::new(self.dropouts.clone())?;
        }
        if let Some(s) = self.drift_scale {
            c.odometry.drift.scale = s;
        }
        if let Some(y) = self.drift_yaw {
            c.odometry.drift.yaw_per_metre = y;
        }
        let c: ScenarioConfig = overlay_file(&c, self.config.as_deref())?;
        c.validate()?;
        Ok(c)
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<EstimatorConfig> {
        let mut c = EstimatorConfig::default();
        if let Some(m) = self.mode {
            c.mode = m.into();
        }
        if let Some(l) = self.lever_arm {
            c.lever_arm = l;
        }
        if let Some(s) = self.sigma_theta_deg {
            c.sigma_theta_deg = s;
        }
        let c: EstimatorConfig = overlay_file(&c, self.config.as_deref())?;
        c.validate()?;
        Ok(c)
    }
}

fn simulate(args: &ScenarioArgs, out_dir: &Path) -> Result<()> {
    let config = args.resolve()?;
    let seed = config.seed(0);
    let spec = TrajectorySpec {
        seed,
        ..config.trajectory.clone()
    };
    let syn = synthesize(&spec)?;
    let ext_true = sample_extrinsics(seed);
    let lever = Vector3::from(config.lever_arm);
    fs::create_dir_all(out_dir)?;
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
    let odometry: Vec<OdometryRecord> = make_odometry(&syn.states, &config.odometry.drift, &config.odometry.noise, seed)?
        .into_iter()
        .map(|f| OdometryRecord {
            t_from: syn.states[f.from.0].t,
            t_to: syn.states[f.to.0].t,
            measured: f.measured,
            covariance: f.covariance,
        })
        .collect();
    let truth: Vec<(f64, Pose3)> = syn
        .states
        .iter()
        .map(|s| (s.t, ext_true.pose().compose(&s.pose())))
        .collect();
    write_imu_csv(out_dir.join("imu.csv"), &syn.imu)?;
    write_gps_csv(out_dir.join("gps.csv"), &gps)?;
    write_odometry_csv(out_dir.join("odom.csv"), &odometry)?;
    write_poses_csv(out_dir.join("truth.csv"), &truth)?;
    // Estimator settings matching the simulation, ready for `run --config`.
    let estimator = EstimatorConfig {
        lever_arm: config.lever_arm,
        imu_noise: spec.imu_errors.as_noise(),
        ..config.estimator.clone()
    };
    fs::write(out_dir.join("estimator.toml"), toml::to_string(&estimator)?)?;
    info!(
        "seed {seed}: {} IMU samples, {} fixes, {} odometry links written to {}",
        syn.imu.len(),
        gps.len(),
        odometry.len(),
        out_dir.display()
    );
    Ok(())
}

/// Machine-readable result of `run`.
#[derive(Serialize)]
struct RunReport {
    mode: PipelineMode,
    stage: Stage,
    extrinsics: ExtrinsicsGW,
    num_states: usize,
    num_gps: usize,
    window_solves: usize,
    full_solves: usize,
    events: Vec<AlignmentEvent>,
    ate: Option<AteResult>,
}

/// The first odometry record anchors the world frame: identity pose at
/// `t_from`, velocity from the first increment, zero biases.
fn initial_state(first: &OdometryRecord) -> NavState {
    let v = first.measured.translation / (first.t_to - first.t_from);
    NavState::new(first.t_from, Pose3::identity(), v, ImuBias::zero())
}

fn run(args: &RunArgs) -> Result<()> {
    let config = args.resolve()?;
    let imu = read_imu_csv(&args.imu).with_context(|| format!("reading {}", args.imu.display()))?;
    let odometry = read_odometry_csv(&args.odom).with_context(|| format!("reading {}", args.odom.display()))?;
    let gps = match &args.gps {
        Some(path) => read_gps_csv(path, None).with_context(|| format!("reading {}", path.display()))?.0,
        None => Vec::new(),
    };
    let Some(first) = odometry.first() else {
        bail!("odometry file holds no records");
    };
    for w in odometry.windows(2) {
        ensure!(
            (w[1].t_from - w[0].t_to).abs() < 1e-6,
            "odometry is not a chain: record ending at {} followed by one starting at {}",
            w[0].t_to,
            w[1].t_from
        );
    }
    let start = first.t_from;
    let mut est = Estimator::new(initial_state(first), ImuBuffer::new(imu)?, config.clone())?;
    let early = gps.iter().take_while(|z| z.t < start).count();
    if early > 0 {
        warn!("skipping {early} fixes before the first odometry timestamp");
    }
    let mut fixes = gps[early..].iter().peekable();
    for r in &odometry {
        while let Some(z) = fixes.next_if(|z| z.t < r.t_to) {
            est.add_gps(*z)?;
        }
        est.add_odometry(r.t_to, r.measured, r.covariance)?;
    }
    for z in fixes {
        est.add_gps(*z)?;
    }
    est.finish()?;

    let estimate = est.global_poses();
    let ate = match &args.truth {
        Some(path) => {
            let truth = positions(&read_poses_csv(path).with_context(|| format!("reading {}", path.display()))?);
            let result = if gps.is_empty() {
                let w: Vec<_> = est.problem().states().iter().map(|s| (s.t, s.position)).collect();
                compute_ate(&w, &truth, AteMode::Aligned4Dof)?
            } else {
                compute_ate(&positions(&estimate), &truth, AteMode::RawGlobal)?
            };
            info!("ATE {:.4} m ({:?})", result.rmse, result.mode);
            Some(result)
        }
        None => None,
    };
    let (window_solves, full_solves) = est.solve_counts();
    let report = RunReport {
        mode: config.mode,
        stage: est.stage(),
        extrinsics: *est.extrinsics(),
        num_states: est.problem().num_states(),
        num_gps: gps.len() - early,
        window_solves,
        full_solves,
        events: est.events().to_vec(),
        ate,
    };
    write_json(&args.out, &report)?;

    let plot_dir = match &args.plot_dir {
        Some(d) => d.clone(),
        None => args.out.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&plot_dir)?;
    let live: Vec<_> = est
        .live_trajectory()
        .iter()
        .map(|p| (p.t, p.position.into()))
        .collect();
    write_points_csv(plot_dir.join("live.csv"), &live)?;
    write_points_csv(plot_dir.join("estimate.csv"), &positions(&estimate))?;
    write_points_csv(
        plot_dir.join("gps_points.csv"),
        &gps.iter().map(|z| (z.t, z.position)).collect::<Vec<_>>(),
    )?;
    write_events_file(plot_dir.join("events.jsonl"), est.events())?;
    Ok(())
}

fn positions(poses: &[(f64, Pose3)]) -> Vec<(f64, Vector3<f64>)> {
    poses.iter().map(|(t, p)| (*t, p.translation)).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_plots(dir: &Path, run: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_points_csv(dir.join("truth.csv"), &positions(&run.truth))?;
    write_points_csv(dir.join("live.csv"), &run.live)?;
    write_points_csv(dir.join("estimate.csv"), &positions(&run.estimate))?;
    write_points_csv(
        dir.join("gps_points.csv"),
        &run.gps.iter().map(|z| (z.t, z.position)).collect::<Vec<_>>(),
    )?;
    write_events_file(dir.join("events.jsonl"), &run.report.events)?;
    Ok(())
}

fn evaluate(args: &ScenarioArgs, out: &Path, plot_dir: Option<&Path>) -> Result<()> {
    let config = args.resolve()?;
    let runs = run_scenario_outputs(&config)?;
    let report = summarise(&config, &runs);
    println!("{}: median ATE {:.4} m over {} repetitions", report.name, report.median_ate, runs.len());
    write_json(out, &report)?;
    if let (Some(dir), Some(first)) = (plot_dir, runs.first()) {
        write_plots(dir, first)?;
    }
    Ok(())
}

fn run_sweep(args: &ScenarioArgs, out: &Path) -> Result<()> {
    let config = args.resolve()?;
    let rows = sweep(
        &config,
        &standard_patterns(),
        &[PipelineMode::Criterion, PipelineMode::SvdOnce],
    )?;
    println!("{:<28} {:<10} {:>10}", "dropouts", "mode", "median ATE");
    for r in &rows {
        let pattern = serde_json::to_string(&r.dropouts)?;
        let mode = serde_json::to_value(r.mode)?;
        println!("{:<28} {:<10} {:>10.4}", pattern, mode.as_str().unwrap_or_default(), r.median_ate);
    }
    write_json(out, &rows)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate { scenario, out_dir } => simulate(scenario, out_dir),
        Command::Run(args) => run(args),
        Command::Evaluate {
            scenario,
            out,
            plot_dir,
        } => evaluate(scenario, out, plot_dir.as_deref()),
        Command::Sweep { scenario, out } => run_sweep(scenario, out),
    }
}
