//! Factor graph over navigation states, solved by Levenberg-Marquardt either
//! over a sliding window of recent states or over the whole trajectory.

mod skyline;

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{
    imu_residual, predict_antenna, relpose_residual, AntennaPrediction, ExtrinsicsGW, GpsFactor, ImuFactor, Loss,
    RelPoseFactor, StateId,
};
use crate::imu::{default_gravity, state_index as si, NavState, Vector15};
use crate::scalar::{lit, to_f64, Real};

pub use skyline::Skyline;

/// Solver knobs, readable from a `key = value` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Number of most recent non-fixed states optimised by a window solve.
    pub window_size: usize,
    pub lambda_initial: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Damping multiplier applied on rejection and divided out on acceptance.
    pub lambda_factor: f64,
    pub relative_tolerance: f64,
    pub gradient_tolerance: f64,
    /// Converged once the largest step component falls below this.
    pub step_tolerance: f64,
    pub gps_loss: Loss,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            window_size: 10,
            lambda_initial: 1e-4,
            lambda_min: 1e-9,
            lambda_max: 1e4,
            lambda_factor: 10.0,
            relative_tolerance: 1e-8,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
            gps_loss: Loss::None,
        }
    }
}

impl SolverSettings {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let settings: Self = toml::from_str(text)?;
        settings.validate()?;
        Ok(settings)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.window_size == 0 {
            return bad("window_size must be at least 1");
        }
        if !(self.lambda_min > 0.0 && self.lambda_min <= self.lambda_initial && self.lambda_initial <= self.lambda_max) {
            return bad("damping must satisfy 0 < lambda_min <= lambda_initial <= lambda_max");
        }
        if !(self.lambda_factor > 1.0) {
            return bad("lambda_factor must exceed 1");
        }
        if let Loss::Cauchy { scale } = self.gps_loss {
            if !(scale > 0.0) {
                return bad("Cauchy scale must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    DampingSaturated,
    NoVariables,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveScope {
    Window,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockLabel {
    State(StateId),
    Extrinsics,
}

/// Condition number of one diagonal block of the Gauss-Newton Hessian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockCondition {
    pub block: BlockLabel,
    /// Ratio of extreme eigenvalues; infinite for a singular block.
    pub condition: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub scope: SolveScope,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub conditions: Vec<BlockCondition>,
    pub num_variables: usize,
    pub num_residuals: usize,
}

/// Navigation states, factors between them and the global-frame extrinsics.
#[derive(Clone, Debug)]
pub struct GraphProblem<T: Real> {
    states: Vec<NavState<T>>,
    fixed: Vec<bool>,
    pub extrinsics: ExtrinsicsGW<T>,
    gps: Vec<GpsFactor<T>>,
    relpose: Vec<RelPoseFactor<T>>,
    imu: Vec<ImuFactor<T>>,
    pub settings: SolverSettings,
    pub gravity: Vector3<T>,
}

impl<T: Real> Default for GraphProblem<T> {
    fn default() -> Self {
        Self::new(SolverSettings::default())
    }
}

impl<T: Real> GraphProblem<T> {
    pub fn new(settings: SolverSettings) -> Self {
        Self {
            states: Vec::new(),
            fixed: Vec::new(),
            extrinsics: ExtrinsicsGW::identity(),
            gps: Vec::new(),
            relpose: Vec::new(),
            imu: Vec::new(),
            settings,
            gravity: default_gravity(),
        }
    }

    /// Appends a state; timestamps must increase.
    pub fn add_state(&mut self, state: NavState<T>) -> Result<StateId> {
        if let Some(last) = self.states.last() {
            if !(state.t > last.t) {
                return Err(Error::NonMonotoneTimestamps(self.states.len()));
            }
        }
        self.states.push(state);
        self.fixed.push(false);
        Ok(StateId(self.states.len() - 1))
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[NavState<T>] {
        &self.states
    }

    pub fn ids(&self) -> impl DoubleEndedIterator<Item = StateId> + ExactSizeIterator {
        (0..self.states.len()).map(StateId)
    }

    fn check(&self, id: StateId) -> Result<()> {
        if id.0 < self.states.len() {
            Ok(())
        } else {
            Err(Error::UnknownState(id.0))
        }
    }

    pub fn state(&self, id: StateId) -> Result<&NavState<T>> {
        self.check(id)?;
        Ok(&self.states[id.0])
    }

    /// Overwrites a state value, fixed or not. Used by alignment corrections.
    pub fn set_state(&mut self, id: StateId, state: NavState<T>) -> Result<()> {
        self.check(id)?;
        self.states[id.0] = state;
        Ok(())
    }

    pub fn newest(&self) -> Option<StateId> {
        self.states.len().checked_sub(1).map(StateId)
    }

    /// Newest state with `t <= time`.
    pub fn state_at_or_before(&self, time: T) -> Option<StateId> {
        let n = self.states.partition_point(|s| s.t <= time);
        n.checked_sub(1).map(StateId)
    }

    pub fn fix_state(&mut self, id: StateId) -> Result<()> {
        self.check(id)?;
        self.fixed[id.0] = true;
        Ok(())
    }

    pub fn is_fixed(&self, id: StateId) -> Result<bool> {
        self.check(id)?;
        Ok(self.fixed[id.0])
    }

    pub fn add_gps_factor(&mut self, factor: GpsFactor<T>) -> Result<usize> {
        self.check(factor.anchor)?;
        self.gps.push(factor);
        Ok(self.gps.len() - 1)
    }

    pub fn add_relpose_factor(&mut self, factor: RelPoseFactor<T>) -> Result<usize> {
        self.check(factor.from)?;
        self.check(factor.to)?;
        self.relpose.push(factor);
        Ok(self.relpose.len() - 1)
    }

    pub fn add_imu_factor(&mut self, factor: ImuFactor<T>) -> Result<usize> {
        self.check(factor.from)?;
        self.check(factor.to)?;
        self.imu.push(factor);
        Ok(self.imu.len() - 1)
    }

    pub fn gps_factors(&self) -> &[GpsFactor<T>] {
        &self.gps
    }

    pub fn relpose_factors(&self) -> &[RelPoseFactor<T>] {
        &self.relpose
    }

    pub fn imu_factors(&self) -> &[ImuFactor<T>] {
        &self.imu
    }

    pub fn num_factors(&self) -> usize {
        self.gps.len() + self.relpose.len() + self.imu.len()
    }

    /// Newest state that anchors a GPS factor.
    pub fn newest_gps_state(&self) -> Option<StateId> {
        self.gps.iter().map(|f| f.anchor).max()
    }

    /// Total cost `½ Σ ρ(‖r‖²_Σ)` over every factor at the current values.
    pub fn cost(&self) -> Result<f64> {
        let scope = self.scope(self.ids().map(|id| (id, false)).collect(), false);
        let ctx = self.context(&scope)?;
        Ok(to_f64(self.evaluate(&scope, &ctx, &self.states, &self.extrinsics, None)?.cost))
    }

    /// Optimises the newest `window_size` non-fixed states (and the
    /// extrinsics when free), then fixes every non-fixed state older than
    /// the window.
    pub fn solve_window(&mut self) -> Result<SolveReport> {
        let open: Vec<StateId> = self.ids().filter(|id| !self.fixed[id.0]).collect();
        if open.is_empty() {
            return Err(Error::EmptyWindow);
        }
        let start = open.len().saturating_sub(self.settings.window_size);
        let window = &open[start..];
        let scope = self.scope(window.iter().map(|&id| (id, false)).collect(), !self.extrinsics.fixed);
        let report = self.run(SolveScope::Window, &scope)?;
        for id in &open[..start] {
            self.fixed[id.0] = true;
        }
        Ok(report)
    }

    /// Optimises every state regardless of the fixation mask. The pose of the
    /// first state is held as gauge anchor unless fixed extrinsics and GPS
    /// factors already pin the frame.
    pub fn solve_full(&mut self) -> Result<SolveReport> {
        if self.states.is_empty() {
            return Err(Error::EmptyWindow);
        }
        let anchored = self.gps.is_empty() || !self.extrinsics.fixed;
        let blocks = self.ids().map(|id| (id, anchored && id.0 == 0)).collect();
        let scope = self.scope(blocks, !self.extrinsics.fixed);
        self.run(SolveScope::Full, &scope)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv_to(std::io::BufWriter::new(file))
    }

    /// Dumps states as `id,t,fixed,px,py,pz,qw,qx,qy,qz,vx,vy,vz,bgx,bgy,bgz,bax,bay,baz`.
    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "id", "t", "fixed", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "bgx", "bgy", "bgz", "bax",
            "bay", "baz",
        ])?;
        for (k, s) in self.states.iter().enumerate() {
            let q = s.rotation.wxyz();
            let mut row = vec![k.to_string(), to_f64(s.t).to_string(), (self.fixed[k] as u8).to_string()];
            let values = [
                s.position.x, s.position.y, s.position.z, q[0], q[1], q[2], q[3], s.velocity.x, s.velocity.y,
                s.velocity.z, s.bias.gyro.x, s.bias.gyro.y, s.bias.gyro.z, s.bias.accel.x, s.bias.accel.y,
                s.bias.accel.z,
            ];
            row.extend(values.iter().map(|v| to_f64(*v).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    fn scope(&self, states: Vec<(StateId, bool)>, with_extrinsics: bool) -> Scope {
        let mut blocks = Vec::with_capacity(states.len() + 1);
        let mut block_of_state = HashMap::with_capacity(states.len());
        let mut col = 0;
        for (id, pose_fixed) in states {
            let dim = if pose_fixed { 9 } else { si::DIM };
            block_of_state.insert(id.0, blocks.len());
            blocks.push(Block {
                label: BlockLabel::State(id),
                pose_fixed,
                col,
                dim,
            });
            col += dim;
        }
        let ext_block = with_extrinsics.then(|| {
            blocks.push(Block {
                label: BlockLabel::Extrinsics,
                pose_fixed: false,
                col,
                dim: 4,
            });
            col += 4;
            blocks.len() - 1
        });
        let touches = |id: StateId| block_of_state.contains_key(&id.0);
        let mut gps = Vec::new();
        let mut frozen_gps = Vec::new();
        for (k, f) in self.gps.iter().enumerate() {
            if touches(f.anchor) {
                gps.push(k);
            } else if ext_block.is_some() {
                frozen_gps.push(k);
            }
        }
        let relpose = (0..self.relpose.len())
            .filter(|&k| touches(self.relpose[k].from) || touches(self.relpose[k].to))
            .collect();
        let imu = (0..self.imu.len())
            .filter(|&k| touches(self.imu[k].from) || touches(self.imu[k].to))
            .collect();
        Scope {
            blocks,
            block_of_state,
            ext_block,
            n: col,
            gps,
            frozen_gps,
            relpose,
            imu,
        }
    }

    /// Values that stay constant during one solve.
    fn context(&self, scope: &Scope) -> Result<Context<T>> {
        let frozen = scope
            .frozen_gps
            .iter()
            .map(|&k| {
                let f = &self.gps[k];
                predict_antenna(f, &self.states[f.anchor.0], &self.gravity)
            })
            .collect::<Result<_>>()?;
        let relpose_whiteners = scope
            .relpose
            .iter()
            .map(|&k| whitener(dynamic(&self.relpose[k].covariance)))
            .collect::<Result<_>>()?;
        Ok(Context {
            frozen,
            relpose_whiteners,
        })
    }

    /// Envelope of the Hessian implied by the factor connectivity.
    fn envelope(&self, scope: &Scope) -> Vec<usize> {
        let mut first_block: Vec<usize> = scope.blocks.iter().map(|b| b.col).collect();
        let mut link = |a: Option<usize>, b: Option<usize>| {
            if let (Some(a), Some(b)) = (a, b) {
                let (lo, hi) = if scope.blocks[a].col < scope.blocks[b].col { (a, b) } else { (b, a) };
                first_block[hi] = first_block[hi].min(scope.blocks[lo].col);
            }
        };
        for &k in &scope.gps {
            link(scope.state_block(self.gps[k].anchor), scope.ext_block);
        }
        for &k in &scope.relpose {
            link(scope.state_block(self.relpose[k].from), scope.state_block(self.relpose[k].to));
        }
        for &k in &scope.imu {
            link(scope.state_block(self.imu[k].from), scope.state_block(self.imu[k].to));
        }
        let mut first = Vec::with_capacity(scope.n);
        for (b, block) in scope.blocks.iter().enumerate() {
            first.extend(std::iter::repeat_n(first_block[b], block.dim));
        }
        first
    }

    /// Evaluates the cost and, when `system` is given, accumulates the
    /// Gauss-Newton Hessian and gradient of the whitened residuals into it.
    fn evaluate(
        &self,
        scope: &Scope,
        ctx: &Context<T>,
        states: &[NavState<T>],
        ext: &ExtrinsicsGW<T>,
        mut system: Option<&mut System<T>>,
    ) -> Result<Evaluation<T>> {
        let half: T = lit(0.5);
        let with_jac = system.is_some();
        let mut cost = T::zero();
        let mut residuals = 0;
        let mut accumulate = |r: DVector<T>, jacs: &[(Option<usize>, DMatrix<T>)], loss: Option<Loss>| {
            let s = r.norm_squared();
            residuals += r.len();
            let (rho, scale) = match loss {
                Some(loss) => {
                    let (rho, d) = loss.evaluate(to_f64(s));
                    (lit::<T>(rho), lit::<T>(d.sqrt()))
                }
                None => (s, T::one()),
            };
            cost += half * rho;
            if let Some(sys) = system.as_deref_mut() {
                let r = r * scale;
                let present: Vec<(usize, DMatrix<T>)> = jacs
                    .iter()
                    .filter_map(|(b, j)| b.map(|b| (b, scope.blocks[b].restrict(j) * scale)))
                    .collect();
                sys.add(scope, &r, &present);
            }
        };

        let loss = match self.settings.gps_loss {
            Loss::None => None,
            other => Some(other),
        };
        for &k in &scope.gps {
            let f = &self.gps[k];
            let pred = predict_antenna(f, &states[f.anchor.0], &self.gravity)?;
            let eval = pred.evaluate(&f.measurement, ext)?;
            let lw = whitener(dynamic(&eval.covariance))?;
            let mut jacs = Vec::new();
            if with_jac {
                jacs.push((scope.state_block(f.anchor), &lw * dynamic(&pred.state_jacobian(ext))));
                jacs.push((scope.ext_block, &lw * dynamic(&pred.extrinsics_jacobian(ext))));
            }
            accumulate(&lw * dvec(&eval.residual), &jacs, loss);
        }
        for (pred, &k) in ctx.frozen.iter().zip(&scope.frozen_gps) {
            let f = &self.gps[k];
            let eval = pred.evaluate(&f.measurement, ext)?;
            let lw = whitener(dynamic(&eval.covariance))?;
            let mut jacs = Vec::new();
            if with_jac {
                jacs.push((scope.ext_block, &lw * dynamic(&pred.extrinsics_jacobian(ext))));
            }
            accumulate(&lw * dvec(&eval.residual), &jacs, loss);
        }
        for (lw, &k) in ctx.relpose_whiteners.iter().zip(&scope.relpose) {
            let f = &self.relpose[k];
            let (r, ji, jj) = relpose_residual(f, &states[f.from.0], &states[f.to.0]);
            let mut jacs = Vec::new();
            if with_jac {
                jacs.push((scope.state_block(f.from), lw * dynamic(&ji)));
                jacs.push((scope.state_block(f.to), lw * dynamic(&jj)));
            }
            accumulate(lw * dvec(&r), &jacs, None);
        }
        for &k in &scope.imu {
            let f = &self.imu[k];
            let eval = imu_residual(f, &states[f.from.0], &states[f.to.0], &self.gravity)?;
            let lw = whitener(dynamic(&eval.covariance))?;
            let mut jacs = Vec::new();
            if with_jac {
                jacs.push((scope.state_block(f.from), &lw * dynamic(&eval.jac_from)));
                jacs.push((scope.state_block(f.to), &lw * dynamic(&eval.jac_to)));
            }
            accumulate(&lw * dvec(&eval.residual), &jacs, None);
        }
        Ok(Evaluation { cost, residuals })
    }

    fn linearise(
        &self,
        scope: &Scope,
        ctx: &Context<T>,
        envelope: &[usize],
        states: &[NavState<T>],
        ext: &ExtrinsicsGW<T>,
    ) -> Result<(Evaluation<T>, System<T>)> {
        let mut system = System {
            hessian: Skyline::zeros(envelope.to_vec()),
            gradient: vec![T::zero(); scope.n],
        };
        let eval = self.evaluate(scope, ctx, states, ext, Some(&mut system))?;
        Ok((eval, system))
    }

    fn apply(&self, scope: &Scope, states: &mut [NavState<T>], ext: &mut ExtrinsicsGW<T>, delta: &[T]) {
        for block in &scope.blocks {
            let d = &delta[block.col..block.col + block.dim];
            match block.label {
                BlockLabel::State(id) => {
                    let old = states[id.0];
                    let mut full = Vector15::zeros();
                    let offset = si::DIM - block.dim;
                    for (k, v) in d.iter().enumerate() {
                        full[offset + k] = *v;
                    }
                    let mut new = old.retract(&full);
                    if block.pose_fixed {
                        new.position = old.position;
                        new.rotation = old.rotation;
                    }
                    states[id.0] = new;
                }
                BlockLabel::Extrinsics => {
                    *ext = ext.retract(&SMatrix::<T, 4, 1>::from_column_slice(d));
                }
            }
        }
    }

    fn run(&mut self, kind: SolveScope, scope: &Scope) -> Result<SolveReport> {
        let settings = self.settings.clone();
        let ctx = self.context(scope)?;
        if scope.n == 0 {
            let eval = self.evaluate(scope, &ctx, &self.states, &self.extrinsics, None)?;
            let cost = to_f64(eval.cost);
            return Ok(SolveReport {
                scope: kind,
                initial_cost: cost,
                final_cost: cost,
                iterations: 0,
                termination: Termination::NoVariables,
                cost_history: vec![cost],
                conditions: Vec::new(),
                num_variables: 0,
                num_residuals: eval.residuals,
            });
        }
        let envelope = self.envelope(scope);
        let mut states = self.states.clone();
        let mut ext = self.extrinsics;
        let (mut eval, mut system) = self.linearise(scope, &ctx, &envelope, &states, &ext)?;
        let initial_cost = to_f64(eval.cost);
        let mut history = vec![initial_cost];
        let mut lambda = settings.lambda_initial;
        let mut iterations = 0;
        let termination = loop {
            let cost = to_f64(eval.cost);
            let grad_max = system.gradient.iter().fold(0.0f64, |m, g| m.max(to_f64(*g).abs()));
            if grad_max < settings.gradient_tolerance || cost == 0.0 {
                break Termination::Converged;
            }
            if iterations >= settings.max_iterations {
                break Termination::MaxIterations;
            }
            iterations += 1;
            let mut damped = system.hessian.clone();
            for i in 0..scope.n {
                let d = to_f64(system.hessian.diagonal(i)).clamp(1e-6, 1e32);
                damped.add_diagonal(i, lit(lambda * d));
            }
            let mut accepted = false;
            if damped.factorize().is_ok() {
                let mut delta: Vec<T> = system.gradient.iter().map(|g| -*g).collect();
                damped.solve_in_place(&mut delta);
                let step = delta.iter().fold(0.0f64, |m, d| m.max(to_f64(*d).abs()));
                let mut trial_states = states.clone();
                let mut trial_ext = ext;
                self.apply(scope, &mut trial_states, &mut trial_ext, &delta);
                let trial = self.evaluate(scope, &ctx, &trial_states, &trial_ext, None);
                if let Ok(trial) = trial {
                    let new_cost = to_f64(trial.cost);
                    if new_cost.is_finite() && new_cost < cost {
                        accepted = true;
                        states = trial_states;
                        ext = trial_ext;
                        history.push(new_cost);
                        lambda = (lambda / settings.lambda_factor).max(settings.lambda_min);
                        let (e, s) = self.linearise(scope, &ctx, &envelope, &states, &ext)?;
                        eval = e;
                        system = s;
                        if (cost - new_cost) <= settings.relative_tolerance * cost || step < settings.step_tolerance {
                            break Termination::Converged;
                        }
                    } else if new_cost.is_finite()
                        && ((new_cost - cost).abs() <= settings.relative_tolerance * cost || step < settings.step_tolerance)
                    {
                        break Termination::Converged;
                    }
                }
            }
            if !accepted {
                if lambda >= settings.lambda_max {
                    break Termination::DampingSaturated;
                }
                lambda = (lambda * settings.lambda_factor).min(settings.lambda_max);
            }
        };
        let conditions = scope
            .blocks
            .iter()
            .map(|b| BlockCondition {
                block: b.label,
                condition: block_condition(&system.hessian, b),
            })
            .collect();
        let final_cost = to_f64(eval.cost);
        log::debug!(
            "{kind:?} solve: {} variables, cost {initial_cost:.6e} -> {final_cost:.6e} in {iterations} iterations ({termination:?})",
            scope.n
        );
        for block in &scope.blocks {
            if let BlockLabel::State(id) = block.label {
                self.states[id.0] = states[id.0];
            }
        }
        if scope.ext_block.is_some() {
            self.extrinsics = ext;
        }
        Ok(SolveReport {
            scope: kind,
            initial_cost,
            final_cost,
            iterations,
            termination,
            cost_history: history,
            conditions,
            num_variables: scope.n,
            num_residuals: eval.residuals,
        })
    }
}

#[derive(Debug)]
struct Block {
    label: BlockLabel,
    /// Position and rotation held constant; only velocity and biases vary.
    pose_fixed: bool,
    col: usize,
    dim: usize,
}

impl Block {
    /// Drops Jacobian columns of held components.
    fn restrict<T: Real>(&self, j: &DMatrix<T>) -> DMatrix<T> {
        if j.ncols() == self.dim {
            j.clone()
        } else {
            j.columns(j.ncols() - self.dim, self.dim).into_owned()
        }
    }
}

#[derive(Debug)]
struct Scope {
    blocks: Vec<Block>,
    block_of_state: HashMap<usize, usize>,
    ext_block: Option<usize>,
    n: usize,
    gps: Vec<usize>,
    /// GPS factors whose anchor lies outside the scope; they only constrain
    /// the extrinsics.
    frozen_gps: Vec<usize>,
    relpose: Vec<usize>,
    imu: Vec<usize>,
}

impl Scope {
    fn state_block(&self, id: StateId) -> Option<usize> {
        self.block_of_state.get(&id.0).copied()
    }
}

struct Context<T: Real> {
    frozen: Vec<AntennaPrediction<T>>,
    relpose_whiteners: Vec<DMatrix<T>>,
}

struct Evaluation<T: Real> {
    cost: T,
    residuals: usize,
}

struct System<T: Real> {
    hessian: Skyline<T>,
    gradient: Vec<T>,
}

impl<T: Real> System<T> {
    fn add(&mut self, scope: &Scope, r: &DVector<T>, jacs: &[(usize, DMatrix<T>)]) {
        for (a, ja) in jacs {
            let ba = &scope.blocks[*a];
            let g = ja.tr_mul(r);
            for (k, v) in g.iter().enumerate() {
                self.gradient[ba.col + k] += *v;
            }
            for (b, jb) in jacs {
                let bb = &scope.blocks[*b];
                if bb.col > ba.col {
                    continue;
                }
                let h = ja.tr_mul(jb);
                for r in 0..ba.dim {
                    let cols = if bb.col == ba.col { r + 1 } else { bb.dim };
                    for c in 0..cols {
                        self.hessian.add(ba.col + r, bb.col + c, h[(r, c)]);
                    }
                }
            }
        }
    }
}

fn block_condition<T: Real>(h: &Skyline<T>, block: &Block) -> f64 {
    let m = DMatrix::<f64>::from_fn(block.dim, block.dim, |r, c| to_f64(h.get(block.col + r, block.col + c)));
    let eig = m.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

fn dynamic<T: Real, const R: usize, const C: usize>(m: &SMatrix<T, R, C>) -> DMatrix<T> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

fn dvec<T: Real, const R: usize>(v: &SMatrix<T, R, 1>) -> DVector<T> {
    DVector::from_column_slice(v.as_slice())
}

/// `L⁻¹` for the lower Cholesky factor `L` of a covariance.
fn whitener<T: Real>(cov: DMatrix<T>) -> Result<DMatrix<T>> {
    let n = cov.nrows();
    let l = cov.cholesky().ok_or(Error::NotPositiveDefinite)?.unpack();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::NotPositiveDefinite)
}
