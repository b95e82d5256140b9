//! Continuous game model, uniform time partitions and the Euler-discretized
//! Markov game built on top of them.
//!
//! The terminal cost is folded into the reward of the last transition, so a
//! trajectory's quality index is the plain sum of its rewards.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::ActionMesh;

/// Discount factor of the discretized game. Finite horizon, undiscounted.
pub const DISCOUNT: f64 = 1.0;

/// Tolerance used for control-set membership of mesh points.
pub const SET_TOLERANCE: f64 = 1e-9;

/// Compact control set of one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlSet {
    /// Axis-aligned box `lo <= p <= hi`; an interval when one-dimensional.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Origin-centered ellipsoid `sum (p_i / a_i)^2 <= 1`; a ball when all
    /// semi-axes agree.
    Ellipsoid { semi_axes: Vec<f64> },
}

impl ControlSet {
    pub fn interval(lo: f64, hi: f64) -> Self {
        ControlSet::Box {
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    pub fn ball(dim: usize, radius: f64) -> Self {
        ControlSet::Ellipsoid {
            semi_axes: vec![radius; dim],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Box { lo, .. } => lo.len(),
            ControlSet::Ellipsoid { semi_axes } => semi_axes.len(),
        }
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        if p.len() != self.dim() {
            return false;
        }
        match self {
            ControlSet::Box { lo, hi } => p
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&x, (&a, &b))| x >= a - tol && x <= b + tol),
            ControlSet::Ellipsoid { semi_axes } => {
                let r2: f64 = p.iter().zip(semi_axes).map(|(x, a)| (x / a).powi(2)).sum();
                r2.sqrt() <= 1.0 + tol
            }
        }
    }

    /// Clamps onto a box, or scales radially onto an ellipsoid. Identity on
    /// points already inside.
    pub fn project(&self, p: &[f64]) -> Vec<f64> {
        match self {
            ControlSet::Box { lo, hi } => p
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&x, (&a, &b))| x.clamp(a, b))
                .collect(),
            ControlSet::Ellipsoid { semi_axes } => {
                let r2: f64 = p.iter().zip(semi_axes).map(|(x, a)| (x / a).powi(2)).sum();
                let r = r2.sqrt();
                if r <= 1.0 {
                    p.to_vec()
                } else {
                    p.iter().map(|x| x / r).collect()
                }
            }
        }
    }

    /// Largest Euclidean norm of a point in the set.
    pub fn max_norm(&self) -> f64 {
        match self {
            ControlSet::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| a.abs().max(b.abs()).powi(2))
                .sum::<f64>()
                .sqrt(),
            ControlSet::Ellipsoid { semi_axes } => {
                semi_axes.iter().fold(0.0_f64, |m, a| m.max(a.abs()))
            }
        }
    }

    /// Uniform draw from the set (rejection sampling for ellipsoids).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ControlSet::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(&a, &b)| if b > a { rng.gen_range(a..=b) } else { a })
                .collect(),
            ControlSet::Ellipsoid { semi_axes } => loop {
                let p: Vec<f64> = semi_axes
                    .iter()
                    .map(|&a| a * rng.gen_range(-1.0..=1.0))
                    .collect();
                if self.contains(&p, 0.0) {
                    return p;
                }
            },
        }
    }
}

impl fmt::Display for ControlSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlSet::Box { lo, hi } => write!(f, "box {lo:?}..{hi:?}"),
            ControlSet::Ellipsoid { semi_axes } => write!(f, "ellipsoid with semi-axes {semi_axes:?}"),
        }
    }
}

/// Right-hand side, running cost and terminal cost of a game.
pub trait GameModel: Send + Sync {
    fn dynamics(&self, t: f64, x: &[f64], u: &[f64], v: &[f64], dx: &mut [f64]);

    fn running_cost(&self, _t: f64, _x: &[f64], _u: &[f64], _v: &[f64]) -> f64 {
        0.0
    }

    fn terminal_cost(&self, x: &[f64]) -> f64;

    /// The control-separated form `f = f1(t,x,u) + f2(t,x,v)`,
    /// `f0 = f01(t,x,u) + f02(t,x,v)`, when the model has one.
    fn split(&self) -> Option<&dyn SplitModel> {
        None
    }
}

/// Control-separated parts of a [`GameModel`].
pub trait SplitModel: Send + Sync {
    /// Writes `f1(t,x,u)` into `dx` and returns `f01(t,x,u)`.
    fn first_agent_part(&self, t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) -> f64;
    /// Writes `f2(t,x,v)` into `dx` and returns `f02(t,x,v)`.
    fn second_agent_part(&self, t: f64, x: &[f64], v: &[f64], dx: &mut [f64]) -> f64;
}

/// A finite-horizon zero-sum differential game. The first agent minimizes,
/// the second maximizes the quality index.
#[derive(Clone)]
pub struct ContinuousGame {
    name: String,
    horizon: f64,
    initial_state: Vec<f64>,
    u_set: ControlSet,
    v_set: ControlSet,
    growth_constant: f64,
    model: Arc<dyn GameModel>,
}

impl fmt::Debug for ContinuousGame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuousGame")
            .field("name", &self.name)
            .field("horizon", &self.horizon)
            .field("initial_state", &self.initial_state)
            .field("u_set", &self.u_set)
            .field("v_set", &self.v_set)
            .field("growth_constant", &self.growth_constant)
            .finish_non_exhaustive()
    }
}

impl ContinuousGame {
    pub fn new(
        name: impl Into<String>,
        horizon: f64,
        initial_state: Vec<f64>,
        u_set: ControlSet,
        v_set: ControlSet,
        growth_constant: f64,
        model: Arc<dyn GameModel>,
    ) -> Result<Self> {
        let name = name.into();
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGame(format!("{name}: horizon must be positive, got {horizon}")));
        }
        if initial_state.is_empty() || initial_state.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidGame(format!("{name}: initial state must be finite and non-empty")));
        }
        if u_set.dim() == 0 || v_set.dim() == 0 {
            return Err(Error::InvalidGame(format!("{name}: control sets must be non-empty")));
        }
        if !(growth_constant.is_finite() && growth_constant > 0.0) {
            return Err(Error::InvalidGame(format!("{name}: growth constant must be positive")));
        }
        Ok(Self {
            name,
            horizon,
            initial_state,
            u_set,
            v_set,
            growth_constant,
            model,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.initial_state.len()
    }

    pub fn control_dims(&self) -> (usize, usize) {
        (self.u_set.dim(), self.v_set.dim())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }

    pub fn u_set(&self) -> &ControlSet {
        &self.u_set
    }

    pub fn v_set(&self) -> &ControlSet {
        &self.v_set
    }

    pub fn growth_constant(&self) -> f64 {
        self.growth_constant
    }

    pub fn model(&self) -> &dyn GameModel {
        self.model.as_ref()
    }

    pub fn dynamics(&self, t: f64, x: &[f64], u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; x.len()];
        self.model.dynamics(t, x, u, v, &mut dx);
        dx
    }

    pub fn running_cost(&self, t: f64, x: &[f64], u: &[f64], v: &[f64]) -> f64 {
        self.model.running_cost(t, x, u, v)
    }

    pub fn terminal_cost(&self, x: &[f64]) -> f64 {
        self.model.terminal_cost(x)
    }

    /// Radius `(|x0| + 1) e^{c_f t} - 1` of a ball around the origin that
    /// contains every motion from the initial state up to time `t`.
    pub fn reach_radius(&self, t: f64) -> f64 {
        (norm(&self.initial_state) + 1.0) * (self.growth_constant * t).exp() - 1.0
    }

    /// Spot-checks `|f| + |f0| <= c_f (1 + |x|)` at random points with
    /// `|x_i| <= radius`. Returns the largest observed ratio
    /// `(|f| + |f0|) / (1 + |x|)`, failing when it exceeds the constant.
    pub fn check_growth_bound<R: Rng + ?Sized>(
        &self,
        samples: usize,
        radius: f64,
        rng: &mut R,
    ) -> Result<f64> {
        let n = self.state_dim();
        let mut worst = 0.0_f64;
        let mut dx = vec![0.0; n];
        for _ in 0..samples {
            let t = rng.gen_range(0.0..=self.horizon);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-radius..=radius)).collect();
            let u = self.u_set.sample(rng);
            let v = self.v_set.sample(rng);
            self.model.dynamics(t, &x, &u, &v, &mut dx);
            let f0 = self.model.running_cost(t, &x, &u, &v);
            if dx.iter().any(|d| !d.is_finite()) || !f0.is_finite() {
                return Err(Error::InvalidGame(format!(
                    "{}: non-finite dynamics at t={t}, x={x:?}",
                    self.name
                )));
            }
            worst = worst.max((norm(&dx) + f0.abs()) / (1.0 + norm(&x)));
        }
        if worst > self.growth_constant * (1.0 + 1e-12) {
            return Err(Error::InvalidGame(format!(
                "{}: growth ratio {worst} exceeds c_f = {}",
                self.name, self.growth_constant
            )));
        }
        Ok(worst)
    }
}

/// Time grid `t_0 < t_1 < ... < t_{m+1} = T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    times: Vec<f64>,
}

impl Partition {
    /// `{ i dt : i = 0..=m+1 }` with `(m+1) dt = horizon`.
    pub fn uniform(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidPartition(format!("step must be positive, got {dt}")));
        }
        let steps = (horizon / dt).round();
        if steps < 1.0 || ((steps * dt) - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(Error::InvalidPartition(format!(
                "horizon {horizon} is not a whole number of steps {dt}"
            )));
        }
        let steps = steps as usize;
        let mut times: Vec<f64> = (0..steps).map(|i| i as f64 * dt).collect();
        times.push(horizon);
        Ok(Self { times })
    }

    /// Arbitrary strictly increasing times starting at zero.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidPartition("need at least two times".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidPartition("partition must start at 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidPartition("times must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of transitions, `m + 1`.
    pub fn num_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Index `m` of the last transition.
    pub fn last_step(&self) -> usize {
        self.times.len() - 2
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn step_size(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("partition is non-empty")
    }

    /// Largest gap `d(Δ)`.
    pub fn diameter(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

/// One replay record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t_index: usize,
    pub x: Vec<f64>,
    pub u_index: usize,
    pub v_index: usize,
    pub reward: f64,
    pub next_t_index: usize,
    pub x_next: Vec<f64>,
    pub terminal: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub x_next: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

/// The minimizing first agent (`u`) or the maximizing second agent (`v`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    First,
    Second,
}

impl Agent {
    pub fn other(self) -> Self {
        match self {
            Agent::First => Agent::Second,
            Agent::Second => Agent::First,
        }
    }
}

/// Deterministic feedback policy over mesh indices.
pub trait Policy: Send + Sync {
    fn act(&self, i: usize, x: &[f64]) -> usize;

    /// Acts on `xs`, a row-major batch of states of width `dim`.
    fn act_batch(&self, i: usize, xs: &[f64], dim: usize) -> Vec<usize> {
        xs.chunks(dim).map(|x| self.act(i, x)).collect()
    }
}

impl<F> Policy for F
where
    F: Fn(usize, &[f64]) -> usize + Send + Sync,
{
    fn act(&self, i: usize, x: &[f64]) -> usize {
        self(i, x)
    }
}

/// Always plays the same mesh index.
#[derive(Clone, Copy, Debug)]
pub struct ConstantPolicy(pub usize);

impl Policy for ConstantPolicy {
    fn act(&self, _i: usize, _x: &[f64]) -> usize {
        self.0
    }
}

/// Open-loop sequence of mesh indices, one per time index.
#[derive(Clone, Debug)]
pub struct OpenLoopPolicy(pub Vec<usize>);

impl Policy for OpenLoopPolicy {
    fn act(&self, i: usize, _x: &[f64]) -> usize {
        self.0[i]
    }
}

#[derive(Clone, Debug)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    /// Quality index `J`, the sum of all rewards.
    pub value: f64,
}

/// A continuous game with a partition and finite action meshes: the Markov
/// game the learning algorithms interact with.
#[derive(Clone, Debug)]
pub struct DiscretizedGame {
    game: ContinuousGame,
    partition: Partition,
    u_mesh: ActionMesh,
    v_mesh: ActionMesh,
}

impl DiscretizedGame {
    pub fn new(
        game: ContinuousGame,
        partition: Partition,
        u_mesh: ActionMesh,
        v_mesh: ActionMesh,
    ) -> Result<Self> {
        if (partition.horizon() - game.horizon()).abs() > 1e-9 * game.horizon().max(1.0) {
            return Err(Error::InvalidPartition(format!(
                "partition ends at {} but the horizon is {}",
                partition.horizon(),
                game.horizon()
            )));
        }
        check_mesh(&u_mesh, game.u_set())?;
        check_mesh(&v_mesh, game.v_set())?;
        Ok(Self {
            game,
            partition,
            u_mesh,
            v_mesh,
        })
    }

    /// Uniform partition with step `dt`.
    pub fn uniform(
        game: ContinuousGame,
        dt: f64,
        u_mesh: ActionMesh,
        v_mesh: ActionMesh,
    ) -> Result<Self> {
        let partition = Partition::uniform(game.horizon(), dt)?;
        Self::new(game, partition, u_mesh, v_mesh)
    }

    pub fn game(&self) -> &ContinuousGame {
        &self.game
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn u_mesh(&self) -> &ActionMesh {
        &self.u_mesh
    }

    pub fn v_mesh(&self) -> &ActionMesh {
        &self.v_mesh
    }

    pub fn state_dim(&self) -> usize {
        self.game.state_dim()
    }

    pub fn num_steps(&self) -> usize {
        self.partition.num_steps()
    }

    pub fn discount(&self) -> f64 {
        DISCOUNT
    }

    /// Time feature `t_i / T` fed to the Q-networks.
    pub fn time_feature(&self, i: usize) -> f64 {
        self.partition.time(i) / self.game.horizon()
    }

    /// Euler step without the terminal cost or any validation. Writes the next
    /// state into `out` and returns the running reward `dt f0`.
    pub fn advance(&self, i: usize, x: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) -> f64 {
        let t = self.partition.time(i);
        let dt = self.partition.step_size(i);
        let model = self.game.model();
        model.dynamics(t, x, u, v, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi + dt * *o;
        }
        dt * model.running_cost(t, x, u, v)
    }

    /// One transition from `(t_i, x)`. On the last step the terminal cost of
    /// the next state is added to the reward.
    pub fn step(&self, i: usize, x: &[f64], u_idx: usize, v_idx: usize) -> Result<StepOutcome> {
        let last = self.partition.last_step();
        if i > last {
            return Err(Error::TimeIndexOutOfRange { index: i, last });
        }
        if x.len() != self.state_dim() {
            return Err(Error::Shape(format!(
                "state has {} components, game expects {}",
                x.len(),
                self.state_dim()
            )));
        }
        let u = self.u_mesh.get(u_idx).ok_or(Error::ActionIndexOutOfRange {
            index: u_idx,
            size: self.u_mesh.len(),
        })?;
        let v = self.v_mesh.get(v_idx).ok_or(Error::ActionIndexOutOfRange {
            index: v_idx,
            size: self.v_mesh.len(),
        })?;
        let mut x_next = vec![0.0; x.len()];
        let mut reward = self.advance(i, x, u, v, &mut x_next);
        let terminal = i == last;
        if terminal {
            reward += self.game.terminal_cost(&x_next);
        }
        if x_next.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                what: "state",
                step: i,
                detail: format!("x={x:?} -> {x_next:?}"),
            });
        }
        if !reward.is_finite() {
            return Err(Error::NonFinite {
                what: "reward",
                step: i,
                detail: format!("x={x:?}"),
            });
        }
        Ok(StepOutcome {
            x_next,
            reward,
            terminal,
        })
    }

    /// Plays both policies from the initial state to the horizon.
    pub fn rollout(&self, policy_u: &dyn Policy, policy_v: &dyn Policy) -> Result<Rollout> {
        self.rollout_from(0, self.game.initial_state(), policy_u, policy_v)
    }

    /// Plays both policies from `(t_start, x)` to the horizon.
    pub fn rollout_from(
        &self,
        start: usize,
        x: &[f64],
        policy_u: &dyn Policy,
        policy_v: &dyn Policy,
    ) -> Result<Rollout> {
        let mut transitions = Vec::with_capacity(self.num_steps().saturating_sub(start));
        let mut value = 0.0;
        let mut state = x.to_vec();
        for i in start..self.num_steps() {
            let u_idx = policy_u.act(i, &state);
            let v_idx = policy_v.act(i, &state);
            let out = self.step(i, &state, u_idx, v_idx)?;
            value += out.reward;
            let x_next = out.x_next;
            transitions.push(Transition {
                t_index: i,
                x: std::mem::replace(&mut state, x_next.clone()),
                u_index: u_idx,
                v_index: v_idx,
                reward: out.reward,
                next_t_index: i + 1,
                x_next,
                terminal: out.terminal,
            });
        }
        Ok(Rollout { transitions, value })
    }

    /// Quality index of a rollout from the initial state, without recording
    /// transitions.
    pub fn play(&self, policy_u: &dyn Policy, policy_v: &dyn Policy) -> Result<f64> {
        let mut value = 0.0;
        let mut state = self.game.initial_state().to_vec();
        for i in 0..self.num_steps() {
            let out = self.step(i, &state, policy_u.act(i, &state), policy_v.act(i, &state))?;
            value += out.reward;
            state = out.x_next;
        }
        Ok(value)
    }
}

fn check_mesh(mesh: &ActionMesh, set: &ControlSet) -> Result<()> {
    if mesh.dim() != set.dim() {
        return Err(Error::InvalidMesh(format!(
            "mesh points have dimension {}, control set has {}",
            mesh.dim(),
            set.dim()
        )));
    }
    if let Some(p) = mesh.points().iter().find(|p| !set.contains(p, SET_TOLERANCE)) {
        return Err(Error::MeshOutsideSet {
            point: p.clone(),
            set: set.to_string(),
        });
    }
    Ok(())
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
