//! Two-agent deep Q-learning on discretized games: NashDQN, MADQN,
//! CounterDQN, IDQN, DIDQN, and decentralized double DQN (2xDDQN).

mod buffer;
mod learners;
mod policy;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::lookup;
use crate::error::{Error, Result};
use crate::game::DiscretizedGame;
use crate::matrix_game::{nash_mixed, PayoffMatrix};
use crate::mesh::MeshSpec;

pub use buffer::{ReplayBuffer, DEFAULT_CAPACITY};
pub use learners::{
    train, train_best_response, train_decentralized, train_on, write_log, BestResponseConfig,
    EpisodeRecord, TrainOutcome,
};
pub use policy::{NetPolicy, PolicyRule, QHead, TrainedModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "nashdqn")]
    NashDqn,
    #[serde(rename = "madqn")]
    Madqn,
    #[serde(rename = "counterdqn")]
    CounterDqn,
    #[serde(rename = "idqn")]
    Idqn,
    #[serde(rename = "didqn")]
    Didqn,
    #[serde(rename = "2xddqn")]
    DoubleDdqn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::NashDqn,
        Algorithm::Madqn,
        Algorithm::CounterDqn,
        Algorithm::Idqn,
        Algorithm::Didqn,
        Algorithm::DoubleDdqn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::NashDqn => "nashdqn",
            Algorithm::Madqn => "madqn",
            Algorithm::CounterDqn => "counterdqn",
            Algorithm::Idqn => "idqn",
            Algorithm::Didqn => "didqn",
            Algorithm::DoubleDdqn => "2xddqn",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == lower)
            .ok_or_else(|| Error::Unknown {
                kind: "algorithm",
                name: s.to_string(),
            })
    }
}

/// Everything a training run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub env: String,
    pub dt: f64,
    pub u_mesh: MeshSpec,
    pub v_mesh: MeshSpec,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub buffer_capacity: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Catalog defaults for `env`.
    pub fn for_env(algorithm: Algorithm, env: &str, seed: u64) -> Result<Self> {
        let entry = lookup(env)?;
        Ok(Self {
            algorithm,
            env: entry.name.to_string(),
            dt: entry.dt,
            u_mesh: entry.u_mesh_spec(),
            v_mesh: entry.v_mesh_spec(),
            hidden: entry.hidden.to_vec(),
            lr: 1e-3,
            tau: 0.01,
            batch_size: 64,
            total_steps: 50_000,
            buffer_capacity: DEFAULT_CAPACITY,
            gamma: 1.0,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.batch_size == 0 || self.total_steps == 0 {
            return bad("batch_size and total_steps must be positive".into());
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity must be at least batch_size".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        Ok(())
    }

    pub fn discretize(&self) -> Result<DiscretizedGame> {
        lookup(&self.env)?.discretize_with(self.dt, &self.u_mesh, &self.v_mesh)
    }
}

/// `max(0, 1 - step / total)`.
pub fn zeta_schedule(step: usize, total: usize) -> f64 {
    (1.0 - step as f64 / total as f64).max(0.0)
}

/// `(argmin_u max_v M, argmax_v min_u M)`, lowest index on ties.
pub fn greedy_pair(m: &PayoffMatrix) -> (usize, usize) {
    (m.pure_minimax().1, m.pure_maximin().1)
}

/// The greedy index with probability `1 - zeta`, otherwise uniform. A
/// single-action mesh consumes no randomness.
pub fn epsilon_greedy<R: Rng + ?Sized>(greedy: usize, zeta: f64, size: usize, rng: &mut R) -> usize {
    if size <= 1 {
        return 0;
    }
    if rng.gen::<f64>() < zeta {
        rng.gen_range(0..size)
    } else {
        greedy
    }
}

/// `r + gamma/2 (minmax + maxmin)` of the next-state matrix; `r` on terminal
/// transitions (`next = None`).
pub fn idqn_target(reward: f64, next: Option<&PayoffMatrix>, gamma: f64) -> f64 {
    match next {
        None => reward,
        Some(m) => reward + 0.5 * gamma * (m.pure_minimax().0 + m.pure_maximin().0),
    }
}

/// `(r + gamma minmax Q_u', r + gamma maxmin Q_v')`.
pub fn madqn_targets(
    reward: f64,
    next_u: Option<&PayoffMatrix>,
    next_v: Option<&PayoffMatrix>,
    gamma: f64,
) -> (f64, f64) {
    (
        next_u.map_or(reward, |m| reward + gamma * m.pure_minimax().0),
        next_v.map_or(reward, |m| reward + gamma * m.pure_maximin().0),
    )
}

/// Second agent's reply when it knows the first agent's row.
pub fn counter_response(m: &PayoffMatrix, u_idx: usize) -> usize {
    m.row_argmax(u_idx)
}

/// First agent's reply when it knows the second agent's column.
pub fn counter_response_first(m: &PayoffMatrix, v_idx: usize) -> usize {
    m.col_argmin(v_idx)
}

/// `r + gamma * value` of the mixed equilibrium of the next-state matrix.
pub fn nash_target(reward: f64, next: Option<&PayoffMatrix>, gamma: f64) -> Result<f64> {
    match next {
        None => Ok(reward),
        Some(m) => Ok(reward + gamma * nash_mixed(m)?.value),
    }
}

/// `(1 - zeta) * equilibrium + zeta * uniform`.
pub fn behavior_distribution(equilibrium: &[f64], zeta: f64) -> Vec<f64> {
    let uniform = 1.0 / equilibrium.len() as f64;
    equilibrium.iter().map(|p| (1.0 - zeta) * p + zeta * uniform).collect()
}

/// Inverse-CDF draw from `dist` given `u` in `[0, 1)`.
pub fn sample_index(dist: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Largest entry of `M - row means - column means + grand mean`; zero for
/// matrices of the form `a_u + b_v`.
pub fn additivity_residual(m: &PayoffMatrix) -> f64 {
    let (r, c) = (m.rows(), m.cols());
    let row_mean: Vec<f64> = (0..r).map(|i| m.row(i).iter().sum::<f64>() / c as f64).collect();
    let col_mean: Vec<f64> = (0..c)
        .map(|j| (0..r).map(|i| m.get(i, j)).sum::<f64>() / r as f64)
        .collect();
    let grand = row_mean.iter().sum::<f64>() / r as f64;
    let mut worst = 0.0f64;
    for i in 0..r {
        for j in 0..c {
            worst = worst.max((m.get(i, j) - row_mean[i] - col_mean[j] + grand).abs());
        }
    }
    worst
}

/// Network input `(t_i / T, x)`.
pub(crate) fn push_input(dg: &DiscretizedGame, i: usize, x: &[f64], out: &mut Vec<f64>) {
    out.push(dg.time_feature(i));
    out.extend_from_slice(x);
}

/// Independent stream seed from a run seed.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(0x51ed_2701)))
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
