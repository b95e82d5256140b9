//! Exploitability evaluation: freeze one agent's policy, attack it with
//! adversaries, and keep the most damaging quality index on each side.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Agent, DiscretizedGame, OpenLoopPolicy, Policy};
use crate::grid::{guaranteed_result, StateGrid, MAX_GRID_DIM};
use crate::qlearn::{train_best_response, BestResponseConfig, NetPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryMethod {
    /// Exact backward induction against the frozen policy (state dim <= 3).
    GridBestResponse,
    /// Single-agent DQN over the adversary's mesh, several hyperparameter draws.
    DqnBestResponse,
    /// Uniformly random open-loop action sequences.
    RandomSearch,
}

impl AdversaryMethod {
    pub const ALL: [AdversaryMethod; 3] = [
        AdversaryMethod::GridBestResponse,
        AdversaryMethod::DqnBestResponse,
        AdversaryMethod::RandomSearch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AdversaryMethod::GridBestResponse => "grid_best_response",
            AdversaryMethod::DqnBestResponse => "dqn_best_response",
            AdversaryMethod::RandomSearch => "random_search",
        }
    }
}

impl fmt::Display for AdversaryMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdversaryMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "grid" | "grid_best_response" => Ok(AdversaryMethod::GridBestResponse),
            "dqn" | "dqn_best_response" => Ok(AdversaryMethod::DqnBestResponse),
            "random" | "random_search" => Ok(AdversaryMethod::RandomSearch),
            _ => Err(Error::Unknown {
                kind: "adversary method",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub methods: Vec<AdversaryMethod>,
    /// Required by the grid method.
    pub grid: Option<StateGrid>,
    /// One learned best response per draw.
    pub dqn_draws: Vec<BestResponseConfig>,
    pub random_sequences: usize,
    pub seed: u64,
}

impl EvalOptions {
    pub fn grid_only(grid: StateGrid) -> Self {
        Self {
            methods: vec![AdversaryMethod::GridBestResponse],
            grid: Some(grid),
            dqn_draws: Vec::new(),
            random_sequences: 0,
            seed: 0,
        }
    }

    fn validate(&self, dg: &DiscretizedGame) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("at least one adversary method is required".into()));
        }
        if self.methods.contains(&AdversaryMethod::GridBestResponse) {
            if dg.state_dim() > MAX_GRID_DIM {
                return Err(Error::UnsupportedDimension(dg.state_dim()));
            }
            if self.grid.is_none() {
                return Err(Error::Config("grid best response needs a state grid".into()));
            }
        }
        if self.methods.contains(&AdversaryMethod::DqnBestResponse) && self.dqn_draws.is_empty() {
            return Err(Error::Config("dqn best response needs at least one hyperparameter draw".into()));
        }
        if self.methods.contains(&AdversaryMethod::RandomSearch) && self.random_sequences == 0 {
            return Err(Error::Config("random search needs at least one sequence".into()));
        }
        Ok(())
    }
}

/// `count` draws cycling through learning rates {1e-3, 1e-4} and hidden
/// layouts {[256, 128], [64, 64]}.
pub fn default_dqn_draws(count: usize, steps: usize, seed: u64) -> Vec<BestResponseConfig> {
    const LRS: [f64; 2] = [1e-3, 1e-4];
    (0..count)
        .map(|k| BestResponseConfig {
            lr: LRS[k % 2],
            hidden: if (k / 2) % 2 == 0 { vec![256, 128] } else { vec![64, 64] },
            steps,
            seed: seed.wrapping_add(k as u64),
            ..BestResponseConfig::default()
        })
        .collect()
}

/// One adversary's result against a frozen policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub method: AdversaryMethod,
    /// Quality index of a deterministic rollout against the adversary.
    pub value: f64,
    pub note: String,
}

/// Attempts against one frozen agent and their extreme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideEvaluation {
    pub frozen: Agent,
    /// Max of the attempts when the first agent is frozen, min otherwise.
    pub value: f64,
    pub attempts: Vec<Attempt>,
}

fn extreme(frozen: Agent, values: impl Iterator<Item = f64>) -> f64 {
    match frozen {
        Agent::First => values.fold(f64::NEG_INFINITY, f64::max),
        Agent::Second => values.fold(f64::INFINITY, f64::min),
    }
}

fn play_against(dg: &DiscretizedGame, frozen: &dyn Policy, frozen_agent: Agent, adversary: &dyn Policy) -> Result<f64> {
    match frozen_agent {
        Agent::First => dg.play(frozen, adversary),
        Agent::Second => dg.play(adversary, frozen),
    }
}

/// Best quality index (for the adversary) over `count` uniformly random
/// open-loop sequences.
pub fn random_search(dg: &DiscretizedGame, frozen: &dyn Policy, frozen_agent: Agent, count: usize, seed: u64) -> Result<f64> {
    let size = match frozen_agent {
        Agent::First => dg.v_mesh().len(),
        Agent::Second => dg.u_mesh().len(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seqs: Vec<Vec<usize>> = (0..count)
        .map(|_| (0..dg.num_steps()).map(|_| rng.gen_range(0..size)).collect())
        .collect();
    let values = seqs
        .into_par_iter()
        .map(|s| play_against(dg, frozen, frozen_agent, &OpenLoopPolicy(s)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(extreme(frozen_agent, values.into_iter()))
}

/// Trains one adversary per draw and returns the extreme rollout value and
/// the adversary achieving it.
pub fn dqn_best_response(
    dg: &DiscretizedGame,
    frozen: &dyn Policy,
    frozen_agent: Agent,
    draws: &[BestResponseConfig],
) -> Result<(f64, NetPolicy)> {
    if draws.is_empty() {
        return Err(Error::Config("dqn best response needs at least one draw".into()));
    }
    let results = draws
        .par_iter()
        .map(|cfg| {
            let (adv, _) = train_best_response(dg, frozen, frozen_agent, cfg)?;
            let v = play_against(dg, frozen, frozen_agent, &adv)?;
            Ok((v, adv))
        })
        .collect::<Result<Vec<_>>>()?;
    let better = |a: f64, b: f64| match frozen_agent {
        Agent::First => a > b,
        Agent::Second => a < b,
    };
    let mut best = 0;
    for k in 1..results.len() {
        if better(results[k].0, results[best].0) {
            best = k;
        }
    }
    let (v, adv) = results.into_iter().nth(best).expect("non-empty");
    Ok((v, adv))
}

/// Attacks `frozen` with every configured method.
pub fn evaluate_policy(
    dg: &DiscretizedGame,
    frozen: &dyn Policy,
    frozen_agent: Agent,
    opts: &EvalOptions,
) -> Result<SideEvaluation> {
    opts.validate(dg)?;
    let mut attempts = Vec::new();
    for method in &opts.methods {
        match method {
            AdversaryMethod::GridBestResponse => {
                let grid = opts.grid.as_ref().expect("validated");
                let r = guaranteed_result(dg, grid, frozen, frozen_agent)?;
                attempts.push(Attempt {
                    method: *method,
                    value: r.rollout_value,
                    note: format!("grid value {:.6}, clamped successors {}", r.grid_value, r.clamps.total),
                });
            }
            AdversaryMethod::DqnBestResponse => {
                for (k, cfg) in opts.dqn_draws.iter().enumerate() {
                    let (v, _) = dqn_best_response(dg, frozen, frozen_agent, std::slice::from_ref(cfg))?;
                    attempts.push(Attempt {
                        method: *method,
                        value: v,
                        note: format!("draw {k}: lr {} hidden {:?} steps {}", cfg.lr, cfg.hidden, cfg.steps),
                    });
                }
            }
            AdversaryMethod::RandomSearch => {
                let v = random_search(dg, frozen, frozen_agent, opts.random_sequences, opts.seed)?;
                attempts.push(Attempt {
                    method: *method,
                    value: v,
                    note: format!("{} sequences", opts.random_sequences),
                });
            }
        }
    }
    Ok(SideEvaluation {
        frozen: frozen_agent,
        value: extreme(frozen_agent, attempts.iter().map(|a| a.value)),
        attempts,
    })
}

/// Both sides of one trained pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEvaluation {
    /// Estimate of the first agent's guaranteed result (max over attacks).
    pub v_u_approx: f64,
    /// Estimate of the second agent's guaranteed result (min over attacks).
    pub v_v_approx: f64,
    pub exploitability: f64,
    pub first: SideEvaluation,
    pub second: SideEvaluation,
}

impl PairEvaluation {
    pub fn width(&self) -> f64 {
        self.exploitability
    }

    pub fn contains(&self, value: f64) -> bool {
        self.v_v_approx <= value && value <= self.v_u_approx
    }
}

pub fn evaluate_pair(
    dg: &DiscretizedGame,
    first: &dyn Policy,
    second: &dyn Policy,
    opts: &EvalOptions,
) -> Result<PairEvaluation> {
    let a = evaluate_policy(dg, first, Agent::First, opts)?;
    let b = evaluate_policy(dg, second, Agent::Second, opts)?;
    Ok(PairEvaluation {
        v_u_approx: a.value,
        v_v_approx: b.value,
        exploitability: a.value - b.value,
        first: a,
        second: b,
    })
}

/// One run (seed) of an algorithm on a game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub evaluation: PairEvaluation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    /// Smallest `V_u` over runs: the first agent minimizes.
    pub best_u: f64,
    pub mean_u: f64,
    pub worst_u: f64,
    /// Largest `V_v` over runs: the second agent maximizes.
    pub best_v: f64,
    pub mean_v: f64,
    pub worst_v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub algorithm: String,
    pub game: String,
    pub runs: Vec<RunRecord>,
    /// `V_u` approximations, one per run.
    pub maximum_values: Vec<f64>,
    /// `V_v` approximations, one per run.
    pub minimum_values: Vec<f64>,
    pub aggregates: Aggregates,
}

impl EvalReport {
    pub fn from_runs(algorithm: impl Into<String>, game: impl Into<String>, runs: Vec<RunRecord>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::Config("a report needs at least one run".into()));
        }
        let maximum_values: Vec<f64> = runs.iter().map(|r| r.evaluation.v_u_approx).collect();
        let minimum_values: Vec<f64> = runs.iter().map(|r| r.evaluation.v_v_approx).collect();
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let min = |xs: &[f64]| xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |xs: &[f64]| xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let aggregates = Aggregates {
            best_u: min(&maximum_values),
            mean_u: mean(&maximum_values),
            worst_u: max(&maximum_values),
            best_v: max(&minimum_values),
            mean_v: mean(&minimum_values),
            worst_v: min(&minimum_values),
        };
        Ok(Self {
            algorithm: algorithm.into(),
            game: game.into(),
            runs,
            maximum_values,
            minimum_values,
            aggregates,
        })
    }

    pub fn table_row(&self) -> TableRow {
        let a = self.aggregates;
        TableRow {
            algorithm: self.algorithm.clone(),
            game: self.game.clone(),
            runs: self.runs.len(),
            best_u: a.best_u,
            mean_u: a.mean_u,
            worst_u: a.worst_u,
            best_v: a.best_v,
            mean_v: a.mean_v,
            worst_v: a.worst_v,
        }
    }
}

/// Flat table row: algorithm x game with interval statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub algorithm: String,
    pub game: String,
    pub runs: usize,
    pub best_u: f64,
    pub mean_u: f64,
    pub worst_u: f64,
    pub best_v: f64,
    pub mean_v: f64,
    pub worst_v: f64,
}
