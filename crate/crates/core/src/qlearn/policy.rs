use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{sample_index, splitmix64, TrainConfig};
use crate::error::{Error, Result};
use crate::game::{Agent, DiscretizedGame, Policy};
use crate::matrix_game::{argmax, argmin, nash_mixed, PayoffMatrix};
use crate::nn::Mlp;

pub const MODEL_VERSION: u32 = 1;

/// Q-network heads producing a `|U| x |V|` matrix per input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum QHead {
    /// One network with `|U| |V|` outputs, row-major.
    SharedMatrix { net: Mlp, rows: usize, cols: usize },
    /// Independent matrix networks for the first and second agent.
    PerAgent {
        first: Mlp,
        second: Mlp,
        rows: usize,
        cols: usize,
    },
    /// `Q(u, v) = Q1[u] + Q2[v]`.
    Decomposed { first: Mlp, second: Mlp },
}

pub(super) fn sizes_for(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = Vec::with_capacity(hidden.len() + 2);
    s.push(input);
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

/// `Q1[u] + Q2[v]` matrices for a batch of inputs.
pub(super) fn sum_matrices(first: &Mlp, second: &Mlp, inputs: &[f64], batch: usize) -> Result<Vec<PayoffMatrix>> {
    if batch == 0 {
        return Ok(Vec::new());
    }
    let (rows, cols) = (first.output_dim(), second.output_dim());
    let a = first.forward(inputs, batch)?;
    let b = second.forward(inputs, batch)?;
    a.chunks(rows)
        .zip(b.chunks(cols))
        .map(|(qa, qb)| {
            let data = qa.iter().flat_map(|x| qb.iter().map(move |y| x + y)).collect();
            PayoffMatrix::new(rows, cols, data)
        })
        .collect()
}

impl QHead {
    pub fn shared(input: usize, hidden: &[usize], rows: usize, cols: usize, seed: u64) -> Self {
        QHead::SharedMatrix {
            net: Mlp::new(&sizes_for(input, hidden, rows * cols), seed),
            rows,
            cols,
        }
    }

    pub fn per_agent(input: usize, hidden: &[usize], rows: usize, cols: usize, seeds: (u64, u64)) -> Self {
        QHead::PerAgent {
            first: Mlp::new(&sizes_for(input, hidden, rows * cols), seeds.0),
            second: Mlp::new(&sizes_for(input, hidden, rows * cols), seeds.1),
            rows,
            cols,
        }
    }

    pub fn decomposed(input: usize, hidden: &[usize], rows: usize, cols: usize, seeds: (u64, u64)) -> Self {
        QHead::Decomposed {
            first: Mlp::new(&sizes_for(input, hidden, rows), seeds.0),
            second: Mlp::new(&sizes_for(input, hidden, cols), seeds.1),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            QHead::SharedMatrix { rows, cols, .. } | QHead::PerAgent { rows, cols, .. } => (*rows, *cols),
            QHead::Decomposed { first, second } => (first.output_dim(), second.output_dim()),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            QHead::SharedMatrix { net, .. } => net.input_dim(),
            QHead::PerAgent { first, .. } | QHead::Decomposed { first, .. } => first.input_dim(),
        }
    }

    /// Matrices for a row-major batch of inputs. `agent` picks the network of
    /// a per-agent head and is ignored otherwise.
    pub fn q_matrices(&self, agent: Agent, inputs: &[f64], batch: usize) -> Result<Vec<PayoffMatrix>> {
        let (rows, cols) = self.shape();
        let split = |net: &Mlp| -> Result<Vec<PayoffMatrix>> {
            let out = net.forward(inputs, batch)?;
            out.chunks(rows * cols)
                .map(|c| PayoffMatrix::new(rows, cols, c.to_vec()))
                .collect()
        };
        match self {
            QHead::SharedMatrix { net, .. } => split(net),
            QHead::PerAgent { first, second, .. } => match agent {
                Agent::First => split(first),
                Agent::Second => split(second),
            },
            QHead::Decomposed { first, second } => sum_matrices(first, second, inputs, batch),
        }
    }

    pub fn q_matrix(&self, agent: Agent, input: &[f64]) -> Result<PayoffMatrix> {
        Ok(self.q_matrices(agent, input, 1)?.remove(0))
    }
}

/// How a network turns into one agent's action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum PolicyRule {
    /// First agent: argmin of row maxima; second: argmax of column minima.
    Greedy { head: QHead },
    /// Draw from the agent's mixed equilibrium strategy of the Q matrix, with
    /// the uniform variate a hash of `(seed, i, x)` so the policy stays a
    /// deterministic function of the position.
    NashSample { head: QHead, seed: u64 },
    /// Single-agent values over the agent's own mesh: argmin for the first
    /// agent, argmax for the second.
    Own { net: Mlp },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetPolicy {
    pub agent: Agent,
    /// `t_i / T` for every time index.
    pub time_features: Vec<f64>,
    pub rule: PolicyRule,
}

fn position_variate(seed: u64, i: usize, x: &[f64]) -> f64 {
    let mut h = splitmix64(seed ^ (i as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
    for c in x {
        h = splitmix64(h ^ c.to_bits());
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

impl NetPolicy {
    pub fn new(dg: &DiscretizedGame, agent: Agent, rule: PolicyRule) -> Self {
        Self {
            agent,
            time_features: (0..=dg.num_steps()).map(|i| dg.time_feature(i)).collect(),
            rule,
        }
    }

    fn inputs(&self, i: usize, xs: &[f64], dim: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(xs.len() / dim * (dim + 1));
        for x in xs.chunks(dim) {
            out.push(self.time_features[i]);
            out.extend_from_slice(x);
        }
        out
    }

    /// Raw network values at `(t_i, x)`: the agent's Q matrix (row-major) or
    /// its own-mesh values.
    pub fn values(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        let input = self.inputs(i, x, x.len());
        match &self.rule {
            PolicyRule::Greedy { head } | PolicyRule::NashSample { head, .. } => {
                Ok(head.q_matrix(self.agent, &input)?.data().to_vec())
            }
            PolicyRule::Own { net } => net.forward_one(&input),
        }
    }

    fn try_act_batch(&self, i: usize, xs: &[f64], dim: usize) -> Result<Vec<usize>> {
        let batch = xs.len() / dim;
        let inputs = self.inputs(i, xs, dim);
        match &self.rule {
            PolicyRule::Greedy { head } => Ok(head
                .q_matrices(self.agent, &inputs, batch)?
                .iter()
                .map(|m| match self.agent {
                    Agent::First => m.pure_minimax().1,
                    Agent::Second => m.pure_maximin().1,
                })
                .collect()),
            PolicyRule::NashSample { head, seed } => head
                .q_matrices(self.agent, &inputs, batch)?
                .iter()
                .zip(xs.chunks(dim))
                .map(|(m, x)| {
                    let sol = nash_mixed(m)?;
                    let dist = match self.agent {
                        Agent::First => &sol.row_dist,
                        Agent::Second => &sol.col_dist,
                    };
                    Ok(sample_index(dist, position_variate(*seed, i, x)))
                })
                .collect(),
            PolicyRule::Own { net } => {
                let out = net.forward(&inputs, batch)?;
                Ok(out
                    .chunks(net.output_dim())
                    .map(|q| match self.agent {
                        Agent::First => argmin(q),
                        Agent::Second => argmax(q),
                    })
                    .collect())
            }
        }
    }
}

impl Policy for NetPolicy {
    fn act(&self, i: usize, x: &[f64]) -> usize {
        self.act_batch(i, x, x.len())[0]
    }

    fn act_batch(&self, i: usize, xs: &[f64], dim: usize) -> Vec<usize> {
        self.try_act_batch(i, xs, dim)
            .unwrap_or_else(|e| panic!("network policy failed at time index {i}: {e}"))
    }
}

/// A trained policy pair with the configuration that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub config: TrainConfig,
    pub first: NetPolicy,
    pub second: NetPolicy,
}

impl TrainedModel {
    pub fn new(config: TrainConfig, first: NetPolicy, second: NetPolicy) -> Self {
        Self {
            format_version: MODEL_VERSION,
            config,
            first,
            second,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let model: Self = serde_json::from_reader(file)?;
        if model.format_version != MODEL_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }

    pub fn policy(&self, agent: Agent) -> &NetPolicy {
        match agent {
            Agent::First => &self.first,
            Agent::Second => &self.second,
        }
    }
}
