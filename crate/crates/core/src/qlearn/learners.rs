use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{sizes_for, sum_matrices};
use super::{
    additivity_residual, behavior_distribution, counter_response, counter_response_first, derive_seed,
    epsilon_greedy, greedy_pair, idqn_target, madqn_targets, nash_target, push_input, sample_index,
    zeta_schedule, Algorithm, NetPolicy, PolicyRule, QHead, ReplayBuffer, TrainConfig, TrainedModel,
};
use crate::error::{Error, Result};
use crate::game::{Agent, DiscretizedGame, Policy, Transition};
use crate::matrix_game::{argmax, argmin, nash_mixed, PayoffMatrix};
use crate::nn::{polyak_update, Adam, Mlp};

const NET_FIRST: u64 = 1;
const NET_SECOND: u64 = 2;
const STREAM_EXPLORE: u64 = 100;
const STREAM_BUFFER: u64 = 200;

/// One finished episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// 0 for single-run algorithms; CounterDQN's second run is 1.
    pub run: usize,
    pub episode: usize,
    /// Environment steps taken in this run when the episode ended.
    pub steps: usize,
    /// Quality index of the (exploring) episode.
    #[serde(rename = "J")]
    pub j: f64,
    pub zeta: f64,
    pub mean_loss: Option<f64>,
    /// DIDQN only: largest centered-matrix residual over the episode's states.
    pub additivity_residual: Option<f64>,
}

/// Line-delimited JSON, one record per line.
pub fn write_log<W: Write>(records: &[EpisodeRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub log: Vec<EpisodeRecord>,
}

struct QNet {
    online: Mlp,
    target: Mlp,
    adam: Adam,
    tau: f64,
}

impl QNet {
    fn new(sizes: &[usize], seed: u64, lr: f64, tau: f64) -> Self {
        let online = Mlp::new(sizes, seed);
        Self {
            target: online.clone(),
            adam: Adam::for_net(&online, lr),
            online,
            tau,
        }
    }

    fn fit(&mut self, p: &Prepared, selected: &[usize], targets: &[f64], step: usize) -> Result<f64> {
        let (loss, grad) = self.online.mse_grad(&p.inputs, p.n, selected, targets)?;
        check_loss(loss, step, p)?;
        self.adam.step(&mut self.online, &grad)?;
        polyak_update(&mut self.target, &self.online, self.tau)?;
        Ok(loss)
    }
}

fn check_loss(loss: f64, step: usize, p: &Prepared) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            loss,
            batch_dump: p.dump.clone(),
        })
    }
}

/// A minibatch laid out for the networks. Next-state inputs exist only for
/// non-terminal rows (`live`).
struct Prepared {
    n: usize,
    inputs: Vec<f64>,
    rewards: Vec<f64>,
    u: Vec<usize>,
    v: Vec<usize>,
    live: Vec<usize>,
    next_inputs: Vec<f64>,
    dump: String,
}

impl Prepared {
    fn new(dg: &DiscretizedGame, batch: &[&Transition]) -> Self {
        let mut p = Prepared {
            n: batch.len(),
            inputs: Vec::new(),
            rewards: Vec::with_capacity(batch.len()),
            u: Vec::with_capacity(batch.len()),
            v: Vec::with_capacity(batch.len()),
            live: Vec::new(),
            next_inputs: Vec::new(),
            dump: String::new(),
        };
        for (k, t) in batch.iter().enumerate() {
            push_input(dg, t.t_index, &t.x, &mut p.inputs);
            p.rewards.push(t.reward);
            p.u.push(t.u_index);
            p.v.push(t.v_index);
            if !t.terminal {
                p.live.push(k);
                push_input(dg, t.next_t_index, &t.x_next, &mut p.next_inputs);
            }
        }
        p.dump = serde_json::to_string(batch).unwrap_or_default();
        p
    }

    fn selected(&self, cols: usize) -> Vec<usize> {
        self.u.iter().zip(&self.v).map(|(a, b)| a * cols + b).collect()
    }

    /// `rewards` with `f(k, live_row)` filled in for every live row.
    fn targets(&self, mut f: impl FnMut(usize, usize) -> Result<f64>) -> Result<Vec<f64>> {
        let mut y = self.rewards.clone();
        for (row, &k) in self.live.iter().enumerate() {
            y[k] = f(k, row)?;
        }
        Ok(y)
    }
}

fn matrices(net: &Mlp, inputs: &[f64], n: usize, rows: usize, cols: usize) -> Result<Vec<PayoffMatrix>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    net.forward(inputs, n)?
        .chunks(rows * cols)
        .map(|c| PayoffMatrix::new(rows, cols, c.to_vec()))
        .collect()
}

fn single_input(dg: &DiscretizedGame, i: usize, x: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + 1);
    push_input(dg, i, x, &mut v);
    v
}

trait Learner {
    fn act(&self, dg: &DiscretizedGame, i: usize, x: &[f64], zeta: f64, rng: &mut ChaCha8Rng) -> Result<(usize, usize)>;

    fn update(&mut self, p: &Prepared, step: usize) -> Result<f64>;

    fn additivity(&self, _dg: &DiscretizedGame, _states: &[(usize, Vec<f64>)]) -> Result<Option<f64>> {
        Ok(None)
    }
}

struct LoopParams {
    steps: usize,
    batch_size: usize,
    buffer_capacity: usize,
    seed: u64,
    run: usize,
}

fn run_loop(dg: &DiscretizedGame, lp: &LoopParams, learner: &mut dyn Learner, log: &mut Vec<EpisodeRecord>) -> Result<()> {
    let run = lp.run as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(lp.seed, STREAM_EXPLORE + run));
    let mut buffer = ReplayBuffer::new(lp.buffer_capacity, derive_seed(lp.seed, STREAM_BUFFER + run));
    let x0 = dg.game().initial_state().to_vec();
    let mut x = x0.clone();
    let mut i = 0;
    let mut ret = 0.0;
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);
    let mut states: Vec<(usize, Vec<f64>)> = Vec::with_capacity(dg.num_steps());
    let mut episode = 0;
    for step in 0..lp.steps {
        let zeta = zeta_schedule(step, lp.steps);
        let (a, b) = learner.act(dg, i, &x, zeta, &mut rng)?;
        let out = dg.step(i, &x, a, b)?;
        ret += out.reward;
        states.push((i, x.clone()));
        buffer.push(Transition {
            t_index: i,
            x: x.clone(),
            u_index: a,
            v_index: b,
            reward: out.reward,
            next_t_index: i + 1,
            x_next: out.x_next.clone(),
            terminal: out.terminal,
        });
        if buffer.len() >= lp.batch_size {
            let batch = buffer.sample(lp.batch_size)?;
            let p = Prepared::new(dg, &batch);
            loss_sum += learner.update(&p, step)?;
            loss_count += 1;
        }
        if out.terminal {
            log.push(EpisodeRecord {
                run: lp.run,
                episode,
                steps: step + 1,
                j: ret,
                zeta,
                mean_loss: (loss_count > 0).then(|| loss_sum / loss_count as f64),
                additivity_residual: learner.additivity(dg, &states)?,
            });
            episode += 1;
            x.clone_from(&x0);
            i = 0;
            ret = 0.0;
            loss_sum = 0.0;
            loss_count = 0;
            states.clear();
        } else {
            x = out.x_next;
            i += 1;
        }
    }
    Ok(())
}

struct Idqn {
    net: QNet,
    rows: usize,
    cols: usize,
    gamma: f64,
}

impl Learner for Idqn {
    fn act(&self, dg: &DiscretizedGame, i: usize, x: &[f64], zeta: f64, rng: &mut ChaCha8Rng) -> Result<(usize, usize)> {
        let m = matrices(&self.net.online, &single_input(dg, i, x), 1, self.rows, self.cols)?;
        let (gu, gv) = greedy_pair(&m[0]);
        Ok((
            epsilon_greedy(gu, zeta, self.rows, rng),
            epsilon_greedy(gv, zeta, self.cols, rng),
        ))
    }

    fn update(&mut self, p: &Prepared, step: usize) -> Result<f64> {
        let next = matrices(&self.net.target, &p.next_inputs, p.live.len(), self.rows, self.cols)?;
        let y = p.targets(|k, row| Ok(idqn_target(p.rewards[k], Some(&next[row]), self.gamma)))?;
        self.net.fit(p, &p.selected(self.cols), &y, step)
    }
}

struct Didqn {
    first: QNet,
    second: QNet,
    rows: usize,
    cols: usize,
    gamma: f64,
}

impl Learner for Didqn {
    fn act(&self, dg: &DiscretizedGame, i: usize, x: &[f64], zeta: f64, rng: &mut ChaCha8Rng) -> Result<(usize, usize)> {
        let m = sum_matrices(&self.first.online, &self.second.online, &single_input(dg, i, x), 1)?;
        let (gu, gv) = greedy_pair(&m[0]);
        Ok((
            epsilon_greedy(gu, zeta, self.rows, rng),
            epsilon_greedy(gv, zeta, self.cols, rng),
        ))
    }

    fn update(&mut self, p: &Prepared, step: usize) -> Result<f64> {
        let next = sum_matrices(&self.first.target, &self.second.target, &p.next_inputs, p.live.len())?;
        let y = p.targets(|k, row| Ok(idqn_target(p.rewards[k], Some(&next[row]), self.gamma)))?;
        let c1 = self.first.online.forward_cached(&p.inputs, p.n)?;
        let c2 = self.second.online.forward_cached(&p.inputs, p.n)?;
        let (q1, q2) = (c1.output(), c2.output());
        let mut d1 = vec![0.0; q1.len()];
        let mut d2 = vec![0.0; q2.len()];
        let mut loss = 0.0;
        let n = p.n as f64;
        for k in 0..p.n {
            let (a, b) = (k * self.rows + p.u[k], k * self.cols + p.v[k]);
            let resid = q1[a] + q2[b] - y[k];
            loss += resid * resid;
            d1[a] = 2.0 * resid / n;
            d2[b] = 2.0 * resid / n;
        }
        let loss = loss / n;
        check_loss(loss, step, p)?;
        let g1 = self.first.online.backward(&c1, &d1)?;
        let g2 = self.second.online.backward(&c2, &d2)?;
        for (net, g) in [(&mut self.first, g1), (&mut self.second, g2)] {
            net.adam.step(&mut net.online, &g)?;
            polyak_update(&mut net.target, &net.online, net.tau)?;
        }
        Ok(loss)
    }

    fn additivity(&self, dg: &DiscretizedGame, states: &[(usize, Vec<f64>)]) -> Result<Option<f64>> {
        let mut inputs = Vec::new();
        for (i, x) in states {
            push_input(dg, *i, x, &mut inputs);
        }
        let worst = sum_matrices(&self.first.online, &self.second.online, &inputs, states.len())?
            .iter()
            .map(additivity_residual)
            .fold(0.0, f64::max);
        Ok(Some(worst))
    }
}

struct Madqn {
    u: QNet,
    v: QNet,
    rows: usize,
    cols: usize,
    gamma: f64,
}

impl Learner for Madqn {
    fn act(&self, dg: &DiscretizedGame, i: usize, x: &[f64], zeta: f64, rng: &mut ChaCha8Rng) -> Result<(usize, usize)> {
        let input = single_input(dg, i, x);
        let mu = matrices(&self.u.online, &input, 1, self.rows, self.cols)?;
        let mv = matrices(&self.v.online, &input, 1, self.rows, self.cols)?;
        Ok((
            epsilon_greedy(mu[0].pure_minimax().1, zeta, self.rows, rng),
            epsilon_greedy(mv[0].pure_maximin().1, zeta, self.cols, rng),
        ))
    }

    fn update(&mut self, p: &Prepared, step: usize) -> Result<f64> {
        let nu = matrices(&self.u.target, &p.next_inputs, p.live.len(), self.rows, self.cols)?;
        let nv = matrices(&self.v.target, &p.next_inputs, p.live.len(), self.rows, self.cols)?;
        let yu = p.targets(|k, row| Ok(madqn_targets(p.rewards[k], Some(&nu[row]), None, self.gamma).0))?;
        let yv = p.targets(|k, row| Ok(madqn_targets(p.rewards[k], None, Some(&nv[row]), self.gamma).1))?;
        let sel = p.selected(self.cols);
        let lu = self.u.fit(p, &sel, &yu, step)?;
        let lv = self.v.fit(p, &sel, &yv, step)?;
        Ok(0.5 * (lu + lv))
    }
}

/// One CounterDQN run learning `side`'s policy against a counter-playing
/// opponent.
struct Counter {
    net: QNet,
    side: Agent,
    rows: usize,
    cols: usize,
    gamma: f64,
}

impl Learner for Counter {
    fn act(&self, dg: &DiscretizedGame, i: usize, x: &[f64], zeta: f64, rng: &mut ChaCha8Rng) -> Result<(usize, usize)> {
        let m = &matrices(&self.net.online, &single_input(dg, i, x), 1, self.rows, self.cols)?[0];
        Ok(match self.side {
            Agent::First => {
                let u = epsilon_greedy(m.pure_minimax().1, zeta, self.rows, rng);
                let v = epsilon_greedy(counter_response(m, u), zeta, self.cols, rng);
                (u, v)
            }
            Agent::Second => {
                let v = epsilon_greedy(m.pure_maximin().1, zeta, self.cols, rng);
                let u = epsilon_greedy(counter_response_first(m, v), zeta, self.rows, rng);
                (u, v)
            }
        })
    }

    fn update(&mut self, p: &Prepared, step: usize) -> Result<f64> {
        let next = matrices(&self.net.target, &p.next_inputs, p.live.len(), self.rows, self.cols)?;
        let y = p.targets(|k, row| {
            let m = Some(&next[row]);
            let (yu, yv) = madqn_targets(p.rewards[k], m, m, self.gamma);
            Ok(match self.side {
                Agent::First => yu,
                Agent::Second => yv,
            })
        })?;
        self.net.fit(p, &p.selected(self.cols), &y, step)
    }
}

struct Nash {
    net: QNet,
    rows: usize,
    cols: usize,
    gamma: f64,
}

impl Learner for Nash {
    fn act(&self, dg: &DiscretizedGame, i: usize, x: &[f64], zeta: f64, rng: &mut ChaCha8Rng) -> Result<(usize, usize)> {
        let m = &matrices(&self.net.online, &single_input(dg, i, x), 1, self.rows, self.cols)?[0];
        let sol = nash_mixed(m)?;
        let du = behavior_distribution(&sol.row_dist, zeta);
        let dv = behavior_distribution(&sol.col_dist, zeta);
        Ok((sample_index(&du, rng.gen()), sample_index(&dv, rng.gen())))
    }

    fn update(&mut self, p: &Prepared, step: usize) -> Result<f64> {
        let next = matrices(&self.net.target, &p.next_inputs, p.live.len(), self.rows, self.cols)?;
        let y = p.targets(|k, row| nash_target(p.rewards[k], Some(&next[row]), self.gamma))?;
        self.net.fit(p, &p.selected(self.cols), &y, step)
    }
}

/// Single-agent double DQN over one agent's own mesh.
struct OwnQ {
    net: QNet,
    agent: Agent,
    gamma: f64,
}

impl OwnQ {
    fn greedy(&self, input: &[f64]) -> Result<usize> {
        let q = self.net.online.forward_one(input)?;
        Ok(match self.agent {
            Agent::First => argmin(&q),
            Agent::Second => argmax(&q),
        })
    }

    fn size(&self) -> usize {
        self.net.online.output_dim()
    }

    fn update(&mut self, p: &Prepared, step: usize) -> Result<f64> {
        let width = self.size();
        let live = p.live.len();
        let (online, target) = if live > 0 {
            (
                self.net.online.forward(&p.next_inputs, live)?,
                self.net.target.forward(&p.next_inputs, live)?,
            )
        } else {
            (Vec::new(), Vec::new())
        };
        let y = p.targets(|k, row| {
            let q = &online[row * width..(row + 1) * width];
            let pick = match self.agent {
                Agent::First => argmin(q),
                Agent::Second => argmax(q),
            };
            Ok(p.rewards[k] + self.gamma * target[row * width + pick])
        })?;
        let selected = match self.agent {
            Agent::First => &p.u,
            Agent::Second => &p.v,
        };
        self.net.fit(p, selected, &y, step)
    }
}

struct DoubleDdqn {
    u: OwnQ,
    v: OwnQ,
}

impl Learner for DoubleDdqn {
    fn act(&self, dg: &DiscretizedGame, i: usize, x: &[f64], zeta: f64, rng: &mut ChaCha8Rng) -> Result<(usize, usize)> {
        let input = single_input(dg, i, x);
        let a = epsilon_greedy(self.u.greedy(&input)?, zeta, self.u.size(), rng);
        let b = epsilon_greedy(self.v.greedy(&input)?, zeta, self.v.size(), rng);
        Ok((a, b))
    }

    fn update(&mut self, p: &Prepared, step: usize) -> Result<f64> {
        let lu = self.u.update(p, step)?;
        let lv = self.v.update(p, step)?;
        Ok(0.5 * (lu + lv))
    }
}

/// The free agent learns against a frozen opponent, which is part of the
/// environment.
struct Responder<'a> {
    q: OwnQ,
    frozen: &'a dyn Policy,
}

impl Learner for Responder<'_> {
    fn act(&self, dg: &DiscretizedGame, i: usize, x: &[f64], zeta: f64, rng: &mut ChaCha8Rng) -> Result<(usize, usize)> {
        let own = epsilon_greedy(self.q.greedy(&single_input(dg, i, x))?, zeta, self.q.size(), rng);
        let other = self.frozen.act(i, x);
        Ok(match self.q.agent {
            Agent::First => (own, other),
            Agent::Second => (other, own),
        })
    }

    fn update(&mut self, p: &Prepared, step: usize) -> Result<f64> {
        self.q.update(p, step)
    }
}

/// Trains `config.algorithm` on the catalog game named in the config.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let dg = config.discretize()?;
    train_on(config, &dg)
}

/// Decentralized 2xDDQN training; `config.algorithm` must say so.
pub fn train_decentralized(config: &TrainConfig) -> Result<TrainOutcome> {
    if config.algorithm != Algorithm::DoubleDdqn {
        return Err(Error::Config(format!(
            "decentralized training runs 2xddqn, config names {}",
            config.algorithm
        )));
    }
    train(config)
}

/// Trains on an explicit discretized game; the config's environment and mesh
/// fields are only recorded.
pub fn train_on(config: &TrainConfig, dg: &DiscretizedGame) -> Result<TrainOutcome> {
    config.validate()?;
    let input = dg.state_dim() + 1;
    let (rows, cols) = (dg.u_mesh().len(), dg.v_mesh().len());
    let hidden = &config.hidden;
    let net = |out: usize, stream: u64| QNet::new(&sizes_for(input, hidden, out), derive_seed(config.seed, stream), config.lr, config.tau);
    let lp = |steps: usize, run: usize| LoopParams {
        steps,
        batch_size: config.batch_size,
        buffer_capacity: config.buffer_capacity,
        seed: config.seed,
        run,
    };
    let gamma = config.gamma;
    let mut log = Vec::new();
    let greedy = |agent: Agent, head: QHead| NetPolicy::new(dg, agent, PolicyRule::Greedy { head });

    let (first, second) = match config.algorithm {
        Algorithm::Idqn => {
            let mut l = Idqn { net: net(rows * cols, NET_FIRST), rows, cols, gamma };
            run_loop(dg, &lp(config.total_steps, 0), &mut l, &mut log)?;
            let head = QHead::SharedMatrix { net: l.net.online, rows, cols };
            (greedy(Agent::First, head.clone()), greedy(Agent::Second, head))
        }
        Algorithm::Didqn => {
            let mut l = Didqn {
                first: net(rows, NET_FIRST),
                second: net(cols, NET_SECOND),
                rows,
                cols,
                gamma,
            };
            run_loop(dg, &lp(config.total_steps, 0), &mut l, &mut log)?;
            let head = QHead::Decomposed {
                first: l.first.online,
                second: l.second.online,
            };
            (greedy(Agent::First, head.clone()), greedy(Agent::Second, head))
        }
        Algorithm::Madqn => {
            let mut l = Madqn {
                u: net(rows * cols, NET_FIRST),
                v: net(rows * cols, NET_SECOND),
                rows,
                cols,
                gamma,
            };
            run_loop(dg, &lp(config.total_steps, 0), &mut l, &mut log)?;
            let head = QHead::PerAgent {
                first: l.u.online,
                second: l.v.online,
                rows,
                cols,
            };
            (greedy(Agent::First, head.clone()), greedy(Agent::Second, head))
        }
        Algorithm::CounterDqn => {
            let half = config.total_steps / 2;
            let mut heads = Vec::with_capacity(2);
            for (run, side, stream) in [(0, Agent::First, NET_FIRST), (1, Agent::Second, NET_SECOND)] {
                let steps = if run == 0 { half } else { config.total_steps - half };
                let mut l = Counter { net: net(rows * cols, stream), side, rows, cols, gamma };
                run_loop(dg, &lp(steps.max(1), run), &mut l, &mut log)?;
                heads.push(QHead::SharedMatrix { net: l.net.online, rows, cols });
            }
            let second = heads.pop().expect("two runs");
            let first = heads.pop().expect("two runs");
            (greedy(Agent::First, first), greedy(Agent::Second, second))
        }
        Algorithm::NashDqn => {
            let mut l = Nash { net: net(rows * cols, NET_FIRST), rows, cols, gamma };
            run_loop(dg, &lp(config.total_steps, 0), &mut l, &mut log)?;
            let head = QHead::SharedMatrix { net: l.net.online, rows, cols };
            let seed = derive_seed(config.seed, 300);
            (
                NetPolicy::new(dg, Agent::First, PolicyRule::NashSample { head: head.clone(), seed }),
                NetPolicy::new(dg, Agent::Second, PolicyRule::NashSample { head, seed }),
            )
        }
        Algorithm::DoubleDdqn => {
            let mut l = DoubleDdqn {
                u: OwnQ { net: net(rows, NET_FIRST), agent: Agent::First, gamma },
                v: OwnQ { net: net(cols, NET_SECOND), agent: Agent::Second, gamma },
            };
            run_loop(dg, &lp(config.total_steps, 0), &mut l, &mut log)?;
            (
                NetPolicy::new(dg, Agent::First, PolicyRule::Own { net: l.u.net.online }),
                NetPolicy::new(dg, Agent::Second, PolicyRule::Own { net: l.v.net.online }),
            )
        }
    };
    Ok(TrainOutcome {
        model: TrainedModel::new(config.clone(), first, second),
        log,
    })
}

/// Hyperparameters of a learned best response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestResponseConfig {
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub buffer_capacity: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for BestResponseConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            hidden: vec![256, 128],
            steps: 50_000,
            batch_size: 64,
            tau: 0.01,
            buffer_capacity: super::DEFAULT_CAPACITY,
            gamma: 1.0,
            seed: 0,
        }
    }
}

/// Single-agent double DQN for the agent opposite `frozen_agent`, with the
/// frozen policy treated as part of the environment.
pub fn train_best_response(
    dg: &DiscretizedGame,
    frozen: &dyn Policy,
    frozen_agent: Agent,
    cfg: &BestResponseConfig,
) -> Result<(NetPolicy, Vec<EpisodeRecord>)> {
    if cfg.steps == 0 || cfg.batch_size == 0 || cfg.buffer_capacity < cfg.batch_size {
        return Err(Error::Config("best response needs positive steps and batch within capacity".into()));
    }
    let free = frozen_agent.other();
    let (size, stream) = match free {
        Agent::First => (dg.u_mesh().len(), NET_FIRST),
        Agent::Second => (dg.v_mesh().len(), NET_SECOND),
    };
    let sizes = sizes_for(dg.state_dim() + 1, &cfg.hidden, size);
    let mut l = Responder {
        q: OwnQ {
            net: QNet::new(&sizes, derive_seed(cfg.seed, stream), cfg.lr, cfg.tau),
            agent: free,
            gamma: cfg.gamma,
        },
        frozen,
    };
    let mut log = Vec::new();
    let lp = LoopParams {
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        buffer_capacity: cfg.buffer_capacity,
        seed: cfg.seed,
        run: 0,
    };
    run_loop(dg, &lp, &mut l, &mut log)?;
    Ok((NetPolicy::new(dg, free, PolicyRule::Own { net: l.q.net.online }), log))
}
