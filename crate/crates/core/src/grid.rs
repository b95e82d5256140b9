//! Backward induction of the discrete game on multilinearly interpolated
//! state grids: upper and lower values, Q matrices, best responses to frozen
//! policies, and greedy policy extraction.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::EnvEntry;
use crate::error::{Error, Result};
use crate::game::{Agent, ContinuousGame, DiscretizedGame, Policy};
use crate::matrix_game::PayoffMatrix;

pub const MAX_GRID_DIM: usize = 3;

/// Rollouts with uniformly random actions used to sample the reach tube.
pub const TUBE_ROLLOUTS: usize = 2000;
const TUBE_SEED: u64 = 0x7ab3;

const MAGIC: &[u8; 4] = b"DGVG";
const FORMAT_VERSION: u32 = 1;

/// Tensor-product grid of nodes over a box. Queries outside the box are
/// clamped to its boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateGrid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    nodes: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
struct Stencil {
    idx: [usize; 8],
    w: [f64; 8],
    len: usize,
    clamped: bool,
}

impl StateGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, nodes: Vec<usize>) -> Result<Self> {
        let dim = lo.len();
        if dim == 0 || hi.len() != dim || nodes.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "ranges {lo:?}..{hi:?} with node counts {nodes:?}"
            )));
        }
        if dim > MAX_GRID_DIM {
            return Err(Error::UnsupportedDimension(dim));
        }
        for d in 0..dim {
            if !(lo[d].is_finite() && hi[d].is_finite() && lo[d] < hi[d]) {
                return Err(Error::InvalidGrid(format!("empty range {}..{} in dimension {d}", lo[d], hi[d])));
            }
            if nodes[d] < 2 {
                return Err(Error::InvalidGrid(format!("dimension {d} needs at least two nodes")));
            }
        }
        let total: usize = nodes.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n)).ok_or_else(|| {
            Error::InvalidGrid("node count overflows".into())
        })?;
        if total > 50_000_000 {
            return Err(Error::InvalidGrid(format!("{total} nodes is too many")));
        }
        Ok(Self { lo, hi, nodes })
    }

    /// `[-r, r]` in every dimension.
    pub fn symmetric(radius: f64, dim: usize, nodes: usize) -> Result<Self> {
        Self::new(vec![-radius; dim], vec![radius; dim], vec![nodes; dim])
    }

    /// Box `±safety * R(T)` around the origin, from the game's growth bound.
    pub fn from_growth_bound(game: &ContinuousGame, safety: f64, nodes: usize) -> Result<Self> {
        let r = safety * game.reach_radius(game.horizon());
        Self::symmetric(r, game.state_dim(), nodes)
    }

    /// The catalog's oracle grid for `entry`.
    pub fn for_env(entry: &EnvEntry) -> Result<Self> {
        let o = entry.oracle.ok_or_else(|| {
            let dim = entry.game().state_dim();
            if dim > MAX_GRID_DIM {
                Error::UnsupportedDimension(dim)
            } else {
                Error::InvalidGrid(format!("no oracle grid configured for {}", entry.name))
            }
        })?;
        Self::new(o.lo.to_vec(), o.hi.to_vec(), o.nodes.to_vec())
    }

    /// Same box with every spacing halved.
    pub fn refined(&self) -> Self {
        Self {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            nodes: self.nodes.iter().map(|n| 2 * n - 1).collect(),
        }
    }

    /// Same box with every spacing doubled; requires an even number of cells.
    pub fn coarsened(&self) -> Result<Self> {
        if self.nodes.iter().any(|n| (n - 1) % 2 != 0 || *n < 3) {
            return Err(Error::InvalidGrid(format!("cannot coarsen {:?} nodes", self.nodes)));
        }
        Ok(Self {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            nodes: self.nodes.iter().map(|n| n.div_ceil(2)).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn spacing(&self, d: usize) -> f64 {
        (self.hi[d] - self.lo[d]) / (self.nodes[d] - 1) as f64
    }

    /// Coordinates of node `k` (last dimension varies fastest).
    pub fn node_point(&self, mut k: usize, out: &mut [f64]) {
        for d in (0..self.dim()).rev() {
            let j = k % self.nodes[d];
            k /= self.nodes[d];
            out[d] = if j == self.nodes[d] - 1 {
                self.hi[d]
            } else {
                self.lo[d] + j as f64 * self.spacing(d)
            };
        }
    }

    pub fn node(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.node_point(k, &mut out);
        out
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// True when the box contains `±R(T)` in every dimension.
    pub fn covers_growth_bound(&self, game: &ContinuousGame) -> bool {
        let r = game.reach_radius(game.horizon());
        self.lo.iter().zip(&self.hi).all(|(l, h)| *l <= -r && *h >= r)
    }

    fn stencil(&self, x: &[f64]) -> Stencil {
        let dim = self.dim();
        let mut base = [0usize; MAX_GRID_DIM];
        let mut frac = [0.0; MAX_GRID_DIM];
        let mut stride = [0usize; MAX_GRID_DIM];
        let mut clamped = false;
        let mut s_acc = 1;
        for d in (0..dim).rev() {
            stride[d] = s_acc;
            s_acc *= self.nodes[d];
        }
        for d in 0..dim {
            let n = self.nodes[d];
            let h = self.spacing(d);
            let slack = 1e-9 * h;
            if x[d] < self.lo[d] - slack || x[d] > self.hi[d] + slack {
                clamped = true;
            }
            let mut s = ((x[d] - self.lo[d]) / h).clamp(0.0, (n - 1) as f64);
            let r = s.round();
            if (s - r).abs() < 1e-9 {
                s = r;
            }
            let j = (s.floor() as usize).min(n - 2);
            base[d] = j;
            frac[d] = s - j as f64;
        }
        let len = 1 << dim;
        let mut st = Stencil {
            idx: [0; 8],
            w: [0.0; 8],
            len,
            clamped,
        };
        for mask in 0..len {
            let mut idx = 0;
            let mut w = 1.0;
            for d in 0..dim {
                if mask >> d & 1 == 1 {
                    idx += (base[d] + 1) * stride[d];
                    w *= frac[d];
                } else {
                    idx += base[d] * stride[d];
                    w *= 1.0 - frac[d];
                }
            }
            st.idx[mask] = idx;
            st.w[mask] = w;
        }
        st
    }

    /// Multilinear interpolation of node `values` at `x`, and whether `x` had
    /// to be clamped into the box.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> (f64, bool) {
        let st = self.stencil(x);
        (apply(&st, values), st.clamped)
    }
}

fn apply(st: &Stencil, values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for c in 0..st.len {
        if st.w[c] != 0.0 {
            acc += st.w[c] * values[st.idx[c]];
        }
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    /// Minimax recursion, `V_u`.
    Upper,
    /// Maximin recursion, `V_v`.
    Lower,
    /// Best response of the free agent when `frozen` plays a fixed policy.
    BestResponse { frozen: Agent },
}

impl ValueKind {
    fn code(self) -> u8 {
        match self {
            ValueKind::Upper => 0,
            ValueKind::Lower => 1,
            ValueKind::BestResponse { frozen: Agent::First } => 2,
            ValueKind::BestResponse { frozen: Agent::Second } => 3,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => ValueKind::Upper,
            1 => ValueKind::Lower,
            2 => ValueKind::BestResponse { frozen: Agent::First },
            3 => ValueKind::BestResponse { frozen: Agent::Second },
            _ => return Err(Error::InvalidGrid(format!("unknown value kind {c}"))),
        })
    }
}

/// Node values at every partition time `t_0 .. t_{m+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueGrid {
    kind: ValueKind,
    grid: StateGrid,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl ValueGrid {
    pub fn kind(&self) -> ValueKind {
        self.kind
    }

    pub fn grid(&self) -> &StateGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn num_times(&self) -> usize {
        self.values.len()
    }

    /// Node values at time index `i`.
    pub fn slice(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn value(&self, i: usize, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values[i], x).0
    }

    fn check_game(&self, dg: &DiscretizedGame) -> Result<()> {
        if self.times != dg.partition().times() {
            return Err(Error::InvalidGrid("value grid was solved on a different partition".into()));
        }
        if self.grid.dim() != dg.state_dim() {
            return Err(Error::InvalidGrid("value grid dimension differs from the game".into()));
        }
        Ok(())
    }

    /// Little-endian binary table: header, grid description, times, and one
    /// value array per time.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u8(self.kind.code())?;
        w.write_u32::<LittleEndian>(self.grid.dim() as u32)?;
        for d in 0..self.grid.dim() {
            w.write_f64::<LittleEndian>(self.grid.lo[d])?;
            w.write_f64::<LittleEndian>(self.grid.hi[d])?;
            w.write_u32::<LittleEndian>(self.grid.nodes[d] as u32)?;
        }
        w.write_u32::<LittleEndian>(self.times.len() as u32)?;
        for t in &self.times {
            w.write_f64::<LittleEndian>(*t)?;
        }
        for slice in &self.values {
            for v in slice {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::InvalidGrid("not a value grid file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::InvalidGrid(format!("unsupported value grid version {version}")));
        }
        let kind = ValueKind::from_code(r.read_u8()?)?;
        let dim = r.read_u32::<LittleEndian>()? as usize;
        if dim == 0 || dim > MAX_GRID_DIM {
            return Err(Error::InvalidGrid(format!("grid dimension {dim}")));
        }
        let (mut lo, mut hi, mut nodes) = (vec![], vec![], vec![]);
        for _ in 0..dim {
            lo.push(r.read_f64::<LittleEndian>()?);
            hi.push(r.read_f64::<LittleEndian>()?);
            nodes.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let grid = StateGrid::new(lo, hi, nodes)?;
        let num_times = r.read_u32::<LittleEndian>()? as usize;
        if num_times < 2 {
            return Err(Error::InvalidGrid("value grid needs at least two times".into()));
        }
        let times = (0..num_times)
            .map(|_| r.read_f64::<LittleEndian>())
            .collect::<std::io::Result<Vec<_>>>()?;
        let n = grid.num_nodes();
        let mut values = Vec::with_capacity(num_times);
        for _ in 0..num_times {
            let mut slice = vec![0.0; n];
            r.read_f64_into::<LittleEndian>(&mut slice)?;
            values.push(slice);
        }
        Ok(Self {
            kind,
            grid,
            times,
            values,
        })
    }
}

/// Per time index, the bounding box of states visited by sampled rollouts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReachTube {
    lo: Vec<Vec<f64>>,
    hi: Vec<Vec<f64>>,
}

impl ReachTube {
    /// Rollouts with every constant action pair plus `random` rollouts with
    /// uniformly random actions at every step.
    pub fn sample(dg: &DiscretizedGame, random: usize, seed: u64) -> Result<Self> {
        let steps = dg.num_steps();
        let x0 = dg.game().initial_state().to_vec();
        let mut tube = Self {
            lo: vec![x0.clone(); steps + 1],
            hi: vec![x0.clone(); steps + 1],
        };
        let (nu, nv) = (dg.u_mesh().len(), dg.v_mesh().len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let run = |tube: &mut Self, pick: &mut dyn FnMut(usize) -> (usize, usize)| -> Result<()> {
            let mut x = x0.clone();
            for i in 0..steps {
                let (a, b) = pick(i);
                x = dg.step(i, &x, a, b)?.x_next;
                for (d, c) in x.iter().enumerate() {
                    tube.lo[i + 1][d] = tube.lo[i + 1][d].min(*c);
                    tube.hi[i + 1][d] = tube.hi[i + 1][d].max(*c);
                }
            }
            Ok(())
        };
        for a in 0..nu {
            for b in 0..nv {
                run(&mut tube, &mut |_| (a, b))?;
            }
        }
        for _ in 0..random {
            run(&mut tube, &mut |_| (rng.gen_range(0..nu), rng.gen_range(0..nv)))?;
        }
        Ok(tube)
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    pub fn bounds(&self, i: usize) -> (&[f64], &[f64]) {
        (&self.lo[i], &self.hi[i])
    }

    /// Membership in the box at time `i` widened by `margin` per dimension.
    pub fn contains(&self, i: usize, x: &[f64], margin: &[f64]) -> bool {
        (0..x.len()).all(|d| x[d] >= self.lo[i][d] - margin[d] && x[d] <= self.hi[i][d] + margin[d])
    }
}

/// Counts of successor states that fell outside the grid and were clamped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ClampStats {
    /// Over all nodes and action pairs.
    pub total: u64,
    /// Only from nodes inside the sampled reach tube (widened by two cells).
    pub relevant: u64,
}

impl std::ops::AddAssign for ClampStats {
    fn add_assign(&mut self, o: Self) {
        self.total += o.total;
        self.relevant += o.relevant;
    }
}

#[derive(Clone, Debug)]
pub struct GridSolution {
    pub upper: ValueGrid,
    pub lower: ValueGrid,
    pub clamps: ClampStats,
    pub tube: ReachTube,
}

impl GridSolution {
    pub fn upper_at_start(&self, dg: &DiscretizedGame) -> f64 {
        self.upper.value(0, dg.game().initial_state())
    }

    pub fn lower_at_start(&self, dg: &DiscretizedGame) -> f64 {
        self.lower.value(0, dg.game().initial_state())
    }

    /// Largest `upper - lower` over nodes at time index `i`.
    pub fn max_gap(&self, i: usize) -> f64 {
        self.upper
            .slice(i)
            .iter()
            .zip(self.lower.slice(i))
            .map(|(u, l)| u - l)
            .fold(0.0, f64::max)
    }

    /// Mean of `upper - lower` over nodes inside the reach tube, all times
    /// before the horizon.
    pub fn mean_tube_gap(&self) -> f64 {
        let grid = self.upper.grid();
        let margin = tube_margin(grid);
        let mut x = vec![0.0; grid.dim()];
        let (mut sum, mut count) = (0.0, 0usize);
        for i in 0..self.upper.num_times() - 1 {
            let (u, l) = (self.upper.slice(i), self.lower.slice(i));
            for k in 0..grid.num_nodes() {
                grid.node_point(k, &mut x);
                if self.tube.contains(i, &x, &margin) {
                    sum += u[k] - l[k];
                    count += 1;
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }
}

fn tube_margin(grid: &StateGrid) -> Vec<f64> {
    (0..grid.dim()).map(|d| 2.0 * grid.spacing(d)).collect()
}

fn check_dims(dg: &DiscretizedGame, grid: &StateGrid) -> Result<()> {
    let n = dg.state_dim();
    if n > MAX_GRID_DIM {
        return Err(Error::UnsupportedDimension(n));
    }
    if grid.dim() != n {
        return Err(Error::InvalidGrid(format!(
            "grid has dimension {}, game state has {n}",
            grid.dim()
        )));
    }
    Ok(())
}

/// `r + V(t_{i+1}, x')` for one action pair and each table in `next`, where
/// the terminal cost replaces interpolation on the last step. Returns whether
/// `x'` was clamped.
fn backup_pair(
    dg: &DiscretizedGame,
    grid: &StateGrid,
    i: usize,
    x: &[f64],
    u_idx: usize,
    v_idx: usize,
    next: &[&[f64]],
    x_next: &mut [f64],
    out: &mut [f64],
) -> Result<bool> {
    let r = dg.advance(i, x, &dg.u_mesh()[u_idx], &dg.v_mesh()[v_idx], x_next);
    if !r.is_finite() || x_next.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite {
            what: "grid successor",
            step: i,
            detail: format!("x={x:?} u={u_idx} v={v_idx}"),
        });
    }
    if i == dg.partition().last_step() {
        let sigma = dg.game().terminal_cost(x_next);
        out[..next.len()].iter_mut().for_each(|o| *o = r + sigma);
        return Ok(false);
    }
    let st = grid.stencil(x_next);
    for (o, table) in out.iter_mut().zip(next) {
        *o = r + apply(&st, table);
    }
    Ok(st.clamped)
}

fn terminal_slice(dg: &DiscretizedGame, grid: &StateGrid) -> Vec<f64> {
    (0..grid.num_nodes())
        .into_par_iter()
        .map(|k| dg.game().terminal_cost(&grid.node(k)))
        .collect()
}

/// Upper and lower value grids by backward induction.
pub fn solve(dg: &DiscretizedGame, grid: &StateGrid) -> Result<GridSolution> {
    check_dims(dg, grid)?;
    let tube = ReachTube::sample(dg, TUBE_ROLLOUTS, TUBE_SEED)?;
    let margin = tube_margin(grid);
    let steps = dg.num_steps();
    let (nu, nv) = (dg.u_mesh().len(), dg.v_mesh().len());
    let terminal = terminal_slice(dg, grid);
    let mut upper = vec![Vec::new(); steps + 1];
    let mut lower = vec![Vec::new(); steps + 1];
    upper[steps] = terminal.clone();
    lower[steps] = terminal;
    let mut clamps = ClampStats::default();

    for i in (0..steps).rev() {
        let next = [upper[i + 1].as_slice(), lower[i + 1].as_slice()];
        let rows: Vec<Result<(f64, f64, u64)>> = (0..grid.num_nodes())
            .into_par_iter()
            .map(|k| {
                let x = grid.node(k);
                let mut x_next = vec![0.0; x.len()];
                let mut q_u = vec![0.0; nu * nv];
                let mut q_l = vec![0.0; nu * nv];
                let mut pair = [0.0; 2];
                let mut clamped = 0u64;
                for a in 0..nu {
                    for b in 0..nv {
                        if backup_pair(dg, grid, i, &x, a, b, &next, &mut x_next, &mut pair)? {
                            clamped += 1;
                        }
                        q_u[a * nv + b] = pair[0];
                        q_l[a * nv + b] = pair[1];
                    }
                }
                let up = q_u
                    .chunks(nv)
                    .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                    .fold(f64::INFINITY, f64::min);
                let lo = (0..nv)
                    .map(|b| (0..nu).map(|a| q_l[a * nv + b]).fold(f64::INFINITY, f64::min))
                    .fold(f64::NEG_INFINITY, f64::max);
                Ok((up, lo, clamped))
            })
            .collect();
        let mut up_slice = Vec::with_capacity(rows.len());
        let mut lo_slice = Vec::with_capacity(rows.len());
        let mut x = vec![0.0; grid.dim()];
        for (k, row) in rows.into_iter().enumerate() {
            let (u, l, c) = row?;
            up_slice.push(u);
            lo_slice.push(l);
            if c > 0 {
                clamps.total += c;
                grid.node_point(k, &mut x);
                if tube.contains(i, &x, &margin) {
                    clamps.relevant += c;
                }
            }
        }
        upper[i] = up_slice;
        lower[i] = lo_slice;
    }

    let times = dg.partition().times().to_vec();
    Ok(GridSolution {
        upper: ValueGrid {
            kind: ValueKind::Upper,
            grid: grid.clone(),
            times: times.clone(),
            values: upper,
        },
        lower: ValueGrid {
            kind: ValueKind::Lower,
            grid: grid.clone(),
            times,
            values: lower,
        },
        clamps,
        tube,
    })
}

/// Entry `(u, v)` is `dt f0 + V(t_{i+1}, x + dt f)`: `Q_u` for upper values,
/// `Q_v` for lower ones.
pub fn q_values(dg: &DiscretizedGame, values: &ValueGrid, i: usize, x: &[f64]) -> Result<PayoffMatrix> {
    values.check_game(dg)?;
    let last = dg.partition().last_step();
    if i > last {
        return Err(Error::TimeIndexOutOfRange { index: i, last });
    }
    let (nu, nv) = (dg.u_mesh().len(), dg.v_mesh().len());
    let mut data = vec![0.0; nu * nv];
    let mut x_next = vec![0.0; x.len()];
    let next = [values.slice(i + 1)];
    let mut out = [0.0];
    for a in 0..nu {
        for b in 0..nv {
            backup_pair(dg, values.grid(), i, x, a, b, &next, &mut x_next, &mut out)?;
            data[a * nv + b] = out[0];
        }
    }
    PayoffMatrix::new(nu, nv, data)
}

/// Values of the free agent's best response while `frozen_agent` follows
/// `frozen` (evaluated at grid nodes). From the first agent's side this is
/// its guaranteed result `V_u^{pi_u}`, from the second agent's `V_v^{pi_v}`.
pub fn best_response_value(
    dg: &DiscretizedGame,
    grid: &StateGrid,
    frozen: &dyn Policy,
    frozen_agent: Agent,
) -> Result<(ValueGrid, ClampStats)> {
    check_dims(dg, grid)?;
    let steps = dg.num_steps();
    let (nu, nv) = (dg.u_mesh().len(), dg.v_mesh().len());
    let mut values = vec![Vec::new(); steps + 1];
    values[steps] = terminal_slice(dg, grid);
    let mut clamps = ClampStats::default();
    let dim = grid.dim();
    let mut all_nodes = vec![0.0; grid.num_nodes() * dim];
    for (k, chunk) in all_nodes.chunks_mut(dim).enumerate() {
        grid.node_point(k, chunk);
    }
    for i in (0..steps).rev() {
        let next = [values[i + 1].as_slice()];
        let actions = frozen.act_batch(i, &all_nodes, dim);
        let rows: Vec<Result<(f64, u64)>> = (0..grid.num_nodes())
            .into_par_iter()
            .map(|k| {
                let x = &all_nodes[k * dim..(k + 1) * dim];
                let mut x_next = vec![0.0; dim];
                let mut out = [0.0];
                let mut clamped = 0u64;
                let fixed = actions[k];
                let free_count = match frozen_agent {
                    Agent::First => nv,
                    Agent::Second => nu,
                };
                let fixed_limit = match frozen_agent {
                    Agent::First => nu,
                    Agent::Second => nv,
                };
                if fixed >= fixed_limit {
                    return Err(Error::ActionIndexOutOfRange {
                        index: fixed,
                        size: fixed_limit,
                    });
                }
                let mut best = match frozen_agent {
                    Agent::First => f64::NEG_INFINITY,
                    Agent::Second => f64::INFINITY,
                };
                for free in 0..free_count {
                    let (a, b) = match frozen_agent {
                        Agent::First => (fixed, free),
                        Agent::Second => (free, fixed),
                    };
                    if backup_pair(dg, grid, i, x, a, b, &next, &mut x_next, &mut out)? {
                        clamped += 1;
                    }
                    best = match frozen_agent {
                        Agent::First => best.max(out[0]),
                        Agent::Second => best.min(out[0]),
                    };
                }
                Ok((best, clamped))
            })
            .collect();
        let mut slice = Vec::with_capacity(rows.len());
        for row in rows {
            let (v, c) = row?;
            slice.push(v);
            clamps.total += c;
        }
        values[i] = slice;
    }
    Ok((
        ValueGrid {
            kind: ValueKind::BestResponse { frozen: frozen_agent },
            grid: grid.clone(),
            times: dg.partition().times().to_vec(),
            values,
        },
        clamps,
    ))
}

/// Greedy feedback policy read off a solved grid: the first agent minimizes
/// the row maxima of `Q_u`, the second maximizes the column minima of `Q_v`.
pub struct GridGreedyPolicy<'a> {
    dg: &'a DiscretizedGame,
    values: &'a ValueGrid,
    agent: Agent,
}

impl<'a> GridGreedyPolicy<'a> {
    /// `values` should be the upper grid for the first agent and the lower
    /// grid for the second.
    pub fn new(dg: &'a DiscretizedGame, values: &'a ValueGrid, agent: Agent) -> Result<Self> {
        values.check_game(dg)?;
        Ok(Self { dg, values, agent })
    }
}

impl Policy for GridGreedyPolicy<'_> {
    fn act(&self, i: usize, x: &[f64]) -> usize {
        let q = q_values(self.dg, self.values, i, x).expect("validated grid and finite dynamics");
        match self.agent {
            Agent::First => q.pure_minimax().1,
            Agent::Second => q.pure_maximin().1,
        }
    }
}

/// The free agent's greedy response to a frozen policy, read off a
/// best-response grid.
pub struct BestResponsePolicy<'a> {
    dg: &'a DiscretizedGame,
    values: &'a ValueGrid,
    frozen: &'a dyn Policy,
    frozen_agent: Agent,
}

impl<'a> BestResponsePolicy<'a> {
    pub fn new(
        dg: &'a DiscretizedGame,
        values: &'a ValueGrid,
        frozen: &'a dyn Policy,
        frozen_agent: Agent,
    ) -> Result<Self> {
        values.check_game(dg)?;
        Ok(Self {
            dg,
            values,
            frozen,
            frozen_agent,
        })
    }
}

impl Policy for BestResponsePolicy<'_> {
    fn act(&self, i: usize, x: &[f64]) -> usize {
        let fixed = self.frozen.act(i, x);
        let mut x_next = vec![0.0; x.len()];
        let next = [self.values.slice(i + 1)];
        let mut out = [0.0];
        let (count, maximize) = match self.frozen_agent {
            Agent::First => (self.dg.v_mesh().len(), true),
            Agent::Second => (self.dg.u_mesh().len(), false),
        };
        let mut best = (0, if maximize { f64::NEG_INFINITY } else { f64::INFINITY });
        for free in 0..count {
            let (a, b) = match self.frozen_agent {
                Agent::First => (fixed, free),
                Agent::Second => (free, fixed),
            };
            backup_pair(self.dg, self.values.grid(), i, x, a, b, &next, &mut x_next, &mut out)
                .expect("validated grid and finite dynamics");
            let better = if maximize { out[0] > best.1 } else { out[0] < best.1 };
            if better {
                best = (free, out[0]);
            }
        }
        best.0
    }
}

/// A frozen policy's guaranteed result: the grid best-response value at
/// `(0, x0)` and the quality index of an actual rollout against the greedy
/// best response.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GuaranteedResult {
    pub grid_value: f64,
    pub rollout_value: f64,
    pub clamps: ClampStats,
}

pub fn guaranteed_result(
    dg: &DiscretizedGame,
    grid: &StateGrid,
    frozen: &dyn Policy,
    frozen_agent: Agent,
) -> Result<GuaranteedResult> {
    let (br, clamps) = best_response_value(dg, grid, frozen, frozen_agent)?;
    let responder = BestResponsePolicy::new(dg, &br, frozen, frozen_agent)?;
    let rollout_value = match frozen_agent {
        Agent::First => dg.play(frozen, &responder)?,
        Agent::Second => dg.play(&responder, frozen)?,
    };
    Ok(GuaranteedResult {
        grid_value: br.value(0, dg.game().initial_state()),
        rollout_value,
        clamps,
    })
}

/// The catalog's oracle discretization and grid for `entry`.
pub fn oracle_problem(entry: &EnvEntry) -> Result<(DiscretizedGame, StateGrid)> {
    let grid = StateGrid::for_env(entry)?;
    let dt = entry.oracle.expect("for_env checked the oracle").dt;
    Ok((entry.discretize(dt)?, grid))
}
