//! Finite zero-sum matrix games. The row player minimizes, the column player
//! maximizes. Ties are always broken toward the lowest index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest tolerated equilibrium violation of [`nash_mixed`].
pub const NASH_EPSILON: f64 = 1e-6;

const PIVOT_EPS: f64 = 1e-12;

/// Row-major `rows x cols` payoff matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoffMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl PayoffMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidMatrix("matrix needs at least one row and column".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidMatrix(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidMatrix("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v + c).collect(),
        }
    }

    /// `min_rows max_cols M` and the first row attaining it.
    pub fn pure_minimax(&self) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for r in 0..self.rows {
            let worst = self.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if worst < best.0 {
                best = (worst, r);
            }
        }
        best
    }

    /// `max_cols min_rows M` and the first column attaining it.
    pub fn pure_maximin(&self) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for c in 0..self.cols {
            let worst = (0..self.rows).map(|r| self.get(r, c)).fold(f64::INFINITY, f64::min);
            if worst > best.0 {
                best = (worst, c);
            }
        }
        best
    }

    /// First column maximizing row `r`.
    pub fn row_argmax(&self, r: usize) -> usize {
        argmax(self.row(r))
    }

    /// First row minimizing column `c`.
    pub fn col_argmin(&self, c: usize) -> usize {
        let mut best = (f64::INFINITY, 0);
        for r in 0..self.rows {
            let v = self.get(r, c);
            if v < best.0 {
                best = (v, r);
            }
        }
        best.1
    }

    /// `p^T M q`.
    pub fn bilinear(&self, p: &[f64], q: &[f64]) -> f64 {
        (0..self.rows)
            .map(|r| p[r] * self.row(r).iter().zip(q).map(|(m, qc)| m * qc).sum::<f64>())
            .sum()
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, &v) in xs.iter().enumerate() {
        if v > best.0 {
            best = (v, i);
        }
    }
    best.1
}

pub(crate) fn argmin(xs: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, &v) in xs.iter().enumerate() {
        if v < best.0 {
            best = (v, i);
        }
    }
    best.1
}

/// Mixed equilibrium of a matrix game.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixedSolution {
    pub value: f64,
    pub row_dist: Vec<f64>,
    pub col_dist: Vec<f64>,
    /// Largest deviation gain of either player against the pair.
    pub epsilon: f64,
}

/// Mixed equilibrium by the simplex method on the minimizer's linear
/// program `max 1'x  s.t.  M'^T x <= 1, x >= 0` with `M'` shifted positive.
/// The maximizer's strategy is read from the optimal duals. Bland's rule
/// keeps pivoting deterministic.
pub fn nash_mixed(m: &PayoffMatrix) -> Result<MixedSolution> {
    let (rows, cols) = (m.rows, m.cols);
    // A pure saddle point is an equilibrium; skip the LP.
    let (upper, r0) = m.pure_minimax();
    let (lower, c0) = m.pure_maximin();
    if upper == lower {
        let mut row_dist = vec![0.0; rows];
        let mut col_dist = vec![0.0; cols];
        row_dist[r0] = 1.0;
        col_dist[c0] = 1.0;
        return finish(m, row_dist, col_dist);
    }

    let min = m.data.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = 1.0 - min;

    // Tableau: `cols` constraint rows over `rows` structural variables and
    // `cols` slacks, then the right-hand side. The last row holds reduced
    // costs of the maximization.
    let width = rows + cols + 1;
    let mut tab = vec![0.0; (cols + 1) * width];
    for c in 0..cols {
        let line = &mut tab[c * width..(c + 1) * width];
        for r in 0..rows {
            line[r] = m.get(r, c) + shift;
        }
        line[rows + c] = 1.0;
        line[width - 1] = 1.0;
    }
    {
        let obj = &mut tab[cols * width..];
        obj[..rows].fill(1.0);
    }
    let mut basis: Vec<usize> = (rows..rows + cols).collect();

    let max_pivots = 50 * (rows + cols) * (rows + cols).max(10);
    let mut pivots = 0;
    loop {
        let obj = &tab[cols * width..];
        let Some(enter) = (0..rows + cols).find(|&j| obj[j] > PIVOT_EPS) else {
            break;
        };
        let mut leave: Option<(f64, usize)> = None;
        for c in 0..cols {
            let a = tab[c * width + enter];
            if a > PIVOT_EPS {
                let ratio = tab[c * width + width - 1] / a;
                let better = match leave {
                    None => true,
                    Some((best, bc)) => {
                        ratio < best - PIVOT_EPS || (ratio <= best + PIVOT_EPS && basis[c] < basis[bc])
                    }
                };
                if better {
                    leave = Some((ratio, c));
                }
            }
        }
        // The feasible region is bounded because M' > 0.
        let (_, pivot_row) = leave.expect("bounded linear program");
        pivot(&mut tab, width, cols + 1, pivot_row, enter);
        basis[pivot_row] = enter;
        pivots += 1;
        if pivots > max_pivots {
            break;
        }
    }

    let mut x = vec![0.0; rows];
    for (c, &b) in basis.iter().enumerate() {
        if b < rows {
            x[b] = tab[c * width + width - 1];
        }
    }
    // Duals of the column constraints are minus the slack reduced costs.
    let obj = &tab[cols * width..];
    let y: Vec<f64> = (0..cols).map(|c| (-obj[rows + c]).max(0.0)).collect();

    let row_dist = normalize(x);
    let col_dist = normalize(y);
    finish(m, row_dist, col_dist)
}

fn pivot(tab: &mut [f64], width: usize, height: usize, row: usize, col: usize) {
    let p = tab[row * width + col];
    for v in &mut tab[row * width..(row + 1) * width] {
        *v /= p;
    }
    let pivot_line: Vec<f64> = tab[row * width..(row + 1) * width].to_vec();
    for r in 0..height {
        if r == row {
            continue;
        }
        let f = tab[r * width + col];
        if f != 0.0 {
            for (v, pv) in tab[r * width..(r + 1) * width].iter_mut().zip(&pivot_line) {
                *v -= f * pv;
            }
            tab[r * width + col] = 0.0;
        }
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    for x in &mut v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        for x in &mut v {
            *x /= s;
        }
    } else {
        let n = v.len() as f64;
        v.fill(1.0 / n);
    }
    v
}

fn finish(m: &PayoffMatrix, row_dist: Vec<f64>, col_dist: Vec<f64>) -> Result<MixedSolution> {
    let value = m.bilinear(&row_dist, &col_dist);
    let epsilon = equilibrium_gap(m, &row_dist, &col_dist, value);
    if epsilon > NASH_EPSILON {
        return Err(Error::NashNonConvergence { epsilon });
    }
    Ok(MixedSolution {
        value,
        row_dist,
        col_dist,
        epsilon,
    })
}

/// `max( max_j (p^T M)_j - value, value - min_i (M q)_i )`.
pub fn equilibrium_gap(m: &PayoffMatrix, p: &[f64], q: &[f64], value: f64) -> f64 {
    let best_col = (0..m.cols)
        .map(|c| (0..m.rows).map(|r| p[r] * m.get(r, c)).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    let best_row = (0..m.rows)
        .map(|r| m.row(r).iter().zip(q).map(|(a, b)| a * b).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    (best_col - value).max(value - best_row).max(0.0)
}
