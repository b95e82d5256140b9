//! Finite action meshes and the numerical Isaacs-condition checks.
//!
//! Mesh specs use a small textual grammar, `NAME(arg, arg, ...)`, where each
//! argument is a decimal numeral or a multiple of `pi` (`pi`, `-pi`, `2pi`,
//! `0.5*pi`). Supported names are `LM(a,b,k)`, `SM(a,b,k,n)` and `BM(a,b,k)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{ContinuousGame, ControlSet, SET_TOLERANCE};
use crate::matrix_game::PayoffMatrix;

/// Upper bound on the number of points of a square mesh.
pub const MAX_MESH_POINTS: usize = 1_000_000;

/// Ordered finite set of action vectors. Indices are stable: points keep
/// their construction order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionMesh {
    points: Vec<Vec<f64>>,
    source: ControlSet,
}

impl ActionMesh {
    /// `LM(a,b,k) = { a + i (b-a)/k : i = 0..=k }`.
    pub fn linear(a: f64, b: f64, k: usize) -> Result<Self> {
        let points = linear_points(a, b, k)?.into_iter().map(|p| vec![p]).collect();
        Ok(Self {
            points,
            source: ControlSet::interval(a, b),
        })
    }

    /// `SM(a,b,k,n) = LM(a,b,k)^n` in lexicographic order.
    pub fn square(a: f64, b: f64, k: usize, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidMesh("square mesh needs n >= 1".into()));
        }
        let axis = linear_points(a, b, k)?;
        let count = (k + 1).checked_pow(n as u32).filter(|&c| c <= MAX_MESH_POINTS);
        let Some(count) = count else {
            return Err(Error::InvalidMesh(format!(
                "SM({a},{b},{k},{n}) would have more than {MAX_MESH_POINTS} points"
            )));
        };
        let mut points = Vec::with_capacity(count);
        let mut digits = vec![0usize; n];
        for _ in 0..count {
            points.push(digits.iter().map(|&d| axis[d]).collect());
            for pos in (0..n).rev() {
                digits[pos] += 1;
                if digits[pos] <= k {
                    break;
                }
                digits[pos] = 0;
            }
        }
        Ok(Self {
            points,
            source: ControlSet::Box {
                lo: vec![a; n],
                hi: vec![b; n],
            },
        })
    }

    /// `BM(a,b,k) = { (sin α, cos α) : α ∈ LM(a,b,k) }` on the unit circle.
    /// A full turn keeps its duplicate endpoint.
    pub fn ball(a: f64, b: f64, k: usize) -> Result<Self> {
        let points = linear_points(a, b, k)?
            .into_iter()
            .map(|alpha| vec![alpha.sin(), alpha.cos()])
            .collect();
        Ok(Self {
            points,
            source: ControlSet::ball(2, 1.0),
        })
    }

    /// Wraps explicit points; every point must lie in `source`.
    pub fn from_points(points: Vec<Vec<f64>>, source: ControlSet) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidMesh("mesh has no points".into()));
        }
        if let Some(p) = points.iter().find(|p| !source.contains(p, SET_TOLERANCE)) {
            return Err(Error::MeshOutsideSet {
                point: p.clone(),
                set: source.to_string(),
            });
        }
        Ok(Self { points, source })
    }

    /// Scales every point per axis, e.g. to map a unit-circle mesh onto the
    /// boundary of an ellipse with the given semi-axes.
    pub fn scaled(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.dim() {
            return Err(Error::InvalidMesh(format!(
                "{} scale factors for a {}-dimensional mesh",
                factors.len(),
                self.dim()
            )));
        }
        let points = self
            .points
            .iter()
            .map(|p| p.iter().zip(factors).map(|(x, s)| x * s).collect())
            .collect();
        let source = match &self.source {
            ControlSet::Box { lo, hi } => {
                let (lo, hi) = lo
                    .iter()
                    .zip(hi)
                    .zip(factors)
                    .map(|((a, b), s)| {
                        let (p, q) = (a * s, b * s);
                        (p.min(q), p.max(q))
                    })
                    .unzip();
                ControlSet::Box { lo, hi }
            }
            ControlSet::Ellipsoid { semi_axes } => ControlSet::Ellipsoid {
                semi_axes: semi_axes.iter().zip(factors).map(|(a, s)| (a * s).abs()).collect(),
            },
        };
        Ok(Self { points, source })
    }

    /// Drops points equal (within 1e-12) to an earlier point.
    pub fn deduplicated(&self) -> Self {
        let mut points: Vec<Vec<f64>> = Vec::with_capacity(self.points.len());
        for p in &self.points {
            let dup = points
                .iter()
                .any(|q| q.iter().zip(p).all(|(a, b)| (a - b).abs() <= 1e-12));
            if !dup {
                points.push(p.clone());
            }
        }
        Self {
            points,
            source: self.source.clone(),
        }
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn get(&self, idx: usize) -> Option<&[f64]> {
        self.points.get(idx).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn source(&self) -> &ControlSet {
        &self.source
    }
}

impl std::ops::Index<usize> for ActionMesh {
    type Output = [f64];

    fn index(&self, idx: usize) -> &[f64] {
        &self.points[idx]
    }
}

fn linear_points(a: f64, b: f64, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidMesh("mesh needs k >= 1".into()));
    }
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::InvalidMesh(format!("mesh needs a < b, got a={a}, b={b}")));
    }
    // Endpoints are a and b bit-for-bit.
    Ok((0..=k)
        .map(|i| match i {
            0 => a,
            i if i == k => b,
            i => a + i as f64 * (b - a) / k as f64,
        })
        .collect())
}

/// Parsed mesh constructor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MeshSpec {
    Linear { a: f64, b: f64, k: usize },
    Square { a: f64, b: f64, k: usize, n: usize },
    Ball { a: f64, b: f64, k: usize },
}

impl MeshSpec {
    pub fn build(&self) -> Result<ActionMesh> {
        match *self {
            MeshSpec::Linear { a, b, k } => ActionMesh::linear(a, b, k),
            MeshSpec::Square { a, b, k, n } => ActionMesh::square(a, b, k, n),
            MeshSpec::Ball { a, b, k } => ActionMesh::ball(a, b, k),
        }
    }

    /// Builds the mesh for a particular control set. Ball meshes are mapped
    /// onto the boundary of an ellipsoidal set by per-axis scaling.
    pub fn build_for(&self, set: &ControlSet) -> Result<ActionMesh> {
        let mesh = self.build()?;
        match (self, set) {
            (MeshSpec::Ball { .. }, ControlSet::Ellipsoid { semi_axes }) => mesh.scaled(semi_axes),
            _ => Ok(mesh),
        }
    }
}

impl fmt::Display for MeshSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeshSpec::Linear { a, b, k } => write!(f, "LM({a},{b},{k})"),
            MeshSpec::Square { a, b, k, n } => write!(f, "SM({a},{b},{k},{n})"),
            MeshSpec::Ball { a, b, k } => write!(f, "BM({a},{b},{k})"),
        }
    }
}

impl FromStr for MeshSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fail = |reason: &str| Error::MeshSpec {
            spec: s.to_string(),
            reason: reason.to_string(),
        };
        let trimmed = s.trim();
        let open = trimmed.find('(').ok_or_else(|| fail("expected '('"))?;
        if !trimmed.ends_with(')') {
            return Err(fail("expected ')' at the end"));
        }
        let name = trimmed[..open].trim();
        let body = &trimmed[open + 1..trimmed.len() - 1];
        let args: Vec<f64> = body
            .split(',')
            .map(|tok| parse_numeral(tok.trim()).ok_or_else(|| fail(&format!("bad numeral {:?}", tok.trim()))))
            .collect::<Result<_>>()?;
        let count = |k: f64, what: &str| -> Result<usize> {
            if k >= 0.0 && k.fract() == 0.0 && k <= u32::MAX as f64 {
                Ok(k as usize)
            } else {
                Err(fail(&format!("{what} must be a non-negative integer")))
            }
        };
        let spec = match (name, args.as_slice()) {
            ("LM", &[a, b, k]) => MeshSpec::Linear { a, b, k: count(k, "k")? },
            ("SM", &[a, b, k, n]) => MeshSpec::Square {
                a,
                b,
                k: count(k, "k")?,
                n: count(n, "n")?,
            },
            ("BM", &[a, b, k]) => MeshSpec::Ball { a, b, k: count(k, "k")? },
            ("LM" | "BM", _) => return Err(fail("expects 3 arguments")),
            ("SM", _) => return Err(fail("expects 4 arguments")),
            _ => return Err(fail("unknown mesh constructor (LM, SM, BM)")),
        };
        spec.build().map_err(|e| fail(&e.to_string()))?;
        Ok(spec)
    }
}

impl Serialize for MeshSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MeshSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn parse_numeral(tok: &str) -> Option<f64> {
    if let Some(coef) = tok.strip_suffix("pi") {
        let coef = coef.trim().trim_end_matches('*').trim();
        let c = match coef {
            "" | "+" => 1.0,
            "-" => -1.0,
            c => c.parse::<f64>().ok()?,
        };
        return Some(c * PI);
    }
    tok.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// A point `(t, x, s)` at which the small game `<f, s> + f0` is examined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsaacsSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IsaacsGap {
    pub max_gap: f64,
    pub argmax: usize,
    pub gaps: Vec<f64>,
}

/// Matrix of `<f(t,x,u,v), s> + f0(t,x,u,v)` over the meshes, rows `u`.
///
/// Control-separated models are evaluated through their split parts so that
/// each entry is a rounded sum of a row term and a column term; min-max and
/// max-min of such a matrix then agree exactly.
pub fn hamiltonian_matrix(
    game: &ContinuousGame,
    u_mesh: &ActionMesh,
    v_mesh: &ActionMesh,
    sample: &IsaacsSample,
) -> PayoffMatrix {
    let n = game.state_dim();
    let model = game.model();
    let mut dx = vec![0.0; n];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let (rows, cols) = (u_mesh.len(), v_mesh.len());
    let mut data = Vec::with_capacity(rows * cols);
    if let Some(split) = model.split() {
        let row_terms: Vec<f64> = u_mesh
            .points()
            .iter()
            .map(|u| {
                let c = split.first_agent_part(sample.t, &sample.x, u, &mut dx);
                dot(&dx, &sample.s) + c
            })
            .collect();
        let col_terms: Vec<f64> = v_mesh
            .points()
            .iter()
            .map(|v| {
                let c = split.second_agent_part(sample.t, &sample.x, v, &mut dx);
                dot(&dx, &sample.s) + c
            })
            .collect();
        for r in &row_terms {
            data.extend(col_terms.iter().map(|c| r + c));
        }
    } else {
        for u in u_mesh.points() {
            for v in v_mesh.points() {
                model.dynamics(sample.t, &sample.x, u, v, &mut dx);
                data.push(dot(&dx, &sample.s) + model.running_cost(sample.t, &sample.x, u, v));
            }
        }
    }
    PayoffMatrix::new(rows, cols, data).expect("hamiltonian matrix has mesh shape")
}

/// Largest `min_u max_v χ - max_v min_u χ` over the samples.
pub fn isaacs_gap(
    game: &ContinuousGame,
    u_mesh: &ActionMesh,
    v_mesh: &ActionMesh,
    samples: &[IsaacsSample],
) -> Result<IsaacsGap> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let gaps: Vec<f64> = samples
        .iter()
        .map(|s| {
            let m = hamiltonian_matrix(game, u_mesh, v_mesh, s);
            let gap = m.pure_minimax().0 - m.pure_maximin().0;
            assert!(gap >= 0.0, "weak duality violated: gap {gap}");
            gap
        })
        .collect();
    let (argmax, &max_gap) = gaps
        .iter()
        .enumerate()
        .fold((0, &gaps[0]), |best, cur| if cur.1 > best.1 { cur } else { best });
    Ok(IsaacsGap {
        max_gap,
        argmax,
        gaps,
    })
}

/// Default probe set: uniform times, states uniform in the box of half-width
/// `reach_radius(t)`, and unit directions scaled by 0.1, 1 and 10 in turn.
pub fn default_isaacs_samples<R: Rng + ?Sized>(
    game: &ContinuousGame,
    count: usize,
    rng: &mut R,
) -> Vec<IsaacsSample> {
    const SCALES: [f64; 3] = [0.1, 1.0, 10.0];
    let n = game.state_dim();
    (0..count)
        .map(|j| {
            let t = rng.gen_range(0.0..=game.horizon());
            let r = game.reach_radius(t);
            let x = (0..n).map(|_| rng.gen_range(-r..=r)).collect();
            let s = unit_sphere(n, rng).into_iter().map(|c| c * SCALES[j % 3]).collect();
            IsaacsSample { t, x, s }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeshAdequacy {
    /// `|minmax on mesh - minmax on refined|` per sample.
    pub minmax_deviation: Vec<f64>,
    /// `|maxmin on mesh - maxmin on refined|` per sample.
    pub maximin_deviation: Vec<f64>,
    pub max_minmax_deviation: f64,
    pub max_maximin_deviation: f64,
}

/// Compares the small-game extrema on a mesh pair with those on refined
/// meshes. Small deviations are evidence that the coarse meshes already
/// realize the extrema of the control sets.
pub fn mesh_adequacy(
    game: &ContinuousGame,
    u_mesh: &ActionMesh,
    v_mesh: &ActionMesh,
    refined_u: &ActionMesh,
    refined_v: &ActionMesh,
    samples: &[IsaacsSample],
) -> MeshAdequacy {
    let mut minmax_deviation = Vec::with_capacity(samples.len());
    let mut maximin_deviation = Vec::with_capacity(samples.len());
    for s in samples {
        let coarse = hamiltonian_matrix(game, u_mesh, v_mesh, s);
        let fine = hamiltonian_matrix(game, refined_u, refined_v, s);
        minmax_deviation.push((coarse.pure_minimax().0 - fine.pure_minimax().0).abs());
        maximin_deviation.push((coarse.pure_maximin().0 - fine.pure_maximin().0).abs());
    }
    let max_minmax_deviation = minmax_deviation.iter().copied().fold(0.0, f64::max);
    let max_maximin_deviation = maximin_deviation.iter().copied().fold(0.0, f64::max);
    MeshAdequacy {
        minmax_deviation,
        maximin_deviation,
        max_minmax_deviation,
        max_maximin_deviation,
    }
}

/// Uniform direction on the unit sphere of `R^n`.
pub fn unit_sphere<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|c| c / norm).collect();
        }
    }
}
