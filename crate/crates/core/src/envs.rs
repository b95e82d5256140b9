//! The analytic benchmark games and the non-Isaacs counterexample.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{norm, ContinuousGame, ControlSet, DiscretizedGame, GameModel, SplitModel};
use crate::mesh::MeshSpec;

/// What is known about `V(0, x0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum KnownValue {
    Exact(f64),
    LowerBound(f64),
    Unknown,
}

/// Grid-oracle resolution that resolves the game's value at `x0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleDefaults {
    pub dt: f64,
    pub lo: &'static [f64],
    pub hi: &'static [f64],
    pub nodes: &'static [usize],
}

/// Catalog entry: constructor plus learning defaults.
#[derive(Clone, Copy, Debug)]
pub struct EnvEntry {
    pub name: &'static str,
    pub make: fn() -> ContinuousGame,
    pub u_mesh: &'static str,
    pub v_mesh: &'static str,
    pub dt: f64,
    pub hidden: &'static [usize],
    pub known_value: KnownValue,
    pub oracle: Option<OracleDefaults>,
}

impl EnvEntry {
    pub fn game(&self) -> ContinuousGame {
        (self.make)()
    }

    pub fn u_mesh_spec(&self) -> MeshSpec {
        self.u_mesh.parse().expect("catalog mesh specs parse")
    }

    pub fn v_mesh_spec(&self) -> MeshSpec {
        self.v_mesh.parse().expect("catalog mesh specs parse")
    }

    /// Default meshes with a uniform partition of step `dt`.
    pub fn discretize(&self, dt: f64) -> Result<DiscretizedGame> {
        self.discretize_with(dt, &self.u_mesh_spec(), &self.v_mesh_spec())
    }

    pub fn discretize_with(&self, dt: f64, u_mesh: &MeshSpec, v_mesh: &MeshSpec) -> Result<DiscretizedGame> {
        let game = self.game();
        let u = u_mesh.build_for(game.u_set())?;
        let v = v_mesh.build_for(game.v_set())?;
        DiscretizedGame::uniform(game, dt, u, v)
    }
}

static CATALOG: [EnvEntry; 6] = [
    EnvEntry {
        name: "escape_from_zero",
        make: make_escape_from_zero,
        u_mesh: "BM(0,2pi,10)",
        v_mesh: "BM(0,2pi,10)",
        dt: 0.2,
        hidden: &[256, 128],
        known_value: KnownValue::Exact(-0.5),
        oracle: Some(OracleDefaults {
            dt: 0.05,
            lo: &[-4.8, -4.8],
            hi: &[4.8, 4.8],
            nodes: &[193, 193],
        }),
    },
    EnvEntry {
        name: "get_into_circle",
        make: make_get_into_circle,
        u_mesh: "LM(-0.5,0.5,10)",
        v_mesh: "LM(-1,1,10)",
        dt: 0.2,
        hidden: &[256, 128],
        known_value: KnownValue::Exact(0.0),
        oracle: Some(OracleDefaults {
            dt: 0.2,
            lo: &[-6.0, -6.0],
            hi: &[6.0, 6.0],
            nodes: &[121, 121],
        }),
    },
    EnvEntry {
        name: "get_into_square",
        make: make_get_into_square,
        u_mesh: "LM(-1,1,10)",
        v_mesh: "LM(-1,1,10)",
        dt: 0.2,
        hidden: &[256, 128],
        known_value: KnownValue::Exact(1.0),
        oracle: Some(OracleDefaults {
            dt: 0.1,
            lo: &[-6.0, -6.0],
            hi: &[6.0, 6.0],
            nodes: &[241, 241],
        }),
    },
    EnvEntry {
        name: "homicidal_chauffeur",
        make: make_homicidal_chauffeur,
        u_mesh: "LM(-1,1,10)",
        v_mesh: "BM(0,2pi,10)",
        dt: 0.2,
        hidden: &[256, 128],
        known_value: KnownValue::Unknown,
        oracle: None,
    },
    EnvEntry {
        name: "interception",
        make: make_interception,
        u_mesh: "BM(0,2pi,10)",
        v_mesh: "BM(0,2pi,10)",
        dt: 0.2,
        hidden: &[512, 256, 128],
        known_value: KnownValue::LowerBound(1.5),
        oracle: None,
    },
    EnvEntry {
        name: "counterexample",
        make: make_counterexample,
        u_mesh: "LM(-pi,pi,10)",
        v_mesh: "LM(-pi,pi,10)",
        dt: 0.2,
        hidden: &[256, 128],
        known_value: KnownValue::Unknown,
        oracle: Some(OracleDefaults {
            dt: 0.2,
            lo: &[-4.0],
            hi: &[4.0],
            nodes: &[81],
        }),
    },
];

pub fn catalog() -> &'static [EnvEntry] {
    &CATALOG
}

pub fn lookup(name: &str) -> Result<&'static EnvEntry> {
    CATALOG.iter().find(|e| e.name == name).ok_or_else(|| Error::Unknown {
        kind: "environment",
        name: name.to_string(),
    })
}

// ---------------------------------------------------------------------------

struct EscapeFromZero;

impl GameModel for EscapeFromZero {
    fn dynamics(&self, t: f64, _x: &[f64], u: &[f64], v: &[f64], dx: &mut [f64]) {
        let c = 2.0 - t;
        dx[0] = u[0] + c * v[0];
        dx[1] = u[1] + c * v[1];
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        -norm(x)
    }

    fn split(&self) -> Option<&dyn SplitModel> {
        Some(self)
    }
}

impl SplitModel for EscapeFromZero {
    fn first_agent_part(&self, _t: f64, _x: &[f64], u: &[f64], dx: &mut [f64]) -> f64 {
        dx.copy_from_slice(u);
        0.0
    }

    fn second_agent_part(&self, t: f64, _x: &[f64], v: &[f64], dx: &mut [f64]) -> f64 {
        dx[0] = (2.0 - t) * v[0];
        dx[1] = (2.0 - t) * v[1];
        0.0
    }
}

/// Planar point pushed by both agents; the second agent's authority shrinks
/// as `2 - t`. `J = -|x(2)|`, value -0.5.
pub fn make_escape_from_zero() -> ContinuousGame {
    ContinuousGame::new(
        "escape_from_zero",
        2.0,
        vec![0.0, 0.0],
        ControlSet::ball(2, 1.0),
        ControlSet::ball(2, 1.0),
        3.0,
        Arc::new(EscapeFromZero),
    )
    .expect("valid game")
}

struct GetIntoCircle;

impl GameModel for GetIntoCircle {
    fn dynamics(&self, _t: f64, _x: &[f64], u: &[f64], v: &[f64], dx: &mut [f64]) {
        dx[0] = v[0];
        dx[1] = u[0];
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        norm(x) - 4.0
    }

    fn split(&self) -> Option<&dyn SplitModel> {
        Some(self)
    }
}

impl SplitModel for GetIntoCircle {
    fn first_agent_part(&self, _t: f64, _x: &[f64], u: &[f64], dx: &mut [f64]) -> f64 {
        dx[0] = 0.0;
        dx[1] = u[0];
        0.0
    }

    fn second_agent_part(&self, _t: f64, _x: &[f64], v: &[f64], dx: &mut [f64]) -> f64 {
        dx[0] = v[0];
        dx[1] = 0.0;
        0.0
    }
}

/// The second agent moves the point horizontally, the first vertically.
/// `J = |x(4)| - 4`, value 0.
pub fn make_get_into_circle() -> ContinuousGame {
    ContinuousGame::new(
        "get_into_circle",
        4.0,
        vec![0.0, 0.5],
        ControlSet::interval(-0.5, 0.5),
        ControlSet::interval(-1.0, 1.0),
        1.25_f64.sqrt(),
        Arc::new(GetIntoCircle),
    )
    .expect("valid game")
}

struct GetIntoSquare;

impl GameModel for GetIntoSquare {
    fn dynamics(&self, _t: f64, x: &[f64], u: &[f64], v: &[f64], dx: &mut [f64]) {
        dx[0] = x[1] + v[0];
        dx[1] = -x[0] + u[0];
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        x[0].abs().max(x[1].abs())
    }

    fn split(&self) -> Option<&dyn SplitModel> {
        Some(self)
    }
}

impl SplitModel for GetIntoSquare {
    fn first_agent_part(&self, _t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) -> f64 {
        dx[0] = x[1];
        dx[1] = -x[0] + u[0];
        0.0
    }

    fn second_agent_part(&self, _t: f64, _x: &[f64], v: &[f64], dx: &mut [f64]) -> f64 {
        dx[0] = v[0];
        dx[1] = 0.0;
        0.0
    }
}

/// Rotating linear system, `J = max(|x1(4)|, |x2(4)|)`, value 1.
pub fn make_get_into_square() -> ContinuousGame {
    ContinuousGame::new(
        "get_into_square",
        4.0,
        vec![0.2, 0.0],
        ControlSet::interval(-1.0, 1.0),
        ControlSet::interval(-1.0, 1.0),
        std::f64::consts::SQRT_2,
        Arc::new(GetIntoSquare),
    )
    .expect("valid game")
}

struct HomicidalChauffeur;

impl GameModel for HomicidalChauffeur {
    fn dynamics(&self, _t: f64, x: &[f64], u: &[f64], v: &[f64], dx: &mut [f64]) {
        dx[0] = 3.0 * x[2].cos();
        dx[1] = 3.0 * x[2].sin();
        dx[2] = u[0];
        dx[3] = v[0];
        dx[4] = v[1];
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        (x[0] - x[3]).hypot(x[1] - x[4])
    }

    fn split(&self) -> Option<&dyn SplitModel> {
        Some(self)
    }
}

impl SplitModel for HomicidalChauffeur {
    fn first_agent_part(&self, _t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) -> f64 {
        dx[0] = 3.0 * x[2].cos();
        dx[1] = 3.0 * x[2].sin();
        dx[2] = u[0];
        dx[3] = 0.0;
        dx[4] = 0.0;
        0.0
    }

    fn second_agent_part(&self, _t: f64, _x: &[f64], v: &[f64], dx: &mut [f64]) -> f64 {
        dx[..3].fill(0.0);
        dx[3] = v[0];
        dx[4] = v[1];
        0.0
    }
}

/// Finite-horizon pursuit: a car with speed 3 and bounded turn rate chases
/// a unit-speed pedestrian. The heading `x3` is not wrapped.
pub fn make_homicidal_chauffeur() -> ContinuousGame {
    ContinuousGame::new(
        "homicidal_chauffeur",
        3.0,
        vec![0.0, 0.0, 0.0, 2.5, 7.5],
        ControlSet::interval(-1.0, 1.0),
        ControlSet::ball(2, 1.0),
        11.0_f64.sqrt(),
        Arc::new(HomicidalChauffeur),
    )
    .expect("valid game")
}

struct Interception;

// State layout: y (0..2), y' (2..4), F (4..6), z (6..8), z' (8..10).
impl GameModel for Interception {
    fn dynamics(&self, _t: f64, x: &[f64], u: &[f64], v: &[f64], dx: &mut [f64]) {
        dx[0] = x[2];
        dx[1] = x[3];
        dx[2] = x[4];
        dx[3] = x[5];
        dx[4] = -x[4] + u[0];
        dx[5] = -x[5] + u[1];
        dx[6] = x[8];
        dx[7] = x[9];
        dx[8] = v[0];
        dx[9] = v[1];
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        (x[0] - x[6]).hypot(x[1] - x[7])
    }

    fn split(&self) -> Option<&dyn SplitModel> {
        Some(self)
    }
}

impl SplitModel for Interception {
    fn first_agent_part(&self, _t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) -> f64 {
        dx[0] = x[2];
        dx[1] = x[3];
        dx[2] = x[4];
        dx[3] = x[5];
        dx[4] = -x[4] + u[0];
        dx[5] = -x[5] + u[1];
        dx[6] = x[8];
        dx[7] = x[9];
        dx[8] = 0.0;
        dx[9] = 0.0;
        0.0
    }

    fn second_agent_part(&self, _t: f64, _x: &[f64], v: &[f64], dx: &mut [f64]) -> f64 {
        dx[..8].fill(0.0);
        dx[8] = v[0];
        dx[9] = v[1];
        0.0
    }
}

/// Air interception: the first agent controls a lagged acceleration, the
/// second a direct one; both control sets are ellipses.
pub fn make_interception() -> ContinuousGame {
    ContinuousGame::new(
        "interception",
        3.0,
        vec![1.0, 1.1, 0.0, 1.0, 1.0, -2.0, 0.0, 0.0, 1.0, 0.0],
        ControlSet::Ellipsoid {
            semi_axes: vec![0.67 * 1.3, 1.3],
        },
        ControlSet::Ellipsoid {
            semi_axes: vec![0.71, 1.0],
        },
        2.3,
        Arc::new(Interception),
    )
    .expect("valid game")
}

struct Counterexample;

impl GameModel for Counterexample {
    fn dynamics(&self, _t: f64, _x: &[f64], u: &[f64], v: &[f64], dx: &mut [f64]) {
        dx[0] = (u[0] + v[0]).cos();
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        x[0]
    }
}

/// `x' = cos(u + v)` with `|u|, |v| <= pi`, `J = x(1)`: Isaacs's condition
/// fails, and the upper and lower values differ by 2 at the origin.
pub fn make_counterexample() -> ContinuousGame {
    ContinuousGame::new(
        "counterexample",
        1.0,
        vec![0.0],
        ControlSet::interval(-PI, PI),
        ControlSet::interval(-PI, PI),
        1.0,
        Arc::new(Counterexample),
    )
    .expect("valid game")
}
