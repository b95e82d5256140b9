//! Finite-horizon zero-sum differential games: discretization, matrix-game
//! solving, deep Q-learning agents, an exact grid value oracle, and an
//! exploitability evaluation harness.

pub mod envs;
pub mod eval;
pub mod error;
pub mod game;
pub mod grid;
pub mod matrix_game;
pub mod mesh;
pub mod nn;
pub mod qlearn;

pub use error::{Error, Result};
pub use game::{
    Agent, ConstantPolicy, ContinuousGame, ControlSet, DiscretizedGame, GameModel, OpenLoopPolicy,
    Partition, Policy, Rollout, SplitModel, StepOutcome, Transition,
};
pub use matrix_game::{nash_mixed, MixedSolution, PayoffMatrix};
pub use mesh::{ActionMesh, MeshSpec};
pub use nn::{Adam, Mlp};
pub use grid::{solve, GridSolution, StateGrid, ValueGrid, ValueKind};
pub use qlearn::{train, Algorithm, NetPolicy, TrainConfig, TrainedModel};
pub use eval::{evaluate_pair, AdversaryMethod, EvalOptions, EvalReport, PairEvaluation};
