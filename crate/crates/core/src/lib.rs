//! Set-oriented numerics for random dynamical systems.
//!
//! The crate models a random dynamical system as a cocycle `φ(t, ω)` over
//! the Wiener shift, represents random compact sets as unions of grid cells,
//! and builds on those:
//!
//! * pullback omega- and alpha-limit sets, invariant hulls, attractor and
//!   basin checks ([`pullback`]);
//! * the entrance-time Lyapunov function of an attractor-repeller pair and
//!   its weighted sum over a Morse filtration ([`lyapunov`]);
//! * Morse decompositions built from attractor filtrations and checked
//!   against a Lyapunov function ([`morse`]);
//! * a scenario runner producing CSV reports ([`scenario`]).

pub mod cocycle;
pub mod error;
pub mod lyapunov;
pub mod morse;
pub mod noise;
pub mod pullback;
pub mod randset;
pub mod scenario;
pub mod table;

pub use cocycle::{CocycleSystem, Point, PolynomialField, StateBox, SystemKind};
pub use error::{Error, Result};
pub use lyapunov::{ExtendedTime, MorseContext, PairContext, SearchWindow};
pub use morse::{Filtration, MorseDecomposition};
pub use noise::{sample_wiener, NoisePath, TimeGrid};
pub use pullback::{LimitResult, PullbackSchedule};
pub use randset::{CellSet, Partition, RandomSet, SetRule};
