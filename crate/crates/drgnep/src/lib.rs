//! Generalized Nash equilibria for convex-quadratic games coupled by a shared
//! distributionally robust chance constraint (DRCC) over a Wasserstein ball.
//!
//! Each of the `I` agents minimizes a convex quadratic cost in its own block,
//! subject to private polyhedral/box constraints and one shared chance
//! constraint that must hold for every distribution within a Wasserstein
//! distance `theta` of the empirical distribution of `K` samples:
//!
//! ```text
//!     inf_{P in ball}  P[ A x < b(xi) ]  >=  1 - epsilon,    b(xi) = beta xi + b.
//! ```
//!
//! The crate implements the exact deterministic reformulation of that
//! constraint (sample-distance mass, LP dual certificate, and the big-M
//! mixed-binary system h1-h5), a convexified Nikaido-Isoda residual whose
//! zeros certify equilibria, and a residual-minimizing solver that enumerates
//! the binary deactivation pattern and polishes each node with multistart
//! projected descent. An EV charging-station pricing market ships as a fully
//! worked case study with closed-form oracles.
//!
//! The `examples/` directory is the front door: each major capability has a
//! runnable example (`cargo run --example <name>`). A thin `drgnep` binary
//! exposes the same operations as `solve` / `check` / `casestudy` subcommands
//! for driving the library from files.

pub mod casestudy;
pub mod cli;
pub mod drcc;
pub mod error;
pub mod game;
pub mod io;
pub mod qp;
pub mod reformulation;
pub mod residual;
pub mod solver;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
