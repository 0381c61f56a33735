//! Equilibrium computation for atomic splittable congestion games with
//! coupling constraints, and fast approximation of those equilibria through
//! a clustered population game.
//!
//! The library is organised around a single pipeline:
//!
//! 1. [`game`]: the game data model: per-player action sets, quadratic
//!    preference utilities, shared resource costs, aggregate coupling
//!    constraints.
//! 2. [`cost`]: piecewise-linear convex resource costs with subdifferential
//!    access, and the stacked subgradient maps of the player costs (with and
//!    without the own-impact term).
//! 3. [`projection`]: exact Euclidean projection onto box-constrained
//!    simplex slices (continuous knapsack) and onto the nonnegative orthant.
//! 4. [`solver`]: projected subgradient descent with Lagrangian multipliers
//!    for the coupling constraints, in atomic (Nash) and population
//!    (Wardrop) granularity.
//! 5. [`reduce`]: k-means clustering of player parameter vectors into a
//!    small auxiliary population game, with the heterogeneity metrics that
//!    drive the a-priori error bounds.
//! 6. [`bounds`]: the computable constants and distance bounds relating
//!    variational Nash equilibria to the (clustered) Wardrop approximations.
//! 7. [`scenario`]: a reproducible electric-vehicle charging scenario
//!    generator (inclining block-rate tariff, capacity and ramp coupling).
//! 8. [`oracle`]: brute-force equilibrium and projection oracles for tiny
//!    instances, used to validate the solver.
//! 9. [`io`]: JSON document schemas for scenarios and solve results.

pub mod bounds;
pub mod cost;
pub mod game;
pub mod io;
pub mod oracle;
pub mod projection;
pub mod reduce;
pub mod scenario;
pub mod solver;
pub(crate) mod vecops;

pub use cost::{PiecewiseLinearCost, SelectionRule};
pub use game::{
    ActionProfile, BoxSimplexSet, CouplingConstraints, GameError, GameInstance, Player,
    QuadPrefUtility,
};
pub use solver::{SolveResult, SolverConfig};
