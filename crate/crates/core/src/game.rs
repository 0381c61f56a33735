//! Game data model: per-player action sets and utilities, shared resource
//! costs, coupling constraints on the aggregate, and action profiles.
//!
//! Everything here is read-only after construction and safe to share across
//! threads; profiles are value-like and freely cloned.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::PiecewiseLinearCost;
use crate::vecops;

/// Default absolute per-coordinate feasibility tolerance.
pub const DEFAULT_FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("lower/upper bound vectors have mismatched lengths {lower} vs {upper}")]
    BoundLengths { lower: usize, upper: usize },
    #[error("bounds must satisfy 0 <= lower <= upper at every coordinate")]
    BoundOrder,
    #[error("total mass {total} outside [{min}, {max}]: set would be empty")]
    MassOutOfRange { total: f64, min: f64, max: f64 },
    #[error("utility weight must be positive, got {0}")]
    WeightNotPositive(f64),
    #[error("a game needs at least one player")]
    NoPlayers,
    #[error("a game needs at least one resource")]
    NoResources,
    #[error("player {player} has dimension {got}, expected {expected}")]
    PlayerDimension {
        player: usize,
        got: usize,
        expected: usize,
    },
    #[error("player {player}: preference profile lies outside the action set")]
    PreferenceOutsideSet { player: usize },
    #[error("per-resource cost list has {got} entries for horizon {expected}")]
    CostCount { got: usize, expected: usize },
    #[error("coupling matrix has {got} columns for horizon {expected}")]
    CouplingColumns { got: usize, expected: usize },
    #[error("coupling matrix has {rows} rows but rhs has {rhs} entries")]
    CouplingRhs { rows: usize, rhs: usize },
    #[error("profile shape {players}x{horizon} does not match game {expected_players}x{expected_horizon}")]
    ProfileShape {
        players: usize,
        horizon: usize,
        expected_players: usize,
        expected_horizon: usize,
    },
    #[error("player index {index} out of range for {count} players")]
    PlayerIndex { index: usize, count: usize },
    #[error("profile rows have unequal lengths")]
    RaggedRows,
}

/// Feasible action set `{x >= 0 : sum x = total, lower <= x <= upper}`, or
/// a plain box when no total mass is imposed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSimplexSet {
    total: Option<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxSimplexSet {
    /// Box slice with a total-mass equality.
    pub fn with_total(total: f64, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, GameError> {
        Self::check_bounds(&lower, &upper)?;
        let min: f64 = lower.iter().sum();
        let max: f64 = upper.iter().sum();
        if !(min <= total && total <= max) || total < 0.0 {
            return Err(GameError::MassOutOfRange { total, min, max });
        }
        Ok(Self {
            total: Some(total),
            lower,
            upper,
        })
    }

    /// Plain box without a mass constraint.
    pub fn pure_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, GameError> {
        Self::check_bounds(&lower, &upper)?;
        Ok(Self {
            total: None,
            lower,
            upper,
        })
    }

    fn check_bounds(lower: &[f64], upper: &[f64]) -> Result<(), GameError> {
        if lower.len() != upper.len() {
            return Err(GameError::BoundLengths {
                lower: lower.len(),
                upper: upper.len(),
            });
        }
        let ok = lower
            .iter()
            .zip(upper)
            .all(|(&l, &u)| l.is_finite() && u.is_finite() && 0.0 <= l && l <= u);
        if !ok {
            return Err(GameError::BoundOrder);
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn total(&self) -> Option<f64> {
        self.total
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Worst bound violation and (if a total is imposed) mass violation.
    pub fn violations(&self, x: &[f64]) -> (f64, f64) {
        let mut bound = 0.0f64;
        for t in 0..self.dim() {
            bound = bound.max(self.lower[t] - x[t]).max(x[t] - self.upper[t]);
        }
        let mass = match self.total {
            Some(m) => (x.iter().sum::<f64>() - m).abs(),
            None => 0.0,
        };
        (bound.max(0.0), mass)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        let (bound, mass) = self.violations(x);
        bound <= tol && mass <= tol
    }

    /// Coordinates with `lower < upper`.
    pub fn free_coords(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim()).filter(move |&t| self.lower[t] < self.upper[t])
    }

    /// True when the set contains exactly one point.
    pub fn is_singleton(&self) -> bool {
        let free: Vec<usize> = self.free_coords().collect();
        match self.total {
            None => free.is_empty(),
            // with a mass equality, a single free coordinate is pinned too
            Some(_) => free.len() <= 1,
        }
    }
}

/// Concave preference-tracking utility `u(x) = -weight * ||x - preference||^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadPrefUtility {
    weight: f64,
    preference: Vec<f64>,
}

/// Minimal utility interface: value plus a subgradient of the convex `-u`.
/// Only the quadratic form is instantiated; other concave utilities can be
/// added behind this trait.
pub trait Utility {
    fn value(&self, x: &[f64]) -> f64;
    /// Adds a subgradient of `-u` at `x` into `out`.
    fn add_neg_subgrad(&self, x: &[f64], out: &mut [f64]);
}

impl QuadPrefUtility {
    pub fn new(weight: f64, preference: Vec<f64>) -> Result<Self, GameError> {
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(GameError::WeightNotPositive(weight));
        }
        Ok(Self { weight, preference })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn preference(&self) -> &[f64] {
        &self.preference
    }

    /// Strong-concavity modulus of the utility (`2 * weight`).
    pub fn concavity_modulus(&self) -> f64 {
        2.0 * self.weight
    }
}

impl Utility for QuadPrefUtility {
    fn value(&self, x: &[f64]) -> f64 {
        -self.weight * vecops::dist2(x, &self.preference).powi(2)
    }

    fn add_neg_subgrad(&self, x: &[f64], out: &mut [f64]) {
        for t in 0..x.len() {
            out[t] += 2.0 * self.weight * (x[t] - self.preference[t]);
        }
    }
}

/// Linear constraints `A X <= b` on the aggregate demand profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingConstraints {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    rhs: Vec<f64>,
}

impl CouplingConstraints {
    pub fn new(matrix: Vec<Vec<f64>>, rhs: Vec<f64>) -> Result<Self, GameError> {
        let rows = matrix.len();
        if rhs.len() != rows {
            return Err(GameError::CouplingRhs { rows, rhs: rhs.len() });
        }
        let cols = matrix.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows * cols);
        for row in &matrix {
            if row.len() != cols {
                return Err(GameError::RaggedRows);
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows, cols, data, rhs })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// `A X` into `out`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.rows {
            out[r] = vecops::dot(self.row(r), x);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.apply_into(x, &mut out);
        out
    }

    /// `A^T lambda` into `out`.
    pub fn transpose_apply_into(&self, lambda: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for r in 0..self.rows {
            vecops::axpy(lambda[r], self.row(r), out);
        }
    }

    /// Worst violation of `A X <= b` and the offending row.
    pub fn max_violation(&self, x: &[f64]) -> (f64, Option<usize>) {
        let mut worst = 0.0f64;
        let mut row = None;
        for r in 0..self.rows {
            let v = vecops::dot(self.row(r), x) - self.rhs[r];
            if v > worst {
                worst = v;
                row = Some(r);
            }
        }
        (worst, row)
    }
}

/// One atomic player: action set plus an optional individual utility
/// (`None` means `u = 0`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Player {
    pub set: BoxSimplexSet,
    pub utility: Option<QuadPrefUtility>,
}

/// Resource costs, either one tariff shared by all resources or one per
/// resource.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ResourceCosts {
    Shared(PiecewiseLinearCost),
    PerResource(Vec<PiecewiseLinearCost>),
}

impl From<PiecewiseLinearCost> for ResourceCosts {
    fn from(c: PiecewiseLinearCost) -> Self {
        ResourceCosts::Shared(c)
    }
}

impl ResourceCosts {
    pub fn at(&self, t: usize) -> &PiecewiseLinearCost {
        match self {
            ResourceCosts::Shared(c) => c,
            ResourceCosts::PerResource(cs) => &cs[t],
        }
    }
}

/// Atomic splittable congestion game: players, resource costs and optional
/// coupling constraints on the aggregate demand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameInstance {
    players: Vec<Player>,
    costs: ResourceCosts,
    coupling: Option<CouplingConstraints>,
    horizon: usize,
}

impl GameInstance {
    pub fn new(
        players: Vec<Player>,
        costs: ResourceCosts,
        coupling: Option<CouplingConstraints>,
    ) -> Result<Self, GameError> {
        if players.is_empty() {
            return Err(GameError::NoPlayers);
        }
        let horizon = players[0].set.dim();
        if horizon == 0 {
            return Err(GameError::NoResources);
        }
        for (i, p) in players.iter().enumerate() {
            if p.set.dim() != horizon {
                return Err(GameError::PlayerDimension {
                    player: i,
                    got: p.set.dim(),
                    expected: horizon,
                });
            }
            if let Some(u) = &p.utility {
                if u.preference().len() != horizon {
                    return Err(GameError::PlayerDimension {
                        player: i,
                        got: u.preference().len(),
                        expected: horizon,
                    });
                }
                if !p.set.contains(u.preference(), DEFAULT_FEAS_TOL) {
                    return Err(GameError::PreferenceOutsideSet { player: i });
                }
            }
        }
        if let ResourceCosts::PerResource(cs) = &costs {
            if cs.len() != horizon {
                return Err(GameError::CostCount {
                    got: cs.len(),
                    expected: horizon,
                });
            }
        }
        if let Some(c) = &coupling {
            if c.cols() != horizon {
                return Err(GameError::CouplingColumns {
                    got: c.cols(),
                    expected: horizon,
                });
            }
        }
        Ok(Self {
            players,
            costs,
            coupling,
            horizon,
        })
    }

    pub fn player_count(&self) -> usize {
        self.players.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn player(&self, i: usize) -> &Player {
        &self.players[i]
    }

    pub fn players(&self) -> &[Player] {
        &self.players
    }

    pub fn cost_at(&self, t: usize) -> &PiecewiseLinearCost {
        self.costs.at(t)
    }

    pub fn costs(&self) -> &ResourceCosts {
        &self.costs
    }

    pub fn coupling(&self) -> Option<&CouplingConstraints> {
        self.coupling.as_ref()
    }

    fn check_profile(&self, profile: &ActionProfile) -> Result<(), GameError> {
        if profile.players() != self.player_count() || profile.horizon() != self.horizon {
            return Err(GameError::ProfileShape {
                players: profile.players(),
                horizon: profile.horizon(),
                expected_players: self.player_count(),
                expected_horizon: self.horizon,
            });
        }
        Ok(())
    }
}

/// Dense per-player allocation matrix, one row per player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionProfile {
    data: Vec<f64>,
    players: usize,
    horizon: usize,
}

impl ActionProfile {
    pub fn zeros(players: usize, horizon: usize) -> Self {
        Self {
            data: vec![0.0; players * horizon],
            players,
            horizon,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GameError> {
        if rows.is_empty() {
            return Err(GameError::NoPlayers);
        }
        let horizon = rows[0].len();
        if rows.iter().any(|r| r.len() != horizon) {
            return Err(GameError::RaggedRows);
        }
        Ok(Self {
            data: rows.concat(),
            players: rows.len(),
            horizon,
        })
    }

    pub fn from_flat(data: Vec<f64>, players: usize, horizon: usize) -> Self {
        assert_eq!(data.len(), players * horizon);
        Self {
            data,
            players,
            horizon,
        }
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.horizon..(i + 1) * self.horizon]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.horizon..(i + 1) * self.horizon]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.players).map(|i| self.row(i).to_vec()).collect()
    }

    /// Columnwise sum over players, accumulated in row order.
    pub fn aggregate(&self) -> Vec<f64> {
        let mut agg = vec![0.0; self.horizon];
        for i in 0..self.players {
            vecops::axpy(1.0, self.row(i), &mut agg);
        }
        agg
    }
}

/// Worst violation per constraint family for a profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Worst per-coordinate bound violation over all players.
    pub max_bound_violation: f64,
    /// Worst total-mass mismatch over all players.
    pub max_mass_violation: f64,
    /// Worst coupling-row violation of `A X <= b`.
    pub max_coupling_violation: f64,
    pub worst_player: Option<usize>,
    pub worst_coupling_row: Option<usize>,
}

/// Checks a profile against every player set and the coupling constraints.
pub fn is_feasible(profile: &ActionProfile, game: &GameInstance, tol: f64) -> Result<FeasibilityReport, GameError> {
    game.check_profile(profile)?;
    let mut max_bound = 0.0f64;
    let mut max_mass = 0.0f64;
    let mut worst_player = None;
    for i in 0..game.player_count() {
        let (bound, mass) = game.player(i).set.violations(profile.row(i));
        if bound.max(mass) > max_bound.max(max_mass) {
            worst_player = Some(i);
        }
        max_bound = max_bound.max(bound);
        max_mass = max_mass.max(mass);
    }
    let (max_coupling, worst_row) = match game.coupling() {
        Some(c) => c.max_violation(&profile.aggregate()),
        None => (0.0, None),
    };
    Ok(FeasibilityReport {
        feasible: max_bound <= tol && max_mass <= tol && max_coupling <= tol,
        max_bound_violation: max_bound,
        max_mass_violation: max_mass,
        max_coupling_violation: max_coupling,
        worst_player,
        worst_coupling_row: worst_row,
    })
}

/// Player `i`'s cost at the profile: congestion charges at the aggregate
/// price minus the individual utility.
pub fn player_cost(i: usize, profile: &ActionProfile, game: &GameInstance) -> Result<f64, GameError> {
    game.check_profile(profile)?;
    if i >= game.player_count() {
        return Err(GameError::PlayerIndex {
            index: i,
            count: game.player_count(),
        });
    }
    let aggregate = profile.aggregate();
    let x = profile.row(i);
    let mut total = 0.0;
    for t in 0..game.horizon() {
        let price = game
            .cost_at(t)
            .eval(aggregate[t].max(0.0))
            .expect("aggregate demand nonnegative");
        total += x[t] * price;
    }
    if let Some(u) = &game.player(i).utility {
        total -= u.value(x);
    }
    Ok(total)
}

/// Player `i`'s cost with her own row replaced by `x_i`, others fixed.
pub fn player_cost_with(
    i: usize,
    x_i: &[f64],
    others_aggregate: &[f64],
    game: &GameInstance,
) -> f64 {
    let mut total = 0.0;
    for t in 0..game.horizon() {
        let demand = (others_aggregate[t] + x_i[t]).max(0.0);
        let price = game.cost_at(t).eval(demand).expect("demand nonnegative");
        total += x_i[t] * price;
    }
    if let Some(u) = &game.player(i).utility {
        total -= u.value(x_i);
    }
    total
}
