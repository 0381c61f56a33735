//! Piecewise-linear convex resource costs with subdifferential access, and
//! the stacked subgradient maps of the player costs.
//!
//! Two maps are provided: the atomic map includes each player's own impact
//! on the price (the `x ⊙ a` term with `a` a cost subgradient), the
//! nonatomic map drops it. The atomic map is generally not monotone even
//! for piecewise-linear costs; the nonatomic map always is.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{ActionProfile, GameInstance, QuadPrefUtility, Utility};

/// Relative slack accepted when checking continuity at a breakpoint.
const CONTINUITY_TOL: f64 = 1e-12;

/// Demands within this distance of a stored threshold count as sitting on it.
const BREAKPOINT_SNAP: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("a cost needs at least one affine piece")]
    Empty,
    #[error("expected {expected} breakpoints for {pieces} pieces, got {got}")]
    BreakpointCount {
        pieces: usize,
        expected: usize,
        got: usize,
    },
    #[error("breakpoints must be strictly increasing and positive")]
    BreakpointOrder,
    #[error("pieces are discontinuous at breakpoint {threshold}: {left} vs {right}")]
    Discontinuous {
        threshold: f64,
        left: f64,
        right: f64,
    },
    #[error("slopes must be strictly increasing across pieces")]
    SlopeOrder,
    #[error("slopes must be nonnegative (cost nondecreasing)")]
    NegativeSlope,
    #[error("cost evaluated at negative demand {0}")]
    NegativeDemand(f64),
    #[error("serialized cost must start at threshold 0, got {0}")]
    BadFirstThreshold(f64),
}

/// Convex nondecreasing piecewise-affine cost `c(X) = a_j + b_j X` on piece
/// `j`, continuous across the stored demand thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearCost {
    intercepts: Vec<f64>,
    slopes: Vec<f64>,
    breakpoints: Vec<f64>,
}

impl PiecewiseLinearCost {
    /// Builds a cost from `(intercept, slope)` pieces separated by the given
    /// thresholds. `pieces.len()` must be `breakpoints.len() + 1`.
    pub fn new(pieces: Vec<(f64, f64)>, breakpoints: Vec<f64>) -> Result<Self, CostError> {
        if pieces.is_empty() {
            return Err(CostError::Empty);
        }
        if breakpoints.len() + 1 != pieces.len() {
            return Err(CostError::BreakpointCount {
                pieces: pieces.len(),
                expected: pieces.len() - 1,
                got: breakpoints.len(),
            });
        }
        if breakpoints
            .windows(2)
            .any(|w| w[0] >= w[1])
            || breakpoints.iter().any(|&k| !k.is_finite() || k <= 0.0)
        {
            return Err(CostError::BreakpointOrder);
        }
        let (intercepts, slopes): (Vec<f64>, Vec<f64>) = pieces.into_iter().unzip();
        if slopes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CostError::SlopeOrder);
        }
        if slopes.iter().any(|&b| b < 0.0) {
            return Err(CostError::NegativeSlope);
        }
        for (j, &k) in breakpoints.iter().enumerate() {
            let left = intercepts[j] + slopes[j] * k;
            let right = intercepts[j + 1] + slopes[j + 1] * k;
            if (left - right).abs() > CONTINUITY_TOL * left.abs().max(1.0) {
                return Err(CostError::Discontinuous {
                    threshold: k,
                    left,
                    right,
                });
            }
        }
        Ok(Self {
            intercepts,
            slopes,
            breakpoints,
        })
    }

    /// Single affine piece `a + b X`.
    pub fn affine(intercept: f64, slope: f64) -> Result<Self, CostError> {
        Self::new(vec![(intercept, slope)], vec![])
    }

    /// Constant cost.
    pub fn constant(value: f64) -> Self {
        Self::new(vec![(value, 0.0)], vec![]).expect("constant piece is always valid")
    }

    /// Reconstructs a cost from its serialized `(threshold, slope, value)`
    /// triples; the first threshold must be 0.
    pub fn from_points(points: &[(f64, f64, f64)]) -> Result<Self, CostError> {
        if points.is_empty() {
            return Err(CostError::Empty);
        }
        if points[0].0 != 0.0 {
            return Err(CostError::BadFirstThreshold(points[0].0));
        }
        let pieces = points
            .iter()
            .map(|&(threshold, slope, value)| (value - slope * threshold, slope))
            .collect();
        let breakpoints = points[1..].iter().map(|p| p.0).collect();
        Self::new(pieces, breakpoints)
    }

    /// Serialized form: one `(threshold, slope, value-at-threshold)` triple
    /// per piece, ordered by threshold, starting at 0.
    pub fn to_points(&self) -> Vec<(f64, f64, f64)> {
        (0..self.slopes.len())
            .map(|j| {
                let threshold = if j == 0 { 0.0 } else { self.breakpoints[j - 1] };
                let value = self.intercepts[j] + self.slopes[j] * threshold;
                (threshold, self.slopes[j], value)
            })
            .collect()
    }

    fn piece_index(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|&k| k < x)
    }

    /// Exact piecewise-affine value at demand `x >= 0`.
    pub fn eval(&self, x: f64) -> Result<f64, CostError> {
        if x < 0.0 {
            return Err(CostError::NegativeDemand(x));
        }
        let j = self.piece_index(x);
        Ok(self.intercepts[j] + self.slopes[j] * x)
    }

    /// Subdifferential at `x` as a closed interval `[lo, hi]`: a singleton
    /// slope in a piece interior, the slope pair exactly at a threshold.
    /// Demands within `1e-12` of a stored threshold count as on it.
    pub fn subdiff(&self, x: f64) -> (f64, f64) {
        for (j, &k) in self.breakpoints.iter().enumerate() {
            if (x - k).abs() <= BREAKPOINT_SNAP {
                return (self.slopes[j], self.slopes[j + 1]);
            }
        }
        let j = self.piece_index(x.max(0.0));
        (self.slopes[j], self.slopes[j])
    }

    /// Maximum slope over demands in `[0, hi]`.
    pub fn max_slope_on(&self, hi: f64) -> f64 {
        self.slopes_on(hi).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Minimum slope over demands in `[0, hi]`.
    pub fn min_slope_on(&self, hi: f64) -> f64 {
        self.slopes_on(hi).fold(f64::INFINITY, f64::min)
    }

    fn slopes_on(&self, hi: f64) -> impl Iterator<Item = f64> + '_ {
        self.slopes.iter().enumerate().filter_map(move |(j, &b)| {
            let piece_start = if j == 0 { 0.0 } else { self.breakpoints[j - 1] };
            (piece_start <= hi).then_some(b)
        })
    }

    /// Largest absolute value attained on `[0, hi]`; the cost is
    /// nondecreasing so the extremes sit at the interval ends.
    pub fn max_abs_on(&self, hi: f64) -> f64 {
        let at0 = self.eval(0.0).expect("0 is a valid demand").abs();
        let athi = self.eval(hi.max(0.0)).expect("hi is a valid demand").abs();
        at0.max(athi)
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }
}

/// Deterministic choice of a subgradient from a cost subdifferential
/// interval at a breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SelectionRule {
    Left,
    #[default]
    Right,
    Midpoint,
}

impl SelectionRule {
    pub fn pick(self, interval: (f64, f64)) -> f64 {
        match self {
            SelectionRule::Left => interval.0,
            SelectionRule::Right => interval.1,
            SelectionRule::Midpoint => 0.5 * (interval.0 + interval.1),
        }
    }
}

/// Whether a stacked subgradient includes the own-impact term `x ⊙ a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubgradientMode {
    /// Full player-cost subgradient: `c(X) + x_i ⊙ a + ∂(-u_i)(x_i)`.
    Atomic,
    /// Population (infinitesimal player) subgradient: `c(X) + ∂(-u_i)(x_i)`.
    Nonatomic,
}

/// One subgradient per player, stacked row-wise.
#[derive(Debug, Clone)]
pub struct SubgradientSelection {
    data: Vec<f64>,
    dim: usize,
    pub mode: SubgradientMode,
}

impl SubgradientSelection {
    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Subgradient of `-u` at `x`; for the quadratic preference utility this is
/// the singleton `2ω (x - y)`.
pub fn utility_subgrad(u: &QuadPrefUtility, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    u.add_neg_subgrad(x, &mut g);
    g
}

/// Per-resource cost vector `c(X)` and the selected cost subgradients `a`.
fn price_and_selection(
    game: &GameInstance,
    aggregate: &[f64],
    rule: SelectionRule,
) -> (Vec<f64>, Vec<f64>) {
    let t = game.horizon();
    let mut price = vec![0.0; t];
    let mut sel = vec![0.0; t];
    for (ti, &xt) in aggregate.iter().enumerate() {
        let c = game.cost_at(ti);
        price[ti] = c.eval(xt.max(0.0)).expect("aggregate demand nonnegative");
        sel[ti] = rule.pick(c.subdiff(xt));
    }
    (price, sel)
}

/// Stacked atomic subgradient: `g_i = c(X) + x_i ⊙ a + 2ω_i (x_i - y_i)`
/// with `a` picked from the cost subdifferential by `rule`, shared across
/// players.
pub fn h_map(profile: &ActionProfile, game: &GameInstance, rule: SelectionRule) -> SubgradientSelection {
    stacked_map(profile, game, rule, SubgradientMode::Atomic)
}

/// Stacked nonatomic subgradient: `g_i = c(X) + 2ω_i (x_i - y_i)`, without
/// the own-impact term.
pub fn h_prime_map(profile: &ActionProfile, game: &GameInstance) -> SubgradientSelection {
    stacked_map(profile, game, SelectionRule::Right, SubgradientMode::Nonatomic)
}

fn stacked_map(
    profile: &ActionProfile,
    game: &GameInstance,
    rule: SelectionRule,
    mode: SubgradientMode,
) -> SubgradientSelection {
    assert_eq!(profile.players(), game.player_count(), "profile/game player mismatch");
    assert_eq!(profile.horizon(), game.horizon(), "profile/game horizon mismatch");
    let aggregate = profile.aggregate();
    let (price, sel) = price_and_selection(game, &aggregate, rule);
    let t = game.horizon();
    let mut data = vec![0.0; profile.players() * t];
    for i in 0..profile.players() {
        let x = profile.row(i);
        let g = &mut data[i * t..(i + 1) * t];
        g.copy_from_slice(&price);
        if mode == SubgradientMode::Atomic {
            for ti in 0..t {
                g[ti] += x[ti] * sel[ti];
            }
        }
        if let Some(u) = game.player(i).utility.as_ref() {
            u.add_neg_subgrad(x, g);
        }
    }
    SubgradientSelection { data, dim: t, mode }
}

/// Pairing gap `Σ_i ⟨g_i - h_i, x_i - y_i⟩` between the selected
/// subgradients at two profiles. Nonnegative for every pair exactly when
/// the map is monotone; the atomic map can make this negative.
pub fn monotonicity_gap(
    x: &ActionProfile,
    y: &ActionProfile,
    game: &GameInstance,
    mode: SubgradientMode,
    rule_at_x: SelectionRule,
    rule_at_y: SelectionRule,
) -> f64 {
    let gx = match mode {
        SubgradientMode::Atomic => h_map(x, game, rule_at_x),
        SubgradientMode::Nonatomic => h_prime_map(x, game),
    };
    let gy = match mode {
        SubgradientMode::Atomic => h_map(y, game, rule_at_y),
        SubgradientMode::Nonatomic => h_prime_map(y, game),
    };
    let mut gap = 0.0;
    for i in 0..x.players() {
        let (gi, hi) = (gx.row(i), gy.row(i));
        let (xi, yi) = (x.row(i), y.row(i));
        for t in 0..x.horizon() {
            gap += (gi[t] - hi[t]) * (xi[t] - yi[t]);
        }
    }
    gap
}
