//! Brute-force oracles for tiny instances: grid best responses, iterated
//! best-response fixed points, and a bisection projection. Used to validate
//! the descent solver; deliberately single-threaded and independent of the
//! solver's code path (only game values are shared, never subgradients).

use thiserror::Error;

use crate::game::{player_cost_with, ActionProfile, BoxSimplexSet, GameInstance};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("grid would enumerate {points} points, above the {max} guard")]
    GridGuard { points: usize, max: usize },
    #[error("no best-response fixed point found in {rounds} rounds")]
    NoFixedPoint { rounds: usize },
    #[error("player index {0} out of range")]
    BadIndex(usize),
}

/// Enumeration resolution and a guard against runaway grids.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub step: f64,
    pub max_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            step: 1e-2,
            max_points: 10_000_000,
        }
    }
}

impl GridSpec {
    pub fn with_step(step: f64) -> Self {
        Self {
            step,
            ..Self::default()
        }
    }
}

const GOLDEN_TOL: f64 = 1e-8;

/// Independent projection oracle: bisection on the dual scalar of the mass
/// constraint.
pub fn bisection_projection(v: &[f64], set: &BoxSimplexSet, tol: f64) -> Vec<f64> {
    let (lower, upper) = (set.lower(), set.upper());
    let clamp_all = |lam: f64| -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(i, &vi)| (vi - lam).clamp(lower[i], upper[i]))
            .collect()
    };
    let Some(total) = set.total() else {
        return clamp_all(0.0);
    };
    let mut lo = v
        .iter()
        .zip(upper)
        .map(|(vi, ui)| vi - ui)
        .fold(f64::INFINITY, f64::min)
        - 1.0;
    let mut hi = v
        .iter()
        .zip(lower)
        .map(|(vi, li)| vi - li)
        .fold(f64::NEG_INFINITY, f64::max)
        + 1.0;
    let mass = |lam: f64| clamp_all(lam).iter().sum::<f64>();
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mass(mid) > total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clamp_all(0.5 * (lo + hi))
}

/// A feasible point built without the projection module: lower bounds plus
/// an earliest-first mass fill.
fn greedy_feasible_point(set: &BoxSimplexSet) -> Vec<f64> {
    let mut x = set.lower().to_vec();
    if let Some(total) = set.total() {
        let mut remaining = total - x.iter().sum::<f64>();
        for t in 0..set.dim() {
            if remaining <= 0.0 {
                break;
            }
            let add = remaining.min(set.upper()[t] - x[t]);
            x[t] += add;
            remaining -= add;
        }
    }
    x
}

/// Free coordinates of the set, with the last one treated as dependent when
/// a mass equality is present.
fn free_split(set: &BoxSimplexSet) -> (Vec<usize>, Option<usize>) {
    let mut free: Vec<usize> = set.free_coords().collect();
    if set.total().is_some() {
        let dep = free.pop();
        (free, dep)
    } else {
        (free, None)
    }
}

fn grid_values(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let mut vals = Vec::new();
    let mut x = lo;
    while x < hi {
        vals.push(x);
        x += step;
    }
    vals.push(hi);
    vals
}

/// Grid-argmin of player `i`'s cost over her set with the other rows fixed,
/// refined by one golden-section pass per free coordinate.
pub fn best_response_oracle(
    game: &GameInstance,
    i: usize,
    profile: &ActionProfile,
    grid: &GridSpec,
) -> Result<Vec<f64>, OracleError> {
    if i >= game.player_count() {
        return Err(OracleError::BadIndex(i));
    }
    let set = &game.player(i).set;
    let mut others = profile.aggregate();
    for (o, xi) in others.iter_mut().zip(profile.row(i)) {
        *o -= xi;
    }
    let cost = |x: &[f64]| player_cost_with(i, x, &others, game);

    let (independents, dependent) = free_split(set);
    let mut best = greedy_feasible_point(set);
    if independents.is_empty() && dependent.is_none() {
        return Ok(best); // singleton set
    }

    // grid pass over the independent coordinates
    let axes: Vec<Vec<f64>> = independents
        .iter()
        .map(|&t| grid_values(set.lower()[t], set.upper()[t], grid.step))
        .collect();
    let points: usize = axes.iter().map(Vec::len).product();
    if points > grid.max_points {
        return Err(OracleError::GridGuard {
            points,
            max: grid.max_points,
        });
    }
    let mut best_val = f64::INFINITY;
    let mut candidate = best.clone();
    let mut index = vec![0usize; axes.len()];
    loop {
        for (k, &t) in independents.iter().enumerate() {
            candidate[t] = axes[k][index[k]];
        }
        if complete_dependent(&mut candidate, set, dependent) {
            let val = cost(&candidate);
            if val < best_val {
                best_val = val;
                best.copy_from_slice(&candidate);
            }
        }
        if !advance(&mut index, &axes) {
            break;
        }
    }
    if best_val.is_infinite() {
        // no grid point hit the mass slice; fall back to a feasible corner
        best = greedy_feasible_point(set);
    }

    // golden-section polish, one pass per free coordinate
    for &t in independents.iter() {
        golden_polish(&mut best, t, set, dependent, &cost);
    }
    if independents.is_empty() {
        if let Some(dep) = dependent {
            // only the dependent coordinate is free: the mass pins it
            best[dep] = set.total().expect("dependent implies total")
                - best
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != dep)
                    .map(|(_, v)| v)
                    .sum::<f64>();
        }
    }
    Ok(best)
}

fn complete_dependent(x: &mut [f64], set: &BoxSimplexSet, dependent: Option<usize>) -> bool {
    let Some(dep) = dependent else { return true };
    let total = set.total().expect("dependent implies total");
    let rest: f64 = x
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != dep)
        .map(|(_, v)| v)
        .sum();
    let needed = total - rest;
    x[dep] = needed;
    set.lower()[dep] - 1e-12 <= needed && needed <= set.upper()[dep] + 1e-12
}

fn advance(index: &mut [usize], axes: &[Vec<f64>]) -> bool {
    for k in 0..index.len() {
        index[k] += 1;
        if index[k] < axes[k].len() {
            return true;
        }
        index[k] = 0;
    }
    false
}

/// Golden-section along coordinate `t`, adjusting the dependent coordinate
/// to keep the mass equality.
fn golden_polish(
    x: &mut Vec<f64>,
    t: usize,
    set: &BoxSimplexSet,
    dependent: Option<usize>,
    cost: &dyn Fn(&[f64]) -> f64,
) {
    let (mut lo, mut hi) = (set.lower()[t], set.upper()[t]);
    if let Some(dep) = dependent {
        let total = set.total().expect("dependent implies total");
        let rest: f64 = x
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != t && k != dep)
            .map(|(_, v)| v)
            .sum();
        // keep the dependent coordinate within its own bounds
        lo = lo.max(total - rest - set.upper()[dep]);
        hi = hi.min(total - rest - set.lower()[dep]);
        if lo > hi {
            return;
        }
    }
    let eval = |s: f64, x: &mut Vec<f64>| -> f64 {
        x[t] = s;
        if !complete_dependent(x, set, dependent) {
            return f64::INFINITY;
        }
        cost(x)
    };
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = eval(c, x);
    let mut fd = eval(d, x);
    while (b - a) > GOLDEN_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = eval(c, x);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = eval(d, x);
        }
    }
    let s = if fc <= fd { c } else { d };
    eval(s, x);
}

/// Iterated best responses until the profile moves less than the grid step
/// in infinity norm. Non-convergence is reported, never papered over.
pub fn ne_fixed_point_oracle(
    game: &GameInstance,
    grid: &GridSpec,
    max_rounds: usize,
) -> Result<ActionProfile, OracleError> {
    let start = ActionProfile::from_rows(
        &(0..game.player_count())
            .map(|i| greedy_feasible_point(&game.player(i).set))
            .collect::<Vec<_>>(),
    )
    .expect("nonempty game");
    ne_fixed_point_from(game, start, grid, max_rounds)
}

/// Iterated best responses from a caller-chosen starting profile.
pub fn ne_fixed_point_from(
    game: &GameInstance,
    start: ActionProfile,
    grid: &GridSpec,
    max_rounds: usize,
) -> Result<ActionProfile, OracleError> {
    let mut profile = start;
    for _ in 0..max_rounds {
        let mut max_change = 0.0f64;
        for i in 0..game.player_count() {
            let br = best_response_oracle(game, i, &profile, grid)?;
            for (old, new) in profile.row(i).iter().zip(&br) {
                max_change = max_change.max((old - new).abs());
            }
            profile.row_mut(i).copy_from_slice(&br);
        }
        if max_change < grid.step {
            return Ok(profile);
        }
    }
    Err(OracleError::NoFixedPoint { rounds: max_rounds })
}

/// Worst-case directional optimality of a profile: the minimum of
/// `sum_i <g_i, z_i - x_i>` over sampled feasible profiles `z`. At a
/// variational equilibrium this is nonnegative up to solver tolerance.
pub fn stationarity_certificate(
    game: &GameInstance,
    profile: &ActionProfile,
    subgradient: &crate::cost::SubgradientSelection,
    samples: usize,
    seed: u64,
) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let mut pairing = 0.0;
        for i in 0..game.player_count() {
            let set = &game.player(i).set;
            let draw: Vec<f64> = (0..set.dim())
                .map(|t| rng.gen_range(set.lower()[t]..=set.upper()[t]))
                .collect();
            let z = crate::projection::project_box_simplex(&draw, set);
            let g = subgradient.row(i);
            let x = profile.row(i);
            for t in 0..set.dim() {
                pairing += g[t] * (z[t] - x[t]);
            }
        }
        worst = worst.min(pairing);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{Player, QuadPrefUtility};
    use crate::vecops;
    use crate::PiecewiseLinearCost;

    fn single_player_game() -> GameInstance {
        GameInstance::new(
            vec![Player {
                set: BoxSimplexSet::pure_box(vec![0.0], vec![10.0]).unwrap(),
                utility: Some(QuadPrefUtility::new(1.0, vec![2.0]).unwrap()),
            }],
            PiecewiseLinearCost::affine(0.0, 1.0).unwrap().into(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn single_player_minimum() {
        // f(x) = x^2 + (x-2)^2 has its minimum at x = 1
        let game = single_player_game();
        let profile = ActionProfile::zeros(1, 1);
        let grid = GridSpec::with_step(1e-4);
        let br = best_response_oracle(&game, 0, &profile, &grid).unwrap();
        assert!((br[0] - 1.0).abs() <= 1e-4);
    }

    #[test]
    fn free_cost_returns_preference() {
        let game = GameInstance::new(
            vec![Player {
                set: BoxSimplexSet::pure_box(vec![0.0], vec![10.0]).unwrap(),
                utility: Some(QuadPrefUtility::new(2.0, vec![3.3]).unwrap()),
            }],
            PiecewiseLinearCost::constant(0.0).into(),
            None,
        )
        .unwrap();
        let br =
            best_response_oracle(&game, 0, &ActionProfile::zeros(1, 1), &GridSpec::with_step(0.1))
                .unwrap();
        assert!((br[0] - 3.3).abs() <= 1e-6);
    }

    #[test]
    fn pinned_set_returns_point() {
        let game = GameInstance::new(
            vec![Player {
                set: BoxSimplexSet::with_total(2.0, vec![1.0, 1.0], vec![1.0, 1.0]).unwrap(),
                utility: None,
            }],
            PiecewiseLinearCost::affine(0.0, 1.0).unwrap().into(),
            None,
        )
        .unwrap();
        let br =
            best_response_oracle(&game, 0, &ActionProfile::zeros(1, 2), &GridSpec::default())
                .unwrap();
        assert_eq!(br, vec![1.0, 1.0]);
    }

    fn symmetric_two_player() -> GameInstance {
        let player = || Player {
            set: BoxSimplexSet::pure_box(vec![0.0], vec![2.0]).unwrap(),
            utility: Some(QuadPrefUtility::new(1.0, vec![1.0]).unwrap()),
        };
        GameInstance::new(
            vec![player(), player()],
            PiecewiseLinearCost::affine(0.0, 1.0).unwrap().into(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn two_player_fixed_point() {
        // each player solves x + X + 2(x-1) = 0, symmetric point x = 0.4
        let game = symmetric_two_player();
        let grid = GridSpec::with_step(1e-3);
        let ne = ne_fixed_point_oracle(&game, &grid, 200).unwrap();
        assert!((ne.row(0)[0] - 0.4).abs() <= 2e-4, "{:?}", ne.row(0));
        assert!((ne.row(1)[0] - 0.4).abs() <= 2e-4);
    }

    #[test]
    fn immediate_convergence_at_fixed_point() {
        let game = symmetric_two_player();
        let start = ActionProfile::from_rows(&[vec![0.4], vec![0.4]]).unwrap();
        let grid = GridSpec::with_step(1e-3);
        let ne = ne_fixed_point_from(&game, start, &grid, 1).unwrap();
        assert!((ne.row(0)[0] - 0.4).abs() <= 1e-3);
    }

    #[test]
    fn kinked_cost_game_has_stationary_profile() {
        // two players on [0,4] with no utility and the kinked tariff: all
        // prices are nonnegative so the zero profile is mutually optimal
        let set = || BoxSimplexSet::pure_box(vec![0.0], vec![4.0]).unwrap();
        let game = GameInstance::new(
            vec![
                Player { set: set(), utility: None },
                Player { set: set(), utility: None },
            ],
            PiecewiseLinearCost::new(vec![(0.0, 1.0), (-8.0, 3.0)], vec![4.0])
                .unwrap()
                .into(),
            None,
        )
        .unwrap();
        let grid = GridSpec::with_step(1e-2);
        let ne = ne_fixed_point_oracle(&game, &grid, 100).unwrap();
        for i in 0..2 {
            let br = best_response_oracle(&game, i, &ne, &grid).unwrap();
            assert!(vecops::dist2(&br, ne.row(i)) <= grid.step);
        }
    }

    #[test]
    fn grid_guard_trips() {
        let game = GameInstance::new(
            vec![Player {
                set: BoxSimplexSet::pure_box(vec![0.0; 3], vec![10.0; 3]).unwrap(),
                utility: None,
            }],
            PiecewiseLinearCost::affine(0.0, 1.0).unwrap().into(),
            None,
        )
        .unwrap();
        let grid = GridSpec {
            step: 1e-4,
            max_points: 1000,
        };
        assert!(matches!(
            best_response_oracle(&game, 0, &ActionProfile::zeros(1, 3), &grid),
            Err(OracleError::GridGuard { .. })
        ));
    }
}
