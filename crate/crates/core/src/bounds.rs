//! Computable constants and a-priori distance bounds: action-norm and
//! subgradient bounds, monotonicity moduli, the uniform interior margin of
//! the feasible profiles, and the closed-form distances between atomic
//! equilibria and their (clustered) population approximations.

use serde::{Deserialize, Serialize};

use crate::game::{ActionProfile, BoxSimplexSet, GameInstance};
use crate::projection::project_box_simplex;
use crate::vecops;

/// Game-level constants entering every bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Constants {
    /// Upper bound on any single player's action norm.
    pub action_norm: f64,
    /// Upper bound on the aggregate norm (`players * action_norm`).
    pub aggregate_norm: f64,
    /// Largest cost subgradient over reachable demands.
    pub max_cost_slope: f64,
    /// Norm bound of the price vector over reachable demands.
    pub cost_norm: f64,
    /// Per-player utility subgradient norm bounds.
    pub utility_norms: Vec<f64>,
    pub utility_norm_max: f64,
    /// `cost_norm + utility_norm_max`.
    pub player_grad_norm: f64,
    /// Strong-concavity modulus `2 min_i weight_i`; zero when some player
    /// has no utility.
    pub alpha: f64,
    /// Smallest cost slope over reachable demands.
    pub beta: f64,
}

/// Exact maximum of the squared norm over `{sum x = mass, 0 <= x <= upper}`
/// (lower bounds dropped, which can only enlarge the set): fill the
/// largest upper bounds first. An extreme point maximizes the convex norm,
/// and for zero lower bounds the sorted greedy fill reaches the best one.
fn relaxed_norm_sq(mass: f64, upper: &[f64]) -> f64 {
    let mut caps: Vec<f64> = upper.to_vec();
    caps.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
    let mut remaining = mass;
    let mut sq = 0.0;
    for c in caps {
        if remaining <= 0.0 {
            break;
        }
        let take = c.min(remaining);
        sq += take * take;
        remaining -= take;
    }
    sq
}

/// Upper bound of `max ||x||` over the set; exact for plain boxes.
pub fn action_norm_bound(set: &BoxSimplexSet) -> f64 {
    match set.total() {
        None => set
            .upper()
            .iter()
            .map(|u| u * u)
            .sum::<f64>()
            .sqrt(),
        Some(mass) => relaxed_norm_sq(mass, set.upper()).sqrt(),
    }
}

/// Utility subgradient norm bound over the bounding box of the set
/// (endpoint enumeration per coordinate).
fn utility_norm_bound(set: &BoxSimplexSet, utility: Option<&crate::game::QuadPrefUtility>) -> f64 {
    let Some(u) = utility else { return 0.0 };
    let w2 = 2.0 * u.weight();
    let mut sq = 0.0;
    for t in 0..set.dim() {
        let lo = w2 * (set.lower()[t] - u.preference()[t]);
        let hi = w2 * (set.upper()[t] - u.preference()[t]);
        sq += (lo * lo).max(hi * hi);
    }
    sq.sqrt()
}

pub fn compute_constants(game: &GameInstance) -> Constants {
    let players = game.player_count() as f64;
    let action_norm = (0..game.player_count())
        .map(|i| action_norm_bound(&game.player(i).set))
        .fold(0.0, f64::max);
    let aggregate_norm = players * action_norm;
    let mut max_slope = f64::NEG_INFINITY;
    let mut min_slope = f64::INFINITY;
    let mut cost_norm_sq = 0.0;
    for t in 0..game.horizon() {
        let c = game.cost_at(t);
        max_slope = max_slope.max(c.max_slope_on(aggregate_norm));
        min_slope = min_slope.min(c.min_slope_on(aggregate_norm));
        cost_norm_sq += c.max_abs_on(aggregate_norm).powi(2);
    }
    let utility_norms: Vec<f64> = (0..game.player_count())
        .map(|i| utility_norm_bound(&game.player(i).set, game.player(i).utility.as_ref()))
        .collect();
    let utility_norm_max = utility_norms.iter().copied().fold(0.0, f64::max);
    let alpha = game
        .players()
        .iter()
        .map(|p| p.utility.as_ref().map_or(0.0, |u| u.concavity_modulus()))
        .fold(f64::INFINITY, f64::min);
    Constants {
        action_norm,
        aggregate_norm,
        max_cost_slope: max_slope,
        cost_norm: cost_norm_sq.sqrt(),
        utility_norm_max,
        player_grad_norm: cost_norm_sq.sqrt() + utility_norm_max,
        utility_norms,
        alpha,
        beta: min_slope,
    }
}

/// Distance from a point of the set to the set's relative boundary,
/// measured inside the affine hull. Infinite for singleton sets.
pub fn distance_to_relative_boundary(x: &[f64], set: &BoxSimplexSet) -> f64 {
    if set.is_singleton() {
        return f64::INFINITY;
    }
    let free: Vec<usize> = set.free_coords().collect();
    let scale = match set.total() {
        Some(_) => {
            let d = free.len() as f64;
            (d / (d - 1.0)).sqrt()
        }
        None => 1.0,
    };
    let mut dist = f64::INFINITY;
    for &t in &free {
        dist = dist
            .min((x[t] - set.lower()[t]) * scale)
            .min((set.upper()[t] - x[t]) * scale);
    }
    dist
}

/// Largest certified inradius of the set within its affine hull, with a
/// point attaining it. Zero for singletons.
fn max_inradius(set: &BoxSimplexSet, tol: f64) -> (f64, Vec<f64>) {
    if set.is_singleton() {
        let mut x = set.lower().to_vec();
        if let Some(total) = set.total() {
            // one coordinate may float between its bounds
            let free: Vec<usize> = set.free_coords().collect();
            if let Some(&f) = free.first() {
                let rest: f64 = x
                    .iter()
                    .enumerate()
                    .filter(|&(t, _)| t != f)
                    .map(|(_, v)| v)
                    .sum();
                x[f] = total - rest;
            }
        }
        return (0.0, x);
    }
    let free: Vec<usize> = set.free_coords().collect();
    match set.total() {
        None => {
            // box inradius: smallest half-width, attained at the center
            let mut r = f64::INFINITY;
            let mut x = set.lower().to_vec();
            for &t in &free {
                let half = 0.5 * (set.upper()[t] - set.lower()[t]);
                r = r.min(half);
                x[t] = 0.5 * (set.lower()[t] + set.upper()[t]);
            }
            (r, x)
        }
        Some(total) => {
            let d = free.len() as f64;
            let shrink = ((d - 1.0) / d).sqrt();
            // feasibility of margin r: the shrunken box still brackets the
            // mass; bisection on r
            let feasible_point = |r: f64| -> Option<Vec<f64>> {
                let mut lo = set.lower().to_vec();
                let mut hi = set.upper().to_vec();
                for &t in &free {
                    lo[t] += r * shrink;
                    hi[t] -= r * shrink;
                    if lo[t] > hi[t] {
                        return None;
                    }
                }
                let (lo_sum, hi_sum): (f64, f64) = (lo.iter().sum(), hi.iter().sum());
                if !(lo_sum <= total && total <= hi_sum) {
                    return None;
                }
                let shrunk = BoxSimplexSet::with_total(total, lo, hi).ok()?;
                let mid: Vec<f64> = shrunk
                    .lower()
                    .iter()
                    .zip(shrunk.upper())
                    .map(|(l, u)| 0.5 * (l + u))
                    .collect();
                Some(project_box_simplex(&mid, &shrunk))
            };
            let mut lo_r = 0.0;
            let mut hi_r = free
                .iter()
                .map(|&t| 0.5 * (set.upper()[t] - set.lower()[t]))
                .fold(f64::INFINITY, f64::min)
                / shrink
                + 1.0;
            for _ in 0..100 {
                if hi_r - lo_r <= tol {
                    break;
                }
                let mid = 0.5 * (lo_r + hi_r);
                if feasible_point(mid).is_some() {
                    lo_r = mid;
                } else {
                    hi_r = mid;
                }
            }
            let x = feasible_point(lo_r).unwrap_or_else(|| {
                feasible_point(0.0).expect("a valid set has a feasible point")
            });
            (lo_r, x)
        }
    }
}

/// Interior-margin result: the margin `rho`, its witness profile, and how
/// the aggregate slack was obtained.
#[derive(Debug, Clone)]
pub struct RhoResult {
    /// `(min inradius / 3 aggregate_norm) * aggregate margin`; `None` when
    /// no strictly interior aggregate point was found.
    pub rho: Option<f64>,
    /// Per-player certified inradii.
    pub inradii: Vec<f64>,
    /// Aggregate slack to the coupling boundary actually used (possibly
    /// capped).
    pub margin: f64,
    /// True when the margin was capped at the aggregate norm (always the
    /// case without coupling constraints); bounds built on a capped margin
    /// are heuristic rather than certified.
    pub capped: bool,
    /// Profile keeping every row `rho` inside its set while satisfying the
    /// coupling constraints.
    pub witness: Option<ActionProfile>,
}

/// Computes the uniform interior margin: per-player max-inradius points, a
/// max-slack feasible profile for the coupling rows (projected subgradient
/// on the product set), and the margin formula combining them.
pub fn compute_rho(game: &GameInstance) -> RhoResult {
    const MARGIN_TOL: f64 = 1e-9;
    let constants_m = game.player_count() as f64
        * (0..game.player_count())
            .map(|i| action_norm_bound(&game.player(i).set))
            .fold(0.0, f64::max);
    let mut inradii = Vec::with_capacity(game.player_count());
    let mut centers = Vec::with_capacity(game.player_count());
    for i in 0..game.player_count() {
        let (r, x) = max_inradius(&game.player(i).set, MARGIN_TOL);
        inradii.push(r);
        centers.push(x);
    }
    let eta = inradii.iter().copied().fold(f64::INFINITY, f64::min);

    let (margin_raw, slack_profile) = match game.coupling() {
        None => (f64::INFINITY, centers.clone()),
        Some(_) => max_coupling_slack(game),
    };
    if margin_raw <= 0.0 {
        return RhoResult {
            rho: None,
            inradii,
            margin: margin_raw,
            capped: false,
            witness: None,
        };
    }
    let capped = margin_raw > constants_m;
    let margin = margin_raw.min(constants_m);
    let rho = eta / (3.0 * constants_m) * margin;

    // witness: move the slack profile toward the inradius centers
    let t_step = margin / (3.0 * constants_m);
    let rows: Vec<Vec<f64>> = slack_profile
        .iter()
        .zip(&centers)
        .map(|(y, c)| {
            y.iter()
                .zip(c)
                .map(|(yi, ci)| yi - t_step * (yi - ci))
                .collect()
        })
        .collect();
    let witness = ActionProfile::from_rows(&rows).ok();

    RhoResult {
        rho: Some(rho),
        inradii,
        margin,
        capped,
        witness,
    }
}

/// Maximizes the minimum normalized slack `(b_r - a_r . X) / ||a_r||` over
/// per-player-feasible profiles by projected subgradient ascent; returns
/// the best slack and the profile attaining it.
fn max_coupling_slack(game: &GameInstance) -> (f64, Vec<Vec<f64>>) {
    let coupling = game.coupling().expect("called with coupling present");
    let t = game.horizon();
    let row_norms: Vec<f64> = (0..coupling.rows())
        .map(|r| vecops::norm2(coupling.row(r)).max(1e-300))
        .collect();

    let mut profile: Vec<Vec<f64>> = (0..game.player_count())
        .map(|i| {
            let set = &game.player(i).set;
            let mid: Vec<f64> = set
                .lower()
                .iter()
                .zip(set.upper())
                .map(|(l, u)| 0.5 * (l + u))
                .collect();
            project_box_simplex(&mid, set)
        })
        .collect();

    let slack_of = |profile: &[Vec<f64>]| -> (f64, usize) {
        let mut aggregate = vec![0.0; t];
        for row in profile {
            vecops::axpy(1.0, row, &mut aggregate);
        }
        let mut worst = f64::INFINITY;
        let mut arg = 0;
        for r in 0..coupling.rows() {
            let s = (coupling.rhs()[r] - vecops::dot(coupling.row(r), &aggregate)) / row_norms[r];
            if s < worst {
                worst = s;
                arg = r;
            }
        }
        (worst, arg)
    };

    let (mut best_slack, _) = slack_of(&profile);
    let mut best_profile = profile.clone();
    let scale = (0..game.player_count())
        .map(|i| action_norm_bound(&game.player(i).set))
        .fold(0.0, f64::max)
        .max(1e-12);
    for k in 1..=2000usize {
        let (_, active) = slack_of(&profile);
        let step = scale / (k as f64).sqrt();
        for (i, row) in profile.iter_mut().enumerate() {
            let set = &game.player(i).set;
            let dir = coupling.row(active);
            let trial: Vec<f64> = row
                .iter()
                .zip(dir)
                .map(|(x, d)| x - step * d / row_norms[active])
                .collect();
            *row = project_box_simplex(&trial, set);
        }
        let (slack, _) = slack_of(&profile);
        if slack > best_slack {
            best_slack = slack;
            best_profile = profile.clone();
        }
    }
    (best_slack, best_profile)
}

/// Clustering error constant combining both heterogeneity metrics; valid
/// when the interior margin is positive and `delta_x < rho / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KBound {
    Value(f64),
    NotApplicable { reason: String },
}

impl KBound {
    pub fn value(&self) -> Option<f64> {
        match self {
            KBound::Value(v) => Some(*v),
            KBound::NotApplicable { .. } => None,
        }
    }
}

pub fn k_bound(delta_x: f64, delta_u: f64, constants: &Constants, rho: Option<f64>) -> KBound {
    let Some(rho) = rho.filter(|&r| r > 0.0) else {
        return KBound::NotApplicable {
            reason: "interior margin is zero or undefined".into(),
        };
    };
    if delta_x >= rho / 2.0 {
        return KBound::NotApplicable {
            reason: format!("delta_x {delta_x} >= rho/2 = {}", rho / 2.0),
        };
    }
    KBound::Value(
        2.0 * constants.aggregate_norm
            * (3.0 * constants.player_grad_norm * delta_x / rho + delta_u),
    )
}

/// The four closed-form distance bounds, each in individual (profile)
/// space via the strong-concavity modulus and in aggregate space via the
/// cost-slope modulus. `None` marks a bound whose modulus vanishes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceBounds {
    /// Distance between any two atomic variational equilibria.
    pub vne_pair_x: Option<f64>,
    pub vne_pair_agg: Option<f64>,
    /// Distance between an atomic equilibrium and the population
    /// equilibrium at the same granularity.
    pub svwe_x: Option<f64>,
    pub svwe_agg: Option<f64>,
    /// Distance between the full population equilibrium and the clustered
    /// one (expanded back to player granularity).
    pub cluster_x: Option<f64>,
    pub cluster_agg: Option<f64>,
    /// End-to-end: atomic equilibrium vs clustered population equilibrium.
    pub total_x: Option<f64>,
    pub total_agg: Option<f64>,
}

pub fn distance_bounds(
    constants: &Constants,
    players: usize,
    horizon: usize,
    k: &KBound,
) -> DistanceBounds {
    let m = constants.aggregate_norm;
    let tc = horizon as f64 * constants.max_cost_slope;
    let i = players as f64;
    let per = |modulus: f64, factor: f64| -> Option<f64> {
        (modulus > 0.0).then(|| factor * m * (tc / (modulus * i)).sqrt())
    };
    let pair_x = per(constants.alpha, 2.0);
    let pair_agg = per(constants.beta, 2.0);
    let approx_x = (constants.alpha > 0.0).then(|| m * (2.0 * tc / (constants.alpha * i)).sqrt());
    let approx_agg = (constants.beta > 0.0).then(|| m * (2.0 * tc / (constants.beta * i)).sqrt());
    let cluster = |modulus: f64| -> Option<f64> {
        match (k, modulus > 0.0) {
            (KBound::Value(kv), true) => Some((kv / modulus).sqrt()),
            _ => None,
        }
    };
    let cluster_x = cluster(constants.alpha);
    let cluster_agg = cluster(constants.beta);
    let total_x = cluster_x.zip(approx_x).map(|(a, b)| a + b);
    let total_agg = cluster_agg.zip(approx_agg).map(|(a, b)| a + b);
    DistanceBounds {
        vne_pair_x: pair_x,
        vne_pair_agg: pair_agg,
        svwe_x: approx_x,
        svwe_agg: approx_agg,
        cluster_x,
        cluster_agg,
        total_x,
        total_agg,
    }
}

/// Behavioural similarity of two populations with close parameters at a
/// population equilibrium: `(1/sqrt(a_i) + 1/sqrt(a_j)) * sqrt(K)`.
pub fn similar_population_bound(alpha_i: f64, alpha_j: f64, k_value: f64) -> f64 {
    (1.0 / alpha_i.sqrt() + 1.0 / alpha_j.sqrt()) * k_value.sqrt()
}

/// Everything the comparison pipeline reports per reduction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub constants: Constants,
    pub rho: Option<f64>,
    pub rho_capped: bool,
    pub delta_x: f64,
    pub delta_u: f64,
    pub k: KBound,
    pub bounds: DistanceBounds,
}

pub fn bound_report(game: &GameInstance, delta_x: f64, delta_u: f64) -> BoundReport {
    let constants = compute_constants(game);
    let rho = compute_rho(game);
    let k = k_bound(delta_x, delta_u, &constants, rho.rho);
    let bounds = distance_bounds(&constants, game.player_count(), game.horizon(), &k);
    BoundReport {
        constants,
        rho: rho.rho,
        rho_capped: rho.capped,
        delta_x,
        delta_u,
        k,
        bounds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{is_feasible, CouplingConstraints, Player, QuadPrefUtility};
    use crate::PiecewiseLinearCost;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

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
    fn constants_on_reference_game() {
        let c = compute_constants(&symmetric_two_player());
        assert_eq!(c.action_norm, 2.0);
        assert_eq!(c.aggregate_norm, 4.0);
        assert_eq!(c.max_cost_slope, 1.0);
        assert_eq!(c.alpha, 2.0);
        assert_eq!(c.beta, 1.0);
        // max |2(x-1)| over [0,2] is 2 per player
        assert_eq!(c.utility_norm_max, 2.0);
        // price norm at the aggregate cap: |c(4)| = 4
        assert_eq!(c.cost_norm, 4.0);
        assert_eq!(c.player_grad_norm, 6.0);
    }

    #[test]
    fn constant_cost_moduli() {
        let game = GameInstance::new(
            vec![Player {
                set: BoxSimplexSet::pure_box(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
                utility: None,
            }],
            PiecewiseLinearCost::constant(3.0).into(),
            None,
        )
        .unwrap();
        let c = compute_constants(&game);
        assert_eq!(c.max_cost_slope, 0.0);
        assert_eq!(c.beta, 0.0);
        assert!((c.cost_norm - (2.0f64).sqrt() * 3.0).abs() <= 1e-12);
        assert_eq!(c.alpha, 0.0);
    }

    #[test]
    fn pinned_player_has_zero_utility_norm() {
        let set = BoxSimplexSet::with_total(2.0, vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let game = GameInstance::new(
            vec![Player {
                set,
                utility: Some(QuadPrefUtility::new(5.0, vec![1.0, 1.0]).unwrap()),
            }],
            PiecewiseLinearCost::affine(0.0, 1.0).unwrap().into(),
            None,
        )
        .unwrap();
        let c = compute_constants(&game);
        assert_eq!(c.utility_norm_max, 0.0);
    }

    #[test]
    fn action_norm_bound_is_sound_and_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let t = rng.gen_range(2..4);
            let upper: Vec<f64> = (0..t).map(|_| rng.gen_range(0.2..3.0)).collect();
            let hi: f64 = upper.iter().sum();
            let mass = rng.gen_range(0.0..hi);
            let set = BoxSimplexSet::with_total(mass, vec![0.0; t], upper.clone()).unwrap();
            let bound = action_norm_bound(&set);
            // brute force over exactly feasible points: enumerate the first
            // t-1 coordinates, solve the last from the mass equality
            let steps = 60;
            let mut best = 0.0f64;
            let mut idx = vec![0usize; t - 1];
            loop {
                let mut x: Vec<f64> = (0..t - 1)
                    .map(|ti| upper[ti] * idx[ti] as f64 / steps as f64)
                    .collect();
                let rest: f64 = x.iter().sum();
                let last = mass - rest;
                if (0.0..=upper[t - 1]).contains(&last) {
                    x.push(last);
                    best = best.max(vecops::norm2(&x));
                }
                let mut k = 0;
                while k < t - 1 {
                    idx[k] += 1;
                    if idx[k] <= steps {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == t - 1 {
                    break;
                }
            }
            assert!(bound >= best - 1e-9, "bound {bound} below grid max {best}");
            assert!(bound <= best + 0.25, "bound {bound} loose against grid max {best}");
        }
    }

    #[test]
    fn k_bound_values_and_flags() {
        let constants = Constants {
            action_norm: 1.0,
            aggregate_norm: 4.0,
            max_cost_slope: 1.0,
            cost_norm: 4.0,
            utility_norms: vec![6.0],
            utility_norm_max: 6.0,
            player_grad_norm: 10.0,
            alpha: 2.0,
            beta: 1.0,
        };
        assert_eq!(k_bound(0.0, 0.0, &constants, Some(1.0)), KBound::Value(0.0));
        // 2 * 4 * (3 * 10 * 0.01 / 1 + 0.1) = 3.2
        assert_eq!(
            k_bound(0.01, 0.1, &constants, Some(1.0)),
            KBound::Value(3.2)
        );
        assert!(matches!(
            k_bound(0.6, 0.0, &constants, Some(1.0)),
            KBound::NotApplicable { .. }
        ));
        assert!(matches!(
            k_bound(0.0, 0.0, &constants, None),
            KBound::NotApplicable { .. }
        ));
    }

    #[test]
    fn reference_game_bound_value() {
        let game = symmetric_two_player();
        let constants = compute_constants(&game);
        let bounds = distance_bounds(&constants, 2, 1, &KBound::Value(0.0));
        // M sqrt(2 T C / (alpha I)) = 4 sqrt(2 / 4)
        let expected = 4.0 * (0.5f64).sqrt();
        assert!((bounds.svwe_x.unwrap() - expected).abs() <= 1e-12);
        assert!((expected - 2.828).abs() < 1e-3);
        // with zero clustering error the end-to-end bound collapses onto it
        assert_eq!(bounds.total_x, bounds.svwe_x);
        assert!((bounds.vne_pair_x.unwrap() - 2.0 * 4.0 * (0.25f64).sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn bounds_monotonicity() {
        let game = symmetric_two_player();
        let constants = compute_constants(&game);
        let at = |players: usize| {
            distance_bounds(&constants, players, 1, &KBound::Value(0.0))
                .svwe_x
                .unwrap()
        };
        assert!(at(1_000_000) < at(1_000));

        let k_small = k_bound(0.01, 0.01, &constants, Some(1.0)).value().unwrap();
        let k_dx = k_bound(0.02, 0.01, &constants, Some(1.0)).value().unwrap();
        let k_du = k_bound(0.01, 0.02, &constants, Some(1.0)).value().unwrap();
        let k_rho = k_bound(0.01, 0.01, &constants, Some(0.5)).value().unwrap();
        assert!(k_dx > k_small);
        assert!(k_du > k_small);
        assert!(k_rho > k_small);

        let mut steeper = constants.clone();
        steeper.max_cost_slope *= 2.0;
        assert!(
            distance_bounds(&steeper, 2, 1, &KBound::Value(0.0)).svwe_x.unwrap()
                > distance_bounds(&constants, 2, 1, &KBound::Value(0.0)).svwe_x.unwrap()
        );
    }

    #[test]
    fn rho_on_coupled_simplex() {
        // one player on the 1-simplex slice of mass 2 in the square [0,2]^2,
        // aggregate capacity X_1 <= 3 leaves slack
        let set = BoxSimplexSet::with_total(2.0, vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        let game = GameInstance::new(
            vec![Player { set, utility: None }],
            PiecewiseLinearCost::affine(0.0, 1.0).unwrap().into(),
            Some(CouplingConstraints::new(vec![vec![1.0, 0.0]], vec![3.0]).unwrap()),
        )
        .unwrap();
        let result = compute_rho(&game);
        let rho = result.rho.expect("interior margin exists");
        assert!(rho > 0.0);
        let witness = result.witness.expect("witness profile exists");
        for i in 0..1 {
            let d = distance_to_relative_boundary(witness.row(i), &game.player(i).set);
            assert!(d >= rho - 1e-9, "witness distance {d} below rho {rho}");
        }
        let report = is_feasible(&witness, &game, 1e-9).unwrap();
        assert!(report.feasible);
    }

    #[test]
    fn rho_without_coupling_is_capped() {
        let game = symmetric_two_player();
        let result = compute_rho(&game);
        assert!(result.capped);
        // box [0,2] has inradius 1; margin capped at the aggregate norm
        let eta: f64 = 1.0;
        assert!((result.rho.unwrap() - eta / 3.0).abs() <= 1e-9);
    }

    #[test]
    fn rho_zero_for_singleton_set() {
        let set = BoxSimplexSet::with_total(2.0, vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let game = GameInstance::new(
            vec![Player { set, utility: None }],
            PiecewiseLinearCost::affine(0.0, 1.0).unwrap().into(),
            None,
        )
        .unwrap();
        let result = compute_rho(&game);
        assert_eq!(result.rho, Some(0.0));
        assert!(matches!(
            k_bound(0.0, 0.0, &compute_constants(&game), result.rho),
            KBound::NotApplicable { .. }
        ));
    }

    #[test]
    fn similar_population_formula() {
        assert!((similar_population_bound(4.0, 1.0, 9.0) - (0.5 + 1.0) * 3.0).abs() <= 1e-12);
    }
}
