//! Reduction of a large atomic game to a small auxiliary population game:
//! k-means over player parameter vectors, population sets and utilities as
//! coordinatewise parameter means, the expansion/contraction maps between
//! population and player profiles, and the per-cluster heterogeneity
//! metrics feeding the approximation bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{
    ActionProfile, BoxSimplexSet, CouplingConstraints, GameInstance, QuadPrefUtility,
    ResourceCosts, Utility,
};
use crate::projection::project_box_simplex;
use crate::vecops;

#[derive(Debug, Error)]
pub enum ReduceError {
    #[error("cannot form {clusters} clusters from {points} points")]
    TooManyClusters { clusters: usize, points: usize },
    #[error("cluster count must be at least 1")]
    NoClusters,
    #[error("assignment length {got} does not match player count {expected}")]
    AssignmentLength { got: usize, expected: usize },
    #[error("cluster {0} is empty: partition must cover every population index")]
    EmptyCluster(usize),
    #[error("cluster {0} mixes mass-constrained and plain box sets")]
    MixedSetKinds(usize),
    #[error("cluster {0} mixes players with and without utilities")]
    MixedUtilities(usize),
    #[error("player {0} lacks the parameters needed for clustering")]
    MissingParams(usize),
}

/// Parameter vector `[omega, preference, mass, lower, upper]` of length
/// `3T + 2`, in raw units.
pub fn param_vector(game: &GameInstance, i: usize) -> Result<Vec<f64>, ReduceError> {
    let p = game.player(i);
    let (Some(u), Some(m)) = (p.utility.as_ref(), p.set.total()) else {
        return Err(ReduceError::MissingParams(i));
    };
    let t = game.horizon();
    let mut v = Vec::with_capacity(3 * t + 2);
    v.push(u.weight());
    v.extend_from_slice(u.preference());
    v.push(m);
    v.extend_from_slice(p.set.lower());
    v.extend_from_slice(p.set.upper());
    Ok(v)
}

pub fn param_vectors(game: &GameInstance) -> Result<Vec<Vec<f64>>, ReduceError> {
    (0..game.player_count()).map(|i| param_vector(game, i)).collect()
}

/// Optional per-coordinate standardization of parameter vectors (weights
/// and masses live on different scales); off by default.
pub fn standardize(params: &mut [Vec<f64>]) {
    if params.is_empty() {
        return;
    }
    let dim = params[0].len();
    let n = params.len() as f64;
    for d in 0..dim {
        let mean: f64 = params.iter().map(|p| p[d]).sum::<f64>() / n;
        let var: f64 = params.iter().map(|p| (p[d] - mean) * (p[d] - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 0.0 {
            for p in params.iter_mut() {
                p[d] = (p[d] - mean) / sd;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct KmeansOutcome {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to the assigned centroid after each Lloyd
    /// round; nonincreasing.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

/// Seeded k-means++ initialisation followed by Lloyd iterations;
/// deterministic for a given seed. Empty clusters are repaired by
/// splitting off the farthest point of the highest-variance cluster.
pub fn kmeans_cluster(
    params: &[Vec<f64>],
    clusters: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KmeansOutcome, ReduceError> {
    if clusters == 0 {
        return Err(ReduceError::NoClusters);
    }
    if clusters > params.len() {
        return Err(ReduceError::TooManyClusters {
            clusters,
            points: params.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(clusters);
    centroids.push(params[rng.gen_range(0..params.len())].clone());
    let mut dists: Vec<f64> = params.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < clusters {
        let total: f64 = dists.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = params.len() - 1;
            for (i, &d) in dists.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            // all remaining points coincide with a centroid
            rng.gen_range(0..params.len())
        };
        centroids.push(params[pick].clone());
        for (i, p) in params.iter().enumerate() {
            dists[i] = dists[i].min(sq_dist(p, centroids.last().unwrap()));
        }
    }

    let mut assignment = vec![0usize; params.len()];
    let mut objective_trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let mut changed = false;
        for (i, p) in params.iter().enumerate() {
            let (c, _) = nearest(p, &centroids);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        repair_empty_clusters(params, &mut assignment, clusters);

        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<usize> = (0..params.len()).filter(|&i| assignment[i] == c).collect();
            // identical members keep their common point exactly
            if members.iter().all(|&i| params[i] == params[members[0]]) {
                centroid.copy_from_slice(&params[members[0]]);
                continue;
            }
            centroid.fill(0.0);
            for &i in &members {
                vecops::axpy(1.0, &params[i], centroid);
            }
            for v in centroid.iter_mut() {
                *v /= members.len() as f64;
            }
        }
        let objective: f64 = params
            .iter()
            .zip(&assignment)
            .map(|(p, &c)| sq_dist(p, &centroids[c]))
            .sum();
        objective_trace.push(objective);
        if !changed && iterations > 1 {
            break;
        }
    }
    Ok(KmeansOutcome {
        assignment,
        centroids,
        objective_trace,
        iterations,
    })
}

fn repair_empty_clusters(params: &[Vec<f64>], assignment: &mut [usize], clusters: usize) {
    loop {
        let mut counts = vec![0usize; clusters];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        // centroid-free variance proxy per cluster: spread around the mean
        let dim = params[0].len();
        let mut means = vec![vec![0.0; dim]; clusters];
        for (i, p) in params.iter().enumerate() {
            vecops::axpy(1.0, p, &mut means[assignment[i]]);
        }
        for (c, mean) in means.iter_mut().enumerate() {
            if counts[c] > 0 {
                for v in mean.iter_mut() {
                    *v /= counts[c] as f64;
                }
            }
        }
        let mut worst_cluster = 0;
        let mut worst_var = -1.0;
        for c in 0..clusters {
            if counts[c] < 2 {
                continue;
            }
            let var: f64 = params
                .iter()
                .zip(assignment.iter())
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| sq_dist(p, &means[c]))
                .sum();
            if var > worst_var {
                worst_var = var;
                worst_cluster = c;
            }
        }
        let farthest = params
            .iter()
            .enumerate()
            .filter(|(i, _)| assignment[*i] == worst_cluster)
            .max_by(|(_, a), (_, b)| {
                sq_dist(a, &means[worst_cluster])
                    .partial_cmp(&sq_dist(b, &means[worst_cluster]))
                    .unwrap()
            })
            .map(|(i, _)| i)
            .expect("worst cluster has members");
        assignment[farthest] = empty;
    }
}

/// The reduced population game: a partition of the players, one
/// (set, utility) pair per population from coordinatewise parameter means,
/// the parent game's cost and coupling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuxiliaryGame {
    assignment: Vec<usize>,
    weights: Vec<f64>,
    population_sets: Vec<BoxSimplexSet>,
    population_utilities: Vec<Option<QuadPrefUtility>>,
    costs: ResourceCosts,
    coupling: Option<CouplingConstraints>,
    horizon: usize,
    repairs: Vec<String>,
}

impl AuxiliaryGame {
    pub fn population_count(&self) -> usize {
        self.weights.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn population_sets(&self) -> &[BoxSimplexSet] {
        &self.population_sets
    }

    pub fn population_utilities(&self) -> &[Option<QuadPrefUtility>] {
        &self.population_utilities
    }

    pub fn costs(&self) -> &ResourceCosts {
        &self.costs
    }

    pub fn coupling(&self) -> Option<&CouplingConstraints> {
        self.coupling.as_ref()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Repair notes from construction; empty when the parameter means were
    /// feasible as-is.
    pub fn repairs(&self) -> &[String] {
        &self.repairs
    }

    pub fn members_of(&self, population: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|&(_, &a)| a == population)
            .map(|(i, _)| i)
            .collect()
    }

    /// One population per player, weights 1: the population game with the
    /// same granularity as the atomic game.
    pub fn identity(game: &GameInstance) -> Self {
        Self {
            assignment: (0..game.player_count()).collect(),
            weights: vec![1.0; game.player_count()],
            population_sets: game.players().iter().map(|p| p.set.clone()).collect(),
            population_utilities: game.players().iter().map(|p| p.utility.clone()).collect(),
            costs: game.costs().clone(),
            coupling: game.coupling().cloned(),
            horizon: game.horizon(),
            repairs: Vec::new(),
        }
    }
}

/// Builds the reduced game for a given partition. Population parameters
/// are the coordinatewise means of the member parameters; infeasible
/// centroid data is repaired (clipped or minimally lifted) and every
/// repair is recorded.
pub fn build_aux_game(game: &GameInstance, assignment: &[usize]) -> Result<AuxiliaryGame, ReduceError> {
    if assignment.len() != game.player_count() {
        return Err(ReduceError::AssignmentLength {
            got: assignment.len(),
            expected: game.player_count(),
        });
    }
    let clusters = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let t = game.horizon();
    let mut repairs = Vec::new();
    let mut weights = Vec::with_capacity(clusters);
    let mut sets = Vec::with_capacity(clusters);
    let mut utilities = Vec::with_capacity(clusters);

    for n in 0..clusters {
        let members: Vec<usize> = assignment
            .iter()
            .enumerate()
            .filter(|&(_, &a)| a == n)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            return Err(ReduceError::EmptyCluster(n));
        }
        let count = members.len() as f64;
        weights.push(count);

        // homogeneous clusters take the common parameters verbatim, which
        // keeps zero-heterogeneity reductions exact
        let first = game.player(members[0]);
        if members
            .iter()
            .all(|&i| game.player(i).set == first.set && game.player(i).utility == first.utility)
        {
            sets.push(first.set.clone());
            utilities.push(first.utility.clone());
            continue;
        }

        let with_total = members
            .iter()
            .filter(|&&i| game.player(i).set.total().is_some())
            .count();
        if with_total != 0 && with_total != members.len() {
            return Err(ReduceError::MixedSetKinds(n));
        }
        let mut lower = vec![0.0; t];
        let mut upper = vec![0.0; t];
        let mut mass = 0.0;
        for &i in &members {
            let set = &game.player(i).set;
            vecops::axpy(1.0, set.lower(), &mut lower);
            vecops::axpy(1.0, set.upper(), &mut upper);
            mass += set.total().unwrap_or(0.0);
        }
        for v in lower.iter_mut().chain(upper.iter_mut()) {
            *v /= count;
        }
        mass /= count;

        let set = if with_total == 0 {
            BoxSimplexSet::pure_box(lower, upper).expect("means of valid bounds are valid")
        } else {
            let min: f64 = lower.iter().sum();
            let max: f64 = upper.iter().sum();
            if mass > max {
                // lift the upper bounds uniformly; means of feasible sets
                // only reach this through rounding
                let deficit = (mass - max) / t as f64;
                for v in upper.iter_mut() {
                    *v += deficit;
                }
                repairs.push(format!("population {n}: lifted upper bounds by {deficit:e}"));
            }
            if mass < min {
                let surplus = (min - mass) / t as f64;
                for v in lower.iter_mut() {
                    *v = (*v - surplus).max(0.0);
                }
                repairs.push(format!("population {n}: lowered lower bounds by {surplus:e}"));
            }
            BoxSimplexSet::with_total(mass, lower, upper).expect("repaired bounds bracket the mass")
        };

        let with_utility = members
            .iter()
            .filter(|&&i| game.player(i).utility.is_some())
            .count();
        if with_utility != 0 && with_utility != members.len() {
            return Err(ReduceError::MixedUtilities(n));
        }
        let utility = if with_utility == 0 {
            None
        } else {
            let mut weight = 0.0;
            let mut pref = vec![0.0; t];
            for &i in &members {
                let u = game.player(i).utility.as_ref().expect("checked above");
                weight += u.weight();
                vecops::axpy(1.0, u.preference(), &mut pref);
            }
            weight /= count;
            for v in pref.iter_mut() {
                *v /= count;
            }
            if !set.contains(&pref, 1e-12) {
                pref = project_box_simplex(&pref, &set);
                repairs.push(format!("population {n}: preference clipped into the set"));
            }
            Some(QuadPrefUtility::new(weight, pref).expect("mean weight positive"))
        };

        sets.push(set);
        utilities.push(utility);
    }

    Ok(AuxiliaryGame {
        assignment: assignment.to_vec(),
        weights,
        population_sets: sets,
        population_utilities: utilities,
        costs: game.costs().clone(),
        coupling: game.coupling().cloned(),
        horizon: t,
        repairs,
    })
}

/// How the strategy-set heterogeneity was measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeltaXMode {
    /// Exact Hausdorff distance between plain boxes (infinity-norm point
    /// metric): `max_t max(|Δlower_t|, |Δupper_t|)`.
    ExactBox,
    /// Parametric surrogate for mass-constrained sets:
    /// `max_i ||(m_n, lower_n, upper_n) - (m_i, lower_i, upper_i)||_2`,
    /// an upper-bound proxy.
    ParametricSurrogate,
}

/// Strategy-set heterogeneity of one cluster against its population set.
pub fn delta_x(game: &GameInstance, members: &[usize], population_set: &BoxSimplexSet) -> (f64, DeltaXMode) {
    let all_boxes = population_set.total().is_none()
        && members.iter().all(|&i| game.player(i).set.total().is_none());
    let mut worst = 0.0f64;
    if all_boxes {
        for &i in members {
            let set = &game.player(i).set;
            for t in 0..set.dim() {
                worst = worst
                    .max((set.lower()[t] - population_set.lower()[t]).abs())
                    .max((set.upper()[t] - population_set.upper()[t]).abs());
            }
        }
        (worst, DeltaXMode::ExactBox)
    } else {
        for &i in members {
            let set = &game.player(i).set;
            let mut sq = (set.total().unwrap_or(0.0) - population_set.total().unwrap_or(0.0)).powi(2);
            for t in 0..set.dim() {
                sq += (set.lower()[t] - population_set.lower()[t]).powi(2);
                sq += (set.upper()[t] - population_set.upper()[t]).powi(2);
            }
            worst = worst.max(sq.sqrt());
        }
        (worst, DeltaXMode::ParametricSurrogate)
    }
}

/// Utility-subgradient heterogeneity of one cluster: the largest distance
/// between the population subgradient and a member subgradient over the
/// bounding box of the population set. The squared distance is separable,
/// so each coordinate is maximized exactly at an interval endpoint.
pub fn delta_u(
    game: &GameInstance,
    members: &[usize],
    population_set: &BoxSimplexSet,
    population_utility: Option<&QuadPrefUtility>,
) -> f64 {
    let t = population_set.dim();
    let (wn, yn) = match population_utility {
        Some(u) => (u.weight(), u.preference().to_vec()),
        None => (0.0, vec![0.0; t]),
    };
    let mut worst = 0.0f64;
    for &i in members {
        let (wi, yi) = match game.player(i).utility.as_ref() {
            Some(u) => (u.weight(), u.preference().to_vec()),
            None => (0.0, vec![0.0; t]),
        };
        let mut sq = 0.0;
        for ti in 0..t {
            let diff_at = |x: f64| {
                let d = 2.0 * wn * (x - yn[ti]) - 2.0 * wi * (x - yi[ti]);
                d * d
            };
            sq += diff_at(population_set.lower()[ti]).max(diff_at(population_set.upper()[ti]));
        }
        worst = worst.max(sq.sqrt());
    }
    worst
}

/// Expands a population profile to the player granularity: every member of
/// population `n` receives row `n` verbatim. Rows may leave the individual
/// member sets; callers decide whether to re-project.
pub fn psi_expand(pop_profile: &ActionProfile, aux: &AuxiliaryGame) -> ActionProfile {
    let t = aux.horizon();
    let mut out = ActionProfile::zeros(aux.assignment.len(), t);
    for (i, &n) in aux.assignment.iter().enumerate() {
        out.row_mut(i).copy_from_slice(pop_profile.row(n));
    }
    out
}

/// Contracts a player profile to population granularity by cluster means.
/// Identical member rows are returned verbatim, which makes the
/// contraction an exact inverse of the expansion.
pub fn psi_contract(profile: &ActionProfile, aux: &AuxiliaryGame) -> ActionProfile {
    let t = aux.horizon();
    let mut out = ActionProfile::zeros(aux.population_count(), t);
    for n in 0..aux.population_count() {
        let members = aux.members_of(n);
        let first = profile.row(members[0]);
        if members.iter().all(|&i| profile.row(i) == first) {
            out.row_mut(n).copy_from_slice(first);
            continue;
        }
        let row = out.row_mut(n);
        for &i in &members {
            vecops::axpy(1.0, profile.row(i), row);
        }
        for v in row.iter_mut() {
            *v /= members.len() as f64;
        }
    }
    out
}

/// Quality report for one reduction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReductionReport {
    pub per_cluster_delta_x: Vec<f64>,
    pub per_cluster_delta_u: Vec<f64>,
    pub delta_x: f64,
    pub delta_u: f64,
    pub delta_x_mode: DeltaXMode,
    /// k-means objective (total within-cluster squared spread), when the
    /// reduction came from parameter clustering.
    pub within_cluster_variance: Option<f64>,
    /// Clusters whose member affine hulls are not contained in the
    /// population affine hull (reported, never repaired).
    pub affine_hull_violations: Vec<usize>,
    /// Sampled points where the population subgradient left the convex
    /// hull of the member subgradients.
    pub subgradient_hull_failures: usize,
}

/// Computes the heterogeneity metrics and assumption checks for a built
/// reduction.
pub fn reduction_report(
    game: &GameInstance,
    aux: &AuxiliaryGame,
    within_cluster_variance: Option<f64>,
) -> ReductionReport {
    let mut per_dx = Vec::with_capacity(aux.population_count());
    let mut per_du = Vec::with_capacity(aux.population_count());
    let mut mode = DeltaXMode::ExactBox;
    let mut hull_violations = Vec::new();
    let mut subgradient_failures = 0;
    for n in 0..aux.population_count() {
        let members = aux.members_of(n);
        let (dx, m) = delta_x(game, &members, &aux.population_sets[n]);
        if m == DeltaXMode::ParametricSurrogate {
            mode = m;
        }
        per_dx.push(dx);
        per_du.push(delta_u(
            game,
            &members,
            &aux.population_sets[n],
            aux.population_utilities[n].as_ref(),
        ));
        if !affine_hull_contained(game, &members, &aux.population_sets[n]) {
            hull_violations.push(n);
        }
        subgradient_failures += subgradient_hull_failures(
            game,
            &members,
            &aux.population_sets[n],
            aux.population_utilities[n].as_ref(),
            32,
            0x5eed ^ n as u64,
        );
    }
    ReductionReport {
        delta_x: per_dx.iter().copied().fold(0.0, f64::max),
        delta_u: per_du.iter().copied().fold(0.0, f64::max),
        per_cluster_delta_x: per_dx,
        per_cluster_delta_u: per_du,
        delta_x_mode: mode,
        within_cluster_variance,
        affine_hull_violations: hull_violations,
        subgradient_hull_failures: subgradient_failures,
    }
}

/// Containment of each member's affine hull in the population's: equal
/// total masses (when present) and population-pinned coordinates pinned at
/// the same value in every member.
fn affine_hull_contained(game: &GameInstance, members: &[usize], population_set: &BoxSimplexSet) -> bool {
    const TOL: f64 = 1e-9;
    for &i in members {
        let set = &game.player(i).set;
        match (population_set.total(), set.total()) {
            (Some(mn), Some(mi)) => {
                if (mn - mi).abs() > TOL {
                    return false;
                }
            }
            (Some(_), None) => return false,
            _ => {}
        }
        for t in 0..population_set.dim() {
            let pinned_n = population_set.lower()[t] >= population_set.upper()[t];
            if pinned_n {
                let pinned_i =
                    set.lower()[t] >= set.upper()[t] && (set.lower()[t] - population_set.lower()[t]).abs() <= TOL;
                if !pinned_i {
                    return false;
                }
            }
        }
    }
    true
}

/// Counts sampled points of the population bounding box where the
/// population subgradient is not in the convex hull of the member
/// subgradients (hull distance via projected gradient on the weight
/// simplex).
fn subgradient_hull_failures(
    game: &GameInstance,
    members: &[usize],
    population_set: &BoxSimplexSet,
    population_utility: Option<&QuadPrefUtility>,
    samples: usize,
    seed: u64,
) -> usize {
    let Some(un) = population_utility else { return 0 };
    let t = population_set.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weight_set = BoxSimplexSet::with_total(1.0, vec![0.0; members.len()], vec![1.0; members.len()])
        .expect("weight simplex is valid");
    let mut failures = 0;
    for _ in 0..samples {
        let x: Vec<f64> = (0..t)
            .map(|ti| rng.gen_range(population_set.lower()[ti]..=population_set.upper()[ti]))
            .collect();
        let mut target = vec![0.0; t];
        un.add_neg_subgrad(&x, &mut target);
        let points: Vec<Vec<f64>> = members
            .iter()
            .map(|&i| {
                let mut g = vec![0.0; t];
                if let Some(u) = game.player(i).utility.as_ref() {
                    u.add_neg_subgrad(&x, &mut g);
                }
                g
            })
            .collect();
        if hull_distance(&target, &points, &weight_set) > 1e-6 * (1.0 + vecops::norm2(&target)) {
            failures += 1;
        }
    }
    failures
}

/// Distance from `target` to the convex hull of `points`, by minimizing
/// `||sum_j w_j points_j - target||` over the weight simplex.
fn hull_distance(target: &[f64], points: &[Vec<f64>], weight_set: &BoxSimplexSet) -> f64 {
    let k = points.len();
    let mut w = vec![1.0 / k as f64; k];
    let lipschitz: f64 = 2.0 * points.iter().map(|p| vecops::dot(p, p)).sum::<f64>().max(1e-12);
    let step = 1.0 / lipschitz;
    let mut combo = vec![0.0; target.len()];
    for _ in 0..400 {
        combo.fill(0.0);
        for (j, p) in points.iter().enumerate() {
            vecops::axpy(w[j], p, &mut combo);
        }
        let mut grad = vec![0.0; k];
        for (j, p) in points.iter().enumerate() {
            grad[j] = 2.0 * (vecops::dot(p, &combo) - vecops::dot(p, target));
        }
        let trial: Vec<f64> = w.iter().zip(&grad).map(|(wi, gi)| wi - step * gi).collect();
        w = project_box_simplex(&trial, weight_set);
    }
    combo.fill(0.0);
    for (j, p) in points.iter().enumerate() {
        vecops::axpy(w[j], p, &mut combo);
    }
    vecops::dist2(&combo, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Player;
    use crate::PiecewiseLinearCost;

    fn simplex_player(mass: f64, lower: Vec<f64>, upper: Vec<f64>, w: f64, y: Vec<f64>) -> Player {
        Player {
            set: BoxSimplexSet::with_total(mass, lower, upper).unwrap(),
            utility: Some(QuadPrefUtility::new(w, y).unwrap()),
        }
    }

    fn duplicated_type_game(copies: usize) -> GameInstance {
        let types = [
            (10.0, 2.0, vec![3.0, 3.0, 4.0]),
            (20.0, 5.0, vec![8.0, 6.0, 6.0]),
            (6.0, 9.0, vec![2.0, 2.0, 2.0]),
        ];
        let mut players = Vec::new();
        for _ in 0..copies {
            for (mass, w, y) in &types {
                players.push(simplex_player(
                    *mass,
                    vec![0.0; 3],
                    vec![*mass; 3],
                    *w,
                    y.clone(),
                ));
            }
        }
        GameInstance::new(players, PiecewiseLinearCost::affine(0.0, 1.0).unwrap().into(), None).unwrap()
    }

    #[test]
    fn kmeans_recovers_duplicated_groups() {
        let game = duplicated_type_game(5);
        let params = param_vectors(&game).unwrap();
        let outcome = kmeans_cluster(&params, 3, 0, 300).unwrap();
        assert_eq!(*outcome.objective_trace.last().unwrap(), 0.0);
        // members of one original type always share a cluster
        for i in 0..params.len() {
            for j in 0..params.len() {
                if params[i] == params[j] {
                    assert_eq!(outcome.assignment[i], outcome.assignment[j]);
                }
            }
        }
        // objective never increases across Lloyd rounds
        for w in outcome.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn kmeans_degenerate_cluster_counts() {
        let game = duplicated_type_game(1);
        let params = param_vectors(&game).unwrap();

        let all = kmeans_cluster(&params, 3, 1, 300).unwrap();
        assert_eq!(*all.objective_trace.last().unwrap(), 0.0);

        let one = kmeans_cluster(&params, 1, 1, 300).unwrap();
        let dim = params[0].len();
        for d in 0..dim {
            let mean: f64 = params.iter().map(|p| p[d]).sum::<f64>() / params.len() as f64;
            assert!((one.centroids[0][d] - mean).abs() <= 1e-12);
        }

        assert!(matches!(
            kmeans_cluster(&params, 4, 1, 300),
            Err(ReduceError::TooManyClusters { .. })
        ));
    }

    #[test]
    fn standardize_centers_and_scales() {
        let mut params = vec![vec![1.0, 10.0], vec![3.0, 10.0], vec![5.0, 10.0]];
        standardize(&mut params);
        let mean: f64 = params.iter().map(|p| p[0]).sum::<f64>() / 3.0;
        assert!(mean.abs() <= 1e-12);
        let var: f64 = params.iter().map(|p| p[0] * p[0]).sum::<f64>() / 3.0;
        assert!((var - 1.0).abs() <= 1e-12);
        // constant coordinates are left alone rather than divided by zero
        assert!(params.iter().all(|p| p[1] == 10.0));
    }

    #[test]
    fn kmeans_is_deterministic() {
        let game = duplicated_type_game(4);
        let mut params = param_vectors(&game).unwrap();
        // jitter so clusters are not trivially separated
        for (i, p) in params.iter_mut().enumerate() {
            for (d, v) in p.iter_mut().enumerate() {
                *v += ((i * 31 + d * 7) % 5) as f64 * 0.01;
            }
        }
        let a = kmeans_cluster(&params, 3, 9, 300).unwrap();
        let b = kmeans_cluster(&params, 3, 9, 300).unwrap();
        assert_eq!(a.assignment, b.assignment);
    }

    #[test]
    fn aux_game_means() {
        // total demands 10 and 20 average to 15
        let players = vec![
            simplex_player(10.0, vec![0.0, 0.0], vec![10.0, 10.0], 2.0, vec![5.0, 5.0]),
            simplex_player(20.0, vec![0.0, 0.0], vec![20.0, 20.0], 4.0, vec![10.0, 10.0]),
        ];
        let game = GameInstance::new(players, PiecewiseLinearCost::affine(0.0, 1.0).unwrap().into(), None).unwrap();
        let aux = build_aux_game(&game, &[0, 0]).unwrap();
        assert_eq!(aux.population_count(), 1);
        assert_eq!(aux.weights(), &[2.0]);
        assert_eq!(aux.population_sets()[0].total(), Some(15.0));
        assert_eq!(aux.population_sets()[0].upper(), &[15.0, 15.0]);
        assert!(aux.repairs().is_empty());

        // weights 2 and 4 average to 3, preferences 0 and 2 to 1
        let boxed = |w: f64, y: f64| Player {
            set: BoxSimplexSet::pure_box(vec![0.0], vec![4.0]).unwrap(),
            utility: Some(QuadPrefUtility::new(w, vec![y]).unwrap()),
        };
        let game = GameInstance::new(
            vec![boxed(2.0, 0.0), boxed(4.0, 2.0)],
            PiecewiseLinearCost::affine(0.0, 1.0).unwrap().into(),
            None,
        )
        .unwrap();
        let aux = build_aux_game(&game, &[0, 0]).unwrap();
        let u = aux.population_utilities()[0].as_ref().unwrap();
        assert_eq!(u.weight(), 3.0);
        assert_eq!(u.preference(), &[1.0]);
    }

    #[test]
    fn aux_game_homogeneous_cluster_is_exact() {
        let game = duplicated_type_game(3);
        let params = param_vectors(&game).unwrap();
        let outcome = kmeans_cluster(&params, 3, 0, 300).unwrap();
        let aux = build_aux_game(&game, &outcome.assignment).unwrap();
        for n in 0..3 {
            let member = aux.members_of(n)[0];
            assert_eq!(&game.player(member).set, &aux.population_sets()[n]);
            assert_eq!(
                game.player(member).utility.as_ref(),
                aux.population_utilities()[n].as_ref()
            );
        }
        let report = reduction_report(&game, &aux, Some(0.0));
        assert_eq!(report.delta_x, 0.0);
        assert_eq!(report.delta_u, 0.0);
        assert!(report.affine_hull_violations.is_empty());
        assert_eq!(report.subgradient_hull_failures, 0);
    }

    #[test]
    fn partition_must_cover() {
        let game = duplicated_type_game(1);
        assert!(matches!(
            build_aux_game(&game, &[0, 0, 2]),
            Err(ReduceError::EmptyCluster(1))
        ));
        assert!(matches!(
            build_aux_game(&game, &[0, 0]),
            Err(ReduceError::AssignmentLength { .. })
        ));
    }

    /// Brute-force Hausdorff distance between boxes under the max-norm
    /// point metric, over fine grids of both boxes.
    fn grid_hausdorff(a: &BoxSimplexSet, b: &BoxSimplexSet, step: f64) -> f64 {
        let grid = |s: &BoxSimplexSet| -> Vec<Vec<f64>> {
            let mut pts = vec![vec![]];
            for t in 0..s.dim() {
                let mut next = Vec::new();
                let mut v = s.lower()[t];
                while v <= s.upper()[t] + 1e-12 {
                    for p in &pts {
                        let mut q = p.clone();
                        q.push(v.min(s.upper()[t]));
                        next.push(q);
                    }
                    v += step;
                }
                pts = next;
            }
            pts
        };
        let (ga, gb) = (grid(a), grid(b));
        let max_min = |from: &[Vec<f64>], to: &[Vec<f64>]| -> f64 {
            from.iter()
                .map(|p| {
                    to.iter()
                        .map(|q| {
                            p.iter()
                                .zip(q)
                                .map(|(x, y)| (x - y).abs())
                                .fold(0.0, f64::max)
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        };
        max_min(&ga, &gb).max(max_min(&gb, &ga))
    }

    #[test]
    fn delta_x_modes() {
        let box1 = BoxSimplexSet::pure_box(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let box2 = BoxSimplexSet::pure_box(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        let game = GameInstance::new(
            vec![
                Player { set: box1.clone(), utility: None },
                Player { set: box2.clone(), utility: None },
            ],
            PiecewiseLinearCost::affine(0.0, 1.0).unwrap().into(),
            None,
        )
        .unwrap();

        let (zero, mode) = delta_x(&game, &[0], &box1);
        assert_eq!(zero, 0.0);
        assert_eq!(mode, DeltaXMode::ExactBox);

        let (dist, _) = delta_x(&game, &[0], &box2);
        assert_eq!(dist, 1.0);
        assert!((dist - grid_hausdorff(&box1, &box2, 0.05)).abs() <= 0.06);

        // parametric surrogate: members differing only in mass, 10 vs 12
        // with the centroid at 11
        let p1 = simplex_player(10.0, vec![0.0, 0.0], vec![12.0, 12.0], 1.0, vec![5.0, 5.0]);
        let p2 = simplex_player(12.0, vec![0.0, 0.0], vec![12.0, 12.0], 1.0, vec![6.0, 6.0]);
        let game = GameInstance::new(
            vec![p1, p2],
            PiecewiseLinearCost::affine(0.0, 1.0).unwrap().into(),
            None,
        )
        .unwrap();
        let centroid = BoxSimplexSet::with_total(11.0, vec![0.0, 0.0], vec![12.0, 12.0]).unwrap();
        let (surrogate, mode) = delta_x(&game, &[0, 1], &centroid);
        assert_eq!(mode, DeltaXMode::ParametricSurrogate);
        assert_eq!(surrogate, 1.0);
    }

    #[test]
    fn delta_u_endpoint_enumeration() {
        let mk = |w: f64, y: f64| QuadPrefUtility::new(w, vec![y]).unwrap();
        let bx = BoxSimplexSet::pure_box(vec![0.0], vec![2.0]).unwrap();
        let game = GameInstance::new(
            vec![
                Player { set: bx.clone(), utility: Some(mk(1.0, 1.0)) },
                Player { set: bx.clone(), utility: Some(mk(2.0, 0.0)) },
            ],
            PiecewiseLinearCost::affine(0.0, 1.0).unwrap().into(),
            None,
        )
        .unwrap();

        // identical parameters give zero
        assert_eq!(delta_u(&game, &[0], &bx, Some(&mk(1.0, 1.0))), 0.0);

        // |2x - 2(x-1)| = 2 regardless of x
        assert_eq!(delta_u(&game, &[0], &bx, Some(&mk(1.0, 0.0))), 2.0);

        // |2x - 4x| maximized at x = 2
        assert_eq!(delta_u(&game, &[1], &bx, Some(&mk(1.0, 0.0))), 4.0);
    }

    #[test]
    fn delta_u_matches_dense_grid() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let t = rng.gen_range(1..4);
            let lower: Vec<f64> = (0..t).map(|_| rng.gen_range(0.0..1.0)).collect();
            let upper: Vec<f64> = lower.iter().map(|&l| l + rng.gen_range(0.1..2.0)).collect();
            let bx = BoxSimplexSet::pure_box(lower.clone(), upper.clone()).unwrap();
            let wn: f64 = rng.gen_range(0.5..3.0);
            let wi: f64 = rng.gen_range(0.5..3.0);
            let yn: Vec<f64> = (0..t).map(|ti| rng.gen_range(lower[ti]..upper[ti])).collect();
            let yi: Vec<f64> = (0..t).map(|ti| rng.gen_range(lower[ti]..upper[ti])).collect();
            let game = GameInstance::new(
                vec![Player {
                    set: bx.clone(),
                    utility: Some(QuadPrefUtility::new(wi, yi.clone()).unwrap()),
                }],
                PiecewiseLinearCost::affine(0.0, 1.0).unwrap().into(),
                None,
            )
            .unwrap();
            let un = QuadPrefUtility::new(wn, yn.clone()).unwrap();
            let exact = delta_u(&game, &[0], &bx, Some(&un));

            // dense grid maximization of the same objective
            let steps = 40usize;
            let mut best = 0.0f64;
            let mut idx = vec![0usize; t];
            loop {
                let mut sq = 0.0;
                for ti in 0..t {
                    let x = lower[ti] + (upper[ti] - lower[ti]) * idx[ti] as f64 / steps as f64;
                    let d = 2.0 * wn * (x - yn[ti]) - 2.0 * wi * (x - yi[ti]);
                    sq += d * d;
                }
                best = best.max(sq.sqrt());
                let mut k = 0;
                loop {
                    if k == t {
                        break;
                    }
                    idx[k] += 1;
                    if idx[k] <= steps {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == t {
                    break;
                }
            }
            assert!(exact >= best - 1e-9, "endpoint max below grid max");
            assert!(exact - best <= 1e-2 * (1.0 + best), "endpoint max {exact} too far above grid {best}");
        }
    }

    #[test]
    fn psi_maps() {
        let game = duplicated_type_game(2);
        let params = param_vectors(&game).unwrap();
        let outcome = kmeans_cluster(&params, 3, 0, 300).unwrap();
        let aux = build_aux_game(&game, &outcome.assignment).unwrap();

        let pop = ActionProfile::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![0.5, 0.5, 0.5],
            vec![2.0, 0.0, 1.0],
        ])
        .unwrap();
        let expanded = psi_expand(&pop, &aux);
        assert_eq!(expanded.players(), 6);
        for (i, &n) in aux.assignment().iter().enumerate() {
            assert_eq!(expanded.row(i), pop.row(n));
        }

        // contraction inverts expansion exactly
        let back = psi_contract(&expanded, &aux);
        assert_eq!(back, pop);

        // aggregate commutation on both maps
        let agg = expanded.aggregate();
        for t in 0..3 {
            let weighted: f64 = (0..aux.population_count())
                .map(|n| aux.weights()[n] * pop.row(n)[t])
                .sum();
            assert!((agg[t] - weighted).abs() <= 1e-12);
        }

        let mut arbitrary = ActionProfile::zeros(6, 3);
        for i in 0..6 {
            for t in 0..3 {
                arbitrary.row_mut(i)[t] = (i * 3 + t) as f64 * 0.37;
            }
        }
        let contracted = psi_contract(&arbitrary, &aux);
        let agg = arbitrary.aggregate();
        for t in 0..3 {
            let weighted: f64 = (0..aux.population_count())
                .map(|n| aux.weights()[n] * contracted.row(n)[t])
                .sum();
            assert!((agg[t] - weighted).abs() <= 1e-12);
        }
    }

    #[test]
    fn psi_contract_averages() {
        let game = GameInstance::new(
            vec![
                simplex_player(2.0, vec![0.0, 0.0], vec![2.0, 2.0], 1.0, vec![1.0, 1.0]),
                simplex_player(2.0, vec![0.0, 0.0], vec![2.0, 2.0], 1.0, vec![1.0, 1.0]),
            ],
            PiecewiseLinearCost::affine(0.0, 1.0).unwrap().into(),
            None,
        )
        .unwrap();
        let aux = build_aux_game(&game, &[0, 0]).unwrap();
        let profile = ActionProfile::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        let contracted = psi_contract(&profile, &aux);
        assert_eq!(contracted.row(0), &[1.0, 1.0]);
    }

    #[test]
    fn affine_hull_check_flags_unequal_masses() {
        let players = vec![
            simplex_player(10.0, vec![0.0, 0.0], vec![10.0, 10.0], 2.0, vec![5.0, 5.0]),
            simplex_player(20.0, vec![0.0, 0.0], vec![20.0, 20.0], 4.0, vec![10.0, 10.0]),
        ];
        let game = GameInstance::new(players, PiecewiseLinearCost::affine(0.0, 1.0).unwrap().into(), None).unwrap();
        let aux = build_aux_game(&game, &[0, 0]).unwrap();
        let report = reduction_report(&game, &aux, None);
        assert_eq!(report.affine_hull_violations, vec![0]);
    }

    #[test]
    fn subgradient_hull_check_reports_mean_utility_failures() {
        // omega 1 and 3 with preferences 0 and 1: at x = 1.5 both member
        // subgradients equal 3 while the mean-parameter subgradient is 4
        let bx = || BoxSimplexSet::pure_box(vec![0.0], vec![2.0]).unwrap();
        let game = GameInstance::new(
            vec![
                Player { set: bx(), utility: Some(QuadPrefUtility::new(1.0, vec![0.0]).unwrap()) },
                Player { set: bx(), utility: Some(QuadPrefUtility::new(3.0, vec![1.0]).unwrap()) },
            ],
            PiecewiseLinearCost::affine(0.0, 1.0).unwrap().into(),
            None,
        )
        .unwrap();
        let aux = build_aux_game(&game, &[0, 0]).unwrap();
        let failures = subgradient_hull_failures(
            &game,
            &[0, 1],
            &aux.population_sets()[0],
            aux.population_utilities()[0].as_ref(),
            64,
            7,
        );
        assert!(failures > 0, "expected sampled hull violations");
    }
}
