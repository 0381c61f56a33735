//! Projected subgradient descent with Lagrangian multipliers for the
//! coupling constraints, at two granularities: per atomic player (with the
//! own-impact price term) and per population (without it, aggregate formed
//! with population weights).
//!
//! One iteration freezes the aggregate and the multipliers, updates every
//! decision unit's row by a projected step, then updates the multipliers
//! from the old and new aggregates. Rows are independent within an
//! iteration, so the row loop parallelizes without locks; aggregates and
//! the residual are reduced serially in index order to keep runs
//! bit-reproducible at any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::SelectionRule;
use crate::game::{ActionProfile, BoxSimplexSet, CouplingConstraints, GameInstance, QuadPrefUtility, ResourceCosts};
use crate::projection::{project_box_simplex_into, ProjectionWorkspace};
use crate::reduce::AuxiliaryGame;

/// Step-size schedule; the diminishing rule is `1/k` with `k` counted
/// from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepRule {
    Diminishing,
    Constant(f64),
}

impl StepRule {
    fn step(self, k: usize) -> f64 {
        match self {
            StepRule::Diminishing => 1.0 / k as f64,
            StepRule::Constant(tau) => tau,
        }
    }
}

/// Starting profile rule. `Preferences` projects each unit's preference
/// profile (zero when the unit has no utility) onto its set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitProfile {
    Preferences,
    Zero,
    RandomFeasible { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitMultipliers {
    Zero,
    Uniform(f64),
}

/// Multiplier update at the end of each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MultiplierUpdate {
    /// `lambda <- (lambda - tau (b - 2 A X_next + A X_prev))^+`, the
    /// extrapolated form used by the descent scheme. At a stationary state
    /// it coincides with `Plain`.
    Extrapolated,
    /// Textbook dual ascent `lambda <- (lambda + tau (A X_next - b))^+`,
    /// kept for cross-checking.
    Plain,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub step_rule: StepRule,
    /// Stop when the joint movement of `(lambda, x)` between iterates
    /// drops to this Euclidean norm.
    pub stop_tol: f64,
    pub max_iters: usize,
    pub selection_rule: SelectionRule,
    pub init_profile: InitProfile,
    pub init_multipliers: InitMultipliers,
    pub multiplier_update: MultiplierUpdate,
    pub parallel_units: bool,
    /// Record a trace row every this many iterations (0 = off).
    pub trace_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step_rule: StepRule::Diminishing,
            stop_tol: 1e-3,
            max_iters: 200_000,
            selection_rule: SelectionRule::default(),
            init_profile: InitProfile::Preferences,
            init_multipliers: InitMultipliers::Zero,
            multiplier_update: MultiplierUpdate::Extrapolated,
            parallel_units: false,
            trace_every: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub residual: f64,
    pub max_primal_violation: f64,
    pub duality_gap_proxy: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// One row per decision unit (player or population).
    pub profile: ActionProfile,
    pub multipliers: Vec<f64>,
    /// Final weighted aggregate demand.
    pub aggregate: Vec<f64>,
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub trace: Option<Vec<TraceRow>>,
}

/// Iterate state: profile rows, multipliers and the 1-based index of the
/// next step.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub profile: ActionProfile,
    pub multipliers: Vec<f64>,
    pub iteration: usize,
}

/// Euclidean distance between two states over the concatenated
/// `(lambda, x)` vector.
pub fn residual(prev: &SolverState, next: &SolverState) -> f64 {
    let mut sq = 0.0;
    for (a, b) in prev.multipliers.iter().zip(&next.multipliers) {
        sq += (a - b) * (a - b);
    }
    for (a, b) in prev.profile.as_flat().iter().zip(next.profile.as_flat()) {
        sq += (a - b) * (a - b);
    }
    sq.sqrt()
}

/// The data the descent loop actually needs, shared by the atomic and
/// population problems.
struct DescentProblem<'a> {
    sets: Vec<&'a BoxSimplexSet>,
    utilities: Vec<Option<&'a QuadPrefUtility>>,
    weights: Vec<f64>,
    own_impact: bool,
    costs: &'a ResourceCosts,
    coupling: Option<&'a CouplingConstraints>,
    horizon: usize,
}

impl<'a> DescentProblem<'a> {
    fn atomic(game: &'a GameInstance) -> Self {
        Self {
            sets: game.players().iter().map(|p| &p.set).collect(),
            utilities: game.players().iter().map(|p| p.utility.as_ref()).collect(),
            weights: vec![1.0; game.player_count()],
            own_impact: true,
            costs: game.costs(),
            coupling: game.coupling(),
            horizon: game.horizon(),
        }
    }

    fn population(aux: &'a AuxiliaryGame) -> Self {
        Self {
            sets: aux.population_sets().iter().collect(),
            utilities: aux.population_utilities().iter().map(Option::as_ref).collect(),
            weights: aux.weights().to_vec(),
            own_impact: false,
            costs: aux.costs(),
            coupling: aux.coupling(),
            horizon: aux.horizon(),
        }
    }

    fn units(&self) -> usize {
        self.sets.len()
    }

    fn aggregate_into(&self, profile: &ActionProfile, out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.units() {
            crate::vecops::axpy(self.weights[i], profile.row(i), out);
        }
    }

    fn initial_profile(&self, rule: InitProfile) -> ActionProfile {
        use rand::{Rng, SeedableRng};
        let t = self.horizon;
        let mut profile = ActionProfile::zeros(self.units(), t);
        let mut ws = ProjectionWorkspace::new();
        let mut rng_holder: Option<rand_chacha::ChaCha8Rng> = match rule {
            InitProfile::RandomFeasible { seed } => {
                Some(rand_chacha::ChaCha8Rng::seed_from_u64(seed))
            }
            _ => None,
        };
        let mut v = vec![0.0; t];
        for i in 0..self.units() {
            let set = self.sets[i];
            match rule {
                InitProfile::Preferences => {
                    v.fill(0.0);
                    if let Some(u) = self.utilities[i] {
                        v.copy_from_slice(u.preference());
                    }
                }
                InitProfile::Zero => v.fill(0.0),
                InitProfile::RandomFeasible { .. } => {
                    let rng = rng_holder.as_mut().expect("rng initialised");
                    for (vt, (&l, &u)) in
                        v.iter_mut().zip(set.lower().iter().zip(set.upper()))
                    {
                        *vt = rng.gen_range(l..=u);
                    }
                }
            }
            project_box_simplex_into(&v, set, profile.row_mut(i), &mut ws);
        }
        profile
    }

    fn initial_multipliers(&self, rule: InitMultipliers) -> Vec<f64> {
        let rows = self.coupling.map_or(0, CouplingConstraints::rows);
        match rule {
            InitMultipliers::Zero => vec![0.0; rows],
            InitMultipliers::Uniform(v) => vec![v.max(0.0); rows],
        }
    }
}

/// Preallocated per-iteration buffers.
struct Scratch {
    aggregate: Vec<f64>,
    price: Vec<f64>,
    selection: Vec<f64>,
    pull: Vec<f64>,
    next_profile: ActionProfile,
    next_multipliers: Vec<f64>,
    ax_prev: Vec<f64>,
    ax_next: Vec<f64>,
}

impl Scratch {
    fn new(problem: &DescentProblem<'_>) -> Self {
        let t = problem.horizon;
        let rows = problem.coupling.map_or(0, CouplingConstraints::rows);
        Self {
            aggregate: vec![0.0; t],
            price: vec![0.0; t],
            selection: vec![0.0; t],
            pull: vec![0.0; t],
            next_profile: ActionProfile::zeros(problem.units(), t),
            next_multipliers: vec![0.0; rows],
            ax_prev: vec![0.0; rows],
            ax_next: vec![0.0; rows],
        }
    }
}

fn update_rows(
    problem: &DescentProblem<'_>,
    config: &SolverConfig,
    profile: &ActionProfile,
    price: &[f64],
    selection: &[f64],
    pull: &[f64],
    tau: f64,
    next: &mut ActionProfile,
) {
    let t = problem.horizon;
    let own = problem.own_impact;
    let per_row = |i: usize, out: &mut [f64], v: &mut Vec<f64>, ws: &mut ProjectionWorkspace| {
        let x = profile.row(i);
        if tau == 0.0 {
            out.copy_from_slice(x);
            return;
        }
        v.resize(t, 0.0);
        match problem.utilities[i] {
            Some(u) => {
                let w2 = 2.0 * u.weight();
                let y = u.preference();
                for ti in 0..t {
                    let own_term = if own { x[ti] * selection[ti] } else { 0.0 };
                    v[ti] = x[ti] - tau * (price[ti] + own_term + w2 * (x[ti] - y[ti]) + pull[ti]);
                }
            }
            None => {
                for ti in 0..t {
                    let own_term = if own { x[ti] * selection[ti] } else { 0.0 };
                    v[ti] = x[ti] - tau * (price[ti] + own_term + pull[ti]);
                }
            }
        }
        project_box_simplex_into(v, problem.sets[i], out, ws);
    };

    if config.parallel_units {
        next.as_flat_mut()
            .par_chunks_mut(t)
            .enumerate()
            .for_each_init(
                || (Vec::new(), ProjectionWorkspace::new()),
                |(v, ws), (i, out)| per_row(i, out, v, ws),
            );
    } else {
        let mut v = Vec::new();
        let mut ws = ProjectionWorkspace::new();
        for i in 0..problem.units() {
            let (start, end) = (i * t, (i + 1) * t);
            let out = &mut next.as_flat_mut()[start..end];
            per_row(i, out, &mut v, &mut ws);
        }
    }
}

fn run_descent(problem: &DescentProblem<'_>, config: &SolverConfig) -> SolveResult {
    assert!(config.stop_tol > 0.0, "stop_tol must be positive");
    assert!(config.max_iters >= 1, "max_iters must be at least 1");
    let t = problem.horizon;
    let mut profile = problem.initial_profile(config.init_profile);
    let mut multipliers = problem.initial_multipliers(config.init_multipliers);
    let mut scratch = Scratch::new(problem);
    let mut trace = (config.trace_every > 0).then(Vec::new);
    let mut final_residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=config.max_iters {
        let tau = config.step_rule.step(k);
        problem.aggregate_into(&profile, &mut scratch.aggregate);
        for ti in 0..t {
            let c = problem.costs.at(ti);
            let demand = scratch.aggregate[ti].max(0.0);
            scratch.price[ti] = c.eval(demand).expect("aggregate demand nonnegative");
            scratch.selection[ti] = config.selection_rule.pick(c.subdiff(scratch.aggregate[ti]));
        }
        match problem.coupling {
            Some(coupling) => coupling.transpose_apply_into(&multipliers, &mut scratch.pull),
            None => scratch.pull.fill(0.0),
        }

        update_rows(
            problem,
            config,
            &profile,
            &scratch.price,
            &scratch.selection,
            &scratch.pull,
            tau,
            &mut scratch.next_profile,
        );

        let mut primal_violation = 0.0f64;
        let mut gap_proxy = 0.0;
        if let Some(coupling) = problem.coupling {
            coupling.apply_into(&scratch.aggregate, &mut scratch.ax_prev);
            let mut next_aggregate = std::mem::take(&mut scratch.aggregate);
            problem.aggregate_into(&scratch.next_profile, &mut next_aggregate);
            coupling.apply_into(&next_aggregate, &mut scratch.ax_next);
            scratch.aggregate = next_aggregate;
            let b = coupling.rhs();
            for r in 0..coupling.rows() {
                let raw = match config.multiplier_update {
                    MultiplierUpdate::Extrapolated => {
                        multipliers[r]
                            - tau * (b[r] - 2.0 * scratch.ax_next[r] + scratch.ax_prev[r])
                    }
                    MultiplierUpdate::Plain => {
                        multipliers[r] + tau * (scratch.ax_next[r] - b[r])
                    }
                };
                scratch.next_multipliers[r] = raw.max(0.0);
                primal_violation = primal_violation.max(scratch.ax_next[r] - b[r]);
                gap_proxy += scratch.next_multipliers[r] * (b[r] - scratch.ax_next[r]);
            }
        }

        let mut sq = 0.0;
        for (a, b) in multipliers.iter().zip(&scratch.next_multipliers) {
            sq += (a - b) * (a - b);
        }
        // population rows weigh in with their size, so the stopping
        // tolerance measures movement at player granularity on every
        // reduction of the same game
        for i in 0..problem.units() {
            let w = problem.weights[i];
            for (a, b) in profile.row(i).iter().zip(scratch.next_profile.row(i)) {
                sq += w * (a - b) * (a - b);
            }
        }
        final_residual = sq.sqrt();
        iterations = k;

        std::mem::swap(&mut profile, &mut scratch.next_profile);
        multipliers.copy_from_slice(&scratch.next_multipliers);

        if let Some(rows) = trace.as_mut() {
            if k % config.trace_every == 0 {
                rows.push(TraceRow {
                    iter: k,
                    residual: final_residual,
                    max_primal_violation: primal_violation,
                    duality_gap_proxy: gap_proxy,
                });
            }
        }

        if final_residual <= config.stop_tol {
            converged = true;
            break;
        }
    }

    problem.aggregate_into(&profile, &mut scratch.aggregate);
    SolveResult {
        profile,
        multipliers,
        aggregate: scratch.aggregate,
        iterations,
        final_residual,
        converged,
        trace,
    }
}

/// One descent step on the atomic problem, exposed for inspection; the
/// state's iteration index drives the step size.
pub fn vne_iterate(state: &SolverState, game: &GameInstance, config: &SolverConfig) -> SolverState {
    let problem = DescentProblem::atomic(game);
    let mut scratch = Scratch::new(&problem);
    let tau = config.step_rule.step(state.iteration);
    let t = problem.horizon;
    problem.aggregate_into(&state.profile, &mut scratch.aggregate);
    for ti in 0..t {
        let c = problem.costs.at(ti);
        scratch.price[ti] = c
            .eval(scratch.aggregate[ti].max(0.0))
            .expect("aggregate demand nonnegative");
        scratch.selection[ti] = config
            .selection_rule
            .pick(c.subdiff(scratch.aggregate[ti]));
    }
    if let Some(coupling) = problem.coupling {
        coupling.transpose_apply_into(&state.multipliers, &mut scratch.pull);
    }
    update_rows(
        &problem,
        config,
        &state.profile,
        &scratch.price,
        &scratch.selection,
        &scratch.pull,
        tau,
        &mut scratch.next_profile,
    );
    let mut next_multipliers = state.multipliers.clone();
    if let Some(coupling) = problem.coupling {
        coupling.apply_into(&scratch.aggregate, &mut scratch.ax_prev);
        problem.aggregate_into(&scratch.next_profile, &mut scratch.aggregate);
        coupling.apply_into(&scratch.aggregate, &mut scratch.ax_next);
        let b = coupling.rhs();
        for r in 0..coupling.rows() {
            let raw = match config.multiplier_update {
                MultiplierUpdate::Extrapolated => {
                    state.multipliers[r]
                        - tau * (b[r] - 2.0 * scratch.ax_next[r] + scratch.ax_prev[r])
                }
                MultiplierUpdate::Plain => {
                    state.multipliers[r] + tau * (scratch.ax_next[r] - b[r])
                }
            };
            next_multipliers[r] = raw.max(0.0);
        }
    }
    SolverState {
        profile: scratch.next_profile,
        multipliers: next_multipliers,
        iteration: state.iteration + 1,
    }
}

/// Solves the atomic variational problem (full subgradient with the
/// own-impact term, per-player granularity). Non-convergence within the
/// iteration budget is reported through `converged`, never panicked.
pub fn solve_vne(game: &GameInstance, config: &SolverConfig) -> SolveResult {
    run_descent(&DescentProblem::atomic(game), config)
}

/// Solves the population (Wardrop) variational problem on an auxiliary
/// game: no own-impact term, aggregate weighted by population sizes.
pub fn solve_svwe(aux: &AuxiliaryGame, config: &SolverConfig) -> SolveResult {
    run_descent(&DescentProblem::population(aux), config)
}
