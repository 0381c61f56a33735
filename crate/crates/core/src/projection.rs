//! Exact Euclidean projections used by the descent loop: onto a
//! box-constrained simplex slice (continuous knapsack) via a sorted
//! breakpoint search on the dual scalar, and onto the nonnegative orthant.

use crate::game::BoxSimplexSet;

/// Operation counts for one projection; the breakpoint scan is linear in
/// the number of candidates and the sort is `O(T log T)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProjectionStats {
    pub candidates: usize,
    pub scan_steps: usize,
}

/// Reusable scratch space; contents are meaningless between calls. Use one
/// workspace per thread of execution.
#[derive(Debug, Default)]
pub struct ProjectionWorkspace {
    events: Vec<(f64, bool, usize)>,
}

impl ProjectionWorkspace {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Componentwise `max(v, 0)`.
pub fn project_nonneg(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

pub fn project_nonneg_in_place(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = x.max(0.0);
    }
}

/// Euclidean projection of `v` onto the set.
pub fn project_box_simplex(v: &[f64], set: &BoxSimplexSet) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    let mut ws = ProjectionWorkspace::new();
    project_box_simplex_into(v, set, &mut out, &mut ws);
    out
}

/// Projection writing into `out`, reusing `ws`; returns operation counts.
///
/// For a set with a total-mass equality the optimality conditions read
/// `x_t = clamp(v_t - lambda, lower_t, upper_t)` with the dual scalar
/// `lambda` chosen so the coordinates sum to the total. The candidate
/// breakpoints of the piecewise-linear mass function are sorted once and
/// scanned; on a flat segment the smallest `lambda` achieving the mass is
/// taken.
pub fn project_box_simplex_into(
    v: &[f64],
    set: &BoxSimplexSet,
    out: &mut [f64],
    ws: &mut ProjectionWorkspace,
) -> ProjectionStats {
    let t = set.dim();
    assert_eq!(v.len(), t, "input dimension mismatch");
    assert_eq!(out.len(), t, "output dimension mismatch");
    let (lower, upper) = (set.lower(), set.upper());

    let total = match set.total() {
        None => {
            for i in 0..t {
                out[i] = v[i].clamp(lower[i], upper[i]);
            }
            return ProjectionStats::default();
        }
        Some(m) => m,
    };

    let sum_lower: f64 = lower.iter().sum();
    if sum_lower >= total {
        // fully pinned by the mass constraint
        out.copy_from_slice(lower);
        return ProjectionStats::default();
    }

    // events: (lambda, is_exit, coord). Entering means the coordinate
    // leaves its upper bound, exiting means it reaches its lower bound.
    ws.events.clear();
    let mut base = 0.0; // pinned coordinates contribute a constant
    for i in 0..t {
        if lower[i] < upper[i] {
            ws.events.push((v[i] - upper[i], false, i));
            ws.events.push((v[i] - lower[i], true, i));
        } else {
            base += lower[i];
        }
    }
    ws.events
        .sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).expect("finite breakpoints"));
    let stats_candidates = ws.events.len();

    let mut at_upper: f64 = upper
        .iter()
        .zip(lower)
        .filter(|(u, l)| l < u)
        .map(|(u, _)| u)
        .sum();
    let mut at_lower = 0.0;
    let mut free_vsum = 0.0;
    let mut free_count = 0usize;

    let mass_at = |at_upper: f64, at_lower: f64, free_vsum: f64, free_count: usize, lam: f64| {
        base + at_upper + at_lower + free_vsum - free_count as f64 * lam
    };

    let mut lambda = ws.events[0].0;
    let mut scan_steps = 0usize;
    if mass_at(at_upper, at_lower, free_vsum, free_count, lambda) > total {
        let mut prev_lambda = lambda;
        let mut prev_mass = mass_at(at_upper, at_lower, free_vsum, free_count, lambda);
        let mut found = false;
        let mut idx = 0;
        while idx < ws.events.len() {
            // apply all events at this lambda
            let here = ws.events[idx].0;
            while idx < ws.events.len() && ws.events[idx].0 == here {
                let (_, is_exit, coord) = ws.events[idx];
                if is_exit {
                    free_vsum -= v[coord];
                    free_count -= 1;
                    at_lower += lower[coord];
                } else {
                    at_upper -= upper[coord];
                    free_vsum += v[coord];
                    free_count += 1;
                }
                idx += 1;
                scan_steps += 1;
            }
            let next_lambda = if idx < ws.events.len() {
                ws.events[idx].0
            } else {
                // all coordinates at lower; the mass constraint guarantees
                // the crossing happened at or before the last event
                here
            };
            let next_mass = mass_at(at_upper, at_lower, free_vsum, free_count, next_lambda);
            if next_mass <= total {
                lambda = if free_count == 0 || prev_mass == next_mass {
                    prev_lambda
                } else {
                    prev_lambda + (prev_mass - total) / free_count as f64
                };
                found = true;
                break;
            }
            prev_lambda = next_lambda;
            prev_mass = next_mass;
        }
        if !found {
            lambda = prev_lambda;
        }
    }

    for i in 0..t {
        out[i] = (v[i] - lambda).clamp(lower[i], upper[i]);
    }
    fix_mass(out, lower, upper, total);
    ProjectionStats {
        candidates: stats_candidates,
        scan_steps,
    }
}

/// Pushes the left-to-right coordinate sum to equal the total exactly.
/// Whole-error corrections first; the rounding tail is then walked out in
/// ulp steps, each step on the last coordinate with slack in the current
/// direction (the finest control over the accumulated sum).
fn fix_mass(x: &mut [f64], lower: &[f64], upper: &[f64], total: f64) {
    let fixable = |x: &[f64], err: f64| -> Option<usize> {
        (0..x.len())
            .rev()
            .find(|&i| if err > 0.0 { x[i] < upper[i] } else { x[i] > lower[i] })
    };
    for _ in 0..4 {
        let err = total - x.iter().sum::<f64>();
        if err == 0.0 {
            return;
        }
        let Some(f) = fixable(x, err) else { return };
        let adjusted = (x[f] + err).clamp(lower[f], upper[f]);
        if adjusted == x[f] {
            break;
        }
        x[f] = adjusted;
    }
    // an ulp step on a coordinate can jump the rounded sum across the
    // target (ties to even); when that happens, blacklist the coordinate
    // and continue on a finer one
    let mut skip = usize::MAX;
    let mut prev_err = 0.0f64;
    let mut prev_f = usize::MAX;
    for _ in 0..256 {
        let err = total - x.iter().sum::<f64>();
        if err == 0.0 {
            return;
        }
        if prev_err != 0.0 && err.signum() != prev_err.signum() {
            skip = prev_f;
        }
        prev_err = err;
        let candidate = (0..x.len())
            .rev()
            .filter(|&i| if err > 0.0 { x[i] < upper[i] } else { x[i] > lower[i] })
            .find(|&i| i != skip)
            .or_else(|| fixable(x, err));
        let Some(f) = candidate else { return };
        prev_f = f;
        let stepped = if err > 0.0 {
            x[f].next_up().min(upper[f])
        } else {
            x[f].next_down().max(lower[f])
        };
        if stepped == x[f] {
            return;
        }
        x[f] = stepped;
    }
}
