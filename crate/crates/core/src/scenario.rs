//! Reproducible electric-vehicle charging scenarios: an inclining
//! block-rate tariff shared by all time slots, per-player charging windows
//! with random power bounds, plug-and-charge preference profiles, and
//! capacity plus ramp coupling constraints on the aggregate load.
//!
//! Every player draws from an independent, documented substream of the
//! scenario seed, so player `i`'s parameters do not depend on the player
//! count: prefixes of a large scenario are smaller scenarios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::PiecewiseLinearCost;
use crate::game::{BoxSimplexSet, CouplingConstraints, GameInstance, Player, QuadPrefUtility};

/// RNG identity recorded in scenario files.
pub const GENERATOR_ID: &str = "chacha8(seed_from_u64(seed), stream = player_index + 1)";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("a scenario needs at least one player")]
    NoPlayers,
    #[error("horizon {0} is shorter than the minimum charging window {1}")]
    HorizonTooShort(usize, usize),
    #[error("parameter range [{0}, {1}] is empty")]
    EmptyRange(f64, f64),
    #[error(transparent)]
    Game(#[from] crate::game::GameError),
}

/// Scenario parameters; defaults reproduce the reference demand-response
/// setup (24 hourly slots, 1400 kW capacity, 50 kW ramp, three-block
/// tariff).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub players: usize,
    pub horizon: usize,
    pub seed: u64,
    pub price: PiecewiseLinearCost,
    pub capacity: f64,
    pub ramp: f64,
    /// Total energy demand range (kWh).
    pub mass_range: (f64, f64),
    /// Preference weight range.
    pub weight_range: (f64, f64),
    /// Shortest admissible charging window (slots).
    pub min_window: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            players: 1,
            horizon: 24,
            seed: 0,
            price: default_price(),
            capacity: 1400.0,
            ramp: 50.0,
            mass_range: (1.0, 30.0),
            weight_range: (1.0, 10.0),
            min_window: 4,
        }
    }
}

/// The three-block inclining tariff: slope 0.1 up to 500, 0.2 up to 1000,
/// 0.5 beyond, continuous at both thresholds.
pub fn default_price() -> PiecewiseLinearCost {
    PiecewiseLinearCost::new(
        vec![(1.0, 0.1), (-49.0, 0.2), (-349.0, 0.5)],
        vec![500.0, 1000.0],
    )
    .expect("reference tariff is valid")
}

/// Capacity rows (`X_t <= capacity` for every slot) followed by the two
/// ramp rows (`|X_T - X_1| <= ramp`).
pub fn coupling_matrix(horizon: usize, capacity: f64, ramp: f64) -> CouplingConstraints {
    let mut rows = Vec::with_capacity(horizon + 2);
    let mut rhs = Vec::with_capacity(horizon + 2);
    for t in 0..horizon {
        let mut row = vec![0.0; horizon];
        row[t] = 1.0;
        rows.push(row);
        rhs.push(capacity);
    }
    let mut up = vec![0.0; horizon];
    up[horizon - 1] = 1.0;
    up[0] = -1.0;
    rows.push(up);
    rhs.push(ramp);
    let mut down = vec![0.0; horizon];
    down[0] = 1.0;
    down[horizon - 1] = -1.0;
    rows.push(down);
    rhs.push(ramp);
    CouplingConstraints::new(rows, rhs).expect("well-formed coupling rows")
}

/// Per-run generation metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationMeta {
    pub seed: u64,
    pub generator: String,
    /// 1-based inclusive charging window per player.
    pub windows: Vec<(usize, usize)>,
    /// Players whose bounds needed redrawing.
    pub redraws: usize,
}

/// 1-based window start for a window of length `tau` centred at a drawn
/// mid-slot. When the centred range is empty (windows nearly as long as
/// the horizon) every start keeping the window inside the horizon is
/// admissible.
fn draw_window_start(rng: &mut ChaCha8Rng, horizon: usize, tau: usize) -> usize {
    let left = tau / 2;
    let right = tau.div_ceil(2);
    let (h_lo, h_hi) = (1 + right, horizon.saturating_sub(right));
    let h = if h_lo <= h_hi {
        rng.gen_range(h_lo..=h_hi)
    } else {
        let lo = 1 + left;
        let hi = horizon - tau + 1 + left;
        rng.gen_range(lo..=hi)
    };
    h - left
}

struct PlayerDraw {
    player: Player,
    window: (usize, usize),
    redraws: usize,
}

fn draw_player(spec: &ScenarioSpec, index: usize) -> PlayerDraw {
    let t = spec.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);

    let mass = rng.gen_range(spec.mass_range.0..spec.mass_range.1);
    let tau = rng.gen_range(spec.min_window..=t);
    let start = draw_window_start(&mut rng, t, tau);
    let window = (start, start + tau - 1);

    let slot_cap = mass / tau as f64;
    let mut lower = vec![0.0; t];
    let mut upper = vec![0.0; t];
    let mut redraws = 0;
    loop {
        for slot in (window.0 - 1)..window.1 {
            lower[slot] = rng.gen_range(0.0..slot_cap);
            upper[slot] = rng.gen_range(slot_cap..mass);
        }
        let reachable: f64 = upper.iter().sum();
        if reachable >= mass || redraws >= 100 {
            if reachable < mass {
                for slot in (window.0 - 1)..window.1 {
                    upper[slot] = mass;
                }
            }
            break;
        }
        redraws += 1;
    }

    let weight = rng.gen_range(spec.weight_range.0..spec.weight_range.1);

    // plug-and-charge preference: mandatory minima everywhere, then fill
    // the earliest slots up to their caps until the demand is met
    let mut pref = lower.clone();
    let mut remaining = mass - pref.iter().sum::<f64>();
    for slot in (window.0 - 1)..window.1 {
        if remaining <= 0.0 {
            break;
        }
        let add = remaining.min(upper[slot] - pref[slot]);
        pref[slot] += add;
        remaining -= add;
    }

    let set = BoxSimplexSet::with_total(mass, lower, upper).expect("drawn bounds bracket the mass");
    let utility = QuadPrefUtility::new(weight, pref).expect("positive weight");
    PlayerDraw {
        player: Player {
            set,
            utility: Some(utility),
        },
        window,
        redraws,
    }
}

/// Generates the full game: players from independent seed substreams, the
/// shared tariff, and the capacity/ramp coupling.
pub fn generate(spec: &ScenarioSpec) -> Result<(GameInstance, GenerationMeta), ScenarioError> {
    if spec.players == 0 {
        return Err(ScenarioError::NoPlayers);
    }
    if spec.horizon < spec.min_window.max(1) {
        return Err(ScenarioError::HorizonTooShort(spec.horizon, spec.min_window));
    }
    for (lo, hi) in [spec.mass_range, spec.weight_range] {
        if !(lo < hi) || lo <= 0.0 {
            return Err(ScenarioError::EmptyRange(lo, hi));
        }
    }

    let mut players = Vec::with_capacity(spec.players);
    let mut windows = Vec::with_capacity(spec.players);
    let mut redraws = 0;
    for i in 0..spec.players {
        let draw = draw_player(spec, i);
        players.push(draw.player);
        windows.push(draw.window);
        redraws += draw.redraws;
    }
    let coupling = coupling_matrix(spec.horizon, spec.capacity, spec.ramp);
    let game = GameInstance::new(players, spec.price.clone().into(), Some(coupling))?;
    Ok((
        game,
        GenerationMeta {
            seed: spec.seed,
            generator: GENERATOR_ID.to_string(),
            windows,
            redraws,
        },
    ))
}
