//! JSON document schemas for scenario files and solve results. Field order
//! is fixed by the struct declarations, so serialization is stable and
//! repeated runs produce byte-identical files.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::PiecewiseLinearCost;
use crate::game::{BoxSimplexSet, GameInstance, Player, QuadPrefUtility};
use crate::scenario::{coupling_matrix, GenerationMeta, ScenarioSpec};
use crate::solver::SolveResult;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Cost(#[from] crate::cost::CostError),
    #[error(transparent)]
    Game(#[from] crate::game::GameError),
    #[error("player {player}: window [{start}, {end}] outside horizon {horizon}")]
    BadWindow {
        player: usize,
        start: usize,
        end: usize,
        horizon: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaDoc {
    pub seed: u64,
    pub i: usize,
    pub t: usize,
    pub generator: String,
    pub redraws: usize,
}

/// One tariff piece: its left threshold, slope, and value at the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub threshold: f64,
    pub slope: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingDoc {
    pub capacity: f64,
    pub ramp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerDoc {
    /// Total demand; `null` drops the mass equality (plain box set).
    pub m: Option<f64>,
    pub omega: f64,
    /// 1-based inclusive charging window.
    pub window: (usize, usize),
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub pref: Vec<f64>,
}

/// The on-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDoc {
    pub meta: MetaDoc,
    pub price: Vec<PricePoint>,
    /// `null` means no coupling constraints.
    pub coupling: Option<CouplingDoc>,
    pub players: Vec<PlayerDoc>,
}

impl ScenarioDoc {
    pub fn from_game(spec: &ScenarioSpec, game: &GameInstance, meta: &GenerationMeta) -> Self {
        let price = spec
            .price
            .to_points()
            .into_iter()
            .map(|(threshold, slope, value)| PricePoint {
                threshold,
                slope,
                value,
            })
            .collect();
        let players = (0..game.player_count())
            .map(|i| {
                let p = game.player(i);
                let u = p.utility.as_ref().expect("scenario players carry utilities");
                PlayerDoc {
                    m: p.set.total(),
                    omega: u.weight(),
                    window: meta.windows[i],
                    lower: p.set.lower().to_vec(),
                    upper: p.set.upper().to_vec(),
                    pref: u.preference().to_vec(),
                }
            })
            .collect();
        ScenarioDoc {
            meta: MetaDoc {
                seed: meta.seed,
                i: game.player_count(),
                t: game.horizon(),
                generator: meta.generator.clone(),
                redraws: meta.redraws,
            },
            price,
            coupling: Some(CouplingDoc {
                capacity: spec.capacity,
                ramp: spec.ramp,
            }),
            players,
        }
    }

    /// Rebuilds the game: tariff from the price points, capacity/ramp
    /// coupling rows, one player per document entry.
    pub fn to_game(&self) -> Result<GameInstance, IoError> {
        let points: Vec<(f64, f64, f64)> = self
            .price
            .iter()
            .map(|p| (p.threshold, p.slope, p.value))
            .collect();
        let price = PiecewiseLinearCost::from_points(&points)?;
        let horizon = self.meta.t;
        let mut players = Vec::with_capacity(self.players.len());
        for (idx, p) in self.players.iter().enumerate() {
            let (start, end) = p.window;
            if start < 1 || end > horizon || start > end {
                return Err(IoError::BadWindow {
                    player: idx,
                    start,
                    end,
                    horizon,
                });
            }
            let set = match p.m {
                Some(m) => BoxSimplexSet::with_total(m, p.lower.clone(), p.upper.clone())?,
                None => BoxSimplexSet::pure_box(p.lower.clone(), p.upper.clone())?,
            };
            let utility = QuadPrefUtility::new(p.omega, p.pref.clone())?;
            players.push(Player {
                set,
                utility: Some(utility),
            });
        }
        let coupling = self
            .coupling
            .as_ref()
            .map(|c| coupling_matrix(horizon, c.capacity, c.ramp));
        Ok(GameInstance::new(players, price.into(), coupling)?)
    }

    pub fn to_json(&self) -> Result<String, IoError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, IoError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// The on-disk solve result document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDoc {
    pub profile: Vec<Vec<f64>>,
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

impl ResultDoc {
    pub fn from_result(result: &SolveResult) -> Self {
        ResultDoc {
            profile: result.profile.to_rows(),
            multipliers: result.multipliers.clone(),
            iterations: result.iterations,
            residual: result.final_residual,
            converged: result.converged,
        }
    }

    pub fn to_json(&self) -> Result<String, IoError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, IoError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::generate;

    #[test]
    fn scenario_round_trip() {
        let spec = ScenarioSpec {
            players: 8,
            seed: 3,
            ..Default::default()
        };
        let (game, meta) = generate(&spec).unwrap();
        let doc = ScenarioDoc::from_game(&spec, &game, &meta);
        let json = doc.to_json().unwrap();
        let parsed = ScenarioDoc::from_json(&json).unwrap();
        assert_eq!(parsed, doc);
        // serialization is stable byte-for-byte
        assert_eq!(parsed.to_json().unwrap(), json);

        let rebuilt = parsed.to_game().unwrap();
        assert_eq!(
            serde_json::to_string(&rebuilt).unwrap(),
            serde_json::to_string(&game).unwrap()
        );
    }

    #[test]
    fn bad_window_is_rejected() {
        let spec = ScenarioSpec {
            players: 1,
            seed: 3,
            ..Default::default()
        };
        let (game, meta) = generate(&spec).unwrap();
        let mut doc = ScenarioDoc::from_game(&spec, &game, &meta);
        doc.players[0].window = (0, 5);
        assert!(matches!(doc.to_game(), Err(IoError::BadWindow { .. })));
    }

    #[test]
    fn result_doc_round_trip() {
        let doc = ResultDoc {
            profile: vec![vec![1.0, 2.0], vec![0.5, 0.25]],
            multipliers: vec![0.0, 3.5],
            iterations: 42,
            residual: 9.5e-4,
            converged: true,
        };
        let json = doc.to_json().unwrap();
        assert_eq!(ResultDoc::from_json(&json).unwrap(), doc);
    }
}
