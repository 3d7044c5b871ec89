//! Inverse price design: choose `α` so the equilibrium sits at a target.

use serde::Serialize;

use crate::catalog::WirelessSirGame;
use crate::error::{GameError, Result};
use crate::linalg;
use crate::model::{GameSpec, PriceVector};

/// Below this magnitude a pricing slope counts as zero.
pub const ZERO_SENSITIVITY: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignResult {
    /// Raw designed prices; entries with zero sensitivity are `NaN`.
    pub prices: Vec<f64>,
    pub feasible: bool,
    /// `∂p_i/∂x_i` at the target.
    pub sensitivity: Vec<f64>,
    pub notes: Vec<String>,
}

impl DesignResult {
    pub fn price_vector(&self) -> Result<PriceVector> {
        if !self.feasible {
            return Err(GameError::InfeasibleTarget(self.notes.join("; ")));
        }
        PriceVector::new(self.prices.clone())
    }

    pub fn reason(&self) -> Option<&str> {
        self.notes.first().map(String::as_str)
    }
}

/// `α̂_i = (∂p_i/∂x_i)⁻¹ ∂U_i/∂x_i` at `x̂`. Targets with zero slope or a
/// negative designed price are reported infeasible rather than clamped.
pub fn design_price(game: &GameSpec, target: &[f64]) -> Result<DesignResult> {
    game.check_x(target)?;
    let cons = game.constraints();
    if !cons.contains(target, 0.0) {
        return Err(GameError::InfeasibleTarget(format!(
            "target {target:?} violates the feasible set by {:e}",
            cons.max_violation(target)
        )));
    }
    let f = game.utility_own_partials(target)?;
    let sensitivity = game.pricing_slopes(target)?;
    let mut notes = Vec::new();
    let prices: Vec<f64> = f
        .iter()
        .zip(&sensitivity)
        .enumerate()
        .map(|(i, (fi, si))| {
            if si.abs() < ZERO_SENSITIVITY {
                notes.push(format!("zero pricing sensitivity for player {i}"));
                f64::NAN
            } else {
                let a = fi / si;
                if a < 0.0 {
                    notes.push(format!("negative price {a:e} required for player {i}"));
                }
                a
            }
        })
        .collect();
    Ok(DesignResult {
        feasible: notes.is_empty(),
        prices,
        sensitivity,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QosDesign {
    pub design: DesignResult,
    /// Powers on the QoS boundary, `S x = b`.
    pub boundary: Vec<f64>,
    /// `max_i |s_i − s̄_i|` at the re-solved equilibrium.
    pub sir_error: f64,
}

/// Relative SIR mismatch above which the boundary design is rejected.
const QOS_VERIFY_TOL: f64 = 1e-6;

/// Prices whose equilibrium meets every target SIR with equality.
pub fn wireless_qos_boundary_price(game: &WirelessSirGame) -> Result<QosDesign> {
    let target = game
        .target_sir()
        .ok_or_else(|| GameError::Domain("no target SIR levels configured".into()))?
        .to_vec();
    let s = game.matrix_s()?;
    let b = game.vector_b()?;
    let x = linalg::solve(&s, &b, "QoS matrix S")?;
    if let Some(i) = x.iter().position(|v| *v < 0.0) {
        return Err(GameError::InfeasibleTarget(format!(
            "boundary power x_{i} = {:e} is negative; targets are jointly unreachable",
            x[i]
        )));
    }
    let c = linalg::mat_vec(&game.matrix_a(), &x);
    let (h, l, noise) = (game.gains(), game.spreading_gain(), game.noise());
    let prices = (0..x.len())
        .map(|i| {
            let denom = c[i] + noise / (l * h[i]);
            if denom <= 0.0 {
                Err(GameError::InfeasibleTarget(format!(
                    "player {i}: c_i + σ²/(L h_i) = {denom:e} ≤ 0"
                )))
            } else {
                Ok(game.beta()[i] / denom)
            }
        })
        .collect::<Result<Vec<f64>>>()?;

    let solved = game.wireless_ne(&prices)?;
    let mut sir_error = 0.0_f64;
    for (i, t) in target.iter().enumerate() {
        let err = (game.sir(&solved.x, i)? - t).abs();
        if !(err <= QOS_VERIFY_TOL * (1.0 + t)) {
            return Err(GameError::Numerics(format!(
                "boundary design failed verification: player {i} misses its SIR target by {err:e}"
            )));
        }
        sir_error = sir_error.max(err);
    }
    Ok(QosDesign {
        design: DesignResult {
            prices,
            feasible: true,
            sensitivity: vec![1.0; x.len()],
            notes: Vec::new(),
        },
        boundary: x,
        sir_error,
    })
}
