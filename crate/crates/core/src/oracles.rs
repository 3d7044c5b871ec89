//! Derivative-free reference solvers for tests. They evaluate only costs and
//! utilities and share no code with the main solvers.

use serde::Serialize;

use crate::error::Result;
use crate::model::GameSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSettings {
    pub max_sweeps: usize,
    /// Stop when no coordinate moves more than this in a sweep.
    pub tol: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            max_sweeps: 10_000,
            tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub value: Vec<f64>,
    /// Largest coordinate move in the last sweep.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Moves below this fraction of the box width that stop shrinking are the
/// resolution limit of `scalar_min`, not a cycle.
const RESOLUTION_FLOOR: f64 = 1e-11;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimiser of a unimodal `f` on `[lo, hi]`: golden-section down to a
/// bracket of relative width `1e-6`, then bisection on the sign of
/// a fourth-order central difference of `f`, which keeps resolving below the
/// `√ε` floor of value comparisons.
pub fn scalar_min(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-6 * width {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    // the golden bracket may have collapsed onto a bound
    let a = if a - lo < 1e-6 * width { lo } else { a };
    let b = if hi - b < 1e-6 * width { hi } else { b };
    let h = 1e-6 * width;
    let mut slope = |t: f64| {
        let at = |u: f64| u.clamp(lo, hi);
        let near = f(at(t + h)) - f(at(t - h));
        let far = f(at(t + 2.0 * h)) - f(at(t - 2.0 * h));
        8.0 * near - far
    };
    if slope(a) >= 0.0 && a == lo {
        return lo;
    }
    if slope(b) <= 0.0 && b == hi {
        return hi;
    }
    let (mut a, mut b) = (a, b);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let s = slope(m);
        if s > 0.0 {
            b = m;
        } else if s < 0.0 {
            a = m;
        } else {
            return m;
        }
    }
    0.5 * (a + b)
}

/// Cyclic exact best response: each player in turn minimises its own cost
/// over its box interval.
pub fn brute_ne(game: &GameSpec, alpha: &[f64], x0: &[f64], settings: OracleSettings) -> Result<OracleResult> {
    game.cost(alpha, x0, 0)?;
    let (lower, upper) = (game.constraints().lower(), game.constraints().upper());
    let width = lower.iter().zip(upper).map(|(l, u)| u - l).fold(0.0, f64::max);
    let mut x = x0.to_vec();
    game.constraints().project(&mut x);
    let mut moves = Vec::new();
    for sweep in 1..=settings.max_sweeps {
        let mut moved = 0.0_f64;
        for i in 0..x.len() {
            let mut probe = x.clone();
            let t = scalar_min(
                |t| {
                    probe[i] = t;
                    game.cost(alpha, &probe, i).unwrap_or(f64::INFINITY)
                },
                lower[i],
                upper[i],
            );
            moved = moved.max((t - x[i]).abs());
            x[i] = t;
        }
        moves.push(moved);
        let at_floor = sweep > 1 && moved <= RESOLUTION_FLOOR * width && moved >= moves[sweep - 2];
        if at_floor || moved <= settings.tol * (1.0 + x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))) {
            return Ok(OracleResult {
                value: x,
                residual: moved,
                iterations: sweep,
                converged: true,
            });
        }
        // no progress over many sweeps: cycling or a non-unique equilibrium
        if sweep > 50 && moved >= moves[sweep - 51] {
            log::warn!("best-response sweeps stopped contracting after {sweep} sweeps");
            return Ok(OracleResult {
                value: x,
                residual: moved,
                iterations: sweep,
                converged: false,
            });
        }
    }
    Ok(OracleResult {
        residual: moves.last().copied().unwrap_or(f64::NAN),
        value: x,
        iterations: settings.max_sweeps,
        converged: false,
    })
}

fn total_utility(game: &GameSpec, x: &[f64]) -> f64 {
    (0..x.len()).map(|i| game.utility().value(i, x)).sum()
}

/// Coordinate ascent on `𝒰 = Σ U_i` over the box hull. A sweep that lowers
/// `𝒰` marks the result as not converged (the objective is not concave).
pub fn brute_welfare_max(game: &GameSpec, x0: &[f64], settings: OracleSettings) -> Result<OracleResult> {
    game.check_x(x0)?;
    let (lower, upper) = (game.constraints().lower(), game.constraints().upper());
    let mut x = x0.to_vec();
    game.constraints().project(&mut x);
    let mut best = total_utility(game, &x);
    for sweep in 1..=settings.max_sweeps {
        let mut moved = 0.0_f64;
        for j in 0..x.len() {
            let mut probe = x.clone();
            let t = scalar_min(
                |t| {
                    probe[j] = t;
                    let v = -total_utility(game, &probe);
                    if v.is_finite() {
                        v
                    } else {
                        f64::INFINITY
                    }
                },
                lower[j],
                upper[j],
            );
            moved = moved.max((t - x[j]).abs());
            x[j] = t;
        }
        let now = total_utility(game, &x);
        if now < best - 1e-12 * best.abs().max(1.0) {
            log::warn!("welfare decreased during coordinate ascent: not concave on the box");
            return Ok(OracleResult {
                value: x,
                residual: moved,
                iterations: sweep,
                converged: false,
            });
        }
        best = best.max(now);
        if moved <= settings.tol * (1.0 + x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))) {
            return Ok(OracleResult {
                value: x,
                residual: moved,
                iterations: sweep,
                converged: true,
            });
        }
    }
    Ok(OracleResult {
        value: x,
        residual: f64::NAN,
        iterations: settings.max_sweeps,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{SeparableLogGame, SeparablePricing};
    use crate::model::{ConstraintSet, Pricing, QuadraticUtility, Utility};
    use nalgebra::DMatrix;

    #[test]
    fn scalar_min_resolves_below_sqrt_eps() {
        let t = scalar_min(|t| (t - 0.123456789012).powi(2), 0.0, 1.0);
        assert!((t - 0.123456789012).abs() < 1e-12);
        assert_eq!(scalar_min(|t| t, 0.0, 1.0), 0.0);
        assert_eq!(scalar_min(|t| -t, 0.0, 1.0), 1.0);
    }

    #[test]
    fn separable_ne_and_welfare() {
        let g = SeparableLogGame::new(vec![3.0], vec![1.0], SeparablePricing::LinearSum)
            .unwrap()
            .into_game(10.0)
            .unwrap();
        let ne = brute_ne(&g, &[1.0], &[0.1], OracleSettings::default()).unwrap();
        assert!(ne.converged);
        assert!((ne.value[0] - 0.5).abs() < 1e-9);
        let w = brute_welfare_max(&g, &[0.1], OracleSettings::default()).unwrap();
        assert!((w.value[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn quadratic_welfare_returns_centre() {
        // U_1 + U_2 = −(x_1 − 0.3)² − (x_2 + 0.2)² + const
        let u = QuadraticUtility::new(vec![0.6, -0.4], DMatrix::identity(2, 2) * 2.0).unwrap();
        let g = GameSpec::new(
            Utility::Quadratic(u),
            Pricing::Linear,
            ConstraintSet::uniform_box(2, -1.0, 1.0).unwrap(),
        )
        .unwrap();
        let w = brute_welfare_max(&g, &[0.0, 0.0], OracleSettings::default()).unwrap();
        assert!(w.converged);
        assert!((w.value[0] - 0.3).abs() < 1e-10 && (w.value[1] + 0.2).abs() < 1e-10);
    }
}
