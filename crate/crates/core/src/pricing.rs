//! Slow price adaptation: the welfare-seeking price flow `α̇ = Hᵀ ∇𝒰(x*(α))`,
//! its two-timescale closed loop with the gradient play, and a penalty flow
//! that steers a wireless game into its QoS region.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::catalog::WirelessSirGame;
use crate::error::{GameError, Result};
use crate::linalg;
use crate::model::{inf_norm, GameSpec, Utility};
use crate::solver::{equilibrium, ne_map_jacobian, ne_map_jacobian_fd, SolverSettings};
use crate::trajectory::{Sample, Trajectory};

/// `𝒰(x) = Σ_i U_i(x)`.
pub fn welfare(game: &GameSpec, x: &[f64]) -> Result<f64> {
    game.check_x(x)?;
    let w: f64 = (0..game.n_players()).map(|i| game.utility().value(i, x)).sum();
    if w.is_finite() {
        Ok(w)
    } else {
        Err(GameError::Numerics(format!("welfare not finite at {x:?}")))
    }
}

/// `∂𝒰/∂x_j = Σ_i ∂U_i/∂x_j`, cross terms included.
pub fn welfare_gradient(game: &GameSpec, x: &[f64]) -> Result<Vec<f64>> {
    game.check_x(x)?;
    let n = game.n_players();
    let grad = match game.utility() {
        Utility::Osnr(g) => g.welfare_gradient(x),
        Utility::Opaque(_) => (0..n)
            .map(|j| game.diff().derivative(x, j, |p| welfare(game, p).unwrap_or(f64::NAN)))
            .collect(),
        u => {
            let mut g = vec![0.0; n];
            for i in 0..n {
                let row = u.partials(i, x).expect("analytic utility");
                for (gj, r) in g.iter_mut().zip(row) {
                    *gj += r;
                }
            }
            g
        }
    };
    if grad.iter().all(|v| v.is_finite()) {
        Ok(grad)
    } else {
        Err(GameError::Numerics(format!("welfare gradient not finite at {x:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HSource {
    /// Closed-form `∂x*/∂α` where the game has one, finite differences otherwise.
    #[default]
    Analytic,
    FiniteDifference,
}

pub fn ne_sensitivity(game: &GameSpec, alpha: &[f64], source: HSource, settings: &SolverSettings) -> Result<DMatrix<f64>> {
    let h = match source {
        HSource::Analytic => ne_map_jacobian(game, alpha, settings)?,
        HSource::FiniteDifference => ne_map_jacobian_fd(game, alpha, settings)?,
    };
    let det = h.determinant().abs();
    if det < 1e-12 {
        log::warn!("near-singular equilibrium sensitivity: |det H| = {det:e} at α = {alpha:?}");
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceRate {
    pub rate: Vec<f64>,
    pub x: Vec<f64>,
    pub h: DMatrix<f64>,
}

/// `α̇ = Hᵀ(α) ∇𝒰(x*(α))` with the equilibrium assumed settled.
pub fn price_ode_rhs(game: &GameSpec, alpha: &[f64], source: HSource, settings: &SolverSettings) -> Result<PriceRate> {
    let x = equilibrium(game, alpha, settings)?.x.into_vec();
    let h = ne_sensitivity(game, alpha, source, settings)?;
    let grad = welfare_gradient(game, &x)?;
    Ok(PriceRate {
        rate: linalg::mat_t_vec(&h, &grad),
        x,
        h,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoTimescaleConfig {
    /// Ratio of the price timescale to the play timescale.
    pub epsilon: f64,
    /// Fast steps per price update; `round(1/ε)` when absent.
    pub inner_steps: Option<usize>,
    pub dt_fast: f64,
    pub outer_iters: usize,
    /// Euler step of the price update.
    pub outer_step: f64,
    pub h_source: HSource,
    /// Settled mode: halve the step when `V = −𝒰` would increase.
    pub safeguard: bool,
    /// Clamp the fast iterate onto the box hull.
    pub project_fast: bool,
}

impl Default for TwoTimescaleConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            inner_steps: None,
            dt_fast: 1e-5,
            outer_iters: 50,
            outer_step: 1.0,
            h_source: HSource::Analytic,
            safeguard: true,
            project_fast: true,
        }
    }
}

impl TwoTimescaleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(GameError::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.dt_fast > 0.0 && self.dt_fast.is_finite()) {
            return Err(GameError::Config(format!("dt_fast must be > 0, got {}", self.dt_fast)));
        }
        if !(self.outer_step > 0.0 && self.outer_step.is_finite()) {
            return Err(GameError::Config(format!("outer_step must be > 0, got {}", self.outer_step)));
        }
        if self.inner_steps == Some(0) {
            return Err(GameError::Config("inner_steps must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn inner_steps(&self) -> usize {
        self.inner_steps
            .unwrap_or_else(|| (1.0 / self.epsilon).round().max(1.0) as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PricingOutcome {
    pub trajectory: Trajectory,
    pub alpha: Vec<f64>,
    pub x: Vec<f64>,
    /// Price components clamped at zero over the run.
    pub clamped: usize,
    /// Step halvings triggered by the descent safeguard.
    pub halvings: usize,
    /// `‖α̇‖∞` at the final prices.
    pub final_rate: f64,
}

fn clamp_prices(alpha: &mut [f64]) -> usize {
    let mut count = 0;
    for a in alpha.iter_mut() {
        if *a < 0.0 {
            *a = 0.0;
            count += 1;
        }
    }
    count
}

fn record(game: &GameSpec, t: f64, x: &[f64], alpha: &[f64], lyapunov: f64) -> Result<Sample> {
    Ok(Sample {
        t,
        x: x.to_vec(),
        alpha: alpha.to_vec(),
        welfare: welfare(game, x)?,
        lyapunov,
        metrics: game.metrics(x),
    })
}

const MAX_HALVINGS: usize = 40;

/// Runs the price flow for `cfg.outer_iters` updates. With `assume_settled`
/// the equilibrium is re-solved after every update and the lyapunov column
/// holds `−𝒰(x*)`; otherwise the play runs `inner_steps` Euler steps of
/// `ẋ = −q(x; α)` between updates from `x0`, and the column holds `½‖q‖²`.
pub fn run_pricing_loop(
    game: &GameSpec,
    alpha0: &[f64],
    x0: &[f64],
    cfg: &TwoTimescaleConfig,
    assume_settled: bool,
) -> Result<PricingOutcome> {
    cfg.validate()?;
    game.check_alpha(alpha0)?;
    game.check_x(x0)?;
    let settings = SolverSettings::default();
    let mut alpha = alpha0.to_vec();
    let mut clamped = clamp_prices(&mut alpha);
    let mut halvings = 0;
    let mut tr = Trajectory::new(game.n_players());

    if assume_settled {
        let mut rate = price_ode_rhs(game, &alpha, cfg.h_source, &settings)?;
        let mut v = -welfare(game, &rate.x)?;
        tr.push(record(game, 0.0, &rate.x, &alpha, v)?)?;
        let mut step = cfg.outer_step;
        for k in 1..=cfg.outer_iters {
            let mut tries = 0;
            let (next_alpha, next_rate, next_v, n_clamped) = loop {
                let mut cand: Vec<f64> = alpha.iter().zip(&rate.rate).map(|(a, r)| a + step * r).collect();
                let n_clamped = clamp_prices(&mut cand);
                let cand_rate = price_ode_rhs(game, &cand, cfg.h_source, &settings)?;
                let cand_v = -welfare(game, &cand_rate.x)?;
                if !cfg.safeguard || cand_v <= v || tries == MAX_HALVINGS {
                    break (cand, cand_rate, cand_v, n_clamped);
                }
                tries += 1;
                halvings += 1;
                step *= 0.5;
            };
            alpha = next_alpha;
            rate = next_rate;
            v = next_v;
            clamped += n_clamped;
            tr.push(record(game, k as f64, &rate.x, &alpha, v)?)?;
        }
        return Ok(PricingOutcome {
            final_rate: inf_norm(&rate.rate),
            x: rate.x,
            alpha,
            trajectory: tr,
            clamped,
            halvings,
        });
    }

    let inner = cfg.inner_steps();
    let mut x = x0.to_vec();
    let half_q2 = |alpha: &[f64], x: &[f64]| -> Result<f64> {
        Ok(0.5 * game.pseudo_gradient(alpha, x)?.iter().map(|v| v * v).sum::<f64>())
    };
    tr.push(record(game, 0.0, &x, &alpha, half_q2(&alpha, &x)?)?)?;
    for k in 1..=cfg.outer_iters {
        for _ in 0..inner {
            let q = game.pseudo_gradient(&alpha, &x)?;
            for (xi, qi) in x.iter_mut().zip(&q) {
                *xi -= cfg.dt_fast * qi;
            }
            if cfg.project_fast {
                game.constraints().project(&mut x);
            }
            let norm = inf_norm(&x);
            if !(norm <= crate::control::DIVERGENCE_NORM) {
                return Err(GameError::Divergence { t: k as f64, norm });
            }
        }
        let h = ne_sensitivity(game, &alpha, cfg.h_source, &settings)?;
        let grad = welfare_gradient(game, &x)?;
        let rate = linalg::mat_t_vec(&h, &grad);
        for (a, r) in alpha.iter_mut().zip(&rate) {
            *a += cfg.outer_step * r;
        }
        clamped += clamp_prices(&mut alpha);
        tr.push(record(game, k as f64, &x, &alpha, half_q2(&alpha, &x)?)?)?;
    }
    let final_rate = {
        let h = ne_sensitivity(game, &alpha, cfg.h_source, &settings)?;
        inf_norm(&linalg::mat_t_vec(&h, &welfare_gradient(game, &x)?))
    };
    Ok(PricingOutcome {
        trajectory: tr,
        alpha,
        x,
        clamped,
        halvings,
        final_rate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    /// Target SIR per player.
    pub target: Vec<f64>,
}

/// `ρ_j = (b_j − (Sx)_j)²` while player `j` is below target, zero otherwise,
/// together with `∂ρ_j/∂x_j`.
pub fn penalty_terms(game: &WirelessSirGame, spec: &PenaltySpec, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = game.qos_matrix(&spec.target)?;
    let b = game.qos_vector(&spec.target);
    let sx = linalg::mat_vec(&s, x);
    let mut rho = Vec::with_capacity(x.len());
    let mut slope = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let below = game.sir(x, j)? < spec.target[j];
        let z = b[j] - sx[j];
        if below && z > 0.0 {
            rho.push(z * z);
            slope.push(-2.0 * z * s[(j, j)]);
        } else {
            rho.push(0.0);
            slope.push(0.0);
        }
    }
    Ok((rho, slope))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyRate {
    pub rate: Vec<f64>,
    pub x: Vec<f64>,
    pub penalty: f64,
}

/// `α̇_i = −Σ_j (∂ρ_j/∂x_j)(x*) ∂x*_j/∂α_i`, which lowers the total penalty.
pub fn penalty_price_rhs(game: &WirelessSirGame, alpha: &[f64], spec: &PenaltySpec) -> Result<PenaltyRate> {
    let x = game.wireless_ne(alpha)?.x.into_vec();
    let (rho, slope) = penalty_terms(game, spec, &x)?;
    let penalty = rho.iter().sum();
    if slope.iter().all(|s| *s == 0.0) {
        return Ok(PenaltyRate {
            rate: vec![0.0; x.len()],
            x,
            penalty,
        });
    }
    let h = wireless_ne_jacobian_fd(game, alpha)?;
    let rate = linalg::mat_t_vec(&h, &slope).into_iter().map(|v| -v).collect();
    Ok(PenaltyRate { rate, x, penalty })
}

fn wireless_ne_jacobian_fd(game: &WirelessSirGame, alpha: &[f64]) -> Result<DMatrix<f64>> {
    let n = alpha.len();
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let d = 1e-4 * alpha[j].abs().max(1e-12);
        let mut up = alpha.to_vec();
        up[j] += d;
        let mut dn = alpha.to_vec();
        dn[j] -= d;
        let xu = game.wireless_ne(&up)?.x;
        let xd = game.wireless_ne(&dn)?.x;
        for i in 0..n {
            h[(i, j)] = (xu[i] - xd[i]) / (2.0 * d);
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyLoopConfig {
    pub outer_iters: usize,
    pub step: f64,
    /// Stop once every player meets its target within this margin.
    pub tol: f64,
}

impl Default for PenaltyLoopConfig {
    fn default() -> Self {
        Self {
            outer_iters: 200,
            step: 1.0,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyOutcome {
    pub trajectory: Trajectory,
    pub alpha: Vec<f64>,
    pub x: Vec<f64>,
    /// `min_i (s_i − s̄_i)` after each update, starting with the initial prices.
    pub sir_gap: Vec<f64>,
    pub iterations: usize,
    pub halvings: usize,
    pub clamped: usize,
}

fn min_gap(game: &WirelessSirGame, target: &[f64], x: &[f64]) -> Result<f64> {
    (0..x.len())
        .map(|i| Ok(game.sir(x, i)? - target[i]))
        .try_fold(f64::INFINITY, |m, g: Result<f64>| Ok(m.min(g?)))
}

/// Euler iteration of the penalty flow. A step that would raise the total
/// penalty is halved until it does not.
pub fn run_penalty_loop(
    game: &WirelessSirGame,
    alpha0: &[f64],
    spec: &PenaltySpec,
    cfg: &PenaltyLoopConfig,
) -> Result<PenaltyOutcome> {
    if !(cfg.step > 0.0) {
        return Err(GameError::Config(format!("penalty step must be > 0, got {}", cfg.step)));
    }
    let spec_game = game.clone().into_game(f64::MAX)?;
    let mut alpha = alpha0.to_vec();
    let mut clamped = clamp_prices(&mut alpha);
    let mut rate = penalty_price_rhs(game, &alpha, spec)?;
    let mut gap = vec![min_gap(game, &spec.target, &rate.x)?];
    let mut tr = Trajectory::new(alpha.len());
    tr.push(record(&spec_game, 0.0, &rate.x, &alpha, rate.penalty)?)?;
    let mut halvings = 0;
    let mut step = cfg.step;
    let mut iterations = 0;
    while iterations < cfg.outer_iters && *gap.last().expect("nonempty") < -cfg.tol {
        iterations += 1;
        let mut tries = 0;
        let (next_alpha, next_rate, n_clamped) = loop {
            let mut cand: Vec<f64> = alpha.iter().zip(&rate.rate).map(|(a, r)| a + step * r).collect();
            let n_clamped = clamp_prices(&mut cand);
            let cand_rate = cand
                .iter()
                .all(|a| *a > 0.0)
                .then(|| penalty_price_rhs(game, &cand, spec))
                .transpose()?;
            match cand_rate {
                Some(r) if r.penalty <= rate.penalty || tries == MAX_HALVINGS => break (cand, r, n_clamped),
                _ if tries == MAX_HALVINGS => {
                    return Err(GameError::Numerics("penalty step collapsed at a zero price".into()))
                }
                _ => {
                    tries += 1;
                    halvings += 1;
                    step *= 0.5;
                }
            }
        };
        alpha = next_alpha;
        rate = next_rate;
        clamped += n_clamped;
        gap.push(min_gap(game, &spec.target, &rate.x)?);
        tr.push(record(&spec_game, iterations as f64, &rate.x, &alpha, rate.penalty)?)?;
    }
    Ok(PenaltyOutcome {
        trajectory: tr,
        alpha,
        x: rate.x,
        sir_gap: gap,
        iterations,
        halvings,
        clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    /// `−𝒰` at every recorded sample.
    pub v: Vec<f64>,
    /// The trajectory's own lyapunov column (`−𝒰` settled, `½‖q‖²` full loop).
    pub w: Vec<f64>,
    /// Largest increase of `V` between consecutive samples, zero if none.
    pub max_increase: f64,
    /// `max_increase / |V(0)|`.
    pub relative_increase: f64,
}

impl LyapunovReport {
    pub fn is_monotone(&self, rel_tol: f64) -> bool {
        self.relative_increase <= rel_tol
    }
}

pub fn lyapunov_monitor(trajectory: &Trajectory) -> LyapunovReport {
    let v: Vec<f64> = trajectory.samples().iter().map(|s| -s.welfare).collect();
    let w: Vec<f64> = trajectory.samples().iter().map(|s| s.lyapunov).collect();
    let max_increase = v.windows(2).map(|p| p[1] - p[0]).fold(0.0, f64::max);
    let scale = v.first().map_or(1.0, |v0| v0.abs());
    LyapunovReport {
        relative_increase: if scale > 0.0 { max_increase / scale } else { max_increase },
        v,
        w,
        max_increase,
    }
}
