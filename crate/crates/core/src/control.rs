//! Gradient play `ẋ = f(x) + G(x) α` with `f_i = ∂U_i/∂x_i` and
//! `G = diag(−∂p_i/∂x_i)`, set-point regulation through the prices, and a
//! local reachability rank test.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, GameError, Result};
use crate::linalg;
use crate::model::{inf_norm, max_abs_diff, GameSpec, PriceVector};
use crate::trajectory::{Sample, Trajectory};

/// A price source for the game dynamics, possibly with internal state `z`.
pub trait PriceLaw {
    fn state_dim(&self) -> usize {
        0
    }

    fn price(&self, t: f64, x: &[f64], z: &[f64]) -> Vec<f64>;

    fn state_rate(&self, _x: &[f64], _z: &[f64]) -> Vec<f64> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantPrice(pub Vec<f64>);

impl PriceLaw for ConstantPrice {
    fn price(&self, _t: f64, _x: &[f64], _z: &[f64]) -> Vec<f64> {
        self.0.clone()
    }
}

/// Piecewise-constant prices: `values[k]` holds from `times[k]` on.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl PriceSeries {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        check_len("price series values", times.len(), values.len())?;
        if times.is_empty() {
            return Err(GameError::Config("price series is empty".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GameError::Config("price series times must increase".into()));
        }
        Ok(Self { times, values })
    }
}

impl PriceLaw for PriceSeries {
    fn price(&self, t: f64, _x: &[f64], _z: &[f64]) -> Vec<f64> {
        let k = self.times.partition_point(|s| *s <= t).saturating_sub(1);
        self.values[k].clone()
    }
}

/// `α = c(x̂) + K(x − x̂) + K_I σ` with `σ̇ = x − x̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegulationLaw {
    pub steady: Vec<f64>,
    pub gains: Gains,
    pub target: Vec<f64>,
}

impl PriceLaw for RegulationLaw {
    fn state_dim(&self) -> usize {
        if self.gains.k_i.is_some() {
            self.target.len()
        } else {
            0
        }
    }

    fn price(&self, _t: f64, x: &[f64], z: &[f64]) -> Vec<f64> {
        let e: Vec<f64> = x.iter().zip(&self.target).map(|(a, b)| a - b).collect();
        let ke = linalg::mat_vec(&self.gains.k, &e);
        let ki = match &self.gains.k_i {
            Some(k_i) => linalg::mat_vec(k_i, z),
            None => vec![0.0; x.len()],
        };
        (0..x.len()).map(|i| self.steady[i] + ke[i] + ki[i]).collect()
    }

    fn state_rate(&self, x: &[f64], _z: &[f64]) -> Vec<f64> {
        if self.gains.k_i.is_none() {
            return Vec::new();
        }
        x.iter().zip(&self.target).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    Euler,
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowSettings {
    pub dt: f64,
    pub horizon: f64,
    pub integrator: Integrator,
    /// Record every this many steps; the final state is always recorded.
    pub record_every: usize,
    /// Clamp the state onto the box hull after each step.
    pub project: bool,
    /// Constant additive term in `ẋ`.
    pub disturbance: Option<Vec<f64>>,
}

impl Default for FlowSettings {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            horizon: 10.0,
            integrator: Integrator::Euler,
            record_every: 1000,
            project: false,
            disturbance: None,
        }
    }
}

impl FlowSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(GameError::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(GameError::Config(format!("horizon must be ≥ 0, got {}", self.horizon)));
        }
        if self.record_every == 0 {
            return Err(GameError::Config("record_every must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// State magnitude treated as a blow-up.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub trajectory: Trajectory,
    pub x: Vec<f64>,
    /// Controller state at the end of the run.
    pub z: Vec<f64>,
}

/// `ẋ = −q(x; α)`, optionally plus a disturbance.
fn velocity(game: &GameSpec, alpha: &[f64], x: &[f64], disturbance: Option<&[f64]>) -> Result<Vec<f64>> {
    let q = game.pseudo_gradient(alpha, x)?;
    Ok(match disturbance {
        Some(d) => q.iter().zip(d).map(|(q, d)| d - q).collect(),
        None => q.iter().map(|q| -q).collect(),
    })
}

fn sample_at(game: &GameSpec, t: f64, x: &[f64], alpha: &[f64]) -> Sample {
    let q = game.pseudo_gradient(alpha, x).unwrap_or_else(|_| vec![f64::NAN; x.len()]);
    Sample {
        t,
        x: x.to_vec(),
        alpha: alpha.to_vec(),
        welfare: (0..x.len()).map(|i| game.utility().value(i, x)).sum(),
        lyapunov: 0.5 * q.iter().map(|v| v * v).sum::<f64>(),
        metrics: game.metrics(x),
    }
}

/// Integrates the gradient dynamics under `law`.
pub fn game_flow(game: &GameSpec, law: &dyn PriceLaw, x0: &[f64], settings: &FlowSettings) -> Result<FlowResult> {
    settings.validate()?;
    game.check_x(x0)?;
    let n = game.n_players();
    if let Some(d) = &settings.disturbance {
        check_len("disturbance", n, d.len())?;
    }
    let dist = settings.disturbance.as_deref();
    let nz = law.state_dim();
    let steps = (settings.horizon / settings.dt).round() as usize;
    let mut x = x0.to_vec();
    let mut z = vec![0.0; nz];
    let mut tr = Trajectory::new(n);

    let rate = |t: f64, x: &[f64], z: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let alpha = law.price(t, x, z);
        Ok((velocity(game, &alpha, x, dist)?, law.state_rate(x, z)))
    };
    let axpy = |a: &[f64], s: f64, d: &[f64]| -> Vec<f64> { a.iter().zip(d).map(|(a, d)| a + s * d).collect() };

    for k in 0..=steps {
        let t = k as f64 * settings.dt;
        if k % settings.record_every == 0 || k == steps {
            tr.push(sample_at(game, t, &x, &law.price(t, &x, &z)))?;
        }
        if k == steps {
            break;
        }
        let dt = settings.dt;
        let (dx, dz) = match settings.integrator {
            Integrator::Euler => rate(t, &x, &z)?,
            Integrator::Rk4 => {
                let (k1x, k1z) = rate(t, &x, &z)?;
                let (k2x, k2z) = rate(t + 0.5 * dt, &axpy(&x, 0.5 * dt, &k1x), &axpy(&z, 0.5 * dt, &k1z))?;
                let (k3x, k3z) = rate(t + 0.5 * dt, &axpy(&x, 0.5 * dt, &k2x), &axpy(&z, 0.5 * dt, &k2z))?;
                let (k4x, k4z) = rate(t + dt, &axpy(&x, dt, &k3x), &axpy(&z, dt, &k3z))?;
                let comb = |a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
                    (0..a.len()).map(|i| (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]) / 6.0).collect()
                };
                (comb(&k1x, &k2x, &k3x, &k4x), comb(&k1z, &k2z, &k3z, &k4z))
            }
        };
        x = axpy(&x, dt, &dx);
        z = axpy(&z, dt, &dz);
        if settings.project {
            game.constraints().project(&mut x);
        }
        let norm = inf_norm(&x);
        if !(norm <= DIVERGENCE_NORM) {
            return Err(GameError::Divergence { t: t + dt, norm });
        }
    }
    Ok(FlowResult { trajectory: tr, x, z })
}

/// `c(x̂)` solving `0 = f(x̂) + G(x̂) c`.
pub fn steady_state_price(game: &GameSpec, target: &[f64]) -> Result<PriceVector> {
    let f = game.utility_own_partials(target)?;
    let slopes = game.pricing_slopes(target)?;
    if let Some(i) = slopes.iter().position(|s| s.abs() < 1e-12) {
        return Err(GameError::SingularMatrix(format!(
            "control channel G(x̂) has a zero entry for player {i}"
        )));
    }
    PriceVector::new(f.iter().zip(&slopes).map(|(f, s)| f / s).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedPlant {
    /// `∂(f + G c)/∂x` at the target.
    pub a: DMatrix<f64>,
    /// `G(x̂)`.
    pub b: DMatrix<f64>,
}

/// Linearisation about `x̂` with the steady-state price applied. The drift
/// with constant `c` equals `−q(x; c)`, so `A = −Q(x̂)`.
pub fn linearize(game: &GameSpec, target: &[f64]) -> Result<LinearizedPlant> {
    let c = steady_state_price(game, target)?;
    let q = game.jacobian_q(&c, target, game.diff())?;
    let slopes = game.pricing_slopes(target)?;
    let n = game.n_players();
    Ok(LinearizedPlant {
        a: -q,
        b: DMatrix::from_fn(n, n, |i, j| if i == j { -slopes[i] } else { 0.0 }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    #[default]
    Proportional,
    Integral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSpec {
    #[serde(default)]
    pub mode: ControlMode,
    /// Desired closed-loop pole magnitudes per channel.
    pub lambda_p: Vec<f64>,
    /// Integral coefficients per channel, integral mode only.
    #[serde(default)]
    pub lambda_i: Option<Vec<f64>>,
    pub target: Vec<f64>,
}

impl ControllerSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.target.len();
        check_len("lambda_p", n, self.lambda_p.len())?;
        if self.lambda_p.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(GameError::Config("lambda_p entries must be > 0".into()));
        }
        match (self.mode, &self.lambda_i) {
            (ControlMode::Integral, None) => {
                Err(GameError::Config("integral mode needs lambda_i".into()))
            }
            (ControlMode::Integral, Some(l)) => {
                check_len("lambda_i", n, l.len())?;
                if l.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(GameError::Config("lambda_i entries must be > 0".into()));
                }
                Ok(())
            }
            (ControlMode::Proportional, _) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    pub k: DMatrix<f64>,
    pub k_i: Option<DMatrix<f64>>,
    /// Real parts of the closed-loop eigenvalues.
    pub closed_loop_real: Vec<f64>,
}

/// `K = B⁻¹(−Λ₁ − A)`, and in integral mode `K_I = B⁻¹(−Λ₂)`, so each
/// channel closes as `s + λ₁` or `s² + λ₁ s + λ₂`.
pub fn regulation_gain(plant: &LinearizedPlant, spec: &ControllerSpec) -> Result<Gains> {
    spec.validate()?;
    let n = spec.target.len();
    check_len("plant dimension", n, plant.a.nrows())?;
    let b_inv = linalg::inverse(&plant.b, "control channel B")?;
    let l1 = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&spec.lambda_p));
    let k = &b_inv * (-&l1 - &plant.a);
    let closed = &plant.a + &plant.b * &k;
    let (k_i, loop_matrix) = match spec.mode {
        ControlMode::Proportional => (None, closed),
        ControlMode::Integral => {
            let l2 = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(
                spec.lambda_i.as_deref().expect("validated"),
            ));
            let k_i = &b_inv * -l2;
            let mut m = DMatrix::zeros(2 * n, 2 * n);
            m.view_mut((0, 0), (n, n)).copy_from(&closed);
            m.view_mut((0, n), (n, n)).copy_from(&(&plant.b * &k_i));
            m.view_mut((n, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
            (Some(k_i), m)
        }
    };
    let closed_loop_real: Vec<f64> = linalg::eigenvalues(&loop_matrix).iter().map(|e| e.re).collect();
    if let Some(bad) = closed_loop_real.iter().find(|r| !(**r < 0.0)) {
        return Err(GameError::Design(format!(
            "closed-loop eigenvalue with real part {bad:e} is not stable"
        )));
    }
    Ok(Gains {
        k,
        k_i,
        closed_loop_real,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegulationOutcome {
    pub flow: FlowResult,
    pub gains: Gains,
    pub steady: Vec<f64>,
    /// `‖x(T) − x̂‖∞`
    pub final_error: f64,
}

/// Closed-loop run of the regulation law from `x0`.
pub fn regulate(game: &GameSpec, spec: &ControllerSpec, x0: &[f64], settings: &FlowSettings) -> Result<RegulationOutcome> {
    game.check_x(&spec.target)?;
    let steady = steady_state_price(game, &spec.target)?.into_vec();
    let plant = linearize(game, &spec.target)?;
    let gains = regulation_gain(&plant, spec)?;
    let law = RegulationLaw {
        steady: steady.clone(),
        gains: gains.clone(),
        target: spec.target.clone(),
    };
    let flow = game_flow(game, &law, x0, settings)?;
    let final_error = max_abs_diff(&flow.x, &spec.target);
    Ok(RegulationOutcome {
        flow,
        gains,
        steady,
        final_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachabilityReport {
    pub depth: usize,
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub vectors: usize,
    pub warning: Option<String>,
}

type Field<'a> = Box<dyn Fn(&[f64]) -> Result<Vec<f64>> + 'a>;

fn bracket<'a>(x_field: &'a Field<'a>, y_field: &'a Field<'a>, h: f64) -> Field<'a> {
    Box::new(move |x: &[f64]| {
        let n = x.len();
        let jac = |f: &Field<'a>| {
            let mut m = DMatrix::zeros(n, n);
            for j in 0..n {
                let mut up = x.to_vec();
                up[j] += h;
                let mut dn = x.to_vec();
                dn[j] -= h;
                let (fu, fd) = (f(&up)?, f(&dn)?);
                for i in 0..n {
                    m[(i, j)] = (fu[i] - fd[i]) / (2.0 * h);
                }
            }
            Ok::<_, GameError>(m)
        };
        let dy = jac(y_field)?;
        let dx = jac(x_field)?;
        let xv = x_field(x)?;
        let yv = y_field(x)?;
        let a = linalg::mat_vec(&dy, &xv);
        let b = linalg::mat_vec(&dx, &yv);
        Ok(a.iter().zip(&b).map(|(a, b)| a - b).collect())
    })
}

/// Numerical rank of the control distribution at `x0`: the columns of
/// `G(x0)`, then `[f, g_i]` and `[g_i, g_j]` (depth 1), then `[f, [f, g_i]]`
/// (depth 2), with `f` the drift under constant prices `α₀`.
pub fn reachability_rank(game: &GameSpec, alpha0: &[f64], x0: &[f64], depth: usize) -> Result<ReachabilityReport> {
    game.check_alpha(alpha0)?;
    game.check_x(x0)?;
    if depth > 2 {
        return Err(GameError::Config(format!("bracket depth {depth} exceeds 2")));
    }
    let n = game.n_players();
    let h = 1e-4 * (1.0 + inf_norm(x0));
    let drift: Field = Box::new(move |x: &[f64]| velocity(game, alpha0, x, None));
    let inputs: Vec<Field> = (0..n)
        .map(|i| -> Field {
            Box::new(move |x: &[f64]| {
                let s = game.pricing_slopes(x)?;
                Ok((0..n).map(|j| if j == i { -s[i] } else { 0.0 }).collect())
            })
        })
        .collect();

    let mut vectors: Vec<Vec<f64>> = inputs.iter().map(|g| g(x0)).collect::<Result<_>>()?;
    let mut first: Vec<Field> = Vec::new();
    if depth >= 1 {
        for g in &inputs {
            first.push(bracket(&drift, g, h));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                vectors.push(bracket(&inputs[i], &inputs[j], h)(x0)?);
            }
        }
        for b in &first {
            vectors.push(b(x0)?);
        }
    }
    if depth >= 2 {
        for b in &first {
            vectors.push(bracket(&drift, b, h)(x0)?);
        }
    }

    let m = DMatrix::from_fn(n, vectors.len(), |i, j| vectors[j][i]);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let max = sv.first().copied().unwrap_or(0.0);
    let cutoff = 1e-8 * max;
    let rank = if max > 0.0 { sv.iter().filter(|s| **s > cutoff).count() } else { 0 };
    let warning = if rank > 0 && rank < sv.len() && sv[rank - 1] < 10.0 * sv[rank].max(cutoff) {
        let msg = format!(
            "weak singular-value gap: {:e} kept vs {:e} dropped",
            sv[rank - 1], sv[rank]
        );
        log::warn!("{msg}");
        Some(msg)
    } else {
        None
    };
    Ok(ReachabilityReport {
        depth,
        rank,
        singular_values: sv,
        vectors: vectors.len(),
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{reference_osnr_link, SeparableLogGame, SeparablePricing};
    use crate::design::design_price;
    use crate::model::{ConstraintSet, Pricing, QuadraticUtility, Utility};

    fn decay_game() -> GameSpec {
        let u = QuadraticUtility::new(vec![0.0; 2], DMatrix::identity(2, 2) * 2.0).unwrap();
        GameSpec::new(
            Utility::Quadratic(u),
            Pricing::Linear,
            ConstraintSet::uniform_box(2, -5.0, 5.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn linear_decay_matches_exponential() {
        let g = decay_game();
        let s = FlowSettings {
            dt: 1e-3,
            horizon: 1.0,
            integrator: Integrator::Rk4,
            ..Default::default()
        };
        let r = game_flow(&g, &ConstantPrice(vec![0.0, 0.0]), &[1.0, -2.0], &s).unwrap();
        let e = (-2.0f64).exp();
        assert!((r.x[0] - e).abs() < 1e-10);
        assert!((r.x[1] + 2.0 * e).abs() < 1e-10);
    }

    #[test]
    fn scalar_gain_arithmetic() {
        let plant = LinearizedPlant {
            a: DMatrix::from_element(1, 1, 2.0),
            b: DMatrix::from_element(1, 1, -1.0),
        };
        let spec = ControllerSpec {
            mode: ControlMode::Proportional,
            lambda_p: vec![3.0],
            lambda_i: None,
            target: vec![0.0],
        };
        let g = regulation_gain(&plant, &spec).unwrap();
        assert!((g.k[(0, 0)] - 5.0).abs() < 1e-15);
        assert!((g.closed_loop_real[0] + 3.0).abs() < 1e-12);
    }

    #[test]
    fn steady_state_equals_design() {
        let g = reference_osnr_link().into_game(1.0).unwrap();
        let t = [0.0134, 0.0128];
        let c = steady_state_price(&g, &t).unwrap();
        let d = design_price(&g, &t).unwrap();
        assert!(max_abs_diff(&c, &d.prices) < 1e-10);
    }

    #[test]
    fn osnr_plant_structure() {
        let link = reference_osnr_link();
        let t = [0.0134, 0.0128];
        let p = linearize(&link.clone().into_game(1.0).unwrap(), &t).unwrap();
        assert_eq!(p.b, -DMatrix::identity(2, 2));
        assert!((p.a - link.plant_matrix(&t)).abs().max() < 1e-9);
    }

    #[test]
    fn equilibrium_is_invariant() {
        let g = reference_osnr_link().into_game(1.0).unwrap();
        let t = vec![0.0134, 0.0128];
        let spec = ControllerSpec {
            mode: ControlMode::Proportional,
            lambda_p: vec![5.0, 5.0],
            lambda_i: None,
            target: t.clone(),
        };
        let s = FlowSettings {
            horizon: 0.1,
            ..Default::default()
        };
        let out = regulate(&g, &spec, &t, &s).unwrap();
        assert!(out.final_error < 1e-14);
    }

    #[test]
    fn divergence_is_reported() {
        // Euler on ẋ = −2x with dt = 1.5 multiplies x by −2 every step
        let g = decay_game();
        let s = FlowSettings {
            dt: 1.5,
            horizon: 1000.0,
            ..Default::default()
        };
        let err = game_flow(&g, &ConstantPrice(vec![0.0, 0.0]), &[1.0, 1.0], &s);
        assert!(matches!(err, Err(GameError::Divergence { .. })));
    }

    #[test]
    fn reachability_linear_and_quadratic_pricing() {
        let sep = SeparableLogGame::new(vec![3.0, 2.0], vec![1.0, 0.5], SeparablePricing::LinearSum).unwrap();
        let linear = GameSpec::new(
            Utility::SeparableLog(sep.clone()),
            Pricing::Linear,
            ConstraintSet::uniform_box(2, 0.0, 10.0).unwrap(),
        )
        .unwrap();
        assert_eq!(reachability_rank(&linear, &[1.0, 1.0], &[0.5, 0.5], 0).unwrap().rank, 2);

        let quad = GameSpec::new(
            Utility::SeparableLog(sep),
            Pricing::Quadratic { scale: 0.5 },
            ConstraintSet::uniform_box(2, -0.5, 10.0).unwrap(),
        )
        .unwrap();
        assert_eq!(reachability_rank(&quad, &[1.0, 1.0], &[0.0, 0.0], 0).unwrap().rank, 0);
        assert_eq!(reachability_rank(&quad, &[1.0, 1.0], &[0.0, 0.0], 1).unwrap().rank, 2);
        assert_eq!(reachability_rank(&quad, &[1.0, 1.0], &[0.0, 0.0], 2).unwrap().rank, 2);
    }
}
