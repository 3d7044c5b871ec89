//! The game abstraction shared by every other module.
//!
//! Player `i` minimises `J_i(α_i, x) = α_i·p_i(x) − U_i(x)` over its own action
//! `x_i`. Utilities and pricings are closed analytic families so that first and
//! second partials are exact; the `Opaque` variants fall back to finite
//! differences.

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::catalog::{OpticalOsnrGame, SeparableLogGame, WirelessSirGame};
use crate::error::{check_len, GameError, Result};

/// Player actions `x ∈ Ω`. Entries are finite; sign is left to the game.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
#[serde(transparent)]
pub struct ActionVector(Vec<f64>);

impl ActionVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GameError::Numerics(format!(
                "action entry {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        max_abs_diff(&self.0, other)
    }
}

impl Deref for ActionVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<ActionVector> for Vec<f64> {
    fn from(v: ActionVector) -> Self {
        v.0
    }
}

/// Nonnegative per-player prices.
///
/// Negative inputs are clamped to zero rather than rejected: pricing dynamics
/// can step transiently below the orthant. Clamped indices are kept so callers
/// can report them.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceVector {
    values: Vec<f64>,
    clamped: Vec<usize>,
}

impl PriceVector {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GameError::Numerics(format!(
                "price entry {i} is not finite ({})",
                values[i]
            )));
        }
        let mut clamped = Vec::new();
        for (i, v) in values.iter_mut().enumerate() {
            if *v < 0.0 {
                log::warn!("price α_{i} = {v} clamped to 0");
                *v = 0.0;
                clamped.push(i);
            }
        }
        Ok(Self { values, clamped })
    }

    /// Indices that were negative on construction.
    pub fn clamped(&self) -> &[usize] {
        &self.clamped
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

impl Deref for PriceVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdScheme {
    Central,
    Forward,
}

/// Finite-difference settings. The step for coordinate `i` is
/// `fd_step · max(1, |x_i|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffSettings {
    pub fd_step: f64,
    pub scheme: FdScheme,
}

impl Default for DiffSettings {
    fn default() -> Self {
        Self {
            fd_step: 1e-6,
            scheme: FdScheme::Central,
        }
    }
}

impl DiffSettings {
    pub fn step_at(&self, value: f64) -> f64 {
        self.fd_step * value.abs().max(1.0)
    }

    /// Derivative of a scalar function of one coordinate.
    pub fn derivative(&self, x: &[f64], i: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
        let h = self.step_at(x[i]);
        let mut probe = x.to_vec();
        match self.scheme {
            FdScheme::Central => {
                probe[i] = x[i] + h;
                let up = f(&probe);
                probe[i] = x[i] - h;
                let down = f(&probe);
                (up - down) / (2.0 * h)
            }
            FdScheme::Forward => {
                probe[i] = x[i] + h;
                (f(&probe) - f(x)) / h
            }
        }
    }

    /// Jacobian of a vector map, column by column.
    pub fn jacobian(
        &self,
        x: &[f64],
        rows: usize,
        f: impl Fn(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<DMatrix<f64>> {
        let n = x.len();
        let mut jac = DMatrix::zeros(rows, n);
        let base = match self.scheme {
            FdScheme::Forward => Some(f(x)?),
            FdScheme::Central => None,
        };
        let mut probe = x.to_vec();
        for j in 0..n {
            let h = self.step_at(x[j]);
            probe[j] = x[j] + h;
            let up = f(&probe)?;
            let col: Vec<f64> = match &base {
                Some(b) => up.iter().zip(b).map(|(u, b)| (u - b) / h).collect(),
                None => {
                    probe[j] = x[j] - h;
                    let down = f(&probe)?;
                    up.iter()
                        .zip(&down)
                        .map(|(u, d)| (u - d) / (2.0 * h))
                        .collect()
                }
            };
            probe[j] = x[j];
            for (r, v) in col.into_iter().enumerate() {
                if !v.is_finite() {
                    return Err(GameError::Numerics(format!(
                        "finite difference of column {j} is not finite near {x:?}"
                    )));
                }
                jac[(r, j)] = v;
            }
        }
        Ok(jac)
    }
}

pub type UtilityFn = Arc<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>;

/// Utility known only through its values. Derivatives come from finite
/// differences.
#[derive(Clone)]
pub struct OpaqueUtility {
    pub players: usize,
    pub eval: UtilityFn,
}

impl OpaqueUtility {
    pub fn new(players: usize, eval: impl Fn(usize, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            players,
            eval: Arc::new(eval),
        }
    }
}

impl fmt::Debug for OpaqueUtility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OpaqueUtility")
            .field("players", &self.players)
            .finish_non_exhaustive()
    }
}

/// `U_i(x) = r_i x_i − ½ M_ii x_i² − Σ_{j≠i} M_ij x_i x_j`, so that
/// `∂U_i/∂x_i = r_i − (M x)_i` and the utility part of `Q` is `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticUtility {
    pub linear: Vec<f64>,
    pub coupling: DMatrix<f64>,
}

impl QuadraticUtility {
    pub fn new(linear: Vec<f64>, coupling: DMatrix<f64>) -> Result<Self> {
        check_len("quadratic coupling rows", linear.len(), coupling.nrows())?;
        check_len("quadratic coupling cols", linear.len(), coupling.ncols())?;
        Ok(Self { linear, coupling })
    }

    fn value(&self, i: usize, x: &[f64]) -> f64 {
        let mut u = self.linear[i] * x[i] - 0.5 * self.coupling[(i, i)] * x[i] * x[i];
        for (j, xj) in x.iter().enumerate() {
            if j != i {
                u -= self.coupling[(i, j)] * x[i] * xj;
            }
        }
        u
    }

    fn own_partial(&self, i: usize, x: &[f64]) -> f64 {
        self.linear[i] - (0..x.len()).map(|j| self.coupling[(i, j)] * x[j]).sum::<f64>()
    }

    fn partials(&self, i: usize, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|j| {
                if j == i {
                    self.own_partial(i, x)
                } else {
                    -self.coupling[(i, j)] * x[i]
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum Utility {
    Quadratic(QuadraticUtility),
    SeparableLog(SeparableLogGame),
    Sir(WirelessSirGame),
    Osnr(OpticalOsnrGame),
    Opaque(OpaqueUtility),
}

impl Utility {
    pub fn players(&self) -> usize {
        match self {
            Utility::Quadratic(q) => q.linear.len(),
            Utility::SeparableLog(g) => g.n_players(),
            Utility::Sir(g) => g.n_players(),
            Utility::Osnr(g) => g.n_players(),
            Utility::Opaque(o) => o.players,
        }
    }

    pub fn is_analytic(&self) -> bool {
        !matches!(self, Utility::Opaque(_))
    }

    pub fn value(&self, i: usize, x: &[f64]) -> f64 {
        match self {
            Utility::Quadratic(q) => q.value(i, x),
            Utility::SeparableLog(g) => g.utility(i, x),
            Utility::Sir(g) => g.utility(i, x),
            Utility::Osnr(g) => g.utility(i, x),
            Utility::Opaque(o) => (o.eval)(i, x),
        }
    }

    /// `∂U_i/∂x_i`, `None` for opaque utilities.
    pub fn own_partial(&self, i: usize, x: &[f64]) -> Option<f64> {
        match self {
            Utility::Quadratic(q) => Some(q.own_partial(i, x)),
            Utility::SeparableLog(g) => Some(g.utility_own_partial(i, x)),
            Utility::Sir(g) => Some(g.utility_own_partial(i, x)),
            Utility::Osnr(g) => Some(g.utility_own_partial(i, x)),
            Utility::Opaque(_) => None,
        }
    }

    /// Full gradient of `U_i` with respect to every action.
    pub fn partials(&self, i: usize, x: &[f64]) -> Option<Vec<f64>> {
        match self {
            Utility::Quadratic(q) => Some(q.partials(i, x)),
            Utility::SeparableLog(g) => Some(g.utility_partials(i, x)),
            Utility::Sir(g) => Some(g.utility_partials(i, x)),
            Utility::Osnr(g) => Some(g.utility_partials(i, x)),
            Utility::Opaque(_) => None,
        }
    }

    /// Row `∂²U_i/∂x_i∂x_j` over `j`.
    pub fn own_partial_row(&self, i: usize, x: &[f64]) -> Option<Vec<f64>> {
        match self {
            Utility::Quadratic(q) => Some((0..x.len()).map(|j| -q.coupling[(i, j)]).collect()),
            Utility::SeparableLog(g) => Some(g.utility_own_row(i, x)),
            Utility::Sir(g) => Some(g.utility_own_row(i, x)),
            Utility::Osnr(g) => Some(g.utility_own_row(i, x)),
            Utility::Opaque(_) => None,
        }
    }
}

pub type PricingFn = Arc<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct OpaquePricing(pub PricingFn);

impl fmt::Debug for OpaquePricing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("OpaquePricing(..)")
    }
}

/// Pricing families `p_i(x)`.
#[derive(Debug, Clone)]
pub enum Pricing {
    /// `p_i = x_i`
    Linear,
    /// `p_i = Σ_j x_j`
    LinearSum,
    /// `p_i = scale · x_i²`
    Quadratic { scale: f64 },
    /// `p_i = Σ_j x_j²`
    QuadraticSum,
    /// `p_i = exp(x_i)`
    Exponential,
    /// `p_i = exp(Σ_j x_j)`
    ExpSum,
    Opaque(OpaquePricing),
}

impl Pricing {
    pub fn is_analytic(&self) -> bool {
        !matches!(self, Pricing::Opaque(_))
    }

    pub fn value(&self, i: usize, x: &[f64]) -> f64 {
        match self {
            Pricing::Linear => x[i],
            Pricing::LinearSum => x.iter().sum(),
            Pricing::Quadratic { scale } => scale * x[i] * x[i],
            Pricing::QuadraticSum => x.iter().map(|v| v * v).sum(),
            Pricing::Exponential => x[i].exp(),
            Pricing::ExpSum => x.iter().sum::<f64>().exp(),
            Pricing::Opaque(p) => (p.0)(i, x),
        }
    }

    /// `∂p_i/∂x_i`
    pub fn own_slope(&self, i: usize, x: &[f64]) -> Option<f64> {
        Some(match self {
            Pricing::Linear | Pricing::LinearSum => 1.0,
            Pricing::Quadratic { scale } => 2.0 * scale * x[i],
            Pricing::QuadraticSum => 2.0 * x[i],
            Pricing::Exponential => x[i].exp(),
            Pricing::ExpSum => x.iter().sum::<f64>().exp(),
            Pricing::Opaque(_) => return None,
        })
    }

    /// Row `∂²p_i/∂x_i∂x_j` over `j`.
    pub fn slope_row(&self, i: usize, x: &[f64]) -> Option<Vec<f64>> {
        let n = x.len();
        let diag = |v: f64| (0..n).map(|j| if j == i { v } else { 0.0 }).collect();
        Some(match self {
            Pricing::Linear | Pricing::LinearSum => vec![0.0; n],
            Pricing::Quadratic { scale } => diag(2.0 * scale),
            Pricing::QuadraticSum => diag(2.0),
            Pricing::Exponential => diag(x[i].exp()),
            Pricing::ExpSum => vec![x.iter().sum::<f64>().exp(); n],
            Pricing::Opaque(_) => return None,
        })
    }
}

/// One scalar convex constraint `h(x) ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// `bound − x_index ≤ 0`
    Lower { index: usize, bound: f64 },
    /// `x_index − bound ≤ 0`
    Upper { index: usize, bound: f64 },
    /// `coeffs·x − rhs ≤ 0`
    Linear { coeffs: Vec<f64>, rhs: f64 },
}

impl Constraint {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Constraint::Lower { index, bound } => bound - x[*index],
            Constraint::Upper { index, bound } => x[*index] - bound,
            Constraint::Linear { coeffs, rhs } => {
                coeffs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() - rhs
            }
        }
    }

    /// `∂h/∂x_i`
    pub fn partial(&self, i: usize) -> f64 {
        match self {
            Constraint::Lower { index, .. } if *index == i => -1.0,
            Constraint::Upper { index, .. } if *index == i => 1.0,
            Constraint::Linear { coeffs, .. } => coeffs[i],
            _ => 0.0,
        }
    }

    fn is_box(&self) -> bool {
        !matches!(self, Constraint::Linear { .. })
    }
}

/// Feasible set `Ω = {x : h_j(x) ≤ 0}` together with a box hull enclosing it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    constraints: Vec<Constraint>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ConstraintSet {
    /// Box `lower ≤ x ≤ upper`, expressed as `2N` constraints.
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_len("box upper bounds", lower.len(), upper.len())?;
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(GameError::Domain(format!(
                    "box hull coordinate {i} must satisfy finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        let mut constraints = Vec::with_capacity(2 * lower.len());
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            constraints.push(Constraint::Lower { index: i, bound: lo });
            constraints.push(Constraint::Upper { index: i, bound: hi });
        }
        Ok(Self {
            constraints,
            lower,
            upper,
        })
    }

    pub fn uniform_box(n: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::boxed(vec![lower; n], vec![upper; n])
    }

    /// Adds `coeffs·x ≤ rhs`, e.g. a capacity constraint.
    pub fn with_linear(mut self, coeffs: Vec<f64>, rhs: f64) -> Result<Self> {
        check_len("linear constraint coefficients", self.dim(), coeffs.len())?;
        self.constraints.push(Constraint::Linear { coeffs, rhs });
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn has_general_constraints(&self) -> bool {
        self.constraints.iter().any(|c| !c.is_box())
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    /// Clamp onto the box hull.
    pub fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.value(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.max_violation(x) <= tol
    }

    /// Largest slack `min_j −h_j(x)` over the given probe points. Positive
    /// means a strictly interior point was found.
    pub fn feasibility_probe<'a>(&self, points: impl IntoIterator<Item = &'a [f64]>) -> f64 {
        let mut best = -self.max_violation(&self.center());
        for p in points {
            best = best.max(-self.max_violation(p));
        }
        best
    }
}

/// A parametric game of the form `J_i = α_i p_i(x) − U_i(x)`.
#[derive(Debug, Clone)]
pub struct GameSpec {
    n: usize,
    utility: Utility,
    pricing: Pricing,
    constraints: ConstraintSet,
    diff: DiffSettings,
}

impl GameSpec {
    pub fn new(utility: Utility, pricing: Pricing, constraints: ConstraintSet) -> Result<Self> {
        let n = utility.players();
        if n == 0 {
            return Err(GameError::Domain("a game needs at least one player".into()));
        }
        check_len("constraint set dimension", n, constraints.dim())?;
        Ok(Self {
            n,
            utility,
            pricing,
            constraints,
            diff: DiffSettings::default(),
        })
    }

    pub fn with_diff(mut self, diff: DiffSettings) -> Self {
        self.diff = diff;
        self
    }

    pub fn n_players(&self) -> usize {
        self.n
    }

    pub fn utility(&self) -> &Utility {
        &self.utility
    }

    pub fn pricing(&self) -> &Pricing {
        &self.pricing
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn diff(&self) -> &DiffSettings {
        &self.diff
    }

    pub fn is_analytic(&self) -> bool {
        self.utility.is_analytic() && self.pricing.is_analytic()
    }

    pub(crate) fn check_x(&self, x: &[f64]) -> Result<()> {
        check_len("action vector", self.n, x.len())
    }

    pub(crate) fn check_alpha(&self, alpha: &[f64]) -> Result<()> {
        check_len("price vector", self.n, alpha.len())
    }

    /// `J_i(α_i, x) = α_i p_i(x) − U_i(x)`.
    pub fn cost(&self, alpha: &[f64], x: &[f64], i: usize) -> Result<f64> {
        self.check_alpha(alpha)?;
        self.check_x(x)?;
        if i >= self.n {
            return Err(GameError::Dimension {
                what: "player index",
                expected: self.n,
                got: i,
            });
        }
        Ok(alpha[i] * self.pricing.value(i, x) - self.utility.value(i, x))
    }

    /// `f(x)`: the vector of `∂U_i/∂x_i`.
    pub fn utility_own_partials(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let out: Vec<f64> = (0..self.n)
            .map(|i| {
                self.utility.own_partial(i, x).unwrap_or_else(|| {
                    self.diff.derivative(x, i, |p| self.utility.value(i, p))
                })
            })
            .collect();
        finite_or("utility partial", out)
    }

    /// The vector of `∂p_i/∂x_i`.
    pub fn pricing_slopes(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let out: Vec<f64> = (0..self.n)
            .map(|i| {
                self.pricing.own_slope(i, x).unwrap_or_else(|| {
                    self.diff.derivative(x, i, |p| self.pricing.value(i, p))
                })
            })
            .collect();
        finite_or("pricing slope", out)
    }

    /// Pseudo-gradient `q_i(x) = α_i ∂p_i/∂x_i − ∂U_i/∂x_i`.
    pub fn pseudo_gradient(&self, alpha: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_alpha(alpha)?;
        let f = self.utility_own_partials(x)?;
        let slopes = self.pricing_slopes(x)?;
        let q: Vec<f64> = (0..self.n).map(|i| alpha[i] * slopes[i] - f[i]).collect();
        finite_or("pseudo-gradient", q)
    }

    /// Jacobian `Q(x)` of the pseudo-gradient. Analytic when both families
    /// supply second partials, finite differences of `q` otherwise.
    pub fn jacobian_q(&self, alpha: &[f64], x: &[f64], settings: &DiffSettings) -> Result<DMatrix<f64>> {
        self.check_alpha(alpha)?;
        self.check_x(x)?;
        if self.is_analytic() {
            let mut q = DMatrix::zeros(self.n, self.n);
            for i in 0..self.n {
                let u = self.utility.own_partial_row(i, x).expect("analytic utility");
                let p = self.pricing.slope_row(i, x).expect("analytic pricing");
                for j in 0..self.n {
                    q[(i, j)] = alpha[i] * p[j] - u[j];
                }
            }
            if q.iter().all(|v| v.is_finite()) {
                return Ok(q);
            }
            return Err(GameError::Numerics(format!("Q(x) not finite at {x:?}")));
        }
        self.jacobian_q_fd(alpha, x, settings)
    }

    /// Finite-difference Jacobian of the pseudo-gradient regardless of the
    /// families' analytic capabilities.
    pub fn jacobian_q_fd(&self, alpha: &[f64], x: &[f64], settings: &DiffSettings) -> Result<DMatrix<f64>> {
        settings.jacobian(x, self.n, |p| self.pseudo_gradient(alpha, p))
    }

    /// Diagonal of `Q`: `∂²J_i/∂x_i²`.
    pub fn own_curvature(&self, alpha: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_alpha(alpha)?;
        self.check_x(x)?;
        (0..self.n)
            .map(|i| {
                let u = self.utility.own_partial_row(i, x).map(|r| r[i]);
                let p = self.pricing.slope_row(i, x).map(|r| r[i]);
                let v = match (u, p) {
                    (Some(u), Some(p)) => alpha[i] * p - u,
                    _ => self.diff.derivative(x, i, |probe| {
                        self.pseudo_gradient(alpha, probe)
                            .map(|q| q[i])
                            .unwrap_or(f64::NAN)
                    }),
                };
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(GameError::Numerics(format!("own curvature {i} not finite")))
                }
            })
            .collect()
    }

    /// KKT residual of the players' problems with multipliers `φ_{i,j}` for
    /// player `i` and constraint `j`: the worst stationarity error plus the
    /// worst complementary-slackness product. An empty multiplier slice means
    /// all multipliers are zero.
    pub fn kkt_residual(&self, alpha: &[f64], x: &[f64], multipliers: &[Vec<f64>]) -> Result<f64> {
        let q = self.pseudo_gradient(alpha, x)?;
        let cons = self.constraints.constraints();
        if !multipliers.is_empty() {
            check_len("multiplier rows", self.n, multipliers.len())?;
        }
        let mut stationarity = 0.0_f64;
        let mut slackness = 0.0_f64;
        for i in 0..self.n {
            let mut s = q[i];
            if let Some(phi) = multipliers.get(i) {
                check_len("multipliers per player", cons.len(), phi.len())?;
                for (j, (c, &m)) in cons.iter().zip(phi).enumerate() {
                    if m < 0.0 {
                        return Err(GameError::Domain(format!(
                            "multiplier φ[{i}][{j}] = {m} is negative"
                        )));
                    }
                    s += m * c.partial(i);
                    slackness = slackness.max((m * c.value(x)).abs());
                }
            }
            stationarity = stationarity.max(s.abs());
        }
        Ok(stationarity + slackness)
    }

    /// Per-player QoS metric for reporting: SIR or OSNR in dB for the
    /// catalog power-control games, the utility value otherwise.
    pub fn metrics(&self, x: &[f64]) -> Vec<f64> {
        match &self.utility {
            Utility::Sir(g) => (0..self.n)
                .map(|i| g.sir(x, i).map(to_db).unwrap_or(f64::NAN))
                .collect(),
            Utility::Osnr(g) => (0..self.n)
                .map(|i| g.osnr(x, i).map(to_db).unwrap_or(f64::NAN))
                .collect(),
            u => (0..self.n).map(|i| u.value(i, x)).collect(),
        }
    }
}

pub fn to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn finite_or(what: &str, v: Vec<f64>) -> Result<Vec<f64>> {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(v),
        Some(i) => Err(GameError::Numerics(format!("{what} {i} is not finite ({})", v[i]))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_cost_by_hand() {
        let g = crate::catalog::SeparableLogGame::new(vec![3.0], vec![1.0], crate::catalog::SeparablePricing::LinearSum)
            .unwrap()
            .into_game(10.0)
            .unwrap();
        // 1·0.5 − (3 ln 1.5 − 0.5)
        let j = g.cost(&[1.0], &[0.5], 0).unwrap();
        assert!((j - (-0.2163953)).abs() < 1e-7, "{j}");
    }

    #[test]
    fn osnr_rounded_equilibrium_is_near_stationary() {
        // x and α are known to 3 significant digits; q is bounded by the
        // rounding half-widths pushed through ∂q/∂α = I and Q
        let g = crate::catalog::reference_osnr_link().into_game(1.0).unwrap();
        let (x, alpha) = ([0.0134, 0.0128], [73.4, 76.9]);
        let q = g.pseudo_gradient(&alpha, &x).unwrap();
        let jac = g.jacobian_q(&alpha, &x, &DiffSettings::default()).unwrap();
        for i in 0..2 {
            let bound = 0.05 + (0..2).map(|j| jac[(i, j)].abs() * 5e-5).sum::<f64>();
            assert!(q[i].abs() < bound, "player {i}: |q| = {} vs {bound}", q[i].abs());
        }
        let kkt = g.kkt_residual(&alpha, &x, &[]).unwrap();
        assert!((kkt - q.iter().fold(0.0_f64, |m, v| m.max(v.abs()))).abs() < 1e-12);
    }

    fn quadratic_game(n: usize) -> GameSpec {
        // U_i = −x_i², p_i = x_i
        let u = QuadraticUtility::new(vec![0.0; n], DMatrix::identity(n, n) * 2.0).unwrap();
        GameSpec::new(
            Utility::Quadratic(u),
            Pricing::Linear,
            ConstraintSet::uniform_box(n, -5.0, 5.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_price_zero_utility_costs_nothing() {
        let u = QuadraticUtility::new(vec![0.0; 2], DMatrix::zeros(2, 2)).unwrap();
        let g = GameSpec::new(
            Utility::Quadratic(u),
            Pricing::LinearSum,
            ConstraintSet::uniform_box(2, 0.0, 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(g.cost(&[0.0, 0.0], &[0.3, 0.7], 1).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_pseudo_gradient_and_q() {
        let g = quadratic_game(2);
        let q = g.pseudo_gradient(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(q, vec![2.0, 2.0]);
        for x in [[0.0, 0.0], [1.0, -3.0]] {
            let m = g.jacobian_q(&[0.3, 0.1], &x, &DiffSettings::default()).unwrap();
            assert_eq!(m, DMatrix::identity(2, 2) * 2.0);
        }
    }

    #[test]
    fn dimension_errors() {
        let g = quadratic_game(2);
        assert!(matches!(
            g.cost(&[1.0], &[1.0, 1.0], 0),
            Err(GameError::Dimension { .. })
        ));
        assert!(matches!(
            g.pseudo_gradient(&[1.0, 1.0], &[1.0]),
            Err(GameError::Dimension { .. })
        ));
        assert!(g.cost(&[1.0, 1.0], &[1.0, 1.0], 2).is_err());
    }

    #[test]
    fn negative_prices_are_clamped_and_recorded() {
        let p = PriceVector::new(vec![1.0, -0.5, 2.0]).unwrap();
        assert_eq!(&*p, &[1.0, 0.0, 2.0]);
        assert_eq!(p.clamped(), &[1]);
        assert!(PriceVector::new(vec![f64::NAN]).is_err());
        assert!(ActionVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn kkt_inner_point_reduces_to_stationarity() {
        let g = quadratic_game(2);
        let x = [0.25, -0.5];
        let alpha = [0.2, 0.1];
        let q = g.pseudo_gradient(&alpha, &x).unwrap();
        let r = g.kkt_residual(&alpha, &x, &[]).unwrap();
        assert_eq!(r, inf_norm(&q));
        let zeros = vec![vec![0.0; 4]; 2];
        assert_eq!(g.kkt_residual(&alpha, &x, &zeros).unwrap(), r);
    }

    #[test]
    fn kkt_boundary_point_with_upper_multiplier() {
        // single player, U = 3x − x²/2 on [0, 1]: unconstrained optimum 3 lies
        // beyond the cap, so the NE sits at x = 1 with φ_upper = −∂J/∂x.
        let u = QuadraticUtility::new(vec![3.0], DMatrix::from_element(1, 1, 1.0)).unwrap();
        let g = GameSpec::new(
            Utility::Quadratic(u),
            Pricing::Linear,
            ConstraintSet::uniform_box(1, 0.0, 1.0).unwrap(),
        )
        .unwrap();
        let alpha = [0.5];
        let dj = g.pseudo_gradient(&alpha, &[1.0]).unwrap()[0];
        assert!(dj < 0.0);
        let phi = vec![vec![0.0, -dj]];
        assert!(g.kkt_residual(&alpha, &[1.0], &phi).unwrap() < 1e-15);
        // the same multiplier at an interior point violates slackness
        assert!(g.kkt_residual(&alpha, &[0.5], &phi).unwrap() > 0.1);
        assert!(g.kkt_residual(&alpha, &[1.0], &[vec![0.0, -1.0]]).is_err());
    }

    #[test]
    fn pricing_rows_match_slopes() {
        let x = [0.3, -0.2, 0.7];
        let d = DiffSettings::default();
        for p in [
            Pricing::Linear,
            Pricing::LinearSum,
            Pricing::Quadratic { scale: 0.5 },
            Pricing::QuadraticSum,
            Pricing::Exponential,
            Pricing::ExpSum,
        ] {
            for i in 0..3 {
                let slope = p.own_slope(i, &x).unwrap();
                let fd = d.derivative(&x, i, |z| p.value(i, z));
                assert!((slope - fd).abs() < 1e-8, "{p:?}");
                let row = p.slope_row(i, &x).unwrap();
                for j in 0..3 {
                    let fd = d.derivative(&x, j, |z| p.own_slope(i, z).unwrap());
                    assert!((row[j] - fd).abs() < 1e-7, "{p:?} row {i},{j}");
                }
            }
        }
    }

    #[test]
    fn box_set_basics() {
        let c = ConstraintSet::boxed(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(c.constraints().len(), 4);
        let mut x = [2.0, -3.0];
        c.project(&mut x);
        assert_eq!(x, [1.0, -1.0]);
        assert!(c.contains(&[0.5, 0.0], 0.0));
        assert!(c.feasibility_probe(std::iter::empty()) > 0.0);
        assert!(ConstraintSet::boxed(vec![1.0], vec![0.0]).is_err());
        let capped = c.with_linear(vec![1.0, 1.0], 0.25).unwrap();
        assert!(capped.has_general_constraints());
        assert!(!capped.contains(&[0.5, 0.0], 0.0));
    }
}
