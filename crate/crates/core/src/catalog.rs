//! Concrete game families with closed-form equilibria: uplink SIR power
//! control, optical OSNR power control, and a separable logarithmic game.
//!
//! Units follow the power-control convention used throughout the crate:
//! powers and noise in mW, prices in 1/mW.

use nalgebra::DMatrix;

use crate::error::{check_len, GameError, Result};
use crate::linalg;
use crate::model::{ActionVector, ConstraintSet, GameSpec, Pricing, Utility};

/// An equilibrium computed from a closed form. Entries outside the model's
/// validity region (negative powers) are kept and reported in `warnings`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormNe {
    pub x: ActionVector,
    pub warnings: Vec<String>,
}

impl ClosedFormNe {
    fn new(x: Vec<f64>) -> Result<Self> {
        let warnings = x
            .iter()
            .enumerate()
            .filter(|(_, v)| **v < 0.0)
            .map(|(i, v)| format!("x*_{i} = {v:e} is negative; the inner-equilibrium closed form does not apply"))
            .collect::<Vec<_>>();
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(Self {
            x: ActionVector::new(x)?,
            warnings,
        })
    }

    pub fn is_nonnegative(&self) -> bool {
        self.warnings.is_empty()
    }
}

fn check_positive(what: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
        None => Ok(()),
        Some(i) => Err(GameError::Domain(format!("{what}[{i}] = {} must be > 0", v[i]))),
    }
}

fn check_nonnegative(what: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
        None => Ok(()),
        Some(i) => Err(GameError::Domain(format!("{what}[{i}] = {} must be ≥ 0", v[i]))),
    }
}

/// Single-cell uplink power control with `U_i = β_i ln(1 + s_i(x))` and
/// `s_i = L h_i x_i / (Σ_{j≠i} h_j x_j + σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WirelessSirGame {
    gains: Vec<f64>,
    noise: f64,
    spreading_gain: f64,
    beta: Vec<f64>,
    target_sir: Option<Vec<f64>>,
}

impl WirelessSirGame {
    pub fn new(gains: Vec<f64>, noise: f64, spreading_gain: f64, beta: Vec<f64>) -> Result<Self> {
        check_len("utility weights", gains.len(), beta.len())?;
        check_positive("channel gain", &gains)?;
        check_positive("utility weight", &beta)?;
        if !(spreading_gain.is_finite() && spreading_gain > 0.0) {
            return Err(GameError::Domain(format!("spreading gain {spreading_gain} must be > 0")));
        }
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(GameError::Domain(format!("noise power {noise} must be ≥ 0")));
        }
        Ok(Self {
            gains,
            noise,
            spreading_gain,
            beta,
            target_sir: None,
        })
    }

    pub fn with_target_sir(mut self, target: Vec<f64>) -> Result<Self> {
        check_len("target SIR", self.gains.len(), target.len())?;
        check_nonnegative("target SIR", &target)?;
        self.target_sir = Some(target);
        Ok(self)
    }

    pub fn n_players(&self) -> usize {
        self.gains.len()
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn spreading_gain(&self) -> f64 {
        self.spreading_gain
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn target_sir(&self) -> Option<&[f64]> {
        self.target_sir.as_deref()
    }

    /// `Σ_{j≠i} h_j x_j + σ²`
    pub fn interference(&self, i: usize, x: &[f64]) -> f64 {
        self.gains
            .iter()
            .zip(x)
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, (h, v))| h * v)
            .sum::<f64>()
            + self.noise
    }

    fn received(&self, i: usize, x: &[f64]) -> f64 {
        self.spreading_gain * self.gains[i] * x[i]
    }

    pub fn sir(&self, x: &[f64], i: usize) -> Result<f64> {
        check_len("action vector", self.n_players(), x.len())?;
        if i >= self.n_players() {
            return Err(GameError::Dimension {
                what: "player index",
                expected: self.n_players(),
                got: i,
            });
        }
        check_nonnegative("power", x)?;
        let interference = self.interference(i, x);
        if interference <= 0.0 {
            return Err(GameError::Domain(format!(
                "SIR of player {i} undefined: zero noise and zero interference"
            )));
        }
        Ok(self.received(i, x) / interference)
    }

    /// `A_ii = 1`, `A_ij = h_j / (L h_i)`.
    pub fn matrix_a(&self) -> DMatrix<f64> {
        let n = self.n_players();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else {
                self.gains[j] / (self.spreading_gain * self.gains[i])
            }
        })
    }

    /// QoS matrix `S` for the given targets: `S_ii = h_i`, `S_ij = −h_j s̄_i / L`.
    pub fn qos_matrix(&self, target: &[f64]) -> Result<DMatrix<f64>> {
        check_len("target SIR", self.n_players(), target.len())?;
        let n = self.n_players();
        Ok(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.gains[i]
            } else {
                -self.gains[j] * target[i] / self.spreading_gain
            }
        }))
    }

    /// `b_i = s̄_i σ² / L`
    pub fn qos_vector(&self, target: &[f64]) -> Vec<f64> {
        target
            .iter()
            .map(|s| s * self.noise / self.spreading_gain)
            .collect()
    }

    fn stored_target(&self) -> Result<&[f64]> {
        self.target_sir
            .as_deref()
            .ok_or_else(|| GameError::Domain("no target SIR levels configured".into()))
    }

    pub fn matrix_s(&self) -> Result<DMatrix<f64>> {
        self.qos_matrix(self.stored_target()?)
    }

    pub fn vector_b(&self) -> Result<Vec<f64>> {
        Ok(self.qos_vector(self.stored_target()?))
    }

    /// `c_i = β_i/α_i − σ²/(L h_i)`.
    pub fn ne_rhs(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        check_len("price vector", self.n_players(), alpha.len())?;
        alpha
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                if !(a > 0.0) {
                    return Err(GameError::Domain(format!(
                        "price α_{i} = {a} must be > 0 for the closed-form equilibrium"
                    )));
                }
                Ok(self.beta[i] / a - self.noise / (self.spreading_gain * self.gains[i]))
            })
            .collect()
    }

    /// Inner equilibrium under linear pricing: `A x* = c`.
    pub fn wireless_ne(&self, alpha: &[f64]) -> Result<ClosedFormNe> {
        let c = self.ne_rhs(alpha)?;
        ClosedFormNe::new(linalg::solve(&self.matrix_a(), &c, "SIR equilibrium matrix A")?)
    }

    /// `∂x*/∂α = A⁻¹ diag(−β_i/α_i²)`.
    pub fn ne_jacobian(&self, alpha: &[f64]) -> Result<DMatrix<f64>> {
        self.ne_rhs(alpha)?;
        let inv = linalg::inverse(&self.matrix_a(), "SIR equilibrium matrix A")?;
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            alpha.len(),
            alpha.iter().zip(&self.beta).map(|(a, b)| -b / (a * a)),
        ));
        Ok(inv * d)
    }

    pub(crate) fn utility(&self, i: usize, x: &[f64]) -> f64 {
        let interference = self.interference(i, x);
        self.beta[i] * (self.received(i, x) / interference).ln_1p()
    }

    pub(crate) fn utility_own_partial(&self, i: usize, x: &[f64]) -> f64 {
        let total = self.interference(i, x) + self.received(i, x);
        self.beta[i] * self.spreading_gain * self.gains[i] / total
    }

    pub(crate) fn utility_partials(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let interference = self.interference(i, x);
        let total = interference + self.received(i, x);
        (0..x.len())
            .map(|j| {
                if j == i {
                    self.beta[i] * self.spreading_gain * self.gains[i] / total
                } else {
                    self.beta[i] * self.gains[j] * (1.0 / total - 1.0 / interference)
                }
            })
            .collect()
    }

    pub(crate) fn utility_own_row(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let total = self.interference(i, x) + self.received(i, x);
        let scale = -self.beta[i] * self.spreading_gain * self.gains[i] / (total * total);
        (0..x.len())
            .map(|j| {
                let d_total = if j == i {
                    self.spreading_gain * self.gains[i]
                } else {
                    self.gains[j]
                };
                scale * d_total
            })
            .collect()
    }

    /// Game with linear pricing on the box `[0, upper]^N` (mW).
    pub fn into_game(self, upper: f64) -> Result<GameSpec> {
        let n = self.n_players();
        GameSpec::new(
            Utility::Sir(self),
            Pricing::Linear,
            ConstraintSet::uniform_box(n, 0.0, upper)?,
        )
    }
}

/// Optical link power control with
/// `U_i = β_i (ln(1 + a_i γ_i / (1 − Γ_ii γ_i)) − x_i)` and OSNR
/// `γ_i = x_i / (n₀ + Σ_j Γ_ij x_j)`. The `−x_i` term is present only when
/// `linear_term` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalOsnrGame {
    gamma: DMatrix<f64>,
    n0: f64,
    a: Vec<f64>,
    beta: Vec<f64>,
    linear_term: bool,
}

impl OpticalOsnrGame {
    pub fn new(gamma: DMatrix<f64>, n0: f64, a: Vec<f64>, beta: Vec<f64>, linear_term: bool) -> Result<Self> {
        let n = a.len();
        check_len("system matrix rows", n, gamma.nrows())?;
        check_len("system matrix columns", n, gamma.ncols())?;
        check_len("utility weights", n, beta.len())?;
        check_positive("design gain a", &a)?;
        check_positive("utility weight", &beta)?;
        if gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(GameError::Domain("system matrix entries must be finite and ≥ 0".into()));
        }
        if !(n0.is_finite() && n0 > 0.0) {
            return Err(GameError::Domain(format!("input noise n0 = {n0} must be > 0")));
        }
        Ok(Self {
            gamma,
            n0,
            a,
            beta,
            linear_term,
        })
    }

    pub fn n_players(&self) -> usize {
        self.a.len()
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn n0(&self) -> f64 {
        self.n0
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn linear_term(&self) -> bool {
        self.linear_term
    }

    fn lambda(&self) -> f64 {
        if self.linear_term {
            1.0
        } else {
            0.0
        }
    }

    /// `Γ̃`: `Γ` with its diagonal replaced by `a`.
    pub fn gamma_tilde(&self) -> DMatrix<f64> {
        let mut g = self.gamma.clone();
        for (i, a) in self.a.iter().enumerate() {
            g[(i, i)] = *a;
        }
        g
    }

    /// `n₀ + Σ_j Γ̃_ij x_j`
    pub fn loaded_noise(&self, i: usize, x: &[f64]) -> f64 {
        self.n0 + self.interference_sum(i, x) + self.a[i] * x[i]
    }

    /// `n₀ + Σ_{j≠i} Γ_ij x_j`
    pub fn cross_noise(&self, i: usize, x: &[f64]) -> f64 {
        self.n0 + self.interference_sum(i, x)
    }

    fn interference_sum(&self, i: usize, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(j, v)| self.gamma[(i, j)] * v)
            .sum()
    }

    pub fn osnr(&self, x: &[f64], i: usize) -> Result<f64> {
        check_len("action vector", self.n_players(), x.len())?;
        if i >= self.n_players() {
            return Err(GameError::Dimension {
                what: "player index",
                expected: self.n_players(),
                got: i,
            });
        }
        check_nonnegative("power", x)?;
        let denom = self.n0 + (0..x.len()).map(|j| self.gamma[(i, j)] * x[j]).sum::<f64>();
        Ok(x[i] / denom)
    }

    /// `min_i (a_i − Σ_{j≠i} Γ_ij)`; positive means `Γ̃` is strictly row
    /// diagonally dominant.
    pub fn diag_dominance_margin(&self) -> f64 {
        (0..self.n_players())
            .map(|i| self.a[i] - self.interference_row_sum(i))
            .fold(f64::INFINITY, f64::min)
    }

    /// Column counterpart `min_i (a_i − Σ_{j≠i} Γ_ji)`.
    pub fn column_dominance_margin(&self) -> f64 {
        let n = self.n_players();
        (0..n)
            .map(|i| self.a[i] - (0..n).filter(|j| *j != i).map(|j| self.gamma[(j, i)]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    fn interference_row_sum(&self, i: usize) -> f64 {
        (0..self.n_players())
            .filter(|j| *j != i)
            .map(|j| self.gamma[(i, j)])
            .sum()
    }

    /// `C_i(α)`: `a_iβ_i/(α_i+β_i) − n₀` with the linear term, `a_iβ_i/α_i − n₀`
    /// without.
    pub fn ne_rhs(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        check_len("price vector", self.n_players(), alpha.len())?;
        (0..self.n_players())
            .map(|i| {
                let denom = alpha[i] + self.lambda() * self.beta[i];
                if !(denom > 0.0) {
                    return Err(GameError::Domain(format!(
                        "closed-form OSNR equilibrium needs α_{i} + λβ_{i} > 0, got {denom}"
                    )));
                }
                Ok(self.a[i] * self.beta[i] / denom - self.n0)
            })
            .collect()
    }

    /// `x* = Γ̃⁻¹ C(α)`.
    pub fn osnr_ne(&self, alpha: &[f64]) -> Result<ClosedFormNe> {
        let c = self.ne_rhs(alpha)?;
        ClosedFormNe::new(linalg::solve(&self.gamma_tilde(), &c, "OSNR matrix Γ̃")?)
    }

    /// `H(α) = Γ̃⁻¹ diag(−a_iβ_i/(α_i+λβ_i)²)`.
    pub fn osnr_h(&self, alpha: &[f64]) -> Result<DMatrix<f64>> {
        self.ne_rhs(alpha)?;
        let inv = linalg::inverse(&self.gamma_tilde(), "OSNR matrix Γ̃")?;
        let n = self.n_players();
        let d = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                let s = alpha[i] + self.lambda() * self.beta[i];
                -self.a[i] * self.beta[i] / (s * s)
            } else {
                0.0
            }
        });
        Ok(inv * d)
    }

    /// `Θ_ij = a_iβ_iΓ̃_ij / (n₀ + Σ_k Γ̃_ik x_k)²`, the Jacobian of the
    /// pseudo-gradient under linear pricing.
    pub fn theta(&self, x: &[f64]) -> DMatrix<f64> {
        let gt = self.gamma_tilde();
        let n = self.n_players();
        DMatrix::from_fn(n, n, |i, j| {
            let d = self.loaded_noise(i, x);
            self.a[i] * self.beta[i] * gt[(i, j)] / (d * d)
        })
    }

    /// Linearisation of `f(x) = ∂U/∂x` at `x`: `D Γ̃` with
    /// `D = diag(−a_iβ_i/(n₀+Σ_j Γ̃_ij x_j)²)`.
    pub fn plant_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        -self.theta(x)
    }

    /// Welfare gradient via the decomposition `∂𝒰/∂x_j = f̄_j − X_j`.
    pub fn welfare_gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n_players();
        let loaded: Vec<f64> = (0..n).map(|p| self.loaded_noise(p, x)).collect();
        let cross: Vec<f64> = (0..n).map(|p| self.cross_noise(p, x)).collect();
        (0..n)
            .map(|j| {
                let f_bar = self.a[j] * self.beta[j] / loaded[j] - self.lambda() * self.beta[j];
                let coupling: f64 = (0..n)
                    .filter(|p| *p != j)
                    .map(|p| {
                        self.a[p] * self.beta[p] * self.gamma[(p, j)] * x[p] / (cross[p] * loaded[p])
                    })
                    .sum();
                f_bar - coupling
            })
            .collect()
    }

    pub(crate) fn utility(&self, i: usize, x: &[f64]) -> f64 {
        let ratio = self.a[i] * x[i] / self.cross_noise(i, x);
        self.beta[i] * (ratio.ln_1p() - self.lambda() * x[i])
    }

    pub(crate) fn utility_own_partial(&self, i: usize, x: &[f64]) -> f64 {
        self.beta[i] * (self.a[i] / self.loaded_noise(i, x) - self.lambda())
    }

    pub(crate) fn utility_partials(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let loaded = self.loaded_noise(i, x);
        let cross = self.cross_noise(i, x);
        (0..x.len())
            .map(|j| {
                if j == i {
                    self.beta[i] * (self.a[i] / loaded - self.lambda())
                } else {
                    -self.beta[i] * self.gamma[(i, j)] * self.a[i] * x[i] / (loaded * cross)
                }
            })
            .collect()
    }

    pub(crate) fn utility_own_row(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let loaded = self.loaded_noise(i, x);
        let scale = -self.a[i] * self.beta[i] / (loaded * loaded);
        (0..x.len())
            .map(|j| scale * if j == i { self.a[i] } else { self.gamma[(i, j)] })
            .collect()
    }

    /// Game with linear pricing on `[0, upper]^N` (mW).
    pub fn into_game(self, upper: f64) -> Result<GameSpec> {
        let n = self.n_players();
        GameSpec::new(
            Utility::Osnr(self),
            Pricing::Linear,
            ConstraintSet::uniform_box(n, 0.0, upper)?,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeparablePricing {
    /// `p_i = Σ_j x_j`
    #[default]
    LinearSum,
    /// `p_i = Σ_j x_j²`
    QuadraticSum,
    /// `p_i = exp(Σ_j x_j)`
    ExpSum,
}

impl SeparablePricing {
    pub fn pricing(self) -> Pricing {
        match self {
            SeparablePricing::LinearSum => Pricing::LinearSum,
            SeparablePricing::QuadraticSum => Pricing::QuadraticSum,
            SeparablePricing::ExpSum => Pricing::ExpSum,
        }
    }
}

/// Separable utilities `U_i = β_i ln(1 + x_i) − k_i x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableLogGame {
    beta: Vec<f64>,
    k: Vec<f64>,
    pricing: SeparablePricing,
}

impl SeparableLogGame {
    pub fn new(beta: Vec<f64>, k: Vec<f64>, pricing: SeparablePricing) -> Result<Self> {
        check_len("penalty coefficients", beta.len(), k.len())?;
        check_positive("utility weight", &beta)?;
        check_nonnegative("penalty coefficient", &k)?;
        Ok(Self { beta, k, pricing })
    }

    pub fn n_players(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    pub fn pricing_kind(&self) -> SeparablePricing {
        self.pricing
    }

    pub fn separable_ne(&self, alpha: &[f64]) -> Result<ClosedFormNe> {
        check_len("price vector", self.n_players(), alpha.len())?;
        let x = match self.pricing {
            SeparablePricing::LinearSum => alpha
                .iter()
                .enumerate()
                .map(|(i, &a)| {
                    let s = a + self.k[i];
                    if !(s > 0.0) {
                        return Err(GameError::Domain(format!("α_{i} + k_{i} = {s} must be > 0")));
                    }
                    Ok(self.beta[i] / s - 1.0)
                })
                .collect::<Result<Vec<_>>>()?,
            SeparablePricing::QuadraticSum => (0..self.n_players())
                .map(|i| self.quadratic_best_response(i, alpha[i]))
                .collect::<Result<Vec<_>>>()?,
            SeparablePricing::ExpSum => self.exp_sum_equilibrium(alpha)?,
        };
        ClosedFormNe::new(x)
    }

    /// Root of `2α x + k − β/(1+x)` on `x > −1` (increasing in `x`).
    fn quadratic_best_response(&self, i: usize, alpha: f64) -> Result<f64> {
        let (b, k) = (self.beta[i], self.k[i]);
        if alpha < 0.0 || (alpha == 0.0 && k == 0.0) {
            return Err(GameError::Domain(format!(
                "player {i}: quadratic-sum equilibrium needs α > 0 or k > 0"
            )));
        }
        let foc = |x: f64| 2.0 * alpha * x + k - b / (1.0 + x);
        let mut hi = 1.0;
        while foc(hi) <= 0.0 {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(GameError::Numerics("no upper bracket for quadratic-sum FOC".into()));
            }
        }
        Ok(bisect(foc, -1.0 + 1e-300, hi))
    }

    /// Every player's FOC is `α_i e^S = β_i/(1+x_i) − k_i` with `S = Σ x`, so
    /// `x_i(S) = β_i/(α_i e^S + k_i) − 1`; the total solves the scalar
    /// decreasing equation `Σ_i x_i(S) − S = 0`.
    fn exp_sum_equilibrium(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        for (i, (&a, &k)) in alpha.iter().zip(&self.k).enumerate() {
            if a < 0.0 || (a == 0.0 && k == 0.0) {
                return Err(GameError::Domain(format!(
                    "player {i}: exp-sum equilibrium needs α > 0 or k > 0"
                )));
            }
        }
        let per_player = |s: f64| -> Vec<f64> {
            (0..self.n_players())
                .map(|i| self.beta[i] / (alpha[i] * s.exp() + self.k[i]) - 1.0)
                .collect()
        };
        let gap = |s: f64| per_player(s).iter().sum::<f64>() - s;
        let (mut lo, mut hi) = (-1.0, 1.0);
        while gap(lo) <= 0.0 {
            lo *= 2.0;
            if lo < -1e6 {
                return Err(GameError::Numerics("no lower bracket for exp-sum FOC".into()));
            }
        }
        while gap(hi) >= 0.0 {
            hi *= 2.0;
            if hi > 1e6 {
                return Err(GameError::Numerics("no upper bracket for exp-sum FOC".into()));
            }
        }
        let s = bisect(|s| -gap(s), lo, hi);
        Ok(per_player(s))
    }

    /// Diagonal `∂x*_i/∂α_i = −β_i/(α_i+k_i)²` for linear-sum pricing;
    /// `None` for the other pricing kinds.
    pub fn ne_jacobian(&self, alpha: &[f64]) -> Result<Option<DMatrix<f64>>> {
        check_len("price vector", self.n_players(), alpha.len())?;
        if self.pricing != SeparablePricing::LinearSum {
            return Ok(None);
        }
        let n = self.n_players();
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            let s = alpha[i] + self.k[i];
            if !(s > 0.0) {
                return Err(GameError::Domain(format!("α_{i} + k_{i} = {s} must be > 0")));
            }
            h[(i, i)] = -self.beta[i] / (s * s);
        }
        Ok(Some(h))
    }

    pub(crate) fn utility(&self, i: usize, x: &[f64]) -> f64 {
        self.beta[i] * x[i].ln_1p() - self.k[i] * x[i]
    }

    pub(crate) fn utility_own_partial(&self, i: usize, x: &[f64]) -> f64 {
        self.beta[i] / (1.0 + x[i]) - self.k[i]
    }

    pub(crate) fn utility_partials(&self, i: usize, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|j| if j == i { self.utility_own_partial(i, x) } else { 0.0 })
            .collect()
    }

    pub(crate) fn utility_own_row(&self, i: usize, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|j| {
                if j == i {
                    -self.beta[i] / ((1.0 + x[i]) * (1.0 + x[i]))
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn into_game(self, upper: f64) -> Result<GameSpec> {
        let n = self.n_players();
        let pricing = self.pricing.pricing();
        GameSpec::new(
            Utility::SeparableLog(self),
            pricing,
            ConstraintSet::uniform_box(n, 0.0, upper)?,
        )
    }
}

/// Root of an increasing function on `[lo, hi]` with `f(lo) < 0 < f(hi)`.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The closed-form equilibrium of a catalog game, when its utility and
/// pricing pair admits one.
pub fn closed_form_ne(game: &GameSpec, alpha: &[f64]) -> Option<Result<ClosedFormNe>> {
    match (game.utility(), game.pricing()) {
        (Utility::Sir(g), Pricing::Linear) => Some(g.wireless_ne(alpha)),
        (Utility::Osnr(g), Pricing::Linear) => Some(g.osnr_ne(alpha)),
        (Utility::SeparableLog(g), p) if same_pricing(g.pricing_kind(), p) => Some(g.separable_ne(alpha)),
        _ => None,
    }
}

/// Analytic `∂x*/∂α` for catalog games that admit one.
pub fn closed_form_ne_jacobian(game: &GameSpec, alpha: &[f64]) -> Option<Result<DMatrix<f64>>> {
    match (game.utility(), game.pricing()) {
        (Utility::Sir(g), Pricing::Linear) => Some(g.ne_jacobian(alpha)),
        (Utility::Osnr(g), Pricing::Linear) => Some(g.osnr_h(alpha)),
        (Utility::SeparableLog(g), Pricing::LinearSum) => match g.ne_jacobian(alpha) {
            Ok(Some(h)) => Some(Ok(h)),
            Ok(None) => None,
            Err(e) => Some(Err(e)),
        },
        _ => None,
    }
}

fn same_pricing(kind: SeparablePricing, p: &Pricing) -> bool {
    matches!(
        (kind, p),
        (SeparablePricing::LinearSum, Pricing::LinearSum)
            | (SeparablePricing::QuadraticSum, Pricing::QuadraticSum)
            | (SeparablePricing::ExpSum, Pricing::ExpSum)
    )
}

/// Two-channel optical link used for the reference closed-loop run:
/// ten amplifiers, parabolic gain shape, 10 dB span loss, `n₀ = 0.43 nW`.
pub fn reference_osnr_link() -> OpticalOsnrGame {
    OpticalOsnrGame::new(
        DMatrix::from_row_slice(2, 2, &[2.47e-3, 2.61e-3, 2.36e-3, 2.5e-3]),
        4.3e-7,
        vec![0.485, 0.48],
        vec![1.0, 1.0],
        true,
    )
    .expect("reference parameters are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{inf_norm, DiffSettings};

    #[test]
    fn sir_hand_values() {
        let one = WirelessSirGame::new(vec![1.0], 1.0, 1.0, vec![1.0]).unwrap();
        assert_eq!(one.sir(&[2.0], 0).unwrap(), 2.0);
        let two = WirelessSirGame::new(vec![1.0, 1.0], 1.0, 1.0, vec![1.0, 1.0]).unwrap();
        assert_eq!(two.sir(&[1.0, 1.0], 0).unwrap(), 0.5);
        let silent = WirelessSirGame::new(vec![1.0, 1.0], 0.0, 1.0, vec![1.0, 1.0]).unwrap();
        assert!(matches!(silent.sir(&[1.0, 0.0], 0), Err(GameError::Domain(_))));
        assert!(two.sir(&[-1.0, 1.0], 0).is_err());
    }

    #[test]
    fn wireless_ne_scalar_and_symmetric() {
        let one = WirelessSirGame::new(vec![1.0], 1.0, 1.0, vec![2.0]).unwrap();
        let ne = one.wireless_ne(&[1.0]).unwrap();
        assert!((ne.x[0] - 1.0).abs() < 1e-15);
        let two = WirelessSirGame::new(vec![1.0, 1.0], 0.0, 2.0, vec![1.0, 1.0]).unwrap();
        assert_eq!(two.matrix_a(), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        let ne = two.wireless_ne(&[1.0, 1.0]).unwrap();
        assert!(ne.x.max_abs_diff(&[2.0 / 3.0, 2.0 / 3.0]) < 1e-15);
        assert!(matches!(two.wireless_ne(&[0.0, 1.0]), Err(GameError::Domain(_))));
    }

    #[test]
    fn wireless_negative_equilibrium_is_flagged_not_projected() {
        let g = WirelessSirGame::new(vec![1.0, 1.0], 1.0, 2.0, vec![1.0, 1.0]).unwrap();
        let ne = g.wireless_ne(&[10.0, 0.1]).unwrap();
        assert!(ne.x[0] < 0.0);
        assert!(!ne.is_nonnegative());
    }

    #[test]
    fn singular_a_is_reported() {
        // L = 1 and identical gains make A the all-ones matrix for N = 2
        let g = WirelessSirGame::new(vec![1.0, 1.0], 1.0, 1.0, vec![1.0, 1.0]).unwrap();
        assert!(matches!(g.wireless_ne(&[1.0, 1.0]), Err(GameError::SingularMatrix(_))));
    }

    #[test]
    fn osnr_limits() {
        let g = OpticalOsnrGame::new(DMatrix::zeros(1, 1), 2.0, vec![0.5], vec![1.0], true).unwrap();
        assert_eq!(g.osnr(&[3.0], 0).unwrap(), 1.5);
        let loud = OpticalOsnrGame::new(DMatrix::from_element(1, 1, 1e-3), 1e9, vec![0.5], vec![1.0], true).unwrap();
        assert!((loud.osnr(&[2.0], 0).unwrap() - 2.0 / 1e9).abs() < 1e-20);
    }

    #[test]
    fn osnr_scalar_closed_forms() {
        let (a, b, n0, alpha) = (0.4, 2.0, 1e-3, 5.0);
        let g = OpticalOsnrGame::new(DMatrix::from_element(1, 1, 0.01), n0, vec![a], vec![b], true).unwrap();
        let x = g.osnr_ne(&[alpha]).unwrap().x[0];
        assert!((x - (a * b / (alpha + b) - n0) / a).abs() < 1e-15);
        let h = g.osnr_h(&[alpha]).unwrap()[(0, 0)];
        assert!((h + b / ((alpha + b) * (alpha + b))).abs() < 1e-15);
    }

    #[test]
    fn reference_link_margins() {
        let g = reference_osnr_link();
        assert!((g.diag_dominance_margin() - 0.47764).abs() < 1e-12);
        assert!(g.column_dominance_margin() > 0.0);
    }

    #[test]
    fn osnr_h_matches_fd_of_closed_form() {
        let g = reference_osnr_link();
        let alpha = [40.0, 60.0];
        let h = g.osnr_h(&alpha).unwrap();
        for j in 0..2 {
            let d = 1e-4 * (1.0 + alpha[j]);
            let mut up = alpha;
            up[j] += d;
            let mut dn = alpha;
            dn[j] -= d;
            let xu = g.osnr_ne(&up).unwrap().x;
            let xd = g.osnr_ne(&dn).unwrap().x;
            for i in 0..2 {
                let fd = (xu[i] - xd[i]) / (2.0 * d);
                assert!((fd - h[(i, j)]).abs() <= 1e-5 * h[(i, j)].abs().max(1e-12), "{i},{j}");
            }
        }
    }

    #[test]
    fn separable_closed_forms() {
        let g = SeparableLogGame::new(vec![3.0], vec![1.0], SeparablePricing::LinearSum).unwrap();
        assert!((g.separable_ne(&[1.0]).unwrap().x[0] - 0.5).abs() < 1e-15);
        let edge = SeparableLogGame::new(vec![1.0], vec![0.0], SeparablePricing::LinearSum).unwrap();
        assert_eq!(edge.separable_ne(&[1.0]).unwrap().x[0], 0.0);
        assert!(matches!(g.separable_ne(&[-1.0]), Err(GameError::Domain(_))));
    }

    #[test]
    fn separable_nonlinear_pricings_are_stationary() {
        for kind in [SeparablePricing::QuadraticSum, SeparablePricing::ExpSum] {
            let g = SeparableLogGame::new(vec![3.0, 2.0, 4.0], vec![0.5, 0.1, 1.0], kind).unwrap();
            let alpha = [0.3, 0.2, 0.1];
            let x = g.separable_ne(&alpha).unwrap().x;
            let game = g.into_game(100.0).unwrap();
            let q = game.pseudo_gradient(&alpha, &x).unwrap();
            assert!(inf_norm(&q) < 1e-10, "{kind:?}: {q:?}");
        }
    }

    #[test]
    fn osnr_theta_is_q() {
        let g = reference_osnr_link();
        let x = [0.013, 0.02];
        let game = g.clone().into_game(1.0).unwrap();
        let q = game.jacobian_q(&[70.0, 70.0], &x, &DiffSettings::default()).unwrap();
        assert!((q - g.theta(&x)).abs().max() < 1e-9);
    }
}
