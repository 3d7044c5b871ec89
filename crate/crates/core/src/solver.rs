//! Iterative Nash-equilibrium computation and sampled certificates for the
//! convexity and uniqueness conditions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::catalog::{closed_form_ne, closed_form_ne_jacobian};
use crate::error::{GameError, Result};
use crate::linalg;
use crate::model::{ActionVector, Constraint, GameSpec, Utility};
use crate::sampling::{box_points, Sampling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    #[default]
    ProjectedPseudoGradient,
    BestResponseSweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Projection {
    #[default]
    Box,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub method: SolverMethod,
    /// Initial step of the preconditioned pseudo-gradient iteration.
    pub step: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub projection: Projection,
    /// Weight of the quadratic penalty used for non-box constraints.
    pub penalty_weight: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            method: SolverMethod::ProjectedPseudoGradient,
            step: 0.1,
            tol: 1e-10,
            max_iter: 100_000,
            projection: Projection::Box,
            penalty_weight: 1e6,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(GameError::Config(format!("solver step must be > 0, got {}", self.step)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(GameError::Config(format!("solver tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(GameError::Config("solver max_iter must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeSolution {
    pub x: ActionVector,
    pub iterations: usize,
    pub residual: f64,
    /// Residual after every accepted iterate.
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

/// Pseudo-gradient plus the gradient of the penalty for non-box constraints.
fn penalized_q(game: &GameSpec, alpha: &[f64], x: &[f64], settings: &SolverSettings) -> Result<Vec<f64>> {
    let mut q = game.pseudo_gradient(alpha, x)?;
    for c in game.constraints().constraints() {
        if let Constraint::Linear { coeffs, .. } = c {
            let v = c.value(x);
            if v > 0.0 {
                for (qi, a) in q.iter_mut().zip(coeffs) {
                    *qi += settings.penalty_weight * v * a;
                }
            }
        }
    }
    Ok(q)
}

fn project(game: &GameSpec, settings: &SolverSettings, x: &mut [f64]) {
    if settings.projection == Projection::Box {
        game.constraints().project(x);
    }
}

/// Natural residual `‖x − P(x − q)‖∞`: `|q_i|` for interior coordinates and
/// the KKT gap at active bounds.
fn natural_residual(game: &GameSpec, settings: &SolverSettings, x: &[f64], q: &[f64]) -> f64 {
    let mut moved: Vec<f64> = x.iter().zip(q).map(|(v, g)| v - g).collect();
    project(game, settings, &mut moved);
    x.iter()
        .zip(&moved)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Equilibrium residual of `x` under `α` using the box projection.
pub fn ne_residual(game: &GameSpec, alpha: &[f64], x: &[f64]) -> Result<f64> {
    let settings = SolverSettings::default();
    let q = penalized_q(game, alpha, x, &settings)?;
    Ok(natural_residual(game, &settings, x, &q))
}

/// Natural residual of the Newton-scaled map, `‖x − P(x − D⁻¹q)‖∞`. Used
/// alongside the plain residual in the acceptance test: when players' own
/// curvatures differ by orders of magnitude the plain residual can rise
/// while every scaled displacement shrinks.
fn scaled_residual(game: &GameSpec, alpha: &[f64], settings: &SolverSettings, x: &[f64], q: &[f64]) -> f64 {
    let d = preconditioner(game, alpha, x);
    let scaled: Vec<f64> = q.iter().zip(&d).map(|(g, c)| g / c).collect();
    natural_residual(game, settings, x, &scaled)
}

fn window_max(history: &[f64]) -> f64 {
    history.iter().rev().take(WINDOW).cloned().fold(0.0, f64::max)
}

fn preconditioner(game: &GameSpec, alpha: &[f64], x: &[f64]) -> Vec<f64> {
    match game.own_curvature(alpha, x) {
        Ok(d) => d
            .into_iter()
            .map(|v| if v.is_finite() && v > 1e-12 { v } else { 1.0 })
            .collect(),
        Err(_) => vec![1.0; x.len()],
    }
}

/// Computes an equilibrium from `x0`. The projected iteration
/// `x ← P(x − s D⁻¹ q(x))` uses `D = diag(∂²J_i/∂x_i²)` and a non-monotone
/// acceptance test on the natural residual. Each coordinate moves at most
/// half its magnitude (or 1e-3 of its box width) per step, so one player's
/// long Newton step cannot stall the shared step length.
pub fn solve_ne(game: &GameSpec, alpha: &[f64], x0: &[f64], settings: &SolverSettings) -> Result<NeSolution> {
    settings.validate()?;
    game.check_alpha(alpha)?;
    game.check_x(x0)?;
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(GameError::Numerics("price vector has non-finite entries".into()));
    }
    match settings.method {
        SolverMethod::ProjectedPseudoGradient => projected_pseudo_gradient(game, alpha, x0, settings),
        SolverMethod::BestResponseSweep => best_response_sweep(game, alpha, x0, settings),
    }
}

const WINDOW: usize = 5;

fn projected_pseudo_gradient(
    game: &GameSpec,
    alpha: &[f64],
    x0: &[f64],
    settings: &SolverSettings,
) -> Result<NeSolution> {
    let mut x = x0.to_vec();
    project(game, settings, &mut x);
    let mut q = penalized_q(game, alpha, &x, settings)?;
    let mut residual = natural_residual(game, settings, &x, &q);
    let mut residuals = vec![residual];
    let mut merits = vec![scaled_residual(game, alpha, settings, &x, &q)];
    let mut step = settings.step.min(1.0);
    let widths: Vec<f64> = game
        .constraints()
        .lower()
        .iter()
        .zip(game.constraints().upper())
        .map(|(l, u)| if (u - l).is_finite() { u - l } else { 1.0 })
        .collect();
    for it in 0..settings.max_iter {
        if residual <= settings.tol {
            return Ok(NeSolution {
                x: ActionVector::new(x)?,
                iterations: it,
                residual,
                residuals,
            });
        }
        let d = preconditioner(game, alpha, &x);
        let reference = window_max(&residuals);
        let merit_reference = window_max(&merits);
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand: Vec<f64> = (0..x.len())
                .map(|i| {
                    let cap = 0.5 * x[i].abs().max(1e-3 * widths[i]);
                    x[i] - (step * q[i] / d[i]).clamp(-cap, cap)
                })
                .collect();
            project(game, settings, &mut cand);
            let trial = penalized_q(game, alpha, &cand, settings)
                .ok()
                .filter(|v| v.iter().all(|g| g.is_finite()));
            if let Some(cq) = trial {
                let r = natural_residual(game, settings, &cand, &cq);
                let m = scaled_residual(game, alpha, settings, &cand, &cq);
                if r < reference || m < merit_reference || r <= settings.tol {
                    x = cand;
                    q = cq;
                    residual = r;
                    merits.push(m);
                    accepted = true;
                    step = (step * 1.25).min(1.0);
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(GameError::NonConvergence {
                iterations: it,
                residual,
                last: x,
            });
        }
        residuals.push(residual);
    }
    if residual <= settings.tol {
        return Ok(NeSolution {
            x: ActionVector::new(x)?,
            iterations: settings.max_iter,
            residual,
            residuals,
        });
    }
    Err(GameError::NonConvergence {
        iterations: settings.max_iter,
        residual,
        last: x,
    })
}

/// Root of the increasing scalar map `g` on `[lo, hi]`, or the bound it
/// pushes against. Newton steps that leave the bracket fall back to bisection.
fn scalar_best_response(g: impl Fn(f64) -> Result<(f64, f64)>, lo: f64, hi: f64) -> Result<f64> {
    let (glo, _) = g(lo)?;
    if glo >= 0.0 {
        return Ok(lo);
    }
    let (ghi, _) = g(hi)?;
    if ghi <= 0.0 {
        return Ok(hi);
    }
    let (mut a, mut b) = (lo, hi);
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (v, slope) = g(t)?;
        if v == 0.0 {
            return Ok(t);
        }
        if v < 0.0 {
            a = t;
        } else {
            b = t;
        }
        let newton = t - v / slope;
        let next = if slope > 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if (next - t).abs() <= 1e-15 * (1.0 + t.abs()) || b - a <= 1e-15 * (1.0 + a.abs()) {
            return Ok(next);
        }
        t = next;
    }
    Ok(t)
}

fn best_response_sweep(
    game: &GameSpec,
    alpha: &[f64],
    x0: &[f64],
    settings: &SolverSettings,
) -> Result<NeSolution> {
    let (lower, upper) = (game.constraints().lower(), game.constraints().upper());
    let mut x = x0.to_vec();
    game.constraints().project(&mut x);
    let mut residuals = Vec::new();
    for it in 0..settings.max_iter {
        for i in 0..x.len() {
            let g = |t: f64| -> Result<(f64, f64)> {
                let mut probe = x.clone();
                probe[i] = t;
                let q = penalized_q(game, alpha, &probe, settings)?[i];
                let curv = game.own_curvature(alpha, &probe)?[i];
                Ok((q, curv))
            };
            x[i] = scalar_best_response(g, lower[i], upper[i])?;
        }
        let q = penalized_q(game, alpha, &x, settings)?;
        let residual = natural_residual(game, settings, &x, &q);
        residuals.push(residual);
        if residual <= settings.tol {
            return Ok(NeSolution {
                x: ActionVector::new(x)?,
                iterations: it + 1,
                residual,
                residuals,
            });
        }
    }
    Err(GameError::NonConvergence {
        iterations: settings.max_iter,
        residual: residuals.last().copied().unwrap_or(f64::NAN),
        last: x,
    })
}

/// Equilibrium at `α`: the closed form when the game has one and it lands in
/// the box hull, the iterative solver from the hull centre otherwise.
pub fn equilibrium(game: &GameSpec, alpha: &[f64], settings: &SolverSettings) -> Result<NeSolution> {
    if let Some(Ok(ne)) = closed_form_ne(game, alpha) {
        if ne.is_nonnegative() && game.constraints().contains(&ne.x, 0.0) {
            let residual = ne_residual(game, alpha, &ne.x)?;
            return Ok(NeSolution {
                x: ne.x,
                iterations: 0,
                residual,
                residuals: vec![residual],
            });
        }
    }
    solve_ne(game, alpha, &game.constraints().center(), settings)
}

/// `H = ∂x*/∂α`: analytic for the catalog games, finite differences of the
/// solved equilibrium otherwise.
pub fn ne_map_jacobian(game: &GameSpec, alpha: &[f64], settings: &SolverSettings) -> Result<DMatrix<f64>> {
    game.check_alpha(alpha)?;
    match closed_form_ne_jacobian(game, alpha) {
        Some(h) => h,
        None => ne_map_jacobian_fd(game, alpha, settings),
    }
}

/// Central differences of `α ↦ x*(α)` with `δ_j = 10⁻⁴(1 + α_j)`; one-sided
/// when the backward point would leave the nonnegative orthant.
pub fn ne_map_jacobian_fd(game: &GameSpec, alpha: &[f64], settings: &SolverSettings) -> Result<DMatrix<f64>> {
    game.check_alpha(alpha)?;
    let n = game.n_players();
    let base = equilibrium(game, alpha, settings)?.x.into_vec();
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let d = 1e-4 * (1.0 + alpha[j].abs());
        let mut up = alpha.to_vec();
        up[j] += d;
        let xu = solve_near(game, &up, &base, settings)?;
        if alpha[j] - d >= 0.0 {
            let mut dn = alpha.to_vec();
            dn[j] -= d;
            let xd = solve_near(game, &dn, &base, settings)?;
            for i in 0..n {
                h[(i, j)] = (xu[i] - xd[i]) / (2.0 * d);
            }
        } else {
            for i in 0..n {
                h[(i, j)] = (xu[i] - base[i]) / d;
            }
        }
    }
    Ok(h)
}

fn solve_near(game: &GameSpec, alpha: &[f64], warm: &[f64], settings: &SolverSettings) -> Result<Vec<f64>> {
    if let Some(Ok(ne)) = closed_form_ne(game, alpha) {
        if ne.is_nonnegative() && game.constraints().contains(&ne.x, 0.0) {
            return Ok(ne.x.into_vec());
        }
    }
    Ok(solve_ne(game, alpha, warm, settings)?.x.into_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateEntry {
    pub name: String,
    pub holds: bool,
    /// `NaN` when the condition does not apply to this game.
    pub margin: f64,
    pub samples: usize,
}

impl CertificateEntry {
    fn new(name: &str, margin: f64, samples: usize) -> Self {
        Self {
            name: name.to_string(),
            holds: margin > 0.0,
            margin,
            samples,
        }
    }

    pub fn applicable(&self) -> bool {
        !self.margin.is_nan() || self.samples > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub entries: Vec<CertificateEntry>,
}

impl CertificateReport {
    pub fn get(&self, name: &str) -> Option<&CertificateEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// True when every applicable condition holds.
    pub fn all_hold(&self) -> bool {
        self.entries.iter().filter(|e| e.applicable()).all(|e| e.holds)
    }
}

/// Minimum that turns any `NaN` into a `NaN` result.
fn strict_min(acc: f64, v: f64) -> f64 {
    if acc.is_nan() || v.is_nan() {
        f64::NAN
    } else {
        acc.min(v)
    }
}

/// Number of price samples used for the `H` nonsingularity check.
const PRICE_SAMPLES: usize = 20;

/// Evaluates the sufficient conditions at low-discrepancy points of the box
/// hull (and, for `H`, at prices in `[α/2, 3α/2]`).
pub fn certify(game: &GameSpec, alpha: &[f64], sampling: Sampling) -> Result<CertificateReport> {
    game.check_alpha(alpha)?;
    let cons = game.constraints();
    let points = box_points(cons.lower(), cons.upper(), 1e-3, sampling);
    let n_pts = points.len();

    let slack = cons.feasibility_probe(points.iter().map(Vec::as_slice));
    let bounded = cons.lower().iter().chain(cons.upper()).all(|v| v.is_finite());
    let a1 = if bounded { slack } else { f64::NAN };

    let mut a2 = f64::INFINITY;
    let mut a3 = f64::INFINITY;
    for p in &points {
        let curv = game
            .own_curvature(alpha, p)
            .map(|c| c.into_iter().fold(f64::INFINITY, strict_min))
            .unwrap_or(f64::NAN);
        a2 = strict_min(a2, curv);
        let eig = game
            .jacobian_q(alpha, p, game.diff())
            .map(|q| linalg::min_sym_eigenvalue(&q))
            .unwrap_or(f64::NAN);
        a3 = strict_min(a3, eig);
    }

    let a4 = cons
        .constraints()
        .iter()
        .map(|c| (0..game.n_players()).map(|i| c.partial(i).abs()).fold(0.0, f64::max))
        .fold(f64::INFINITY, f64::min);

    let (dd, dd_samples, theta, theta_samples) = match game.utility() {
        Utility::Osnr(g) => {
            let theta = points
                .iter()
                .map(|p| linalg::min_sym_eigenvalue(&g.theta(p)))
                .fold(f64::INFINITY, strict_min);
            (g.diag_dominance_margin(), 1, theta, n_pts)
        }
        _ => (f64::NAN, 0, f64::NAN, 0),
    };

    let mut det_min = f64::INFINITY;
    let price_pts = box_points(
        &alpha.iter().map(|a| 0.5 * a).collect::<Vec<_>>(),
        &alpha.iter().map(|a| 1.5 * a + 1e-12).collect::<Vec<_>>(),
        0.0,
        Sampling {
            n_samples: sampling.n_samples.min(PRICE_SAMPLES),
            seed: sampling.seed.wrapping_add(1),
        },
    );
    let settings = SolverSettings::default();
    for a in std::iter::once(alpha.to_vec()).chain(price_pts.iter().cloned()) {
        let d = ne_map_jacobian(game, &a, &settings)
            .map(|h| h.determinant().abs())
            .unwrap_or(f64::NAN);
        det_min = strict_min(det_min, d);
    }

    Ok(CertificateReport {
        entries: vec![
            CertificateEntry::new("assumption1", a1, n_pts + 1),
            CertificateEntry::new("assumption2", a2, n_pts),
            CertificateEntry::new("assumption3", a3, n_pts),
            CertificateEntry::new("assumption4", a4, cons.constraints().len()),
            CertificateEntry::new("diag_dominance", dd, dd_samples),
            CertificateEntry::new("theta_pd", theta, theta_samples),
            CertificateEntry::new("h_nonsingular", det_min, price_pts.len() + 1),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{reference_osnr_link, SeparableLogGame, SeparablePricing, WirelessSirGame};
    use crate::model::{ConstraintSet, Pricing, QuadraticUtility};

    fn separable() -> GameSpec {
        SeparableLogGame::new(vec![3.0], vec![1.0], SeparablePricing::LinearSum)
            .unwrap()
            .into_game(10.0)
            .unwrap()
    }

    #[test]
    fn separable_from_nearby_start() {
        let g = separable();
        let s = solve_ne(&g, &[1.0], &[0.1], &SolverSettings::default()).unwrap();
        assert!((s.x[0] - 0.5).abs() < 1e-9);
        let br = SolverSettings {
            method: SolverMethod::BestResponseSweep,
            ..Default::default()
        };
        let s = solve_ne(&g, &[1.0], &[0.1], &br).unwrap();
        assert!((s.x[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn osnr_iterative_matches_closed_form() {
        let link = reference_osnr_link();
        let alpha = [73.4, 76.9];
        let exact = link.osnr_ne(&alpha).unwrap().x;
        let g = link.into_game(1.0).unwrap();
        let s = solve_ne(&g, &alpha, &[4.3e-4, 4.3e-4], &SolverSettings::default()).unwrap();
        assert!(s.x.max_abs_diff(&exact) < 1e-8, "{:?} vs {:?}", s.x, exact);
    }

    #[test]
    fn boundary_equilibrium_satisfies_kkt() {
        // unconstrained optimum 2 lies outside [0, 1]
        let u = QuadraticUtility::new(vec![3.0], DMatrix::from_element(1, 1, 1.0)).unwrap();
        let g = GameSpec::new(
            Utility::Quadratic(u),
            Pricing::Linear,
            ConstraintSet::uniform_box(1, 0.0, 1.0).unwrap(),
        )
        .unwrap();
        let s = solve_ne(&g, &[1.0], &[0.2], &SolverSettings::default()).unwrap();
        assert_eq!(s.x[0], 1.0);
        assert!(s.residual <= 1e-10);
    }

    #[test]
    fn non_convergence_carries_last_iterate() {
        let g = separable();
        let tight = SolverSettings {
            max_iter: 2,
            step: 1e-3,
            ..Default::default()
        };
        match solve_ne(&g, &[1.0], &[5.0], &tight) {
            Err(GameError::NonConvergence { last, iterations, .. }) => {
                assert_eq!(iterations, 2);
                assert_eq!(last.len(), 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quadratic_certificate_margin() {
        let u = QuadraticUtility::new(vec![0.0; 2], DMatrix::identity(2, 2) * 2.0).unwrap();
        let g = GameSpec::new(
            Utility::Quadratic(u),
            Pricing::Linear,
            ConstraintSet::uniform_box(2, -1.0, 1.0).unwrap(),
        )
        .unwrap();
        let r = certify(&g, &[0.5, 0.5], Sampling { n_samples: 10, seed: 1 }).unwrap();
        assert!((r.get("assumption3").unwrap().margin - 4.0).abs() < 1e-12);
        assert!(r.get("diag_dominance").unwrap().margin.is_nan());
        assert!(r.all_hold());
    }

    #[test]
    fn osnr_certificate_margins() {
        let g = reference_osnr_link().into_game(1.0).unwrap();
        let r = certify(&g, &[73.4, 76.9], Sampling { n_samples: 100, seed: 3 }).unwrap();
        assert!((r.get("diag_dominance").unwrap().margin - 0.47764).abs() < 1e-10);
        assert!(r.get("theta_pd").unwrap().holds);
        assert!(r.get("h_nonsingular").unwrap().holds);
    }

    #[test]
    fn wireless_fd_jacobian_matches_closed_form() {
        let w = WirelessSirGame::new(vec![1.0, 0.8, 0.6], 0.1, 8.0, vec![1.0, 1.5, 2.0]).unwrap();
        let g = w.into_game(100.0).unwrap();
        let alpha = [0.5, 0.7, 0.9];
        let exact = ne_map_jacobian(&g, &alpha, &SolverSettings::default()).unwrap();
        let fd = ne_map_jacobian_fd(&g, &alpha, &SolverSettings::default()).unwrap();
        assert!((exact - fd).abs().max() < 1e-6);
    }
}
