use nalgebra::DMatrix;
use proptest::prelude::*;

use pricegame::catalog::{reference_osnr_link, OpticalOsnrGame, SeparableLogGame, SeparablePricing, WirelessSirGame};
use pricegame::control::{game_flow, regulate, ConstantPrice, ControlMode, ControllerSpec, FlowSettings, Integrator};
use pricegame::design::design_price;
use pricegame::model::{ConstraintSet, DiffSettings, GameSpec, Pricing, PriceVector, QuadraticUtility, Utility};
use pricegame::pricing::{ne_sensitivity, HSource};
use pricegame::sampling::Sampling;
use pricegame::scenario::{self, ScenarioConfig};
use pricegame::solver::{certify, equilibrium, ne_map_jacobian_fd, solve_ne, SolverMethod, SolverSettings};
use pricegame::trajectory::{Sample, Trajectory};

fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + abs
}

fn wireless(gains: &[f64], beta: &[f64], noise: f64) -> WirelessSirGame {
    WirelessSirGame::new(gains.to_vec(), noise, 64.0, beta.to_vec()).unwrap()
}

fn osnr(scale: f64, a_scale: f64) -> OpticalOsnrGame {
    let base = reference_osnr_link();
    let a = base.a().iter().map(|v| v * a_scale).collect();
    OpticalOsnrGame::new(base.gamma() * scale, base.n0(), a, vec![1.0, 1.0], true).unwrap()
}

fn catalog_games(gains: &[f64], beta: &[f64]) -> Vec<GameSpec> {
    vec![
        wireless(gains, beta, 5e-3).into_game(100.0).unwrap(),
        reference_osnr_link().into_game(1.0).unwrap(),
        SeparableLogGame::new(beta.to_vec(), vec![0.7; beta.len()], SeparablePricing::LinearSum)
            .unwrap()
            .into_game(100.0)
            .unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn analytic_partials_match_differences(
        gains in prop::collection::vec(0.2..1.0f64, 2),
        beta in prop::collection::vec(1.0..4.0f64, 2),
        u in prop::collection::vec(0.05..0.95f64, 2),
    ) {
        let diff = DiffSettings::default();
        for game in catalog_games(&gains, &beta) {
            let (lo, hi) = (game.constraints().lower().to_vec(), game.constraints().upper().to_vec());
            // keep OSNR points in its operating range
            let x: Vec<f64> = (0..2).map(|i| lo[i] + u[i] * (hi[i] - lo[i]).min(0.05)).collect();
            let analytic = game.utility_own_partials(&x).unwrap();
            for (i, a) in analytic.iter().enumerate() {
                let fd = diff.derivative(&x, i, |p| game.utility().value(i, p));
                prop_assert!(close(*a, fd, 1e-5, 1e-7), "player {i}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn q_jacobian_matches_differences(
        gains in prop::collection::vec(0.2..1.0f64, 2),
        beta in prop::collection::vec(1.0..4.0f64, 2),
        u in prop::collection::vec(0.05..0.95f64, 2),
        alpha in prop::collection::vec(0.5..80.0f64, 2),
    ) {
        let diff = DiffSettings::default();
        for game in catalog_games(&gains, &beta) {
            let (lo, hi) = (game.constraints().lower().to_vec(), game.constraints().upper().to_vec());
            let x: Vec<f64> = (0..2).map(|i| lo[i] + u[i] * (hi[i] - lo[i]).min(0.05)).collect();
            let q = game.jacobian_q(&alpha, &x, &diff).unwrap();
            let fd = game.jacobian_q_fd(&alpha, &x, &diff).unwrap();
            let scale = q.abs().max().max(1.0);
            prop_assert!((&q - &fd).abs().max() <= 1e-5 * scale, "{q} vs {fd}");
        }
    }

    #[test]
    fn osnr_sensitivity_matches_differences(
        scale in 0.8..1.2f64,
        alpha in prop::collection::vec(40.0..110.0f64, 2),
    ) {
        let link = osnr(scale, 1.0);
        let h = link.osnr_h(&alpha).unwrap();
        let fd = ne_map_jacobian_fd(&link.into_game(1.0).unwrap(), &alpha, &SolverSettings::default()).unwrap();
        prop_assert!((&h - &fd).abs().max() <= 1e-5 * h.abs().max(), "{h} vs {fd}");
    }

    #[test]
    fn qos_inequality_matches_sir(
        gains in prop::collection::vec(0.2..1.0f64, 3),
        target in prop::collection::vec(0.5..10.0f64, 3),
        x in prop::collection::vec(0.01..5.0f64, 3),
    ) {
        let w = wireless(&gains, &[1.0; 3], 5e-3);
        let s = w.qos_matrix(&target).unwrap();
        let b = w.qos_vector(&target);
        let sx = &s * nalgebra::DVector::from_column_slice(&x);
        for i in 0..3 {
            let sir = w.sir(&x, i).unwrap();
            // skip points within rounding of the boundary
            if (sir - target[i]).abs() > 1e-9 * target[i] {
                prop_assert_eq!(sir >= target[i], sx[i] >= b[i]);
            }
        }
    }

    #[test]
    fn solver_is_initialisation_independent(
        c in prop::collection::vec(-0.3..0.3f64, 2),
        linear in prop::collection::vec(-1.0..1.0f64, 2),
        alpha in prop::collection::vec(0.0..1.0f64, 2),
        x0 in prop::collection::vec(-2.0..2.0f64, 2),
        x1 in prop::collection::vec(-2.0..2.0f64, 2),
    ) {
        let coupling = DMatrix::from_row_slice(2, 2, &[1.5, c[0], c[1], 1.2]);
        let game = GameSpec::new(
            Utility::Quadratic(QuadraticUtility::new(linear, coupling).unwrap()),
            Pricing::Linear,
            ConstraintSet::uniform_box(2, -2.0, 2.0).unwrap(),
        ).unwrap();
        let cert = certify(&game, &alpha, Sampling { n_samples: 16, seed: 0 }).unwrap();
        prop_assume!(cert.get("assumption3").unwrap().holds);
        let s = SolverSettings::default();
        let a = solve_ne(&game, &alpha, &x0, &s).unwrap();
        let b = solve_ne(&game, &alpha, &x1, &s).unwrap();
        prop_assert!(a.x.max_abs_diff(&b.x) < 1e-7);
        // residual decreases over the tail of the run
        let tail = &a.residuals[a.residuals.len().saturating_sub(3)..];
        prop_assert!(tail.windows(2).all(|w| w[1] <= w[0]), "{:?}", a.residuals);
    }

    #[test]
    fn solver_methods_agree_with_closed_forms(
        gains in prop::collection::vec(0.2..1.0f64, 3),
        beta in prop::collection::vec(1.0..4.0f64, 3),
        alpha in prop::collection::vec(1.0..3.0f64, 3),
    ) {
        let w = wireless(&gains, &beta, 5e-3);
        let exact = w.wireless_ne(&alpha).unwrap();
        prop_assume!(exact.is_nonnegative());
        let game = w.into_game(100.0).unwrap();
        for method in [SolverMethod::ProjectedPseudoGradient, SolverMethod::BestResponseSweep] {
            let s = SolverSettings { method, ..Default::default() };
            let x = solve_ne(&game, &alpha, &game.constraints().center(), &s).unwrap().x;
            prop_assert!(x.max_abs_diff(&exact.x) < 1e-8, "{method:?}: {:?} vs {:?}", x, exact.x);
        }
    }

    #[test]
    fn separable_sensitivity_is_diagonal(
        beta in prop::collection::vec(1.0..4.0f64, 3),
        alpha in prop::collection::vec(0.1..1.0f64, 3),
    ) {
        let game = SeparableLogGame::new(beta.clone(), vec![1.0; 3], SeparablePricing::LinearSum)
            .unwrap()
            .into_game(100.0)
            .unwrap();
        let h = ne_sensitivity(&game, &alpha, HSource::Analytic, &SolverSettings::default()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { -beta[i] / (alpha[i] + 1.0).powi(2) } else { 0.0 };
                prop_assert!((h[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn price_vectors_are_nonnegative(values in prop::collection::vec(-5.0..5.0f64, 1..6)) {
        let p = PriceVector::new(values.clone()).unwrap();
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        prop_assert_eq!(p.clamped().len(), values.iter().filter(|v| **v < 0.0).count());
    }

    #[test]
    fn trajectory_csv_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e6..1e6f64, 9), 1..20)) {
        let mut tr = Trajectory::new(2);
        for (k, r) in rows.iter().enumerate() {
            tr.push(Sample {
                t: k as f64,
                x: r[0..2].to_vec(),
                alpha: r[2..4].to_vec(),
                welfare: r[4],
                lyapunov: r[5],
                metrics: r[6..8].to_vec(),
            }).unwrap();
        }
        let text = tr.to_csv_string().unwrap();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        for (rec, r) in reader.records().zip(&rows) {
            let rec = rec.unwrap();
            let parsed: Vec<f64> = rec.iter().map(|v| v.parse().unwrap()).collect();
            prop_assert_eq!(parsed.len(), 9);
            for (p, v) in parsed[1..8].iter().zip(&r[0..7]) {
                prop_assert!(close(*p, *v, 1e-14, 0.0), "{p} vs {v}");
            }
        }
    }
}

#[test]
fn design_inverts_the_equilibrium_map() {
    let game = reference_osnr_link().into_game(1.0).unwrap();
    let alpha = [73.4, 76.9];
    let x = equilibrium(&game, &alpha, &SolverSettings::default()).unwrap().x;
    let d = design_price(&game, &x).unwrap();
    assert!(d.feasible);
    for (a, b) in d.prices.iter().zip(alpha) {
        assert!((a - b).abs() < 1e-9 * b, "{a} vs {b}");
    }
}

#[test]
fn rk4_is_fourth_order() {
    // ẋ = −x for U_i = −x_i²/2 and zero price, exact solution e^{−t}
    let game = GameSpec::new(
        Utility::Quadratic(QuadraticUtility::new(vec![0.0], DMatrix::from_element(1, 1, 1.0)).unwrap()),
        Pricing::Linear,
        ConstraintSet::uniform_box(1, -5.0, 5.0).unwrap(),
    )
    .unwrap();
    let err = |dt: f64| {
        let s = FlowSettings {
            dt,
            horizon: 1.0,
            integrator: Integrator::Rk4,
            ..Default::default()
        };
        let r = game_flow(&game, &ConstantPrice(vec![0.0]), &[1.0], &s).unwrap();
        (r.x[0] - (-1.0f64).exp()).abs()
    };
    let ratio = err(0.1) / err(0.05);
    assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
}

#[test]
fn regulation_error_shrinks_with_horizon() {
    let game = reference_osnr_link().into_game(1.0).unwrap();
    let target = vec![0.0134, 0.0128];
    let spec = ControllerSpec {
        mode: ControlMode::Proportional,
        lambda_p: vec![5.0; 2],
        lambda_i: None,
        target: target.clone(),
    };
    // the linear gain is local; starts above the target leave its basin quickly
    let x0 = [0.010, 0.011];
    let run = |horizon: f64| {
        regulate(&game, &spec, &x0, &FlowSettings { horizon, ..Default::default() })
            .unwrap()
            .final_error
    };
    let (e1, e2) = (run(1.0), run(2.0));
    assert!(e2 < e1, "{e1} then {e2}");
}

#[test]
fn scenario_serialisation_round_trips() {
    let config: ScenarioConfig = scenario::parse(scenario::REFERENCE_SCENARIO).unwrap();
    let text = serde_json::to_string_pretty(&config).unwrap();
    assert_eq!(scenario::parse(&text).unwrap(), config);
}
