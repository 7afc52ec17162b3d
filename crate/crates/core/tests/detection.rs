mod common;

use common::{newton_oracle, simulate_design};
use proptest::prelude::*;
use sentinel_core::detection::{fit_design, laplace_objective, logistic_loglik, raise_alerts, Design, LagLogisticSpec};
use sentinel_core::stochastics::derive_stream;

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut stream = derive_stream(656, "gradient");
    let design = simulate_design(&[-3.0, 25.0, 0.8, -0.4], 0.5, 4, 60, &mut stream);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let params: Vec<f64> = vec![
            stream.uniform(-5.0, -1.0),
            stream.uniform(0.0, 40.0),
            stream.uniform(-1.5, 1.5),
            stream.uniform(-1.5, 1.5),
            stream.uniform(-4.0, 1.5),
        ];
        let analytic = laplace_objective(&design, &params, 0.0).gradient;
        for k in 0..params.len() {
            let h = 1e-5 * params[k].abs().max(1.0);
            let mut up = params.clone();
            let mut down = params.clone();
            up[k] += h;
            down[k] -= h;
            let fd =
                (laplace_objective(&design, &up, 0.0).value - laplace_objective(&design, &down, 0.0).value) / (2.0 * h);
            let rel = (analytic[k] - fd).abs() / fd.abs().max(1e-3);
            worst = worst.max(rel);
            assert!(rel < 1e-5, "param {k} at {params:?}: analytic {} vs fd {fd}", analytic[k]);
        }
    }
    eprintln!("worst relative gradient error {worst:e}");
}

#[test]
fn ridge_gradient_matches_central_differences() {
    let mut stream = derive_stream(656, "ridge-gradient");
    let design = simulate_design(&[-3.0, 25.0, 0.8, -0.4], 0.5, 3, 40, &mut stream);
    let params = [-2.0, 10.0, 0.3, 0.1, -1.0];
    let analytic = laplace_objective(&design, &params, 1e-2).gradient;
    for k in 0..params.len() {
        let h = 1e-5 * params[k].abs().max(1.0);
        let mut up = params.to_vec();
        let mut down = params.to_vec();
        up[k] += h;
        down[k] -= h;
        let fd =
            (laplace_objective(&design, &up, 1e-2).value - laplace_objective(&design, &down, 1e-2).value) / (2.0 * h);
        assert!((analytic[k] - fd).abs() / fd.abs().max(1e-3) < 1e-5);
    }
}

#[test]
fn zero_variance_reduces_to_ordinary_likelihood() {
    let design = simulate_design(&[-3.0, 25.0, 0.8, -0.4], 0.3, 5, 80, &mut derive_stream(1, "tau0"));
    let beta = [-2.5, 20.0, 0.5, -0.2];
    let mut params = beta.to_vec();
    params.push(f64::NEG_INFINITY);
    let eval = laplace_objective(&design, &params, 0.0);
    let plain = logistic_loglik(&design, &beta, 0.0);
    assert!((eval.value - plain).abs() <= 1e-12 * plain.abs(), "{} vs {plain}", eval.value);
    assert!(eval.modes.iter().all(|&g| g == 0.0));
    assert_eq!(eval.gradient[4], 0.0);
}

#[test]
fn recovers_known_coefficients() {
    let truth = [-4.0, 40.0, 1.0, -0.5];
    let design = simulate_design(&truth, 0.0, 20, 300, &mut derive_stream(656, "recovery"));
    let fit = fit_design(&design).unwrap();
    assert!(fit.converged);
    for (k, t) in truth.iter().enumerate() {
        let z = (fit.beta[k] - t) / fit.std_errors[k];
        assert!(z.abs() < 3.0, "beta[{k}] = {} (se {}), truth {t}", fit.beta[k], fit.std_errors[k]);
    }
}

#[test]
fn recovers_random_intercept_variance_order() {
    let design = simulate_design(&[-2.0, 20.0, 0.5, -0.5], 1.0, 25, 300, &mut derive_stream(656, "tau"));
    let fit = fit_design(&design).unwrap();
    assert!(fit.converged);
    assert!(fit.tau_sq > 0.3 && fit.tau_sq < 3.0, "tau_sq {}", fit.tau_sq);
    assert_eq!(fit.gamma.len(), 25);
}

#[test]
fn single_year_fit_matches_newton_oracle() {
    let design = simulate_design(&[-3.0, 30.0, 0.7, -0.6], 0.0, 1, 300, &mut derive_stream(656, "single"));
    let fit = fit_design(&design).unwrap();
    assert_eq!(fit.tau_sq, 0.0);
    let oracle = newton_oracle(&design);
    for (b, o) in fit.beta.iter().zip(&oracle) {
        assert!((b - o).abs() < 1e-6, "{b} vs {o}");
    }
}

#[test]
fn fit_is_invariant_to_row_order() {
    let design = simulate_design(&[-2.0, 20.0, 0.5, -0.5], 0.5, 4, 150, &mut derive_stream(9, "order"));
    let mut stream = derive_stream(9, "shuffle");
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut groups = Vec::new();
    // Reverse the group order and shuffle rows within each group.
    for g in design.groups.iter().rev() {
        let mut idx: Vec<usize> = g.clone().collect();
        for i in (1..idx.len()).rev() {
            idx.swap(i, stream.index(i + 1));
        }
        let start = rows.len();
        for i in idx {
            rows.push(design.row(i).to_vec());
            y.push(design.y[i]);
        }
        groups.push(start..rows.len());
    }
    let shuffled = Design::new(rows, y, groups).unwrap();
    let a = fit_design(&design).unwrap();
    let b = fit_design(&shuffled).unwrap();
    for (x, z) in a.beta.iter().zip(&b.beta) {
        assert!((x - z).abs() < 1e-6 * (1.0 + x.abs()), "{x} vs {z}");
    }
    assert!((a.tau_sq - b.tau_sq).abs() < 1e-6 * (1.0 + a.tau_sq));
}

proptest! {
    #[test]
    fn raising_threshold_never_adds_alerts(
        risk in prop::collection::vec(prop::option::of(0.0..1.0f64), 1..120),
        lo in 0.01..0.98f64,
        gap in 0.0..0.5f64,
        reference in 1u32..130,
    ) {
        let hi = (lo + gap).min(0.99);
        let dates: Vec<u32> = (1..=risk.len() as u32).collect();
        let low = raise_alerts(1, &dates, &risk, &LagLogisticSpec { lag: 1, threshold: lo }, 1, reference).unwrap();
        let high = raise_alerts(1, &dates, &risk, &LagLogisticSpec { lag: 1, threshold: hi }, 1, reference).unwrap();
        prop_assert!(high.alert_days.iter().all(|d| low.alert_days.contains(d)));
        prop_assert!(low.alert_days.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(low.alert_days.iter().all(|&d| d <= reference));
    }
}
