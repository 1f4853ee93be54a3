//! Cross-module checks of the fitting pipeline on small synthetic problems.

use deepes_core::data::Dataset;
use deepes_core::estimators::{build_surrogate, fit_dqr, fit_two_step, QuantileFn};
use deepes_core::eval::{mean_sd, mspe, vpi, VpiTarget};
use deepes_core::nn::FitConfig;
use deepes_core::noncrossing::fit_nc_two_step;
use deepes_core::quad::integrate;
use deepes_core::simgen::{generate, uniform_points, DgpSpec, ErrorDist, Model, TrueFns};
use deepes_core::tuning::{nu2_hat, TauRule};

fn linear_spec(n: usize, seed: u64) -> DgpSpec {
    DgpSpec {
        n_test: 2000,
        ..DgpSpec::new(
            Model::Linear {
                coef: vec![1.0, -1.0],
            },
            ErrorDist::normal(),
            n,
            seed,
        )
    }
}

fn quick() -> FitConfig {
    FitConfig {
        learning_rate: 1e-3,
        max_epochs: 60,
        hidden: vec![16, 16],
        ..FitConfig::default()
    }
}

#[test]
fn dqr_recovers_linear_median() {
    let spec = linear_spec(2000, 1);
    let sim = generate(&spec).unwrap();
    let (net, _) = fit_dqr(&sim.train, 0.5, &quick()).unwrap();
    let truth = TrueFns::for_spec(&spec, 0.5).unwrap();
    let err = mspe(&net.predict_dataset(&sim.test).unwrap(), &truth.f0_on(&sim.test)).unwrap();
    assert!(err < 0.02, "median MSPE {err}");
}

#[test]
fn constant_response_gives_constant_fits() {
    let x = uniform_points(2, 512, 3).unwrap();
    let data = x.with_response(vec![3.0; 512]).unwrap();
    let cfg = FitConfig {
        learning_rate: 1e-2,
        max_epochs: 300,
        ..quick()
    };
    let fit = fit_two_step(&data, 0.1, TauRule::default(), &cfg).unwrap();
    for (q, e) in fit.model.predict_batch(&x).unwrap() {
        assert!((q - 3.0).abs() < 0.1, "quantile {q}");
        // a quantile slightly above 3 shifts the surrogate by (1 − α)/α times the gap
        let implied = (3.0 - q).min(0.0) / 0.1 + q;
        assert!((e - implied).abs() < 0.05, "es {e}, quantile {q}");
        assert!(e <= 3.0 + 0.05, "es {e}");
    }
}

#[test]
fn fitted_levels_are_ordered_on_average() {
    let spec = linear_spec(2000, 5);
    let sim = generate(&spec).unwrap();
    let mut means = Vec::new();
    for alpha in [0.05, 0.2, 0.5] {
        let fit = fit_two_step(&sim.train, alpha, TauRule::default(), &quick()).unwrap();
        let pred = fit.model.predict_batch(&sim.test).unwrap();
        let q: Vec<f64> = pred.iter().map(|p| p.0).collect();
        let e: Vec<f64> = pred.iter().map(|p| p.1).collect();
        let (mq, _) = mean_sd(&q).unwrap();
        let (me, _) = mean_sd(&e).unwrap();
        assert!(me < mq, "α={alpha}: mean ES {me} not below mean quantile {mq}");
        means.push((mq, me));
    }
    assert!(means.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1), "{means:?}");
}

#[test]
fn oracle_surrogate_has_scaled_es_mean() {
    let spec = DgpSpec {
        n_test: 1,
        ..DgpSpec::new(Model::C1, ErrorDist::normal(), 100_000, 8)
    };
    let train = generate(&spec).unwrap().train;
    let truth = TrueFns::for_spec(&spec, 0.1).unwrap();
    let z = build_surrogate(&train, &QuantileFn::Oracle(truth.quantile_fn()), 0.1).unwrap();
    // compare with α·g0 at the same rows: the difference has mean zero
    let diff: Vec<f64> = z.iter().zip(truth.g0_on(&train)).map(|(z, g)| z - 0.1 * g).collect();
    let (m, sd) = mean_sd(&diff).unwrap();
    assert!(m.abs() < 3.0 * sd / (diff.len() as f64).sqrt(), "mean {m}, sd {sd}");
}

#[test]
fn single_level_stack_matches_plain_two_step() {
    let spec = linear_spec(2000, 9);
    let sim = generate(&spec).unwrap();
    let truth = TrueFns::for_spec(&spec, 0.1).unwrap();
    let g0 = truth.g0_on(&sim.test);
    let plain = fit_two_step(&sim.train, 0.1, TauRule::default(), &quick()).unwrap();
    let stack = fit_nc_two_step(&sim.train, &[0.1], TauRule::default(), &quick()).unwrap();
    let a = mspe(&plain.model.predict_es_batch(&sim.test).unwrap(), &g0).unwrap();
    let (_, g) = stack.model.predict_batch(&sim.test).unwrap();
    let b = mspe(&g[0], &g0).unwrap();
    assert!(a < 0.1 && b < 0.1, "two-step {a}, stack {b}");
    assert!(b < 2.0 * a + 0.01 && a < 2.0 * b + 0.01, "two-step {a}, stack {b}");
}

#[test]
fn noise_columns_carry_little_importance() {
    let spec = DgpSpec {
        noise_columns: 2,
        ..linear_spec(2000, 11)
    };
    let sim = generate(&spec).unwrap();
    let fit = fit_two_step(&sim.train, 0.1, TauRule::default(), &quick()).unwrap();
    let names: Vec<String> = ["x1", "x2", "n1", "n2"].iter().map(|s| s.to_string()).collect();
    let rep = vpi(&fit.model, &sim.test, VpiTarget::Response, &names, 0, 3).unwrap();
    let ranked: Vec<&str> = rep.ranked().iter().map(|f| f.name.as_str()).collect();
    assert!(ranked[..2].contains(&"x1") && ranked[..2].contains(&"x2"), "{ranked:?}");
    for f in &rep.features[2..] {
        assert!(f.mean_relative_increase.abs() < 0.02, "{}: {}", f.name, f.mean_relative_increase);
    }
}

#[test]
fn nu2_estimate_matches_quadrature() {
    let alpha = 0.1;
    let dist = ErrorDist::normal();
    let q = dist.quantile(alpha).unwrap();
    let moment = |k: i32| integrate(|u| (dist.quantile(u).unwrap() - q).powi(k), 0.0, alpha, 1e-12).unwrap();
    let nu2 = moment(2) - moment(1).powi(2);

    let spec = DgpSpec {
        n_test: 1,
        ..DgpSpec::new(
            Model::Homoscedastic {
                base: Box::new(Model::C1),
            },
            dist,
            200_000,
            12,
        )
    };
    let train: Dataset = generate(&spec).unwrap().train;
    let truth = TrueFns::for_spec(&spec, alpha).unwrap();
    let est = nu2_hat(&train, &QuantileFn::Oracle(truth.quantile_fn())).unwrap();
    assert!((est / nu2 - 1.0).abs() < 0.03, "estimate {est} vs {nu2}");
}
