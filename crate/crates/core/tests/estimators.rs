use nalgebra::DMatrix;
use robsq::bart::BartConfig;
use robsq::estimators::*;
use robsq::rng::RngStream;
use robsq::sim::{gen_linear, regime_designs, RegimeTag, Scenario};
use robsq::{Dataset, Design, Error};

fn config() -> EstimatorConfig {
    EstimatorConfig {
        bart: BartConfig::desk(),
        ..EstimatorConfig::default()
    }
}

fn toy(y: &[f64], r: &[bool], x: &[f64]) -> Dataset {
    let y = y.iter().zip(r).map(|(&v, &o)| if o { v } else { f64::NAN }).collect();
    Dataset::new(y, r.to_vec(), DMatrix::from_column_slice(x.len(), 1, x), vec!["x".into()]).unwrap()
}

fn linear(n: usize, seed: u64) -> Dataset {
    gen_linear(n, &mut RngStream::new(seed, 0)).unwrap().data
}

#[test]
fn aipwt_hand_case() {
    let d = toy(&[2.0, 4.0, 0.0, 0.0], &[true, true, false, false], &[0.0, 1.0, 2.0, 3.0]);
    let e = estimate_aipwt(&d, &[0.5, 0.8, 0.5, 0.8], &[1.0, 3.0, 5.0, 7.0], None).unwrap();
    // (1/4)[(2/0.5)(2-1)+1 + (1/0.8)(4-3)+3 + 5 + 7]
    let oracle = ((2.0 - 1.0) / 0.5 + 1.0 + (4.0 - 3.0) / 0.8 + 3.0 + 5.0 + 7.0) / 4.0;
    assert_eq!(e.mu_hat, oracle);
    assert_eq!(e.mu_hat, 4.8125);
}

#[test]
fn aipwt_degenerate_cases() {
    let y = [1.0, 5.0, 2.0, 8.0];
    let d = toy(&y, &[true; 4], &[0.0, 1.0, 2.0, 3.0]);
    let e = estimate_aipwt(&d, &[1.0; 4], &[0.3, 0.1, 9.0, 2.0], None).unwrap();
    assert!((e.mu_hat - 4.0).abs() < 1e-12);

    // Oracle outcome model: the residual term vanishes whatever the scores.
    let d = toy(&y, &[true, false, true, false], &[0.0, 1.0, 2.0, 3.0]);
    for z in [[0.2, 0.9, 0.4, 0.1], [1.0, 0.5, 0.7, 0.3]] {
        let e = estimate_aipwt(&d, &z, &y, None).unwrap();
        assert!((e.mu_hat - 4.0).abs() < 1e-12);
    }

    let err = estimate_aipwt(&d, &[0.0, 0.5, 0.5, 0.5], &y, None).unwrap_err();
    assert!(matches!(err, Error::Domain(_)));
    assert!(estimate_aipwt(&d, &[0.0, 0.5, 0.5, 0.5], &y, Some(0.05)).is_ok());
    // A zero score on a missing row carries no weight.
    assert!(estimate_aipwt(&d, &[0.5, 0.0, 0.5, 0.5], &y, None).is_ok());
}

#[test]
fn cc_and_mlr_toys() {
    let d = toy(&[1.0, 2.0, 3.0, 4.0], &[true, true, false, false], &[0.0, 1.0, 2.0, 3.0]);
    assert_eq!(estimate_cc(&d).unwrap().mu_hat, 1.5);
    let e = impute_mlr(&d, &Design::parse(&["1", "x"]).unwrap()).unwrap();
    let imp = e.imputed.unwrap();
    assert!((imp[2] - 3.0).abs() < 1e-12 && (imp[3] - 4.0).abs() < 1e-12);
    assert!((e.mu_hat - 2.5).abs() < 1e-12);
}

#[test]
fn pspp_with_constant_scores_is_mlr() {
    let d = linear(400, 3);
    let spec = regime_designs(Scenario::Linear, RegimeTag::BothCorrect).spec;
    let mlr = impute_mlr(&d, &spec.mean).unwrap();
    let pspp = fit_pspp(&d, &vec![0.6; d.n()], Some(&spec.mean), &Default::default()).unwrap();
    assert!((mlr.mu_hat - pspp.mu_hat).abs() < 1e-10);
}

#[test]
fn pspp_with_noise_scores_tracks_mlr() {
    let d = linear(1000, 4);
    let spec = regime_designs(Scenario::Linear, RegimeTag::BothCorrect).spec;
    let mut rng = RngStream::new(99, 1);
    let z: Vec<f64> = (0..d.n()).map(|_| 0.05 + 0.9 * rng.uniform()).collect();
    let mlr = impute_mlr(&d, &spec.mean).unwrap().mu_hat;
    let pspp = fit_pspp(&d, &z, Some(&spec.mean), &Default::default()).unwrap().mu_hat;
    assert!((mlr - pspp).abs() < 0.05, "mlr {mlr} pspp {pspp}");
}

/// Linear scenario covariates with responses deleted completely at random.
fn mcar(n: usize, seed: u64) -> Dataset {
    let base = linear(n, seed);
    let mut rng = RngStream::new(seed, 7);
    let r: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.6).collect();
    let full = base.full_outcome().unwrap().to_vec();
    let y = full.iter().zip(&r).map(|(&v, &o)| if o { v } else { f64::NAN }).collect();
    Dataset::new(y, r, base.x().clone(), base.names().to_vec()).unwrap().with_full_outcome(full).unwrap()
}

#[test]
fn psbpp_with_flat_propensity_tracks_mlr() {
    let d = mcar(1000, 5);
    let spec = regime_designs(Scenario::Linear, RegimeTag::BothCorrect).spec;
    let cfg = config();
    let mut ctx = FitContext::new(&cfg, RngStream::new(5, 0));
    let ps = estimate_psbpp(&d, &spec, &mut ctx, PropensityMode::Mean).unwrap().mu_hat;
    let mlr = impute_mlr(&d, &spec.mean).unwrap().mu_hat;
    assert!((ps - mlr).abs() < 0.1, "psbpp {ps} mlr {mlr}");
}

#[test]
fn constant_score_column_reproduces_direct_bart() {
    let d = linear(500, 6);
    let cols = vec!["x1".to_string(), "x2".to_string()];
    let cfg = config();
    let mut ctx = FitContext::new(&cfg, RngStream::new(6, 0));
    let plain = ctx.outcome_fit(&d, &cols, None).unwrap();
    let with_z = ctx.outcome_fit(&d, &cols, Some(("flat", &vec![0.5; d.n()]))).unwrap();
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!((avg(&plain.mean) - avg(&with_z.mean)).abs() < 0.05);
}

#[test]
fn bart_on_constant_outcome() {
    let mut d = linear(300, 7);
    d = d.with_outcome(d.y().iter().map(|v| if v.is_nan() { *v } else { 3.25 }).collect(), d.r().to_vec()).unwrap();
    let cfg = config();
    let mut ctx = FitContext::new(&cfg, RngStream::new(7, 0));
    let e = estimate_bart_direct(&d, &ModelSpec::main_effects(&d), &mut ctx).unwrap();
    assert!((e.mu_hat - 3.25).abs() < 0.01);
}

#[test]
fn fully_observed_data() {
    let full = linear(200, 8);
    let y = full.full_outcome().unwrap().to_vec();
    let d = full.with_outcome(y.clone(), vec![true; y.len()]).unwrap();
    let avg = y.iter().sum::<f64>() / y.len() as f64;
    let cfg = config();
    let spec = ModelSpec::main_effects(&d);
    let reg = EstimatorRegistry::standard();
    for name in ["cc", "mlr", "aipwt-bart", "bart", "psbpp", "bartps"] {
        let mut ctx = FitContext::new(&cfg, RngStream::new(8, 0));
        let e = reg.get(name).unwrap().estimate(&d, &spec, &mut ctx).unwrap();
        assert!((e.mu_hat - avg).abs() < 1e-10, "{name}: {} vs {avg}", e.mu_hat);
    }
}

#[test]
fn observed_entries_are_never_altered() {
    let d = linear(300, 9);
    let cfg = config();
    let spec = regime_designs(Scenario::Linear, RegimeTag::BothCorrect).spec;
    let reg = EstimatorRegistry::standard();
    let mut ctx = FitContext::new(&cfg, RngStream::new(9, 0));
    for name in reg.names() {
        if name == "bd" {
            continue;
        }
        let e = reg.get(name).unwrap().estimate(&d, &spec, &mut ctx).unwrap();
        if let Some(imp) = e.imputed {
            for i in d.observed_rows() {
                assert_eq!(imp[i], d.y()[i], "{name} row {i}");
            }
            for i in d.missing_rows() {
                assert!(imp[i].is_finite());
            }
        }
    }
    for (name, mode) in [("psbpp", PropensityMode::Draw), ("bartps", PropensityMode::Mean), ("pspp", PropensityMode::Mean)] {
        let done = reg.get(name).unwrap().impute_many(&d, &spec, &mut ctx, 3, mode).unwrap();
        assert_eq!(done.len(), 3);
        for c in done {
            for i in d.observed_rows() {
                assert_eq!(c[i], d.y()[i]);
            }
        }
    }
}

#[test]
fn every_method_is_location_equivariant() {
    let d = linear(300, 10);
    let c = 37.5;
    let shifted = d.map_outcome(|v| v + c).unwrap();
    let shifted = shifted.with_full_outcome(d.full_outcome().unwrap().iter().map(|v| v + c).collect()).unwrap();
    let cfg = config();
    let spec = regime_designs(Scenario::Linear, RegimeTag::PropCorrect).spec;
    let reg = EstimatorRegistry::standard();
    for name in reg.names() {
        let m = reg.get(name).unwrap();
        let a = m.estimate(&d, &spec, &mut FitContext::new(&cfg, RngStream::new(10, 0))).unwrap().mu_hat;
        let b = m.estimate(&shifted, &spec, &mut FitContext::new(&cfg, RngStream::new(10, 0))).unwrap().mu_hat;
        assert!((b - a - c).abs() < 1e-6, "{name}: {a} -> {b}");
    }
}

#[test]
fn shared_context_matches_fresh_context() {
    let d = linear(300, 11);
    let cfg = config();
    let spec = regime_designs(Scenario::Linear, RegimeTag::BothWrong).spec;
    let reg = EstimatorRegistry::standard();
    let mut shared = FitContext::new(&cfg, RngStream::new(11, 0));
    let first: Vec<f64> = ["bartps", "aipwt-bart", "bart", "psbpp"]
        .iter()
        .map(|n| reg.get(n).unwrap().estimate(&d, &spec, &mut shared).unwrap().mu_hat)
        .collect();
    for (n, v) in ["bartps", "aipwt-bart", "bart", "psbpp"].iter().zip(first) {
        let fresh = reg.get(n).unwrap().estimate(&d, &spec, &mut FitContext::new(&cfg, RngStream::new(11, 0))).unwrap();
        assert_eq!(fresh.mu_hat, v, "{n}");
    }
}

#[test]
fn registry_lookup_and_override() {
    let mut reg = EstimatorRegistry::standard();
    assert_eq!(reg.names(), ["bd", "cc", "mlr", "aipwt", "pspp", "psbpp", "aipwt-bart", "bart", "bartps"]);
    assert!(matches!(reg.get("ipw"), Err(Error::Unknown { .. })));

    struct Fixed;
    impl Estimator for Fixed {
        fn name(&self) -> &'static str {
            "cc"
        }
        fn estimate(&self, _: &Dataset, _: &ModelSpec, _: &mut FitContext) -> robsq::Result<Estimate> {
            Ok(Estimate { method: "cc".into(), mu_hat: -1.0, imputed: None })
        }
    }
    reg.register(Box::new(Fixed));
    assert_eq!(reg.names().len(), 9);
    let d = toy(&[1.0, 2.0], &[true, false], &[0.0, 1.0]);
    let cfg = config();
    let mut ctx = FitContext::new(&cfg, RngStream::new(0, 0));
    assert_eq!(reg.get("cc").unwrap().estimate(&d, &ModelSpec::main_effects(&d), &mut ctx).unwrap().mu_hat, -1.0);
}

/// Imputes a constant on whatever scale it is handed.
struct Constant(f64);

impl Estimator for Constant {
    fn name(&self) -> &'static str {
        "constant"
    }
    fn estimate(&self, data: &Dataset, _: &ModelSpec, _: &mut FitContext) -> robsq::Result<Estimate> {
        let imputed: Vec<f64> = (0..data.n()).map(|i| if data.r()[i] { data.y()[i] } else { self.0 }).collect();
        Ok(Estimate { method: "constant".into(), mu_hat: imputed.iter().sum::<f64>() / data.n() as f64, imputed: Some(imputed) })
    }
}

fn zero_inflated(n: usize, seed: u64) -> Dataset {
    let mut rng = RngStream::new(seed, 0);
    let mut x = DMatrix::zeros(n, 1);
    let mut full = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    for i in 0..n {
        let xi = rng.std_normal();
        x[(i, 0)] = xi;
        let positive = rng.uniform() < 1.0 / (1.0 + (-(0.5 + 1.5 * xi)).exp());
        full.push(if positive { (1.0 + 0.5 * xi + 0.3 * rng.std_normal()).exp() } else { 0.0 });
        r.push(rng.uniform() >= 0.3);
    }
    let y = full.iter().zip(&r).map(|(&v, &o)| if o { v } else { f64::NAN }).collect();
    Dataset::new(y, r, x, vec!["x".into()]).unwrap().with_full_outcome(full).unwrap()
}

#[test]
fn pipeline_all_zero_outcomes() {
    let d = toy(&[0.0, 0.0, 0.0, 0.0, 0.0], &[true, true, false, true, false], &[0.1, 0.2, 0.3, 0.4, 0.5]);
    let cfg = config();
    let mut ctx = FitContext::new(&cfg, RngStream::new(1, 0));
    let e = two_part_boxcox_pipeline(&d, &Constant(4.0), &ModelSpec::main_effects(&d), &mut ctx).unwrap();
    assert_eq!(e.mu_hat, 0.0);
    assert!(e.imputed.unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn pipeline_negative_transformed_imputation_is_zero() {
    let d = toy(&[1.0, 2.0, 3.0, 4.0, 5.0, 0.0], &[true, true, true, true, true, false], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    let cfg = config();
    let mut ctx = FitContext::new(&cfg, RngStream::new(1, 0));
    let e = two_part_boxcox_pipeline(&d, &Constant(-2.0), &ModelSpec::main_effects(&d), &mut ctx).unwrap();
    assert_eq!(e.imputed.as_ref().unwrap()[5], 0.0);
    assert!((e.mu_hat - 15.0 / 6.0).abs() < 1e-12);
    assert_eq!(e.method, "constant+boxcox");

    let neg = toy(&[1.0, -2.0, 3.0], &[true, true, false], &[0.0, 1.0, 2.0]);
    assert!(matches!(
        two_part_boxcox_pipeline(&neg, &Constant(1.0), &ModelSpec::main_effects(&neg), &mut ctx),
        Err(Error::Domain(_))
    ));
}

#[test]
fn pipeline_recovers_zero_inflated_lognormal_mean() {
    let cfg = config();
    let reg = EstimatorRegistry::standard();
    let pspp = reg.get("pspp").unwrap();
    let mut worst: f64 = 0.0;
    for rep in 0..50 {
        let d = zero_inflated(400, 1000 + rep);
        let truth = d.full_outcome().unwrap().iter().sum::<f64>() / d.n() as f64;
        let mut ctx = FitContext::new(&cfg, RngStream::new(rep, 1));
        let e = two_part_boxcox_pipeline(&d, pspp, &ModelSpec::main_effects(&d), &mut ctx).unwrap();
        worst = worst.max((e.mu_hat / truth - 1.0).abs());
    }
    assert!(worst < 0.10, "worst relative error {worst}");
}
