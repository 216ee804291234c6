//! Benchmark scenarios, misspecification regimes and the replicate loop.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Design};
use crate::error::{Error, Result};
use crate::estimators::{Estimator, EstimatorConfig, EstimatorRegistry, FitContext, ModelSpec, PropensityMode};
use crate::linalg::expit;
use crate::rng::{sample_normal, RngStream};
use crate::uncertainty::{bootstrap_intervals, mi_interval, Job, UncertaintyMethod, UncertaintySpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Linear,
    Quadratic,
    Ks,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Linear, Scenario::Quadratic, Scenario::Ks];

    pub fn true_mean(self) -> f64 {
        match self {
            Scenario::Linear | Scenario::Quadratic => 10.0,
            Scenario::Ks => 210.0,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Linear => "linear",
            Scenario::Quadratic => "quadratic",
            Scenario::Ks => "ks",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL.into_iter().find(|x| x.to_string() == s).ok_or_else(|| Error::Unknown {
            kind: "scenario",
            name: s.to_string(),
        })
    }
}

/// One simulated dataset with its ground truth.
#[derive(Clone, Debug)]
pub struct ScenarioDraw {
    /// Outcome after deletion, with the full outcome attached.
    pub data: Dataset,
    /// True response probabilities.
    pub propensity: Vec<f64>,
    /// Latent normals (KS scenario only), also present as data columns `u1..u4`.
    pub latent: Option<DMatrix<f64>>,
}

fn check_n(n: usize) -> Result<()> {
    if n < 10 {
        return Err(Error::InvalidInput(format!("scenarios need n >= 10, got {n}")));
    }
    Ok(())
}

fn assemble(
    y: Vec<f64>,
    p: Vec<f64>,
    rng: &mut RngStream,
    x: DMatrix<f64>,
    names: &[&str],
    latent: Option<DMatrix<f64>>,
) -> Result<ScenarioDraw> {
    let r: Vec<bool> = p.iter().map(|&pi| rng.uniform() < pi).collect();
    let data = Dataset::new(y.clone(), r, x, names.iter().map(|s| s.to_string()).collect())?.with_full_outcome(y)?;
    Ok(ScenarioDraw {
        data,
        propensity: p,
        latent,
    })
}

fn two_covariate(n: usize, rng: &mut RngStream, quadratic: bool) -> Result<ScenarioDraw> {
    check_n(n)?;
    let mut x = DMatrix::zeros(n, 2);
    let mut y = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    for i in 0..n {
        let x1 = sample_normal(rng, 0.0, 0.5)?;
        let x2 = x1 + sample_normal(rng, 0.25, 0.5)?;
        let eps = sample_normal(rng, 0.0, 4.0)?;
        let prod = x1 * x2;
        p.push(expit((0.15 + 0.75 * (x1 + x2) - 2.0 * prod) / 3.0));
        y.push(if quadratic {
            11.875 + 0.75 * (x1 + x2) - 2.0 * prod * prod + eps
        } else {
            10.8125 + 0.75 * (x1 + x2) - 2.0 * prod + eps
        });
        x[(i, 0)] = x1;
        x[(i, 1)] = x2;
    }
    assemble(y, p, rng, x, &["x1", "x2"], None)
}

/// Linear-interaction scenario; population mean 10.
pub fn gen_linear(n: usize, rng: &mut RngStream) -> Result<ScenarioDraw> {
    two_covariate(n, rng, false)
}

/// Squared-interaction outcome with the linear scenario's response model;
/// population mean 10.
pub fn gen_quadratic(n: usize, rng: &mut RngStream) -> Result<ScenarioDraw> {
    two_covariate(n, rng, true)
}

/// Observed covariates of the KS scenario as functions of the latent normals.
pub fn ks_transform(u: [f64; 4]) -> [f64; 4] {
    let e = u[0].exp();
    [
        e / 2.0,
        u[1] / (1.0 + e),
        (u[0] * u[2] / 25.0 + 0.6).powi(3),
        (u[1] + u[3] + 20.0).powi(2),
    ]
}

/// Kang-Schafer scenario with latent normals; population mean 210.
pub fn gen_ks(n: usize, rng: &mut RngStream) -> Result<ScenarioDraw> {
    check_n(n)?;
    let mut x = DMatrix::zeros(n, 8);
    let mut latent = DMatrix::zeros(n, 4);
    let mut y = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    for i in 0..n {
        let u = [rng.std_normal(), rng.std_normal(), rng.std_normal(), rng.std_normal()];
        let eps = rng.std_normal();
        p.push(expit(-u[0] + 0.5 * u[1] - 0.25 * u[2] - 0.1 * u[3]));
        y.push(210.0 + 27.4 * u[0] + 13.7 * (u[1] + u[2] + u[3]) + eps);
        let t = ks_transform(u);
        for j in 0..4 {
            x[(i, j)] = t[j];
            x[(i, 4 + j)] = u[j];
            latent[(i, j)] = u[j];
        }
    }
    assemble(y, p, rng, x, &["x1", "x2", "x3", "x4", "u1", "u2", "u3", "u4"], Some(latent))
}

pub fn generate(scenario: Scenario, n: usize, rng: &mut RngStream) -> Result<ScenarioDraw> {
    match scenario {
        Scenario::Linear => gen_linear(n, rng),
        Scenario::Quadratic => gen_quadratic(n, rng),
        Scenario::Ks => gen_ks(n, rng),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeTag {
    BothCorrect,
    PropCorrect,
    MeanCorrect,
    BothWrong,
}

impl RegimeTag {
    pub const ALL: [RegimeTag; 4] = [
        RegimeTag::BothCorrect,
        RegimeTag::PropCorrect,
        RegimeTag::MeanCorrect,
        RegimeTag::BothWrong,
    ];

    pub fn propensity_correct(self) -> bool {
        matches!(self, RegimeTag::BothCorrect | RegimeTag::PropCorrect)
    }

    pub fn mean_correct(self) -> bool {
        matches!(self, RegimeTag::BothCorrect | RegimeTag::MeanCorrect)
    }
}

impl fmt::Display for RegimeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegimeTag::BothCorrect => "both-correct",
            RegimeTag::PropCorrect => "prop-correct",
            RegimeTag::MeanCorrect => "mean-correct",
            RegimeTag::BothWrong => "both-wrong",
        })
    }
}

impl FromStr for RegimeTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegimeTag::ALL.into_iter().find(|x| x.to_string() == s).ok_or_else(|| Error::Unknown {
            kind: "regime",
            name: s.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Regime {
    pub tag: RegimeTag,
    pub spec: ModelSpec,
}

/// Designs for each model role under a regime. Two-covariate scenarios drop
/// the interaction when misspecified; the KS scenario swaps the latent
/// normals for the transformed covariates. BART covariate lists follow the
/// same correct/wrong choice, which only changes anything for KS.
pub fn regime_designs(scenario: Scenario, tag: RegimeTag) -> Regime {
    let xs = |k: usize| (1..=k).map(|j| format!("x{j}")).collect::<Vec<_>>();
    let us = |k: usize| (1..=k).map(|j| format!("u{j}")).collect::<Vec<_>>();
    let parse = |t: &[&str]| Design::parse(t).expect("built-in design");
    let spec = match scenario {
        Scenario::Linear | Scenario::Quadratic => {
            let wrong = parse(&["1", "x1", "x2"]);
            let prop = if tag.propensity_correct() { parse(&["1", "x1", "x2", "x1:x2"]) } else { wrong.clone() };
            let mean = match (tag.mean_correct(), scenario) {
                (false, _) => wrong,
                (true, Scenario::Linear) => parse(&["1", "x1", "x2", "x1:x2"]),
                (true, _) => parse(&["1", "x1", "x2", "x1^2:x2^2"]),
            };
            ModelSpec {
                propensity: prop,
                mean,
                bart_propensity: xs(2),
                bart_mean: xs(2),
            }
        }
        Scenario::Ks => {
            let pick = |correct: bool| if correct { us(4) } else { xs(4) };
            let (pc, mc) = (pick(tag.propensity_correct()), pick(tag.mean_correct()));
            ModelSpec {
                propensity: Design::main_effects(&pc),
                mean: Design::main_effects(&mc),
                bart_propensity: pc,
                bart_mean: mc,
            }
        }
    };
    Regime { tag, spec }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub n: usize,
    pub replicates: usize,
    pub methods: Vec<String>,
    pub regimes: Vec<RegimeTag>,
    pub uncertainty: Option<UncertaintySpec>,
    pub estimator: EstimatorConfig,
    pub seed: u64,
}

/// Outcome of one (replicate, regime, method) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellRecord {
    pub replicate: usize,
    pub regime: RegimeTag,
    pub method: String,
    /// Point estimate: the method's estimate, or the combined mean for
    /// multiple imputation.
    pub estimate: std::result::Result<f64, String>,
    /// `None` when no interval was requested or the method has none.
    pub interval: Option<std::result::Result<(f64, f64), String>>,
}

impl CellRecord {
    pub fn failed(&self) -> bool {
        self.estimate.is_err() || matches!(self.interval, Some(Err(_)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: Scenario,
    pub regime: RegimeTag,
    pub method: String,
    pub n: usize,
    /// Replicates that contributed (failures excluded).
    pub replicates: usize,
    pub bias: f64,
    pub rmse: f64,
    /// Percent of intervals containing the true mean.
    pub coverage: Option<f64>,
    /// Average interval length.
    pub ail: Option<f64>,
    pub failures: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub rows: Vec<MetricsRow>,
    pub records: Vec<CellRecord>,
    /// More than 10% of replicates failed in some cell.
    pub invalid: bool,
}

/// Share of failed replicates above which a run is marked invalid.
pub const FAILURE_CAP: f64 = 0.10;

/// Aggregates point estimates and intervals against the true mean.
pub fn summarize(truth: f64, estimates: &[f64], intervals: &[(f64, f64)]) -> (f64, f64, Option<f64>, Option<f64>) {
    let r = estimates.len() as f64;
    let bias = estimates.iter().sum::<f64>() / r - truth;
    let rmse = (estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / r).sqrt();
    if intervals.is_empty() {
        return (bias, rmse, None, None);
    }
    let k = intervals.len() as f64;
    let cover = intervals.iter().filter(|(lo, hi)| *lo <= truth && truth <= *hi).count() as f64;
    let ail = intervals.iter().map(|(lo, hi)| hi - lo).sum::<f64>() / k;
    (bias, rmse, Some(100.0 * cover / k), Some(ail))
}

fn replicate_stream(seed: u64, i: usize) -> RngStream {
    RngStream::new(seed, 0).child(i as u64)
}

/// The dataset replicate `i` of an experiment runs on.
pub fn replicate_draw(spec: &ExperimentSpec, i: usize) -> Result<ScenarioDraw> {
    generate(spec.scenario, spec.n, &mut replicate_stream(spec.seed, i).child_named("data"))
}

fn run_replicate(
    spec: &ExperimentSpec,
    methods: &[&dyn Estimator],
    regimes: &[Regime],
    i: usize,
) -> Vec<CellRecord> {
    let stream = replicate_stream(spec.seed, i);
    let cells = || regimes.iter().flat_map(|g| methods.iter().map(move |m| (g, *m)));
    let draw = match replicate_draw(spec, i) {
        Ok(d) => d,
        Err(e) => {
            return cells()
                .map(|(g, m)| CellRecord {
                    replicate: i,
                    regime: g.tag,
                    method: m.name().to_string(),
                    estimate: Err(format!("data generation: {e}")),
                    interval: None,
                })
                .collect();
        }
    };
    let data = &draw.data;
    let mut ctx = FitContext::new(&spec.estimator, stream.child_named("fit"));
    let mut records: Vec<CellRecord> = cells()
        .map(|(g, m)| CellRecord {
            replicate: i,
            regime: g.tag,
            method: m.name().to_string(),
            estimate: m.estimate(data, &g.spec, &mut ctx).map(|e| e.mu_hat).map_err(|e| e.to_string()),
            interval: None,
        })
        .collect();

    let Some(unc) = &spec.uncertainty else {
        return records;
    };
    let jobs: Vec<Job<'_>> = cells().map(|(g, m)| (m, &g.spec)).collect();
    match unc.method {
        UncertaintyMethod::Bootstrap => {
            let out = bootstrap_intervals(data, &jobs, &spec.estimator, unc, &stream.child_named("bootstrap"));
            for (rec, iv) in records.iter_mut().zip(out) {
                rec.interval = Some(iv.map(|v| (v.lower, v.upper)).map_err(|e| e.to_string()));
            }
        }
        UncertaintyMethod::MiMean | UncertaintyMethod::MiDraw => {
            let mode = if unc.method == UncertaintyMethod::MiMean {
                PropensityMode::Mean
            } else {
                PropensityMode::Draw
            };
            for (rec, (m, model)) in records.iter_mut().zip(&jobs) {
                match mi_interval(data, *m, model, &mut ctx, unc.resamples, mode, unc.interval) {
                    Ok(iv) => {
                        if rec.estimate.is_ok() {
                            rec.estimate = Ok(iv.point);
                        }
                        rec.interval = Some(Ok((iv.lower, iv.upper)));
                    }
                    Err(Error::Unsupported(_)) => {}
                    Err(e) => rec.interval = Some(Err(e.to_string())),
                }
            }
        }
    }
    records
}

/// Runs every (method, regime) cell on `replicates` independent draws.
/// Replicate `i` uses stream `i` of the seed; results do not depend on the
/// number of worker threads.
pub fn run_experiment(spec: &ExperimentSpec, registry: &EstimatorRegistry) -> Result<ExperimentResult> {
    if spec.replicates < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 replicates, got {}", spec.replicates)));
    }
    check_n(spec.n)?;
    spec.estimator.validate()?;
    if let Some(u) = &spec.uncertainty {
        u.validate()?;
    }
    if spec.methods.is_empty() || spec.regimes.is_empty() {
        return Err(Error::InvalidInput("no methods or regimes selected".into()));
    }
    let methods = spec.methods.iter().map(|m| registry.get(m)).collect::<Result<Vec<_>>>()?;
    let mut tags = spec.regimes.clone();
    tags.sort();
    tags.dedup();
    let regimes: Vec<Regime> = tags.iter().map(|&t| regime_designs(spec.scenario, t)).collect();

    let records: Vec<CellRecord> = (0..spec.replicates)
        .into_par_iter()
        .flat_map_iter(|i| run_replicate(spec, &methods, &regimes, i))
        .collect();

    let truth = spec.scenario.true_mean();
    let order = registry.names();
    let mut rows = Vec::new();
    let mut invalid = false;
    for g in &regimes {
        let mut ms: Vec<&dyn Estimator> = methods.clone();
        ms.sort_by_key(|m| order.iter().position(|o| *o == m.name()));
        ms.dedup_by_key(|m| m.name());
        for m in ms {
            let cell: Vec<&CellRecord> = records.iter().filter(|r| r.regime == g.tag && r.method == m.name()).collect();
            let mut est = Vec::new();
            let mut ivs = Vec::new();
            let mut failures = 0;
            for r in &cell {
                if r.failed() {
                    failures += 1;
                    let why = r.estimate.as_ref().err().or(r.interval.as_ref().and_then(|i| i.as_ref().err()));
                    log::warn!(
                        "replicate {} (seed {}, stream {}) {}/{} failed: {}",
                        r.replicate,
                        spec.seed,
                        r.replicate,
                        m.name(),
                        g.tag,
                        why.map_or("", |s| s.as_str())
                    );
                    continue;
                }
                est.push(*r.estimate.as_ref().unwrap());
                if let Some(Ok(iv)) = &r.interval {
                    ivs.push(*iv);
                }
            }
            if failures as f64 > FAILURE_CAP * spec.replicates as f64 {
                invalid = true;
            }
            let (bias, rmse, coverage, ail) = if est.is_empty() {
                (f64::NAN, f64::NAN, None, None)
            } else {
                summarize(truth, &est, &ivs)
            };
            rows.push(MetricsRow {
                scenario: spec.scenario,
                regime: g.tag,
                method: m.name().to_string(),
                n: spec.n,
                replicates: est.len(),
                bias,
                rmse,
                coverage,
                ail,
                failures,
            });
        }
    }
    if invalid {
        log::error!("more than {:.0}% of replicates failed in at least one cell; run is invalid", FAILURE_CAP * 100.0);
    }
    Ok(ExperimentResult { rows, records, invalid })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_transform_at_zero() {
        let t = ks_transform([0.0; 4]);
        assert_eq!(t[0], 0.5);
        assert_eq!(t[1], 0.0);
        assert!((t[2] - 0.216).abs() < 1e-15);
        assert_eq!(t[3], 400.0);
    }

    #[test]
    fn regime_tables() {
        let r = regime_designs(Scenario::Linear, RegimeTag::BothCorrect);
        assert_eq!(r.spec.propensity.to_string(), "{1, x1, x2, x1:x2}");
        assert_eq!(r.spec.mean.to_string(), "{1, x1, x2, x1:x2}");
        let r = regime_designs(Scenario::Linear, RegimeTag::BothWrong);
        assert_eq!(r.spec.propensity.to_string(), "{1, x1, x2}");
        assert_eq!(r.spec.mean.to_string(), "{1, x1, x2}");
        let r = regime_designs(Scenario::Quadratic, RegimeTag::MeanCorrect);
        assert_eq!(r.spec.mean.to_string(), "{1, x1, x2, x1^2:x2^2}");
        assert_eq!(r.spec.propensity.to_string(), "{1, x1, x2}");
        let r = regime_designs(Scenario::Ks, RegimeTag::MeanCorrect);
        assert_eq!(r.spec.propensity.to_string(), "{1, x1, x2, x3, x4}");
        assert_eq!(r.spec.mean.to_string(), "{1, u1, u2, u3, u4}");
        assert_eq!(r.spec.bart_mean, vec!["u1", "u2", "u3", "u4"]);
        assert_eq!(r.spec.bart_propensity, vec!["x1", "x2", "x3", "x4"]);
        assert!("sideways".parse::<RegimeTag>().is_err());
    }

    #[test]
    fn summary_consistency() {
        let est = [9.5, 10.2, 10.9, 9.9];
        let (bias, rmse, cov, ail) = summarize(10.0, &est, &[(9.0, 11.0), (10.5, 11.5)]);
        let var = est.iter().map(|e| (e - (10.0 + bias)).powi(2)).sum::<f64>() / 4.0;
        assert!((rmse * rmse - (bias * bias + var)).abs() < 1e-10);
        assert_eq!(cov, Some(50.0));
        assert_eq!(ail, Some(1.5));
    }
}
