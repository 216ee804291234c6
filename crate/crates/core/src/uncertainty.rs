//! Interval estimation: modified bootstrap and multiple imputation, both
//! combined with Rubin's rules.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{mean, Estimate, Estimator, EstimatorConfig, FitContext, ModelSpec, PropensityMode};
use crate::rng::{std_normal_quantile, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UncertaintyMethod {
    Bootstrap,
    MiMean,
    MiDraw,
}

impl fmt::Display for UncertaintyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Bootstrap => "bootstrap",
            Self::MiMean => "mi-mean",
            Self::MiDraw => "mi-draw",
        })
    }
}

impl FromStr for UncertaintyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bootstrap" => Ok(Self::Bootstrap),
            "mi-mean" => Ok(Self::MiMean),
            "mi-draw" => Ok(Self::MiDraw),
            _ => Err(Error::Unknown {
                kind: "uncertainty method",
                name: s.to_string(),
            }),
        }
    }
}

/// Interval construction from the combined estimates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalKind {
    /// `q̄ ± t_{df, 0.975} √T`.
    #[default]
    T,
    /// Empirical 2.5% and 97.5% quantiles of the per-resample estimates.
    Percentile,
}

/// Within-resample variance used by the bootstrap.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WithinVariance {
    /// Pure between-resample variance.
    #[default]
    Zero,
    /// Completed-data variance over n for each resample.
    Completed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintySpec {
    pub method: UncertaintyMethod,
    /// Bootstrap resamples or imputations.
    pub resamples: usize,
    pub interval: IntervalKind,
    pub within: WithinVariance,
}

impl Default for UncertaintySpec {
    fn default() -> Self {
        Self {
            method: UncertaintyMethod::Bootstrap,
            resamples: 200,
            interval: IntervalKind::T,
            within: WithinVariance::Zero,
        }
    }
}

impl UncertaintySpec {
    pub fn validate(&self) -> Result<()> {
        if self.resamples < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 resamples, got {}", self.resamples)));
        }
        Ok(())
    }
}

/// Rubin's rules: `T = W̄ + (1 + 1/D) B`,
/// `df = (D - 1) (1 + W̄ / ((1 + 1/D) B))^2`, infinite when `B = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RubinCombined {
    pub q_bar: f64,
    pub w_bar: f64,
    pub b: f64,
    pub t: f64,
    pub df: f64,
    pub d: usize,
}

pub fn rubin_combine(estimates: &[f64], within: &[f64]) -> Result<RubinCombined> {
    let d = estimates.len();
    if d < 2 {
        return Err(Error::InvalidInput(format!("Rubin's rules need at least 2 estimates, got {d}")));
    }
    if within.len() != d {
        return Err(Error::InvalidInput(format!("{} within-variances for {d} estimates", within.len())));
    }
    if estimates.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite estimate among the completed datasets".into()));
    }
    if within.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidInput("within-variances must be finite and non-negative".into()));
    }
    let df_ = d as f64;
    let q_bar = mean(estimates);
    let w_bar = mean(within);
    let b = estimates.iter().map(|q| (q - q_bar).powi(2)).sum::<f64>() / (df_ - 1.0);
    let inflated = (1.0 + 1.0 / df_) * b;
    let t = w_bar + inflated;
    let df = if b > 0.0 {
        (df_ - 1.0) * (1.0 + w_bar / inflated).powi(2)
    } else {
        f64::INFINITY
    };
    Ok(RubinCombined {
        q_bar,
        w_bar,
        b,
        t,
        df,
        d,
    })
}

impl RubinCombined {
    /// Two-sided `level` quantile multiplier: Student t with `df`, normal when infinite.
    pub fn multiplier(&self, level: f64) -> f64 {
        let p = 0.5 + level / 2.0;
        if self.df.is_finite() {
            StudentsT::new(0.0, 1.0, self.df).expect("positive df").inverse_cdf(p)
        } else {
            std_normal_quantile(p)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntervalEstimate {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub length: f64,
    pub method: UncertaintyMethod,
    pub d: usize,
    pub combined: RubinCombined,
}

fn interval(
    estimates: &[f64],
    within: &[f64],
    kind: IntervalKind,
    method: UncertaintyMethod,
) -> Result<IntervalEstimate> {
    let c = rubin_combine(estimates, within)?;
    let (lower, upper) = match kind {
        IntervalKind::T => {
            let half = c.multiplier(0.95) * c.t.sqrt();
            (c.q_bar - half, c.q_bar + half)
        }
        IntervalKind::Percentile => {
            let mut s = estimates.to_vec();
            s.sort_by(f64::total_cmp);
            let q = |p: f64| {
                let h = p * (s.len() - 1) as f64;
                let lo = h.floor() as usize;
                let hi = h.ceil() as usize;
                s[lo] + (h - lo as f64) * (s[hi] - s[lo])
            };
            // Keep the point inside the interval under extreme skew.
            (q(0.025).min(c.q_bar), q(0.975).max(c.q_bar))
        }
    };
    Ok(IntervalEstimate {
        point: c.q_bar,
        lower,
        upper,
        length: upper - lower,
        method,
        d: c.d,
        combined: c,
    })
}

fn completed_variance(est: &Estimate, data: &Dataset) -> f64 {
    let v: Vec<f64> = match &est.imputed {
        Some(v) => v.clone(),
        None => data.observed_rows().iter().map(|&i| data.y()[i]).collect(),
    };
    sample_variance(&v) / v.len() as f64
}

fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// One bootstrap job: an estimator with its model specification.
pub type Job<'a> = (&'a dyn Estimator, &'a ModelSpec);

/// Modified bootstrap for several estimators at once. Resample `b` draws its
/// rows from `rng.child(b)` and refits every job in a shared context, so
/// jobs that fit identical BART models reuse them. Returns one result per
/// job; a failure in any resample fails that job only.
pub fn bootstrap_intervals(
    data: &Dataset,
    jobs: &[Job<'_>],
    config: &EstimatorConfig,
    spec: &UncertaintySpec,
    rng: &RngStream,
) -> Vec<Result<IntervalEstimate>> {
    if let Err(e) = spec.validate() {
        return jobs.iter().map(|_| Err(Error::InvalidInput(e.to_string()))).collect();
    }
    let per_resample: Vec<Result<Vec<Result<(f64, f64)>>>> = (0..spec.resamples)
        .into_par_iter()
        .map(|b| {
            let stream = rng.child(b as u64);
            let rows = data.bootstrap_rows(&mut stream.child_named("rows"))?;
            let boot = data.select_rows(&rows)?;
            let mut ctx = FitContext::new(config, stream.child_named("fit"));
            Ok(jobs
                .iter()
                .map(|(est, model)| {
                    let e = est.estimate(&boot, model, &mut ctx)?;
                    let w = match spec.within {
                        WithinVariance::Zero => 0.0,
                        WithinVariance::Completed => completed_variance(&e, &boot),
                    };
                    Ok((e.mu_hat, w))
                })
                .collect())
        })
        .collect();

    (0..jobs.len())
        .map(|j| {
            let mut q = Vec::with_capacity(spec.resamples);
            let mut w = Vec::with_capacity(spec.resamples);
            for (b, r) in per_resample.iter().enumerate() {
                let res = r.as_ref().map_err(|e| Error::Numerical(format!("resample {b}: {e}")))?;
                let (qi, wi) = res[j]
                    .as_ref()
                    .map_err(|e| Error::Numerical(format!("resample {b}: {e}")))?;
                q.push(*qi);
                w.push(*wi);
            }
            interval(&q, &w, spec.interval, UncertaintyMethod::Bootstrap)
        })
        .collect()
}

/// Modified bootstrap for one estimator.
pub fn heitjan_bootstrap(
    data: &Dataset,
    estimator: &dyn Estimator,
    model: &ModelSpec,
    config: &EstimatorConfig,
    spec: &UncertaintySpec,
    rng: &RngStream,
) -> Result<IntervalEstimate> {
    bootstrap_intervals(data, &[(estimator, model)], config, spec, rng)
        .pop()
        .expect("one job")
}

/// Multiple imputation with `d` completed datasets, combined by Rubin's
/// rules with within-variance `var(completed) / n`.
pub fn mi_interval(
    data: &Dataset,
    estimator: &dyn Estimator,
    model: &ModelSpec,
    ctx: &mut FitContext,
    d: usize,
    mode: PropensityMode,
    kind: IntervalKind,
) -> Result<IntervalEstimate> {
    if d < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 imputations, got {d}")));
    }
    let completed = estimator.impute_many(data, model, ctx, d, mode)?;
    let q: Vec<f64> = completed.iter().map(|c| mean(c)).collect();
    let w: Vec<f64> = completed.iter().map(|c| sample_variance(c) / c.len() as f64).collect();
    let method = match mode {
        PropensityMode::Mean => UncertaintyMethod::MiMean,
        PropensityMode::Draw => UncertaintyMethod::MiDraw,
    };
    interval(&q, &w, kind, method)
}
