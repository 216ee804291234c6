//! Population-mean estimators behind a common trait, registered by name.
//!
//! | name         | outcome model                  | response model        |
//! |--------------|--------------------------------|-----------------------|
//! | `bd`         | none (full data before deletion) | none                |
//! | `cc`         | none (complete cases)          | none                  |
//! | `mlr`        | OLS on the mean design         | none                  |
//! | `aipwt`      | OLS on the mean design         | logistic              |
//! | `pspp`       | spline in `z` plus mean design | logistic              |
//! | `psbpp`      | spline in `z*` plus mean design | probit BART          |
//! | `aipwt-bart` | BART                           | probit BART           |
//! | `bart`       | BART                           | none                  |
//! | `bartps`     | BART on covariates and `z*`    | probit BART           |

mod classic;
mod context;
mod pipeline;
mod robust;

use serde::{Deserialize, Serialize};

use crate::bart::BartConfig;
use crate::data::{Dataset, Design};
use crate::error::{Error, Result};
use crate::spline::BasisOptions;

pub use classic::{
    estimate_aipwt, estimate_bd, estimate_cc, fit_pspp, impute_mlr, logistic_scores, spline_model, SplineModel,
};
pub use context::{FitContext, OutcomeFit, ScoreChoice};
pub use pipeline::{two_part_boxcox_pipeline, TwoPart};
pub use robust::{estimate_aipwt_bart, estimate_bart_direct, estimate_bartps, estimate_psbpp};

/// Point estimate of the mean plus the completed outcome vector for
/// imputation methods. For `aipwt` the completions are the outcome-model
/// predictions; the estimate itself also carries the weighted residual term.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub method: String,
    pub mu_hat: f64,
    pub imputed: Option<Vec<f64>>,
}

impl Estimate {
    pub(crate) fn completed(method: &str, data: &Dataset, fill: impl Fn(usize) -> f64) -> Self {
        let imputed: Vec<f64> = (0..data.n()).map(|i| if data.r()[i] { data.y()[i] } else { fill(i) }).collect();
        Self {
            method: method.to_string(),
            mu_hat: mean(&imputed),
            imputed: Some(imputed),
        }
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Which summary of a BART propensity posterior the estimators consume.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropensityMode {
    /// Posterior mean of `Phi(G(x))`.
    #[default]
    Mean,
    /// A single posterior draw.
    Draw,
}

/// Model specification: regression designs for the logistic propensity and
/// OLS/spline outcome models, and the covariates BART sees in each role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub propensity: Design,
    pub mean: Design,
    pub bart_propensity: Vec<String>,
    pub bart_mean: Vec<String>,
}

impl ModelSpec {
    /// Main-effects designs on every covariate.
    pub fn main_effects(data: &Dataset) -> Self {
        let cols = data.names().to_vec();
        Self {
            propensity: Design::main_effects(&cols),
            mean: Design::main_effects(&cols),
            bart_propensity: cols.clone(),
            bart_mean: cols,
        }
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        self.propensity.validate(data)?;
        self.mean.validate(data)?;
        for c in self.bart_propensity.iter().chain(&self.bart_mean) {
            data.column_index(c)?;
        }
        if self.bart_propensity.is_empty() || self.bart_mean.is_empty() {
            return Err(Error::InvalidInput("BART covariate lists must not be empty".into()));
        }
        Ok(())
    }
}

/// Settings shared by all estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub bart: BartConfig,
    pub basis: BasisOptions,
    /// Lower bound on AIPWT scores; `None` keeps them raw.
    pub clip: Option<f64>,
    /// Propensity summary used by `psbpp` and `bartps` point estimates.
    pub propensity_mode: PropensityMode,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            bart: BartConfig::default(),
            basis: BasisOptions::default(),
            clip: None,
            propensity_mode: PropensityMode::Mean,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.bart.validate()?;
        self.basis.validate()?;
        if let Some(c) = self.clip {
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::InvalidInput(format!("clip must lie in (0, 1), got {c}")));
            }
        }
        Ok(())
    }
}

/// A mean estimator. Implementations are stateless; fitted models that can
/// be shared between methods live in the [`FitContext`].
pub trait Estimator: Send + Sync {
    fn name(&self) -> &'static str;

    /// BART-family methods see only the BART covariate lists of the spec.
    fn uses_bart(&self) -> bool {
        false
    }

    fn estimate(&self, data: &Dataset, spec: &ModelSpec, ctx: &mut FitContext) -> Result<Estimate>;

    /// `d` completed outcome vectors for multiple imputation.
    fn impute_many(
        &self,
        _data: &Dataset,
        _spec: &ModelSpec,
        _ctx: &mut FitContext,
        _d: usize,
        _mode: PropensityMode,
    ) -> Result<Vec<Vec<f64>>> {
        Err(Error::Unsupported(format!(
            "multiple imputation is not defined for `{}`",
            self.name()
        )))
    }
}

macro_rules! estimator {
    ($ty:ident, $name:literal, $bart:literal, |$d:ident, $s:ident, $c:ident| $body:expr) => {
        pub struct $ty;

        impl Estimator for $ty {
            fn name(&self) -> &'static str {
                $name
            }

            fn uses_bart(&self) -> bool {
                $bart
            }

            fn estimate(&self, $d: &Dataset, $s: &ModelSpec, $c: &mut FitContext) -> Result<Estimate> {
                $body
            }
        }
    };
}

estimator!(BeforeDeletion, "bd", false, |d, _s, _c| estimate_bd(d));
estimator!(CompleteCase, "cc", false, |d, _s, _c| estimate_cc(d));
estimator!(Mlr, "mlr", false, |d, s, _c| impute_mlr(d, &s.mean));
estimator!(Aipwt, "aipwt", false, |d, s, c| {
    let z = logistic_scores(d, &s.propensity)?;
    let mhat = classic::ols_predictions(d, &s.mean)?;
    estimate_aipwt(d, &z, &mhat, c.config().clip)
});
estimator!(AipwtBart, "aipwt-bart", true, |d, s, c| estimate_aipwt_bart(d, s, c));
estimator!(BartDirect, "bart", true, |d, s, c| estimate_bart_direct(d, s, c));

pub struct Pspp;

impl Estimator for Pspp {
    fn name(&self) -> &'static str {
        "pspp"
    }

    fn estimate(&self, data: &Dataset, spec: &ModelSpec, ctx: &mut FitContext) -> Result<Estimate> {
        let z = logistic_scores(data, &spec.propensity)?;
        fit_pspp(data, &z, Some(&spec.mean), &ctx.config().basis)
    }

    fn impute_many(
        &self,
        data: &Dataset,
        spec: &ModelSpec,
        ctx: &mut FitContext,
        d: usize,
        _mode: PropensityMode,
    ) -> Result<Vec<Vec<f64>>> {
        robust::spline_imputations(data, spec, ctx, d, |data, _ctx, _k, boot| {
            // Parameter uncertainty of the logistic model: refit on the
            // resample, score every original row.
            let fit = crate::linalg::logistic_fit(&spec.propensity.build(boot)?, boot.r())?;
            Ok(fit.predict(&spec.propensity.build(data)?.matrix))
        })
    }
}

pub struct Psbpp;

impl Estimator for Psbpp {
    fn name(&self) -> &'static str {
        "psbpp"
    }

    fn uses_bart(&self) -> bool {
        true
    }

    fn estimate(&self, data: &Dataset, spec: &ModelSpec, ctx: &mut FitContext) -> Result<Estimate> {
        let mode = ctx.config().propensity_mode;
        estimate_psbpp(data, spec, ctx, mode)
    }

    fn impute_many(
        &self,
        data: &Dataset,
        spec: &ModelSpec,
        ctx: &mut FitContext,
        d: usize,
        mode: PropensityMode,
    ) -> Result<Vec<Vec<f64>>> {
        robust::spline_imputations(data, spec, ctx, d, |data, ctx, k, _boot| {
            let choice = robust::score_choice(ctx, data, spec, mode, k, d)?;
            ctx.probit_scores(data, &spec.bart_propensity, choice).map(|z| z.to_vec())
        })
    }
}

pub struct BartPs;

impl Estimator for BartPs {
    fn name(&self) -> &'static str {
        "bartps"
    }

    fn uses_bart(&self) -> bool {
        true
    }

    fn estimate(&self, data: &Dataset, spec: &ModelSpec, ctx: &mut FitContext) -> Result<Estimate> {
        let mode = ctx.config().propensity_mode;
        estimate_bartps(data, spec, ctx, mode)
    }

    fn impute_many(
        &self,
        data: &Dataset,
        spec: &ModelSpec,
        ctx: &mut FitContext,
        d: usize,
        mode: PropensityMode,
    ) -> Result<Vec<Vec<f64>>> {
        robust::bartps_imputations(data, spec, ctx, d, mode)
    }
}

/// Ordered collection of estimators addressable by name.
pub struct EstimatorRegistry {
    entries: Vec<Box<dyn Estimator>>,
}

impl Default for EstimatorRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

impl EstimatorRegistry {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    /// The nine built-in methods in table order.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(BeforeDeletion));
        r.register(Box::new(CompleteCase));
        r.register(Box::new(Mlr));
        r.register(Box::new(Aipwt));
        r.register(Box::new(Pspp));
        r.register(Box::new(Psbpp));
        r.register(Box::new(AipwtBart));
        r.register(Box::new(BartDirect));
        r.register(Box::new(BartPs));
        r
    }

    /// Adds an estimator, replacing any existing one with the same name.
    pub fn register(&mut self, e: Box<dyn Estimator>) {
        match self.entries.iter().position(|x| x.name() == e.name()) {
            Some(i) => self.entries[i] = e,
            None => self.entries.push(e),
        }
    }

    pub fn get(&self, name: &str) -> Result<&dyn Estimator> {
        self.entries
            .iter()
            .find(|e| e.name() == name)
            .map(|e| e.as_ref())
            .ok_or_else(|| Error::Unknown {
                kind: "method",
                name: name.to_string(),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }
}
