use crate::bart::{backfit_probit, PredictMode};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::box_cox;

use super::context::FitContext;
use super::{mean, Estimate, Estimator, ModelSpec};

/// Two-part imputation for non-negative outcomes with a point mass at zero.
///
/// 1. Probit BART (on `spec.bart_mean`) separates zero from positive
///    outcomes among the observed rows; missing rows with predicted
///    probability of a positive outcome below 0.5 are imputed as 0.
/// 2. A Box-Cox transform is fit to the observed positive outcomes.
/// 3. `method` runs on the transformed scale over the observed positives and
///    the missing rows predicted positive. Imputations that are negative on
///    the transformed scale become 0; the rest are transformed back.
///
/// When every observed outcome is zero, every imputation is zero.
pub fn two_part_boxcox_pipeline(
    data: &Dataset,
    method: &dyn Estimator,
    spec: &ModelSpec,
    ctx: &mut FitContext,
) -> Result<Estimate> {
    let tag = format!("{}+boxcox", method.name());
    let obs = data.observed_rows();
    if let Some(&i) = obs.iter().find(|&&i| data.y()[i] < 0.0) {
        return Err(Error::Domain(format!("two-part pipeline needs non-negative outcomes (row {i})")));
    }
    let positive: Vec<usize> = obs.iter().copied().filter(|&i| data.y()[i] > 0.0).collect();
    if positive.is_empty() {
        return Ok(Estimate::completed(&tag, data, |_| 0.0));
    }
    let missing = data.missing_rows();

    let predicted_positive: Vec<usize> = if positive.len() == obs.len() || missing.is_empty() {
        missing.clone()
    } else {
        let x = data.covariates(&spec.bart_mean)?;
        let labels: Vec<bool> = obs.iter().map(|&i| data.y()[i] > 0.0).collect();
        let mut rng = ctx.rng("zero-part");
        let post = backfit_probit(&x.select_rows(&obs), &labels, &ctx.config().bart, &mut rng)?;
        let p = post.predict(&x.select_rows(&missing), PredictMode::Mean)?;
        missing.iter().zip(p).filter(|(_, p)| *p >= 0.5).map(|(&i, _)| i).collect()
    };

    let pos_y: Vec<f64> = positive.iter().map(|&i| data.y()[i]).collect();
    let bc = box_cox(&pos_y)?;

    let mut completed: Vec<f64> = (0..data.n()).map(|i| if data.r()[i] { data.y()[i] } else { 0.0 }).collect();
    if !predicted_positive.is_empty() {
        let rows: Vec<usize> = positive.iter().chain(&predicted_positive).copied().collect();
        let sub = data.select_rows(&rows)?;
        let sub = sub.with_outcome(
            sub.y().iter().map(|&v| if v.is_nan() { v } else { bc.transform(v) }).collect(),
            sub.r().to_vec(),
        )?;
        let mut sub_ctx = ctx.child("positive-part");
        let est = method.estimate(&sub, spec, &mut sub_ctx)?;
        let imputed = est.imputed.ok_or_else(|| {
            Error::Unsupported(format!("`{}` does not produce imputations for the two-part pipeline", method.name()))
        })?;
        for (j, &i) in predicted_positive.iter().enumerate() {
            let t = imputed[positive.len() + j];
            completed[i] = if t < 0.0 {
                0.0
            } else {
                let v = bc.inverse(t);
                if !v.is_finite() {
                    return Err(Error::Numerical(format!(
                        "imputation {t} lies outside the Box-Cox range for lambda {}",
                        bc.lambda_tilde
                    )));
                }
                v
            };
        }
    }
    Ok(Estimate {
        method: tag,
        mu_hat: mean(&completed),
        imputed: Some(completed),
    })
}

/// Runs another estimator through [`two_part_boxcox_pipeline`].
pub struct TwoPart<'a> {
    inner: &'a dyn Estimator,
    name: &'static str,
}

impl<'a> TwoPart<'a> {
    pub fn new(inner: &'a dyn Estimator) -> Self {
        // Names are `&'static`; a handful of adapters per process is fine to leak.
        let name: &'static str = Box::leak(format!("{}+boxcox", inner.name()).into_boxed_str());
        Self { inner, name }
    }
}

impl Estimator for TwoPart<'_> {
    fn name(&self) -> &'static str {
        self.name
    }

    fn uses_bart(&self) -> bool {
        true
    }

    fn estimate(&self, data: &Dataset, spec: &ModelSpec, ctx: &mut FitContext) -> Result<Estimate> {
        two_part_boxcox_pipeline(data, self.inner, spec, ctx)
    }
}
