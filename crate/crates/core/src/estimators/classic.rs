use nalgebra::DMatrix;

use crate::data::{Dataset, Design};
use crate::error::{Error, Result};
use crate::linalg::{logistic_fit, ols_fit, reml_spline_fit, DesignMatrix};
use crate::spline::{is_degenerate, truncated_power_basis, BasisOptions};

use super::{mean, Estimate};

/// Mean of the full outcome before deletion (simulation benchmark).
pub fn estimate_bd(data: &Dataset) -> Result<Estimate> {
    let full = data
        .full_outcome()
        .ok_or_else(|| Error::Unsupported("`bd` needs the pre-deletion outcome, available only in simulations".into()))?;
    Ok(Estimate {
        method: "bd".into(),
        mu_hat: mean(full),
        imputed: Some(full.to_vec()),
    })
}

/// Mean of the observed outcomes.
pub fn estimate_cc(data: &Dataset) -> Result<Estimate> {
    let obs: Vec<f64> = data.observed_rows().iter().map(|&i| data.y()[i]).collect();
    Ok(Estimate {
        method: "cc".into(),
        mu_hat: mean(&obs),
        imputed: None,
    })
}

/// OLS of the observed outcomes on `design`, predicted for every row.
pub(crate) fn ols_predictions(data: &Dataset, design: &Design) -> Result<Vec<f64>> {
    let dm = design.build(data)?;
    let obs = data.observed_rows();
    let y: Vec<f64> = obs.iter().map(|&i| data.y()[i]).collect();
    let fit = ols_fit(&dm.select_rows(&obs), &y)?;
    Ok(fit.predict(&dm.matrix))
}

/// Regression imputation with the fitted conditional mean.
pub fn impute_mlr(data: &Dataset, design: &Design) -> Result<Estimate> {
    let pred = ols_predictions(data, design)?;
    Ok(Estimate::completed("mlr", data, |i| pred[i]))
}

/// Logistic response probabilities for every row.
pub fn logistic_scores(data: &Dataset, design: &Design) -> Result<Vec<f64>> {
    let dm = design.build(data)?;
    let fit = logistic_fit(&dm, data.r())?;
    Ok(fit.predict(&dm.matrix))
}

/// Augmented inverse-probability-weighted mean in residual form,
/// `(1/n) sum { (r/z)(y - m) + m }`.
///
/// Scores are used as given unless `clip` supplies a lower bound. A zero
/// score on an observed row is an error.
pub fn estimate_aipwt(data: &Dataset, z: &[f64], mhat: &[f64], clip: Option<f64>) -> Result<Estimate> {
    let n = data.n();
    if z.len() != n || mhat.len() != n {
        return Err(Error::InvalidInput(format!(
            "aipwt needs {n} scores and predictions, got {} and {}",
            z.len(),
            mhat.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        if !mhat[i].is_finite() {
            return Err(Error::InvalidInput(format!("outcome prediction in row {i} is not finite")));
        }
        total += mhat[i];
        if data.r()[i] {
            let zi = match clip {
                Some(c) => z[i].max(c),
                None => z[i],
            };
            if !(zi > 0.0 && zi <= 1.0) {
                return Err(Error::Domain(format!("response probability {} in observed row {i} is outside (0, 1]", z[i])));
            }
            total += (data.y()[i] - mhat[i]) / zi;
        }
    }
    let imputed = (0..n).map(|i| if data.r()[i] { data.y()[i] } else { mhat[i] }).collect();
    Ok(Estimate {
        method: "aipwt".into(),
        mu_hat: total / n as f64,
        imputed: Some(imputed),
    })
}

/// Penalized spline in the scores plus a parametric term, fitted on the
/// observed rows.
#[derive(Clone, Debug)]
pub struct SplineModel {
    /// Conditional-mean predictions for every row.
    pub predictions: Vec<f64>,
    /// Residual variance estimate.
    pub sigma2: f64,
    /// False when the scores were degenerate and only the parametric term was fit.
    pub spline_used: bool,
}

/// `y = b0 + b1 z + sum_h u_h (z - tau_h)_+ + f(x) + e` with the knots on the
/// range of the observed rows' scores and the smoothing chosen by REML. `f`
/// enters without its intercept. Degenerate scores drop the spline with a
/// warning.
pub fn spline_model(data: &Dataset, z: &[f64], f: Option<&Design>, basis: &BasisOptions) -> Result<SplineModel> {
    let n = data.n();
    if z.len() != n {
        return Err(Error::InvalidInput(format!("{} scores for {n} rows", z.len())));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("scores contain non-finite values".into()));
    }
    let obs = data.observed_rows();
    let y: Vec<f64> = obs.iter().map(|&i| data.y()[i]).collect();
    let z_obs: Vec<f64> = obs.iter().map(|&i| z[i]).collect();
    let f_part = match f.and_then(Design::without_intercept) {
        Some(d) => Some(d.build(data)?),
        None => None,
    };

    if is_degenerate(&z_obs) {
        log::warn!("propensity scores are constant on the observed rows; fitting the parametric term only");
        let mut m = DMatrix::from_element(n, 1, 1.0);
        if let Some(fp) = &f_part {
            m = DesignMatrix::unnamed(m).hstack(fp).matrix;
        }
        let dm = DesignMatrix::unnamed(m);
        let fit = ols_fit(&dm.select_rows(&obs), &y)?;
        return Ok(SplineModel {
            predictions: fit.predict(&dm.matrix),
            sigma2: fit.residual_variance,
            spline_used: false,
        });
    }

    let spec = basis.place(&z_obs)?;
    let (mut fixed, random) = truncated_power_basis(z, &spec);
    if let Some(fp) = &f_part {
        fixed = DesignMatrix::unnamed(fixed).hstack(fp).matrix;
    }
    let fit = reml_spline_fit(&fixed.select_rows(&obs), &random.select_rows(&obs), &y)?;
    Ok(SplineModel {
        predictions: fit.predict(&fixed, &random),
        sigma2: fit.sigma2,
        spline_used: true,
    })
}

/// Imputes missing outcomes from [`spline_model`] and averages.
pub fn fit_pspp(data: &Dataset, z: &[f64], f: Option<&Design>, basis: &BasisOptions) -> Result<Estimate> {
    let model = spline_model(data, z, f, basis)?;
    Ok(Estimate::completed("pspp", data, |i| model.predictions[i]))
}
