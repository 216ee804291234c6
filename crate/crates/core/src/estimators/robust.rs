use crate::data::Dataset;
use crate::error::Result;

use super::classic::{estimate_aipwt, fit_pspp, spline_model};
use super::context::{FitContext, ScoreChoice};
use super::{Estimate, ModelSpec, PropensityMode};

fn relabel(mut e: Estimate, method: &str) -> Estimate {
    e.method = method.to_string();
    e
}

/// Score choice for a point estimate; draw mode picks one stored draw at random.
fn point_choice(ctx: &mut FitContext, data: &Dataset, spec: &ModelSpec, mode: PropensityMode) -> Result<ScoreChoice> {
    match mode {
        _ if data.r().iter().all(|&r| r) => Ok(ScoreChoice::Mean),
        PropensityMode::Mean => Ok(ScoreChoice::Mean),
        PropensityMode::Draw => {
            let draws = ctx.probit_posterior(data, &spec.bart_propensity)?.draw_count();
            Ok(ScoreChoice::Draw(ctx.rng("propensity-draw").index(draws)))
        }
    }
}

/// Evenly spaced stored draw for imputation `k` of `d`.
fn spaced(draws: usize, k: usize, d: usize) -> usize {
    ((2 * k + 1) * draws / (2 * d)).min(draws - 1)
}

pub(super) fn score_choice(
    ctx: &mut FitContext,
    data: &Dataset,
    spec: &ModelSpec,
    mode: PropensityMode,
    k: usize,
    d: usize,
) -> Result<ScoreChoice> {
    match mode {
        _ if data.r().iter().all(|&r| r) => Ok(ScoreChoice::Mean),
        PropensityMode::Mean => Ok(ScoreChoice::Mean),
        PropensityMode::Draw => {
            let draws = ctx.probit_posterior(data, &spec.bart_propensity)?.draw_count();
            Ok(ScoreChoice::Draw(spaced(draws, k, d)))
        }
    }
}

/// Spline on probit-BART response probabilities plus the mean design.
pub fn estimate_psbpp(data: &Dataset, spec: &ModelSpec, ctx: &mut FitContext, mode: PropensityMode) -> Result<Estimate> {
    let choice = point_choice(ctx, data, spec, mode)?;
    let z = ctx.probit_scores(data, &spec.bart_propensity, choice)?;
    Ok(relabel(fit_pspp(data, &z, Some(&spec.mean), &ctx.config().basis)?, "psbpp"))
}

/// AIPWT with both the response probabilities and the outcome mean from BART.
pub fn estimate_aipwt_bart(data: &Dataset, spec: &ModelSpec, ctx: &mut FitContext) -> Result<Estimate> {
    let z = ctx.probit_scores(data, &spec.bart_propensity, ScoreChoice::Mean)?;
    let fit = ctx.outcome_fit(data, &spec.bart_mean, None)?;
    Ok(relabel(estimate_aipwt(data, &z, &fit.mean, ctx.config().clip)?, "aipwt-bart"))
}

/// Imputation with the continuous-BART posterior mean.
pub fn estimate_bart_direct(data: &Dataset, spec: &ModelSpec, ctx: &mut FitContext) -> Result<Estimate> {
    let fit = ctx.outcome_fit(data, &spec.bart_mean, None)?;
    Ok(Estimate::completed("bart", data, |i| fit.mean[i]))
}

fn score_key(spec: &ModelSpec, choice: ScoreChoice) -> String {
    format!("z:{}:{choice:?}", spec.bart_propensity.join(","))
}

/// Imputation with continuous BART on the covariates and the BART response
/// probability.
pub fn estimate_bartps(data: &Dataset, spec: &ModelSpec, ctx: &mut FitContext, mode: PropensityMode) -> Result<Estimate> {
    let choice = point_choice(ctx, data, spec, mode)?;
    let z = ctx.probit_scores(data, &spec.bart_propensity, choice)?;
    let fit = ctx.outcome_fit(data, &spec.bart_mean, Some((&score_key(spec, choice), &z)))?;
    Ok(Estimate::completed("bartps", data, |i| fit.mean[i]))
}

/// Multiple imputation for the spline methods. Imputation `k` refits the
/// spline (and whatever `scores` refits) on a bootstrap resample, predicts
/// the originally missing rows and adds normal residual noise.
///
/// `scores(data, ctx, k, boot)` returns scores for every row of `data`.
pub(super) fn spline_imputations(
    data: &Dataset,
    spec: &ModelSpec,
    ctx: &mut FitContext,
    d: usize,
    mut scores: impl FnMut(&Dataset, &mut FitContext, usize, &Dataset) -> Result<Vec<f64>>,
) -> Result<Vec<Vec<f64>>> {
    let missing = data.missing_rows();
    let mut out = Vec::with_capacity(d);
    for k in 0..d {
        let mut rng = ctx.rng(&format!("mi:{k}"));
        let rows = data.bootstrap_rows(&mut rng)?;
        let boot = data.select_rows(&rows)?;
        let z = scores(data, ctx, k, &boot)?;
        // Fit on the resample's observed rows; the original missing rows ride
        // along unobserved so the model predicts them.
        let all: Vec<usize> = rows.iter().chain(&missing).copied().collect();
        let joint = data.select_rows(&all)?;
        let zj: Vec<f64> = all.iter().map(|&i| z[i]).collect();
        let model = spline_model(&joint, &zj, Some(&spec.mean), &ctx.config().basis)?;
        let sd = model.sigma2.sqrt();
        let mut completed = data.y().to_vec();
        for (j, &i) in missing.iter().enumerate() {
            completed[i] = model.predictions[rows.len() + j] + sd * rng.std_normal();
        }
        out.push(completed);
    }
    Ok(out)
}

/// Multiple imputation for `bartps`: posterior-draw predictions of the
/// outcome BART plus residual noise at that draw's sigma. In draw mode each
/// imputation also uses its own draw of the response probabilities, which
/// requires one outcome fit per imputation.
pub(super) fn bartps_imputations(
    data: &Dataset,
    spec: &ModelSpec,
    ctx: &mut FitContext,
    d: usize,
    mode: PropensityMode,
) -> Result<Vec<Vec<f64>>> {
    let missing = data.missing_rows();
    let mut out = Vec::with_capacity(d);
    for k in 0..d {
        let choice = score_choice(ctx, data, spec, mode, k, d)?;
        let z = ctx.probit_scores(data, &spec.bart_propensity, choice)?;
        let fit = ctx.outcome_fit(data, &spec.bart_mean, Some((&score_key(spec, choice), &z)))?;
        let draw = spaced(fit.posterior.draw_count(), k, d);
        let x_mis = fit.x.select_rows(&missing);
        let pred = fit.posterior.predict(&x_mis, crate::bart::PredictMode::Draw(draw))?;
        let sigma = fit.posterior.sigma_trace()[draw];
        let mut rng = ctx.rng(&format!("mi:{k}"));
        let mut completed = data.y().to_vec();
        for (j, &i) in missing.iter().enumerate() {
            completed[i] = pred[j] + sigma * rng.std_normal();
        }
        out.push(completed);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::spaced;

    #[test]
    fn spaced_draws_cover_the_chain() {
        assert_eq!((0..4).map(|k| spaced(200, k, 4)).collect::<Vec<_>>(), vec![25, 75, 125, 175]);
        assert_eq!(spaced(1, 0, 10), 0);
        assert_eq!(spaced(1, 9, 10), 0);
        assert!((0..300).all(|k| spaced(200, k, 300) < 200));
    }
}
