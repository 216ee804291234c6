use std::collections::HashMap;
use std::rc::Rc;

use crate::bart::{backfit_continuous, backfit_probit, BartPosterior, PredictMode};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::EstimatorConfig;

/// Which propensity scores to read off a probit posterior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScoreChoice {
    Mean,
    Draw(usize),
}

/// Continuous BART fitted on the observed rows, with posterior-mean
/// predictions for every row.
pub struct OutcomeFit {
    pub posterior: BartPosterior,
    pub x: nalgebra::DMatrix<f64>,
    pub mean: Vec<f64>,
}

/// Per-dataset fitting state: configuration, a random stream, and BART fits
/// shared between methods. Every random quantity is drawn from a child
/// stream named after what it is for, so results do not depend on which
/// method asks first or whether a fit came from the cache.
///
/// A context belongs to one dataset; use [`FitContext::child`] for another.
pub struct FitContext<'a> {
    config: &'a EstimatorConfig,
    rng: RngStream,
    rows: Option<usize>,
    probit: HashMap<Vec<String>, Rc<BartPosterior>>,
    scores: HashMap<(Vec<String>, ScoreChoice), Rc<Vec<f64>>>,
    outcome: HashMap<String, Rc<OutcomeFit>>,
}

impl<'a> FitContext<'a> {
    pub fn new(config: &'a EstimatorConfig, rng: RngStream) -> Self {
        Self {
            config,
            rng,
            rows: None,
            probit: HashMap::new(),
            scores: HashMap::new(),
            outcome: HashMap::new(),
        }
    }

    pub fn config(&self) -> &'a EstimatorConfig {
        self.config
    }

    pub fn rng(&self, label: &str) -> RngStream {
        self.rng.child_named(label)
    }

    /// Fresh context (empty caches) on a derived stream, for a different dataset.
    pub fn child(&self, label: &str) -> FitContext<'a> {
        FitContext::new(self.config, self.rng(label))
    }

    fn bind(&mut self, data: &Dataset) -> Result<()> {
        match self.rows {
            Some(n) if n != data.n() => Err(Error::InvalidInput(format!(
                "fit context bound to a dataset of {n} rows, got {}",
                data.n()
            ))),
            _ => {
                self.rows = Some(data.n());
                Ok(())
            }
        }
    }

    /// Probit BART of the response indicator on the named covariates.
    pub fn probit_posterior(&mut self, data: &Dataset, columns: &[String]) -> Result<Rc<BartPosterior>> {
        self.bind(data)?;
        if let Some(p) = self.probit.get(columns) {
            return Ok(p.clone());
        }
        let x = data.covariates(columns)?;
        let mut rng = self.rng(&format!("probit:{}", columns.join(",")));
        let post = Rc::new(backfit_probit(&x, data.r(), &self.config.bart, &mut rng)?);
        self.probit.insert(columns.to_vec(), post.clone());
        Ok(post)
    }

    pub fn probit_scores(&mut self, data: &Dataset, columns: &[String], choice: ScoreChoice) -> Result<Rc<Vec<f64>>> {
        let key = (columns.to_vec(), choice);
        if let Some(s) = self.scores.get(&key) {
            return Ok(s.clone());
        }
        if data.r().iter().all(|&r| r) {
            // Nothing is missing: the response probability is exactly one.
            self.bind(data)?;
            let s = Rc::new(vec![1.0; data.n()]);
            self.scores.insert(key, s.clone());
            return Ok(s);
        }
        let post = self.probit_posterior(data, columns)?;
        let x = data.covariates(columns)?;
        let mode = match choice {
            ScoreChoice::Mean => PredictMode::Mean,
            ScoreChoice::Draw(d) => PredictMode::Draw(d),
        };
        let s = Rc::new(post.predict(&x, mode)?);
        self.scores.insert(key, s.clone());
        Ok(s)
    }

    /// Continuous BART of the observed outcomes on the named covariates,
    /// optionally with one extra column appended. `extra_key` identifies the
    /// extra column for caching; the random stream depends on `columns`
    /// only, so a constant extra column reproduces the plain fit.
    pub fn outcome_fit(
        &mut self,
        data: &Dataset,
        columns: &[String],
        extra: Option<(&str, &[f64])>,
    ) -> Result<Rc<OutcomeFit>> {
        self.bind(data)?;
        let label = format!("outcome:{}", columns.join(","));
        let key = match extra {
            Some((k, _)) => format!("{label}|{k}"),
            None => label.clone(),
        };
        if let Some(f) = self.outcome.get(&key) {
            return Ok(f.clone());
        }
        let mut x = data.covariates(columns)?;
        if let Some((_, col)) = extra {
            let c = x.ncols();
            x = x.insert_column(c, 0.0);
            x.set_column(c, &nalgebra::DVector::from_column_slice(col));
        }
        let obs = data.observed_rows();
        let y: Vec<f64> = obs.iter().map(|&i| data.y()[i]).collect();
        let mut rng = self.rng(&label);
        let posterior = backfit_continuous(&x.select_rows(&obs), &y, &self.config.bart, &mut rng)?;
        let mean = posterior.predict(&x, PredictMode::Mean)?;
        let fit = Rc::new(OutcomeFit { posterior, x, mean });
        self.outcome.insert(key, fit.clone());
        Ok(fit)
    }
}
