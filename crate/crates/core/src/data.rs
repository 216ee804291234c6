//! The dataset every estimator consumes and the design terms built from it.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DesignMatrix;
use crate::rng::RngStream;

/// Redraw limit for bootstrap resamples with no observed outcome.
pub const MAX_REDRAWS: usize = 100;

/// Outcome `y`, response indicator `r` (`true` = observed) and fully observed
/// covariates `x`. Outcome entries of unobserved rows are stored as NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    r: Vec<bool>,
    x: DMatrix<f64>,
    names: Vec<String>,
    full_y: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, r: Vec<bool>, x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let n = y.len();
        if r.len() != n || x.nrows() != n {
            return Err(Error::InvalidInput(format!(
                "dataset lengths disagree: y {n}, r {}, x {} rows",
                r.len(),
                x.nrows()
            )));
        }
        if names.len() != x.ncols() {
            return Err(Error::InvalidInput(format!(
                "{} column names for {} covariates",
                names.len(),
                x.ncols()
            )));
        }
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(Error::InvalidInput(format!("duplicate covariate name `{a}`")));
            }
        }
        if !r.iter().any(|&b| b) {
            return Err(Error::InvalidInput("no observed outcomes".into()));
        }
        if let Some(i) = (0..n).find(|&i| r[i] && !y[i].is_finite()) {
            return Err(Error::InvalidInput(format!("observed outcome in row {i} is not finite")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("covariates must be finite".into()));
        }
        let y = y.into_iter().zip(&r).map(|(v, &o)| if o { v } else { f64::NAN }).collect();
        Ok(Self {
            y,
            r,
            x,
            names,
            full_y: None,
        })
    }

    /// Attaches the pre-deletion outcome (simulation only).
    pub fn with_full_outcome(mut self, full: Vec<f64>) -> Result<Self> {
        if full.len() != self.n() {
            return Err(Error::InvalidInput("full outcome length differs from n".into()));
        }
        self.full_y = Some(full);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn r(&self) -> &[bool] {
        &self.r
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn full_outcome(&self) -> Option<&[f64]> {
        self.full_y.as_deref()
    }

    pub fn observed_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.r[i]).collect()
    }

    pub fn missing_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.r[i]).collect()
    }

    pub fn observed_count(&self) -> usize {
        self.r.iter().filter(|&&b| b).count()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|c| c == name).ok_or_else(|| Error::Unknown {
            kind: "covariate",
            name: name.to_string(),
        })
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        let j = self.column_index(name)?;
        Ok(&self.x.as_slice()[j * self.n()..(j + 1) * self.n()])
    }

    /// Covariate submatrix with the named columns, in the given order.
    pub fn covariates(&self, columns: &[String]) -> Result<DMatrix<f64>> {
        let idx = columns.iter().map(|c| self.column_index(c)).collect::<Result<Vec<_>>>()?;
        Ok(self.x.select_columns(&idx))
    }

    /// Rows in the given order, repeats allowed. Fails when no selected row is
    /// observed.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let mut out = Dataset::new(
            pick(&self.y),
            rows.iter().map(|&i| self.r[i]).collect(),
            self.x.select_rows(rows),
            self.names.clone(),
        )?;
        out.full_y = self.full_y.as_deref().map(pick);
        Ok(out)
    }

    /// Same dataset with `f` applied to every outcome (observed and full).
    pub fn map_outcome(&self, f: impl Fn(f64) -> f64) -> Result<Dataset> {
        let y = self.y.iter().map(|&v| f(v)).collect();
        let mut out = Dataset::new(y, self.r.clone(), self.x.clone(), self.names.clone())?;
        out.full_y = self.full_y.as_ref().map(|v| v.iter().map(|&a| f(a)).collect());
        Ok(out)
    }

    /// Row indices of a bootstrap resample (with replacement). Resamples
    /// without an observed outcome are redrawn, up to `MAX_REDRAWS` times.
    pub fn bootstrap_rows(&self, rng: &mut RngStream) -> Result<Vec<usize>> {
        let n = self.n();
        for _ in 0..=MAX_REDRAWS {
            let rows: Vec<usize> = (0..n).map(|_| rng.index(n)).collect();
            if rows.iter().any(|&i| self.r[i]) {
                return Ok(rows);
            }
        }
        Err(Error::Numerical(format!(
            "{MAX_REDRAWS} consecutive bootstrap resamples had no observed outcome"
        )))
    }

    /// Same rows and covariates with a different response pattern.
    pub fn with_outcome(&self, y: Vec<f64>, r: Vec<bool>) -> Result<Dataset> {
        Dataset::new(y, r, self.x.clone(), self.names.clone())
    }
}

/// Product of covariate powers; the empty product is the intercept.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Term {
    factors: Vec<(String, u32)>,
}

impl Term {
    pub fn intercept() -> Self {
        Self { factors: Vec::new() }
    }

    pub fn column(name: &str) -> Self {
        Self {
            factors: vec![(name.to_string(), 1)],
        }
    }

    pub fn product(factors: &[(&str, u32)]) -> Self {
        Self {
            factors: factors.iter().map(|&(n, p)| (n.to_string(), p)).collect(),
        }
    }

    pub fn is_intercept(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn columns(&self) -> impl Iterator<Item = &str> {
        self.factors.iter().map(|(n, _)| n.as_str())
    }

    pub fn eval(&self, data: &Dataset) -> Result<Vec<f64>> {
        let mut out = vec![1.0; data.n()];
        for (name, pow) in &self.factors {
            let col = data.column(name)?;
            for (o, &v) in out.iter_mut().zip(col) {
                *o *= v.powi(*pow as i32);
            }
        }
        Ok(out)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() {
            return f.write_str("1");
        }
        for (i, (name, pow)) in self.factors.iter().enumerate() {
            if i > 0 {
                f.write_str(":")?;
            }
            f.write_str(name)?;
            if *pow != 1 {
                write!(f, "^{pow}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for Term {
    type Err = Error;

    /// `1`, `x1`, `x1:x2`, `x1^2:x2^2`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "1" {
            return Ok(Self::intercept());
        }
        let bad = || Error::InvalidInput(format!("cannot parse design term `{s}`"));
        let mut factors = Vec::new();
        for part in s.split(':') {
            let part = part.trim();
            let (name, pow) = match part.split_once('^') {
                Some((n, p)) => (n.trim(), p.trim().parse::<u32>().map_err(|_| bad())?),
                None => (part, 1),
            };
            if name.is_empty() || pow == 0 {
                return Err(bad());
            }
            factors.push((name.to_string(), pow));
        }
        Ok(Self { factors })
    }
}

/// Ordered list of terms forming a regression design.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Design {
    terms: Vec<Term>,
}

impl TryFrom<Vec<String>> for Design {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        Design::parse(&v)
    }
}

impl From<Design> for Vec<String> {
    fn from(d: Design) -> Self {
        d.terms.iter().map(Term::to_string).collect()
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.terms.iter().map(Term::to_string).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

impl Design {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidInput("design has no terms".into()));
        }
        for (i, t) in terms.iter().enumerate() {
            if terms[..i].contains(t) {
                return Err(Error::InvalidInput(format!("design repeats term `{t}`")));
            }
        }
        Ok(Self { terms })
    }

    pub fn parse<S: AsRef<str>>(terms: &[S]) -> Result<Self> {
        Self::new(terms.iter().map(|t| t.as_ref().parse()).collect::<Result<_>>()?)
    }

    /// Intercept plus one linear term per column.
    pub fn main_effects<S: AsRef<str>>(columns: &[S]) -> Self {
        let mut terms = vec![Term::intercept()];
        terms.extend(columns.iter().map(|c| Term::column(c.as_ref())));
        Self { terms }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn has_intercept(&self) -> bool {
        self.terms.iter().any(Term::is_intercept)
    }

    /// The design without its intercept term, `None` when nothing remains.
    pub fn without_intercept(&self) -> Option<Design> {
        let terms: Vec<Term> = self.terms.iter().filter(|t| !t.is_intercept()).cloned().collect();
        (!terms.is_empty()).then_some(Design { terms })
    }

    /// Distinct covariate names referenced, in first-use order.
    pub fn columns(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in self.terms.iter().flat_map(Term::columns) {
            if !out.iter().any(|o| o == c) {
                out.push(c.to_string());
            }
        }
        out
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        for c in self.columns() {
            data.column_index(&c)?;
        }
        Ok(())
    }

    pub fn build(&self, data: &Dataset) -> Result<DesignMatrix> {
        let n = data.n();
        let mut m = DMatrix::zeros(n, self.terms.len());
        for (j, t) in self.terms.iter().enumerate() {
            m.set_column(j, &nalgebra::DVector::from_vec(t.eval(data)?));
        }
        Ok(DesignMatrix::new(m, self.terms.iter().map(Term::to_string).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 1.0, 2.0, 2.0, 0.5, 3.0, -1.0]);
        Dataset::new(
            vec![1.0, 2.0, 99.0, 99.0],
            vec![true, true, false, false],
            x,
            vec!["x1".into(), "x2".into()],
        )
        .unwrap()
    }

    #[test]
    fn missing_outcomes_are_masked() {
        let d = toy();
        assert!(d.y()[2].is_nan() && d.y()[3].is_nan());
        assert_eq!(d.observed_rows(), vec![0, 1]);
        assert_eq!(d.missing_rows(), vec![2, 3]);
        assert_eq!(d.column("x2").unwrap(), &[1.0, 2.0, 0.5, -1.0]);
    }

    #[test]
    fn validation() {
        let x = DMatrix::zeros(2, 1);
        let names = vec!["a".to_string()];
        assert!(Dataset::new(vec![1.0, 2.0], vec![false, false], x.clone(), names.clone()).is_err());
        assert!(Dataset::new(vec![f64::NAN, 2.0], vec![true, true], x.clone(), names.clone()).is_err());
        assert!(Dataset::new(vec![1.0], vec![true, true], x.clone(), names.clone()).is_err());
        assert!(Dataset::new(vec![1.0, 2.0], vec![true, true], x, vec!["a".into(), "b".into()]).is_err());
    }

    #[test]
    fn term_round_trip() {
        for s in ["1", "x1", "x1:x2", "x1^2:x2^2"] {
            assert_eq!(s.parse::<Term>().unwrap().to_string(), s);
        }
        assert!("x1^0".parse::<Term>().is_err());
        assert!("x1:".parse::<Term>().is_err());
    }

    #[test]
    fn design_matrix_values() {
        let d = toy();
        let design = Design::parse(&["1", "x1", "x1:x2", "x1^2:x2^2"]).unwrap();
        let m = design.build(&d).unwrap();
        assert_eq!(m.names, vec!["1", "x1", "x1:x2", "x1^2:x2^2"]);
        assert_eq!(m.matrix.row(2).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 1.0, 1.0]);
        assert_eq!(m.matrix.row(3).iter().copied().collect::<Vec<_>>(), vec![1.0, 3.0, -3.0, 9.0]);
        assert!(Design::parse(&["1", "x3"]).unwrap().build(&d).is_err());
        assert!(Design::parse(&["x1", "x1"]).is_err());
        assert_eq!(design.columns(), vec!["x1", "x2"]);
        assert_eq!(design.without_intercept().unwrap().terms().len(), 3);
    }

    #[test]
    fn bootstrap_resample_always_has_an_observed_row() {
        let mut y = vec![0.0; 200];
        let mut r = vec![false; 200];
        y[0] = 1.0;
        r[0] = true;
        let d = Dataset::new(y, r, DMatrix::zeros(200, 1), vec!["a".into()]).unwrap();
        let mut rng = RngStream::new(3, 0);
        // P(row 0 absent) = (1 - 1/200)^200 ~ 0.37 per draw, so redraws happen.
        for _ in 0..20 {
            let rows = d.bootstrap_rows(&mut rng).unwrap();
            assert!(rows.contains(&0));
        }
    }

    #[test]
    fn select_rows_keeps_full_outcome() {
        let d = toy().with_full_outcome(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = d.select_rows(&[3, 0, 0]).unwrap();
        assert_eq!(s.full_outcome().unwrap(), &[4.0, 1.0, 1.0]);
        assert_eq!(s.r(), &[false, true, true]);
        assert!(d.select_rows(&[2, 3]).is_err());
    }
}
