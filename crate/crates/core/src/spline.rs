//! Truncated power bases on propensity scores.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Score ranges narrower than this are treated as constant.
pub const DEGENERATE_RANGE: f64 = 1e-10;

/// Degree, knot count and knot locations of a truncated power basis.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineBasisSpec {
    pub degree: usize,
    pub knots: Vec<f64>,
}

/// Basis settings before knots are placed on a particular score vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BasisOptions {
    pub degree: usize,
    pub knots: usize,
}

impl Default for BasisOptions {
    fn default() -> Self {
        Self { degree: 1, knots: 20 }
    }
}

impl BasisOptions {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.degree) {
            return Err(Error::InvalidInput(format!("spline degree must be 1..=3, got {}", self.degree)));
        }
        if self.knots == 0 {
            return Err(Error::InvalidInput("spline needs at least one knot".into()));
        }
        Ok(())
    }

    /// Places equally spaced knots on the range of `z`.
    pub fn place(&self, z: &[f64]) -> Result<SplineBasisSpec> {
        self.validate()?;
        SplineBasisSpec::new(self.degree, equally_spaced_knots(z, self.knots)?)
    }
}

impl SplineBasisSpec {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidInput("spline degree must be >= 1".into()));
        }
        if knots.is_empty() {
            return Err(Error::InvalidInput("spline needs at least one knot".into()));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("knots must be finite and strictly increasing".into()));
        }
        Ok(Self { degree, knots })
    }
}

fn range(z: &[f64]) -> (f64, f64) {
    z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// True when the scores carry no usable spread for a spline.
pub fn is_degenerate(z: &[f64]) -> bool {
    let (lo, hi) = range(z);
    !(hi - lo >= DEGENERATE_RANGE)
}

/// `H` knots at `min + h (max - min) / (H + 1)`, `h = 1..=H`.
pub fn equally_spaced_knots(z: &[f64], count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::InvalidInput("knot count must be >= 1".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("scores contain non-finite values".into()));
    }
    if z.is_empty() || is_degenerate(z) {
        return Err(Error::Domain("scores are constant; a spline in them is meaningless".into()));
    }
    let (lo, hi) = range(z);
    let width = (hi - lo) / (count + 1) as f64;
    Ok((1..=count).map(|h| lo + h as f64 * width).collect())
}

/// `fixed = [1, z, ..., z^L]`, `random = [(z - tau_h)_+^L]`.
pub fn truncated_power_basis(z: &[f64], spec: &SplineBasisSpec) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = z.len();
    let degree = spec.degree as i32;
    let fixed = DMatrix::from_fn(n, spec.degree + 1, |i, j| z[i].powi(j as i32));
    let random = DMatrix::from_fn(n, spec.knots.len(), |i, h| {
        let d = z[i] - spec.knots[h];
        if d > 0.0 { d.powi(degree) } else { 0.0 }
    });
    (fixed, random)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn knots_on_unit_range() {
        let z = [0.0, 0.3, 1.0];
        assert_eq!(equally_spaced_knots(&z, 1).unwrap(), vec![0.5]);
        assert_eq!(equally_spaced_knots(&z, 3).unwrap(), vec![0.25, 0.5, 0.75]);
    }

    #[test]
    fn twenty_knots_on_narrow_range() {
        let z = [0.2, 0.5, 0.8];
        let k = equally_spaced_knots(&z, 20).unwrap();
        assert_eq!(k.len(), 20);
        for (h, &tau) in k.iter().enumerate() {
            let expected = 0.2 + (h + 1) as f64 * 0.6 / 21.0;
            assert!((tau - expected).abs() < 1e-15);
        }
        assert!((k[0] - 0.228_571_428_571_428_6).abs() < 1e-12);
        assert!((k[19] - 0.771_428_571_428_571_4).abs() < 1e-12);
    }

    #[test]
    fn constant_scores_are_rejected() {
        assert!(equally_spaced_knots(&[0.4; 10], 5).is_err());
        assert!(is_degenerate(&[0.4, 0.4 + 1e-12]));
    }

    #[test]
    fn single_point_evaluations() {
        let spec = SplineBasisSpec::new(1, vec![0.3, 0.6]).unwrap();
        let (_, random) = truncated_power_basis(&[0.1], &spec);
        assert_eq!(random.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        let spec = SplineBasisSpec::new(1, vec![0.3]).unwrap();
        let (fixed, random) = truncated_power_basis(&[0.5], &spec);
        assert!((random[(0, 0)] - 0.2).abs() < 1e-15);
        assert_eq!(fixed.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.5]);
    }

    #[test]
    fn five_by_two_hand_oracle() {
        let z = [0.1, 0.3, 0.5, 0.7, 0.9];
        let spec = SplineBasisSpec::new(1, vec![0.4, 0.6]).unwrap();
        let (_, random) = truncated_power_basis(&z, &spec);
        let oracle = [[0.0, 0.0], [0.0, 0.0], [0.1, 0.0], [0.3, 0.1], [0.5, 0.3]];
        for i in 0..5 {
            for h in 0..2 {
                assert!((random[(i, h)] - oracle[i][h]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn knot_beyond_range_adds_zero_column() {
        let z = [0.1, 0.2, 0.35];
        let spec = SplineBasisSpec::new(1, vec![0.15, 0.9]).unwrap();
        let (_, random) = truncated_power_basis(&z, &spec);
        assert!(random.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_specs() {
        assert!(SplineBasisSpec::new(1, vec![0.5, 0.5]).is_err());
        assert!(SplineBasisSpec::new(0, vec![0.5]).is_err());
        assert!(BasisOptions { degree: 4, knots: 3 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn random_block_is_nonnegative(z in proptest::collection::vec(0.0f64..1.0, 3..40), degree in 1usize..=3) {
            prop_assume!(!is_degenerate(&z));
            let spec = BasisOptions { degree, knots: 7 }.place(&z).unwrap();
            let (fixed, random) = truncated_power_basis(&z, &spec);
            prop_assert!(random.iter().all(|&v| v >= 0.0));
            prop_assert!(spec.knots.iter().all(|&k| k > z.iter().cloned().fold(f64::INFINITY, f64::min)));
            prop_assert_eq!(fixed.ncols(), degree + 1);
        }

        #[test]
        fn linear_basis_is_continuous_at_knots(tau in 0.1f64..0.9) {
            let spec = SplineBasisSpec::new(1, vec![tau]).unwrap();
            let eps = 1e-9;
            let (_, lo) = truncated_power_basis(&[tau - eps], &spec);
            let (_, hi) = truncated_power_basis(&[tau + eps], &spec);
            prop_assert!((lo[(0, 0)] - hi[(0, 0)]).abs() <= 2.0 * eps);
        }
    }
}
