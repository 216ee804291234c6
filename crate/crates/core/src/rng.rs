//! Seedable, reconstructible random streams and the handful of samplers the
//! estimators need.
//!
//! Every stochastic job (replicate, resample, chain) owns an [`RngStream`]
//! identified by `(seed, stream-id)`. Streams are ChaCha8 generators keyed by
//! the master seed with the stream id selecting an independent keystream, so
//! any job can be rebuilt without replaying its siblings.
//!
//! Normal samplers take a *variance* as their second parameter.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::distribution::{ChiSquared as ChiSquaredDist, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// A deterministic random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Independent stream derived from this stream's identity and `index`.
    ///
    /// The derivation ignores how many values have been drawn from `self`.
    pub fn child(&self, index: u64) -> RngStream {
        let id = splitmix64(self.stream ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)));
        RngStream::new(self.seed, id)
    }

    /// Child stream keyed by a label, e.g. a method name.
    pub fn child_named(&self, label: &str) -> RngStream {
        // FNV-1a; stable across platforms and releases.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.child(h)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn std_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Draw from `Normal(mu, var)`; `var` is a variance.
pub fn sample_normal(rng: &mut RngStream, mu: f64, var: f64) -> Result<f64> {
    if !(var >= 0.0) || !var.is_finite() {
        return Err(Error::Domain(format!("normal variance must be finite and >= 0, got {var}")));
    }
    if var == 0.0 {
        return Ok(mu);
    }
    Ok(mu + var.sqrt() * rng.std_normal())
}

/// Draw from `N(mu, 1)` restricted to `(a, b)`; either bound may be infinite.
pub fn sample_truncated_normal(rng: &mut RngStream, mu: f64, a: f64, b: f64) -> Result<f64> {
    if a.is_nan() || b.is_nan() || !mu.is_finite() || a >= b {
        return Err(Error::Domain(format!("truncation interval ({a}, {b}) is empty")));
    }
    Ok(mu + std_truncated(rng, a - mu, b - mu))
}

/// Standard normal truncated to `(lo, hi)`, `lo < hi`.
pub(crate) fn std_truncated(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
        return rng.std_normal();
    }
    if lo >= 0.0 {
        positive_tail(rng, lo, hi)
    } else if hi <= 0.0 {
        -positive_tail(rng, -hi, -lo)
    } else if hi - lo >= 2.5066282746310002 {
        // Interval straddles zero and is wide: plain rejection accepts often.
        loop {
            let z = rng.std_normal();
            if z > lo && z < hi {
                return z;
            }
        }
    } else {
        loop {
            let z = lo + (hi - lo) * rng.uniform();
            if rng.uniform() <= (-0.5 * z * z).exp() {
                return z;
            }
        }
    }
}

// Standard normal on (lo, hi) with 0 <= lo < hi <= inf.
fn positive_tail(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    if hi.is_finite() && 0.5 * (hi * hi - lo * lo) < 1.0 {
        // Narrow band: uniform proposal, acceptance >= exp(-1).
        loop {
            let z = lo + (hi - lo) * rng.uniform();
            if rng.uniform() <= (0.5 * (lo * lo - z * z)).exp() {
                return z;
            }
        }
    }
    if lo < 0.5 {
        loop {
            let z = rng.std_normal().abs();
            if z > lo && z < hi {
                return z;
            }
        }
    }
    // Exponential proposal with the optimal rate for the tail at lo.
    let rate = 0.5 * (lo + (lo * lo + 4.0).sqrt());
    loop {
        let z = lo - (1.0 - rng.uniform()).ln() / rate;
        let d = z - rate;
        if rng.uniform() <= (-0.5 * d * d).exp() && z < hi {
            return z;
        }
    }
}

/// Draw from the scaled inverse chi-square with `nu` degrees of freedom and
/// scale `lambda`, i.e. `nu * lambda / X` with `X ~ chi2(nu)`.
pub fn sample_scaled_inv_chisq(rng: &mut RngStream, nu: f64, lambda: f64) -> Result<f64> {
    if !(nu > 0.0) || !(lambda > 0.0) || !nu.is_finite() || !lambda.is_finite() {
        return Err(Error::Domain(format!(
            "scaled inverse chi-square needs nu > 0 and lambda > 0, got nu={nu}, lambda={lambda}"
        )));
    }
    let chi = ChiSquared::new(nu).map_err(|e| Error::Domain(e.to_string()))?;
    loop {
        let x: f64 = chi.sample(rng);
        if x > 0.0 {
            return Ok(nu * lambda / x);
        }
    }
}

/// Scale `lambda` of a scaled inverse chi-square prior on `sigma^2` such that
/// `P(sigma < sd) = q`.
pub fn calibrate_sigma_scale(nu: f64, q: f64, sd: f64) -> Result<f64> {
    if !(nu > 0.0) || !(q > 0.0 && q < 1.0) || !(sd > 0.0) {
        return Err(Error::Domain(format!(
            "sigma prior calibration needs nu > 0, 0 < q < 1, sd > 0 (got {nu}, {q}, {sd})"
        )));
    }
    let chi = ChiSquaredDist::new(nu).map_err(|e| Error::Domain(e.to_string()))?;
    // P(nu*lambda/X < sd^2) = P(X > nu*lambda/sd^2) = q
    let qchi = chi.inverse_cdf(1.0 - q);
    Ok(sd * sd * qchi / nu)
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn std_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}
