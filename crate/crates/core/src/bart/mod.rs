//! Bayesian additive regression trees: continuous and probit samplers.
//!
//! The continuous sampler maps `y` affinely onto `[-0.5, 0.5]` before
//! calibrating the priors and maps predictions back. The probit sampler
//! models `P(r = 1 | x) = Phi(offset + G(x))` where `offset` is the probit of
//! the observed rate, so the prior on `G` is centred on the marginal rate.

mod data;
mod sampler;
mod tree;

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use data::TrainData;
pub use tree::{log_tree_prior, CompactTree, SplitRule, Tree, TreePrior};

use crate::error::{Error, Result};
use crate::rng::{calibrate_sigma_scale, std_normal_cdf, std_normal_quantile, RngStream};
use sampler::{Chain, MoveMix, ProbitState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BartConfig {
    /// Number of trees.
    pub trees: usize,
    pub burn_in: usize,
    /// Post-burn-in sweeps, all of which are stored.
    pub draws: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Terminal-mean prior scale.
    pub k: f64,
    /// Degrees of freedom of the residual-variance prior.
    pub nu: f64,
    /// Prior probability that sigma is below the marginal standard deviation.
    pub q: f64,
    pub min_node: usize,
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
}

impl Default for BartConfig {
    fn default() -> Self {
        Self {
            trees: 200,
            burn_in: 250,
            draws: 1000,
            alpha: 0.95,
            beta: 2.0,
            k: 2.0,
            nu: 3.0,
            q: 0.9,
            min_node: 5,
            grow: 0.28,
            prune: 0.28,
            change: 0.44,
        }
    }
}

impl BartConfig {
    /// Smaller forest and shorter chains for simulation studies.
    pub fn desk() -> Self {
        Self {
            trees: 50,
            burn_in: 100,
            draws: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("bart config: {what}")));
        if self.trees == 0 || self.draws == 0 || self.min_node == 0 {
            return bad("trees, draws and min_node must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.beta >= 0.0 && self.k > 0.0 && self.nu > 0.0) {
            return bad("beta must be non-negative, k and nu positive");
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad("q must lie in (0, 1)");
        }
        let probs = [self.grow, self.prune, self.change];
        if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) || self.grow <= 0.0 || self.prune <= 0.0 {
            return bad("grow and prune must be positive and all move probabilities in [0, 1]");
        }
        if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("move probabilities must sum to 1");
        }
        Ok(())
    }

    fn prior(&self) -> TreePrior {
        TreePrior {
            alpha: self.alpha,
            beta: self.beta,
            min_node: self.min_node,
        }
    }

    fn moves(&self) -> MoveMix {
        MoveMix {
            grow: self.grow,
            prune: self.prune,
            change: self.change,
        }
    }
}

/// How the sum of trees maps to the response scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Link {
    /// `center + width * G(x)`.
    Identity { center: f64, width: f64 },
    /// `Phi(offset + G(x))`.
    Probit { offset: f64 },
}

impl Link {
    #[inline]
    fn apply(&self, g: f64) -> f64 {
        match *self {
            Link::Identity { center, width } => center + width * g,
            Link::Probit { offset } => std_normal_cdf(offset + g),
        }
    }
}

/// Stored post-burn-in forests and the residual standard deviation trace.
#[derive(Clone, Debug, PartialEq)]
pub struct BartPosterior {
    link: Link,
    ncols: usize,
    forests: Vec<Vec<CompactTree>>,
    sigma: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictMode {
    Mean,
    Draw(usize),
}

impl BartPosterior {
    pub fn link(&self) -> Link {
        self.link
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn draw_count(&self) -> usize {
        self.forests.len()
    }

    /// Residual standard deviation per stored draw, on the response scale.
    /// Identically 1 for probit fits.
    pub fn sigma_trace(&self) -> &[f64] {
        &self.sigma
    }

    pub fn forest(&self, draw: usize) -> Option<&[CompactTree]> {
        self.forests.get(draw).map(Vec::as_slice)
    }

    fn rows(&self, x: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
        if x.ncols() != self.ncols {
            return Err(Error::InvalidInput(format!(
                "prediction matrix has {} columns, the posterior was fit with {}",
                x.ncols(),
                self.ncols
            )));
        }
        Ok((0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect())
    }

    fn draw_on_rows(&self, rows: &[Vec<f64>], draw: usize) -> Vec<f64> {
        let forest = &self.forests[draw];
        rows.iter()
            .map(|row| self.link.apply(forest.iter().map(|t| t.eval(row)).sum()))
            .collect()
    }

    pub fn predict(&self, x: &DMatrix<f64>, mode: PredictMode) -> Result<Vec<f64>> {
        let rows = self.rows(x)?;
        match mode {
            PredictMode::Draw(d) => {
                if d >= self.forests.len() {
                    return Err(Error::InvalidInput(format!(
                        "draw index {d} out of range (posterior holds {} draws)",
                        self.forests.len()
                    )));
                }
                Ok(self.draw_on_rows(&rows, d))
            }
            PredictMode::Mean => {
                let mut acc = vec![0.0; rows.len()];
                for d in 0..self.forests.len() {
                    for (a, v) in acc.iter_mut().zip(self.draw_on_rows(&rows, d)) {
                        *a += v;
                    }
                }
                let count = self.forests.len() as f64;
                Ok(acc.into_iter().map(|a| a / count).collect())
            }
        }
    }

    /// Predictions of every stored draw, indexed `[draw][row]`.
    pub fn predict_draws(&self, x: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
        let rows = self.rows(x)?;
        Ok((0..self.forests.len()).map(|d| self.draw_on_rows(&rows, d)).collect())
    }
}

/// Free-function form of [`BartPosterior::predict`].
pub fn posterior_predict(post: &BartPosterior, xnew: &DMatrix<f64>, mode: PredictMode) -> Result<Vec<f64>> {
    post.predict(xnew, mode)
}

fn check_size(n: usize, config: &BartConfig) -> Result<()> {
    config.validate()?;
    if n < 2 * config.min_node {
        return Err(Error::InvalidInput(format!(
            "BART needs at least {} rows (twice the minimum node size), got {n}",
            2 * config.min_node
        )));
    }
    Ok(())
}

fn run(mut chain: Chain<'_>, config: &BartConfig, rng: &mut RngStream, sigma_scale: f64) -> (Vec<Vec<CompactTree>>, Vec<f64>) {
    for _ in 0..config.burn_in {
        chain.sweep(rng);
    }
    let mut forests = Vec::with_capacity(config.draws);
    let mut sigma = Vec::with_capacity(config.draws);
    for _ in 0..config.draws {
        chain.sweep(rng);
        forests.push(chain.snapshot());
        sigma.push(chain.sigma2.sqrt() * sigma_scale);
    }
    let s = chain.stats;
    log::debug!(
        "bart moves accepted/proposed: grow {}/{}, prune {}/{}, change {}/{}",
        s.accepted[0],
        s.proposed[0],
        s.accepted[1],
        s.proposed[1],
        s.accepted[2],
        s.proposed[2]
    );
    (forests, sigma)
}

/// Continuous-response BART with a conjugate residual-variance update.
pub fn backfit_continuous(
    x: &DMatrix<f64>,
    y: &[f64],
    config: &BartConfig,
    rng: &mut RngStream,
) -> Result<BartPosterior> {
    continuous(x, y, None, config, rng)
}

/// Continuous-response BART with the residual standard deviation held at
/// `sigma` (response scale).
pub fn backfit_known_sigma(
    x: &DMatrix<f64>,
    y: &[f64],
    sigma: f64,
    config: &BartConfig,
    rng: &mut RngStream,
) -> Result<BartPosterior> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    continuous(x, y, Some(sigma), config, rng)
}

fn continuous(
    x: &DMatrix<f64>,
    y: &[f64],
    known_sigma: Option<f64>,
    config: &BartConfig,
    rng: &mut RngStream,
) -> Result<BartPosterior> {
    check_size(x.nrows(), config)?;
    if y.len() != x.nrows() {
        return Err(Error::InvalidInput(format!("{} responses for {} rows", y.len(), x.nrows())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("BART response contains non-finite values".into()));
    }
    let data = TrainData::new(x)?;
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let center = 0.5 * (lo + hi);
    let width = if hi > lo { hi - lo } else { 1.0 };
    let scaled: Vec<f64> = y.iter().map(|v| (v - center) / width).collect();

    let n = scaled.len() as f64;
    let mean = scaled.iter().sum::<f64>() / n;
    let sd = (scaled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    // A constant response leaves nothing to calibrate against; fall back to a
    // small reference scale.
    let sd = if sd > 0.0 { sd } else { 0.01 };
    let tau = 0.5 / (config.k * (config.trees as f64).sqrt());
    let (sigma2, sigma_prior) = match known_sigma {
        Some(s) => ((s / width).powi(2), None),
        None => (sd * sd, Some((config.nu, calibrate_sigma_scale(config.nu, config.q, sd)?))),
    };

    let chain = Chain::new(
        &data,
        scaled,
        config.trees,
        config.prior(),
        config.moves(),
        tau * tau,
        sigma2,
        sigma_prior,
        None,
    );
    let (forests, sigma) = run(chain, config, rng, width);
    Ok(BartPosterior {
        link: Link::Identity { center, width },
        ncols: x.ncols(),
        forests,
        sigma,
    })
}

/// Probit BART for a binary response via latent-variable augmentation.
pub fn backfit_probit(x: &DMatrix<f64>, r: &[bool], config: &BartConfig, rng: &mut RngStream) -> Result<BartPosterior> {
    check_size(x.nrows(), config)?;
    if r.len() != x.nrows() {
        return Err(Error::InvalidInput(format!("{} labels for {} rows", r.len(), x.nrows())));
    }
    let ones = r.iter().filter(|&&b| b).count();
    if ones == 0 || ones == r.len() {
        return Err(Error::SingleClass(r.len()));
    }
    let data = TrainData::new(x)?;
    let offset = std_normal_quantile(ones as f64 / r.len() as f64);
    let tau = 3.0 / (config.k * (config.trees as f64).sqrt());
    let chain = Chain::new(
        &data,
        vec![0.0; r.len()],
        config.trees,
        config.prior(),
        config.moves(),
        tau * tau,
        1.0,
        None,
        Some(ProbitState {
            labels: r.to_vec(),
            offset,
        }),
    );
    let (forests, sigma) = run(chain, config, rng, 1.0);
    Ok(BartPosterior {
        link: Link::Probit { offset },
        ncols: x.ncols(),
        forests,
        sigma,
    })
}

/// Debug dump format, little endian:
///
/// ```text
/// magic    8 bytes  "RBSQBART"
/// version  u32      currently 1
/// link     u8       0 identity, 1 probit
/// params   2 x f64  (center, width) or (offset, 0)
/// ncols    u32
/// draws    u32
/// trees    u32      per draw
/// sigma    draws x f64
/// forests  per tree: node count u32, then per node (var u32, value f64, left u32, right u32)
/// ```
///
/// Leaves carry `var = u32::MAX`. The layout may change between versions.
pub const DUMP_MAGIC: &[u8; 8] = b"RBSQBART";
pub const DUMP_VERSION: u32 = 1;

impl BartPosterior {
    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        let (tag, a, b) = match self.link {
            Link::Identity { center, width } => (0u8, center, width),
            Link::Probit { offset } => (1u8, offset, 0.0),
        };
        w.write_all(&[tag])?;
        w.write_all(&a.to_le_bytes())?;
        w.write_all(&b.to_le_bytes())?;
        let per_draw = self.forests.first().map_or(0, Vec::len);
        for v in [self.ncols, self.forests.len(), per_draw] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for s in &self.sigma {
            w.write_all(&s.to_le_bytes())?;
        }
        for forest in &self.forests {
            for t in forest {
                w.write_all(&(t.nodes.len() as u32).to_le_bytes())?;
                for n in &t.nodes {
                    w.write_all(&n.var.to_le_bytes())?;
                    w.write_all(&n.value.to_le_bytes())?;
                    w.write_all(&n.left.to_le_bytes())?;
                    w.write_all(&n.right.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        fn u32_of<R: Read>(r: &mut R) -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        }
        fn f64_of<R: Read>(r: &mut R) -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        }
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Data("not a BART posterior dump".into()));
        }
        let version = u32_of(&mut r)?;
        if version != DUMP_VERSION {
            return Err(Error::Unsupported(format!("BART dump version {version}")));
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let (a, b) = (f64_of(&mut r)?, f64_of(&mut r)?);
        let link = match tag[0] {
            0 => Link::Identity { center: a, width: b },
            1 => Link::Probit { offset: a },
            t => return Err(Error::Data(format!("unknown link tag {t}"))),
        };
        let ncols = u32_of(&mut r)? as usize;
        let draws = u32_of(&mut r)? as usize;
        let per_draw = u32_of(&mut r)? as usize;
        let sigma = (0..draws).map(|_| f64_of(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut forests = Vec::with_capacity(draws);
        for _ in 0..draws {
            let mut forest = Vec::with_capacity(per_draw);
            for _ in 0..per_draw {
                let count = u32_of(&mut r)? as usize;
                let mut nodes = Vec::with_capacity(count);
                for k in 0..count {
                    let var = u32_of(&mut r)?;
                    let value = f64_of(&mut r)?;
                    let left = u32_of(&mut r)?;
                    let right = u32_of(&mut r)?;
                    let bad_child = |c: u32| c as usize >= count || c as usize <= k;
                    if !tree::is_leaf_var(var) && ((var as usize) >= ncols || bad_child(left) || bad_child(right)) {
                        return Err(Error::Data("corrupt tree node in BART dump".into()));
                    }
                    nodes.push(tree::CompactNode { var, value, left, right });
                }
                forest.push(CompactTree { nodes });
            }
            forests.push(forest);
        }
        Ok(Self {
            link,
            ncols,
            forests,
            sigma,
        })
    }
}
