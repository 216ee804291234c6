use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Training covariates with per-column ranks of the distinct observed values.
///
/// Split rules are stored as rank thresholds so routing a training row is an
/// integer comparison; the matching cut value is `distinct[var][rank]`.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub(crate) n: usize,
    pub(crate) p: usize,
    pub(crate) rank: Vec<Vec<u32>>,
    pub(crate) distinct: Vec<Vec<f64>>,
}

impl TrainData {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if p == 0 {
            return Err(Error::InvalidInput("BART needs at least one covariate".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("BART covariates must be finite".into()));
        }
        let mut rank = Vec::with_capacity(p);
        let mut distinct = Vec::with_capacity(p);
        for j in 0..p {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            let mut vals = col.clone();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            let r = col
                .iter()
                .map(|v| vals.binary_search_by(|probe| probe.partial_cmp(v).unwrap()).unwrap() as u32)
                .collect();
            rank.push(r);
            distinct.push(vals);
        }
        Ok(Self { n, p, rank, distinct })
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.p
    }

    pub(crate) fn max_distinct(&self) -> usize {
        self.distinct.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Valid split rules of one node: a rule `x_var <= v` is valid when `v` is a
/// value of `x_var` observed in the node and both sides keep at least
/// `min_node` rows.
pub(crate) struct SplitScan {
    counts: Vec<u32>,
    /// Per variable, the number of valid cut values.
    pub(crate) ncuts: Vec<u32>,
}

impl SplitScan {
    pub(crate) fn new(data: &TrainData) -> Self {
        Self {
            counts: vec![0; data.max_distinct().max(1)],
            ncuts: vec![0; data.p],
        }
    }

    fn fill(&mut self, data: &TrainData, var: usize, rows: &[u32]) -> (usize, usize) {
        let ranks = &data.rank[var];
        let (mut lo, mut hi) = (usize::MAX, 0usize);
        for &i in rows {
            let r = ranks[i as usize] as usize;
            self.counts[r] += 1;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo, hi)
    }

    fn clear(&mut self, lo: usize, hi: usize) {
        if lo <= hi {
            self.counts[lo..=hi].iter_mut().for_each(|c| *c = 0);
        }
    }

    fn count_var(&mut self, data: &TrainData, var: usize, rows: &[u32], min_node: usize) -> u32 {
        let n = rows.len();
        if n < 2 * min_node {
            return 0;
        }
        let (lo, hi) = self.fill(data, var, rows);
        let mut cum = 0usize;
        let mut valid = 0u32;
        for r in lo..=hi {
            let c = self.counts[r] as usize;
            if c == 0 {
                continue;
            }
            cum += c;
            if cum >= min_node && n - cum >= min_node {
                valid += 1;
            } else if n - cum < min_node {
                break;
            }
        }
        self.clear(lo, hi);
        valid
    }

    /// Counts valid cuts for every variable; returns the number of variables
    /// with at least one.
    pub(crate) fn summarize(&mut self, data: &TrainData, rows: &[u32], min_node: usize) -> usize {
        let mut nvars = 0;
        for v in 0..data.p {
            let c = self.count_var(data, v, rows, min_node);
            self.ncuts[v] = c;
            if c > 0 {
                nvars += 1;
            }
        }
        nvars
    }

    /// True when at least one valid rule exists.
    pub(crate) fn any_valid(&mut self, data: &TrainData, rows: &[u32], min_node: usize) -> bool {
        rows.len() >= 2 * min_node && (0..data.p).any(|v| self.count_var(data, v, rows, min_node) > 0)
    }

    /// `-ln(#valid vars) - ln(#valid cuts of var)`, or `None` when `cut_rank`
    /// is not a valid rule for these rows.
    pub(crate) fn rule_mass(
        &mut self,
        data: &TrainData,
        rows: &[u32],
        min_node: usize,
        var: usize,
        cut_rank: u32,
    ) -> Option<f64> {
        let nvars = self.summarize(data, rows, min_node);
        if nvars == 0 || self.ncuts[var] == 0 {
            return None;
        }
        let n = rows.len();
        let (lo, hi) = self.fill(data, var, rows);
        let cut = cut_rank as usize;
        let present = cut >= lo && cut <= hi && self.counts[cut] > 0;
        let left: usize = if present { self.counts[lo..=cut].iter().map(|&c| c as usize).sum() } else { 0 };
        self.clear(lo, hi);
        if !present || left < min_node || n - left < min_node {
            return None;
        }
        Some(-(nvars as f64).ln() - f64::from(self.ncuts[var]).ln())
    }

    /// Rank of the `k`-th valid cut of `var` (0-based), after `summarize`.
    pub(crate) fn kth_cut(&mut self, data: &TrainData, var: usize, rows: &[u32], min_node: usize, k: u32) -> u32 {
        let n = rows.len();
        let (lo, hi) = self.fill(data, var, rows);
        let mut cum = 0usize;
        let mut seen = 0u32;
        let mut out = u32::MAX;
        for r in lo..=hi {
            let c = self.counts[r] as usize;
            if c == 0 {
                continue;
            }
            cum += c;
            if cum >= min_node && n - cum >= min_node {
                if seen == k {
                    out = r as u32;
                    break;
                }
                seen += 1;
            }
        }
        self.clear(lo, hi);
        debug_assert!(out != u32::MAX, "k-th cut out of range");
        out
    }
}
