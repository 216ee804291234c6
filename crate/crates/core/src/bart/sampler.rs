//! Metropolis-within-Gibbs backfitting over the trees of one chain.

use super::data::{SplitScan, TrainData};
use super::tree::{CompactTree, Node, SplitRule, Tree, TreePrior, NONE};
use crate::rng::{std_truncated, RngStream};

/// Proposal probabilities for the tree moves.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MoveMix {
    pub(crate) grow: f64,
    pub(crate) prune: f64,
    pub(crate) change: f64,
}

/// Latent-variable augmentation for the probit response.
pub(crate) struct ProbitState {
    pub(crate) labels: Vec<bool>,
    pub(crate) offset: f64,
}

/// `(count, residual sum)` marginal log-likelihood of one terminal node with
/// the terminal mean integrated out, up to terms shared by all partitions.
#[inline]
fn leaf_loglik(count: f64, sum: f64, sigma2: f64, tau2: f64) -> f64 {
    let denom = sigma2 + count * tau2;
    0.5 * (sigma2 / denom).ln() + 0.5 * tau2 * sum * sum / (sigma2 * denom)
}

#[derive(Default, Clone, Copy, Debug)]
pub(crate) struct MoveStats {
    pub(crate) proposed: [u64; 3],
    pub(crate) accepted: [u64; 3],
}

pub(crate) struct Chain<'a> {
    data: &'a TrainData,
    prior: TreePrior,
    moves: MoveMix,
    pub(crate) target: Vec<f64>,
    pub(crate) trees: Vec<Tree>,
    pub(crate) leaf_of: Vec<Vec<u32>>,
    pub(crate) fit: Vec<f64>,
    resid: Vec<f64>,
    pub(crate) sigma2: f64,
    tau2: f64,
    /// `(nu, lambda)` of the scaled inverse chi-square prior; `None` fixes sigma.
    sigma_prior: Option<(f64, f64)>,
    probit: Option<ProbitState>,
    scan: SplitScan,
    cnt: Vec<f64>,
    sum: Vec<f64>,
    pub(crate) stats: MoveStats,
}

fn pick<T: Copy>(rng: &mut RngStream, items: &[T]) -> T {
    items[rng.index(items.len())]
}

impl<'a> Chain<'a> {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        data: &'a TrainData,
        target: Vec<f64>,
        ntrees: usize,
        prior: TreePrior,
        moves: MoveMix,
        tau2: f64,
        sigma2: f64,
        sigma_prior: Option<(f64, f64)>,
        probit: Option<ProbitState>,
    ) -> Self {
        let n = data.n;
        let mut scan = SplitScan::new(data);
        let all: Vec<u32> = (0..n as u32).collect();
        let splittable = scan.any_valid(data, &all, prior.min_node);
        let init = if probit.is_some() { 0.0 } else { target.iter().sum::<f64>() / n as f64 };
        let mu0 = init / ntrees as f64;
        Self {
            data,
            prior,
            moves,
            target,
            trees: vec![Tree::root(mu0, splittable); ntrees],
            leaf_of: vec![vec![0; n]; ntrees],
            fit: vec![init; n],
            resid: vec![0.0; n],
            sigma2,
            tau2,
            sigma_prior,
            probit,
            scan,
            cnt: Vec::new(),
            sum: Vec::new(),
            stats: MoveStats::default(),
        }
    }

    pub(crate) fn sweep(&mut self, rng: &mut RngStream) {
        if let Some(p) = &self.probit {
            for i in 0..self.data.n {
                let f = self.fit[i];
                let bound = -p.offset - f;
                let z = if p.labels[i] {
                    std_truncated(rng, bound, f64::INFINITY)
                } else {
                    std_truncated(rng, f64::NEG_INFINITY, bound)
                };
                self.target[i] = f + z;
            }
        }
        for j in 0..self.trees.len() {
            self.update_tree(j, rng);
        }
        if let Some((nu, lambda)) = self.sigma_prior {
            let ssr: f64 = self.target.iter().zip(&self.fit).map(|(t, f)| (t - f) * (t - f)).sum();
            let dof = nu + self.data.n as f64;
            let scale = (nu * lambda + ssr) / dof;
            self.sigma2 = crate::rng::sample_scaled_inv_chisq(rng, dof, scale).expect("positive sigma posterior");
        }
    }

    pub(crate) fn snapshot(&self) -> Vec<CompactTree> {
        self.trees.iter().map(Tree::to_compact).collect()
    }

    fn leaf_stats(&mut self, tree: &Tree, leaf_of: &[u32]) {
        let k = tree.nodes.len();
        self.cnt.clear();
        self.cnt.resize(k, 0.0);
        self.sum.clear();
        self.sum.resize(k, 0.0);
        for (i, &l) in leaf_of.iter().enumerate() {
            self.cnt[l as usize] += 1.0;
            self.sum[l as usize] += self.resid[i];
        }
    }

    fn ll(&self, count: f64, sum: f64) -> f64 {
        leaf_loglik(count, sum, self.sigma2, self.tau2)
    }

    fn pb(&self, n_growable: usize, n_internal: usize) -> f64 {
        if n_growable == 0 {
            0.0
        } else if n_internal == 0 {
            1.0
        } else {
            self.moves.grow / (self.moves.grow + self.moves.prune)
        }
    }

    fn p_birth_death(&self, n_internal: usize) -> f64 {
        if n_internal == 0 { 1.0 } else { 1.0 - self.moves.change }
    }

    fn update_tree(&mut self, j: usize, rng: &mut RngStream) {
        let mut tree = std::mem::take(&mut self.trees[j]);
        let mut leaf_of = std::mem::take(&mut self.leaf_of[j]);
        for i in 0..self.data.n {
            self.resid[i] = self.target[i] - self.fit[i] + tree.nodes[leaf_of[i] as usize].mu;
        }
        self.leaf_stats(&tree, &leaf_of);

        let n_internal = tree.internals().count();
        let changed = if n_internal > 0 && rng.uniform() < self.moves.change {
            self.stats.proposed[2] += 1;
            let ok = self.propose_change(&mut tree, &mut leaf_of, rng);
            self.stats.accepted[2] += u64::from(ok);
            ok
        } else {
            let n_growable = tree.leaves().filter(|&l| tree.nodes[l].splittable).count();
            let pb = self.pb(n_growable, n_internal);
            if pb == 0.0 && n_internal == 0 {
                false
            } else if rng.uniform() < pb {
                self.stats.proposed[0] += 1;
                let ok = self.propose_grow(&mut tree, &mut leaf_of, n_growable, n_internal, rng);
                self.stats.accepted[0] += u64::from(ok);
                ok
            } else {
                self.stats.proposed[1] += 1;
                let ok = self.propose_prune(&mut tree, &mut leaf_of, n_growable, n_internal, rng);
                self.stats.accepted[1] += u64::from(ok);
                ok
            }
        };
        if changed {
            self.leaf_stats(&tree, &leaf_of);
        }

        for k in 0..tree.nodes.len() {
            if tree.nodes[k].is_leaf() {
                let denom = self.sigma2 + self.cnt[k] * self.tau2;
                let mean = self.tau2 * self.sum[k] / denom;
                let var = self.sigma2 * self.tau2 / denom;
                tree.nodes[k].mu = mean + var.sqrt() * rng.std_normal();
            }
        }
        for i in 0..self.data.n {
            self.fit[i] = self.target[i] - self.resid[i] + tree.nodes[leaf_of[i] as usize].mu;
        }
        self.trees[j] = tree;
        self.leaf_of[j] = leaf_of;
    }

    fn accept(rng: &mut RngStream, log_ratio: f64) -> bool {
        log_ratio >= 0.0 || rng.uniform().ln() < log_ratio
    }

    fn choose_rule(&mut self, rows: &[u32], rng: &mut RngStream) -> Option<(SplitRule, f64)> {
        let data = self.data;
        let ms = self.prior.min_node;
        let nvars = self.scan.summarize(data, rows, ms);
        if nvars == 0 {
            return None;
        }
        let valid: Vec<usize> = (0..data.p).filter(|&v| self.scan.ncuts[v] > 0).collect();
        let var = pick(rng, &valid);
        let ncuts = self.scan.ncuts[var];
        let k = rng.index(ncuts as usize) as u32;
        let cut_rank = self.scan.kth_cut(data, var, rows, ms, k);
        let mass = -(nvars as f64).ln() - f64::from(ncuts).ln();
        Some((
            SplitRule {
                var,
                cut: data.distinct[var][cut_rank as usize],
                cut_rank,
            },
            mass,
        ))
    }

    fn propose_grow(
        &mut self,
        tree: &mut Tree,
        leaf_of: &mut [u32],
        n_growable: usize,
        n_internal: usize,
        rng: &mut RngStream,
    ) -> bool {
        let data = self.data;
        let ms = self.prior.min_node;
        let growable: Vec<usize> = tree.leaves().filter(|&l| tree.nodes[l].splittable).collect();
        let at = pick(rng, &growable);
        let rows: Vec<u32> = (0..data.n as u32).filter(|&i| leaf_of[i as usize] as usize == at).collect();
        let Some((rule, mass)) = self.choose_rule(&rows, rng) else {
            return false;
        };
        let ranks = &data.rank[rule.var];
        let (left, right): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&i| ranks[i as usize] <= rule.cut_rank);
        let s_left: f64 = left.iter().map(|&i| self.resid[i as usize]).sum();
        let s_right: f64 = right.iter().map(|&i| self.resid[i as usize]).sum();
        let split_l = self.scan.any_valid(data, &left, ms);
        let split_r = self.scan.any_valid(data, &right, ms);

        let depth = tree.nodes[at].depth;
        let d_prior = self.prior.internal_term(depth, mass)
            + self.prior.leaf_term(depth + 1, split_l)
            + self.prior.leaf_term(depth + 1, split_r)
            - self.prior.leaf_term(depth, true);
        let d_lik = self.ll(left.len() as f64, s_left) + self.ll(right.len() as f64, s_right)
            - self.ll(self.cnt[at], self.sum[at]);

        let parent = tree.nodes[at].parent;
        let parent_was_nog = parent != NONE && {
            let p = &tree.nodes[parent as usize];
            tree.nodes[p.left as usize].is_leaf() && tree.nodes[p.right as usize].is_leaf()
        };
        let n_nog = tree.nog_nodes().len();
        let n_nog_new = n_nog + 1 - usize::from(parent_was_nog);
        let n_growable_new = n_growable - 1 + usize::from(split_l) + usize::from(split_r);
        let pb_old = self.pb(n_growable, n_internal);
        let pb_new = self.pb(n_growable_new, n_internal + 1);
        let log_fwd = self.p_birth_death(n_internal).ln() + pb_old.ln() - (n_growable as f64).ln() + mass;
        let log_rev = self.p_birth_death(n_internal + 1).ln() + (1.0 - pb_new).ln() - (n_nog_new as f64).ln();

        if !Self::accept(rng, d_prior + d_lik + log_rev - log_fwd) {
            return false;
        }
        let l = tree.nodes.len() as u32;
        tree.grow(at, rule, mass, (0.0, split_l), (0.0, split_r));
        for &i in &left {
            leaf_of[i as usize] = l;
        }
        for &i in &right {
            leaf_of[i as usize] = l + 1;
        }
        true
    }

    fn propose_prune(
        &mut self,
        tree: &mut Tree,
        leaf_of: &mut [u32],
        n_growable: usize,
        n_internal: usize,
        rng: &mut RngStream,
    ) -> bool {
        let nogs = tree.nog_nodes();
        let at = pick(rng, &nogs);
        let node = &tree.nodes[at];
        let (a, b) = (node.left as usize, node.right as usize);
        let (split_a, split_b) = (tree.nodes[a].splittable, tree.nodes[b].splittable);
        let depth = node.depth;
        let mass = node.rule_mass;

        let d_prior = self.prior.leaf_term(depth, true)
            - self.prior.internal_term(depth, mass)
            - self.prior.leaf_term(depth + 1, split_a)
            - self.prior.leaf_term(depth + 1, split_b);
        let d_lik = self.ll(self.cnt[a] + self.cnt[b], self.sum[a] + self.sum[b])
            - self.ll(self.cnt[a], self.sum[a])
            - self.ll(self.cnt[b], self.sum[b]);

        let n_growable_new = n_growable + 1 - usize::from(split_a) - usize::from(split_b);
        let pb_old = self.pb(n_growable, n_internal);
        let pb_new = self.pb(n_growable_new, n_internal - 1);
        let log_fwd = self.p_birth_death(n_internal).ln() + (1.0 - pb_old).ln() - (nogs.len() as f64).ln();
        let log_rev =
            self.p_birth_death(n_internal - 1).ln() + pb_new.ln() - (n_growable_new as f64).ln() + mass;

        if !Self::accept(rng, d_prior + d_lik + log_rev - log_fwd) {
            return false;
        }
        tree.prune(at, 0.0);
        for (i, l) in leaf_of.iter_mut().enumerate() {
            *l = tree.route(self.data, i);
        }
        true
    }

    fn node_term(&self, n: &Node) -> f64 {
        if n.is_leaf() {
            self.prior.leaf_term(n.depth, n.splittable)
        } else {
            self.prior.internal_term(n.depth, n.rule_mass)
        }
    }

    fn propose_change(&mut self, tree: &mut Tree, leaf_of: &mut [u32], rng: &mut RngStream) -> bool {
        let data = self.data;
        let ms = self.prior.min_node;
        let internals: Vec<usize> = tree.internals().collect();
        let at = pick(rng, &internals);
        let sub = tree.subtree(at);
        let mut in_sub = vec![false; tree.nodes.len()];
        for &k in &sub {
            in_sub[k] = true;
        }
        let rows: Vec<u32> = (0..data.n as u32).filter(|&i| in_sub[leaf_of[i as usize] as usize]).collect();
        let Some((rule, mass)) = self.choose_rule(&rows, rng) else {
            return false;
        };
        let old_rule = tree.nodes[at].rule.expect("internal node");
        if rule.var == old_rule.var && rule.cut_rank == old_rule.cut_rank {
            // Proposal equals the current state; nothing to do.
            return false;
        }
        let old_mass = tree.nodes[at].rule_mass;
        let mut cand = tree.clone();
        cand.nodes[at].rule = Some(rule);
        cand.nodes[at].rule_mass = mass;

        let mut rows_of: Vec<Vec<u32>> = vec![Vec::new(); cand.nodes.len()];
        for &i in &rows {
            let mut k = at;
            loop {
                rows_of[k].push(i);
                let n = &cand.nodes[k];
                match n.rule {
                    None => break,
                    Some(r) => {
                        k = if data.rank[r.var][i as usize] <= r.cut_rank { n.left } else { n.right } as usize;
                    }
                }
            }
        }
        let mut d_lik = 0.0;
        for &k in &sub {
            if cand.nodes[k].is_leaf() {
                if rows_of[k].len() < ms {
                    return false;
                }
                d_lik -= self.ll(self.cnt[k], self.sum[k]);
            }
        }
        for &k in &sub {
            if k == at {
                continue;
            }
            let node_rows = std::mem::take(&mut rows_of[k]);
            if let Some(r) = cand.nodes[k].rule {
                match self.scan.rule_mass(data, &node_rows, ms, r.var, r.cut_rank) {
                    Some(m) => cand.nodes[k].rule_mass = m,
                    None => return false,
                }
            } else {
                cand.nodes[k].splittable = self.scan.any_valid(data, &node_rows, ms);
                let s: f64 = node_rows.iter().map(|&i| self.resid[i as usize]).sum();
                d_lik += self.ll(node_rows.len() as f64, s);
            }
            rows_of[k] = node_rows;
        }
        let d_prior: f64 = sub
            .iter()
            .map(|&k| self.node_term(&cand.nodes[k]) - self.node_term(&tree.nodes[k]))
            .sum();
        let log_q = old_mass - mass;

        if !Self::accept(rng, d_prior + d_lik + log_q) {
            return false;
        }
        for &k in &sub {
            if cand.nodes[k].is_leaf() {
                for &i in &rows_of[k] {
                    leaf_of[i as usize] = k as u32;
                }
            }
        }
        *tree = cand;
        true
    }
}
