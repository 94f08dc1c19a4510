//! Exact analysis of the sampler kernels on enumerable model spaces.
//!
//! Everything here builds dense `|M(s0)| x |M(s0)|` objects, so it is meant for
//! `p` up to about 10 with `s0 <= 3`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::RegressionData;
use crate::error::{Error, Result};
use crate::linalg::ModelFit;
use crate::posterior::{Hyperparams, ModelState};
use crate::proposals::{log_sum_exp, Proposal, ProposalSpec};

/// Default bound on the number of enumerated models.
pub const ENUMERATION_CAP: usize = 200_000;

/// TV values below this are treated as converged when tabulating curves.
pub const TV_FLOOR: f64 = 1e-13;

/// Slack allowed when comparing exact TV distances with analytic bounds.
pub const BOUND_TOL: f64 = 1e-12;

/// Slack when comparing certified exponents with the thresholds `c0 >= 2`, `c1 >= 4`.
pub const CERT_TOL: f64 = 1e-9;

const Q_GRID: usize = 400;

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Number of models of size at most `s0` over `p` covariates.
pub fn space_size(p: usize, s0: usize) -> u128 {
    (0..=s0.min(p)).map(|k| binomial(p, k)).sum()
}

/// All subsets of `0..p` with at most `s0` elements, ordered by size then lexicographically.
pub fn enumerate_models(p: usize, s0: usize, cap: usize) -> Result<Vec<Vec<usize>>> {
    let size = space_size(p, s0);
    if size > cap as u128 {
        return Err(Error::SpaceTooLarge { size, cap });
    }
    let mut out = Vec::with_capacity(size as usize);
    for k in 0..=s0.min(p) {
        let mut comb: Vec<usize> = (0..k).collect();
        loop {
            out.push(comb.clone());
            let mut i = k;
            while i > 0 && comb[i - 1] == p - k + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            comb[i - 1] += 1;
            for m in i..k {
                comb[m] = comb[m - 1] + 1;
            }
        }
    }
    Ok(out)
}

fn is_subset(a: &[usize], b: &[usize]) -> bool {
    a.iter().all(|x| b.binary_search(x).is_ok())
}

/// Exact Metropolis-Hastings chain over `M(s0)`.
#[derive(Clone, Debug)]
pub struct ExactChain {
    pub models: Vec<Vec<usize>>,
    pub log_pi: Vec<f64>,
    pub pi: Vec<f64>,
    pub kernel: DMatrix<f64>,
    pub is_lazy: bool,
    p: usize,
    s0: usize,
    index: HashMap<Vec<usize>, usize>,
    sym: DMatrix<f64>,
}

/// Outcome of the structural checks on an [`ExactChain`].
#[derive(Clone, Debug, Serialize)]
pub struct ChainCheck {
    pub states: usize,
    pub pi_sum_error: f64,
    pub row_sum_error: f64,
    pub reversibility_error: f64,
    pub min_diagonal: f64,
    pub min_eigenvalue: f64,
}

impl ChainCheck {
    pub fn passes(&self, lazy: bool) -> bool {
        let base = self.pi_sum_error <= 1e-12 && self.row_sum_error <= 1e-12 && self.reversibility_error <= 1e-10;
        base && (!lazy || (self.min_diagonal >= 0.5 - 1e-12 && self.min_eigenvalue >= -1e-10))
    }
}

/// Builds the exact kernel of the sampler described by `spec`, optionally made lazy.
pub fn exact_chain(data: &RegressionData, hp: &Hyperparams, spec: &ProposalSpec, lazy: bool) -> Result<ExactChain> {
    let p = data.p();
    let s0 = hp.s0;
    let models = enumerate_models(p, s0, ENUMERATION_CAP)?;
    let index: HashMap<Vec<usize>, usize> = models.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
    let proposal = Proposal::new(spec.clone(), p, s0)?;
    let mut states = models
        .par_iter()
        .map(|m| ModelState::new(data, hp, m))
        .collect::<Result<Vec<_>>>()?;
    let log_pi_raw: Vec<f64> = states.iter().map(|s| s.log_post()).collect();
    let rows: Vec<Vec<(usize, f64)>> = states
        .par_iter_mut()
        .map(|s| {
            let mut acc: HashMap<usize, Vec<f64>> = HashMap::new();
            for (target, lk) in proposal.transitions(s, data, hp) {
                if let Some(&j) = index.get(&target) {
                    acc.entry(j).or_default().push(lk);
                }
            }
            let mut row: Vec<(usize, f64)> = acc.into_iter().map(|(j, v)| (j, log_sum_exp(v))).collect();
            row.sort_by_key(|e| e.0);
            row
        })
        .collect();
    let lookup = |i: usize, j: usize| match rows[i].binary_search_by_key(&j, |e| e.0) {
        Ok(pos) => rows[i][pos].1,
        Err(_) => f64::NEG_INFINITY,
    };
    let nst = models.len();
    let mut kernel = DMatrix::<f64>::zeros(nst, nst);
    let mut sym = DMatrix::<f64>::zeros(nst, nst);
    for i in 0..nst {
        for &(j, lk) in &rows[i] {
            if j == i {
                continue;
            }
            let back = lookup(j, i);
            let d = log_pi_raw[j] - log_pi_raw[i];
            kernel[(i, j)] = lk.min(d + back).exp();
            sym[(i, j)] = (lk - 0.5 * d).min(back + 0.5 * d).exp();
        }
        let off: f64 = kernel.row(i).iter().sum();
        kernel[(i, i)] = (1.0 - off).max(0.0);
        sym[(i, i)] = kernel[(i, i)];
    }
    if lazy {
        for m in [&mut kernel, &mut sym] {
            *m *= 0.5;
            for i in 0..nst {
                m[(i, i)] += 0.5;
            }
        }
    }
    let z = log_sum_exp(log_pi_raw.iter().copied());
    let log_pi: Vec<f64> = log_pi_raw.iter().map(|l| l - z).collect();
    let pi = log_pi.iter().map(|l| l.exp()).collect();
    Ok(ExactChain {
        models,
        log_pi,
        pi,
        kernel,
        is_lazy: lazy,
        p,
        s0,
        index,
        sym,
    })
}

impl ExactChain {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn s0(&self) -> usize {
        self.s0
    }

    pub fn index_of(&self, gamma: &[usize]) -> Option<usize> {
        self.index.get(gamma).copied()
    }

    /// Index of the posterior mode.
    pub fn mode(&self) -> usize {
        (0..self.len())
            .max_by(|&a, &b| self.log_pi[a].total_cmp(&self.log_pi[b]))
            .unwrap_or(0)
    }

    /// Exact posterior inclusion probabilities.
    pub fn pip(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        for (m, w) in self.models.iter().zip(&self.pi) {
            for &j in m {
                out[j] += w;
            }
        }
        out
    }

    /// Indices of models containing `gamma_star`.
    pub fn overfitted(&self, gamma_star: &[usize]) -> Vec<bool> {
        self.models.iter().map(|m| is_subset(gamma_star, m)).collect()
    }

    /// Spectrum of the kernel, computed from its symmetrization `D^{1/2} P D^{-1/2}`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.sym.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn check(&self) -> ChainCheck {
        let n = self.len();
        let pi_sum_error = (self.pi.iter().sum::<f64>() - 1.0).abs();
        let mut row_sum_error: f64 = 0.0;
        let mut reversibility_error: f64 = 0.0;
        let mut min_diagonal = f64::INFINITY;
        for i in 0..n {
            row_sum_error = row_sum_error.max((self.kernel.row(i).iter().sum::<f64>() - 1.0).abs());
            min_diagonal = min_diagonal.min(self.kernel[(i, i)]);
            for j in (i + 1)..n {
                let e = (self.pi[i] * self.kernel[(i, j)] - self.pi[j] * self.kernel[(j, i)]).abs();
                reversibility_error = reversibility_error.max(e);
            }
        }
        let min_eigenvalue = self.eigenvalues().first().copied().unwrap_or(f64::NAN);
        ChainCheck {
            states: n,
            pi_sum_error,
            row_sum_error,
            reversibility_error,
            min_diagonal,
            min_eigenvalue,
        }
    }

    /// `(P f)(x)` for every state.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (&self.kernel * DVector::from_column_slice(f)).iter().copied().collect()
    }

    /// Row vector `mu P`.
    pub fn step_distribution(&self, mu: &[f64]) -> Vec<f64> {
        (DVector::from_column_slice(mu).transpose() * &self.kernel).iter().copied().collect()
    }

    fn tv(&self, mu: impl Iterator<Item = f64>) -> f64 {
        0.5 * mu.zip(&self.pi).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// One-step transition probabilities `P(γ, ·)` computed directly from the proposal,
/// without enumerating the space. The holding probability is included last.
pub fn transition_row(
    data: &RegressionData,
    hp: &Hyperparams,
    spec: &ProposalSpec,
    gamma: &[usize],
) -> Result<Vec<(Vec<usize>, f64)>> {
    let proposal = Proposal::new(spec.clone(), data.p(), hp.s0)?;
    let mut state = ModelState::new(data, hp, gamma)?;
    let mut acc: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
    for (t, lk) in proposal.transitions(&mut state, data, hp) {
        acc.entry(t).or_default().push(lk);
    }
    let mut out = Vec::with_capacity(acc.len() + 1);
    let mut total = 0.0;
    let mut targets: Vec<_> = acc.into_iter().collect();
    targets.sort_by(|a, b| a.0.cmp(&b.0));
    for (t, v) in targets {
        let lk = log_sum_exp(v);
        let mut other = ModelState::new(data, hp, &t)?;
        let back = proposal.log_kernel(&mut other, gamma, data, hp);
        let pr = lk.min(other.log_post() - state.log_post() + back).exp();
        total += pr;
        out.push((t, pr));
    }
    out.push((gamma.to_vec(), (1.0 - total).max(0.0)));
    Ok(out)
}

/// `TV(P^t(x, ·), π)` for every start state, tabulated until all values drop below [`TV_FLOOR`].
#[derive(Clone, Debug)]
pub struct TvTable {
    pub rows: Vec<Vec<f64>>,
    pub horizon: usize,
}

impl TvTable {
    /// TV at time `t` from state `x`; past the tabulated range, the last row bounds it.
    pub fn at(&self, t: usize, x: usize) -> f64 {
        self.rows[t.min(self.rows.len() - 1)][x]
    }
}

pub fn tv_table(chain: &ExactChain, horizon: usize) -> TvTable {
    let n = chain.len();
    let mut pt = DMatrix::<f64>::identity(n, n);
    let mut rows = Vec::new();
    for t in 0..=horizon {
        let row: Vec<f64> = (0..n).map(|x| chain.tv(pt.row(x).iter().copied())).collect();
        let done = row.iter().all(|&v| v < TV_FLOOR);
        rows.push(row);
        if done || t == horizon {
            break;
        }
        pt = &pt * &chain.kernel;
    }
    TvTable { rows, horizon }
}

/// `TV(P^t(start, ·), π)` for `t = 0..=horizon`.
pub fn tv_curve(chain: &ExactChain, start: usize, horizon: usize) -> Vec<f64> {
    let mut mu = vec![0.0; chain.len()];
    mu[start] = 1.0;
    tv_curve_from(chain, &mu, horizon)
}

/// Same as [`tv_curve`] for an arbitrary initial distribution.
pub fn tv_curve_from(chain: &ExactChain, mu: &[f64], horizon: usize) -> Vec<f64> {
    let mut mu = mu.to_vec();
    let mut out = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        out.push(chain.tv(mu.iter().copied()));
        if t < horizon {
            mu = chain.step_distribution(&mu);
        }
    }
    out
}

/// `max_x min{t : TV(P^t(x, ·), π) <= eps}`.
pub fn exact_mixing_time(chain: &ExactChain, eps: f64, horizon: usize) -> Result<usize> {
    let n = chain.len();
    let mut pt = DMatrix::<f64>::identity(n, n);
    for t in 0..=horizon {
        if (0..n).all(|x| chain.tv(pt.row(x).iter().copied()) <= eps) {
            return Ok(t);
        }
        pt = &pt * &chain.kernel;
    }
    Err(Error::Nonconvergent { horizon })
}

/// Extremum of one clause of Condition 1 with its verdict.
#[derive(Clone, Debug, Serialize)]
pub struct Clause {
    /// `None` when the quantifier ranges over no model.
    pub value: Option<f64>,
    pub satisfied: bool,
    pub vacuous: bool,
}

impl Clause {
    fn from_value(value: Option<f64>) -> Self {
        Clause {
            value,
            satisfied: value.is_none_or(|v| v > 0.0),
            vacuous: value.is_none(),
        }
    }
}

/// Largest exponents `c0`, `c1` for which Condition 1 holds on an instance.
#[derive(Clone, Debug, Serialize)]
pub struct Condition1 {
    pub gamma_star: Vec<usize>,
    pub c0_max: Option<f64>,
    pub c1_max: Option<f64>,
    /// Overfitted models: `min -log_p B(γ, γ ∪ {j})` over `|γ| < s0`, `j ∉ γ`.
    pub clause_a: Clause,
    /// Underfitted models with `|γ| < s0`: `min_γ max_{j ∈ γ* \ γ} log_p B(γ, γ ∪ {j})`.
    pub clause_b: Clause,
    /// Underfitted models with `|γ| = s0`: best swap `j ∈ γ* \ γ`, `k ∈ γ \ γ*`.
    pub clause_c: Clause,
}

impl Condition1 {
    pub fn satisfied(&self) -> bool {
        self.clause_a.satisfied && self.clause_b.satisfied && self.clause_c.satisfied
    }
}

/// Evaluates Condition 1 exactly over `M(s0)`.
pub fn condition1_constants(data: &RegressionData, hp: &Hyperparams) -> Result<Condition1> {
    let models = enumerate_models(data.p(), hp.s0, ENUMERATION_CAP)?;
    let log_pi = models
        .par_iter()
        .map(|m| ModelState::new(data, hp, m).map(|s| s.log_post()))
        .collect::<Result<Vec<_>>>()?;
    Ok(condition1_from(&models, &log_pi, data.p(), hp.s0))
}

/// Condition 1 evaluated from the stationary distribution of an exact chain.
pub fn condition1_for_chain(chain: &ExactChain) -> Condition1 {
    condition1_from(&chain.models, &chain.log_pi, chain.p, chain.s0)
}

fn condition1_from(models: &[Vec<usize>], log_pi: &[f64], p: usize, s0: usize) -> Condition1 {
    let index: HashMap<&[usize], usize> = models.iter().enumerate().map(|(i, m)| (m.as_slice(), i)).collect();
    let log_p = (p as f64).ln();
    let star = (0..models.len()).max_by(|&a, &b| log_pi[a].total_cmp(&log_pi[b])).unwrap_or(0);
    let gamma_star = models[star].clone();
    let lb = |from: usize, to: &[usize]| (log_pi[index[to]] - log_pi[from]) / log_p;
    let with = |g: &[usize], j: usize| {
        let mut v = g.to_vec();
        let pos = v.binary_search(&j).unwrap_err();
        v.insert(pos, j);
        v
    };
    let fold_min = |acc: Option<f64>, v: f64| Some(acc.map_or(v, |a: f64| a.min(v)));
    let (mut a, mut b, mut c) = (None, None, None);
    for (i, g) in models.iter().enumerate() {
        let over = is_subset(&gamma_star, g);
        let outside: Vec<usize> = (0..p).filter(|j| g.binary_search(j).is_err()).collect();
        if over {
            if g.len() < s0 {
                for &j in &outside {
                    a = fold_min(a, -lb(i, &with(g, j)));
                }
            }
            continue;
        }
        let missing: Vec<usize> = gamma_star.iter().copied().filter(|j| g.binary_search(j).is_err()).collect();
        if g.len() < s0 {
            let best = missing.iter().map(|&j| lb(i, &with(g, j))).fold(f64::NEG_INFINITY, f64::max);
            b = fold_min(b, best);
        } else {
            let mut best = f64::NEG_INFINITY;
            for &k in g.iter().filter(|k| gamma_star.binary_search(k).is_err()) {
                let base: Vec<usize> = g.iter().copied().filter(|&x| x != k).collect();
                for &j in &missing {
                    best = best.max(lb(i, &with(&base, j)));
                }
            }
            c = fold_min(c, best);
        }
    }
    let c1_max = match (b, c) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, y) => x.or(y),
    };
    Condition1 {
        gamma_star,
        c0_max: a,
        c1_max,
        clause_a: Clause::from_value(a),
        clause_b: Clause::from_value(b),
        clause_c: Clause::from_value(c),
    }
}

/// Drift functions and one-step drift ratios over the whole space.
#[derive(Clone, Debug, Serialize)]
pub struct DriftProfile {
    pub gamma_star: Vec<usize>,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    /// `(P V1)(γ) / V1(γ)`.
    pub ratio1: Vec<f64>,
    /// `(P V2)(γ) / V2(γ)`.
    pub ratio2: Vec<f64>,
    /// Max of `ratio1` over underfitted models.
    pub lambda1: Option<f64>,
    /// Max of `ratio2` over overfitted models other than `γ*`.
    pub lambda2: Option<f64>,
    /// Violations of the elementary bounds on `V1`, `V2` and their one-step increments.
    pub lemma_failures: Vec<String>,
}

/// `V1(γ) = (1 + g rss_γ / y^T y)^{1 / log(1 + g)}`.
pub fn drift_v1(data: &RegressionData, hp: &Hyperparams, gamma: &[usize]) -> Result<f64> {
    let rss = ModelFit::from_scratch(data, gamma)?.rss();
    Ok((1.0 + hp.g * rss / data.yty()).powf(1.0 / hp.g.ln_1p()))
}

/// `V2(γ) = exp(|γ \ γ*| / s0)`.
pub fn drift_v2(gamma: &[usize], gamma_star: &[usize], s0: usize) -> f64 {
    let extra = gamma.iter().filter(|j| gamma_star.binary_search(j).is_err()).count();
    (extra as f64 / s0 as f64).exp()
}

pub fn drift_ratio_profile(
    chain: &ExactChain,
    data: &RegressionData,
    hp: &Hyperparams,
    gamma_star: &[usize],
) -> Result<DriftProfile> {
    let v1 = chain
        .models
        .par_iter()
        .map(|m| drift_v1(data, hp, m))
        .collect::<Result<Vec<_>>>()?;
    let v2: Vec<f64> = chain.models.iter().map(|m| drift_v2(m, gamma_star, hp.s0)).collect();
    let pv1 = chain.apply(&v1);
    let pv2 = chain.apply(&v2);
    let ratio1: Vec<f64> = pv1.iter().zip(&v1).map(|(a, b)| a / b).collect();
    let ratio2: Vec<f64> = pv2.iter().zip(&v2).map(|(a, b)| a / b).collect();
    let over = chain.overfitted(gamma_star);
    let star = chain.index_of(gamma_star);
    let max_over = |r: &[f64], keep: &dyn Fn(usize) -> bool| {
        (0..r.len()).filter(|&i| keep(i)).map(|i| r[i]).reduce(f64::max)
    };
    let lambda1 = max_over(&ratio1, &|i| !over[i]);
    let lambda2 = max_over(&ratio2, &|i| over[i] && Some(i) != star);

    let mut lemma_failures = Vec::new();
    let e = std::f64::consts::E;
    for (i, m) in chain.models.iter().enumerate() {
        for (name, v) in [("V1", v1[i]), ("V2", v2[i])] {
            if !(1.0 - 1e-12..=e + 1e-12).contains(&v) {
                lemma_failures.push(format!("{name}({m:?}) = {v} outside [1, e]"));
            }
        }
        for j in 0..chain.p {
            if m.binary_search(&j).is_ok() || m.len() >= chain.s0 {
                continue;
            }
            let mut t = m.clone();
            t.insert(t.binary_search(&j).unwrap_err(), j);
            let k = chain.index[&t];
            let r1 = v1[k] / v1[i] - 1.0;
            if r1 > 1e-12 {
                lemma_failures.push(format!("R1({m:?}, +{j}) = {r1} > 0"));
            }
            let r1_back = v1[i] / v1[k] - 1.0;
            if r1_back < -1e-12 {
                lemma_failures.push(format!("R1({t:?}, -{j}) = {r1_back} < 0"));
            }
            if gamma_star.binary_search(&j).is_err() {
                let r2 = v2[k] / v2[i] - 1.0;
                if r2 > 2.0 / chain.s0 as f64 + 1e-12 {
                    lemma_failures.push(format!("R2({m:?}, +{j}) = {r2} > 2/s0"));
                }
                let r2_back = v2[i] / v2[k] - 1.0;
                if r2_back > -0.5 / chain.s0 as f64 + 1e-12 {
                    lemma_failures.push(format!("R2({t:?}, -{j}) = {r2_back} > -1/(2 s0)"));
                }
            }
        }
    }
    Ok(DriftProfile {
        gamma_star: gamma_star.to_vec(),
        v1,
        v2,
        ratio1,
        ratio2,
        lambda1,
        lambda2,
        lemma_failures,
    })
}

/// Constants of the two-stage drift bound.
#[derive(Clone, Debug, Serialize)]
pub struct TwoStageConstants {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Escape bound used in the formulas.
    pub q: f64,
    /// Exact `max_{x ∈ A} P(x, A^c)`.
    pub q_escape: f64,
    pub k: f64,
    pub m: f64,
    pub rho: f64,
    pub u: f64,
    pub r: f64,
    pub alpha: f64,
    /// Membership of each state in the overfitted set `A`.
    pub in_a: Vec<bool>,
    pub x_star: usize,
    /// `V1` with its values on `A` replaced by 1.
    pub v1: Vec<f64>,
}

/// `(ρ, u, r, α)` from `(q, K, λ2, M)`.
pub fn alpha_formula(q: f64, k: f64, lambda2: f64, m: f64) -> (f64, f64, f64, f64) {
    let rho = q * k / (1.0 - lambda2);
    let u = 1.0 / (1.0 - q / 2.0);
    let r = u.ln() / (m / rho).ln();
    let alpha = (1.0 + m.powf(r) / u) / 2.0;
    (rho, u, r, alpha)
}

fn violated(condition: &str, detail: String) -> Error {
    Error::PreconditionViolated {
        condition: condition.into(),
        detail,
    }
}

/// Checks the hypotheses of the two-stage drift theorem with `A` the overfitted set and
/// `x* = γ*`, and evaluates its constants. Without an override, `q` is chosen on a grid
/// above the exact escape probability to minimize `α`.
pub fn two_stage_constants(
    chain: &ExactChain,
    gamma_star: &[usize],
    v1: &[f64],
    v2: &[f64],
    q_override: Option<f64>,
) -> Result<TwoStageConstants> {
    if !chain.is_lazy {
        return Err(violated("lazy", "the kernel must be lazy".into()));
    }
    let n = chain.len();
    let x_star = chain
        .index_of(gamma_star)
        .ok_or_else(|| violated("x*", format!("{gamma_star:?} is not in the model space")))?;
    let in_a = chain.overfitted(gamma_star);
    let v1n: Vec<f64> = (0..n).map(|i| if in_a[i] { 1.0 } else { v1[i] }).collect();
    let pv1 = chain.apply(&v1n);
    let pv2 = chain.apply(v2);
    let lambda1 = (0..n).filter(|&i| !in_a[i]).map(|i| pv1[i] / v1n[i]).fold(0.0, f64::max);
    if lambda1 >= 1.0 {
        return Err(violated("i", format!("max PV1/V1 off A is {lambda1}")));
    }
    let lambda2 = (0..n)
        .filter(|&i| in_a[i] && i != x_star)
        .map(|i| pv2[i] / v2[i])
        .fold(0.0, f64::max);
    if lambda2 >= 1.0 {
        return Err(violated("ii", format!("max PV2/V2 on A minus x* is {lambda2}")));
    }
    let m = 2.0 * v1n.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let k = (0..n).filter(|&i| in_a[i]).map(|i| v2[i]).fold(1.0, f64::max);
    let mut q_escape: f64 = 0.0;
    for x in (0..n).filter(|&i| in_a[i]) {
        let row = chain.kernel.row(x);
        let out: f64 = (0..n).filter(|&y| !in_a[y]).map(|y| row[y]).sum();
        q_escape = q_escape.max(out);
        if out <= 0.0 {
            continue;
        }
        let e1: f64 = (0..n).filter(|&y| !in_a[y]).map(|y| row[y] * v1n[y]).sum::<f64>() / out;
        if e1 > m / 2.0 + 1e-12 {
            return Err(violated("iii", format!("E[V1 | exit] = {e1} > M/2 = {} at state {x}", m / 2.0)));
        }
        let e2: f64 = (0..n).filter(|&y| !in_a[y]).map(|y| row[y] * v2[y]).sum::<f64>() / out;
        if e2 < v2[x] - 1e-12 {
            return Err(violated("iv", format!("E[V2 | exit] = {e2} < V2 = {} at state {x}", v2[x])));
        }
    }
    let bound = (1.0 - lambda1).min((1.0 - lambda2) / k);
    if q_escape >= bound {
        return Err(violated("v", format!("escape probability {q_escape} >= {bound}")));
    }
    let q = match q_override {
        Some(q) => {
            if q < q_escape || q >= bound {
                return Err(violated("v", format!("q = {q} outside [{q_escape}, {bound})")));
            }
            q
        }
        None => (0..Q_GRID)
            .map(|i| q_escape + (bound - q_escape) * i as f64 / Q_GRID as f64)
            .filter(|&q| q > 0.0)
            .min_by(|&a, &b| alpha_formula(a, k, lambda2, m).3.total_cmp(&alpha_formula(b, k, lambda2, m).3))
            .unwrap_or(0.0),
    };
    if q <= 0.0 {
        return Err(violated("v", "q = 0 makes the bound degenerate".into()));
    }
    let (rho, u, r, alpha) = alpha_formula(q, k, lambda2, m);
    Ok(TwoStageConstants {
        lambda1,
        lambda2,
        q,
        q_escape,
        k,
        m,
        rho,
        u,
        r,
        alpha,
        in_a,
        x_star,
        v1: v1n,
    })
}

/// Largest ratio of exact TV to the two-stage bound.
#[derive(Clone, Debug, Serialize)]
pub struct TvBoundReport {
    pub horizon: usize,
    pub steps_tabulated: usize,
    pub max_ratio: f64,
    pub worst_state: usize,
    pub worst_t: usize,
}

/// Checks `TV(P^t(x, ·), π) <= 4 α^{t+1} (1 + V1(x)/M)` for all `x` and `t <= horizon`.
pub fn tv_bound_check(chain: &ExactChain, constants: &TwoStageConstants, horizon: usize) -> Result<TvBoundReport> {
    let table = tv_table(chain, horizon);
    let bound = |t: usize, x: usize| 4.0 * constants.alpha.powi(t as i32 + 1) * (1.0 + constants.v1[x] / constants.m);
    check_table(&table, bound)
}

fn check_table(table: &TvTable, bound: impl Fn(usize, usize) -> f64) -> Result<TvBoundReport> {
    let mut report = TvBoundReport {
        horizon: table.horizon,
        steps_tabulated: table.rows.len(),
        max_ratio: 0.0,
        worst_state: 0,
        worst_t: 0,
    };
    let nst = table.rows[0].len();
    for t in 0..=table.horizon {
        for x in 0..nst {
            let (tv, b) = (table.at(t, x), bound(t, x));
            if tv > b + BOUND_TOL {
                return Err(Error::BoundViolated { state: x, t, tv, bound: b });
            }
            let ratio = tv / b;
            if ratio > report.max_ratio {
                report.max_ratio = ratio;
                report.worst_state = x;
                report.worst_t = t;
            }
        }
        if t >= table.rows.len() && bound(t, 0) < TV_FLOOR * 1e-3 {
            break;
        }
    }
    Ok(report)
}

/// Comparison of the exact mixing time with the `800 max{n κ1 / c1, 3 s0}` budget.
#[derive(Clone, Debug, Serialize)]
pub struct MixingBudget {
    /// `c0_max >= 2` and `4 <= c1 <= n κ1 - κ` for some admissible `c1`.
    pub hypotheses_hold: bool,
    pub c1: Option<f64>,
    pub budget: Option<f64>,
    pub mixing_time: usize,
    pub within_budget: bool,
}

/// Whether exponents `(c0, c1)` meet the mixing-time hypotheses `c0 >= 2`, `c1 >= 4`.
pub fn certifies(c0: Option<f64>, c1: Option<f64>) -> bool {
    c0.is_none_or(|c| c >= 2.0 - CERT_TOL) && c1.is_some_and(|c| c >= 4.0 - CERT_TOL)
}

pub fn mixing_budget_check(
    chain: &ExactChain,
    cond: &Condition1,
    n: usize,
    hp: &Hyperparams,
    horizon: usize,
) -> Result<MixingBudget> {
    let mixing_time = exact_mixing_time(chain, 0.25, horizon)?;
    let c1_cap = n as f64 * hp.kappa1 - hp.kappa();
    let c1 = cond.c1_max.map(|c| c.min(c1_cap));
    let hypotheses_hold = certifies(cond.c0_max, c1);
    let budget = c1
        .filter(|_| hypotheses_hold)
        .map(|c| 800.0 * (n as f64 * hp.kappa1 / c).max(3.0 * hp.s0 as f64));
    let within_budget = budget.is_none_or(|b| mixing_time as f64 <= b);
    Ok(MixingBudget {
        hypotheses_hold,
        c1,
        budget,
        mixing_time,
        within_budget,
    })
}

/// `E_x[λ^{-τ_C}]` for every state, where `τ_C` is the hitting time of `C`.
pub fn hitting_gf(chain: &ExactChain, target: &[usize], lambda: f64) -> Result<Vec<f64>> {
    let n = chain.len();
    let mut in_c = vec![false; n];
    for &c in target {
        in_c[c] = true;
    }
    let off: Vec<usize> = (0..n).filter(|&i| !in_c[i]).collect();
    let mut f = vec![1.0; n];
    if off.is_empty() {
        return Ok(f);
    }
    let m = off.len();
    let sym = DMatrix::from_fn(m, m, |a, b| chain.sym[(off[a], off[b])]);
    let radius = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    if radius >= lambda {
        return Err(Error::Divergent { radius, lambda });
    }
    let a = DMatrix::from_fn(m, m, |i, j| {
        let e = if i == j { 1.0 } else { 0.0 };
        e - chain.kernel[(off[i], off[j])] / lambda
    });
    let b = DVector::from_fn(m, |i, _| {
        (0..n).filter(|&y| in_c[y]).map(|y| chain.kernel[(off[i], y)]).sum::<f64>() / lambda
    });
    let sol = a.lu().solve(&b).ok_or(Error::Divergent { radius, lambda })?;
    for (i, &x) in off.iter().enumerate() {
        f[x] = sol[i];
    }
    Ok(f)
}

/// Checks `TV(P^t(x, ·), π) <= 2 V(x) λ^{t+1}` for all `x` and `t <= horizon`.
pub fn hitting_tv_check(chain: &ExactChain, v: &[f64], lambda: f64, horizon: usize) -> Result<TvBoundReport> {
    let table = tv_table(chain, horizon);
    check_table(&table, |t, x| 2.0 * v[x] * lambda.powi(t as i32 + 1))
}

/// Monte Carlo estimate from the split-chain construction.
#[derive(Clone, Debug, Serialize)]
pub struct SplitEstimate {
    pub j: usize,
    pub n_sims: usize,
    /// Mean of `u^{ω_j}`.
    pub mean: f64,
    pub se: f64,
    /// `2 V1(x) M^{j-1}`.
    pub bound: f64,
    /// Mean of `u^{N_k}` pooled over all completed stays in `A`.
    pub stay_mean: f64,
    pub stay_se: f64,
    pub stays: usize,
}

impl SplitEstimate {
    pub fn within_bound(&self) -> bool {
        self.mean <= self.bound + 3.0 * self.se
    }

    pub fn stay_matches(&self) -> bool {
        (self.stay_mean - 2.0).abs() <= 3.0 * self.stay_se
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Simulates the bivariate chain `(X_t, Z_t)` in which `P = q R + (1 - q) Q` on `A`,
/// and estimates `E[u^{ω_j}]` where `ω_j` is the `j`-th time `R` is used.
pub fn split_chain_estimate<R: Rng + ?Sized>(
    chain: &ExactChain,
    constants: &TwoStageConstants,
    start: usize,
    j: usize,
    n_sims: usize,
    rng: &mut R,
) -> Result<SplitEstimate> {
    let n = chain.len();
    let q = constants.q;
    let in_a = &constants.in_a;
    let row = |x: usize| -> Vec<f64> { chain.kernel.row(x).iter().copied().collect() };
    let weighted = |w: &[f64]| WeightedIndex::new(w).map_err(|e| Error::InvalidSpec(e.to_string()));
    let mut p_rows = Vec::with_capacity(n);
    let mut q_rows = Vec::with_capacity(n);
    let mut r_rows = Vec::with_capacity(n);
    for x in 0..n {
        let pr = row(x);
        p_rows.push(weighted(&pr)?);
        if !in_a[x] {
            q_rows.push(None);
            r_rows.push(None);
            continue;
        }
        let pa: f64 = (0..n).filter(|&y| in_a[y]).map(|y| pr[y]).sum();
        let qr: Vec<f64> = (0..n).map(|y| if in_a[y] && pa > 0.0 { pr[y] / pa } else { 0.0 }).collect();
        let mut rr = Vec::with_capacity(n);
        for y in 0..n {
            let v = (pr[y] - (1.0 - q) * qr[y]) / q;
            if v < -1e-12 {
                return Err(Error::DecompositionInfeasible { state: x });
            }
            rr.push(v.max(0.0));
        }
        q_rows.push(if q < 1.0 { Some(weighted(&qr)?) } else { None });
        r_rows.push(Some(weighted(&rr)?));
    }
    let ln_u = constants.u.ln();
    let mut omegas = Vec::with_capacity(n_sims);
    let mut stays = Vec::new();
    for _ in 0..n_sims {
        let mut x = start;
        let mut t = 0usize;
        for _ in 0..j {
            while !in_a[x] {
                x = p_rows[x].sample(rng);
                t += 1;
            }
            let sigma = t;
            loop {
                let z = rng.random_bool(q);
                x = if z {
                    r_rows[x].as_ref().expect("state in A").sample(rng)
                } else {
                    q_rows[x].as_ref().expect("q < 1").sample(rng)
                };
                t += 1;
                if z {
                    break;
                }
            }
            stays.push((ln_u * (t - sigma) as f64).exp());
        }
        omegas.push((ln_u * t as f64).exp());
    }
    let (mean, se) = mean_se(&omegas);
    let (stay_mean, stay_se) = mean_se(&stays);
    Ok(SplitEstimate {
        j,
        n_sims,
        mean,
        se,
        bound: 2.0 * constants.v1[start] * constants.m.powi(j as i32 - 1),
        stay_mean,
        stay_se,
        stays: stays.len(),
    })
}

/// Design with `X_j^T X_j = n`, `X_1^T X_2 = (ν - 1) n`, other columns orthogonal, and
/// `y = X_1 + X_2 + z` with `z^T z = n`, `X^T z = 0` (columns 0 and 1 are the signals).
pub fn example1_design(p: usize, nu: f64, n: usize) -> Result<RegressionData> {
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::InvalidSpec(format!("nu = {nu} must lie in (0, 1]")));
    }
    if p < 2 || n < p + 2 {
        return Err(Error::InvalidSpec(format!("need p >= 2 and n >= p + 2, got p = {p}, n = {n}")));
    }
    let nf = n as f64;
    let mut gram = DMatrix::<f64>::identity(p, p) * nf;
    gram[(0, 1)] = (nu - 1.0) * nf;
    gram[(1, 0)] = (nu - 1.0) * nf;
    let chol = gram.cholesky().ok_or(Error::GramNotPD)?;
    let l = chol.l();
    // Orthonormal columns from the cosine basis, skipping the constant vector.
    let basis = |k: usize, i: usize| {
        (2.0 / nf).sqrt() * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / nf).cos()
    };
    let mut x = vec![0.0; n * p];
    for j in 0..p {
        for i in 0..n {
            x[j * n + i] = (0..p).map(|k| basis(k + 1, i) * l[(j, k)]).sum();
        }
    }
    let y: Vec<f64> = (0..n)
        .map(|i| x[i] + x[n + i] + nf.sqrt() * basis(p + 1, i))
        .collect();
    let data = RegressionData::from_columns(n, p, x, y)?;
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let explained = data.yty() - ModelFit::from_scratch(&data, &[0, 1])?.rss();
    if rel(data.yty(), (1.0 + 2.0 * nu) * nf) > 1e-10 || rel(explained, 2.0 * nu * nf) > 1e-10 {
        return Err(Error::GramNotPD);
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, BetaMode, Design, SyntheticSpec};
    use crate::sampler::chain_rng;

    fn two_state(hold: f64) -> ExactChain {
        let kernel = DMatrix::from_row_slice(2, 2, &[hold, 1.0 - hold, 1.0 - hold, hold]);
        let models = vec![vec![], vec![0]];
        let index = models.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        ExactChain {
            models,
            log_pi: vec![0.5f64.ln(); 2],
            pi: vec![0.5; 2],
            sym: kernel.clone(),
            kernel,
            is_lazy: true,
            p: 1,
            s0: 1,
            index,
        }
    }

    fn instance(n: usize, p: usize, snr: f64, seed: u64) -> RegressionData {
        let spec = SyntheticSpec {
            n,
            p,
            design: Design::Independent,
            snr,
            beta_mode: BetaMode::Random {
                s_star: 2,
                sigma_beta: 1.0,
            },
            seed,
        };
        generate(&spec).unwrap().0
    }

    #[test]
    fn enumeration_counts_and_order() {
        assert_eq!(enumerate_models(4, 2, ENUMERATION_CAP).unwrap().len(), 11);
        assert_eq!(enumerate_models(3, 3, ENUMERATION_CAP).unwrap().len(), 8);
        assert_eq!(enumerate_models(5, 1, ENUMERATION_CAP).unwrap().len(), 6);
        let m = enumerate_models(4, 2, ENUMERATION_CAP).unwrap();
        assert_eq!(m[0], Vec::<usize>::new());
        assert_eq!(m[5], vec![0, 1]);
        assert_eq!(m[10], vec![2, 3]);
        assert!(matches!(enumerate_models(40, 10, ENUMERATION_CAP), Err(Error::SpaceTooLarge { .. })));
    }

    #[test]
    fn two_state_tv_and_mixing() {
        let c = two_state(0.75);
        let tv = tv_curve(&c, 0, 10);
        for (t, v) in tv.iter().enumerate() {
            assert!((v - 0.5 * 0.5f64.powi(t as i32)).abs() < 1e-14);
        }
        assert_eq!(exact_mixing_time(&c, 0.25, 100).unwrap(), 1);
        assert!(tv_curve_from(&c, &[0.5, 0.5], 5).iter().all(|&v| v < 1e-15));
        let still = two_state(0.5);
        assert_eq!(exact_mixing_time(&still, 0.25, 10).unwrap(), 1);
        let stuck = two_state(1.0);
        assert!(matches!(exact_mixing_time(&stuck, 0.25, 10), Err(Error::Nonconvergent { .. })));
    }

    #[test]
    fn hitting_gf_two_state() {
        // From state 0 the hitting time of state 1 is geometric with success a.
        let c = two_state(0.75);
        let (a, lambda) = (0.25, 0.9);
        let f = hitting_gf(&c, &[1], lambda).unwrap();
        let closed = (a / lambda) / (1.0 - (1.0 - a) / lambda);
        assert!((f[0] - closed).abs() < 1e-10);
        assert_eq!(f[1], 1.0);
        assert!(matches!(hitting_gf(&c, &[1], 0.7), Err(Error::Divergent { .. })));
    }

    #[test]
    fn alpha_scalar_check() {
        let (rho, u, r, alpha) = alpha_formula(0.1, 1.0, 0.5, 2.0);
        assert!((rho - 0.2).abs() < 1e-12);
        assert!((u - 1.052632).abs() < 1e-6);
        assert!((r - 0.022276).abs() < 1e-6);
        assert!((alpha - 0.98239).abs() < 1e-5);
        assert!(alpha > 1.0 - 0.1 / 4.0 && alpha < 1.0);
    }

    #[test]
    fn single_covariate_chain() {
        let spec = SyntheticSpec {
            n: 20,
            p: 1,
            design: Design::Independent,
            snr: 2.0,
            beta_mode: BetaMode::Random {
                s_star: 1,
                sigma_beta: 1.0,
            },
            seed: 3,
        };
        let d = generate(&spec).unwrap().0;
        let hp = Hyperparams::new(1.0, 1.0, 1, 2).unwrap().with_g(4.0).unwrap();
        let spec = ProposalSpec::theory_lit(2.0, 4.0, 1, 1);
        let c = exact_chain(&d, &hp, &spec, false).unwrap();
        assert_eq!(c.len(), 2);
        let chk = c.check();
        assert!(chk.passes(false), "{chk:?}");
        assert!(chk.reversibility_error < 1e-15);
    }

    #[test]
    fn exact_kernel_checks_and_direct_rows() {
        let d = instance(30, 6, 3.0, 11);
        let hp = Hyperparams::new(1.0, 1.0, 2, 6).unwrap();
        for spec in [ProposalSpec::lit1(), ProposalSpec::rw(), ProposalSpec::lb1(), ProposalSpec::lb2()] {
            let c = exact_chain(&d, &hp, &spec, true).unwrap();
            let chk = c.check();
            assert!(chk.passes(true), "{chk:?}");
            assert!(chk.min_eigenvalue >= -1e-10);
        }
        let c = exact_chain(&d, &hp, &ProposalSpec::lit1(), false).unwrap();
        for g in [vec![], vec![2], vec![0, 4]] {
            let i = c.index_of(&g).unwrap();
            for (t, pr) in transition_row(&d, &hp, &ProposalSpec::lit1(), &g).unwrap() {
                let j = c.index_of(&t).unwrap();
                assert!((c.kernel[(i, j)] - pr).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_rw_proposal_is_symmetric() {
        let d = instance(30, 5, 1.0, 2);
        let hp = Hyperparams::new(1.0, 1.0, 5, 5).unwrap();
        let prop = Proposal::new(ProposalSpec::srw(), 5, 5).unwrap();
        let models = enumerate_models(5, 5, ENUMERATION_CAP).unwrap();
        for g in &models {
            let mut s = ModelState::new(&d, &hp, g).unwrap();
            for (t, lk) in prop.transitions(&mut s, &d, &hp) {
                if t.len().abs_diff(g.len()) != 1 {
                    continue;
                }
                let mut back = ModelState::new(&d, &hp, &t).unwrap();
                assert!((prop.log_kernel(&mut back, g, &d, &hp) - lk).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn composite_swap_kernel_is_reversible() {
        let d = instance(30, 6, 2.0, 5);
        let hp = Hyperparams::new(1.0, 1.0, 2, 6).unwrap();
        let spec = ProposalSpec {
            swap_mode: crate::proposals::SwapMode::Composite,
            ..ProposalSpec::lit1()
        };
        let c = exact_chain(&d, &hp, &spec, false).unwrap();
        assert!(c.check().passes(false));
    }

    #[test]
    fn condition1_matches_dense_projection_pass() {
        let d = instance(40, 8, 3.0, 21);
        let hp = Hyperparams::new(1.0, 1.0, 3, 8).unwrap();
        let c1 = condition1_constants(&d, &hp).unwrap();
        let again = condition1_constants(&d, &hp).unwrap();
        assert_eq!(c1.c0_max, again.c0_max);
        assert_eq!(c1.c1_max, again.c1_max);

        // Independent pass: residuals from explicit projection matrices.
        let (n, p) = (d.n(), d.p());
        let x = nalgebra::DMatrix::from_column_slice(n, p, d.x_col_major());
        let y = DVector::from_column_slice(d.y());
        let lp = |g: &[usize]| {
            let rss = if g.is_empty() {
                d.yty()
            } else {
                let xg = x.select_columns(g);
                let proj = &xg * (xg.transpose() * &xg).try_inverse().unwrap() * xg.transpose();
                let r = &y - proj * &y;
                r.dot(&r)
            };
            -hp.kappa() * g.len() as f64 * (p as f64).ln() - n as f64 / 2.0 * (d.yty() / hp.g + rss).ln()
        };
        let models = enumerate_models(p, 3, ENUMERATION_CAP).unwrap();
        let lps: Vec<f64> = models.iter().map(|m| lp(m)).collect();
        let star = &models[(0..models.len()).max_by(|&a, &b| lps[a].total_cmp(&lps[b])).unwrap()];
        assert_eq!(star, &c1.gamma_star);
        let lpm: HashMap<Vec<usize>, f64> = models.iter().cloned().zip(lps.iter().copied()).collect();
        let logp = (p as f64).ln();
        let mut c0 = f64::INFINITY;
        let mut c1b = f64::INFINITY;
        let mut c1c = f64::INFINITY;
        for g in &models {
            let over = star.iter().all(|s| g.contains(s));
            let add = |j: usize| {
                let mut t = g.clone();
                t.push(j);
                t.sort();
                (lpm[&t] - lpm[g]) / logp
            };
            if over && g.len() < 3 {
                for j in (0..p).filter(|j| !g.contains(j)) {
                    c0 = c0.min(-add(j));
                }
            } else if !over && g.len() < 3 {
                let best = star.iter().filter(|j| !g.contains(j)).map(|&j| add(j)).fold(f64::NEG_INFINITY, f64::max);
                c1b = c1b.min(best);
            } else if !over {
                let mut best = f64::NEG_INFINITY;
                for &k in g.iter().filter(|k| !star.contains(k)) {
                    for &j in star.iter().filter(|j| !g.contains(j)) {
                        let mut t: Vec<usize> = g.iter().copied().filter(|&v| v != k).collect();
                        t.push(j);
                        t.sort();
                        best = best.max((lpm[&t] - lpm[g]) / logp);
                    }
                }
                c1c = c1c.min(best);
            }
        }
        let close = |a: f64, b: Option<f64>| match b {
            Some(b) => (a - b).abs() < 1e-8 * (1.0 + a.abs()),
            None => a.is_infinite(),
        };
        assert!(close(c0, c1.clause_a.value));
        assert!(close(c1b, c1.clause_b.value));
        assert!(close(c1c, c1.clause_c.value));
        assert!(close(c1b.min(c1c), c1.c1_max));
    }

    #[test]
    fn condition1_vacuous_for_null_mode() {
        let d = instance(40, 5, 0.0, 8);
        let hp = Hyperparams::new(3.0, 1.0, 2, 5).unwrap();
        let c = condition1_constants(&d, &hp).unwrap();
        assert!(c.gamma_star.is_empty());
        assert!(c.clause_b.vacuous && c.clause_b.satisfied);
        assert!(c.clause_c.vacuous && c.clause_c.satisfied);
        assert!(c.clause_a.satisfied);
    }

    #[test]
    fn example1_fixture_identities() {
        for nu in [0.5, 1.0] {
            let d = example1_design(10, nu, 200).unwrap();
            let n = 200.0;
            assert!((d.yty() - (1.0 + 2.0 * nu) * n).abs() < 1e-9 * n);
            let rss1 = ModelFit::from_scratch(&d, &[0]).unwrap().rss();
            assert!(((d.yty() - rss1) - nu * nu * n).abs() < 1e-9 * n);
            let rss3 = ModelFit::from_scratch(&d, &[3]).unwrap().rss();
            assert!((d.yty() - rss3).abs() < 1e-9 * n);
            assert!((d.gram_entry(0, 1) - (nu - 1.0) * n).abs() < 1e-9 * n);
        }
        assert!(example1_design(10, 1.5, 200).is_err());
    }

    #[test]
    fn split_chain_degenerate_q_one() {
        let c = two_state(0.75);
        let constants = TwoStageConstants {
            lambda1: 0.5,
            lambda2: 0.5,
            q: 1.0,
            q_escape: 0.25,
            k: 1.0,
            m: 2.0,
            rho: 0.0,
            u: 2.0,
            r: 0.0,
            alpha: 0.9,
            in_a: vec![true, false],
            x_star: 0,
            v1: vec![1.0, 1.0],
        };
        let mut rng = chain_rng(1, 0);
        let est = split_chain_estimate(&c, &constants, 0, 1, 200, &mut rng).unwrap();
        assert!((est.mean - 2.0).abs() < 1e-12);
        assert!(est.se < 1e-12);
    }

    #[test]
    fn split_chain_infeasible_when_escape_exceeds_q() {
        let c = two_state(0.75);
        let constants = TwoStageConstants {
            lambda1: 0.5,
            lambda2: 0.5,
            q: 0.1,
            q_escape: 0.25,
            k: 1.0,
            m: 2.0,
            rho: 0.0,
            u: 1.0 / 0.95,
            r: 0.0,
            alpha: 0.9,
            in_a: vec![true, false],
            x_star: 0,
            v1: vec![1.0, 1.0],
        };
        let mut rng = chain_rng(1, 0);
        assert!(matches!(
            split_chain_estimate(&c, &constants, 0, 1, 10, &mut rng),
            Err(Error::DecompositionInfeasible { state: 0 })
        ));
    }
}
