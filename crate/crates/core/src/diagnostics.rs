//! Effective sample sizes, local modes, posterior landscape statistics and trace reports.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{RegressionData, Truth};
use crate::error::{Error, Result};
use crate::estimators::{beta_hat, sample_t2};
use crate::posterior::{log_post_unnorm, Hyperparams, ModelState};
use crate::sampler::{chain_rng, ChainTrace};

/// Smallest series length accepted by the ESS estimators.
pub const MIN_ESS_LEN: usize = 100;

fn batch_layout(n: usize) -> (usize, usize) {
    let b = (n as f64).sqrt().floor() as usize;
    (n / b, b)
}

/// Univariate ESS with batch size `floor(sqrt(N))`.
pub fn ess_batch_means(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < MIN_ESS_LEN {
        return Err(Error::InvalidSpec(format!("ESS needs at least {MIN_ESS_LEN} points, got {n}")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 1e-300) || series.iter().all(|v| *v == series[0]) {
        return Err(Error::ZeroVariance);
    }
    let (a, b) = batch_layout(n);
    let used = &series[..a * b];
    let grand = used.iter().sum::<f64>() / used.len() as f64;
    let s: f64 = used
        .chunks(b)
        .map(|c| (c.iter().sum::<f64>() / b as f64 - grand).powi(2))
        .sum();
    let sigma = b as f64 * s / (a - 1) as f64;
    if !(sigma > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(n as f64 * var / sigma)
}

fn log_det_pd(m: DMatrix<f64>) -> Option<f64> {
    let scale = m.diagonal().iter().cloned().fold(0.0, f64::max);
    let ch = m.cholesky()?;
    let l = ch.l();
    let mut ld = 0.0;
    for i in 0..l.nrows() {
        let d = l[(i, i)] * l[(i, i)];
        if !(d > 1e-12 * scale) {
            return None;
        }
        ld += d.ln();
    }
    Some(ld)
}

/// Multivariate ESS `N (det Λ / det Σ_bm)^{1/q}` over rows of `series`.
pub fn multi_ess(series: &[Vec<f64>]) -> Result<f64> {
    let n = series.len();
    if n < MIN_ESS_LEN {
        return Err(Error::InvalidSpec(format!("ESS needs at least {MIN_ESS_LEN} points, got {n}")));
    }
    let q = series[0].len();
    if q == 0 || series.iter().any(|r| r.len() != q) {
        return Err(Error::DimensionMismatch("ragged multivariate series".into()));
    }
    let mean: Vec<f64> = (0..q).map(|k| series.iter().map(|r| r[k]).sum::<f64>() / n as f64).collect();
    let mut lam = DMatrix::<f64>::zeros(q, q);
    for r in series {
        for i in 0..q {
            for j in 0..=i {
                lam[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    let (a, b) = batch_layout(n);
    let used = &series[..a * b];
    let grand: Vec<f64> = (0..q).map(|k| used.iter().map(|r| r[k]).sum::<f64>() / used.len() as f64).collect();
    let mut sig = DMatrix::<f64>::zeros(q, q);
    for c in used.chunks(b) {
        let m: Vec<f64> = (0..q).map(|k| c.iter().map(|r| r[k]).sum::<f64>() / b as f64 - grand[k]).collect();
        for i in 0..q {
            for j in 0..=i {
                sig[(i, j)] += m[i] * m[j];
            }
        }
    }
    for i in 0..q {
        for j in 0..=i {
            lam[(i, j)] /= (n - 1) as f64;
            lam[(j, i)] = lam[(i, j)];
            sig[(i, j)] *= b as f64 / (a - 1) as f64;
            sig[(j, i)] = sig[(i, j)];
        }
    }
    let ld_lam = log_det_pd(lam).ok_or(Error::SingularCovariance)?;
    let ld_sig = log_det_pd(sig).ok_or(Error::SingularCovariance)?;
    Ok(n as f64 * ((ld_lam - ld_sig) / q as f64).exp())
}

/// Extreme single-flip log ratios in units of `log p`; `None` marks an empty range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeStats {
    pub r_a0: Option<f64>,
    pub r_d0: Option<f64>,
    pub r_a1: Option<f64>,
    pub r_d1: Option<f64>,
    pub r_max: Option<f64>,
    pub overfit_flag: bool,
}

fn opt_max(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn fold_ext(it: impl Iterator<Item = f64>, max: bool) -> Option<f64> {
    it.filter(|v| v.is_finite())
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| if max { a.max(v) } else { a.min(v) })))
}

/// Landscape extrema at `state`; addition ratios ignore the size bound.
pub fn landscape_stats(state: &mut ModelState, data: &RegressionData, hp: &Hyperparams, reference: &[usize]) -> LandscapeStats {
    let lp = (data.p() as f64).ln();
    let add = state.add_scan(data, hp, None);
    let del = state.del_scan(data, hp);
    let in_ref = |j: &usize| reference.contains(j);
    let outside = (0..data.p()).filter(|&j| !state.contains(j));
    let r_a0 = fold_ext(outside.clone().map(|j| add.log_b[j] / lp), true);
    let r_a1 = fold_ext(outside.filter(in_ref).map(|j| add.log_b[j] / lp), false);
    let r_d0 = fold_ext(del.log_b.iter().map(|v| v / lp), true);
    let r_d1 = fold_ext(
        del.members
            .iter()
            .zip(&del.log_b)
            .filter(|(k, _)| !in_ref(k))
            .map(|(_, v)| v / lp),
        false,
    );
    LandscapeStats {
        r_a0,
        r_d0,
        r_a1,
        r_d1,
        r_max: opt_max(r_a0, r_d0),
        overfit_flag: reference.iter().all(|j| state.contains(*j)),
    }
}

/// True iff every single-flip neighbor has strictly smaller posterior.
pub fn local_mode_flag(state: &mut ModelState, data: &RegressionData, hp: &Hyperparams) -> bool {
    if state.size() < hp.s0 {
        let add = state.add_scan(data, hp, None);
        if add.log_b.iter().any(|v| *v >= 0.0) {
            return false;
        }
    }
    let del = state.del_scan(data, hp);
    del.log_b.iter().all(|v| *v < 0.0)
}

/// Reference models `(Γ_i \ γ̄) ∪ γ_i`, where `Γ_i` is the `i`-th block of `p / q`
/// consecutive indices and `γ̄` the union of the `q` given best models.
pub fn summary_references(best: &[Vec<usize>], p: usize, q: usize) -> Result<Vec<Vec<usize>>> {
    if q == 0 || p % q != 0 {
        return Err(Error::QNotDividingP { p, q });
    }
    if best.len() < q {
        return Err(Error::InsufficientModels {
            need: q,
            have: best.len(),
        });
    }
    let union: HashSet<usize> = best[..q].iter().flatten().copied().collect();
    let w = p / q;
    Ok((0..q)
        .map(|i| {
            let mut r: Vec<usize> = (i * w..(i + 1) * w).filter(|j| !union.contains(j)).collect();
            r.extend(best[i].iter().copied());
            r.sort_unstable();
            r.dedup();
            r
        })
        .collect())
}

/// Hamming distances from `gamma` to each reference model (both sorted).
pub fn summary_f(gamma: &[usize], references: &[Vec<usize>]) -> Vec<f64> {
    references
        .iter()
        .map(|r| {
            let common = r.iter().filter(|j| gamma.binary_search(j).is_ok()).count();
            (gamma.len() + r.len() - 2 * common) as f64
        })
        .collect()
}

/// Fixed-width histogram with under- and overflow counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, width: f64) -> Self {
        let bins = ((hi - lo) / width).ceil() as usize;
        Histogram {
            lo,
            width,
            counts: vec![0; bins],
            below: 0,
            above: 0,
        }
    }

    pub fn add(&mut self, v: f64) {
        if v < self.lo {
            self.below += 1;
            return;
        }
        let i = ((v - self.lo) / self.width) as usize;
        match self.counts.get_mut(i) {
            Some(c) => *c += 1,
            None => self.above += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.below + self.above
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeHistograms {
    /// Reference model used to classify over- and underfitted models.
    pub reference: Vec<usize>,
    pub models: usize,
    pub r_max: Histogram,
    pub underfitted_a0: Histogram,
    pub underfitted_a1: Histogram,
    pub overfitted_d0: Histogram,
    pub overfitted_d1: Histogram,
}

impl LandscapeHistograms {
    fn new(reference: Vec<usize>) -> Self {
        let h = || Histogram::new(-10.0, 20.0, 0.25);
        LandscapeHistograms {
            reference,
            models: 0,
            r_max: h(),
            underfitted_a0: h(),
            underfitted_a1: h(),
            overfitted_d0: h(),
            overfitted_d1: h(),
        }
    }

    fn add(&mut self, gamma: &[usize], s: &LandscapeStats) {
        self.models += 1;
        if let Some(v) = s.r_max {
            self.r_max.add(v);
        }
        if s.overfit_flag {
            if gamma != self.reference {
                s.r_d0.map(|v| self.overfitted_d0.add(v));
                s.r_d1.map(|v| self.overfitted_d1.add(v));
            }
        } else {
            s.r_a0.map(|v| self.underfitted_a0.add(v));
            s.r_a1.map(|v| self.underfitted_a1.add(v));
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnoseOptions {
    /// Dimension of the summary statistic `F`.
    pub q: usize,
    /// Seed for the coefficient draws behind `T2`.
    pub seed: u64,
    /// Largest number of distinct models scanned for landscape statistics.
    pub landscape_cap: usize,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions {
            q: 5,
            seed: 0,
            landscape_cap: 2000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceSummary {
    pub chain: u64,
    pub iters: usize,
    pub acceptance_rate: f64,
    /// First iteration at the pooled best model (`0` = initial model).
    pub h_max: Option<usize>,
    pub ess_t1: Option<f64>,
    pub ess_t2: Option<f64>,
    pub multi_ess_f: Option<f64>,
    pub best_log_post: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EssSummary {
    pub t1: Vec<Option<f64>>,
    pub t2: Vec<Option<f64>>,
    pub multi_f: Vec<Option<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub chains: Vec<TraceSummary>,
    pub best_model: Vec<usize>,
    pub best_log_post: f64,
    pub successes: usize,
    pub acceptance_rate: f64,
    pub n_unique_models: usize,
    pub n_local_modes: usize,
    pub ess: EssSummary,
    /// Visit-frequency inclusion probabilities pooled over chains.
    pub pip: Vec<f64>,
    pub landscape_histogram: Option<LandscapeHistograms>,
    pub notes: Vec<String>,
}

/// Visit-frequency inclusion probabilities pooled over traces.
pub fn frequency_pip(traces: &[ChainTrace], p: usize) -> Vec<f64> {
    let mut counts = vec![0u64; p];
    let mut total = 0u64;
    for t in traces {
        for r in &t.records {
            r.g.iter().for_each(|&j| counts[j] += 1);
            total += 1;
        }
    }
    counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect()
}

struct ModelCache<'a> {
    data: &'a RegressionData,
    hp: &'a Hyperparams,
    map: HashMap<Arc<[usize]>, Arc<ModelState>>,
}

impl<'a> ModelCache<'a> {
    fn get(&mut self, g: &Arc<[usize]>) -> Result<Arc<ModelState>> {
        if let Some(s) = self.map.get(g) {
            return Ok(s.clone());
        }
        let s = Arc::new(ModelState::new(self.data, self.hp, g)?);
        self.map.insert(g.clone(), s.clone());
        Ok(s)
    }
}

fn ess_opt(r: Result<f64>, what: &str, chain: u64, notes: &mut Vec<String>) -> Option<f64> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("chain {chain}: {what} unavailable ({e})"));
            None
        }
    }
}

/// Pooled report over traces sampled from the same posterior.
pub fn diagnose(
    traces: &[ChainTrace],
    data: &RegressionData,
    hp: &Hyperparams,
    truth: Option<&Truth>,
    opts: &DiagnoseOptions,
) -> Result<Report> {
    let p = data.p();
    let mut notes = Vec::new();
    let mut best: (f64, Arc<[usize]>) = (f64::NEG_INFINITY, Arc::from(Vec::new()));
    let mut init_lps = Vec::new();
    for t in traces {
        let lp0 = log_post_unnorm(data, hp, t.init())?;
        init_lps.push(lp0);
        let b = t.best(lp0);
        if b.0 > best.0 {
            best = b;
        }
    }
    let mut order: Vec<Arc<[usize]>> = Vec::new();
    let mut best_lp_of: HashMap<Arc<[usize]>, f64> = HashMap::new();
    for t in traces {
        for r in &t.records {
            if !best_lp_of.contains_key(&r.g) {
                best_lp_of.insert(r.g.clone(), r.lp);
                order.push(r.g.clone());
            }
        }
    }
    let mut ranked = order.clone();
    ranked.sort_by(|a, b| best_lp_of[b].partial_cmp(&best_lp_of[a]).unwrap().then_with(|| a.cmp(b)));
    let references = match summary_references(
        &ranked.iter().take(opts.q).map(|g| g.to_vec()).collect::<Vec<_>>(),
        p,
        opts.q,
    ) {
        Ok(r) => Some(r),
        Err(e) => {
            notes.push(format!("summary statistic F unavailable ({e})"));
            None
        }
    };

    let mut cache = ModelCache {
        data,
        hp,
        map: HashMap::new(),
    };
    let mut t1_of: HashMap<Arc<[usize]>, f64> = HashMap::new();
    let mut chains = Vec::new();
    let (mut t1s, mut t2s, mut mfs) = (Vec::new(), Vec::new(), Vec::new());
    for (ti, t) in traces.iter().enumerate() {
        let mut rng = chain_rng(opts.seed, t.meta.chain);
        let mut t1 = Vec::with_capacity(t.records.len());
        let mut t2 = Vec::with_capacity(t.records.len());
        let mut fs = Vec::with_capacity(t.records.len());
        for r in &t.records {
            let s = cache.get(&r.g)?;
            if let Some(ts) = truth {
                let v = *t1_of.entry(r.g.clone()).or_insert_with(|| {
                    beta_hat(&s, data, hp)
                        .iter()
                        .zip(&ts.beta_star)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum()
                });
                t1.push(v);
            }
            t2.push(sample_t2(&s, data, hp, &mut rng));
            if let Some(refs) = &references {
                fs.push(summary_f(&r.g, refs));
            }
        }
        let c = t.meta.chain;
        let e1 = if truth.is_some() { ess_opt(ess_batch_means(&t1), "ESS(T1)", c, &mut notes) } else { None };
        let e2 = ess_opt(ess_batch_means(&t2), "ESS(T2)", c, &mut notes);
        let ef = if references.is_some() { ess_opt(multi_ess(&fs), "multiESS(F)", c, &mut notes) } else { None };
        t1s.push(e1);
        t2s.push(e2);
        mfs.push(ef);
        chains.push(TraceSummary {
            chain: c,
            iters: t.records.len(),
            acceptance_rate: t.acceptance_rate(),
            h_max: t.hitting_iteration(&best.1),
            ess_t1: e1,
            ess_t2: e2,
            multi_ess_f: ef,
            best_log_post: t.best(init_lps[ti]).0,
        });
    }
    if truth.is_none() {
        notes.push("no truth supplied: T1 skipped, landscape reference is the best sampled model".into());
    }

    let mut n_local_modes = 0;
    let reference = truth.map(|t| t.gamma_star.clone()).unwrap_or_else(|| best.1.to_vec());
    let mut hist = LandscapeHistograms::new(reference.clone());
    for (i, g) in order.iter().enumerate() {
        if i >= opts.landscape_cap {
            notes.push(format!(
                "landscape and local modes computed on the first {} of {} distinct models",
                opts.landscape_cap,
                order.len()
            ));
            break;
        }
        let mut s = (*cache.get(g)?).clone();
        if local_mode_flag(&mut s, data, hp) {
            n_local_modes += 1;
        }
        if g[..] != best.1[..] {
            let st = landscape_stats(&mut s, data, hp, &reference);
            hist.add(g, &st);
        }
    }

    let total: usize = traces.iter().map(|t| t.records.iter().filter(|r| r.mv != crate::proposals::MoveType::Hold).count()).sum();
    let acc: usize = traces.iter().map(|t| t.records.iter().filter(|r| r.acc).count()).sum();
    Ok(Report {
        successes: chains.iter().filter(|c| c.h_max.is_some()).count(),
        chains,
        best_model: best.1.to_vec(),
        best_log_post: best.0,
        acceptance_rate: acc as f64 / total.max(1) as f64,
        n_unique_models: order.len(),
        n_local_modes,
        ess: EssSummary {
            t1: t1s,
            t2: t2s,
            multi_f: mfs,
        },
        pip: frequency_pip(traces, p),
        landscape_histogram: Some(hist),
        notes,
    })
}

/// Median and `q`-quantile of the observed values (nearest rank), ignoring `None`.
pub fn quantile(values: &[usize], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1] as f64)
}

pub fn median(values: &[usize]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let m = v.len();
    Some(if m % 2 == 1 {
        v[m / 2] as f64
    } else {
        (v[m / 2 - 1] + v[m / 2]) as f64 / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, BetaMode, Design, SyntheticSpec};
    use crate::proposals::ProposalSpec;
    use crate::sampler::run_chain;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn iid_ess_near_n() {
        let reps = 40;
        let e: f64 = (0..reps).map(|r| ess_batch_means(&normals(10_000, 100 + r)).unwrap()).sum::<f64>() / reps as f64;
        assert!((e / 1e4 - 1.0).abs() < 0.15, "{e}");
    }

    #[test]
    fn ar1_ess_ratio() {
        let z = normals(100_000, 2);
        let mut x = vec![0.0; z.len()];
        for t in 1..z.len() {
            x[t] = 0.9 * x[t - 1] + z[t];
        }
        let e = ess_batch_means(&x).unwrap() / x.len() as f64;
        let target = 0.1 / 1.9;
        assert!((e / target - 1.0).abs() < 0.25, "{e}");
    }

    #[test]
    fn degenerate_series() {
        assert!(matches!(ess_batch_means(&[2.0; 500]), Err(Error::ZeroVariance)));
        let x = normals(500, 3);
        let rows: Vec<Vec<f64>> = x.iter().map(|v| vec![*v, 2.0 * v]).collect();
        assert!(matches!(multi_ess(&rows), Err(Error::SingularCovariance)));
    }

    #[test]
    fn multivariate_ess() {
        let reps = 40;
        let mut e = 0.0;
        for r in 0..reps {
            let a = normals(10_000, 200 + 2 * r);
            let b = normals(10_000, 201 + 2 * r);
            let rows: Vec<Vec<f64>> = a.iter().zip(&b).map(|(x, y)| vec![*x, *y]).collect();
            e += multi_ess(&rows).unwrap() / reps as f64;
        }
        assert!((e / 1e4 - 1.0).abs() < 0.2, "{e}");
        let a = normals(10_000, 4);
        let one: Vec<Vec<f64>> = a.iter().map(|v| vec![*v]).collect();
        assert!((multi_ess(&one).unwrap() - ess_batch_means(&a).unwrap()).abs() < 1e-9 * 1e4);
    }

    #[test]
    fn summary_statistic() {
        let best: Vec<Vec<usize>> = vec![vec![0, 7], vec![3], vec![12, 19], vec![], vec![5]];
        assert!(matches!(summary_references(&best, 21, 5), Err(Error::QNotDividingP { .. })));
        assert!(matches!(summary_references(&best[..2], 20, 5), Err(Error::InsufficientModels { .. })));
        let refs = summary_references(&best, 20, 5).unwrap();
        assert_eq!(refs[0], vec![0, 1, 2, 7]);
        assert_eq!(refs[1], vec![3, 4, 6]);
        assert_eq!(summary_f(&refs[0], &refs)[0], 0.0);
        let f = summary_f(&[], &refs);
        for (fi, r) in f.iter().zip(&refs) {
            assert_eq!(*fi, r.len() as f64);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let mut g: Vec<usize> = rand::seq::index::sample(&mut rng, 20, 6).into_vec();
            g.sort();
            let f = summary_f(&g, &refs);
            for (fi, r) in f.iter().zip(&refs) {
                let a: HashSet<_> = g.iter().collect();
                let b: HashSet<_> = r.iter().collect();
                assert_eq!(*fi, a.symmetric_difference(&b).count() as f64);
            }
        }
    }

    fn small() -> (RegressionData, Hyperparams) {
        let (d, _) = generate(&SyntheticSpec {
            n: 40,
            p: 5,
            design: Design::Ar1,
            snr: 1.0,
            beta_mode: BetaMode::Fixed10,
            seed: 8,
        })
        .unwrap();
        let hp = Hyperparams::new(0.5, 0.5, 5, 5).unwrap();
        (d, hp)
    }

    fn all_models(p: usize) -> Vec<Vec<usize>> {
        (0..1usize << p).map(|m| (0..p).filter(|j| m >> j & 1 == 1).collect()).collect()
    }

    #[test]
    fn landscape_matches_brute_force() {
        let (d, hp) = small();
        let lp = 5f64.ln();
        let reference = vec![0, 2];
        for g in all_models(5) {
            let mut s = ModelState::new(&d, &hp, &g).unwrap();
            let st = landscape_stats(&mut s, &d, &hp, &reference);
            let base = log_post_unnorm(&d, &hp, &g).unwrap();
            let mut adds = Vec::new();
            let mut adds_ref = Vec::new();
            let mut dels = Vec::new();
            let mut dels_out = Vec::new();
            for j in 0..5 {
                let mut h: Vec<usize> = g.clone();
                if g.contains(&j) {
                    h.retain(|&c| c != j);
                    let v = (log_post_unnorm(&d, &hp, &h).unwrap() - base) / lp;
                    dels.push(v);
                    if !reference.contains(&j) {
                        dels_out.push(v);
                    }
                } else {
                    h.push(j);
                    h.sort();
                    let v = (log_post_unnorm(&d, &hp, &h).unwrap() - base) / lp;
                    adds.push(v);
                    if reference.contains(&j) {
                        adds_ref.push(v);
                    }
                }
            }
            let mx = |v: &Vec<f64>| v.iter().cloned().reduce(f64::max);
            let mn = |v: &Vec<f64>| v.iter().cloned().reduce(f64::min);
            let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(x), Some(y)) => (x - y).abs() < 1e-9,
                (None, None) => true,
                _ => false,
            };
            assert!(close(st.r_a0, mx(&adds)), "{g:?}");
            assert!(close(st.r_d0, mx(&dels)), "{g:?}");
            assert!(close(st.r_a1, mn(&adds_ref)), "{g:?}");
            assert!(close(st.r_d1, mn(&dels_out)), "{g:?}");
            if g.is_empty() {
                assert!(st.r_d0.is_none() && st.r_d1.is_none());
            }
            if let (Some(a1), Some(a0)) = (st.r_a1, st.r_a0) {
                assert!(a1 <= a0);
            }
            assert_eq!(st.overfit_flag, reference.iter().all(|j| g.contains(j)));

            let brute_mode = adds.iter().chain(&dels).all(|v| *v < 0.0);
            assert_eq!(local_mode_flag(&mut s, &d, &hp), brute_mode, "{g:?}");
        }
    }

    #[test]
    fn single_covariate_mode() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 - 3.5]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] + 0.1).collect();
        let d = RegressionData::from_rows(&rows, y).unwrap();
        let hp = Hyperparams {
            kappa0: 0.5,
            kappa1: 0.5,
            g: 10.0,
            s0: 1,
        };
        let mut full = ModelState::new(&d, &hp, &[0]).unwrap();
        let mut empty = ModelState::empty(&d, &hp);
        assert!(local_mode_flag(&mut full, &d, &hp));
        assert!(!local_mode_flag(&mut empty, &d, &hp));
    }

    #[test]
    fn pooled_report() {
        let spec = SyntheticSpec {
            n: 100,
            p: 20,
            design: Design::Independent,
            snr: 3.0,
            beta_mode: BetaMode::Fixed10,
            seed: 9,
        };
        let (d, truth) = generate(&spec).unwrap();
        let hp = Hyperparams::new(1.0, 1.0, 12, 20).unwrap();
        let t = run_chain(&d, &hp, &ProposalSpec::lit1(), &[], 400, 1).unwrap();
        let one = diagnose(std::slice::from_ref(&t), &d, &hp, Some(&truth), &DiagnoseOptions::default()).unwrap();
        let two = diagnose(&[t.clone(), t.clone()], &d, &hp, Some(&truth), &DiagnoseOptions::default()).unwrap();
        assert_eq!(one.pip, two.pip);
        assert_eq!(one.best_model, two.best_model);
        assert_eq!(one.chains[0].h_max, t.hitting_iteration(&one.best_model));
        assert!(one.acceptance_rate > 0.0 && one.acceptance_rate <= 1.0);
        assert!(one.n_local_modes >= 1);
        let short = run_chain(&d, &hp, &ProposalSpec::lit1(), &[], 1, 1).unwrap();
        let r = diagnose(&[short], &d, &hp, None, &DiagnoseOptions::default()).unwrap();
        assert!(matches!(r.chains[0].h_max, Some(0) | Some(1)));
    }

    #[test]
    fn quantiles() {
        assert_eq!(median(&[3, 1, 2]), Some(2.0));
        assert_eq!(median(&[4, 1, 2, 3]), Some(2.5));
        assert_eq!(quantile(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10], 0.95), Some(10.0));
        assert_eq!(median(&[]), None);
    }
}
