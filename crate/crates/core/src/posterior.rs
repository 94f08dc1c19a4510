//! Marginal posterior over models and single-flip posterior ratios, in natural logs.
//!
//! `log π(γ) = -κ |γ| log p - (n/2) log(y^T y / g + rss_γ)` up to a constant.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::RegressionData;
use crate::error::{Error, Result};
use crate::linalg::{CrossFactor, ModelFit, Rotation, PIVOT_TOL};

/// Prior hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub kappa0: f64,
    pub kappa1: f64,
    pub g: f64,
    pub s0: usize,
}

impl Hyperparams {
    /// Uses the default link `g = p^{2 κ1} - 1`.
    pub fn new(kappa0: f64, kappa1: f64, s0: usize, p: usize) -> Result<Self> {
        let g = (p as f64).powf(2.0 * kappa1) - 1.0;
        let hp = Hyperparams {
            kappa0,
            kappa1,
            g,
            s0,
        };
        hp.validate(p)?;
        Ok(hp)
    }

    /// Overrides `g`.
    pub fn with_g(mut self, g: f64) -> Result<Self> {
        if !(g > 0.0) || !g.is_finite() {
            return Err(Error::InvalidSpec(format!("g must be positive, got {g}")));
        }
        self.g = g;
        Ok(self)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.kappa0 > 0.0 && self.kappa1 > 0.0) {
            return Err(Error::InvalidSpec("kappa0 and kappa1 must be positive".into()));
        }
        if !(self.g > 0.0) || !self.g.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "g = p^(2 kappa1) - 1 = {} is not a positive finite number",
                self.g
            )));
        }
        if self.s0 < 1 || self.s0 > p {
            return Err(Error::InvalidSpec(format!("s0 = {} must lie in [1, {p}]", self.s0)));
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        self.kappa0 + self.kappa1
    }

    /// `g / (1 + g)`.
    pub fn shrink(&self) -> f64 {
        self.g / (1.0 + self.g)
    }
}

/// Precomputed constants for ratio arithmetic.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Scale {
    pub log_p: f64,
    pub kappa: f64,
    pub half_n: f64,
    pub base: f64,
}

impl Scale {
    pub fn new(data: &RegressionData, hp: &Hyperparams) -> Self {
        Scale {
            log_p: (data.p() as f64).ln(),
            kappa: hp.kappa(),
            half_n: data.n() as f64 / 2.0,
            base: data.yty() / hp.g,
        }
    }

    pub fn log_post(&self, size: usize, rss: f64) -> f64 {
        -self.kappa * size as f64 * self.log_p - self.half_n * (self.base + rss).ln()
    }

    /// `log B` between models whose sizes differ by `dsize` with the given residuals.
    pub fn log_ratio(&self, dsize: i64, rss_from: f64, rss_to: f64) -> f64 {
        -self.kappa * dsize as f64 * self.log_p
            - self.half_n * ((rss_to - rss_from) / (self.base + rss_from)).ln_1p()
    }
}

/// `log π(γ)` up to the normalizing constant; errors when `|γ| > s0`.
pub fn log_post_unnorm(data: &RegressionData, hp: &Hyperparams, gamma: &[usize]) -> Result<f64> {
    if gamma.len() > hp.s0 {
        return Err(Error::SizeExceeded {
            size: gamma.len(),
            s0: hp.s0,
        });
    }
    let fit = ModelFit::from_scratch(data, gamma)?;
    Ok(Scale::new(data, hp).log_post(gamma.len(), fit.rss()))
}

/// A single-flip or swap move.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Move {
    Add(usize),
    Drop(usize),
    Swap { add: usize, drop: usize },
}

/// `log B(γ, γ ∪ {j})` for every candidate `j`; `NaN` marks members and columns
/// outside the scanned universe, `-inf` marks collinear columns. The size
/// indicator is not applied.
#[derive(Clone, Debug)]
pub struct AddScan {
    pub log_b: Vec<f64>,
    /// Shrunken coefficient of `j` in the model `γ ∪ {j}`.
    pub beta: Vec<f64>,
}

impl AddScan {
    pub fn evaluated(&self, j: usize) -> bool {
        !self.log_b[j].is_nan()
    }
}

/// `log B(γ, γ \ {k})` for the members of `γ` in sorted order.
#[derive(Clone, Debug)]
pub struct DelScan {
    pub members: Vec<usize>,
    pub log_b: Vec<f64>,
    /// Shrunken coefficient of each member in `γ`.
    pub beta: Vec<f64>,
}

impl DelScan {
    pub fn get(&self, k: usize) -> Option<f64> {
        self.members.binary_search(&k).ok().map(|i| self.log_b[i])
    }
}

#[derive(Clone, Debug)]
enum CrossSlot {
    Empty,
    Ready(Arc<CrossFactor>),
    Extend {
        base: Box<CrossSlot>,
        j: usize,
        u: Arc<[f64]>,
        d: f64,
    },
    Drop {
        base: Box<CrossSlot>,
        position: usize,
        rots: Arc<[Rotation]>,
    },
}

impl CrossSlot {
    fn depth(&self) -> usize {
        match self {
            CrossSlot::Empty | CrossSlot::Ready(_) => 0,
            CrossSlot::Extend { base, .. } | CrossSlot::Drop { base, .. } => 1 + base.depth(),
        }
    }

    fn materialize(&self, data: &RegressionData) -> Option<Arc<CrossFactor>> {
        match self {
            CrossSlot::Empty => None,
            CrossSlot::Ready(w) => Some(w.clone()),
            CrossSlot::Extend { base, j, u, d } => {
                base.materialize(data).map(|w| Arc::new(w.extended(data, *j, u, *d)))
            }
            CrossSlot::Drop {
                base,
                position,
                rots,
            } => base.materialize(data).map(|w| Arc::new(w.dropped(*position, rots))),
        }
    }
}

const MAX_CROSS_DEPTH: usize = 3;

/// A model with its fit, log posterior and lazily filled neighborhood scans.
#[derive(Clone, Debug)]
pub struct ModelState {
    gamma: Vec<usize>,
    fit: ModelFit,
    log_post: f64,
    cross: CrossSlot,
    add: Option<Arc<AddScan>>,
    del: Option<Arc<DelScan>>,
}

impl ModelState {
    /// Fits `gamma` from scratch.
    pub fn new(data: &RegressionData, hp: &Hyperparams, gamma: &[usize]) -> Result<Self> {
        let mut g = gamma.to_vec();
        g.sort_unstable();
        g.dedup();
        if g.len() != gamma.len() {
            return Err(Error::IllegalMove("repeated index in model".into()));
        }
        if g.len() > hp.s0 {
            return Err(Error::SizeExceeded {
                size: g.len(),
                s0: hp.s0,
            });
        }
        let fit = ModelFit::from_scratch(data, &g)?;
        let log_post = Scale::new(data, hp).log_post(g.len(), fit.rss());
        Ok(ModelState {
            gamma: g,
            fit,
            log_post,
            cross: CrossSlot::Empty,
            add: None,
            del: None,
        })
    }

    pub fn empty(data: &RegressionData, hp: &Hyperparams) -> Self {
        ModelState::new(data, hp, &[]).expect("empty model is always valid")
    }

    pub fn gamma(&self) -> &[usize] {
        &self.gamma
    }

    pub fn fit(&self) -> &ModelFit {
        &self.fit
    }

    /// Unnormalized log posterior (size indicator not applied).
    pub fn log_post(&self) -> f64 {
        self.log_post
    }

    pub fn size(&self) -> usize {
        self.gamma.len()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.gamma.binary_search(&j).is_ok()
    }

    fn child(&self, gamma: Vec<usize>, fit: ModelFit, log_post: f64, cross: CrossSlot) -> Self {
        let cross = if cross.depth() > MAX_CROSS_DEPTH {
            CrossSlot::Empty
        } else {
            cross
        };
        ModelState {
            gamma,
            fit,
            log_post,
            cross,
            add: None,
            del: None,
        }
    }

    /// `γ ∪ {j}`; the size bound is not checked so composite intermediates can be formed.
    pub fn added(&self, data: &RegressionData, hp: &Hyperparams, j: usize) -> Result<ModelState> {
        let (fit, u, d) = self.fit.extend_parts(data, j)?;
        let pos = self.gamma.binary_search(&j).unwrap_err();
        let mut gamma = self.gamma.clone();
        gamma.insert(pos, j);
        let sc = Scale::new(data, hp);
        let log_post = self.log_post + sc.log_ratio(1, self.fit.rss(), fit.rss());
        let cross = match &self.cross {
            CrossSlot::Empty => CrossSlot::Empty,
            base => CrossSlot::Extend {
                base: Box::new(base.clone()),
                j,
                u: u.into(),
                d,
            },
        };
        Ok(self.child(gamma, fit, log_post, cross))
    }

    /// `γ \ {k}`.
    pub fn dropped(&self, data: &RegressionData, hp: &Hyperparams, k: usize) -> Result<ModelState> {
        let position = self
            .fit
            .position(k)
            .ok_or_else(|| Error::IllegalMove(format!("{k} is not in the model")))?;
        let (fit, rots) = self.fit.drop_with_rotations(position);
        let gamma: Vec<usize> = self.gamma.iter().copied().filter(|&c| c != k).collect();
        let sc = Scale::new(data, hp);
        let log_post = self.log_post + sc.log_ratio(-1, self.fit.rss(), fit.rss());
        let cross = match &self.cross {
            CrossSlot::Empty => CrossSlot::Empty,
            base => CrossSlot::Drop {
                base: Box::new(base.clone()),
                position,
                rots: rots.into(),
            },
        };
        Ok(self.child(gamma, fit, log_post, cross))
    }

    /// Cached or freshly built `W` over the given universe.
    pub fn cross_factor(&mut self, data: &RegressionData, universe: Option<&Arc<[usize]>>) -> Arc<CrossFactor> {
        let same = |w: &CrossFactor| match (w.universe(), universe) {
            (None, None) => true,
            (Some(a), Some(b)) => Arc::ptr_eq(a, b) || a[..] == b[..],
            _ => false,
        };
        if let Some(w) = self.cross.materialize(data) {
            if same(&w) {
                self.cross = CrossSlot::Ready(w.clone());
                return w;
            }
        }
        let w = Arc::new(CrossFactor::from_fit(&self.fit, data, universe.cloned()));
        self.cross = CrossSlot::Ready(w.clone());
        w
    }

    /// Addition ratios over the universe (all covariates when `None`).
    pub fn add_scan(&mut self, data: &RegressionData, hp: &Hyperparams, universe: Option<&Arc<[usize]>>) -> Arc<AddScan> {
        if let Some(a) = &self.add {
            return a.clone();
        }
        let w = self.cross_factor(data, universe);
        let (sq, wz) = w.column_stats(self.fit.z());
        let p = data.p();
        let sc = Scale::new(data, hp);
        let shrink = hp.shrink();
        let rss = self.fit.rss();
        let mut log_b = vec![f64::NAN; p];
        let mut beta = vec![0.0; p];
        let mut eval = |a: usize, j: usize| {
            if self.gamma.binary_search(&j).is_ok() {
                return;
            }
            let norm2 = data.col_norms2()[j];
            let d2 = norm2 - sq[a];
            if !(d2 > PIVOT_TOL * norm2) {
                log_b[j] = f64::NEG_INFINITY;
                return;
            }
            let t = data.xty()[j] - wz[a];
            let rss_j = (rss - t * t / d2).max(0.0);
            log_b[j] = sc.log_ratio(1, rss, rss_j);
            beta[j] = shrink * t / d2;
        };
        match universe {
            None => (0..p).for_each(|j| eval(j, j)),
            Some(u) => u.iter().enumerate().for_each(|(a, &j)| eval(a, j)),
        }
        let scan = Arc::new(AddScan { log_b, beta });
        self.add = Some(scan.clone());
        scan
    }

    /// Deletion ratios for every member.
    pub fn del_scan(&mut self, data: &RegressionData, hp: &Hyperparams) -> Arc<DelScan> {
        if let Some(d) = &self.del {
            return d.clone();
        }
        let sc = Scale::new(data, hp);
        let shrink = hp.shrink();
        let rss = self.fit.rss();
        let drops = self.fit.drop_rss_all();
        let ols = self.fit.ols();
        let m = self.size();
        let mut log_b = vec![0.0; m];
        let mut beta = vec![0.0; m];
        for (pos, &c) in self.fit.columns().iter().enumerate() {
            let i = self.gamma.binary_search(&c).unwrap();
            log_b[i] = sc.log_ratio(-1, rss, drops[pos]);
            beta[i] = shrink * ols[pos];
        }
        let scan = Arc::new(DelScan {
            members: self.gamma.clone(),
            log_b,
            beta,
        });
        self.del = Some(scan.clone());
        scan
    }

    /// Recomputes the fit from scratch, keeping the model.
    pub fn refit(&mut self, data: &RegressionData, hp: &Hyperparams) -> Result<()> {
        let fresh = ModelState::new(data, hp, &self.gamma.clone())?;
        *self = fresh;
        Ok(())
    }
}

/// `log B(γ, γ')` for a legal move, computed incrementally from the state's fit.
pub fn log_ratio_move(state: &ModelState, data: &RegressionData, hp: &Hyperparams, mv: Move) -> Result<f64> {
    let sc = Scale::new(data, hp);
    let rss = state.fit().rss();
    match mv {
        Move::Add(j) => {
            if j >= data.p() || state.contains(j) || state.size() >= hp.s0 {
                return Err(Error::IllegalMove(format!("add {j}")));
            }
            match state.fit().extend(data, j) {
                Ok(f) => Ok(sc.log_ratio(1, rss, f.rss())),
                Err(Error::CollinearColumn { .. }) => Ok(f64::NEG_INFINITY),
                Err(e) => Err(e),
            }
        }
        Move::Drop(k) => {
            let pos = state
                .fit()
                .position(k)
                .ok_or_else(|| Error::IllegalMove(format!("drop {k}")))?;
            Ok(sc.log_ratio(-1, rss, state.fit().drop_position(pos).rss()))
        }
        Move::Swap { add, drop } => {
            if add >= data.p() || state.contains(add) || !state.contains(drop) {
                return Err(Error::IllegalMove(format!("swap +{add} -{drop}")));
            }
            match state.fit().extend(data, add) {
                Ok(f) => {
                    let pos = f.position(drop).unwrap();
                    Ok(sc.log_ratio(0, rss, f.drop_position(pos).rss()))
                }
                Err(Error::CollinearColumn { .. }) => Ok(f64::NEG_INFINITY),
                Err(e) => Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, BetaMode, Design, SyntheticSpec};

    fn instance(n: usize, p: usize, seed: u64) -> RegressionData {
        generate(&SyntheticSpec {
            n,
            p,
            design: Design::Independent,
            snr: 3.0,
            beta_mode: BetaMode::Fixed10,
            seed,
        })
        .unwrap()
        .0
    }

    /// Log posterior from an explicit projection matrix.
    fn dense_log_post(d: &RegressionData, hp: &Hyperparams, g: &[usize]) -> f64 {
        let n = d.n();
        let y = nalgebra::DVector::from_column_slice(d.y());
        let rss = if g.is_empty() {
            d.yty()
        } else {
            let x = nalgebra::DMatrix::from_fn(n, g.len(), |i, k| d.get(i, g[k]));
            let inv = (x.transpose() * &x).try_inverse().unwrap();
            let proj = &x * inv * x.transpose();
            let r = &y - proj * &y;
            r.dot(&r)
        };
        -hp.kappa() * g.len() as f64 * (d.p() as f64).ln() - n as f64 / 2.0 * (d.yty() / hp.g + rss).ln()
    }

    #[test]
    fn hyperparameter_link() {
        let hp = Hyperparams::new(2.0, 1.5, 10, 1000).unwrap();
        assert!((hp.g - (1e9 - 1.0)).abs() < 1e-3);
        assert_eq!(hp.kappa(), 3.5);
        assert_eq!(hp.with_g(100.0).unwrap().g, 100.0);
        assert!(Hyperparams::new(1.0, 1.0, 0, 5).is_err());
        assert!(Hyperparams::new(1.0, 1.0, 6, 5).is_err());
    }

    #[test]
    fn empty_model_value() {
        let d = instance(20, 6, 1);
        let hp = Hyperparams::new(1.0, 1.0, 6, 6).unwrap();
        let want = -(d.n() as f64) / 2.0 * ((1.0 + 1.0 / hp.g) * d.yty()).ln();
        assert!((log_post_unnorm(&d, &hp, &[]).unwrap() - want).abs() < 1e-12);
        assert!(matches!(
            log_post_unnorm(&d, &Hyperparams { s0: 1, ..hp }, &[0, 1]),
            Err(Error::SizeExceeded { .. })
        ));
    }

    #[test]
    fn all_subsets_match_projection_oracle() {
        let d = instance(20, 6, 2);
        let hp = Hyperparams::new(1.0, 0.5, 6, 6).unwrap();
        for mask in 0u32..64 {
            let g: Vec<usize> = (0..6).filter(|j| mask >> j & 1 == 1).collect();
            let a = log_post_unnorm(&d, &hp, &g).unwrap();
            let b = dense_log_post(&d, &hp, &g);
            assert!((a - b).abs() <= 1e-8 * b.abs(), "{g:?}: {a} vs {b}");
        }
    }

    #[test]
    fn single_flip_ratios_match_oracle_and_are_antisymmetric() {
        let d = instance(30, 8, 3);
        let hp = Hyperparams::new(1.0, 1.0, 8, 8).unwrap();
        let mut s = ModelState::new(&d, &hp, &[1, 4, 6]).unwrap();
        let base = dense_log_post(&d, &hp, s.gamma());
        let adds = s.add_scan(&d, &hp, None);
        let dels = s.del_scan(&d, &hp);
        for j in 0..8 {
            let mv = if s.contains(j) { Move::Drop(j) } else { Move::Add(j) };
            let r = log_ratio_move(&s, &d, &hp, mv).unwrap();
            let mut g = s.gamma().to_vec();
            if s.contains(j) {
                g.retain(|&c| c != j);
            } else {
                g.push(j);
                g.sort();
            }
            let want = dense_log_post(&d, &hp, &g) - base;
            assert!((r - want).abs() < 1e-9, "{mv:?}");
            let scanned = if s.contains(j) { dels.get(j).unwrap() } else { adds.log_b[j] };
            assert!((scanned - want).abs() < 1e-9);
            let t = if s.contains(j) {
                s.dropped(&d, &hp, j).unwrap()
            } else {
                s.added(&d, &hp, j).unwrap()
            };
            let back = if s.contains(j) { Move::Add(j) } else { Move::Drop(j) };
            assert!((r + log_ratio_move(&t, &d, &hp, back).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn chain_rule_for_swaps() {
        let d = instance(30, 8, 4);
        let hp = Hyperparams::new(1.0, 1.0, 4, 8).unwrap();
        let s = ModelState::new(&d, &hp, &[0, 5]).unwrap();
        let a = log_ratio_move(&s, &d, &hp, Move::Swap { add: 3, drop: 0 }).unwrap();
        let t = s.added(&d, &hp, 3).unwrap();
        let b = log_ratio_move(&s, &d, &hp, Move::Add(3)).unwrap() + log_ratio_move(&t, &d, &hp, Move::Drop(0)).unwrap();
        assert!((a - b).abs() < 1e-9);
        assert!(log_ratio_move(&s, &d, &hp, Move::Add(0)).is_err());
    }

    #[test]
    fn ratios_invariant_when_prior_scale_tracks_y() {
        let d = instance(25, 6, 5);
        let hp = Hyperparams::new(1.0, 1.0, 6, 6).unwrap().with_g(50.0).unwrap();
        let c = 3.0;
        let y2: Vec<f64> = d.y().iter().map(|v| c * v).collect();
        let d2 = RegressionData::from_columns(d.n(), d.p(), d.x_col_major().to_vec(), y2).unwrap();
        let hp2 = hp.with_g(hp.g).unwrap();
        let s = ModelState::new(&d, &hp, &[1, 2]).unwrap();
        let s2 = ModelState::new(&d2, &hp2, &[1, 2]).unwrap();
        for mv in [Move::Add(4), Move::Drop(2), Move::Swap { add: 0, drop: 1 }] {
            let a = log_ratio_move(&s, &d, &hp, mv).unwrap();
            let b = log_ratio_move(&s2, &d2, &hp2, mv).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
        let shift = s2.log_post() - s.log_post();
        let e = ModelState::empty(&d, &hp);
        let e2 = ModelState::empty(&d2, &hp2);
        assert!((shift - (e2.log_post() - e.log_post())).abs() < 1e-9);
    }

    #[test]
    fn incremental_states_track_scratch() {
        let d = instance(40, 12, 6);
        let hp = Hyperparams::new(1.0, 1.0, 6, 12).unwrap();
        let mut s = ModelState::new(&d, &hp, &[2]).unwrap();
        s.add_scan(&d, &hp, None);
        let mut t = s.added(&d, &hp, 7).unwrap().added(&d, &hp, 9).unwrap().dropped(&d, &hp, 2).unwrap();
        let fresh = ModelState::new(&d, &hp, &[7, 9]).unwrap();
        assert!((t.log_post() - fresh.log_post()).abs() < 1e-9);
        let a = t.add_scan(&d, &hp, None);
        let mut f2 = fresh.clone();
        let b = f2.add_scan(&d, &hp, None);
        for j in 0..12 {
            if a.evaluated(j) {
                assert!((a.log_b[j] - b.log_b[j]).abs() < 1e-9);
            } else {
                assert!(!b.evaluated(j));
            }
        }
    }
}
