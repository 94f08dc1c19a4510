//! Proposal kernels over single-flip and swap neighborhoods.
//!
//! A [`Proposal`] draws a candidate together with `log K(γ, γ')` and
//! `log K(γ', γ)`. The same code computes exact kernel probabilities, which the
//! oracle uses to assemble transition matrices.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::RegressionData;
use crate::error::{Error, Result};
use crate::posterior::{Hyperparams, ModelState};

/// Realized move type; `Hold` is the lazy-chain identity step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MoveType {
    #[serde(rename = "a")]
    Add,
    #[serde(rename = "d")]
    Delete,
    #[serde(rename = "s")]
    Swap,
    #[serde(rename = "z")]
    Hold,
}

impl MoveType {
    pub fn code(self) -> &'static str {
        match self {
            MoveType::Add => "a",
            MoveType::Delete => "d",
            MoveType::Swap => "s",
            MoveType::Hold => "z",
        }
    }
}

/// Move-type probabilities `(h_a, h_d, h_s)` as a function of the model size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum MoveProbs {
    /// `(1/2, 1/2, 0)` below `s0`, `(0, 1/2, 1/2)` at `s0`.
    Theory,
    /// `(0.4, 0.4, 0.2)`.
    Simulation,
    /// `(|adds| / 2p, |dels| / 2p, 1/2)`; leftover mass stays put.
    SymmetricRw,
    Fixed { add: f64, del: f64, swap: f64 },
}

impl MoveProbs {
    pub fn at(&self, size: usize, p: usize, s0: usize) -> [f64; 3] {
        match *self {
            MoveProbs::Theory => {
                if size < s0 {
                    [0.5, 0.5, 0.0]
                } else {
                    [0.0, 0.5, 0.5]
                }
            }
            MoveProbs::Simulation => [0.4, 0.4, 0.2],
            MoveProbs::SymmetricRw => {
                let adds = if size < s0 { p - size } else { 0 };
                let tp = 2.0 * p as f64;
                [adds as f64 / tp, size as f64 / tp, 0.5]
            }
            MoveProbs::Fixed { add, del, swap } => [add, del, swap],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Uniform weights.
    Rw,
    /// `B` clamped to `[p^ℓ, p^L]`.
    Thresholded,
    /// `f(B)` for a balancing function `f`, optionally clamped.
    Balanced,
}

/// Monotone function applied to the posterior ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Balancing {
    Identity,
    Sqrt,
    /// `f(b) = b^nu`.
    Power { nu: f64 },
}

impl Balancing {
    pub fn log_apply(&self, log_b: f64) -> f64 {
        match *self {
            Balancing::Identity => log_b,
            Balancing::Sqrt => 0.5 * log_b,
            Balancing::Power { nu } => nu * log_b,
        }
    }
}

/// Exponents of `p` bounding a weight; `None` means unbounded on that side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Self {
        let f = |v: f64| if v.is_finite() { Some(v) } else { None };
        Bounds {
            lower: f(lower),
            upper: f(upper),
        }
    }

    pub fn unbounded() -> Self {
        Bounds::default()
    }

    pub fn lower_exp(&self) -> f64 {
        self.lower.unwrap_or(f64::NEG_INFINITY)
    }

    pub fn upper_exp(&self) -> f64 {
        self.upper.unwrap_or(f64::INFINITY)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwapMode {
    /// Weighted over all `(j, k)` pairs.
    Exact,
    /// Informed addition followed by an informed deletion that may not undo it.
    Composite,
    Disabled,
}

/// Full description of a proposal kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalSpec {
    pub move_probs: MoveProbs,
    pub weight_mode: WeightMode,
    pub balancing: Balancing,
    pub add: Bounds,
    pub del: Bounds,
    pub swap: Bounds,
    /// Weight additions and deletions together with no type split.
    #[serde(default)]
    pub joint_neighborhood: bool,
    /// Additions outside this set get the floor weight `p^{ℓ_a}`.
    #[serde(default)]
    pub screening: Option<Vec<usize>>,
    pub swap_mode: SwapMode,
}

/// Names accepted by [`ProposalSpec::preset`].
pub const PRESETS: [&str; 7] = ["rw", "srw", "lit1", "lit2", "lb1", "lb2", "theory-lit"];

impl ProposalSpec {
    /// Uniform weights with simulation move probabilities and composite swaps.
    pub fn rw() -> Self {
        ProposalSpec {
            move_probs: MoveProbs::Simulation,
            weight_mode: WeightMode::Rw,
            balancing: Balancing::Identity,
            add: Bounds::unbounded(),
            del: Bounds::unbounded(),
            swap: Bounds::unbounded(),
            joint_neighborhood: false,
            screening: None,
            swap_mode: SwapMode::Composite,
        }
    }

    /// Symmetric random walk: every single flip and swap has the same proposal probability.
    pub fn srw() -> Self {
        ProposalSpec {
            move_probs: MoveProbs::SymmetricRw,
            swap_mode: SwapMode::Exact,
            ..Self::rw()
        }
    }

    pub fn lit(add: (f64, f64), del: (f64, f64)) -> Self {
        ProposalSpec {
            weight_mode: WeightMode::Thresholded,
            add: Bounds::new(add.0, add.1),
            del: Bounds::new(del.0, del.1),
            swap: Bounds::new(add.0, add.1),
            ..Self::rw()
        }
    }

    pub fn lit1() -> Self {
        Self::lit((-1.0, 1.0), (-1.0, 0.0))
    }

    pub fn lit2() -> Self {
        Self::lit((-2.0, 2.0), (-2.0, 1.0))
    }

    pub fn lb1() -> Self {
        ProposalSpec {
            weight_mode: WeightMode::Balanced,
            balancing: Balancing::Sqrt,
            ..Self::rw()
        }
    }

    pub fn lb2() -> Self {
        ProposalSpec {
            move_probs: MoveProbs::Fixed {
                add: 0.5,
                del: 0.5,
                swap: 0.0,
            },
            joint_neighborhood: true,
            swap_mode: SwapMode::Disabled,
            ..Self::lb1()
        }
    }

    /// Kernel with unclamped weights `B^nu` over additions and deletions jointly.
    pub fn naive_power(nu: f64) -> Self {
        ProposalSpec {
            balancing: Balancing::Power { nu },
            ..Self::lb2()
        }
    }

    /// Thresholded kernel with the exponents used by the mixing-time theory.
    pub fn theory_lit(c0: f64, c1: f64, p: usize, s0: usize) -> Self {
        let swap_lo = 1.0 + (s0 as f64).ln() / (p as f64).ln().max(f64::MIN_POSITIVE);
        ProposalSpec {
            move_probs: MoveProbs::Theory,
            weight_mode: WeightMode::Thresholded,
            balancing: Balancing::Identity,
            add: Bounds::new(f64::NEG_INFINITY, c1),
            del: Bounds::new(0.0, c0),
            swap: Bounds::new(swap_lo, c1),
            joint_neighborhood: false,
            screening: None,
            swap_mode: SwapMode::Exact,
        }
    }

    /// Preset by name; `theory-lit` uses `c0 = 2`, `c1 = 4`.
    pub fn preset(name: &str, p: usize, s0: usize) -> Result<Self> {
        Ok(match name {
            "rw" => Self::rw(),
            "srw" | "symmetric-rw" => Self::srw(),
            "lit1" => Self::lit1(),
            "lit2" => Self::lit2(),
            "lb1" => Self::lb1(),
            "lb2" => Self::lb2(),
            "theory-lit" => Self::theory_lit(2.0, 4.0, p, s0),
            other => return Err(Error::InvalidSpec(format!("unknown preset {other:?}"))),
        })
    }

    /// Parses either a preset name or a full object.
    pub fn from_json(value: &serde_json::Value, p: usize, s0: usize) -> Result<Self> {
        match value {
            serde_json::Value::String(name) => Self::preset(name, p, s0),
            other => Ok(serde_json::from_value(other.clone())?),
        }
    }

    pub fn with_screening(mut self, set: Vec<usize>) -> Self {
        self.screening = Some(set);
        self
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        for (name, b) in [("add", self.add), ("del", self.del), ("swap", self.swap)] {
            if b.lower_exp() > b.upper_exp() || b.lower_exp().is_nan() || b.upper_exp().is_nan() {
                return Err(Error::InvalidSpec(format!("{name} bounds have lower > upper")));
            }
        }
        if let MoveProbs::Fixed { add, del, swap } = self.move_probs {
            let ok = [add, del, swap].iter().all(|v| *v >= 0.0) && ((add + del + swap) - 1.0).abs() < 1e-12;
            if !ok {
                return Err(Error::InvalidSpec("move probabilities must be nonnegative and sum to 1".into()));
            }
        }
        if let Some(s) = &self.screening {
            if s.iter().any(|&j| j >= p) {
                return Err(Error::InvalidSpec("screening index out of range".into()));
            }
        }
        if let Balancing::Power { nu } = self.balancing {
            if !(nu > 0.0) {
                return Err(Error::InvalidSpec("balancing exponent must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Single-flip and swap neighborhoods of a model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhoods {
    pub adds: Vec<usize>,
    pub dels: Vec<usize>,
    pub swaps: Vec<(usize, usize)>,
}

/// Additions (empty at `s0`), deletions and `(added, removed)` swap pairs.
pub fn neighborhoods(gamma: &[usize], p: usize, s0: usize) -> Neighborhoods {
    let outside: Vec<usize> = (0..p).filter(|j| gamma.binary_search(j).is_err()).collect();
    let swaps = outside
        .iter()
        .flat_map(|&j| gamma.iter().map(move |&k| (j, k)))
        .collect();
    let adds = if gamma.len() < s0 { outside } else { Vec::new() };
    Neighborhoods {
        adds,
        dels: gamma.to_vec(),
        swaps,
    }
}

/// `clamp(log f(B), lower, upper)` with bounds already in natural-log units.
pub fn clamp_balanced_weight(log_b: f64, f: Balancing, lower: f64, upper: f64) -> f64 {
    let v = f.log_apply(log_b);
    if v.is_nan() {
        return lower;
    }
    v.max(lower).min(upper)
}

/// Sufficient condition for a clamped balanced move with ratio at least `b` to be
/// accepted with probability one: `f(1/b) <= f_low` and `b >= (f_high / f_low) max |N|`.
/// All arguments except `max_neighborhood` are natural logs.
pub fn acceptance_one_guaranteed(
    f: Balancing,
    log_f_low: f64,
    log_f_high: f64,
    log_b: f64,
    max_neighborhood: usize,
) -> bool {
    f.log_apply(-log_b) <= log_f_low && log_b >= log_f_high - log_f_low + (max_neighborhood as f64).ln()
}

pub(crate) fn log_sum_exp(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log weights over a list of items.
#[derive(Clone, Debug)]
pub struct WeightedSet {
    pub items: Vec<usize>,
    pub log_w: Vec<f64>,
    pub log_z: f64,
}

impl WeightedSet {
    fn new(items: Vec<usize>, log_w: Vec<f64>) -> Option<Self> {
        if items.is_empty() {
            return None;
        }
        let log_z = log_sum_exp(log_w.iter().copied());
        if log_z == f64::NEG_INFINITY {
            return None;
        }
        Some(WeightedSet { items, log_w, log_z })
    }

    /// Normalized log probability of `item`.
    pub fn log_prob(&self, item: usize) -> f64 {
        match self.items.iter().position(|&i| i == item) {
            Some(a) => self.log_w[a] - self.log_z,
            None => f64::NEG_INFINITY,
        }
    }

    /// Normalized log probability of `item` with `excluded` removed from the support.
    pub fn log_prob_excluding(&self, item: usize, excluded: usize) -> f64 {
        if item == excluded {
            return f64::NEG_INFINITY;
        }
        let z = log_sum_exp(
            self.items
                .iter()
                .zip(&self.log_w)
                .filter(|(i, _)| **i != excluded)
                .map(|(_, w)| *w),
        );
        self.log_prob(item) + self.log_z - z
    }

    /// Gumbel-max draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, excluded: Option<usize>) -> Option<usize> {
        let mut best = f64::NEG_INFINITY;
        let mut arg = None;
        for (i, &w) in self.items.iter().zip(&self.log_w) {
            let u: f64 = rng.random();
            if Some(*i) == excluded || w == f64::NEG_INFINITY {
                continue;
            }
            let g = w - (-(u.max(f64::MIN_POSITIVE)).ln()).ln();
            if g > best {
                best = g;
                arg = Some(*i);
            }
        }
        arg
    }
}

/// Outcome of one proposal draw.
#[derive(Debug)]
pub struct ProposalOutcome {
    /// `None` when the chosen move type had an empty neighborhood (or a singular
    /// intermediate); the step then stays put.
    pub candidate: Option<ModelState>,
    pub move_type: MoveType,
    pub log_fwd: f64,
    pub log_rev: f64,
    /// `log B(γ, γ')`.
    pub log_ratio: f64,
}

impl ProposalOutcome {
    fn stay(move_type: MoveType) -> Self {
        ProposalOutcome {
            candidate: None,
            move_type,
            log_fwd: f64::NEG_INFINITY,
            log_rev: f64::NEG_INFINITY,
            log_ratio: f64::NEG_INFINITY,
        }
    }

    /// Metropolis-Hastings log acceptance probability.
    pub fn log_alpha(&self) -> f64 {
        if self.candidate.is_none() || self.log_rev == f64::NEG_INFINITY || self.log_ratio == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        (self.log_ratio + self.log_rev - self.log_fwd).min(0.0)
    }
}

/// A validated [`ProposalSpec`] bound to a problem size.
#[derive(Clone, Debug)]
pub struct Proposal {
    spec: ProposalSpec,
    p: usize,
    s0: usize,
    log_p: f64,
    universe: Option<Arc<[usize]>>,
    in_screen: Option<Vec<bool>>,
}

fn uniform_outside<R: Rng + ?Sized>(rng: &mut R, gamma: &[usize], p: usize) -> usize {
    let free = p - gamma.len();
    if gamma.len() * 2 < p {
        loop {
            let j = rng.random_range(0..p);
            if gamma.binary_search(&j).is_err() {
                return j;
            }
        }
    }
    let mut r = rng.random_range(0..free);
    for j in 0..p {
        if gamma.binary_search(&j).is_err() {
            if r == 0 {
                return j;
            }
            r -= 1;
        }
    }
    unreachable!()
}

fn set_diff(from: &[usize], to: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let added = to.iter().copied().filter(|j| from.binary_search(j).is_err()).collect();
    let removed = from.iter().copied().filter(|j| to.binary_search(j).is_err()).collect();
    (added, removed)
}

impl Proposal {
    pub fn new(spec: ProposalSpec, p: usize, s0: usize) -> Result<Self> {
        spec.validate(p)?;
        let (universe, in_screen) = match &spec.screening {
            None => (None, None),
            Some(s) => {
                let mut s = s.clone();
                s.sort_unstable();
                s.dedup();
                let mut mask = vec![false; p];
                s.iter().for_each(|&j| mask[j] = true);
                (Some(Arc::from(s)), Some(mask))
            }
        };
        Ok(Proposal {
            spec,
            p,
            s0,
            log_p: (p as f64).ln(),
            universe,
            in_screen,
        })
    }

    pub fn spec(&self) -> &ProposalSpec {
        &self.spec
    }

    pub fn is_informed(&self) -> bool {
        self.spec.weight_mode != WeightMode::Rw
    }

    pub fn universe(&self) -> Option<&Arc<[usize]>> {
        self.universe.as_ref()
    }

    fn h(&self, size: usize) -> [f64; 3] {
        let h = self.spec.move_probs.at(size, self.p, self.s0);
        if self.spec.joint_neighborhood {
            [h[0] + h[1], 0.0, h[2]]
        } else {
            h
        }
    }

    fn weight(&self, b: Bounds, log_b: f64) -> f64 {
        match self.spec.weight_mode {
            WeightMode::Rw => 0.0,
            _ => clamp_balanced_weight(
                log_b,
                self.spec.balancing,
                b.lower_exp() * self.log_p,
                b.upper_exp() * self.log_p,
            ),
        }
    }

    fn add_floor(&self) -> f64 {
        self.spec.add.lower_exp() * self.log_p
    }

    /// Addition weights at `state`; `full` allows additions from size `s0`.
    pub fn add_set(&self, state: &mut ModelState, data: &RegressionData, hp: &Hyperparams, full: bool) -> Option<WeightedSet> {
        if !full && state.size() >= self.s0 {
            return None;
        }
        let items: Vec<usize> = (0..self.p).filter(|&j| !state.contains(j)).collect();
        if !self.is_informed() {
            let w = vec![0.0; items.len()];
            return WeightedSet::new(items, w);
        }
        let scan = state.add_scan(data, hp, self.universe.as_ref());
        let w = items
            .iter()
            .map(|&j| match &self.in_screen {
                Some(mask) if !mask[j] => self.add_floor(),
                _ => self.weight(self.spec.add, scan.log_b[j]),
            })
            .collect();
        WeightedSet::new(items, w)
    }

    /// Deletion weights at `state`.
    pub fn del_set(&self, state: &mut ModelState, data: &RegressionData, hp: &Hyperparams) -> Option<WeightedSet> {
        if state.size() == 0 {
            return None;
        }
        let items = state.gamma().to_vec();
        if !self.is_informed() {
            let w = vec![0.0; items.len()];
            return WeightedSet::new(items, w);
        }
        let scan = state.del_scan(data, hp);
        let w = scan.log_b.iter().map(|&b| self.weight(self.spec.del, b)).collect();
        WeightedSet::new(items, w)
    }

    /// Joint weights over additions and deletions.
    pub fn joint_set(&self, state: &mut ModelState, data: &RegressionData, hp: &Hyperparams) -> Option<WeightedSet> {
        let mut items = Vec::new();
        let mut w = Vec::new();
        if let Some(a) = self.add_set(state, data, hp, false) {
            items.extend(a.items);
            w.extend(a.log_w);
        }
        if let Some(d) = self.del_set(state, data, hp) {
            items.extend(d.items);
            w.extend(d.log_w);
        }
        WeightedSet::new(items, w)
    }

    /// Exact swap weights; items index pairs as `j * p + k`.
    pub fn swap_set(&self, state: &mut ModelState, data: &RegressionData, hp: &Hyperparams) -> Option<WeightedSet> {
        let m = state.size();
        if m == 0 || m == self.p {
            return None;
        }
        let mut items = Vec::with_capacity((self.p - m) * m);
        let mut w = Vec::with_capacity((self.p - m) * m);
        let informed = self.is_informed();
        for j in 0..self.p {
            if state.contains(j) {
                continue;
            }
            let mid = if informed {
                state.added(data, hp, j).ok().map(|mut t| {
                    let ds = t.del_scan(data, hp);
                    (t.log_post() - state.log_post(), ds)
                })
            } else {
                None
            };
            for &k in state.gamma() {
                items.push(j * self.p + k);
                if !informed {
                    w.push(0.0);
                    continue;
                }
                let log_b = match &mid {
                    Some((up, ds)) => up + ds.get(k).unwrap_or(f64::NEG_INFINITY),
                    None => match state.dropped(data, hp, k).and_then(|s| s.added(data, hp, j)) {
                        Ok(t) => t.log_post() - state.log_post(),
                        Err(_) => f64::NEG_INFINITY,
                    },
                };
                w.push(self.weight(self.spec.swap, log_b));
            }
        }
        WeightedSet::new(items, w)
    }

    /// `log K(γ, γ')` for any target model (sorted).
    pub fn log_kernel(&self, from: &mut ModelState, to: &[usize], data: &RegressionData, hp: &Hyperparams) -> f64 {
        let (added, removed) = set_diff(from.gamma(), to);
        let h = self.h(from.size());
        let ln = |x: f64| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY };
        match (added.len(), removed.len()) {
            (1, 0) | (0, 1) => {
                let is_add = added.len() == 1;
                let item = if is_add { added[0] } else { removed[0] };
                if self.spec.joint_neighborhood {
                    return match self.joint_set(from, data, hp) {
                        Some(s) => ln(h[0]) + s.log_prob(item),
                        None => f64::NEG_INFINITY,
                    };
                }
                let set = if is_add {
                    self.add_set(from, data, hp, false)
                } else {
                    self.del_set(from, data, hp)
                };
                let hh = if is_add { h[0] } else { h[1] };
                match set {
                    Some(s) => ln(hh) + s.log_prob(item),
                    None => f64::NEG_INFINITY,
                }
            }
            (1, 1) => {
                let (j, k) = (added[0], removed[0]);
                match self.spec.swap_mode {
                    SwapMode::Disabled => f64::NEG_INFINITY,
                    SwapMode::Exact => match self.swap_set(from, data, hp) {
                        Some(s) => ln(h[2]) + s.log_prob(j * self.p + k),
                        None => f64::NEG_INFINITY,
                    },
                    SwapMode::Composite => {
                        if h[2] == 0.0 {
                            return f64::NEG_INFINITY;
                        }
                        let mut mid = match from.added(data, hp, j) {
                            Ok(t) => t,
                            Err(_) => return f64::NEG_INFINITY,
                        };
                        ln(h[2]) + self.composite_path(from, &mut mid, j, k, data, hp)
                    }
                }
            }
            _ => f64::NEG_INFINITY,
        }
    }

    /// `log K_a(γ, γ ∪ {j}) + log K_d^{(-j)}(γ ∪ {j}, γ ∪ {j} \ {k})`.
    fn composite_path(
        &self,
        from: &mut ModelState,
        mid: &mut ModelState,
        j: usize,
        k: usize,
        data: &RegressionData,
        hp: &Hyperparams,
    ) -> f64 {
        let a = match self.add_set(from, data, hp, true) {
            Some(s) => s.log_prob(j),
            None => return f64::NEG_INFINITY,
        };
        let d = match self.del_set(mid, data, hp) {
            Some(s) => s.log_prob_excluding(k, j),
            None => return f64::NEG_INFINITY,
        };
        a + d
    }

    /// All `(γ', log K(γ, γ'))` with `γ' != γ` and positive probability.
    pub fn transitions(&self, state: &mut ModelState, data: &RegressionData, hp: &Hyperparams) -> Vec<(Vec<usize>, f64)> {
        let h = self.h(state.size());
        let ln = |x: f64| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY };
        let mut out = Vec::new();
        let with = |g: &[usize], j: usize| {
            let mut v = g.to_vec();
            let pos = v.binary_search(&j).unwrap_err();
            v.insert(pos, j);
            v
        };
        let without = |g: &[usize], k: usize| g.iter().copied().filter(|&c| c != k).collect::<Vec<_>>();
        let gamma = state.gamma().to_vec();
        let push_flips = |set: Option<WeightedSet>, hh: f64, out: &mut Vec<(Vec<usize>, f64)>| {
            if let Some(s) = set {
                for (&i, &w) in s.items.iter().zip(&s.log_w) {
                    let lp = ln(hh) + w - s.log_z;
                    if lp > f64::NEG_INFINITY {
                        let t = if gamma.binary_search(&i).is_ok() {
                            without(&gamma, i)
                        } else {
                            with(&gamma, i)
                        };
                        out.push((t, lp));
                    }
                }
            }
        };
        if self.spec.joint_neighborhood {
            push_flips(self.joint_set(state, data, hp), h[0], &mut out);
        } else {
            if h[0] > 0.0 {
                push_flips(self.add_set(state, data, hp, false), h[0], &mut out);
            }
            if h[1] > 0.0 {
                push_flips(self.del_set(state, data, hp), h[1], &mut out);
            }
        }
        if h[2] > 0.0 {
            match self.spec.swap_mode {
                SwapMode::Disabled => {}
                SwapMode::Exact => {
                    if let Some(s) = self.swap_set(state, data, hp) {
                        for (&i, &w) in s.items.iter().zip(&s.log_w) {
                            let (j, k) = (i / self.p, i % self.p);
                            let lp = h[2].ln() + w - s.log_z;
                            if lp > f64::NEG_INFINITY {
                                out.push((with(&without(&gamma, k), j), lp));
                            }
                        }
                    }
                }
                SwapMode::Composite => {
                    if let Some(a) = self.add_set(state, data, hp, true) {
                        for (&j, &wa) in a.items.iter().zip(&a.log_w) {
                            if wa == f64::NEG_INFINITY {
                                continue;
                            }
                            let mut mid = match state.added(data, hp, j) {
                                Ok(t) => t,
                                Err(_) => continue,
                            };
                            if let Some(d) = self.del_set(&mut mid, data, hp) {
                                for &k in &gamma {
                                    let lp = h[2].ln() + wa - a.log_z + d.log_prob_excluding(k, j);
                                    if lp > f64::NEG_INFINITY {
                                        out.push((with(&without(&gamma, k), j), lp));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Draws a candidate with forward and reverse proposal log probabilities.
    pub fn propose<R: Rng + ?Sized>(
        &self,
        state: &mut ModelState,
        data: &RegressionData,
        hp: &Hyperparams,
        rng: &mut R,
    ) -> Result<ProposalOutcome> {
        let h = self.h(state.size());
        let u: f64 = rng.random();
        let ln = |x: f64| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY };
        if u < h[0] + h[1] {
            let is_add = if self.spec.joint_neighborhood { None } else { Some(u < h[0]) };
            let hh = match is_add {
                None => h[0],
                Some(true) => h[0],
                Some(false) => h[1],
            };
            let mt_guess = if is_add == Some(false) { MoveType::Delete } else { MoveType::Add };
            let (item, log_fwd) = if !self.is_informed() && !self.spec.joint_neighborhood {
                if is_add == Some(true) {
                    if state.size() >= self.s0 || state.size() == self.p {
                        return Ok(ProposalOutcome::stay(MoveType::Add));
                    }
                    let j = uniform_outside(rng, state.gamma(), self.p);
                    (j, ln(hh) - ((self.p - state.size()) as f64).ln())
                } else {
                    if state.size() == 0 {
                        return Ok(ProposalOutcome::stay(MoveType::Delete));
                    }
                    let k = state.gamma()[rng.random_range(0..state.size())];
                    (k, ln(hh) - (state.size() as f64).ln())
                }
            } else {
                let set = match is_add {
                    None => self.joint_set(state, data, hp),
                    Some(true) => self.add_set(state, data, hp, false),
                    Some(false) => self.del_set(state, data, hp),
                };
                let set = match set {
                    Some(s) => s,
                    None => return Ok(ProposalOutcome::stay(mt_guess)),
                };
                let i = match set.sample(rng, None) {
                    Some(i) => i,
                    None => return Ok(ProposalOutcome::stay(mt_guess)),
                };
                (i, ln(hh) + set.log_prob(i))
            };
            let removing = state.contains(item);
            let move_type = if removing { MoveType::Delete } else { MoveType::Add };
            let cand = if removing {
                state.dropped(data, hp, item)
            } else {
                state.added(data, hp, item)
            };
            let mut cand = match cand {
                Ok(c) => c,
                Err(Error::CollinearColumn { .. }) => return Ok(ProposalOutcome::stay(move_type)),
                Err(e) => return Err(e),
            };
            let log_rev = self.log_kernel_fast(&mut cand, state.gamma(), data, hp);
            let log_ratio = cand.log_post() - state.log_post();
            return Ok(ProposalOutcome {
                candidate: Some(cand),
                move_type,
                log_fwd,
                log_rev,
                log_ratio,
            });
        }
        if u >= h[0] + h[1] + h[2] {
            let mt = if h[2] > 0.0 { MoveType::Swap } else { MoveType::Add };
            return Ok(ProposalOutcome::stay(mt));
        }
        match self.spec.swap_mode {
            SwapMode::Disabled => Ok(ProposalOutcome::stay(MoveType::Swap)),
            SwapMode::Exact => {
                let m = state.size();
                if m == 0 || m == self.p {
                    return Ok(ProposalOutcome::stay(MoveType::Swap));
                }
                let (j, k, log_fwd) = if !self.is_informed() {
                    let j = uniform_outside(rng, state.gamma(), self.p);
                    let k = state.gamma()[rng.random_range(0..m)];
                    (j, k, ln(h[2]) - (((self.p - m) * m) as f64).ln())
                } else {
                    let set = match self.swap_set(state, data, hp) {
                        Some(s) => s,
                        None => return Ok(ProposalOutcome::stay(MoveType::Swap)),
                    };
                    let i = match set.sample(rng, None) {
                        Some(i) => i,
                        None => return Ok(ProposalOutcome::stay(MoveType::Swap)),
                    };
                    (i / self.p, i % self.p, ln(h[2]) + set.log_prob(i))
                };
                let cand = state.added(data, hp, j).and_then(|t| t.dropped(data, hp, k));
                let mut cand = match cand {
                    Ok(c) => c,
                    Err(Error::CollinearColumn { .. }) => {
                        match state.dropped(data, hp, k).and_then(|t| t.added(data, hp, j)) {
                            Ok(c) => c,
                            Err(Error::CollinearColumn { .. }) => return Ok(ProposalOutcome::stay(MoveType::Swap)),
                            Err(e) => return Err(e),
                        }
                    }
                    Err(e) => return Err(e),
                };
                let log_rev = self.log_kernel_fast(&mut cand, state.gamma(), data, hp);
                let log_ratio = cand.log_post() - state.log_post();
                Ok(ProposalOutcome {
                    candidate: Some(cand),
                    move_type: MoveType::Swap,
                    log_fwd,
                    log_rev,
                    log_ratio,
                })
            }
            SwapMode::Composite => self.propose_composite(state, data, hp, rng, h[2]),
        }
    }

    /// Uniform-kernel shortcut for `log K(γ, γ')`; falls back to [`Self::log_kernel`].
    fn log_kernel_fast(&self, from: &mut ModelState, to: &[usize], data: &RegressionData, hp: &Hyperparams) -> f64 {
        if self.is_informed() || self.spec.joint_neighborhood {
            return self.log_kernel(from, to, data, hp);
        }
        let m = from.size();
        let h = self.h(m);
        let ln = |x: f64| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY };
        match (to.len() as i64) - (m as i64) {
            1 => {
                if m >= self.s0 {
                    f64::NEG_INFINITY
                } else {
                    ln(h[0]) - ((self.p - m) as f64).ln()
                }
            }
            -1 => ln(h[1]) - (m as f64).ln(),
            0 => match self.spec.swap_mode {
                SwapMode::Disabled => f64::NEG_INFINITY,
                SwapMode::Exact | SwapMode::Composite => ln(h[2]) - ((self.p - m) as f64).ln() - (m as f64).ln(),
            },
            _ => f64::NEG_INFINITY,
        }
    }

    fn propose_composite<R: Rng + ?Sized>(
        &self,
        state: &mut ModelState,
        data: &RegressionData,
        hp: &Hyperparams,
        rng: &mut R,
        hs: f64,
    ) -> Result<ProposalOutcome> {
        let m = state.size();
        if m == 0 || m == self.p {
            return Ok(ProposalOutcome::stay(MoveType::Swap));
        }
        let lh = hs.ln();
        if !self.is_informed() {
            let j = uniform_outside(rng, state.gamma(), self.p);
            let k = state.gamma()[rng.random_range(0..m)];
            let cand = state.added(data, hp, j).and_then(|t| t.dropped(data, hp, k));
            let cand = match cand {
                Ok(c) => c,
                Err(Error::CollinearColumn { .. }) => return Ok(ProposalOutcome::stay(MoveType::Swap)),
                Err(e) => return Err(e),
            };
            let lk = lh - ((self.p - m) as f64).ln() - (m as f64).ln();
            let log_ratio = cand.log_post() - state.log_post();
            return Ok(ProposalOutcome {
                candidate: Some(cand),
                move_type: MoveType::Swap,
                log_fwd: lk,
                log_rev: lk,
                log_ratio,
            });
        }
        let adds = match self.add_set(state, data, hp, true) {
            Some(s) => s,
            None => return Ok(ProposalOutcome::stay(MoveType::Swap)),
        };
        let j = match adds.sample(rng, None) {
            Some(j) => j,
            None => return Ok(ProposalOutcome::stay(MoveType::Swap)),
        };
        let mut mid = match state.added(data, hp, j) {
            Ok(t) => t,
            Err(Error::CollinearColumn { .. }) => return Ok(ProposalOutcome::stay(MoveType::Swap)),
            Err(e) => return Err(e),
        };
        let dels = match self.del_set(&mut mid, data, hp) {
            Some(s) => s,
            None => return Ok(ProposalOutcome::stay(MoveType::Swap)),
        };
        let k = match dels.sample(rng, Some(j)) {
            Some(k) => k,
            None => return Ok(ProposalOutcome::stay(MoveType::Swap)),
        };
        let log_fwd = lh + adds.log_prob(j) + dels.log_prob_excluding(k, j);
        let mut cand = mid.dropped(data, hp, k)?;
        let h_rev = self.h(cand.size())[2];
        let log_rev = if h_rev > 0.0 {
            let back = match self.add_set(&mut cand, data, hp, true) {
                Some(s) => s.log_prob(k),
                None => f64::NEG_INFINITY,
            };
            h_rev.ln() + back + dels.log_prob_excluding(j, k)
        } else {
            f64::NEG_INFINITY
        };
        let log_ratio = cand.log_post() - state.log_post();
        Ok(ProposalOutcome {
            candidate: Some(cand),
            move_type: MoveType::Swap,
            log_fwd,
            log_rev,
            log_ratio,
        })
    }
}
