//! Metropolis-Hastings chains over models, with traces streamed as JSON lines.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::RegressionData;
use crate::error::{Error, Result};
use crate::estimators::RbEstimate;
use crate::posterior::{log_post_unnorm, Hyperparams, ModelState};
use crate::proposals::{MoveType, Proposal, ProposalSpec};

/// Per-chain generator: ChaCha8 seeded from `seed`, stream `chain_id`.
pub fn chain_rng(seed: u64, chain_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain_id);
    rng
}

fn ser_la<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn de_la<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
}

/// One iteration; `la = null` in JSON encodes a zero acceptance probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub it: usize,
    pub g: Arc<[usize]>,
    pub lp: f64,
    pub mv: MoveType,
    pub acc: bool,
    #[serde(serialize_with = "ser_la", deserialize_with = "de_la")]
    pub la: f64,
}

/// Outcome of one kernel application.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub move_type: MoveType,
    pub accepted: bool,
    pub log_alpha: f64,
}

/// A Markov kernel acting on model states in place.
pub trait Kernel: Send + Sync {
    fn step(&self, state: &mut ModelState, data: &RegressionData, hp: &Hyperparams, rng: &mut ChaCha8Rng) -> Result<Step>;

    fn proposal(&self) -> Option<&Proposal> {
        None
    }
}

/// Metropolis-Hastings with a given proposal.
#[derive(Clone, Debug)]
pub struct MhKernel {
    proposal: Proposal,
}

impl MhKernel {
    pub fn new(proposal: Proposal) -> Self {
        MhKernel { proposal }
    }
}

/// Draws a proposal and applies the acceptance rule in the log domain.
pub fn mh_step(
    state: &mut ModelState,
    data: &RegressionData,
    hp: &Hyperparams,
    proposal: &Proposal,
    rng: &mut ChaCha8Rng,
) -> Result<Step> {
    let out = match proposal.propose(state, data, hp, rng) {
        Ok(o) => o,
        Err(Error::EmptyNeighborhood) => {
            return Ok(Step {
                move_type: MoveType::Add,
                accepted: false,
                log_alpha: f64::NEG_INFINITY,
            })
        }
        Err(e) => return Err(e),
    };
    let log_alpha = out.log_alpha();
    let move_type = out.move_type;
    let accept = log_alpha >= 0.0 || (log_alpha > f64::NEG_INFINITY && rng.random::<f64>().ln() < log_alpha);
    if accept {
        if let Some(c) = out.candidate {
            *state = c;
        }
    }
    Ok(Step {
        move_type,
        accepted: accept,
        log_alpha,
    })
}

impl Kernel for MhKernel {
    fn step(&self, state: &mut ModelState, data: &RegressionData, hp: &Hyperparams, rng: &mut ChaCha8Rng) -> Result<Step> {
        mh_step(state, data, hp, &self.proposal, rng)
    }

    fn proposal(&self) -> Option<&Proposal> {
        Some(&self.proposal)
    }
}

/// `(P + I) / 2`: holds with probability one half.
#[derive(Clone, Debug)]
pub struct Lazy<K>(pub K);

pub fn lazy_wrap<K: Kernel>(kernel: K) -> Lazy<K> {
    Lazy(kernel)
}

impl<K: Kernel> Kernel for Lazy<K> {
    fn step(&self, state: &mut ModelState, data: &RegressionData, hp: &Hyperparams, rng: &mut ChaCha8Rng) -> Result<Step> {
        if rng.random::<bool>() {
            return Ok(Step {
                move_type: MoveType::Hold,
                accepted: false,
                log_alpha: 0.0,
            });
        }
        self.0.step(state, data, hp, rng)
    }

    fn proposal(&self) -> Option<&Proposal> {
        self.0.proposal()
    }
}

/// Settings recorded in every trace header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub seed: u64,
    pub chain: u64,
    pub iters: usize,
    pub lazy: bool,
    pub init: Vec<usize>,
    pub spec: ProposalSpec,
    pub hyperparams: Hyperparams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<serde_json::Value>,
}

#[derive(Clone, Debug, Default)]
pub struct ChainOptions {
    pub chain_id: u64,
    pub lazy: bool,
    pub rao_blackwell: bool,
}

/// Records of one run together with the configuration that produced it.
#[derive(Clone, Debug)]
pub struct ChainTrace {
    pub meta: TraceMeta,
    pub records: Vec<Record>,
    pub rb: Option<RbEstimate>,
}

impl ChainTrace {
    pub fn init(&self) -> &[usize] {
        &self.meta.init
    }

    /// Fraction of non-hold iterations whose proposal was accepted.
    pub fn acceptance_rate(&self) -> f64 {
        let active: Vec<&Record> = self.records.iter().filter(|r| r.mv != MoveType::Hold).collect();
        if active.is_empty() {
            return 0.0;
        }
        active.iter().filter(|r| r.acc).count() as f64 / active.len() as f64
    }

    /// `(log π, model)` of the best model visited, including the initial one.
    pub fn best(&self, init_lp: f64) -> (f64, Arc<[usize]>) {
        let mut best = (init_lp, Arc::from(self.meta.init.clone()));
        for r in &self.records {
            if r.lp > best.0 {
                best = (r.lp, r.g.clone());
            }
        }
        best
    }

    /// First iteration at which `target` is the current model; `0` for the initial model.
    pub fn hitting_iteration(&self, target: &[usize]) -> Option<usize> {
        if self.meta.init == target {
            return Some(0);
        }
        self.records.iter().find(|r| &r.g[..] == target).map(|r| r.it)
    }
}

/// A running chain.
pub struct Chain<'a> {
    data: &'a RegressionData,
    hp: Hyperparams,
    kernel: Box<dyn Kernel + 'a>,
    state: ModelState,
    current: Arc<[usize]>,
    rng: ChaCha8Rng,
    it: usize,
    rb: Option<RbEstimate>,
    universe: Option<Arc<[usize]>>,
}

fn init_state(data: &RegressionData, hp: &Hyperparams, init: &[usize]) -> Result<ModelState> {
    if init.len() > hp.s0 {
        return Err(Error::InitTooLarge {
            size: init.len(),
            s0: hp.s0,
        });
    }
    if let Some(&j) = init.iter().find(|&&j| j >= data.p()) {
        return Err(Error::InvalidSpec(format!("initial index {j} out of range")));
    }
    match ModelState::new(data, hp, init) {
        Ok(s) => Ok(s),
        Err(Error::RankDeficient { column }) => Err(Error::CollinearInit { column }),
        Err(e) => Err(e),
    }
}

impl<'a> Chain<'a> {
    pub fn new(
        data: &'a RegressionData,
        hp: &Hyperparams,
        spec: &ProposalSpec,
        init: &[usize],
        seed: u64,
        opts: &ChainOptions,
    ) -> Result<Self> {
        hp.validate(data.p())?;
        let proposal = Proposal::new(spec.clone(), data.p(), hp.s0)?;
        let universe = proposal.universe().cloned();
        let kernel: Box<dyn Kernel> = if opts.lazy {
            Box::new(Lazy(MhKernel::new(proposal)))
        } else {
            Box::new(MhKernel::new(proposal))
        };
        Chain::with_kernel(data, hp, kernel, init, seed, opts, universe)
    }

    pub fn with_kernel(
        data: &'a RegressionData,
        hp: &Hyperparams,
        kernel: Box<dyn Kernel + 'a>,
        init: &[usize],
        seed: u64,
        opts: &ChainOptions,
        universe: Option<Arc<[usize]>>,
    ) -> Result<Self> {
        let state = init_state(data, hp, init)?;
        Ok(Chain {
            data,
            hp: *hp,
            kernel,
            current: Arc::from(state.gamma().to_vec()),
            state,
            rng: chain_rng(seed, opts.chain_id),
            it: 0,
            rb: opts.rao_blackwell.then(|| RbEstimate::new(data.p())),
            universe,
        })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut ModelState {
        &mut self.state
    }

    pub fn rb(&self) -> Option<&RbEstimate> {
        self.rb.as_ref()
    }

    pub fn iteration(&self) -> usize {
        self.it
    }

    pub fn step(&mut self) -> Result<Record> {
        let s = self.kernel.step(&mut self.state, self.data, &self.hp, &mut self.rng)?;
        self.it += 1;
        if s.accepted {
            self.current = Arc::from(self.state.gamma().to_vec());
        }
        if cfg!(debug_assertions) && self.it % 100 == 0 {
            self.audit()?;
        }
        if let Some(rb) = &mut self.rb {
            rb.update(&mut self.state, self.data, &self.hp, self.universe.as_ref());
        }
        Ok(Record {
            it: self.it,
            g: self.current.clone(),
            lp: self.state.log_post(),
            mv: s.move_type,
            acc: s.accepted,
            la: s.log_alpha,
        })
    }

    fn audit(&self) -> Result<()> {
        let fresh = log_post_unnorm(self.data, &self.hp, self.state.gamma())?;
        let lp = self.state.log_post();
        let tol = 1e-8 * fresh.abs().max(1.0);
        assert!(
            (fresh - lp).abs() <= tol,
            "incremental log posterior drifted at iteration {}: {lp} vs {fresh}",
            self.it
        );
        Ok(())
    }

    pub fn into_rb(self) -> Option<RbEstimate> {
        self.rb
    }
}

/// Runs `iters` steps from `init` with default options.
pub fn run_chain(
    data: &RegressionData,
    hp: &Hyperparams,
    spec: &ProposalSpec,
    init: &[usize],
    iters: usize,
    seed: u64,
) -> Result<ChainTrace> {
    run_chain_with(data, hp, spec, init, iters, seed, &ChainOptions::default())
}

pub fn run_chain_with(
    data: &RegressionData,
    hp: &Hyperparams,
    spec: &ProposalSpec,
    init: &[usize],
    iters: usize,
    seed: u64,
    opts: &ChainOptions,
) -> Result<ChainTrace> {
    let mut chain = Chain::new(data, hp, spec, init, seed, opts)?;
    let meta = TraceMeta {
        seed,
        chain: opts.chain_id,
        iters,
        lazy: opts.lazy,
        init: chain.state().gamma().to_vec(),
        spec: spec.clone(),
        hyperparams: *hp,
        source: None,
    };
    let mut records = Vec::with_capacity(iters);
    for _ in 0..iters {
        records.push(chain.step()?);
    }
    Ok(ChainTrace {
        meta,
        records,
        rb: chain.into_rb(),
    })
}

/// Streams a run to `out` without holding the records in memory.
#[allow(clippy::too_many_arguments)]
pub fn run_chain_streaming<W: Write>(
    data: &RegressionData,
    hp: &Hyperparams,
    spec: &ProposalSpec,
    init: &[usize],
    iters: usize,
    seed: u64,
    opts: &ChainOptions,
    source: Option<serde_json::Value>,
    mut out: W,
) -> Result<Option<RbEstimate>> {
    let mut chain = Chain::new(data, hp, spec, init, seed, opts)?;
    let meta = TraceMeta {
        seed,
        chain: opts.chain_id,
        iters,
        lazy: opts.lazy,
        init: chain.state().gamma().to_vec(),
        spec: spec.clone(),
        hyperparams: *hp,
        source,
    };
    write_meta(&mut out, &meta)?;
    for _ in 0..iters {
        let r = chain.step()?;
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(chain.into_rb())
}

/// Independent replicates in parallel; chain `c` uses stream `c` of `seed`.
pub fn run_chains(
    data: &RegressionData,
    hp: &Hyperparams,
    spec: &ProposalSpec,
    inits: &[Vec<usize>],
    iters: usize,
    seed: u64,
    lazy: bool,
    rao_blackwell: bool,
) -> Result<Vec<ChainTrace>> {
    inits
        .par_iter()
        .enumerate()
        .map(|(c, init)| {
            let opts = ChainOptions {
                chain_id: c as u64,
                lazy,
                rao_blackwell,
            };
            run_chain_with(data, hp, spec, init, iters, seed, &opts)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    meta: TraceMeta,
}

fn write_meta<W: Write>(out: &mut W, meta: &TraceMeta) -> Result<()> {
    serde_json::to_writer(&mut *out, &MetaLine { meta: meta.clone() })?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_trace<W: Write>(mut out: W, trace: &ChainTrace) -> Result<()> {
    write_meta(&mut out, &trace.meta)?;
    for r in &trace.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSON-lines trace written by [`write_trace`] or [`run_chain_streaming`].
pub fn read_trace(path: &Path) -> Result<ChainTrace> {
    let f = std::fs::File::open(path)?;
    let mut lines = BufReader::new(f).lines();
    let bad = |row: usize, msg: String| Error::ParseError {
        path: path.display().to_string(),
        row,
        col: 1,
        msg,
    };
    let first = lines.next().ok_or_else(|| bad(1, "empty trace".into()))??;
    let meta: MetaLine = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
    let mut records = Vec::with_capacity(meta.meta.iters);
    let mut prev: Option<Arc<[usize]>> = None;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut r: Record = serde_json::from_str(&line).map_err(|e| bad(i + 2, e.to_string()))?;
        if let Some(p) = &prev {
            if p[..] == r.g[..] {
                r.g = p.clone();
            }
        }
        prev = Some(r.g.clone());
        records.push(r);
    }
    Ok(ChainTrace {
        meta: meta.meta,
        records,
        rb: None,
    })
}

/// How the initial model is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InitMode {
    /// Uniformly random subset of size `k` (redrawn if rank deficient).
    RandomSize { k: usize },
    /// Greedy forward-backward search on the posterior.
    Stepwise,
    Explicit { gamma: Vec<usize> },
}

pub fn initial_model<R: Rng + ?Sized>(data: &RegressionData, hp: &Hyperparams, mode: &InitMode, rng: &mut R) -> Result<Vec<usize>> {
    match mode {
        InitMode::Explicit { gamma } => {
            let mut g = gamma.clone();
            g.sort_unstable();
            Ok(g)
        }
        InitMode::RandomSize { k } => {
            if *k > hp.s0 || *k > data.p() {
                return Err(Error::InitTooLarge { size: *k, s0: hp.s0 });
            }
            for _ in 0..100 {
                let mut g = sample_indices(rng, data.p(), *k).into_vec();
                g.sort_unstable();
                if ModelState::new(data, hp, &g).is_ok() {
                    return Ok(g);
                }
            }
            Err(Error::InvalidSpec(format!("no full-rank model of size {k} found")))
        }
        InitMode::Stepwise => stepwise(data, hp),
    }
}

/// Forward-backward selection: repeatedly applies the best improving single flip.
pub fn stepwise(data: &RegressionData, hp: &Hyperparams) -> Result<Vec<usize>> {
    let mut s = ModelState::empty(data, hp);
    for _ in 0..(4 * hp.s0 + 10) {
        let mut best: Option<(f64, usize, bool)> = None;
        if s.size() < hp.s0 {
            let add = s.add_scan(data, hp, None);
            for (j, &b) in add.log_b.iter().enumerate() {
                if b > 0.0 && best.map_or(true, |(v, _, _)| b > v) {
                    best = Some((b, j, true));
                }
            }
        }
        let del = s.del_scan(data, hp);
        for (i, &b) in del.log_b.iter().enumerate() {
            if b > 0.0 && best.map_or(true, |(v, _, _)| b > v) {
                best = Some((b, del.members[i], false));
            }
        }
        match best {
            None => break,
            Some((_, j, true)) => s = s.added(data, hp, j)?,
            Some((_, k, false)) => s = s.dropped(data, hp, k)?,
        }
    }
    Ok(s.gamma().to_vec())
}
