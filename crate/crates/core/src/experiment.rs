//! Replicated sampler comparisons on freshly generated data.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate, marginal_screen, ScreenRule, SyntheticSpec};
use crate::diagnostics::{ess_batch_means, median};
use crate::error::{Error, Result};
use crate::estimators::sample_t2;
use crate::posterior::{log_post_unnorm, Hyperparams};
use crate::proposals::{MoveType, ProposalSpec};
use crate::sampler::{chain_rng, initial_model, Chain, ChainOptions, InitMode};

const T2_STREAM: u64 = 0x7432;
const INIT_STREAM: u64 = 0x1417;

/// One sampler entry in a comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerRun {
    pub preset: String,
    pub iters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub data: SyntheticSpec,
    pub replicates: usize,
    pub samplers: Vec<SamplerRun>,
    pub kappa0: f64,
    pub kappa1: f64,
    #[serde(default)]
    pub g: Option<f64>,
    pub s0: usize,
    pub init: InitMode,
    #[serde(default)]
    pub screen_budget: Option<usize>,
    pub seed: u64,
}

/// Outcome of one sampler on one replicate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunOutcome {
    pub replicate: usize,
    /// Position of the sampler in the config.
    pub sampler: usize,
    pub preset: String,
    pub iters: usize,
    pub wall_secs: f64,
    pub acceptance_rate: f64,
    /// First iteration at the pooled best model of the replicate.
    pub h_max: Option<usize>,
    pub t_max: Option<f64>,
    pub ess_t2: Option<f64>,
    pub best_log_post: f64,
    pub final_size: usize,
}

/// Per-sampler summary across replicates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setting: String,
    pub preset: String,
    pub iters: usize,
    pub replicates: usize,
    pub mean_wall_secs: f64,
    pub successes: usize,
    /// `None` when the rank falls on a failed run.
    pub h_max_median: Option<f64>,
    pub h_max_q95: Option<f64>,
    pub t_max_median: Option<f64>,
    pub mean_acceptance: f64,
    pub mean_ess_t2: Option<f64>,
    pub mean_ess_t2_per_sec: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareResult {
    pub config: CompareConfig,
    pub runs: Vec<RunOutcome>,
    pub summary: Vec<SummaryRow>,
}

/// Seed of the data set used by replicate `r`.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    seed ^ (r as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl CompareConfig {
    pub fn setting(&self) -> String {
        let d = &self.data;
        format!(
            "n={} p={} design={} snr={} beta={}",
            d.n,
            d.p,
            serde_json::to_string(&d.design).unwrap_or_default(),
            d.snr,
            serde_json::to_string(&d.beta_mode).unwrap_or_default()
        )
        .replace('"', "")
    }

    fn hyperparams(&self) -> Result<Hyperparams> {
        let hp = Hyperparams::new(self.kappa0, self.kappa1, self.s0, self.data.p)?;
        match self.g {
            Some(g) => hp.with_g(g),
            None => Ok(hp),
        }
    }
}

struct Sampled {
    outcome: RunOutcome,
    hits: Vec<(usize, Arc<[usize]>, f64)>,
}

fn run_one(
    cfg: &CompareConfig,
    data: &crate::data::RegressionData,
    hp: &Hyperparams,
    spec: &ProposalSpec,
    sampler: &SamplerRun,
    init: &[usize],
    r: usize,
) -> Result<Sampled> {
    let opts = ChainOptions {
        chain_id: r as u64,
        lazy: false,
        rao_blackwell: false,
    };
    let mut t2_rng = chain_rng(cfg.seed ^ T2_STREAM, r as u64);
    let start = Instant::now();
    let mut chain = Chain::new(data, hp, spec, init, cfg.seed, &opts)?;
    let mut t2 = Vec::with_capacity(sampler.iters);
    let (mut active, mut accepted) = (0usize, 0usize);
    // First visit of every distinct model, for hitting times against the pooled best.
    let init_lp = log_post_unnorm(data, hp, init)?;
    let mut hits: Vec<(usize, Arc<[usize]>, f64)> = vec![(0, Arc::from(init.to_vec()), init_lp)];
    let mut seen = std::collections::HashSet::new();
    seen.insert(hits[0].1.clone());
    for _ in 0..sampler.iters {
        let rec = chain.step()?;
        if rec.mv != MoveType::Hold {
            active += 1;
            accepted += rec.acc as usize;
        }
        if rec.acc && seen.insert(rec.g.clone()) {
            hits.push((rec.it, rec.g.clone(), rec.lp));
        }
        t2.push(sample_t2(chain.state(), data, hp, &mut t2_rng));
    }
    let wall_secs = start.elapsed().as_secs_f64();
    let best_log_post = hits.iter().map(|h| h.2).fold(f64::NEG_INFINITY, f64::max);
    Ok(Sampled {
        outcome: RunOutcome {
            replicate: r,
            sampler: 0,
            preset: sampler.preset.clone(),
            iters: sampler.iters,
            wall_secs,
            acceptance_rate: if active == 0 { 0.0 } else { accepted as f64 / active as f64 },
            h_max: None,
            t_max: None,
            ess_t2: ess_batch_means(&t2).ok(),
            best_log_post,
            final_size: chain.state().size(),
        },
        hits,
    })
}

fn run_replicate(cfg: &CompareConfig, hp: &Hyperparams, r: usize) -> Result<Vec<RunOutcome>> {
    let spec = SyntheticSpec {
        seed: replicate_seed(cfg.seed, r),
        ..cfg.data.clone()
    };
    let (data, _) = generate(&spec)?;
    let mut rng = chain_rng(cfg.seed ^ INIT_STREAM, r as u64);
    let init = initial_model(&data, hp, &cfg.init, &mut rng)?;
    let screen = cfg.screen_budget.map(|b| marginal_screen(&data, ScreenRule::Budget(b)));
    let mut sampled = Vec::with_capacity(cfg.samplers.len());
    for (i, s) in cfg.samplers.iter().enumerate() {
        let mut spec = ProposalSpec::preset(&s.preset, data.p(), hp.s0)?;
        if let Some(set) = &screen {
            spec = spec.with_screening(set.clone());
        }
        let mut one = run_one(cfg, &data, hp, &spec, s, &init, r)?;
        one.outcome.sampler = i;
        sampled.push(one);
    }
    let best = sampled
        .iter()
        .flat_map(|s| s.hits.iter())
        .max_by(|a, b| a.2.total_cmp(&b.2).then_with(|| b.1.cmp(&a.1)))
        .map(|h| h.1.clone())
        .ok_or_else(|| Error::InvalidSpec("no samplers requested".into()))?;
    Ok(sampled
        .into_iter()
        .map(|s| {
            let mut o = s.outcome;
            o.h_max = s.hits.iter().find(|h| h.1[..] == best[..]).map(|h| h.0);
            o.t_max = o.h_max.map(|h| o.wall_secs * h as f64 / o.iters.max(1) as f64);
            o
        })
        .collect())
}

/// Failed runs rank above every success.
fn censored_quantile(values: &[Option<usize>], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    let mut ok: Vec<usize> = values.iter().flatten().copied().collect();
    ok.sort_unstable();
    ok.get(rank - 1).map(|&v| v as f64)
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn summarize(cfg: &CompareConfig, runs: &[RunOutcome]) -> Vec<SummaryRow> {
    cfg.samplers
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let rs: Vec<&RunOutcome> = runs.iter().filter(|o| o.sampler == i).collect();
            let h: Vec<Option<usize>> = rs.iter().map(|o| o.h_max).collect();
            let tmax: Vec<usize> = rs.iter().filter_map(|o| o.t_max).map(|t| (t * 1e6) as usize).collect();
            SummaryRow {
                setting: cfg.setting(),
                preset: s.preset.clone(),
                iters: s.iters,
                replicates: rs.len(),
                mean_wall_secs: mean(rs.iter().map(|o| o.wall_secs)).unwrap_or(0.0),
                successes: h.iter().flatten().count(),
                h_max_median: censored_quantile(&h, 0.5),
                h_max_q95: censored_quantile(&h, 0.95),
                t_max_median: median(&tmax).map(|t| t / 1e6),
                mean_acceptance: mean(rs.iter().map(|o| o.acceptance_rate)).unwrap_or(0.0),
                mean_ess_t2: mean(rs.iter().filter_map(|o| o.ess_t2)),
                mean_ess_t2_per_sec: mean(rs.iter().filter_map(|o| o.ess_t2.map(|e| e / o.wall_secs))),
            }
        })
        .collect()
}

/// Runs every sampler on every replicate; replicates run in parallel.
pub fn compare(cfg: &CompareConfig) -> Result<CompareResult> {
    if cfg.replicates == 0 || cfg.samplers.is_empty() {
        return Err(Error::InvalidSpec("need at least one replicate and one sampler".into()));
    }
    cfg.data.validate()?;
    let hp = cfg.hyperparams()?;
    for s in &cfg.samplers {
        ProposalSpec::preset(&s.preset, cfg.data.p, hp.s0)?;
    }
    let per_rep = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, &hp, r))
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<RunOutcome> = per_rep.into_iter().flatten().collect();
    let summary = summarize(cfg, &runs);
    Ok(CompareResult {
        config: cfg.clone(),
        runs,
        summary,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

/// Writes the summary table as CSV preceded by `#`-prefixed config lines.
pub fn write_summary_csv<W: Write>(mut w: W, result: &CompareResult) -> Result<()> {
    writeln!(w, "# config: {}", serde_json::to_string(&result.config)?)?;
    writeln!(
        w,
        "setting,preset,iters,replicates,mean_wall_secs,successes,h_max_median,h_max_q95,t_max_median,mean_acceptance,mean_ess_t2,mean_ess_t2_per_sec"
    )?;
    for r in &result.summary {
        writeln!(
            w,
            "\"{}\",{},{},{},{},{},{},{},{},{},{},{}",
            r.setting,
            r.preset,
            r.iters,
            r.replicates,
            r.mean_wall_secs,
            r.successes,
            opt(r.h_max_median),
            opt(r.h_max_q95),
            opt(r.t_max_median),
            r.mean_acceptance,
            opt(r.mean_ess_t2),
            opt(r.mean_ess_t2_per_sec)
        )?;
    }
    Ok(())
}

/// Per-run outcomes as CSV.
pub fn write_runs_csv<W: Write>(mut w: W, result: &CompareResult) -> Result<()> {
    writeln!(w, "# config: {}", serde_json::to_string(&result.config)?)?;
    writeln!(w, "replicate,sampler,preset,iters,wall_secs,acceptance_rate,h_max,t_max,ess_t2,best_log_post,final_size")?;
    for o in &result.runs {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            o.replicate,
            o.sampler,
            o.preset,
            o.iters,
            o.wall_secs,
            o.acceptance_rate,
            o.h_max.map_or_else(|| "NA".into(), |h| h.to_string()),
            opt(o.t_max),
            opt(o.ess_t2),
            o.best_log_post,
            o.final_size
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BetaMode, Design};

    fn small(samplers: Vec<SamplerRun>, replicates: usize) -> CompareConfig {
        CompareConfig {
            data: SyntheticSpec {
                n: 100,
                p: 40,
                design: Design::Independent,
                snr: 3.0,
                beta_mode: BetaMode::Fixed10,
                seed: 5,
            },
            replicates,
            samplers,
            kappa0: 2.0,
            kappa1: 1.5,
            g: None,
            s0: 20,
            init: InitMode::RandomSize { k: 5 },
            screen_budget: None,
            seed: 9,
        }
    }

    #[test]
    fn censored_quantiles() {
        assert_eq!(censored_quantile(&[Some(3), Some(1), None], 0.5), Some(3.0));
        assert_eq!(censored_quantile(&[Some(3), None, None], 0.5), None);
        assert_eq!(censored_quantile(&[Some(4)], 0.95), Some(4.0));
    }

    #[test]
    fn single_replicate_is_deterministic_and_valid() {
        let cfg = small(
            vec![SamplerRun {
                preset: "lit1".into(),
                iters: 200,
            }],
            1,
        );
        let a = compare(&cfg).unwrap();
        let b = compare(&cfg).unwrap();
        assert_eq!(a.summary.len(), 1);
        assert_eq!(a.runs[0].h_max, b.runs[0].h_max);
        assert_eq!(a.runs[0].best_log_post, b.runs[0].best_log_post);
        assert_eq!(a.summary[0].successes, 1);
        let mut out = Vec::new();
        write_summary_csv(&mut out, &a).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# config: "));
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn identical_kernels_give_identical_columns() {
        let cfg = small(
            vec![
                SamplerRun {
                    preset: "rw".into(),
                    iters: 300,
                },
                SamplerRun {
                    preset: "rw".into(),
                    iters: 300,
                },
            ],
            3,
        );
        let res = compare(&cfg).unwrap();
        let (a, b) = (&res.summary[0], &res.summary[1]);
        assert_eq!(a.successes, b.successes);
        assert_eq!(a.mean_acceptance, b.mean_acceptance);
    }
}
