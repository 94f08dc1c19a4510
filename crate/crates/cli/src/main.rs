mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use serde_json::json;

use informed_mh::data::{generate, load_csv, marginal_screen, save_x_csv, save_y_csv, BetaMode, Design, ScreenRule, SyntheticSpec};
use informed_mh::diagnostics::{diagnose, DiagnoseOptions};
use informed_mh::experiment::{compare, write_runs_csv, write_summary_csv, CompareConfig, SamplerRun};
use informed_mh::sampler::{chain_rng, initial_model, read_trace, run_chain_streaming, ChainOptions, InitMode};
use informed_mh::verify::{verify, Instance, VerifyOptions};
use informed_mh::Error;

use config::{parse_init, RunConfig};

const INIT_STREAM: u64 = 0x1417;

#[derive(Parser)]
#[command(name = "imh", version, about = "Informed Metropolis-Hastings for Bayesian variable selection")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "IMH_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic data set (X.csv, y.csv, truth.json).
    Generate(GenerateArgs),
    /// Run sampler chains and write traces.
    Run(RunArgs),
    /// Summarize one or more traces.
    Diagnose(DiagnoseArgs),
    /// Run the exact-chain checks on a small instance.
    Verify(VerifyArgs),
    /// Compare samplers over replicated synthetic data sets.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignArg {
    Independent,
    Ar1,
    Block,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long, value_enum, default_value = "independent")]
    design: DesignArg,
    #[arg(long)]
    block_d: Option<usize>,
    #[arg(long, default_value_t = 3.0)]
    snr: f64,
    /// Draw `--s-star` random coefficients with this standard deviation instead of the fixed ten.
    #[arg(long)]
    sigma_beta: Option<f64>,
    #[arg(long, default_value_t = 10)]
    s_star: usize,
}

impl DataArgs {
    fn spec(&self, n: usize, p: usize, seed: u64) -> Result<SyntheticSpec, Fail> {
        let design = match self.design {
            DesignArg::Independent => Design::Independent,
            DesignArg::Ar1 => Design::Ar1,
            DesignArg::Block => Design::Block {
                d: self.block_d.ok_or_else(|| Fail::Usage("--design block needs --block-d".into()))?,
            },
        };
        let beta_mode = match self.sigma_beta {
            Some(sigma_beta) => BetaMode::Random {
                s_star: self.s_star,
                sigma_beta,
            },
            None => BetaMode::Fixed10,
        };
        let spec = SyntheticSpec {
            n,
            p,
            design,
            snr: self.snr,
            beta_mode,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// RunConfig JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding X.csv and y.csv.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    y: Option<PathBuf>,
    #[arg(long)]
    standardize: bool,
    /// rw, srw, lit1, lit2, lb1, lb2 or theory-lit.
    #[arg(long)]
    preset: Option<String>,
    /// JSON file with an explicit proposal spec.
    #[arg(long, conflicts_with = "preset")]
    spec: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    /// random:K, stepwise or explicit:i,j,...
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    kappa0: Option<f64>,
    #[arg(long)]
    kappa1: Option<f64>,
    #[arg(long)]
    g: Option<f64>,
    #[arg(long)]
    s0: Option<usize>,
    #[arg(long)]
    screen_budget: Option<usize>,
    #[arg(long)]
    lazy: bool,
    #[arg(long)]
    no_rb: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long = "trace", required = true, num_args = 1..)]
    traces: Vec<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    y: Option<PathBuf>,
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    q: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    landscape_cap: usize,
    /// Report path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Covariates (default 8, or 10 with --example1).
    #[arg(long)]
    p: Option<usize>,
    /// Sample size (default 40, or 400 with --example1).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 3)]
    s0: usize,
    #[arg(long, default_value_t = 3.0)]
    kappa0: f64,
    #[arg(long, default_value_t = 1.0)]
    kappa1: f64,
    #[arg(long, value_enum, default_value = "independent")]
    design: DesignArg,
    #[arg(long)]
    block_d: Option<usize>,
    #[arg(long, default_value_t = 3.0)]
    snr: f64,
    #[arg(long, default_value_t = 2.0)]
    sigma_beta: f64,
    #[arg(long, default_value_t = 2)]
    s_star: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the two-signal fixture with correlation parameter `--nu`.
    #[arg(long)]
    example1: bool,
    #[arg(long, default_value_t = 1.0)]
    nu: f64,
    #[arg(long, default_value_t = 2.0)]
    c0: f64,
    #[arg(long, default_value_t = 4.0)]
    c1: f64,
    #[arg(long, default_value_t = 2000)]
    horizon: usize,
    #[arg(long, default_value_t = 20_000)]
    split_sims: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// CompareConfig JSON; when given, the data and sampler flags are ignored.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    /// Comma-separated preset:iters pairs.
    #[arg(long, default_value = "rw:100000,lit1:2000")]
    samplers: String,
    #[arg(long, default_value_t = 2.0)]
    kappa0: f64,
    #[arg(long, default_value_t = 1.5)]
    kappa1: f64,
    #[arg(long)]
    g: Option<f64>,
    #[arg(long)]
    s0: Option<usize>,
    #[arg(long, default_value = "random:10")]
    init: String,
    #[arg(long)]
    screen_budget: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum Fail {
    Usage(String),
    Data(String),
    Verify(String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidSpec(_)
            | Error::InitTooLarge { .. }
            | Error::QNotDividingP { .. }
            | Error::SpaceTooLarge { .. }
            | Error::Json(_) => Fail::Usage(msg),
            Error::PreconditionViolated { .. }
            | Error::BoundViolated { .. }
            | Error::Divergent { .. }
            | Error::DecompositionInfeasible { .. }
            | Error::Nonconvergent { .. } => Fail::Verify(msg),
            _ => Fail::Data(msg),
        }
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Fail::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Fail {
    fn from(e: serde_json::Error) -> Self {
        Fail::Data(e.to_string())
    }
}

impl Fail {
    fn code(&self) -> u8 {
        match self {
            Fail::Usage(_) => 1,
            Fail::Data(_) => 2,
            Fail::Verify(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Fail::Usage(m) | Fail::Data(m) | Fail::Verify(m) => m,
        }
    }
}

fn need<T>(v: Option<T>, flag: &str) -> Result<T, Fail> {
    v.ok_or_else(|| Fail::Usage(format!("missing {flag}")))
}

fn data_paths(dir: &Option<PathBuf>, x: &Option<PathBuf>, y: &Option<PathBuf>) -> (Option<PathBuf>, Option<PathBuf>) {
    let x = x.clone().or_else(|| dir.as_ref().map(|d| d.join("X.csv")));
    let y = y.clone().or_else(|| dir.as_ref().map(|d| d.join("y.csv")));
    (x, y)
}

fn create(path: &Path) -> Result<BufWriter<File>, Fail> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Fail::Data(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Fail> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn cmd_generate(a: &GenerateArgs) -> Result<(), Fail> {
    let spec = a.data.spec(need(a.data.n, "--n")?, need(a.data.p, "--p")?, a.seed)?;
    let (data, truth) = generate(&spec)?;
    fs::create_dir_all(&a.out)?;
    let header = format!("spec: {}", serde_json::to_string(&spec)?);
    save_x_csv(&a.out.join("X.csv"), &data, Some(&header))?;
    save_y_csv(&a.out.join("y.csv"), &data, Some(&header))?;
    write_json(&a.out.join("truth.json"), &truth)?;
    info!("wrote {} x {} data set to {}", spec.n, spec.p, a.out.display());
    Ok(())
}

fn resolve_run_config(a: &RunArgs) -> Result<RunConfig, Fail> {
    let (x, y) = data_paths(&a.data, &a.x, &a.y);
    let proposal = match (&a.preset, &a.spec) {
        (Some(p), _) => Some(json!(p)),
        (None, Some(path)) => Some(serde_json::from_str(&fs::read_to_string(path)?)?),
        (None, None) => None,
    };
    let init = a.init.as_deref().map(parse_init).transpose()?;
    let mut c = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig {
            x: need(x.clone(), "--x or --data")?,
            y: need(y.clone(), "--y or --data")?,
            standardize: false,
            kappa0: 2.0,
            kappa1: 1.5,
            g: None,
            s0: None,
            proposal: need(proposal.clone(), "--preset or --spec")?,
            screen_budget: None,
            iters: need(a.iters, "--iters")?,
            seed: 0,
            n_chains: 1,
            init: InitMode::Stepwise,
            lazy: false,
            rao_blackwell: true,
            out: need(a.out.clone(), "--out")?,
        },
    };
    c.x = x.unwrap_or(c.x);
    c.y = y.unwrap_or(c.y);
    c.standardize |= a.standardize;
    c.kappa0 = a.kappa0.unwrap_or(c.kappa0);
    c.kappa1 = a.kappa1.unwrap_or(c.kappa1);
    c.g = a.g.or(c.g);
    c.s0 = a.s0.or(c.s0);
    c.proposal = proposal.unwrap_or(c.proposal);
    c.screen_budget = a.screen_budget.or(c.screen_budget);
    c.iters = a.iters.unwrap_or(c.iters);
    c.seed = a.seed.unwrap_or(c.seed);
    c.n_chains = a.chains.unwrap_or(c.n_chains);
    c.init = init.unwrap_or(c.init);
    c.lazy |= a.lazy;
    c.rao_blackwell &= !a.no_rb;
    c.out = a.out.clone().unwrap_or(c.out);
    if c.n_chains == 0 {
        return Err(Fail::Usage("--chains must be positive".into()));
    }
    Ok(c)
}

fn cmd_run(a: &RunArgs) -> Result<(), Fail> {
    let mut cfg = resolve_run_config(a)?;
    let data = load_csv(&cfg.x, &cfg.y, cfg.standardize)?;
    let s0 = match cfg.s0 {
        Some(s) => s,
        None => {
            let s = data.p().min(data.n());
            warn!("--s0 not given; using min(p, n) = {s}");
            s
        }
    };
    cfg.s0 = Some(s0);
    let hp = cfg.hyperparams(s0, data.p())?;
    let mut spec = cfg.proposal(data.p(), s0)?;
    if let Some(b) = cfg.screen_budget {
        spec = spec.with_screening(marginal_screen(&data, ScreenRule::Budget(b)));
    }
    let inits = (0..cfg.n_chains)
        .map(|c| initial_model(&data, &hp, &cfg.init, &mut chain_rng(cfg.seed ^ INIT_STREAM, c as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("config.json"), &cfg)?;
    let source = serde_json::to_value(&cfg)?;
    let header = format!("# config: {}", serde_json::to_string(&cfg)?);
    inits
        .par_iter()
        .enumerate()
        .map(|(c, init)| -> Result<(), Fail> {
            let opts = ChainOptions {
                chain_id: c as u64,
                lazy: cfg.lazy,
                rao_blackwell: cfg.rao_blackwell,
            };
            let trace = create(&cfg.out.join(format!("chain_{c}.jsonl")))?;
            let rb = run_chain_streaming(&data, &hp, &spec, init, cfg.iters, cfg.seed, &opts, Some(source.clone()), trace)?;
            if let Some(rb) = rb {
                let mut w = create(&cfg.out.join(format!("rb_{c}.csv")))?;
                writeln!(w, "{header}")?;
                rb.write_csv(&mut w)?;
                w.flush()?;
            }
            Ok(())
        })
        .collect::<Result<Vec<()>, Fail>>()?;
    info!("wrote {} chain(s) of {} iterations to {}", cfg.n_chains, cfg.iters, cfg.out.display());
    Ok(())
}

fn cmd_diagnose(a: &DiagnoseArgs) -> Result<(), Fail> {
    let (x, y) = data_paths(&a.data, &a.x, &a.y);
    let data = load_csv(&need(x, "--x or --data")?, &need(y, "--y or --data")?, a.standardize)?;
    let traces = a.traces.iter().map(|p| read_trace(p)).collect::<Result<Vec<_>, _>>()?;
    let hp = traces[0].meta.hyperparams;
    if traces.iter().any(|t| t.meta.hyperparams != hp) {
        return Err(Fail::Data("traces were run with different hyperparameters".into()));
    }
    let truth = match &a.truth {
        Some(p) => Some(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => None,
    };
    let opts = DiagnoseOptions {
        q: a.q,
        seed: a.seed,
        landscape_cap: a.landscape_cap,
    };
    let report = diagnose(&traces, &data, &hp, truth.as_ref(), &opts)?;
    let out = json!({
        "meta": {
            "traces": a.traces,
            "hyperparams": hp,
            "options": opts,
            "sources": traces.iter().map(|t| t.meta.source.clone()).collect::<Vec<_>>(),
        },
        "report": report,
    });
    match &a.out {
        Some(p) => write_json(p, &out),
        None => {
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
    }
}

fn cmd_verify(a: &VerifyArgs) -> Result<(), Fail> {
    let instance = if a.example1 {
        Instance::Example1 {
            p: a.p.unwrap_or(10),
            nu: a.nu,
            n: a.n.unwrap_or(400),
            s0: a.s0,
        }
    } else {
        let data = DataArgs {
            n: None,
            p: None,
            design: a.design,
            block_d: a.block_d,
            snr: a.snr,
            sigma_beta: Some(a.sigma_beta),
            s_star: a.s_star,
        };
        Instance::Synthetic {
            spec: data.spec(a.n.unwrap_or(40), a.p.unwrap_or(8), a.seed)?,
            kappa0: a.kappa0,
            kappa1: a.kappa1,
            s0: a.s0,
        }
    };
    let opts = VerifyOptions {
        c0: a.c0,
        c1: a.c1,
        horizon: a.horizon,
        split_sims: a.split_sims,
        seed: a.seed,
        trend_nu: if a.example1 { a.nu } else { 1.0 },
    };
    let report = match verify(&instance, &opts) {
        Ok(r) => r,
        Err(e) => {
            println!("{}", serde_json::to_string_pretty(&json!({"instance": instance, "error": e.to_string()}))?);
            return Err(e.into());
        }
    };
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Fail::Verify(format!("failed checks: {}", failed.join(", "))))
    }
}

fn parse_samplers(s: &str) -> Result<Vec<SamplerRun>, Fail> {
    s.split(',')
        .map(|item| {
            let (preset, iters) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| Fail::Usage(format!("sampler {item:?} is not preset:iters")))?;
            Ok(SamplerRun {
                preset: preset.to_string(),
                iters: iters.parse().map_err(|_| Fail::Usage(format!("bad iteration count in {item:?}")))?,
            })
        })
        .collect()
}

fn cmd_compare(a: &CompareArgs) -> Result<(), Fail> {
    let cfg = match &a.config {
        Some(path) => serde_json::from_str::<CompareConfig>(&fs::read_to_string(path)?)
            .map_err(|e| Fail::Usage(format!("{}: {e}", path.display())))?,
        None => {
            let (n, p) = (need(a.data.n, "--n")?, need(a.data.p, "--p")?);
            let s0 = a.s0.unwrap_or_else(|| {
                warn!("--s0 not given; using min(p, n) = {}", p.min(n));
                p.min(n)
            });
            CompareConfig {
                data: a.data.spec(n, p, a.seed)?,
                replicates: a.replicates,
                samplers: parse_samplers(&a.samplers)?,
                kappa0: a.kappa0,
                kappa1: a.kappa1,
                g: a.g,
                s0,
                init: parse_init(&a.init)?,
                screen_budget: a.screen_budget,
                seed: a.seed,
            }
        }
    };
    let result = compare(&cfg)?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("config.json"), &cfg)?;
    let mut w = create(&a.out.join("summary.csv"))?;
    write_summary_csv(&mut w, &result)?;
    w.flush()?;
    let mut w = create(&a.out.join("runs.csv"))?;
    write_runs_csv(&mut w, &result)?;
    w.flush()?;
    for row in &result.summary {
        info!(
            "{}: {}/{} successes, H_max median {:?}, acceptance {:.3}",
            row.preset, row.successes, row.replicates, row.h_max_median, row.mean_acceptance
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let res = match &cli.cmd {
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Diagnose(a) => cmd_diagnose(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Compare(a) => cmd_compare(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
