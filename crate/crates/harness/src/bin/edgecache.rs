use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use edgecache_core::baselines::ActionMask;
use edgecache_core::codec::{action_dim, correct_traced, quantize, RawAction};
use edgecache_core::oracle::{exact_value_iteration, OracleOptions};
use edgecache_core::{CacheState, SystemState};
use edgecache_harness::experiment::{run_experiment, Algorithm, ExperimentSpec, Sweep};
use edgecache_harness::metrics::{append_csv_file, write_csv};
use edgecache_harness::summary::summarize_files;
use edgecache_harness::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "edgecache", version, about = "Joint push, cache and compute experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults everywhere when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Algorithm tag(s), comma separated: ptdfc, dfc, dfnc, mru-lru, mfu-lfu, oracle.
    #[arg(long, value_delimiter = ',')]
    algo: Vec<Algorithm>,
    /// Replica seed(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Metrics CSV destination (appended to); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train or play each algorithm at the configured point.
    Train(Common),
    /// Run every algorithm across a cache-size or deadline grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `cache_bits=v1,v2,...` or `slot_seconds=v1,v2,...`.
        #[arg(long)]
        sweep: Option<Sweep>,
    },
    /// Across-seed table and ordering checks from metrics files.
    Summarize {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Show quantisation and each correction rule on one state/action.
    TraceCorrection {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for the random state and raw action.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Requested task (0-based); random when omitted.
        #[arg(long)]
        request: Option<usize>,
        /// Cached inputs as a 0/1 string, one character per task.
        #[arg(long)]
        inputs: Option<String>,
        /// Cached outputs as a 0/1 string.
        #[arg(long)]
        outputs: Option<String>,
        /// Raw action, comma separated values in [-1, 1].
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        raw: Option<Vec<f64>>,
    },
    /// Exact optimum by value iteration.
    Oracle {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the solution as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn run(common: Common, sweep: Option<Option<Sweep>>) -> Result<()> {
    let mut cfg = load(common.config.as_deref())?;
    if !common.algo.is_empty() {
        cfg.experiment.algorithms = common.algo;
    }
    if !common.seed.is_empty() {
        cfg.experiment.seeds = common.seed;
    }
    match sweep {
        // train runs at the configured point only
        None => cfg.experiment.sweep = None,
        Some(Some(s)) => cfg.experiment.sweep = Some(s),
        Some(None) if cfg.experiment.sweep.is_none() => bail!("sweep needs --sweep or an [experiment] sweep entry"),
        Some(None) => {}
    }
    let spec = ExperimentSpec::from_config(&cfg)?;
    let rows = run_experiment(&spec)?;
    match common.out {
        Some(path) => {
            append_csv_file(&path, &rows).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("{} rows appended to {}", rows.len(), path.display());
        }
        None => write_csv(std::io::stdout().lock(), &rows)?,
    }
    Ok(())
}

fn bits(text: &str, n: usize, what: &str) -> Result<Vec<bool>> {
    if text.len() != n || !text.chars().all(|c| c == '0' || c == '1') {
        bail!("{what} must be {n} characters of 0/1, got {text:?}");
    }
    Ok(text.chars().map(|c| c == '1').collect())
}

fn trace(
    config: Option<&Path>,
    seed: u64,
    request: Option<usize>,
    inputs: Option<String>,
    outputs: Option<String>,
    raw: Option<Vec<f64>>,
) -> Result<()> {
    let system = load(config)?.system.resolve()?;
    let f = system.num_tasks();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cache = match (inputs, outputs) {
        (None, None) => {
            let all = CacheState::enumerate(&system);
            all[rng.random_range(0..all.len())].clone()
        }
        (i, o) => CacheState {
            input_cached: i.map_or(Ok(vec![false; f]), |t| bits(&t, f, "--inputs"))?,
            output_cached: o.map_or(Ok(vec![false; f]), |t| bits(&t, f, "--outputs"))?,
        },
    };
    if !cache.fits(&system) {
        bail!("cache {cache} exceeds {} bits", system.cache_bits);
    }
    let request = request.unwrap_or_else(|| rng.random_range(0..f));
    if request >= f {
        bail!("request {request} out of range for {f} tasks");
    }
    let raw = raw.unwrap_or_else(|| (0..action_dim(f)).map(|_| rng.random_range(-1.0..=1.0)).collect());
    if raw.len() != action_dim(f) {
        bail!("raw action needs {} values, got {}", action_dim(f), raw.len());
    }
    let state = SystemState::new(request, cache);
    let raw = RawAction(raw);
    let q = quantize(&raw, &state, &system);
    let c = correct_traced(&state, &q, &raw, &system, ActionMask::FULL)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "state      request={} cache={}", state.request, state.cache)?;
    writeln!(out, "raw        {:?}", raw.0)?;
    writeln!(out, "quantized  {}", c.quantized)?;
    for step in &c.trace {
        writeln!(out, "{:<32} {}", step.rule.to_string(), step.action)?;
    }
    writeln!(out, "final      {}", c.action)?;
    Ok(())
}

fn oracle(config: Option<&Path>, out: Option<PathBuf>) -> Result<()> {
    let cfg = load(config)?;
    let system = cfg.system.resolve()?;
    let chain = cfg.chain.build(system.num_tasks())?;
    let sol = exact_value_iteration(&system, &chain, ActionMask::FULL, &OracleOptions::default())?;
    println!(
        "discounted cost {:.6e} from an empty cache ({} states, {} sweeps, residual {:.2e})",
        sol.discounted_cost,
        sol.states.len(),
        sol.sweeps,
        sol.residual
    );
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&sol)?;
        std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
    } else {
        for (s, a) in sol.states.iter().zip(&sol.policy) {
            println!("request={} cache={}  ->  {a}", s.request, s.cache);
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(common) => run(common, None),
        Command::Sweep { common, sweep } => run(common, Some(sweep)),
        Command::Summarize { files } => {
            print!("{}", summarize_files(&files)?.render());
            Ok(())
        }
        Command::TraceCorrection {
            config,
            seed,
            request,
            inputs,
            outputs,
            raw,
        } => trace(config.as_deref(), seed, request, inputs, outputs, raw),
        Command::Oracle { config, out } => oracle(config.as_deref(), out),
    }
}
