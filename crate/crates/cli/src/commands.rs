use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use aeromine_core::journal;
use aeromine_core::oracle::brute_force_optimum;
use aeromine_core::{
    EvaluationRecord, NoObserver, OracleKind, Run, RunConfig, RunMode, RunResult, SyntheticOracle,
    Violation,
};
use aeromine_service::{serve_with, Registry, RunHandle, ServeError};

use crate::error::CliError;
use crate::{
    export as csv_export, summary, BaselineArgs, BruteforceArgs, CompareArgs, ExportArgs,
    Overrides, Result, RunArgs, ServeArgs,
};

/// Parses a TOML run config. Syntax errors and unknown keys are reported as
/// config violations.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        let reason = match line {
            Some(l) => format!("line {l}: {}", e.message().trim()),
            None => e.message().trim().to_string(),
        };
        CliError::Config(vec![Violation::new(path.display().to_string(), reason)])
    })
}

fn validated(mut config: RunConfig, common: &Overrides) -> Result<RunConfig> {
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(b) = common.budget {
        config.budget = b;
    }
    config.validate().map_err(CliError::Config)?;
    Ok(config)
}

fn journal_path(common: &Overrides) -> Result<PathBuf> {
    if let Some(j) = &common.journal {
        return Ok(j.clone());
    }
    std::fs::create_dir_all(&common.data_dir).map_err(|e| CliError::io(&common.data_dir, e))?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    Ok(common.data_dir.join(format!("{id}.jsonl")))
}

fn run_synthetic(config: RunConfig, mode: RunMode, common: &Overrides) -> Result<()> {
    let oracle = SyntheticOracle::new(&config.space, config.constants.clone())?;
    let path = journal_path(common)?;
    let mut run = Run::create(config.clone(), mode, &path, None)?;
    let result = run.run_to_end(&oracle, &mut NoObserver)?;
    print!("{}", summary::run(&path, &config, mode, &result));
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start async runtime: {e}")))
}

async fn wait_done(handle: Arc<RunHandle>) {
    while !handle.is_done() {
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
}

/// Hosts the measurement service until the run finishes or Ctrl-C. Other
/// journals in the data directory are resumed and served as well.
fn run_manual(config: RunConfig, common: &Overrides, bind: SocketAddr) -> Result<()> {
    if common.journal.is_some() {
        return Err(CliError::Runtime(
            "--journal cannot be used with the manual oracle; its journal is created in the data directory".into(),
        ));
    }
    std::fs::create_dir_all(&common.data_dir).map_err(|e| CliError::io(&common.data_dir, e))?;
    let registry = Arc::new(Registry::open(&common.data_dir)?);
    let (handle, _) = registry.start(config.clone(), RunMode::Surrogate, None)?;
    runtime()?.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|source| ServeError::Bind { addr: bind, source })?;
        let addr = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
        println!(
            "run {} is waiting for measurements at http://{addr}/api/v1/runs/{}",
            handle.run_id, handle.run_id
        );
        let done = wait_done(handle.clone());
        serve_with(listener, registry, async move {
            tokio::select! {
                _ = done => {}
                _ = tokio::signal::ctrl_c() => {}
            }
        })
        .await
        .map_err(|e| CliError::Serve(ServeError::Io(e)))
    })?;
    if let Some(e) = handle.error() {
        return Err(CliError::Runtime(e));
    }
    let result = RunResult::of(&handle.snapshot());
    print!("{}", summary::run(&handle.journal_path, &config, RunMode::Surrogate, &result));
    Ok(())
}

pub fn run(args: RunArgs) -> Result<()> {
    let mut config = load_config(&args.common.config)?;
    if let Some(o) = args.oracle {
        config.oracle = o.into();
    }
    let config = validated(config, &args.common)?;
    match config.oracle {
        OracleKind::Synthetic => run_synthetic(config, RunMode::Surrogate, &args.common),
        OracleKind::Manual => run_manual(config, &args.common, args.bind),
    }
}

pub fn baseline(args: BaselineArgs) -> Result<()> {
    let config = validated(load_config(&args.common.config)?, &args.common)?;
    if config.oracle == OracleKind::Manual {
        return Err(CliError::Config(vec![Violation::new(
            "oracle",
            "baseline runs use the synthetic oracle",
        )]));
    }
    run_synthetic(config, RunMode::Baseline, &args.common)
}

pub fn serve(args: ServeArgs) -> Result<()> {
    std::fs::create_dir_all(&args.data_dir).map_err(|e| CliError::io(&args.data_dir, e))?;
    println!("serving {} on http://{}/api/v1", args.data_dir.display(), args.bind);
    runtime()?.block_on(aeromine_service::serve(args.bind, &args.data_dir))?;
    Ok(())
}

pub fn bruteforce(args: BruteforceArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    config.validate().map_err(CliError::Config)?;
    let oracle = SyntheticOracle::new(&config.space, config.constants.clone())?;
    let best = brute_force_optimum(
        &oracle,
        &config.space,
        config.positions,
        &config.layout,
        &config.wind_speeds,
        args.resolution as usize,
        args.cap,
    )?;
    println!("resolution     {}", args.resolution);
    println!("grid points    {}", best.evaluated);
    println!("optimum        {}", best.fitness);
    print!("{}", summary::design(&config.space, &best.configuration));
    Ok(())
}

pub fn export(args: ExportArgs) -> Result<()> {
    let loaded = journal::load(&args.journal)?;
    let rows = csv_export::write_csv(&loaded, &args.out)?;
    println!("wrote {rows} rows to {}", args.out.display());
    Ok(())
}

struct Side {
    path: PathBuf,
    mode: RunMode,
    seed: u64,
    best_trace: Vec<f64>,
}

impl Side {
    fn load(path: &Path) -> Result<Self> {
        let loaded = journal::load(path)?;
        let mut best = f64::NEG_INFINITY;
        let best_trace = loaded
            .records()
            .map(|r: &EvaluationRecord| {
                best = best.max(r.fitness);
                best
            })
            .collect();
        Ok(Self {
            path: path.to_path_buf(),
            mode: loaded.header.mode,
            seed: loaded.header.seed,
            best_trace,
        })
    }

    fn best(&self) -> Option<f64> {
        self.best_trace.last().copied()
    }

    fn calls_to(&self, target: f64) -> Option<usize> {
        self.best_trace.iter().position(|&b| b >= target).map(|i| i + 1)
    }
}

fn show(v: Option<impl ToString>) -> String {
    v.map_or_else(|| "not reached".to_string(), |v| v.to_string())
}

pub fn compare(args: CompareArgs) -> Result<()> {
    if args.canonical {
        let a = journal::canonical_lines(&args.a)?;
        let b = journal::canonical_lines(&args.b)?;
        if let Some(i) = (0..a.len().max(b.len())).find(|&i| a.get(i) != b.get(i)) {
            return Err(CliError::JournalsDiffer { line: i + 1 });
        }
        println!("identical      {} lines (timestamps excluded)", a.len());
        return Ok(());
    }

    let a = Side::load(&args.a)?;
    let b = Side::load(&args.b)?;
    let target = match (args.target, a.best(), b.best()) {
        (Some(t), _, _) => t,
        (None, Some(x), Some(y)) => 0.95 * x.min(y),
        _ => return Err(CliError::Runtime("both journals need at least one record".into())),
    };
    let (ca, cb) = (a.calls_to(target), b.calls_to(target));
    for (name, s, calls) in [("a", &a, ca), ("b", &b, cb)] {
        println!("{name}              {}", s.path.display());
        println!("  mode         {}", s.mode.as_str());
        println!("  seed         {}", s.seed);
        println!("  oracle calls {}", s.best_trace.len());
        println!("  best         {}", show(s.best()));
        println!("  to target    {}", show(calls));
    }
    println!("target         {target}");
    match (ca, cb) {
        (Some(x), Some(y)) => println!("call ratio a/b {}", x as f64 / y as f64),
        _ => println!("call ratio a/b undefined"),
    }
    Ok(())
}
