use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use robustbench::harness::{
    fit_methods, overlap_curve, run_lambda_experiment, run_point_grid, run_size_experiment, write_lambda_outputs,
    write_overlap_csv, write_point_outputs, write_size_outputs, EstimatorSettings, ExperimentConfig, Manifest,
    PointGridConfig, SizeConfig,
};
use robustbench::metrics::fmt;
use robustbench::scenario::{lambda_grid, Scenario};
use robustbench::{Dataset, Error, Method, RngStream};
use serde::de::DeserializeOwned;

const DEFAULT_SEED: u64 = 20_130_601;

/// Very robust regression: fit five high-breakdown estimators and run the
/// contamination experiments.
#[derive(Parser, Debug)]
#[command(name = "robustbench", version, about)]
struct Cli {
    /// Worker threads (default: available parallelism). Results do not
    /// depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Lambda sweep of a contamination scenario.
    Simulate(SimulateArgs),
    /// Point contamination over an (x0, y0) grid.
    PointGrid(PointGridArgs),
    /// Size of the outlier tests on clean nested samples.
    Size(SizeArgs),
    /// Overlapping indices and Mahalanobis distance along a lambda grid.
    Overlap(OverlapArgs),
    /// Fit the estimators to a CSV dataset (`y,x1,..[,source]`).
    Fit(FitArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Root seed of every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Replicates per cell.
    #[arg(long)]
    reps: Option<usize>,
    /// Samplewise size of the outlier tests.
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated subset of FS,LTS,LTSR,S,MM.
    #[arg(long)]
    methods: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Largest tolerated fraction of failed replicates before exiting with
    /// status 3.
    #[arg(long, default_value_t = 0.005)]
    max_failure_rate: f64,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Lambda grid as `lo:hi:points` or a comma list.
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct PointGridArgs {
    /// Point-grid config (JSON); flags alone suffice when omitted.
    config: Option<PathBuf>,
    /// x0 values as `lo:hi:points` or a comma list.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    /// y0 values as `lo:hi:points` or a comma list.
    #[arg(long, allow_hyphen_values = true)]
    y0: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SizeArgs {
    /// Size config (JSON); flags alone suffice when omitted.
    config: Option<PathBuf>,
    /// Coefficients, intercept included.
    #[arg(long)]
    p: Option<usize>,
    /// Sample sizes as `lo..hi[:step]` (step 100 by default) or a comma list.
    #[arg(long)]
    n: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct OverlapArgs {
    /// Experiment or scenario config (JSON); `example1`, `example2` and
    /// `example3` name the built-in scenarios.
    config: String,
    /// Lambda grid as `lo:hi:points` or a comma list.
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<String>,
    /// Half-width of the strip around the true regression, in units of sigma.
    #[arg(long, default_value_t = 2.0)]
    strip: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Dataset CSV.
    csv: PathBuf,
    #[command(flatten)]
    common: Common,
}

/// Failure with the exit status it maps to.
struct Fail {
    code: u8,
    message: String,
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => 4,
            Error::Csv(c) if c.is_io_error() => 4,
            Error::EstimationFailure { .. } | Error::SingularDesign { .. } | Error::NumericSolver(_) => 3,
            _ => 2,
        };
        Fail {
            code,
            message: e.to_string(),
        }
    }
}

fn invalid(message: impl Into<String>) -> Fail {
    Fail {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Fail>;

fn read_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Fail {
        code: 4,
        message: format!("{}: {e}", path.display()),
    })?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn parse_f64(s: &str) -> CliResult<f64> {
    s.trim().parse().map_err(|_| invalid(format!("bad number {s:?}")))
}

/// `lo:hi:points` or `a,b,c`.
fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let grid = match parts.as_slice() {
        [lo, hi, pts] => {
            let pts: usize = pts.trim().parse().map_err(|_| invalid(format!("bad point count in {s:?}")))?;
            lambda_grid(parse_f64(lo)?, parse_f64(hi)?, pts)
        }
        [_] => s.split(',').filter(|t| !t.trim().is_empty()).map(parse_f64).collect::<CliResult<_>>()?,
        _ => return Err(invalid(format!("grid {s:?} is neither lo:hi:points nor a list"))),
    };
    if grid.is_empty() {
        return Err(invalid(format!("grid {s:?} is empty")));
    }
    Ok(grid)
}

/// `lo..hi[:step]` or `a,b,c`.
fn parse_sizes(s: &str) -> CliResult<Vec<usize>> {
    let int = |t: &str| t.trim().parse::<usize>().map_err(|_| invalid(format!("bad sample size {t:?}")));
    if let Some((lo, rest)) = s.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((h, st)) => (int(h)?, int(st)?),
            None => (int(rest)?, 100),
        };
        let lo = int(lo)?;
        if step == 0 || hi < lo {
            return Err(invalid(format!("bad range {s:?}")));
        }
        Ok((lo..=hi).step_by(step).collect())
    } else {
        s.split(',').map(int).collect()
    }
}

fn parse_methods(s: &str) -> CliResult<Vec<Method>> {
    let methods: Vec<Method> = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.parse::<Method>())
        .collect::<Result<_, _>>()?;
    if methods.is_empty() {
        return Err(invalid("no methods given"));
    }
    Ok(methods)
}

fn seed_or(c: &Common, configured: Option<u64>) -> u64 {
    let seed = c.seed.or(configured).unwrap_or(DEFAULT_SEED);
    eprintln!("seed: {seed}");
    seed
}

fn out_dir(c: &Common, configured: &Option<PathBuf>, default: &str) -> PathBuf {
    c.out.clone().or_else(|| configured.clone()).unwrap_or_else(|| PathBuf::from(default))
}

fn check_failures(m: &Manifest, limit: f64) -> CliResult<()> {
    eprintln!("{} of {} replicates failed", m.failures, m.attempted);
    if m.failure_rate > limit {
        return Err(Fail {
            code: 3,
            message: format!("failure rate {:.4} exceeds {limit}", m.failure_rate),
        });
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let mut cfg: ExperimentConfig = read_config(&a.config)?;
    let c = &a.common;
    if let Some(l) = &a.lambda {
        cfg.scenario.contamination.lambda_grid = parse_grid(l)?;
    }
    if let Some(r) = c.reps {
        cfg.replicates = r;
    }
    if let Some(al) = c.alpha {
        cfg.alpha = al;
    }
    if let Some(m) = &c.methods {
        cfg.methods = parse_methods(m)?;
    }
    cfg.seed = seed_or(c, Some(cfg.seed));
    let dir = out_dir(c, &cfg.output_dir, "out/simulate");
    cfg.output_dir = None;
    let res = run_lambda_experiment(&cfg)?;
    let m = write_lambda_outputs(&cfg, &res, &dir)?;
    println!("wrote {}", dir.display());
    check_failures(&m, c.max_failure_rate)
}

fn point_grid(a: PointGridArgs) -> CliResult<()> {
    let c = &a.common;
    let mut cfg = match &a.config {
        Some(p) => read_config::<PointGridConfig>(p)?,
        None => PointGridConfig {
            x0_grid: lambda_grid(-3.0, 3.0, 25),
            y0_grid: vec![-1.0, -0.5, 0.5, 1.0],
            n_base: 100,
            n_contam: 30,
            methods: Method::ROBUST.to_vec(),
            replicates: 50,
            alpha: 0.01,
            seed: DEFAULT_SEED,
            estimators: EstimatorSettings::default(),
            output_dir: None,
        },
    };
    if let Some(x) = &a.x0 {
        cfg.x0_grid = parse_grid(x)?;
    }
    if let Some(y) = &a.y0 {
        cfg.y0_grid = parse_grid(y)?;
    }
    if let Some(r) = c.reps {
        cfg.replicates = r;
    }
    if let Some(al) = c.alpha {
        cfg.alpha = al;
    }
    if let Some(m) = &c.methods {
        cfg.methods = parse_methods(m)?;
    }
    cfg.seed = seed_or(c, Some(cfg.seed));
    let dir = out_dir(c, &cfg.output_dir, "out/point-grid");
    cfg.output_dir = None;
    let res = run_point_grid(&cfg)?;
    let m = write_point_outputs(&cfg, &res, &dir)?;
    println!("wrote {}", dir.display());
    check_failures(&m, c.max_failure_rate)
}

fn size(a: SizeArgs) -> CliResult<()> {
    let c = &a.common;
    let mut cfg = match &a.config {
        Some(p) => read_config::<SizeConfig>(p)?,
        None => SizeConfig {
            p: 6,
            n_grid: (100..=1000).step_by(100).collect(),
            replicates: 2000,
            alpha: 0.01,
            methods: Method::ROBUST.to_vec(),
            seed: DEFAULT_SEED,
            estimators: EstimatorSettings::default(),
            output_dir: None,
        },
    };
    if let Some(p) = a.p {
        cfg.p = p;
    }
    if let Some(n) = &a.n {
        cfg.n_grid = parse_sizes(n)?;
    }
    if let Some(r) = c.reps {
        cfg.replicates = r;
    }
    if let Some(al) = c.alpha {
        cfg.alpha = al;
    }
    if let Some(m) = &c.methods {
        cfg.methods = parse_methods(m)?;
    }
    cfg.seed = seed_or(c, Some(cfg.seed));
    let dir = out_dir(c, &cfg.output_dir, "out/size");
    cfg.output_dir = None;
    let res = run_size_experiment(&cfg)?;
    let m = write_size_outputs(&cfg, &res, &dir)?;
    for s in &res.table.sizes {
        println!("n={:5} {:5} size={:.4} (se {:.4})", s.n, s.method.as_str(), s.estimate.size, s.estimate.se);
    }
    println!("wrote {}", dir.display());
    check_failures(&m, c.max_failure_rate)
}

fn overlap(a: OverlapArgs) -> CliResult<()> {
    let c = &a.common;
    let mut scenario = match a.config.as_str() {
        "example1" => Scenario::example1(),
        "example2" => Scenario::example2(),
        "example3" => Scenario::example3(),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| Fail {
                code: 4,
                message: format!("{path}: {e}"),
            })?;
            match serde_json::from_str::<ExperimentConfig>(&text) {
                Ok(cfg) => cfg.scenario,
                Err(_) => serde_json::from_str::<Scenario>(&text).map_err(|e| invalid(format!("{path}: {e}")))?,
            }
        }
    };
    if let Some(l) = &a.lambda {
        scenario.contamination.lambda_grid = parse_grid(l)?;
    }
    let seed = seed_or(c, None);
    let reps = c.reps.unwrap_or(100);
    let reports = overlap_curve(&scenario, reps, a.strip, seed)?;
    let dir = out_dir(c, &None, "out/overlap");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_overlap_csv(&reports, &dir.join("overlap.csv"))?;
    #[derive(serde::Serialize)]
    struct OverlapRun<'a> {
        scenario: &'a Scenario,
        replicates: usize,
        strip_multiplier: f64,
    }
    let run = OverlapRun {
        scenario: &scenario,
        replicates: reps,
        strip_multiplier: a.strip,
    };
    Manifest::new("overlap", seed, &run, reps * reports.len(), 0)?.write(&dir.join("manifest.json"))?;
    for r in &reports {
        println!(
            "lambda={:7.3} empirical={:.4} theoretical={:.4} mahal_sq={:.3}",
            r.lambda, r.empirical, r.theoretical, r.mahalanobis_sq
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn fit(a: FitArgs) -> CliResult<()> {
    let c = &a.common;
    let data = Dataset::read_csv(&a.csv)?;
    let (n, p) = (data.n(), data.p());
    if n <= p {
        return Err(invalid(format!("{} has {n} rows for {p} coefficients; need n > p", a.csv.display())));
    }
    let methods = match &c.methods {
        Some(m) => parse_methods(m)?,
        None => Method::ROBUST.to_vec(),
    };
    let alpha = c.alpha.unwrap_or(0.01);
    let seed = seed_or(c, None);
    let settings = EstimatorSettings::default();
    // fit one method at a time so a failure names its method
    let mut outcomes = Vec::new();
    for &m in &methods {
        let o = fit_methods(&data, &[m], alpha, &settings, RngStream::new(seed, 0))?;
        outcomes.extend(o);
    }
    for o in &outcomes {
        let coefs: Vec<String> = o.beta.iter().map(|b| format!("{b:.6}")).collect();
        println!(
            "{:5} beta=[{}] sigma={:.6} outliers={}",
            o.method.as_str(),
            coefs.join(", "),
            o.sigma,
            o.flags.iter().filter(|&&f| f).count()
        );
    }
    if let Some(dir) = &c.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("fit.csv");
        let mut text = String::from("row,y");
        for j in 1..p {
            write!(text, ",x{j}").unwrap();
        }
        text.push_str(",method,flag,residual\n");
        for o in &outcomes {
            let r = data.residual_vec(&o.beta);
            for i in 0..n {
                write!(text, "{i},{}", fmt(data.y()[i])).unwrap();
                for j in 1..p {
                    write!(text, ",{}", fmt(data.x()[(i, j)])).unwrap();
                }
                writeln!(text, ",{},{},{}", o.method, u8::from(o.flags[i]), fmt(r[i])).unwrap();
            }
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        #[derive(serde::Serialize)]
        struct FitRun<'a> {
            csv: &'a Path,
            methods: &'a [Method],
            alpha: f64,
        }
        let run = FitRun {
            csv: &a.csv,
            methods: &methods,
            alpha,
        };
        Manifest::new("fit", seed, &run, methods.len(), 0)?.write(&dir.join("manifest.json"))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::PointGrid(a) => point_grid(a),
        Command::Size(a) => size(a),
        Command::Overlap(a) => overlap(a),
        Command::Fit(a) => fit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
