mod io;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dtks::critval::{self, CovarianceMode, GridSpec, SimulationMethod};
use dtks::datagen::{self, LifetimeLaw, SimulationConfig};
use dtks::estimation::estimate;
use dtks::ksstat::ks_statistic;
use dtks::model::alpha;
use dtks::{Copula, Error, ModelParams, ObservationSet, Point, StudyWindow};

use report::*;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {0}: {1}")]
    Read(String, std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{stage}: {source}")]
    Core { stage: &'static str, source: Error },
    #[error("cannot write {0}: {1}")]
    Write(String, String),
}

impl CliError {
    /// Library errors raised while loading data.
    fn data(source: Error) -> Self {
        CliError::Core { stage: "input", source }
    }

    fn stage(stage: &'static str) -> impl Fn(Error) -> CliError {
        move |source| CliError::Core { stage, source }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Write(..) => 1,
            CliError::Usage(_) => 2,
            CliError::Read(..) | CliError::Parse { .. } | CliError::Invalid(_) => 3,
            CliError::Core { stage, source } => match source {
                Error::InvalidWindow(_) | Error::InvalidParams(_) => 2,
                Error::InvalidArgument(_) if *stage != "input" => 2,
                Error::InvalidArgument(_)
                | Error::OutsideRectangle { .. }
                | Error::OutsideSupport { .. }
                | Error::EmptySample => 3,
                Error::AlphaOutOfRange(_)
                | Error::NotPositiveDefinite(_)
                | Error::NoRoot(_)
                | Error::BoundaryHit(_)
                | Error::FactorizationFailed(_) => 4,
            },
        }
    }
}

#[derive(Parser)]
#[command(name = "dtks", version, about = "Goodness-of-fit test for doubly-truncated lifetimes under a copula model")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to an observation file.
    Estimate(EstimateArgs),
    /// Fit, compute the test statistic and compare it with simulated critical values.
    Test(TestArgs),
    /// Draw a truncated sample from the model.
    Simulate(SimulateArgs),
    /// Simulated critical values for given parameters, without data.
    Critval(CritvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CopulaArg {
    Product,
    Fgm,
}

impl From<CopulaArg> for Copula {
    fn from(c: CopulaArg) -> Self {
        match c {
            CopulaArg::Product => Copula::Product,
            CopulaArg::Fgm => Copula::Fgm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Cholesky,
    CellNoise,
}

impl From<MethodArg> for SimulationMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Cholesky => SimulationMethod::Cholesky,
            MethodArg::CellNoise => SimulationMethod::CellNoise,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    KnownBoth,
    EstTheta,
    KnownTheta,
    EstBoth,
}

impl From<ModeArg> for CovarianceMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::KnownBoth => CovarianceMode::KnownBoth,
            ModeArg::EstTheta => CovarianceMode::EstThetaKnownN,
            ModeArg::KnownTheta => CovarianceMode::KnownThetaEstN,
            ModeArg::EstBoth => CovarianceMode::EstBoth,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LifetimeArg {
    Exponential,
    Weibull2,
}

#[derive(Args)]
struct WindowArgs {
    #[arg(long, value_enum)]
    copula: CopulaArg,
    /// Length of the truncation-age range.
    #[arg(long = "G", value_name = "G")]
    g: f64,
    /// Length of the observation period.
    #[arg(long = "s", value_name = "S")]
    s: f64,
}

impl WindowArgs {
    fn window(&self) -> Result<StudyWindow, CliError> {
        StudyWindow::new(self.g, self.s).map_err(CliError::stage("arguments"))
    }
}

#[derive(Args)]
struct ParamArgs {
    /// Rate of the exponential lifetime.
    #[arg(long)]
    theta: f64,
    /// FGM dependence parameter.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    vartheta: f64,
}

impl ParamArgs {
    fn params(&self, copula: Copula) -> Result<ModelParams, CliError> {
        if copula == Copula::Product && self.vartheta != 0.0 {
            return Err(CliError::Usage("--vartheta applies to the fgm copula only".into()));
        }
        ModelParams::new(copula, self.theta, self.vartheta).map_err(CliError::stage("arguments"))
    }
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value_t = 0.25)]
    grid_step: f64,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.90, 0.95, 0.99])]
    levels: Vec<f64>,
    /// How the limiting process is simulated on the lattice.
    #[arg(long, value_enum, default_value = "cholesky")]
    method: MethodArg,
}

impl SimArgs {
    fn grid(&self) -> Result<GridSpec, CliError> {
        match self.method {
            MethodArg::Cholesky => GridSpec::new(self.grid_step),
            MethodArg::CellNoise => GridSpec::cell_noise(self.grid_step),
        }
        .map_err(CliError::stage("arguments"))
    }
}

#[derive(Args)]
struct EstimateArgs {
    /// CSV file with header `x,t`.
    input: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
    /// Skip rows outside the observable region instead of failing.
    #[arg(long)]
    drop_invalid: bool,
    /// Also write the result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    input: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long)]
    drop_invalid: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    params: ParamArgs,
    /// Size of the sample before truncation.
    #[arg(long)]
    latent_n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value = "exponential")]
    lifetime: LifetimeArg,
    /// Output CSV; metadata goes to `<out>.meta.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CritvalArgs {
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, value_enum, default_value = "est-both")]
    mode: ModeArg,
    #[command(flatten)]
    sim: SimArgs,
    /// Take the supremum over these points (`x,t`, repeatable) instead of the lattice.
    #[arg(long = "at", value_name = "X,T", value_parser = parse_point)]
    at: Vec<Point>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_point(s: &str) -> Result<Point, String> {
    let (x, t) = s.split_once(',').ok_or_else(|| format!("expected 'x,t', got '{s}'"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("'{v}': {e}"));
    Ok(Point::new(num(x)?, num(t)?))
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

fn print_params(params: &ParamsOut, se: Option<&[f64]>) {
    let se_at = |i: usize| se.and_then(|s| s.get(i)).map(|v| format!("  (se {v:.3e})")).unwrap_or_default();
    println!("theta        {:.6}{}", params.theta, se_at(0));
    if let Some(v) = params.vartheta {
        println!("vartheta     {v:.6}{}", se_at(1));
    }
}

fn check_size(obs: &ObservationSet) -> Result<(), CliError> {
    match obs.len() {
        0 => Err(CliError::data(Error::EmptySample)),
        1 => Err(CliError::Invalid("need at least two observations, found 1".into())),
        _ => Ok(()),
    }
}

fn cmd_estimate(a: &EstimateArgs) -> Result<(), CliError> {
    let w = a.window.window()?;
    let copula = a.window.copula.into();
    let loaded = io::read_observations(&a.input, &w, a.drop_invalid)?;
    let obs = &loaded.obs;
    check_size(obs)?;
    let est = estimate(obs, copula).map_err(CliError::stage("estimate"))?;
    let a_hat = alpha(&est.params, &w).map_err(CliError::stage("estimate"))?;
    let rep = EstimateReport {
        schema_version: SCHEMA_VERSION,
        copula,
        window: (&w).into(),
        params: (&est.params).into(),
        std_errors: est.std_errors.clone(),
        alpha: a_hat,
        m: est.m,
        dropped: loaded.dropped,
        latent_n: est.latent_n,
        iterations: est.iterations,
        score_norm: est.score_norm,
    };
    println!("copula       {copula}");
    println!("m            {}", rep.m);
    if rep.dropped > 0 {
        println!("dropped      {}", rep.dropped);
    }
    print_params(&rep.params, rep.std_errors.as_deref());
    println!("alpha        {:.6}", rep.alpha);
    println!("latent n     {:.1}", rep.latent_n);
    println!("iterations   {}", rep.iterations);
    if let Some(out) = &a.out {
        io::write_json(out, &rep)?;
    }
    Ok(())
}

fn cmd_test(a: &TestArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let w = a.window.window()?;
    let copula = a.window.copula.into();
    let grid = a.sim.grid()?;
    let mut timings = Timings::default();

    let t = Instant::now();
    let loaded = io::read_observations(&a.input, &w, a.drop_invalid)?;
    let obs: &ObservationSet = &loaded.obs;
    check_size(obs)?;
    timings.read_ms = ms(t);

    let t = Instant::now();
    let est = estimate(obs, copula).map_err(CliError::stage("estimate"))?;
    timings.estimate_ms = ms(t);

    let t = Instant::now();
    let stat = ks_statistic(obs, &est.params).map_err(CliError::stage("statistic"))?;
    timings.statistic_ms = ms(t);

    let t = Instant::now();
    let cv = critval::critical_value(&est.params, &w, &grid, CovarianceMode::EstBoth, &a.sim.levels, a.sim.reps, a.sim.seed)
        .map_err(CliError::stage("critical value"))?;
    timings.critical_value_ms = ms(t);
    timings.total_ms = ms(start);

    let levels = cv
        .quantiles
        .iter()
        .map(|q| LevelOut {
            level: q.level,
            critical_value: q.value,
            std_error: q.std_error,
            decision: critval::decide(stat.statistic, q.value),
        })
        .collect();
    let rep = TestReport {
        schema_version: SCHEMA_VERSION,
        copula,
        window: (&w).into(),
        params: (&est.params).into(),
        alpha: stat.alpha,
        m: stat.m,
        dropped: loaded.dropped,
        latent_n: est.latent_n,
        statistic: StatisticOut {
            delta: stat.delta.map(|d| d.is_finite().then_some(d)),
            value: stat.statistic,
            evaluations: stat.evaluation_count,
        },
        levels,
        grid_step: grid.step,
        method: grid.method,
        reps: cv.reps,
        seed: cv.seed,
        jitter: cv.jitter_used,
        points_used: cv.points_used,
        timings,
    };

    println!("copula       {copula}");
    println!("m            {}", rep.m);
    if rep.dropped > 0 {
        println!("dropped      {}", rep.dropped);
    }
    print_params(&rep.params, est.std_errors.as_deref());
    println!("alpha        {:.6}", rep.alpha);
    println!("latent n     {:.1}", rep.latent_n);
    for (i, d) in rep.statistic.delta.iter().enumerate() {
        println!("delta{}       {}", i + 1, fmt_opt(*d));
    }
    println!("statistic    {:.6}", rep.statistic.value);
    println!("grid         step {} ({}, {} points), {} reps, seed {}", rep.grid_step, rep.method, rep.points_used, rep.reps, rep.seed);
    println!();
    println!("level   critical   decision");
    for l in &rep.levels {
        println!("{:<7.4} {:<10.6} {}", l.level, l.critical_value, l.decision);
    }
    if let Some(out) = &a.out {
        io::write_json(out, &rep)?;
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let w = a.window.window()?;
    let copula: Copula = a.window.copula.into();
    let params = a.params.params(copula)?;
    let lifetime = match a.lifetime {
        LifetimeArg::Exponential => LifetimeLaw::Exponential,
        LifetimeArg::Weibull2 => LifetimeLaw::WeibullShape2,
    };
    let cfg = SimulationConfig::new(params, w, a.latent_n, a.seed)
        .map_err(CliError::stage("arguments"))?
        .with_lifetime(lifetime);
    let obs = ObservationSet::filtered(datagen::sample_latent(&cfg), w);
    io::write_observations(&a.out, obs.points())?;
    let meta = SimulateMeta {
        schema_version: SCHEMA_VERSION,
        copula,
        window: (&w).into(),
        params: (&params).into(),
        lifetime,
        latent_n: a.latent_n,
        seed: a.seed,
        m: obs.len(),
    };
    let mut meta_path = a.out.clone().into_os_string();
    meta_path.push(".meta.json");
    io::write_json(&PathBuf::from(meta_path), &meta)?;
    println!("wrote {} of {} latent observations to {}", obs.len(), a.latent_n, a.out.display());
    Ok(())
}

fn cmd_critval(a: &CritvalArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let w = a.window.window()?;
    let copula = a.window.copula.into();
    let params = a.params.params(copula)?;
    let mode = a.mode.into();
    let a_val = alpha(&params, &w).map_err(CliError::stage("arguments"))?;
    let (cv, grid) = if a.at.is_empty() {
        let grid = a.sim.grid()?;
        let cv = critval::critical_value(&params, &w, &grid, mode, &a.sim.levels, a.sim.reps, a.sim.seed);
        (cv, Some(grid))
    } else {
        (critval::critical_value_at(&params, &w, &a.at, mode, &a.sim.levels, a.sim.reps, a.sim.seed), None)
    };
    let cv = cv.map_err(CliError::stage("critical value"))?;
    let rep = CritvalReport {
        schema_version: SCHEMA_VERSION,
        copula,
        window: (&w).into(),
        params: (&params).into(),
        alpha: a_val,
        mode,
        grid_step: grid.map(|g| g.step),
        method: grid.map(|g| g.method),
        points: (!a.at.is_empty()).then(|| a.at.iter().map(|p| [p.x, p.t]).collect()),
        reps: cv.reps,
        seed: cv.seed,
        jitter: cv.jitter_used,
        grid_points: cv.grid_points,
        points_used: cv.points_used,
        quantiles: cv.quantiles.iter().map(|q| QuantileOut { level: q.level, value: q.value, std_error: q.std_error }).collect(),
        elapsed_ms: ms(start),
    };

    println!("copula       {copula}");
    print_params(&rep.params, None);
    println!("alpha        {:.6}", rep.alpha);
    println!("mode         {mode}");
    match grid {
        Some(g) => println!("grid         step {} ({}, {} of {} points)", g.step, g.method, rep.points_used, rep.grid_points),
        None => println!("points       {} given, {} used", rep.grid_points, rep.points_used),
    }
    println!("reps         {}, seed {}", rep.reps, rep.seed);
    println!();
    println!("level   quantile   std error");
    for q in &rep.quantiles {
        println!("{:<7.4} {:<10.6} {:.2e}", q.level, q.value, q.std_error);
    }
    if let Some(out) = &a.out {
        io::write_json(out, &rep)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Critval(a) => cmd_critval(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
