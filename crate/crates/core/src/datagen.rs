//! Seeded simulation of latent and truncated samples, and a level/power
//! harness for the full test pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critval::{critical_value, decide, CovarianceMode, Decision, GridSpec};
use crate::error::{Error, Result};
use crate::estimation::estimate;
use crate::geometry::{ObservationSet, Point, StudyWindow};
use crate::ksstat::ks_statistic;
use crate::model::{Copula, ModelParams};

/// Marginal law of the lifetime; the copula and the truncation margin are
/// taken from the model parameters in both cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LifetimeLaw {
    /// `Exp(theta)`, the hypothesised model.
    #[default]
    Exponential,
    /// Weibull with shape 2 and the same mean `1/theta`.
    WeibullShape2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub params: ModelParams,
    pub window: StudyWindow,
    pub latent_n: usize,
    pub seed: u64,
    pub replications: usize,
    #[serde(default)]
    pub lifetime: LifetimeLaw,
}

impl SimulationConfig {
    pub fn new(params: ModelParams, window: StudyWindow, latent_n: usize, seed: u64) -> Result<Self> {
        let cfg = Self { params, window, latent_n, seed, replications: 1, lifetime: LifetimeLaw::Exponential };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_replications(mut self, replications: usize) -> Self {
        self.replications = replications;
        self
    }

    pub fn with_lifetime(mut self, lifetime: LifetimeLaw) -> Self {
        self.lifetime = lifetime;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_n == 0 {
            return Err(Error::InvalidArgument("latent sample size must be at least 1".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be at least 1".into()));
        }
        Ok(())
    }
}

/// Solves `u [1 + a (1 - u)] = w` for `u in [0, 1]`, with
/// `a = vartheta (1 - 2v)`.
pub fn conditional_inverse(vartheta: f64, v: f64, w: f64) -> f64 {
    let a = vartheta * (1.0 - 2.0 * v);
    if a.abs() < 1e-10 {
        return w;
    }
    let b = 1.0 + a;
    // the smaller root, written without cancellation
    let u = 2.0 * w / (b + (b * b - 4.0 * a * w).max(0.0).sqrt());
    debug_assert!((-1e-12..=1.0 + 1e-12).contains(&u), "root {u} outside [0, 1]");
    u.clamp(0.0, 1.0)
}

fn lifetime_quantile(law: LifetimeLaw, theta: f64, u: f64) -> f64 {
    let e = -(-u).ln_1p();
    match law {
        LifetimeLaw::Exponential => e / theta,
        // mean scale * Gamma(3/2) = 1/theta
        LifetimeLaw::WeibullShape2 => e.sqrt() / (theta * GAMMA_THREE_HALVES),
    }
}

const GAMMA_THREE_HALVES: f64 = 0.886_226_925_452_758;

fn draw_latent(cfg: &SimulationConfig, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let g = cfg.window.g();
    let vt = cfg.params.vartheta();
    let theta = cfg.params.theta();
    (0..cfg.latent_n)
        .map(|_| {
            let v: f64 = rng.random();
            let w: f64 = rng.random();
            let u = match cfg.params.copula() {
                Copula::Product => w,
                Copula::Fgm => conditional_inverse(vt, v, w),
            };
            Point::new(lifetime_quantile(cfg.lifetime, theta, u), g * v)
        })
        .collect()
}

fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Latent sample of size `latent_n`, drawn by the conditional inverse method
/// given the truncation age.
pub fn sample_latent(cfg: &SimulationConfig) -> Vec<Point> {
    sample_latent_replication(cfg, 0)
}

/// As [`sample_latent`], on the independent substream of replication `rep`.
pub fn sample_latent_replication(cfg: &SimulationConfig, rep: u64) -> Vec<Point> {
    draw_latent(cfg, &mut replication_rng(cfg.seed, rep))
}

/// Keeps the points inside `D`, in order.
pub fn truncate(points: &[Point], w: &StudyWindow) -> Result<ObservationSet> {
    let obs = ObservationSet::filtered(points.iter().copied(), *w);
    if obs.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(obs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub level: f64,
    pub rejections: usize,
    pub rate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub replications: usize,
    /// Replications that produced a decision.
    pub completed: usize,
    /// Replications where sampling, estimation or the critical value failed.
    pub failed: usize,
    pub rows: Vec<LevelRow>,
}

/// Per-replication outcome of [`run_level_power_study`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub statistic: f64,
    pub decisions: Vec<Decision>,
}

/// Runs sample, truncate, estimate, statistic, critical value and decision
/// for each replication, testing the hypothesis `copula` (with estimated
/// parameters) against data drawn from `cfg`.
pub fn run_level_power_study(
    cfg: &SimulationConfig,
    hypothesis: Copula,
    grid: &GridSpec,
    reps_cv: usize,
    levels: &[f64],
) -> Result<StudyReport> {
    cfg.validate()?;
    if levels.is_empty() || levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(Error::InvalidArgument(format!("levels must lie in (0, 1), got {levels:?}")));
    }
    let outcomes: Vec<Option<ReplicationOutcome>> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|rep| run_replication(cfg, hypothesis, grid, reps_cv, levels, rep).ok())
        .collect();
    let completed: Vec<&ReplicationOutcome> = outcomes.iter().flatten().collect();
    let n = completed.len();
    let rows = levels
        .iter()
        .enumerate()
        .map(|(k, &level)| {
            let rejections = completed.iter().filter(|o| o.decisions[k] == Decision::Reject).count();
            let rate = if n > 0 { rejections as f64 / n as f64 } else { f64::NAN };
            LevelRow { level, rejections, rate, std_error: (rate * (1.0 - rate) / n as f64).sqrt() }
        })
        .collect();
    Ok(StudyReport { replications: cfg.replications, completed: n, failed: cfg.replications - n, rows })
}

/// One replication of the study, on substream `rep`.
pub fn run_replication(
    cfg: &SimulationConfig,
    hypothesis: Copula,
    grid: &GridSpec,
    reps_cv: usize,
    levels: &[f64],
    rep: u64,
) -> Result<ReplicationOutcome> {
    let latent = sample_latent_replication(cfg, rep);
    let obs = truncate(&latent, &cfg.window)?;
    let est = estimate(&obs, hypothesis)?;
    let stat = ks_statistic(&obs, &est.params)?;
    let cv_seed = splitmix64(cfg.seed ^ splitmix64(rep.wrapping_add(1)));
    let cv = critical_value(&est.params, &cfg.window, grid, CovarianceMode::EstBoth, levels, reps_cv, cv_seed)?;
    let decisions = cv.quantiles.iter().map(|q| decide(stat.statistic, q.value)).collect();
    Ok(ReplicationOutcome { statistic: stat.statistic, decisions })
}

/// SplitMix64 finaliser, used to derive independent seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
