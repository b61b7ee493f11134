use dtks::critval::{Decision, SimulationMethod};
use dtks::{Copula, ModelParams, StudyWindow};
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct WindowOut {
    #[serde(rename = "G")]
    pub g: f64,
    pub s: f64,
}

impl From<&StudyWindow> for WindowOut {
    fn from(w: &StudyWindow) -> Self {
        Self { g: w.g(), s: w.s() }
    }
}

#[derive(Debug, Serialize)]
pub struct ParamsOut {
    pub theta: f64,
    /// Absent for the product copula.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vartheta: Option<f64>,
}

impl From<&ModelParams> for ParamsOut {
    fn from(p: &ModelParams) -> Self {
        Self { theta: p.theta(), vartheta: (p.copula() == Copula::Fgm).then(|| p.vartheta()) }
    }
}

#[derive(Debug, Serialize)]
pub struct EstimateReport {
    pub schema_version: u32,
    pub copula: Copula,
    pub window: WindowOut,
    pub params: ParamsOut,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
    pub alpha: f64,
    pub m: usize,
    pub dropped: usize,
    pub latent_n: f64,
    pub iterations: usize,
    pub score_norm: f64,
}

#[derive(Debug, Serialize)]
pub struct StatisticOut {
    /// `null` for a partial maximum over an empty set.
    pub delta: [Option<f64>; 5],
    pub value: f64,
    pub evaluations: usize,
}

#[derive(Debug, Serialize)]
pub struct LevelOut {
    pub level: f64,
    pub critical_value: f64,
    pub std_error: f64,
    pub decision: Decision,
}

#[derive(Debug, Default, Serialize)]
pub struct Timings {
    pub read_ms: f64,
    pub estimate_ms: f64,
    pub statistic_ms: f64,
    pub critical_value_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct TestReport {
    pub schema_version: u32,
    pub copula: Copula,
    pub window: WindowOut,
    pub params: ParamsOut,
    pub alpha: f64,
    pub m: usize,
    pub dropped: usize,
    pub latent_n: f64,
    pub statistic: StatisticOut,
    pub levels: Vec<LevelOut>,
    pub grid_step: f64,
    pub method: SimulationMethod,
    pub reps: usize,
    pub seed: u64,
    pub jitter: f64,
    pub points_used: usize,
    pub timings: Timings,
}

#[derive(Debug, Serialize)]
pub struct QuantileOut {
    pub level: f64,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Serialize)]
pub struct CritvalReport {
    pub schema_version: u32,
    pub copula: Copula,
    pub window: WindowOut,
    pub params: ParamsOut,
    pub alpha: f64,
    pub mode: dtks::critval::CovarianceMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<SimulationMethod>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[f64; 2]>>,
    pub reps: usize,
    pub seed: u64,
    pub jitter: f64,
    pub grid_points: usize,
    pub points_used: usize,
    pub quantiles: Vec<QuantileOut>,
    pub elapsed_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct SimulateMeta {
    pub schema_version: u32,
    pub copula: Copula,
    pub window: WindowOut,
    pub params: ParamsOut,
    pub lifetime: dtks::datagen::LifetimeLaw,
    pub latent_n: usize,
    pub seed: u64,
    pub m: usize,
}
