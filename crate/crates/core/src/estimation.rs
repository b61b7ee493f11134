//! Z-estimation of the model parameters from a truncated sample, and the
//! latent sample size `n = m / alpha`.

use roots::{find_root_brent, SimpleConvergency};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ObservationSet, Point, StudyWindow};
use crate::model::{alpha, Copula, ModelParams, ParamBounds, ParamMatrix, ScoreContext};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub bounds: ParamBounds,
    /// Stop when `|sum psi| <= score_tol * m`.
    pub score_tol: f64,
    /// Stop when the Newton step is shorter than this.
    pub step_tol: f64,
    pub max_iter: usize,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self { bounds: ParamBounds::default(), score_tol: 1e-8, step_tol: 1e-10, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub params: ModelParams,
    /// Euclidean norm of the summed score at `params`.
    pub score_norm: f64,
    pub iterations: usize,
    pub latent_n: f64,
    pub m: usize,
    /// `sqrt(diag((sum psi psi^T)^{-1}))`, when that matrix is invertible.
    pub std_errors: Option<Vec<f64>>,
}

/// `m / alpha`.
pub fn estimate_latent_n(m: usize, alpha: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::EmptySample);
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    Ok(m as f64 / alpha)
}

pub fn estimate(obs: &ObservationSet, copula: Copula) -> Result<EstimateResult> {
    estimate_with(obs, copula, &EstimationConfig::default())
}

pub fn estimate_with(obs: &ObservationSet, copula: Copula, cfg: &EstimationConfig) -> Result<EstimateResult> {
    match obs.len() {
        0 => return Err(Error::EmptySample),
        1 => return Err(Error::InvalidArgument("estimation needs at least two observations".into())),
        _ => {}
    }
    let (params, iterations) = match copula {
        Copula::Product => solve_product(obs, cfg)?,
        Copula::Fgm => solve_fgm(obs, cfg)?,
    };
    finish(obs, params, iterations, cfg)
}

fn finish(obs: &ObservationSet, params: ModelParams, iterations: usize, cfg: &EstimationConfig) -> Result<EstimateResult> {
    let w = obs.window();
    let ctx = ScoreContext::new(&params, w)?;
    let score_norm = ctx.score_sum(obs.points()).norm();
    let m = obs.len();
    if score_norm > cfg.score_tol * m as f64 {
        return Err(Error::NoRoot(format!("score norm {score_norm:e} above tolerance at {params:?}")));
    }
    Ok(EstimateResult {
        params,
        score_norm,
        iterations,
        latent_n: estimate_latent_n(m, alpha(&params, w)?)?,
        m,
        std_errors: outer_product_std_errors(&ctx, obs.points()),
    })
}

fn outer_product_std_errors(ctx: &ScoreContext, points: &[Point]) -> Option<Vec<f64>> {
    let dim = ctx.params().dim();
    let mut acc = [0.0; 3];
    for p in points {
        let s = ctx.score(*p);
        let s1 = if dim == 2 { s[1] } else { 0.0 };
        acc[0] += s[0] * s[0];
        acc[1] += s[0] * s1;
        acc[2] += s1 * s1;
    }
    let opg = if dim == 1 { ParamMatrix::new_1x1(acc[0]) } else { ParamMatrix::new_2x2(acc[0], acc[1], acc[2]) };
    let inv = opg.inverse().ok()?;
    let se: Vec<f64> = (0..dim).map(|i| inv.get(i, i).sqrt()).collect();
    se.iter().all(|v| v.is_finite()).then_some(se)
}

/// Mean score of the product model divided by `m`, closed form:
/// `xbar - 2/theta + s/(e^{theta s}-1) + G/(e^{theta G}-1)`.
fn product_mean_score(theta: f64, xbar: f64, w: &StudyWindow) -> f64 {
    xbar - 2.0 / theta + w.s() / (theta * w.s()).exp_m1() + w.g() / (theta * w.g()).exp_m1()
}

fn solve_product(obs: &ObservationSet, cfg: &EstimationConfig) -> Result<(ModelParams, usize)> {
    let w = obs.window();
    let xbar = obs.points().iter().map(|p| p.x).sum::<f64>() / obs.len() as f64;
    let limit = 0.5 * (w.g() + w.s());
    if xbar >= limit {
        return Err(Error::NoRoot(format!(
            "mean lifetime {xbar} is not below (G+s)/2 = {limit}; the score has no zero"
        )));
    }
    let (lo, hi) = cfg.bounds.theta_range();
    let (lo, hi) = ((lo * (1.0 + 1e-9)).ln(), (hi * (1.0 - 1e-9)).ln());
    let f = |log_theta: f64| product_mean_score(log_theta.exp(), xbar, w);
    let flo = f(lo);
    let fhi = f(hi);
    if flo.signum() == fhi.signum() {
        let edge = if flo > 0.0 { "lower" } else { "upper" };
        return Err(Error::BoundaryHit(format!("the score root lies beyond the {edge} theta bound")));
    }
    let mut iterations = 0;
    let mut conv = SimpleConvergency { eps: 1e-15, max_iter: cfg.max_iter };
    let root = find_root_brent(
        lo,
        hi,
        |z: f64| {
            iterations += 1;
            f(z)
        },
        &mut conv,
    )
    .map_err(|e| Error::NoRoot(format!("Brent search failed: {e:?}")))?;
    // polish on the original scale
    let mut theta = root.exp();
    for _ in 0..3 {
        let h = 1e-7 * theta;
        let d = (product_mean_score(theta + h, xbar, w) - product_mean_score(theta - h, xbar, w)) / (2.0 * h);
        let step = product_mean_score(theta, xbar, w) / d;
        if !step.is_finite() || step.abs() > 0.1 * theta {
            break;
        }
        theta -= step;
    }
    Ok((ModelParams::with_bounds(Copula::Product, theta, 0.0, &cfg.bounds)?, iterations))
}

struct FgmSystem<'a> {
    obs: &'a ObservationSet,
    bounds: ParamBounds,
}

impl FgmSystem<'_> {
    fn params(&self, z: [f64; 2]) -> Result<ModelParams> {
        ModelParams::with_bounds(Copula::Fgm, z[0], z[1], &self.bounds)
    }

    fn score_sum(&self, z: [f64; 2]) -> Result<[f64; 2]> {
        let ctx = ScoreContext::new(&self.params(z)?, self.obs.window())?;
        let s = ctx.score_sum(self.obs.points());
        Ok([s[0], s[1]])
    }

    fn jacobian(&self, z: [f64; 2]) -> Result<[[f64; 2]; 2]> {
        let hs = [1e-6 * z[0], 1e-6];
        let mut jac = [[0.0; 2]; 2];
        for k in 0..2 {
            let mut up = z;
            let mut dn = z;
            up[k] += hs[k];
            dn[k] -= hs[k];
            // one-sided at the edge of the box
            if !self.inside(up) {
                up = z;
            }
            if !self.inside(dn) {
                dn = z;
            }
            let fu = self.score_sum(up)?;
            let fd = self.score_sum(dn)?;
            for i in 0..2 {
                jac[i][k] = (fu[i] - fd[i]) / (up[k] - dn[k]);
            }
        }
        Ok(jac)
    }

    fn inside(&self, z: [f64; 2]) -> bool {
        self.bounds.contains(z[0], z[1])
    }
}

enum NewtonOutcome {
    Converged([f64; 2], usize),
    Failed { last: [f64; 2] },
}

fn newton(sys: &FgmSystem, start: [f64; 2], cfg: &EstimationConfig) -> Result<NewtonOutcome> {
    let tol = cfg.score_tol * sys.obs.len() as f64;
    let norm = |v: [f64; 2]| v[0].hypot(v[1]);
    let mut z = start;
    let mut f = sys.score_sum(z)?;
    for iter in 0..cfg.max_iter {
        if norm(f) <= tol {
            return Ok(NewtonOutcome::Converged(z, iter));
        }
        let j = sys.jacobian(z)?;
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if !det.is_finite() || det == 0.0 {
            return Ok(NewtonOutcome::Failed { last: z });
        }
        let dz = [(j[1][1] * f[0] - j[0][1] * f[1]) / det, (-j[1][0] * f[0] + j[0][0] * f[1]) / det];
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = [z[0] - lambda * dz[0], z[1] - lambda * dz[1]];
            if sys.inside(cand) && cand[0] > 0.25 * z[0] {
                let fc = sys.score_sum(cand)?;
                if norm(fc) < norm(f) {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            return Ok(NewtonOutcome::Failed { last: z });
        };
        let step = (cand[0] - z[0]).hypot(cand[1] - z[1]);
        z = cand;
        f = fc;
        if step < cfg.step_tol {
            return Ok(if norm(f) <= tol {
                NewtonOutcome::Converged(z, iter + 1)
            } else {
                NewtonOutcome::Failed { last: z }
            });
        }
    }
    Ok(if norm(f) <= tol { NewtonOutcome::Converged(z, cfg.max_iter) } else { NewtonOutcome::Failed { last: z } })
}

fn solve_fgm(obs: &ObservationSet, cfg: &EstimationConfig) -> Result<(ModelParams, usize)> {
    let theta0 = match solve_product(obs, cfg) {
        Ok((p, _)) => p.theta(),
        Err(_) => {
            let xbar = obs.points().iter().map(|p| p.x).sum::<f64>() / obs.len() as f64;
            1.0 / xbar.max(f64::MIN_POSITIVE)
        }
    };
    let sys = FgmSystem { obs, bounds: cfg.bounds };
    let near_edge = 1.0 - 1e-3;
    let mut total_iter = 0;
    let mut edge_seen = false;
    for vt0 in [0.0, -0.5, 0.5] {
        match newton(&sys, [theta0, vt0], cfg)? {
            NewtonOutcome::Converged(z, it) => {
                total_iter += it;
                if z[1].abs() >= 1.0 - cfg.bounds.eps_vartheta {
                    return Err(Error::BoundaryHit(format!("vartheta estimate {} at the edge of (-1, 1)", z[1])));
                }
                return Ok((sys.params(z)?, total_iter));
            }
            NewtonOutcome::Failed { last } => {
                total_iter += cfg.max_iter;
                edge_seen |= last[1].abs() > near_edge;
            }
        }
    }
    if edge_seen {
        Err(Error::BoundaryHit("the dependence estimate runs into |vartheta| = 1".into()))
    } else {
        Err(Error::NoRoot("damped Newton failed from every start".into()))
    }
}
