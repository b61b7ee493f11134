//! Critical values: covariance of the limiting Gaussian process on a grid,
//! Cholesky simulation of its sup-norm, and quantiles.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expectations::{expect_g_score_with_tol, expect_g_with_grad, value_unchecked};
use crate::geometry::{effective_point, in_support, Point, StudyWindow};
use crate::model::{alpha, alpha_grad, density, fisher_info, Copula, ModelParams, ParamMatrix, ParamVec, ScoreContext};
use crate::quadrature::{integrate_region, Tolerance};

/// How the Gaussian process is drawn on the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimulationMethod {
    /// Dense covariance matrix over the lattice and its Cholesky factor.
    #[default]
    Cholesky,
    /// Independent Gaussian noise on the lattice cells, summed over
    /// lower-left quadrants, plus the low-rank terms of the mode. Linear in
    /// the number of cells, so much finer lattices are affordable.
    CellNoise,
}

impl SimulationMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SimulationMethod::Cholesky => "cholesky",
            SimulationMethod::CellNoise => "cell-noise",
        }
    }
}

impl fmt::Display for SimulationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimulationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [SimulationMethod::Cholesky, SimulationMethod::CellNoise]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown simulation method '{s}'")))
    }
}

/// Origin-aligned lattice over `[0, G+s] x [0, G]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub step: f64,
    pub cap: usize,
    /// Keep only lattice points inside `D`.
    pub restrict_to_d: bool,
    #[serde(default)]
    pub method: SimulationMethod,
}

impl GridSpec {
    pub const DEFAULT_CAP: usize = 20_000;
    pub const CELL_NOISE_CAP: usize = 8_000_000;

    pub fn new(step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid step must be positive and finite, got {step}")));
        }
        Ok(Self { step, cap: Self::DEFAULT_CAP, restrict_to_d: false, method: SimulationMethod::Cholesky })
    }

    /// Lattice for [`SimulationMethod::CellNoise`], with its larger cap.
    pub fn cell_noise(step: f64) -> Result<Self> {
        Ok(Self { cap: Self::CELL_NOISE_CAP, method: SimulationMethod::CellNoise, ..Self::new(step)? })
    }

    pub fn with_method(mut self, method: SimulationMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    pub fn restricted_to_d(mut self, on: bool) -> Self {
        self.restrict_to_d = on;
        self
    }

    fn counts(&self, w: &StudyWindow) -> (usize, usize) {
        let n = |len: f64| (len / self.step + 1e-9).floor() as usize + 1;
        (n(w.g() + w.s()), n(w.g()))
    }

    /// `(floor((G+s)/step) + 1) (floor(G/step) + 1)`.
    pub fn point_count(&self, w: &StudyWindow) -> usize {
        let (nx, nt) = self.counts(w);
        nx * nt
    }

    /// Lattice points, `t` outer and `x` inner.
    pub fn points(&self, w: &StudyWindow) -> Result<Vec<Point>> {
        let total = self.point_count(w);
        if total > self.cap {
            return Err(Error::InvalidArgument(format!(
                "grid with step {} has {total} points, above the cap of {}",
                self.step, self.cap
            )));
        }
        let (nx, nt) = self.counts(w);
        let (xmax, tmax) = (w.g() + w.s(), w.g());
        let mut out = Vec::with_capacity(total);
        for j in 0..nt {
            for i in 0..nx {
                let p = Point::new((i as f64 * self.step).min(xmax), (j as f64 * self.step).min(tmax));
                if !self.restrict_to_d || in_support(w, p) {
                    out.push(p);
                }
            }
        }
        Ok(out)
    }
}

/// Which limiting process the critical value is for: whether the model
/// parameters and the latent sample size are known or estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMode {
    /// Parameters and `n` known: Brownian bridge.
    KnownBoth,
    /// Parameters estimated, `n` known.
    EstThetaKnownN,
    /// Parameters known, `n` estimated.
    KnownThetaEstN,
    /// Parameters and `n` estimated.
    EstBoth,
}

impl CovarianceMode {
    pub const ALL: [CovarianceMode; 4] =
        [CovarianceMode::KnownBoth, CovarianceMode::EstThetaKnownN, CovarianceMode::KnownThetaEstN, CovarianceMode::EstBoth];

    pub fn as_str(self) -> &'static str {
        match self {
            CovarianceMode::KnownBoth => "known-both",
            CovarianceMode::EstThetaKnownN => "est-theta",
            CovarianceMode::KnownThetaEstN => "known-theta",
            CovarianceMode::EstBoth => "est-both",
        }
    }
}

impl fmt::Display for CovarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CovarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CovarianceMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown covariance mode '{s}'")))
    }
}

/// Per-point quantities the covariance needs.
#[derive(Debug, Clone, Copy)]
struct PointTerms {
    point: Point,
    e: f64,
    de: [f64; 2],
    /// `E alpha'/alpha - E'`.
    k: [f64; 2],
}

/// Covariance function of one mode, with parameter-level terms cached.
#[derive(Debug, Clone)]
pub struct CovarianceKernel {
    params: ModelParams,
    window: StudyWindow,
    mode: CovarianceMode,
    alpha: f64,
    alpha_grad: ParamVec,
    /// Inverse Fisher information.
    info_inv: ParamMatrix,
}

impl CovarianceKernel {
    pub fn new(params: &ModelParams, w: &StudyWindow, mode: CovarianceMode) -> Result<Self> {
        let info_inv = match mode {
            CovarianceMode::EstThetaKnownN | CovarianceMode::EstBoth => fisher_info(params, w)?.inverse()?,
            _ => ParamMatrix::new_1x1(0.0),
        };
        Ok(Self {
            params: *params,
            window: *w,
            mode,
            alpha: alpha(params, w)?,
            alpha_grad: alpha_grad(params, w),
            info_inv,
        })
    }

    pub fn mode(&self) -> CovarianceMode {
        self.mode
    }

    fn terms(&self, p: Point) -> Result<PointTerms> {
        let (e, de) = expect_g_with_grad(&self.params, &self.window, p)?;
        let de = [de[0], if de.dim() == 2 { de[1] } else { 0.0 }];
        let ad = self.alpha_grad.raw();
        let k = [e * ad[0] / self.alpha - de[0], e * ad[1] / self.alpha - de[1]];
        Ok(PointTerms { point: p, e, de, k })
    }

    fn vec(&self, v: [f64; 2]) -> ParamVec {
        ParamVec::new(v, self.params.dim())
    }

    fn combine(&self, a: &PointTerms, b: &PointTerms, e_min: f64) -> f64 {
        let al = self.alpha;
        match self.mode {
            CovarianceMode::KnownBoth => e_min - a.e * b.e,
            CovarianceMode::KnownThetaEstN => e_min - a.e * b.e / al,
            CovarianceMode::EstThetaKnownN => {
                let (da, db) = (self.vec(a.de), self.vec(b.de));
                let j = &self.info_inv;
                e_min - a.e * b.e - j.bilinear(&da, &db)
                    + a.e / al * j.bilinear(&db, &self.alpha_grad)
                    + b.e / al * j.bilinear(&da, &self.alpha_grad)
            }
            CovarianceMode::EstBoth => e_min - a.e * b.e / al - self.info_inv.bilinear(&self.vec(a.k), &self.vec(b.k)),
        }
    }

    /// Covariance of the limiting process at `p1` and `p2`.
    pub fn covariance(&self, p1: Point, p2: Point) -> Result<f64> {
        let (a, b) = (self.terms(p1)?, self.terms(p2)?);
        Ok(self.combine(&a, &b, value_unchecked(&self.params, &self.window, p1.meet(p2))))
    }
}

/// Covariance of the limiting process for the given mode.
pub fn covariance(params: &ModelParams, w: &StudyWindow, p1: Point, p2: Point, mode: CovarianceMode) -> Result<f64> {
    CovarianceKernel::new(params, w, mode)?.covariance(p1, p2)
}

/// The simplified covariance of the fully estimated case written out term
/// by term: the scalar form for the product copula and the matrix form for
/// FGM, with `E(psi')^{-1} = -I^{-1}` by the information equality.
pub fn covariance_est_both_expanded(params: &ModelParams, w: &StudyWindow, p1: Point, p2: Point) -> Result<f64> {
    let a = alpha(params, w)?;
    let ad = alpha_grad(params, w);
    let info = fisher_info(params, w)?;
    let (e1, d1) = expect_g_with_grad(params, w, p1)?;
    let (e2, d2) = expect_g_with_grad(params, w, p2)?;
    let e_min = value_unchecked(params, w, p1.meet(p2));
    Ok(match params.copula() {
        Copula::Product => {
            let c = -1.0 / info.get(0, 0);
            let (d1, d2, ad) = (d1[0], d2[0], ad[0]);
            e_min - e1 * e2 / a + c * d1 * d2 - c * ad / a * (d2 * e1 + d1 * e2) + c * (ad * ad) / (a * a) * e1 * e2
        }
        Copula::Fgm => {
            let j = info.inverse()?;
            e_min - e1 * e2 / a - j.bilinear(&d2, &d1) + e1 / a * j.bilinear(&d2, &ad) + e2 / a * j.bilinear(&d1, &ad)
                - e1 / a * e2 / a * j.bilinear(&ad, &ad)
        }
    })
}

/// General covariance of the fully estimated case,
/// `E(g1 g2) - E g1 E g2 / alpha + K2' E(g1 phi) + K1' E(g2 phi) + K1' E(phi phi') K2`,
/// with the score moments, `E(psi psi')` and `E(psi')` computed numerically.
#[derive(Debug, Clone)]
pub struct GeneralCovariance {
    params: ModelParams,
    window: StudyWindow,
    alpha: f64,
    alpha_grad: ParamVec,
    /// `-(E psi')^{-1}`, mapping score moments to influence-function moments.
    to_phi: ParamMatrix,
    phi_phi: ParamMatrix,
    tol: Tolerance,
}

impl GeneralCovariance {
    pub fn new(params: &ModelParams, w: &StudyWindow) -> Result<Self> {
        let tol = Tolerance::new(1e-11, 1e-11);
        let ctx = ScoreContext::new(params, w)?;
        let dim = params.dim();
        let psi_psi = {
            let m = integrate_region(
                |x, t| {
                    let q = Point::new(x, t);
                    let f = density(params, w, q);
                    let s = ctx.score_unchecked(q).raw();
                    [s[0] * s[0] * f, s[0] * s[1] * f, s[1] * s[1] * f]
                },
                w,
                w.upper_corner(),
                tol,
            );
            if dim == 1 { ParamMatrix::new_1x1(m[0]) } else { ParamMatrix::new_2x2(m[0], m[1], m[2]) }
        };
        let jac = mean_score_jacobian(params, w, tol)?;
        let inv = jac.inverse()?;
        let to_phi = inv.scale(-1.0);
        // E(phi phi') = A E(psi psi') A' with A = -(E psi')^{-1}; entries by hand
        let phi_phi = if dim == 1 {
            ParamMatrix::new_1x1(to_phi.get(0, 0).powi(2) * psi_psi.get(0, 0))
        } else {
            let a = |i, j| to_phi.get(i, j);
            let s = |i, j| psi_psi.get(i, j);
            let e = |i: usize, j: usize| {
                let mut acc = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        acc += a(i, k) * s(k, l) * a(j, l);
                    }
                }
                acc
            };
            ParamMatrix::new_2x2(e(0, 0), e(0, 1), e(1, 1))
        };
        Ok(Self { params: *params, window: *w, alpha: ctx.alpha(), alpha_grad: alpha_grad(params, w), to_phi, phi_phi, tol })
    }

    pub fn covariance(&self, p1: Point, p2: Point) -> Result<f64> {
        let (params, w) = (&self.params, &self.window);
        let (e1, d1) = expect_g_with_grad(params, w, p1)?;
        let (e2, d2) = expect_g_with_grad(params, w, p2)?;
        let k = |e: f64, d: &ParamVec| {
            let ad = self.alpha_grad.raw();
            let d = d.raw();
            ParamVec::new([e * ad[0] / self.alpha - d[0], e * ad[1] / self.alpha - d[1]], params.dim())
        };
        let (k1, k2) = (k(e1, &d1), k(e2, &d2));
        let g1_phi = self.to_phi.apply(&expect_g_score_with_tol(params, w, p1, self.tol)?);
        let g2_phi = self.to_phi.apply(&expect_g_score_with_tol(params, w, p2, self.tol)?);
        let e_min = value_unchecked(params, w, p1.meet(p2));
        Ok(e_min - e1 * e2 / self.alpha + k2.dot(&g1_phi) + k1.dot(&g2_phi) + self.phi_phi.bilinear(&k1, &k2))
    }
}

/// `E_{theta0}[d psi_theta / d theta]` at `theta = theta0`, by central
/// differences of quadrature means; no information equality is used.
fn mean_score_jacobian(params: &ModelParams, w: &StudyWindow, tol: Tolerance) -> Result<ParamMatrix> {
    let dim = params.dim();
    let mean = |p: &ModelParams| -> Result<[f64; 2]> {
        let ctx = ScoreContext::new(p, w)?;
        Ok(integrate_region(
            |x, t| {
                let q = Point::new(x, t);
                let f = density(params, w, q);
                let s = ctx.score_unchecked(q).raw();
                [s[0] * f, s[1] * f]
            },
            w,
            w.upper_corner(),
            tol,
        ))
    };
    let mut cols = [[0.0; 2]; 2];
    for (k, col) in cols.iter_mut().enumerate().take(dim) {
        let h = if k == 0 { 1e-5 * params.theta() } else { 1e-5 };
        let shifted = |d: f64| {
            let (t, v) = if k == 0 { (params.theta() + d, params.vartheta()) } else { (params.theta(), params.vartheta() + d) };
            ModelParams::new(params.copula(), t, v)
        };
        let up = mean(&shifted(h)?)?;
        let dn = mean(&shifted(-h)?)?;
        *col = [(up[0] - dn[0]) / (2.0 * h), (up[1] - dn[1]) / (2.0 * h)];
    }
    Ok(if dim == 1 {
        ParamMatrix::new_1x1(cols[0][0])
    } else {
        // symmetrise the finite-difference Jacobian
        ParamMatrix::new_2x2(cols[0][0], 0.5 * (cols[1][0] + cols[0][1]), cols[1][1])
    })
}

/// Dense covariance matrix over a set of points.
pub fn covariance_matrix_for(kernel: &CovarianceKernel, points: &[Point]) -> Result<DMatrix<f64>> {
    let terms: Vec<PointTerms> = points.iter().map(|p| kernel.terms(*p)).collect::<Result<_>>()?;
    let n = points.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..=i)
                .map(|j| {
                    let e_min = value_unchecked(&kernel.params, &kernel.window, terms[i].point.meet(terms[j].point));
                    kernel.combine(&terms[i], &terms[j], e_min)
                })
                .collect()
        })
        .collect();
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Covariance matrix over all lattice points of `grid`.
pub fn covariance_matrix(params: &ModelParams, w: &StudyWindow, grid: &GridSpec, mode: CovarianceMode) -> Result<DMatrix<f64>> {
    let kernel = CovarianceKernel::new(params, w, mode)?;
    covariance_matrix_for(&kernel, &grid.points(w)?)
}

/// Lower Cholesky factor of a covariance matrix, after the smallest jitter
/// that made it positive definite.
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    lower: DMatrix<f64>,
    /// Multiple of the mean diagonal added to the diagonal.
    pub jitter: f64,
}

impl CovarianceFactor {
    pub const JITTERS: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let n = cov.nrows();
        if n != cov.ncols() {
            return Err(Error::InvalidArgument("covariance matrix must be square".into()));
        }
        if n == 0 {
            return Ok(Self { lower: DMatrix::zeros(0, 0), jitter: 0.0 });
        }
        let mean_diag = cov.diagonal().mean();
        if mean_diag == 0.0 && cov.iter().all(|v| *v == 0.0) {
            return Ok(Self { lower: DMatrix::zeros(n, n), jitter: 0.0 });
        }
        for lambda in Self::JITTERS {
            let mut m = cov.clone();
            for i in 0..n {
                m[(i, i)] += lambda * mean_diag;
            }
            if let Some(ch) = m.cholesky() {
                return Ok(Self { lower: ch.l(), jitter: lambda });
            }
        }
        Err(Error::FactorizationFailed(*Self::JITTERS.last().unwrap()))
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }
}

const SIM_BLOCK: usize = 128;

/// `reps` draws of `max_i |Z_i|`, `Z = L eta`, sorted ascending. Replication
/// `r` uses its own stream of a generator seeded with `seed`, so the output
/// does not depend on the thread count.
pub fn simulate_sup(factor: &CovarianceFactor, reps: usize, seed: u64) -> Vec<f64> {
    let n = factor.dim();
    let blocks: Vec<(usize, usize)> = (0..reps).step_by(SIM_BLOCK).map(|s| (s, (s + SIM_BLOCK).min(reps))).collect();
    let mut out: Vec<f64> = blocks
        .into_par_iter()
        .flat_map_iter(|(start, end)| {
            let cols = end - start;
            let mut eta = DMatrix::<f64>::zeros(n, cols);
            for c in 0..cols {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((start + c) as u64);
                for i in 0..n {
                    eta[(i, c)] = StandardNormal.sample(&mut rng);
                }
            }
            let z = &factor.lower * eta;
            (0..cols).map(move |c| z.column(c).iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect::<Vec<_>>()
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Convenience wrapper: factorise, then simulate.
pub fn simulate_sup_matrix(cov: &DMatrix<f64>, reps: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(simulate_sup(&CovarianceFactor::new(cov)?, reps, seed))
}

/// Order statistic at rank `ceil(level * n)` of sorted samples.
pub fn upper_quantile(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let rank = ((level * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

/// Half the spread of the order statistics one binomial standard deviation
/// either side of the quantile rank.
fn quantile_std_error(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len() as f64;
    let sd = (n * level * (1.0 - level)).sqrt();
    let lo = (level - sd / n).max(0.0);
    let hi = (level + sd / n).min(1.0);
    0.5 * (upper_quantile(sorted, hi) - upper_quantile(sorted, lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantile {
    pub level: f64,
    pub value: f64,
    /// Monte-Carlo standard error estimate of `value`.
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValueResult {
    pub quantiles: Vec<Quantile>,
    pub reps: usize,
    pub seed: u64,
    /// `None` when the points were given explicitly.
    pub grid: Option<GridSpec>,
    pub mode: CovarianceMode,
    pub jitter_used: f64,
    /// Lattice (or explicit) points before merging duplicates.
    pub grid_points: usize,
    /// Distinct points with non-negligible variance that entered the matrix.
    pub points_used: usize,
}

impl CriticalValueResult {
    pub fn value_at(&self, level: f64) -> Option<f64> {
        self.quantiles.iter().find(|q| q.level == level).map(|q| q.value)
    }
}

/// Lattice points with distinct effective points; lattice points outside `D`
/// give the same process value as their effective point.
fn distinct_points(w: &StudyWindow, grid: &GridSpec) -> Result<(usize, Vec<Point>)> {
    let pts = grid.points(w)?;
    let total = pts.len();
    let quantum = grid.step / 1024.0;
    let mut keyed: Vec<((i64, i64), Point)> = pts
        .into_iter()
        .map(|p| {
            let e = effective_point(w, p);
            (((e.x / quantum).round() as i64, (e.t / quantum).round() as i64), e)
        })
        .collect();
    keyed.sort_by_key(|(k, _)| *k);
    keyed.dedup_by_key(|(k, _)| *k);
    Ok((total, keyed.into_iter().map(|(_, p)| p).collect()))
}

/// Simulated critical values of the sup-norm statistic.
pub fn critical_value(
    params: &ModelParams,
    w: &StudyWindow,
    grid: &GridSpec,
    mode: CovarianceMode,
    levels: &[f64],
    reps: usize,
    seed: u64,
) -> Result<CriticalValueResult> {
    check_levels(levels, reps)?;
    let (sims, jitter_used, grid_points, points_used) = match grid.method {
        SimulationMethod::Cholesky => cholesky_sup(params, w, grid, mode, reps, seed)?,
        SimulationMethod::CellNoise => {
            let field = CellNoiseField::new(params, w, grid, mode)?;
            (field.simulate_sup(reps, seed), 0.0, field.nx * field.nt, field.point_count())
        }
    };
    Ok(CriticalValueResult {
        quantiles: quantiles_of(&sims, levels),
        reps,
        seed,
        grid: Some(*grid),
        mode,
        jitter_used,
        grid_points,
        points_used,
    })
}

/// Sorted sup-norm draws via the dense covariance matrix, with the jitter,
/// lattice size and number of distinct points used.
fn cholesky_sup(
    params: &ModelParams,
    w: &StudyWindow,
    grid: &GridSpec,
    mode: CovarianceMode,
    reps: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64, usize, usize)> {
    let (grid_points, candidates) = distinct_points(w, grid)?;
    let kernel = CovarianceKernel::new(params, w, mode)?;
    let (sims, jitter, used) = cholesky_sup_points(&kernel, &candidates, reps, seed)?;
    Ok((sims, jitter, grid_points, used))
}

fn cholesky_sup_points(
    kernel: &CovarianceKernel,
    candidates: &[Point],
    reps: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64, usize)> {
    let variances: Vec<f64> = candidates.par_iter().map(|p| kernel.covariance(*p, *p)).collect::<Result<_>>()?;
    let max_var = variances.iter().copied().fold(0.0, f64::max);
    let points: Vec<Point> = candidates
        .iter()
        .zip(&variances)
        .filter(|(_, v)| **v > 1e-12 * max_var)
        .map(|(p, _)| *p)
        .collect();
    let cov = covariance_matrix_for(kernel, &points)?;
    let factor = CovarianceFactor::new(&cov)?;
    Ok((simulate_sup(&factor, reps, seed), factor.jitter, points.len()))
}

fn check_levels(levels: &[f64], reps: usize) -> Result<()> {
    if levels.is_empty() || levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(Error::InvalidArgument(format!("levels must lie in (0, 1), got {levels:?}")));
    }
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    Ok(())
}

fn quantiles_of(sims: &[f64], levels: &[f64]) -> Vec<Quantile> {
    let mut sorted_levels = levels.to_vec();
    sorted_levels.sort_by(f64::total_cmp);
    sorted_levels
        .iter()
        .map(|&level| Quantile { level, value: upper_quantile(sims, level), std_error: quantile_std_error(sims, level) })
        .collect()
}

/// Critical values for the supremum over an explicit set of points instead
/// of a lattice, by the dense covariance method.
pub fn critical_value_at(
    params: &ModelParams,
    w: &StudyWindow,
    points: &[Point],
    mode: CovarianceMode,
    levels: &[f64],
    reps: usize,
    seed: u64,
) -> Result<CriticalValueResult> {
    check_levels(levels, reps)?;
    for p in points {
        w.check_rectangle(*p)?;
    }
    let kernel = CovarianceKernel::new(params, w, mode)?;
    let (sims, jitter_used, points_used) = cholesky_sup_points(&kernel, points, reps, seed)?;
    Ok(CriticalValueResult {
        quantiles: quantiles_of(&sims, levels),
        reps,
        seed,
        grid: None,
        mode,
        jitter_used,
        grid_points: points.len(),
        points_used,
    })
}

/// Lattice coordinates `0, step, 2 step, ...` up to `len`, with `len`
/// itself appended when the step does not divide it.
fn axis(len: f64, step: f64) -> Vec<f64> {
    let n = (len / step + 1e-9).floor() as usize;
    let mut v: Vec<f64> = (0..=n).map(|i| (i as f64 * step).min(len)).collect();
    if len - v[n] > 1e-9 * step {
        v.push(len);
    }
    v
}

/// The limiting process on a lattice written as
/// `U(p) = W(g_p) - a(p) W_total + d(p)' V`, where `W` is Gaussian white noise
/// with intensity equal to the model law, `W_total` its total mass (over `D`
/// when `n` is estimated, over the whole latent space when `n` is known) and
/// `V = W(psi 1_D)`.
///
/// Cell masses and cell score moments are second differences of closed forms.
/// `V` is the sum of the cell-mean scores times the cell noise plus an
/// independent term for the score variation inside cells, which is
/// uncorrelated with every quadrant sum. The covariance at lattice points is
/// therefore exact for every mode.
#[derive(Debug, Clone)]
struct CellNoiseField {
    nx: usize,
    nt: usize,
    /// Active cells: flat index `i + (nx - 1) j`, standard deviation and
    /// score moment divided by the standard deviation.
    cells: Vec<(usize, f64, [f64; 2])>,
    /// Per lattice point, row-major over `t` then `x`.
    a: Vec<f64>,
    d: Vec<[f64; 2]>,
    /// Per lattice row, the inclusive range of columns inside closed `D`;
    /// points outside repeat the values at their effective points.
    rows: Vec<(usize, usize)>,
    outside_sd: f64,
    /// Lower Cholesky factor of `I - sum_c mu_c mu_c'`, the score variance
    /// within cells, drawn independently of the cell noise.
    within: [[f64; 2]; 2],
}

impl CellNoiseField {
    fn new(params: &ModelParams, w: &StudyWindow, grid: &GridSpec, mode: CovarianceMode) -> Result<Self> {
        let xs = axis(w.g() + w.s(), grid.step);
        let ts = axis(w.g(), grid.step);
        let (nx, nt) = (xs.len(), ts.len());
        if nx * nt > grid.cap {
            return Err(Error::InvalidArgument(format!(
                "grid with step {} has {} points, above the cap of {}",
                grid.step,
                nx * nt,
                grid.cap
            )));
        }
        let al = alpha(params, w)?;
        let ad = alpha_grad(params, w).raw();
        let info = match mode {
            CovarianceMode::EstThetaKnownN | CovarianceMode::EstBoth => Some(fisher_info(params, w)?),
            _ => None,
        };
        let info_inv = info.as_ref().map(ParamMatrix::inverse).transpose()?;
        let dim = params.dim();
        // E and its gradient at every lattice point
        let eg: Vec<(f64, [f64; 2])> = (0..nx * nt)
            .into_par_iter()
            .map(|k| {
                let p = Point::new(xs[k % nx], ts[k / nx]);
                let (e, de) = expect_g_with_grad(params, w, p)?;
                Ok((e, [de[0], if dim == 2 { de[1] } else { 0.0 }]))
            })
            .collect::<Result<_>>()?;
        // integral of psi f over the lower-left quadrant: E' - E alpha'/alpha
        let moment = |k: usize| {
            let (e, de) = eg[k];
            [de[0] - e * ad[0] / al, de[1] - e * ad[1] / al]
        };
        let mut cells = Vec::new();
        for j in 0..nt - 1 {
            for i in 0..nx - 1 {
                let (k00, k10, k01, k11) = (i + nx * j, i + 1 + nx * j, i + nx * (j + 1), i + 1 + nx * (j + 1));
                let mass = eg[k11].0 - eg[k01].0 - eg[k10].0 + eg[k00].0;
                if mass <= 1e-15 * al {
                    continue;
                }
                let (m00, m10, m01, m11) = (moment(k00), moment(k10), moment(k01), moment(k11));
                let sd = mass.sqrt();
                let mu = [
                    (m11[0] - m01[0] - m10[0] + m00[0]) / sd,
                    (m11[1] - m01[1] - m10[1] + m00[1]) / sd,
                ];
                cells.push((i + (nx - 1) * j, sd, mu));
            }
        }
        let (a, d): (Vec<f64>, Vec<[f64; 2]>) = eg
            .iter()
            .map(|&(e, de)| {
                let k = [e * ad[0] / al - de[0], e * ad[1] / al - de[1]];
                let apply = |v: [f64; 2], sign: f64| {
                    let j = info_inv.as_ref().expect("information needed for this mode");
                    let r = j.apply(&ParamVec::new(v, dim)).raw();
                    [sign * r[0], sign * r[1]]
                };
                match mode {
                    CovarianceMode::KnownBoth => (e, [0.0; 2]),
                    CovarianceMode::KnownThetaEstN => (e / al, [0.0; 2]),
                    CovarianceMode::EstThetaKnownN => (e, apply(de, -1.0)),
                    CovarianceMode::EstBoth => (e / al, apply(k, 1.0)),
                }
            })
            .unzip();
        let outside_sd = match mode {
            CovarianceMode::KnownBoth | CovarianceMode::EstThetaKnownN => (1.0 - al).max(0.0).sqrt(),
            _ => 0.0,
        };
        let within = match info {
            Some(info) => {
                let vv = cells.iter().fold([0.0; 3], |v, c| {
                    [v[0] + c.2[0] * c.2[0], v[1] + c.2[0] * c.2[1], v[2] + c.2[1] * c.2[1]]
                });
                let r11 = (info.get(0, 0) - vv[0]).max(0.0);
                if dim == 1 {
                    [[r11.sqrt(), 0.0], [0.0, 0.0]]
                } else {
                    let (r12, r22) = (info.get(0, 1) - vv[1], (info.get(1, 1) - vv[2]).max(0.0));
                    let l11 = r11.sqrt();
                    let l21 = if l11 > 0.0 { r12 / l11 } else { 0.0 };
                    [[l11, 0.0], [l21, (r22 - l21 * l21).max(0.0).sqrt()]]
                }
            }
            None => [[0.0; 2]; 2],
        };
        let slack = 1e-9 * grid.step;
        let rows = ts
            .iter()
            .map(|&t| {
                let lo = xs.partition_point(|&x| x < t - slack);
                let hi = xs.partition_point(|&x| x <= t + w.s() + slack);
                (lo, hi.saturating_sub(1).max(lo))
            })
            .collect();
        Ok(Self { nx, nt, cells, a, d, rows, outside_sd, within })
    }

    /// Lattice points the maximum is taken over.
    fn point_count(&self) -> usize {
        self.rows.iter().map(|(lo, hi)| hi - lo + 1).sum()
    }

    fn draw_sup(&self, rng: &mut ChaCha8Rng, noise: &mut [f64], below: &mut [f64]) -> f64 {
        let (nx, nt) = (self.nx, self.nt);
        // inactive cells are never written and stay zero
        let outside: f64 = StandardNormal.sample(rng);
        let mut total = self.outside_sd * outside;
        let (z1, z2): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
        let l = &self.within;
        let mut v = [l[0][0] * z1, l[1][0] * z1 + l[1][1] * z2];
        for &(c, sd, mu) in &self.cells {
            let z: f64 = StandardNormal.sample(rng);
            noise[c] = sd * z;
            total += sd * z;
            v[0] += mu[0] * z;
            v[1] += mu[1] * z;
        }
        // W(g_p) row by row: below[i] holds the quadrant sum at (x_i, t_{j-1})
        below.fill(0.0);
        let mut sup = 0.0f64;
        for j in 1..nt {
            let row = &noise[(nx - 1) * (j - 1)..(nx - 1) * j];
            let mut run = 0.0;
            for i in 1..nx {
                run += row[i - 1];
                below[i] += run;
            }
            let (lo, hi) = self.rows[j];
            for i in lo..=hi {
                let k = i + nx * j;
                let u = below[i] - self.a[k] * total + self.d[k][0] * v[0] + self.d[k][1] * v[1];
                sup = sup.max(u.abs());
            }
        }
        sup
    }

    /// Sorted sup-norm draws, one substream per replication.
    fn simulate_sup(&self, reps: usize, seed: u64) -> Vec<f64> {
        let cells = (self.nx - 1) * (self.nt - 1);
        let mut out: Vec<f64> = (0..reps)
            .into_par_iter()
            .map_init(
                || (vec![0.0; cells], vec![0.0; self.nx]),
                |(noise, below), rep| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(rep as u64);
                    self.draw_sup(&mut rng, noise, below)
                },
            )
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Accept,
    Reject,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Accept => "ACCEPT",
            Decision::Reject => "REJECT",
        })
    }
}

/// Rejects when the statistic strictly exceeds the critical value.
pub fn decide(statistic: f64, critical: f64) -> Decision {
    if statistic > critical {
        Decision::Reject
    } else {
        Decision::Accept
    }
}
