//! Parametric family: exponential lifetime `X ~ Exp(theta)`, uniform
//! truncation age `T ~ U(0, G)`, coupled by the product or the
//! Farlie-Gumbel-Morgenstern copula with dependence `vartheta`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{in_support, Point, StudyWindow};
use crate::quadrature::{integrate_region, Tolerance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Copula {
    Product,
    Fgm,
}

impl Copula {
    /// Number of free parameters.
    pub fn dim(self) -> usize {
        match self {
            Copula::Product => 1,
            Copula::Fgm => 2,
        }
    }
}

impl fmt::Display for Copula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Copula::Product => "product",
            Copula::Fgm => "fgm",
        })
    }
}

impl FromStr for Copula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "product" | "pi" | "independence" => Ok(Copula::Product),
            "fgm" => Ok(Copula::Fgm),
            other => Err(Error::InvalidArgument(format!("unknown copula '{other}'"))),
        }
    }
}

/// Open parameter box `theta in (eps_theta, 1/eps_theta)`,
/// `vartheta in (eps_vartheta - 1, 1 - eps_vartheta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub eps_theta: f64,
    pub eps_vartheta: f64,
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self { eps_theta: 1e-6, eps_vartheta: 1e-6 }
    }
}

impl ParamBounds {
    pub fn theta_range(&self) -> (f64, f64) {
        (self.eps_theta, 1.0 / self.eps_theta)
    }

    pub fn vartheta_range(&self) -> (f64, f64) {
        (self.eps_vartheta - 1.0, 1.0 - self.eps_vartheta)
    }

    pub fn contains(&self, theta: f64, vartheta: f64) -> bool {
        let (tl, th) = self.theta_range();
        let (vl, vh) = self.vartheta_range();
        theta > tl && theta < th && vartheta > vl && vartheta < vh
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    copula: Copula,
    theta: f64,
    vartheta: f64,
}

impl ModelParams {
    pub fn new(copula: Copula, theta: f64, vartheta: f64) -> Result<Self> {
        Self::with_bounds(copula, theta, vartheta, &ParamBounds::default())
    }

    pub fn with_bounds(copula: Copula, theta: f64, vartheta: f64, bounds: &ParamBounds) -> Result<Self> {
        let vartheta = match copula {
            Copula::Product if vartheta != 0.0 => {
                return Err(Error::InvalidParams(format!(
                    "the product copula has no dependence parameter (got vartheta = {vartheta})"
                )))
            }
            Copula::Product => 0.0,
            Copula::Fgm => vartheta,
        };
        if !bounds.contains(theta, vartheta) {
            return Err(Error::InvalidParams(format!(
                "(theta, vartheta) = ({theta}, {vartheta}) outside the parameter box {:?} x {:?}",
                bounds.theta_range(),
                bounds.vartheta_range()
            )));
        }
        Ok(Self { copula, theta, vartheta })
    }

    pub fn product(theta: f64) -> Result<Self> {
        Self::new(Copula::Product, theta, 0.0)
    }

    pub fn fgm(theta: f64, vartheta: f64) -> Result<Self> {
        Self::new(Copula::Fgm, theta, vartheta)
    }

    #[inline]
    pub fn copula(&self) -> Copula {
        self.copula
    }

    #[inline]
    pub fn theta(&self) -> f64 {
        self.theta
    }

    #[inline]
    pub fn vartheta(&self) -> f64 {
        self.vartheta
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.copula.dim()
    }
}

/// A parameter-space vector of length 1 (product) or 2 (FGM).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamVec {
    values: [f64; 2],
    dim: usize,
}

impl ParamVec {
    pub(crate) fn new(values: [f64; 2], dim: usize) -> Self {
        debug_assert!(dim == 1 || dim == 2);
        let mut values = values;
        if dim == 1 {
            values[1] = 0.0;
        }
        Self { values, dim }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.dim]
    }

    #[inline]
    pub(crate) fn raw(&self) -> [f64; 2] {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ParamVec) -> f64 {
        self.as_slice().iter().zip(other.as_slice()).map(|(a, b)| a * b).sum()
    }
}

impl std::ops::Index<usize> for ParamVec {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.as_slice()[i]
    }
}

/// Symmetric 1x1 or 2x2 matrix over parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamMatrix {
    a11: f64,
    a12: f64,
    a22: f64,
    dim: usize,
}

impl ParamMatrix {
    pub fn new_1x1(a11: f64) -> Self {
        Self { a11, a12: 0.0, a22: 0.0, dim: 1 }
    }

    pub fn new_2x2(a11: f64, a12: f64, a22: f64) -> Self {
        Self { a11, a12, a22, dim: 2 }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.dim && j < self.dim, "index ({i}, {j}) out of range");
        match (i, j) {
            (0, 0) => self.a11,
            (1, 1) => self.a22,
            _ => self.a12,
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { a11: c * self.a11, a12: c * self.a12, a22: c * self.a22, dim: self.dim }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.dim == 1 {
            return vec![self.a11];
        }
        let mean = 0.5 * (self.a11 + self.a22);
        let half_diff = 0.5 * (self.a11 - self.a22);
        let r = half_diff.hypot(self.a12);
        vec![mean - r, mean + r]
    }

    pub fn determinant(&self) -> f64 {
        if self.dim == 1 {
            self.a11
        } else {
            self.a11 * self.a22 - self.a12 * self.a12
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        let scale = self.a11.abs().max(self.a22.abs()).max(self.a12.abs());
        if !det.is_finite() || det.abs() <= 1e-14 * scale.powi(self.dim as i32) {
            return Err(Error::NotPositiveDefinite(format!("singular parameter matrix {self:?}")));
        }
        Ok(if self.dim == 1 {
            Self::new_1x1(1.0 / self.a11)
        } else {
            Self::new_2x2(self.a22 / det, -self.a12 / det, self.a11 / det)
        })
    }

    /// `u^T M v`.
    pub fn bilinear(&self, u: &ParamVec, v: &ParamVec) -> f64 {
        debug_assert_eq!(u.dim(), self.dim);
        debug_assert_eq!(v.dim(), self.dim);
        let (u, v) = (u.raw(), v.raw());
        if self.dim == 1 {
            u[0] * self.a11 * v[0]
        } else {
            u[0] * (self.a11 * v[0] + self.a12 * v[1]) + u[1] * (self.a12 * v[0] + self.a22 * v[1])
        }
    }

    pub fn apply(&self, v: &ParamVec) -> ParamVec {
        let r = v.raw();
        if self.dim == 1 {
            ParamVec::new([self.a11 * r[0], 0.0], 1)
        } else {
            ParamVec::new([self.a11 * r[0] + self.a12 * r[1], self.a12 * r[0] + self.a22 * r[1]], 2)
        }
    }
}

/// Joint density of `(X, T)` on `S = [0, inf) x [0, G]`, zero elsewhere.
pub fn density(params: &ModelParams, w: &StudyWindow, p: Point) -> f64 {
    if !(p.x >= 0.0 && p.t >= 0.0 && p.t <= w.g()) {
        return 0.0;
    }
    let g = w.g();
    let e = (-params.theta * p.x).exp();
    params.theta / g * e * (1.0 + params.vartheta * (2.0 * e - 1.0) * (1.0 - 2.0 * p.t / g))
}

/// Closed-form selection probability and its gradient `(d/dtheta, d/dvartheta)`.
/// The product copula is the `vartheta = 0` specialisation of the same formula.
fn alpha_parts(params: &ModelParams, w: &StudyWindow) -> (f64, [f64; 2]) {
    let (theta, vt) = (params.theta, params.vartheta);
    let (g, s) = (w.g(), w.s());
    let a = (-theta * s).exp();
    let b = (-theta * g).exp();
    let oma = -(-theta * s).exp_m1();
    let omb = -(-theta * g).exp_m1();

    let a0 = oma * omb / (theta * g);
    let b1 = oma * (1.0 + b) - 0.5 * oma * (1.0 + a) * (1.0 + b * b);
    let c1 = oma * omb - 0.25 * oma * (1.0 + a) * omb * (1.0 + b);
    let big_b = b1 / theta;
    let big_c = c1 / (theta * theta);
    let alpha = a0 - vt / g * big_b + 2.0 * vt / (g * g) * big_c;

    let da0 = (s * a * omb + oma * g * b) / (theta * g) - a0 / theta;
    let db1 = s * a * (1.0 + b) - g * b * oma - s * a * a * (1.0 + b * b) + g * b * b * oma * (1.0 + a);
    let dc1 = s * a * omb + g * b * oma - 0.5 * (s * a * a * omb * (1.0 + b) + g * b * b * oma * (1.0 + a));
    let d_big_b = db1 / theta - big_b / theta;
    let d_big_c = dc1 / (theta * theta) - 2.0 * big_c / theta;
    let dtheta = da0 - vt / g * d_big_b + 2.0 * vt / (g * g) * d_big_c;
    let dvartheta = -big_b / g + 2.0 * big_c / (g * g);
    (alpha, [dtheta, dvartheta])
}

/// Probability that a latent unit lands in `D`.
pub fn alpha(params: &ModelParams, w: &StudyWindow) -> Result<f64> {
    let (a, _) = alpha_parts(params, w);
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(Error::AlphaOutOfRange(a))
    }
}

/// Analytic gradient of [`alpha`]; length 1 for the product copula.
pub fn alpha_grad(params: &ModelParams, w: &StudyWindow) -> ParamVec {
    let (_, grad) = alpha_parts(params, w);
    ParamVec::new(grad, params.dim())
}

/// Everything the score needs besides the point itself.
#[derive(Debug, Clone, Copy)]
pub struct ScoreContext {
    params: ModelParams,
    window: StudyWindow,
    alpha: f64,
    dlog_alpha: [f64; 2],
}

impl ScoreContext {
    pub fn new(params: &ModelParams, w: &StudyWindow) -> Result<Self> {
        let alpha = alpha(params, w)?;
        let (_, grad) = alpha_parts(params, w);
        Ok(Self {
            params: *params,
            window: *w,
            alpha,
            dlog_alpha: [grad[0] / alpha, grad[1] / alpha],
        })
    }

    #[inline]
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn alpha_grad(&self) -> ParamVec {
        ParamVec::new(
            [self.dlog_alpha[0] * self.alpha, self.dlog_alpha[1] * self.alpha],
            self.params.dim(),
        )
    }

    /// Score on `D`, zero off `D`. The product-copula score keeps the sign
    /// `x - 1/theta + alpha'/alpha`; the FGM score is the log-likelihood
    /// gradient `1/theta - x - ...`.
    #[inline]
    pub fn score(&self, p: Point) -> ParamVec {
        let dim = self.params.dim();
        if !in_support(&self.window, p) {
            return ParamVec::new([0.0, 0.0], dim);
        }
        self.score_unchecked(p)
    }

    #[inline]
    pub(crate) fn score_unchecked(&self, p: Point) -> ParamVec {
        let theta = self.params.theta;
        match self.params.copula {
            Copula::Product => ParamVec::new([p.x - 1.0 / theta + self.dlog_alpha[0], 0.0], 1),
            Copula::Fgm => {
                let vt = self.params.vartheta;
                let e = (-theta * p.x).exp();
                let c = 1.0 - 2.0 * p.t / self.window.g();
                let den = 1.0 + vt * (2.0 * e - 1.0) * c;
                let s1 = 1.0 / theta - p.x - 2.0 * vt * p.x * e * c / den - self.dlog_alpha[0];
                let s2 = (2.0 * e - 1.0) * c / den - self.dlog_alpha[1];
                ParamVec::new([s1, s2], 2)
            }
        }
    }

    /// Sum of scores over a sample.
    pub fn score_sum(&self, points: &[Point]) -> ParamVec {
        let mut acc = [0.0; 2];
        for p in points {
            let v = self.score(*p).raw();
            acc[0] += v[0];
            acc[1] += v[1];
        }
        ParamVec::new(acc, self.params.dim())
    }
}

/// Score of a single point; zero off `D`.
pub fn score(params: &ModelParams, w: &StudyWindow, p: Point) -> Result<ParamVec> {
    Ok(ScoreContext::new(params, w)?.score(p))
}

const FISHER_TOL: Tolerance = Tolerance::new(1e-11, 1e-12);

/// `E(psi psi^T)` over `D` under the model. Closed form for the product
/// copula, quadrature for FGM.
pub fn fisher_info(params: &ModelParams, w: &StudyWindow) -> Result<ParamMatrix> {
    let ctx = ScoreContext::new(params, w)?;
    let info = match params.copula {
        Copula::Product => ParamMatrix::new_1x1(product_fisher_closed_form(params.theta, w, ctx.alpha)),
        Copula::Fgm => {
            let m = integrate_region(
                |x, t| {
                    let p = Point::new(x, t);
                    let f = density(params, w, p);
                    let s = ctx.score_unchecked(p).raw();
                    [s[0] * s[0] * f, s[0] * s[1] * f, s[1] * s[1] * f]
                },
                w,
                w.upper_corner(),
                FISHER_TOL,
            );
            ParamMatrix::new_2x2(m[0], m[1], m[2])
        }
    };
    let eig = info.eigenvalues();
    if eig.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::NotPositiveDefinite(format!("Fisher information {info:?} has eigenvalues {eig:?}")));
    }
    Ok(info)
}

fn product_fisher_closed_form(theta: f64, w: &StudyWindow, alpha: f64) -> f64 {
    // e^{-a} / (1 - e^{-a})^2 = 1 / (4 sinh^2(a/2))
    let term = |len: f64| {
        let sh = (0.5 * theta * len).sinh();
        len * len / (4.0 * sh * sh)
    };
    alpha * (2.0 / (theta * theta) - term(w.s()) - term(w.g()))
}

/// `E(d psi / d params)` in the sign convention of [`ScoreContext::score`]:
/// `+I` for the product copula, `-I` for FGM.
pub fn expected_score_jacobian(params: &ModelParams, w: &StudyWindow) -> Result<ParamMatrix> {
    let info = fisher_info(params, w)?;
    Ok(match params.copula {
        Copula::Product => info,
        Copula::Fgm => info.scale(-1.0),
    })
}

/// Kendall's tau of the FGM copula.
pub fn kendall_tau(vartheta: f64) -> f64 {
    2.0 * vartheta / 9.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    const QTOL: Tolerance = Tolerance::new(1e-13, 1e-13);

    fn win(g: f64, s: f64) -> StudyWindow {
        StudyWindow::new(g, s).unwrap()
    }

    fn d_integral(params: &ModelParams, w: &StudyWindow) -> f64 {
        integrate_region(|x, t| [density(params, w, Point::new(x, t))], w, w.upper_corner(), QTOL)[0]
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::product(0.0).is_err());
        assert!(ModelParams::product(2e6).is_err());
        assert!(ModelParams::fgm(0.1, 1.0).is_err());
        assert!(ModelParams::fgm(0.1, -1.0).is_err());
        assert!(ModelParams::new(Copula::Product, 0.1, 0.2).is_err());
        assert!(ModelParams::fgm(0.1, 0.999).is_ok());
        assert_eq!("FGM".parse::<Copula>().unwrap(), Copula::Fgm);
        assert!("gumbel".parse::<Copula>().is_err());
    }

    #[test]
    fn density_examples() {
        let w = win(2.0, 1.0);
        let p = ModelParams::product(0.5).unwrap();
        assert!((density(&p, &w, Point::new(1.0, 1.0)) - 0.25 * (-0.5f64).exp()).abs() < 1e-15);
        let f = ModelParams::fgm(0.5, 0.3).unwrap();
        for x in [0.1, 1.0, 3.7] {
            assert_eq!(density(&f, &w, Point::new(x, 1.0)), density(&p, &w, Point::new(x, 1.0)));
        }
        assert_eq!(density(&f, &w, Point::new(1.0, 2.5)), 0.0);
        assert_eq!(density(&f, &w, Point::new(-1.0, 0.5)), 0.0);
    }

    #[test]
    fn density_integrates_to_one() {
        let w = win(2.0, 1.0);
        let p = ModelParams::fgm(0.5, 0.3).unwrap();
        let total = crate::quadrature::integrate(
            |t| [crate::quadrature::integrate(|x| [density(&p, &w, Point::new(x, t))], 0.0, 50.0, QTOL)[0]],
            0.0,
            2.0,
            QTOL,
        )[0];
        // mass beyond x = 50 is e^{-25}
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn reference_alphas() {
        let w = win(24.0, 3.0);
        let a = alpha(&ModelParams::product(0.08261).unwrap(), &w).unwrap();
        assert!((a - 0.0955).abs() < 5e-4, "{a}");
        let a = alpha(&ModelParams::fgm(0.08172, 0.10256).unwrap(), &w).unwrap();
        assert!((a - 0.09753).abs() < 1e-4, "{a}");
    }

    #[test]
    fn alpha_matches_quadrature() {
        let w = win(2.0, 1.0);
        let p = ModelParams::fgm(0.5, 0.3).unwrap();
        let a = alpha(&p, &w).unwrap();
        assert!((a - d_integral(&p, &w)).abs() < 1e-10);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let w = win(0.5 + 20.0 * rng.random::<f64>(), 0.5 + 5.0 * rng.random::<f64>());
            let p = ModelParams::fgm(0.01 + rng.random::<f64>(), 1.8 * rng.random::<f64>() - 0.9).unwrap();
            let a = alpha(&p, &w).unwrap();
            assert!(a > 0.0 && a < 1.0);
            assert!((a - d_integral(&p, &w)).abs() < 1e-6);
        }
    }

    #[test]
    fn fgm_alpha_reduces_to_product() {
        let w = win(24.0, 3.0);
        for theta in [1e-3, 0.08, 2.0] {
            let p = alpha(&ModelParams::product(theta).unwrap(), &w).unwrap();
            let f = alpha(&ModelParams::fgm(theta, 0.0).unwrap(), &w).unwrap();
            assert_eq!(p, f);
        }
    }

    #[test]
    fn alpha_is_affine_in_vartheta() {
        let w = win(24.0, 3.0);
        let a = |v: f64| alpha(&ModelParams::fgm(0.08172, v).unwrap(), &w).unwrap();
        let slope = alpha_grad(&ModelParams::fgm(0.08172, 0.4).unwrap(), &w)[1];
        assert!(((a(0.7) - a(-0.2)) - 0.9 * slope).abs() < 1e-15);
    }

    #[test]
    fn alpha_grad_matches_finite_differences() {
        let w = win(24.0, 3.0);
        let h = 1e-6;
        let a = |t: f64| alpha(&ModelParams::product(t).unwrap(), &w).unwrap();
        let fd = (a(0.1 + h) - a(0.1 - h)) / (2.0 * h);
        let an = alpha_grad(&ModelParams::product(0.1).unwrap(), &w)[0];
        assert!(((fd - an) / an).abs() < 1e-6, "{fd} vs {an}");

        let (t0, v0) = (0.08172, 0.10256);
        let a = |t: f64, v: f64| alpha(&ModelParams::fgm(t, v).unwrap(), &w).unwrap();
        let g = alpha_grad(&ModelParams::fgm(t0, v0).unwrap(), &w);
        let fd_t = (a(t0 + h, v0) - a(t0 - h, v0)) / (2.0 * h);
        let fd_v = (a(t0, v0 + h) - a(t0, v0 - h)) / (2.0 * h);
        assert!(((fd_t - g[0]) / g[0]).abs() < 1e-5, "{fd_t} vs {}", g[0]);
        assert!(((fd_v - g[1]) / g[1]).abs() < 1e-5, "{fd_v} vs {}", g[1]);
    }

    #[test]
    fn score_off_support_is_zero() {
        let w = win(2.0, 1.0);
        let f = ModelParams::fgm(0.5, 0.3).unwrap();
        assert_eq!(score(&f, &w, Point::new(3.0, 0.5)).unwrap().as_slice(), &[0.0, 0.0]);
        let p = ModelParams::product(0.5).unwrap();
        assert_eq!(score(&p, &w, Point::new(0.2, 0.5)).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn dependence_score_vanishes_mid_window() {
        let w = win(2.0, 1.0);
        let f = ModelParams::fgm(0.5, 0.3).unwrap();
        let ctx = ScoreContext::new(&f, &w).unwrap();
        let expected = -alpha_grad(&f, &w)[1] / ctx.alpha();
        for x in [1.0, 1.5, 2.0] {
            assert!((ctx.score(Point::new(x, 1.0))[1] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn score_has_zero_mean_over_d() {
        let w = win(2.0, 1.0);
        for params in [ModelParams::fgm(0.5, 0.3).unwrap(), ModelParams::product(0.5).unwrap()] {
            let ctx = ScoreContext::new(&params, &w).unwrap();
            let m = integrate_region(
                |x, t| {
                    let p = Point::new(x, t);
                    let f = density(&params, &w, p);
                    let s = ctx.score_unchecked(p).raw();
                    [s[0] * f, s[1] * f]
                },
                &w,
                w.upper_corner(),
                QTOL,
            );
            assert!(m[0].abs() < 1e-7 && m[1].abs() < 1e-7, "{m:?}");
        }
    }

    #[test]
    fn product_fisher_closed_form_matches_quadrature() {
        let w = win(24.0, 3.0);
        let p = ModelParams::product(0.08261).unwrap();
        let ctx = ScoreContext::new(&p, &w).unwrap();
        let quad = integrate_region(
            |x, t| {
                let q = Point::new(x, t);
                let s = ctx.score_unchecked(q)[0];
                [s * s * density(&p, &w, q)]
            },
            &w,
            w.upper_corner(),
            QTOL,
        )[0];
        let closed = fisher_info(&p, &w).unwrap().get(0, 0);
        assert!(((closed - quad) / quad).abs() < 1e-4, "{closed} vs {quad}");
    }

    #[test]
    fn fgm_fisher_at_independence_matches_product() {
        let w = win(24.0, 3.0);
        let f = fisher_info(&ModelParams::fgm(0.08261, 0.0).unwrap(), &w).unwrap();
        let p = fisher_info(&ModelParams::product(0.08261).unwrap(), &w).unwrap();
        assert!((f.get(0, 0) - p.get(0, 0)).abs() < 1e-6, "{f:?} {p:?}");
    }

    #[test]
    fn fgm_fisher_is_positive_definite() {
        let w = win(2.0, 1.0);
        let f = fisher_info(&ModelParams::fgm(0.5, 0.3).unwrap(), &w).unwrap();
        assert_eq!(f.get(0, 1), f.get(1, 0));
        assert!(f.eigenvalues().iter().all(|e| *e > 0.0));
    }

    #[test]
    fn information_matrix_equality() {
        // I = -(d/dparams) E[psi_params] evaluated under the fixed truth.
        let w = win(2.0, 1.0);
        let truth = ModelParams::fgm(0.5, 0.3).unwrap();
        let mean_score = |p: &ModelParams| {
            let ctx = ScoreContext::new(p, &w).unwrap();
            integrate_region(
                |x, t| {
                    let q = Point::new(x, t);
                    let f = density(&truth, &w, q);
                    let s = ctx.score_unchecked(q).raw();
                    [s[0] * f, s[1] * f]
                },
                &w,
                w.upper_corner(),
                QTOL,
            )
        };
        let h = 1e-5;
        let up_t = mean_score(&ModelParams::fgm(0.5 + h, 0.3).unwrap());
        let dn_t = mean_score(&ModelParams::fgm(0.5 - h, 0.3).unwrap());
        let up_v = mean_score(&ModelParams::fgm(0.5, 0.3 + h).unwrap());
        let dn_v = mean_score(&ModelParams::fgm(0.5, 0.3 - h).unwrap());
        let jac = [
            [(up_t[0] - dn_t[0]) / (2.0 * h), (up_v[0] - dn_v[0]) / (2.0 * h)],
            [(up_t[1] - dn_t[1]) / (2.0 * h), (up_v[1] - dn_v[1]) / (2.0 * h)],
        ];
        let info = fisher_info(&truth, &w).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = info.get(i, j);
                assert!(((-jac[i][j] - expect) / expect).abs() < 1e-3, "({i},{j}) {} vs {expect}", -jac[i][j]);
            }
        }
        let ej = expected_score_jacobian(&truth, &w).unwrap();
        assert_eq!(ej.get(0, 0), -info.get(0, 0));
    }

    #[test]
    fn fgm_denominator_is_bounded_away_from_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100_000 {
            let vt = 1.98 * rng.random::<f64>() - 0.99;
            let theta = 0.001 + 3.0 * rng.random::<f64>();
            let t = 24.0 * rng.random::<f64>();
            let x = t + 3.0 * rng.random::<f64>();
            let den = 1.0 + vt * (2.0 * (-theta * x).exp() - 1.0) * (1.0 - 2.0 * t / 24.0);
            assert!(den.abs() >= 1.0 - vt.abs() - 1e-15);
        }
    }

    #[test]
    fn kendall_tau_values() {
        assert_eq!(format!("{:.3}", kendall_tau(0.10256)), "0.023");
        assert_eq!(kendall_tau(0.0), 0.0);
        assert!((kendall_tau(0.9) - 0.2).abs() < 1e-15);
    }
}
