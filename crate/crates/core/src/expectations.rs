//! Probabilities `E(g_{x,t,D}) = P((X,T) in [0,x] x [0,t] intersect D)` and
//! their parameter derivatives, in closed form.
//!
//! The region is a rectangle minus a lower and an upper triangle. Integrating
//! the density over `t` for fixed `x` leaves polynomials in `x` times
//! `exp(-theta x)` or `exp(-2 theta x)`, which are integrated exactly.

use crate::error::Result;
use crate::geometry::{effective_point, Point, StudyWindow};
use crate::model::{density, ModelParams, ParamVec, ScoreContext};
use crate::quadrature::{integrate_region, Tolerance};

/// Polynomial with ascending coefficients, degree at most 3.
type Poly = [f64; 4];

/// `int_0^h r^j exp(-lambda r) dr` for `j = 0..=3`.
fn gamma_moments(lambda: f64, h: f64) -> [f64; 4] {
    let z = lambda * h;
    let ez = (-z).exp();
    let mut out = [0.0; 4];
    if z > 4.0 {
        // forward recurrence, stable once z exceeds j
        out[0] = -(-z).exp_m1() / lambda;
        let mut hj = 1.0;
        for j in 1..4 {
            hj *= h;
            out[j] = (j as f64 * out[j - 1] - hj * ez) / lambda;
        }
    } else {
        // c_3 = sum_n (-z)^n / (n! (n+4)), then c_{j-1} = (z c_j + e^{-z}) / j
        let mut term = 1.0;
        let mut c = 0.0;
        for n in 0..60 {
            let add = term / (n + 4) as f64;
            c += add;
            if add.abs() < 1e-17 * c.abs() {
                break;
            }
            term *= -z / (n + 1) as f64;
        }
        let hp = [h, h * h, h * h * h, h * h * h * h];
        out[3] = hp[3] * c;
        for j in (1..4).rev() {
            c = (z * c + ez) / j as f64;
            out[j - 1] = hp[j - 1] * c;
        }
    }
    out
}

/// Coefficients of `r -> p(a + r)`.
fn shift(p: &Poly, a: f64) -> Poly {
    const BINOM: [[f64; 4]; 4] = [[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 2.0, 1.0, 0.0], [1.0, 3.0, 3.0, 1.0]];
    let mut q = [0.0; 4];
    for (j, qj) in q.iter_mut().enumerate() {
        let mut pow = 1.0;
        for i in j..4 {
            *qj += BINOM[i][j] * p[i] * pow;
            pow *= a;
        }
    }
    q
}

fn times_u(p: &Poly) -> Poly {
    debug_assert_eq!(p[3], 0.0);
    [0.0, p[0], p[1], p[2]]
}

/// Integrals of `p(u) exp(-k theta u)` over `[a, b]` for `k = 1, 2`.
#[derive(Clone, Copy)]
struct ExpIntegrals {
    a: f64,
    g1: [f64; 4],
    g2: [f64; 4],
    e1: f64,
    e2: f64,
}

impl ExpIntegrals {
    fn new(theta: f64, a: f64, b: f64) -> Self {
        let h = (b - a).max(0.0);
        Self {
            a,
            g1: gamma_moments(theta, h),
            g2: gamma_moments(2.0 * theta, h),
            e1: (-theta * a).exp(),
            e2: (-2.0 * theta * a).exp(),
        }
    }

    fn eval(&self, p: &Poly, k: u8) -> f64 {
        let q = shift(p, self.a);
        let (g, e) = if k == 1 { (&self.g1, self.e1) } else { (&self.g2, self.e2) };
        e * (q[0] * g[0] + q[1] * g[1] + q[2] * g[2] + q[3] * g[3])
    }
}

/// A piece of the region: `u in [a, b]`, `v in [lo(u), hi(u)]`, described by
/// `L = hi - lo` and `Q = int_lo^hi (1 - 2v/G) dv`.
struct Piece {
    a: f64,
    b: f64,
    len: Poly,
    q: Poly,
}

/// Probability of a piece and its `(d/dtheta, d/dvartheta)` derivatives.
fn piece_moments(theta: f64, vt: f64, g: f64, piece: &Piece) -> (f64, [f64; 2]) {
    if piece.b <= piece.a {
        return (0.0, [0.0, 0.0]);
    }
    let ints = ExpIntegrals::new(theta, piece.a, piece.b);
    let i1_l = ints.eval(&piece.len, 1);
    let i1_q = ints.eval(&piece.q, 1);
    let i2_q = ints.eval(&piece.q, 2);
    let bracket = i1_l - vt * i1_q + 2.0 * vt * i2_q;
    let value = theta / g * bracket;

    let u_len = times_u(&piece.len);
    let u_q = times_u(&piece.q);
    let i1_ul = ints.eval(&u_len, 1);
    let i1_uq = ints.eval(&u_q, 1);
    let i2_uq = ints.eval(&u_q, 2);
    let dtheta = bracket / g + theta / g * (-i1_ul + vt * i1_uq - 4.0 * vt * i2_uq);
    let dvartheta = theta / g * (-i1_q + 2.0 * i2_q);
    (value, [dtheta, dvartheta])
}

/// Probability of a piece only.
fn piece_value(theta: f64, vt: f64, g: f64, piece: &Piece) -> f64 {
    if piece.b <= piece.a {
        return 0.0;
    }
    let ints = ExpIntegrals::new(theta, piece.a, piece.b);
    let i1_l = ints.eval(&piece.len, 1);
    let i1_q = ints.eval(&piece.q, 1);
    let i2_q = ints.eval(&piece.q, 2);
    theta / g * (i1_l - vt * i1_q + 2.0 * vt * i2_q)
}

/// Rectangle `[0, x] x [0, t]`.
fn rect_piece(x: f64, t: f64, g: f64) -> Piece {
    Piece { a: 0.0, b: x, len: [t, 0.0, 0.0, 0.0], q: [t - t * t / g, 0.0, 0.0, 0.0] }
}

/// Lower triangle `{s <= u <= x, 0 <= v <= u - s}`.
fn lower_piece(x: f64, s: f64, g: f64) -> Piece {
    Piece {
        a: s,
        b: x,
        len: [-s, 1.0, 0.0, 0.0],
        q: [-s - s * s / g, 1.0 + 2.0 * s / g, -1.0 / g, 0.0],
    }
}

/// Upper triangle `{0 <= u <= t, u <= v <= t}`.
fn upper_piece(t: f64, g: f64) -> Piece {
    Piece { a: 0.0, b: t, len: [t, -1.0, 0.0, 0.0], q: [t - t * t / g, -1.0, 1.0 / g, 0.0] }
}

/// Value and gradient at a point already known to lie in the rectangle.
fn moments_unchecked(params: &ModelParams, w: &StudyWindow, p: Point) -> (f64, [f64; 2]) {
    let e = effective_point(w, p);
    let (theta, vt, g, s) = (params.theta(), params.vartheta(), w.g(), w.s());
    let (r, dr) = piece_moments(theta, vt, g, &rect_piece(e.x, e.t, g));
    let (lo, dlo) = piece_moments(theta, vt, g, &lower_piece(e.x, s, g));
    let (up, dup) = piece_moments(theta, vt, g, &upper_piece(e.t, g));
    let value = (r - lo - up).max(0.0);
    (value, [dr[0] - dlo[0] - dup[0], dr[1] - dlo[1] - dup[1]])
}

pub(crate) fn value_unchecked(params: &ModelParams, w: &StudyWindow, p: Point) -> f64 {
    let e = effective_point(w, p);
    let (theta, vt, g, s) = (params.theta(), params.vartheta(), w.g(), w.s());
    let r = piece_value(theta, vt, g, &rect_piece(e.x, e.t, g));
    let lo = piece_value(theta, vt, g, &lower_piece(e.x, s, g));
    let up = piece_value(theta, vt, g, &upper_piece(e.t, g));
    (r - lo - up).max(0.0)
}

/// `P((X, T) in [0, x] x [0, t] intersect D)`.
pub fn expect_g(params: &ModelParams, w: &StudyWindow, p: Point) -> Result<f64> {
    w.check_rectangle(p)?;
    Ok(value_unchecked(params, w, p))
}

/// Gradient of [`expect_g`] in the model parameters.
pub fn expect_g_grad(params: &ModelParams, w: &StudyWindow, p: Point) -> Result<ParamVec> {
    w.check_rectangle(p)?;
    Ok(ParamVec::new(moments_unchecked(params, w, p).1, params.dim()))
}

/// [`expect_g`] and [`expect_g_grad`] in one pass.
pub fn expect_g_with_grad(params: &ModelParams, w: &StudyWindow, p: Point) -> Result<(f64, ParamVec)> {
    w.check_rectangle(p)?;
    let (v, d) = moments_unchecked(params, w, p);
    Ok((v, ParamVec::new(d, params.dim())))
}

/// `E(g_{p1} g_{p2})`, the probability of the intersection of both regions.
pub fn expect_g_min(params: &ModelParams, w: &StudyWindow, p1: Point, p2: Point) -> Result<f64> {
    w.check_rectangle(p1)?;
    w.check_rectangle(p2)?;
    Ok(value_unchecked(params, w, p1.meet(p2)))
}

/// Default accuracy of [`expect_g_score`].
pub const SCORE_MOMENT_TOL: Tolerance = Tolerance::new(1e-10, 1e-10);

/// `E(g_p psi)` by quadrature, in the sign convention of the model's score.
pub fn expect_g_score(params: &ModelParams, w: &StudyWindow, p: Point) -> Result<ParamVec> {
    expect_g_score_with_tol(params, w, p, SCORE_MOMENT_TOL)
}

pub fn expect_g_score_with_tol(params: &ModelParams, w: &StudyWindow, p: Point, tol: Tolerance) -> Result<ParamVec> {
    w.check_rectangle(p)?;
    let ctx = ScoreContext::new(params, w)?;
    let m = integrate_region(
        |x, t| {
            let q = Point::new(x, t);
            let f = density(params, w, q);
            let s = ctx.score_unchecked(q);
            let s = [s.as_slice()[0], if params.dim() == 2 { s[1] } else { 0.0 }];
            [s[0] * f, s[1] * f]
        },
        w,
        p,
        tol,
    );
    Ok(ParamVec::new(m, params.dim()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{alpha, alpha_grad, Copula};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const QTOL: Tolerance = Tolerance::new(1e-13, 1e-13);

    fn win(g: f64, s: f64) -> StudyWindow {
        StudyWindow::new(g, s).unwrap()
    }

    fn quad_prob(params: &ModelParams, w: &StudyWindow, p: Point) -> f64 {
        integrate_region(|x, t| [density(params, w, Point::new(x, t))], w, p, QTOL)[0]
    }

    fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
        if rng.random::<bool>() {
            ModelParams::product(0.02 + 1.5 * rng.random::<f64>()).unwrap()
        } else {
            ModelParams::fgm(0.02 + 1.5 * rng.random::<f64>(), 1.9 * rng.random::<f64>() - 0.95).unwrap()
        }
    }

    fn random_point(rng: &mut ChaCha8Rng, w: &StudyWindow) -> Point {
        Point::new((w.g() + w.s()) * rng.random::<f64>(), w.g() * rng.random::<f64>())
    }

    // Printed closed forms for the independence model, with the exponent sign
    // in the upper-triangle derivative and the missing fraction restored.
    fn printed_product(theta: f64, w: &StudyWindow, p: Point) -> (f64, f64) {
        let (g, s) = (w.g(), w.s());
        let f1 = |x: f64, t: f64| t / g * (1.0 - (-theta * x).exp());
        let f2 = |x: f64| (-theta * x).exp() / (g * theta) * (s * theta - theta * x - 1.0) + (-theta * s).exp() / (g * theta);
        let f3 = |t: f64| (-theta * t).exp() / (g * theta) - (1.0 - t * theta) / (g * theta);
        let d1 = |x: f64, t: f64| x * t / g * (-theta * x).exp();
        let d2 = |x: f64| {
            (-theta * x).exp() / g * (x * x - s * x + x / theta + 1.0 / (theta * theta))
                - (-theta * s).exp() / (g * theta) * (s + 1.0 / theta)
        };
        let d3 = |t: f64| 1.0 / (g * theta * theta) * (1.0 - (-theta * t).exp() * (1.0 + theta * t));
        let (x, t) = (p.x, p.t);
        let in_d = t <= x && x <= t + s;
        if in_d && x > s {
            (f1(x, t) - f2(x) - f3(t), d1(x, t) - d2(x) - d3(t))
        } else if in_d {
            (f1(x, t) - f3(t), d1(x, t) - d3(t))
        } else if t < x - s {
            (f1(t + s, t) - f2(t + s) - f3(t), d1(t + s, t) - d2(t + s) - d3(t))
        } else if x > s {
            (f1(x, x) - f2(x) - f3(x), d1(x, x) - d2(x) - d3(x))
        } else {
            (f1(x, x) - f3(x), d1(x, x) - d3(x))
        }
    }

    // Printed auxiliary functions for the FGM model; the middle two dependence
    // terms of the lower triangle carry 1/(theta G), not 1/G.
    fn printed_fgm(theta: f64, vt: f64, w: &StudyWindow, p: Point) -> f64 {
        let (g, s) = (w.g(), w.s());
        let ex = |x: f64| (-theta * x).exp();
        let f1 = |x: f64, t: f64| t / g * (1.0 - ex(x)) * (1.0 + vt * ex(x) * (1.0 - t / g));
        let f2 = |x: f64| {
            (s - x) / g * ex(x) + 1.0 / (theta * g) * (ex(s) - ex(x))
                - vt / g * (x - s) * ex(x) * (1.0 - (x - s) / g) * (ex(x) - 1.0)
                - vt / (theta * g) * ex(x) * (1.0 - 2.0 * (x - s) / g) * (0.5 * ex(x) - 1.0)
                + vt / (theta * g) * ex(s) * (0.5 * ex(s) - 1.0)
                + 2.0 * vt / (g * g * theta * theta) * ex(x) * (0.25 * ex(x) - 1.0)
                - 2.0 * vt / (g * g * theta * theta) * ex(s) * (0.25 * ex(s) - 1.0)
        };
        let f3 = |t: f64| {
            t / g + 1.0 / (theta * g) * (ex(t) - 1.0) + vt / (theta * g) * ex(t) * (1.0 - 2.0 * t / g) * (0.5 * ex(t) - 1.0)
                + 0.5 * vt / (theta * g)
                - 2.0 * vt / (g * g * theta * theta) * ex(t) * (0.25 * ex(t) - 1.0)
                - 1.5 * vt / (g * g * theta * theta)
        };
        let (x, t) = (p.x, p.t);
        let in_d = t <= x && x <= t + s;
        if in_d && x > s {
            f1(x, t) - f2(x) - f3(t)
        } else if in_d {
            f1(x, t) - f3(t)
        } else if t < x - s {
            f1(t + s, t) - f2(t + s) - f3(t)
        } else if x > s {
            f1(x, x) - f2(x) - f3(x)
        } else {
            f1(x, x) - f3(x)
        }
    }

    #[test]
    fn gamma_moments_branches_agree() {
        for &(lambda, h) in &[(1.0, 3.999_999), (0.5, 7.999_999), (2.0, 1.999_999)] {
            let a = gamma_moments(lambda, h);
            let b = gamma_moments(lambda, h * (1.0 + 1e-6));
            for j in 0..4 {
                assert!(((a[j] - b[j]) / a[j]).abs() < 1e-5, "{lambda} {h} {j}");
            }
        }
        let q = |j: i32| crate::quadrature::integrate(|r| [r.powi(j) * (-1.3 * r).exp()], 0.0, 2.5, QTOL)[0];
        let m = gamma_moments(1.3, 2.5);
        for j in 0..4 {
            assert!((m[j as usize] - q(j)).abs() < 1e-13);
        }
    }

    #[test]
    fn value_path_matches_full_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let w = win(24.0, 3.0);
        for _ in 0..1000 {
            let params = random_params(&mut rng);
            let p = random_point(&mut rng, &w);
            assert_eq!(value_unchecked(&params, &w, p), moments_unchecked(&params, &w, p).0);
        }
    }

    #[test]
    fn empty_and_full_regions() {
        let w = win(24.0, 3.0);
        for p in [ModelParams::product(0.08261).unwrap(), ModelParams::fgm(0.08172, 0.10256).unwrap()] {
            assert_eq!(expect_g(&p, &w, Point::new(0.0, 0.0)).unwrap(), 0.0);
            assert_eq!(expect_g_grad(&p, &w, Point::new(0.0, 0.0)).unwrap().norm(), 0.0);
            let full = expect_g(&p, &w, w.upper_corner()).unwrap();
            assert!((full - alpha(&p, &w).unwrap()).abs() < 1e-10, "{full}");
            let dfull = expect_g_grad(&p, &w, w.upper_corner()).unwrap();
            let da = alpha_grad(&p, &w);
            for i in 0..p.dim() {
                assert!((dfull[i] - da[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_points_outside_rectangle() {
        let w = win(24.0, 3.0);
        let p = ModelParams::product(0.1).unwrap();
        assert!(expect_g(&p, &w, Point::new(27.5, 1.0)).is_err());
        assert!(expect_g_grad(&p, &w, Point::new(1.0, 24.5)).is_err());
    }

    #[test]
    fn matches_quadrature_example() {
        let w = win(2.0, 1.0);
        let p = ModelParams::fgm(0.5, 0.3).unwrap();
        let q = Point::new(1.2, 0.9);
        assert!((expect_g(&p, &w, q).unwrap() - quad_prob(&p, &w, q)).abs() < 1e-10);
    }

    #[test]
    fn matches_quadrature_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let w = win(0.5 + 30.0 * rng.random::<f64>(), 0.2 + 6.0 * rng.random::<f64>());
            let params = random_params(&mut rng);
            let p = random_point(&mut rng, &w);
            let e = expect_g(&params, &w, p).unwrap();
            assert!((e - quad_prob(&params, &w, p)).abs() < 1e-9, "{params:?} {w:?} {p:?}");
        }
    }

    #[test]
    fn printed_product_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = win(24.0, 3.0);
        for _ in 0..500 {
            let theta = 0.01 + rng.random::<f64>();
            let params = ModelParams::product(theta).unwrap();
            let p = random_point(&mut rng, &w);
            let (e, d) = printed_product(theta, &w, p);
            assert!((expect_g(&params, &w, p).unwrap() - e).abs() < 1e-12);
            assert!((expect_g_grad(&params, &w, p).unwrap()[0] - d).abs() < 1e-9);
        }
    }

    #[test]
    fn printed_fgm_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w = win(24.0, 3.0);
        for _ in 0..500 {
            let (theta, vt) = (0.01 + rng.random::<f64>(), 1.8 * rng.random::<f64>() - 0.9);
            let params = ModelParams::fgm(theta, vt).unwrap();
            let p = random_point(&mut rng, &w);
            let e = printed_fgm(theta, vt, &w, p);
            assert!((expect_g(&params, &w, p).unwrap() - e).abs() < 1e-12, "{theta} {vt} {p:?}");
        }
    }

    #[test]
    fn fgm_at_independence_is_bitwise_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let w = win(24.0, 3.0);
        for _ in 0..1000 {
            let theta = 0.01 + rng.random::<f64>();
            let p = random_point(&mut rng, &w);
            let a = expect_g(&ModelParams::product(theta).unwrap(), &w, p).unwrap();
            let b = expect_g(&ModelParams::fgm(theta, 0.0).unwrap(), &w, p).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn monotone_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..10 {
            let w = win(1.0 + 25.0 * rng.random::<f64>(), 0.5 + 4.0 * rng.random::<f64>());
            let params = random_params(&mut rng);
            let a = alpha(&params, &w).unwrap();
            let n = 50;
            let xs: Vec<f64> = (0..n).map(|i| ((w.g() + w.s()) * i as f64 / (n - 1) as f64).min(w.g() + w.s())).collect();
            let ts: Vec<f64> = (0..n).map(|i| (w.g() * i as f64 / (n - 1) as f64).min(w.g())).collect();
            let grid: Vec<Vec<f64>> = xs
                .iter()
                .map(|&x| ts.iter().map(|&t| expect_g(&params, &w, Point::new(x, t)).unwrap()).collect())
                .collect();
            for i in 0..n {
                for j in 0..n {
                    let v = grid[i][j];
                    assert!(v >= 0.0 && v <= a + 1e-12);
                    if i > 0 {
                        assert!(v >= grid[i - 1][j] - 1e-13);
                    }
                    if j > 0 {
                        assert!(v >= grid[i][j - 1] - 1e-13);
                    }
                }
            }
        }
    }

    #[test]
    fn vartheta_derivative_is_exact_slope() {
        let w = win(24.0, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..100 {
            let theta = 0.02 + rng.random::<f64>();
            let p = random_point(&mut rng, &w);
            let e = |v: f64| expect_g(&ModelParams::fgm(theta, v).unwrap(), &w, p).unwrap();
            let slope = (e(0.6) - e(-0.3)) / 0.9;
            let d = expect_g_grad(&ModelParams::fgm(theta, 0.2).unwrap(), &w, p).unwrap()[1];
            assert!((slope - d).abs() < 1e-13, "{slope} {d}");
        }
    }

    #[test]
    fn theta_derivative_matches_finite_differences() {
        let w = win(24.0, 3.0);
        let p = Point::new(10.0, 8.0);
        let e = |t: f64| expect_g(&ModelParams::product(t).unwrap(), &w, p).unwrap();
        let h = 1e-6;
        let fd = (e(0.1 + h) - e(0.1 - h)) / (2.0 * h);
        let d = expect_g_grad(&ModelParams::product(0.1).unwrap(), &w, p).unwrap()[0];
        assert!(((fd - d) / d).abs() < 1e-5);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut checked = 0;
        while checked < 100 {
            let w = win(1.0 + 25.0 * rng.random::<f64>(), 0.5 + 4.0 * rng.random::<f64>());
            let params = random_params(&mut rng);
            let p = random_point(&mut rng, &w);
            let theta = params.theta();
            let h = 1e-5 * theta;
            let at = |t: f64| {
                let q = ModelParams::new(params.copula(), t, params.vartheta()).unwrap();
                expect_g(&q, &w, p).unwrap()
            };
            let fd = (at(theta + h) - at(theta - h)) / (2.0 * h);
            let d = expect_g_grad(&params, &w, p).unwrap()[0];
            if d.abs() < 1e-8 {
                continue;
            }
            assert!(((fd - d) / d).abs() < 1e-4, "{params:?} {p:?}: {fd} vs {d}");
            checked += 1;
        }
    }

    #[test]
    fn continuous_across_case_boundaries() {
        let w = win(24.0, 3.0);
        let params = ModelParams::fgm(0.08, 0.4).unwrap();
        let e = |x: f64, t: f64| expect_g(&params, &w, Point::new(x, t)).unwrap();
        let eps = 1e-9;
        // x = t, x = t + s, x = s
        for t in [1.0, 5.0, 20.0] {
            assert!((e(t + eps, t) - e(t - eps, t)).abs() < 1e-6);
            assert!((e(t + 3.0 + eps, t) - e(t + 3.0 - eps, t)).abs() < 1e-6);
        }
        for t in [3.0, 10.0] {
            assert!((e(3.0 + eps, t) - e(3.0 - eps, t)).abs() < 1e-6);
        }
    }

    #[test]
    fn min_term() {
        let w = win(2.0, 1.0);
        let params = ModelParams::fgm(0.5, 0.3).unwrap();
        let p = Point::new(1.2, 0.9);
        assert_eq!(expect_g_min(&params, &w, p, p).unwrap(), expect_g(&params, &w, p).unwrap());
        assert_eq!(expect_g_min(&params, &w, w.upper_corner(), p).unwrap(), expect_g(&params, &w, p).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for _ in 0..20 {
            let (a, b) = (random_point(&mut rng, &w), random_point(&mut rng, &w));
            let corner = Point::new(if a.x < b.x { a.x } else { b.x }, if a.t < b.t { a.t } else { b.t });
            let quad = quad_prob(&params, &w, corner);
            assert!((expect_g_min(&params, &w, a, b).unwrap() - quad).abs() < 1e-6);
        }
    }

    #[test]
    fn score_moments_vanish_at_extremes() {
        let w = win(2.0, 1.0);
        for params in [ModelParams::fgm(0.5, 0.3).unwrap(), ModelParams::product(0.5).unwrap()] {
            assert_eq!(expect_g_score(&params, &w, Point::new(0.0, 0.0)).unwrap().norm(), 0.0);
            assert!(expect_g_score(&params, &w, w.upper_corner()).unwrap().norm() < 1e-7);
        }
    }

    #[test]
    fn score_moment_identity() {
        // E(g psi_loglik) = dE/dparams - E(g) alpha'/alpha
        let w = win(24.0, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..10 {
            let params = ModelParams::fgm(0.08172, 0.10256).unwrap();
            let p = random_point(&mut rng, &w);
            let (e, de) = expect_g_with_grad(&params, &w, p).unwrap();
            let da = alpha_grad(&params, &w);
            let a = alpha(&params, &w).unwrap();
            let m = expect_g_score(&params, &w, p).unwrap();
            for i in 0..2 {
                assert!((m[i] - (de[i] - e * da[i] / a)).abs() < 1e-8);
            }
        }
        assert_eq!(Copula::Fgm.dim(), 2);
    }
}
