//! Adaptive Gauss-Kronrod quadrature, one-dimensional and iterated over
//! `[0, x] x [0, t]` intersected with the observation parallelogram.

use crate::geometry::{Point, StudyWindow};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: u32 = 40;

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }
}

fn gk15<const N: usize>(f: &mut impl FnMut(f64) -> [f64; N], a: f64, b: f64) -> ([f64; N], f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = [0.0; N];
    let mut gauss = [0.0; N];
    let fc = f(c);
    for k in 0..N {
        kron[k] = WGK[7] * fc[k];
        gauss[k] = WG[3] * fc[k];
    }
    for (i, (&xk, &wk)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let f1 = f(c - h * xk);
        let f2 = f(c + h * xk);
        for k in 0..N {
            let sum = f1[k] + f2[k];
            kron[k] += wk * sum;
            if i % 2 == 1 {
                gauss[k] += WG[i / 2] * sum;
            }
        }
    }
    let mut err = 0.0f64;
    for k in 0..N {
        kron[k] *= h;
        gauss[k] *= h;
        err = err.max((kron[k] - gauss[k]).abs());
    }
    (kron, err)
}

fn adapt<const N: usize>(
    f: &mut impl FnMut(f64) -> [f64; N],
    a: f64,
    b: f64,
    whole: ([f64; N], f64),
    tol: Tolerance,
    depth: u32,
) -> [f64; N] {
    let (value, err) = whole;
    let scale = value.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if err <= tol.abs.max(tol.rel * scale) || depth >= MAX_DEPTH || (b - a).abs() <= f64::EPSILON * a.abs().max(b.abs()) {
        return value;
    }
    let mid = 0.5 * (a + b);
    let left = gk15(f, a, mid);
    let right = gk15(f, mid, b);
    let half = Tolerance::new(0.5 * tol.abs, tol.rel);
    let l = adapt(f, a, mid, left, half, depth + 1);
    let r = adapt(f, mid, b, right, half, depth + 1);
    let mut out = [0.0; N];
    for k in 0..N {
        out[k] = l[k] + r[k];
    }
    out
}

/// Integrates a vector-valued function over `[a, b]`.
pub fn integrate<const N: usize>(mut f: impl FnMut(f64) -> [f64; N], a: f64, b: f64, tol: Tolerance) -> [f64; N] {
    if b <= a {
        return [0.0; N];
    }
    let first = gk15(&mut f, a, b);
    adapt(&mut f, a, b, first, tol, 0)
}

/// Integrates `f(x, t)` over `[0, corner.x] x [0, corner.t]` intersected with
/// `D`, as an iterated integral: outer over `t`, inner over `x` in
/// `[t, min(t + s, corner.x)]`, with the outer range split where the inner
/// upper limit changes form.
pub fn integrate_region<const N: usize>(
    f: impl Fn(f64, f64) -> [f64; N],
    w: &StudyWindow,
    corner: Point,
    tol: Tolerance,
) -> [f64; N] {
    let t_hi = corner.t.min(corner.x).min(w.g());
    if t_hi <= 0.0 {
        return [0.0; N];
    }
    let inner_tol = Tolerance::new(tol.abs * 1e-2 / t_hi.max(1.0), tol.rel * 1e-2);
    let inner = |t: f64| -> [f64; N] {
        let hi = (t + w.s()).min(corner.x);
        integrate(|x| f(x, t), t, hi, inner_tol)
    };
    let split = corner.x - w.s();
    let mut out = [0.0; N];
    let pieces: [(f64, f64); 2] = if split > 0.0 && split < t_hi {
        [(0.0, split), (split, t_hi)]
    } else {
        [(0.0, t_hi), (t_hi, t_hi)]
    };
    for (a, b) in pieces {
        let part = integrate(inner, a, b, tol);
        for k in 0..N {
            out[k] += part[k];
        }
    }
    out
}
