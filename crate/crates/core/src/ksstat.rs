//! The composite Kolmogorov-Smirnov statistic
//! `sqrt(alpha m) sup |F_emp - F_theo|` over the observation rectangle,
//! evaluated exactly on a finite candidate set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expectations::{expect_g, value_unchecked};
use crate::geometry::{corner_points, edge_projections, ObservationSet, Point, StudyWindow};
use crate::model::{alpha, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticBreakdown {
    /// The five partial maxima; `delta[1]` and `delta[2]` are `-inf` when
    /// the sample has no discordant pair.
    pub delta: [f64; 5],
    pub statistic: f64,
    pub evaluation_count: usize,
    pub alpha: f64,
    pub m: usize,
    pub intersections: usize,
    pub projections: usize,
}

impl StatisticBreakdown {
    pub fn max_delta(&self) -> f64 {
        self.delta.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Fenwick tree of counts.
struct Fenwick {
    tree: Vec<u32>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }

    fn add(&mut self, index: usize) {
        let mut i = index + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted indices `< end`.
    fn prefix(&self, end: usize) -> u32 {
        let mut i = end;
        let mut total = 0;
        while i > 0 {
            total += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        total
    }
}

/// Counts `#{j : x_j <= x, t_j <= t}` (closed) or with strict inequalities,
/// for many query points at once.
fn dominance_counts(points: &[Point], queries: &[Point], strict: bool) -> Vec<u32> {
    let mut ts: Vec<f64> = points.iter().map(|p| p.t).collect();
    ts.sort_by(f64::total_cmp);
    let rank = |t: f64, strict: bool| {
        if strict {
            ts.partition_point(|&v| v < t)
        } else {
            ts.partition_point(|&v| v <= t)
        }
    };
    let mut by_x: Vec<&Point> = points.iter().collect();
    by_x.sort_by(|a, b| a.x.total_cmp(&b.x));
    let mut order: Vec<usize> = (0..queries.len()).collect();
    order.sort_by(|&a, &b| queries[a].x.total_cmp(&queries[b].x));

    let mut tree = Fenwick::new(ts.len());
    let mut next = 0;
    let mut out = vec![0; queries.len()];
    for qi in order {
        let q = queries[qi];
        while next < by_x.len() && (if strict { by_x[next].x < q.x } else { by_x[next].x <= q.x }) {
            // position among equal t values is irrelevant for counting
            tree.add(rank(by_x[next].t, true));
            next += 1;
        }
        out[qi] = tree.prefix(rank(q.t, strict));
    }
    out
}

/// `(1/m) #{j : x_j <= x, t_j <= t}`.
pub fn empirical_cdf(obs: &ObservationSet, p: Point) -> f64 {
    let count = obs.points().iter().filter(|o| o.x <= p.x && o.t <= p.t).count();
    count as f64 / obs.len().max(1) as f64
}

/// Left limit `(1/m) #{j : x_j < x, t_j < t}`.
pub fn empirical_cdf_left(obs: &ObservationSet, p: Point) -> f64 {
    let count = obs.points().iter().filter(|o| o.x < p.x && o.t < p.t).count();
    count as f64 / obs.len().max(1) as f64
}

/// Distribution function of an observation: `E(g_p) / alpha`.
pub fn theoretical_obs_cdf(params: &ModelParams, w: &StudyWindow, p: Point) -> Result<f64> {
    Ok(expect_g(params, w, p)? / alpha(params, w)?)
}

fn theo_batch(params: &ModelParams, w: &StudyWindow, a: f64, pts: &[Point]) -> Result<Vec<f64>> {
    pts.par_iter().map(|p| Ok(expect_g(params, w, *p)? / a)).collect()
}

/// `max(F_emp - F_theo)` and `max(F_theo - F_emp(left limit))` over the
/// discordant-pair crossings, with the number of distinct crossings.
///
/// The crossings are streamed rather than collected: for each distinct
/// abscissa `X` the points are swept in order of `t`, so memory stays linear
/// in `m` although there can be `m(m-1)/2` crossings.
fn intersection_extremes(params: &ModelParams, w: &StudyWindow, a: f64, pts: &[Point]) -> (f64, f64, usize) {
    let mf = pts.len() as f64;
    let mut by_t: Vec<Point> = pts.to_vec();
    by_t.sort_unstable_by(|p, q| p.t.total_cmp(&q.t).then(p.x.total_cmp(&q.x)));
    // lowest t among the points sharing each abscissa
    let mut by_x: Vec<Point> = pts.to_vec();
    by_x.sort_unstable_by(|p, q| p.x.total_cmp(&q.x).then(p.t.total_cmp(&q.t)));
    by_x.dedup_by(|p, q| p.x == q.x);

    let neutral = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0usize);
    by_x.par_iter()
        .map(|pj| {
            let (x, t_low) = (pj.x, pj.t);
            let (mut le, mut lt) = (0usize, 0usize);
            let mut acc = neutral;
            let mut i = 0;
            while i < by_t.len() {
                let t = by_t[i].t;
                let strict = lt;
                let mut crossing = false;
                while i < by_t.len() && by_t[i].t == t {
                    let xi = by_t[i].x;
                    if xi <= x {
                        le += 1;
                    }
                    if xi < x {
                        lt += 1;
                        crossing = true;
                    }
                    i += 1;
                }
                if crossing && t > t_low {
                    let f = value_unchecked(params, w, Point::new(x, t)) / a;
                    acc.0 = acc.0.max(le as f64 / mf - f);
                    acc.1 = acc.1.max(f - strict as f64 / mf);
                    acc.2 += 1;
                }
            }
            acc
        })
        .reduce(|| neutral, |p, q| (p.0.max(q.0), p.1.max(q.1), p.2 + q.2))
}

/// Exact statistic from the finite candidate set.
///
/// `delta[0]`: `F_emp - F_theo` at the observations; `delta[1]`: the same at
/// the intersections `I`; `delta[2]`, `delta[3]`: `F_theo - F_emp(left limit)`
/// at `I` and at the edge projections `P`; `delta[4]`: the origin and the
/// three corners. For samples without ties the left limit at a point of `I`
/// drops exactly two observations and at a point of `P` exactly one.
pub fn ks_statistic(obs: &ObservationSet, params: &ModelParams) -> Result<StatisticBreakdown> {
    if obs.is_empty() {
        return Err(Error::EmptySample);
    }
    let w = obs.window();
    let m = obs.len();
    let mf = m as f64;
    let a = alpha(params, w)?;
    let pts = obs.points();

    let (d2, d3, n_inter) = intersection_extremes(params, w, a, pts);
    let proj = edge_projections(w, obs);
    let (origin, corners) = corner_points(w);

    let plus_max = |cands: &[Point]| -> Result<f64> {
        let theo = theo_batch(params, w, a, cands)?;
        let cnt = dominance_counts(pts, cands, false);
        Ok(theo.iter().zip(&cnt).map(|(f, &c)| c as f64 / mf - f).fold(f64::NEG_INFINITY, f64::max))
    };
    let minus_max = |cands: &[Point]| -> Result<f64> {
        let theo = theo_batch(params, w, a, cands)?;
        let cnt = dominance_counts(pts, cands, true);
        Ok(theo.iter().zip(&cnt).map(|(f, &c)| f - c as f64 / mf).fold(f64::NEG_INFINITY, f64::max))
    };

    let d1 = plus_max(pts)?;
    let d4 = minus_max(&proj)?;
    let d_origin = empirical_cdf(obs, origin) - expect_g(params, w, origin)? / a;
    let mut d5 = d_origin;
    for c in corners {
        d5 = d5.max(expect_g(params, w, c)? / a - empirical_cdf(obs, c));
    }
    let delta = [d1, d2, d3, d4, d5];
    let sup = delta.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    Ok(StatisticBreakdown {
        delta,
        statistic: (a * mf).sqrt() * sup,
        evaluation_count: m + n_inter + proj.len() + 4,
        alpha: a,
        m,
        intersections: n_inter,
        projections: proj.len(),
    })
}

/// Model distribution function tabulated on an origin-aligned lattice of
/// the rectangle `[0, G+s] x [0, G]`, reusable across samples.
#[derive(Debug, Clone)]
pub struct ObsCdfGrid {
    window: StudyWindow,
    alpha: f64,
    xs: Vec<f64>,
    ts: Vec<f64>,
    /// Row-major over `ts`, then `xs`.
    values: Vec<f64>,
}

impl ObsCdfGrid {
    pub fn new(params: &ModelParams, w: &StudyWindow, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid step must be positive, got {step}")));
        }
        let a = alpha(params, w)?;
        let axis = |hi: f64| -> Vec<f64> {
            let n = (hi / step + 1e-9).floor() as usize;
            let mut v: Vec<f64> = (0..=n).map(|i| (i as f64 * step).min(hi)).collect();
            if *v.last().unwrap() < hi {
                v.push(hi);
            }
            v
        };
        let xs = axis(w.g() + w.s());
        let ts = axis(w.g());
        let values = ts
            .par_iter()
            .flat_map_iter(|&t| xs.iter().map(move |&x| value_unchecked(params, w, Point::new(x, t)) / a))
            .collect();
        Ok(Self { window: *w, alpha: a, xs, ts, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `sqrt(alpha m)` times the largest of `|F_emp - F_theo|` and
    /// `|F_emp(left limit) - F_theo|` over the lattice.
    pub fn statistic(&self, obs: &ObservationSet) -> Result<f64> {
        if obs.is_empty() {
            return Err(Error::EmptySample);
        }
        if obs.window() != &self.window {
            return Err(Error::InvalidArgument("sample and grid use different windows".into()));
        }
        let xs = &self.xs;
        let mf = obs.len() as f64;
        let mut by_t: Vec<Point> = obs.points().to_vec();
        by_t.sort_by(|p, q| p.t.total_cmp(&q.t));
        let col_closed: Vec<usize> = by_t.iter().map(|p| xs.partition_point(|&x| x < p.x)).collect();
        let col_strict: Vec<usize> = by_t.iter().map(|p| xs.partition_point(|&x| x <= p.x)).collect();
        let best = self
            .ts
            .par_iter()
            .enumerate()
            .map(|(row, &t)| {
                let n_closed = by_t.partition_point(|p| p.t <= t);
                let n_strict = by_t.partition_point(|p| p.t < t);
                let mut hist_c = vec![0u32; xs.len() + 1];
                let mut hist_s = vec![0u32; xs.len() + 1];
                for &c in &col_closed[..n_closed] {
                    hist_c[c] += 1;
                }
                for &c in &col_strict[..n_strict] {
                    hist_s[c] += 1;
                }
                let vals = &self.values[row * xs.len()..(row + 1) * xs.len()];
                let (mut cc, mut cs) = (0u32, 0u32);
                let mut row_best = 0.0f64;
                for (i, &f) in vals.iter().enumerate() {
                    cc += hist_c[i];
                    cs += hist_s[i];
                    row_best = row_best.max((cc as f64 / mf - f).abs()).max((cs as f64 / mf - f).abs());
                }
                row_best
            })
            .collect::<Vec<f64>>()
            .into_iter()
            .fold(0.0, f64::max);
        Ok((self.alpha * mf).sqrt() * best)
    }
}

/// Grid approximation of the statistic, a lower bound that converges to
/// [`ks_statistic`] as the step shrinks.
pub fn ks_statistic_bruteforce(obs: &ObservationSet, params: &ModelParams, step: f64) -> Result<f64> {
    ObsCdfGrid::new(params, obs.window(), step)?.statistic(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Copula;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(rng: &mut ChaCha8Rng, w: &StudyWindow, m: usize) -> ObservationSet {
        let pts = (0..m)
            .map(|_| {
                let t = w.g() * (1.0 - rng.random::<f64>());
                Point::new(t + w.s() * rng.random::<f64>(), t)
            })
            .collect();
        ObservationSet::new(pts, *w).unwrap()
    }

    #[test]
    fn empirical_cdf_examples() {
        let w = StudyWindow::new(24.0, 3.0).unwrap();
        let obs = ObservationSet::new(vec![Point::new(3.0, 1.0), Point::new(2.0, 1.8)], w).unwrap();
        assert_eq!(empirical_cdf(&obs, Point::new(2.5, 2.0)), 0.5);
        assert_eq!(empirical_cdf(&obs, Point::new(0.5, 0.5)), 0.0);
        assert_eq!(empirical_cdf(&obs, w.upper_corner()), 1.0);
        assert_eq!(empirical_cdf_left(&obs, Point::new(3.0, 1.8)), 0.0);
    }

    #[test]
    fn streamed_crossings_match_collected_set() {
        use crate::geometry::intersection_points;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = StudyWindow::new(6.0, 2.0).unwrap();
        let params = ModelParams::fgm(0.3, 0.4).unwrap();
        let a = alpha(&params, &w).unwrap();
        for round in 0..6 {
            let mut pts = sample(&mut rng, &w, 150).points().to_vec();
            if round % 2 == 1 {
                // rounded coordinates force ties in both axes
                pts = pts
                    .into_iter()
                    .map(|p| {
                        let t = ((p.t * 4.0).round() / 4.0).max(0.25);
                        Point::new(((p.x * 4.0).round() / 4.0).clamp(t, t + w.s()), t)
                    })
                    .collect();
            }
            let obs = ObservationSet::new(pts, w).unwrap();
            let inter = intersection_points(&obs);
            let m = obs.len() as f64;
            let f: Vec<f64> = inter.iter().map(|p| expect_g(&params, &w, *p).unwrap() / a).collect();
            let closed = dominance_counts(obs.points(), &inter, false);
            let strict = dominance_counts(obs.points(), &inter, true);
            let d2 = f.iter().zip(&closed).map(|(f, &c)| c as f64 / m - f).fold(f64::NEG_INFINITY, f64::max);
            let d3 = f.iter().zip(&strict).map(|(f, &c)| f - c as f64 / m).fold(f64::NEG_INFINITY, f64::max);
            let (s2, s3, n) = intersection_extremes(&params, &w, a, obs.points());
            assert_eq!(n, inter.len());
            assert!((s2 - d2).abs() < 1e-14 && (s3 - d3).abs() < 1e-14, "{s2} {d2} {s3} {d3}");
        }
    }

    #[test]
    fn dominance_counts_match_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = StudyWindow::new(5.0, 2.0).unwrap();
        let mut obs = sample(&mut rng, &w, 200).points().to_vec();
        obs.extend_from_within(..20);
        let mut queries: Vec<Point> = (0..300).map(|_| Point::new(7.0 * rng.random::<f64>(), 5.0 * rng.random::<f64>())).collect();
        queries.extend(obs.iter().take(30));
        let set = ObservationSet::new(obs.clone(), w).unwrap();
        let closed = dominance_counts(&obs, &queries, false);
        let strict = dominance_counts(&obs, &queries, true);
        for (i, q) in queries.iter().enumerate() {
            assert_eq!(closed[i] as f64 / obs.len() as f64, empirical_cdf(&set, *q));
            assert_eq!(strict[i] as f64 / obs.len() as f64, empirical_cdf_left(&set, *q));
        }
    }

    #[test]
    fn theoretical_cdf_endpoints() {
        let w = StudyWindow::new(24.0, 3.0).unwrap();
        let p = ModelParams::fgm(0.08172, 0.10256).unwrap();
        assert_eq!(theoretical_obs_cdf(&p, &w, Point::new(0.0, 0.0)).unwrap(), 0.0);
        assert!((theoretical_obs_cdf(&p, &w, w.upper_corner()).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn single_observation_matches_grid() {
        let w = StudyWindow::new(4.0, 1.0).unwrap();
        let obs = ObservationSet::new(vec![Point::new(2.0, 1.5)], w).unwrap();
        let p = ModelParams::product(0.5).unwrap();
        let exact = ks_statistic(&obs, &p).unwrap();
        let brute = ks_statistic_bruteforce(&obs, &p, 1e-3).unwrap();
        let a = exact.alpha;
        let lip = 2.0 * 0.5 / 4.0 / a;
        assert!(brute <= exact.statistic + 1e-9);
        assert!(exact.statistic - brute <= a.sqrt() * lip * 1e-3, "{} {brute}", exact.statistic);
        assert_eq!(exact.intersections, 0);
        assert_eq!(exact.evaluation_count, 1 + 2 + 4);
        assert_eq!(exact.delta[1], f64::NEG_INFINITY);
    }

    #[test]
    fn permutation_invariant_and_bounded_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = StudyWindow::new(10.0, 2.0).unwrap();
        let obs = sample(&mut rng, &w, 120);
        let p = ModelParams::new(Copula::Fgm, 0.3, 0.2).unwrap();
        let a = ks_statistic(&obs, &p).unwrap();
        let mut pts = obs.points().to_vec();
        pts.reverse();
        pts.swap(3, 70);
        let b = ks_statistic(&ObservationSet::new(pts, w).unwrap(), &p).unwrap();
        assert_eq!(a.statistic.to_bits(), b.statistic.to_bits());
        let m = 120;
        assert!(a.statistic >= 0.0);
        assert!(a.evaluation_count >= 3 * m + 4 && a.evaluation_count <= 3 * m + m * (m - 1) / 2 + 4);
    }

    #[test]
    fn bruteforce_refinement_is_nondecreasing_on_nested_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = StudyWindow::new(2.0, 1.0).unwrap();
        let obs = sample(&mut rng, &w, 15);
        let p = ModelParams::product(0.7).unwrap();
        let coarse = ks_statistic_bruteforce(&obs, &p, 0.125).unwrap();
        let fine = ks_statistic_bruteforce(&obs, &p, 0.0625).unwrap();
        assert!(fine >= coarse - 1e-12);
    }
}
