//! Observation parallelogram and the finite candidate point sets.
//!
//! A latent unit `(x, t)` (lifetime, age at study start) is observed iff it
//! lies in `D = {0 < t <= x <= t + s, t <= G}`. Every set-valued function
//! below returns points inside the bounding rectangle `[0, G + s] x [0, G]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Birth-window length `G` and study length `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyWindow {
    g: f64,
    s: f64,
}

impl StudyWindow {
    pub fn new(g: f64, s: f64) -> Result<Self> {
        if !(g.is_finite() && g > 0.0) {
            return Err(Error::InvalidWindow(format!("G must be finite and > 0, got {g}")));
        }
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidWindow(format!("s must be finite and > 0, got {s}")));
        }
        Ok(Self { g, s })
    }

    #[inline]
    pub fn g(&self) -> f64 {
        self.g
    }

    #[inline]
    pub fn s(&self) -> f64 {
        self.s
    }

    /// Upper-right corner `(G + s, G)` of the bounding rectangle.
    #[inline]
    pub fn upper_corner(&self) -> Point {
        Point::new(self.g + self.s, self.g)
    }

    #[inline]
    pub fn in_rectangle(&self, p: Point) -> bool {
        p.x >= 0.0 && p.t >= 0.0 && p.x <= self.g + self.s && p.t <= self.g
    }

    pub(crate) fn check_rectangle(&self, p: Point) -> Result<()> {
        if self.in_rectangle(p) {
            Ok(())
        } else {
            Err(Error::OutsideRectangle {
                x: p.x,
                t: p.t,
                x_max: self.g + self.s,
                t_max: self.g,
            })
        }
    }
}

/// A point `(x, t)`: lifetime coordinate and truncation-age coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub t: f64,
}

impl Point {
    #[inline]
    pub const fn new(x: f64, t: f64) -> Self {
        Self { x, t }
    }

    /// Componentwise minimum.
    #[inline]
    pub fn meet(self, other: Point) -> Point {
        Point::new(self.x.min(other.x), self.t.min(other.t))
    }

    fn key(self) -> (u64, u64) {
        // +0.0 and -0.0 must collapse to one key.
        ((self.x + 0.0).to_bits(), (self.t + 0.0).to_bits())
    }
}

/// `0 < t <= x <= t + s` and `t <= G`.
#[inline]
pub fn in_support(w: &StudyWindow, p: Point) -> bool {
    0.0 < p.t && p.t <= p.x && p.x <= p.t + w.s && p.t <= w.g
}

/// A truncated sample. Every point lies in `D`; duplicates are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    points: Vec<Point>,
    window: StudyWindow,
}

impl ObservationSet {
    /// Fails on the first point outside `D` (index reported). An empty list
    /// is accepted here; operations that need data reject it themselves.
    pub fn new(points: Vec<Point>, window: StudyWindow) -> Result<Self> {
        if let Some((index, p)) = points
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.x.is_finite() && p.t.is_finite() && in_support(&window, **p)))
        {
            return Err(Error::OutsideSupport { index, x: p.x, t: p.t });
        }
        Ok(Self { points, window })
    }

    /// Keeps only the points inside `D`, preserving order.
    pub fn filtered(points: impl IntoIterator<Item = Point>, window: StudyWindow) -> Self {
        let points = points
            .into_iter()
            .filter(|p| p.x.is_finite() && p.t.is_finite() && in_support(&window, *p))
            .collect();
        Self { points, window }
    }

    #[inline]
    pub fn points(&self) -> &[Point] {
        &self.points
    }

    #[inline]
    pub fn window(&self) -> &StudyWindow {
        &self.window
    }

    /// Observed sample size `m`.
    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn dedup_points(mut pts: Vec<Point>) -> Vec<Point> {
    pts.sort_unstable_by(|a, b| a.x.total_cmp(&b.x).then(a.t.total_cmp(&b.t)));
    pts.dedup_by_key(|p| p.key());
    pts
}

/// Crossings `(x_j, t_j')` of discordant pairs (`x_j' < x_j`, `t_j' > t_j`),
/// deduplicated and sorted by `(x, t)`. Ties produce no point.
pub fn intersection_points(obs: &ObservationSet) -> Vec<Point> {
    let pts = obs.points();
    let raw: Vec<Point> = pts
        .par_iter()
        .flat_map_iter(|pj| {
            pts.iter()
                .filter(move |pk| pk.x < pj.x && pk.t > pj.t)
                .map(move |pk| Point::new(pj.x, pk.t))
        })
        .collect();
    dedup_points(raw)
}

/// Projections of each observation onto the upper/left boundary
/// `(x_j, min(x_j, G))` and onto the right edge `(t_j + s, t_j)`.
pub fn edge_projections(w: &StudyWindow, obs: &ObservationSet) -> Vec<Point> {
    let raw = obs
        .points()
        .iter()
        .flat_map(|p| [Point::new(p.x, p.x.min(w.g)), Point::new(p.t + w.s, p.t)])
        .collect();
    dedup_points(raw)
}

/// The origin and the three corner points `(G, 0)`, `(s, G)`, `(G + s, G)`
/// evaluated by the corner step of the statistic.
pub fn corner_points(w: &StudyWindow) -> (Point, [Point; 3]) {
    (
        Point::new(0.0, 0.0),
        [
            Point::new(w.g, 0.0),
            Point::new(w.s, w.g),
            Point::new(w.g + w.s, w.g),
        ],
    )
}

/// Position of a point of the bounding rectangle relative to `D`. Each case
/// determines which part of `[0, x] x [0, t]` intersects `D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionCase {
    /// In `D` (closed), `x > s`.
    InsideRight = 1,
    /// In `D` (closed), `x <= s`.
    InsideLeft = 2,
    /// Right of `D`: `t < x - s`.
    RightOfD = 3,
    /// Above `D`: `x < t`, `x > s`.
    AboveRight = 4,
    /// Above `D`: `x < t`, `x <= s`.
    AboveLeft = 5,
}

impl RegionCase {
    pub fn number(self) -> u8 {
        self as u8
    }
}

/// Classifies `p` with exact comparisons; `t <= x` and `x <= t + s` are
/// closed, so the diagonal and the right edge belong to the inside cases.
pub fn region_case(w: &StudyWindow, p: Point) -> Result<RegionCase> {
    w.check_rectangle(p)?;
    Ok(region_case_unchecked(w, p))
}

#[inline]
pub(crate) fn region_case_unchecked(w: &StudyWindow, p: Point) -> RegionCase {
    if p.x < p.t {
        if p.x > w.s {
            RegionCase::AboveRight
        } else {
            RegionCase::AboveLeft
        }
    } else if p.x > p.t + w.s {
        RegionCase::RightOfD
    } else if p.x > w.s {
        RegionCase::InsideRight
    } else {
        RegionCase::InsideLeft
    }
}

/// The point of closed `D` whose lower-left rectangle meets `D` in the same
/// set as `[0, x] x [0, t]` does.
#[inline]
pub fn effective_point(w: &StudyWindow, p: Point) -> Point {
    match region_case_unchecked(w, p) {
        RegionCase::InsideRight | RegionCase::InsideLeft => p,
        RegionCase::RightOfD => Point::new(p.t + w.s, p.t),
        RegionCase::AboveRight | RegionCase::AboveLeft => Point::new(p.x, p.x),
    }
}
