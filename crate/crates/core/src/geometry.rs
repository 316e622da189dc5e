//! Euclidean primitives and the proxy-line constructions used by the
//! landscape verifiers.
//!
//! For a ground-truth proxy `p_c` and an opposite-class proxy `p_c'`:
//!
//! * `L_p` is the infinite line through both proxies, parametrized by the
//!   signed distance `t` from `p_c`, positive on the side away from `p_c'`.
//! * `D_r(p_c')` is the sphere of radius `r` around `p_c'`; `e_*` and `e^*`
//!   are its intersections with `L_p` nearest to and farthest from `p_c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in n-dimensional Euclidean space with finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::EmptyPoint);
        }
        if let Some(index) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Point(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Point(vec![0.0; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    /// `self + scale * dir`.
    pub fn offset(&self, dir: &[f64], scale: f64) -> Point {
        Point(
            self.0
                .iter()
                .zip(dir)
                .map(|(a, d)| a + scale * d)
                .collect(),
        )
    }

    pub fn translate(&self, by: &[f64]) -> Point {
        self.offset(by, 1.0)
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Point::new(v)
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Self {
        p.0
    }
}

pub(crate) fn check_dims(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        })
    }
}

/// Euclidean distance between raw coordinate slices of equal length.
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn distance(a: &Point, b: &Point) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok(dist(&a.0, &b.0))
}

/// Ground-truth proxy `p_c` and opposite-class proxy `p_c'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyPair {
    p_c: Point,
    p_cprime: Point,
}

impl ProxyPair {
    pub fn new(p_c: Point, p_cprime: Point) -> Result<Self> {
        check_dims(p_c.dim(), p_cprime.dim())?;
        if dist(&p_c.0, &p_cprime.0) <= 0.0 {
            return Err(Error::CoincidentProxies);
        }
        Ok(ProxyPair { p_c, p_cprime })
    }

    pub fn p_c(&self) -> &Point {
        &self.p_c
    }

    pub fn p_cprime(&self) -> &Point {
        &self.p_cprime
    }

    pub fn dim(&self) -> usize {
        self.p_c.dim()
    }

    /// Proxy separation `d = ‖p_c − p_c'‖`.
    pub fn separation(&self) -> f64 {
        dist(&self.p_c.0, &self.p_cprime.0)
    }

    pub fn swapped(&self) -> ProxyPair {
        ProxyPair {
            p_c: self.p_cprime.clone(),
            p_cprime: self.p_c.clone(),
        }
    }
}

/// Parametrization `origin + t * direction` of a line, `direction` unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct LineParam {
    origin: Point,
    direction: Vec<f64>,
}

impl LineParam {
    pub fn new(origin: Point, direction: Vec<f64>) -> Result<Self> {
        check_dims(origin.dim(), direction.len())?;
        let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::param("direction", "must be a non-zero finite vector"));
        }
        let direction = direction.into_iter().map(|d| d / norm).collect();
        Ok(LineParam { origin, direction })
    }

    pub fn origin(&self) -> &Point {
        &self.origin
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn point_at(&self, t: f64) -> Point {
        self.origin.offset(&self.direction, t)
    }

    /// Signed parameter of the orthogonal projection of `e` onto the line.
    pub fn project(&self, e: &[f64]) -> f64 {
        e.iter()
            .zip(&self.origin.0)
            .zip(&self.direction)
            .map(|((x, o), d)| (x - o) * d)
            .sum()
    }
}

/// The line `L_p` through both proxies, anchored at `p_c` and pointing away
/// from `p_c'`.
pub fn line_through(pair: &ProxyPair) -> Result<LineParam> {
    let d = pair.separation();
    if d <= 0.0 {
        return Err(Error::CoincidentProxies);
    }
    let direction = pair
        .p_c
        .0
        .iter()
        .zip(&pair.p_cprime.0)
        .map(|(c, cp)| (c - cp) / d)
        .collect();
    Ok(LineParam {
        origin: pair.p_c.clone(),
        direction,
    })
}

/// Intersections of `D_r(p_c')` with `L_p`: `(e_*, e^*)`.
pub fn disk_extreme_points(pair: &ProxyPair, r: f64) -> Result<(Point, Point)> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::param("r", format!("radius must be positive, got {r}")));
    }
    let line = line_through(pair)?;
    // Unit vector from p_c' toward p_c is the line direction itself.
    let u = line.direction();
    let e_star = pair.p_cprime.offset(u, r);
    let e_upper_star = pair.p_cprime.offset(u, -r);
    Ok((e_star, e_upper_star))
}

/// Perpendicular distance from `e` to the infinite line.
pub fn point_line_distance(e: &Point, line: &LineParam) -> Result<f64> {
    check_dims(e.dim(), line.origin.dim())?;
    Ok(perp_dist(&e.0, line))
}

pub(crate) fn perp_dist(e: &[f64], line: &LineParam) -> f64 {
    let t = line.project(e);
    e.iter()
        .zip(&line.origin.0)
        .zip(&line.direction)
        .map(|((x, o), d)| {
            let r = x - o - t * d;
            r * r
        })
        .sum::<f64>()
        .sqrt()
}
