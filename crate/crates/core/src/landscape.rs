//! Dense evaluation of the binary loss over 2-D grids and along the proxy
//! line, extrema detection, and numerical verifiers for the two landscape
//! results: monotone warps keep every extremum on `L_p`, and flipping the
//! slope inequality `f1' < f2'` at `alpha` places a minimum there.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{dist, line_through, perp_dist, LineParam, Point, ProxyPair};
use crate::loss::{binary_loss_raw, LossConfig};
use crate::warp::{WarpPair, WarpSpec};

/// Relative gap below which two neighboring values count as equal.
pub const PLATEAU_RTOL: f64 = 1e-12;

pub const MIN_RESOLUTION: usize = 16;
pub const MAX_RESOLUTION: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub resolution: usize,
}

impl GridSpec {
    pub fn new(x_range: (f64, f64), y_range: (f64, f64), resolution: usize) -> Result<Self> {
        let spec = GridSpec {
            x_range,
            y_range,
            resolution,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn square(half_width: f64, resolution: usize) -> Result<Self> {
        Self::new(
            (-half_width, half_width),
            (-half_width, half_width),
            resolution,
        )
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("x_range", self.x_range), ("y_range", self.y_range)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::param(name, format!("degenerate range [{lo}, {hi}]")));
            }
        }
        if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&self.resolution) {
            return Err(Error::param(
                "resolution",
                format!(
                    "must lie in [{MIN_RESOLUTION}, {MAX_RESOLUTION}], got {}",
                    self.resolution
                ),
            ));
        }
        Ok(())
    }

    pub fn x(&self, ix: usize) -> f64 {
        coord(self.x_range, self.resolution, ix)
    }

    pub fn y(&self, iy: usize) -> f64 {
        coord(self.y_range, self.resolution, iy)
    }

    pub fn cell_diagonal(&self) -> f64 {
        let n = (self.resolution - 1) as f64;
        let dx = (self.x_range.1 - self.x_range.0) / n;
        let dy = (self.y_range.1 - self.y_range.0) / n;
        dx.hypot(dy)
    }
}

fn coord((lo, hi): (f64, f64), n: usize, i: usize) -> f64 {
    if i + 1 == n {
        hi
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub ix: usize,
    pub iy: usize,
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub spec: GridSpec,
    /// Row-major, `y` outer: `values[iy * resolution + ix]`.
    pub values: Vec<f64>,
    pub minima: Vec<GridPoint>,
    pub maxima: Vec<GridPoint>,
}

impl LandscapeGrid {
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.spec.resolution + ix]
    }

    /// Evaluates `f(x, y)` on every grid node and detects interior extrema.
    pub fn from_fn<F>(spec: GridSpec, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        spec.validate()?;
        let n = spec.resolution;
        let mut values = vec![0.0; n * n];
        values
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(iy, row)| {
                let y = spec.y(iy);
                for (ix, v) in row.iter_mut().enumerate() {
                    *v = f(&[spec.x(ix), y]);
                }
            });
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(
                "landscape",
                format!("non-finite value at grid index {i}"),
            ));
        }
        let (minima, maxima) = detect_extrema(&spec, &values);
        Ok(LandscapeGrid {
            spec,
            values,
            minima,
            maxima,
        })
    }
}

pub(crate) fn strictly_below(a: f64, b: f64) -> bool {
    b - a > PLATEAU_RTOL * a.abs().max(b.abs())
}

/// Interior nodes strictly below (above) all 8 neighbors. Nodes tied with a
/// neighbor are plateau members and never count.
fn detect_extrema(spec: &GridSpec, values: &[f64]) -> (Vec<GridPoint>, Vec<GridPoint>) {
    let n = spec.resolution;
    let mut minima = Vec::new();
    let mut maxima = Vec::new();
    for iy in 1..n - 1 {
        for ix in 1..n - 1 {
            let v = values[iy * n + ix];
            let mut is_min = true;
            let mut is_max = true;
            for (dx, dy) in NEIGHBORS {
                let w = values[(iy as isize + dy) as usize * n + (ix as isize + dx) as usize];
                is_min &= strictly_below(v, w);
                is_max &= strictly_below(w, v);
                if !is_min && !is_max {
                    break;
                }
            }
            let gp = || GridPoint {
                ix,
                iy,
                x: spec.x(ix),
                y: spec.y(iy),
                value: v,
            };
            if is_min {
                minima.push(gp());
            } else if is_max {
                maxima.push(gp());
            }
        }
    }
    (minima, maxima)
}

const NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

fn require_2d(pair: &ProxyPair) -> Result<()> {
    if pair.dim() == 2 {
        Ok(())
    } else {
        Err(Error::param(
            "proxies",
            format!("landscapes are 2-D, got dimension {}", pair.dim()),
        ))
    }
}

pub fn evaluate_grid(pair: &ProxyPair, cfg: &LossConfig, spec: &GridSpec) -> Result<LandscapeGrid> {
    require_2d(pair)?;
    cfg.validate()?;
    LandscapeGrid::from_fn(*spec, |e| binary_loss_raw(e, pair, cfg))
}

/// Loss at `p_c + t · direction` for `n_points` evenly spaced `t`, where the
/// direction points away from `p_c'`.
pub fn evaluate_along_line(
    pair: &ProxyPair,
    cfg: &LossConfig,
    t_range: (f64, f64),
    n_points: usize,
) -> Result<Vec<(f64, f64)>> {
    if n_points < 2 {
        return Err(Error::param("n_points", "need at least 2 samples"));
    }
    let line = line_through(pair)?;
    Ok(sample_line(&line, t_range, n_points, |e| {
        binary_loss_raw(e, pair, cfg)
    }))
}

fn sample_line<F: Fn(&[f64]) -> f64>(
    line: &LineParam,
    (lo, hi): (f64, f64),
    n: usize,
    f: F,
) -> Vec<(f64, f64)> {
    (0..n)
        .map(|k| {
            let t = coord((lo, hi), n, k);
            (t, f(line.point_at(t).coords()))
        })
        .collect()
}

/// First sample attaining the minimum, treating near-ties as equal.
pub fn first_argmin(samples: &[(f64, f64)]) -> Option<(f64, f64)> {
    let min = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    samples.iter().copied().find(|s| !strictly_below(min, s.1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtremumKind {
    Minimum,
    Maximum,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffLineExtremum {
    pub point: [f64; 2],
    pub perp_distance: f64,
    pub kind: ExtremumKind,
    /// Radius of the disk the extremum was found on; `None` for the 2-D grid.
    pub disk_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiskCheck {
    pub radius: f64,
    /// Angular offset (in samples) of the disk minimizer from `e_*`.
    pub argmin_offset: usize,
    /// Angular offset (in samples) of the disk maximizer from `e^*`.
    pub argmax_offset: usize,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub warp_monotone: bool,
    pub cell_diagonal: f64,
    pub off_line_extrema: Vec<OffLineExtremum>,
    pub disk_checks: Vec<DiskCheck>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaOptions {
    pub disk_count: usize,
    pub disk_samples: usize,
    pub angle_tolerance: usize,
    pub radii_seed: u64,
}

impl Default for LemmaOptions {
    fn default() -> Self {
        LemmaOptions {
            disk_count: 8,
            disk_samples: 720,
            angle_tolerance: 2,
            radii_seed: 0x5eed_d15c,
        }
    }
}

/// Checks that the single-warp landscape `f(‖e − p_c‖) − f(‖e − p_c'‖)`
/// keeps its extrema on `L_p`, both over the 2-D grid and restricted to
/// disks around `p_c'`.
pub fn verify_lemma(warp: &WarpSpec, pair: &ProxyPair, spec: &GridSpec) -> Result<LemmaReport> {
    warp.validate()?;
    let w = *warp;
    let mut report = verify_lemma_with(&move |t| w.eval(t), pair, spec, &LemmaOptions::default())?;
    report.warp_monotone = true;
    Ok(report)
}

/// Same as [`verify_lemma`] for an arbitrary, possibly non-monotone `f`.
pub fn verify_lemma_with(
    f: &(dyn Fn(f64) -> f64 + Sync),
    pair: &ProxyPair,
    spec: &GridSpec,
    opts: &LemmaOptions,
) -> Result<LemmaReport> {
    require_2d(pair)?;
    spec.validate()?;
    let line = line_through(pair)?;
    let (pc, pcp) = (pair.p_c().coords(), pair.p_cprime().coords());

    // The softplus is strictly increasing, so the loss shares its extrema with
    // the exponent term; using the term directly avoids saturation plateaus.
    let term = |e: &[f64]| f(dist(e, pc)) - f(dist(e, pcp));

    let grid = LandscapeGrid::from_fn(*spec, term)?;
    let diag = spec.cell_diagonal();
    let mut off_line = Vec::new();
    for (kind, list) in [
        (ExtremumKind::Minimum, &grid.minima),
        (ExtremumKind::Maximum, &grid.maxima),
    ] {
        for gp in list {
            let d = perp_dist(&[gp.x, gp.y], &line);
            if d > diag {
                off_line.push(OffLineExtremum {
                    point: [gp.x, gp.y],
                    perp_distance: d,
                    kind,
                    disk_radius: None,
                });
            }
        }
    }

    let d = pair.separation();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.radii_seed);
    let radii: Vec<f64> = (0..opts.disk_count)
        .map(|_| rng.random_range(0.05 * d..2.5 * d))
        .collect();
    let mut disk_checks = Vec::with_capacity(radii.len());
    for r in radii {
        let (check, extra) = check_disk(&term, pair, &line, r, opts);
        disk_checks.push(check);
        off_line.extend(extra);
    }

    let warp_monotone = is_monotone_on(f, 0.0, 4.0 * (d + spec_extent(spec)), 10_000);
    let verdict = Verdict::from_bool(off_line.is_empty() && disk_checks.iter().all(|c| c.ok));
    Ok(LemmaReport {
        warp_monotone,
        cell_diagonal: diag,
        off_line_extrema: off_line,
        disk_checks,
        verdict,
    })
}

fn spec_extent(spec: &GridSpec) -> f64 {
    (spec.x_range.1 - spec.x_range.0).hypot(spec.y_range.1 - spec.y_range.0)
}

fn is_monotone_on(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> bool {
    let mut prev = f(lo);
    (1..=n).all(|k| {
        let v = f(lo + (hi - lo) * k as f64 / n as f64);
        let ok = v >= prev;
        prev = v;
        ok
    })
}

/// Samples the circle of radius `r` around `p_c'` starting at `e_*` (angle 0)
/// so that `e^*` sits at half a turn.
fn check_disk(
    term: &dyn Fn(&[f64]) -> f64,
    pair: &ProxyPair,
    line: &LineParam,
    r: f64,
    opts: &LemmaOptions,
) -> (DiskCheck, Vec<OffLineExtremum>) {
    let n = opts.disk_samples;
    let u = line.direction();
    let v = [-u[1], u[0]];
    let c = pair.p_cprime().coords();
    let points: Vec<[f64; 2]> = (0..n)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / n as f64;
            let (s, co) = th.sin_cos();
            [
                c[0] + r * (co * u[0] + s * v[0]),
                c[1] + r * (co * u[1] + s * v[1]),
            ]
        })
        .collect();
    let vals: Vec<f64> = points.iter().map(|p| term(p)).collect();

    let circ = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        d.min(n - d)
    };
    let argmin = first_index_by(&vals, strictly_below);
    let argmax = first_index_by(&vals, |a, b| strictly_below(b, a));
    let argmin_offset = circ(argmin, 0);
    let argmax_offset = circ(argmax, n / 2);
    let tol = opts.angle_tolerance;

    let mut extra = Vec::new();
    for k in 0..n {
        if circ(k, 0) <= tol || circ(k, n / 2) <= tol {
            continue;
        }
        let (prev, next) = (vals[(k + n - 1) % n], vals[(k + 1) % n]);
        let kind = if strictly_below(vals[k], prev) && strictly_below(vals[k], next) {
            ExtremumKind::Minimum
        } else if strictly_below(prev, vals[k]) && strictly_below(next, vals[k]) {
            ExtremumKind::Maximum
        } else {
            continue;
        };
        extra.push(OffLineExtremum {
            point: points[k],
            perp_distance: perp_dist(&points[k], line),
            kind,
            disk_radius: Some(r),
        });
    }
    let check = DiskCheck {
        radius: r,
        argmin_offset,
        argmax_offset,
        ok: argmin_offset <= tol && argmax_offset <= tol,
    };
    (check, extra)
}

/// Index of the first element that no other element beats under `better`.
fn first_index_by(vals: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (i, &v) in vals.iter().enumerate() {
        if better(v, vals[best]) {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropReport {
    pub argmin_t: f64,
    pub expected_alpha: f64,
    pub step: f64,
    pub slope_before: f64,
    pub slope_after: f64,
    /// Sign changes of the sampled loss differences on `(0, alpha + 3d)`.
    pub sign_changes: usize,
    pub pass: bool,
}

/// Brute-force check that a piecewise-linear `f1` against `f2 = t` puts the
/// minimum of the outbound ray exactly at `alpha`.
pub fn verify_prop(warp: &WarpPair, pair: &ProxyPair) -> Result<PropReport> {
    let alpha = match (warp.f1, warp.f2) {
        (WarpSpec::PiecewiseLinear { alpha, .. }, WarpSpec::Identity) => alpha,
        _ => {
            return Err(Error::param(
                "warp",
                format!("expected `pwl(..) - t`, got `{warp}`"),
            ))
        }
    };
    if alpha <= 0.0 {
        return Err(Error::param("alpha", "must be positive for this check"));
    }
    let cfg = LossConfig::new(*warp, 1.0)?;
    let d = pair.separation();
    let step = alpha / 1000.0;
    let t_max = alpha + 3.0 * d;
    let n = (t_max / step).floor() as usize + 1;
    let line = line_through(pair)?;
    let samples: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let t = k as f64 * step;
            (t, binary_loss_raw(line.point_at(t).coords(), pair, &cfg))
        })
        .collect();
    let (argmin_t, _) = first_argmin(&samples).expect("non-empty");

    let loss_at = |t: f64| binary_loss_raw(line.point_at(t).coords(), pair, &cfg);
    let h = 1e-6;
    let slope = |t: f64| (loss_at(t + h) - loss_at(t - h)) / (2.0 * h);
    let slope_before = slope(alpha - 0.1_f64.min(alpha / 2.0));
    let slope_after = slope(alpha + 0.1);

    let mut sign_changes = 0;
    let mut last_sign = 0i8;
    for w in samples.windows(2) {
        let s = if strictly_below(w[0].1, w[1].1) {
            1
        } else if strictly_below(w[1].1, w[0].1) {
            -1
        } else {
            0
        };
        if s != 0 {
            if last_sign != 0 && s != last_sign {
                sign_changes += 1;
            }
            last_sign = s;
        }
    }

    let pass = (argmin_t - alpha).abs() <= 2.0 * step
        && slope_before < 0.0
        && slope_after > 0.0
        && sign_changes == 1;
    Ok(PropReport {
        argmin_t,
        expected_alpha: alpha,
        step,
        slope_before,
        slope_after,
        sign_changes,
        pass,
    })
}

fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Writes `x,y,loss` rows, `y` outer and `x` inner, in shortest round-trip
/// decimal form.
pub fn export_grid(grid: &LandscapeGrid, path: &Path) -> Result<()> {
    let ctx = || path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = BufWriter::new(file);
    let n = grid.spec.resolution;
    let mut body = String::with_capacity(n * n * 32 + 16);
    body.push_str("x,y,loss\n");
    for iy in 0..n {
        let y = fmt_num(grid.spec.y(iy));
        for ix in 0..n {
            body.push_str(&fmt_num(grid.spec.x(ix)));
            body.push(',');
            body.push_str(&y);
            body.push(',');
            body.push_str(&fmt_num(grid.value(ix, iy)));
            body.push('\n');
        }
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(ctx(), e))
}

/// Reads back a file written by [`export_grid`].
pub fn import_grid(path: &Path) -> Result<Vec<[f64; 3]>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let malformed = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if i == 0 {
            if line.trim() != "x,y,loss" {
                return Err(malformed(format!("expected header `x,y,loss`, got `{line}`")));
            }
            continue;
        }
        let mut row = [0.0; 3];
        let mut fields = line.split(',');
        for slot in &mut row {
            let field = fields
                .next()
                .ok_or_else(|| malformed("expected 3 fields".into()))?;
            *slot = field
                .trim()
                .parse()
                .map_err(|e| malformed(format!("`{field}`: {e}")))?;
        }
        if fields.next().is_some() {
            return Err(malformed("expected 3 fields".into()));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Uniformly random proxy pair inside `[-extent, extent]²`, at least
/// `min_separation` apart.
pub fn random_pair(rng: &mut impl Rng, extent: f64, min_separation: f64) -> ProxyPair {
    loop {
        let a = [rng.random_range(-extent..extent), rng.random_range(-extent..extent)];
        let b = [rng.random_range(-extent..extent), rng.random_range(-extent..extent)];
        if dist(&a, &b) >= min_separation {
            return ProxyPair::new(
                Point::new(a.to_vec()).expect("finite"),
                Point::new(b.to_vec()).expect("finite"),
            )
            .expect("separated");
        }
    }
}
