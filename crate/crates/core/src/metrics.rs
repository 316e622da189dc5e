//! Retrieval and compactness metrics.
//!
//! Neighbor rankings exclude the query itself and order candidates by
//! squared Euclidean distance, ties broken by lower sample index.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::geometry::{dist, sq_dist};
use crate::loss::{LabeledBatch, ProxySet};

pub const KMEANS_RESTARTS: usize = 20;
const KMEANS_MAX_ITERS: usize = 300;

fn rank_cmp(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Full neighbor ranking for every query by exhaustive sort.
pub fn brute_force_neighbors(batch: &LabeledBatch) -> Vec<Vec<usize>> {
    let pts = batch.embeddings();
    (0..pts.len())
        .map(|q| {
            let mut cands: Vec<(f64, usize)> = (0..pts.len())
                .filter(|&j| j != q)
                .map(|j| (sq_dist(pts[q].coords(), pts[j].coords()), j))
                .collect();
            cands.sort_by(|&a, &b| rank_cmp(a, b));
            cands.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

/// The `k` nearest neighbors of `q` via partial selection.
fn nearest(batch: &LabeledBatch, q: usize, k: usize, buf: &mut Vec<(f64, usize)>) -> Vec<usize> {
    let pts = batch.embeddings();
    let query = pts[q].coords();
    buf.clear();
    buf.extend(
        pts.iter()
            .enumerate()
            .filter(|&(j, _)| j != q)
            .map(|(j, p)| (sq_dist(query, p.coords()), j)),
    );
    let k = k.min(buf.len());
    if k == 0 {
        return Vec::new();
    }
    if k < buf.len() {
        buf.select_nth_unstable_by(k - 1, |&a, &b| rank_cmp(a, b));
        buf.truncate(k);
    }
    buf.sort_by(|&a, &b| rank_cmp(a, b));
    buf.iter().map(|&(_, j)| j).collect()
}

fn check_ks(n: usize, ks: &[usize]) -> Result<usize> {
    if ks.is_empty() {
        return Err(Error::param("ks", "need at least one K"));
    }
    for &k in ks {
        if k == 0 || k >= n {
            return Err(Error::param(
                "ks",
                format!("K = {k} must lie in [1, N) with N = {n}"),
            ));
        }
    }
    Ok(ks.iter().copied().max().unwrap_or(1))
}

/// Fraction of queries with a same-label sample among their K nearest.
pub fn recall_at_k(batch: &LabeledBatch, ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    let kmax = check_ks(batch.len(), ks)?;
    let mut buf = Vec::with_capacity(batch.len());
    let lists: Vec<Vec<usize>> = (0..batch.len())
        .map(|q| nearest(batch, q, kmax, &mut buf))
        .collect();
    Ok(recall_from_neighbors(&lists, batch.labels(), ks))
}

/// Recall@K from precomputed (at least `max(ks)`-long) neighbor lists.
pub fn recall_from_neighbors(
    neighbors: &[Vec<usize>],
    labels: &[usize],
    ks: &[usize],
) -> BTreeMap<usize, f64> {
    let n = neighbors.len() as f64;
    ks.iter()
        .map(|&k| {
            let hits = neighbors
                .iter()
                .enumerate()
                .filter(|(q, list)| list.iter().take(k).any(|&j| labels[j] == labels[*q]))
                .count();
            (k, hits as f64 / n)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapAtR {
    pub map_at_r: f64,
    pub rp: f64,
    pub p_at_1: f64,
    /// Queries whose class has no other member.
    pub skipped: usize,
}

/// `(MAP@R, R-precision, P@1)` of one ranking given per-rank relevance and
/// `R`, the number of relevant items.
pub fn precision_scores(relevance: &[bool], r: usize) -> (f64, f64, f64) {
    if r == 0 {
        return (0.0, 0.0, 0.0);
    }
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (i, &rel) in relevance.iter().take(r).enumerate() {
        if rel {
            hits += 1;
            ap += hits as f64 / (i + 1) as f64;
        }
    }
    let p1 = if relevance.first() == Some(&true) { 1.0 } else { 0.0 };
    (ap / r as f64, hits as f64 / r as f64, p1)
}

pub fn map_at_r(batch: &LabeledBatch) -> Result<MapAtR> {
    let counts = class_counts(batch.labels());
    let rmax = counts.values().copied().max().unwrap_or(1).saturating_sub(1);
    let mut buf = Vec::with_capacity(batch.len());
    let lists: Vec<Vec<usize>> = (0..batch.len())
        .map(|q| nearest(batch, q, rmax.max(1), &mut buf))
        .collect();
    map_at_r_from_neighbors(&lists, batch.labels())
}

/// MAP@R family from neighbor lists at least `R` long for every query.
pub fn map_at_r_from_neighbors(neighbors: &[Vec<usize>], labels: &[usize]) -> Result<MapAtR> {
    let counts = class_counts(labels);
    let (mut map, mut rp, mut p1) = (0.0, 0.0, 0.0);
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (q, list) in neighbors.iter().enumerate() {
        let r = counts[&labels[q]] - 1;
        if r == 0 {
            skipped += 1;
            continue;
        }
        let rel: Vec<bool> = list.iter().take(r).map(|&j| labels[j] == labels[q]).collect();
        let (a, b, c) = precision_scores(&rel, r);
        map += a;
        rp += b;
        p1 += c;
        used += 1;
    }
    if used == 0 {
        return Err(Error::param("batch", "every class has a single sample"));
    }
    let n = used as f64;
    Ok(MapAtR {
        map_at_r: map / n,
        rp: rp / n,
        p_at_1: p1 / n,
        skipped,
    })
}

fn class_counts(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

/// Lloyd's k-means with k-means++ seeding; best inertia over `restarts`.
pub fn kmeans(points: &[&[f64]], k: usize, seed: u64, restarts: usize) -> Result<KMeans> {
    if k == 0 || k > points.len() {
        return Err(Error::param(
            "k",
            format!("need 1 <= k <= {}, got {k}", points.len()),
        ));
    }
    let mut best: Option<KMeans> = None;
    for restart in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let run = lloyd(points, kmeans_pp(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn kmeans_pp(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].to_vec());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn closest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(c, m)| (c, sq_dist(p, m)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("k >= 1")
}

fn lloyd(points: &[&[f64]], mut centroids: Vec<Vec<f64>>) -> KMeans {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignments = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (c, _) = closest(p, &centroids);
            changed |= *a != c;
            *a = c;
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // Re-seed an empty cluster at the point farthest from its centroid.
                let far = (0..points.len())
                    .max_by(|&i, &j| {
                        sq_dist(points[i], &centroids[assignments[i]])
                            .total_cmp(&sq_dist(points[j], &centroids[assignments[j]]))
                            .then(j.cmp(&i))
                    })
                    .expect("non-empty");
                centroids[c] = points[far].to_vec();
                assignments[far] = c;
            }
        }
    }
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum();
    KMeans {
        assignments,
        centroids,
        inertia,
    }
}

/// `2 I(A; B) / (H(A) + H(B))` with natural logarithms.
pub fn nmi_from_assignments(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions must cover the same samples");
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0) += 1;
    }
    let ca = class_counts(a);
    let cb = class_counts(b);
    let entropy = |c: &BTreeMap<usize, usize>| {
        -c.values()
            .map(|&k| {
                let p = k as f64 / n;
                p * p.ln()
            })
            .sum::<f64>()
    };
    let (ha, hb) = (entropy(&ca), entropy(&cb));
    if ha + hb <= 0.0 {
        return 1.0;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &k)| {
            let pxy = k as f64 / n;
            let px = ca[&x] as f64 / n;
            let py = cb[&y] as f64 / n;
            pxy * (pxy / (px * py)).ln()
        })
        .sum();
    (2.0 * mi / (ha + hb)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NmiResult {
    pub nmi: f64,
    /// Set when every embedding coincides and no clustering is possible.
    pub degenerate: bool,
}

/// NMI between labels and a k-means clustering with `k` = number of classes.
pub fn nmi(batch: &LabeledBatch, kmeans_seed: u64) -> Result<NmiResult> {
    let classes = class_counts(batch.labels()).len();
    if classes < 2 {
        return Err(Error::param("batch", "NMI needs at least 2 classes"));
    }
    let points: Vec<&[f64]> = batch.embeddings().iter().map(|p| p.coords()).collect();
    if points.iter().all(|p| *p == points[0]) {
        return Ok(NmiResult {
            nmi: 0.0,
            degenerate: true,
        });
    }
    let km = kmeans(&points, classes, kmeans_seed, KMEANS_RESTARTS)?;
    Ok(NmiResult {
        nmi: nmi_from_assignments(batch.labels(), &km.assignments),
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DtpReport {
    pub avg_dtp: f64,
    pub per_class_dtp: BTreeMap<usize, f64>,
}

/// Mean distance to the class proxy, averaged per class and then across the
/// classes present in the batch.
pub fn avg_dtp(batch: &LabeledBatch, proxies: &ProxySet) -> Result<DtpReport> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let classes = proxies.num_classes();
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (e, &y) in batch.embeddings().iter().zip(batch.labels()) {
        let p = proxies
            .get(y)
            .ok_or(Error::InvalidLabel { label: y, classes })?;
        crate::geometry::check_dims(p.dim(), e.dim())?;
        let s = sums.entry(y).or_insert((0.0, 0));
        s.0 += dist(e.coords(), p.coords());
        s.1 += 1;
    }
    let per_class_dtp: BTreeMap<usize, f64> = sums
        .into_iter()
        .map(|(c, (s, k))| (c, s / k as f64))
        .collect();
    let avg_dtp = per_class_dtp.values().sum::<f64>() / per_class_dtp.len() as f64;
    Ok(DtpReport {
        avg_dtp,
        per_class_dtp,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalResult {
    pub recall_at: BTreeMap<usize, f64>,
    pub nmi: f64,
    pub map_at_r: f64,
    pub rp: f64,
    pub p_at_1: f64,
}

impl RetrievalResult {
    pub fn evaluate(batch: &LabeledBatch, ks: &[usize], kmeans_seed: u64) -> Result<Self> {
        let m = map_at_r(batch)?;
        Ok(RetrievalResult {
            recall_at: recall_at_k(batch, ks)?,
            nmi: nmi(batch, kmeans_seed)?.nmi,
            map_at_r: m.map_at_r,
            rp: m.rp,
            p_at_1: m.p_at_1,
        })
    }

    /// Flat JSON object: `r_at_K` for every K, then the scalar metrics.
    pub fn to_json(&self, avg_dtp: Option<f64>) -> Map<String, Value> {
        let mut out = Map::new();
        for (k, v) in &self.recall_at {
            out.insert(format!("r_at_{k}"), Value::from(*v));
        }
        out.insert("nmi".into(), Value::from(self.nmi));
        out.insert("map_at_r".into(), Value::from(self.map_at_r));
        out.insert("rp".into(), Value::from(self.rp));
        out.insert("p_at_1".into(), Value::from(self.p_at_1));
        if let Some(d) = avg_dtp {
            out.insert("avg_dtp".into(), Value::from(d));
        }
        out
    }
}
