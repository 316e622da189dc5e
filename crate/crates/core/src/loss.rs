//! Warped Euclidean softmax cross-entropy.
//!
//! For an embedding `e` with label `y` and proxies `p_0..p_{C-1}`:
//!
//! ```text
//! z_j  = (f1(‖e − p_y‖) − f2(‖e − p_j‖)) / T        for j ≠ y
//! loss = log(1 + Σ_{j≠y} exp(z_j))
//! ```
//!
//! With identity warps and `T = 1` this is the plain Euclidean proxy softmax.
//! Evaluation shifts by `m = max(0, max_j z_j)` so large distances and small
//! temperatures never overflow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_dims, dist, Point, ProxyPair};
use crate::warp::WarpPair;

/// Distances below this are treated as zero when forming unit directions.
pub const ZERO_DISTANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub warp: WarpPair,
    pub temperature: f64,
    #[serde(default = "default_true")]
    pub stability_shift: bool,
}

fn default_true() -> bool {
    true
}

impl LossConfig {
    pub fn new(warp: WarpPair, temperature: f64) -> Result<Self> {
        let cfg = LossConfig {
            warp,
            temperature,
            stability_shift: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn vanilla() -> Self {
        LossConfig {
            warp: WarpPair::identity(),
            temperature: 1.0,
            stability_shift: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::param(
                "temperature",
                format!("must be positive, got {}", self.temperature),
            ));
        }
        self.warp.f1.validate()?;
        self.warp.f2.validate()
    }
}

/// Embeddings with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    embeddings: Vec<Point>,
    labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(embeddings: Vec<Point>, labels: Vec<usize>) -> Result<Self> {
        check_dims(embeddings.len(), labels.len())?;
        if let Some(first) = embeddings.first() {
            for e in &embeddings {
                check_dims(first.dim(), e.dim())?;
            }
        }
        Ok(LabeledBatch { embeddings, labels })
    }

    /// Builds a batch from raw rows, validating finiteness.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        let embeddings = rows.into_iter().map(Point::new).collect::<Result<_>>()?;
        Self::new(embeddings, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.embeddings.first().map(Point::dim)
    }

    pub fn embeddings(&self) -> &[Point] {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

/// One learnable proxy per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct ProxySet {
    proxies: Vec<Point>,
}

impl ProxySet {
    pub fn new(proxies: Vec<Point>) -> Result<Self> {
        if proxies.len() < 2 {
            return Err(Error::param(
                "proxies",
                format!("need at least 2 classes, got {}", proxies.len()),
            ));
        }
        for p in &proxies {
            check_dims(proxies[0].dim(), p.dim())?;
        }
        Ok(ProxySet { proxies })
    }

    pub fn from_pair(pair: &ProxyPair) -> Self {
        ProxySet {
            proxies: vec![pair.p_c().clone(), pair.p_cprime().clone()],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.proxies.len()
    }

    pub fn dim(&self) -> usize {
        self.proxies[0].dim()
    }

    pub fn proxies(&self) -> &[Point] {
        &self.proxies
    }

    pub fn get(&self, class: usize) -> Option<&Point> {
        self.proxies.get(class)
    }

    /// Row-major `C × dim` copy of the proxy coordinates.
    pub fn to_flat(&self) -> Vec<f64> {
        self.proxies
            .iter()
            .flat_map(|p| p.coords().iter().copied())
            .collect()
    }

    pub fn from_flat(flat: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || !flat.len().is_multiple_of(dim) {
            return Err(Error::param(
                "proxies",
                format!("{} values do not split into rows of {dim}", flat.len()),
            ));
        }
        Self::new(
            flat.chunks(dim)
                .map(|c| Point::new(c.to_vec()))
                .collect::<Result<_>>()?,
        )
    }

    pub fn translate(&self, by: &[f64]) -> Self {
        ProxySet {
            proxies: self.proxies.iter().map(|p| p.translate(by)).collect(),
        }
    }
}

impl TryFrom<Vec<Point>> for ProxySet {
    type Error = Error;

    fn try_from(v: Vec<Point>) -> Result<Self> {
        ProxySet::new(v)
    }
}

impl From<ProxySet> for Vec<Point> {
    fn from(p: ProxySet) -> Self {
        p.proxies
    }
}

/// Mean loss with gradients for every embedding and every proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub d_embeddings: Vec<Vec<f64>>,
    pub d_proxies: Vec<Vec<f64>>,
}

/// `log(1 + Σ exp(z_j))`, shifted when `stable`.
fn log1p_sum_exp(z: &[f64], stable: bool) -> f64 {
    if stable {
        let m = z.iter().copied().fold(0.0f64, f64::max);
        if m == 0.0 {
            // Nothing to shift; ln_1p keeps tiny losses from rounding to 0.
            return z.iter().map(|v| v.exp()).sum::<f64>().ln_1p();
        }
        m + ((-m).exp() + z.iter().map(|v| (v - m).exp()).sum::<f64>()).ln()
    } else {
        z.iter().map(|v| v.exp()).sum::<f64>().ln_1p()
    }
}

fn logits(e: &[f64], y: usize, proxies: &[Point], cfg: &LossConfig, out: &mut Vec<f64>) {
    let inv_t = 1.0 / cfg.temperature;
    let f1 = cfg.warp.f1.eval(dist(e, proxies[y].coords()));
    out.clear();
    out.extend(
        proxies
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != y)
            .map(|(_, p)| (f1 - cfg.warp.f2.eval(dist(e, p.coords()))) * inv_t),
    );
}

pub fn binary_loss(e: &Point, pair: &ProxyPair, cfg: &LossConfig) -> Result<f64> {
    check_dims(pair.dim(), e.dim())?;
    Ok(binary_loss_raw(e.coords(), pair, cfg))
}

pub(crate) fn binary_loss_raw(e: &[f64], pair: &ProxyPair, cfg: &LossConfig) -> f64 {
    let t1 = dist(e, pair.p_c().coords());
    let t2 = dist(e, pair.p_cprime().coords());
    let z = (cfg.warp.f1.eval(t1) - cfg.warp.f2.eval(t2)) / cfg.temperature;
    log1p_sum_exp(&[z], cfg.stability_shift)
}

pub fn multiclass_loss(e: &Point, y: usize, proxies: &ProxySet, cfg: &LossConfig) -> Result<f64> {
    check_dims(proxies.dim(), e.dim())?;
    let classes = proxies.num_classes();
    if y >= classes {
        return Err(Error::InvalidLabel { label: y, classes });
    }
    let mut z = Vec::with_capacity(classes - 1);
    logits(e.coords(), y, proxies.proxies(), cfg, &mut z);
    Ok(log1p_sum_exp(&z, cfg.stability_shift))
}

fn check_batch(batch: &LabeledBatch, proxies: &ProxySet) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_dims(proxies.dim(), batch.dim().unwrap_or(0))?;
    let classes = proxies.num_classes();
    if let Some(&label) = batch.labels().iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidLabel { label, classes });
    }
    Ok(())
}

pub fn per_sample_losses(
    batch: &LabeledBatch,
    proxies: &ProxySet,
    cfg: &LossConfig,
) -> Result<Vec<f64>> {
    check_batch(batch, proxies)?;
    let mut z = Vec::new();
    Ok(batch
        .embeddings()
        .iter()
        .zip(batch.labels())
        .map(|(e, &y)| {
            logits(e.coords(), y, proxies.proxies(), cfg, &mut z);
            log1p_sum_exp(&z, cfg.stability_shift)
        })
        .collect())
}

pub fn batch_loss_grad(
    batch: &LabeledBatch,
    proxies: &ProxySet,
    cfg: &LossConfig,
) -> Result<LossGrad> {
    check_batch(batch, proxies)?;
    let dim = proxies.dim();
    let n = batch.len();
    let scale = 1.0 / n as f64;
    let mut d_embeddings = vec![vec![0.0; dim]; n];
    let mut d_proxies = vec![vec![0.0; dim]; proxies.num_classes()];
    let mut loss = 0.0;
    let mut scratch = Scratch::default();
    for (i, (e, &y)) in batch.embeddings().iter().zip(batch.labels()).enumerate() {
        loss += accumulate_sample(
            e.coords(),
            y,
            proxies.proxies(),
            cfg,
            scale,
            &mut d_embeddings[i],
            &mut d_proxies,
            &mut scratch,
        );
    }
    Ok(LossGrad {
        loss: loss * scale,
        d_embeddings,
        d_proxies,
    })
}

#[derive(Default)]
struct Scratch {
    z: Vec<f64>,
    t: Vec<f64>,
}

/// Adds `scale ×` this sample's gradients into `d_e` and `d_p`, returns its loss.
#[allow(clippy::too_many_arguments)]
fn accumulate_sample(
    e: &[f64],
    y: usize,
    proxies: &[Point],
    cfg: &LossConfig,
    scale: f64,
    d_e: &mut [f64],
    d_p: &mut [Vec<f64>],
    scratch: &mut Scratch,
) -> f64 {
    let inv_t = 1.0 / cfg.temperature;
    let (f1, f2) = (&cfg.warp.f1, &cfg.warp.f2);

    let t_y = dist(e, proxies[y].coords());
    let f1_y = f1.eval(t_y);

    scratch.z.clear();
    scratch.t.clear();
    for (j, p) in proxies.iter().enumerate() {
        if j == y {
            continue;
        }
        let t_j = dist(e, p.coords());
        scratch.t.push(t_j);
        scratch.z.push((f1_y - f2.eval(t_j)) * inv_t);
    }

    let z = &scratch.z;
    let m = z.iter().copied().fold(0.0f64, f64::max);
    let denom = (-m).exp() + z.iter().map(|v| (v - m).exp()).sum::<f64>();
    let loss = if cfg.stability_shift {
        m + denom.ln()
    } else {
        z.iter().map(|v| v.exp()).sum::<f64>().ln_1p()
    };

    // w_j = s_j / (1 + S); their total is S / (1 + S).
    let mut total_w = 0.0;
    for (k, (j, p)) in proxies
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .enumerate()
    {
        let w = (z[k] - m).exp() / denom;
        total_w += w;
        let t_j = scratch.t[k];
        if t_j < ZERO_DISTANCE {
            continue;
        }
        let c = scale * inv_t * w * f2.slope(t_j) / t_j;
        for ((de, dp), (ei, pi)) in d_e
            .iter_mut()
            .zip(d_p[j].iter_mut())
            .zip(e.iter().zip(p.coords()))
        {
            let u = ei - pi;
            *de -= c * u;
            *dp += c * u;
        }
    }
    if t_y >= ZERO_DISTANCE {
        let c = scale * inv_t * total_w * f1.slope(t_y) / t_y;
        for ((de, dp), (ei, pi)) in d_e
            .iter_mut()
            .zip(d_p[y].iter_mut())
            .zip(e.iter().zip(proxies[y].coords()))
        {
            let u = ei - pi;
            *de += c * u;
            *dp -= c * u;
        }
    }
    loss
}
