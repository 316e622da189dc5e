//! Desk-scale training: embedder, learnable proxies, Adam, class-balanced
//! batches and a two-phase loss schedule.
//!
//! Every random draw comes from ChaCha8 seeded with `TrainConfig::seed`
//! (`seed_from_u64`) on a fixed stream: [`PROXY_STREAM`] for proxy init,
//! [`MODEL_STREAM`] for weights and [`BATCH_STREAM`] for batch sampling.
//! Gaussians use the ziggurat sampler of `rand_distr::StandardNormal`.

mod adam;
mod checkpoint;
mod embedder;
mod sampler;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use embedder::{backward, forward, Activation, EmbedderSpec, LAYER_NORM_EPS};
pub use sampler::{class_balanced_batches, BatchSampler, RngState};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::loss::{batch_loss_grad, LabeledBatch, LossConfig, ProxySet};
use crate::metrics::avg_dtp;

pub const PROXY_STREAM: u64 = 1;
pub const MODEL_STREAM: u64 = 2;
pub const BATCH_STREAM: u64 = 3;

/// `C` proxies with i.i.d. standard normal coordinates.
pub fn init_proxies(classes: usize, dim: usize, seed: u64) -> Result<ProxySet> {
    if dim == 0 {
        return Err(Error::param("dim", "must be at least 1"));
    }
    let mut rng = sampler::rng_at(seed, PROXY_STREAM);
    ProxySet::new(
        (0..classes)
            .map(|_| {
                Point::new(
                    (0..dim)
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect::<Vec<f64>>(),
                )
            })
            .collect::<Result<_>>()?,
    )
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub steps: usize,
    pub loss: LossConfig,
    /// Multiplies both learning rates during the phase.
    #[serde(default = "one")]
    pub lr_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub seed: u64,
    pub batch_size: usize,
    pub samples_per_class: usize,
    pub lr_model: f64,
    pub lr_proxies: f64,
    #[serde(default)]
    pub adam: AdamHyper,
    /// Batch or epoch AvgDTP above this ceiling counts as divergence.
    #[serde(default)]
    pub max_avg_dtp: Option<f64>,
    /// Defaults to `max(1, N / batch_size)`.
    #[serde(default)]
    pub steps_per_epoch: Option<usize>,
    pub phase1: PhaseConfig,
    pub phase2: PhaseConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_class == 0 {
            return Err(Error::param("samples_per_class", "must be at least 1"));
        }
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(self.samples_per_class) {
            return Err(Error::param(
                "batch_size",
                "must be a positive multiple of samples_per_class",
            ));
        }
        for (name, lr) in [("lr_model", self.lr_model), ("lr_proxies", self.lr_proxies)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {lr}")));
            }
        }
        self.adam.validate()?;
        if let Some(c) = self.max_avg_dtp {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::param("max_avg_dtp", "must be positive"));
            }
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::param("steps_per_epoch", "must be at least 1"));
        }
        for phase in [&self.phase1, &self.phase2] {
            phase.loss.validate()?;
            if !(phase.lr_scale > 0.0 && phase.lr_scale.is_finite()) {
                return Err(Error::param("lr_scale", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.phase1.steps + self.phase2.steps
    }

    pub fn phase_at(&self, step: usize) -> &PhaseConfig {
        if step < self.phase1.steps {
            &self.phase1
        } else {
            &self.phase2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub phase: u8,
    pub loss: f64,
}

/// Training-set AvgDTP after `step` updates; epoch 0 is the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub avg_dtp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Divergence {
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub seed: u64,
    pub config: TrainConfig,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub diverged: Option<Divergence>,
    pub params: Vec<f64>,
    pub proxies: ProxySet,
    pub checkpoint: Checkpoint,
}

impl TrainTrace {
    /// The warp α in effect for `step`, if the phase's f1 has one.
    pub fn alpha_at(&self, step: usize) -> Option<f64> {
        self.config.phase_at(step).loss.warp.f1.alpha()
    }

    pub fn final_avg_dtp(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.avg_dtp)
    }

    pub fn is_diverged(&self) -> bool {
        self.diverged.is_some()
    }
}

/// Embeds `features` and pairs them with `labels`.
pub fn embed(
    spec: &EmbedderSpec,
    params: &[f64],
    features: &[Vec<f64>],
    labels: &[usize],
) -> Result<LabeledBatch> {
    LabeledBatch::from_rows(forward(spec, params, features)?, labels.to_vec())
}

enum Outcome<T> {
    Ok(T),
    Diverged(String),
}

/// Separates numeric blow-ups (non-finite embeddings) from real errors.
fn embed_checked(
    spec: &EmbedderSpec,
    params: &[f64],
    features: &[Vec<f64>],
    labels: &[usize],
) -> Result<Outcome<LabeledBatch>> {
    match embed(spec, params, features, labels) {
        Ok(b) => Ok(Outcome::Ok(b)),
        Err(Error::NonFinite { .. }) => Ok(Outcome::Diverged("non-finite embedding".into())),
        Err(e) => Err(e),
    }
}

pub fn train(
    features: &[Vec<f64>],
    labels: &[usize],
    embedder: &EmbedderSpec,
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    cfg.validate()?;
    embedder.validate()?;
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            found: labels.len(),
        });
    }
    if features.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut sampler = BatchSampler::new(labels, cfg.batch_size, cfg.samples_per_class, cfg.seed, BATCH_STREAM)?;
    let mut params = embedder.init_params(cfg.seed, MODEL_STREAM)?;
    let dim = embedder.output_dim();
    let mut proxy_flat = init_proxies(classes, dim, cfg.seed)?.to_flat();
    let mut adam_model = AdamState::new(params.len());
    let mut adam_proxies = AdamState::new(proxy_flat.len());
    let steps_per_epoch = cfg
        .steps_per_epoch
        .unwrap_or((features.len() / cfg.batch_size).max(1));

    let mut steps = Vec::with_capacity(cfg.total_steps());
    let mut epochs = Vec::new();
    let mut diverged = None;

    // Full training-set AvgDTP, or the reason it cannot be trusted.
    let epoch_dtp = |params: &[f64], proxies: &ProxySet| -> Result<Outcome<f64>> {
        let batch = match embed_checked(embedder, params, features, labels)? {
            Outcome::Ok(b) => b,
            Outcome::Diverged(r) => return Ok(Outcome::Diverged(r)),
        };
        let d = avg_dtp(&batch, proxies)?.avg_dtp;
        if !d.is_finite() {
            return Ok(Outcome::Diverged("non-finite AvgDTP".into()));
        }
        match cfg.max_avg_dtp {
            Some(c) if d > c => Ok(Outcome::Diverged(format!("AvgDTP {d} above ceiling {c}"))),
            _ => Ok(Outcome::Ok(d)),
        }
    };

    let proxies = ProxySet::from_flat(&proxy_flat, dim)?;
    match epoch_dtp(&params, &proxies)? {
        Outcome::Ok(d) => epochs.push(EpochRecord {
            epoch: 0,
            step: 0,
            avg_dtp: d,
        }),
        Outcome::Diverged(reason) => diverged = Some(Divergence { step: 0, reason }),
    }

    let mut done = 0;
    while diverged.is_none() && done < cfg.total_steps() {
        let step = done;
        let phase = cfg.phase_at(step);
        let idx = sampler.next_batch();
        let x: Vec<Vec<f64>> = idx.iter().map(|&i| features[i].clone()).collect();
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let proxies = ProxySet::from_flat(&proxy_flat, dim)?;

        let batch = match embed_checked(embedder, &params, &x, &y)? {
            Outcome::Ok(b) => b,
            Outcome::Diverged(reason) => {
                diverged = Some(Divergence { step, reason });
                break;
            }
        };
        let lg = batch_loss_grad(&batch, &proxies, &phase.loss)?;
        if !lg.loss.is_finite() {
            diverged = Some(Divergence {
                step,
                reason: "non-finite loss".into(),
            });
            break;
        }
        if let Some(c) = cfg.max_avg_dtp {
            let d = avg_dtp(&batch, &proxies)?.avg_dtp;
            if d.is_nan() || d > c {
                diverged = Some(Divergence {
                    step,
                    reason: format!("batch AvgDTP {d} above ceiling {c}"),
                });
                break;
            }
        }

        let d_params = backward(embedder, &params, &x, &lg.d_embeddings)?;
        let d_proxies: Vec<f64> = lg.d_proxies.concat();
        let update = adam_step(&mut params, &mut adam_model, &d_params, cfg.lr_model * phase.lr_scale, &cfg.adam)
            .and_then(|_| {
                adam_step(
                    &mut proxy_flat,
                    &mut adam_proxies,
                    &d_proxies,
                    cfg.lr_proxies * phase.lr_scale,
                    &cfg.adam,
                )
            });
        match update {
            Ok(()) => {}
            Err(Error::Diverged { .. }) => {
                diverged = Some(Divergence {
                    step,
                    reason: "non-finite gradient".into(),
                });
                break;
            }
            Err(e) => return Err(e),
        }
        steps.push(StepRecord {
            step,
            phase: if step < cfg.phase1.steps { 1 } else { 2 },
            loss: lg.loss,
        });
        done += 1;

        if done % steps_per_epoch == 0 {
            let proxies = ProxySet::from_flat(&proxy_flat, dim)?;
            match epoch_dtp(&params, &proxies)? {
                Outcome::Ok(d) => epochs.push(EpochRecord {
                    epoch: done / steps_per_epoch,
                    step: done,
                    avg_dtp: d,
                }),
                Outcome::Diverged(reason) => diverged = Some(Divergence { step: done, reason }),
            }
        }
    }

    // Record where a diverging run ended up, when that is still measurable.
    if diverged.is_some() && epochs.last().is_some_and(|e| e.step != done) {
        let proxies = ProxySet::from_flat(&proxy_flat, dim)?;
        if let Outcome::Ok(batch) = embed_checked(embedder, &params, features, labels)? {
            let d = avg_dtp(&batch, &proxies)?.avg_dtp;
            if d.is_finite() {
                epochs.push(EpochRecord {
                    epoch: epochs.len(),
                    step: done,
                    avg_dtp: d,
                });
            }
        }
    }

    let proxies = ProxySet::from_flat(&proxy_flat, dim)?;
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        step: done,
        embedder: embedder.clone(),
        params: params.clone(),
        proxies: proxies.proxies().iter().map(|p| p.coords().to_vec()).collect(),
        adam_model,
        adam_proxies,
        sampler: sampler.state(),
    };
    Ok(TrainTrace {
        seed: cfg.seed,
        config: cfg.clone(),
        steps,
        epochs,
        diverged,
        params,
        proxies,
        checkpoint,
    })
}
