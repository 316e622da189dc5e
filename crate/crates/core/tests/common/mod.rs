//! Oracles and experiment drivers shared by the integration tests and the
//! acceptance gate.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use softmax_warp::datasets::{make_blob_splits, BlobSpec};
use softmax_warp::metrics::{avg_dtp, recall_at_k};
use softmax_warp::trainer::{
    backward, embed, forward, train, Activation, AdamHyper, EmbedderSpec, PhaseConfig,
    TrainConfig, TrainTrace,
};
use softmax_warp::{batch_loss_grad, parse_warp_pair, LabeledBatch, LossConfig, ProxySet, WarpPair, WarpSpec};

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor so vanishing components compare absolutely.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Differences of a function of size `L` carry rounding noise of a few
/// `ε · L / h`, about `1e-10 · L` at `h = 1e-5`. Resolving a relative error
/// of 1e-5 needs components above `1e-5` of that noise, so anything smaller
/// than `1e-4 · max(1, L)` is compared against this floor instead.
pub fn fd_floor(loss: f64) -> f64 {
    1e-4 * loss.abs().max(1.0)
}

fn gauss(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    std * z
}

pub fn random_warp(rng: &mut ChaCha8Rng) -> WarpSpec {
    match rng.random_range(0..4) {
        0 => WarpSpec::Identity,
        1 => WarpSpec::power(rng.random_range(0.5..2.5)).unwrap(),
        2 => WarpSpec::scale(rng.random_range(0.3..3.0)).unwrap(),
        _ => {
            let alpha = rng.random_range(0.5..4.0);
            let k1 = rng.random_range(0.1..0.95);
            let k2 = rng.random_range(1.05..3.0);
            let margin = rng.random_range(1.0..2.0);
            WarpSpec::piecewise(alpha, k1, k2, margin * (1.0 - k1) * alpha).unwrap()
        }
    }
}

/// Five-point central difference with step [`FD_STEP`]; its truncation
/// error is fourth order, which matters at small temperatures where the
/// loss curves sharply.
pub fn central_diff(f: impl Fn(f64) -> f64) -> f64 {
    let h = FD_STEP;
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

pub struct GradCase {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub proxies: Vec<Vec<f64>>,
    pub cfg: LossConfig,
}

fn away_from_kinks(case: &GradCase) -> bool {
    let kinks: Vec<f64> = [case.cfg.warp.f1, case.cfg.warp.f2]
        .iter()
        .filter_map(|w| w.alpha())
        .collect();
    case.rows.iter().all(|e| {
        case.proxies.iter().all(|p| {
            let t = e.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            t > 0.05 && kinks.iter().all(|k| (t - k).abs() > 1e-3)
        })
    })
}

pub fn random_case(rng: &mut ChaCha8Rng) -> GradCase {
    loop {
        let dim = rng.random_range(2..=8);
        let classes = rng.random_range(2..=6);
        let n = rng.random_range(1..=6);
        let proxies: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..dim).map(|_| gauss(rng, 2.0)).collect())
            .collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| gauss(rng, 2.0)).collect())
            .collect();
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let warp = WarpPair::new(random_warp(rng), random_warp(rng)).unwrap();
        let cfg = LossConfig::new(warp, [0.1, 1.0, 9.0][rng.random_range(0..3)]).unwrap();
        let case = GradCase {
            rows,
            labels,
            proxies,
            cfg,
        };
        if away_from_kinks(&case) {
            return case;
        }
    }
}

fn proxy_set(rows: &[Vec<f64>]) -> ProxySet {
    ProxySet::new(
        rows.iter()
            .map(|r| softmax_warp::Point::new(r.clone()).unwrap())
            .collect(),
    )
    .unwrap()
}

pub fn case_loss(rows: &[Vec<f64>], labels: &[usize], proxies: &[Vec<f64>], cfg: &LossConfig) -> f64 {
    let batch = LabeledBatch::from_rows(rows.to_vec(), labels.to_vec()).unwrap();
    batch_loss_grad(&batch, &proxy_set(proxies), cfg).unwrap().loss
}

/// Largest relative error between analytic and central-difference
/// gradients over every embedding and proxy coordinate.
pub fn check_loss_gradients(case: &GradCase) -> f64 {
    let batch = LabeledBatch::from_rows(case.rows.clone(), case.labels.clone()).unwrap();
    let g = batch_loss_grad(&batch, &proxy_set(&case.proxies), &case.cfg).unwrap();
    let floor = fd_floor(g.loss);
    let mut worst: f64 = 0.0;
    for i in 0..case.rows.len() {
        for k in 0..case.rows[i].len() {
            let num = central_diff(|h| {
                let mut rows = case.rows.clone();
                rows[i][k] += h;
                case_loss(&rows, &case.labels, &case.proxies, &case.cfg)
            });
            worst = worst.max(rel_err(g.d_embeddings[i][k], num, floor));
        }
    }
    for j in 0..case.proxies.len() {
        for k in 0..case.proxies[j].len() {
            let num = central_diff(|h| {
                let mut proxies = case.proxies.clone();
                proxies[j][k] += h;
                case_loss(&case.rows, &case.labels, &proxies, &case.cfg)
            });
            worst = worst.max(rel_err(g.d_proxies[j][k], num, floor));
        }
    }
    worst
}

/// Max relative error over `count` random loss configurations.
pub fn loss_gradient_suite(count: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| check_loss_gradients(&random_case(&mut rng)))
        .fold(0.0, f64::max)
}

/// Batch loss of a network's embeddings against fixed proxies.
fn network_loss(
    spec: &EmbedderSpec,
    params: &[f64],
    x: &[Vec<f64>],
    labels: &[usize],
    proxies: &ProxySet,
    cfg: &LossConfig,
) -> f64 {
    let b = embed(spec, params, x, labels).unwrap();
    batch_loss_grad(&b, proxies, cfg).unwrap().loss
}

/// 2-layer network, 6 samples, 3 classes: analytic parameter gradients
/// through loss and network against central differences.
pub fn check_network_gradients(seed: u64, activation: Activation, layer_norm: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = EmbedderSpec {
        widths: vec![4, 7, 3],
        activation,
        layer_norm_output: layer_norm,
    };
    let params = spec.init_params(seed, 0).unwrap();
    let x: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..4).map(|_| gauss(&mut rng, 1.0)).collect())
        .collect();
    let labels = vec![0, 1, 2, 0, 1, 2];
    let proxies = proxy_set(
        &(0..3)
            .map(|_| (0..3).map(|_| gauss(&mut rng, 1.5)).collect())
            .collect::<Vec<Vec<f64>>>(),
    );
    let cfg = LossConfig::new(parse_warp_pair("pwl(0.8, 0.4, 1.6) - t").unwrap(), 0.7).unwrap();

    let emb = forward(&spec, &params, &x).unwrap();
    let batch = LabeledBatch::from_rows(emb, labels.clone()).unwrap();
    let g = batch_loss_grad(&batch, &proxies, &cfg).unwrap();
    let analytic = backward(&spec, &params, &x, &g.d_embeddings).unwrap();
    let floor = fd_floor(g.loss);
    let mut worst: f64 = 0.0;
    for k in 0..params.len() {
        let num = central_diff(|h| {
            let mut p = params.clone();
            p[k] += h;
            network_loss(&spec, &p, &x, &labels, &proxies, &cfg)
        });
        worst = worst.max(rel_err(analytic[k], num, floor));
    }
    worst
}

// ------------------------------------------------------------ toy training

pub const TOY_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const TOY_ALPHA: f64 = 2.0;

pub fn toy_net() -> EmbedderSpec {
    EmbedderSpec {
        widths: vec![2, 32, 32, 2],
        activation: Activation::Tanh,
        layer_norm_output: false,
    }
}

pub fn toy_blobs(seed: u64) -> BlobSpec {
    BlobSpec {
        classes: 10,
        per_class: 100,
        dim: 2,
        center_scale: 3.0,
        noise_std: 0.4,
        seed,
    }
}

/// Two 1000-step phases; the warp strings give f1 - f2 for each phase.
pub fn toy_config(seed: u64, phase1: &str, phase2: &str) -> TrainConfig {
    let loss = |w: &str| LossConfig::new(parse_warp_pair(w).unwrap(), 1.0).unwrap();
    TrainConfig {
        seed,
        batch_size: 50,
        samples_per_class: 5,
        lr_model: 0.01,
        lr_proxies: 0.01,
        adam: AdamHyper::default(),
        max_avg_dtp: Some(10.0),
        steps_per_epoch: None,
        phase1: PhaseConfig {
            steps: 1000,
            loss: loss(phase1),
            lr_scale: 1.0,
        },
        phase2: PhaseConfig {
            steps: 1000,
            loss: loss(phase2),
            lr_scale: 0.5,
        },
    }
}

pub struct ToyRun {
    pub trace: TrainTrace,
    pub test_r1: f64,
    pub test_dtp: f64,
    pub seconds: f64,
}

pub fn toy_run(seed: u64, phase1: &str, phase2: &str) -> ToyRun {
    let start = std::time::Instant::now();
    let (tr, te) = make_blob_splits(&toy_blobs(seed), 200).unwrap();
    let net = toy_net();
    let trace = train(&tr.features, &tr.labels, &net, &toy_config(seed, phase1, phase2)).unwrap();
    let b = embed(&net, &trace.params, &te.features, &te.labels).unwrap();
    let test_r1 = recall_at_k(&b, &[1]).unwrap()[&1];
    let test_dtp = avg_dtp(&b, &trace.proxies).unwrap().avg_dtp;
    ToyRun {
        trace,
        test_r1,
        test_dtp,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub const VANILLA: (&str, &str) = ("t - t", "t - t");
pub const WARPED: (&str, &str) = ("pwl(4, 0.2, 2) - t", "pwl(2, 0.2, 2) - t");
pub const HALF: (&str, &str) = ("0.5*t - t", "0.5*t - t");
pub const DOUBLE: (&str, &str) = ("2*t - t", "2*t - t");

// ---------------------------------------------------------- metric oracles

/// Neighbors of every query by full sort on exact squared distance, ties to
/// the lower index.
pub fn oracle_rankings(rows: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    (0..rows.len())
        .map(|q| {
            let mut idx: Vec<usize> = (0..rows.len()).filter(|&j| j != q).collect();
            idx.sort_by(|&a, &b| {
                sq(&rows[q], &rows[a])
                    .partial_cmp(&sq(&rows[q], &rows[b]))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect()
}

pub fn oracle_recall(rank: &[Vec<usize>], labels: &[usize], k: usize) -> f64 {
    let hits = rank
        .iter()
        .enumerate()
        .filter(|(q, r)| r[..k].iter().any(|&j| labels[j] == labels[*q]))
        .count();
    hits as f64 / rank.len() as f64
}

/// `(MAP@R, RP, P@1)` averaged over queries whose class has another member.
pub fn oracle_map_at_r(rank: &[Vec<usize>], labels: &[usize]) -> (f64, f64, f64) {
    let (mut map, mut rp, mut p1, mut used) = (0.0, 0.0, 0.0, 0usize);
    for (q, r) in rank.iter().enumerate() {
        let big_r = labels.iter().filter(|&&l| l == labels[q]).count() - 1;
        if big_r == 0 {
            continue;
        }
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (i, &j) in r[..big_r].iter().enumerate() {
            if labels[j] == labels[q] {
                hits += 1;
                ap += hits as f64 / (i + 1) as f64;
            }
        }
        map += ap / big_r as f64;
        rp += hits as f64 / big_r as f64;
        p1 += if labels[r[0]] == labels[q] { 1.0 } else { 0.0 };
        used += 1;
    }
    let n = used as f64;
    (map / n, rp / n, p1 / n)
}

pub struct RandomBatch {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Mix of continuous and integer-lattice batches; the lattice ones are
/// full of exact distance ties.
pub fn random_batch(rng: &mut ChaCha8Rng) -> RandomBatch {
    let n = rng.random_range(10..=200);
    let dim = rng.random_range(1..=6);
    let classes = rng.random_range(2..=8);
    let lattice = rng.random_bool(0.5);
    let rows = (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    if lattice {
                        rng.random_range(-3..=3) as f64
                    } else {
                        gauss(rng, 1.0)
                    }
                })
                .collect()
        })
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    RandomBatch { rows, labels }
}

/// Count of mismatches between library metrics and the oracles over
/// `count` random batches.
pub fn metrics_oracle_mismatches(count: usize, seed: u64) -> Vec<String> {
    use softmax_warp::metrics::map_at_r;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for b in 0..count {
        let rb = random_batch(&mut rng);
        let batch = LabeledBatch::from_rows(rb.rows.clone(), rb.labels.clone()).unwrap();
        let rank = oracle_rankings(&rb.rows);
        let n = rb.rows.len();
        let ks: Vec<usize> = [1, 2, 4, 8, 16, n - 1].into_iter().filter(|&k| k < n).collect();
        let got = recall_at_k(&batch, &ks).unwrap();
        for &k in &ks {
            let want = oracle_recall(&rank, &rb.labels, k);
            if got[&k] != want {
                bad.push(format!("batch {b}: R@{k} {} vs {want}", got[&k]));
            }
        }
        let m = map_at_r(&batch).unwrap();
        let (map, rp, p1) = oracle_map_at_r(&rank, &rb.labels);
        if (m.map_at_r, m.rp, m.p_at_1) != (map, rp, p1) {
            bad.push(format!(
                "batch {b}: MAP@R/RP/P@1 {:?} vs {:?}",
                (m.map_at_r, m.rp, m.p_at_1),
                (map, rp, p1)
            ));
        }
    }
    bad
}
