//! Small feed-forward embedder with hand-written reverse mode.
//!
//! Parameters live in one flat vector. For each affine layer `l` mapping
//! `widths[l] -> widths[l+1]` the layout is the weight matrix (row-major,
//! `out × in`) followed by the bias. When `layer_norm_output` is set the
//! output gain and bias follow, `n` values each.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    /// Input width, hidden widths, embedding width.
    pub widths: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub layer_norm_output: bool,
}

impl EmbedderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::param(
                "widths",
                "need an input and an output width (at least one layer)",
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::param("widths", "every width must be at least 1"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// `(weight offset, bias offset)` of layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for k in 0..l {
            off += self.widths[k + 1] * (self.widths[k] + 1);
        }
        (off, off + self.widths[l + 1] * self.widths[l])
    }

    fn norm_offset(&self) -> usize {
        self.layer_offsets(self.num_layers() - 1).1 + self.output_dim()
    }

    pub fn num_params(&self) -> usize {
        let affine = self.norm_offset();
        if self.layer_norm_output {
            affine + 2 * self.output_dim()
        } else {
            affine
        }
    }

    /// Weights `N(0, 1/fan_in)`, zero biases, unit layer-norm gain.
    pub fn init_params(&self, seed: u64, stream: u64) -> Result<Vec<f64>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut params = vec![0.0; self.num_params()];
        for l in 0..self.num_layers() {
            let (w, b) = self.layer_offsets(l);
            let std = 1.0 / (self.widths[l] as f64).sqrt();
            for v in &mut params[w..b] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = std * z;
            }
        }
        if self.layer_norm_output {
            let g = self.norm_offset();
            params[g..g + self.output_dim()].fill(1.0);
        }
        Ok(params)
    }

    fn check(&self, params: &[f64], inputs: &[Vec<f64>]) -> Result<()> {
        self.validate()?;
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                found: params.len(),
            });
        }
        for x in inputs {
            if x.len() != self.input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.input_dim(),
                    found: x.len(),
                });
            }
        }
        Ok(())
    }
}

/// Per-sample activations kept for the backward pass.
struct Tape {
    /// `acts[0]` is the input, `acts[l+1]` the output of layer `l` after its
    /// activation (the last layer has none).
    acts: Vec<Vec<f64>>,
    /// Normalized pre-gain values and inverse std when layer norm is on.
    norm: Option<(Vec<f64>, f64)>,
    out: Vec<f64>,
}

fn affine(params: &[f64], w: usize, b: usize, x: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = x.len();
    (0..out_dim)
        .map(|o| {
            let row = &params[w + o * in_dim..w + (o + 1) * in_dim];
            params[b + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

fn run(spec: &EmbedderSpec, params: &[f64], x: &[f64]) -> Tape {
    let layers = spec.num_layers();
    let mut acts = Vec::with_capacity(layers + 1);
    acts.push(x.to_vec());
    for l in 0..layers {
        let (w, b) = spec.layer_offsets(l);
        let mut h = affine(params, w, b, &acts[l], spec.widths[l + 1]);
        if l + 1 < layers {
            for v in &mut h {
                *v = spec.activation.apply(*v);
            }
        }
        acts.push(h);
    }
    let last = acts.last().expect("at least one layer");
    if !spec.layer_norm_output {
        let out = last.clone();
        return Tape {
            acts,
            norm: None,
            out,
        };
    }
    let n = last.len() as f64;
    let mean = last.iter().sum::<f64>() / n;
    let var = last.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    let xhat: Vec<f64> = last.iter().map(|v| (v - mean) * inv_std).collect();
    let g = spec.norm_offset();
    let d = spec.output_dim();
    let out = (0..d)
        .map(|i| params[g + i] * xhat[i] + params[g + d + i])
        .collect();
    Tape {
        acts,
        norm: Some((xhat, inv_std)),
        out,
    }
}

pub fn forward(spec: &EmbedderSpec, params: &[f64], inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    spec.check(params, inputs)?;
    Ok(inputs.iter().map(|x| run(spec, params, x).out).collect())
}

/// Gradient of `Σ_i ⟨d_embeddings[i], φ(inputs[i])⟩` with respect to every
/// parameter, in the flat layout.
pub fn backward(
    spec: &EmbedderSpec,
    params: &[f64],
    inputs: &[Vec<f64>],
    d_embeddings: &[Vec<f64>],
) -> Result<Vec<f64>> {
    spec.check(params, inputs)?;
    if d_embeddings.len() != inputs.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            found: d_embeddings.len(),
        });
    }
    let d = spec.output_dim();
    let mut grads = vec![0.0; params.len()];
    for (x, dy) in inputs.iter().zip(d_embeddings) {
        if dy.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: dy.len(),
            });
        }
        let tape = run(spec, params, x);
        let mut delta = match &tape.norm {
            None => dy.clone(),
            Some((xhat, inv_std)) => {
                let g = spec.norm_offset();
                let dxhat: Vec<f64> = (0..d).map(|i| dy[i] * params[g + i]).collect();
                for i in 0..d {
                    grads[g + i] += dy[i] * xhat[i];
                    grads[g + d + i] += dy[i];
                }
                let n = d as f64;
                let mean_dx = dxhat.iter().sum::<f64>() / n;
                let mean_dx_x = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                (0..d)
                    .map(|i| inv_std * (dxhat[i] - mean_dx - xhat[i] * mean_dx_x))
                    .collect()
            }
        };
        for l in (0..spec.num_layers()).rev() {
            let (w, b) = spec.layer_offsets(l);
            let input = &tape.acts[l];
            let in_dim = input.len();
            for (o, &g) in delta.iter().enumerate() {
                grads[b + o] += g;
                let row = &mut grads[w + o * in_dim..w + (o + 1) * in_dim];
                for (r, &xi) in row.iter_mut().zip(input) {
                    *r += g * xi;
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; in_dim];
            for (o, &g) in delta.iter().enumerate() {
                let row = &params[w + o * in_dim..w + (o + 1) * in_dim];
                for (p, &wi) in prev.iter_mut().zip(row) {
                    *p += g * wi;
                }
            }
            for (p, &y) in prev.iter_mut().zip(input) {
                *p *= spec.activation.grad_from_output(y);
            }
            delta = prev;
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(n: usize) -> EmbedderSpec {
        EmbedderSpec {
            widths: vec![n, n],
            activation: Activation::Relu,
            layer_norm_output: false,
        }
    }

    #[test]
    fn layout_sizes() {
        let spec = EmbedderSpec {
            widths: vec![3, 4, 2],
            activation: Activation::Tanh,
            layer_norm_output: true,
        };
        assert_eq!(spec.num_params(), 4 * 4 + 2 * 5 + 4);
        assert!(EmbedderSpec { widths: vec![3], ..spec.clone() }.validate().is_err());
        assert!(EmbedderSpec { widths: vec![3, 0], ..spec }.validate().is_err());
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = linear(3);
        let mut params = vec![0.0; spec.num_params()];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        let x = vec![vec![1.5, -2.0, 0.25]];
        assert_eq!(forward(&spec, &params, &x).unwrap(), x);
    }

    #[test]
    fn layer_norm_on_constant_vector_gives_bias() {
        let spec = EmbedderSpec {
            widths: vec![2, 3],
            activation: Activation::Relu,
            layer_norm_output: true,
        };
        // Zero weights, equal biases: the pre-norm output is constant.
        let mut params = vec![0.0; spec.num_params()];
        let (_, b) = spec.layer_offsets(0);
        params[b..b + 3].fill(0.5);
        let g = spec.norm_offset();
        params[g..g + 3].fill(2.0);
        params[g + 3..g + 6].copy_from_slice(&[0.1, -0.2, 0.3]);
        let out = forward(&spec, &params, &[vec![4.0, 5.0]]).unwrap();
        assert_eq!(out[0], vec![0.1, -0.2, 0.3]);
    }

    #[test]
    fn forward_is_deterministic_and_checks_shapes() {
        let spec = EmbedderSpec {
            widths: vec![2, 8, 2],
            activation: Activation::Tanh,
            layer_norm_output: false,
        };
        let p = spec.init_params(5, 0).unwrap();
        let x = vec![vec![0.3, -1.0], vec![2.0, 0.5]];
        let a = forward(&spec, &p, &x).unwrap();
        let b = forward(&spec, &p, &x).unwrap();
        assert_eq!(a, b);
        assert!(forward(&spec, &p, &[vec![1.0]]).is_err());
        assert!(forward(&spec, &p[1..], &x).is_err());
        assert!(backward(&spec, &p, &x, &[vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn init_scaling() {
        let spec = EmbedderSpec {
            widths: vec![400, 50],
            activation: Activation::Relu,
            layer_norm_output: true,
        };
        let p = spec.init_params(1, 0).unwrap();
        let (w, b) = spec.layer_offsets(0);
        let var = p[w..b].iter().map(|v| v * v).sum::<f64>() / (b - w) as f64;
        assert!((var * 400.0 - 1.0).abs() < 0.05, "{var}");
        assert!(p[b..b + 50].iter().all(|&v| v == 0.0));
        assert!(p[spec.norm_offset()..][..50].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let spec = EmbedderSpec {
            widths: vec![3, 5, 2],
            activation: Activation::Tanh,
            layer_norm_output: true,
        };
        let p = spec.init_params(2, 0).unwrap();
        let g = backward(&spec, &p, &[vec![1.0, 2.0, 3.0]], &[vec![0.0, 0.0]]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_layer_weight_grad_is_outer_product() {
        let spec = EmbedderSpec {
            widths: vec![3, 2],
            activation: Activation::Relu,
            layer_norm_output: false,
        };
        let p = spec.init_params(3, 0).unwrap();
        let x = vec![0.5, -1.0, 2.0];
        let de = vec![3.0, -0.5];
        let g = backward(&spec, &p, std::slice::from_ref(&x), std::slice::from_ref(&de)).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(g[o * 3 + i], de[o] * x[i]);
            }
            assert_eq!(g[6 + o], de[o]);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (activation, ln) in [
            (Activation::Tanh, false),
            (Activation::Tanh, true),
            (Activation::Relu, true),
        ] {
            let spec = EmbedderSpec {
                widths: vec![3, 6, 4],
                activation,
                layer_norm_output: ln,
            };
            let p = spec.init_params(11, 0).unwrap();
            let x = vec![vec![0.4, -0.3, 1.1], vec![-0.8, 0.9, 0.2]];
            let w = vec![vec![0.3, -1.0, 0.5, 0.2], vec![-0.7, 0.1, 0.4, 1.2]];
            let objective = |q: &[f64]| -> f64 {
                forward(&spec, q, &x)
                    .unwrap()
                    .iter()
                    .zip(&w)
                    .map(|(e, wi)| e.iter().zip(wi).map(|(a, b)| a * b).sum::<f64>())
                    .sum()
            };
            let g = backward(&spec, &p, &x, &w).unwrap();
            let h = 1e-6;
            for k in 0..p.len() {
                let mut plus = p.clone();
                let mut minus = p.clone();
                plus[k] += h;
                minus[k] -= h;
                let num = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let err = (g[k] - num).abs() / g[k].abs().max(num.abs()).max(1e-6);
                assert!(err < 1e-5, "{activation:?} ln={ln} param {k}: {} vs {num}", g[k]);
            }
        }
    }
}
