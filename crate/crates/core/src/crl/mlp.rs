//! Fully connected network with hand-written backpropagation.
//!
//! Parameters live in one flat vector: for each layer the row-major weight
//! matrix (out x in) followed by the bias. Gradients use the same layout.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{CrlError, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
}

/// Per-layer outputs from a forward pass, input first.
#[derive(Debug, Clone)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds the input at least")
    }
}

impl Mlp {
    /// Zero-initialised network.
    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params: vec![0.0; n],
        }
    }

    /// Uniform(±1/sqrt(fan_in)) weights, zero biases; the last layer is
    /// scaled by `output_scale`.
    pub fn new(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        output_scale: f64,
        rng: &mut Rng,
    ) -> Self {
        let mut net = Self::zeros(sizes, hidden, output);
        let layers = net.sizes.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (net.sizes[l], net.sizes[l + 1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            let scale = if l + 1 == layers { output_scale } else { 1.0 };
            for w in &mut net.params[off..off + n_in * n_out] {
                *w = scale * rng.random_range(-bound..bound);
            }
            off += n_in * n_out + n_out;
        }
        net
    }

    /// Stacked tanh network with a linear head.
    pub fn tanh(sizes: &[usize], output_scale: f64, rng: &mut Rng) -> Self {
        Self::new(
            sizes,
            Activation::Tanh,
            Activation::Linear,
            output_scale,
            rng,
        )
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<(), CrlError> {
        if p.len() != self.params.len() {
            return Err(CrlError::ShapeMismatch {
                expected: self.params.len(),
                got: p.len(),
            });
        }
        self.params.copy_from_slice(p);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<(), CrlError> {
        if x.len() != self.input_dim() {
            return Err(CrlError::ShapeMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 2 == self.sizes.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, CrlError> {
        Ok(self.forward_cached(x)?.acts.pop().unwrap())
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<MlpCache, CrlError> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..self.sizes.len() - 1 {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let act = self.activation(l);
            let input = &acts[l];
            let out: Vec<f64> = (0..n_out)
                .map(|j| {
                    let row = &w[j * n_in..(j + 1) * n_in];
                    let z = b[j] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                    act.apply(z)
                })
                .collect();
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        Ok(MlpCache { acts })
    }

    /// Adds d<upstream, output>/dθ into `grad` and returns d<upstream, output>/dx.
    pub fn backward(
        &self,
        cache: &MlpCache,
        upstream: &[f64],
        grad: &mut [f64],
    ) -> Result<Vec<f64>, CrlError> {
        if upstream.len() != self.output_dim() {
            return Err(CrlError::ShapeMismatch {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if grad.len() != self.params.len() {
            return Err(CrlError::ShapeMismatch {
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }

        let mut delta: Vec<f64> = upstream.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let act = self.activation(l);
            let out = &cache.acts[l + 1];
            for j in 0..n_out {
                delta[j] *= act.derivative_from_output(out[j]);
            }
            let input = &cache.acts[l];
            let off = offsets[l];
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for j in 0..n_out {
                let d = delta[j];
                if d == 0.0 {
                    continue;
                }
                gb[j] += d;
                for (g, x) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut next = vec![0.0; n_in];
            for j in 0..n_out {
                let d = delta[j];
                if d == 0.0 {
                    continue;
                }
                for (n, wv) in next.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                    *n += d * wv;
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    /// Gradients of <upstream, f(x)> with respect to parameters and input.
    pub fn gradient(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>), CrlError> {
        let cache = self.forward_cached(x)?;
        let mut g = vec![0.0; self.params.len()];
        let dx = self.backward(&cache, upstream, &mut g)?;
        Ok((g, dx))
    }

    /// `self ← tau·live + (1 − tau)·self`.
    pub fn polyak_from(&mut self, live: &Mlp, tau: f64) {
        assert_eq!(
            self.params.len(),
            live.params.len(),
            "network shapes differ"
        );
        if tau == 1.0 {
            self.params.copy_from_slice(&live.params);
            return;
        }
        if tau == 0.0 {
            return;
        }
        for (t, l) in self.params.iter_mut().zip(&live.params) {
            *t = tau * l + (1.0 - tau) * *t;
        }
    }
}
