use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::user_model::Matrix;

/// One tanh hidden layer followed by a scalar linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub type MlpGrad = Mlp;

impl Mlp {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            w1: Matrix::zeros(hidden, inputs),
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: vec![0.0],
        }
    }

    /// Uniform fan-in initialization; the output layer starts small.
    pub fn init<R: Rng>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(inputs, hidden);
        let bound1 = 1.0 / (inputs as f64).sqrt();
        for w in net.w1.as_mut_slice() {
            *w = rng.random_range(-bound1..bound1);
        }
        for b in &mut net.b1 {
            *b = rng.random_range(-bound1..bound1);
        }
        for w in &mut net.w2 {
            *w = rng.random_range(-3e-3..3e-3);
        }
        net
    }

    pub fn inputs(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn zeros_like(&self) -> MlpGrad {
        Self::zeros(self.inputs(), self.hidden())
    }

    /// Output and hidden activations.
    pub fn forward(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut h = self.w1.matvec(x);
        for (v, b) in h.iter_mut().zip(&self.b1) {
            *v = (*v + b).tanh();
        }
        let out = h.iter().zip(&self.w2).map(|(a, b)| a * b).sum::<f64>() + self.b2[0];
        (out, h)
    }

    pub fn output(&self, x: &[f64]) -> f64 {
        self.forward(x).0
    }

    /// Accumulates `dout · ∂out/∂θ` into `grad`; returns `dout · ∂out/∂x`.
    pub fn backward(&self, x: &[f64], hidden: &[f64], dout: f64, grad: &mut MlpGrad) -> Vec<f64> {
        grad.b2[0] += dout;
        let mut dpre = vec![0.0; hidden.len()];
        for i in 0..hidden.len() {
            grad.w2[i] += dout * hidden[i];
            dpre[i] = dout * self.w2[i] * (1.0 - hidden[i] * hidden[i]);
            grad.b1[i] += dpre[i];
        }
        grad.w1.add_outer(&dpre, x);
        self.w1.matvec_t(&dpre)
    }

    pub fn groups(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, &self.w2, &self.b2]
    }

    pub fn groups_mut(&mut self) -> [&mut [f64]; 4] {
        [self.w1.as_mut_slice(), &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.groups_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self ← τ·source + (1 − τ)·self`
    pub fn soft_update(&mut self, source: &Mlp, tau: f64) {
        for (dst, src) in self.groups_mut().into_iter().zip(source.groups()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Adam state for one [`Mlp`].
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    m: Mlp,
    v: Mlp,
    step: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            m: net.zeros_like(),
            v: net.zeros_like(),
            step: 0,
            lr,
        }
    }

    /// Gradient-descent step on `net` with gradient `grad`.
    pub fn apply(&mut self, net: &mut Mlp, grad: &MlpGrad) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let groups = net
            .groups_mut()
            .into_iter()
            .zip(grad.groups())
            .zip(self.m.groups_mut())
            .zip(self.v.groups_mut());
        for (((p, g), m), v) in groups {
            for i in 0..p.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}
