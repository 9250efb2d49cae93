//! Minimal single-hidden-layer perceptron over a flat parameter vector.
//!
//! Keeping every weight in one `Vec<f64>` makes the optimizer, checkpointing
//! and finite-difference verification trivial: a network is just a layout
//! plus a slice of numbers.

use rand::Rng;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activated value `h = f(z)`.
    fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Shape of a scalar-output perceptron: input -> hidden -> 1.
///
/// Parameter order within the flat vector:
/// `[W1 (hidden x input, row-major) | b1 (hidden) | W2 (hidden) | b2 (1)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpLayout {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
}

impl MlpLayout {
    pub fn param_count(&self) -> usize {
        self.hidden_dim * self.input_dim + self.hidden_dim + self.hidden_dim + 1
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1_end = self.hidden_dim * self.input_dim;
        let b1_end = w1_end + self.hidden_dim;
        let w2_end = b1_end + self.hidden_dim;
        (w1_end, b1_end, w2_end)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut theta = vec![0.0; self.param_count()];
        let (w1_end, b1_end, w2_end) = self.offsets();
        let a1 = (6.0 / (self.input_dim + self.hidden_dim) as f64).sqrt();
        for w in &mut theta[..w1_end] {
            *w = rng.gen_range(-a1..a1);
        }
        let a2 = (6.0 / (self.hidden_dim + 1) as f64).sqrt();
        for w in &mut theta[b1_end..w2_end] {
            *w = rng.gen_range(-a2..a2);
        }
        theta
    }

    /// Raw scalar output (no output activation) and the activated hidden
    /// layer, which [`Self::backward`] needs.
    pub fn forward(&self, theta: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
        debug_assert_eq!(theta.len(), self.param_count());
        debug_assert_eq!(x.len(), self.input_dim);
        let (w1_end, b1_end, w2_end) = self.offsets();
        let w1 = &theta[..w1_end];
        let b1 = &theta[w1_end..b1_end];
        let w2 = &theta[b1_end..w2_end];
        let b2 = theta[w2_end];

        let mut hidden = Vec::with_capacity(self.hidden_dim);
        for i in 0..self.hidden_dim {
            let row = &w1[i * self.input_dim..(i + 1) * self.input_dim];
            let z: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b1[i];
            hidden.push(self.activation.apply(z));
        }
        let out = w2.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + b2;
        (out, hidden)
    }

    pub fn output(&self, theta: &[f64], x: &[f64]) -> f64 {
        self.forward(theta, x).0
    }

    /// Accumulate `d(loss)/d(theta)` into `grad` given `d(loss)/d(out)`.
    pub fn backward(
        &self,
        theta: &[f64],
        x: &[f64],
        hidden: &[f64],
        d_out: f64,
        grad: &mut [f64],
    ) {
        debug_assert_eq!(grad.len(), self.param_count());
        debug_assert_eq!(hidden.len(), self.hidden_dim);
        let (w1_end, b1_end, w2_end) = self.offsets();
        let w2 = &theta[b1_end..w2_end];

        for i in 0..self.hidden_dim {
            grad[b1_end + i] += d_out * hidden[i];
        }
        grad[w2_end] += d_out;

        for i in 0..self.hidden_dim {
            let dz = d_out * w2[i] * self.activation.derivative_from_output(hidden[i]);
            if dz == 0.0 {
                continue;
            }
            let row = &mut grad[i * self.input_dim..(i + 1) * self.input_dim];
            for (g, xi) in row.iter_mut().zip(x) {
                *g += dz * xi;
            }
            grad[w1_end + i] += dz;
        }
    }
}
