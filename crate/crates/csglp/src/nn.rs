//! Layers, parameter initialization and the Adam optimizer.
//!
//! Layers store their parameters as plain arrays. For a training step the
//! caller binds them into a [`Graph`] (`bind` returns the leaf vars in a
//! fixed order), runs forward passes that reuse those vars, asks the graph
//! for gradients and applies an optimizer step back onto the stored arrays.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, Var};

fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), v).unwrap()
}

/// Kaiming-uniform init for relu-family activations.
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

/// A convolution layer with bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ArrayD<f64>,
    pub b: ArrayD<f64>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cin: usize,
        cout: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = cin * kh * kw;
        Conv2d {
            w: he_uniform(&[cout, cin, kh, kw], fan_in, rng),
            b: ArrayD::zeros(IxDyn(&[cout])),
            stride,
            pad,
        }
    }

    /// Create graph leaves for this layer's parameters.
    pub fn bind(&self, g: &mut Graph) -> (Var, Var) {
        (g.leaf(self.w.clone()), g.leaf(self.b.clone()))
    }

    pub fn forward(&self, g: &mut Graph, vars: (Var, Var), x: Var) -> Var {
        let y = g.conv2d(x, vars.0, self.stride, self.pad);
        g.add_bias_chan(y, vars.1)
    }
}

/// A fully connected layer with bias.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ArrayD<f64>, // (in, out)
    pub b: ArrayD<f64>, // (out,)
}

impl Linear {
    pub fn new(dim_in: usize, dim_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: he_uniform(&[dim_in, dim_out], dim_in, rng),
            b: ArrayD::zeros(IxDyn(&[dim_out])),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> (Var, Var) {
        (g.leaf(self.w.clone()), g.leaf(self.b.clone()))
    }

    pub fn forward(&self, g: &mut Graph, vars: (Var, Var), x: Var) -> Var {
        let y = g.matmul(x, vars.0);
        g.add_bias2d(y, vars.1)
    }
}

/// Row-wise log-softmax of an (N,C) var, with max subtraction.
pub fn log_softmax_rows(g: &mut Graph, x: Var) -> Var {
    let shape = g.shape(x).to_vec();
    assert_eq!(shape.len(), 2, "log_softmax_rows expects (N,C)");
    let n = shape[0];
    // row maxima enter as constants; shifting by a constant leaves both the
    // value and the gradient of log-softmax unchanged
    let xv = g.value(x);
    let mut maxes = Vec::with_capacity(n);
    for row in xv.rows() {
        maxes.push(row.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    let m = g.leaf(ArrayD::from_shape_vec(IxDyn(&[n]), maxes).unwrap());
    let mb = g.broadcast_per_sample(m, &shape);
    let shifted = g.sub(x, mb);
    let e = g.exp(shifted);
    let s = g.sum_per_sample(e);
    let ls = g.log(s);
    let lsb = g.broadcast_per_sample(ls, &shape);
    g.sub(shifted, lsb)
}

/// Mean cross-entropy of (N,C) logits against integer class labels.
pub fn cross_entropy_indexed(g: &mut Graph, logits: Var, labels: &[usize]) -> Var {
    let shape = g.shape(logits).to_vec();
    let (n, c) = (shape[0], shape[1]);
    assert_eq!(labels.len(), n, "label count mismatch");
    let lsm = log_softmax_rows(g, logits);
    let mut onehot = Array2::<f64>::zeros((n, c));
    for (i, &l) in labels.iter().enumerate() {
        assert!(l < c, "label {l} out of range for {c} classes");
        onehot[[i, l]] = 1.0;
    }
    let mask = g.leaf(onehot.into_dyn());
    let picked = g.mul(lsm, mask);
    let s = g.sum_all(picked);
    g.scale(s, -1.0 / n as f64)
}

/// Mean soft-target cross-entropy of (N,C) logits against an (N,C)
/// row-stochastic target matrix.
pub fn cross_entropy_soft_targets(g: &mut Graph, logits: Var, soft: &Array2<f64>) -> Var {
    let shape = g.shape(logits).to_vec();
    assert_eq!(
        &shape[..],
        &[soft.nrows(), soft.ncols()],
        "soft target shape mismatch"
    );
    let n = soft.nrows();
    let lsm = log_softmax_rows(g, logits);
    let t = g.leaf(soft.clone().into_dyn());
    let prod = g.mul(lsm, t);
    let s = g.sum_all(prod);
    g.scale(s, -1.0 / n as f64)
}

/// Adam with bias correction. Slot order must match the parameter order
/// used at every step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step(&mut self, lr: f64, params: &mut [&mut ArrayD<f64>], grads: &[ArrayD<f64>]) {
        assert_eq!(params.len(), grads.len(), "param/grad count mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
            self.v = params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer slot count changed");
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            m.zip_mut_with(grad, |mi, gi| *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi);
            v.zip_mut_with(grad, |vi, gi| *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi);
            ndarray::Zip::from(&mut **p)
                .and(&*m)
                .and(&*v)
                .for_each(|pi, &mi, &vi| {
                    let mhat = mi / b1t;
                    let vhat = vi / b2t;
                    *pi -= lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn log_softmax_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let x = g.leaf(uniform(&[5, 7], 4.0, &mut rng));
        let lsm = log_softmax_rows(&mut g, x);
        let v = g.value(lsm);
        for row in v.rows() {
            let s: f64 = row.iter().map(|l| l.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_c() {
        let mut g = Graph::new();
        let x = g.leaf(ArrayD::zeros(IxDyn(&[4, 14])));
        let ce = cross_entropy_indexed(&mut g, x, &[0, 3, 7, 13]);
        assert!((g.scalar(ce) - (14.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_indexed_gradient_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits = uniform(&[3, 5], 2.0, &mut rng);
        let labels = [2usize, 0, 4];

        let mut g = Graph::new();
        let x = g.leaf(logits.clone());
        let ce = cross_entropy_indexed(&mut g, x, &labels);
        let grad = g.grad(ce, &[x])[0];
        let ana = g.value(grad).to_owned();

        let h = 1e-6;
        for idx in 0..logits.len() {
            let mut lp = logits.clone();
            lp.as_slice_mut().unwrap()[idx] += h;
            let mut lm = logits.clone();
            lm.as_slice_mut().unwrap()[idx] -= h;
            let f = |l: &ArrayD<f64>| {
                let mut g = Graph::new();
                let x = g.leaf(l.clone());
                let ce = cross_entropy_indexed(&mut g, x, &labels);
                g.scalar(ce)
            };
            let num = (f(&lp) - f(&lm)) / (2.0 * h);
            let a = ana.as_slice().unwrap()[idx];
            assert!((a - num).abs() < 1e-6, "entry {idx}: {a} vs {num}");
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = ArrayD::from_elem(IxDyn(&[2]), 5.0);
        let mut opt = Adam::new(0.9, 0.999);
        for _ in 0..2000 {
            let grad = p.mapv(|x| 2.0 * (x - 1.5));
            opt.step(0.05, &mut [&mut p], &[grad]);
        }
        for &v in p.iter() {
            assert!((v - 1.5).abs() < 1e-3, "converged to {v}");
        }
    }
}
