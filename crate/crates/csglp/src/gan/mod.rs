//! Camera-style translation network: one conditional generator and one
//! critic with an auxiliary camera classifier, trained with a Wasserstein
//! objective plus gradient penalty and a cycle reconstruction loss.
//!
//! The generator receives the `[c1, c2, mask]` condition spatially
//! broadcast and concatenated to the image as extra input channels. The
//! critic outputs an unbounded per-sample realness score (mean of a 1x1
//! conv map) and camera logits over the combined `C_s + C_t` label space
//! from a full-extent conv head.

pub mod losses;
pub mod train;
pub mod translate;

use ndarray::{Array2, Array4, ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;

use crate::data::DomainConfig;
use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::tensor::{conv_output_extent, Graph, Var};

/// Weights and schedule constants for GAN training.
#[derive(Debug, Clone)]
pub struct GanHyperParams {
    pub lambda_c: f64,
    pub lambda_rec: f64,
    pub lambda_gp: f64,
    pub lr: f64,
    /// Linear learning-rate decay over the second half of training.
    pub lr_decay: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub critic_steps_per_gen: usize,
    pub total_iters: usize,
    /// Checkpoint every this many iterations; 0 writes only the final one.
    pub ckpt_interval: usize,
    pub gen_width: usize,
    pub gen_depth: usize,
    pub critic_width: usize,
    pub critic_depth: usize,
    pub leaky_slope: f64,
}

impl Default for GanHyperParams {
    fn default() -> Self {
        GanHyperParams {
            lambda_c: 1.0,
            lambda_rec: 10.0,
            lambda_gp: 10.0,
            lr: 1e-4,
            lr_decay: true,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            batch_size: 16,
            critic_steps_per_gen: 5,
            total_iters: 50_000,
            ckpt_interval: 10_000,
            gen_width: 16,
            gen_depth: 3,
            critic_width: 16,
            critic_depth: 2,
            leaky_slope: 0.2,
        }
    }
}

impl GanHyperParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_c", self.lambda_c),
            ("lambda_rec", self.lambda_rec),
            ("lambda_gp", self.lambda_gp),
        ] {
            if v < 0.0 {
                return Err(Error::config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.critic_steps_per_gen < 1 {
            return Err(Error::config("critic_steps_per_gen must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be >= 2 to mix both domains"));
        }
        if self.gen_depth < 2 || self.critic_depth < 1 {
            return Err(Error::config("network depth too small"));
        }
        Ok(())
    }

    /// Learning rate at iteration `t` (0-based): constant over the first
    /// half, then linear decay to zero.
    pub fn lr_at(&self, t: usize) -> f64 {
        if !self.lr_decay || self.total_iters < 2 {
            return self.lr;
        }
        let half = self.total_iters / 2;
        if t < half {
            self.lr
        } else {
            self.lr * (self.total_iters - t) as f64 / (self.total_iters - half) as f64
        }
    }
}

/// Critic outputs for a batch.
pub struct CriticOut {
    /// Per-sample realness score, shape (N,); unbounded under WGAN-GP.
    pub realness: Var,
    /// Camera logits over all cameras of all domains, shape (N, C_s + C_t).
    pub camera_logits: Var,
}

/// Anything with the critic's I/O contract: tiny stubs in tests, the real
/// conv net in training.
pub trait CriticNet {
    /// Bind parameters into the graph; the same vars must be passed to every
    /// `forward` of one step so gradients accumulate across uses.
    fn bind(&self, g: &mut Graph) -> Vec<Var>;
    fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> CriticOut;
}

/// Anything with the generator's I/O contract: (pixels, condition) to
/// pixels of identical shape, output in [-1, 1].
pub trait GeneratorNet {
    fn bind(&self, g: &mut Graph) -> Vec<Var>;
    /// `cond` is one condition row per sample, shape (N, condition_dim).
    fn forward(&self, g: &mut Graph, vars: &[Var], x: Var, cond: &Array2<f64>) -> Var;

    /// Inference convenience: run a batch through a scratch graph.
    fn infer(&self, x: &Array4<f64>, cond: &Array2<f64>) -> Array4<f64> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let xv = g.leaf(x.clone().into_dyn());
        let y = self.forward(&mut g, &vars, xv, cond);
        g.value(y)
            .to_owned()
            .into_dimensionality()
            .expect("generator output is (N,3,H,W)")
    }
}

/// Spatially broadcast per-sample condition rows to (N, cdim, H, W) and
/// append them to the image channels.
pub fn concat_condition_channels(g: &mut Graph, x: Var, cond: &Array2<f64>) -> Var {
    let shape = g.shape(x).to_vec();
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    assert_eq!(cond.nrows(), n, "condition row count mismatch");
    let c = g.leaf(cond.clone().into_dyn());
    let cb = g.broadcast_spatial(c, &[n, cond.ncols(), h, w]);
    g.concat_chan(x, cb)
}

/// The conditional translation generator: full-resolution conv stack with
/// relu interiors and a tanh output, condition appended as input channels.
#[derive(Debug, Clone)]
pub struct Generator {
    pub convs: Vec<Conv2d>,
    pub cond_dim: usize,
}

impl Generator {
    pub fn new(cond_dim: usize, width: usize, depth: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(depth >= 2, "generator needs at least 2 layers");
        let mut convs = Vec::with_capacity(depth);
        convs.push(Conv2d::new(3 + cond_dim, width, 3, 3, 1, 1, rng));
        for _ in 0..depth.saturating_sub(2) {
            convs.push(Conv2d::new(width, width, 3, 3, 1, 1, rng));
        }
        convs.push(Conv2d::new(width, 3, 3, 3, 1, 1, rng));
        Generator { convs, cond_dim }
    }

    pub fn named_params(&self) -> Vec<(String, &ArrayD<f64>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("gen.conv{i}.w"), &c.w));
            out.push((format!("gen.conv{i}.b"), &c.b));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut ArrayD<f64>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.push((format!("gen.conv{i}.w"), &mut c.w));
            out.push((format!("gen.conv{i}.b"), &mut c.b));
        }
        out
    }
}

impl GeneratorNet for Generator {
    fn bind(&self, g: &mut Graph) -> Vec<Var> {
        let mut vars = Vec::new();
        for c in &self.convs {
            let (w, b) = c.bind(g);
            vars.push(w);
            vars.push(b);
        }
        vars
    }

    fn forward(&self, g: &mut Graph, vars: &[Var], x: Var, cond: &Array2<f64>) -> Var {
        assert_eq!(cond.ncols(), self.cond_dim, "condition dim mismatch");
        let mut y = concat_condition_channels(g, x, cond);
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            y = conv.forward(g, (vars[2 * i], vars[2 * i + 1]), y);
            y = if i == last { g.tanh(y) } else { g.relu(y) };
        }
        y
    }
}

/// The Wasserstein critic with auxiliary camera classifier.
///
/// `head_r` is a 1x1 conv whose map is mean-reduced to the scalar critic
/// value; `head_c` is a conv covering the entire remaining spatial extent,
/// producing one logit per camera of either domain.
#[derive(Debug, Clone)]
pub struct Critic {
    pub convs: Vec<Conv2d>,
    pub head_r: Conv2d,
    pub head_c: Conv2d,
    pub leaky: f64,
    pub input_hw: (usize, usize),
}

impl Critic {
    pub fn new(
        total_cameras: usize,
        width: usize,
        depth: usize,
        input_hw: (usize, usize),
        leaky: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(depth >= 1);
        let mut convs = Vec::with_capacity(depth);
        let (mut h, mut w) = input_hw;
        let mut cin = 3;
        let mut cout = width;
        for _ in 0..depth {
            convs.push(Conv2d::new(cin, cout, 3, 3, 2, 1, rng));
            h = conv_output_extent(h, 3, 2, 1);
            w = conv_output_extent(w, 3, 2, 1);
            cin = cout;
            cout *= 2;
        }
        let head_r = Conv2d::new(cin, 1, 1, 1, 1, 0, rng);
        let head_c = Conv2d::new(cin, total_cameras, h, w, 1, 0, rng);
        Critic {
            convs,
            head_r,
            head_c,
            leaky,
            input_hw,
        }
    }

    pub fn named_params(&self) -> Vec<(String, &ArrayD<f64>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("critic.conv{i}.w"), &c.w));
            out.push((format!("critic.conv{i}.b"), &c.b));
        }
        out.push(("critic.head_r.w".into(), &self.head_r.w));
        out.push(("critic.head_r.b".into(), &self.head_r.b));
        out.push(("critic.head_c.w".into(), &self.head_c.w));
        out.push(("critic.head_c.b".into(), &self.head_c.b));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut ArrayD<f64>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.push((format!("critic.conv{i}.w"), &mut c.w));
            out.push((format!("critic.conv{i}.b"), &mut c.b));
        }
        out.push(("critic.head_r.w".into(), &mut self.head_r.w));
        out.push(("critic.head_r.b".into(), &mut self.head_r.b));
        out.push(("critic.head_c.w".into(), &mut self.head_c.w));
        out.push(("critic.head_c.b".into(), &mut self.head_c.b));
        out
    }
}

impl CriticNet for Critic {
    fn bind(&self, g: &mut Graph) -> Vec<Var> {
        let mut vars = Vec::new();
        for c in &self.convs {
            let (w, b) = c.bind(g);
            vars.push(w);
            vars.push(b);
        }
        let (w, b) = self.head_r.bind(g);
        vars.push(w);
        vars.push(b);
        let (w, b) = self.head_c.bind(g);
        vars.push(w);
        vars.push(b);
        vars
    }

    fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> CriticOut {
        let mut y = x;
        for (i, conv) in self.convs.iter().enumerate() {
            y = conv.forward(g, (vars[2 * i], vars[2 * i + 1]), y);
            y = g.leaky_relu(y, self.leaky);
        }
        let k = 2 * self.convs.len();
        let rmap = self.head_r.forward(g, (vars[k], vars[k + 1]), y);
        let realness = g.mean_per_sample(rmap);
        let cmap = self.head_c.forward(g, (vars[k + 2], vars[k + 3]), y);
        let shape = g.shape(cmap).to_vec();
        debug_assert_eq!((shape[2], shape[3]), (1, 1), "cls head must cover the map");
        let camera_logits = g.reshape(cmap, &[shape[0], shape[1]]);
        CriticOut {
            realness,
            camera_logits,
        }
    }
}

/// Build the (N, cdim) condition matrix for per-record conditions.
pub fn condition_matrix(
    conds: &[crate::data::ConditionVector],
    config: &DomainConfig,
) -> Result<Array2<f64>> {
    let dim = config.condition_dim();
    let mut m = Array2::<f64>::zeros((conds.len(), dim));
    for (i, c) in conds.iter().enumerate() {
        if c.values.len() != dim {
            return Err(Error::shape(format!(
                "condition {i} has length {}, expected {dim}",
                c.values.len()
            )));
        }
        for (j, &v) in c.values.iter().enumerate() {
            m[[i, j]] = v;
        }
    }
    Ok(m)
}

/// Test stubs with the production I/O contracts.
pub mod stubs {
    use super::*;

    /// Critic with constant realness and uniform (zero) camera logits.
    pub struct ConstCritic {
        pub value: f64,
        pub total_cameras: usize,
    }

    impl CriticNet for ConstCritic {
        fn bind(&self, _g: &mut Graph) -> Vec<Var> {
            Vec::new()
        }

        fn forward(&self, g: &mut Graph, _vars: &[Var], x: Var) -> CriticOut {
            let n = g.shape(x)[0];
            let zero = g.sum_per_sample(x);
            let zero = g.scale(zero, 0.0);
            let realness = g.add_scalar(zero, self.value);
            let logits = g.leaf(ArrayD::zeros(IxDyn(&[n, self.total_cameras])));
            CriticOut {
                realness,
                camera_logits: logits,
            }
        }
    }

    /// Critic whose realness is the mean of each sample's pixels.
    pub struct MeanCritic {
        pub total_cameras: usize,
    }

    impl CriticNet for MeanCritic {
        fn bind(&self, _g: &mut Graph) -> Vec<Var> {
            Vec::new()
        }

        fn forward(&self, g: &mut Graph, _vars: &[Var], x: Var) -> CriticOut {
            let n = g.shape(x)[0];
            let realness = g.mean_per_sample(x);
            let logits = g.leaf(ArrayD::zeros(IxDyn(&[n, self.total_cameras])));
            CriticOut {
                realness,
                camera_logits: logits,
            }
        }
    }

    /// Critic with realness `<w, x>` per sample for a fixed weight image.
    pub struct LinearCritic {
        /// Same shape as one sample, flattened dot product per sample.
        pub weight: ArrayD<f64>,
        pub total_cameras: usize,
    }

    impl CriticNet for LinearCritic {
        fn bind(&self, _g: &mut Graph) -> Vec<Var> {
            Vec::new()
        }

        fn forward(&self, g: &mut Graph, _vars: &[Var], x: Var) -> CriticOut {
            let shape = g.shape(x).to_vec();
            let n = shape[0];
            let mut w_batch = ArrayD::zeros(IxDyn(&shape));
            for i in 0..n {
                w_batch
                    .index_axis_mut(ndarray::Axis(0), i)
                    .assign(&self.weight);
            }
            let w = g.leaf(w_batch);
            let prod = g.mul(x, w);
            let realness = g.sum_per_sample(prod);
            let logits = g.leaf(ArrayD::zeros(IxDyn(&[n, self.total_cameras])));
            CriticOut {
                realness,
                camera_logits: logits,
            }
        }
    }

    /// Critic that returns a fixed logits matrix regardless of input.
    pub struct FixedLogitsCritic {
        pub logits: Array2<f64>,
    }

    impl CriticNet for FixedLogitsCritic {
        fn bind(&self, _g: &mut Graph) -> Vec<Var> {
            Vec::new()
        }

        fn forward(&self, g: &mut Graph, _vars: &[Var], x: Var) -> CriticOut {
            let zero = g.sum_per_sample(x);
            let realness = g.scale(zero, 0.0);
            let camera_logits = g.leaf(self.logits.clone().into_dyn());
            CriticOut {
                realness,
                camera_logits,
            }
        }
    }

    /// Generator that returns its input unchanged.
    pub struct IdentityGenerator;

    impl GeneratorNet for IdentityGenerator {
        fn bind(&self, _g: &mut Graph) -> Vec<Var> {
            Vec::new()
        }

        fn forward(&self, _g: &mut Graph, _vars: &[Var], x: Var, _cond: &Array2<f64>) -> Var {
            x
        }
    }

    /// Generator that adds a constant to every pixel.
    pub struct AddConstGenerator {
        pub delta: f64,
    }

    impl GeneratorNet for AddConstGenerator {
        fn bind(&self, _g: &mut Graph) -> Vec<Var> {
            Vec::new()
        }

        fn forward(&self, g: &mut Graph, _vars: &[Var], x: Var, _cond: &Array2<f64>) -> Var {
            g.add_scalar(x, self.delta)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn generator_output_shape_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = DomainConfig::new(2, 3, 4);
        let gen = Generator::new(cfg.condition_dim(), 8, 3, &mut rng);
        let x = Array4::from_shape_fn((2, 3, 12, 8), |(i, c, y, x)| {
            ((i + c + y + x) as f64 * 0.37).sin()
        });
        let cond = crate::gan::condition_matrix(
            &[
                crate::data::encode_condition(1, crate::data::Domain::Target, &cfg).unwrap(),
                crate::data::encode_condition(0, crate::data::Domain::Source, &cfg).unwrap(),
            ],
            &cfg,
        )
        .unwrap();
        let y = gen.infer(&x, &cond);
        assert_eq!(y.dim(), (2, 3, 12, 8));
        for &v in y.iter() {
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn critic_output_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let critic = Critic::new(5, 8, 2, (12, 8), 0.2, &mut rng);
        let mut g = Graph::new();
        let vars = critic.bind(&mut g);
        let x = g.leaf(ArrayD::zeros(IxDyn(&[3, 3, 12, 8])));
        let out = critic.forward(&mut g, &vars, x);
        assert_eq!(g.shape(out.realness), &[3]);
        assert_eq!(g.shape(out.camera_logits), &[3, 5]);
    }

    #[test]
    fn lr_schedule_decays_linearly() {
        let hp = GanHyperParams {
            lr: 1e-3,
            total_iters: 100,
            lr_decay: true,
            ..Default::default()
        };
        assert_eq!(hp.lr_at(0), 1e-3);
        assert_eq!(hp.lr_at(49), 1e-3);
        assert!((hp.lr_at(75) - 0.5e-3).abs() < 1e-12);
        assert!(hp.lr_at(99) > 0.0);
        let flat = GanHyperParams {
            lr_decay: false,
            ..hp
        };
        assert_eq!(flat.lr_at(99), 1e-3);
    }
}
