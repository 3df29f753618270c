//! The translation network's losses: Wasserstein adversarial pair,
//! camera classification pair, cycle reconstruction and gradient penalty,
//! plus the combined critic/generator objectives.
//!
//! The critic objective is the minimized Wasserstein form
//! `mean D_r(fake) - mean D_r(real) + lambda_c * cls_d + lambda_gp * gp`;
//! the classification terms keep their cross-entropy form on both sides.

use ndarray::{Array2, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{encode_condition, ConditionVector, Domain, DomainConfig};
use crate::error::{Error, Result};
use crate::gan::{condition_matrix, CriticNet, GeneratorNet};
use crate::nn::cross_entropy_indexed;
use crate::tensor::{Graph, Var};

fn check_same_shape(g: &Graph, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(format!(
            "batch shapes differ: {:?} vs {:?}",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

/// Critic loss of the Wasserstein adversarial game:
/// `mean D_r(fake) - mean D_r(real)`. `fake` must already be detached from
/// the generator (a constant leaf) for a critic step.
pub fn adversarial_loss_d<C: CriticNet>(
    g: &mut Graph,
    critic: &C,
    cvars: &[Var],
    real: Var,
    fake: Var,
) -> Result<Var> {
    check_same_shape(g, real, fake)?;
    let d_real = critic.forward(g, cvars, real).realness;
    let d_fake = critic.forward(g, cvars, fake).realness;
    let m_real = g.mean_all(d_real);
    let m_fake = g.mean_all(d_fake);
    Ok(g.sub(m_fake, m_real))
}

/// Generator side of the Wasserstein game: `-mean D_r(fake)`.
pub fn adversarial_loss_g<C: CriticNet>(
    g: &mut Graph,
    critic: &C,
    cvars: &[Var],
    fake: Var,
) -> Result<Var> {
    let d_fake = critic.forward(g, cvars, fake).realness;
    let m = g.mean_all(d_fake);
    Ok(g.scale(m, -1.0))
}

/// Gradient penalty `mean (||grad_xhat D_r(xhat)|| - 1)^2` on per-sample
/// interpolates `xhat = eps * real + (1 - eps) * fake`.
///
/// The penalty is built from differentiable graph ops, so its own gradient
/// with respect to the critic parameters exists and is exact.
pub fn gradient_penalty<C: CriticNet>(
    g: &mut Graph,
    critic: &C,
    cvars: &[Var],
    real: &Array4<f64>,
    fake: &Array4<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    if real.dim() != fake.dim() {
        return Err(Error::shape(format!(
            "gradient_penalty batch shapes differ: {:?} vs {:?}",
            real.dim(),
            fake.dim()
        )));
    }
    let n = real.dim().0;
    let mut interp = Array4::<f64>::zeros(real.dim());
    for i in 0..n {
        let eps: f64 = rng.random();
        let r = real.index_axis(ndarray::Axis(0), i);
        let f = fake.index_axis(ndarray::Axis(0), i);
        interp
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(&(&r * eps + &f * (1.0 - eps)));
    }
    let xhat = g.leaf(interp.into_dyn());
    let realness = critic.forward(g, cvars, xhat).realness;
    let total = g.sum_all(realness);
    // samples are independent under the critic, so d total / d xhat stacks
    // the per-sample gradients
    let gx = g.grad(total, &[xhat])[0];
    let sq = g.mul(gx, gx);
    let ss = g.sum_per_sample(sq);
    let norm = g.sqrt(ss);
    let dev = g.add_scalar(norm, -1.0);
    let dev2 = g.mul(dev, dev);
    Ok(g.mean_all(dev2))
}

/// `-log D_c(c'|x)` on real images, averaged over the batch. Labels index
/// the combined camera space.
pub fn classification_loss_d<C: CriticNet>(
    g: &mut Graph,
    critic: &C,
    cvars: &[Var],
    real: Var,
    labels: &[usize],
    total_cameras: usize,
) -> Result<Var> {
    if g.shape(real)[0] != labels.len() {
        return Err(Error::shape("label count does not match batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= total_cameras) {
        return Err(Error::data(format!(
            "camera label {bad} out of range for {total_cameras} cameras"
        )));
    }
    let logits = critic.forward(g, cvars, real).camera_logits;
    if g.shape(logits)[1] != total_cameras {
        return Err(Error::shape(format!(
            "critic produces {} camera logits, expected {total_cameras}",
            g.shape(logits)[1]
        )));
    }
    Ok(cross_entropy_indexed(g, logits, labels))
}

/// `-log D_c(c|G(x,c))`: the same cross-entropy evaluated on generated
/// images at the requested target conditions.
#[allow(clippy::too_many_arguments)]
pub fn classification_loss_g<C: CriticNet, Gen: GeneratorNet>(
    g: &mut Graph,
    critic: &C,
    cvars: &[Var],
    gen: &Gen,
    gvars: &[Var],
    x: Var,
    targets: &[(usize, Domain)],
    config: &DomainConfig,
) -> Result<Var> {
    if g.shape(x)[0] != targets.len() {
        return Err(Error::shape("target count does not match batch"));
    }
    let conds = targets
        .iter()
        .map(|&(cam, dom)| encode_condition(cam, dom, config))
        .collect::<Result<Vec<ConditionVector>>>()?;
    let cond = condition_matrix(&conds, config)?;
    let labels = targets
        .iter()
        .map(|&(cam, dom)| config.combined_camera_index(cam, dom))
        .collect::<Result<Vec<usize>>>()?;
    let fake = gen.forward(g, gvars, x, &cond);
    let logits = critic.forward(g, cvars, fake).camera_logits;
    Ok(cross_entropy_indexed(g, logits, &labels))
}

/// Mean absolute deviation between `a` and `b` (L1 with mean reduction).
pub fn l1_mean(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    check_same_shape(g, a, b)?;
    let d = g.sub(a, b);
    let ad = g.abs(d);
    Ok(g.mean_all(ad))
}

/// Cycle reconstruction loss `mean |x - G(G(x,c), c')|` where `c'` are the
/// inputs' true conditions and `c` the translation targets.
#[allow(clippy::too_many_arguments)]
pub fn reconstruction_loss<Gen: GeneratorNet>(
    g: &mut Graph,
    gen: &Gen,
    gvars: &[Var],
    x: Var,
    targets: &[(usize, Domain)],
    originals: &[(usize, Domain)],
    config: &DomainConfig,
) -> Result<Var> {
    let n = g.shape(x)[0];
    if targets.len() != n || originals.len() != n {
        return Err(Error::shape("condition count does not match batch"));
    }
    let enc = |pairs: &[(usize, Domain)]| -> Result<Array2<f64>> {
        let conds = pairs
            .iter()
            .map(|&(cam, dom)| encode_condition(cam, dom, config))
            .collect::<Result<Vec<_>>>()?;
        condition_matrix(&conds, config)
    };
    let cond_to = enc(targets)?;
    let cond_back = enc(originals)?;
    let translated = gen.forward(g, gvars, x, &cond_to);
    let cycled = gen.forward(g, gvars, translated, &cond_back);
    l1_mean(g, x, cycled)
}

/// Per-step loss components, in report (plain scalar) form.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossComponents {
    pub adv_d: f64,
    pub adv_g: f64,
    pub cls_d: f64,
    pub cls_g: f64,
    pub rec: f64,
    pub gp: f64,
}

/// Combined critic objective (minimized):
/// `adv_d + lambda_c * cls_d + lambda_gp * gp`.
pub fn discriminator_objective(c: &LossComponents, hp: &super::GanHyperParams) -> Result<f64> {
    hp.validate()?;
    Ok(c.adv_d + hp.lambda_c * c.cls_d + hp.lambda_gp * c.gp)
}

/// Combined generator objective (minimized):
/// `adv_g + lambda_c * cls_g + lambda_rec * rec`.
pub fn generator_objective(c: &LossComponents, hp: &super::GanHyperParams) -> Result<f64> {
    hp.validate()?;
    Ok(c.adv_g + hp.lambda_c * c.cls_g + hp.lambda_rec * c.rec)
}

/// One row of the training log.
#[derive(Debug, Clone, Copy)]
pub struct GanLossReport {
    pub iter: usize,
    pub adv_d: f64,
    pub adv_g: f64,
    pub cls_d: f64,
    pub cls_g: f64,
    pub rec: f64,
    pub gp: f64,
    pub total_d: f64,
    pub total_g: f64,
}
