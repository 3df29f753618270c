//! Alternating WGAN-GP training of the camera-style network, plus
//! checkpoint persistence.
//!
//! One iteration is `critic_steps_per_gen` critic updates followed by one
//! generator update, with Adam on both sides and batches that always mix
//! the two domains. Random translation targets are drawn uniformly over
//! the combined camera space of both domains.

use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use ndarray::{Array2, Array4, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::synth::stream_seed;
use crate::data::{encode_condition, Dataset, Domain, DomainConfig};
use crate::error::{Error, Result};
use crate::fileio::*;
use crate::gan::losses::{l1_mean, GanLossReport};
use crate::gan::{condition_matrix, Critic, CriticNet, GanHyperParams, Generator, GeneratorNet};
use crate::nn::{cross_entropy_indexed, Adam};
use crate::tensor::Graph;

#[derive(Debug)]
pub struct TrainedGan {
    pub generator: Generator,
    pub critic: Critic,
    pub log: Vec<GanLossReport>,
    pub iterations: usize,
}

struct BatchSampler<'a> {
    source: &'a Dataset,
    target: &'a Dataset,
    config: DomainConfig,
}

struct Batch {
    pixels: Array4<f64>,
    /// Combined-space camera label of each record.
    true_labels: Vec<usize>,
    /// (camera, domain) of each record.
    originals: Vec<(usize, Domain)>,
}

impl<'a> BatchSampler<'a> {
    /// Half the batch from each domain (source gets the odd remainder).
    fn sample(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Batch {
        let n_src = batch_size.div_ceil(2);
        let (_, h, w) = self.source.records[0].pixels.dim();
        let mut pixels = Array4::<f64>::zeros((batch_size, 3, h, w));
        let mut true_labels = Vec::with_capacity(batch_size);
        let mut originals = Vec::with_capacity(batch_size);
        for i in 0..batch_size {
            let (ds, dom) = if i < n_src {
                (self.source, Domain::Source)
            } else {
                (self.target, Domain::Target)
            };
            let r = &ds.records[rng.random_range(0..ds.len())];
            pixels
                .index_axis_mut(ndarray::Axis(0), i)
                .assign(&r.pixels);
            true_labels.push(
                self.config
                    .combined_camera_index(r.camera_index, dom)
                    .expect("validated dataset"),
            );
            originals.push((r.camera_index, dom));
        }
        Batch {
            pixels,
            true_labels,
            originals,
        }
    }

    /// Uniform draws over the combined camera space, decoded to
    /// (camera, domain) pairs.
    fn random_targets(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, Domain)> {
        let cs = self.config.cameras(Domain::Source);
        let total = self.config.total_cameras();
        (0..n)
            .map(|_| {
                let j = rng.random_range(0..total);
                if j < cs {
                    (j, Domain::Source)
                } else {
                    (j - cs, Domain::Target)
                }
            })
            .collect()
    }
}

fn conds_to_matrix(
    pairs: &[(usize, Domain)],
    config: &DomainConfig,
) -> Result<Array2<f64>> {
    let conds = pairs
        .iter()
        .map(|&(cam, dom)| encode_condition(cam, dom, config))
        .collect::<Result<Vec<_>>>()?;
    condition_matrix(&conds, config)
}

fn ensure_finite(name: &str, iter: usize, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::divergence(format!(
            "{name} is {v} at iteration {iter}; aborting"
        )))
    }
}

/// Train the translation network on the (unlabeled) union of both domains.
///
/// Deterministic for a fixed `(datasets, hp, seed)`. Writes interval
/// checkpoints into `ckpt_dir` when given.
pub fn train_stargan(
    source: &Dataset,
    target: &Dataset,
    hp: &GanHyperParams,
    seed: u64,
    ckpt_dir: Option<&Path>,
) -> Result<TrainedGan> {
    hp.validate()?;
    source.validate()?;
    target.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::data("both domains must be nonempty for GAN training"));
    }
    if source.config != target.config {
        return Err(Error::config("source and target datasets disagree on DomainConfig"));
    }
    let config = source.config.clone();
    let (_, h, w) = source.records[0].pixels.dim();
    if target.records[0].pixels.dim() != (3, h, w) {
        return Err(Error::data(format!(
            "resolution mismatch between domains: {:?} vs {:?}",
            source.records[0].pixels.dim(),
            target.records[0].pixels.dim()
        )));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, 0xAD1]));
    let mut batch_rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, 0xAD2]));
    let mut cond_rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, 0xAD3]));
    let mut gp_rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, 0xAD4]));

    let mut generator = Generator::new(config.condition_dim(), hp.gen_width, hp.gen_depth, &mut init_rng);
    let mut critic = Critic::new(
        config.total_cameras(),
        hp.critic_width,
        hp.critic_depth,
        (h, w),
        hp.leaky_slope,
        &mut init_rng,
    );
    let mut opt_g = Adam::new(hp.adam_beta1, hp.adam_beta2);
    let mut opt_d = Adam::new(hp.adam_beta1, hp.adam_beta2);

    let sampler = BatchSampler {
        source,
        target,
        config: config.clone(),
    };

    let mut log = Vec::with_capacity(hp.total_iters);
    for t in 0..hp.total_iters {
        let lr = hp.lr_at(t);
        let mut last_d = (0.0, 0.0, 0.0); // adv_d, cls_d, gp

        for _ in 0..hp.critic_steps_per_gen {
            let batch = sampler.sample(hp.batch_size, &mut batch_rng);
            let targets = sampler.random_targets(hp.batch_size, &mut cond_rng);
            let cond_t = conds_to_matrix(&targets, &config)?;
            // fakes are detached for the critic step
            let fake = generator.infer(&batch.pixels, &cond_t);

            let mut g = Graph::new();
            let cvars = critic.bind(&mut g);
            let real_v = g.leaf(batch.pixels.clone().into_dyn());
            let fake_v = g.leaf(fake.clone().into_dyn());
            let out_real = critic.forward(&mut g, &cvars, real_v);
            let out_fake = critic.forward(&mut g, &cvars, fake_v);
            let m_real = g.mean_all(out_real.realness);
            let m_fake = g.mean_all(out_fake.realness);
            let adv = g.sub(m_fake, m_real);
            let cls = cross_entropy_indexed(&mut g, out_real.camera_logits, &batch.true_labels);
            let gp = crate::gan::losses::gradient_penalty(
                &mut g, &critic, &cvars, &batch.pixels, &fake, &mut gp_rng,
            )?;
            let cls_w = g.scale(cls, hp.lambda_c);
            let gp_w = g.scale(gp, hp.lambda_gp);
            let partial = g.add(adv, cls_w);
            let total = g.add(partial, gp_w);

            last_d = (
                ensure_finite("adv_d", t, g.scalar(adv))?,
                ensure_finite("cls_d", t, g.scalar(cls))?,
                ensure_finite("gp", t, g.scalar(gp))?,
            );
            ensure_finite("total_d", t, g.scalar(total))?;

            let grads = g.grad(total, &cvars);
            let grad_vals: Vec<ArrayD<f64>> =
                grads.iter().map(|&v| g.value(v).to_owned()).collect();
            let mut params: Vec<&mut ArrayD<f64>> = critic
                .named_params_mut()
                .into_iter()
                .map(|(_, p)| p)
                .collect();
            opt_d.step(lr, &mut params, &grad_vals);
        }

        // generator update
        let batch = sampler.sample(hp.batch_size, &mut batch_rng);
        let targets = sampler.random_targets(hp.batch_size, &mut cond_rng);
        let cond_t = conds_to_matrix(&targets, &config)?;
        let cond_back = conds_to_matrix(&batch.originals, &config)?;
        let target_labels = targets
            .iter()
            .map(|&(cam, dom)| config.combined_camera_index(cam, dom))
            .collect::<Result<Vec<_>>>()?;

        let mut g = Graph::new();
        let gvars = generator.bind(&mut g);
        let cvars = critic.bind(&mut g);
        let x = g.leaf(batch.pixels.clone().into_dyn());
        let fake = generator.forward(&mut g, &gvars, x, &cond_t);
        let out_fake = critic.forward(&mut g, &cvars, fake);
        let m_fake = g.mean_all(out_fake.realness);
        let adv = g.scale(m_fake, -1.0);
        let cls = cross_entropy_indexed(&mut g, out_fake.camera_logits, &target_labels);
        let cycled = generator.forward(&mut g, &gvars, fake, &cond_back);
        let rec = l1_mean(&mut g, x, cycled)?;
        let cls_w = g.scale(cls, hp.lambda_c);
        let rec_w = g.scale(rec, hp.lambda_rec);
        let partial = g.add(adv, cls_w);
        let total = g.add(partial, rec_w);

        let adv_g = ensure_finite("adv_g", t, g.scalar(adv))?;
        let cls_g = ensure_finite("cls_g", t, g.scalar(cls))?;
        let rec_v = ensure_finite("rec", t, g.scalar(rec))?;
        ensure_finite("total_g", t, g.scalar(total))?;

        let grads = g.grad(total, &gvars);
        let grad_vals: Vec<ArrayD<f64>> = grads.iter().map(|&v| g.value(v).to_owned()).collect();
        let mut params: Vec<&mut ArrayD<f64>> = generator
            .named_params_mut()
            .into_iter()
            .map(|(_, p)| p)
            .collect();
        opt_g.step(lr, &mut params, &grad_vals);

        let (adv_d, cls_d, gp) = last_d;
        log.push(GanLossReport {
            iter: t,
            adv_d,
            adv_g,
            cls_d,
            cls_g,
            rec: rec_v,
            gp,
            total_d: adv_d + hp.lambda_c * cls_d + hp.lambda_gp * gp,
            total_g: adv_g + hp.lambda_c * cls_g + hp.lambda_rec * rec_v,
        });

        if let Some(dir) = ckpt_dir {
            if hp.ckpt_interval > 0 && (t + 1) % hp.ckpt_interval == 0 && t + 1 < hp.total_iters {
                let ckpt = GanCheckpoint {
                    hp: hp.clone(),
                    config: config.clone(),
                    resolution: (h, w),
                    iteration: t + 1,
                    generator: generator.clone(),
                    critic: critic.clone(),
                };
                save_gan_checkpoint(&dir.join(format!("gan_iter{:06}.ckpt", t + 1)), &ckpt)?;
            }
        }
    }

    Ok(TrainedGan {
        generator,
        critic,
        log,
        iterations: hp.total_iters,
    })
}

/// Self-describing GAN checkpoint: hyperparameters, domain geometry,
/// iteration count and all parameter blobs. Round-trips bit-exactly.
pub struct GanCheckpoint {
    pub hp: GanHyperParams,
    pub config: DomainConfig,
    pub resolution: (usize, usize),
    pub iteration: usize,
    pub generator: Generator,
    pub critic: Critic,
}

const GAN_MAGIC: &[u8; 4] = b"CSGK";
const GAN_VERSION: u32 = 1;

fn meta_text(ckpt: &GanCheckpoint) -> String {
    let hp = &ckpt.hp;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(&v);
        s.push('\n');
    };
    kv("kind", "gan".into());
    kv("iteration", ckpt.iteration.to_string());
    kv("cameras_source", ckpt.config.cameras_per_domain[0].to_string());
    kv("cameras_target", ckpt.config.cameras_per_domain[1].to_string());
    kv("identities_source", ckpt.config.identity_count_source.to_string());
    kv("image_h", ckpt.resolution.0.to_string());
    kv("image_w", ckpt.resolution.1.to_string());
    kv("lambda_c", hp.lambda_c.to_string());
    kv("lambda_rec", hp.lambda_rec.to_string());
    kv("lambda_gp", hp.lambda_gp.to_string());
    kv("lr", hp.lr.to_string());
    kv("lr_decay", hp.lr_decay.to_string());
    kv("adam_beta1", hp.adam_beta1.to_string());
    kv("adam_beta2", hp.adam_beta2.to_string());
    kv("batch_size", hp.batch_size.to_string());
    kv("critic_steps_per_gen", hp.critic_steps_per_gen.to_string());
    kv("total_iters", hp.total_iters.to_string());
    kv("ckpt_interval", hp.ckpt_interval.to_string());
    kv("gen_width", hp.gen_width.to_string());
    kv("gen_depth", hp.gen_depth.to_string());
    kv("critic_width", hp.critic_width.to_string());
    kv("critic_depth", hp.critic_depth.to_string());
    kv("leaky_slope", hp.leaky_slope.to_string());
    s
}

pub fn save_gan_checkpoint(path: &Path, ckpt: &GanCheckpoint) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(GAN_MAGIC).map_err(Error::Io)?;
    write_u32(&mut w, GAN_VERSION)?;
    write_str(&mut w, &meta_text(ckpt))?;
    let mut params = ckpt.generator.named_params();
    params.extend(ckpt.critic.named_params());
    write_named_params(&mut w, &params)?;
    Ok(())
}

pub fn load_gan_checkpoint(path: &Path) -> Result<GanCheckpoint> {
    let mut r = BufReader::new(std::fs::File::open(path).map_err(|e| {
        Error::data(format!("cannot open checkpoint {}: {e}", path.display()))
    })?);
    expect_magic(&mut r, GAN_MAGIC, "gan checkpoint")?;
    let version = read_u32(&mut r)?;
    if version != GAN_VERSION {
        return Err(Error::data(format!("unsupported checkpoint version {version}")));
    }
    let meta = parse_meta(&read_str(&mut r)?)?;
    if meta.get("kind").map(String::as_str) != Some("gan") {
        return Err(Error::data("not a gan checkpoint"));
    }
    let hp = GanHyperParams {
        lambda_c: meta_get(&meta, "lambda_c")?,
        lambda_rec: meta_get(&meta, "lambda_rec")?,
        lambda_gp: meta_get(&meta, "lambda_gp")?,
        lr: meta_get(&meta, "lr")?,
        lr_decay: meta_get(&meta, "lr_decay")?,
        adam_beta1: meta_get(&meta, "adam_beta1")?,
        adam_beta2: meta_get(&meta, "adam_beta2")?,
        batch_size: meta_get(&meta, "batch_size")?,
        critic_steps_per_gen: meta_get(&meta, "critic_steps_per_gen")?,
        total_iters: meta_get(&meta, "total_iters")?,
        ckpt_interval: meta_get(&meta, "ckpt_interval")?,
        gen_width: meta_get(&meta, "gen_width")?,
        gen_depth: meta_get(&meta, "gen_depth")?,
        critic_width: meta_get(&meta, "critic_width")?,
        critic_depth: meta_get(&meta, "critic_depth")?,
        leaky_slope: meta_get(&meta, "leaky_slope")?,
    };
    let config = DomainConfig::new(
        meta_get(&meta, "cameras_source")?,
        meta_get(&meta, "cameras_target")?,
        meta_get(&meta, "identities_source")?,
    );
    let resolution = (meta_get(&meta, "image_h")?, meta_get(&meta, "image_w")?);
    let iteration: usize = meta_get(&meta, "iteration")?;

    let mut scratch = ChaCha8Rng::seed_from_u64(0);
    let mut generator =
        Generator::new(config.condition_dim(), hp.gen_width, hp.gen_depth, &mut scratch);
    let mut critic = Critic::new(
        config.total_cameras(),
        hp.critic_width,
        hp.critic_depth,
        resolution,
        hp.leaky_slope,
        &mut scratch,
    );
    let loaded = read_named_params(&mut r)?;
    assign_params(&loaded, generator.named_params_mut())?;
    assign_params(&loaded, critic.named_params_mut())?;
    Ok(GanCheckpoint {
        hp,
        config,
        resolution,
        iteration,
        generator,
        critic,
    })
}
