//! Soft-target cross-entropy fine-tuning of the re-ID model on the
//! unlabeled target domain.
//!
//! Soft labels are computed once and held fixed. By default only the soft
//! cross-entropy drives the update; an optional joint term adds
//! `alpha * supervised_ce` on translated-source batches for stability
//! (alpha = 0 keeps the fine-tuning target-only).

use ndarray::{Array2, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::synth::stream_seed;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::label::SoftLabelMatrix;
use crate::nn::{cross_entropy_indexed, cross_entropy_soft_targets, Adam};
use crate::reid::{gather_batch, shuffle, ReidModel};
use crate::tensor::Graph;

#[derive(Debug, Clone)]
pub struct FinetuneParams {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Weight of the optional joint supervised term on translated batches.
    pub alpha: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
}

impl Default for FinetuneParams {
    fn default() -> Self {
        FinetuneParams {
            epochs: 10,
            lr: 1e-4,
            batch_size: 32,
            alpha: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
        }
    }
}

/// Fine-tune `model` toward the soft labels of `target`. Training is
/// end-to-end at the (reduced) fine-tuning learning rate.
pub fn finetune(
    model: &ReidModel,
    target: &Dataset,
    soft: &SoftLabelMatrix,
    translated: Option<&Dataset>,
    params: &FinetuneParams,
    seed: u64,
) -> Result<(ReidModel, Vec<f64>)> {
    target.validate()?;
    soft.validate()?;
    if soft.probs.nrows() != target.len() {
        return Err(Error::data(format!(
            "soft label rows {} do not match target size {}",
            soft.probs.nrows(),
            target.len()
        )));
    }
    if soft.probs.ncols() != model.num_classes {
        return Err(Error::data(format!(
            "soft label classes {} do not match model classes {}",
            soft.probs.ncols(),
            model.num_classes
        )));
    }
    if params.alpha < 0.0 {
        return Err(Error::config("alpha must be nonnegative"));
    }
    if params.alpha > 0.0 && translated.is_none() {
        return Err(Error::config(
            "alpha > 0 requires the translated dataset for the joint term",
        ));
    }

    let mut tuned = model.clone();
    if params.epochs == 0 {
        return Ok((tuned, Vec::new()));
    }

    let mut order_rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, 0xF17E, 1]));
    let mut joint_rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, 0xF17E, 2]));
    let mut opt = Adam::new(params.adam_beta1, params.adam_beta2);
    let mut epoch_losses = Vec::with_capacity(params.epochs);

    for _epoch in 0..params.epochs {
        let mut order: Vec<usize> = (0..target.len()).collect();
        shuffle(&mut order, &mut order_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(params.batch_size.max(1)) {
            let batch = gather_batch(target, chunk, None);
            let soft_rows = {
                let mut m = Array2::<f64>::zeros((chunk.len(), model.num_classes));
                for (i, &idx) in chunk.iter().enumerate() {
                    m.row_mut(i).assign(&soft.probs.row(idx));
                }
                m
            };
            let mut g = Graph::new();
            let vars = tuned.bind(&mut g);
            let x = g.leaf(batch.pixels.into_dyn());
            let logits = tuned.forward_logits(&mut g, &vars, x);
            let mut loss = cross_entropy_soft_targets(&mut g, logits, &soft_rows);

            if params.alpha > 0.0 {
                let tds = translated.expect("checked above");
                let mut idxs = Vec::with_capacity(chunk.len());
                for _ in 0..chunk.len() {
                    use rand::Rng;
                    idxs.push(joint_rng.random_range(0..tds.len()));
                }
                let jb = gather_batch(tds, &idxs, None);
                let xs = g.leaf(jb.pixels.into_dyn());
                let jl = tuned.forward_logits(&mut g, &vars, xs);
                let ce = cross_entropy_indexed(&mut g, jl, &jb.labels);
                let scaled = g.scale(ce, params.alpha);
                loss = g.add(loss, scaled);
            }

            let loss_v = g.scalar(loss);
            if !loss_v.is_finite() {
                return Err(Error::divergence(format!("fine-tuning loss is {loss_v}")));
            }
            loss_sum += loss_v * chunk.len() as f64;
            let grads = g.grad(loss, &vars);
            let grad_vals: Vec<ArrayD<f64>> =
                grads.iter().map(|&v| g.value(v).to_owned()).collect();
            let mut ps: Vec<&mut ArrayD<f64>> = tuned
                .named_params_mut()
                .into_iter()
                .map(|(_, p)| p)
                .collect();
            opt.step(params.lr, &mut ps, &grad_vals);
        }
        epoch_losses.push(loss_sum / target.len() as f64);
    }
    Ok((tuned, epoch_losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic_domain, SyntheticSpec};
    use crate::data::{Domain, DomainConfig};
    use crate::label::{soft_label_all, SoftLabelParams};
    use crate::reid::{train_baseline, ReidHyperParams};

    fn setup() -> (Dataset, Dataset, ReidModel, SoftLabelMatrix) {
        let cfg = DomainConfig::new(3, 3, 6);
        let mut s_spec = SyntheticSpec::default_for(Domain::Source, 3);
        s_spec.identities = 6;
        s_spec.samples_per_identity = 4;
        s_spec.image_h = 16;
        s_spec.image_w = 8;
        let mut t_spec = SyntheticSpec::default_for(Domain::Target, 3);
        t_spec.identities = 6;
        t_spec.samples_per_identity = 4;
        t_spec.image_h = 16;
        t_spec.image_w = 8;
        let source = generate_synthetic_domain(&s_spec, Domain::Source, &cfg, 1).unwrap();
        let target = generate_synthetic_domain(&t_spec, Domain::Target, &cfg, 2)
            .unwrap()
            .strip_person_ids();

        let hp = ReidHyperParams {
            epochs: 6,
            width: 8,
            depth: 2,
            feat_channels: 16,
            flip_augment: false,
            ..Default::default()
        };
        let (model, _) = train_baseline(&source, &hp, 3).unwrap();
        let src_emb = model.extract_features(&source, true).unwrap();
        let tgt_emb = model.extract_features(&target, true).unwrap();
        let soft = soft_label_all(
            &tgt_emb,
            &src_emb,
            &SoftLabelParams { k: 4, lambda: 8.0 },
            6,
        )
        .unwrap();
        (source, target, model, soft)
    }

    #[test]
    fn zero_epochs_is_parameter_identical() {
        let (_, target, model, soft) = setup();
        let params = FinetuneParams {
            epochs: 0,
            ..Default::default()
        };
        let (tuned, log) = finetune(&model, &target, &soft, None, &params, 7).unwrap();
        assert!(log.is_empty());
        for ((_, a), (_, b)) in model.named_params().iter().zip(tuned.named_params()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn loss_decreases_over_epochs_on_fixed_soft_labels() {
        let (_, target, model, soft) = setup();
        let params = FinetuneParams {
            epochs: 8,
            lr: 5e-4,
            batch_size: 12,
            ..Default::default()
        };
        let (_, log) = finetune(&model, &target, &soft, None, &params, 7).unwrap();
        assert_eq!(log.len(), 8);
        assert!(
            log.last().unwrap() <= log.first().unwrap(),
            "loss went {} -> {}",
            log.first().unwrap(),
            log.last().unwrap()
        );
    }

    #[test]
    fn row_count_mismatch_rejected() {
        let (_, mut target, model, soft) = setup();
        target.records.pop();
        let params = FinetuneParams::default();
        assert!(finetune(&model, &target, &soft, None, &params, 7).is_err());
    }

    #[test]
    fn joint_term_requires_translated_set() {
        let (source, target, model, soft) = setup();
        let params = FinetuneParams {
            alpha: 0.5,
            epochs: 1,
            ..Default::default()
        };
        assert!(finetune(&model, &target, &soft, None, &params, 7).is_err());
        assert!(finetune(&model, &target, &soft, Some(&source), &params, 7).is_ok());
    }

    #[test]
    fn deterministic_under_seed() {
        let (_, target, model, soft) = setup();
        let params = FinetuneParams {
            epochs: 2,
            ..Default::default()
        };
        let (a, la) = finetune(&model, &target, &soft, None, &params, 11).unwrap();
        let (b, lb) = finetune(&model, &target, &soft, None, &params, 11).unwrap();
        assert_eq!(la, lb);
        for ((_, pa), (_, pb)) in a.named_params().iter().zip(b.named_params()) {
            for (x, y) in pa.iter().zip(pb.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
