//! Flat key-value run configuration.
//!
//! Every hyperparameter of every stage lives in one namespace of
//! `key = value` settings (`#` starts a comment). Unknown keys are
//! rejected; every key has a documented default; the fully resolved
//! configuration is echoed into each run directory so artifacts are
//! self-describing.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::synth::SyntheticSpec;
use crate::data::{Domain, DomainConfig};
use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::gan::GanHyperParams;
use crate::label::finetune::FinetuneParams;
use crate::label::SoftLabelParams;
use crate::reid::{PoolingMode, ReidHyperParams};

/// `(key, default, documentation)` for every setting.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "global RNG seed; stages derive their own streams from it"),
    ("out", "run", "run directory artifacts are written into"),
    ("image_h", "256", "image height every record is resized/generated at"),
    ("image_w", "128", "image width every record is resized/generated at"),
    ("strict_load", "false", "treat unparseable files as hard errors when loading"),
    ("cameras_source", "6", "camera count of the source domain (C_s)"),
    ("cameras_target", "8", "camera count of the target domain (C_t)"),
    ("identities_source", "0", "source identity count; 0 infers it from the data"),
    // synthetic benchmark
    ("synth_ids_source", "8", "synthetic source identities"),
    ("synth_ids_target", "8", "synthetic target identities (appearance-disjoint from source)"),
    ("synth_samples_per_id", "4", "training samples per identity and domain"),
    ("synth_query_per_id", "2", "target query images per identity"),
    ("synth_gallery_per_id", "4", "target gallery images per identity"),
    ("synth_noise", "0.01", "additive uniform pixel noise amplitude"),
    ("synth_brightness_source", "", "comma list of per-camera gains; empty = derived defaults"),
    ("synth_brightness_target", "", "comma list of per-camera gains; empty = derived defaults"),
    ("synth_hue_source", "", "comma list of per-camera hue angles (radians); empty = defaults"),
    ("synth_hue_target", "", "comma list of per-camera hue angles (radians); empty = defaults"),
    // gan
    ("gan_lambda_c", "1", "camera classification weight (both objectives)"),
    ("gan_lambda_rec", "10", "cycle reconstruction weight"),
    ("gan_lambda_gp", "10", "gradient penalty weight"),
    ("gan_lr", "0.0001", "Adam learning rate for both networks"),
    ("gan_lr_decay", "true", "linear decay over the second half of training"),
    ("gan_beta1", "0.5", "Adam beta1"),
    ("gan_beta2", "0.999", "Adam beta2"),
    ("gan_batch_size", "16", "records per step, mixed across domains"),
    ("gan_critic_steps", "5", "critic updates per generator update"),
    ("gan_total_iters", "50000", "training iterations (critic cycle + one generator step)"),
    ("gan_ckpt_interval", "10000", "iterations between interval checkpoints; 0 = final only"),
    ("gan_gen_width", "16", "generator conv width"),
    ("gan_gen_depth", "3", "generator conv layers"),
    ("gan_critic_width", "16", "critic conv width"),
    ("gan_critic_depth", "2", "critic stride-2 conv layers"),
    ("gan_leaky_slope", "0.2", "critic leaky-relu slope"),
    // reid backbone
    ("reid_epochs", "20", "baseline training epochs"),
    ("reid_lr", "0.001", "baseline Adam learning rate"),
    ("reid_batch_size", "32", "baseline batch size"),
    ("reid_width", "12", "backbone conv width"),
    ("reid_depth", "2", "backbone stride-2 conv layers"),
    ("reid_feat_channels", "32", "channels of the final feature map"),
    ("reid_pooling", "gap", "descriptor pooling: gap | lmp"),
    ("reid_lmp_p", "9", "bands for lmp pooling"),
    ("reid_flip", "true", "random horizontal flip augmentation"),
    // soft labels
    ("softlabel_k", "16", "neighborhood size K"),
    ("softlabel_lambda", "10", "distance temperature of the selection softmax"),
    ("extract_normalize", "true", "L2-normalize descriptors at extraction"),
    // fine-tuning
    ("finetune_epochs", "10", "soft-target fine-tuning epochs"),
    ("finetune_lr", "0.0001", "fine-tuning learning rate"),
    ("finetune_batch_size", "32", "fine-tuning batch size"),
    ("finetune_alpha", "0", "weight of the joint supervised term (0 = target-only)"),
    // evaluation
    ("eval_exclude_same_camera", "true", "drop same-id same-camera gallery entries per query"),
    ("report_name", "eval.txt", "filename of the evaluation report inside the run dir"),
    // stage inputs (paths; empty = required-but-unset)
    ("source_dir", "", "source-domain training image directory"),
    ("target_dir", "", "target-domain training image directory"),
    ("train_dir", "", "training directory for the reid baseline"),
    ("train_kind", "translated", "what train_dir holds: translated | source"),
    ("data_dir", "", "image directory for feature extraction"),
    ("data_kind", "query", "extract mode: translated | target_train | query | gallery"),
    ("checkpoint", "", "gan checkpoint path"),
    ("model", "", "reid model checkpoint path"),
    ("query_emb", "", "query embeddings (EMB1)"),
    ("gallery_emb", "", "gallery embeddings (EMB1)"),
    ("source_emb", "", "translated-source embeddings (EMB1)"),
    ("target_emb", "", "target embeddings (EMB1)"),
    ("softlabels", "", "soft label matrix path (SLM1)"),
    ("translated_dir", "", "translated dataset directory (for the joint fine-tune term)"),
    ("report_na", "eval_na.txt", "no-adaptation report filename for `report`"),
    ("report_baseline", "eval_baseline.txt", "translated-baseline report filename for `report`"),
    ("report_finetuned", "eval_finetuned.txt", "fine-tuned report filename for `report`"),
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS
                .iter()
                .map(|(k, d, _)| (k.to_string(), d.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !self.values.contains_key(key) {
            return Err(Error::config(format!("unknown config key: {key}")));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`, got `{raw}`", lineno + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// All keys with their resolved values, one `key = value` line each.
    pub fn resolved_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn get_str(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::config(format!("unknown config key: {key}")))
    }

    /// A path-valued key that must be set.
    pub fn get_path(&self, key: &str) -> Result<std::path::PathBuf> {
        let v = self.get_str(key)?;
        if v.is_empty() {
            return Err(Error::config(format!("config key {key} must be set for this command")));
        }
        Ok(std::path::PathBuf::from(v))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get_str(key)?;
        v.parse()
            .map_err(|_| Error::config(format!("config key {key} has invalid value `{v}`")))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.parse(key)
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.parse(key)
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.parse(key)
    }

    pub fn get_bool(&self, key: &str) -> Result<bool> {
        match self.get_str(key)? {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(Error::config(format!("config key {key} must be boolean, got `{v}`"))),
        }
    }

    fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let v = self.get_str(key)?;
        if v.is_empty() {
            return Ok(None);
        }
        v.split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::config(format!("config key {key}: `{s}` is not a number"))
                })
            })
            .collect::<Result<Vec<f64>>>()
            .map(Some)
    }

    pub fn resolution(&self) -> Result<(usize, usize)> {
        Ok((self.get_usize("image_h")?, self.get_usize("image_w")?))
    }

    pub fn domain_config(&self, identities: usize) -> Result<DomainConfig> {
        let cfg = DomainConfig::new(
            self.get_usize("cameras_source")?,
            self.get_usize("cameras_target")?,
            identities,
        );
        Ok(cfg)
    }

    /// Domain config with the configured identity count (which must then be
    /// nonzero).
    pub fn domain_config_configured(&self) -> Result<DomainConfig> {
        let ids = self.get_usize("identities_source")?;
        if ids == 0 {
            return Err(Error::config(
                "identities_source is 0 (infer) but this command needs an explicit count",
            ));
        }
        self.domain_config(ids)
    }

    pub fn gan_hp(&self) -> Result<GanHyperParams> {
        let hp = GanHyperParams {
            lambda_c: self.get_f64("gan_lambda_c")?,
            lambda_rec: self.get_f64("gan_lambda_rec")?,
            lambda_gp: self.get_f64("gan_lambda_gp")?,
            lr: self.get_f64("gan_lr")?,
            lr_decay: self.get_bool("gan_lr_decay")?,
            adam_beta1: self.get_f64("gan_beta1")?,
            adam_beta2: self.get_f64("gan_beta2")?,
            batch_size: self.get_usize("gan_batch_size")?,
            critic_steps_per_gen: self.get_usize("gan_critic_steps")?,
            total_iters: self.get_usize("gan_total_iters")?,
            ckpt_interval: self.get_usize("gan_ckpt_interval")?,
            gen_width: self.get_usize("gan_gen_width")?,
            gen_depth: self.get_usize("gan_gen_depth")?,
            critic_width: self.get_usize("gan_critic_width")?,
            critic_depth: self.get_usize("gan_critic_depth")?,
            leaky_slope: self.get_f64("gan_leaky_slope")?,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn reid_hp(&self) -> Result<ReidHyperParams> {
        let pooling = match self.get_str("reid_pooling")? {
            "gap" => PoolingMode::GlobalAverage,
            "lmp" => PoolingMode::Lmp(self.get_usize("reid_lmp_p")?),
            v => {
                return Err(Error::config(format!(
                    "reid_pooling must be `gap` or `lmp`, got `{v}`"
                )))
            }
        };
        Ok(ReidHyperParams {
            epochs: self.get_usize("reid_epochs")?,
            lr: self.get_f64("reid_lr")?,
            batch_size: self.get_usize("reid_batch_size")?,
            width: self.get_usize("reid_width")?,
            depth: self.get_usize("reid_depth")?,
            feat_channels: self.get_usize("reid_feat_channels")?,
            pooling,
            flip_augment: self.get_bool("reid_flip")?,
            ..Default::default()
        })
    }

    pub fn softlabel_params(&self) -> Result<SoftLabelParams> {
        let p = SoftLabelParams {
            k: self.get_usize("softlabel_k")?,
            lambda: self.get_f64("softlabel_lambda")?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn finetune_params(&self) -> Result<FinetuneParams> {
        Ok(FinetuneParams {
            epochs: self.get_usize("finetune_epochs")?,
            lr: self.get_f64("finetune_lr")?,
            batch_size: self.get_usize("finetune_batch_size")?,
            alpha: self.get_f64("finetune_alpha")?,
            ..Default::default()
        })
    }

    pub fn eval_options(&self) -> Result<EvalOptions> {
        Ok(EvalOptions {
            exclude_same_camera: self.get_bool("eval_exclude_same_camera")?,
        })
    }

    /// Synthetic spec for one domain, styles derived unless overridden.
    pub fn synthetic_spec(&self, domain: Domain) -> Result<SyntheticSpec> {
        let cameras = match domain {
            Domain::Source => self.get_usize("cameras_source")?,
            Domain::Target => self.get_usize("cameras_target")?,
        };
        let mut spec = SyntheticSpec::default_for(domain, cameras);
        spec.identities = match domain {
            Domain::Source => self.get_usize("synth_ids_source")?,
            Domain::Target => self.get_usize("synth_ids_target")?,
        };
        spec.samples_per_identity = self.get_usize("synth_samples_per_id")?;
        let (h, w) = self.resolution()?;
        spec.image_h = h;
        spec.image_w = w;
        spec.noise_level = self.get_f64("synth_noise")?;
        let (bkey, hkey) = match domain {
            Domain::Source => ("synth_brightness_source", "synth_hue_source"),
            Domain::Target => ("synth_brightness_target", "synth_hue_target"),
        };
        if let Some(b) = self.get_f64_list(bkey)? {
            if b.len() != cameras {
                return Err(Error::config(format!(
                    "{bkey} must list {cameras} gains, got {}",
                    b.len()
                )));
            }
            spec.brightness = b;
        }
        if let Some(hh) = self.get_f64_list(hkey)? {
            if hh.len() != cameras {
                return Err(Error::config(format!(
                    "{hkey} must list {cameras} angles, got {}",
                    hh.len()
                )));
            }
            spec.hue_angles = hh;
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_every_key_and_echo_is_sorted() {
        let cfg = RunConfig::default();
        let text = cfg.resolved_text();
        assert_eq!(text.lines().count(), KEYS.len());
        let lines: Vec<&str> = text.lines().collect();
        let mut sorted = lines.clone();
        sorted.sort();
        assert_eq!(lines, sorted);
        assert!(text.contains("gan_lambda_rec = 10"));
    }

    #[test]
    fn unknown_key_is_rejected_with_its_name() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("gan_lambda_q", "3").unwrap_err();
        assert!(err.to_string().contains("gan_lambda_q"));
        let err = cfg.apply_text("seed = 4\nnope = 1\n").unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn file_format_accepts_comments_and_blanks() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# a comment\n\nseed = 33  # trailing comment\ngan_lr = 0.002\n")
            .unwrap();
        assert_eq!(cfg.get_u64("seed").unwrap(), 33);
        assert_eq!(cfg.get_f64("gan_lr").unwrap(), 0.002);
    }

    #[test]
    fn typed_accessors_validate() {
        let mut cfg = RunConfig::default();
        cfg.set("gan_batch_size", "oops").unwrap();
        assert!(cfg.get_usize("gan_batch_size").is_err());
        cfg.set("reid_flip", "maybe").unwrap();
        assert!(cfg.get_bool("reid_flip").is_err());
        cfg.set("reid_pooling", "mean").unwrap();
        assert!(cfg.reid_hp().is_err());
    }

    #[test]
    fn builders_produce_validated_params() {
        let mut cfg = RunConfig::default();
        assert!(cfg.gan_hp().is_ok());
        cfg.set("gan_lambda_gp", "-3").unwrap();
        assert!(cfg.gan_hp().is_err());

        let mut cfg = RunConfig::default();
        cfg.set("synth_brightness_source", "0.5, 0.75, 1.0").unwrap();
        cfg.set("cameras_source", "3").unwrap();
        let spec = cfg.synthetic_spec(Domain::Source).unwrap();
        assert_eq!(spec.brightness, vec![0.5, 0.75, 1.0]);
        cfg.set("synth_brightness_source", "0.5").unwrap();
        assert!(cfg.synthetic_spec(Domain::Source).is_err());
    }
}
