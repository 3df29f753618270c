//! Command-line pipeline driver.
//!
//! One subcommand per stage, communicating only through documented file
//! formats (image directories + manifests, CSGK/CSRK checkpoints, EMB1
//! embeddings, SLM1 soft labels, UTF-8 eval reports). Every run directory
//! receives the fully resolved configuration; identical config + seed
//! reproduce artifacts byte-identically.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
//! divergence.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::loader::{
    load_reid_directory, load_translated_directory, save_dataset_directory, LoadOptions, Split,
};
use crate::data::synth::{generate_synthetic_domain, stream_seed};
use crate::data::{Dataset, Domain};
use crate::error::{Error, Result};
use crate::eval::{evaluate_single_query, load_eval_report, pairwise_distances, save_eval_report};
use crate::gan::train::{load_gan_checkpoint, save_gan_checkpoint, train_stargan, GanCheckpoint};
use crate::gan::translate::translate_dataset;
use crate::label::finetune::finetune;
use crate::label::{load_slm1, save_slm1, soft_label_all};
use crate::reid::embedding::{load_emb1, save_emb1};
use crate::reid::{load_reid_checkpoint, save_reid_checkpoint, train_baseline};

#[derive(Parser, Debug)]
#[command(name = "csglp", version, about = "Camera-style translation + label propagation re-ID pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic two-domain benchmark datasets.
    Synth(StageArgs),
    /// Train the camera-style translation network.
    TrainGan(StageArgs),
    /// Translate the source domain into target camera styles.
    Translate(StageArgs),
    /// Train the re-ID baseline classifier.
    TrainReid(StageArgs),
    /// Extract pooled descriptors into an EMB1 file.
    Extract(StageArgs),
    /// Compute KNN soft labels into an SLM1 file.
    Softlabel(StageArgs),
    /// Fine-tune the re-ID model on soft labels.
    Finetune(StageArgs),
    /// Evaluate query/gallery embeddings (single-query CMC + mAP).
    Eval(StageArgs),
    /// Aggregate evaluation reports into one comparison table.
    Report(StageArgs),
}

#[derive(Args, Debug, Default)]
pub struct StageArgs {
    /// Flat `key = value` config file; defaults apply for absent keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Global RNG seed (overrides the config key `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory for artifacts (overrides the config key `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trailing `--<config_key> <value>` pairs override config keys 1:1.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    pub overrides: Vec<String>,
}

/// Resolve file config + trailing overrides + explicit flags, create the
/// run directory and echo the resolved configuration into it.
fn resolve(args: &StageArgs) -> Result<(RunConfig, u64, PathBuf)> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut toks = args.overrides.iter().peekable();
    while let Some(tok) = toks.next() {
        let Some(key) = tok.strip_prefix("--") else {
            return Err(Error::config(format!(
                "expected `--<config_key>`, got `{tok}`"
            )));
        };
        if let Some((k, v)) = key.split_once('=') {
            cfg.set(k, v)?;
        } else {
            let v = toks
                .next()
                .ok_or_else(|| Error::config(format!("flag --{key} needs a value")))?;
            cfg.set(key, v)?;
        }
    }
    if let Some(seed) = args.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &args.out {
        cfg.set("out", &out.to_string_lossy())?;
    }
    let seed = cfg.get_u64("seed")?;
    let out = PathBuf::from(cfg.get_str("out")?);
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.resolved.txt"), cfg.resolved_text())?;
    Ok((cfg, seed, out))
}

fn load_opts(cfg: &RunConfig, resize_to: (usize, usize)) -> Result<LoadOptions> {
    Ok(LoadOptions {
        strict: cfg.get_bool("strict_load")?,
        resize_to,
    })
}

fn report_skips(skipped: &[String]) {
    for s in skipped {
        eprintln!("warning: skipped {s}");
    }
}

/// Loaded datasets grow their identity counts independently; unify the
/// configs so cross-dataset stages see one DomainConfig.
fn unify_configs(a: &mut Dataset, b: &mut Dataset) {
    let ids = a
        .config
        .identity_count_source
        .max(b.config.identity_count_source);
    a.config.identity_count_source = ids;
    b.config.identity_count_source = ids;
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::TrainGan(a) => cmd_train_gan(&a),
        Command::Translate(a) => cmd_translate(&a),
        Command::TrainReid(a) => cmd_train_reid(&a),
        Command::Extract(a) => cmd_extract(&a),
        Command::Softlabel(a) => cmd_softlabel(&a),
        Command::Finetune(a) => cmd_finetune(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn cmd_synth(args: &StageArgs) -> Result<()> {
    let (cfg, seed, out) = resolve(args)?;
    let ids = cfg
        .get_usize("synth_ids_source")?
        .max(cfg.get_usize("synth_ids_target")?);
    let domain_cfg = cfg.domain_config(ids)?;
    domain_cfg.validate()?;

    let spec_s = cfg.synthetic_spec(Domain::Source)?;
    let mut spec_t = cfg.synthetic_spec(Domain::Target)?;

    let source =
        generate_synthetic_domain(&spec_s, Domain::Source, &domain_cfg, stream_seed(&[seed, 1]))?;
    save_dataset_directory(&source, &out.join("source").join("train"))?;

    let target =
        generate_synthetic_domain(&spec_t, Domain::Target, &domain_cfg, stream_seed(&[seed, 2]))?;
    save_dataset_directory(&target, &out.join("target").join("train"))?;

    spec_t.samples_per_identity = cfg.get_usize("synth_query_per_id")?;
    let query =
        generate_synthetic_domain(&spec_t, Domain::Target, &domain_cfg, stream_seed(&[seed, 3]))?;
    save_dataset_directory(&query, &out.join("target").join("query"))?;

    spec_t.samples_per_identity = cfg.get_usize("synth_gallery_per_id")?;
    let gallery =
        generate_synthetic_domain(&spec_t, Domain::Target, &domain_cfg, stream_seed(&[seed, 4]))?;
    save_dataset_directory(&gallery, &out.join("target").join("gallery"))?;

    println!(
        "synth: wrote {} source train, {} target train, {} query, {} gallery records under {}",
        source.len(),
        target.len(),
        query.len(),
        gallery.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train_gan(args: &StageArgs) -> Result<()> {
    let (cfg, seed, out) = resolve(args)?;
    let hp = cfg.gan_hp()?;
    let domain_cfg = cfg.domain_config(2)?;
    let opts = load_opts(&cfg, cfg.resolution()?)?;

    let src = load_reid_directory(
        &cfg.get_path("source_dir")?,
        Split::Train,
        Domain::Source,
        &domain_cfg,
        &opts,
    )?;
    report_skips(&src.skipped);
    let tgt = load_reid_directory(
        &cfg.get_path("target_dir")?,
        Split::Train,
        Domain::Target,
        &domain_cfg,
        &opts,
    )?;
    report_skips(&tgt.skipped);
    let mut source = src.dataset;
    let mut target = tgt.dataset;
    unify_configs(&mut source, &mut target);

    let trained = train_stargan(&source, &target, &hp, seed, Some(&out))?;

    let mut log = String::from("iter,adv_d,adv_g,cls_d,cls_g,rec,gp,total_d,total_g\n");
    for r in &trained.log {
        log.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.iter, r.adv_d, r.adv_g, r.cls_d, r.cls_g, r.rec, r.gp, r.total_d, r.total_g
        ));
    }
    std::fs::write(out.join("gan_log.csv"), log)?;

    let ckpt = GanCheckpoint {
        hp,
        config: source.config.clone(),
        resolution: cfg.resolution()?,
        iteration: trained.iterations,
        generator: trained.generator,
        critic: trained.critic,
    };
    let path = out.join("gan.ckpt");
    save_gan_checkpoint(&path, &ckpt)?;
    println!(
        "train-gan: {} iterations, final rec loss {:.6}, wrote {}",
        trained.iterations,
        trained.log.last().map(|r| r.rec).unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

fn cmd_translate(args: &StageArgs) -> Result<()> {
    let (cfg, seed, out) = resolve(args)?;
    let ckpt = load_gan_checkpoint(&cfg.get_path("checkpoint")?)?;
    let opts = load_opts(&cfg, ckpt.resolution)?;
    let src = load_reid_directory(
        &cfg.get_path("source_dir")?,
        Split::Train,
        Domain::Source,
        &ckpt.config,
        &opts,
    )?;
    report_skips(&src.skipped);
    let translated = translate_dataset(&ckpt.generator, &src.dataset, &src.dataset.config, seed)?;
    let dir = out.join("translated");
    save_dataset_directory(&translated, &dir)?;
    println!(
        "translate: {} records -> {}",
        translated.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_train_reid(args: &StageArgs) -> Result<()> {
    let (cfg, seed, out) = resolve(args)?;
    let hp = cfg.reid_hp()?;
    let domain_cfg = cfg.domain_config(cfg.get_usize("identities_source")?.max(2))?;
    let opts = load_opts(&cfg, cfg.resolution()?)?;
    let dir = cfg.get_path("train_dir")?;
    let report = match cfg.get_str("train_kind")? {
        "translated" => load_translated_directory(&dir, &domain_cfg, &opts)?,
        "source" => load_reid_directory(&dir, Split::Train, Domain::Source, &domain_cfg, &opts)?,
        v => {
            return Err(Error::config(format!(
                "train_kind must be `translated` or `source`, got `{v}`"
            )))
        }
    };
    report_skips(&report.skipped);

    let (model, log) = train_baseline(&report.dataset, &hp, seed)?;
    let mut csv = String::from("epoch,loss,accuracy\n");
    for e in &log {
        csv.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.accuracy));
    }
    std::fs::write(out.join("reid_log.csv"), csv)?;
    let path = out.join("reid.ckpt");
    save_reid_checkpoint(&path, &model)?;
    println!(
        "train-reid: {} epochs, final training accuracy {:.4}, wrote {}",
        log.len(),
        log.last().map(|e| e.accuracy).unwrap_or(0.0),
        path.display()
    );
    Ok(())
}

fn cmd_extract(args: &StageArgs) -> Result<()> {
    let (cfg, _seed, out) = resolve(args)?;
    let model = load_reid_checkpoint(&cfg.get_path("model")?)?;
    let domain_cfg = cfg.domain_config(model.num_classes)?;
    let opts = load_opts(&cfg, model.input_hw)?;
    let dir = cfg.get_path("data_dir")?;
    let kind = cfg.get_str("data_kind")?.to_string();
    let report = match kind.as_str() {
        "translated" => load_translated_directory(&dir, &domain_cfg, &opts)?,
        "target_train" => {
            load_reid_directory(&dir, Split::Train, Domain::Target, &domain_cfg, &opts)?
        }
        "query" => load_reid_directory(&dir, Split::Query, Domain::Target, &domain_cfg, &opts)?,
        "gallery" => {
            load_reid_directory(&dir, Split::Gallery, Domain::Target, &domain_cfg, &opts)?
        }
        v => {
            return Err(Error::config(format!(
                "data_kind must be translated|target_train|query|gallery, got `{v}`"
            )))
        }
    };
    report_skips(&report.skipped);

    let set = model.extract_features(&report.dataset, cfg.get_bool("extract_normalize")?)?;
    let path = out.join(format!("{kind}.emb"));
    save_emb1(&set, &path)?;
    println!(
        "extract: {} rows of dimension {} -> {}",
        set.len(),
        set.dim(),
        path.display()
    );
    Ok(())
}

fn cmd_softlabel(args: &StageArgs) -> Result<()> {
    let (cfg, _seed, out) = resolve(args)?;
    let model = load_reid_checkpoint(&cfg.get_path("model")?)?;
    let target = load_emb1(&cfg.get_path("target_emb")?)?;
    let source = load_emb1(&cfg.get_path("source_emb")?)?;
    let params = cfg.softlabel_params()?;
    let m = soft_label_all(&target, &source, &params, model.num_classes)?;
    let path = out.join("softlabels.slm");
    save_slm1(&m, &path)?;
    println!(
        "softlabel: {} x {} matrix (K = {}, lambda = {}) -> {}",
        m.probs.nrows(),
        m.probs.ncols(),
        params.k,
        params.lambda,
        path.display()
    );
    Ok(())
}

fn cmd_finetune(args: &StageArgs) -> Result<()> {
    let (cfg, seed, out) = resolve(args)?;
    let model = load_reid_checkpoint(&cfg.get_path("model")?)?;
    let params = cfg.finetune_params()?;
    let domain_cfg = cfg.domain_config(model.num_classes)?;
    let opts = load_opts(&cfg, model.input_hw)?;
    let tgt = load_reid_directory(
        &cfg.get_path("target_dir")?,
        Split::Train,
        Domain::Target,
        &domain_cfg,
        &opts,
    )?;
    report_skips(&tgt.skipped);
    let soft = load_slm1(&cfg.get_path("softlabels")?)?;
    let translated = if params.alpha > 0.0 {
        Some(load_translated_directory(&cfg.get_path("translated_dir")?, &domain_cfg, &opts)?.dataset)
    } else {
        None
    };

    let (tuned, log) = finetune(&model, &tgt.dataset, &soft, translated.as_ref(), &params, seed)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in log.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(out.join("finetune_log.csv"), csv)?;
    let path = out.join("reid_ft.ckpt");
    save_reid_checkpoint(&path, &tuned)?;
    println!(
        "finetune: {} epochs, final loss {:.6}, wrote {}",
        log.len(),
        log.last().copied().unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

fn cmd_eval(args: &StageArgs) -> Result<()> {
    let (cfg, _seed, out) = resolve(args)?;
    let queries = load_emb1(&cfg.get_path("query_emb")?)?;
    let gallery = load_emb1(&cfg.get_path("gallery_emb")?)?;
    let dist = pairwise_distances(&queries, &gallery)?;
    let report = evaluate_single_query(&dist, &queries.meta, &gallery.meta, &cfg.eval_options()?)?;
    let path = out.join(cfg.get_str("report_name")?);
    save_eval_report(&report, &path)?;
    let text = std::fs::read_to_string(&path)?;
    print!("{text}");
    println!("eval: wrote {}", path.display());
    Ok(())
}

fn cmd_report(args: &StageArgs) -> Result<()> {
    let (cfg, _seed, out) = resolve(args)?;
    let rows = [
        ("no-adaptation", cfg.get_str("report_na")?.to_string()),
        ("translated-baseline", cfg.get_str("report_baseline")?.to_string()),
        ("fine-tuned", cfg.get_str("report_finetuned")?.to_string()),
    ];
    let mut table = format!(
        "{:<20} {:>9} {:>9} {:>9} {:>9} {:>8} {:>8}\n",
        "method", "rank1", "rank5", "rank10", "mAP", "queries", "skipped"
    );
    for (name, file) in &rows {
        let path = resolve_report_path(&out, file);
        match load_eval_report(&path) {
            Ok(r) => table.push_str(&format!(
                "{:<20} {:>9.6} {:>9.6} {:>9.6} {:>9.6} {:>8} {:>8}\n",
                name,
                r.cmc(1),
                r.cmc(5),
                r.cmc(10),
                r.map,
                r.query_count,
                r.skipped_queries
            )),
            Err(_) => table.push_str(&format!("{name:<20} {:>9}\n", "absent")),
        }
    }
    print!("{table}");
    let mut f = std::fs::File::create(out.join("report.txt"))?;
    f.write_all(table.as_bytes())?;
    Ok(())
}

fn resolve_report_path(out: &Path, file: &str) -> PathBuf {
    let p = PathBuf::from(file);
    if p.is_absolute() {
        p
    } else {
        out.join(p)
    }
}
