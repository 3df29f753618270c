// scratch tuning harness for the desk-scale experiment; mirrors the
// acceptance pipeline and prints per-seed rank-1 for all three methods
use csglp::data::synth::{generate_synthetic_domain, SyntheticSpec};
use csglp::data::{Dataset, Domain, DomainConfig};
use csglp::eval::{evaluate_single_query, pairwise_distances, EvalOptions};
use csglp::gan::train::train_stargan;
use csglp::gan::translate::translate_dataset;
use csglp::gan::GanHyperParams;
use csglp::label::finetune::{finetune, FinetuneParams};
use csglp::label::{soft_label_all, SoftLabelParams};
use csglp::reid::{train_baseline, PoolingMode, ReidHyperParams, ReidModel};

struct Bench {
    source: Dataset,
    target_train: Dataset,
    query: Dataset,
    gallery: Dataset,
    config: DomainConfig,
}

fn build_bench(seed: u64) -> Bench {
    let cams = 3;
    let ids = 10;
    let config = DomainConfig::new(cams, cams, ids);
    let mk = |dom: Domain, samples: usize, s: u64| {
        let mut spec = SyntheticSpec::default_for(dom, cams);
        spec.identities = ids;
        spec.samples_per_identity = samples;
        spec.image_h = 32;
        spec.image_w = 16;
        generate_synthetic_domain(&spec, dom, &config, s).unwrap()
    };
    Bench {
        source: mk(Domain::Source, 6, seed * 31 + 1),
        target_train: mk(Domain::Target, 6, seed * 31 + 2).strip_person_ids(),
        query: mk(Domain::Target, 3, seed * 31 + 3),
        gallery: mk(Domain::Target, 6, seed * 31 + 4),
        config,
    }
}

fn rank1_of(model: &ReidModel, bench: &Bench) -> f64 {
    let q = model.extract_features(&bench.query, true).unwrap();
    let g = model.extract_features(&bench.gallery, true).unwrap();
    let dist = pairwise_distances(&q, &g).unwrap();
    let report = evaluate_single_query(&dist, &q.meta, &g.meta, &EvalOptions::default()).unwrap();
    report.cmc(1)
}

fn arg<T: std::str::FromStr>(n: usize, default: T) -> T {
    std::env::args()
        .nth(n)
        .and_then(|s| s.parse().ok())
        .unwrap_or(default)
}

fn main() {
    let iters: usize = arg(1, 2000);
    let gen_width: usize = arg(2, 24);
    let gen_depth: usize = arg(3, 3);
    let k: usize = arg(4, 6);
    let lambda: f64 = arg(5, 10.0);
    let ft_epochs: usize = arg(6, 8);
    let ft_lr: f64 = arg(7, 1e-4);
    let reid_epochs: usize = arg(8, 12);

    let gan_hp = GanHyperParams {
        batch_size: 8,
        critic_steps_per_gen: 2,
        total_iters: iters,
        lr: 2e-4,
        gen_width,
        gen_depth,
        critic_width: 16,
        critic_depth: 2,
        ckpt_interval: 0,
        ..Default::default()
    };
    let alpha: f64 = arg(12, 0.0);
    let reid_lr: f64 = arg(9, 1.5e-3);
    let reid_width: usize = arg(10, 10);
    let reid_feat: usize = arg(11, 24);
    let reid_hp = ReidHyperParams {
        epochs: reid_epochs,
        lr: reid_lr,
        batch_size: 16,
        width: reid_width,
        depth: 2,
        feat_channels: reid_feat,
        pooling: PoolingMode::GlobalAverage,
        flip_augment: false,
        ..Default::default()
    };

    let t0 = std::time::Instant::now();
    let mut means = [0.0f64; 3];
    for &seed in &[11u64, 22, 33] {
        let bench = build_bench(seed);
        let (na_model, _) = train_baseline(&bench.source, &reid_hp, seed).unwrap();
        let r1_na = rank1_of(&na_model, &bench);

        // oracle: source identities rendered directly in target styles
        let ideal = {
            let cams = 3;
            let mut spec = SyntheticSpec::default_for(Domain::Target, cams);
            spec.identities = 10;
            spec.samples_per_identity = 6;
            spec.image_h = 32;
            spec.image_w = 16;
            spec.appearance_offset = 0; // source appearances
            let mut ds =
                generate_synthetic_domain(&spec, Domain::Target, &bench.config, seed * 31 + 9)
                    .unwrap();
            ds.provenance = csglp::data::Provenance::Translated;
            ds
        };
        let (ideal_model, _) = train_baseline(&ideal, &reid_hp, seed).unwrap();
        let r1_ideal = rank1_of(&ideal_model, &bench);

        // oracle: supervised on real target identities (ceiling)
        let cheat = {
            let cams = 3;
            let mut spec = SyntheticSpec::default_for(Domain::Target, cams);
            spec.identities = 10;
            spec.samples_per_identity = 6;
            spec.image_h = 32;
            spec.image_w = 16;
            generate_synthetic_domain(&spec, Domain::Target, &bench.config, seed * 31 + 2).unwrap()
        };
        let (cheat_model, _) = train_baseline(&cheat, &reid_hp, seed).unwrap();
        let r1_cheat = rank1_of(&cheat_model, &bench);
        println!("seed {seed}: ideal-translation {r1_ideal:.4}  target-supervised {r1_cheat:.4}");

        if iters == 0 {
            println!("seed {seed}: NA {r1_na:.4}");
            means[0] += r1_na / 3.0;
            continue;
        }
        let gan = train_stargan(&bench.source, &bench.target_train, &gan_hp, seed, None).unwrap();
        let translated =
            translate_dataset(&gan.generator, &bench.source, &bench.config, seed).unwrap();
        let (star_model, _) = train_baseline(&translated, &reid_hp, seed).unwrap();
        let r1_star = rank1_of(&star_model, &bench);

        let src_emb = star_model.extract_features(&translated, true).unwrap();
        let tgt_emb = star_model.extract_features(&bench.target_train, true).unwrap();
        let soft = soft_label_all(
            &tgt_emb,
            &src_emb,
            &SoftLabelParams { k, lambda },
            bench.config.identity_count_source,
        )
        .unwrap();
        // soft-label self-consistency: same true target id -> same argmax class
        {
            let truth = {
                let cams = 3;
                let mut spec = SyntheticSpec::default_for(Domain::Target, cams);
                spec.identities = 10;
                spec.samples_per_identity = 6;
                spec.image_h = 32;
                spec.image_w = 16;
                generate_synthetic_domain(&spec, Domain::Target, &bench.config, seed * 31 + 2).unwrap()
            };
            let argmax: Vec<usize> = soft
                .probs
                .rows()
                .into_iter()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .unwrap()
                        .0
                })
                .collect();
            let mut same = 0;
            let mut total = 0;
            for i in 0..truth.len() {
                for j in (i + 1)..truth.len() {
                    if truth.records[i].person_id == truth.records[j].person_id {
                        total += 1;
                        if argmax[i] == argmax[j] {
                            same += 1;
                        }
                    }
                }
            }
            println!("  soft-label same-id consistency: {:.3} ({} pairs)", same as f64 / total as f64, total);
        }
        let (tuned, _) = finetune(
            &star_model,
            &bench.target_train,
            &soft,
            if alpha > 0.0 { Some(&translated) } else { None },
            &FinetuneParams {
                epochs: ft_epochs,
                lr: ft_lr,
                batch_size: 16,
                alpha,
                ..Default::default()
            },
            seed,
        )
        .unwrap();
        let r1_ft = rank1_of(&tuned, &bench);

        println!("seed {seed}: NA {r1_na:.4}  translated {r1_star:.4}  finetuned {r1_ft:.4}");
        means[0] += r1_na / 3.0;
        means[1] += r1_star / 3.0;
        means[2] += r1_ft / 3.0;
    }
    println!(
        "means: NA {:.4}  translated {:.4}  finetuned {:.4}   ({:?})",
        means[0],
        means[1],
        means[2],
        t0.elapsed()
    );
}
