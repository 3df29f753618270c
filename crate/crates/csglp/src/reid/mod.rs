//! Re-identification feature learner: a small conv backbone with a softmax
//! identity classifier, trained on the translated source domain (or on raw
//! source images for the no-adaptation baseline).
//!
//! The backbone ends in a spatial feature map; descriptors are either the
//! global average of that map or its Local Max Pooling, and the classifier
//! head consumes whichever pooled descriptor the model is configured for.

pub mod embedding;
pub mod lmp;

use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use ndarray::{Array2, Array4, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::synth::stream_seed;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fileio::*;
use crate::nn::{cross_entropy_indexed, Adam, Conv2d, Linear};
use crate::tensor::{conv_output_extent, Graph, Var};
use embedding::{EmbeddingSet, RowMeta};
use lmp::{lmp_argmax_indices, lmp_pool};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolingMode {
    GlobalAverage,
    Lmp(usize),
}

impl PoolingMode {
    pub fn descriptor_dim(&self, channels: usize) -> usize {
        match self {
            PoolingMode::GlobalAverage => channels,
            PoolingMode::Lmp(p) => p * channels,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReidHyperParams {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub width: usize,
    pub depth: usize,
    pub feat_channels: usize,
    pub pooling: PoolingMode,
    pub flip_augment: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
}

impl Default for ReidHyperParams {
    fn default() -> Self {
        ReidHyperParams {
            epochs: 20,
            lr: 1e-3,
            batch_size: 32,
            width: 12,
            depth: 2,
            feat_channels: 32,
            pooling: PoolingMode::GlobalAverage,
            flip_augment: true,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Backbone + classifier. The feature map contract is
/// (feat_channels, map_h, map_w) before pooling regardless of depth/width.
#[derive(Debug, Clone)]
pub struct ReidModel {
    pub convs: Vec<Conv2d>,
    pub classifier: Linear,
    pub pooling: PoolingMode,
    pub input_hw: (usize, usize),
    pub map_hw: (usize, usize),
    pub feat_channels: usize,
    pub num_classes: usize,
    pub width: usize,
    pub depth: usize,
}

impl ReidModel {
    pub fn new(
        num_classes: usize,
        hp: &ReidHyperParams,
        input_hw: (usize, usize),
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::config("softmax classifier needs at least 2 classes"));
        }
        let (mut h, mut w) = input_hw;
        let mut convs = Vec::with_capacity(hp.depth + 1);
        let mut cin = 3;
        let mut cout = hp.width;
        for _ in 0..hp.depth {
            convs.push(Conv2d::new(cin, cout, 3, 3, 2, 1, rng));
            h = conv_output_extent(h, 3, 2, 1);
            w = conv_output_extent(w, 3, 2, 1);
            cin = cout;
            cout *= 2;
        }
        convs.push(Conv2d::new(cin, hp.feat_channels, 3, 3, 1, 1, rng));
        if let PoolingMode::Lmp(p) = hp.pooling {
            if p > h {
                return Err(Error::config(format!(
                    "lmp band count {p} exceeds feature map height {h}"
                )));
            }
        }
        let d = hp.pooling.descriptor_dim(hp.feat_channels);
        let classifier = Linear::new(d, num_classes, rng);
        Ok(ReidModel {
            convs,
            classifier,
            pooling: hp.pooling,
            input_hw,
            map_hw: (h, w),
            feat_channels: hp.feat_channels,
            num_classes,
            width: hp.width,
            depth: hp.depth,
        })
    }

    pub fn descriptor_dim(&self) -> usize {
        self.pooling.descriptor_dim(self.feat_channels)
    }

    pub fn named_params(&self) -> Vec<(String, &ArrayD<f64>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("reid.conv{i}.w"), &c.w));
            out.push((format!("reid.conv{i}.b"), &c.b));
        }
        out.push(("reid.classifier.w".into(), &self.classifier.w));
        out.push(("reid.classifier.b".into(), &self.classifier.b));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut ArrayD<f64>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.push((format!("reid.conv{i}.w"), &mut c.w));
            out.push((format!("reid.conv{i}.b"), &mut c.b));
        }
        out.push(("reid.classifier.w".into(), &mut self.classifier.w));
        out.push(("reid.classifier.b".into(), &mut self.classifier.b));
        out
    }

    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        let mut vars = Vec::new();
        for c in &self.convs {
            let (w, b) = c.bind(g);
            vars.push(w);
            vars.push(b);
        }
        let (w, b) = self.classifier.bind(g);
        vars.push(w);
        vars.push(b);
        vars
    }

    /// Spatial feature map (N, F, map_h, map_w).
    pub fn forward_map(&self, g: &mut Graph, vars: &[Var], x: Var) -> Var {
        let mut y = x;
        for (i, conv) in self.convs.iter().enumerate() {
            y = conv.forward(g, (vars[2 * i], vars[2 * i + 1]), y);
            y = g.relu(y);
        }
        y
    }

    /// Pooled descriptor (N, d) per the model's pooling mode.
    pub fn forward_descriptor(&self, g: &mut Graph, vars: &[Var], x: Var) -> Var {
        let map = self.forward_map(g, vars, x);
        self.pool_map(g, map)
    }

    fn pool_map(&self, g: &mut Graph, map: Var) -> Var {
        let shape = g.shape(map).to_vec();
        let (n, f, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        match self.pooling {
            PoolingMode::GlobalAverage => {
                let s = g.sum_spatial(map);
                g.scale(s, 1.0 / (h * w) as f64)
            }
            PoolingMode::Lmp(p) => {
                // argmax positions are constants of the current values; the
                // gather stays differentiable through the selected entries
                let per_sample = f * h * w;
                let mut idx = Vec::with_capacity(n * p * f);
                {
                    let val = g.value(map);
                    for ni in 0..n {
                        let sample = val
                            .index_axis(ndarray::Axis(0), ni)
                            .to_owned()
                            .into_dimensionality()
                            .expect("(F,h,w) map");
                        let local = lmp_argmax_indices(&sample, p).expect("validated P");
                        idx.extend(local.into_iter().map(|i| ni * per_sample + i));
                    }
                }
                g.gather(map, std::rc::Rc::new(idx), &[n, p * f])
            }
        }
    }

    /// Classifier logits (N, num_classes).
    pub fn forward_logits(&self, g: &mut Graph, vars: &[Var], x: Var) -> Var {
        let d = self.forward_descriptor(g, vars, x);
        let k = 2 * self.convs.len();
        self.classifier.forward(g, (vars[k], vars[k + 1]), d)
    }

    fn check_resolution(&self, data: &Dataset) -> Result<()> {
        if let Some(r) = data.records.first() {
            if (r.height(), r.width()) != self.input_hw {
                return Err(Error::data(format!(
                    "dataset resolution {}x{} incompatible with backbone input {}x{}",
                    r.height(),
                    r.width(),
                    self.input_hw.0,
                    self.input_hw.1
                )));
            }
        }
        Ok(())
    }

    /// Pooled descriptors for a whole dataset, in dataset order.
    pub fn extract_features(&self, data: &Dataset, normalize: bool) -> Result<EmbeddingSet> {
        data.validate()?;
        if data.is_empty() {
            return Err(Error::data("cannot extract features from an empty dataset"));
        }
        self.check_resolution(data)?;
        let d = self.descriptor_dim();
        let mut vectors = Array2::<f64>::zeros((data.len(), d));
        for (start, chunk) in data.records.chunks(64).enumerate().map(|(i, c)| (i * 64, c)) {
            let (h, w) = self.input_hw;
            let mut x = Array4::<f64>::zeros((chunk.len(), 3, h, w));
            for (i, r) in chunk.iter().enumerate() {
                x.index_axis_mut(ndarray::Axis(0), i).assign(&r.pixels);
            }
            let mut g = Graph::new();
            let vars = self.bind(&mut g);
            let xv = g.leaf(x.into_dyn());
            let map = self.forward_map(&mut g, &vars, xv);
            let val = g.value(map);
            for i in 0..chunk.len() {
                let sample = val
                    .index_axis(ndarray::Axis(0), i)
                    .to_owned()
                    .into_dimensionality()
                    .expect("(F,h,w) map");
                let desc = match self.pooling {
                    PoolingMode::GlobalAverage => {
                        let (f, mh, mw) = sample.dim();
                        (0..f)
                            .map(|c| {
                                sample.index_axis(ndarray::Axis(0), c).sum()
                                    / (mh * mw) as f64
                            })
                            .collect::<Vec<f64>>()
                    }
                    PoolingMode::Lmp(p) => lmp_pool(&sample, p)?,
                };
                for (j, v) in desc.into_iter().enumerate() {
                    vectors[[start + i, j]] = v;
                }
            }
        }
        let meta = data
            .records
            .iter()
            .map(|r| RowMeta {
                person_id: r.person_id,
                camera_index: r.camera_index,
                domain_index: r.domain.index(),
            })
            .collect();
        let mut set = EmbeddingSet {
            vectors,
            meta,
            normalized: false,
        };
        if normalize {
            set.normalize();
        }
        Ok(set)
    }
}

fn flipped_pixels(r: &ndarray::Array3<f64>) -> ndarray::Array3<f64> {
    let mut out = r.clone();
    out.invert_axis(ndarray::Axis(2));
    out
}

pub(crate) struct LabeledBatch {
    pub pixels: Array4<f64>,
    pub labels: Vec<usize>,
}

pub(crate) fn gather_batch(
    data: &Dataset,
    idxs: &[usize],
    flip_rng: Option<&mut ChaCha8Rng>,
) -> LabeledBatch {
    let (_, h, w) = data.records[0].pixels.dim();
    let mut pixels = Array4::<f64>::zeros((idxs.len(), 3, h, w));
    let mut labels = Vec::with_capacity(idxs.len());
    let mut flip_rng = flip_rng;
    for (i, &idx) in idxs.iter().enumerate() {
        let r = &data.records[idx];
        let flip = flip_rng
            .as_deref_mut()
            .map(|rng| rng.random::<bool>())
            .unwrap_or(false);
        if flip {
            pixels
                .index_axis_mut(ndarray::Axis(0), i)
                .assign(&flipped_pixels(&r.pixels));
        } else {
            pixels.index_axis_mut(ndarray::Axis(0), i).assign(&r.pixels);
        }
        labels.push(r.person_id.unwrap_or(usize::MAX));
    }
    LabeledBatch { pixels, labels }
}

/// Supervised softmax training on identity labels.
///
/// Accepts translated datasets (the usual case) and labeled source datasets
/// (the no-adaptation baseline). Every record must carry a person id.
pub fn train_baseline(
    data: &Dataset,
    hp: &ReidHyperParams,
    seed: u64,
) -> Result<(ReidModel, Vec<EpochLog>)> {
    data.validate()?;
    if data.is_empty() {
        return Err(Error::data("training dataset is empty"));
    }
    if let Some(i) = data.records.iter().position(|r| r.person_id.is_none()) {
        return Err(Error::data(format!(
            "record {i} is unlabeled; baseline training needs person ids"
        )));
    }
    let num_classes = data.config.identity_count_source;
    if num_classes < 2 {
        return Err(Error::config("baseline training needs at least 2 identity classes"));
    }
    if let Some(&bad) = data
        .records
        .iter()
        .filter_map(|r| r.person_id.as_ref())
        .find(|&&p| p >= num_classes)
    {
        return Err(Error::data(format!(
            "person id {bad} out of range for {num_classes} classes"
        )));
    }

    let (_, h, w) = data.records[0].pixels.dim();
    let mut init_rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, 0x2E1D, 1]));
    let mut order_rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, 0x2E1D, 2]));
    let mut flip_rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, 0x2E1D, 3]));

    let mut model = ReidModel::new(num_classes, hp, (h, w), &mut init_rng)?;
    let mut opt = Adam::new(hp.adam_beta1, hp.adam_beta2);
    let mut log = Vec::with_capacity(hp.epochs);

    for epoch in 0..hp.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        shuffle(&mut order, &mut order_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(hp.batch_size.max(1)) {
            let flip = hp.flip_augment.then_some(&mut flip_rng);
            let batch = gather_batch(data, chunk, flip);
            let mut g = Graph::new();
            let vars = model.bind(&mut g);
            let x = g.leaf(batch.pixels.into_dyn());
            let logits = model.forward_logits(&mut g, &vars, x);
            let loss = cross_entropy_indexed(&mut g, logits, &batch.labels);
            let loss_v = g.scalar(loss);
            if !loss_v.is_finite() {
                return Err(Error::divergence(format!(
                    "training loss is {loss_v} in epoch {epoch}"
                )));
            }
            loss_sum += loss_v * chunk.len() as f64;
            let lv = g.value(logits);
            for (i, &label) in batch.labels.iter().enumerate() {
                let row = lv.index_axis(ndarray::Axis(0), i);
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(j, _)| j)
                    .unwrap();
                if pred == label {
                    correct += 1;
                }
            }
            let grads = g.grad(loss, &vars);
            let grad_vals: Vec<ArrayD<f64>> =
                grads.iter().map(|&v| g.value(v).to_owned()).collect();
            let mut params: Vec<&mut ArrayD<f64>> = model
                .named_params_mut()
                .into_iter()
                .map(|(_, p)| p)
                .collect();
            opt.step(hp.lr, &mut params, &grad_vals);
        }
        log.push(EpochLog {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok((model, log))
}

/// Fisher-Yates with our seeded generator.
pub(crate) fn shuffle(v: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

const REID_MAGIC: &[u8; 4] = b"CSRK";
const REID_VERSION: u32 = 1;

pub fn save_reid_checkpoint(path: &Path, model: &ReidModel) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(REID_MAGIC)?;
    write_u32(&mut w, REID_VERSION)?;
    let mut meta = String::new();
    let (pool, p) = match model.pooling {
        PoolingMode::GlobalAverage => ("gap", 0),
        PoolingMode::Lmp(p) => ("lmp", p),
    };
    for (k, v) in [
        ("kind", "reid".to_string()),
        ("num_classes", model.num_classes.to_string()),
        ("width", model.width.to_string()),
        ("depth", model.depth.to_string()),
        ("feat_channels", model.feat_channels.to_string()),
        ("pooling", pool.to_string()),
        ("lmp_p", p.to_string()),
        ("image_h", model.input_hw.0.to_string()),
        ("image_w", model.input_hw.1.to_string()),
    ] {
        meta.push_str(&format!("{k} = {v}\n"));
    }
    write_str(&mut w, &meta)?;
    write_named_params(&mut w, &model.named_params())?;
    Ok(())
}

pub fn load_reid_checkpoint(path: &Path) -> Result<ReidModel> {
    let mut r = BufReader::new(std::fs::File::open(path).map_err(|e| {
        Error::data(format!("cannot open checkpoint {}: {e}", path.display()))
    })?);
    expect_magic(&mut r, REID_MAGIC, "reid checkpoint")?;
    let version = read_u32(&mut r)?;
    if version != REID_VERSION {
        return Err(Error::data(format!("unsupported checkpoint version {version}")));
    }
    let meta = parse_meta(&read_str(&mut r)?)?;
    if meta.get("kind").map(String::as_str) != Some("reid") {
        return Err(Error::data("not a reid checkpoint"));
    }
    let pooling = match meta.get("pooling").map(String::as_str) {
        Some("gap") => PoolingMode::GlobalAverage,
        Some("lmp") => PoolingMode::Lmp(meta_get(&meta, "lmp_p")?),
        other => return Err(Error::data(format!("unknown pooling mode {other:?}"))),
    };
    let hp = ReidHyperParams {
        width: meta_get(&meta, "width")?,
        depth: meta_get(&meta, "depth")?,
        feat_channels: meta_get(&meta, "feat_channels")?,
        pooling,
        ..Default::default()
    };
    let input_hw = (meta_get(&meta, "image_h")?, meta_get(&meta, "image_w")?);
    let mut scratch = ChaCha8Rng::seed_from_u64(0);
    let mut model = ReidModel::new(meta_get(&meta, "num_classes")?, &hp, input_hw, &mut scratch)?;
    let loaded = read_named_params(&mut r)?;
    assign_params(&loaded, model.named_params_mut())?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic_domain, SyntheticSpec};
    use crate::data::{Domain, DomainConfig};

    fn labeled_set(ids: usize, samples: usize) -> Dataset {
        let cfg = DomainConfig::new(3, 3, ids);
        let mut spec = SyntheticSpec::default_for(Domain::Source, 3);
        spec.identities = ids;
        spec.samples_per_identity = samples;
        spec.image_h = 16;
        spec.image_w = 8;
        generate_synthetic_domain(&spec, Domain::Source, &cfg, 21).unwrap()
    }

    fn tiny_hp() -> ReidHyperParams {
        ReidHyperParams {
            epochs: 20,
            lr: 2e-3,
            batch_size: 16,
            width: 8,
            depth: 2,
            feat_channels: 16,
            flip_augment: false,
            ..Default::default()
        }
    }

    #[test]
    fn separable_synthetic_set_trains_past_90_percent() {
        let data = labeled_set(8, 6);
        let (_, log) = train_baseline(&data, &tiny_hp(), 5).unwrap();
        let last = log.last().unwrap();
        assert!(
            last.accuracy > 0.9,
            "final training accuracy {}",
            last.accuracy
        );
    }

    #[test]
    fn zero_epochs_returns_initialized_model() {
        let data = labeled_set(4, 2);
        let mut hp = tiny_hp();
        hp.epochs = 0;
        let (a, log_a) = train_baseline(&data, &hp, 9).unwrap();
        let (b, log_b) = train_baseline(&data, &hp, 9).unwrap();
        assert!(log_a.is_empty() && log_b.is_empty());
        for ((_, pa), (_, pb)) in a.named_params().iter().zip(b.named_params()) {
            assert_eq!(pa, &pb);
        }
    }

    #[test]
    fn unlabeled_record_is_rejected() {
        let data = labeled_set(4, 2).strip_person_ids();
        assert!(train_baseline(&data, &tiny_hp(), 1).is_err());
    }

    #[test]
    fn extraction_is_deterministic_and_normalized() {
        let mut data = labeled_set(4, 2);
        // duplicate one image
        let dup = data.records[0].clone();
        data.records.push(dup);
        let mut hp = tiny_hp();
        hp.epochs = 1;
        let (model, _) = train_baseline(&data, &hp, 3).unwrap();
        let set = model.extract_features(&data, true).unwrap();
        set.validate().unwrap();
        assert_eq!(set.len(), data.len());
        for row in set.vectors.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
        }
        // identical inputs give identical rows
        let first = set.vectors.row(0).to_owned();
        let last = set.vectors.row(set.len() - 1).to_owned();
        assert_eq!(first, last);
        // repeated extraction agrees bitwise
        let again = model.extract_features(&data, true).unwrap();
        assert_eq!(set.vectors, again.vectors);
    }

    #[test]
    fn lmp_descriptor_dim_is_p_times_channels() {
        let data = labeled_set(4, 2);
        let mut hp = tiny_hp();
        hp.epochs = 0;
        hp.pooling = PoolingMode::Lmp(3);
        let (model, _) = train_baseline(&data, &hp, 3).unwrap();
        assert_eq!(model.descriptor_dim(), 3 * 16);
        let set = model.extract_features(&data, false).unwrap();
        assert_eq!(set.dim(), 48);
    }

    #[test]
    fn graph_lmp_agrees_with_array_lmp() {
        let data = labeled_set(4, 2);
        let mut hp = tiny_hp();
        hp.epochs = 0;
        hp.pooling = PoolingMode::Lmp(2);
        let (model, _) = train_baseline(&data, &hp, 3).unwrap();

        let batch = gather_batch(&data, &[0, 1, 2], None);
        let mut g = Graph::new();
        let vars = model.bind(&mut g);
        let x = g.leaf(batch.pixels.into_dyn());
        let desc = model.forward_descriptor(&mut g, &vars, x);
        let via_graph = g.value(desc).to_owned();

        let set = model.extract_features(&data, false).unwrap();
        for i in 0..3 {
            for j in 0..model.descriptor_dim() {
                assert_eq!(via_graph[[i, j]], set.vectors[[i, j]]);
            }
        }
    }

    #[test]
    fn wrong_resolution_is_rejected() {
        let data = labeled_set(4, 2);
        let mut hp = tiny_hp();
        hp.epochs = 0;
        let (model, _) = train_baseline(&data, &hp, 3).unwrap();
        let other = {
            let cfg = DomainConfig::new(3, 3, 4);
            let mut spec = SyntheticSpec::default_for(Domain::Source, 3);
            spec.identities = 4;
            spec.samples_per_identity = 2;
            spec.image_h = 32;
            spec.image_w = 16;
            generate_synthetic_domain(&spec, Domain::Source, &cfg, 21).unwrap()
        };
        assert!(model.extract_features(&other, true).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let data = labeled_set(4, 2);
        let mut hp = tiny_hp();
        hp.epochs = 2;
        hp.pooling = PoolingMode::Lmp(2);
        let (model, _) = train_baseline(&data, &hp, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reid.ckpt");
        save_reid_checkpoint(&path, &model).unwrap();
        let loaded = load_reid_checkpoint(&path).unwrap();
        assert_eq!(loaded.pooling, model.pooling);
        assert_eq!(loaded.descriptor_dim(), model.descriptor_dim());
        for ((na, pa), (nb, pb)) in model.named_params().iter().zip(loaded.named_params()) {
            assert_eq!(*na, nb);
            for (x, y) in pa.iter().zip(pb.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let path2 = dir.path().join("reid2.ckpt");
        save_reid_checkpoint(&path2, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn classifier_softmax_rows_are_distributions() {
        let data = labeled_set(4, 2);
        let mut hp = tiny_hp();
        hp.epochs = 1;
        let (model, _) = train_baseline(&data, &hp, 3).unwrap();
        let batch = gather_batch(&data, &[0, 1, 2, 3], None);
        let mut g = Graph::new();
        let vars = model.bind(&mut g);
        let x = g.leaf(batch.pixels.into_dyn());
        let logits = model.forward_logits(&mut g, &vars, x);
        let lsm = crate::nn::log_softmax_rows(&mut g, logits);
        for row in g.value(lsm).rows() {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|v| v.exp() >= 0.0));
        }
    }
}
