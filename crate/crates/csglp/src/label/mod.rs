//! KNN-based soft labels for the unlabeled target domain.
//!
//! For each target embedding, the K nearest translated-source embeddings
//! are selected by squared Euclidean distance; a temperature softmax over
//! `-lambda * d^2` gives per-neighbor selection probabilities, which are
//! accumulated per identity class into a row-stochastic soft-label matrix.
//!
//! SLM1 layout: magic `SLM1`, little-endian u32 N_t, u32 M_s, u32 K,
//! 64-bit float lambda, then N_t * M_s little-endian f32 values row-major.

pub mod finetune;

use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::fileio::*;
use crate::reid::embedding::EmbeddingSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftLabelParams {
    /// Neighborhood size.
    pub k: usize,
    /// Distance temperature of the selection softmax.
    pub lambda: f64,
}

impl SoftLabelParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("K must be >= 1"));
        }
        if self.lambda < 0.0 {
            return Err(Error::config("lambda must be nonnegative"));
        }
        Ok(())
    }
}

/// The K nearest reference rows of one query, distances ascending, ties
/// broken by lower reference index.
#[derive(Debug, Clone)]
pub struct NeighborSet {
    pub indices: Vec<usize>,
    pub squared_distances: Vec<f64>,
    pub classes: Vec<usize>,
}

/// Row-stochastic `N_t x M_s` matrix of target-sample class distributions.
#[derive(Debug, Clone)]
pub struct SoftLabelMatrix {
    pub probs: Array2<f64>,
    pub params: SoftLabelParams,
}

impl SoftLabelMatrix {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        for (i, row) in self.probs.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::data(format!("soft label row {i} sums to {sum}")));
            }
            if row.iter().any(|&v| v < 0.0) {
                return Err(Error::data(format!("soft label row {i} has a negative entry")));
            }
            let support = row.iter().filter(|&&v| v > 0.0).count();
            if support > self.params.k {
                return Err(Error::data(format!(
                    "soft label row {i} has support {support} > K = {}",
                    self.params.k
                )));
            }
        }
        Ok(())
    }
}

/// Exact K-nearest-neighbor query by squared Euclidean distance.
pub fn knn_query(query: ArrayView1<f64>, reference: &EmbeddingSet, k: usize) -> Result<NeighborSet> {
    if k == 0 {
        return Err(Error::config("K must be >= 1"));
    }
    if k > reference.len() {
        return Err(Error::data(format!(
            "K = {k} exceeds reference size {}",
            reference.len()
        )));
    }
    if query.len() != reference.dim() {
        return Err(Error::shape(format!(
            "query dimension {} does not match reference dimension {}",
            query.len(),
            reference.dim()
        )));
    }
    let mut scored: Vec<(f64, usize)> = reference
        .vectors
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut d = 0.0;
            for (a, b) in query.iter().zip(row.iter()) {
                let t = a - b;
                d += t * t;
            }
            (d, i)
        })
        .collect();
    scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let top = &scored[..k];
    let mut classes = Vec::with_capacity(k);
    for &(_, i) in top {
        let pid = reference.meta[i].person_id.ok_or_else(|| {
            Error::data(format!("reference row {i} is unlabeled; soft labels need classes"))
        })?;
        classes.push(pid);
    }
    Ok(NeighborSet {
        indices: top.iter().map(|&(_, i)| i).collect(),
        squared_distances: top.iter().map(|&(d, _)| d).collect(),
        classes,
    })
}

/// Selection probabilities `exp(-lambda d_k^2) / sum_k exp(-lambda d_k^2)`,
/// computed with max subtraction.
pub fn neighbor_selection_probs(neighbors: &NeighborSet, lambda: f64) -> Result<Vec<f64>> {
    if lambda < 0.0 {
        return Err(Error::config(format!("lambda must be nonnegative, got {lambda}")));
    }
    if neighbors.squared_distances.is_empty() {
        return Err(Error::data("neighbor set is empty"));
    }
    let m = neighbors
        .squared_distances
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = neighbors
        .squared_distances
        .iter()
        .map(|&d| (-lambda * (d - m)).exp())
        .collect();
    let z: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / z).collect())
}

/// Accumulate selection probabilities over classes (zero for classes absent
/// from the neighborhood).
pub fn soft_label(selection_probs: &[f64], classes: &[usize], m_s: usize) -> Result<Vec<f64>> {
    if selection_probs.len() != classes.len() {
        return Err(Error::shape(format!(
            "{} probabilities for {} classes",
            selection_probs.len(),
            classes.len()
        )));
    }
    let sum: f64 = selection_probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::data(format!("selection probabilities sum to {sum}")));
    }
    let mut out = vec![0.0; m_s];
    for (&p, &c) in selection_probs.iter().zip(classes) {
        if c >= m_s {
            return Err(Error::data(format!("class index {c} out of range for {m_s} classes")));
        }
        out[c] += p;
    }
    Ok(out)
}

/// Soft labels for every target row from its K nearest translated-source
/// neighbors.
pub fn soft_label_all(
    target: &EmbeddingSet,
    translated_source: &EmbeddingSet,
    params: &SoftLabelParams,
    m_s: usize,
) -> Result<SoftLabelMatrix> {
    params.validate()?;
    if target.dim() != translated_source.dim() && !target.is_empty() {
        return Err(Error::shape(format!(
            "target dimension {} does not match source dimension {}",
            target.dim(),
            translated_source.dim()
        )));
    }
    if target.normalized != translated_source.normalized {
        return Err(Error::data(
            "target and source embeddings disagree on normalization; refusing to mix scales",
        ));
    }
    let mut probs = Array2::<f64>::zeros((target.len(), m_s));
    for (j, row) in target.vectors.rows().into_iter().enumerate() {
        let neighbors = knn_query(row, translated_source, params.k)?;
        let sel = neighbor_selection_probs(&neighbors, params.lambda)?;
        let dist = soft_label(&sel, &neighbors.classes, m_s)?;
        for (p, v) in dist.into_iter().enumerate() {
            probs[[j, p]] = v;
        }
    }
    Ok(SoftLabelMatrix {
        probs,
        params: *params,
    })
}

/// Soft-target cross-entropy `-(1/N) sum_j sum_p y_jp log softmax(logits)_jp`
/// via log-sum-exp; finite for all finite logits.
pub fn cross_entropy_soft(pred_logits: &Array2<f64>, soft: &SoftLabelMatrix) -> Result<f64> {
    let (n, c) = pred_logits.dim();
    if soft.probs.dim() != (n, c) {
        return Err(Error::shape(format!(
            "logits {:?} vs soft labels {:?}",
            pred_logits.dim(),
            soft.probs.dim()
        )));
    }
    let mut total = 0.0;
    for (lrow, srow) in pred_logits.rows().into_iter().zip(soft.probs.rows()) {
        let m = lrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + lrow.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        for (&l, &y) in lrow.iter().zip(srow.iter()) {
            if y > 0.0 {
                total -= y * (l - lse);
            }
        }
    }
    Ok(total / n as f64)
}

const SLM_MAGIC: &[u8; 4] = b"SLM1";

pub fn save_slm1(m: &SoftLabelMatrix, path: &Path) -> Result<()> {
    m.validate()?;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(SLM_MAGIC)?;
    write_u32(&mut w, m.probs.nrows() as u32)?;
    write_u32(&mut w, m.probs.ncols() as u32)?;
    write_u32(&mut w, m.params.k as u32)?;
    write_f64(&mut w, m.params.lambda)?;
    for &v in m.probs.iter() {
        write_f32(&mut w, v as f32)?;
    }
    Ok(())
}

pub fn load_slm1(path: &Path) -> Result<SoftLabelMatrix> {
    let mut r = BufReader::new(std::fs::File::open(path).map_err(|e| {
        Error::data(format!("cannot open soft labels {}: {e}", path.display()))
    })?);
    expect_magic(&mut r, SLM_MAGIC, "soft label file")?;
    let n = read_u32(&mut r)? as usize;
    let m_s = read_u32(&mut r)? as usize;
    let k = read_u32(&mut r)? as usize;
    let lambda = read_f64(&mut r)?;
    let mut data = Vec::with_capacity(n * m_s);
    for _ in 0..n * m_s {
        data.push(read_f32(&mut r)? as f64);
    }
    Ok(SoftLabelMatrix {
        probs: Array2::from_shape_vec((n, m_s), data)
            .map_err(|e| Error::data(format!("soft label shape: {e}")))?,
        params: SoftLabelParams { k, lambda },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reid::embedding::RowMeta;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn labeled_embeddings(vectors: Array2<f64>, classes: &[usize]) -> EmbeddingSet {
        let meta = classes
            .iter()
            .map(|&c| RowMeta {
                person_id: Some(c),
                camera_index: 0,
                domain_index: 0,
            })
            .collect();
        EmbeddingSet {
            vectors,
            meta,
            normalized: false,
        }
    }

    fn random_embeddings(
        n: usize,
        d: usize,
        m_s: usize,
        rng: &mut ChaCha8Rng,
    ) -> EmbeddingSet {
        let vectors = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0);
        let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..m_s)).collect();
        labeled_embeddings(vectors, &classes)
    }

    #[test]
    fn knn_finds_self_at_distance_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = random_embeddings(20, 8, 4, &mut rng);
        let q = set.vectors.row(7).to_owned();
        let got = knn_query(q.view(), &set, 3).unwrap();
        assert_eq!(got.indices[0], 7);
        assert_eq!(got.squared_distances[0], 0.0);
        assert!(got.squared_distances.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn knn_picks_nearest_two() {
        let vectors = ndarray::array![[1.0], [2.0], [3.0]];
        let set = labeled_embeddings(vectors, &[0, 1, 2]);
        let q = ndarray::array![0.0];
        let got = knn_query(q.view(), &set, 2).unwrap();
        assert_eq!(got.indices, vec![0, 1]);
        assert_eq!(got.squared_distances, vec![1.0, 4.0]);
    }

    #[test]
    fn knn_rejects_bad_k_and_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let set = random_embeddings(5, 4, 2, &mut rng);
        let q = set.vectors.row(0).to_owned();
        assert!(knn_query(q.view(), &set, 6).is_err());
        assert!(knn_query(q.view(), &set, 0).is_err());
        let q3 = ndarray::Array1::zeros(3);
        assert!(knn_query(q3.view(), &set, 2).is_err());
    }

    #[test]
    fn knn_matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = random_embeddings(200, 16, 10, &mut rng);
        for _ in 0..50 {
            let q: Vec<f64> = (0..16).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let q = ndarray::Array1::from_vec(q);
            let got = knn_query(q.view(), &set, 9).unwrap();
            // independent oracle: full sort of all (distance, index) pairs
            let mut all: Vec<(f64, usize)> = set
                .vectors
                .rows()
                .into_iter()
                .enumerate()
                .map(|(i, row)| {
                    let d: f64 = q
                        .iter()
                        .zip(row.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d, i)
                })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (j, &(d, i)) in all[..9].iter().enumerate() {
                assert_eq!(got.indices[j], i);
                assert!((got.squared_distances[j] - d).abs() < 1e-12);
            }
        }
    }

    fn nbrs(d2: &[f64]) -> NeighborSet {
        NeighborSet {
            indices: (0..d2.len()).collect(),
            squared_distances: d2.to_vec(),
            classes: vec![0; d2.len()],
        }
    }

    #[test]
    fn selection_probs_lambda_zero_is_uniform() {
        let p = neighbor_selection_probs(&nbrs(&[0.3, 1.9, 0.1, 4.0]), 0.0).unwrap();
        for &v in &p {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let single = neighbor_selection_probs(&nbrs(&[2.0]), 3.0).unwrap();
        assert_eq!(single, vec![1.0]);
    }

    #[test]
    fn selection_probs_hand_example() {
        // lambda = 1, squared distances [0, ln 2] -> [2/3, 1/3]
        let p = neighbor_selection_probs(&nbrs(&[0.0, 2f64.ln()]), 1.0).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn selection_probs_negative_lambda_rejected() {
        assert!(neighbor_selection_probs(&nbrs(&[1.0]), -0.5).is_err());
    }

    #[test]
    fn selection_probs_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let d2: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 3.0).collect();
            let shifted: Vec<f64> = d2.iter().map(|d| d + 7.25).collect();
            let a = neighbor_selection_probs(&nbrs(&d2), 2.5).unwrap();
            let b = neighbor_selection_probs(&nbrs(&shifted), 2.5).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn entropy_never_increases_with_lambda() {
        let entropy = |p: &[f64]| -> f64 {
            p.iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| -v * v.ln())
                .sum()
        };
        let d2 = [0.1, 0.5, 0.9, 1.4, 2.0];
        let mut prev = f64::INFINITY;
        for lambda in [0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0] {
            let p = neighbor_selection_probs(&nbrs(&d2), lambda).unwrap();
            let h = entropy(&p);
            assert!(h <= prev + 1e-12, "entropy rose at lambda {lambda}");
            prev = h;
        }
    }

    #[test]
    fn soft_label_accumulates_by_class() {
        // all neighbors in one class -> one-hot at that class
        let one = soft_label(&[0.4, 0.35, 0.25], &[2, 2, 2], 5).unwrap();
        assert!((one[2] - 1.0).abs() < 1e-12);
        for (p, &v) in one.iter().enumerate() {
            if p != 2 {
                assert_eq!(v, 0.0);
            }
        }
        let mixed = soft_label(&[0.5, 0.3, 0.2], &[1, 1, 3], 4).unwrap();
        assert!((mixed[1] - 0.8).abs() < 1e-12);
        assert!((mixed[3] - 0.2).abs() < 1e-12);
        assert_eq!(mixed[0], 0.0);
        assert!(soft_label(&[0.5, 0.5], &[0, 9], 4).is_err());
        assert!(soft_label(&[0.5, 0.4], &[0, 1], 4).is_err()); // sums to 0.9
    }

    #[test]
    fn soft_label_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let k = rng.random_range(1..=8);
            let m_s = rng.random_range(2..10);
            let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.01).collect();
            let z: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|v| v / z).collect();
            let classes: Vec<usize> = (0..k).map(|_| rng.random_range(0..m_s)).collect();
            let got = soft_label(&probs, &classes, m_s).unwrap();
            let mut want = vec![0.0; m_s];
            for i in 0..k {
                want[classes[i]] += probs[i];
            }
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn soft_label_all_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let source = random_embeddings(60, 8, 5, &mut rng);
        let target = random_embeddings(17, 8, 5, &mut rng);
        let params = SoftLabelParams { k: 7, lambda: 4.0 };
        let m = soft_label_all(&target, &source, &params, 5).unwrap();
        m.validate().unwrap();
        assert_eq!(m.probs.dim(), (17, 5));
    }

    #[test]
    fn soft_label_all_empty_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let source = random_embeddings(10, 4, 3, &mut rng);
        let target = EmbeddingSet {
            vectors: Array2::zeros((0, 4)),
            meta: vec![],
            normalized: false,
        };
        let m = soft_label_all(&target, &source, &SoftLabelParams { k: 3, lambda: 1.0 }, 3)
            .unwrap();
        assert_eq!(m.probs.dim(), (0, 3));
    }

    #[test]
    fn large_lambda_gives_nearest_neighbor_one_hot() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut source = random_embeddings(40, 6, 4, &mut rng);
        source.normalize();
        let mut target = random_embeddings(9, 6, 4, &mut rng);
        target.normalize();
        let params = SoftLabelParams {
            k: 5,
            lambda: 1e6,
        };
        let m = soft_label_all(&target, &source, &params, 4).unwrap();
        for (j, row) in target.vectors.rows().into_iter().enumerate() {
            let nn = knn_query(row, &source, 1).unwrap();
            let want_class = nn.classes[0];
            assert!((m.probs[[j, want_class]] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mixed_normalization_flags_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let source = random_embeddings(10, 4, 3, &mut rng);
        let mut target = random_embeddings(5, 4, 3, &mut rng);
        target.normalize();
        assert!(
            soft_label_all(&target, &source, &SoftLabelParams { k: 2, lambda: 1.0 }, 3).is_err()
        );
    }

    #[test]
    fn cross_entropy_soft_closed_forms() {
        // one-hot target, uniform logits -> ln M
        let logits = Array2::<f64>::zeros((3, 7));
        let mut probs = Array2::<f64>::zeros((3, 7));
        probs[[0, 2]] = 1.0;
        probs[[1, 0]] = 1.0;
        probs[[2, 6]] = 1.0;
        let soft = SoftLabelMatrix {
            probs,
            params: SoftLabelParams { k: 1, lambda: 1.0 },
        };
        let ce = cross_entropy_soft(&logits, &soft).unwrap();
        assert!((ce - 7f64.ln()).abs() < 1e-12);

        // uniform target, uniform logits -> ln M
        let probs = Array2::<f64>::from_elem((3, 7), 1.0 / 7.0);
        let soft = SoftLabelMatrix {
            probs,
            params: SoftLabelParams { k: 7, lambda: 0.0 },
        };
        let ce = cross_entropy_soft(&logits, &soft).unwrap();
        assert!((ce - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_soft_is_finite_and_gibbs_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..30 {
            let n = 4;
            let c = 6;
            let logits = Array2::from_shape_fn((n, c), |_| rng.random::<f64>() * 200.0 - 100.0);
            let mut probs = Array2::<f64>::zeros((n, c));
            for i in 0..n {
                let raw: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 1e-3).collect();
                let z: f64 = raw.iter().sum();
                for j in 0..c {
                    probs[[i, j]] = raw[j] / z;
                }
            }
            let soft = SoftLabelMatrix {
                probs: probs.clone(),
                params: SoftLabelParams { k: c, lambda: 1.0 },
            };
            let ce = cross_entropy_soft(&logits, &soft).unwrap();
            assert!(ce.is_finite());
            // Gibbs: CE >= mean row entropy of the soft labels
            let mean_entropy: f64 = probs
                .rows()
                .into_iter()
                .map(|row| row.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum::<f64>())
                .sum::<f64>()
                / n as f64;
            assert!(ce >= mean_entropy - 1e-9);
        }
    }

    #[test]
    fn slm1_roundtrip_and_header() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let source = random_embeddings(20, 4, 3, &mut rng);
        let target = random_embeddings(6, 4, 3, &mut rng);
        let m =
            soft_label_all(&target, &source, &SoftLabelParams { k: 4, lambda: 2.5 }, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("soft.slm");
        save_slm1(&m, &path).unwrap();
        let loaded = load_slm1(&path).unwrap();
        assert_eq!(loaded.params.k, 4);
        assert_eq!(loaded.params.lambda, 2.5);
        assert_eq!(loaded.probs.dim(), (6, 3));
        for (a, b) in m.probs.iter().zip(loaded.probs.iter()) {
            assert_eq!(*a as f32, *b as f32);
        }
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"SLM1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 6);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 4);
        assert_eq!(f64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2.5);
        assert_eq!(bytes.len(), 24 + 6 * 3 * 4);
        // rewrite is byte-identical
        let path2 = dir.path().join("soft2.slm");
        save_slm1(&loaded, &path2).unwrap();
        assert_eq!(bytes, std::fs::read(&path2).unwrap());
    }
}
