//! Single-query re-ID evaluation: pairwise distance ranking, CMC rank-k
//! accuracies and mean average precision.
//!
//! Protocol: for each query, gallery entries with the same person id AND
//! the same camera index are excluded (the standard cross-camera filter,
//! toggleable); remaining entries are ranked ascending by distance with
//! ties broken by gallery index. Gallery rows without a person id (junk)
//! stay in the ranking but are never relevant. Queries with no relevant
//! item in their valid gallery are counted as skipped and excluded from
//! all averages.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::reid::embedding::{EmbeddingSet, RowMeta};

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// CMC curve: rank k (1-based) to accuracy, for every k up to the
    /// largest valid-gallery length seen.
    pub rank_accuracies: BTreeMap<usize, f64>,
    pub map: f64,
    /// Queries included in the averages.
    pub query_count: usize,
    /// Queries with no valid same-id gallery item.
    pub skipped_queries: usize,
}

impl EvalReport {
    /// CMC at rank `k`; saturates beyond the recorded curve.
    pub fn cmc(&self, k: usize) -> f64 {
        if self.rank_accuracies.is_empty() {
            return 0.0;
        }
        self.rank_accuracies
            .range(..=k)
            .next_back()
            .map(|(_, &v)| v)
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// Exclude same-person same-camera gallery entries per query.
    pub exclude_same_camera: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            exclude_same_camera: true,
        }
    }
}

/// Exact Euclidean distances between two embedding sets.
pub fn pairwise_distances(queries: &EmbeddingSet, gallery: &EmbeddingSet) -> Result<Array2<f64>> {
    if queries.dim() != gallery.dim() {
        return Err(Error::shape(format!(
            "query dimension {} does not match gallery dimension {}",
            queries.dim(),
            gallery.dim()
        )));
    }
    if queries.normalized != gallery.normalized {
        return Err(Error::data(
            "query and gallery embeddings disagree on normalization",
        ));
    }
    let (nq, ng) = (queries.len(), gallery.len());
    let mut out = Array2::<f64>::zeros((nq, ng));
    for (i, q) in queries.vectors.rows().into_iter().enumerate() {
        for (j, g) in gallery.vectors.rows().into_iter().enumerate() {
            let mut d = 0.0;
            for (a, b) in q.iter().zip(g.iter()) {
                let t = a - b;
                d += t * t;
            }
            out[[i, j]] = d.sqrt();
        }
    }
    Ok(out)
}

/// CMC and mAP under the single-query protocol.
pub fn evaluate_single_query(
    dist: &Array2<f64>,
    query_meta: &[RowMeta],
    gallery_meta: &[RowMeta],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let (nq, ng) = dist.dim();
    if query_meta.len() != nq || gallery_meta.len() != ng {
        return Err(Error::shape(format!(
            "distance matrix is {nq}x{ng} but metadata has {} queries and {} gallery rows",
            query_meta.len(),
            gallery_meta.len()
        )));
    }

    let mut first_ranks: Vec<usize> = Vec::new();
    let mut ap_sum = 0.0;
    let mut skipped = 0usize;
    let mut max_valid_len = 0usize;

    for (qi, qm) in query_meta.iter().enumerate() {
        let q_pid = qm.person_id.ok_or_else(|| {
            Error::data(format!("query {qi} has no person id; cannot evaluate"))
        })?;

        // valid gallery: drop same-id same-camera entries
        let mut order: Vec<usize> = (0..ng)
            .filter(|&gj| {
                let gm = &gallery_meta[gj];
                !(opts.exclude_same_camera
                    && gm.person_id == Some(q_pid)
                    && gm.camera_index == qm.camera_index)
            })
            .collect();
        order.sort_by(|&a, &b| {
            dist[[qi, a]]
                .partial_cmp(&dist[[qi, b]])
                .unwrap()
                .then(a.cmp(&b))
        });
        max_valid_len = max_valid_len.max(order.len());

        let relevant_total = order
            .iter()
            .filter(|&&gj| gallery_meta[gj].person_id == Some(q_pid))
            .count();
        if relevant_total == 0 {
            skipped += 1;
            continue;
        }

        let mut hits = 0usize;
        let mut ap = 0.0;
        let mut first = None;
        for (rank0, &gj) in order.iter().enumerate() {
            if gallery_meta[gj].person_id == Some(q_pid) {
                hits += 1;
                let rank = rank0 + 1;
                if first.is_none() {
                    first = Some(rank);
                }
                ap += hits as f64 / rank as f64;
            }
        }
        ap /= relevant_total as f64;
        ap_sum += ap;
        first_ranks.push(first.expect("relevant_total > 0"));
    }

    let query_count = first_ranks.len();
    let mut rank_accuracies = BTreeMap::new();
    if query_count > 0 {
        for k in 1..=max_valid_len.max(10) {
            let c = first_ranks.iter().filter(|&&r| r <= k).count();
            rank_accuracies.insert(k, c as f64 / query_count as f64);
        }
    }
    Ok(EvalReport {
        rank_accuracies,
        map: if query_count > 0 {
            ap_sum / query_count as f64
        } else {
            0.0
        },
        query_count,
        skipped_queries: skipped,
    })
}

/// Serialize the report: UTF-8 `key = value` lines, six decimal places.
pub fn save_eval_report(report: &EvalReport, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    write!(
        f,
        "rank1 = {:.6}\nrank5 = {:.6}\nrank10 = {:.6}\nmAP = {:.6}\nquery_count = {}\nskipped_queries = {}\n",
        report.cmc(1),
        report.cmc(5),
        report.cmc(10),
        report.map,
        report.query_count,
        report.skipped_queries
    )?;
    Ok(())
}

/// Parse the six-key report document back (the CMC curve beyond ranks
/// 1/5/10 is not stored in the file).
pub fn load_eval_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read report {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::data(format!("bad report line: {line}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| -> Result<f64> {
        map.get(k)
            .ok_or_else(|| Error::data(format!("report missing key {k}")))?
            .parse()
            .map_err(|_| Error::data(format!("report key {k} is not a number")))
    };
    let mut rank_accuracies = BTreeMap::new();
    rank_accuracies.insert(1, get("rank1")?);
    rank_accuracies.insert(5, get("rank5")?);
    rank_accuracies.insert(10, get("rank10")?);
    Ok(EvalReport {
        rank_accuracies,
        map: get("mAP")?,
        query_count: get("query_count")? as usize,
        skipped_queries: get("skipped_queries")? as usize,
    })
}
