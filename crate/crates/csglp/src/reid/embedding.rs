//! Embedding sets and the EMB1 interchange format.
//!
//! EMB1 layout: magic `EMB1`, little-endian u32 row count N, u32 dimension
//! d, u32 flags (bit 0 = normalized), N*d little-endian IEEE-754 f32 values
//! row-major, then a UTF-8 metadata block of N lines
//! `person_id,camera_index,domain_index` with person_id -1 when absent.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::fileio::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowMeta {
    pub person_id: Option<usize>,
    pub camera_index: usize,
    pub domain_index: usize,
}

#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub vectors: Array2<f64>,
    pub meta: Vec<RowMeta>,
    pub normalized: bool,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.meta.len() != self.len() {
            return Err(Error::data(format!(
                "embedding row count {} does not match metadata count {}",
                self.len(),
                self.meta.len()
            )));
        }
        if self.normalized {
            for (i, row) in self.vectors.rows().into_iter().enumerate() {
                let norm = row.dot(&row).sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(Error::data(format!(
                        "row {i} of a normalized embedding set has norm {norm}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// L2-normalize every row in place (zero rows are left untouched).
    pub fn normalize(&mut self) {
        for mut row in self.vectors.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
            }
        }
        self.normalized = true;
    }
}

const EMB_MAGIC: &[u8; 4] = b"EMB1";

pub fn save_emb1(set: &EmbeddingSet, path: &Path) -> Result<()> {
    set.validate()?;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(EMB_MAGIC)?;
    write_u32(&mut w, set.len() as u32)?;
    write_u32(&mut w, set.dim() as u32)?;
    write_u32(&mut w, if set.normalized { 1 } else { 0 })?;
    for &v in set.vectors.iter() {
        write_f32(&mut w, v as f32)?;
    }
    let mut meta = String::new();
    for m in &set.meta {
        meta.push_str(&format!(
            "{},{},{}\n",
            m.person_id.map(|p| p as i64).unwrap_or(-1),
            m.camera_index,
            m.domain_index
        ));
    }
    w.write_all(meta.as_bytes())?;
    Ok(())
}

pub fn load_emb1(path: &Path) -> Result<EmbeddingSet> {
    let mut r = BufReader::new(std::fs::File::open(path).map_err(|e| {
        Error::data(format!("cannot open embeddings {}: {e}", path.display()))
    })?);
    expect_magic(&mut r, EMB_MAGIC, "embedding file")?;
    let n = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let flags = read_u32(&mut r)?;
    let normalized = flags & 1 == 1;
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        data.push(read_f32(&mut r)? as f64);
    }
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut meta = Vec::with_capacity(n);
    for (i, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::data(format!("embedding metadata line {i} malformed: {line}")));
        }
        let pid: i64 = parts[0]
            .parse()
            .map_err(|_| Error::data(format!("bad person id on metadata line {i}")))?;
        meta.push(RowMeta {
            person_id: if pid < 0 { None } else { Some(pid as usize) },
            camera_index: parts[1]
                .parse()
                .map_err(|_| Error::data(format!("bad camera index on metadata line {i}")))?,
            domain_index: parts[2]
                .parse()
                .map_err(|_| Error::data(format!("bad domain index on metadata line {i}")))?,
        });
    }
    if meta.len() != n {
        return Err(Error::data(format!(
            "embedding file has {} metadata lines for {n} rows",
            meta.len()
        )));
    }
    let mut set = EmbeddingSet {
        vectors: Array2::from_shape_vec((n, d), data)
            .map_err(|e| Error::data(format!("embedding shape: {e}")))?,
        meta,
        normalized,
    };
    if normalized {
        // f32 quantization nudges norms off 1; restore the contract
        set.normalize();
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sample_set(n: usize, d: usize, normalized: bool, seed: u64) -> EmbeddingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = EmbeddingSet {
            vectors: Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0),
            meta: (0..n)
                .map(|i| RowMeta {
                    person_id: if i % 5 == 4 { None } else { Some(i % 7) },
                    camera_index: i % 3,
                    domain_index: i % 2,
                })
                .collect(),
            normalized: false,
        };
        if normalized {
            set.normalize();
        }
        set
    }

    #[test]
    fn emb1_roundtrip_preserves_meta_and_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let set = sample_set(11, 6, false, 1);
        let path = dir.path().join("x.emb");
        save_emb1(&set, &path).unwrap();
        let loaded = load_emb1(&path).unwrap();
        assert_eq!(loaded.len(), 11);
        assert_eq!(loaded.dim(), 6);
        assert_eq!(loaded.meta, set.meta);
        assert!(!loaded.normalized);
        for (a, b) in set.vectors.iter().zip(loaded.vectors.iter()) {
            assert_eq!(*a as f32, *b as f32); // exact at f32 precision
        }
        // rewriting the loaded set is byte-identical
        let path2 = dir.path().join("y.emb");
        save_emb1(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn normalized_flag_restores_unit_norms_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let set = sample_set(8, 64, true, 2);
        let path = dir.path().join("n.emb");
        save_emb1(&set, &path).unwrap();
        let loaded = load_emb1(&path).unwrap();
        assert!(loaded.normalized);
        loaded.validate().unwrap();
        for row in loaded.vectors.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn validate_rejects_bad_norms_and_counts() {
        let mut set = sample_set(4, 3, false, 3);
        set.normalized = true; // claim without normalizing
        assert!(set.validate().is_err());
        let mut set = sample_set(4, 3, false, 4);
        set.meta.pop();
        assert!(set.validate().is_err());
    }

    #[test]
    fn emb1_header_is_exactly_as_documented() {
        let dir = tempfile::tempdir().unwrap();
        let set = sample_set(2, 3, false, 5);
        let path = dir.path().join("h.emb");
        save_emb1(&set, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"EMB1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 0);
        // 2*3 f32 payload then text
        let text = std::str::from_utf8(&bytes[16 + 24..]).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().all(|l| l.split(',').count() == 3));
    }
}
