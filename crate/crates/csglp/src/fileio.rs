//! Little-endian primitives shared by the binary artifact formats
//! (checkpoints, EMB1 embeddings, SLM1 soft-label matrices).

use ndarray::{ArrayD, IxDyn};
use std::io::{Read, Write};

use crate::error::{Error, Result};

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn write_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

pub fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(Error::data(format!(
            "{what}: bad magic {:?}, expected {:?}",
            b, magic
        )));
    }
    Ok(())
}

pub fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::data(format!("invalid utf-8 in file: {e}")))
}

pub(crate) fn parse_meta(text: &str) -> Result<std::collections::BTreeMap<String, String>> {
    let mut map = std::collections::BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::data(format!("bad checkpoint meta line: {line}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub(crate) fn meta_get<T: std::str::FromStr>(
    map: &std::collections::BTreeMap<String, String>,
    key: &str,
) -> Result<T> {
    map.get(key)
        .ok_or_else(|| Error::data(format!("checkpoint meta missing key {key}")))?
        .parse()
        .map_err(|_| Error::data(format!("checkpoint meta key {key} has invalid value")))
}

pub(crate) fn write_named_params<W: std::io::Write>(
    w: &mut W,
    params: &[(String, &ArrayD<f64>)],
) -> Result<()> {
    write_u32(w, params.len() as u32)?;
    for (name, p) in params {
        write_str(w, name)?;
        write_u32(w, p.ndim() as u32)?;
        for &d in p.shape() {
            write_u32(w, d as u32)?;
        }
        for &v in p.iter() {
            write_f64(w, v)?;
        }
    }
    Ok(())
}

pub(crate) fn read_named_params<R: std::io::Read>(r: &mut R) -> Result<Vec<(String, ArrayD<f64>)>> {
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_str(r)?;
        let ndim = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(read_f64(r)?);
        }
        out.push((name, ArrayD::from_shape_vec(IxDyn(&shape), data).unwrap()));
    }
    Ok(out)
}

pub(crate) fn assign_params(
    loaded: &[(String, ArrayD<f64>)],
    mut targets: Vec<(String, &mut ArrayD<f64>)>,
) -> Result<()> {
    let map: std::collections::BTreeMap<&str, &ArrayD<f64>> =
        loaded.iter().map(|(n, p)| (n.as_str(), p)).collect();
    for (name, target) in targets.iter_mut() {
        let src = map
            .get(name.as_str())
            .ok_or_else(|| Error::data(format!("checkpoint is missing parameter {name}")))?;
        if src.shape() != target.shape() {
            return Err(Error::data(format!(
                "checkpoint parameter {name} has shape {:?}, expected {:?}",
                src.shape(),
                target.shape()
            )));
        }
        target.assign(src);
    }
    Ok(())
}

