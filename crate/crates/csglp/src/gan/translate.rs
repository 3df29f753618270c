//! Translate the labeled source domain into target camera styles.
//!
//! Pedestrian labels are kept; each record is assigned a uniformly drawn
//! target camera, the source camera index is dropped (only the assigned
//! target camera is retained) and the result lives in the target domain
//! with `Translated` provenance.

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::synth::stream_seed;
use crate::data::{
    encode_condition, sample_random_target_camera, Dataset, Domain, DomainConfig, ImageRecord,
    Provenance,
};
use crate::error::{Error, Result};
use crate::gan::{condition_matrix, GeneratorNet};

const INFER_CHUNK: usize = 32;

pub fn translate_dataset<G: GeneratorNet>(
    gen: &G,
    source: &Dataset,
    config: &DomainConfig,
    seed: u64,
) -> Result<Dataset> {
    source.validate()?;
    if source.provenance == Provenance::Translated {
        return Err(Error::data("refusing to translate an already-translated dataset"));
    }
    if source.records.iter().any(|r| r.domain != Domain::Source) {
        return Err(Error::data("translate_dataset expects source-domain records"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, 0x7A17]));
    let drawn: Vec<usize> = source
        .records
        .iter()
        .map(|_| sample_random_target_camera(config, &mut rng))
        .collect();

    let mut records = Vec::with_capacity(source.len());
    for (chunk_start, chunk) in source
        .records
        .chunks(INFER_CHUNK)
        .enumerate()
        .map(|(i, c)| (i * INFER_CHUNK, c))
    {
        let (_, h, w) = chunk[0].pixels.dim();
        let mut x = Array4::<f64>::zeros((chunk.len(), 3, h, w));
        let mut conds = Vec::with_capacity(chunk.len());
        for (i, r) in chunk.iter().enumerate() {
            x.index_axis_mut(ndarray::Axis(0), i).assign(&r.pixels);
            conds.push(encode_condition(drawn[chunk_start + i], Domain::Target, config)?);
        }
        let cond = condition_matrix(&conds, config)?;
        let y = gen.infer(&x, &cond);
        for (i, r) in chunk.iter().enumerate() {
            records.push(ImageRecord {
                pixels: y.index_axis(ndarray::Axis(0), i).to_owned(),
                person_id: r.person_id,
                raw_person_id: r.raw_person_id,
                camera_index: drawn[chunk_start + i],
                domain: Domain::Target,
            });
        }
    }

    Ok(Dataset {
        records,
        config: config.clone(),
        provenance: Provenance::Translated,
    })
}
