//! Dataset types, camera/domain metadata and condition-vector encoding.
//!
//! The condition vector fed to the generator (and predicted by the
//! discriminator's classifier head) is laid out `[c1, c2, mask]`:
//! `c1` spans the source cameras, `c2` the target cameras, and `mask` is a
//! one-hot domain selector with slot 0 = source. Exactly one camera block
//! is active, the block the mask selects; the other is all zeros.

pub mod loader;
pub mod synth;

use ndarray::Array3;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// The two domains of the adaptation problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub const COUNT: usize = 2;

    pub fn index(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Domain> {
        match i {
            0 => Ok(Domain::Source),
            1 => Ok(Domain::Target),
            _ => Err(Error::data(format!("domain index {i} out of range"))),
        }
    }
}

/// Camera and identity counts for the source/target pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainConfig {
    /// Camera counts `[C_s, C_t]`.
    pub cameras_per_domain: [usize; 2],
    /// Number of identity classes in the source domain.
    pub identity_count_source: usize,
}

impl DomainConfig {
    pub fn new(cameras_source: usize, cameras_target: usize, identities_source: usize) -> Self {
        DomainConfig {
            cameras_per_domain: [cameras_source, cameras_target],
            identity_count_source: identities_source,
        }
    }

    pub fn cameras(&self, domain: Domain) -> usize {
        self.cameras_per_domain[domain.index()]
    }

    /// Total camera label space across both domains (the `D_c` output size).
    pub fn total_cameras(&self) -> usize {
        self.cameras_per_domain[0] + self.cameras_per_domain[1]
    }

    /// Length of the `[c1, c2, mask]` condition vector.
    pub fn condition_dim(&self) -> usize {
        self.total_cameras() + Domain::COUNT
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras_per_domain.iter().any(|&c| c == 0) {
            return Err(Error::config("camera counts must be >= 1"));
        }
        if self.identity_count_source < 2 {
            return Err(Error::config(
                "identity_count_source must be >= 2 for a softmax classifier",
            ));
        }
        Ok(())
    }

    /// Index of `(camera, domain)` in the combined camera label space:
    /// source cameras first, then target cameras.
    pub fn combined_camera_index(&self, camera_index: usize, domain: Domain) -> Result<usize> {
        if camera_index >= self.cameras(domain) {
            return Err(Error::data(format!(
                "camera index {camera_index} out of range for domain {:?} with {} cameras",
                domain,
                self.cameras(domain)
            )));
        }
        Ok(match domain {
            Domain::Source => camera_index,
            Domain::Target => self.cameras_per_domain[0] + camera_index,
        })
    }
}

/// One image with its metadata.
#[derive(Debug, Clone)]
pub struct ImageRecord {
    /// (3, H, W) pixels in `[-1, 1]`.
    pub pixels: Array3<f64>,
    /// Dense identity index in `[0, M_s)`; absent for unlabeled target data.
    pub person_id: Option<usize>,
    /// Raw identity as it appeared in the filename, kept as metadata.
    pub raw_person_id: Option<u32>,
    /// 0-based camera index within the record's own domain.
    pub camera_index: usize,
    pub domain: Domain,
}

impl ImageRecord {
    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }
}

/// Where a dataset's pixels came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Synthetic,
    /// Source images pushed through the generator; these carry source
    /// person ids with target camera indices.
    Translated,
}

/// An ordered collection of records sharing one domain (except translated
/// sets, which live in the target domain with source labels).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    pub config: DomainConfig,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Drop identity labels (target-domain training data is unlabeled).
    pub fn strip_person_ids(mut self) -> Dataset {
        for r in &mut self.records {
            r.person_id = None;
            r.raw_person_id = None;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let Some(first) = self.records.first() else {
            return Ok(());
        };
        let (h, w) = (first.height(), first.width());
        for (i, r) in self.records.iter().enumerate() {
            if r.height() != h || r.width() != w {
                return Err(Error::data(format!(
                    "record {i} has resolution {}x{}, expected {}x{}",
                    r.height(),
                    r.width(),
                    h,
                    w
                )));
            }
            if r.camera_index >= self.config.cameras(r.domain) {
                return Err(Error::data(format!(
                    "record {i} camera index {} out of range",
                    r.camera_index
                )));
            }
            if self.provenance != Provenance::Translated && r.domain != first.domain {
                return Err(Error::data(format!(
                    "record {i} domain differs within a non-translated dataset"
                )));
            }
            if let Some(pid) = r.person_id {
                if pid >= self.config.identity_count_source && r.domain == Domain::Source {
                    return Err(Error::data(format!(
                        "record {i} person id {pid} out of range"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The `[c1, c2, mask]` conditioning code.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVector {
    pub values: Vec<f64>,
}

impl ConditionVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Build the condition vector selecting `camera_index` of `domain`.
pub fn encode_condition(
    camera_index: usize,
    domain: Domain,
    config: &DomainConfig,
) -> Result<ConditionVector> {
    let [cs, ct] = config.cameras_per_domain;
    if camera_index >= config.cameras(domain) {
        return Err(Error::data(format!(
            "camera index {camera_index} out of range for {:?} ({} cameras)",
            domain,
            config.cameras(domain)
        )));
    }
    let mut values = vec![0.0; config.condition_dim()];
    match domain {
        Domain::Source => values[camera_index] = 1.0,
        Domain::Target => values[cs + camera_index] = 1.0,
    }
    values[cs + ct + domain.index()] = 1.0;
    Ok(ConditionVector { values })
}

/// Inverse of [`encode_condition`]; validates every invariant of the layout.
pub fn decode_condition(
    vec: &ConditionVector,
    config: &DomainConfig,
) -> Result<(usize, Domain)> {
    let [cs, ct] = config.cameras_per_domain;
    let dim = config.condition_dim();
    if vec.values.len() != dim {
        return Err(Error::data(format!(
            "condition vector length {} does not match condition_dim {dim}",
            vec.values.len()
        )));
    }
    if vec.values.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::data("condition vector entries must be 0 or 1"));
    }
    let ones = vec.values.iter().filter(|&&v| v == 1.0).count();
    if ones != 2 {
        return Err(Error::data(format!(
            "condition vector must have exactly two unit entries, found {ones}"
        )));
    }
    let mask = &vec.values[cs + ct..];
    let domain = match (mask[0] == 1.0, mask[1] == 1.0) {
        (true, false) => Domain::Source,
        (false, true) => Domain::Target,
        _ => return Err(Error::data("condition mask is not one-hot")),
    };
    let (active, inactive) = match domain {
        Domain::Source => (&vec.values[..cs], &vec.values[cs..cs + ct]),
        Domain::Target => (&vec.values[cs..cs + ct], &vec.values[..cs]),
    };
    if inactive.iter().any(|&v| v != 0.0) {
        return Err(Error::data(
            "inactive camera block of condition vector must be zero",
        ));
    }
    let camera_index = active
        .iter()
        .position(|&v| v == 1.0)
        .ok_or_else(|| Error::data("active camera block has no unit entry"))?;
    Ok((camera_index, domain))
}

/// Uniform draw over the target domain's cameras.
pub fn sample_random_target_camera(config: &DomainConfig, rng: &mut ChaCha8Rng) -> usize {
    use rand::Rng;
    rng.random_range(0..config.cameras(Domain::Target))
}
