//! Directory ingestion and persistence for re-ID image datasets.
//!
//! Filenames follow the de facto Market-style grammar
//! `^(?P<pid>\d+)_c(?P<cam>\d+).*\.(jpg|png)$` with 1-based cameras in
//! filenames and 0-based cameras internally. Loading is order-stable
//! (lexicographic by filename). A saved dataset directory carries a
//! `manifest.tsv` mapping each file to `(person_id, camera_index,
//! domain_index)`.

use std::path::Path;

use image::imageops::FilterType;
use ndarray::Array3;
use regex::Regex;

use crate::data::{Dataset, Domain, DomainConfig, ImageRecord, Provenance};
use crate::error::{Error, Result};

/// Which evaluation role a directory is loaded for.
///
/// Identity handling differs per split: `Train` densely remaps person ids
/// (classifier heads need dense label spaces) and drops them entirely for
/// the target domain, whose training data is unlabeled by problem
/// definition. `Query`/`Gallery` keep raw ids as-is so that ids agree
/// across separately loaded directories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Query,
    Gallery,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Fail on the first unparseable file instead of skipping it.
    pub strict: bool,
    /// (height, width) every image is resized to.
    pub resize_to: (usize, usize),
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            strict: false,
            resize_to: (256, 128),
        }
    }
}

#[derive(Debug)]
pub struct LoadReport {
    pub dataset: Dataset,
    /// Human-readable reasons for each skipped file.
    pub skipped: Vec<String>,
}

fn filename_regex() -> Regex {
    Regex::new(r"^(?P<pid>\d+)_c(?P<cam>\d+).*\.(jpg|png)$").unwrap()
}

fn decode_image(path: &Path, resize_to: (usize, usize)) -> Result<Array3<f64>> {
    let img = image::open(path)?;
    let (h, w) = resize_to;
    let img = image::imageops::resize(&img.to_rgb8(), w as u32, h as u32, FilterType::Triangle);
    let mut out = Array3::<f64>::zeros((3, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = px.0[c] as f64 / 255.0 * 2.0 - 1.0;
        }
    }
    Ok(out)
}

/// Load a Market-style image directory into a [`Dataset`].
pub fn load_reid_directory(
    path: &Path,
    split: Split,
    domain: Domain,
    config: &DomainConfig,
    opts: &LoadOptions,
) -> Result<LoadReport> {
    let re = filename_regex();
    let mut names: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(path)
        .map_err(|e| Error::data(format!("cannot read directory {}: {e}", path.display())))?
    {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            if let Some(name) = entry.file_name().to_str() {
                if name == "manifest.tsv" {
                    continue;
                }
                names.push(name.to_string());
            }
        }
    }
    if names.is_empty() {
        return Err(Error::data(format!(
            "directory {} contains no files",
            path.display()
        )));
    }
    names.sort();

    let mut parsed: Vec<(String, u32, usize)> = Vec::new();
    let mut skipped = Vec::new();
    for name in &names {
        let Some(caps) = re.captures(name) else {
            let msg = format!("{name}: does not match the filename grammar");
            if opts.strict {
                return Err(Error::data(msg));
            }
            skipped.push(msg);
            continue;
        };
        let pid: u32 = match caps["pid"].parse() {
            Ok(v) => v,
            Err(_) => {
                let msg = format!("{name}: person id out of range");
                if opts.strict {
                    return Err(Error::data(msg));
                }
                skipped.push(msg);
                continue;
            }
        };
        let cam1: usize = match caps["cam"].parse() {
            Ok(v) => v,
            Err(_) => {
                let msg = format!("{name}: camera id out of range");
                if opts.strict {
                    return Err(Error::data(msg));
                }
                skipped.push(msg);
                continue;
            }
        };
        if cam1 == 0 || cam1 > config.cameras(domain) {
            let msg = format!(
                "{name}: camera {cam1} outside 1..={}",
                config.cameras(domain)
            );
            if opts.strict {
                return Err(Error::data(msg));
            }
            skipped.push(msg);
            continue;
        }
        parsed.push((name.clone(), pid, cam1 - 1));
    }
    if parsed.is_empty() {
        return Err(Error::data(format!(
            "directory {} has no files matching the filename grammar",
            path.display()
        )));
    }

    // dense identity remap for training data
    let mut unique: Vec<u32> = parsed.iter().map(|p| p.1).collect();
    unique.sort_unstable();
    unique.dedup();
    let dense = |raw: u32| unique.binary_search(&raw).unwrap();

    let mut records = Vec::with_capacity(parsed.len());
    for (name, raw_pid, cam) in &parsed {
        let pixels = decode_image(&path.join(name), opts.resize_to)?;
        let (person_id, raw) = match (split, domain) {
            (Split::Train, Domain::Target) => (None, None),
            (Split::Train, Domain::Source) => (Some(dense(*raw_pid)), Some(*raw_pid)),
            (Split::Query | Split::Gallery, _) => (Some(*raw_pid as usize), Some(*raw_pid)),
        };
        records.push(ImageRecord {
            pixels,
            person_id,
            raw_person_id: raw,
            camera_index: *cam,
            domain,
        });
    }

    // the configured identity count is a floor; the data can grow it
    let mut config = config.clone();
    config.identity_count_source = config
        .identity_count_source
        .max(unique.len())
        .max(2);

    let dataset = Dataset {
        records,
        config,
        provenance: Provenance::Real,
    };
    Ok(LoadReport { dataset, skipped })
}

/// Load a directory produced by saving a translated dataset: target-domain
/// records carrying densified source identities.
pub fn load_translated_directory(
    path: &Path,
    config: &DomainConfig,
    opts: &LoadOptions,
) -> Result<LoadReport> {
    let report = load_reid_directory(path, Split::Gallery, Domain::Target, config, opts)?;
    let mut dataset = report.dataset;
    // densify the raw ids so they form a classifier label space
    let mut unique: Vec<u32> = dataset
        .records
        .iter()
        .filter_map(|r| r.raw_person_id)
        .collect();
    unique.sort_unstable();
    unique.dedup();
    for r in &mut dataset.records {
        let raw = r.raw_person_id.expect("gallery split keeps ids");
        r.person_id = Some(unique.binary_search(&raw).unwrap());
    }
    dataset.config.identity_count_source =
        dataset.config.identity_count_source.max(unique.len()).max(2);
    dataset.provenance = Provenance::Translated;
    Ok(LoadReport {
        dataset,
        skipped: report.skipped,
    })
}

fn to_u8(v: f64) -> u8 {
    (((v + 1.0) / 2.0 * 255.0).round()).clamp(0.0, 255.0) as u8
}

/// Persist a dataset as a PNG directory plus `manifest.tsv`.
///
/// Every record needs an identity (synthetic and translated datasets always
/// carry one); filenames use the raw id when present so a reload
/// round-trips the metadata.
pub fn save_dataset_directory(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    let mut manifest = String::from("# file\tperson_id\tcamera_index\tdomain_index\n");
    for (i, r) in ds.records.iter().enumerate() {
        let pid = match (r.raw_person_id, r.person_id) {
            (Some(raw), _) => raw,
            (None, Some(dense)) => dense as u32,
            (None, None) => {
                return Err(Error::data(format!(
                    "record {i} has no identity; unlabeled datasets cannot be saved under the filename grammar"
                )))
            }
        };
        let name = format!("{:04}_c{}_{:06}.png", pid, r.camera_index + 1, i);
        let (_, h, w) = r.pixels.dim();
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                img.put_pixel(
                    x as u32,
                    y as u32,
                    image::Rgb([
                        to_u8(r.pixels[[0, y, x]]),
                        to_u8(r.pixels[[1, y, x]]),
                        to_u8(r.pixels[[2, y, x]]),
                    ]),
                );
            }
        }
        img.save(path.join(&name))?;
        manifest.push_str(&format!(
            "{name}\t{}\t{}\t{}\n",
            r.person_id.map(|p| p as i64).unwrap_or(-1),
            r.camera_index,
            r.domain.index()
        ));
    }
    std::fs::write(path.join("manifest.tsv"), manifest)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic_domain, SyntheticSpec};

    fn write_px(dir: &Path, name: &str) {
        let img = image::RgbImage::from_pixel(4, 8, image::Rgb([128, 64, 32]));
        img.save(dir.join(name)).unwrap();
    }

    #[test]
    fn parses_market_style_names() {
        let dir = tempfile::tempdir().unwrap();
        write_px(dir.path(), "0002_c3_000451.jpg");
        write_px(dir.path(), "0002_c1_000452.jpg");
        write_px(dir.path(), "0010_c2_000001.png");
        std::fs::write(dir.path().join("junk.txt"), "not an image").unwrap();
        let cfg = DomainConfig::new(6, 8, 10);
        let opts = LoadOptions {
            strict: false,
            resize_to: (8, 4),
        };
        let report =
            load_reid_directory(dir.path(), Split::Train, Domain::Source, &cfg, &opts).unwrap();
        assert_eq!(report.dataset.len(), 3);
        assert_eq!(report.skipped.len(), 1);
        // lexicographic order, dense remap: raw 2 -> 0, raw 10 -> 1
        let r0 = &report.dataset.records[0];
        assert_eq!(r0.person_id, Some(0));
        assert_eq!(r0.raw_person_id, Some(2));
        assert_eq!(r0.camera_index, 0); // 0002_c1 sorts first
        let r1 = &report.dataset.records[1];
        assert_eq!(r1.camera_index, 2);
        let r2 = &report.dataset.records[2];
        assert_eq!(r2.person_id, Some(1));
        assert_eq!(r2.raw_person_id, Some(10));
    }

    #[test]
    fn strict_mode_errors_on_bad_name() {
        let dir = tempfile::tempdir().unwrap();
        write_px(dir.path(), "0002_c1_000452.jpg");
        write_px(dir.path(), "oops.png");
        let cfg = DomainConfig::new(6, 8, 10);
        let opts = LoadOptions {
            strict: true,
            resize_to: (8, 4),
        };
        assert!(load_reid_directory(dir.path(), Split::Train, Domain::Source, &cfg, &opts).is_err());
    }

    #[test]
    fn unparseable_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write_px(dir.path(), "nothing_matches.png");
        let cfg = DomainConfig::new(6, 8, 10);
        let opts = LoadOptions {
            strict: false,
            resize_to: (8, 4),
        };
        assert!(load_reid_directory(dir.path(), Split::Train, Domain::Source, &cfg, &opts).is_err());
        let empty = tempfile::tempdir().unwrap();
        assert!(
            load_reid_directory(empty.path(), Split::Train, Domain::Source, &cfg, &opts).is_err()
        );
    }

    #[test]
    fn synthetic_fixture_counts() {
        // 12 files across 3 ids / 2 cameras
        let dir = tempfile::tempdir().unwrap();
        let mut n = 0;
        for pid in [3u32, 7, 9] {
            for cam in [1usize, 2] {
                for k in 0..2 {
                    write_px(dir.path(), &format!("{pid:04}_c{cam}_{n:06}_{k}.jpg"));
                    n += 1;
                }
            }
        }
        let cfg = DomainConfig::new(2, 2, 3);
        let opts = LoadOptions {
            strict: true,
            resize_to: (8, 4),
        };
        let report =
            load_reid_directory(dir.path(), Split::Train, Domain::Source, &cfg, &opts).unwrap();
        assert_eq!(report.dataset.len(), 12);
        let ids: std::collections::HashSet<_> = report
            .dataset
            .records
            .iter()
            .map(|r| r.person_id.unwrap())
            .collect();
        assert_eq!(ids, [0usize, 1, 2].into_iter().collect());
    }

    #[test]
    fn target_train_is_unlabeled() {
        let dir = tempfile::tempdir().unwrap();
        write_px(dir.path(), "0002_c1_000452.jpg");
        let cfg = DomainConfig::new(6, 8, 10);
        let opts = LoadOptions {
            strict: true,
            resize_to: (8, 4),
        };
        let report =
            load_reid_directory(dir.path(), Split::Train, Domain::Target, &cfg, &opts).unwrap();
        assert_eq!(report.dataset.records[0].person_id, None);
        let report =
            load_reid_directory(dir.path(), Split::Query, Domain::Target, &cfg, &opts).unwrap();
        assert_eq!(report.dataset.records[0].person_id, Some(2));
    }

    #[test]
    fn save_load_roundtrip_preserves_metadata_and_order() {
        let cfg = DomainConfig::new(3, 3, 6);
        let mut spec = SyntheticSpec::default_for(Domain::Source, 3);
        spec.identities = 6;
        spec.samples_per_identity = 2;
        spec.image_h = 16;
        spec.image_w = 8;
        let ds = generate_synthetic_domain(&spec, Domain::Source, &cfg, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset_directory(&ds, dir.path()).unwrap();

        let opts = LoadOptions {
            strict: true,
            resize_to: (16, 8),
        };
        let loaded =
            load_reid_directory(dir.path(), Split::Train, Domain::Source, &cfg, &opts).unwrap();
        assert_eq!(loaded.dataset.len(), ds.len());
        // same multiset of (id, cam); order is lexicographic by filename
        let mut a: Vec<_> = ds
            .records
            .iter()
            .map(|r| (r.person_id, r.camera_index))
            .collect();
        let mut b: Vec<_> = loaded
            .dataset
            .records
            .iter()
            .map(|r| (r.person_id, r.camera_index))
            .collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        // pixel quantization error bounded by one 8-bit step
        let max_err = ds.records[0]
            .pixels
            .iter()
            .zip(loaded.dataset.records.iter().find(|r| {
                r.person_id == ds.records[0].person_id
                    && r.camera_index == ds.records[0].camera_index
            }).unwrap().pixels.iter())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(max_err <= 2.0 / 255.0 + 1e-9, "max quantization error {max_err}");
    }
}
