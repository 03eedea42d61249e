//! Dataset manifests, on-disk loading, stratified splits and the synthetic generator.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pnm;
use crate::seed::{derive_indexed, derive_seed};
use crate::types::{BinaryMask, Dataset, ImageTensor, Sample, SampleId, Split};

/// One manifest row. Paths are relative to the manifest's directory unless absolute.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub label: usize,
    pub split: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Reads a CSV manifest with header `image,mask,label,split`.
    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let headers = reader.headers()?.clone();
        let expected = ["image", "mask", "label", "split"];
        if headers.iter().map(str::trim).ne(expected) {
            return Err(Error::ingestion(
                path,
                format!("manifest header must be `image,mask,label,split`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
            ));
        }
        let entries = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestEntry>, _>>()
            .map_err(|e| Error::ingestion(path, e.to_string()))?;
        Ok(Self {
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            entries,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        for entry in &self.entries {
            writer.serialize(entry)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

/// Decodes every manifest entry, assigning ids in manifest order.
pub fn load_dataset(manifest: &DatasetManifest, name: &str) -> Result<Dataset> {
    let samples = manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let image_path = manifest.resolve(&entry.image);
            let mask_path = manifest.resolve(&entry.mask);
            let split = Split::parse(&entry.split).ok_or_else(|| {
                Error::ingestion(&image_path, format!("unknown split tag `{}`", entry.split))
            })?;
            let image = pnm::read_image(&image_path)?;
            let mask = pnm::read_mask(&mask_path)?;
            if mask.dims() != image.dims() {
                return Err(Error::ingestion(
                    &mask_path,
                    format!(
                        "mask is {}x{} but image {} is {}x{}",
                        mask.height(),
                        mask.width(),
                        image_path.display(),
                        image.height(),
                        image.width()
                    ),
                ));
            }
            Ok(Sample::new(SampleId(i), image, entry.label, split, mask)?.with_source(image_path))
        })
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset::new(name, samples)?;
    validate_coverage(&dataset)?;
    Ok(dataset)
}

/// Every class must appear in the train and test splits, and in valid when
/// a valid split exists at all.
fn validate_coverage(dataset: &Dataset) -> Result<()> {
    let classes = dataset.num_classes();
    let has_valid = dataset.samples().iter().any(|s| s.split == Split::Valid);
    for split in [Split::Train, Split::Valid, Split::Test] {
        if split == Split::Valid && !has_valid {
            continue;
        }
        for c in 0..classes {
            if !dataset
                .samples()
                .iter()
                .any(|s| s.split == split && s.class_label == c)
            {
                return Err(Error::ingestion(
                    &dataset.name,
                    format!("class {c} has no samples in the {} split", split.as_str()),
                ));
            }
        }
    }
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::read(path)?;
    let name = manifest
        .root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    load_dataset(&manifest, &name)
}

/// Stratified split of training ids: per class, `floor(fraction·n)` ids stay in
/// training (at least one, at most `n − 1`) and the rest go to validation.
pub fn split_train_valid(
    ids: &[(SampleId, usize)],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<SampleId>, Vec<SampleId>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Split(format!("fraction must lie in (0, 1), got {fraction}")));
    }
    let mut by_class: BTreeMap<usize, Vec<SampleId>> = BTreeMap::new();
    for &(id, c) in ids {
        by_class.entry(c).or_default().push(id);
    }
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for (c, mut members) in by_class {
        if members.len() < 2 {
            return Err(Error::Split(format!(
                "class {c} has {} sample(s); at least 2 are needed",
                members.len()
            )));
        }
        members.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(seed, "split", &[c as u64]));
        members.shuffle(&mut rng);
        let n = members.len();
        let keep = ((fraction * n as f64).floor() as usize).clamp(1, n - 1);
        train.extend_from_slice(&members[..keep]);
        valid.extend_from_slice(&members[keep..]);
    }
    train.sort();
    valid.sort();
    Ok((train, valid))
}

/// Nearest-neighbor resize of an image.
pub fn resize_nearest(image: &ImageTensor, height: usize, width: usize) -> Result<ImageTensor> {
    let ch = image.channels();
    let mut values = Vec::with_capacity(height * width * ch);
    for y in 0..height {
        let sy = (y * image.height()) / height;
        for x in 0..width {
            let sx = (x * image.width()) / width;
            for c in 0..ch {
                values.push(image.get(sy, sx, c));
            }
        }
    }
    ImageTensor::new(height, width, ch, values)
}

pub fn resize_mask_nearest(mask: &BinaryMask, height: usize, width: usize) -> Result<BinaryMask> {
    let mut bits = Vec::with_capacity(height * width);
    for y in 0..height {
        let sy = (y * mask.height()) / height;
        for x in 0..width {
            bits.push(mask.get(sy, (x * mask.width()) / width));
        }
    }
    BinaryMask::new(height, width, bits)
}

/// Writes images (PPM/PGM), masks (PGM 0/255), `manifest.csv` and one
/// manifest per split.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<DatasetManifest> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    for d in [dir, images.as_path(), masks.as_path()] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let entries = dataset
        .samples()
        .par_iter()
        .map(|s| {
            let ext = if s.image.channels() == 1 { "pgm" } else { "ppm" };
            let image_rel = PathBuf::from("images").join(format!("{:05}.{ext}", s.id.0));
            let mask_rel = PathBuf::from("masks").join(format!("{:05}.pgm", s.id.0));
            pnm::write_image(&dir.join(&image_rel), &s.image)?;
            pnm::write_mask(&dir.join(&mask_rel), s.ground_truth().mask())?;
            Ok(ManifestEntry {
                image: image_rel,
                mask: mask_rel,
                label: s.class_label,
                split: s.split.as_str().into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        entries,
    };
    manifest.write(&dir.join("manifest.csv"))?;
    for split in [Split::Train, Split::Valid, Split::Test] {
        let part = DatasetManifest {
            root: dir.to_path_buf(),
            entries: manifest
                .entries
                .iter()
                .filter(|e| e.split == split.as_str())
                .cloned()
                .collect(),
        };
        part.write(&dir.join(format!("{}.csv", split.as_str())))?;
    }
    Ok(manifest)
}

/// Parameters of the class-conditional synthetic generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub valid_per_class: usize,
    pub test_per_class: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub modes_per_class: usize,
    pub blob_min: usize,
    pub blob_max: usize,
    /// Per-pixel spread of the color distributions of a mode.
    pub texture_std: f64,
    pub noise_std: f64,
    /// Gap between the background and foreground per-channel color ranges,
    /// which are centered on 0.5 inside [0.1, 0.9].
    pub min_contrast: f64,
    pub fg_min: f64,
    pub fg_max: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 2,
            train_per_class: 50,
            valid_per_class: 10,
            test_per_class: 25,
            height: 32,
            width: 32,
            channels: 3,
            modes_per_class: 3,
            blob_min: 1,
            blob_max: 3,
            texture_std: 0.12,
            noise_std: 0.05,
            min_contrast: 0.05,
            fg_min: 0.05,
            fg_max: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return fail(format!("classes must be >= 2, got {}", self.classes));
        }
        if self.height < 16 || self.width < 16 {
            return fail(format!(
                "image size must be at least 16x16, got {}x{}",
                self.height, self.width
            ));
        }
        if self.channels != 1 && self.channels != 3 {
            return fail(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if self.modes_per_class == 0 {
            return fail("modes_per_class must be >= 1".into());
        }
        if self.blob_min == 0 || self.blob_min > self.blob_max {
            return fail(format!(
                "blob count range must satisfy 1 <= min <= max, got ({}, {})",
                self.blob_min, self.blob_max
            ));
        }
        if self.noise_std < 0.0 || self.texture_std < 0.0 {
            return fail("noise_std and texture_std must be >= 0".into());
        }
        if !(0.0 <= self.fg_min && self.fg_min < self.fg_max && self.fg_max <= 1.0) {
            return fail(format!(
                "foreground band must satisfy 0 <= min < max <= 1, got [{}, {}]",
                self.fg_min, self.fg_max
            ));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return fail("train_per_class and test_per_class must be >= 1".into());
        }
        if !(0.0..0.8).contains(&self.min_contrast) {
            return fail(format!("min_contrast must lie in [0, 0.8), got {}", self.min_contrast));
        }
        Ok(())
    }

    /// Flat `key = value` echo, one line per field.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let fields: [(&str, String); 16] = [
            ("classes", self.classes.to_string()),
            ("train_per_class", self.train_per_class.to_string()),
            ("valid_per_class", self.valid_per_class.to_string()),
            ("test_per_class", self.test_per_class.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("channels", self.channels.to_string()),
            ("modes_per_class", self.modes_per_class.to_string()),
            ("blob_min", self.blob_min.to_string()),
            ("blob_max", self.blob_max.to_string()),
            ("texture_std", self.texture_std.to_string()),
            ("noise_std", self.noise_std.to_string()),
            ("min_contrast", self.min_contrast.to_string()),
            ("fg_min", self.fg_min.to_string()),
            ("fg_max", self.fg_max.to_string()),
            ("seed", self.seed.to_string()),
        ];
        for (k, v) in fields {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }
}

/// Background and foreground base colors of one class sub-mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorMode {
    pub background: Vec<f64>,
    pub foreground: Vec<f64>,
}

fn palette(cfg: &SyntheticConfig) -> Vec<Vec<ColorMode>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "palette"));
    let ch = cfg.channels;
    let half = cfg.min_contrast / 2.0;
    let (bg_range, fg_range) = ((0.1, 0.5 - half), (0.5 + half, 0.9));
    let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| -> Vec<f64> {
        (0..ch).map(|_| rng.gen_range(lo..=hi)).collect()
    };
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let spacing = 0.5 * (0.4 - half);
    let mut used: Vec<Vec<f64>> = Vec::new();
    (0..cfg.classes)
        .map(|_| {
            (0..cfg.modes_per_class)
                .map(|_| {
                    // Keep backgrounds of different modes apart so modes are JSD-far.
                    let mut background = draw(&mut rng, bg_range);
                    for _ in 0..200 {
                        if used.iter().all(|u| dist(u, &background) >= spacing) {
                            break;
                        }
                        background = draw(&mut rng, bg_range);
                    }
                    used.push(background.clone());
                    ColorMode {
                        background,
                        foreground: draw(&mut rng, fg_range),
                    }
                })
                .collect()
        })
        .collect()
}

fn blob_mask(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> BinaryMask {
    let (h, w) = (cfg.height, cfg.width);
    let short = h.min(w) as f64;
    let (rmin, rmax) = ((0.15 * short).max(2.0), (0.3 * short).max(3.0));
    let mut best = BinaryMask::empty(h, w);
    for _ in 0..200 {
        let mut mask = BinaryMask::empty(h, w);
        let blobs = rng.gen_range(cfg.blob_min..=cfg.blob_max);
        for _ in 0..blobs {
            let ry = rng.gen_range(rmin..=rmax);
            let rx = rng.gen_range(rmin..=rmax);
            // integer centers keep each digitized ellipse 4-connected
            let cy = rng.gen_range(0..h) as f64;
            let cx = rng.gen_range(0..w) as f64;
            for y in 0..h {
                for x in 0..w {
                    let dy = (y as f64 - cy) / ry;
                    let dx = (x as f64 - cx) / rx;
                    if dx * dx + dy * dy <= 1.0 {
                        mask.set(y, x, true);
                    }
                }
            }
        }
        let frac = mask.count_foreground() as f64 / (h * w) as f64;
        if (cfg.fg_min..=cfg.fg_max).contains(&frac) {
            return mask;
        }
        best = mask;
    }
    best
}

fn render(cfg: &SyntheticConfig, mode: &ColorMode, mask: &BinaryMask, rng: &mut ChaCha8Rng) -> ImageTensor {
    let texture = Normal::new(0.0, cfg.texture_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut values = Vec::with_capacity(cfg.height * cfg.width * cfg.channels);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let base = if mask.get(y, x) {
                &mode.foreground
            } else {
                &mode.background
            };
            for &b in base {
                let mut v = b;
                if cfg.texture_std > 0.0 {
                    v += texture.sample(rng);
                }
                if cfg.noise_std > 0.0 {
                    v += noise.sample(rng);
                }
                // quantize so the dataset survives an 8-bit round trip unchanged
                values.push(f64::from(pnm::quantize(v)) / 255.0);
            }
        }
    }
    ImageTensor::new(cfg.height, cfg.width, cfg.channels, values).expect("quantized values lie in [0, 1]")
}

/// Class-conditional images of elliptical foreground blobs on a mode-colored
/// background. Ids are assigned split by split (train, valid, test), class by class.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let modes = palette(cfg);
    let mut plan = Vec::new();
    for (split, per_class) in [
        (Split::Train, cfg.train_per_class),
        (Split::Valid, cfg.valid_per_class),
        (Split::Test, cfg.test_per_class),
    ] {
        for class in 0..cfg.classes {
            for _ in 0..per_class {
                plan.push((split, class));
            }
        }
    }
    let samples = plan
        .par_iter()
        .enumerate()
        .map(|(i, &(split, class))| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(cfg.seed, "sample", &[i as u64]));
            let mode = &modes[class][rng.gen_range(0..cfg.modes_per_class)];
            let mask = blob_mask(cfg, &mut rng);
            let image = render(cfg, mode, &mask, &mut rng);
            Sample::new(SampleId(i), image, class, split, mask)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new("synthetic", samples)
}

/// Generates a synthetic dataset and writes it, with a `config.txt` echo, under `dir`.
pub fn write_synthetic(cfg: &SyntheticConfig, dir: &Path) -> Result<Dataset> {
    let dataset = generate_synthetic(cfg)?;
    write_dataset(&dataset, dir)?;
    let path = dir.join("config.txt");
    fs::write(&path, cfg.to_kv()).map_err(|e| Error::io(&path, e))?;
    Ok(dataset)
}
