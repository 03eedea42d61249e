//! Images, masks, samples and the simulated oracle.
//!
//! Ground-truth masks travel with each [`Sample`] but are wrapped in a
//! [`GroundTruth`] whose contents are only reachable through the [`Oracle`]
//! (for labeling) and the evaluator in [`crate::metrics`].

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense sample identifier assigned at ingestion, in manifest order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleId(pub usize);

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Image with interleaved channels (`(y * width + x) * channels + c`), values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Domain(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Domain(format!(
                "images must have 1 or 3 channels, got {channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::Domain(format!(
                "expected {} values for a {height}x{width}x{channels} image, got {}",
                height * width * channels,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    /// Constant image.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[(y * self.width + x) * self.channels + c]
    }
}

/// Per-pixel foreground flags, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || bits.len() != height * width {
            return Err(Error::Domain(format!(
                "mask of {height}x{width} needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count_foreground(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Per-pixel foreground probabilities, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ProbabilityMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::Domain(format!(
                "probability map of {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("probability {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Hidden pixel-level annotation of a sample.
///
/// The mask can only be read by the oracle simulator and the evaluator; learners,
/// acquisition functions and neighbor search see images and class labels only.
///
/// ```compile_fail
/// # fn peek(s: &alseg_core::Sample) {
/// let _ = s.ground_truth().mask();
/// # }
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth(BinaryMask);

impl GroundTruth {
    pub(crate) fn mask(&self) -> &BinaryMask {
        &self.0
    }
}

/// Where a sample belongs in the dataset split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "train" => Some(Split::Train),
            "valid" => Some(Split::Valid),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub id: SampleId,
    pub image: ImageTensor,
    pub class_label: usize,
    pub split: Split,
    /// Image file the sample was loaded from, if any.
    pub source: Option<PathBuf>,
    gt_mask: GroundTruth,
}

impl Sample {
    pub fn new(
        id: SampleId,
        image: ImageTensor,
        class_label: usize,
        split: Split,
        gt_mask: BinaryMask,
    ) -> Result<Self> {
        if gt_mask.dims() != image.dims() {
            return Err(Error::DimensionMismatch {
                expected: image.dims(),
                actual: gt_mask.dims(),
            });
        }
        Ok(Self {
            id,
            image,
            class_label,
            split,
            source: None,
            gt_mask: GroundTruth(gt_mask),
        })
    }

    pub fn with_source(mut self, source: PathBuf) -> Self {
        self.source = Some(source);
        self
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.gt_mask
    }
}

/// View of a sample's annotation state, as recorded in a [`crate::PoolState`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Annotation<'a> {
    Unlabeled,
    OracleLabeled(&'a BinaryMask),
    PseudoLabeled(&'a BinaryMask),
}

/// A loaded dataset: samples indexed by id plus split membership.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    samples: Vec<Sample>,
}

impl Dataset {
    /// Builds a dataset; sample ids must equal their position.
    pub fn new(name: impl Into<String>, samples: Vec<Sample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.id.0 != i {
                return Err(Error::Domain(format!(
                    "sample at position {i} has id {}; ids must be dense and in order",
                    s.id
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            samples,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: SampleId) -> Option<&Sample> {
        self.samples.get(id.0)
    }

    pub fn sample(&self, id: SampleId) -> &Sample {
        &self.samples[id.0]
    }

    pub fn ids(&self, split: Split) -> Vec<SampleId> {
        self.samples
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.id)
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        self.samples
            .iter()
            .map(|s| s.class_label + 1)
            .max()
            .unwrap_or(0)
    }

    /// Moves the given ids into `split`; used after re-splitting train into train/valid.
    pub fn reassign_split(&mut self, ids: &[SampleId], split: Split) {
        for id in ids {
            self.samples[id.0].split = split;
        }
    }
}

/// Simulated perfect annotator: returns the hidden ground truth on request.
#[derive(Clone, Copy, Debug)]
pub struct Oracle<'a> {
    dataset: &'a Dataset,
}

impl<'a> Oracle<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        Self { dataset }
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    /// Pixel-level annotation for `id`.
    pub fn label(&self, id: SampleId) -> Result<BinaryMask> {
        self.dataset
            .get(id)
            .map(|s| s.gt_mask.mask().clone())
            .ok_or(Error::UnknownId(id))
    }
}
