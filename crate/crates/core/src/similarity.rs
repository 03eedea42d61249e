//! Color-histogram descriptors and the Jensen–Shannon divergence between them.
//!
//! Each color plane is summarized by a normalized histogram over `bins`
//! equal-width bins on `[0, 1]`. Image proximity is the sum over planes of the
//! per-plane JSD with base-2 logarithms, so every plane contributes a value in
//! `[0, 1]` and an RGB pair lies in `[0, 3]`.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{Dataset, ImageTensor, SampleId, Split};

pub const DEFAULT_BINS: usize = 32;

/// Per-plane normalized histograms of an image.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    bins: usize,
    planes: Vec<Vec<f64>>,
}

impl Descriptor {
    /// Builds a descriptor from explicit planes, checking normalization.
    pub fn from_planes(planes: Vec<Vec<f64>>) -> Result<Self> {
        let bins = planes.first().map_or(0, Vec::len);
        if bins < 2 {
            return Err(Error::Domain("descriptor planes need at least 2 bins".into()));
        }
        for plane in &planes {
            if plane.len() != bins {
                return Err(Error::Domain("descriptor planes differ in length".into()));
            }
            if plane.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::Domain("histogram entries must be non-negative".into()));
            }
            let total: f64 = plane.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("histogram sums to {total}, not 1")));
            }
        }
        Ok(Self { bins, planes })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn planes(&self) -> &[Vec<f64>] {
        &self.planes
    }
}

#[inline]
fn bin_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64) as usize).min(bins - 1)
}

/// Per-plane histogram over equal-width bins on `[0, 1]`, normalized by pixel count.
/// A value of exactly 1.0 lands in the last bin.
pub fn color_histogram(image: &ImageTensor, bins: usize) -> Descriptor {
    assert!(bins >= 2, "color_histogram needs at least 2 bins");
    let channels = image.channels();
    let mut counts = vec![vec![0u64; bins]; channels];
    for px in image.values().chunks_exact(channels) {
        for (c, &v) in px.iter().enumerate() {
            counts[c][bin_of(v, bins)] += 1;
        }
    }
    let n = image.pixel_count() as f64;
    let planes = counts
        .into_iter()
        .map(|plane| plane.into_iter().map(|k| k as f64 / n).collect())
        .collect();
    Descriptor { bins, planes }
}

#[inline]
fn kl_term(p: f64, m: f64) -> f64 {
    if p > 0.0 {
        p * (p / m).log2()
    } else {
        0.0
    }
}

/// JSD of a single pair of normalized histograms, base 2, clamped to `[0, 1]`.
pub fn plane_jsd(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        // a+b is commutative, so swapping p and q yields bit-identical terms.
        acc += 0.5 * (kl_term(a, m) + kl_term(b, m));
    }
    acc.clamp(0.0, 1.0)
}

/// Sum over planes of the per-plane Jensen–Shannon divergence.
pub fn jsd(p: &Descriptor, q: &Descriptor) -> Result<f64> {
    if p.bins != q.bins || p.planes.len() != q.planes.len() {
        return Err(Error::Domain(format!(
            "descriptor shapes differ: {}x{} vs {}x{}",
            p.planes.len(),
            p.bins,
            q.planes.len(),
            q.bins
        )));
    }
    Ok(p.planes
        .iter()
        .zip(&q.planes)
        .map(|(a, b)| plane_jsd(a, b))
        .sum())
}

/// Descriptors of every training sample, keyed by id.
pub fn build_descriptor_index(dataset: &Dataset, bins: usize) -> BTreeMap<SampleId, Descriptor> {
    dataset
        .samples()
        .par_iter()
        .filter(|s| s.split == Split::Train)
        .map(|s| (s.id, color_histogram(&s.image, bins)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}
