//! Segmentation learners.
//!
//! [`Learner`] and [`Segmenter`] are the extension points the session runner
//! depends on. [`LogisticLearner`] is the reference implementation: a per-pixel
//! logistic model over hand-built features, trained by mini-batch SGD on
//!
//! ```text
//! J(w) = Σ_{x∈L} CE(f(x), m) + λ Σ_{x∈P} CE(f(x), m̂) + l2 ‖w‖²
//! ```
//!
//! where `CE` is the per-pixel binary cross-entropy averaged over the image and
//! the bias is excluded from the L2 penalty.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::types::{BinaryMask, ImageTensor, ProbabilityMap};

pub const CHECKPOINT_MAGIC: &str = "ALSEG-MODEL-1";
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// An image paired with the mask it should be trained towards.
#[derive(Clone, Copy, Debug)]
pub struct TrainingExample<'a> {
    pub image: &'a ImageTensor,
    pub mask: &'a BinaryMask,
}

/// A trained segmentation model.
pub trait Segmenter: Send + Sync {
    fn predict(&self, image: &ImageTensor) -> ProbabilityMap;

    /// One stochastic (dropout) forward pass. Models without a stochastic mode
    /// keep the default, which reports a capability error.
    fn predict_stochastic(&self, _image: &ImageTensor, _rate: f64, _seed: u64) -> Result<ProbabilityMap> {
        Err(Error::Capability(
            "this model has no stochastic prediction mode".into(),
        ))
    }
}

/// Produces models from labeled and pseudo-labeled examples.
pub trait Learner: Sync {
    type Model: Segmenter + Clone;

    /// The initial parameters θ⁰, reused by every round of a session.
    fn initial_model(&self, channels: usize, seed: u64) -> Self::Model;

    /// Re-trains from `init` on `L ∪ P`, weighting the pseudo term by the learner's λ.
    fn train(
        &self,
        init: &Self::Model,
        labeled: &[TrainingExample<'_>],
        pseudo: &[TrainingExample<'_>],
    ) -> Result<Self::Model>;
}

/// Pixel features fed to the reference learner.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FeatureSet {
    /// Channel intensities, normalized `(x/W, y/H)` coordinates and 3×3 local means.
    #[default]
    IntensityCoordsLocalMean,
}

impl FeatureSet {
    pub fn dim(self, channels: usize) -> usize {
        match self {
            FeatureSet::IntensityCoordsLocalMean => 2 * channels + 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::IntensityCoordsLocalMean => "intensity_coords_localmean",
        }
    }
}

/// Row-major per-pixel features of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelFeatures {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl PixelFeatures {
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per pixel: `[c_0..c_C, x/W, y/H, mean3x3(c_0)..mean3x3(c_C)]`, edge-replicated.
pub fn extract_features(image: &ImageTensor) -> PixelFeatures {
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let dim = FeatureSet::IntensityCoordsLocalMean.dim(ch);
    let mut values = Vec::with_capacity(h * w * dim);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                values.push(image.get(y, x, c));
            }
            values.push(x as f64 / w as f64);
            values.push(y as f64 / h as f64);
            for c in 0..ch {
                let mut acc = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        acc += image.get(yy, xx, c);
                    }
                }
                values.push(acc / 9.0);
            }
        }
    }
    PixelFeatures { dim, values }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_pixels: usize,
    pub init_seed: u64,
    pub feature_set: FeatureSet,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            epochs: 2,
            learning_rate: 0.5,
            l2: 1e-4,
            batch_pixels: 256,
            init_seed: 0,
            feature_set: FeatureSet::default(),
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!("l2 must be >= 0, got {}", self.l2)));
        }
        if self.batch_pixels == 0 {
            return Err(Error::Config("batch_pixels must be >= 1".into()));
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn dot(w: &[f64], x: &[f64]) -> f64 {
    // the last weight is the bias
    let (bias, rest) = w.split_last().expect("weights include a bias");
    rest.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias
}

/// Per-pixel logistic segmenter. `weights` holds one entry per feature
/// followed by the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmenterModel {
    pub weights: Vec<f64>,
    pub channels: usize,
    pub feature_set: FeatureSet,
    init_snapshot: Arc<Vec<f64>>,
}

impl SegmenterModel {
    pub fn from_weights(channels: usize, feature_set: FeatureSet, weights: Vec<f64>) -> Result<Self> {
        let expected = feature_set.dim(channels) + 1;
        if weights.len() != expected {
            return Err(Error::Domain(format!(
                "expected {expected} weights for {channels} channels, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Domain("model weights must be finite".into()));
        }
        Ok(Self {
            init_snapshot: Arc::new(weights.clone()),
            weights,
            channels,
            feature_set,
        })
    }

    /// θ⁰, shared by every model trained from this one.
    pub fn init_snapshot(&self) -> &[f64] {
        &self.init_snapshot
    }

    fn check_image(&self, image: &ImageTensor) {
        assert_eq!(
            image.channels(),
            self.channels,
            "model expects {}-channel images",
            self.channels
        );
    }

    pub fn predict_features(&self, features: &PixelFeatures, h: usize, w: usize) -> ProbabilityMap {
        let values = features
            .values
            .chunks_exact(features.dim)
            .map(|x| sigmoid(dot(&self.weights, x)))
            .collect();
        ProbabilityMap::new(h, w, values).expect("sigmoid output lies in [0, 1]")
    }

    pub fn save(&self, path: &Path, cfg: &LearnerConfig) -> Result<()> {
        fs::write(path, self.to_checkpoint(cfg)).map_err(|e| Error::io(path, e))
    }

    /// Text checkpoint: magic line, `key = value` config echo, then one weight per line.
    pub fn to_checkpoint(&self, cfg: &LearnerConfig) -> String {
        let mut out = String::new();
        writeln!(out, "{CHECKPOINT_MAGIC}").unwrap();
        writeln!(out, "channels = {}", self.channels).unwrap();
        writeln!(out, "feature_set = {}", self.feature_set.name()).unwrap();
        writeln!(out, "lambda = {}", cfg.lambda).unwrap();
        writeln!(out, "epochs = {}", cfg.epochs).unwrap();
        writeln!(out, "learning_rate = {}", cfg.learning_rate).unwrap();
        writeln!(out, "l2 = {}", cfg.l2).unwrap();
        writeln!(out, "batch_pixels = {}", cfg.batch_pixels).unwrap();
        writeln!(out, "init_seed = {}", cfg.init_seed).unwrap();
        writeln!(out, "weights = {}", self.weights.len()).unwrap();
        for w in &self.weights {
            writeln!(out, "{w:?}").unwrap();
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text).map_err(|e| Error::ingestion(path, e.to_string()))
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Domain(format!("malformed checkpoint: {m}"));
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CHECKPOINT_MAGIC) {
            return Err(bad("missing magic line"));
        }
        let mut channels = None;
        let mut count = None;
        for line in lines.by_ref() {
            let (key, value) = line.split_once('=').ok_or_else(|| bad(line))?;
            let value = value.trim();
            match key.trim() {
                "channels" => channels = Some(value.parse::<usize>().map_err(|_| bad(line))?),
                "feature_set" if value != FeatureSet::IntensityCoordsLocalMean.name() => {
                    return Err(bad("unknown feature set"))
                }
                "weights" => {
                    count = Some(value.parse::<usize>().map_err(|_| bad(line))?);
                    break;
                }
                _ => {}
            }
        }
        let channels = channels.ok_or_else(|| bad("no channels entry"))?;
        let count = count.ok_or_else(|| bad("no weights entry"))?;
        let weights = lines
            .take(count)
            .map(|l| l.trim().parse::<f64>().map_err(|_| bad(l)))
            .collect::<Result<Vec<_>>>()?;
        if weights.len() != count {
            return Err(bad("truncated weight list"));
        }
        Self::from_weights(channels, FeatureSet::IntensityCoordsLocalMean, weights)
    }
}

impl Segmenter for SegmenterModel {
    fn predict(&self, image: &ImageTensor) -> ProbabilityMap {
        self.check_image(image);
        self.predict_features(&extract_features(image), image.height(), image.width())
    }

    /// Inverted dropout on the features of every pixel; the bias is never dropped.
    fn predict_stochastic(&self, image: &ImageTensor, rate: f64, seed: u64) -> Result<ProbabilityMap> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Domain(format!("dropout rate {rate} outside [0, 1)")));
        }
        self.check_image(image);
        let features = extract_features(image);
        if rate == 0.0 {
            return Ok(self.predict_features(&features, image.height(), image.width()));
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (bias, w) = self.weights.split_last().expect("bias present");
        let values = features
            .values
            .chunks_exact(features.dim)
            .map(|x| {
                let mut z = *bias;
                for (wi, xi) in w.iter().zip(x) {
                    if rng.gen::<f64>() >= rate {
                        z += wi * xi * keep_scale;
                    }
                }
                sigmoid(z)
            })
            .collect();
        ProbabilityMap::new(image.height(), image.width(), values)
    }
}

/// `bit = p >= threshold`.
pub fn binarize(prob: &ProbabilityMap, threshold: f64) -> BinaryMask {
    let bits = prob.values().iter().map(|&p| p >= threshold).collect();
    BinaryMask::new(prob.height(), prob.width(), bits).expect("same dimensions")
}

/// Flattened training problem for the weighted objective.
///
/// Samples whose weight is zero (every pseudo sample when λ = 0) are dropped
/// at construction, so they never enter the mini-batch order.
#[derive(Clone, Debug)]
pub struct WeightedProblem {
    dim: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
    pixel_weights: Vec<f64>,
    total_weight: f64,
    l2: f64,
}

impl WeightedProblem {
    pub fn new(
        labeled: &[TrainingExample<'_>],
        pseudo: &[TrainingExample<'_>],
        lambda: f64,
        l2: f64,
    ) -> Result<Self> {
        let channels = labeled
            .first()
            .or(pseudo.first())
            .map_or(1, |e| e.image.channels());
        let dim = FeatureSet::IntensityCoordsLocalMean.dim(channels);
        let mut problem = Self {
            dim,
            features: Vec::new(),
            targets: Vec::new(),
            pixel_weights: Vec::new(),
            total_weight: 0.0,
            l2,
        };
        let weighted = labeled
            .iter()
            .map(|e| (e, 1.0))
            .chain(pseudo.iter().map(|e| (e, lambda)));
        for (example, weight) in weighted {
            if weight == 0.0 {
                continue;
            }
            if example.image.dims() != example.mask.dims() {
                return Err(Error::DimensionMismatch {
                    expected: example.image.dims(),
                    actual: example.mask.dims(),
                });
            }
            if example.image.channels() != channels {
                return Err(Error::Training("training images differ in channel count".into()));
            }
            let feats = extract_features(example.image);
            let n = example.image.pixel_count() as f64;
            problem.features.extend_from_slice(&feats.values);
            problem
                .targets
                .extend(example.mask.bits().iter().map(|&b| f64::from(u8::from(b))));
            problem
                .pixel_weights
                .extend(std::iter::repeat_n(weight / n, feats.len()));
            problem.total_weight += weight;
        }
        Ok(problem)
    }

    pub fn num_pixels(&self) -> usize {
        self.targets.len()
    }

    /// Number of parameters including the bias.
    pub fn num_params(&self) -> usize {
        self.dim + 1
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    fn penalty(&self, w: &[f64]) -> f64 {
        self.l2 * w[..self.dim].iter().map(|v| v * v).sum::<f64>()
    }

    /// Exact objective value at `w`.
    pub fn objective(&self, w: &[f64]) -> f64 {
        let data: f64 = (0..self.num_pixels())
            .map(|i| {
                let z = dot(w, self.x(i));
                self.pixel_weights[i] * (softplus(z) - self.targets[i] * z)
            })
            .sum();
        data + self.penalty(w)
    }

    /// Exact gradient of [`Self::objective`].
    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.num_params()];
        for i in 0..self.num_pixels() {
            self.accumulate(w, i, self.pixel_weights[i], &mut g);
        }
        self.add_penalty_grad(w, &mut g);
        g
    }

    #[inline]
    fn accumulate(&self, w: &[f64], i: usize, scale: f64, g: &mut [f64]) {
        let x = self.x(i);
        let r = scale * (sigmoid(dot(w, x)) - self.targets[i]);
        for (gj, xj) in g.iter_mut().zip(x) {
            *gj += r * xj;
        }
        g[self.dim] += r;
    }

    fn add_penalty_grad(&self, w: &[f64], g: &mut [f64]) {
        for j in 0..self.dim {
            g[j] += 2.0 * self.l2 * w[j];
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticLearner {
    pub config: LearnerConfig,
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct Fit {
    pub model: SegmenterModel,
    /// Objective at θ⁰ followed by the objective after each epoch.
    pub loss_trace: Vec<f64>,
}

impl LogisticLearner {
    pub fn new(config: LearnerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Mini-batch SGD over pixels.
    ///
    /// Each step moves along `−lr/W · ĝ`, where `ĝ` is the unbiased batch estimate
    /// of ∇J and `W = |L| + λ|P|`. Dividing by the constant `W` keeps the step size
    /// independent of pool size without changing the minimizer.
    pub fn fit(
        &self,
        init: &SegmenterModel,
        labeled: &[TrainingExample<'_>],
        pseudo: &[TrainingExample<'_>],
    ) -> Result<Fit> {
        if labeled.is_empty() {
            return Err(Error::Training("no labeled samples to train on".into()));
        }
        let cfg = &self.config;
        let problem = WeightedProblem::new(labeled, pseudo, cfg.lambda, cfg.l2)?;
        if problem.num_params() != init.weights.len() {
            return Err(Error::Training(format!(
                "initial model has {} weights, data needs {}",
                init.weights.len(),
                problem.num_params()
            )));
        }
        let mut w = init.init_snapshot().to_vec();
        let n = problem.num_pixels();
        let batch = cfg.batch_pixels.min(n);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.init_seed, "shuffle"));
        let mut grad = vec![0.0; w.len()];
        let mut loss_trace = vec![problem.objective(&w)];

        for epoch in 0..cfg.epochs {
            if batch < n {
                order.shuffle(&mut rng);
            }
            for chunk in order.chunks(batch) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let scale = n as f64 / chunk.len() as f64;
                for &i in chunk {
                    problem.accumulate(&w, i, scale * problem.pixel_weights[i], &mut grad);
                }
                problem.add_penalty_grad(&w, &mut grad);
                let step = cfg.learning_rate / problem.total_weight;
                for (wj, gj) in w.iter_mut().zip(&grad) {
                    *wj -= step * gj;
                }
            }
            let loss = problem.objective(&w);
            if !loss.is_finite() || w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite loss {loss} after epoch {} (lr = {}, |L| = {}, |P| = {}, weights = {:?})",
                    epoch + 1,
                    cfg.learning_rate,
                    labeled.len(),
                    pseudo.len(),
                    w
                )));
            }
            loss_trace.push(loss);
        }
        let mut model = init.clone();
        model.weights = w;
        Ok(Fit { model, loss_trace })
    }
}

impl Learner for LogisticLearner {
    type Model = SegmenterModel;

    /// Small uniform weights in `[-0.01, 0.01]`.
    fn initial_model(&self, channels: usize, seed: u64) -> SegmenterModel {
        let dim = self.config.feature_set.dim(channels) + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "theta0"));
        let weights = (0..dim).map(|_| rng.gen_range(-0.01..=0.01)).collect();
        SegmenterModel::from_weights(channels, self.config.feature_set, weights)
            .expect("finite random weights")
    }

    fn train(
        &self,
        init: &SegmenterModel,
        labeled: &[TrainingExample<'_>],
        pseudo: &[TrainingExample<'_>],
    ) -> Result<SegmenterModel> {
        self.fit(init, labeled, pseudo).map(|f| f.model)
    }
}
