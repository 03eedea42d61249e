//! Oracle-query selection: random, mean pixel entropy and MC-dropout variance,
//! with per-class budgets and the protected-P fallback.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::learner::Segmenter;
use crate::pool::PoolState;
use crate::seed::derive_indexed;
use crate::types::{ImageTensor, ProbabilityMap, SampleId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AcquisitionMethod {
    Random,
    Entropy,
    McDropout,
}

impl AcquisitionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            AcquisitionMethod::Random => "random",
            AcquisitionMethod::Entropy => "entropy",
            AcquisitionMethod::McDropout => "mc_dropout",
        }
    }
}

impl fmt::Display for AcquisitionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AcquisitionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "entropy" => Ok(Self::Entropy),
            "mc_dropout" => Ok(Self::McDropout),
            other => Err(Error::Config(format!("unknown acquisition method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionConfig {
    pub method: AcquisitionMethod,
    pub per_class_first_round: usize,
    pub per_class_later_rounds: usize,
    pub mc_passes: usize,
    pub mc_dropout_rate: f64,
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            method: AcquisitionMethod::Random,
            per_class_first_round: 4,
            per_class_later_rounds: 1,
            mc_passes: 50,
            mc_dropout_rate: 0.2,
            seed: 0,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_class_first_round == 0 || self.per_class_later_rounds == 0 {
            return Err(Error::Config("per-class budgets must be >= 1".into()));
        }
        if self.mc_passes == 0 {
            return Err(Error::Config("mc_passes must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.mc_dropout_rate) {
            return Err(Error::Config(format!(
                "mc_dropout_rate must lie in [0, 1), got {}",
                self.mc_dropout_rate
            )));
        }
        Ok(())
    }

    /// Per-class budget for a 1-based round.
    pub fn budget(&self, round: usize) -> usize {
        if round <= 1 {
            self.per_class_first_round
        } else {
            self.per_class_later_rounds
        }
    }
}

#[inline]
fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.log2() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Mean per-pixel binary entropy (base 2).
pub fn score_entropy(prob: &ProbabilityMap) -> f64 {
    let v = prob.values();
    v.iter().map(|&p| binary_entropy(p)).sum::<f64>() / v.len() as f64
}

/// Mean over pixels of the population variance of the foreground probability
/// across `passes` dropout forward passes.
pub fn score_mc_dropout<M: Segmenter + ?Sized>(
    model: &M,
    image: &ImageTensor,
    passes: usize,
    rate: f64,
    seed: u64,
) -> Result<f64> {
    if passes == 0 {
        return Err(Error::Domain("mc_passes must be >= 1".into()));
    }
    let n = image.pixel_count();
    // Welford updates: identical passes leave the deviation sums at exactly zero.
    let mut mean = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    for pass in 0..passes {
        let map = model.predict_stochastic(image, rate, derive_indexed(seed, "mc_pass", &[pass as u64]))?;
        let count = (pass + 1) as f64;
        for (i, &p) in map.values().iter().enumerate() {
            let delta = p - mean[i];
            mean[i] += delta / count;
            m2[i] += delta * (p - mean[i]);
        }
    }
    let k = passes as f64;
    Ok(m2.iter().map(|v| v / k).sum::<f64>() / n as f64)
}

/// Uniform random priorities for every id in `ids`, drawn in ascending id order
/// from a stream keyed only by `(seed, round)`.
pub fn random_priorities(
    seed: u64,
    round: usize,
    ids: &BTreeSet<SampleId>,
) -> BTreeMap<SampleId, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(seed, "query", &[round as u64]));
    ids.iter().map(|&id| (id, rng.gen::<f64>())).collect()
}

/// Outcome of one selection, including which picks came from P.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Selection {
    pub ids: BTreeSet<SampleId>,
    pub from_pseudo: BTreeSet<SampleId>,
}

/// Per class, the top-`budget` ids by `(score desc, id asc)` drawn from `U \ P`;
/// a class whose non-pseudo pool runs short is topped up from its members of P.
pub fn select_queries(
    pool: &PoolState,
    scores: &BTreeMap<SampleId, f64>,
    budget: usize,
    classes: &BTreeMap<SampleId, usize>,
) -> Result<Selection> {
    let ranked = |candidates: Vec<SampleId>| -> Result<Vec<SampleId>> {
        let mut scored = candidates
            .into_iter()
            .map(|id| {
                scores
                    .get(&id)
                    .map(|&s| (id, s))
                    .ok_or_else(|| Error::Domain(format!("no acquisition score for id {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored.into_iter().map(|(id, _)| id).collect())
    };
    let mut per_class: BTreeMap<usize, (Vec<SampleId>, Vec<SampleId>)> = BTreeMap::new();
    for &id in pool.all_ids() {
        let class = *classes
            .get(&id)
            .ok_or_else(|| Error::Domain(format!("no class label for id {id}")))?;
        let entry = per_class.entry(class).or_default();
        if pool.is_unlabeled(id) {
            entry.0.push(id);
        } else if pool.is_pseudo(id) {
            entry.1.push(id);
        }
    }
    let mut selection = Selection::default();
    for (class, (unlabeled, pseudo)) in per_class {
        let mut picks: Vec<SampleId> = ranked(unlabeled)?.into_iter().take(budget).collect();
        if picks.len() < budget {
            let fallback: Vec<SampleId> = ranked(pseudo)?
                .into_iter()
                .take(budget - picks.len())
                .collect();
            selection.from_pseudo.extend(&fallback);
            picks.extend(fallback);
        }
        if picks.len() < budget {
            warn!(
                "class {class}: only {} of {budget} queries available",
                picks.len()
            );
        }
        selection.ids.extend(picks);
    }
    Ok(selection)
}
