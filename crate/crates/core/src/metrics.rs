//! Dice index, AUC of Dice curves, and aggregation across replications.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BinaryMask, Dataset, SampleId};

/// `2|A∩B| / (|A|+|B|)`, with two empty masks scoring 1.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            actual: pred.dims(),
        });
    }
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        a += usize::from(p);
        b += usize::from(g);
        inter += usize::from(p && g);
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// Trapezoidal area under a per-round curve, normalized by the number of
/// intervals so that a constant curve `c` maps to `c`.
pub fn auc_dice(curve: &[f64]) -> Result<f64> {
    match curve {
        [] => Err(Error::Domain("AUC of an empty curve".into())),
        [only] => Ok(*only),
        _ => {
            let area: f64 = curve.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
            Ok(area / (curve.len() - 1) as f64)
        }
    }
}

/// Mean Dice of predicted masks against the hidden ground truth.
///
/// This is the evaluator: one of the two places allowed to read ground truth.
pub fn mean_dice<'a, I>(dataset: &Dataset, predictions: I) -> Result<Option<f64>>
where
    I: IntoIterator<Item = (SampleId, &'a BinaryMask)>,
{
    let pairs: Vec<_> = predictions.into_iter().collect();
    if pairs.is_empty() {
        return Ok(None);
    }
    let scores = pairs
        .par_iter()
        .map(|(id, pred)| {
            let sample = dataset.get(*id).ok_or(Error::UnknownId(*id))?;
            dice(pred, sample.ground_truth().mask())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Some(scores.iter().sum::<f64>() / scores.len() as f64))
}

/// Per-round outcome of an active-learning session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub test_dice: f64,
    /// Mean Dice of the current pseudo-masks; absent when P is empty.
    pub pseudo_dice: Option<f64>,
    pub unlabeled: usize,
    pub labeled: usize,
    pub pseudo: usize,
    pub wall_ms: u64,
}

/// Mean and sample standard deviation (n − 1; zero for a single value).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Aggregation("no values to aggregate".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Ok(Self { mean, std })
    }
}

/// Aggregate of replicated sessions of one method.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub auc: MeanStd,
    /// Test Dice per round.
    pub rounds: Vec<MeanStd>,
    /// Pseudo Dice per round over the replications where P was non-empty.
    pub pseudo: Vec<Option<MeanStd>>,
}

/// Aggregates per-replication curves. All curves must have the same length.
pub fn aggregate(replications: &[Vec<RoundRecord>]) -> Result<Aggregate> {
    let first = replications
        .first()
        .ok_or_else(|| Error::Aggregation("no replications".into()))?;
    let n_rounds = first.len();
    if let Some(bad) = replications.iter().find(|r| r.len() != n_rounds) {
        return Err(Error::Aggregation(format!(
            "replications have {} and {} rounds",
            n_rounds,
            bad.len()
        )));
    }
    if n_rounds == 0 {
        return Err(Error::Aggregation("replication with no rounds".into()));
    }
    let aucs = replications
        .iter()
        .map(|r| auc_dice(&r.iter().map(|x| x.test_dice).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let rounds = (0..n_rounds)
        .map(|i| MeanStd::of(&replications.iter().map(|r| r[i].test_dice).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let pseudo = (0..n_rounds)
        .map(|i| {
            let vals: Vec<f64> = replications.iter().filter_map(|r| r[i].pseudo_dice).collect();
            if vals.is_empty() {
                None
            } else {
                MeanStd::of(&vals).ok()
            }
        })
        .collect();
    Ok(Aggregate {
        auc: MeanStd::of(&aucs)?,
        rounds,
        pseudo,
    })
}

/// AUC summary per method, in the order given.
pub fn auc_table(methods: &BTreeMap<String, Aggregate>) -> String {
    let mut out = format!("{:<14} {:>10} {:>10}\n", "method", "auc_mean", "auc_std");
    for (name, agg) in methods {
        out.push_str(&format!(
            "{:<14} {:>10.4} {:>10.4}\n",
            name, agg.auc.mean, agg.auc.std
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mask(bits: &[u8]) -> BinaryMask {
        BinaryMask::new(1, bits.len(), bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn dice_cases() {
        let m = mask(&[1, 1, 0, 1]);
        assert_eq!(dice(&m, &m).unwrap(), 1.0);
        assert_eq!(dice(&mask(&[1, 1, 0, 0]), &mask(&[0, 0, 1, 1])).unwrap(), 0.0);
        // |A|=2, |B|=3, |A∩B|=1 -> 2/5
        assert_eq!(dice(&mask(&[1, 1, 0, 0, 0]), &mask(&[1, 0, 1, 1, 0])).unwrap(), 0.4);
        assert_eq!(dice(&mask(&[0, 0]), &mask(&[0, 0])).unwrap(), 1.0);
        assert_eq!(dice(&mask(&[0, 0]), &mask(&[0, 1])).unwrap(), 0.0);
        assert!(dice(&mask(&[0, 0]), &mask(&[0, 0, 0])).is_err());
    }

    #[test]
    fn auc_cases() {
        assert_abs_diff_eq!(auc_dice(&[0.7; 25]).unwrap(), 0.7, epsilon = 1e-15);
        assert_eq!(auc_dice(&[0.0, 1.0]).unwrap(), 0.5);
        // (0.7 + 0.75) / 2
        assert_abs_diff_eq!(auc_dice(&[0.6, 0.8, 0.7]).unwrap(), 0.725, epsilon = 1e-15);
        assert_eq!(auc_dice(&[0.3]).unwrap(), 0.3);
        assert!(auc_dice(&[]).is_err());
    }

    fn record(round: usize, d: f64) -> RoundRecord {
        RoundRecord {
            round,
            test_dice: d,
            pseudo_dice: None,
            unlabeled: 0,
            labeled: 0,
            pseudo: 0,
            wall_ms: 0,
        }
    }

    #[test]
    fn aggregate_two_replications() {
        let a = vec![record(1, 0.6)];
        let b = vec![record(1, 0.8)];
        let agg = aggregate(&[a.clone(), b]).unwrap();
        assert_abs_diff_eq!(agg.auc.mean, 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(agg.auc.std, 0.02f64.sqrt(), epsilon = 1e-12);
        let single = aggregate(&[a]).unwrap();
        assert_eq!(single.auc.std, 0.0);
        assert!(single.pseudo[0].is_none());
    }

    #[test]
    fn aggregate_rejects_ragged() {
        let a = vec![record(1, 0.6), record(2, 0.7)];
        let b = vec![record(1, 0.8)];
        assert!(matches!(aggregate(&[a, b]), Err(Error::Aggregation(_))));
        assert!(aggregate(&[]).is_err());
    }
}
