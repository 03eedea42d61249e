//! Exact per-class k-nearest-neighbor lists and pseudo-label candidate selection.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pool::PoolState;
use crate::similarity::{jsd, Descriptor};
use crate::types::SampleId;

pub const DEFAULT_K: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub id: SampleId,
    pub distance: f64,
}

/// For every training id, its `k` nearest same-class ids ordered by
/// `(distance, id)` ascending. The query itself is never listed.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborIndex {
    k: usize,
    lists: BTreeMap<SampleId, Vec<Neighbor>>,
}

impl NeighborIndex {
    /// Builds the index from an arbitrary symmetric distance.
    pub fn build_with<F>(classes: &BTreeMap<SampleId, usize>, k: usize, distance: F) -> Result<Self>
    where
        F: Fn(SampleId, SampleId) -> f64 + Sync,
    {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let mut by_class: BTreeMap<usize, Vec<SampleId>> = BTreeMap::new();
        for (&id, &c) in classes {
            by_class.entry(c).or_default().push(id);
        }
        let lists = classes
            .par_iter()
            .map(|(&query, c)| {
                let mut cands: Vec<Neighbor> = by_class[c]
                    .iter()
                    .filter(|&&other| other != query)
                    .map(|&other| Neighbor {
                        id: other,
                        distance: distance(query, other),
                    })
                    .collect();
                cands.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
                cands.truncate(k);
                (query, cands)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect();
        Ok(Self { k, lists })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Neighbor list of `id`, empty for ids outside the index.
    pub fn neighbors(&self, id: SampleId) -> &[Neighbor] {
        self.lists.get(&id).map_or(&[], Vec::as_slice)
    }

    pub fn ids(&self) -> impl Iterator<Item = SampleId> + '_ {
        self.lists.keys().copied()
    }

    pub fn contains(&self, id: SampleId) -> bool {
        self.lists.contains_key(&id)
    }
}

/// Exact JSD k-NN index within each class.
pub fn build_neighbor_index(
    descriptors: &BTreeMap<SampleId, Descriptor>,
    classes: &BTreeMap<SampleId, usize>,
    k: usize,
) -> Result<NeighborIndex> {
    if let Some(id) = classes.keys().find(|id| !descriptors.contains_key(id)) {
        return Err(Error::Domain(format!("no descriptor for id {id}")));
    }
    // Validate shapes once so the distance closure can't fail.
    let mut shapes = descriptors.values().map(|d| (d.bins(), d.planes().len()));
    if let Some(first) = shapes.next() {
        if shapes.any(|s| s != first) {
            return Err(Error::Domain("descriptors have inconsistent shapes".into()));
        }
    }
    NeighborIndex::build_with(classes, k, |a, b| {
        jsd(&descriptors[&a], &descriptors[&b]).expect("shapes checked above")
    })
}

/// Unlabeled ids having at least one oracle-labeled sample among their k nearest
/// neighbors. Members of L and P are never returned.
pub fn select_pseudo_candidates(index: &NeighborIndex, pool: &PoolState) -> BTreeSet<SampleId> {
    pool.unlabeled()
        .iter()
        .copied()
        .filter(|&id| index.neighbors(id).iter().any(|n| pool.is_labeled(n.id)))
        .collect()
}

/// Union of the neighbor lists of oracle-labeled samples, restricted to U.
/// Kept for comparison with the unlabeled-anchored rule.
pub fn select_labeled_anchored(index: &NeighborIndex, pool: &PoolState) -> BTreeSet<SampleId> {
    pool.labeled()
        .keys()
        .flat_map(|&id| index.neighbors(id).iter().map(|n| n.id))
        .filter(|&id| pool.is_unlabeled(id))
        .collect()
}
