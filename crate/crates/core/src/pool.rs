//! The U / L / P partition of the training set.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::types::{Annotation, BinaryMask, Oracle, SampleId};

/// Disjoint partition of the training ids into unlabeled, oracle-labeled and
/// pseudo-labeled pools.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolState {
    round: usize,
    all: BTreeSet<SampleId>,
    unlabeled: BTreeSet<SampleId>,
    labeled: BTreeMap<SampleId, BinaryMask>,
    pseudo: BTreeMap<SampleId, BinaryMask>,
}

impl PoolState {
    /// Every training id starts unlabeled at round 0.
    pub fn new(train_ids: impl IntoIterator<Item = SampleId>) -> Self {
        let all: BTreeSet<SampleId> = train_ids.into_iter().collect();
        Self {
            round: 0,
            unlabeled: all.clone(),
            all,
            labeled: BTreeMap::new(),
            pseudo: BTreeMap::new(),
        }
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn advance_round(&mut self) {
        self.round += 1;
    }

    pub fn all_ids(&self) -> &BTreeSet<SampleId> {
        &self.all
    }

    pub fn unlabeled(&self) -> &BTreeSet<SampleId> {
        &self.unlabeled
    }

    pub fn labeled(&self) -> &BTreeMap<SampleId, BinaryMask> {
        &self.labeled
    }

    pub fn pseudo(&self) -> &BTreeMap<SampleId, BinaryMask> {
        &self.pseudo
    }

    pub fn is_labeled(&self, id: SampleId) -> bool {
        self.labeled.contains_key(&id)
    }

    pub fn is_pseudo(&self, id: SampleId) -> bool {
        self.pseudo.contains_key(&id)
    }

    pub fn is_unlabeled(&self, id: SampleId) -> bool {
        self.unlabeled.contains(&id)
    }

    /// `(|U|, |L|, |P|)`
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.unlabeled.len(), self.labeled.len(), self.pseudo.len())
    }

    pub fn annotation(&self, id: SampleId) -> Option<Annotation<'_>> {
        if let Some(m) = self.labeled.get(&id) {
            Some(Annotation::OracleLabeled(m))
        } else if let Some(m) = self.pseudo.get(&id) {
            Some(Annotation::PseudoLabeled(m))
        } else if self.unlabeled.contains(&id) {
            Some(Annotation::Unlabeled)
        } else {
            None
        }
    }

    /// Queries the oracle for `ids` and moves them into L.
    ///
    /// Ids may come from U or, under the protected-P fallback, from P; in the
    /// latter case the pseudo-mask is dropped. The call is atomic: on error the
    /// pool is left untouched.
    pub fn promote_to_labeled(&mut self, ids: &BTreeSet<SampleId>, oracle: &Oracle<'_>) -> Result<()> {
        for &id in ids {
            if !self.all.contains(&id) {
                return Err(Error::UnknownId(id));
            }
            if self.labeled.contains_key(&id) {
                return Err(Error::AlreadyLabeled(id));
            }
        }
        let masks = ids
            .iter()
            .map(|&id| oracle.label(id).map(|m| (id, m)))
            .collect::<Result<Vec<_>>>()?;
        for (id, mask) in masks {
            self.unlabeled.remove(&id);
            self.pseudo.remove(&id);
            self.labeled.insert(id, mask);
        }
        Ok(())
    }

    /// Moves `ids` from U into P with the given pseudo-masks. Atomic on error.
    pub fn promote_to_pseudo(
        &mut self,
        ids: &BTreeSet<SampleId>,
        masks: &BTreeMap<SampleId, BinaryMask>,
    ) -> Result<()> {
        for &id in ids {
            if !self.all.contains(&id) {
                return Err(Error::UnknownId(id));
            }
            if self.labeled.contains_key(&id) {
                return Err(Error::AlreadyLabeled(id));
            }
            if self.pseudo.contains_key(&id) {
                return Err(Error::AlreadyPseudo(id));
            }
            if !masks.contains_key(&id) {
                return Err(Error::MissingMask(id));
            }
        }
        if let Some(extra) = masks.keys().find(|id| !ids.contains(id)) {
            return Err(Error::Domain(format!(
                "pseudo-mask supplied for id {extra} which is not being promoted"
            )));
        }
        for &id in ids {
            self.unlabeled.remove(&id);
            self.pseudo.insert(id, masks[&id].clone());
        }
        Ok(())
    }

    /// Replaces the stored pseudo-masks of ids already in P; membership is unchanged.
    pub fn refresh_pseudo_masks(&mut self, masks: BTreeMap<SampleId, BinaryMask>) -> Result<()> {
        if let Some(id) = masks.keys().find(|id| !self.pseudo.contains_key(id)) {
            return Err(Error::Domain(format!("id {id} is not pseudo-labeled")));
        }
        for (id, mask) in masks {
            self.pseudo.insert(id, mask);
        }
        Ok(())
    }

    /// Verifies that U, L and P are pairwise disjoint and cover every training id.
    pub fn check_partition(&self) -> Result<()> {
        let total = self.unlabeled.len() + self.labeled.len() + self.pseudo.len();
        if total != self.all.len() {
            return Err(Error::Domain(format!(
                "pool sizes |U|+|L|+|P| = {total} but the training set has {} ids",
                self.all.len()
            )));
        }
        for id in &self.all {
            let hits = usize::from(self.unlabeled.contains(id))
                + usize::from(self.labeled.contains_key(id))
                + usize::from(self.pseudo.contains_key(id));
            if hits != 1 {
                return Err(Error::Domain(format!("id {id} appears in {hits} pools")));
            }
        }
        Ok(())
    }
}
