//! The active-learning loop: oracle queries, k-NN pseudo-labeling, re-training
//! from θ⁰ every round, and per-round evaluation on the test split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info};
use rayon::prelude::*;

use crate::acquisition::{
    random_priorities, score_entropy, score_mc_dropout, select_queries, AcquisitionConfig,
    AcquisitionMethod,
};
use crate::error::{Error, Result};
use crate::learner::{binarize, Learner, LearnerConfig, LogisticLearner, Segmenter, TrainingExample};
use crate::metrics::{aggregate, auc_dice, mean_dice, Aggregate, RoundRecord};
use crate::neighbors::{build_neighbor_index, select_pseudo_candidates, NeighborIndex, DEFAULT_K};
use crate::pool::PoolState;
use crate::seed::{derive_indexed, derive_seed};
use crate::similarity::{build_descriptor_index, DEFAULT_BINS};
use crate::types::{BinaryMask, Dataset, Oracle, SampleId, Split};

/// Session modes: three acquisition baselines, label propagation, and the
/// fully supervised upper bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Random,
    Entropy,
    McDropout,
    LabelProp,
    FullSup,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Random,
        Method::Entropy,
        Method::McDropout,
        Method::LabelProp,
        Method::FullSup,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Entropy => "entropy",
            Method::McDropout => "mc_dropout",
            Method::LabelProp => "label_prop",
            Method::FullSup => "full_sup",
        }
    }

    /// Acquisition function used for oracle queries; label propagation queries at random.
    pub fn acquisition(self) -> Option<AcquisitionMethod> {
        match self {
            Method::Random | Method::LabelProp => Some(AcquisitionMethod::Random),
            Method::Entropy => Some(AcquisitionMethod::Entropy),
            Method::McDropout => Some(AcquisitionMethod::McDropout),
            Method::FullSup => None,
        }
    }

    pub fn uses_pseudo_labels(self) -> bool {
        self == Method::LabelProp
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "random" => Ok(Method::Random),
            "entropy" => Ok(Method::Entropy),
            "mc_dropout" => Ok(Method::McDropout),
            "label_prop" => Ok(Method::LabelProp),
            "full_sup" => Ok(Method::FullSup),
            "wsl" => Err(Error::Config(
                "method `wsl` (weakly supervised lower bound) is not supported: it needs a deep classifier producing class activation maps".into(),
            )),
            other => Err(Error::Config(format!(
                "unknown method `{other}`; expected one of random, entropy, mc_dropout, label_prop, full_sup"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionConfig {
    pub method: Method,
    pub k: usize,
    pub learner: LearnerConfig,
    pub per_class_first_round: usize,
    pub per_class_later_rounds: usize,
    pub mc_passes: usize,
    pub mc_dropout_rate: f64,
    pub maxr: usize,
    pub replications: usize,
    /// Replication `i` runs with seed `seed + i`.
    pub seed: u64,
    pub inner_repeats: usize,
    pub bins: usize,
    pub threshold: f64,
    /// Record per-round acquisition scores in the session record.
    pub dump_scores: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            method: Method::LabelProp,
            k: DEFAULT_K,
            learner: LearnerConfig::default(),
            per_class_first_round: 4,
            per_class_later_rounds: 1,
            mc_passes: 50,
            mc_dropout_rate: 0.2,
            maxr: 10,
            replications: 5,
            seed: 0,
            inner_repeats: 2,
            bins: DEFAULT_BINS,
            threshold: 0.5,
            dump_scores: false,
        }
    }
}

impl SessionConfig {
    pub fn acquisition(&self, session_seed: u64) -> AcquisitionConfig {
        AcquisitionConfig {
            method: self.method.acquisition().unwrap_or(AcquisitionMethod::Random),
            per_class_first_round: self.per_class_first_round,
            per_class_later_rounds: self.per_class_later_rounds,
            mc_passes: self.mc_passes,
            mc_dropout_rate: self.mc_dropout_rate,
            seed: session_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.maxr == 0 {
            return Err(Error::Config("maxr must be >= 1".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if !(1..=2).contains(&self.inner_repeats) {
            return Err(Error::Config(format!(
                "inner_repeats must be 1 or 2, got {}",
                self.inner_repeats
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.bins < 2 {
            return Err(Error::Config("bins must be >= 2".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        self.learner.validate()?;
        self.acquisition(0).validate()
    }

    /// Every class needs at least `per_class_first_round` training samples.
    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for s in dataset.samples().iter().filter(|s| s.split == Split::Train) {
            *counts.entry(s.class_label).or_default() += 1;
        }
        if counts.is_empty() {
            return Err(Error::Config("dataset has no training samples".into()));
        }
        if dataset.ids(Split::Test).is_empty() {
            return Err(Error::Config("dataset has no test samples".into()));
        }
        for c in 0..dataset.num_classes() {
            let n = counts.get(&c).copied().unwrap_or(0);
            if self.method != Method::FullSup && n < self.per_class_first_round {
                return Err(Error::Config(format!(
                    "class {c} has {n} training samples, fewer than the first-round budget of {}",
                    self.per_class_first_round
                )));
            }
        }
        Ok(())
    }
}

/// Which pool mutation just happened.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    OracleQuery,
    PseudoPromotion,
    PseudoRefresh,
}

/// Hook for watching a session from outside (invariant audits, progress logs).
pub trait SessionObserver {
    fn pool_mutated(&mut self, _round: usize, _pool: &PoolState, _what: Mutation) {}
}

/// Observer that ignores every event.
pub struct NoObserver;

impl SessionObserver for NoObserver {}

/// One acquisition score, as dumped with `--dump-scores`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub round: usize,
    pub id: SampleId,
    pub class: usize,
    pub score: f64,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionRecord {
    pub dataset: String,
    pub method: Method,
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
    pub auc: f64,
    /// Oracle-labeled ids after each round, in order.
    pub labeled_per_round: Vec<BTreeSet<SampleId>>,
    pub scores: Vec<ScoreRow>,
}

/// A finished session plus the model from its last training pass.
#[derive(Clone, Debug)]
pub struct SessionOutcome<M> {
    pub record: SessionRecord,
    pub model: M,
}

/// State of a single active-learning session.
pub struct Session<'a, L: Learner> {
    cfg: &'a SessionConfig,
    dataset: &'a Dataset,
    oracle: Oracle<'a>,
    learner: &'a L,
    seed: u64,
    pool: PoolState,
    classes: BTreeMap<SampleId, usize>,
    theta0: L::Model,
    index: Option<NeighborIndex>,
    /// Model from the latest training pass, with the inputs it was trained on.
    last: Option<(TrainingSet, L::Model)>,
    scores: Vec<ScoreRow>,
    labeled_per_round: Vec<BTreeSet<SampleId>>,
}

#[derive(Clone, Debug, PartialEq)]
struct TrainingSet {
    labeled: Vec<SampleId>,
    pseudo: BTreeMap<SampleId, BinaryMask>,
}

impl<'a, L: Learner> Session<'a, L> {
    pub fn new(cfg: &'a SessionConfig, dataset: &'a Dataset, learner: &'a L, seed: u64) -> Result<Self> {
        cfg.validate()?;
        cfg.check_dataset(dataset)?;
        let train_ids = dataset.ids(Split::Train);
        let classes: BTreeMap<SampleId, usize> = train_ids
            .iter()
            .map(|&id| (id, dataset.sample(id).class_label))
            .collect();
        let channels = dataset.sample(train_ids[0]).image.channels();
        let theta0 = learner.initial_model(channels, derive_seed(seed, "theta0"));
        let index = if cfg.method.uses_pseudo_labels() {
            let descriptors = build_descriptor_index(dataset, cfg.bins);
            Some(build_neighbor_index(&descriptors, &classes, cfg.k)?)
        } else {
            None
        };
        Ok(Self {
            cfg,
            dataset,
            oracle: Oracle::new(dataset),
            learner,
            seed,
            pool: PoolState::new(train_ids),
            classes,
            theta0,
            index,
            last: None,
            scores: Vec::new(),
            labeled_per_round: Vec::new(),
        })
    }

    pub fn pool(&self) -> &PoolState {
        &self.pool
    }

    pub fn neighbor_index(&self) -> Option<&NeighborIndex> {
        self.index.as_ref()
    }

    fn mutated(&self, observer: &mut dyn SessionObserver, what: Mutation) -> Result<()> {
        self.pool.check_partition()?;
        observer.pool_mutated(self.pool.round(), &self.pool, what);
        Ok(())
    }

    /// θ ← θ⁰, then train on the current `L ∪ P`. Re-uses the previous model when
    /// the training inputs are unchanged.
    fn train(&mut self) -> Result<L::Model> {
        let set = TrainingSet {
            labeled: self.pool.labeled().keys().copied().collect(),
            pseudo: self.pool.pseudo().clone(),
        };
        if let Some((prev, model)) = &self.last {
            if *prev == set {
                return Ok(model.clone());
            }
        }
        let labeled: Vec<TrainingExample<'_>> = self
            .pool
            .labeled()
            .iter()
            .map(|(&id, mask)| TrainingExample {
                image: &self.dataset.sample(id).image,
                mask,
            })
            .collect();
        let pseudo: Vec<TrainingExample<'_>> = self
            .pool
            .pseudo()
            .iter()
            .map(|(&id, mask)| TrainingExample {
                image: &self.dataset.sample(id).image,
                mask,
            })
            .collect();
        let model = self.learner.train(&self.theta0, &labeled, &pseudo)?;
        self.last = Some((set, model.clone()));
        Ok(model)
    }

    fn acquisition_scores(
        &self,
        round: usize,
        method: AcquisitionMethod,
        model: Option<&L::Model>,
    ) -> Result<BTreeMap<SampleId, f64>> {
        if method == AcquisitionMethod::Random || round == 1 {
            // method-independent stream: identical picks for every method at round 1
            return Ok(random_priorities(self.seed, round, self.pool.all_ids()));
        }
        let model = model.expect("a trained model exists after round 1");
        let candidates: Vec<SampleId> = self
            .pool
            .unlabeled()
            .iter()
            .chain(self.pool.pseudo().keys())
            .copied()
            .collect();
        let acq = self.cfg.acquisition(self.seed);
        candidates
            .par_iter()
            .map(|&id| {
                let image = &self.dataset.sample(id).image;
                let score = match method {
                    AcquisitionMethod::Entropy => score_entropy(&model.predict(image)),
                    AcquisitionMethod::McDropout => score_mc_dropout(
                        model,
                        image,
                        acq.mc_passes,
                        acq.mc_dropout_rate,
                        derive_indexed(self.seed, "mc", &[round as u64, id.0 as u64]),
                    )?,
                    AcquisitionMethod::Random => unreachable!(),
                };
                Ok((id, score))
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().collect())
    }

    fn pseudo_label_pass(&mut self, model: &L::Model, observer: &mut dyn SessionObserver) -> Result<()> {
        let index = self.index.as_ref().expect("label propagation builds an index");
        let candidates = select_pseudo_candidates(index, &self.pool);
        let threshold = self.cfg.threshold;
        let predict = |ids: Vec<SampleId>| -> BTreeMap<SampleId, BinaryMask> {
            ids.par_iter()
                .map(|&id| (id, binarize(&model.predict(&self.dataset.sample(id).image), threshold)))
                .collect::<Vec<_>>()
                .into_iter()
                .collect()
        };
        if !candidates.is_empty() {
            let masks = predict(candidates.iter().copied().collect());
            self.pool.promote_to_pseudo(&candidates, &masks)?;
            self.mutated(observer, Mutation::PseudoPromotion)?;
        }
        // every member of P is re-predicted with the current model
        let refreshed = predict(self.pool.pseudo().keys().copied().collect());
        if !refreshed.is_empty() {
            self.pool.refresh_pseudo_masks(refreshed)?;
            self.mutated(observer, Mutation::PseudoRefresh)?;
        }
        debug!(
            "round {}: |U''| = {}, |P| = {}",
            self.pool.round(),
            candidates.len(),
            self.pool.pseudo().len()
        );
        Ok(())
    }

    fn evaluate(&self, model: &L::Model) -> Result<(f64, Option<f64>)> {
        let test = self.dataset.ids(Split::Test);
        let preds: Vec<(SampleId, BinaryMask)> = test
            .par_iter()
            .map(|&id| (id, binarize(&model.predict(&self.dataset.sample(id).image), self.cfg.threshold)))
            .collect();
        let test_dice = mean_dice(self.dataset, preds.iter().map(|(id, m)| (*id, m)))?
            .expect("test split is non-empty");
        let pseudo_dice = mean_dice(self.dataset, self.pool.pseudo().iter().map(|(id, m)| (*id, m)))?;
        Ok((test_dice, pseudo_dice))
    }

    fn record(&self, model: &L::Model, started: Instant) -> Result<RoundRecord> {
        let (test_dice, pseudo_dice) = self.evaluate(model)?;
        let (u, l, p) = self.pool.sizes();
        Ok(RoundRecord {
            round: self.pool.round(),
            test_dice,
            pseudo_dice,
            unlabeled: u,
            labeled: l,
            pseudo: p,
            wall_ms: started.elapsed().as_millis() as u64,
        })
    }

    /// Runs one round and returns its record and final model.
    pub fn run_round(&mut self, observer: &mut dyn SessionObserver) -> Result<(RoundRecord, L::Model)> {
        let started = Instant::now();
        self.pool.advance_round();
        let round = self.pool.round();

        if self.cfg.method == Method::FullSup {
            let all: BTreeSet<SampleId> = self.pool.unlabeled().clone();
            self.pool.promote_to_labeled(&all, &self.oracle)?;
            self.mutated(observer, Mutation::OracleQuery)?;
            self.labeled_per_round.push(self.pool.labeled().keys().copied().collect());
            let model = self.train()?;
            let rec = self.record(&model, started)?;
            return Ok((rec, model));
        }

        let method = self.cfg.method.acquisition().expect("non-full_sup methods acquire");
        // Scores come from a model trained on L_{r-1} ∪ P_{r-1}.
        let mut model = if round > 1 { Some(self.train()?) } else { None };
        let scores = self.acquisition_scores(round, method, model.as_ref())?;
        let budget = self.cfg.acquisition(self.seed).budget(round);
        let selection = select_queries(&self.pool, &scores, budget, &self.classes)?;
        if !selection.from_pseudo.is_empty() {
            info!(
                "round {round}: {} queries taken from the pseudo-labeled pool",
                selection.from_pseudo.len()
            );
        }
        if self.cfg.dump_scores {
            for (&id, &score) in &scores {
                if self.pool.is_labeled(id) {
                    continue;
                }
                self.scores.push(ScoreRow {
                    round,
                    id,
                    class: self.classes[&id],
                    score,
                    selected: selection.ids.contains(&id),
                });
            }
        }
        self.pool.promote_to_labeled(&selection.ids, &self.oracle)?;
        self.mutated(observer, Mutation::OracleQuery)?;
        self.labeled_per_round.push(self.pool.labeled().keys().copied().collect());

        // Round 1 has no model yet, so its first pass trains on the fresh L.
        let mut model = match model.take() {
            Some(m) => m,
            None => self.train()?,
        };
        if self.cfg.method.uses_pseudo_labels() {
            self.pseudo_label_pass(&model, observer)?;
        }
        for _ in 1..self.cfg.inner_repeats {
            model = self.train()?;
            if self.cfg.method.uses_pseudo_labels() {
                self.pseudo_label_pass(&model, observer)?;
            }
        }
        let rec = self.record(&model, started)?;
        Ok((rec, model))
    }

    /// Runs every round and summarizes the Dice curve.
    pub fn run(mut self, observer: &mut dyn SessionObserver) -> Result<SessionOutcome<L::Model>> {
        let rounds = if self.cfg.method == Method::FullSup { 1 } else { self.cfg.maxr };
        let mut records = Vec::with_capacity(rounds);
        let mut last_model = None;
        for _ in 0..rounds {
            let (rec, model) = self.run_round(observer)?;
            info!(
                "{} seed {} round {}: dice {:.4} |L| {} |P| {}",
                self.cfg.method, self.seed, rec.round, rec.test_dice, rec.labeled, rec.pseudo
            );
            records.push(rec);
            last_model = Some(model);
        }
        let auc = auc_dice(&records.iter().map(|r| r.test_dice).collect::<Vec<_>>())?;
        Ok(SessionOutcome {
            record: SessionRecord {
                dataset: self.dataset.name.clone(),
                method: self.cfg.method,
                seed: self.seed,
                rounds: records,
                auc,
                labeled_per_round: self.labeled_per_round,
                scores: self.scores,
            },
            model: last_model.expect("at least one round"),
        })
    }
}

/// Runs a full session with the given learner.
pub fn run_session<L: Learner>(
    cfg: &SessionConfig,
    dataset: &Dataset,
    learner: &L,
    seed: u64,
    observer: &mut dyn SessionObserver,
) -> Result<SessionOutcome<L::Model>> {
    Session::new(cfg, dataset, learner, seed)?.run(observer)
}

/// Reference learner for one session; its shuffle stream is keyed by the session seed.
pub fn reference_learner(cfg: &LearnerConfig, session_seed: u64) -> Result<LogisticLearner> {
    LogisticLearner::new(LearnerConfig {
        init_seed: derive_indexed(cfg.init_seed, "learner", &[session_seed]),
        ..cfg.clone()
    })
}

/// Session with the reference logistic learner.
pub fn run_reference_session(
    cfg: &SessionConfig,
    dataset: &Dataset,
    seed: u64,
    observer: &mut dyn SessionObserver,
) -> Result<SessionOutcome<<LogisticLearner as Learner>::Model>> {
    let learner = reference_learner(&cfg.learner, seed)?;
    run_session(cfg, dataset, &learner, seed, observer)
}

/// Seeds used by the replications of a configuration; identical for every method.
pub fn replication_seeds(cfg: &SessionConfig) -> Vec<u64> {
    (0..cfg.replications as u64).map(|i| cfg.seed + i).collect()
}

/// All replications of one configuration, run in parallel, plus their aggregate.
pub fn run_replications(cfg: &SessionConfig, dataset: &Dataset) -> Result<(Vec<SessionRecord>, Aggregate)> {
    cfg.validate()?;
    let records = replication_seeds(cfg)
        .par_iter()
        .map(|&seed| run_reference_session(cfg, dataset, seed, &mut NoObserver).map(|o| o.record))
        .collect::<Result<Vec<_>>>()?;
    let curves: Vec<Vec<RoundRecord>> = records.iter().map(|r| r.rounds.clone()).collect();
    let agg = aggregate(&curves)?;
    Ok((records, agg))
}
