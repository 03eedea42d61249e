//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::result::Result;
use std::time::{Duration, Instant};

use alseg_core::acquisition::{score_entropy, score_mc_dropout};
use alseg_core::ingestion::generate_synthetic;
use alseg_core::learner::WeightedProblem;
use alseg_core::metrics::{auc_dice, dice};
use alseg_core::neighbors::{build_neighbor_index, select_labeled_anchored, select_pseudo_candidates};
use alseg_core::session::{run_reference_session, run_replications, Mutation, NoObserver};
use alseg_core::similarity::{jsd, plane_jsd};
use alseg_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, started: Instant) -> Result<(), String> {
    let took = started.elapsed();
    ensure(took < limit, || format!("took {took:.1?}, limit {limit:?}"))
}

fn random_descriptor(rng: &mut ChaCha8Rng, planes: usize, bins: usize) -> Descriptor {
    let planes = (0..planes)
        .map(|_| {
            let mut raw: Vec<f64> = (0..bins)
                .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() })
                .collect();
            if raw.iter().all(|&v| v == 0.0) {
                raw[0] = 1.0;
            }
            let total: f64 = raw.iter().sum();
            raw.iter().map(|v| v / total).collect()
        })
        .collect();
    Descriptor::from_planes(planes).unwrap()
}

fn jsd_oracle(p: &Descriptor, q: &Descriptor) -> f64 {
    let mut total = 0.0;
    for (a, b) in p.planes().iter().zip(q.planes()) {
        for i in 0..a.len() {
            let m = (a[i] + b[i]) / 2.0;
            if a[i] > 0.0 {
                total += 0.5 * a[i] * (a[i] / m).log2();
            }
            if b[i] > 0.0 {
                total += 0.5 * b[i] * (b[i] / m).log2();
            }
        }
    }
    total
}

fn jsd_oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let p = random_descriptor(&mut rng, 3, 32);
        let q = random_descriptor(&mut rng, 3, 32);
        let d = jsd(&p, &q).unwrap();
        worst = worst.max((d - jsd_oracle(&p, &q)).abs());
        ensure(d == jsd(&q, &p).unwrap(), || format!("pair {i} not symmetric"))?;
        ensure(jsd(&p, &p).unwrap() == 0.0, || format!("pair {i}: jsd(p,p) != 0"))?;
        for (a, b) in p.planes().iter().zip(q.planes()) {
            ensure(plane_jsd(a, b) <= 1.0, || format!("pair {i}: plane above 1"))?;
        }
    }
    ensure(worst < 1e-12, || format!("max deviation {worst:e}"))?;
    within(Duration::from_secs(1), started)?;
    Ok(format!("max deviation {worst:.1e}, {:.0?}", started.elapsed()))
}

struct Audit {
    checks: usize,
    failure: Option<String>,
}

impl SessionObserver for Audit {
    fn pool_mutated(&mut self, round: usize, pool: &PoolState, what: Mutation) {
        self.checks += 1;
        let (u, l, p) = pool.sizes();
        let ok = pool.check_partition().is_ok() && u + l + p == pool.all_ids().len();
        if !ok && self.failure.is_none() {
            self.failure = Some(format!("round {round} after {what:?}: sizes {u}/{l}/{p}"));
        }
    }
}

fn pool_partition() -> Outcome {
    let started = Instant::now();
    let ds = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let cfg = SessionConfig { method: Method::LabelProp, ..SessionConfig::default() };
    let mut audit = Audit { checks: 0, failure: None };
    let out = run_reference_session(&cfg, &ds, 0, &mut audit).map_err(|e| e.to_string())?;
    if let Some(f) = audit.failure {
        return Err(f);
    }
    ensure(out.record.rounds.len() == 10, || "expected 10 rounds".into())?;
    within(Duration::from_secs(120), started)?;
    Ok(format!("{} mutations checked, {:.1?}", audit.checks, started.elapsed()))
}

fn small_dataset() -> Dataset {
    generate_synthetic(&SyntheticConfig {
        train_per_class: 12,
        valid_per_class: 1,
        test_per_class: 4,
        height: 16,
        width: 16,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn quick(method: Method) -> SessionConfig {
    SessionConfig {
        method,
        k: 5,
        maxr: 6,
        replications: 1,
        mc_passes: 4,
        learner: LearnerConfig { epochs: 1, ..LearnerConfig::default() },
        ..SessionConfig::default()
    }
}

fn budget_arithmetic() -> Outcome {
    let ds = small_dataset();
    let c = ds.num_classes();
    let pool = ds.ids(Split::Train).len();
    for (first, later, method) in [(4, 1, Method::LabelProp), (2, 3, Method::Random), (3, 2, Method::Entropy)] {
        let cfg = SessionConfig { per_class_first_round: first, per_class_later_rounds: later, ..quick(method) };
        let out = run_reference_session(&cfg, &ds, 5, &mut NoObserver).map_err(|e| e.to_string())?;
        for r in &out.record.rounds {
            let expected = (c * first + c * later * (r.round - 1)).min(pool);
            ensure(r.labeled == expected, || {
                format!("{method} {first}/{later} round {}: |L| {} != {expected}", r.round, r.labeled)
            })?;
        }
    }
    Ok("3 configurations".into())
}

fn round_one_fairness() -> Outcome {
    let ds = small_dataset();
    let mut sets = Vec::new();
    for m in [Method::Random, Method::Entropy, Method::McDropout, Method::LabelProp] {
        let cfg = SessionConfig { maxr: 1, ..quick(m) };
        let out = run_reference_session(&cfg, &ds, 11, &mut NoObserver).map_err(|e| e.to_string())?;
        sets.push(out.record.labeled_per_round[0].clone());
    }
    ensure(sets.windows(2).all(|w| w[0] == w[1]), || format!("round-1 sets differ: {sets:?}"))?;
    Ok(format!("{} ids shared by 4 methods", sets[0].len()))
}

fn knn_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let distinct: Vec<Descriptor> = (0..30).map(|_| random_descriptor(&mut rng, 3, 32)).collect();
    let descriptors: BTreeMap<SampleId, Descriptor> = (0..50)
        .map(|i| (SampleId(i), distinct[rng.gen_range(0..distinct.len())].clone()))
        .collect();
    let classes: BTreeMap<SampleId, usize> = (0..50).map(|i| (SampleId(i), rng.gen_range(0..2))).collect();
    for k in [1, 5, 40] {
        let index = build_neighbor_index(&descriptors, &classes, k).map_err(|e| e.to_string())?;
        for (&q, &c) in &classes {
            let mut all: Vec<(f64, SampleId)> = classes
                .iter()
                .filter(|(&o, &oc)| o != q && oc == c)
                .map(|(&o, _)| (jsd_oracle(&descriptors[&q], &descriptors[&o]), o))
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let want: Vec<SampleId> = all.into_iter().take(k).map(|(_, id)| id).collect();
            let got: Vec<SampleId> = index.neighbors(q).iter().map(|n| n.id).collect();
            ensure(got == want, || format!("k={k} id={q}: {got:?} != {want:?}"))?;
        }
    }
    Ok("50 samples, k in {1, 5, 40}, duplicates included".into())
}

fn two_anchor_neighbor_counts() -> Outcome {
    let mut points = Vec::new();
    let mut labeled = BTreeSet::new();
    for (c, cx) in [0.0, 10.0].into_iter().enumerate() {
        labeled.insert(SampleId(points.len()));
        points.push((cx, 0.0));
        for j in 0..7 {
            let angle = std::f64::consts::TAU * j as f64 / 7.0 + 0.1 * c as f64;
            let radius = 1.0 + 0.01 * j as f64;
            points.push((cx + radius * angle.cos(), radius * angle.sin()));
        }
    }
    for j in 0..5 {
        points.push((0.3 * j as f64, 30.0 + 0.17 * (j * j) as f64));
    }
    let classes: BTreeMap<SampleId, usize> = (0..points.len()).map(|i| (SampleId(i), 0)).collect();
    let index = NeighborIndex::build_with(&classes, 4, |a, b| {
        let (p, q) = (points[a.0], points[b.0]);
        ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
    })
    .map_err(|e| e.to_string())?;
    let samples = (0..points.len())
        .map(|i| {
            let image = ImageTensor::filled(2, 2, 1, 0.5).unwrap();
            Sample::new(SampleId(i), image, 0, Split::Train, BinaryMask::empty(2, 2)).unwrap()
        })
        .collect();
    let ds = Dataset::new("rings", samples).unwrap();
    let mut pool = PoolState::new((0..points.len()).map(SampleId));
    pool.promote_to_labeled(&labeled, &Oracle::new(&ds)).unwrap();
    let unlabeled_anchored = select_pseudo_candidates(&index, &pool).len();
    let labeled_anchored = select_labeled_anchored(&index, &pool).len();
    ensure(unlabeled_anchored == 14 && labeled_anchored == 8, || {
        format!("got {unlabeled_anchored} and {labeled_anchored}")
    })?;
    Ok("|U''| = 14 unlabeled-anchored, 8 labeled-anchored".into())
}

fn random_pairs(rng: &mut ChaCha8Rng, n: usize, channels: usize) -> Vec<(ImageTensor, BinaryMask)> {
    (0..n)
        .map(|_| {
            let (h, w) = (rng.gen_range(2..5), rng.gen_range(2..5));
            let image = ImageTensor::new(h, w, channels, (0..h * w * channels).map(|_| rng.gen()).collect()).unwrap();
            let mask = BinaryMask::new(h, w, (0..h * w).map(|_| rng.gen_bool(0.4)).collect()).unwrap();
            (image, mask)
        })
        .collect()
}

fn examples(set: &[(ImageTensor, BinaryMask)]) -> Vec<TrainingExample<'_>> {
    set.iter().map(|(image, mask)| TrainingExample { image, mask }).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn gradient_check() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = 1 + 2 * (seed as usize % 2);
        let labeled = random_pairs(&mut rng, 2, channels);
        let pseudo = random_pairs(&mut rng, 2, channels);
        let problem = WeightedProblem::new(&examples(&labeled), &examples(&pseudo), 0.3, 1e-3).unwrap();
        let w: Vec<f64> = (0..problem.num_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let analytic = problem.gradient(&w);
        let h = 1e-5;
        let numeric: Vec<f64> = (0..w.len())
            .map(|j| {
                let (mut plus, mut minus) = (w.clone(), w.clone());
                plus[j] += h;
                minus[j] -= h;
                (problem.objective(&plus) - problem.objective(&minus)) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&analytic).max(norm(&numeric)));
    }
    ensure(worst < 1e-5, || format!("relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.1e} over 20 instances"))
}

fn lambda_zero_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let labeled = random_pairs(&mut rng, 3, 3);
    let pseudo = random_pairs(&mut rng, 3, 3);
    let learner = LogisticLearner::new(LearnerConfig {
        lambda: 0.0,
        epochs: 5,
        batch_pixels: 7,
        ..LearnerConfig::default()
    })
    .unwrap();
    let init = learner.initial_model(3, 3);
    let with = learner.train(&init, &examples(&labeled), &examples(&pseudo)).map_err(|e| e.to_string())?;
    let without = learner.train(&init, &examples(&labeled), &[]).map_err(|e| e.to_string())?;
    let max_abs = with.weights.iter().zip(&without.weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(max_abs <= 1e-10, || format!("max |dw| = {max_abs:e}"))?;
    Ok(format!("max |dw| = {max_abs:e}"))
}

const MARGIN: f64 = 0.02;

fn method_ordering(pseudo_trend: &mut Option<Outcome>) -> Outcome {
    let started = Instant::now();
    let ds = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let mut auc = BTreeMap::new();
    let mut label_prop_records = Vec::new();
    for method in [Method::FullSup, Method::LabelProp, Method::Random] {
        let cfg = SessionConfig { method, replications: 5, ..SessionConfig::default() };
        let (records, agg) = run_replications(&cfg, &ds).map_err(|e| e.to_string())?;
        auc.insert(method, agg.auc.mean);
        if method == Method::LabelProp {
            label_prop_records = records;
        }
    }
    *pseudo_trend = Some(pseudo_dice_trend(&label_prop_records));
    let (full, lp, rnd) = (auc[&Method::FullSup], auc[&Method::LabelProp], auc[&Method::Random]);
    let summary = format!("full_sup {full:.4}, label_prop {lp:.4}, random {rnd:.4}, {:.1?}", started.elapsed());
    ensure(full >= lp && lp > rnd, || format!("ordering violated: {summary}"))?;
    ensure(lp - rnd >= MARGIN, || format!("margin {:.4} < {MARGIN}: {summary}", lp - rnd))?;
    within(Duration::from_secs(15 * 60), started)?;
    Ok(summary)
}

fn pseudo_dice_trend(records: &[SessionRecord]) -> Outcome {
    let mut rising = 0;
    let mut detail = Vec::new();
    for r in records {
        let first = r.rounds.first().and_then(|x| x.pseudo_dice);
        let last = r.rounds.last().and_then(|x| x.pseudo_dice);
        if let (Some(a), Some(b)) = (first, last) {
            if b > a {
                rising += 1;
            }
            detail.push(format!("{a:.3}->{b:.3}"));
        }
    }
    let summary = format!("{rising}/{} rising ({})", records.len(), detail.join(", "));
    ensure(records.len() == 5 && rising >= 4, || summary.clone())?;
    Ok(summary)
}

fn metric_units() -> Outcome {
    let a = BinaryMask::new(2, 2, vec![true, true, false, false]).unwrap();
    let b = BinaryMask::new(2, 2, vec![false, false, true, true]).unwrap();
    let empty = BinaryMask::empty(2, 2);
    ensure(dice(&a, &a).unwrap() == 1.0, || "dice(A, A) != 1".into())?;
    ensure(dice(&a, &b).unwrap() == 0.0, || "dice of disjoint masks != 0".into())?;
    ensure(dice(&empty, &empty).unwrap() == 1.0, || "dice of two empty masks != 1".into())?;
    for c in [0.0, 0.37, 1.0] {
        let got = auc_dice(&[c; 6]).unwrap();
        ensure(got == c, || format!("auc of constant {c} = {got}"))?;
    }
    let hand = auc_dice(&[0.6, 0.8, 0.7]).unwrap();
    ensure((hand - 0.725).abs() < 1e-12, || format!("auc [0.6, 0.8, 0.7] = {hand}"))?;
    Ok("identity, disjoint, constant and hand-worked curve".into())
}

fn mc_dropout_degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let image = ImageTensor::new(8, 8, 3, (0..192).map(|_| rng.gen()).collect()).unwrap();
    let weights: Vec<f64> = (0..FeatureSet::default().dim(3) + 1).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let model = SegmenterModel::from_weights(3, FeatureSet::default(), weights).unwrap();
    let zero_rate = score_mc_dropout(&model, &image, 20, 0.0, 3).map_err(|e| e.to_string())?;
    let one_pass = score_mc_dropout(&model, &image, 1, 0.5, 3).map_err(|e| e.to_string())?;
    ensure(zero_rate == 0.0, || format!("rate 0 score {zero_rate:e}"))?;
    ensure(one_pass == 0.0, || format!("single pass score {one_pass:e}"))?;
    let half = ProbabilityMap::new(4, 4, vec![0.5; 16]).unwrap();
    let h = score_entropy(&half);
    ensure(h == 1.0, || format!("entropy of all-0.5 map {h}"))?;
    Ok("rate 0 and 1 pass score 0, entropy 1".into())
}

fn run_binary(out: &Path) -> Result<Vec<u8>, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_alseg"))
        .args(["run", "--method", "label_prop", "--replications", "1", "--maxr", "3", "--seed", "4"])
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
    std::fs::read(out.join("synthetic/label_prop/seed4/rounds.csv")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = run_binary(&dir.path().join("a"))?;
    let b = run_binary(&dir.path().join("b"))?;
    ensure(a == b, || "rounds.csv differs between runs".into())?;
    Ok(format!("{} identical bytes", a.len()))
}

fn main() {
    let mut trend = None;
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut check = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} criterion {n:>2}: {name}: {detail}");
        results.push((n, name, outcome));
    };
    check(1, "JSD oracle equivalence", &mut jsd_oracle_equivalence);
    check(2, "pool partition invariant", &mut pool_partition);
    check(3, "budget arithmetic", &mut budget_arithmetic);
    check(4, "round-1 fairness", &mut round_one_fairness);
    check(5, "k-NN oracle equivalence", &mut knn_oracle_equivalence);
    check(6, "unlabeled- vs labeled-anchored counts", &mut two_anchor_neighbor_counts);
    check(7, "gradient check", &mut gradient_check);
    check(8, "lambda = 0 equivalence", &mut lambda_zero_equivalence);
    check(9, "method ordering", &mut || method_ordering(&mut trend));
    let trend_outcome = trend.take().unwrap_or_else(|| Err("criterion 9 produced no records".into()));
    check(10, "pseudo-Dice trend", &mut || trend_outcome.clone());
    check(11, "metric unit checks", &mut metric_units);
    check(12, "MC-dropout degeneracy", &mut mc_dropout_degeneracy);
    check(13, "determinism of run", &mut determinism);
    let failed: Vec<u32> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: 13/13 passed");
    } else {
        println!("acceptance: {} failed: {failed:?}", failed.len());
        std::process::exit(1);
    }
}
