use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use alseg_core::ingestion::{generate_synthetic, load_manifest, split_train_valid, write_synthetic};
use alseg_core::metrics::{aggregate, auc_table, Aggregate};
use alseg_core::neighbors::build_neighbor_index;
use alseg_core::report;
use alseg_core::session::{reference_learner, replication_seeds, run_session, NoObserver};
use alseg_core::similarity::build_descriptor_index;
use alseg_core::{Dataset, LearnerConfig, Method, SampleId, SessionConfig, SessionRecord, Split, SyntheticConfig};
use log::{info, warn};
use rayon::prelude::*;

use crate::error::CliError;
use crate::keys::Settings;

fn synthetic_config(s: &Settings) -> Result<SyntheticConfig, CliError> {
    Ok(SyntheticConfig {
        classes: s.get("classes")?,
        train_per_class: s.get("train_per_class")?,
        valid_per_class: s.get("valid_per_class")?,
        test_per_class: s.get("test_per_class")?,
        height: s.get("height")?,
        width: s.get("width")?,
        channels: s.get("channels")?,
        modes_per_class: s.get("modes_per_class")?,
        blob_min: s.get("blob_min")?,
        blob_max: s.get("blob_max")?,
        texture_std: s.get("texture_std")?,
        noise_std: s.get("noise_std")?,
        min_contrast: s.get("min_contrast")?,
        fg_min: s.get("fg_min")?,
        fg_max: s.get("fg_max")?,
        seed: s.get("seed")?,
    })
}

fn parse_methods(list: &str) -> Result<Vec<Method>, CliError> {
    let mut methods = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m: Method = part.parse()?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        return Err(CliError::Config("no method given".into()));
    }
    Ok(methods)
}

fn session_config(s: &Settings, method: Method) -> Result<SessionConfig, CliError> {
    let cfg = SessionConfig {
        method,
        k: s.get("k")?,
        learner: LearnerConfig {
            lambda: s.get("lambda")?,
            epochs: s.get("epochs")?,
            learning_rate: s.get("learning_rate")?,
            l2: s.get("l2")?,
            batch_pixels: s.get("batch_pixels")?,
            init_seed: s.get("init_seed")?,
            ..LearnerConfig::default()
        },
        per_class_first_round: s.get("per_class_first_round")?,
        per_class_later_rounds: s.get("per_class_later_rounds")?,
        mc_passes: s.get("mc_passes")?,
        mc_dropout_rate: s.get("mc_dropout_rate")?,
        maxr: s.get("maxr")?,
        replications: s.get("replications")?,
        seed: s.get("seed")?,
        inner_repeats: s.get("inner_repeats")?,
        bins: s.get("bins")?,
        threshold: s.get("threshold")?,
        dump_scores: s.flag("dump_scores")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load(s: &Settings) -> Result<Dataset, CliError> {
    let source = s.raw("dataset");
    let mut dataset = if source == "synthetic" {
        generate_synthetic(&SyntheticConfig::default())?
    } else {
        let path = PathBuf::from(source);
        let manifest = if path.is_dir() { path.join("manifest.csv") } else { path };
        load_manifest(&manifest)?
    };
    if s.has("valid_fraction") {
        let fraction: f64 = s.get("valid_fraction")?;
        if !(0.0..1.0).contains(&fraction) {
            return Err(CliError::Config(format!("valid_fraction must lie in [0, 1), got {fraction}")));
        }
        if fraction > 0.0 {
            let train: Vec<(SampleId, usize)> = dataset
                .ids(Split::Train)
                .into_iter()
                .map(|id| (id, dataset.sample(id).class_label))
                .collect();
            let (_, valid) = split_train_valid(&train, 1.0 - fraction, s.get("seed")?)?;
            dataset.reassign_split(&valid, Split::Valid);
        }
    }
    Ok(dataset)
}

fn thread_pool(s: &Settings) -> Result<rayon::ThreadPool, CliError> {
    let jobs: usize = s.get("jobs")?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker threads: {e}")))
}

fn session_dir(root: &Path, method: Method, seed: u64) -> PathBuf {
    root.join(method.as_str()).join(format!("seed{seed}"))
}

/// Runs one session and writes its directory.
fn run_one(
    s: &Settings,
    cfg: &SessionConfig,
    dataset: &Dataset,
    seed: u64,
    root: &Path,
) -> Result<SessionRecord, CliError> {
    let learner = reference_learner(&cfg.learner, seed)?;
    let outcome = run_session(cfg, dataset, &learner, seed, &mut NoObserver)?;
    let dir = session_dir(root, cfg.method, seed);
    report::write_session(&dir, &outcome.record, s.flag("record_timing")?)?;
    let mut echo = s.clone();
    echo.set("method", cfg.method.as_str().to_string());
    report::write_file(
        &dir.join("config.txt"),
        &format!("{}session_seed = {seed}\ndataset_name = {}\n", echo.echo(), dataset.name),
    )?;
    outcome.model.save(&dir.join("model.txt"), &learner.config)?;
    info!("{} seed {seed}: AUC {:.4}", cfg.method, outcome.record.auc);
    Ok(outcome.record)
}

fn aggregate_records(records: &[&SessionRecord]) -> Result<Aggregate, CliError> {
    let curves: Vec<_> = records.iter().map(|r| r.rounds.clone()).collect();
    Ok(aggregate(&curves)?)
}

fn write_comparison(dir: &Path, table: &BTreeMap<String, Aggregate>) -> Result<(), CliError> {
    report::write_compare(dir, table)?;
    let series = table.iter().map(|(m, a)| (m.clone(), a.rounds.clone())).collect();
    report::write_file(&dir.join("compare.svg"), &report::dice_chart_svg(&series))?;
    Ok(())
}

pub fn generate(s: &Settings) -> Result<(), CliError> {
    let cfg = synthetic_config(s)?;
    let out = PathBuf::from(s.raw("out"));
    let dataset = write_synthetic(&cfg, &out)?;
    println!("wrote {} samples to {}", dataset.len(), out.display());
    for split in [Split::Train, Split::Valid, Split::Test] {
        let ids = dataset.ids(split);
        let per_class: Vec<String> = (0..dataset.num_classes())
            .map(|c| ids.iter().filter(|&&id| dataset.sample(id).class_label == c).count().to_string())
            .collect();
        println!("  {:<5} {:>4}  per class: {}", split.as_str(), ids.len(), per_class.join(" "));
    }
    Ok(())
}

pub fn run(s: &Settings) -> Result<(), CliError> {
    let methods = parse_methods(s.raw("method"))?;
    let configs = methods
        .iter()
        .map(|&m| session_config(s, m))
        .collect::<Result<Vec<_>, _>>()?;
    let dataset = load(s)?;
    for cfg in &configs {
        cfg.check_dataset(&dataset)?;
    }
    let root = PathBuf::from(s.raw("out")).join(&dataset.name);
    let jobs: Vec<(&SessionConfig, u64)> = configs
        .iter()
        .flat_map(|cfg| replication_seeds(cfg).into_iter().map(move |seed| (cfg, seed)))
        .collect();
    let records = thread_pool(s)?.install(|| {
        jobs.par_iter()
            .map(|(cfg, seed)| run_one(s, cfg, &dataset, *seed, &root))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut table = BTreeMap::new();
    for method in &methods {
        let mine: Vec<&SessionRecord> = records.iter().filter(|r| r.method == *method).collect();
        let agg = aggregate_records(&mine)?;
        let single = BTreeMap::from([(method.as_str().to_string(), agg.clone())]);
        let dir = root.join(method.as_str());
        report::write_file(&dir.join("aggregate.csv"), &report::compare_csv(&single))?;
        report::write_file(&dir.join("aggregate_rounds.csv"), &report::per_round_csv(&single))?;
        table.insert(method.as_str().to_string(), agg);
    }
    if methods.len() > 1 {
        write_comparison(&root, &table)?;
    }
    print!("{}", auc_table(&table));
    println!("sessions written under {}", root.display());
    Ok(())
}

pub fn compare(s: &Settings) -> Result<(), CliError> {
    let root = PathBuf::from(s.raw("results"));
    let entries = fs::read_dir(&root)
        .map_err(|e| CliError::Runtime(format!("cannot read results directory {}: {e}", root.display())))?;
    let mut method_dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    method_dirs.sort();
    let mut table = BTreeMap::new();
    for dir in method_dirs {
        let mut seeds: Vec<(u64, PathBuf)> = fs::read_dir(&dir)
            .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter_map(|p| {
                let name = p.file_name()?.to_str()?.to_string();
                let seed = name.strip_prefix("seed")?.parse().ok()?;
                p.join("rounds.csv").is_file().then_some((seed, p))
            })
            .collect();
        if seeds.is_empty() {
            continue;
        }
        seeds.sort();
        let curves = seeds
            .iter()
            .map(|(_, p)| report::read_rounds_csv(&p.join("rounds.csv")))
            .collect::<Result<Vec<_>, _>>()?;
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        table.insert(name, aggregate(&curves)?);
    }
    if table.is_empty() {
        return Err(CliError::Runtime(format!("no sessions found under {}", root.display())));
    }
    write_comparison(&root, &table)?;
    print!("{}", auc_table(&table));
    Ok(())
}

pub fn sweep(s: &Settings) -> Result<(), CliError> {
    let param = s.raw("param").to_string();
    if param != "k" && param != "lambda" {
        return Err(CliError::Config(format!("param must be `k` or `lambda`, got `{param}`")));
    }
    let values: Vec<String> = s
        .raw("values")
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(String::from)
        .collect();
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value in `values`".into()));
    }
    let methods = parse_methods(s.raw("method"))?;
    let [method] = methods[..] else {
        return Err(CliError::Config("sweep runs a single method".into()));
    };
    let configs = values
        .iter()
        .map(|v| {
            let mut point = s.clone();
            point.set(&param, v.clone());
            let cfg = session_config(&point, method)?;
            let x: f64 = point.get(&param)?;
            Ok((x, cfg))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let dataset = load(s)?;
    for (_, cfg) in &configs {
        cfg.check_dataset(&dataset)?;
    }
    let seed: u64 = s.get("seed")?;
    let rows = thread_pool(s)?.install(|| {
        configs
            .par_iter()
            .map(|(x, cfg)| {
                let learner = reference_learner(&cfg.learner, seed)?;
                let out = run_session(cfg, &dataset, &learner, seed, &mut NoObserver)?;
                Ok((*x, out.record.auc))
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    let root = PathBuf::from(s.raw("out")).join(&dataset.name);
    report::write_file(&root.join(format!("sweep_{param}.csv")), &report::sweep_csv(&rows))?;
    report::write_file(&root.join(format!("sweep_{param}.svg")), &report::sweep_chart_svg(&param, &rows))?;
    println!("{:>12} {:>10}", param, "auc");
    for (x, auc) in &rows {
        println!("{x:>12} {auc:>10.4}");
    }
    Ok(())
}

pub fn knn_inspect(s: &Settings) -> Result<(), CliError> {
    let raw_id = s.raw("id");
    if raw_id.is_empty() {
        return Err(CliError::Config("knn-inspect needs `id`".into()));
    }
    let id = SampleId(s.get("id")?);
    let k: usize = s.get("k")?;
    let bins: usize = s.get("bins")?;
    if k == 0 || bins < 2 {
        return Err(CliError::Config("k must be >= 1 and bins >= 2".into()));
    }
    let dataset = load(s)?;
    let train = dataset.ids(Split::Train);
    if !train.contains(&id) {
        return Err(CliError::Config(format!("unknown id {id}: not a training sample of `{}`", dataset.name)));
    }
    let classes: BTreeMap<SampleId, usize> = train.iter().map(|&i| (i, dataset.sample(i).class_label)).collect();
    let descriptors = build_descriptor_index(&dataset, bins);
    let index = build_neighbor_index(&descriptors, &classes, k)?;
    let neighbors = index.neighbors(id);
    if neighbors.is_empty() {
        warn!("sample {id} is alone in class {}; it has no neighbors", classes[&id]);
    }
    let path_of = |i: SampleId| {
        dataset
            .sample(i)
            .source
            .as_ref()
            .map_or_else(|| "-".to_string(), |p| p.display().to_string())
    };
    println!("query {id} (class {}) {}", classes[&id], path_of(id));
    println!("{:>4} {:>8} {:>12}  path", "rank", "neighbor", "jsd");
    for (rank, n) in neighbors.iter().enumerate() {
        println!("{:>4} {:>8} {:>12.6}  {}", rank + 1, n.id, n.distance, path_of(n.id));
    }
    let out = PathBuf::from(s.raw("out")).join(&dataset.name).join(format!("knn_{id}.csv"));
    report::write_file(&out, &report::knn_csv(id, neighbors))?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn plot(s: &Settings) -> Result<(), CliError> {
    let input = PathBuf::from(s.raw("input"));
    let series = report::read_per_round_csv(&input)?;
    if series.is_empty() {
        return Err(CliError::Runtime(format!("{} has no rows", input.display())));
    }
    let output = PathBuf::from(s.raw("output"));
    report::write_file(&output, &report::dice_chart_svg(&series))?;
    println!("wrote {}", output.display());
    Ok(())
}
