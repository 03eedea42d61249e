//! Configuration keys accepted by each command, and the merge of defaults,
//! config file, `ALSEG_SEED` and command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Value,
    Flag,
}

#[derive(Clone, Copy, Debug)]
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
    pub kind: Kind,
}

const fn value(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help, kind: Kind::Value }
}

const fn flag(name: &'static str, help: &'static str) -> Key {
    Key { name, default: "false", help, kind: Kind::Flag }
}

pub const DATASET: Key = value(
    "dataset",
    "synthetic",
    "Manifest CSV, a directory holding manifest.csv, or `synthetic` for the default generator output",
);
pub const RESULTS_OUT: Key = value("out", "results", "Output root; sessions go to <out>/<dataset>/<method>/seed<k>/");
pub const JOBS: Key = value("jobs", "0", "Worker threads for concurrent sessions (0 = all cores)");
pub const VALID_FRACTION: Key = value(
    "valid_fraction",
    "0",
    "If > 0, move this share of each class's training samples to validation",
);

pub const SEED: Key = value("seed", "0", "Base seed; replication i uses seed + i (overridden by ALSEG_SEED)");
pub const K: Key = value("k", "40", "Neighbors per sample in the same-class k-NN graph");
pub const BINS: Key = value("bins", "32", "Histogram bins per color plane");

pub const SESSION: &[Key] = &[
    value(
        "method",
        "label_prop",
        "Comma-separated methods: random, entropy, mc_dropout, label_prop, full_sup",
    ),
    K,
    value("lambda", "0.1", "Weight of the pseudo-labeled term in the training loss"),
    value("epochs", "2", "Training epochs per pass"),
    value("learning_rate", "0.5", "SGD step size"),
    value("l2", "0.0001", "Weight decay on non-bias weights"),
    value("batch_pixels", "256", "Pixels per mini-batch"),
    value("init_seed", "0", "Seed mixed into the learner's shuffling stream"),
    value("per_class_first_round", "4", "Oracle queries per class in round 1"),
    value("per_class_later_rounds", "1", "Oracle queries per class in every later round"),
    value("mc_passes", "50", "Stochastic forward passes for mc_dropout"),
    value("mc_dropout_rate", "0.2", "Feature dropout rate for mc_dropout"),
    value("maxr", "10", "Number of active-learning rounds"),
    value("replications", "5", "Sessions per method, with seeds seed..seed+replications-1"),
    SEED,
    value(
        "inner_repeats",
        "2",
        "Training and pseudo-labeling passes per round (1 or 2); only the first queries the oracle",
    ),
    BINS,
    value("threshold", "0.5", "Probability threshold for binary masks"),
    flag("dump_scores", "Write per-round acquisition scores to scores.csv"),
    flag("record_timing", "Fill wall_ms in rounds.csv and write timing.csv"),
];

pub const SYNTHETIC: &[Key] = &[
    value("out", "data/synthetic", "Directory to write the dataset into"),
    value("classes", "2", "Number of classes"),
    value("train_per_class", "50", "Training samples per class"),
    value("valid_per_class", "10", "Validation samples per class"),
    value("test_per_class", "25", "Test samples per class"),
    value("height", "32", "Image height"),
    value("width", "32", "Image width"),
    value("channels", "3", "Image channels (1 or 3)"),
    value("modes_per_class", "3", "Color sub-modes per class"),
    value("blob_min", "1", "Minimum foreground blobs per image"),
    value("blob_max", "3", "Maximum foreground blobs per image"),
    value("texture_std", "0.12", "Spread of per-pixel colors around a mode's base color"),
    value("noise_std", "0.05", "Gaussian pixel noise"),
    value("min_contrast", "0.05", "Gap between background and foreground channel ranges"),
    value("fg_min", "0.05", "Minimum foreground fraction per image"),
    value("fg_max", "0.5", "Maximum foreground fraction per image"),
    value("seed", "0", "Generator seed (overridden by ALSEG_SEED)"),
];

pub const SWEEP: &[Key] = &[
    value("param", "lambda", "Swept parameter: k or lambda"),
    value("values", "", "Comma-separated values to sweep"),
];

pub const KNN: &[Key] = &[value("id", "", "Training sample id to inspect")];

pub const COMPARE: &[Key] = &[value(
    "results",
    "results/synthetic",
    "Directory <out>/<dataset> holding <method>/seed<k>/rounds.csv files",
)];

pub const PLOT: &[Key] = &[
    value("input", "results/synthetic/compare_rounds.csv", "Per-round comparison CSV"),
    value("output", "results/synthetic/compare.svg", "SVG file to write"),
];

/// Keys accepted by a command, in `--help` order.
pub fn keys_for(command: &str) -> Vec<Key> {
    let mut keys: Vec<Key> = match command {
        "generate" => SYNTHETIC.to_vec(),
        "run" => [DATASET, RESULTS_OUT, JOBS, VALID_FRACTION].into_iter().chain(SESSION.iter().copied()).collect(),
        "sweep" => [DATASET, RESULTS_OUT, JOBS, VALID_FRACTION]
            .into_iter()
            .chain(SWEEP.iter().copied())
            .chain(SESSION.iter().copied())
            .collect(),
        "knn-inspect" => [DATASET, RESULTS_OUT]
            .into_iter()
            .chain(KNN.iter().copied())
            .chain([K, BINS])
            .collect(),
        "compare" => COMPARE.to_vec(),
        "plot" => PLOT.to_vec(),
        _ => Vec::new(),
    };
    let mut seen = std::collections::BTreeSet::new();
    keys.retain(|k| seen.insert(k.name));
    keys
}

/// Flag spelling of a key: `per_class_first_round` → `per-class-first-round`.
pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str, origin: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("{origin}:{}: expected `key = value`, got `{}`", n + 1, raw.trim()))
        })?;
        out.push((k.trim().replace('-', "_"), v.trim().to_string()));
    }
    Ok(out)
}

/// Resolved key values of one command.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    command: String,
    values: BTreeMap<&'static str, String>,
    order: Vec<&'static str>,
}

impl Settings {
    /// Defaults, then the config file, then `seed_env`, then explicit flags.
    pub fn resolve(
        command: &str,
        config_file: Option<&Path>,
        seed_env: Option<String>,
        flags: &[(String, String)],
    ) -> Result<Self, CliError> {
        let keys = keys_for(command);
        let mut values: BTreeMap<&'static str, String> =
            keys.iter().map(|k| (k.name, k.default.to_string())).collect();
        let lookup = |name: &str| keys.iter().find(|k| k.name == name).map(|k| k.name);
        if let Some(path) = config_file {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", path.display())))?;
            for (k, v) in parse_config_text(&text, &path.display().to_string())? {
                let name = lookup(&k).ok_or_else(|| {
                    CliError::Config(format!("unknown key `{k}` in {} for command `{command}`", path.display()))
                })?;
                values.insert(name, v);
            }
        }
        if let (Some(seed), Some(name)) = (seed_env, lookup("seed")) {
            values.insert(name, seed.trim().to_string());
        }
        for (k, v) in flags {
            let name = lookup(k).ok_or_else(|| CliError::Config(format!("unknown key `{k}`")))?;
            values.insert(name, v.clone());
        }
        Ok(Self {
            command: command.to_string(),
            order: keys.iter().map(|k| k.name).collect(),
            values,
        })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("key `{key}` is not defined for `{}`", self.command))
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse::<T>()
            .map_err(|e| CliError::Config(format!("invalid value `{raw}` for `{key}`: {e}")))
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(CliError::Config(format!("invalid boolean `{other}` for `{key}`"))),
        }
    }

    pub fn set(&mut self, key: &str, value: String) {
        let name = *self.order.iter().find(|k| **k == key).expect("known key");
        self.values.insert(name, value);
    }

    /// `key = value` echo in table order.
    pub fn echo(&self) -> String {
        self.order
            .iter()
            .map(|k| format!("{k} = {}\n", self.values[k]))
            .collect()
    }
}
