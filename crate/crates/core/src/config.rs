//! Flat key=value run configuration with strict validation: unknown keys are
//! rejected with their line number, and command-line overrides take
//! precedence over file values.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Config {
    pub dataset_dir: PathBuf,
    pub embedding_size: usize,
    pub hidden_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub cluster_number: usize,
    pub beam_size: usize,
    pub alpha: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub path_length: usize,
    pub rollouts_train: usize,
    pub rollouts_test: usize,
    pub epochs: usize,
    pub seed: u64,
    pub entropy_beta: f64,
    pub baseline: bool,
}

const KNOWN_KEYS: &[&str] = &[
    "dataset_dir",
    "embedding_size",
    "hidden_size",
    "batch_size",
    "learning_rate",
    "cluster_number",
    "beam_size",
    "alpha",
    "delta",
    "epsilon",
    "path_length",
    "rollouts_train",
    "rollouts_test",
    "epochs",
    "seed",
    "entropy_beta",
    "baseline",
];

/// Raw key -> (value, line) map from a config file plus overrides.
fn parse_pairs(path: &Path) -> Result<HashMap<String, (String, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "{}:{}: expected key=value, found {line:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "{}:{}: unknown key {key:?}",
                path.display(),
                lineno + 1
            )));
        }
        if pairs.insert(key.clone(), (value, lineno + 1)).is_some() {
            return Err(Error::Config(format!(
                "{}:{}: duplicate key {key:?}",
                path.display(),
                lineno + 1
            )));
        }
    }
    Ok(pairs)
}

fn apply_overrides(
    pairs: &mut HashMap<String, (String, usize)>,
    overrides: &[String],
) -> Result<()> {
    for item in overrides {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            Error::Config(format!("override {item:?} is not of the form key=value"))
        })?;
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key {key:?} in override")));
        }
        pairs.insert(key.to_string(), (value.trim().to_string(), 0));
    }
    Ok(())
}

struct Lookup<'a> {
    pairs: &'a HashMap<String, (String, usize)>,
    path: &'a Path,
}

impl Lookup<'_> {
    fn context(&self, key: &str) -> String {
        match self.pairs.get(key) {
            Some((_, 0)) | None => format!("key {key:?}"),
            Some((_, line)) => format!("{}:{line}: key {key:?}", self.path.display()),
        }
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.pairs
            .get(key)
            .map(|(v, _)| v.as_str())
            .ok_or_else(|| Error::Config(format!("missing required key {key:?}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, value: &str, kind: &str) -> Result<T> {
        value.parse().map_err(|_| {
            Error::Config(format!("{}: expected {kind}, found {value:?}", self.context(key)))
        })
    }

    fn usize_req(&self, key: &str) -> Result<usize> {
        let v = self.required(key)?;
        self.parse(key, v, "a positive integer")
    }

    fn usize_opt(&self, key: &str, default: usize) -> Result<usize> {
        match self.pairs.get(key) {
            None => Ok(default),
            Some((v, _)) => self.parse(key, v, "a positive integer"),
        }
    }

    fn f64_req(&self, key: &str) -> Result<f64> {
        let v = self.required(key)?;
        self.parse(key, v, "a number")
    }

    fn f64_opt(&self, key: &str, default: f64) -> Result<f64> {
        match self.pairs.get(key) {
            None => Ok(default),
            Some((v, _)) => self.parse(key, v, "a number"),
        }
    }

    fn u64_req(&self, key: &str) -> Result<u64> {
        let v = self.required(key)?;
        self.parse(key, v, "an integer")
    }

    fn bool_opt(&self, key: &str, default: bool) -> Result<bool> {
        match self.pairs.get(key) {
            None => Ok(default),
            Some((v, _)) => match v.as_str() {
                "on" | "true" | "1" => Ok(true),
                "off" | "false" | "0" => Ok(false),
                other => Err(Error::Config(format!(
                    "{}: expected on/off, found {other:?}",
                    self.context(key)
                ))),
            },
        }
    }
}

impl Config {
    /// Load a config file, apply `key=value` overrides, and validate ranges.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let mut pairs = parse_pairs(path)?;
        apply_overrides(&mut pairs, overrides)?;
        let lk = Lookup {
            pairs: &pairs,
            path,
        };

        let cfg = Config {
            dataset_dir: PathBuf::from(lk.required("dataset_dir")?),
            embedding_size: lk.usize_opt("embedding_size", 50)?,
            hidden_size: lk.usize_opt("hidden_size", 50)?,
            batch_size: lk.usize_req("batch_size")?,
            learning_rate: lk.f64_req("learning_rate")?,
            cluster_number: lk.usize_req("cluster_number")?,
            beam_size: lk.usize_req("beam_size")?,
            alpha: lk.f64_req("alpha")?,
            delta: lk.f64_req("delta")?,
            epsilon: lk.f64_opt("epsilon", 0.1)?,
            path_length: lk.usize_opt("path_length", 3)?,
            rollouts_train: lk.usize_opt("rollouts_train", 20)?,
            rollouts_test: lk.usize_opt("rollouts_test", 100)?,
            epochs: lk.usize_req("epochs")?,
            seed: lk.u64_req("seed")?,
            entropy_beta: lk.f64_opt("entropy_beta", 0.0)?,
            baseline: lk.bool_opt("baseline", true)?,
        };
        cfg.validate(&lk)?;
        Ok(cfg)
    }

    fn validate(&self, lk: &Lookup) -> Result<()> {
        let positive = |key: &str, v: usize| -> Result<()> {
            if v == 0 {
                return Err(Error::Config(format!(
                    "{}: must be at least 1",
                    lk.context(key)
                )));
            }
            Ok(())
        };
        positive("embedding_size", self.embedding_size)?;
        positive("hidden_size", self.hidden_size)?;
        positive("batch_size", self.batch_size)?;
        positive("cluster_number", self.cluster_number)?;
        positive("beam_size", self.beam_size)?;
        positive("path_length", self.path_length)?;
        positive("rollouts_train", self.rollouts_train)?;
        positive("rollouts_test", self.rollouts_test)?;
        if self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "{}: must be positive",
                lk.context("learning_rate")
            )));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config(format!(
                "{}: must be nonnegative",
                lk.context("alpha")
            )));
        }
        if self.delta < 0.0 {
            return Err(Error::Config(format!(
                "{}: must be nonnegative",
                lk.context("delta")
            )));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "{}: must be positive",
                lk.context("epsilon")
            )));
        }
        if self.entropy_beta < 0.0 {
            return Err(Error::Config(format!(
                "{}: must be nonnegative",
                lk.context("entropy_beta")
            )));
        }
        // The policy networks tie their recurrent width to twice the
        // embedding size, so a differing hidden_size is unsupported.
        if self.hidden_size != self.embedding_size {
            return Err(Error::Config(format!(
                "{}: hidden_size must equal embedding_size (networks use twice the embedding size internally)",
                lk.context("hidden_size")
            )));
        }
        Ok(())
    }

    /// Echo the resolved configuration as sorted key=value lines.
    pub fn echo(&self) -> String {
        format!(
            "alpha={}\nbatch_size={}\nbaseline={}\nbeam_size={}\ncluster_number={}\ndataset_dir={}\ndelta={}\nembedding_size={}\nentropy_beta={}\nepochs={}\nepsilon={}\nhidden_size={}\nlearning_rate={}\npath_length={}\nrollouts_test={}\nrollouts_train={}\nseed={}\n",
            self.alpha,
            self.batch_size,
            if self.baseline { "on" } else { "off" },
            self.beam_size,
            self.cluster_number,
            self.dataset_dir.display(),
            self.delta,
            self.embedding_size,
            self.entropy_beta,
            self.epochs,
            self.epsilon,
            self.hidden_size,
            self.learning_rate,
            self.path_length,
            self.rollouts_test,
            self.rollouts_train,
            self.seed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f
    }

    const BASE: &[&str] = &[
        "dataset_dir = /tmp/data",
        "batch_size = 128",
        "learning_rate = 0.01",
        "cluster_number = 75",
        "beam_size = 100",
        "alpha = 0.15",
        "delta = 0.20",
        "epochs = 10",
        "seed = 42",
    ];

    #[test]
    fn parses_reference_config_with_defaults() {
        let f = write_config(BASE);
        let cfg = Config::load(f.path(), &[]).unwrap();
        assert_eq!(cfg.cluster_number, 75);
        assert_eq!(cfg.alpha, 0.15);
        assert_eq!(cfg.delta, 0.20);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.batch_size, 128);
        assert_eq!(cfg.beam_size, 100);
        // Defaults.
        assert_eq!(cfg.embedding_size, 50);
        assert_eq!(cfg.hidden_size, 50);
        assert_eq!(cfg.epsilon, 0.1);
        assert_eq!(cfg.path_length, 3);
        assert_eq!(cfg.rollouts_train, 20);
        assert_eq!(cfg.rollouts_test, 100);
        assert_eq!(cfg.entropy_beta, 0.0);
        assert!(cfg.baseline);
        // Echo mentions the parsed values.
        let echo = cfg.echo();
        assert!(echo.contains("cluster_number=75"));
        assert!(echo.contains("alpha=0.15"));
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let mut lines = BASE.to_vec();
        lines.push("mystery_knob = 3");
        let f = write_config(&lines);
        let err = Config::load(f.path(), &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mystery_knob"), "{msg}");
        assert!(msg.contains(":10:"), "{msg}");
    }

    #[test]
    fn bad_value_names_key_and_line() {
        let mut lines = BASE.to_vec();
        lines[1] = "batch_size = lots";
        let f = write_config(&lines);
        let err = Config::load(f.path(), &[]).unwrap_err().to_string();
        assert!(err.contains("batch_size"), "{err}");
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn overrides_take_precedence() {
        let f = write_config(BASE);
        let cfg = Config::load(f.path(), &["alpha=0.25".into(), "epochs=3".into()]).unwrap();
        assert_eq!(cfg.alpha, 0.25);
        assert_eq!(cfg.epochs, 3);
    }

    #[test]
    fn hidden_size_must_match_embedding_size() {
        let mut lines = BASE.to_vec();
        lines.push("hidden_size = 32");
        let f = write_config(&lines);
        assert!(Config::load(f.path(), &[]).is_err());
    }

    #[test]
    fn missing_required_key_is_config_error() {
        let f = write_config(&BASE[1..]);
        let err = Config::load(f.path(), &[]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("dataset_dir"));
    }
}
