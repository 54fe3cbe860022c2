//! Run configuration: a flat `key = value` file plus command-line overrides.
//!
//! Lines starting with `#` and blank lines are ignored. Every key is one of
//! [`KEYS`]; anything else is an error. Values given on the command line
//! replace those from the file, which replace the defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pvcnn_core::optim::{OptimizerConfig, OptimizerKind};
use pvcnn_core::train::TrainConfig;
use pvcnn_core::ArchId;
use thiserror::Error;

pub const KEYS: [&str; 15] = [
    "arch",
    "classes",
    "train_manifest",
    "test_manifest",
    "out_dir",
    "image_size",
    "epochs",
    "batch_size",
    "optimizer",
    "learning_rate",
    "momentum",
    "beta1",
    "beta2",
    "seed",
    "augment",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{origin}: cannot read: {message}")]
    Read { origin: String, message: String },
    #[error("{origin}: line {line}: expected `key = value`")]
    Syntax { origin: String, line: usize },
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { origin: String, key: String },
    #[error("{origin}: key `{key}` given twice")]
    DuplicateKey { origin: String, key: String },
    #[error("{key} = `{value}` ({origin}): {message}")]
    Value {
        origin: String,
        key: String,
        value: String,
        message: String,
    },
    #[error("{0} is required")]
    Missing(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub arch: ArchId,
    pub classes: usize,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Square input side.
    pub image_size: usize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            arch: ArchId::Proposed3Conv,
            classes: 2,
            train_manifest: None,
            test_manifest: None,
            out_dir: PathBuf::from("runs/default"),
            image_size: 128,
            train: TrainConfig::default(),
        }
    }
}

/// Raw `key -> (value, origin)` pairs, later layers overriding earlier ones.
#[derive(Debug, Clone, Default)]
pub struct Layers {
    values: BTreeMap<String, (String, String)>,
}

impl Layers {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds every pair of a config file's text. Within one file a key may
    /// appear only once.
    pub fn add_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
                origin: origin.into(),
                line: i + 1,
            })?;
            let key = key.trim();
            if seen.insert(key.to_string(), ()).is_some() {
                return Err(ConfigError::DuplicateKey {
                    origin: origin.into(),
                    key: key.into(),
                });
            }
            self.set(key, value.trim(), &format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn add_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            origin: origin.clone(),
            message: e.to_string(),
        })?;
        self.add_text(&text, &origin)
    }

    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                origin: origin.into(),
                key: key.into(),
            });
        }
        self.values.insert(key.into(), (value.into(), origin.into()));
        Ok(())
    }

    /// Parses and validates every value on top of the defaults.
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        let get = |key: &str| self.values.get(key);
        fn parse<T: std::str::FromStr>(
            entry: Option<&(String, String)>,
            key: &str,
        ) -> Result<Option<T>, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            entry
                .map(|(value, origin)| {
                    value.parse::<T>().map_err(|e| ConfigError::Value {
                        origin: origin.clone(),
                        key: key.into(),
                        value: value.clone(),
                        message: e.to_string(),
                    })
                })
                .transpose()
        }
        let invalid = |key: &str, message: &str| {
            let (value, origin) = self.values.get(key).cloned().unwrap_or_default();
            ConfigError::Value {
                origin,
                key: key.into(),
                value,
                message: message.into(),
            }
        };

        if let Some(a) = parse(get("arch"), "arch")? {
            cfg.arch = a;
        }
        if let Some(c) = parse::<usize>(get("classes"), "classes")? {
            if c != 2 && c != 4 {
                return Err(invalid("classes", "must be 2 or 4"));
            }
            cfg.classes = c;
        }
        cfg.train_manifest = parse(get("train_manifest"), "train_manifest")?;
        cfg.test_manifest = parse(get("test_manifest"), "test_manifest")?;
        if let Some(o) = parse(get("out_dir"), "out_dir")? {
            cfg.out_dir = o;
        }
        if let Some(s) = parse::<usize>(get("image_size"), "image_size")? {
            if s == 0 {
                return Err(invalid("image_size", "must be positive"));
            }
            cfg.image_size = s;
        }
        let t = &mut cfg.train;
        if let Some(e) = parse::<usize>(get("epochs"), "epochs")? {
            if e == 0 {
                return Err(invalid("epochs", "must be at least 1"));
            }
            t.epochs = e;
        }
        if let Some(b) = parse::<usize>(get("batch_size"), "batch_size")? {
            if b == 0 {
                return Err(invalid("batch_size", "must be at least 1"));
            }
            t.batch_size = b;
        }
        if let Some(kind) = parse::<OptimizerKind>(get("optimizer"), "optimizer")? {
            t.optimizer = OptimizerConfig::for_kind(kind);
        }
        if let Some(lr) = parse::<f64>(get("learning_rate"), "learning_rate")? {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(invalid("learning_rate", "must be positive"));
            }
            t.optimizer.learning_rate = lr;
        }
        for (key, slot) in [
            ("momentum", &mut t.optimizer.momentum),
            ("beta1", &mut t.optimizer.beta1),
            ("beta2", &mut t.optimizer.beta2),
        ] {
            if let Some(v) = parse::<f64>(get(key), key)? {
                if !(0.0..1.0).contains(&v) {
                    return Err(invalid(key, "must lie in [0, 1)"));
                }
                *slot = v;
            }
        }
        if let Some(s) = parse(get("seed"), "seed")? {
            t.seed = s;
        }
        if let Some(a) = parse(get("augment"), "augment")? {
            t.augment = a;
        }
        Ok(cfg)
    }
}

impl RunConfig {
    /// The resolved configuration in the file format, one line per key.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let o = &t.optimizer;
        let mut s = String::new();
        let _ = writeln!(s, "arch = {}", self.arch);
        let _ = writeln!(s, "classes = {}", self.classes);
        if let Some(p) = &self.train_manifest {
            let _ = writeln!(s, "train_manifest = {}", p.display());
        }
        if let Some(p) = &self.test_manifest {
            let _ = writeln!(s, "test_manifest = {}", p.display());
        }
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "image_size = {}", self.image_size);
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "optimizer = {}", o.kind.as_str());
        let _ = writeln!(s, "learning_rate = {}", o.learning_rate);
        let _ = writeln!(s, "momentum = {}", o.momentum);
        let _ = writeln!(s, "beta1 = {}", o.beta1);
        let _ = writeln!(s, "beta2 = {}", o.beta2);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "augment = {}", t.augment);
        s
    }
}
