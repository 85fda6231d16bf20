//! Plain-text `key = value` configuration. Blank lines and `#` comments are
//! ignored; every key must be consumed by the reader or the file is rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::TrainConfig;
use crate::pipeline::ExperimentConfig;
use crate::signal::{Network, PlateScenario};

#[derive(Clone, Debug, Default)]
pub struct KvFile {
    entries: BTreeMap<String, String>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim().to_string();
            if entries.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::config(k, "given more than once"));
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Overrides (or adds) a value, e.g. from a command-line flag.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn required(&mut self, key: &str) -> Result<String> {
        self.take(key).ok_or_else(|| Error::config(key, "required key missing"))
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::config(key, format!("cannot parse `{v}`"))),
        }
    }

    pub fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        let v = self.parsed(key, default)?;
        if !v.is_finite() {
            return Err(Error::config(key, "must be finite"));
        }
        Ok(v)
    }

    pub fn f64_required(&mut self, key: &str) -> Result<f64> {
        let v = self.required(key)?;
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(Error::config(key, format!("cannot parse `{v}` as a finite number"))),
        }
    }

    pub fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        self.parsed(key, default)
    }

    pub fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        self.parsed(key, default)
    }

    pub fn u32_or(&mut self, key: &str, default: u32) -> Result<u32> {
        self.parsed(key, default)
    }

    pub fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        self.parsed(key, default)
    }

    /// Fails on any key nobody asked for.
    pub fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            Some(k) => Err(Error::config(k.clone(), "unknown key")),
            None => Ok(()),
        }
    }
}

/// One synthetic domain: plate material, sensor network and augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub scenario: PlateScenario,
    pub network: Network,
    pub copies: usize,
}

impl SynthConfig {
    pub fn from_kv(mut kv: KvFile) -> Result<Self> {
        let material = kv.required("material")?;
        if material.contains(['/', ',']) || material.is_empty() {
            return Err(Error::config("material", "must be a nonempty name without '/' or ','"));
        }
        let velocity = kv.f64_required("velocity")?;
        let attenuation = kv.f64_or("attenuation", 0.0)?;
        let network = Network::parse(&kv.required("network")?).map_err(|e| Error::config("network", e.to_string()))?;
        let seed = kv.u64_or("seed", 0)?;
        let mut s = PlateScenario::new(&material, velocity, attenuation, seed);
        s.scatter_amplitude = kv.f64_or("scatter_amplitude", s.scatter_amplitude)?;
        s.boundary_reflection = kv.f64_or("boundary_reflection", s.boundary_reflection)?;
        s.acquisition_noise = kv.f64_or("acquisition_noise", s.acquisition_noise)?;
        s.repeats = kv.usize_or("repeats", s.repeats)?;
        s.tone.f0 = kv.f64_or("tone_frequency", s.tone.f0)?;
        s.tone.cycles = kv.u32_or("tone_cycles", s.tone.cycles)?;
        s.tone.fs = kv.f64_or("sample_rate", s.tone.fs)?;
        s.tone.n_samples = kv.usize_or("n_samples", s.tone.n_samples)?;
        let copies = kv.usize_or("copies", 10)?;
        kv.finish()?;
        if copies == 0 {
            return Err(Error::config("copies", "must be >= 1"));
        }
        s.validate()?;
        Ok(Self {
            scenario: s,
            network,
            copies,
        })
    }
}

/// Reads `<prefix>_lr`, `<prefix>_batch_size`, ... over `base`; an empty prefix reads the bare keys.
pub fn train_block(kv: &mut KvFile, prefix: &str, base: TrainConfig) -> Result<TrainConfig> {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}_{k}") };
    let mut c = base;
    c.adam.lr = kv.f64_or(&key("lr"), c.adam.lr)?;
    c.batch_size = kv.usize_or(&key("batch_size"), c.batch_size)?;
    c.max_epochs = kv.usize_or(&key("max_epochs"), c.max_epochs)?;
    c.patience = kv.usize_or(&key("patience"), c.patience)?;
    c.lr_drop_period = kv.usize_or(&key("lr_drop_period"), c.lr_drop_period)?;
    c.lr_drop_factor = kv.f64_or(&key("lr_drop_factor"), c.lr_drop_factor)?;
    c.validate().map_err(|e| match e {
        Error::Config { key: k, msg } if !prefix.is_empty() => Error::config(format!("{prefix}_{k}"), msg),
        other => other,
    })?;
    Ok(c)
}

/// Experiment file: the two dataset directories plus procedure settings.
/// Relative paths resolve against the config file's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub source: PathBuf,
    pub target: PathBuf,
    pub out: PathBuf,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn from_kv(mut kv: KvFile, base_dir: &Path) -> Result<Self> {
        let path = |v: String| {
            let p = PathBuf::from(v);
            if p.is_absolute() { p } else { base_dir.join(p) }
        };
        let source = path(kv.required("source")?);
        let target = path(kv.required("target")?);
        let out = path(kv.take("out").unwrap_or_else(|| "out".into()));
        let seed = kv.u64_or("seed", 0)?;
        let mut e = ExperimentConfig::new(kv.take("case_id").unwrap_or_default(), seed);
        e.q_percent = kv.f64_or("q", e.q_percent)?;
        e.copies = kv.usize_or("copies", e.copies)?;
        e.paper_split = kv.bool_or("paper_split", false)?;
        e.n_bins = kv.usize_or("n_bins", e.n_bins)?;
        e.train = train_block(&mut kv, "train", e.train)?;
        e.finetune = train_block(&mut kv, "finetune", e.finetune)?;
        kv.finish()?;
        e.validate()?;
        Ok(Self {
            source,
            target,
            out,
            experiment: e,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_kv(KvFile::read(path)?, dir)
    }
}
