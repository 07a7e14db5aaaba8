//! Run configuration as a flat `key=value` text file with dotted keys, e.g.
//! `policy.cutout.probability=0.15`. Blank lines and `#` comments are
//! ignored; unknown keys are errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::pairs::PairGeometry;
use crate::synthesis::{BackgroundMode, BoxSource, SynthesisSettings};
use crate::tracker::FilterParams;
use crate::transforms::{SchedulePolicy, TransformKind};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub master_seed: u64,
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
    pub box_source: BoxSource,
    pub samples_per_sequence: usize,
    pub pad_ratio: f64,
    pub background_mode: BackgroundMode,
    pub policy: SchedulePolicy,
    pub library_per_sequence: usize,
    pub pair: PairGeometry,
    pub pairs_per_sequence: usize,
    pub materialize_pairs: bool,
    pub filter: FilterParams,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            master_seed: 0,
            data_root: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            box_source: BoxSource::Annotated,
            samples_per_sequence: 100,
            pad_ratio: 0.1,
            background_mode: BackgroundMode::SameSequence,
            policy: SchedulePolicy::default(),
            library_per_sequence: 4,
            pair: PairGeometry::default(),
            pairs_per_sequence: 100,
            materialize_pairs: true,
            filter: FilterParams::default(),
        }
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

impl Config {
    pub fn synthesis_settings(&self) -> SynthesisSettings {
        SynthesisSettings {
            policy: self.policy.clone(),
            pad_ratio: self.pad_ratio,
            background_mode: self.background_mode,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::parse(path, msg),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.pair.validate()?;
        if self.pad_ratio.is_nan() || self.pad_ratio < 0.0 {
            return Err(Error::Config(format!("pad ratio {} must be >= 0", self.pad_ratio)));
        }
        Ok(())
    }

    /// Sets one key. Values use the same syntax as the config file.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let float = || value.parse::<f64>().map_err(|e| format!("{key}: {e}"));
        let uint = || value.parse::<usize>().map_err(|e| format!("{key}: {e}"));
        let boolean = || parse_bool(value).ok_or_else(|| format!("{key}: expected true/false, got {value:?}"));
        match key {
            "seed" => self.master_seed = value.parse().map_err(|e| format!("{key}: {e}"))?,
            "data.root" => self.data_root = PathBuf::from(value),
            "data.out" => self.out_dir = PathBuf::from(value),
            "data.box_source" => {
                self.box_source = BoxSource::parse(value).ok_or_else(|| format!("{key}: unknown source {value:?}"))?
            }
            "synth.num" => self.samples_per_sequence = uint()?,
            "synth.pad_ratio" => self.pad_ratio = float()?,
            "synth.background_mode" => {
                self.background_mode =
                    BackgroundMode::parse(value).ok_or_else(|| format!("{key}: unknown mode {value:?}"))?
            }
            "distractors.library_per_sequence" => self.library_per_sequence = uint()?,
            "pair.template_size" => self.pair.template_size = uint()?,
            "pair.search_size" => self.pair.search_size = uint()?,
            "pair.template_context" => self.pair.template_context = float()?,
            "pair.search_context" => self.pair.search_context = float()?,
            "pair.count" => self.pairs_per_sequence = uint()?,
            "pair.materialize" => self.materialize_pairs = boolean()?,
            "tracker.lambda" => self.filter.lambda = float()?,
            "tracker.learning_rate" => self.filter.learning_rate = float()?,
            "tracker.window_scale" => self.filter.window_scale = float()?,
            "tracker.sigma_factor" => self.filter.sigma_factor = float()?,
            "policy.anisotropic_rescale" => self.policy.anisotropic_rescale = boolean()?,
            _ => {
                let rest = key.strip_prefix("policy.").ok_or_else(|| format!("unknown key {key:?}"))?;
                let (kind, field) = rest.split_once('.').ok_or_else(|| format!("unknown key {key:?}"))?;
                let kind = TransformKind::from_key(kind).ok_or_else(|| format!("unknown transform in {key:?}"))?;
                let k = self.policy.kind_mut(kind);
                match field {
                    "enable" => k.enable = boolean()?,
                    "probability" => k.probability = float()?,
                    "range" => {
                        let (lo, hi) = value.split_once(',').ok_or_else(|| format!("{key}: expected lo,hi"))?;
                        let lo = lo.trim().parse::<f64>().map_err(|e| format!("{key}: {e}"))?;
                        let hi = hi.trim().parse::<f64>().map_err(|e| format!("{key}: {e}"))?;
                        k.range = (lo, hi);
                    }
                    _ => return Err(format!("unknown key {key:?}")),
                }
            }
        }
        Ok(())
    }

    /// Serializes every key. Floats use the shortest representation that
    /// parses back to the same value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("seed", self.master_seed.to_string());
        kv("data.root", self.data_root.display().to_string());
        kv("data.out", self.out_dir.display().to_string());
        kv("data.box_source", self.box_source.key().into());
        kv("synth.num", self.samples_per_sequence.to_string());
        kv("synth.pad_ratio", format!("{:?}", self.pad_ratio));
        kv("synth.background_mode", self.background_mode.key().into());
        kv("distractors.library_per_sequence", self.library_per_sequence.to_string());
        kv("pair.template_size", self.pair.template_size.to_string());
        kv("pair.search_size", self.pair.search_size.to_string());
        kv("pair.template_context", format!("{:?}", self.pair.template_context));
        kv("pair.search_context", format!("{:?}", self.pair.search_context));
        kv("pair.count", self.pairs_per_sequence.to_string());
        kv("pair.materialize", self.materialize_pairs.to_string());
        kv("tracker.lambda", format!("{:?}", self.filter.lambda));
        kv("tracker.learning_rate", format!("{:?}", self.filter.learning_rate));
        kv("tracker.window_scale", format!("{:?}", self.filter.window_scale));
        kv("tracker.sigma_factor", format!("{:?}", self.filter.sigma_factor));
        kv("policy.anisotropic_rescale", self.policy.anisotropic_rescale.to_string());
        for kind in TransformKind::ALL {
            let k = self.policy.kind(kind);
            kv(&format!("policy.{kind}.enable"), k.enable.to_string());
            kv(&format!("policy.{kind}.probability"), format!("{:?}", k.probability));
            if kind != TransformKind::Flip {
                kv(&format!("policy.{kind}.range"), format!("{:?},{:?}", k.range.0, k.range.1));
            }
        }
        s
    }
}
