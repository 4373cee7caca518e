//! Run configuration in a flat `key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; see [`RunConfig::KEYS`] for the full list.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datahub::{SplitPlan, SynthSpec};
use crate::error::{Error, Result};
use crate::evalmetrics::NdcgForm;
use crate::metapatch::{LocalTrainConfig, DEFAULT_CODE_DIM};
use crate::momodistill::DistillConfig;
use crate::recmodel::PatchGate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Source {
    Synthetic(SynthSpec),
    MovieLens { dir: PathBuf, min_interactions: usize },
    /// A dataset directory written by `save_dataset`.
    Stored(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Cloud-only incremental training each round.
    BaselineIncremental,
    /// Device personalization each round against a fixed cloud model.
    DcclEOnly,
    /// Device personalization followed by both distillation stages.
    DcclFull,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline-incremental" => Ok(Self::BaselineIncremental),
            "dccl-e-only" => Ok(Self::DcclEOnly),
            "dccl-full" => Ok(Self::DcclFull),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Self::BaselineIncremental => "baseline-incremental",
            Self::DcclEOnly => "dccl-e-only",
            Self::DcclFull => "dccl-full",
        }
    }
}

/// Starting code of a device at the beginning of a round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodeCarry {
    /// Zero: the device starts at the broadcast cloud model.
    Reset,
    /// The code the device ended the previous round with.
    Keep,
    /// The previous code passed through the broadcast encoder, i.e. the
    /// cloud's reconstruction of the device model.
    Encode,
}

impl FromStr for CodeCarry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reset" => Ok(Self::Reset),
            "keep" => Ok(Self::Keep),
            "encode" => Ok(Self::Encode),
            _ => Err(Error::Config(format!("unknown code_carry {s:?}"))),
        }
    }
}

impl CodeCarry {
    pub fn name(self) -> &'static str {
        match self {
            Self::Reset => "reset",
            Self::Keep => "keep",
            Self::Encode => "encode",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub source: Source,
    pub split: SplitPlan,
    /// Slices consumed per round; rounds = slices / interval.
    pub interval: usize,
    /// Caps the number of rounds; `Some(0)` stops after pretraining.
    pub round_limit: Option<usize>,
    pub mode: Mode,
    pub code_dim: usize,
    pub seed: u64,
    pub output: PathBuf,
    pub pretrain: DistillConfig,
    pub pretrain_basis: DistillConfig,
    pub cloud: DistillConfig,
    pub device: LocalTrainConfig,
    pub code_carry: CodeCarry,
    pub ndcg: NdcgForm,
    pub groups: usize,
    pub max_history: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let cloud = DistillConfig::default();
        Self {
            source: Source::Synthetic(SynthSpec::default()),
            split: SplitPlan::default(),
            interval: 1,
            round_limit: None,
            mode: Mode::DcclFull,
            code_dim: DEFAULT_CODE_DIM,
            seed: 0,
            output: PathBuf::from("dccl-out"),
            pretrain: DistillConfig {
                beta: 0.0,
                epochs: 5,
                ..cloud.clone()
            },
            pretrain_basis: cloud.clone(),
            cloud,
            device: LocalTrainConfig::default(),
            code_carry: CodeCarry::Encode,
            ndcg: NdcgForm::Standard,
            groups: crate::evalmetrics::DEFAULT_GROUPS,
            max_history: 50,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_gate(v: &str) -> Result<PatchGate> {
    let bits: Vec<&str> = v.split(',').map(str::trim).collect();
    if bits.len() != 3 {
        return Err(Error::Config(format!("gate needs three comma-separated 0/1 flags, got {v:?}")));
    }
    let mut g = [false; 3];
    for (slot, b) in g.iter_mut().zip(&bits) {
        *slot = match *b {
            "1" => true,
            "0" => false,
            _ => return Err(Error::Config(format!("gate flag {b:?} is not 0 or 1"))),
        };
    }
    Ok(PatchGate(g))
}

fn gate_text(g: PatchGate) -> String {
    g.0.iter().map(|&b| if b { "1" } else { "0" }).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every accepted key.
    pub const KEYS: &'static [&'static str] = &[
        "source",
        "movielens_dir",
        "min_interactions",
        "dataset_dir",
        "synth.users",
        "synth.items",
        "synth.clusters",
        "synth.alpha",
        "synth.noise",
        "synth.seed",
        "synth.min_events",
        "synth.mean_events",
        "synth.max_events",
        "synth.item_skew",
        "synth.cluster_skew",
        "pretrain_fraction",
        "slices",
        "interval",
        "rounds",
        "eval_negatives",
        "mode",
        "code_dim",
        "seed",
        "output",
        "beta",
        "gate",
        "pretrain.lr",
        "pretrain.epochs",
        "pretrain.batch_size",
        "pretrain_basis.lr",
        "pretrain_basis.epochs",
        "pretrain_basis.batch_size",
        "cloud.lr",
        "cloud.epochs",
        "cloud.batch_size",
        "negatives",
        "device.lr",
        "device.epochs",
        "device.batch_size",
        "device.negatives",
        "code_carry",
        "ndcg",
        "groups",
        "max_history",
    ];

    pub fn rounds(&self) -> usize {
        let all = self.split.slices / self.interval;
        self.round_limit.map_or(all, |n| n.min(all))
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if self.interval == 0 || !self.split.slices.is_multiple_of(self.interval) {
            return Err(Error::Config(format!(
                "interval {} must divide slices {}",
                self.interval, self.split.slices
            )));
        }
        if self.code_dim == 0 || self.groups == 0 || self.max_history == 0 {
            return Err(Error::Config("code_dim, groups and max_history must be positive".into()));
        }
        self.pretrain.validate()?;
        self.pretrain_basis.validate()?;
        self.cloud.validate()?;
        self.device.validate()?;
        if let Source::Synthetic(s) = &self.source {
            s.validate()?;
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        fn synth(c: &mut RunConfig) -> &mut SynthSpec {
            if !matches!(c.source, Source::Synthetic(_)) {
                c.source = Source::Synthetic(SynthSpec::default());
            }
            match &mut c.source {
                Source::Synthetic(s) => s,
                _ => unreachable!(),
            }
        }
        match key {
            "source" => {
                self.source = match v {
                    "synthetic" => match &self.source {
                        Source::Synthetic(_) => self.source.clone(),
                        _ => Source::Synthetic(SynthSpec::default()),
                    },
                    "movielens" => match &self.source {
                        Source::MovieLens { .. } => self.source.clone(),
                        _ => Source::MovieLens {
                            dir: PathBuf::from("ml-1m"),
                            min_interactions: 20,
                        },
                    },
                    "dataset" => match &self.source {
                        Source::Stored(_) => self.source.clone(),
                        _ => Source::Stored(PathBuf::from("dataset")),
                    },
                    _ => return Err(Error::Config(format!("unknown source {v:?}"))),
                }
            }
            "movielens_dir" => {
                let keep = match &self.source {
                    Source::MovieLens { min_interactions, .. } => *min_interactions,
                    _ => 20,
                };
                self.source = Source::MovieLens {
                    dir: PathBuf::from(v),
                    min_interactions: keep,
                };
            }
            "min_interactions" => {
                let n = parse(key, v)?;
                match &mut self.source {
                    Source::MovieLens { min_interactions, .. } => *min_interactions = n,
                    _ => {
                        self.source = Source::MovieLens {
                            dir: PathBuf::from("ml-1m"),
                            min_interactions: n,
                        }
                    }
                }
            }
            "dataset_dir" => self.source = Source::Stored(PathBuf::from(v)),
            "synth.users" => synth(self).users = parse(key, v)?,
            "synth.items" => synth(self).items = parse(key, v)?,
            "synth.clusters" => synth(self).clusters = parse(key, v)?,
            "synth.alpha" => synth(self).alpha = parse(key, v)?,
            "synth.noise" => synth(self).noise = parse(key, v)?,
            "synth.seed" => synth(self).seed = parse(key, v)?,
            "synth.min_events" => synth(self).min_events = parse(key, v)?,
            "synth.mean_events" => synth(self).mean_events = parse(key, v)?,
            "synth.max_events" => synth(self).max_events = parse(key, v)?,
            "synth.item_skew" => synth(self).item_skew = parse(key, v)?,
            "synth.cluster_skew" => synth(self).cluster_skew = parse(key, v)?,
            "pretrain_fraction" => self.split.pretrain_fraction = parse(key, v)?,
            "slices" => self.split.slices = parse(key, v)?,
            "interval" => self.interval = parse(key, v)?,
            "rounds" => self.round_limit = if v == "all" { None } else { Some(parse(key, v)?) },
            "eval_negatives" => self.split.eval_negatives = parse(key, v)?,
            "mode" => self.mode = v.parse()?,
            "code_dim" => self.code_dim = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "output" => self.output = PathBuf::from(v),
            "beta" => {
                let b = parse(key, v)?;
                self.cloud.beta = b;
                self.pretrain_basis.beta = b;
            }
            "gate" => {
                let g = parse_gate(v)?;
                self.device.gate = g;
                self.cloud.gate = g;
                self.pretrain_basis.gate = g;
            }
            "pretrain.lr" => self.pretrain.lr = parse(key, v)?,
            "pretrain.epochs" => self.pretrain.epochs = parse(key, v)?,
            "pretrain.batch_size" => self.pretrain.batch_size = parse(key, v)?,
            "pretrain_basis.lr" => self.pretrain_basis.lr = parse(key, v)?,
            "pretrain_basis.epochs" => self.pretrain_basis.epochs = parse(key, v)?,
            "pretrain_basis.batch_size" => self.pretrain_basis.batch_size = parse(key, v)?,
            "cloud.lr" => self.cloud.lr = parse(key, v)?,
            "cloud.epochs" => self.cloud.epochs = parse(key, v)?,
            "cloud.batch_size" => self.cloud.batch_size = parse(key, v)?,
            "negatives" => {
                let n = parse(key, v)?;
                self.pretrain.negatives = n;
                self.pretrain_basis.negatives = n;
                self.cloud.negatives = n;
            }
            "device.lr" => self.device.lr = parse(key, v)?,
            "device.epochs" => self.device.epochs = parse(key, v)?,
            "device.batch_size" => self.device.batch_size = parse(key, v)?,
            "device.negatives" => self.device.negatives = parse(key, v)?,
            "code_carry" => self.code_carry = v.parse()?,
            "ndcg" => self.ndcg = v.parse()?,
            "groups" => self.groups = parse(key, v)?,
            "max_history" => self.max_history = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse_text(text: &str, path: &Path) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text, path)?;
        Ok(c)
    }

    /// Applies every setting in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected `key = value`".into(),
            })?;
            self.set(k.trim(), v).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, path)
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.source {
            Source::Synthetic(sp) => {
                put("source", "synthetic".into());
                put("synth.users", sp.users.to_string());
                put("synth.items", sp.items.to_string());
                put("synth.clusters", sp.clusters.to_string());
                put("synth.alpha", sp.alpha.to_string());
                put("synth.noise", sp.noise.to_string());
                put("synth.seed", sp.seed.to_string());
                put("synth.min_events", sp.min_events.to_string());
                put("synth.mean_events", sp.mean_events.to_string());
                put("synth.max_events", sp.max_events.to_string());
                put("synth.item_skew", sp.item_skew.to_string());
                put("synth.cluster_skew", sp.cluster_skew.to_string());
            }
            Source::MovieLens { dir, min_interactions } => {
                put("source", "movielens".into());
                put("movielens_dir", dir.display().to_string());
                put("min_interactions", min_interactions.to_string());
            }
            Source::Stored(dir) => {
                put("source", "dataset".into());
                put("dataset_dir", dir.display().to_string());
            }
        }
        put("pretrain_fraction", self.split.pretrain_fraction.to_string());
        put("slices", self.split.slices.to_string());
        put("interval", self.interval.to_string());
        put("rounds", self.round_limit.map_or("all".into(), |n| n.to_string()));
        put("eval_negatives", self.split.eval_negatives.to_string());
        put("mode", self.mode.name().into());
        put("code_dim", self.code_dim.to_string());
        put("seed", self.seed.to_string());
        put("output", self.output.display().to_string());
        put("beta", self.cloud.beta.to_string());
        put("gate", gate_text(self.device.gate));
        put("pretrain.lr", self.pretrain.lr.to_string());
        put("pretrain.epochs", self.pretrain.epochs.to_string());
        put("pretrain.batch_size", self.pretrain.batch_size.to_string());
        put("pretrain_basis.lr", self.pretrain_basis.lr.to_string());
        put("pretrain_basis.epochs", self.pretrain_basis.epochs.to_string());
        put("pretrain_basis.batch_size", self.pretrain_basis.batch_size.to_string());
        put("cloud.lr", self.cloud.lr.to_string());
        put("cloud.epochs", self.cloud.epochs.to_string());
        put("cloud.batch_size", self.cloud.batch_size.to_string());
        put("negatives", self.cloud.negatives.to_string());
        put("device.lr", self.device.lr.to_string());
        put("device.epochs", self.device.epochs.to_string());
        put("device.batch_size", self.device.batch_size.to_string());
        put("device.negatives", self.device.negatives.to_string());
        put("code_carry", self.code_carry.name().into());
        put(
            "ndcg",
            match self.ndcg {
                NdcgForm::Standard => "standard",
                NdcgForm::Indicator => "indicator",
            }
            .into(),
        );
        put("groups", self.groups.to_string());
        put("max_history", self.max_history.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("synth.users", "300").unwrap();
        c.set("gate", "1,0,1").unwrap();
        c.set("beta", "0.5").unwrap();
        c.set("slices", "4").unwrap();
        c.set("interval", "2").unwrap();
        c.set("code_carry", "keep").unwrap();
        let back = RunConfig::parse_text(&c.to_text(), Path::new("c")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.rounds(), 2);
    }

    #[test]
    fn every_key_is_accepted() {
        let t = RunConfig::default().to_text();
        for line in t.lines() {
            let k = line.split_once('=').unwrap().0.trim();
            assert!(RunConfig::KEYS.contains(&k), "{k}");
        }
    }

    #[test]
    fn errors_name_the_line() {
        let err = RunConfig::parse_text("seed = 1\nbogus = 2\n", Path::new("c.conf")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(RunConfig::parse_text("gate = 1,1\n", Path::new("c")).is_err());
        let mut c = RunConfig::default();
        c.split.slices = 3;
        c.interval = 2;
        assert!(c.validate().is_err());
    }
}
