use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{self, LossConfig, LossKind};
use crate::model::{STUDENT_WIDTH, TEACHER_WIDTH};
use crate::optim::{AdamWConfig, OptimizerKind, PlateauScheduler, SharpMinConfig};

/// How the active losses are turned into one training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LossMode {
    /// One loss, unweighted.
    Single(LossKind),
    /// Unweighted mean of the active losses.
    FixedEqual,
    /// Learned noise weighting of the active losses.
    Uncertainty,
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_equal" => Ok(LossMode::FixedEqual),
            "uncertainty" => Ok(LossMode::Uncertainty),
            other => match other.strip_prefix("single:") {
                Some(name) => Ok(LossMode::Single(name.parse()?)),
                None => Err(Error::Config(format!("unknown loss mode {other:?}"))),
            },
        }
    }
}

impl TryFrom<String> for LossMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LossMode> for String {
    fn from(m: LossMode) -> String {
        m.to_string()
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossMode::Single(k) => write!(f, "single:{k}"),
            LossMode::FixedEqual => f.write_str("fixed_equal"),
            LossMode::Uncertainty => f.write_str("uncertainty"),
        }
    }
}

/// Either a preset name (`table2`, `section22`) or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LossSpec {
    Preset(String),
    List(Vec<LossKind>),
}

impl LossSpec {
    pub fn resolve(&self) -> Result<Vec<LossKind>> {
        let kinds = match self {
            LossSpec::Preset(name) => {
                losses::preset(name).ok_or_else(|| Error::Config(format!("unknown loss preset {name:?}")))?
            }
            LossSpec::List(list) => list.clone(),
        };
        if kinds.is_empty() {
            return Err(Error::Config("loss set is empty".into()));
        }
        let mut seen = kinds.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != kinds.len() {
            return Err(Error::Config(format!("duplicate loss in {kinds:?}")));
        }
        Ok(kinds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub cooldown: usize,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            factor: 0.9,
            patience: 5,
            cooldown: 0,
        }
    }
}

impl PlateauConfig {
    pub fn scheduler(&self) -> Result<PlateauScheduler> {
        PlateauScheduler::new(self.factor, self.patience, self.cooldown)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// When set, `train` first fits a teacher of `teacher_width`, then
    /// distills the student from it.
    pub enabled: bool,
    pub teacher_width: usize,
    pub epochs: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            enabled: false,
            teacher_width: TEACHER_WIDTH,
            epochs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset root containing `manifest.json`.
    pub data: PathBuf,
    /// Where checkpoints and logs are written; nothing is written when unset.
    pub out: Option<PathBuf>,
    pub loss_mode: LossMode,
    /// Active losses; defaults to the `table2` preset. Single mode implies
    /// its own one-element set.
    pub losses: Option<LossSpec>,
    pub optimizer: OptimizerKind,
    pub sharpmin: SharpMinConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub width: usize,
    pub adamw: AdamWConfig,
    pub plateau: PlateauConfig,
    pub loss_config: LossConfig,
    pub nsd_tolerance: f64,
    pub threshold: f64,
    pub distill: DistillConfig,
    /// Seeds for `ablate`; empty means `[seed]`.
    pub seeds: Vec<u64>,
    /// Replace this loss's target with a fresh random mask every step.
    pub noisy_loss: Option<LossKind>,
    /// Use only the first N training cases.
    pub train_limit: Option<usize>,
    /// Use only the first N validation cases.
    pub val_limit: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: PathBuf::from("data"),
            out: None,
            loss_mode: LossMode::Uncertainty,
            losses: None,
            optimizer: OptimizerKind::Adamw,
            sharpmin: SharpMinConfig::default(),
            lr: 1e-3,
            epochs: 60,
            batch_size: 2,
            seed: 42,
            width: STUDENT_WIDTH,
            adamw: AdamWConfig::default(),
            plateau: PlateauConfig::default(),
            loss_config: LossConfig::default(),
            nsd_tolerance: 2.0,
            threshold: 0.5,
            distill: DistillConfig::default(),
            seeds: Vec::new(),
            noisy_loss: None,
            train_limit: None,
            val_limit: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    /// Loss kinds the objective is built from, in order.
    pub fn active_losses(&self) -> Result<Vec<LossKind>> {
        match self.loss_mode {
            LossMode::Single(kind) => match &self.losses {
                None => Ok(vec![kind]),
                Some(spec) => {
                    let list = spec.resolve()?;
                    if list != [kind] {
                        return Err(Error::Config(format!(
                            "single:{kind} needs exactly one active loss, got {list:?}"
                        )));
                    }
                    Ok(list)
                }
            },
            _ => self
                .losses
                .clone()
                .unwrap_or_else(|| LossSpec::Preset("table2".into()))
                .resolve(),
        }
    }

    pub fn ablation_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let kinds = self.active_losses()?;
        if let Some(noisy) = self.noisy_loss {
            if !kinds.contains(&noisy) {
                return Err(Error::Config(format!("noisy_loss {noisy} is not active")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.width == 0 || self.distill.teacher_width == 0 {
            return Err(Error::Config("model width must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.nsd_tolerance > 0.0) {
            return Err(Error::Config("nsd_tolerance must be > 0".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("threshold must be in (0, 1)".into()));
        }
        self.sharpmin.validate()?;
        self.loss_config.validate()?;
        self.plateau.scheduler()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_mode_round_trips_through_strings() {
        for s in ["uncertainty", "fixed_equal", "single:sd", "single:dice"] {
            let m: LossMode = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        assert!("single:focal".parse::<LossMode>().is_err());
        assert!("weighted".parse::<LossMode>().is_err());
    }

    #[test]
    fn defaults_follow_the_protocol() {
        let c = RunConfig::default();
        assert_eq!(c.batch_size, 2);
        assert_eq!(c.epochs, 60);
        assert_eq!(c.plateau, PlateauConfig { factor: 0.9, patience: 5, cooldown: 0 });
        assert_eq!(
            c.active_losses().unwrap(),
            vec![LossKind::Dice, LossKind::Bce, LossKind::Sd, LossKind::Iou]
        );
        c.validate().unwrap();
    }

    #[test]
    fn single_mode_needs_one_loss() {
        let mut c = RunConfig { loss_mode: LossMode::Single(LossKind::Sd), ..Default::default() };
        assert_eq!(c.active_losses().unwrap(), vec![LossKind::Sd]);
        c.losses = Some(LossSpec::Preset("table2".into()));
        assert!(c.validate().is_err());
        c.losses = Some(LossSpec::List(vec![LossKind::Sd]));
        c.validate().unwrap();
    }

    #[test]
    fn explicit_defaults_parse_to_default() {
        let text = r#"{
            "data": "data", "out": null, "loss_mode": "uncertainty", "losses": "table2",
            "optimizer": "adamw", "sharpmin": {"enabled": true, "rho": 0.05}, "lr": 0.001,
            "epochs": 60, "batch_size": 2, "seed": 42, "width": 8,
            "adamw": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "weight_decay": 0.01},
            "plateau": {"factor": 0.9, "patience": 5, "cooldown": 0},
            "loss_config": {"smooth": 1e-6, "clamp": 1e-7}, "nsd_tolerance": 2.0, "threshold": 0.5,
            "distill": {"enabled": false, "teacher_width": 16, "epochs": 30}, "seeds": [],
            "noisy_loss": null, "train_limit": null, "val_limit": null
        }"#;
        let c: RunConfig = serde_json::from_str(text).unwrap();
        assert_eq!(RunConfig { losses: None, ..c }, RunConfig::default());
    }

    #[test]
    fn nested_blocks_fill_missing_fields() {
        let c: RunConfig = serde_json::from_str(r#"{"sharpmin": {"enabled": false}, "adamw": {"weight_decay": 0}}"#).unwrap();
        assert_eq!(c.sharpmin.rho, 0.05);
        assert_eq!(c.adamw.beta2, 0.999);
        assert_eq!(c.adamw.weight_decay, 0.0);
    }

    #[test]
    fn json_parsing() {
        let c: RunConfig = serde_json::from_str(
            r#"{"data":"d","loss_mode":"single:sd","sharpmin":{"enabled":false,"rho":0.05},"epochs":3}"#,
        )
        .unwrap();
        assert_eq!(c.loss_mode, LossMode::Single(LossKind::Sd));
        assert_eq!(c.epochs, 3);
        let c: RunConfig = serde_json::from_str(r#"{"losses":"section22"}"#).unwrap();
        assert_eq!(c.active_losses().unwrap()[0], LossKind::Mse);
        let c: RunConfig = serde_json::from_str(r#"{"losses":["dice","sd"]}"#).unwrap();
        assert_eq!(c.active_losses().unwrap(), vec![LossKind::Dice, LossKind::Sd]);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus":1}"#).is_err());
        let bad: RunConfig = serde_json::from_str(r#"{"losses":["dice","dice"]}"#).unwrap();
        assert!(bad.validate().is_err());
    }
}
