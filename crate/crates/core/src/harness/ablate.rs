//! Four-arm ablation: fixed equal weights, shape-distance only, learned
//! weights without sharpness-aware steps, and the full configuration.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::Split;
use crate::error::Result;
use crate::losses::LossKind;
use crate::optim::SharpMinConfig;

use super::config::{LossMode, RunConfig};
use super::eval::{evaluate_model, EvalOptions, EvalSummary};
use super::objective::PreparedCase;
use super::train::{load_prepared, train_on};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Baseline,
    OnlySd,
    NoSharpMin,
    Full,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Baseline, Arm::OnlySd, Arm::NoSharpMin, Arm::Full];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::OnlySd => "only_sd",
            Arm::NoSharpMin => "no_sharpmin",
            Arm::Full => "full",
        }
    }

    /// `base` with this arm's loss mode and sharpness setting.
    pub fn configure(self, base: &RunConfig, seed: u64) -> RunConfig {
        let sharp_on = SharpMinConfig {
            enabled: true,
            ..base.sharpmin
        };
        let sharp_off = SharpMinConfig {
            enabled: false,
            ..base.sharpmin
        };
        let (loss_mode, losses, sharpmin) = match self {
            Arm::Baseline => (LossMode::FixedEqual, base.losses.clone(), sharp_off),
            Arm::OnlySd => (LossMode::Single(LossKind::Sd), None, sharp_off),
            Arm::NoSharpMin => (LossMode::Uncertainty, base.losses.clone(), sharp_off),
            Arm::Full => (LossMode::Uncertainty, base.losses.clone(), sharp_on),
        };
        RunConfig {
            loss_mode,
            losses,
            sharpmin,
            seed,
            out: None,
            noisy_loss: None,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmRun {
    pub arm: Arm,
    pub seed: u64,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub runs: Vec<ArmRun>,
}

impl AblationReport {
    /// Mean validation (DSC, NSD) of `arm` over its seeds.
    pub fn mean(&self, arm: Arm) -> (f64, f64) {
        let runs: Vec<&ArmRun> = self.runs.iter().filter(|r| r.arm == arm).collect();
        let n = runs.len().max(1) as f64;
        (
            runs.iter().map(|r| r.summary.mean_dsc).sum::<f64>() / n,
            runs.iter().map(|r| r.summary.mean_nsd).sum::<f64>() / n,
        )
    }

    /// One row per arm: `config,dsc,nsd`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("config,dsc,nsd\n");
        for arm in Arm::ALL {
            let (d, n) = self.mean(arm);
            let _ = writeln!(out, "{},{d:.6},{n:.6}", arm.name());
        }
        out
    }

    /// One row per (arm, seed): `config,seed,dsc,nsd`.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("config,seed,dsc,nsd\n");
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6}",
                r.arm.name(),
                r.seed,
                r.summary.mean_dsc,
                r.summary.mean_nsd
            );
        }
        out
    }
}

/// Trains every arm for every seed on the same cases and scores the best
/// checkpoint of each on the validation cases.
pub fn ablate_on(base: &RunConfig, train: &[PreparedCase], val: &[PreparedCase]) -> Result<AblationReport> {
    base.validate()?;
    let jobs: Vec<(Arm, u64)> = Arm::ALL
        .iter()
        .flat_map(|&arm| base.ablation_seeds().into_iter().map(move |s| (arm, s)))
        .collect();
    let val_cases: Vec<_> = val.iter().map(|p| p.case.clone()).collect();
    let opts = EvalOptions {
        threshold: base.threshold,
        nsd_tolerance: base.nsd_tolerance,
        timed: false,
    };
    let runs = jobs
        .par_iter()
        .map(|&(arm, seed)| {
            let cfg = arm.configure(base, seed);
            let outcome = train_on(&cfg, train, val)?;
            let records = evaluate_model(&outcome.model, &val_cases, opts)?;
            Ok(ArmRun {
                arm,
                seed,
                summary: EvalSummary::of(&records),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport { runs })
}

pub fn ablate(base: &RunConfig) -> Result<AblationReport> {
    let train = load_prepared(base, Split::Train)?;
    let val = load_prepared(base, Split::Val)?;
    ablate_on(base, &train, &val)
}
