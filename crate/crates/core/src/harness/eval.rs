//! Per-case DSC and NSD over a split.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::data::{load_split, Case, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::metrics::{dsc, nsd, BinaryMask, EvalRecord, NsdConfig};
use crate::model::SegModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Probabilities at or above this value count as foreground.
    pub threshold: f64,
    pub nsd_tolerance: f64,
    /// Record wall-clock seconds per case. Off keeps the CSV byte-stable.
    pub timed: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: 0.5,
            nsd_tolerance: 2.0,
            timed: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub cases: usize,
    pub mean_dsc: f64,
    pub mean_nsd: f64,
}

impl EvalSummary {
    pub fn of(records: &[EvalRecord]) -> Self {
        let n = records.len().max(1) as f64;
        EvalSummary {
            cases: records.len(),
            mean_dsc: records.iter().map(|r| r.dsc).sum::<f64>() / n,
            mean_nsd: records.iter().map(|r| r.nsd).sum::<f64>() / n,
        }
    }
}

/// Scores `predict(case)` probability maps against the case masks. Cases
/// run in parallel; records come back sorted by case id.
pub fn evaluate_with<F>(cases: &[Case], opts: EvalOptions, predict: F) -> Result<Vec<EvalRecord>>
where
    F: Fn(&Case) -> Result<Grid> + Sync,
{
    if cases.is_empty() {
        return Err(Error::Dataset("evaluation split is empty".into()));
    }
    let nsd_cfg = NsdConfig::new(opts.nsd_tolerance)?;
    let mut records = cases
        .par_iter()
        .map(|case| {
            let start = Instant::now();
            let prob = predict(case)?;
            let pred = BinaryMask::threshold(&prob, opts.threshold)?;
            let d = dsc(&case.mask, &pred)?;
            let n = nsd(&case.mask, &pred, nsd_cfg)?;
            Ok(EvalRecord {
                case_id: case.id.clone(),
                dsc: d,
                nsd: n,
                seconds: if opts.timed { start.elapsed().as_secs_f64() } else { 0.0 },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok(records)
}

pub fn evaluate_model(model: &SegModel, cases: &[Case], opts: EvalOptions) -> Result<Vec<EvalRecord>> {
    evaluate_with(cases, opts, |c| model.predict(&c.image, &c.prompt))
}

/// Loads `checkpoint` and evaluates it on `split` of the dataset at `data`.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    data: &Path,
    split: Split,
    opts: EvalOptions,
) -> Result<(Vec<EvalRecord>, EvalSummary)> {
    let model = SegModel::load(checkpoint)?;
    let manifest = DatasetManifest::load(data)?;
    let cases = load_split(data, &manifest, split)?;
    let records = evaluate_model(&model, &cases, opts)?;
    let summary = EvalSummary::of(&records);
    Ok((records, summary))
}
