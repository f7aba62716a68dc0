//! Overlap (DSC) and boundary (NSD) scores for binary masks in 2D or 3D.
//!
//! Distances are Euclidean between pixel centers, in pixel units.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::edt::squared_edt;
use crate::error::{Error, Result};
use crate::grid::{strides_of, Grid};

/// A grid whose entries are exactly 0 or 1, of rank 2 or 3.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    shape: Vec<usize>,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn from_grid(grid: &Grid) -> Result<Self> {
        if !(grid.rank() == 2 || grid.rank() == 3) {
            return Err(Error::Shape(format!("mask must be 2D or 3D, got {:?}", grid.shape())));
        }
        let bits = grid
            .data()
            .iter()
            .enumerate()
            .map(|(index, &value)| match value {
                0.0 => Ok(false),
                1.0 => Ok(true),
                value => Err(Error::NonBinary { index, value }),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BinaryMask {
            shape: grid.shape().to_vec(),
            bits,
        })
    }

    pub fn from_bits(shape: &[usize], bits: Vec<bool>) -> Result<Self> {
        if !(shape.len() == 2 || shape.len() == 3) || shape.iter().product::<usize>() != bits.len() {
            return Err(Error::Shape(format!("{} bits for shape {:?}", bits.len(), shape)));
        }
        Ok(BinaryMask {
            shape: shape.to_vec(),
            bits,
        })
    }

    /// Foreground where `prob >= threshold`.
    pub fn threshold(prob: &Grid, threshold: f64) -> Result<Self> {
        Self::from_bits(prob.shape(), prob.data().iter().map(|&p| p >= threshold).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_grid(&self) -> Grid {
        Grid::new(
            self.shape.clone(),
            self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask shape is consistent")
    }

    fn same_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }
}

/// Tolerance for NSD, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NsdConfig {
    pub tolerance: f64,
}

impl NsdConfig {
    pub fn new(tolerance: f64) -> Result<Self> {
        if !(tolerance > 0.0) || !tolerance.is_finite() {
            return Err(Error::InvalidArgument(format!("NSD tolerance must be > 0, got {tolerance}")));
        }
        Ok(NsdConfig { tolerance })
    }

    /// 2.0 for 2D masks, 1.0 for 3D.
    pub fn default_for_rank(rank: usize) -> Self {
        NsdConfig {
            tolerance: if rank == 3 { 1.0 } else { 2.0 },
        }
    }
}

/// `2|y∩ŷ| / (|y|+|ŷ|)`, and 1.0 when both are empty.
pub fn dsc(y: &BinaryMask, y_hat: &BinaryMask) -> Result<f64> {
    y.same_shape(y_hat)?;
    let inter = y.bits.iter().zip(&y_hat.bits).filter(|(a, b)| **a && **b).count();
    let total = y.count() + y_hat.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Boundary pixels of a mask as flat row-major indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundarySet {
    pub shape: Vec<usize>,
    pub indices: Vec<usize>,
}

impl BoundarySet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn coords(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        let strides = strides_of(&self.shape);
        self.indices.iter().map(move |&i| unravel(i, &self.shape, &strides))
    }

    fn as_features(&self) -> Vec<bool> {
        let mut f = vec![false; self.shape.iter().product()];
        for &i in &self.indices {
            f[i] = true;
        }
        f
    }
}

fn unravel(i: usize, shape: &[usize], strides: &[usize]) -> Vec<usize> {
    shape.iter().zip(strides).map(|(&n, &s)| (i / s) % n).collect()
}

/// Foreground pixels with at least one face-adjacent background neighbour
/// (4-connectivity in 2D, 6 in 3D). Cells outside the grid count as
/// background.
pub fn boundary_points(mask: &BinaryMask) -> BoundarySet {
    let shape = &mask.shape;
    let strides = strides_of(shape);
    let mut indices = Vec::new();
    for (i, &on) in mask.bits.iter().enumerate() {
        if !on {
            continue;
        }
        let on_edge = shape.iter().zip(&strides).any(|(&n, &s)| {
            let c = (i / s) % n;
            c == 0 || c + 1 == n || !mask.bits[i - s] || !mask.bits[i + s]
        });
        if on_edge {
            indices.push(i);
        }
    }
    BoundarySet {
        shape: shape.clone(),
        indices,
    }
}

fn surface_ratio(within_a: usize, within_b: usize, a: &BoundarySet, b: &BoundarySet) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (within_a + within_b) as f64 / (a.len() + b.len()) as f64,
    }
}

fn within(dist2: f64, tolerance: f64) -> bool {
    dist2.sqrt() <= tolerance
}

/// Normalized surface dice using an exact distance transform of each
/// boundary set.
pub fn nsd(y: &BinaryMask, y_hat: &BinaryMask, cfg: NsdConfig) -> Result<f64> {
    y.same_shape(y_hat)?;
    let (s, s_hat) = (boundary_points(y), boundary_points(y_hat));
    if s.is_empty() || s_hat.is_empty() {
        return Ok(surface_ratio(0, 0, &s, &s_hat));
    }
    let to_hat = squared_edt(&y.shape, &s_hat.as_features());
    let to_s = squared_edt(&y.shape, &s.as_features());
    let a = s.indices.iter().filter(|&&i| within(to_hat[i], cfg.tolerance)).count();
    let b = s_hat.indices.iter().filter(|&&i| within(to_s[i], cfg.tolerance)).count();
    Ok(surface_ratio(a, b, &s, &s_hat))
}

/// Same contract as [`nsd`], by exhaustive pairwise distances.
pub fn nsd_bruteforce(y: &BinaryMask, y_hat: &BinaryMask, cfg: NsdConfig) -> Result<f64> {
    y.same_shape(y_hat)?;
    let (s, s_hat) = (boundary_points(y), boundary_points(y_hat));
    let pa: Vec<Vec<usize>> = s.coords().collect();
    let pb: Vec<Vec<usize>> = s_hat.coords().collect();
    let min_d2 = |p: &Vec<usize>, set: &[Vec<usize>]| {
        set.iter()
            .map(|q| {
                p.iter()
                    .zip(q)
                    .map(|(&a, &b)| {
                        let d = a as f64 - b as f64;
                        d * d
                    })
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let a = pa.iter().filter(|p| within(min_d2(p, &pb), cfg.tolerance)).count();
    let b = pb.iter().filter(|p| within(min_d2(p, &pa), cfg.tolerance)).count();
    Ok(surface_ratio(a, b, &s, &s_hat))
}

/// Per-case evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub case_id: String,
    pub dsc: f64,
    pub nsd: f64,
    pub seconds: f64,
}

/// Renders `case_id,dsc,nsd,seconds` rows sorted by case id, 6 decimals.
pub fn eval_csv(records: &[EvalRecord]) -> String {
    let mut sorted: Vec<&EvalRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let mut out = String::from("case_id,dsc,nsd,seconds\n");
    for r in sorted {
        let _ = writeln!(out, "{},{:.6},{:.6},{:.6}", r.case_id, r.dsc, r.nsd, r.seconds);
    }
    out
}

pub fn write_eval_csv(records: &[EvalRecord], path: &Path) -> Result<()> {
    std::fs::write(path, eval_csv(records)).map_err(|e| Error::io(path, e))
}
