//! Segmentation losses over a probability map and a binary target.
//!
//! Each loss exists twice: a direct evaluation on [`Grid`]s and a graph
//! builder for training. The two are checked against each other in tests.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diff::{Graph, NodeId};
use crate::edt::squared_edt;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::metrics::{boundary_points, BinaryMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Dice,
    Bce,
    Iou,
    Sd,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [LossKind::Mse, LossKind::Dice, LossKind::Bce, LossKind::Iou, LossKind::Sd];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Dice => "dice",
            LossKind::Bce => "bce",
            LossKind::Iou => "iou",
            LossKind::Sd => "sd",
        }
    }

    /// Whether the second operand is a signed distance map rather than a mask.
    pub fn uses_distance_map(self) -> bool {
        self == LossKind::Sd
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "dice" => Ok(LossKind::Dice),
            // binary cross-entropy is the two-class cross-entropy
            "bce" | "ce" => Ok(LossKind::Bce),
            "iou" => Ok(LossKind::Iou),
            "sd" => Ok(LossKind::Sd),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

/// Named loss presets.
pub fn preset(name: &str) -> Option<Vec<LossKind>> {
    use LossKind::*;
    match name {
        "table2" => Some(vec![Dice, Bce, Sd, Iou]),
        "section22" => Some(vec![Mse, Dice, Bce, Sd]),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Added to Dice/IoU numerator and denominator.
    pub smooth: f64,
    /// BCE clamps predictions into `[clamp, 1 - clamp]`.
    pub clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            smooth: 1e-6,
            clamp: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.smooth > 0.0) {
            return Err(Error::Config(format!("smooth must be > 0, got {}", self.smooth)));
        }
        if !(self.clamp > 0.0 && self.clamp < 0.5) {
            return Err(Error::Config(format!("clamp must be in (0, 0.5), got {}", self.clamp)));
        }
        Ok(())
    }
}

fn check(pred: &Grid, target: &Grid) -> Result<()> {
    pred.expect_same_shape(target)
}

pub fn mse_loss(pred: &Grid, target: &Grid) -> Result<f64> {
    check(pred, target)?;
    Ok(pred.zip_map(target, |p, t| (p - t) * (p - t))?.mean())
}

pub fn dice_loss(pred: &Grid, target: &Grid, smooth: f64) -> Result<f64> {
    check(pred, target)?;
    let inter: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| p * t).sum();
    Ok(1.0 - (2.0 * inter + smooth) / (pred.sum() + target.sum() + smooth))
}

pub fn bce_loss(pred: &Grid, target: &Grid, clamp: f64) -> Result<f64> {
    check(pred, target)?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.clamp(clamp, 1.0 - clamp);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / pred.len() as f64)
}

pub fn iou_loss(pred: &Grid, target: &Grid, smooth: f64) -> Result<f64> {
    check(pred, target)?;
    let inter: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| p * t).sum();
    let union = pred.sum() + target.sum() - inter;
    Ok(1.0 - (inter + smooth) / (union + smooth))
}

/// Mean of `pred * sdm`: mass outside the target is charged by its distance
/// to the boundary, mass inside is credited.
pub fn shape_distance_loss(pred: &Grid, sdm: &SignedDistanceMap) -> Result<f64> {
    check(pred, &sdm.grid)?;
    Ok(pred.zip_map(&sdm.grid, |p, d| p * d)?.mean())
}

/// Smallest value [`shape_distance_loss`] can take for predictions in
/// `[0, 1]`: full mass on every pixel with negative distance.
pub fn shape_distance_floor(sdm: &SignedDistanceMap) -> f64 {
    sdm.grid.data().iter().map(|&d| d.min(0.0)).sum::<f64>() / sdm.grid.len() as f64
}

/// Evaluates one loss. `target` is the binary mask; `sdm` is needed only
/// for [`LossKind::Sd`].
pub fn loss_value(
    kind: LossKind,
    pred: &Grid,
    target: &Grid,
    sdm: Option<&SignedDistanceMap>,
    cfg: &LossConfig,
) -> Result<f64> {
    match kind {
        LossKind::Mse => mse_loss(pred, target),
        LossKind::Dice => dice_loss(pred, target, cfg.smooth),
        LossKind::Bce => bce_loss(pred, target, cfg.clamp),
        LossKind::Iou => iou_loss(pred, target, cfg.smooth),
        LossKind::Sd => {
            let sdm = sdm.ok_or_else(|| Error::InvalidArgument("sd loss needs a distance map".into()))?;
            shape_distance_loss(pred, sdm)
        }
    }
}

/// Appends `kind` to `g` for prediction node `pred` of shape `shape`.
/// `target` is the mask node, or the distance-map node for the sd loss.
pub fn build_loss(
    g: &mut Graph,
    kind: LossKind,
    pred: NodeId,
    target: NodeId,
    shape: &[usize],
    cfg: &LossConfig,
) -> NodeId {
    match kind {
        LossKind::Mse => {
            let d = g.sub(pred, target);
            let sq = g.mul(d, d);
            g.mean(sq)
        }
        LossKind::Dice => {
            let pt = g.mul(pred, target);
            let inter = g.sum(pt);
            let twice = g.scale(inter, 2.0);
            let eps = g.scalar(cfg.smooth);
            let num = g.add(twice, eps);
            let sp = g.sum(pred);
            let st = g.sum(target);
            let s = g.add(sp, st);
            let den = g.add(s, eps);
            let ratio = g.div(num, den);
            g.one_minus(ratio)
        }
        LossKind::Bce => {
            let ones = g.constant(Grid::full(shape, 1.0));
            let p = g.clamp(pred, cfg.clamp, 1.0 - cfg.clamp);
            let log_p = g.log(p);
            let one_minus_p = g.sub(ones, p);
            let log_q = g.log(one_minus_p);
            let one_minus_t = g.sub(ones, target);
            let a = g.mul(target, log_p);
            let b = g.mul(one_minus_t, log_q);
            let ll = g.add(a, b);
            let m = g.mean(ll);
            g.scale(m, -1.0)
        }
        LossKind::Iou => {
            let pt = g.mul(pred, target);
            let inter = g.sum(pt);
            let eps = g.scalar(cfg.smooth);
            let sp = g.sum(pred);
            let st = g.sum(target);
            let s = g.add(sp, st);
            let union = g.sub(s, inter);
            let num = g.add(inter, eps);
            let den = g.add(union, eps);
            let ratio = g.div(num, den);
            g.one_minus(ratio)
        }
        LossKind::Sd => {
            let w = g.mul(pred, target);
            g.mean(w)
        }
    }
}

/// Signed Euclidean distance to the mask boundary: negative inside the
/// foreground, positive outside, zero on boundary pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedDistanceMap {
    pub grid: Grid,
    /// Set when the mask was empty or full and no boundary exists; the grid
    /// is then all zeros.
    pub degenerate: bool,
}

pub fn signed_distance_map(target: &BinaryMask) -> SignedDistanceMap {
    let shape = target.shape().to_vec();
    let n_on = target.count();
    if n_on == 0 || n_on == target.bits().len() {
        return SignedDistanceMap {
            grid: Grid::zeros(&shape),
            degenerate: true,
        };
    }
    let boundary = boundary_points(target);
    let mut features = vec![false; target.bits().len()];
    for &i in &boundary.indices {
        features[i] = true;
    }
    let d2 = squared_edt(&shape, &features);
    let data = d2
        .iter()
        .zip(target.bits())
        .map(|(&d, &on)| if on { -d.sqrt() } else { d.sqrt() })
        .map(|v| if v == 0.0 { 0.0 } else { v })
        .collect();
    SignedDistanceMap {
        grid: Grid::new(shape, data).expect("shape preserved"),
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Bindings;

    fn g1(v: &[f64]) -> Grid {
        Grid::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> Grid {
        let mut g = Grid::zeros(&[h, w]);
        for &(r, c) in on {
            g.data_mut()[r * w + c] = 1.0;
        }
        g
    }

    const EPS: f64 = 1e-6;

    #[test]
    fn mse_examples() {
        let t = g1(&[0.0, 1.0, 1.0]);
        assert_eq!(mse_loss(&t, &t).unwrap(), 0.0);
        assert_eq!(mse_loss(&g1(&[0.0, 0.0]), &g1(&[1.0, 1.0])).unwrap(), 1.0);
        assert_eq!(mse_loss(&g1(&[0.5, 0.5]), &g1(&[0.0, 1.0])).unwrap(), 0.25);
    }

    #[test]
    fn dice_examples() {
        let a = mask(4, 4, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert!(dice_loss(&a, &a, EPS).unwrap() <= 1e-6);
        let far = mask(4, 4, &[(3, 3), (3, 2), (2, 3), (2, 2)]);
        assert!((dice_loss(&a, &far, EPS).unwrap() - 1.0).abs() < 1e-6);
        let half = mask(4, 4, &[(0, 0), (0, 1), (3, 3), (3, 2)]);
        assert!((dice_loss(&a, &half, EPS).unwrap() - 0.5).abs() < 1e-6);
        // empty vs empty is a perfect match
        let z = Grid::zeros(&[4, 4]);
        assert_eq!(dice_loss(&z, &z, EPS).unwrap(), 0.0);
    }

    #[test]
    fn bce_examples() {
        let cfg = LossConfig::default();
        let t = mask(3, 3, &[(0, 0), (1, 1)]);
        let half = Grid::full(&[3, 3], 0.5);
        assert!((bce_loss(&half, &t, cfg.clamp).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let exact = bce_loss(&t, &t, cfg.clamp).unwrap();
        assert!((exact - (-(1.0 - cfg.clamp).ln())).abs() < 1e-18);
        assert!((exact - cfg.clamp).abs() < 1e-13);
        assert!((bce_loss(&g1(&[0.9]), &g1(&[1.0]), cfg.clamp).unwrap() - 0.105_360_515_657_826_3).abs() < 1e-12);
    }

    #[test]
    fn iou_examples() {
        let a = mask(4, 4, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert!(iou_loss(&a, &a, EPS).unwrap() <= 1e-6);
        let far = mask(4, 4, &[(3, 3), (3, 2), (2, 3), (2, 2)]);
        assert!((iou_loss(&a, &far, EPS).unwrap() - 1.0).abs() < 1e-6);
        let half = mask(4, 4, &[(0, 0), (0, 1), (3, 3), (3, 2)]);
        assert!((iou_loss(&a, &half, EPS).unwrap() - (1.0 - 2.0 / 6.0)).abs() < 1e-6);
    }

    #[test]
    fn sdm_examples() {
        let single = BinaryMask::from_grid(&mask(5, 5, &[(2, 2)])).unwrap();
        let s = signed_distance_map(&single);
        assert!(!s.degenerate);
        let v = |r: usize, c: usize| s.grid.data()[r * 5 + c];
        assert_eq!(v(2, 2), 0.0);
        for (r, c) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            assert_eq!(v(r, c), 1.0);
        }
        for (r, c) in [(1, 1), (1, 3), (3, 1), (3, 3)] {
            assert_eq!(v(r, c), 2f64.sqrt());
        }

        let on: Vec<_> = (2..5).flat_map(|r| (2..5).map(move |c| (r, c))).collect();
        let blk = signed_distance_map(&BinaryMask::from_grid(&mask(7, 7, &on)).unwrap());
        assert_eq!(blk.grid.data()[3 * 7 + 3], -1.0);

        let empty = signed_distance_map(&BinaryMask::from_grid(&Grid::zeros(&[4, 4])).unwrap());
        assert!(empty.degenerate);
        assert!(empty.grid.data().iter().all(|&v| v == 0.0));
        let full = signed_distance_map(&BinaryMask::from_grid(&Grid::full(&[4, 4], 1.0)).unwrap());
        assert!(full.degenerate);
    }

    #[test]
    fn sd_examples() {
        let on = [(1, 1), (1, 2), (2, 1), (2, 2)];
        let t = mask(5, 5, &on);
        let sdm = signed_distance_map(&BinaryMask::from_grid(&t).unwrap());
        assert_eq!(shape_distance_loss(&Grid::zeros(&[5, 5]), &sdm).unwrap(), 0.0);
        // a 2x2 block is all boundary, so the indicator scores exactly zero;
        // use a larger block to get strictly interior mass
        let big: Vec<_> = (1..6).flat_map(|r| (1..6).map(move |c| (r, c))).collect();
        let tb = mask(7, 7, &big);
        let sdm_b = signed_distance_map(&BinaryMask::from_grid(&tb).unwrap());
        assert!(shape_distance_loss(&tb, &sdm_b).unwrap() < 0.0);

        let fixed = SignedDistanceMap {
            grid: Grid::new(vec![2, 2], vec![2.0, 0.0, -1.0, 1.0]).unwrap(),
            degenerate: false,
        };
        let p = Grid::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(shape_distance_loss(&p, &fixed).unwrap(), 0.5);
    }

    #[test]
    fn graph_matches_direct() {
        let cfg = LossConfig::default();
        let shape = [6, 5];
        let pred = Grid::from_fn(&shape, |i| 0.05 + 0.9 * ((i * 37 % 29) as f64 / 29.0));
        let target = Grid::from_fn(&shape, |i| ((i * 11 % 7) < 3) as u8 as f64);
        let sdm = signed_distance_map(&BinaryMask::from_grid(&target).unwrap());
        for kind in LossKind::ALL {
            let mut g = Graph::new();
            let p = g.leaf("p", &shape);
            let t = g.leaf("t", &shape);
            let l = build_loss(&mut g, kind, p, t, &shape, &cfg);
            g.set_output(l);
            let second = if kind.uses_distance_map() { sdm.grid.clone() } else { target.clone() };
            let b = Bindings::new().with(p, pred.clone()).with(t, second);
            let via_graph = g.evaluate(&b).unwrap();
            let direct = loss_value(kind, &pred, &target, Some(&sdm), &cfg).unwrap();
            assert!((via_graph - direct).abs() < 1e-12, "{kind}: {via_graph} vs {direct}");
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Grid::zeros(&[2, 2]);
        let b = Grid::zeros(&[2, 3]);
        assert!(mse_loss(&a, &b).is_err());
        assert!(dice_loss(&a, &b, EPS).is_err());
        assert!(bce_loss(&a, &b, 1e-7).is_err());
        assert!(iou_loss(&a, &b, EPS).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        assert!(LossConfig { smooth: 0.0, clamp: 1e-7 }.validate().is_err());
        assert!(LossConfig { smooth: 1e-6, clamp: 0.5 }.validate().is_err());
    }

    #[test]
    fn presets_and_parsing() {
        assert_eq!(preset("table2").unwrap().len(), 4);
        assert!(preset("section22").unwrap().contains(&LossKind::Mse));
        assert_eq!("ce".parse::<LossKind>().unwrap(), LossKind::Bce);
        assert!("focal".parse::<LossKind>().is_err());
    }
}
