//! The training objective over a batch: model forward, active losses, and
//! the loss-mode combination.

use crate::data::rng::SplitMix64;
use crate::data::Case;
use crate::diff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::losses::{self, LossConfig, LossKind};
use crate::metrics::BinaryMask;
use crate::model::{build_logits, encode_input, param_shapes, ParamNodes, PARAM_NAMES};
use crate::uncertainty;

use super::config::LossMode;

/// Per-case supervision targets.
#[derive(Debug, Clone)]
pub struct Targets {
    pub mask: Grid,
    pub sdm: Grid,
    /// Lowest reachable sd loss for this target; subtracted so the sd term
    /// entering the objective is non-negative.
    pub sd_floor: f64,
}

impl Targets {
    pub fn from_mask(mask: &BinaryMask) -> Self {
        let sdm = losses::signed_distance_map(mask);
        let sd_floor = losses::shape_distance_floor(&sdm);
        Targets {
            mask: mask.to_grid(),
            sdm: sdm.grid,
            sd_floor,
        }
    }

    /// Fair-coin pixel mask, used as a pure-noise target.
    pub fn random(shape: &[usize], rng: &mut SplitMix64) -> Self {
        let bits = (0..shape.iter().product::<usize>()).map(|_| rng.next_u64() >> 63 == 1).collect();
        Self::from_mask(&BinaryMask::from_bits(shape, bits).expect("2D shape"))
    }
}

/// A loaded case with its network input and targets precomputed.
#[derive(Debug, Clone)]
pub struct PreparedCase {
    pub case: Case,
    pub input: Grid,
    pub targets: Targets,
}

impl PreparedCase {
    pub fn new(case: Case) -> Result<Self> {
        let input = encode_input(&case.image, &case.prompt)?;
        let targets = Targets::from_mask(&case.mask);
        Ok(PreparedCase { case, input, targets })
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.case.image.shape()[0], self.case.image.shape()[1])
    }
}

pub fn prepare_all(cases: Vec<Case>) -> Result<Vec<PreparedCase>> {
    cases.into_iter().map(PreparedCase::new).collect()
}

#[derive(Debug, Clone)]
pub struct Objective {
    pub mode: LossMode,
    pub kinds: Vec<LossKind>,
    pub loss_cfg: LossConfig,
}

/// Graph for one batch with handles to its parameter and loss nodes.
pub struct BatchGraph {
    pub graph: Graph,
    pub params: ParamNodes,
    pub log_vars: Vec<NodeId>,
    /// Batch-mean value of each active loss.
    pub losses: Vec<NodeId>,
    pub total: NodeId,
}

impl BatchGraph {
    /// Model parameter leaves followed by noise parameter leaves, matching
    /// the flat training parameter vector.
    pub fn wrt(&self) -> Vec<NodeId> {
        self.params.0.iter().chain(&self.log_vars).copied().collect()
    }
}

impl Objective {
    pub fn new(mode: LossMode, kinds: Vec<LossKind>, loss_cfg: LossConfig) -> Self {
        Objective { mode, kinds, loss_cfg }
    }

    /// Number of learnable noise parameters (one per loss in uncertainty mode).
    pub fn n_log_vars(&self) -> usize {
        match self.mode {
            LossMode::Uncertainty => self.kinds.len(),
            _ => 0,
        }
    }

    pub fn loss_names(&self) -> Vec<String> {
        self.kinds.iter().map(|k| k.name().to_string()).collect()
    }

    /// Builds the objective for `cases`. `override_targets`, when given,
    /// replaces the targets of one loss kind per case.
    pub fn build(
        &self,
        width: usize,
        cases: &[&PreparedCase],
        override_targets: Option<(LossKind, &[Targets])>,
    ) -> Result<BatchGraph> {
        if cases.is_empty() || self.kinds.is_empty() {
            return Err(Error::InvalidArgument("objective needs at least one case and one loss".into()));
        }
        if let Some((_, t)) = override_targets {
            if t.len() != cases.len() {
                return Err(Error::Shape(format!("{} override targets for {} cases", t.len(), cases.len())));
            }
        }
        let mut g = Graph::new();
        let shapes = param_shapes(width);
        let params = ParamNodes(
            shapes
                .iter()
                .zip(PARAM_NAMES)
                .map(|(s, name)| g.leaf(name, s))
                .collect(),
        );
        let log_vars: Vec<NodeId> = (0..self.n_log_vars())
            .map(|i| g.leaf(format!("log_var.{}", self.kinds[i]), &[]))
            .collect();

        let mut per_kind: Vec<Vec<NodeId>> = vec![Vec::new(); self.kinds.len()];
        for (ci, case) in cases.iter().enumerate() {
            let (h, w) = case.hw();
            let x = g.constant(case.input.clone());
            let logits = build_logits(&mut g, x, &params, h, w);
            let pred = g.sigmoid(logits);
            for (k, &kind) in self.kinds.iter().enumerate() {
                let targets = match override_targets {
                    Some((noisy, t)) if noisy == kind => &t[ci],
                    _ => &case.targets,
                };
                per_kind[k].push(self.build_term(&mut g, kind, pred, targets, &[h, w]));
            }
        }

        let inv_batch = 1.0 / cases.len() as f64;
        let losses: Vec<NodeId> = per_kind
            .into_iter()
            .map(|terms| {
                let sum = terms.into_iter().reduce(|a, b| g.add(a, b)).expect("non-empty batch");
                g.scale(sum, inv_batch)
            })
            .collect();
        let total = self.build_total(&mut g, &losses, &log_vars)?;
        g.set_output(total);
        Ok(BatchGraph {
            graph: g,
            params,
            log_vars,
            losses,
            total,
        })
    }

    fn build_term(&self, g: &mut Graph, kind: LossKind, pred: NodeId, t: &Targets, shape: &[usize]) -> NodeId {
        let target = if kind.uses_distance_map() {
            g.constant(t.sdm.clone())
        } else {
            g.constant(t.mask.clone())
        };
        let term = losses::build_loss(g, kind, pred, target, shape, &self.loss_cfg);
        if kind == LossKind::Sd {
            let offset = g.scalar(-t.sd_floor);
            g.add(term, offset)
        } else {
            term
        }
    }

    fn build_total(&self, g: &mut Graph, losses: &[NodeId], log_vars: &[NodeId]) -> Result<NodeId> {
        Ok(match self.mode {
            LossMode::Single(_) => losses[0],
            LossMode::FixedEqual => {
                let sum = losses.iter().copied().reduce(|a, b| g.add(a, b)).expect("checked non-empty");
                g.scale(sum, 1.0 / losses.len() as f64)
            }
            LossMode::Uncertainty => uncertainty::build_combine(g, losses, log_vars)?,
        })
    }

    /// Per-loss values for one prediction, as they enter the objective.
    pub fn term_values(&self, prob: &Grid, targets: &Targets) -> Result<Vec<f64>> {
        self.kinds
            .iter()
            .map(|&kind| {
                Ok(match kind {
                    LossKind::Mse => losses::mse_loss(prob, &targets.mask)?,
                    LossKind::Dice => losses::dice_loss(prob, &targets.mask, self.loss_cfg.smooth)?,
                    LossKind::Bce => losses::bce_loss(prob, &targets.mask, self.loss_cfg.clamp)?,
                    LossKind::Iou => losses::iou_loss(prob, &targets.mask, self.loss_cfg.smooth)?,
                    LossKind::Sd => prob.zip_map(&targets.sdm, |p, d| p * d)?.mean() - targets.sd_floor,
                })
            })
            .collect()
    }

    /// Combines per-loss values the same way the graph does.
    pub fn total_from_values(&self, values: &[f64], log_vars: &[f64]) -> Result<f64> {
        match self.mode {
            LossMode::Single(_) => Ok(values[0]),
            LossMode::FixedEqual => Ok(values.iter().sum::<f64>() / values.len() as f64),
            LossMode::Uncertainty => {
                let state = uncertainty::UncertaintyState::from_log_vars(log_vars.to_vec())?;
                uncertainty::combine(values, &state)
            }
        }
    }
}
