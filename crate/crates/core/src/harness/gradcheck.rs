//! Finite-difference checks of every loss, the noise-weighted combiner and
//! the full training objective on seeded random instances.

use crate::data::rng::SplitMix64;
use crate::data::Case;
use crate::diff::{gradcheck, Bindings, Graph, GradReport};
use crate::error::Result;
use crate::grid::Grid;
use crate::losses::{self, LossConfig, LossKind};
use crate::metrics::BinaryMask;
use crate::model::{bind_params, build_distill, build_logits, init_params, BoxPrompt, SegModel, STUDENT_WIDTH};
use crate::uncertainty::build_combine;

use super::config::LossMode;
use super::objective::{Objective, PreparedCase, Targets};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub instance: usize,
    pub target: String,
    /// Worst norm-wise leaf error.
    pub rel_error: f64,
    /// Leaf with the worst error, and its worst element-wise error.
    pub worst_leaf: String,
    pub max_elem_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn failing(&self) -> impl Iterator<Item = &SuiteEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }

    fn push(&mut self, instance: usize, target: impl Into<String>, r: &GradReport) {
        let leaf = r
            .leaves
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
            .expect("at least one leaf");
        self.entries.push(SuiteEntry {
            instance,
            target: target.into(),
            rel_error: r.rel_error(),
            worst_leaf: leaf.name.clone(),
            max_elem_error: leaf.max_elem_error,
            passed: r.passed(),
        });
    }
}

/// Random axis-aligned rectangle strictly inside an `h`×`w` grid.
fn random_case(rng: &mut SplitMix64, h: usize, w: usize) -> Result<Case> {
    let r0 = rng.range_inclusive(1, h / 2 - 1);
    let c0 = rng.range_inclusive(1, w / 2 - 1);
    let r1 = rng.range_inclusive(h / 2, h - 2);
    let c1 = rng.range_inclusive(w / 2, w - 2);
    let bits: Vec<bool> = (0..h * w)
        .map(|i| (r0..=r1).contains(&(i / w)) && (c0..=c1).contains(&(i % w)))
        .collect();
    let mask = BinaryMask::from_bits(&[h, w], bits)?;
    let image = Grid::from_fn(&[h, w], |i| {
        let base = if mask.bits()[i] { 0.7 } else { 0.3 };
        base + rng.uniform(-0.1, 0.1)
    });
    Ok(Case {
        id: "gradcheck".into(),
        image,
        mask,
        prompt: BoxPrompt::new(r0 - 1, c0 - 1, r1 + 1, c1 + 1)?,
    })
}

fn check_loss(kind: LossKind, pred: &Grid, targets: &Targets, cfg: &LossConfig) -> Result<GradReport> {
    let shape = pred.shape().to_vec();
    let mut g = Graph::new();
    let p = g.leaf("pred", &shape);
    let t = g.constant(if kind.uses_distance_map() { targets.sdm.clone() } else { targets.mask.clone() });
    let out = losses::build_loss(&mut g, kind, p, t, &shape, cfg);
    g.set_output(out);
    gradcheck(&g, &Bindings::new().with(p, pred.clone()), &[p], STEP, TOLERANCE)
}

fn check_combiner(rng: &mut SplitMix64, m: usize) -> Result<GradReport> {
    let mut g = Graph::new();
    let ls: Vec<_> = (0..m).map(|i| g.leaf(format!("loss{i}"), &[])).collect();
    let ss: Vec<_> = (0..m).map(|i| g.leaf(format!("log_var{i}"), &[])).collect();
    let out = build_combine(&mut g, &ls, &ss)?;
    g.set_output(out);
    let mut b = Bindings::new();
    for &l in &ls {
        b.bind(l, Grid::scalar(rng.uniform(0.05, 3.0)));
    }
    for &s in &ss {
        b.bind(s, Grid::scalar(rng.uniform(-2.0, 2.0)));
    }
    let wrt: Vec<_> = ls.iter().chain(&ss).copied().collect();
    gradcheck(&g, &b, &wrt, STEP, TOLERANCE)
}

fn check_objective(case: &PreparedCase, seed: u64, rng: &mut SplitMix64) -> Result<GradReport> {
    let objective = Objective::new(LossMode::Uncertainty, LossKind::ALL.to_vec(), LossConfig::default());
    let bg = objective.build(STUDENT_WIDTH, &[case], None)?;
    let mut b = Bindings::new();
    bind_params(&bg.params, &init_params(seed, STUDENT_WIDTH)?, &mut b);
    for &s in &bg.log_vars {
        b.bind(s, Grid::scalar(rng.uniform(-1.0, 1.0)));
    }
    gradcheck(&bg.graph, &b, &bg.wrt(), STEP, TOLERANCE)
}

fn check_distill(case: &PreparedCase, seed: u64) -> Result<GradReport> {
    let teacher = SegModel::new(seed ^ 0x7ea, STUDENT_WIDTH * 2)?;
    let target = teacher.logits(&case.case.image, &case.case.prompt)?;
    let (h, w) = case.hw();
    let student = SegModel::new(seed, STUDENT_WIDTH)?;
    let mut g = Graph::new();
    let nodes = student.declare(&mut g);
    let x = g.constant(case.input.clone());
    let logits = build_logits(&mut g, x, &nodes, h, w);
    let t = g.constant(target);
    let out = build_distill(&mut g, logits, t);
    g.set_output(out);
    let mut b = Bindings::new();
    student.bind(&nodes, &mut b);
    gradcheck(&g, &b, &nodes.0, STEP, TOLERANCE)
}

/// Runs `instances` seeded instances of size 8 to 16 per side. Every
/// instance checks the five losses and the combiner; with `full` it also
/// checks the model objective and the distillation loss through the network.
pub fn gradcheck_suite(seed: u64, instances: usize, full: bool) -> Result<SuiteReport> {
    let root = SplitMix64::new(seed);
    let cfg = LossConfig::default();
    let mut report = SuiteReport::default();
    for i in 0..instances {
        let mut rng = root.fork(i as u64);
        let h = rng.range_inclusive(8, 16);
        let w = rng.range_inclusive(8, 16);
        let case = PreparedCase::new(random_case(&mut rng, h, w)?)?;
        let pred = Grid::from_fn(&[h, w], |_| rng.uniform(0.05, 0.95));
        for kind in LossKind::ALL {
            let r = check_loss(kind, &pred, &case.targets, &cfg)?;
            report.push(i, kind.name(), &r);
        }
        let m = rng.range_inclusive(1, 5);
        report.push(i, "combine", &check_combiner(&mut rng, m)?);
        if full {
            let param_seed = rng.next_u64();
            report.push(i, "objective", &check_objective(&case, param_seed, &mut rng)?);
            report.push(i, "distill", &check_distill(&case, param_seed)?);
        }
    }
    Ok(report)
}
