//! SGD, AdamW, a plateau learning-rate schedule, and the two-step
//! sharpness-aware minimization wrapper.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

fn check_shapes(params: &[Grid], grads: &[Grid]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!("{} params vs {} grads", params.len(), grads.len())));
    }
    for (p, g) in params.iter().zip(grads) {
        p.expect_same_shape(g)?;
    }
    Ok(())
}

/// `p ← p − lr·g`.
pub fn sgd_step(params: &mut [Grid], grads: &[Grid], lr: f64) -> Result<()> {
    check_shapes(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        p.axpy(-lr, g)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    lr: f64,
    m: Vec<Grid>,
    v: Vec<Grid>,
    step: u64,
}

impl AdamW {
    pub fn new(lr: f64, cfg: AdamWConfig, params: &[Grid]) -> Result<Self> {
        check_lr(lr)?;
        Ok(AdamW {
            cfg,
            lr,
            m: params.iter().map(|p| Grid::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Grid::zeros(p.shape())).collect(),
            step: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Decoupled decay `p ← p − lr·wd·p`, then the bias-corrected Adam move.
    pub fn step(&mut self, params: &mut [Grid], grads: &[Grid]) -> Result<()> {
        check_shapes(params, grads)?;
        check_shapes(&self.m, grads)?;
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let lr = self.lr;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                p[i] -= lr * weight_decay * p[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adamw,
}

/// Base optimizer driven by the training loop.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64 },
    AdamW(AdamW),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, adamw: AdamWConfig, params: &[Grid]) -> Result<Self> {
        check_lr(lr)?;
        Ok(match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adamw => Optimizer::AdamW(AdamW::new(lr, adamw, params)?),
        })
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr } => *lr,
            Optimizer::AdamW(a) => a.lr,
        }
    }

    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        check_lr(lr)?;
        match self {
            Optimizer::Sgd { lr: l } => *l = lr,
            Optimizer::AdamW(a) => a.lr = lr,
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut [Grid], grads: &[Grid]) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => sgd_step(params, grads, *lr),
            Optimizer::AdamW(a) => a.step(params, grads),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharpMinConfig {
    pub enabled: bool,
    pub rho: f64,
}

impl Default for SharpMinConfig {
    fn default() -> Self {
        SharpMinConfig {
            enabled: true,
            rho: 0.05,
        }
    }
}

impl SharpMinConfig {
    pub fn disabled() -> Self {
        SharpMinConfig {
            enabled: false,
            rho: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled && !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("sharpmin rho must be > 0, got {}", self.rho)));
        }
        Ok(())
    }
}

/// Loss and gradient evaluations spent on one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Loss at the unperturbed parameters.
    pub loss: f64,
    pub grad_evals: usize,
}

/// Gradient norms below this skip the ascent step.
pub const MIN_ASCENT_NORM: f64 = 1e-12;

/// One optimizer update, optionally sharpness-aware.
///
/// Enabled: take the gradient `g₁` at `params`, move to
/// `params + ρ·g₁/‖g₁‖` (global ℓ2 norm over every tensor), take the gradient
/// `g₂` there, and apply the base update at the original point with `g₂`.
/// Disabled, or with `‖g₁‖ < MIN_ASCENT_NORM`, this is a plain base step.
pub fn sharpmin_step<F>(
    params: &mut [Grid],
    mut loss_fn: F,
    base: &mut Optimizer,
    cfg: &SharpMinConfig,
) -> Result<StepOutcome>
where
    F: FnMut(&[Grid]) -> Result<(f64, Vec<Grid>)>,
{
    cfg.validate()?;
    let (loss, g1) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite { node: 0, op: "loss" });
    }
    if !cfg.enabled {
        base.step(params, &g1)?;
        return Ok(StepOutcome { loss, grad_evals: 1 });
    }
    let norm = g1.iter().map(Grid::sq_norm).sum::<f64>().sqrt();
    if norm < MIN_ASCENT_NORM {
        base.step(params, &g1)?;
        return Ok(StepOutcome { loss, grad_evals: 1 });
    }
    let scale = cfg.rho / norm;
    let mut perturbed = params.to_vec();
    for (p, g) in perturbed.iter_mut().zip(&g1) {
        p.axpy(scale, g)?;
    }
    let (loss2, g2) = loss_fn(&perturbed)?;
    if !loss2.is_finite() {
        return Err(Error::NonFinite { node: 0, op: "perturbed loss" });
    }
    base.step(params, &g2)?;
    Ok(StepOutcome { loss, grad_evals: 2 })
}

/// Multiplies the learning rate by `factor` once validation loss has failed
/// to improve for more than `patience` epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub cooldown: usize,
    best: f64,
    bad_epochs: usize,
    cooldown_left: usize,
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        Self::new(0.9, 5, 0).expect("valid defaults")
    }
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, cooldown: usize) -> Result<Self> {
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::Config(format!("plateau factor must be in (0,1), got {factor}")));
        }
        Ok(PlateauScheduler {
            factor,
            patience,
            cooldown,
            best: f64::INFINITY,
            bad_epochs: 0,
            cooldown_left: 0,
        })
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn bad_epochs(&self) -> usize {
        self.bad_epochs
    }

    /// Returns the multiplier to apply to the learning rate (1 or `factor`).
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.cooldown_left > 0 {
            self.cooldown_left -= 1;
            self.bad_epochs = 0;
        }
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            self.cooldown_left = self.cooldown;
            return self.factor;
        }
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Grid {
        Grid::scalar(v)
    }

    fn v(xs: &[f64]) -> Grid {
        Grid::new(vec![xs.len()], xs.to_vec()).unwrap()
    }

    #[test]
    fn sgd_examples() {
        let mut p = vec![s(1.0)];
        sgd_step(&mut p, &[s(1.0)], 0.1).unwrap();
        assert_eq!(p[0].item(), 0.9);
        sgd_step(&mut p, &[s(0.0)], 0.1).unwrap();
        assert_eq!(p[0].item(), 0.9);
        let mut q = vec![v(&[2.0, -2.0])];
        sgd_step(&mut q, &[v(&[1.0, -1.0])], 0.5).unwrap();
        assert_eq!(q[0].data(), &[1.5, -1.5]);
        assert!(sgd_step(&mut q, &[v(&[1.0])], 0.5).is_err());
    }

    #[test]
    fn adamw_first_step() {
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut p = vec![s(0.0)];
        let mut opt = AdamW::new(0.001, cfg, &p).unwrap();
        opt.step(&mut p, &[s(1.0)]).unwrap();
        // m̂ = 1, v̂ = 1 → step = lr / (1 + eps)
        assert!((p[0].item() + 0.001 / (1.0 + 1e-8)).abs() < 1e-18);
        assert!((p[0].item() + 0.001).abs() < 1e-10);
    }

    #[test]
    fn adamw_zero_gradient() {
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut p = vec![v(&[0.3, -1.0])];
        let mut opt = AdamW::new(0.01, cfg, &p).unwrap();
        for _ in 0..5 {
            opt.step(&mut p, &[v(&[0.0, 0.0])]).unwrap();
        }
        assert_eq!(p[0].data(), &[0.3, -1.0]);
        assert_eq!(opt.steps(), 5);
    }

    #[test]
    fn adamw_decay_only() {
        let mut p = vec![s(1.0)];
        let mut opt = AdamW::new(0.001, AdamWConfig::default(), &p).unwrap();
        opt.step(&mut p, &[s(0.0)]).unwrap();
        assert_eq!(p[0].item(), 1.0 - 1e-5);
    }

    #[test]
    fn sharpmin_hand_trace() {
        // f(w) = w²/2: g₁ = 1, ε = 0.1, g₂ = 1.1, w' = 1 − 0.1·1.1
        let mut w = vec![s(1.0)];
        let mut opt = Optimizer::Sgd { lr: 0.1 };
        let cfg = SharpMinConfig { enabled: true, rho: 0.1 };
        let out = sharpmin_step(&mut w, |p| Ok((0.5 * p[0].item().powi(2), vec![p[0].clone()])), &mut opt, &cfg).unwrap();
        assert_eq!(out.grad_evals, 2);
        assert_eq!(out.loss, 0.5);
        assert_eq!(w[0].item(), 0.89);
    }

    #[test]
    fn sharpmin_zero_gradient_falls_back() {
        let mut w = vec![s(0.0)];
        let mut opt = Optimizer::Sgd { lr: 0.1 };
        let cfg = SharpMinConfig { enabled: true, rho: 0.1 };
        let out = sharpmin_step(&mut w, |p| Ok((0.0, vec![p[0].clone()])), &mut opt, &cfg).unwrap();
        assert_eq!(out.grad_evals, 1);
        assert_eq!(w[0].item(), 0.0);
    }

    #[test]
    fn sharpmin_small_rho_approaches_plain_step() {
        let f = |p: &[Grid]| {
            let x = p[0].data();
            let val = x[0].powi(4) + 3.0 * x[1] * x[1] + x[0] * x[1];
            Ok((val, vec![v(&[4.0 * x[0].powi(3) + x[1], 6.0 * x[1] + x[0]])]))
        };
        let mut a = vec![v(&[0.7, -0.4])];
        let mut b = a.clone();
        let mut oa = Optimizer::Sgd { lr: 0.05 };
        let mut ob = oa.clone();
        sharpmin_step(&mut a, f, &mut oa, &SharpMinConfig { enabled: true, rho: 1e-10 }).unwrap();
        sharpmin_step(&mut b, f, &mut ob, &SharpMinConfig::disabled()).unwrap();
        for (x, y) in a[0].data().iter().zip(b[0].data()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn sharpmin_rejects_non_finite_loss() {
        let mut w = vec![s(1.0)];
        let mut opt = Optimizer::Sgd { lr: 0.1 };
        let r = sharpmin_step(&mut w, |p| Ok((f64::NAN, vec![p[0].clone()])), &mut opt, &SharpMinConfig::default());
        assert!(r.is_err());
        assert!(SharpMinConfig { enabled: true, rho: 0.0 }.validate().is_err());
    }

    #[test]
    fn plateau_examples() {
        let mut p = PlateauScheduler::default();
        for i in 0..50 {
            assert_eq!(p.step(10.0 - i as f64 * 0.1), 1.0);
        }

        let mut p = PlateauScheduler::default();
        p.step(1.0);
        let mults: Vec<f64> = (0..7).map(|_| p.step(1.0)).collect();
        assert_eq!(mults.iter().filter(|&&m| m != 1.0).count(), 1);
        assert_eq!(mults[5], 0.9);

        let lr = 1.0 * 0.9 * 0.9;
        assert!((lr - 0.81f64).abs() < 1e-15);
        assert!(PlateauScheduler::new(1.0, 5, 0).is_err());
    }
}
