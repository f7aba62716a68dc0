use super::{Bindings, Graph, NodeId, Op};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Analytic vs central-difference gradient for one leaf.
#[derive(Debug, Clone)]
pub struct LeafReport {
    pub node: NodeId,
    pub name: String,
    pub analytic: Grid,
    pub numeric: Grid,
    /// `‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖)`, Euclidean norms.
    pub rel_error: f64,
    /// Largest element-wise relative error and its flat index. Elements far
    /// below the leaf's gradient scale are limited by the resolution of the
    /// finite difference, so this is diagnostic only.
    pub max_elem_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub step: f64,
    pub tolerance: f64,
    pub leaves: Vec<LeafReport>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.leaves.iter().all(|l| l.passed)
    }

    /// Worst leaf relative error.
    pub fn rel_error(&self) -> f64 {
        self.leaves.iter().map(|l| l.rel_error).fold(0.0, f64::max)
    }

    pub fn failing(&self) -> impl Iterator<Item = &LeafReport> {
        self.leaves.iter().filter(|l| !l.passed)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Norm-wise relative error between two gradients of equal shape.
pub fn tensor_relative_error(analytic: &Grid, numeric: &Grid) -> f64 {
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    diff / (analytic.sq_norm().sqrt() + numeric.sq_norm().sqrt()).max(1e-8)
}

/// Compares reverse-mode gradients against central finite differences with
/// step `h` for every element of every leaf in `wrt`.
pub fn gradcheck(graph: &Graph, bindings: &Bindings, wrt: &[NodeId], h: f64, tol: f64) -> Result<GradReport> {
    if !(h > 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("gradcheck needs h>0 and tol>0, got h={h}, tol={tol}")));
    }
    let analytic = graph.gradient(bindings, wrt)?;
    let mut probe = bindings.clone();
    let mut leaves = Vec::with_capacity(wrt.len());
    for (&id, analytic) in wrt.iter().zip(analytic) {
        let name = match graph.op(id) {
            Op::Leaf { name, .. } => name.clone(),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "gradcheck target {} is a {} node, not a leaf",
                    id.0,
                    other.name()
                )))
            }
        };
        let mut numeric = Grid::zeros(analytic.shape());
        for j in 0..analytic.len() {
            let base = probe.get(id).expect("leaf bound").data()[j];
            probe.get_mut(id).unwrap().data_mut()[j] = base + h;
            let plus = graph.evaluate(&probe)?;
            probe.get_mut(id).unwrap().data_mut()[j] = base - h;
            let minus = graph.evaluate(&probe)?;
            probe.get_mut(id).unwrap().data_mut()[j] = base;
            numeric.data_mut()[j] = (plus - minus) / (2.0 * h);
        }
        let rel_error = tensor_relative_error(&analytic, &numeric);
        let (worst_index, max_elem_error) = analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(&a, &n)| relative_error(a, n))
            .enumerate()
            .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
        leaves.push(LeafReport {
            node: id,
            name,
            analytic,
            numeric,
            rel_error,
            max_elem_error,
            worst_index,
            passed: rel_error <= tol,
        });
    }
    Ok(GradReport {
        step: h,
        tolerance: tol,
        leaves,
    })
}
