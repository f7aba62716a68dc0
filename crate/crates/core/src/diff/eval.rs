use std::borrow::Cow;

use super::kernels::{self, ConvDims};
use super::{Bindings, Graph, NodeId, Op};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Forward values of every node for one set of bindings.
pub struct Trace<'a> {
    values: Vec<Cow<'a, Grid>>,
    output: NodeId,
}

impl Trace<'_> {
    pub fn value(&self, id: NodeId) -> &Grid {
        &self.values[id.0]
    }

    pub fn output_value(&self) -> f64 {
        self.values[self.output.0].item()
    }
}

fn single_element(g: &Grid) -> bool {
    g.len() == 1
}

impl Graph {
    fn shape_err(&self, node: usize, detail: String) -> Error {
        Error::NodeShape {
            node,
            op: self.nodes[node].name(),
            detail,
        }
    }

    /// Evaluates every node up to and including the scalar output.
    pub fn forward<'a>(&'a self, bindings: &'a Bindings) -> Result<Trace<'a>> {
        let output = self
            .output
            .ok_or_else(|| Error::InvalidArgument("graph has no output".into()))?;
        let trace = self.forward_until(bindings, output)?;
        if !single_element(&trace.values[output.0]) {
            return Err(self.shape_err(output.0, "output is not a scalar".into()));
        }
        Ok(trace)
    }

    /// Value of an arbitrary node, which need not be scalar.
    pub fn value_of(&self, bindings: &Bindings, node: NodeId) -> Result<Grid> {
        let trace = self.forward_until(bindings, node)?;
        Ok(trace.values[node.0].clone().into_owned())
    }

    fn forward_until<'a>(&'a self, bindings: &'a Bindings, output: NodeId) -> Result<Trace<'a>> {
        let mut values: Vec<Cow<'a, Grid>> = Vec::with_capacity(output.0 + 1);
        for (i, op) in self.nodes.iter().enumerate().take(output.0 + 1) {
            let v = |id: NodeId| -> &Grid { values[id.0].as_ref() };
            let same = |a: &Grid, b: &Grid| -> Result<()> {
                if a.shape() != b.shape() {
                    return Err(self.shape_err(i, format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                Ok(())
            };
            let value: Cow<'a, Grid> = match op {
                Op::Leaf { name, shape } => {
                    let g = bindings.get(NodeId(i)).ok_or_else(|| Error::UnboundLeaf {
                        leaf: i,
                        name: name.clone(),
                    })?;
                    if g.shape() != shape.as_slice() {
                        return Err(self.shape_err(
                            i,
                            format!("leaf {name:?} declared {:?}, bound {:?}", shape, g.shape()),
                        ));
                    }
                    Cow::Borrowed(g)
                }
                Op::Const(g) => Cow::Borrowed(g),
                Op::Add(a, b) => {
                    same(v(*a), v(*b))?;
                    Cow::Owned(v(*a).zip_map(v(*b), |p, q| p + q)?)
                }
                Op::Sub(a, b) => {
                    same(v(*a), v(*b))?;
                    Cow::Owned(v(*a).zip_map(v(*b), |p, q| p - q)?)
                }
                Op::Mul(a, b) => {
                    same(v(*a), v(*b))?;
                    Cow::Owned(v(*a).zip_map(v(*b), |p, q| p * q)?)
                }
                Op::Div(a, b) => {
                    same(v(*a), v(*b))?;
                    Cow::Owned(v(*a).zip_map(v(*b), |p, q| p / q)?)
                }
                Op::Scale(x, c) => Cow::Owned(v(*x).map(|p| c * p)),
                Op::Broadcast { src, shape } => {
                    let s = v(*src);
                    if !single_element(s) {
                        return Err(self.shape_err(i, format!("source {:?} is not scalar", s.shape())));
                    }
                    Cow::Owned(Grid::full(shape, s.item()))
                }
                Op::AddBias { x, bias } => {
                    let (xv, bv) = (v(*x), v(*bias));
                    if xv.rank() < 1 || bv.shape() != [xv.shape()[0]] {
                        return Err(self.shape_err(
                            i,
                            format!("bias {:?} does not match channels of {:?}", bv.shape(), xv.shape()),
                        ));
                    }
                    let per = xv.len() / xv.shape()[0];
                    let mut out = xv.clone();
                    for (c, chunk) in out.data_mut().chunks_mut(per.max(1)).enumerate() {
                        let b = bv.data()[c];
                        chunk.iter_mut().for_each(|p| *p += b);
                    }
                    Cow::Owned(out)
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (v(*a), v(*b));
                    if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
                        return Err(self.shape_err(i, format!("{:?} x {:?}", av.shape(), bv.shape())));
                    }
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    Cow::Owned(Grid::new(vec![m, n], kernels::matmul(av.data(), bv.data(), m, k, n))?)
                }
                Op::Conv2d { x, w } => {
                    let d = self.conv_dims(i, v(*x), v(*w))?;
                    let out = kernels::conv2d_forward(&d, v(*x).data(), v(*w).data());
                    Cow::Owned(Grid::new(vec![d.cout, d.h, d.w], out)?)
                }
                Op::Relu(x) => Cow::Owned(v(*x).map(|p| p.max(0.0))),
                Op::Sigmoid(x) => Cow::Owned(v(*x).map(sigmoid)),
                Op::Exp(x) => Cow::Owned(v(*x).map(f64::exp)),
                Op::Log(x) => Cow::Owned(v(*x).map(f64::ln)),
                Op::Clamp { x, lo, hi } => Cow::Owned(v(*x).map(|p| p.clamp(*lo, *hi))),
                Op::Sum(x) => Cow::Owned(Grid::scalar(v(*x).sum())),
                Op::Mean(x) => {
                    if v(*x).is_empty() {
                        return Err(self.shape_err(i, "mean of empty grid".into()));
                    }
                    Cow::Owned(Grid::scalar(v(*x).mean()))
                }
                Op::Reshape { x, shape } => {
                    let n: usize = shape.iter().product();
                    if n != v(*x).len() {
                        return Err(self.shape_err(i, format!("{:?} into {:?}", v(*x).shape(), shape)));
                    }
                    Cow::Owned(v(*x).clone().reshape(shape)?)
                }
            };
            if !value.all_finite() {
                return Err(Error::NonFinite {
                    node: i,
                    op: op.name(),
                });
            }
            values.push(value);
        }
        Ok(Trace { values, output })
    }

    fn conv_dims(&self, i: usize, x: &Grid, w: &Grid) -> Result<ConvDims> {
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 3 || ws.len() != 4 {
            return Err(self.shape_err(i, format!("input {xs:?}, kernel {ws:?}")));
        }
        let k = ws[2];
        if ws[3] != k || !(k == 1 || k == 3) || ws[1] != xs[0] {
            return Err(self.shape_err(i, format!("input {xs:?}, kernel {ws:?}")));
        }
        Ok(ConvDims {
            cin: xs[0],
            cout: ws[0],
            h: xs[1],
            w: xs[2],
            k,
        })
    }

    /// Reverse sweep from the output, returning gradients for `wrt` in order.
    pub fn backward(&self, trace: &Trace<'_>, wrt: &[NodeId]) -> Result<Vec<Grid>> {
        let out = trace.output.0;
        let n = out + 1;
        let mut needs = vec![false; n];
        let mut is_wrt = vec![false; n];
        for id in wrt {
            if id.0 >= n {
                return Err(Error::InvalidArgument(format!(
                    "node {} is not evaluated before the output",
                    id.0
                )));
            }
            needs[id.0] = true;
            is_wrt[id.0] = true;
        }
        for i in 0..n {
            if !needs[i] {
                needs[i] = self.nodes[i].inputs().iter().any(|p| needs[p.0]);
            }
        }

        let mut adj: Vec<Option<Grid>> = vec![None; n];
        let mut saved: Vec<Option<Grid>> = vec![None; n];
        adj[out] = Some(Grid::full(trace.values[out].shape(), 1.0));
        let val = |id: NodeId| -> &Grid { trace.value(id) };

        for i in (0..n).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            if is_wrt[i] {
                saved[i] = Some(g.clone());
            }
            let want = |id: NodeId| needs[id.0];
            match &self.nodes[i] {
                Op::Leaf { .. } | Op::Const(_) => {}
                Op::Add(a, b) => {
                    if want(*b) {
                        accumulate(&mut adj, *b, g.clone(), 1.0);
                    }
                    if want(*a) {
                        accumulate(&mut adj, *a, g, 1.0);
                    }
                }
                Op::Sub(a, b) => {
                    if want(*b) {
                        accumulate(&mut adj, *b, g.clone(), -1.0);
                    }
                    if want(*a) {
                        accumulate(&mut adj, *a, g, 1.0);
                    }
                }
                Op::Mul(a, b) => {
                    if want(*a) {
                        let ga = g.zip_map(val(*b), |p, q| p * q)?;
                        accumulate(&mut adj, *a, ga, 1.0);
                    }
                    if want(*b) {
                        let gb = g.zip_map(val(*a), |p, q| p * q)?;
                        accumulate(&mut adj, *b, gb, 1.0);
                    }
                }
                Op::Div(a, b) => {
                    let bv = val(*b);
                    if want(*a) {
                        accumulate(&mut adj, *a, g.zip_map(bv, |p, q| p / q)?, 1.0);
                    }
                    if want(*b) {
                        let y = trace.value(NodeId(i));
                        let gb = Grid::from_fn(bv.shape(), |j| -g.data()[j] * y.data()[j] / bv.data()[j]);
                        accumulate(&mut adj, *b, gb, 1.0);
                    }
                }
                Op::Scale(x, c) => accumulate(&mut adj, *x, g, *c),
                Op::Broadcast { src, .. } => {
                    let s = g.sum();
                    let shape = val(*src).shape().to_vec();
                    accumulate(&mut adj, *src, Grid::full(&shape, s), 1.0);
                }
                Op::AddBias { x, bias } => {
                    if want(*bias) {
                        let c = val(*bias).len();
                        let per = g.len() / c;
                        let gb: Vec<f64> = g.data().chunks(per.max(1)).map(|ch| ch.iter().sum()).collect();
                        accumulate(&mut adj, *bias, Grid::new(vec![c], gb)?, 1.0);
                    }
                    if want(*x) {
                        accumulate(&mut adj, *x, g, 1.0);
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (m, k, nn) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    if want(*a) {
                        let bt = kernels::transpose(bv.data(), k, nn);
                        let ga = kernels::matmul(g.data(), &bt, m, nn, k);
                        accumulate(&mut adj, *a, Grid::new(vec![m, k], ga)?, 1.0);
                    }
                    if want(*b) {
                        let at = kernels::transpose(av.data(), m, k);
                        let gb = kernels::matmul(&at, g.data(), k, m, nn);
                        accumulate(&mut adj, *b, Grid::new(vec![k, nn], gb)?, 1.0);
                    }
                }
                Op::Conv2d { x, w } => {
                    let (xv, wv) = (val(*x), val(*w));
                    let d = self.conv_dims(i, xv, wv)?;
                    if want(*w) {
                        let gw = kernels::conv2d_backward_weight(&d, g.data(), xv.data());
                        accumulate(&mut adj, *w, Grid::new(wv.shape().to_vec(), gw)?, 1.0);
                    }
                    if want(*x) {
                        let gx = kernels::conv2d_backward_input(&d, g.data(), wv.data());
                        accumulate(&mut adj, *x, Grid::new(xv.shape().to_vec(), gx)?, 1.0);
                    }
                }
                Op::Relu(x) => {
                    let gx = g.zip_map(val(*x), |p, q| if q > 0.0 { p } else { 0.0 })?;
                    accumulate(&mut adj, *x, gx, 1.0);
                }
                Op::Sigmoid(x) => {
                    let y = trace.value(NodeId(i));
                    let gx = g.zip_map(y, |p, s| p * s * (1.0 - s))?;
                    accumulate(&mut adj, *x, gx, 1.0);
                }
                Op::Exp(x) => {
                    let y = trace.value(NodeId(i));
                    accumulate(&mut adj, *x, g.zip_map(y, |p, e| p * e)?, 1.0);
                }
                Op::Log(x) => {
                    accumulate(&mut adj, *x, g.zip_map(val(*x), |p, q| p / q)?, 1.0);
                }
                Op::Clamp { x, lo, hi } => {
                    let gx = g.zip_map(val(*x), |p, q| if q >= *lo && q <= *hi { p } else { 0.0 })?;
                    accumulate(&mut adj, *x, gx, 1.0);
                }
                Op::Sum(x) => {
                    let shape = val(*x).shape().to_vec();
                    accumulate(&mut adj, *x, Grid::full(&shape, g.item()), 1.0);
                }
                Op::Mean(x) => {
                    let xv = val(*x);
                    let gx = Grid::full(xv.shape(), g.item() / xv.len() as f64);
                    accumulate(&mut adj, *x, gx, 1.0);
                }
                Op::Reshape { x, .. } => {
                    let shape = val(*x).shape().to_vec();
                    accumulate(&mut adj, *x, g.reshape(&shape)?, 1.0);
                }
            }
        }

        wrt.iter()
            .map(|id| {
                let shape = trace.value(*id).shape();
                Ok(saved[id.0].clone().unwrap_or_else(|| Grid::zeros(shape)))
            })
            .collect()
    }
}

fn accumulate(adj: &mut [Option<Grid>], id: NodeId, mut g: Grid, factor: f64) {
    match &mut adj[id.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += factor * b;
            }
        }
        slot @ None => {
            if factor != 1.0 {
                g.data_mut().iter_mut().for_each(|p| *p *= factor);
            }
            *slot = Some(g);
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
