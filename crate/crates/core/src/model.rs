//! Tiny box-prompted segmentation network and logit distillation.
//!
//! Architecture: `conv3x3(2→w) + relu + conv3x3(w→w) + relu + conv1x1(w→1)`,
//! each conv followed by a per-channel bias. The input stacks the image and
//! a binary box-indicator channel; the output is one logit per pixel.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::rng::SplitMix64;
use crate::diff::{Bindings, Graph, NodeId};
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const STUDENT_WIDTH: usize = 8;
pub const TEACHER_WIDTH: usize = 16;

/// Half-open pixel box `[r0, r1) × [c0, c1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxPrompt {
    pub r0: usize,
    pub c0: usize,
    pub r1: usize,
    pub c1: usize,
}

impl BoxPrompt {
    pub fn new(r0: usize, c0: usize, r1: usize, c1: usize) -> Result<Self> {
        if r0 >= r1 || c0 >= c1 {
            return Err(Error::InvalidArgument(format!("empty box {:?}", [r0, c0, r1, c1])));
        }
        Ok(BoxPrompt { r0, c0, r1, c1 })
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.r0, self.c0, self.r1, self.c1]
    }

    pub fn check_within(&self, h: usize, w: usize) -> Result<()> {
        if self.r0 >= self.r1 || self.c0 >= self.c1 || self.r1 > h || self.c1 > w {
            return Err(Error::BoxOutOfBounds(self.as_array(), h, w));
        }
        Ok(())
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.r0..self.r1).contains(&r) && (self.c0..self.c1).contains(&c)
    }
}

/// Stacks `image` (H×W) and the box indicator into a 2×H×W input.
pub fn encode_input(image: &Grid, prompt: &BoxPrompt) -> Result<Grid> {
    if image.rank() != 2 {
        return Err(Error::Shape(format!("image must be H×W, got {:?}", image.shape())));
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    prompt.check_within(h, w)?;
    let mut data = Vec::with_capacity(2 * h * w);
    data.extend_from_slice(image.data());
    for r in 0..h {
        for c in 0..w {
            data.push(if prompt.contains(r, c) { 1.0 } else { 0.0 });
        }
    }
    Grid::new(vec![2, h, w], data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegModel {
    pub width: usize,
    pub seed: u64,
    pub params: Vec<Grid>,
}

pub fn param_shapes(width: usize) -> Vec<Vec<usize>> {
    vec![
        vec![width, 2, 3, 3],
        vec![width],
        vec![width, width, 3, 3],
        vec![width],
        vec![1, width, 1, 1],
        vec![1],
    ]
}

pub const PARAM_NAMES: [&str; 6] = ["conv1.w", "conv1.b", "conv2.w", "conv2.b", "head.w", "head.b"];

/// He-style uniform weights `±sqrt(6 / fan_in)` and zero biases, drawn from
/// one SplitMix64 stream in parameter order.
pub fn init_params(seed: u64, width: usize) -> Result<Vec<Grid>> {
    if width == 0 {
        return Err(Error::InvalidArgument("model width must be >= 1".into()));
    }
    let mut rng = SplitMix64::new(seed);
    Ok(param_shapes(width)
        .into_iter()
        .map(|shape| {
            if shape.len() == 1 {
                return Grid::zeros(&shape);
            }
            let fan_in: usize = shape[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            Grid::from_fn(&shape, |_| rng.uniform(-bound, bound))
        })
        .collect())
}

/// Leaves for the model parameters inside a training graph.
#[derive(Debug, Clone)]
pub struct ParamNodes(pub Vec<NodeId>);

impl SegModel {
    pub fn new(seed: u64, width: usize) -> Result<Self> {
        Ok(SegModel {
            width,
            seed,
            params: init_params(seed, width)?,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Grid::len).sum()
    }

    /// Declares one leaf per parameter tensor.
    pub fn declare(&self, g: &mut Graph) -> ParamNodes {
        ParamNodes(
            param_shapes(self.width)
                .iter()
                .zip(PARAM_NAMES)
                .map(|(shape, name)| g.leaf(name, shape))
                .collect(),
        )
    }

    pub fn bind(&self, nodes: &ParamNodes, b: &mut Bindings) {
        bind_params(nodes, &self.params, b);
    }

    pub fn logits(&self, image: &Grid, prompt: &BoxPrompt) -> Result<Grid> {
        let input = encode_input(image, prompt)?;
        let (h, w) = (image.shape()[0], image.shape()[1]);
        let mut g = Graph::new();
        let nodes = self.declare(&mut g);
        let x = g.constant(input);
        let out = build_logits(&mut g, x, &nodes, h, w);
        let mut b = Bindings::new();
        self.bind(&nodes, &mut b);
        g.value_of(&b, out)
    }

    /// Foreground probability per pixel, strictly inside (0, 1).
    pub fn predict(&self, image: &Grid, prompt: &BoxPrompt) -> Result<Grid> {
        Ok(self.logits(image, prompt)?.map(probability))
    }
}

pub fn bind_params(nodes: &ParamNodes, params: &[Grid], b: &mut Bindings) {
    for (&n, p) in nodes.0.iter().zip(params) {
        b.bind(n, p.clone());
    }
}

/// Sigmoid capped just below 1.0, where f64 would otherwise round large
/// logits to exactly 1.
pub fn probability(logit: f64) -> f64 {
    crate::diff::sigmoid(logit).min(1.0 - f64::EPSILON / 2.0)
}

/// Appends the network to `g` for an input node of shape `[2, h, w]` and
/// returns the `[h, w]` logit node.
pub fn build_logits(g: &mut Graph, input: NodeId, p: &ParamNodes, h: usize, w: usize) -> NodeId {
    let p = &p.0;
    let c1 = g.conv2d(input, p[0]);
    let b1 = g.add_bias(c1, p[1]);
    let a1 = g.relu(b1);
    let c2 = g.conv2d(a1, p[2]);
    let b2 = g.add_bias(c2, p[3]);
    let a2 = g.relu(b2);
    let c3 = g.conv2d(a2, p[4]);
    let b3 = g.add_bias(c3, p[5]);
    g.reshape(b3, &[h, w])
}

/// Mean squared difference between teacher and student logits.
pub fn distill_loss(teacher_logits: &Grid, student_logits: &Grid) -> Result<f64> {
    teacher_logits.expect_same_shape(student_logits)?;
    Ok(teacher_logits.zip_map(student_logits, |t, s| (t - s) * (t - s))?.mean())
}

pub fn build_distill(g: &mut Graph, student_logits: NodeId, teacher_logits: NodeId) -> NodeId {
    let d = g.sub(student_logits, teacher_logits);
    let sq = g.mul(d, d);
    g.mean(sq)
}

const MAGIC: &[u8; 8] = b"UWSEGCKP";
const VERSION: u32 = 1;

/// Binary checkpoint, all integers and floats little-endian:
///
/// ```text
/// magic "UWSEGCKP" | version u32 | width u32 | seed u64 | n_tensors u32
/// per tensor: rank u32 | dims u64 × rank | data f64 × product(dims)
/// ```
impl SegModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.rank() as u32).to_le_bytes());
            for &d in p.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let width = read_u32(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let n = read_u32(&mut r)? as usize;
        let expected = param_shapes(width);
        if n != expected.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {n}", expected.len())));
        }
        let mut params = Vec::with_capacity(n);
        for want in &expected {
            let rank = read_u32(&mut r)? as usize;
            let shape = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if &shape != want {
                return Err(Error::Checkpoint(format!("tensor shape {shape:?}, expected {want:?}")));
            }
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            params.push(Grid::new(shape, data)?);
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(SegModel { width, seed, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Checkpoint("truncated".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut &[u8]) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize) -> Grid {
        Grid::from_fn(&[h, w], |i| ((i * 31 % 17) as f64) / 17.0)
    }

    #[test]
    fn zero_head_gives_half_everywhere() {
        let mut m = SegModel::new(3, 8).unwrap();
        m.params[4] = Grid::zeros(m.params[4].shape());
        let p = m.predict(&image(16, 16), &BoxPrompt::new(2, 2, 10, 12).unwrap()).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn output_shape_follows_input() {
        let m = SegModel::new(1, 8).unwrap();
        for n in [16, 64, 100] {
            let p = m.predict(&image(n, n), &BoxPrompt::new(1, 1, n - 1, n - 1).unwrap()).unwrap();
            assert_eq!(p.shape(), &[n, n]);
            assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_params(5, 8).unwrap();
        let b = init_params(5, 8).unwrap();
        let c = init_params(6, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for i in [1, 3, 5] {
            assert!(a[i].data().iter().all(|&v| v == 0.0));
        }
        let bound = (6.0f64 / 18.0).sqrt();
        assert!(a[0].data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn box_out_of_bounds_is_rejected() {
        let m = SegModel::new(1, 4).unwrap();
        let err = m.predict(&image(8, 8), &BoxPrompt::new(0, 0, 9, 4).unwrap()).unwrap_err();
        assert!(matches!(err, Error::BoxOutOfBounds(..)));
        assert!(BoxPrompt::new(3, 3, 3, 5).is_err());
    }

    #[test]
    fn probability_never_saturates() {
        assert!(probability(800.0) < 1.0);
        assert!(probability(-700.0) > 0.0);
    }

    #[test]
    fn distill_examples() {
        let t = Grid::full(&[4, 4], 1.0);
        assert_eq!(distill_loss(&t, &t).unwrap(), 0.0);
        assert_eq!(distill_loss(&t, &Grid::zeros(&[4, 4])).unwrap(), 1.0);
        assert!(distill_loss(&t, &Grid::zeros(&[4, 3])).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = SegModel::new(11, 8).unwrap();
        let back = SegModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(m, back);
        let mut bad = m.to_bytes();
        bad[0] = b'X';
        assert!(SegModel::from_bytes(&bad).is_err());
        let bytes = m.to_bytes();
        assert!(SegModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
