//! Dense inner loops for the convolution and matrix primitives.

/// Geometry of a stride-1 zero-padded convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    fn pad(&self) -> isize {
        (self.k / 2) as isize
    }

    /// For a kernel offset `d`, the output range `[lo, hi)` along an axis of
    /// length `n` whose shifted input index stays in bounds.
    fn span(n: usize, d: isize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (n as isize - d.max(0)).max(0) as usize;
        (lo.min(hi), hi)
    }

    /// Visits every (out-channel, in-channel, kernel-y, kernel-x) tap with its
    /// weight index and valid row/column ranges.
    fn for_each_tap(&self, mut f: impl FnMut(Tap)) {
        let p = self.pad();
        for co in 0..self.cout {
            for ci in 0..self.cin {
                for ky in 0..self.k {
                    let dy = ky as isize - p;
                    let (y0, y1) = Self::span(self.h, dy);
                    for kx in 0..self.k {
                        let dx = kx as isize - p;
                        let (x0, x1) = Self::span(self.w, dx);
                        if y0 >= y1 || x0 >= x1 {
                            continue;
                        }
                        f(Tap {
                            co,
                            ci,
                            widx: ((co * self.cin + ci) * self.k + ky) * self.k + kx,
                            dy,
                            dx,
                            y0,
                            y1,
                            x0,
                            x1,
                        });
                    }
                }
            }
        }
    }
}

struct Tap {
    co: usize,
    ci: usize,
    widx: usize,
    dy: isize,
    dx: isize,
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
}

impl Tap {
    fn rows(&self, d: &ConvDims) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let (h, w) = (d.h, d.w);
        let (co, ci, dy, dx, x0) = (self.co, self.ci, self.dy, self.dx, self.x0);
        (self.y0..self.y1).map(move |y| {
            let out = (co * h + y) * w + x0;
            let inp = (ci * h + (y as isize + dy) as usize) * w + (x0 as isize + dx) as usize;
            (out, inp, y)
        })
    }
}

pub(crate) fn conv2d_forward(d: &ConvDims, x: &[f64], weight: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d.cout * d.h * d.w];
    d.for_each_tap(|t| {
        let wv = weight[t.widx];
        let len = t.x1 - t.x0;
        for (o, i, _) in t.rows(d) {
            let dst = &mut out[o..o + len];
            let src = &x[i..i + len];
            for (a, b) in dst.iter_mut().zip(src) {
                *a += wv * b;
            }
        }
    });
    out
}

pub(crate) fn conv2d_backward_input(d: &ConvDims, grad_out: &[f64], weight: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; d.cin * d.h * d.w];
    d.for_each_tap(|t| {
        let wv = weight[t.widx];
        let len = t.x1 - t.x0;
        for (o, i, _) in t.rows(d) {
            let src = &grad_out[o..o + len];
            let dst = &mut gx[i..i + len];
            for (a, b) in dst.iter_mut().zip(src) {
                *a += wv * b;
            }
        }
    });
    gx
}

pub(crate) fn conv2d_backward_weight(d: &ConvDims, grad_out: &[f64], x: &[f64]) -> Vec<f64> {
    let mut gw = vec![0.0; d.cout * d.cin * d.k * d.k];
    d.for_each_tap(|t| {
        let len = t.x1 - t.x0;
        let mut acc = 0.0;
        for (o, i, _) in t.rows(d) {
            acc += grad_out[o..o + len]
                .iter()
                .zip(&x[i..i + len])
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        gw[t.widx] += acc;
    });
    gw
}

/// `[m,k] x [k,n] -> [m,n]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(d: &ConvDims, x: &[f64], w: &[f64]) -> Vec<f64> {
        let p = (d.k / 2) as isize;
        let mut out = vec![0.0; d.cout * d.h * d.w];
        for co in 0..d.cout {
            for y in 0..d.h as isize {
                for xx in 0..d.w as isize {
                    let mut s = 0.0;
                    for ci in 0..d.cin {
                        for ky in 0..d.k as isize {
                            for kx in 0..d.k as isize {
                                let (iy, ix) = (y + ky - p, xx + kx - p);
                                if iy < 0 || ix < 0 || iy >= d.h as isize || ix >= d.w as isize {
                                    continue;
                                }
                                let wi = ((co * d.cin + ci) * d.k + ky as usize) * d.k + kx as usize;
                                s += w[wi] * x[(ci * d.h + iy as usize) * d.w + ix as usize];
                            }
                        }
                    }
                    out[(co * d.h + y as usize) * d.w + xx as usize] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        for &k in &[1usize, 3] {
            let d = ConvDims { cin: 2, cout: 3, h: 5, w: 4, k };
            let x: Vec<f64> = (0..d.cin * d.h * d.w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
            let w: Vec<f64> = (0..d.cout * d.cin * k * k).map(|i| ((i * 5) % 7) as f64 * 0.5 - 1.0).collect();
            assert_eq!(conv2d_forward(&d, &x, &w), naive_conv(&d, &x, &w));
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <conv(x), g> == <x, conv_bwd_input(g)> == <w, conv_bwd_weight(g, x)>
        let d = ConvDims { cin: 2, cout: 2, h: 4, w: 6, k: 3 };
        let x: Vec<f64> = (0..d.cin * d.h * d.w).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..d.cout * d.cin * 9).map(|i| (i as f64 * 0.91).cos()).collect();
        let g: Vec<f64> = (0..d.cout * d.h * d.w).map(|i| (i as f64 * 1.3).sin()).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let lhs = dot(&conv2d_forward(&d, &x, &w), &g);
        assert!((lhs - dot(&x, &conv2d_backward_input(&d, &g, &w))).abs() < 1e-12);
        assert!((lhs - dot(&w, &conv2d_backward_weight(&d, &g, &x))).abs() < 1e-12);
    }

    #[test]
    fn matmul_small() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        assert_eq!(matmul(&a, &b, 2, 3, 2), vec![4.0, 5.0, 10.0, 11.0]);
        assert_eq!(transpose(&a, 2, 3), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }
}
