//! Exact squared Euclidean distance transform (lower envelope of
//! parabolas, separable over axes) for 2D and 3D grids.

use crate::grid::strides_of;

/// Squared distance from every cell to the nearest feature cell, in pixel
/// units. Values are exact integers stored as `f64`; cells get
/// `f64::INFINITY` when there are no features at all.
pub fn squared_edt(shape: &[usize], features: &[bool]) -> Vec<f64> {
    debug_assert_eq!(shape.iter().product::<usize>(), features.len());
    let mut dist: Vec<f64> = features
        .iter()
        .map(|&f| if f { 0.0 } else { f64::INFINITY })
        .collect();
    if !features.iter().any(|&f| f) {
        return dist;
    }
    let strides = strides_of(shape);
    let max_len = shape.iter().copied().max().unwrap_or(0);
    let mut line = vec![0.0; max_len];
    let mut out = vec![0.0; max_len];
    let mut scratch = Scratch::new(max_len);
    for axis in 0..shape.len() {
        let n = shape[axis];
        let stride = strides[axis];
        // Every line along `axis` starts at an index whose `axis` coordinate is 0.
        for start in 0..dist.len() {
            if !(start / stride).is_multiple_of(n) {
                continue;
            }
            for i in 0..n {
                line[i] = dist[start + i * stride];
            }
            envelope_1d(&line[..n], &mut out[..n], &mut scratch);
            for i in 0..n {
                dist[start + i * stride] = out[i];
            }
        }
    }
    dist
}

struct Scratch {
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            v: vec![0; n],
            z: vec![0.0; n + 1],
        }
    }
}

/// 1D transform `out[p] = min_q (p - q)^2 + f[q]` over finite `f[q]`.
fn envelope_1d(f: &[f64], out: &mut [f64], s: &mut Scratch) {
    let n = f.len();
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        loop {
            if k < 0 {
                k = 0;
                s.v[0] = q;
                s.z[0] = f64::NEG_INFINITY;
                s.z[1] = f64::INFINITY;
                break;
            }
            let vk = s.v[k as usize];
            let fv = f[vk] + (vk * vk) as f64;
            let x = (fq - fv) / (2.0 * (q as f64 - vk as f64));
            if x <= s.z[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            s.v[k as usize] = q;
            s.z[k as usize] = x;
            s.z[k as usize + 1] = f64::INFINITY;
            break;
        }
    }
    if k < 0 {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for (p, o) in out.iter_mut().enumerate() {
        while s.z[j + 1] < p as f64 {
            j += 1;
        }
        let q = s.v[j];
        let d = p as f64 - q as f64;
        *o = d * d + f[q];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(shape: &[usize], features: &[bool]) -> Vec<f64> {
        let strides = strides_of(shape);
        let coord = |i: usize| -> Vec<i64> {
            shape
                .iter()
                .zip(&strides)
                .map(|(&n, &s)| ((i / s) % n) as i64)
                .collect()
        };
        (0..features.len())
            .map(|i| {
                let ci = coord(i);
                features
                    .iter()
                    .enumerate()
                    .filter(|(_, &f)| f)
                    .map(|(j, _)| {
                        coord(j)
                            .iter()
                            .zip(&ci)
                            .map(|(a, b)| ((a - b) * (a - b)) as f64)
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_2d_and_3d() {
        let mut state = 0x1234_5678_u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for shape in [vec![7usize, 9], vec![1, 5], vec![4, 5, 6], vec![3, 1, 4]] {
            for density in [2u64, 5, 17] {
                let n: usize = shape.iter().product();
                let feats: Vec<bool> = (0..n).map(|_| next() % density == 0).collect();
                assert_eq!(squared_edt(&shape, &feats), brute(&shape, &feats), "{shape:?}");
            }
        }
    }

    #[test]
    fn no_features_gives_infinity() {
        let d = squared_edt(&[3, 3], &[false; 9]);
        assert!(d.iter().all(|v| v.is_infinite()));
    }
}
