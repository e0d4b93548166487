//! Finite-difference weights and periodic interpolation.

/// Fornberg weights for the `order`-th derivative at `x0` from samples at `nodes`.
pub fn fd_weights(x0: f64, nodes: &[f64], order: usize) -> Vec<f64> {
    let n = nodes.len();
    assert!(n > order, "need more nodes than the derivative order");
    // c[j][k]: weight of node j for derivative k
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|w| w[order]).collect()
}

/// Dense 1D differentiation on `n + 1` equispaced nodes with 4th-order stencils:
/// centered in the interior, shifted one-sided windows near both ends.
#[derive(Clone, Debug)]
pub struct LineDifferentiator {
    /// Per node: first index of the window and its weights.
    windows: Vec<(usize, Vec<f64>)>,
}

impl LineDifferentiator {
    pub fn new(nodes: usize, h: f64, order: usize) -> Option<Self> {
        let width = match order {
            1 => 5,
            2 => 6,
            3 => 7,
            _ => return None,
        };
        if nodes < width + 1 {
            return None;
        }
        let centered = if order == 2 { 5 } else { width };
        let mut windows = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let half = centered / 2;
            let (start, w) = if i >= half && i + half < nodes {
                (i - half, centered)
            } else {
                let start = if i < half { 0 } else { nodes - width };
                (start, width)
            };
            let offs: Vec<f64> = (0..w).map(|k| (start + k) as f64 - i as f64).collect();
            let mut weights = fd_weights(0.0, &offs, order);
            let scale = h.powi(order as i32);
            for v in &mut weights {
                *v /= scale;
            }
            windows.push((start, weights));
        }
        Some(Self { windows })
    }

    /// Differentiates a line read through `get(k)` and writes through `set(k, v)`.
    pub fn apply(&self, get: impl Fn(usize) -> f64, mut set: impl FnMut(usize, f64)) {
        for (i, (start, w)) in self.windows.iter().enumerate() {
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                acc += wk * get(start + k);
            }
            set(i, acc);
        }
    }
}

/// 4th-order centered weights on a periodic line for derivative orders 1 and 2.
pub fn periodic_weights(order: usize, h: f64) -> [f64; 5] {
    match order {
        1 => [1.0, -8.0, 0.0, 8.0, -1.0].map(|w| w / (12.0 * h)),
        2 => [-1.0, 16.0, -30.0, 16.0, -1.0].map(|w| w / (12.0 * h * h)),
        _ => panic!("periodic_weights: order must be 1 or 2"),
    }
}

/// Cubic Lagrange weights for the 4 nodes at offsets -1, 0, 1, 2 around `t ∈ [0, 1)`.
fn cubic_weights(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// Fractional part in `[0, 1)`.
pub fn frac(x: f64) -> f64 {
    let f = x - x.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// Periodic cubic interpolation of `values` sampled at `k/n`, `k = 0..n`, in `dim` dimensions
/// (first axis fastest).
pub fn periodic_cubic(values: &[f64], n: usize, dim: usize, y: [f64; 2]) -> f64 {
    let locate = |t: f64| {
        let s = frac(t) * n as f64;
        let base = s.floor();
        let mut i0 = base as isize;
        let mut w = s - base;
        if i0 >= n as isize {
            i0 = 0;
            w = 0.0;
        }
        (i0, cubic_weights(w))
    };
    let wrap = |k: isize| k.rem_euclid(n as isize) as usize;
    let (i0, wx) = locate(y[0]);
    if dim == 1 {
        return (0..4)
            .map(|a| wx[a] * values[wrap(i0 - 1 + a as isize)])
            .sum();
    }
    let (j0, wy) = locate(y[1]);
    let mut acc = 0.0;
    for b in 0..4 {
        let row = wrap(j0 - 1 + b as isize) * n;
        let mut line = 0.0;
        for a in 0..4 {
            line += wx[a] * values[row + wrap(i0 - 1 + a as isize)];
        }
        acc += wy[b] * line;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fornberg_reproduces_classical_stencils() {
        let w = fd_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[0] - 1.0).abs() < 1e-14 && (w[1] + 2.0).abs() < 1e-14);
        let w = fd_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 1);
        let expect = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn one_sided_windows_are_fourth_order() {
        let errs: Vec<f64> = [64usize, 128]
            .iter()
            .map(|&n| {
                let h = 1.0 / n as f64;
                let d = LineDifferentiator::new(n + 1, h, 3).unwrap();
                let f = |k: usize| (2.0 * (k as f64 * h)).exp();
                let mut err = 0.0f64;
                d.apply(f, |k, v| {
                    let exact = 8.0 * (2.0 * (k as f64 * h)).exp();
                    err = err.max((v - exact).abs());
                });
                err
            })
            .collect();
        let rate = (errs[0] / errs[1]).log2();
        assert!(rate > 3.5, "observed order {rate}");
    }

    #[test]
    fn periodic_cubic_is_exact_on_nodes_and_wraps() {
        let n = 16;
        let vals: Vec<f64> = (0..n).map(|k| (k as f64).cos()).collect();
        for k in 0..n {
            let y = k as f64 / n as f64;
            assert!((periodic_cubic(&vals, n, 1, [y, 0.0]) - vals[k]).abs() < 1e-14);
            assert!((periodic_cubic(&vals, n, 1, [y + 3.0, 0.0]) - vals[k]).abs() < 1e-12);
        }
    }
}
