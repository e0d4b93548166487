//! Monotone finite-difference stencils shared by the torus and domain assemblies.

use crate::coeff::Mat;

/// One stencil entry: neighbor offset and weight.
pub(crate) type Tap = (i32, i32, f64);

/// Stencil of `Tr(a D²)` with spacings `hx`, `hy`.
///
/// The cross term uses the 7-point scheme whose diagonal pair follows the sign of `a12`,
/// so every off-center weight is nonnegative when `a11/hx ≥ |a12|/hy` and
/// `a22/hy ≥ |a12|/hx`. Returns the taps and the smallest off-center weight.
pub(crate) fn diffusion(a: &Mat, hx: f64, hy: f64) -> (Vec<Tap>, f64) {
    if a.dim == 1 {
        let w = a.e[0][0] / (hx * hx);
        return (vec![(0, 0, -2.0 * w), (-1, 0, w), (1, 0, w)], w);
    }
    let (a11, a12, a22) = (a.e[0][0], a.e[0][1], a.e[1][1]);
    let cross = a12.abs() / (hx * hy);
    let wx = a11 / (hx * hx) - cross;
    let wy = a22 / (hy * hy) - cross;
    let center = -2.0 * a11 / (hx * hx) - 2.0 * a22 / (hy * hy) + 2.0 * cross;
    let mut taps = vec![(0, 0, center), (-1, 0, wx), (1, 0, wx), (0, -1, wy), (0, 1, wy)];
    let mut worst = wx.min(wy);
    if cross > 0.0 {
        if a12 > 0.0 {
            taps.push((1, 1, cross));
            taps.push((-1, -1, cross));
        } else {
            taps.push((1, -1, cross));
            taps.push((-1, 1, cross));
        }
        worst = worst.min(cross);
    }
    (taps, worst)
}

/// Adds the drift `b·∇` to `taps`; centered unless `upwind` is set for that axis.
pub(crate) fn add_drift(taps: &mut Vec<Tap>, b: [f64; 2], h: [f64; 2], upwind: [bool; 2], dim: usize) {
    for axis in 0..dim {
        let bk = b[axis];
        if bk == 0.0 {
            continue;
        }
        let unit = |s: i32| if axis == 0 { (s, 0) } else { (0, s) };
        if upwind[axis] {
            let w = bk.abs() / h[axis];
            let s = if bk > 0.0 { 1 } else { -1 };
            let (dx, dy) = unit(s);
            taps.push((dx, dy, w));
            taps.push((0, 0, -w));
        } else {
            let w = bk / (2.0 * h[axis]);
            let (dx, dy) = unit(1);
            taps.push((dx, dy, w));
            let (dx, dy) = unit(-1);
            taps.push((dx, dy, -w));
        }
    }
}

/// Mesh-Péclet number `h|b|/(2a)` per axis.
pub(crate) fn peclet(a: &Mat, b: [f64; 2], h: [f64; 2]) -> [f64; 2] {
    let mut p = [0.0; 2];
    for axis in 0..a.dim {
        p[axis] = h[axis] * b[axis].abs() / (2.0 * a.e[axis][axis]);
    }
    p
}
