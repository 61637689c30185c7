//! Globally adaptive Gauss–Kronrod (7/15) quadrature on finite intervals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the odd Kronrod nodes (1, 3, 5, 7)
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

pub const DEFAULT_MAX_INTERVALS: usize = 4000;

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (k, &x) in XGK.iter().take(7).enumerate() {
        let s = f(c - h * x) + f(c + h * x);
        kronrod += WGK[k] * s;
        if k % 2 == 1 {
            gauss += WG[k / 2] * s;
        }
    }
    let value = kronrod * h;
    let error = ((kronrod - gauss) * h).abs();
    (value, error)
}

/// Integral of `f` over `[a, b]` to absolute tolerance `tol`. `breaks` are
/// interior points where `f` may be non-smooth; they seed the partition.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], tol: f64) -> Result<f64> {
    integrate_with_limit(f, a, b, breaks, tol, DEFAULT_MAX_INTERVALS)
}

pub fn integrate_with_limit<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: f64,
    max_intervals: usize,
) -> Result<f64> {
    if !(b > a) {
        return Ok(0.0);
    }
    let mut nodes = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    nodes.extend(inner);
    nodes.push(b);

    let mut heap = BinaryHeap::new();
    let mut err = 0.0;
    for w in nodes.windows(2) {
        let (value, error) = gk15(&f, w[0], w[1]);
        err += error;
        heap.push(Piece { a: w[0], b: w[1], value, error });
    }
    while err > tol {
        if heap.len() >= max_intervals {
            return Err(Error::Quadrature { achieved: err, requested: tol });
        }
        let worst = heap.pop().expect("non-empty partition");
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            return Err(Error::Quadrature { achieved: err, requested: tol });
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        err += e1 + e2 - worst.error;
        heap.push(Piece { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Piece { a: mid, b: worst.b, value: v2, error: e2 });
    }
    Ok(heap.iter().map(|p| p.value).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn polynomials_and_smooth() {
        assert_abs_diff_eq!(integrate(|x| x * x, 0.0, 3.0, &[], 1e-12).unwrap(), 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            integrate(f64::sin, 0.0, std::f64::consts::PI, &[], 1e-12).unwrap(),
            2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn discontinuity_with_and_without_break() {
        let step = |x: f64| if x > 0.3 { 1.0 } else { 0.0 };
        assert_abs_diff_eq!(integrate(step, 0.0, 1.0, &[0.3], 1e-12).unwrap(), 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(integrate(step, 0.0, 1.0, &[], 1e-9).unwrap(), 0.7, epsilon = 1e-9);
    }

    #[test]
    fn reports_non_convergence() {
        let r = integrate_with_limit(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, &[], 1e-15, 5);
        assert!(matches!(r, Err(Error::Quadrature { .. })));
    }
}
