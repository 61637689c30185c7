//! Test functions: the jump-measure probes `g` and the smooth probes `phi`
//! used by the perturbation check.

use serde::{Deserialize, Serialize};

/// A function of a jump size `v`.
pub trait TestFn: Sync {
    fn eval(&self, v: &[f64]) -> f64;

    /// Radii `r` at which `g` may be non-smooth as a function of `|v|`.
    fn radial_breaks(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> TestFn for F {
    fn eval(&self, v: &[f64]) -> f64 {
        self(v)
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Built-in jump probes.
///
/// * `CubicCapped`: `min(|v|^3, 1)`. Bounded and `o(|v|^2)` at the origin.
/// * `TailSquare { threshold }`: `|v|^2 1{|v| > threshold}`. Vanishes near the
///   origin; not bounded, so it is only meaningful for kernels with finite
///   second moments (it is also the C3 tail integrand).
/// * `OneMinusCos`: `1 - cos |v|`. Bounded, but `g(v) / |v|^2 -> 1/2` at the
///   origin rather than 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GProbe {
    CubicCapped,
    TailSquare { threshold: f64 },
    OneMinusCos,
}

impl GProbe {
    /// The three probes reported in characteristic paths, in column order.
    pub const CATALOGUE: [GProbe; 3] = [
        GProbe::CubicCapped,
        GProbe::TailSquare { threshold: 1.0 },
        GProbe::OneMinusCos,
    ];

    pub fn name(&self) -> String {
        match self {
            GProbe::CubicCapped => "min(|v|^3,1)".to_string(),
            GProbe::TailSquare { threshold } => format!("|v|^2*1{{|v|>{threshold}}}"),
            GProbe::OneMinusCos => "1-cos|v|".to_string(),
        }
    }

    pub fn at_norm(&self, r: f64) -> f64 {
        match *self {
            GProbe::CubicCapped => (r * r * r).min(1.0),
            GProbe::TailSquare { threshold } => {
                if r > threshold {
                    r * r
                } else {
                    0.0
                }
            }
            GProbe::OneMinusCos => 1.0 - r.cos(),
        }
    }
}

impl TestFn for GProbe {
    fn eval(&self, v: &[f64]) -> f64 {
        self.at_norm(norm(v))
    }

    fn radial_breaks(&self) -> Vec<f64> {
        match *self {
            GProbe::CubicCapped => vec![1.0],
            GProbe::TailSquare { threshold } => vec![threshold],
            GProbe::OneMinusCos => Vec::new(),
        }
    }
}

/// Smooth probes `phi(u)` acting on the first coordinate of `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothProbe {
    Linear,
    Square,
    Sine,
}

impl SmoothProbe {
    pub fn value(&self, u: f64) -> f64 {
        match self {
            SmoothProbe::Linear => u,
            SmoothProbe::Square => u * u,
            SmoothProbe::Sine => u.sin(),
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match self {
            SmoothProbe::Linear => 1.0,
            SmoothProbe::Square => 2.0 * u,
            SmoothProbe::Sine => u.cos(),
        }
    }

    pub fn second_derivative(&self, u: f64) -> f64 {
        match self {
            SmoothProbe::Linear => 0.0,
            SmoothProbe::Square => 2.0,
            SmoothProbe::Sine => -u.sin(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalogue_values() {
        assert_eq!(GProbe::CubicCapped.eval(&[2.0]), 1.0);
        assert_eq!(GProbe::CubicCapped.eval(&[0.5]), 0.125);
        assert_eq!(GProbe::TailSquare { threshold: 3.0 }.eval(&[-4.0]), 16.0);
        assert_eq!(GProbe::TailSquare { threshold: 3.0 }.eval(&[3.0]), 0.0);
        assert_eq!(GProbe::OneMinusCos.eval(&[0.0]), 0.0);
        assert_eq!(GProbe::CubicCapped.eval(&[3.0, 4.0]), 1.0);
    }

    #[test]
    fn closures_are_test_functions() {
        let g = |v: &[f64]| v[0] * v[0];
        assert_eq!(TestFn::eval(&g, &[3.0]), 9.0);
        assert!(g.radial_breaks().is_empty());
    }
}
